#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tutoreval/metrics.hpp"
#include "tutoreval/stats.hpp"

namespace tutoreval::distributions {

enum class EngagementMetric { rel, succ };

std::string metric_name(EngagementMetric metric); // "rel_score" / "succ_score"

/// Engagement scores of one tutor's feedback, split by whether the feedback
/// met one dimension's desired criterion.
struct DesirednessSplit {
    std::string tutor_id;
    std::string dimension;
    EngagementMetric metric = EngagementMetric::rel;
    std::vector<double> desired;
    std::vector<double> undesired;
    std::size_t n_absent = 0; // feedbacks skipped: succ_score absent
};

/// Joins pedagogy and engagement by feedback_id and splits the chosen metric
/// per (tutor, dimension). Feedback present on only one side contributes
/// nothing; succ splits skip feedbacks whose succ_score is absent.
std::vector<DesirednessSplit> split_by_desiredness(
    const std::vector<metrics::PedagogyRow>& pedagogy,
    const std::vector<metrics::EngagementScores>& engagement,
    const metrics::DesiredLabelRubric& rubric,
    EngagementMetric metric);

struct SplitExclusion {
    std::string tutor_id;
    std::string dimension;
    std::string metric;
    std::string reason;
    std::size_t n_desired = 0;
    std::size_t n_undesired = 0;
};

struct SplitComparison {
    std::vector<stats::StatResult> results; // Holm-adjusted within (tutor, metric)
    std::vector<SplitExclusion> excluded;
};

/// Two-sided Mann-Whitney U per split (desired arm first). Dimensions whose
/// undesired arm is smaller than min_undesired_n — or whose desired arm is
/// empty — are excluded with a reason instead of tested. Holm correction runs
/// across the retained dimensions of each (tutor, metric) family.
SplitComparison compare_splits(const std::vector<DesirednessSplit>& splits,
                               std::size_t min_undesired_n = 15);

/// CSV (tutor, dimension, metric, group, n, mean, q1, median, q3); one row per
/// arm, stats cells empty when the arm is empty.
std::string split_summary_csv(const std::vector<DesirednessSplit>& splits);

/// Raw per-feedback scores: CSV (tutor, dimension, metric, group, score).
std::string split_scores_csv(const std::vector<DesirednessSplit>& splits);

} // namespace tutoreval::distributions
