#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tutoreval/dimensions.hpp"
#include "tutoreval/judge.hpp"

namespace tutoreval::metrics {

/// Which labels count as "desired" per dimension. Defaults: every dimension
/// desires {1}, except revealing_answer desires {3} and tutor_tone desires
/// {1,2}. Overridable per dimension, but only with labels in 1..3.
class DesiredLabelRubric {
public:
    static DesiredLabelRubric defaults();

    const std::set<int>& desired(const std::string& dimension) const;
    void set_desired(const std::string& dimension, std::set<int> labels);
    bool matches(const std::string& dimension, int label) const;

    const std::map<std::string, std::set<int>>& desired_by_dimension() const {
        return desired_;
    }

    bool operator==(const DesiredLabelRubric&) const = default;

private:
    std::map<std::string, std::set<int>> desired_;
};

struct EngagementScores {
    std::string feedback_id;
    double rel_score = 0.0;
    std::optional<double> succ_score; // absent when no sentence was relevant

    bool operator==(const EngagementScores&) const = default;
};

// ---------------------------------------------------------------------------
// Core metrics
// ---------------------------------------------------------------------------

struct DamrResult {
    double rate = 0.0;       // matched / total, in [0,1]
    std::size_t matched = 0; // annotations whose label is in the desired set
    std::size_t total = 0;
};

/// Desired-annotation match rate for one dimension over a set of pedagogy
/// annotations. Throws ValidationError on an empty list or unknown dimension.
DamrResult damr(const std::vector<judge::PedagogyAnnotation>& annotations,
                const std::string& dimension,
                const DesiredLabelRubric& rubric);

/// Fraction of sentences with rel = 1.
double rel_score(const judge::EngagementAnnotation& annotation);

/// Fraction of relevant sentences applied correctly: Σsucc / Σrel.
/// Absent when no sentence is relevant (the 0/0 case is missing data, not 0).
std::optional<double> succ_score(const judge::EngagementAnnotation& annotation);

EngagementScores engagement_scores(const judge::EngagementAnnotation& annotation);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct EngagementScoreRow {
    std::string tutor_id;
    std::string assignment_id;
    EngagementScores scores;
};

struct PedagogyRow {
    std::string tutor_id;
    std::string assignment_id;
    judge::PedagogyAnnotation annotation;
};

struct GroupSummary {
    std::string tutor_id;
    std::string group;  // assignment id, or dimension name, or "overall"
    std::string metric; // "rel_score", "succ_score", "damr"
    double mean = 0.0;  // fraction in [0,1]; NaN when n = 0
    double sd = 0.0;    // sample standard deviation (n-1); 0 when n < 2
    std::size_t n = 0;
    std::size_t n_excluded = 0; // values skipped because they were absent
};

/// Per (tutor, assignment): mean/sd/n of rel_score and of succ_score.
/// Absent succ_scores are skipped and counted in n_excluded; a group whose
/// succ_scores are all absent yields a row with n = 0 and NaN mean/sd.
std::vector<GroupSummary> aggregate_engagement(const std::vector<EngagementScoreRow>& rows);

/// Per (tutor, dimension): DAMR as mean of the match indicator, with the
/// indicator's sample standard deviation.
std::vector<GroupSummary> aggregate_pedagogy(const std::vector<PedagogyRow>& rows,
                                             const DesiredLabelRubric& rubric);

/// One DAMR cell of a per-tutor table.
struct DamrCell {
    std::string tutor_id;
    std::string assignment_id; // "overall" for the pooled table
    std::string dimension;
    DamrResult result;
};

/// DAMR per (tutor, dimension) pooled over assignments (assignment_id = "overall").
std::vector<DamrCell> damr_by_dimension(const std::vector<PedagogyRow>& rows,
                                        const DesiredLabelRubric& rubric);

/// DAMR per (tutor, assignment, dimension).
std::vector<DamrCell> damr_by_assignment(const std::vector<PedagogyRow>& rows,
                                         const DesiredLabelRubric& rubric);

struct DamrDelta {
    std::string assignment_id;
    std::string dimension;
    double delta_points = 0.0; // (rate_b - rate_a) in percentage points
};

/// Signed per-cell difference between two tutors' DAMR tables, in percentage
/// points. Both tables must cover the same (assignment, dimension) cells;
/// mismatches raise ValidationError listing the missing cells.
std::vector<DamrDelta> damr_delta(const std::vector<DamrCell>& tutor_a,
                                  const std::vector<DamrCell>& tutor_b);

/// CSV with columns tutor,group,metric,mean,sd,n,n_excluded. Means and
/// standard deviations are written as percentages with 2 decimals; rows with
/// n = 0 leave mean and sd empty.
std::string metric_table_csv(const std::vector<GroupSummary>& rows);

} // namespace tutoreval::metrics
