#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tutoreval/corpus.hpp"
#include "tutoreval/metrics.hpp"
#include "tutoreval/stats.hpp"

namespace tutoreval::perception {

/// Maps a 1..5 Likert rating to the binary helpfulness outcome: 1 iff the
/// rating reaches the threshold (default 4). Out-of-range ratings throw.
int binarize_rating(int likert, int threshold = 4);

/// One rated feedback message, assembled for the helpfulness models.
struct HelpfulnessRow {
    std::string feedback_id;
    int y = 0;                        // binarized helpfulness
    std::array<int, 8> pedagogy{};    // desired-criterion indicators, canonical order
    std::optional<double> rel_score;  // absent when no engagement annotation exists
    std::optional<double> succ_score; // additionally absent when no sentence was relevant
    int baseline_indicator = 0;       // 1 iff the submission's tutor is the baseline cohort
};

struct RowBuildResult {
    std::vector<HelpfulnessRow> rows;
    std::size_t n_ratings = 0;           // linked ratings considered
    std::size_t n_missing_pedagogy = 0;  // dropped: no pedagogy annotation
    std::size_t n_missing_engagement = 0; // kept, but rel/succ absent
    std::size_t n_missing_succ = 0;       // kept, rel present, succ absent
    std::vector<std::string> warnings;
};

/// One row per rated feedback with a pedagogy annotation. Rows without an
/// engagement annotation (or with an absent succ_score) stay in the result;
/// models that need those covariates filter them out and report the loss.
/// Throws ValidationError when baseline_tutor_id names no tutor in the corpus.
RowBuildResult build_rows(const corpus::Corpus& c,
                          const std::vector<judge::PedagogyAnnotation>& pedagogy,
                          const std::vector<metrics::EngagementScores>& engagement,
                          const std::string& baseline_tutor_id,
                          const metrics::DesiredLabelRubric& rubric,
                          int likert_threshold = 4);

struct ModelFit {
    std::string model;                    // pedagogy_only | engagement_only | combined
    std::vector<std::string> covariates;  // parallel to fit vectors; last is "intercept"
    stats::RegressionFit fit;
    std::vector<std::string> dropped;     // zero-variance covariates removed pre-fit
    std::size_t n_rows = 0;
    std::size_t n_excluded = 0;           // rows removed for missing rel/succ
};

struct ModelSet {
    std::optional<ModelFit> pedagogy_only;
    std::optional<ModelFit> engagement_only;
    std::optional<ModelFit> combined;
    std::vector<std::string> warnings;
};

/// Fits the three helpfulness models. Zero-variance covariates are dropped
/// with a warning naming them; a model whose usable rows run out is skipped
/// with a warning instead of fitted. Throws ValidationError on empty input.
ModelSet run_models(const std::vector<HelpfulnessRow>& rows);

/// "***" p<0.001, "**" p<0.01, "*" p<0.05, "" otherwise.
std::string significance_stars(double p);

/// CSV with columns (covariate, model, beta, se, p, stars); after each
/// model's covariates, two bookkeeping rows carry n and pseudo_r2 in the beta
/// column.
std::string regression_table_csv(const ModelSet& models);

} // namespace tutoreval::perception
