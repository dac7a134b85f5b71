#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "tutoreval/metrics.hpp"
#include "tutoreval/perception.hpp"

namespace tutoreval::report {

struct TableOutput {
    std::string markdown;
    std::string csv;
};

/// One dimension of the two-tutor DAMR comparison (rates as fractions).
struct DamrComparisonRow {
    std::string dimension;
    double rate_a = 0.0;
    double rate_b = 0.0;
    std::size_t matched_a = 0;
    std::size_t total_a = 0;
    std::size_t matched_b = 0;
    std::size_t total_b = 0;
    double cohens_h = 0.0;
    double p_holm = 1.0;
};

/// Markdown + CSV table of per-dimension DAMR for two tutors. The higher rate
/// (both on ties) is bolded; Holm-adjusted p gets a star below 0.05.
TableOutput emit_damr_table(const std::vector<DamrComparisonRow>& rows,
                            const std::string& tutor_a,
                            const std::string& tutor_b);

/// One (assignment, metric) row of the engagement comparison.
struct EngagementComparisonRow {
    std::string assignment;
    std::string metric; // rel_score | succ_score
    double mean_a = 0.0;
    double sd_a = 0.0;
    std::size_t n_a = 0;
    double mean_b = 0.0;
    double sd_b = 0.0;
    std::size_t n_b = 0;
    double p_holm = 1.0;
    std::size_t n_excluded_a = 0;
    std::size_t n_excluded_b = 0;
};

/// Markdown + CSV of mean ± sd (%) per assignment and metric for two tutors,
/// with Holm-adjusted Mann-Whitney p-values.
TableOutput emit_engagement_table(const std::vector<EngagementComparisonRow>& rows,
                                  const std::string& tutor_a,
                                  const std::string& tutor_b);

/// Markdown + CSV of the three logistic fits: covariate rows in canonical
/// order, "beta[stars] (se)" cells, "--" where a covariate is not in a model,
/// pseudo-R2 and n footer rows, and a footnote naming dropped covariates.
TableOutput emit_regression_table(const perception::ModelSet& models);

struct DeltaChart {
    std::string svg;
    std::string csv;
};

/// Grouped bar chart of per-assignment DAMR deltas (percentage points): one
/// group per assignment, one bar per dimension, zero line drawn. Dimensions in
/// `omit_dimensions` (e.g. flagged no-variance) are left out entirely. Bars
/// carry class="bar" and data-value attributes so tests can parse them.
DeltaChart emit_delta_chart(const std::vector<metrics::DamrDelta>& deltas,
                            const std::vector<std::string>& omit_dimensions = {});

/// Everything a run wants to persist; summary_json() is its canonical
/// serialization (sorted keys, no timestamps) so identical runs serialize
/// byte-identically.
struct RunSummary {
    std::string tool_version;
    std::map<std::string, std::string> corpus_digests; // file label -> content key
    nlohmann::json config_snapshot;
    nlohmann::json payloads; // per-table numeric payloads
    std::vector<std::string> warnings;
};

std::string summary_json(const RunSummary& summary);

} // namespace tutoreval::report
