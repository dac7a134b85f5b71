#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tutoreval::stats {

// =============================================================================
// Basic numerics
// =============================================================================

/// Standard normal CDF.
double normal_cdf(double x);

/// Row-major dense matrix, just enough for small design matrices.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// =============================================================================
// Contingency tests and effect sizes
// =============================================================================

/// Rows are the two groups under comparison, columns matched/unmatched.
struct ContingencyTable2x2 {
    long long a = 0;
    long long b = 0;
    long long c = 0;
    long long d = 0;

    long long total() const { return a + b + c + d; }
};

/// Two-sided Fisher exact p by the probability-mass method: sum of
/// hypergeometric tables (same margins) whose probability does not exceed the
/// observed table's, with a 1e-7 relative tie tolerance.
double fisher_exact_two_sided(const ContingencyTable2x2& t);

/// Arcsine-transform effect size for two proportions; positive when p2 > p1.
double cohens_h(double p1, double p2);

// =============================================================================
// Mann-Whitney U
// =============================================================================

struct MannWhitneyResult {
    double u = 0.0;       // U statistic of sample_a (pairwise wins, ties count half)
    double p_value = 1.0; // two-sided
    bool exact = false;   // exact permutation enumeration used
    bool degenerate = false; // all pooled values identical
};

/// Exact permutation p when n_a + n_b <= 20, otherwise normal approximation
/// with tie-corrected variance and 0.5 continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> sample_a, std::span<const double> sample_b);

// =============================================================================
// Multiple-comparison adjustment
// =============================================================================

/// Holm step-down adjustment; output aligned with input order, clipped at 1.
std::vector<double> holm_adjust(const std::vector<double>& p_values);

// =============================================================================
// Inter-rater agreement
// =============================================================================

struct KappaResult {
    double kappa = 0.0;
    double percent_agreement = 0.0;
    // Set when at least one rater is constant; kappa is still well defined
    // unless expected agreement is exactly 1.
    bool constant_rater = false;
};

KappaResult cohens_kappa(std::span<const int> labels_a, std::span<const int> labels_b);

// =============================================================================
// Binary logistic regression
// =============================================================================

struct RegressionFit {
    std::vector<double> coefficients;
    std::vector<double> standard_errors;
    std::vector<double> z_values;
    std::vector<double> p_values;
    double log_likelihood = 0.0;
    double null_log_likelihood = 0.0;
    double pseudo_r2 = 0.0;
    int n_iterations = 0;
    bool converged = false;
    bool ridge_applied = false;
    std::size_t n_observations = 0;
};

/// Newton / IRLS fit of Pr(y=1) = sigmoid(X beta). X must carry the intercept
/// column. `names` (optional, one per column) improves separation diagnostics.
RegressionFit logit_fit(const Matrix& X, std::span<const int> y,
                        const std::vector<std::string>& names = {});

/// McFadden pseudo R^2 = 1 - ll_model / ll_null.
double mcfadden_r2(double ll_model, double ll_null);

// =============================================================================
// Result carrier
// =============================================================================

/// One test outcome carried through to reports.
struct StatResult {
    std::string test_name;
    std::string group;
    double statistic = 0.0;
    std::optional<double> effect_size;
    double p_raw = 1.0;
    double p_holm = 1.0;
    std::string family_id;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
};

/// CSV with header (test_name, group, statistic, effect_size, p_raw, p_holm,
/// family_id, n_a, n_b).
std::string stat_results_csv(const std::vector<StatResult>& results);

// =============================================================================
// Descriptive helpers
// =============================================================================

/// Linear-interpolation quantile (the common "type 7" rule): for sorted values
/// x_0..x_{n-1}, q(p) interpolates at h = (n-1)p. Throws StatError on empty
/// input or p outside [0,1].
double quantile(std::vector<double> values, double p);

} // namespace tutoreval::stats
