#include "tutoreval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "tutoreval/csv.hpp"
#include "tutoreval/errors.hpp"
#include "tutoreval/util.hpp"

namespace tutoreval::stats {

namespace {

constexpr double kFisherTieTolerance = 1e-7;
constexpr int kMwuExactThreshold = 20;
constexpr double kIrlsTolerance = 1e-8;
constexpr int kIrlsMaxIterations = 100;
constexpr double kIrlsRidge = 1e-8;
constexpr double kSeparationBetaBound = 15.0;

double log_choose(long long n, long long k) {
    return std::lgamma(static_cast<double>(n + 1)) - std::lgamma(static_cast<double>(k + 1)) -
           std::lgamma(static_cast<double>(n - k + 1));
}

// Midranks of the pooled sample plus the tie-term sum(t^3 - t).
struct RankInfo {
    std::vector<double> ranks; // aligned with the pooled input order
    double tie_term = 0.0;
    bool all_equal = false;
};

RankInfo midranks(const std::vector<double>& pooled) {
    const std::size_t n = pooled.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });

    RankInfo info;
    info.ranks.assign(n, 0.0);
    std::size_t i = 0;
    std::size_t distinct_groups = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        const double tied = static_cast<double>(j - i + 1);
        const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            info.ranks[order[k]] = rank;
        }
        info.tie_term += tied * tied * tied - tied;
        ++distinct_groups;
        i = j + 1;
    }
    info.all_equal = (distinct_groups == 1 && n > 0);
    return info;
}

// Counts combinations with |U - mu| >= |U_obs - mu| by walking all
// n_a-subsets of the pooled ranks.
double exact_mwu_p(const std::vector<double>& ranks, std::size_t n_a, double u_observed) {
    const std::size_t n = ranks.size();
    const std::size_t n_b = n - n_a;
    const double mu = static_cast<double>(n_a) * static_cast<double>(n_b) / 2.0;
    const double observed_dev = std::abs(u_observed - mu);
    const double rank_offset = static_cast<double>(n_a) * static_cast<double>(n_a + 1) / 2.0;

    std::vector<std::size_t> idx(n_a);
    std::iota(idx.begin(), idx.end(), 0);

    unsigned long long extreme = 0;
    unsigned long long total = 0;
    while (true) {
        double rank_sum = 0.0;
        for (std::size_t k : idx) rank_sum += ranks[k];
        const double u = rank_sum - rank_offset;
        if (std::abs(u - mu) >= observed_dev - 1e-9) ++extreme;
        ++total;

        // next combination
        std::size_t pos = n_a;
        while (pos > 0) {
            --pos;
            if (idx[pos] != pos + n - n_a) break;
            if (pos == 0) {
                return static_cast<double>(extreme) / static_cast<double>(total);
            }
        }
        ++idx[pos];
        for (std::size_t k = pos + 1; k < n_a; ++k) {
            idx[k] = idx[k - 1] + 1;
        }
    }
}

} // namespace

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double fisher_exact_two_sided(const ContingencyTable2x2& t) {
    if (t.a < 0 || t.b < 0 || t.c < 0 || t.d < 0) {
        throw StatError("fisher_exact_two_sided: negative count");
    }
    const long long n = t.total();
    if (n < 1) {
        throw StatError("fisher_exact_two_sided: empty table");
    }
    const long long r1 = t.a + t.b;
    const long long r2 = t.c + t.d;
    const long long c1 = t.a + t.c;

    const long long lo = std::max(0LL, c1 - r2);
    const long long hi = std::min(r1, c1);

    const double log_denominator = log_choose(n, c1);
    auto log_pmf = [&](long long x) {
        return log_choose(r1, x) + log_choose(r2, c1 - x) - log_denominator;
    };

    const double log_observed = log_pmf(t.a);
    const double threshold = log_observed + std::log1p(kFisherTieTolerance);

    double p = 0.0;
    for (long long x = lo; x <= hi; ++x) {
        const double lp = log_pmf(x);
        if (lp <= threshold) {
            p += std::exp(lp);
        }
    }
    return std::min(p, 1.0);
}

double cohens_h(double p1, double p2) {
    if (p1 < 0.0 || p1 > 1.0 || p2 < 0.0 || p2 > 1.0) {
        throw StatError("cohens_h: proportions must lie in [0,1]");
    }
    return 2.0 * std::asin(std::sqrt(p2)) - 2.0 * std::asin(std::sqrt(p1));
}

MannWhitneyResult mann_whitney_u(std::span<const double> sample_a,
                                 std::span<const double> sample_b) {
    if (sample_a.empty() || sample_b.empty()) {
        throw StatError("mann_whitney_u: both samples must be non-empty");
    }
    const std::size_t n_a = sample_a.size();
    const std::size_t n_b = sample_b.size();
    const std::size_t n = n_a + n_b;

    std::vector<double> pooled;
    pooled.reserve(n);
    pooled.insert(pooled.end(), sample_a.begin(), sample_a.end());
    pooled.insert(pooled.end(), sample_b.begin(), sample_b.end());
    const RankInfo info = midranks(pooled);

    double rank_sum_a = 0.0;
    for (std::size_t i = 0; i < n_a; ++i) rank_sum_a += info.ranks[i];
    const double u = rank_sum_a - static_cast<double>(n_a) * static_cast<double>(n_a + 1) / 2.0;

    MannWhitneyResult result;
    result.u = u;
    result.degenerate = info.all_equal;

    if (info.all_equal) {
        result.p_value = 1.0;
        result.exact = n <= kMwuExactThreshold;
        return result;
    }

    if (n <= kMwuExactThreshold) {
        result.exact = true;
        result.p_value = exact_mwu_p(info.ranks, n_a, u);
        return result;
    }

    const double nn = static_cast<double>(n);
    const double mu = static_cast<double>(n_a) * static_cast<double>(n_b) / 2.0;
    const double tie_correction = info.tie_term / (nn * (nn - 1.0));
    const double variance =
        (static_cast<double>(n_a) * static_cast<double>(n_b) / 12.0) * (nn + 1.0 - tie_correction);
    if (variance <= 0.0) {
        result.degenerate = true;
        result.p_value = 1.0;
        return result;
    }
    double deviation = std::abs(u - mu) - 0.5; // continuity correction
    if (deviation < 0.0) deviation = 0.0;
    const double z = deviation / std::sqrt(variance);
    result.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    return result;
}

std::vector<double> holm_adjust(const std::vector<double>& p_values) {
    const std::size_t m = p_values.size();
    for (double p : p_values) {
        if (p < 0.0 || p > 1.0 || std::isnan(p)) {
            throw StatError("holm_adjust: p-values must lie in [0,1]");
        }
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return p_values[i] < p_values[j]; });

    std::vector<double> adjusted(m, 0.0);
    double running_max = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double scaled = p_values[order[k]] * static_cast<double>(m - k);
        running_max = std::max(running_max, scaled);
        adjusted[order[k]] = std::min(1.0, running_max);
    }
    return adjusted;
}

KappaResult cohens_kappa(std::span<const int> labels_a, std::span<const int> labels_b) {
    if (labels_a.size() != labels_b.size()) {
        throw StatError("cohens_kappa: label lists differ in length");
    }
    if (labels_a.empty()) {
        throw StatError("cohens_kappa: empty label lists");
    }
    const double n = static_cast<double>(labels_a.size());

    std::map<int, double> marginal_a;
    std::map<int, double> marginal_b;
    double matches = 0.0;
    for (std::size_t i = 0; i < labels_a.size(); ++i) {
        marginal_a[labels_a[i]] += 1.0;
        marginal_b[labels_b[i]] += 1.0;
        if (labels_a[i] == labels_b[i]) matches += 1.0;
    }

    double expected = 0.0;
    for (const auto& [label, count_a] : marginal_a) {
        auto it = marginal_b.find(label);
        if (it != marginal_b.end()) {
            expected += (count_a / n) * (it->second / n);
        }
    }

    KappaResult result;
    result.percent_agreement = matches / n;
    result.constant_rater = (marginal_a.size() == 1 || marginal_b.size() == 1);
    if (expected >= 1.0) {
        // both raters constant with the same label
        result.kappa = 1.0;
        return result;
    }
    result.kappa = (result.percent_agreement - expected) / (1.0 - expected);
    return result;
}

// =============================================================================
// Logistic regression internals
// =============================================================================

namespace {

// log(1 + exp(x)) without overflow
double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// In-place Cholesky solve of the symmetric system A x = b; false if A is not
// positive definite.
bool cholesky_solve(Matrix a, std::vector<double> b, std::vector<double>& x) {
    const std::size_t n = a.rows();
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a.at(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= a.at(j, k) * a.at(j, k);
        if (diag <= 0.0 || !std::isfinite(diag)) return false;
        const double root = std::sqrt(diag);
        a.at(j, j) = root;
        for (std::size_t i = j + 1; i < n; ++i) {
            double v = a.at(i, j);
            for (std::size_t k = 0; k < j; ++k) v -= a.at(i, k) * a.at(j, k);
            a.at(i, j) = v / root;
        }
    }
    // forward then backward substitution
    for (std::size_t i = 0; i < n; ++i) {
        double v = b[i];
        for (std::size_t k = 0; k < i; ++k) v -= a.at(i, k) * b[k];
        b[i] = v / a.at(i, i);
    }
    x.assign(n, 0.0);
    for (std::size_t ii = n; ii-- > 0;) {
        double v = b[ii];
        for (std::size_t k = ii + 1; k < n; ++k) v -= a.at(k, ii) * x[k];
        x[ii] = v / a.at(ii, ii);
    }
    return true;
}

// Inverse via Cholesky, used for the covariance of the estimates.
bool cholesky_inverse(const Matrix& a, Matrix& inverse) {
    const std::size_t n = a.rows();
    inverse = Matrix(n, n);
    for (std::size_t col = 0; col < n; ++col) {
        std::vector<double> e(n, 0.0);
        e[col] = 1.0;
        std::vector<double> x;
        if (!cholesky_solve(a, e, x)) return false;
        for (std::size_t row = 0; row < n; ++row) inverse.at(row, col) = x[row];
    }
    return true;
}

std::string column_name(const std::vector<std::string>& names, std::size_t j) {
    if (j < names.size()) return names[j];
    return "column " + std::to_string(j);
}

} // namespace

RegressionFit logit_fit(const Matrix& X, std::span<const int> y,
                        const std::vector<std::string>& names) {
    const std::size_t n = X.rows();
    const std::size_t k = X.cols();
    if (n != y.size()) {
        throw StatError("logit_fit: rows(X) != len(y)");
    }
    if (k == 0 || n < k) {
        throw StatError("logit_fit: need at least as many rows as columns");
    }

    double y_sum = 0.0;
    for (int v : y) {
        if (v != 0 && v != 1) throw StatError("logit_fit: outcomes must be 0/1");
        y_sum += v;
    }
    const double y_mean = y_sum / static_cast<double>(n);
    if (y_mean <= 0.0 || y_mean >= 1.0) {
        throw SeparationError("logit_fit: outcome is constant, intercept diverges", {"(intercept)"});
    }

    RegressionFit fit;
    fit.n_observations = n;
    fit.null_log_likelihood = static_cast<double>(n) * (y_mean * std::log(y_mean) +
                                                        (1.0 - y_mean) * std::log(1.0 - y_mean));

    std::vector<double> beta(k, 0.0);
    std::vector<double> eta(n, 0.0);
    std::vector<double> mu(n, 0.0);
    Matrix information(k, k);
    bool converged = false;
    int iteration = 0;

    while (iteration < kIrlsMaxIterations) {
        ++iteration;
        for (std::size_t i = 0; i < n; ++i) {
            double e = 0.0;
            for (std::size_t j = 0; j < k; ++j) e += X.at(i, j) * beta[j];
            eta[i] = e;
            mu[i] = sigmoid(e);
        }

        std::vector<double> gradient(k, 0.0);
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t jj = j; jj < k; ++jj) {
                information.at(j, jj) = 0.0;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double w = mu[i] * (1.0 - mu[i]);
            const double r = static_cast<double>(y[i]) - mu[i];
            for (std::size_t j = 0; j < k; ++j) {
                gradient[j] += X.at(i, j) * r;
                for (std::size_t jj = j; jj < k; ++jj) {
                    information.at(j, jj) += w * X.at(i, j) * X.at(i, jj);
                }
            }
        }
        for (std::size_t j = 0; j < k; ++j) {
            for (std::size_t jj = 0; jj < j; ++jj) {
                information.at(j, jj) = information.at(jj, j);
            }
        }

        std::vector<double> delta;
        if (!cholesky_solve(information, gradient, delta)) {
            if (fit.ridge_applied) {
                throw RankDeficiencyError("logit_fit: information matrix is singular");
            }
            fit.ridge_applied = true;
            Matrix ridged = information;
            for (std::size_t j = 0; j < k; ++j) ridged.at(j, j) += kIrlsRidge;
            if (!cholesky_solve(ridged, gradient, delta)) {
                throw RankDeficiencyError("logit_fit: information matrix is singular");
            }
            information = ridged;
        }

        double max_step = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            beta[j] += delta[j];
            max_step = std::max(max_step, std::abs(delta[j]));
        }
        if (max_step < kIrlsTolerance) {
            converged = true;
            break;
        }

        double max_beta = 0.0;
        for (double b : beta) max_beta = std::max(max_beta, std::abs(b));
        if (max_beta > kSeparationBetaBound) {
            std::vector<std::string> offenders;
            for (std::size_t j = 0; j < k; ++j) {
                if (std::abs(beta[j]) > kSeparationBetaBound) {
                    offenders.push_back(column_name(names, j));
                }
            }
            std::string msg = "logit_fit: separation detected, diverging coefficients:";
            for (const auto& o : offenders) msg += " " + o;
            throw SeparationError(msg, offenders);
        }
    }

    fit.n_iterations = iteration;
    fit.converged = converged;
    fit.coefficients = beta;

    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double e = 0.0;
        for (std::size_t j = 0; j < k; ++j) e += X.at(i, j) * beta[j];
        ll += static_cast<double>(y[i]) * e - softplus(e);
    }
    fit.log_likelihood = ll;
    fit.pseudo_r2 = mcfadden_r2(ll, fit.null_log_likelihood);

    Matrix covariance;
    if (!cholesky_inverse(information, covariance)) {
        throw RankDeficiencyError("logit_fit: information matrix is singular at the optimum");
    }
    fit.standard_errors.resize(k);
    fit.z_values.resize(k);
    fit.p_values.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
        fit.standard_errors[j] = std::sqrt(covariance.at(j, j));
        fit.z_values[j] = beta[j] / fit.standard_errors[j];
        fit.p_values[j] = 2.0 * normal_cdf(-std::abs(fit.z_values[j]));
    }
    return fit;
}

double mcfadden_r2(double ll_model, double ll_null) {
    if (ll_null == 0.0) {
        throw StatError("mcfadden_r2: null log-likelihood is zero");
    }
    return 1.0 - ll_model / ll_null;
}

std::string stat_results_csv(const std::vector<StatResult>& results) {
    csv::Writer w;
    w.row({"test_name", "group", "statistic", "effect_size", "p_raw", "p_holm", "family_id", "n_a",
           "n_b"});
    for (const auto& r : results) {
        w.row({r.test_name, r.group, util::format_double(r.statistic),
               r.effect_size ? util::format_double(*r.effect_size) : std::string(),
               util::format_double(r.p_raw), util::format_double(r.p_holm), r.family_id,
               std::to_string(r.n_a), std::to_string(r.n_b)});
    }
    return w.str();
}

double quantile(std::vector<double> values, double p) {
    if (values.empty()) {
        throw StatError("quantile of an empty sample");
    }
    if (!(p >= 0.0 && p <= 1.0)) {
        throw StatError("quantile level must lie in [0,1]");
    }
    std::sort(values.begin(), values.end());
    const double h = static_cast<double>(values.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

} // namespace tutoreval::stats
