#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <stdexcept>

namespace oracles {

namespace {

// Exact C(n, k); the multiply-then-divide order keeps every intermediate an
// integer (the running product is itself a binomial coefficient).
unsigned long long binomial(long long n, long long k) {
    if (k < 0 || k > n) return 0;
    k = std::min(k, n - k);
    unsigned long long result = 1;
    for (long long i = 1; i <= k; ++i) {
        result = result * static_cast<unsigned long long>(n - k + i) /
                 static_cast<unsigned long long>(i);
    }
    return result;
}

// Pooled midranks multiplied by two, so that tied ranks stay integers.
std::vector<long long> doubled_midranks(const std::vector<double>& pooled) {
    const std::size_t n = pooled.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return pooled[i] < pooled[j]; });

    std::vector<long long> doubled(n, 0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        // ranks i+1 .. j+1 (one-based) share the midrank (i + j + 2) / 2
        const long long doubled_rank = static_cast<long long>(i + j + 2);
        for (std::size_t k = i; k <= j; ++k) doubled[order[k]] = doubled_rank;
        i = j + 1;
    }
    return doubled;
}

// |2*U - 2*mu| for the subset of pooled indices marked in `picked`.
long long doubled_deviation(const std::vector<long long>& doubled_ranks,
                            const std::vector<char>& picked,
                            long long n_a,
                            long long n_b) {
    long long doubled_rank_sum = 0;
    for (std::size_t i = 0; i < picked.size(); ++i) {
        if (picked[i]) doubled_rank_sum += doubled_ranks[i];
    }
    // 2U = 2R_a - n_a(n_a+1); 2mu = n_a n_b
    return std::llabs(doubled_rank_sum - n_a * (n_a + 1) - n_a * n_b);
}

} // namespace

double fisher_exact(long long a, long long b, long long c, long long d) {
    if (a < 0 || b < 0 || c < 0 || d < 0) {
        throw std::invalid_argument("negative cell in contingency table");
    }
    const long long r1 = a + b;
    const long long r2 = c + d;
    const long long c1 = a + c;
    const long long n = r1 + r2;
    if (n == 0) return 1.0;

    const unsigned long long denominator = binomial(n, c1);
    const unsigned long long observed = binomial(r1, a) * binomial(r2, c);
    const long long k_min = std::max(0LL, c1 - r2);
    const long long k_max = std::min(r1, c1);

    // Same tie rule as the implementation under test, but evaluated on exact
    // integer weights: include every table at most (1 + 1e-7) times as likely
    // as the observed one.
    const long double threshold =
        static_cast<long double>(observed) * (1.0L + 1e-7L);
    unsigned long long tail = 0;
    for (long long k = k_min; k <= k_max; ++k) {
        const unsigned long long weight = binomial(r1, k) * binomial(r2, c1 - k);
        if (static_cast<long double>(weight) <= threshold) tail += weight;
    }
    const long double p = static_cast<long double>(tail) / static_cast<long double>(denominator);
    return std::min(1.0, static_cast<double>(p));
}

double mwu_u_statistic(const std::vector<double>& sample_a,
                       const std::vector<double>& sample_b) {
    double u = 0.0;
    for (double x : sample_a) {
        for (double y : sample_b) {
            if (x > y) u += 1.0;
            else if (x == y) u += 0.5;
        }
    }
    return u;
}

double mwu_exact_p(const std::vector<double>& sample_a,
                   const std::vector<double>& sample_b) {
    const long long n_a = static_cast<long long>(sample_a.size());
    const long long n_b = static_cast<long long>(sample_b.size());
    if (n_a == 0 || n_b == 0) throw std::invalid_argument("empty sample");

    std::vector<double> pooled = sample_a;
    pooled.insert(pooled.end(), sample_b.begin(), sample_b.end());
    const std::vector<long long> doubled = doubled_midranks(pooled);

    std::vector<char> observed_pick(pooled.size(), 0);
    std::fill(observed_pick.begin(), observed_pick.begin() + n_a, 1);
    const long long observed = doubled_deviation(doubled, observed_pick, n_a, n_b);

    // Walk every distinct arrangement of n_a ones: starting from the
    // descending-sorted vector, prev_permutation visits each exactly once.
    std::vector<char> pick(pooled.size(), 0);
    std::fill(pick.begin(), pick.begin() + n_a, 1);
    unsigned long long hits = 0;
    unsigned long long total = 0;
    do {
        if (doubled_deviation(doubled, pick, n_a, n_b) >= observed) ++hits;
        ++total;
    } while (std::prev_permutation(pick.begin(), pick.end()));

    return static_cast<double>(hits) / static_cast<double>(total);
}

double mwu_monte_carlo_p(const std::vector<double>& sample_a,
                         const std::vector<double>& sample_b,
                         std::size_t n_permutations,
                         std::uint64_t seed) {
    const long long n_a = static_cast<long long>(sample_a.size());
    const long long n_b = static_cast<long long>(sample_b.size());
    if (n_a == 0 || n_b == 0) throw std::invalid_argument("empty sample");

    std::vector<double> pooled = sample_a;
    pooled.insert(pooled.end(), sample_b.begin(), sample_b.end());
    const std::vector<long long> doubled = doubled_midranks(pooled);
    const std::size_t n = pooled.size();

    std::vector<char> observed_pick(n, 0);
    std::fill(observed_pick.begin(), observed_pick.begin() + n_a, 1);
    const long long observed = doubled_deviation(doubled, observed_pick, n_a, n_b);

    std::mt19937_64 engine(seed);
    auto below = [&](std::size_t bound) {
        // Lemire-style multiply-shift; the tiny bias is irrelevant here.
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(engine()) * bound) >> 64);
    };

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    unsigned long long hits = 0;
    for (std::size_t t = 0; t < n_permutations; ++t) {
        // Partial Fisher-Yates: the first n_a slots become a random subset.
        for (std::size_t i = 0; i < static_cast<std::size_t>(n_a); ++i) {
            std::swap(order[i], order[i + below(n - i)]);
        }
        long long doubled_rank_sum = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(n_a); ++i) {
            doubled_rank_sum += doubled[order[i]];
        }
        const long long dev = std::llabs(doubled_rank_sum - n_a * (n_a + 1) - n_a * n_b);
        if (dev >= observed) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n_permutations);
}

double logit_log_likelihood(const std::vector<std::vector<double>>& design,
                            const std::vector<int>& outcomes,
                            const std::vector<double>& beta) {
    double ll = 0.0;
    for (std::size_t i = 0; i < design.size(); ++i) {
        double eta = 0.0;
        for (std::size_t j = 0; j < beta.size(); ++j) eta += design[i][j] * beta[j];
        const double softplus = eta > 30.0 ? eta : std::log1p(std::exp(eta));
        ll += outcomes[i] * eta - softplus;
    }
    return ll;
}

std::vector<double> logit_score(const std::vector<std::vector<double>>& design,
                                const std::vector<int>& outcomes,
                                const std::vector<double>& beta) {
    std::vector<double> score(beta.size(), 0.0);
    for (std::size_t i = 0; i < design.size(); ++i) {
        double eta = 0.0;
        for (std::size_t j = 0; j < beta.size(); ++j) eta += design[i][j] * beta[j];
        const double p = 1.0 / (1.0 + std::exp(-eta));
        const double residual = outcomes[i] - p;
        for (std::size_t j = 0; j < beta.size(); ++j) score[j] += design[i][j] * residual;
    }
    return score;
}

} // namespace oracles
