#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "gtbp/model.hpp"
#include "gtbp/rng.hpp"

namespace gtbp {

struct DegreePair {
    int delta = 1; // tests joined per sample
    int gamma = 1; // pool size per test
};

// Expected tests per sample of a 2-stage Dorfman scheme with pool size s,
// noiseless channel: one pooled test per s samples plus a full retest of
// every positive pool. s = 1 means plain individual testing.
inline double dorfman_tests_per_sample(double lambda, int s) {
    if (s <= 1) return 1.0;
    return 1.0 / s + 1.0 - std::pow(1.0 - lambda, s);
}

inline int dorfman_pool_size(double lambda) {
    if (!(lambda > 0.0 && lambda < 1.0))
        throw std::invalid_argument("dorfman_pool_size: lambda outside (0,1)");
    int best = 1;
    double best_obj = dorfman_tests_per_sample(lambda, 1);
    for (int s = 2; s <= 1000; ++s) {
        const double obj = dorfman_tests_per_sample(lambda, s);
        if (obj < best_obj) {
            best_obj = obj;
            best = s;
        }
    }
    return best;
}

namespace detail {

// Probability that a pool whose members are i.i.d. Be(lambda) tests positive.
inline double pool_positive_prob(double lambda, int size, const Scenario& sc) {
    const double all_healthy = std::pow(1.0 - lambda, size);
    return sc.q * (1.0 - all_healthy) + (1.0 - sc.p) * all_healthy;
}

// Expected tests per sample of the 3-stage scheme with stage-1 pools of size
// s1 split into sub-pools of size s2, accounting for the dependence between
// the stage-1 pool and the sub-pool through their shared members.
inline double dorfman3_tests_per_sample(double lambda, int s1, int s2, const Scenario& sc) {
    const double sub_healthy = std::pow(1.0 - lambda, s2);
    const double rest_healthy = std::pow(1.0 - lambda, s1 - s2);
    const double p1 = pool_positive_prob(lambda, s1, sc);
    // P(stage-1 pool positive AND the sample's sub-pool positive)
    const double joint =
        (1.0 - sub_healthy) * sc.q * sc.q +
        sub_healthy * (1.0 - sc.p) *
            (sc.q * (1.0 - rest_healthy) + (1.0 - sc.p) * rest_healthy);
    return 1.0 / s1 + p1 / s2 + joint;
}

} // namespace detail

// Stage-1 pool size ratio for the 3-stage Dorfman scheme: s1 = r * s2 with r
// picked by brute force on the expected total tests per sample.
inline int dorfman3_split_factor(double lambda, const Scenario& sc) {
    const int s2 = dorfman_pool_size(lambda);
    int best_r = 2;
    double best = detail::dorfman3_tests_per_sample(lambda, 2 * s2, s2, sc);
    for (int r = 3; r <= 20; ++r) {
        const double obj = detail::dorfman3_tests_per_sample(lambda, r * s2, s2, sc);
        if (obj < best) {
            best = obj;
            best_r = r;
        }
    }
    return best_r;
}

// Consecutive pools of the given size; the last pool may be smaller.
inline std::vector<std::vector<int>> consecutive_pools(const std::vector<int>& members, int size) {
    std::vector<std::vector<int>> pools;
    for (std::size_t i = 0; i < members.size(); i += size) {
        const std::size_t end = std::min(members.size(), i + size);
        pools.emplace_back(members.begin() + i, members.begin() + end);
    }
    return pools;
}

struct Dorfman2Plan {
    int pool_size = 1;
    PoolDesign stage1;
};

inline Dorfman2Plan build_dorfman2(int n, double lambda) {
    Dorfman2Plan plan;
    plan.pool_size = dorfman_pool_size(lambda);
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    plan.stage1 = PoolDesign::from_tests(n, consecutive_pools(all, plan.pool_size));
    return plan;
}

struct Dorfman3Plan {
    int s1 = 2; // stage-1 pool size
    int s2 = 1; // sub-pool size for positive stage-1 pools
    PoolDesign stage1;
};

inline Dorfman3Plan build_dorfman3(int n, double lambda, const Scenario& sc) {
    Dorfman3Plan plan;
    plan.s2 = dorfman_pool_size(lambda);
    plan.s1 = plan.s2 * dorfman3_split_factor(lambda, sc);
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    plan.stage1 = PoolDesign::from_tests(n, consecutive_pools(all, plan.s1));
    return plan;
}

// Side length of the grid blocks. The published instance uses 4x4 blocks at
// a 5% prior; other priors fall back to the Dorfman pool-size heuristic
// clamped to lab-realistic sizes.
inline int grid_block_side(double lambda) {
    const int s = dorfman_pool_size(lambda);
    if (s == 5) return 4;
    return std::clamp(s, 2, 16);
}

struct GridPlan {
    int g = 4;                     // block side length
    PoolDesign stage1;             // row and column pools of every block
    std::vector<int> row_pool;     // per sample: index of its row pool in stage1
    std::vector<int> col_pool;     // per sample: index of its column pool
};

inline GridPlan build_grid(int n, double lambda) {
    GridPlan plan;
    plan.g = grid_block_side(lambda);
    plan.row_pool.assign(n, -1);
    plan.col_pool.assign(n, -1);
    const int g = plan.g;
    const int block = g * g;
    std::vector<std::vector<int>> pools;
    for (int base = 0; base < n; base += block) {
        const int count = std::min(block, n - base);
        std::vector<std::vector<int>> rows(g), cols(g);
        for (int i = 0; i < count; ++i) {
            rows[i / g].push_back(base + i);
            cols[i % g].push_back(base + i);
        }
        for (auto& r : rows) {
            if (r.empty()) continue;
            for (int x : r) plan.row_pool[x] = static_cast<int>(pools.size());
            pools.push_back(std::move(r));
        }
        for (auto& c : cols) {
            if (c.empty()) continue;
            for (int x : c) plan.col_pool[x] = static_cast<int>(pools.size());
            pools.push_back(std::move(c));
        }
    }
    plan.stage1 = PoolDesign::from_tests(n, std::move(pools));
    return plan;
}

// Degrees targeting ~half positive tests: Gamma = round(ln2 / lambda), with
// the sample degree derived from edge-count consistency E = m * Gamma.
inline DegreePair choose_degrees(double lambda_eff, int m, int n) {
    if (!(lambda_eff > 0.0 && lambda_eff < 1.0))
        throw std::invalid_argument("choose_degrees: lambda outside (0,1)");
    if (m < 1 || n < 1)
        throw std::invalid_argument("choose_degrees: m and n must be positive");
    DegreePair d;
    d.gamma = std::clamp(static_cast<int>(std::lround(std::log(2.0) / lambda_eff)), 1, n);
    d.delta = std::max(1, static_cast<int>(std::lround(static_cast<double>(m) * d.gamma / n)));
    return d;
}

// Pairing-model draw of a near-biregular design: m*gamma half-edges on the
// test side, sample degrees floor/ceil of E/n, a uniformly random matching.
// Duplicate incidences within a pool are collapsed to single occurrences.
inline PoolDesign build_biregular(int n, int m, const DegreePair& degrees, RngStream& rng) {
    if (degrees.gamma > n)
        throw std::invalid_argument("build_biregular: gamma exceeds n");
    if (n < 1 || m < 1)
        throw std::invalid_argument("build_biregular: n and m must be positive");
    const long long edges = static_cast<long long>(m) * degrees.gamma;
    const int base = static_cast<int>(edges / n);
    const int extra = static_cast<int>(edges % n);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    std::vector<int> half_edges;
    half_edges.reserve(edges);
    for (int i = 0; i < n; ++i) {
        const int deg = base + (i < extra ? 1 : 0);
        for (int j = 0; j < deg; ++j)
            half_edges.push_back(order[i]);
    }
    rng.shuffle(half_edges);

    std::vector<std::vector<int>> pools(m);
    for (int a = 0; a < m; ++a) {
        auto& pool = pools[a];
        pool.assign(half_edges.begin() + static_cast<long long>(a) * degrees.gamma,
                    half_edges.begin() + static_cast<long long>(a + 1) * degrees.gamma);
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    }
    return PoolDesign::from_tests(n, std::move(pools));
}

// A pool partition driven by per-sample marginals: the pools list contains
// ordered pooled groups (size >= 2), everything else is tested individually.
struct DorfmanPlan {
    std::vector<std::vector<int>> pools;
    std::vector<int> individual;
};

namespace detail {

// Probability that a pool of samples with infection marginals q_i tests
// positive under the channel.
inline double marginal_pool_positive(const std::vector<double>& marginals,
                                     const std::vector<int>& members,
                                     const Scenario& sc) {
    double all_healthy = 1.0;
    for (int x : members)
        all_healthy *= 1.0 - marginals[x];
    return sc.q * (1.0 - all_healthy) + (1.0 - sc.p) * all_healthy;
}

} // namespace detail

// Informative Dorfman: samples with marginal above 0.3 go straight to
// individual testing; the rest are sorted by marginal and split into
// contiguous pools by a DP minimizing the expected number of tests.
inline DorfmanPlan informative_dorfman_plan(const std::vector<int>& sample_ids,
                                            const std::vector<double>& marginals,
                                            const Scenario& sc,
                                            int max_pool_size = 32) {
    DorfmanPlan plan;
    std::vector<int> pooled;
    for (int x : sample_ids) {
        const double mu = marginals[x];
        if (!(mu >= 0.0 && mu <= 1.0))
            throw std::invalid_argument("informative_dorfman_plan: marginal outside [0,1]");
        if (mu > 0.3)
            plan.individual.push_back(x);
        else
            pooled.push_back(x);
    }
    std::sort(pooled.begin(), pooled.end(), [&](int a, int b) {
        if (marginals[a] != marginals[b]) return marginals[a] < marginals[b];
        return a < b;
    });

    const int k = static_cast<int>(pooled.size());
    if (k == 0) return plan;

    // prefix products of healthy probabilities for O(1) segment positivity
    std::vector<double> healthy_prefix(k + 1, 1.0);
    for (int i = 0; i < k; ++i)
        healthy_prefix[i + 1] = healthy_prefix[i] * (1.0 - marginals[pooled[i]]);

    auto segment_cost = [&](int i, int j) { // pool pooled[i..j)
        const int len = j - i;
        if (len == 1) return 1.0; // singleton: plain individual test
        const double all_healthy =
            healthy_prefix[i] > 0.0 ? healthy_prefix[j] / healthy_prefix[i] : 0.0;
        const double pos = sc.q * (1.0 - all_healthy) + (1.0 - sc.p) * all_healthy;
        return 1.0 + len * pos;
    };

    std::vector<double> cost(k + 1, 0.0);
    std::vector<int> cut(k + 1, 0);
    for (int j = 1; j <= k; ++j) {
        cost[j] = std::numeric_limits<double>::infinity();
        for (int i = std::max(0, j - max_pool_size); i < j; ++i) {
            const double c = cost[i] + segment_cost(i, j);
            if (c < cost[j]) {
                cost[j] = c;
                cut[j] = i;
            }
        }
    }

    std::vector<std::pair<int, int>> segments;
    for (int j = k; j > 0; j = cut[j])
        segments.emplace_back(cut[j], j);
    std::reverse(segments.begin(), segments.end());
    for (const auto& [i, j] : segments) {
        if (j - i == 1)
            plan.individual.push_back(pooled[i]);
        else
            plan.pools.emplace_back(pooled.begin() + i, pooled.begin() + j);
    }
    return plan;
}

// Expected number of tests a DorfmanPlan will consume.
inline double dorfman_plan_expected_tests(const DorfmanPlan& plan,
                                          const std::vector<double>& marginals,
                                          const Scenario& sc) {
    double e = static_cast<double>(plan.individual.size());
    for (const auto& pool : plan.pools)
        e += 1.0 + pool.size() * detail::marginal_pool_positive(marginals, pool, sc);
    return e;
}

} // namespace gtbp
