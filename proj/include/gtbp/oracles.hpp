#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "gtbp/bp.hpp"
#include "gtbp/model.hpp"
#include "gtbp/rng.hpp"

namespace gtbp {

inline constexpr int kExhaustiveCap = 22;

namespace detail {

inline double assignment_log_weight(const std::vector<std::uint8_t>& sigma,
                                    const PoolDesign& design, const TestResults& results,
                                    const std::vector<double>& priors, const Scenario& sc) {
    double lw = 0.0;
    for (int i = 0; i < design.n; ++i)
        lw += safe_log(sigma[i] ? priors[i] : 1.0 - priors[i]);
    for (int a = 0; a < design.m; ++a) {
        bool infected = false;
        for (int x : design.tests[a])
            if (sigma[x]) { infected = true; break; }
        double factor;
        if (results.outcomes[a])
            factor = infected ? sc.q : 1.0 - sc.p;
        else
            factor = infected ? 1.0 - sc.q : sc.p;
        lw += safe_log(factor);
    }
    return lw;
}

template <class Visit>
void enumerate_posterior(const PoolDesign& design, const TestResults& results,
                         const std::vector<double>& priors, const Scenario& sc, Visit&& visit) {
    if (design.n > kExhaustiveCap)
        throw std::invalid_argument("exhaustive enumeration: n above cap");
    std::vector<std::uint8_t> sigma(design.n, 0);
    const std::uint64_t total = 1ULL << design.n;
    for (std::uint64_t bits = 0; bits < total; ++bits) {
        for (int i = 0; i < design.n; ++i)
            sigma[i] = (bits >> i) & 1u;
        visit(sigma, assignment_log_weight(sigma, design, results, priors, sc));
    }
}

} // namespace detail

// Exact posterior marginals by direct normalization over all 2^n assignments.
inline MarginalVector exhaustive_marginals(const PoolDesign& design, const TestResults& results,
                                           const std::vector<double>& priors, const Scenario& sc) {
    double max_lw = kNegInf;
    detail::enumerate_posterior(design, results, priors, sc,
                                [&](const auto&, double lw) { max_lw = std::max(max_lw, lw); });
    if (max_lw == kNegInf)
        throw std::invalid_argument("exhaustive_marginals: posterior has zero total mass");

    double z = 0.0;
    std::vector<double> mass(design.n, 0.0);
    detail::enumerate_posterior(design, results, priors, sc, [&](const auto& sigma, double lw) {
        const double w = std::exp(lw - max_lw);
        z += w;
        for (int i = 0; i < design.n; ++i)
            if (sigma[i]) mass[i] += w;
    });
    MarginalVector mv(design.n);
    for (int i = 0; i < design.n; ++i)
        mv[i] = mass[i] / z;
    return mv;
}

// Exact log of the posterior normalizer (what Bethe approximates).
inline double exhaustive_log_normalizer(const PoolDesign& design, const TestResults& results,
                                        const std::vector<double>& priors, const Scenario& sc) {
    double max_lw = kNegInf;
    detail::enumerate_posterior(design, results, priors, sc,
                                [&](const auto&, double lw) { max_lw = std::max(max_lw, lw); });
    if (max_lw == kNegInf)
        throw std::invalid_argument("exhaustive_log_normalizer: zero total mass");
    double z = 0.0;
    detail::enumerate_posterior(design, results, priors, sc,
                                [&](const auto&, double lw) { z += std::exp(lw - max_lw); });
    return max_lw + std::log(z);
}

// Exact posterior entropy in nats.
inline double exhaustive_entropy(const PoolDesign& design, const TestResults& results,
                                 const std::vector<double>& priors, const Scenario& sc) {
    const double log_z = exhaustive_log_normalizer(design, results, priors, sc);
    double h = 0.0;
    detail::enumerate_posterior(design, results, priors, sc, [&](const auto&, double lw) {
        if (lw == kNegInf) return;
        const double lp = lw - log_z;
        h -= std::exp(lp) * lp;
    });
    return h;
}

// Random acyclic design for cross-checks: tests are attached one at a time,
// each reusing at most one already-connected sample, with every other member
// fresh, so the bipartite graph stays a forest.
inline PoolDesign random_tree_design(int n, int max_pool, RngStream& rng) {
    if (n < 1 || max_pool < 1)
        throw std::invalid_argument("random_tree_design: n and max_pool must be positive");
    std::vector<int> fresh(n);
    for (int i = 0; i < n; ++i) fresh[i] = i;
    rng.shuffle(fresh);

    std::vector<int> connected;
    std::vector<std::vector<int>> pools;
    std::size_t next = 0;
    while (next < fresh.size()) {
        const int size = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_pool)));
        std::vector<int> pool;
        if (!connected.empty() && rng.bernoulli(0.5))
            pool.push_back(connected[rng.below(connected.size())]);
        while (static_cast<int>(pool.size()) < size && next < fresh.size()) {
            pool.push_back(fresh[next]);
            connected.push_back(fresh[next]);
            ++next;
        }
        pools.push_back(std::move(pool));
    }
    return PoolDesign::from_tests(n, std::move(pools));
}

struct GlauberConfig {
    long long sweeps = 100000;   // full passes over the samples
    double burn_in = 0.2;        // fraction of sweeps discarded

    void validate() const {
        if (sweeps < 1)
            throw std::invalid_argument("GlauberConfig: sweeps must be >= 1");
        if (!(burn_in >= 0.0 && burn_in < 1.0))
            throw std::invalid_argument("GlauberConfig: burn_in outside [0,1)");
    }
};

// Single-site heat-bath sampler of the posterior. Each step resamples one
// uniformly chosen coordinate from its exact conditional; hard 0/1 channel
// factors are clamped so the chain stays irreducible on noiseless data.
inline MarginalVector glauber_run(const PoolDesign& design, const TestResults& results,
                                  const std::vector<double>& priors, const Scenario& sc,
                                  const GlauberConfig& config, RngStream& rng) {
    config.validate();
    const int n = design.n;
    const double p = std::clamp(sc.p, 1e-12, 1.0 - 1e-12);
    const double q = std::clamp(sc.q, 1e-12, 1.0 - 1e-12);

    std::vector<std::uint8_t> sigma(n);
    std::vector<int> infected_count(design.m, 0);
    for (int i = 0; i < n; ++i)
        sigma[i] = rng.bernoulli(priors[i]) ? 1 : 0;
    for (int a = 0; a < design.m; ++a)
        for (int x : design.tests[a])
            infected_count[a] += sigma[x];

    auto log_channel = [&](int a, bool any_infected) {
        if (results.outcomes[a])
            return std::log(any_infected ? q : 1.0 - p);
        return std::log(any_infected ? 1.0 - q : p);
    };

    const long long burn_sweeps = static_cast<long long>(config.sweeps * config.burn_in);
    std::vector<double> occupancy(n, 0.0);
    long long measured = 0;

    for (long long sweep = 0; sweep < config.sweeps; ++sweep) {
        for (int step = 0; step < n; ++step) {
            const int x = static_cast<int>(rng.below(n));
            const double prior = std::clamp(priors[x], 1e-12, 1.0 - 1e-12);
            double l1 = std::log(prior) - std::log(1.0 - prior);
            for (int a : design.samples[x]) {
                const int others = infected_count[a] - sigma[x];
                l1 += log_channel(a, others + 1 >= 1) - log_channel(a, others >= 1);
            }
            const double p1 = 1.0 / (1.0 + std::exp(-l1));
            const std::uint8_t next = rng.bernoulli(p1) ? 1 : 0;
            if (next != sigma[x]) {
                const int diff = next ? 1 : -1;
                for (int a : design.samples[x])
                    infected_count[a] += diff;
                sigma[x] = next;
            }
        }
        if (sweep >= burn_sweeps) {
            for (int i = 0; i < n; ++i)
                occupancy[i] += sigma[i];
            ++measured;
        }
    }

    MarginalVector mv(n);
    for (int i = 0; i < n; ++i)
        mv[i] = occupancy[i] / static_cast<double>(measured);
    return mv;
}

} // namespace gtbp
