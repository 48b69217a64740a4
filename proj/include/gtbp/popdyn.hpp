#pragma once

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "gtbp/bp.hpp"
#include "gtbp/designs.hpp"
#include "gtbp/model.hpp"
#include "gtbp/rng.hpp"

namespace gtbp {

// Simplified heuristic for the n -> infinity distribution of BP marginals on
// a biregular design. Local neighbourhoods are modelled as independent
// Bernoulli co-members; the true offspring distribution is not reproduced.
struct PopDynConfig {
    Scenario scenario;
    DegreePair degrees;
    long long population = 10000; // messages kept per status class
    int iterations = 20;
    int histogram_bins = 50;
    long long marginal_draws = 0; // 0: same as population

    void validate() const {
        scenario.validate();
        if (population < 10000)
            throw std::invalid_argument("PopDynConfig: population must be >= 10^4");
        if (iterations < 1)
            throw std::invalid_argument("PopDynConfig: iterations must be >= 1");
        if (histogram_bins < 1)
            throw std::invalid_argument("PopDynConfig: histogram_bins must be >= 1");
        if (degrees.delta < 0 || degrees.gamma < 1)
            throw std::invalid_argument("PopDynConfig: bad degrees");
    }
};

struct HistBin {
    double low = 0.0;
    double high = 0.0;
    double mass = 0.0;
};

struct PopDynResult {
    std::vector<HistBin> histogram;   // distribution of non-polarised marginals
    double polarised_healthy = 0.0;   // fraction of marginals < 1e-6
    double polarised_infected = 0.0;  // fraction of marginals > 1 - 1e-6

    void write_csv(std::ostream& os) const {
        os << "bin_low,bin_high,mass\n";
        for (const auto& b : histogram)
            os << b.low << ',' << b.high << ',' << b.mass << '\n';
    }
};

namespace detail {

// One-step cavity computation at a root of the given status: `tests` incoming
// tests, each with gamma-1 i.i.d. Be(lambda) co-members whose messages come
// from the status-conditioned populations. Returns the root's belief mu(1).
inline double popdyn_one_step(std::uint8_t root_status, int tests, const PopDynConfig& cfg,
                              const std::vector<double>& pop_healthy,
                              const std::vector<double>& pop_infected, RngStream& rng) {
    const Scenario& sc = cfg.scenario;
    const double lambda = sc.lambda;
    // clamp the prior so a measure-zero status (e.g. infected at lambda = 0)
    // still yields a well-defined belief instead of a 0/0 normalization
    const double lam_c = std::clamp(lambda, 1e-12, 1.0 - 1e-12);
    double l0 = std::log(1.0 - lam_c);
    double l1 = std::log(lam_c);
    for (int t = 0; t < tests; ++t) {
        bool any_infected = root_status != 0;
        double lpi = 0.0;
        bool pi_zero = false;
        for (int j = 0; j < cfg.degrees.gamma - 1; ++j) {
            const bool infected = rng.bernoulli(lambda);
            any_infected = any_infected || infected;
            const auto& pop = infected ? pop_infected : pop_healthy;
            const double mu1 = pop.empty() ? lambda : pop[rng.below(pop.size())];
            const double mu0 = 1.0 - mu1;
            if (mu0 > 0.0) lpi += std::log(mu0); else pi_zero = true;
        }
        const bool positive = rng.bernoulli(any_infected ? sc.q : 1.0 - sc.p);
        const auto [v0, v1] = channel_message(positive, pi_zero ? 0.0 : std::exp(lpi), sc);
        l0 += safe_log(v0);
        l1 += safe_log(v1);
    }
    return normalize_log_pair(l0, l1, "popdyn_one_step").second;
}

} // namespace detail

inline PopDynResult popdyn_run(const PopDynConfig& cfg, RngStream& rng) {
    cfg.validate();
    const double lambda = cfg.scenario.lambda;
    const long long P = cfg.population;

    // per-status populations of sample-to-test (cavity) messages mu(1)
    std::vector<double> pop_h(P, std::min(lambda, 1.0));
    std::vector<double> pop_i(P, std::min(lambda, 1.0));

    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<double> next_h(P), next_i(P);
        for (long long k = 0; k < P; ++k) {
            // a cavity message excludes one outgoing test: delta - 1 inputs
            next_h[k] = detail::popdyn_one_step(0, std::max(0, cfg.degrees.delta - 1), cfg, pop_h, pop_i, rng);
            next_i[k] = detail::popdyn_one_step(1, std::max(0, cfg.degrees.delta - 1), cfg, pop_h, pop_i, rng);
        }
        pop_h.swap(next_h);
        pop_i.swap(next_i);
    }

    // marginal distribution: full-degree one-step update at a Be(lambda) root
    const long long draws = cfg.marginal_draws > 0 ? cfg.marginal_draws : P;
    std::vector<double> marginals;
    marginals.reserve(draws);
    for (long long k = 0; k < draws; ++k) {
        const std::uint8_t status = rng.bernoulli(lambda) ? 1 : 0;
        marginals.push_back(detail::popdyn_one_step(status, cfg.degrees.delta, cfg, pop_h, pop_i, rng));
    }

    PopDynResult out;
    long long n_h = 0, n_i = 0;
    std::vector<double> mid;
    for (double mu : marginals) {
        if (mu < 1e-6)
            ++n_h;
        else if (mu > 1.0 - 1e-6)
            ++n_i;
        else
            mid.push_back(mu);
    }
    out.polarised_healthy = static_cast<double>(n_h) / draws;
    out.polarised_infected = static_cast<double>(n_i) / draws;

    const std::vector<double>& hist_src = mid.empty() ? marginals : mid;
    out.histogram.resize(cfg.histogram_bins);
    const double width = 1.0 / cfg.histogram_bins;
    for (int b = 0; b < cfg.histogram_bins; ++b) {
        out.histogram[b].low = b * width;
        out.histogram[b].high = (b + 1) * width;
    }
    for (double mu : hist_src) {
        int b = std::min(cfg.histogram_bins - 1, static_cast<int>(mu / width));
        out.histogram[b].mass += 1.0 / hist_src.size();
    }
    return out;
}

} // namespace gtbp
