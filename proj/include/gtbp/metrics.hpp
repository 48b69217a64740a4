#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gtbp/designs.hpp"
#include "gtbp/model.hpp"
#include "gtbp/pipeline.hpp"

namespace gtbp {

struct RunMetrics {
    int tests_total = 0;
    double tests_per_n = 0.0;
    int fp = 0;
    int fn = 0;
    double fpr = 0.0; // over healthy samples
    double fnr = 0.0; // over infected samples
    bool fpr_denominator_zero = false;
    bool fnr_denominator_zero = false;
    double stage_frac[3] = {0.0, 0.0, 0.0}; // fraction of samples decided per stage
    int gamma_max = 0;    // largest pool used in any stage
    int delta_max = 0;    // most tests any one sample appears in
    double delta_avg = 0.0;
};

// Classification error counts and rates. Zero-denominator rates are reported
// as 0 with the corresponding flag set.
inline RunMetrics evaluate(const Classification& classification, const GroundTruth& truth) {
    if (classification.size() != truth.status.size())
        throw std::invalid_argument("evaluate: length mismatch");
    RunMetrics m;
    int healthy = 0, infected = 0;
    for (std::size_t i = 0; i < classification.size(); ++i) {
        if (truth.status[i]) {
            ++infected;
            if (!classification[i]) ++m.fn;
        } else {
            ++healthy;
            if (classification[i]) ++m.fp;
        }
    }
    m.fpr_denominator_zero = healthy == 0;
    m.fnr_denominator_zero = infected == 0;
    m.fpr = static_cast<double>(m.fp) / std::max(1, healthy);
    m.fnr = static_cast<double>(m.fn) / std::max(1, infected);
    return m;
}

inline RunMetrics metrics_from_trace(const PipelineTrace& trace, const GroundTruth& truth) {
    RunMetrics m = evaluate(trace.classification, truth);
    m.tests_total = trace.total_tests();
    m.tests_per_n = trace.n > 0 ? static_cast<double>(m.tests_total) / trace.n : 0.0;
    for (int d : trace.decided_stage)
        if (d >= 1 && d <= 3) m.stage_frac[d - 1] += 1.0;
    for (double& f : m.stage_frac) f /= std::max(1, trace.n);
    m.gamma_max = trace.max_pool_size();
    const std::vector<int> deg = trace.sample_degrees();
    long long sum = 0;
    for (int d : deg) {
        m.delta_max = std::max(m.delta_max, d);
        sum += d;
    }
    m.delta_avg = deg.empty() ? 0.0 : static_cast<double>(sum) / deg.size();
    return m;
}

struct DorfmanExpectations {
    double tests = 0.0;
    double fp = 0.0;
    double fn = 0.0;
};

// Closed-form expectations for the 2- and 3-stage Dorfman schemes with pool
// sizes chosen as in the builders. False-positive chains use the
// unconditional pool positivity of each visited stage plus the final
// individual test; false negatives require every stage to miss.
inline DorfmanExpectations dorfman_expectations(int n, double lambda, const Scenario& sc, int stages) {
    if (stages != 2 && stages != 3)
        throw std::invalid_argument("dorfman_expectations: stages must be 2 or 3");
    DorfmanExpectations e;
    const int s2 = dorfman_pool_size(lambda);
    if (stages == 2) {
        const double pos = detail::pool_positive_prob(lambda, s2, sc);
        e.tests = n * (1.0 / s2 + pos);
        // conditioned on the sample being healthy, the pool's positivity is
        // driven by the other s2-1 members
        const double others_healthy = std::pow(1.0 - lambda, s2 - 1);
        const double pool_pos_h = sc.q * (1.0 - others_healthy) + (1.0 - sc.p) * others_healthy;
        e.fp = n * (1.0 - lambda) * pool_pos_h * (1.0 - sc.p);
        e.fn = n * lambda * (1.0 - sc.q * sc.q);
        return e;
    }
    const int s1 = s2 * dorfman3_split_factor(lambda, sc);
    e.tests = n * detail::dorfman3_tests_per_sample(lambda, s1, s2, sc);
    e.fp = n * (1.0 - lambda) * detail::pool_positive_prob(lambda, s1, sc) *
           detail::pool_positive_prob(lambda, s2, sc) * (1.0 - sc.p);
    e.fn = n * lambda * (1.0 - sc.q * sc.q * sc.q);
    return e;
}

// Counting bound: distinguishing the ~2^{n h2(lambda)} plausible infection
// sets needs at least n h2(lambda) binary test outcomes.
inline double info_lower_bound(double n, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("info_lower_bound: lambda outside [0,1]");
    auto xlog2x = [](double v) { return v > 0.0 ? v * std::log2(v) : 0.0; };
    const double h2 = -xlog2x(lambda) - xlog2x(1.0 - lambda);
    return n * h2;
}

// Prior entropy in nats, n * h(lambda); the m = 0 entropy estimate.
inline double prior_entropy(double n, double lambda) {
    auto xlogx = [](double v) { return v > 0.0 ? v * std::log(v) : 0.0; };
    return n * (-xlogx(lambda) - xlogx(1.0 - lambda));
}

} // namespace gtbp
