#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtbp/model.hpp"
#include "gtbp/rng.hpp"

namespace gtbp {

// Raised when hard 0/1 channel factors leave a message with no consistent
// state (only possible with p = 1 or q = 1).
struct contradictory_evidence : std::runtime_error {
    explicit contradictory_evidence(const std::string& what) : std::runtime_error(what) {}
};

// Flattened directed-edge view of a design for message passing.
struct BpGraph {
    int n = 0, m = 0, edges = 0;
    std::vector<int> edge_sample, edge_test;
    std::vector<std::vector<int>> sample_edges, test_edges;

    explicit BpGraph(const PoolDesign& d) : n(d.n), m(d.m) {
        sample_edges.resize(n);
        test_edges.resize(m);
        for (int a = 0; a < m; ++a) {
            for (int x : d.tests[a]) {
                edge_sample.push_back(x);
                edge_test.push_back(a);
                sample_edges[x].push_back(edges);
                test_edges[a].push_back(edges);
                ++edges;
            }
        }
    }
};

// Per-directed-edge probability pairs plus per-sample priors. Pairs are kept
// normalized; exact zeros encode hard evidence.
struct MessageState {
    std::vector<double> s2t0, s2t1; // sample-to-test messages
    std::vector<double> t2s0, t2s1; // test-to-sample messages
    std::vector<double> priors;     // per-sample prior probability of infection
};

enum class InitMode { prior, truth };

enum class Schedule { random_sequential, parallel };

struct BPConfig {
    long long max_updates = 0;      // 0: default of 100 * incidence count
    double convergence_tol = 1e-8;  // early exit on max message change per sweep
    Schedule schedule = Schedule::random_sequential;
};

struct BPDiagnostics {
    std::vector<double> sweep_mean_marginal;
    std::vector<long long> sweep_update_count; // updates done at each sweep end
    std::vector<double> sweep_max_change;      // max message change within the sweep
    double final_max_change = std::numeric_limits<double>::infinity();
    long long updates_done = 0;
    bool converged = false;

    // columns: update,max_change
    void write_csv(std::ostream& os) const {
        os << "update,max_change\n";
        for (std::size_t i = 0; i < sweep_max_change.size(); ++i)
            os << sweep_update_count[i] << ',' << sweep_max_change[i] << '\n';
    }
};

// columns: round,mean_deviation (for the parallel-schedule diagnostic)
inline void write_parallel_diag_csv(const std::vector<double>& deviations, std::ostream& os) {
    os << "round,mean_deviation\n";
    for (std::size_t r = 0; r < deviations.size(); ++r)
        os << (r + 1) << ',' << deviations[r] << '\n';
}

using MarginalVector = std::vector<double>;
using Classification = std::vector<std::uint8_t>;

namespace detail {

// Running log-product over a set of factors, with exact zeros counted
// separately so they can be divided out again.
struct LogProduct {
    double sum = 0.0;
    int zeros = 0;

    void add(double v) {
        if (v > 0.0) sum += std::log(v); else ++zeros;
    }
    void remove(double v) {
        if (v > 0.0) sum -= std::log(v); else --zeros;
    }
    // product of all factors except one with value `excl`
    double value_excluding(double excl) const {
        const int z = zeros - (excl > 0.0 ? 0 : 1);
        if (z > 0) return 0.0;
        return std::exp(sum - (excl > 0.0 ? std::log(excl) : 0.0));
    }
    bool zero_excluding(double excl) const { return zeros - (excl > 0.0 ? 0 : 1) > 0; }
    double log_excluding(double excl) const { return sum - (excl > 0.0 ? std::log(excl) : 0.0); }
};

inline std::pair<double, double> normalize_pair(double u0, double u1, const char* where) {
    const double s = u0 + u1;
    if (!(s > 0.0))
        throw contradictory_evidence(std::string(where) + ": both message weights vanish");
    return {u0 / s, u1 / s};
}

inline std::pair<double, double> normalize_log_pair(double l0, double l1, const char* where) {
    if (l0 == kNegInf && l1 == kNegInf)
        throw contradictory_evidence(std::string(where) + ": both message weights vanish");
    const double mx = std::max(l0, l1);
    const double e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

} // namespace detail

// Channel pair for a test-to-sample message given the product Pi of the other
// members' healthy probabilities (Eqs. for the noisy OR channel).
inline std::pair<double, double> channel_message(bool positive, double pi, const Scenario& sc) {
    double u0, u1;
    if (positive) {
        u0 = sc.q + (1.0 - sc.p - sc.q) * pi;
        u1 = sc.q;
    } else {
        u0 = 1.0 - sc.q + (sc.p + sc.q - 1.0) * pi;
        u1 = 1.0 - sc.q;
    }
    u0 = std::max(u0, 0.0);
    return detail::normalize_pair(u0, u1, "channel_message");
}

// One-shot recomputation of a sample-to-test message from the current state.
inline std::pair<double, double> update_sample_to_test(const MessageState& st, const BpGraph& g, int edge) {
    const int x = g.edge_sample[edge];
    double l0 = detail::safe_log(1.0 - st.priors[x]);
    double l1 = detail::safe_log(st.priors[x]);
    for (int e : g.sample_edges[x]) {
        if (e == edge) continue;
        l0 += detail::safe_log(st.t2s0[e]);
        l1 += detail::safe_log(st.t2s1[e]);
    }
    return detail::normalize_log_pair(l0, l1, "update_sample_to_test");
}

// One-shot recomputation of a test-to-sample message from the current state.
inline std::pair<double, double> update_test_to_sample(const MessageState& st, const BpGraph& g,
                                                       int edge, bool positive, const Scenario& sc) {
    const int a = g.edge_test[edge];
    double lpi = 0.0;
    bool zero = false;
    for (int e : g.test_edges[a]) {
        if (e == edge) continue;
        if (st.s2t0[e] > 0.0) lpi += std::log(st.s2t0[e]); else zero = true;
    }
    return channel_message(positive, zero ? 0.0 : std::exp(lpi), sc);
}

// Message-passing engine with O(1) amortized single-message updates: per-test
// and per-sample log-product caches are maintained incrementally and rebuilt
// once per sweep to contain drift.
class BpEngine {
public:
    BpEngine(const PoolDesign& design, const TestResults& results,
             std::vector<double> priors, const Scenario& sc)
        : graph_(design), results_(results), sc_(sc) {
        if (results_.m() != design.m)
            throw std::invalid_argument("BpEngine: results length mismatch");
        if (static_cast<int>(priors.size()) != design.n)
            throw std::invalid_argument("BpEngine: priors length mismatch");
        state_.priors = std::move(priors);
        state_.s2t0.assign(graph_.edges, 0.0);
        state_.s2t1.assign(graph_.edges, 0.0);
        state_.t2s0.assign(graph_.edges, 0.0);
        state_.t2s1.assign(graph_.edges, 0.0);
    }

    void init(InitMode mode, const GroundTruth* truth = nullptr) {
        if (mode == InitMode::truth && truth == nullptr)
            throw std::invalid_argument("BpEngine: truth init requires a ground truth");
        for (int e = 0; e < graph_.edges; ++e) {
            const int x = graph_.edge_sample[e];
            double mu1;
            if (mode == InitMode::prior) {
                mu1 = state_.priors[x];
                if (!(mu1 > 0.0 && mu1 < 1.0))
                    throw std::invalid_argument("BpEngine: prior init needs priors in (0,1)");
            } else {
                mu1 = truth->status[x] ? 1.0 - 1e-12 : 1e-12;
            }
            state_.s2t0[e] = 1.0 - mu1;
            state_.s2t1[e] = mu1;
        }
        rebuild_test_caches();
        for (int e = 0; e < graph_.edges; ++e) {
            auto [v0, v1] = t2s_from_cache(e);
            state_.t2s0[e] = v0;
            state_.t2s1[e] = v1;
        }
        rebuild_sample_caches();
    }

    // Applies one single-message update; returns the max absolute change.
    double update_s2t(int e) {
        const int x = graph_.edge_sample[e];
        auto [v0, v1] = s2t_from_cache(e, x);
        const double change = std::max(std::abs(v0 - state_.s2t0[e]), std::abs(v1 - state_.s2t1[e]));
        const int a = graph_.edge_test[e];
        test_prod_[a].remove(state_.s2t0[e]);
        state_.s2t0[e] = v0;
        state_.s2t1[e] = v1;
        test_prod_[a].add(v0);
        return change;
    }

    double update_t2s(int e) {
        auto [v0, v1] = t2s_from_cache(e);
        const double change = std::max(std::abs(v0 - state_.t2s0[e]), std::abs(v1 - state_.t2s1[e]));
        const int x = graph_.edge_sample[e];
        sample_prod0_[x].remove(state_.t2s0[e]);
        sample_prod1_[x].remove(state_.t2s1[e]);
        state_.t2s0[e] = v0;
        state_.t2s1[e] = v1;
        sample_prod0_[x].add(v0);
        sample_prod1_[x].add(v1);
        return change;
    }

    double marginal(int x) const {
        double l0 = detail::safe_log(1.0 - state_.priors[x]);
        double l1 = detail::safe_log(state_.priors[x]);
        l0 = (sample_prod0_[x].zeros > 0 || l0 == kNegInf) ? kNegInf : l0 + sample_prod0_[x].sum;
        l1 = (sample_prod1_[x].zeros > 0 || l1 == kNegInf) ? kNegInf : l1 + sample_prod1_[x].sum;
        return detail::normalize_log_pair(l0, l1, "marginal").second;
    }

    MarginalVector marginals() const {
        MarginalVector mv(graph_.n);
        for (int x = 0; x < graph_.n; ++x)
            mv[x] = marginal(x);
        return mv;
    }

    void rebuild_caches() {
        rebuild_test_caches();
        rebuild_sample_caches();
    }

    const MessageState& state() const { return state_; }
    MessageState& state() { return state_; }
    const BpGraph& graph() const { return graph_; }
    const Scenario& scenario() const { return sc_; }
    const TestResults& results() const { return results_; }

private:
    std::pair<double, double> s2t_from_cache(int e, int x) const {
        double l0 = detail::safe_log(1.0 - state_.priors[x]);
        double l1 = detail::safe_log(state_.priors[x]);
        if (l0 != kNegInf)
            l0 = sample_prod0_[x].zero_excluding(state_.t2s0[e])
                     ? kNegInf
                     : l0 + sample_prod0_[x].log_excluding(state_.t2s0[e]);
        if (l1 != kNegInf)
            l1 = sample_prod1_[x].zero_excluding(state_.t2s1[e])
                     ? kNegInf
                     : l1 + sample_prod1_[x].log_excluding(state_.t2s1[e]);
        return detail::normalize_log_pair(l0, l1, "update_sample_to_test");
    }

    std::pair<double, double> t2s_from_cache(int e) const {
        const int a = graph_.edge_test[e];
        const double pi = test_prod_[a].value_excluding(state_.s2t0[e]);
        return channel_message(results_.outcomes[a] != 0, pi, sc_);
    }

    void rebuild_test_caches() {
        test_prod_.assign(graph_.m, {});
        for (int e = 0; e < graph_.edges; ++e)
            test_prod_[graph_.edge_test[e]].add(state_.s2t0[e]);
    }

    void rebuild_sample_caches() {
        sample_prod0_.assign(graph_.n, {});
        sample_prod1_.assign(graph_.n, {});
        for (int e = 0; e < graph_.edges; ++e) {
            sample_prod0_[graph_.edge_sample[e]].add(state_.t2s0[e]);
            sample_prod1_[graph_.edge_sample[e]].add(state_.t2s1[e]);
        }
    }

    BpGraph graph_;
    TestResults results_;
    Scenario sc_;
    MessageState state_;
    std::vector<detail::LogProduct> test_prod_, sample_prod0_, sample_prod1_;
};

inline MessageState init_messages(const PoolDesign& design, const TestResults& results,
                                  const std::vector<double>& priors, const Scenario& sc,
                                  InitMode mode, const GroundTruth* truth = nullptr) {
    BpEngine eng(design, results, priors, sc);
    eng.init(mode, truth);
    return eng.state();
}

struct BPResult {
    MessageState state;
    MarginalVector marginals;
    BPDiagnostics diagnostics;
};

// Random-sequential fixed point iteration: each step picks a uniformly random
// incidence and a fair coin for the direction, then applies that update.
inline BPResult run_bp(const PoolDesign& design, const TestResults& results,
                       const std::vector<double>& priors, const Scenario& sc,
                       const BPConfig& config, RngStream& rng,
                       InitMode mode = InitMode::prior, const GroundTruth* truth = nullptr) {
    BpEngine eng(design, results, priors, sc);
    eng.init(mode, truth);

    BPResult out;
    const long long edges = eng.graph().edges;
    if (edges == 0) {
        out.state = eng.state();
        out.marginals = priors;
        out.diagnostics.final_max_change = 0.0;
        out.diagnostics.converged = true;
        return out;
    }

    long long max_updates = config.max_updates > 0 ? config.max_updates : 100 * edges;
    max_updates = std::max(max_updates, edges); // every message should get a chance

    double block_max = 0.0;
    long long t = 0;
    while (t < max_updates) {
        const int e = static_cast<int>(rng.below(edges));
        const double change = rng.bernoulli(0.5) ? eng.update_s2t(e) : eng.update_t2s(e);
        block_max = std::max(block_max, change);
        ++t;
        if (t % edges == 0) { // one sweep's worth of updates
            eng.rebuild_caches();
            double mean = 0.0;
            for (int x = 0; x < eng.graph().n; ++x)
                mean += eng.marginal(x);
            out.diagnostics.sweep_mean_marginal.push_back(mean / eng.graph().n);
            out.diagnostics.sweep_update_count.push_back(t);
            out.diagnostics.sweep_max_change.push_back(block_max);
            if (block_max < config.convergence_tol) {
                // a random sweep can miss stale messages; confirm with one
                // deterministic full pass before declaring convergence
                double residual = 0.0;
                for (int ee = 0; ee < edges; ++ee) {
                    residual = std::max(residual, eng.update_s2t(ee));
                    residual = std::max(residual, eng.update_t2s(ee));
                }
                t += 2 * edges;
                eng.rebuild_caches();
                block_max = residual;
                if (residual < config.convergence_tol) {
                    out.diagnostics.final_max_change = residual;
                    out.diagnostics.converged = true;
                    break;
                }
            }
            out.diagnostics.final_max_change = block_max;
            block_max = 0.0;
        }
    }
    out.diagnostics.updates_done = t;
    eng.rebuild_caches();
    out.marginals = eng.marginals();
    out.state = eng.state();
    return out;
}

// Synchronous parallel schedule, kept as a diagnostic: returns the per-round
// mean deviation of the sample-to-test messages from the prior. On loopy
// designs the series oscillates between odd and even rounds.
inline std::vector<double> run_bp_parallel_diagnostic(const PoolDesign& design,
                                                      const TestResults& results,
                                                      const std::vector<double>& priors,
                                                      const Scenario& sc, int rounds) {
    BpGraph g(design);
    MessageState st;
    st.priors = priors;
    st.s2t0.resize(g.edges);
    st.s2t1.resize(g.edges);
    st.t2s0.assign(g.edges, 0.5);
    st.t2s1.assign(g.edges, 0.5);
    for (int e = 0; e < g.edges; ++e) {
        st.s2t1[e] = priors[g.edge_sample[e]];
        st.s2t0[e] = 1.0 - st.s2t1[e];
    }

    std::vector<double> deviations;
    deviations.reserve(rounds);
    std::vector<double> new0(g.edges), new1(g.edges);
    for (int r = 0; r < rounds; ++r) {
        for (int e = 0; e < g.edges; ++e) {
            auto [v0, v1] = update_test_to_sample(st, g, e, results.outcomes[g.edge_test[e]] != 0, sc);
            new0[e] = v0;
            new1[e] = v1;
        }
        st.t2s0 = new0;
        st.t2s1 = new1;
        for (int e = 0; e < g.edges; ++e) {
            auto [v0, v1] = update_sample_to_test(st, g, e);
            new0[e] = v0;
            new1[e] = v1;
        }
        st.s2t0 = new0;
        st.s2t1 = new1;

        double dev = 0.0;
        for (int e = 0; e < g.edges; ++e)
            dev += st.s2t1[e] - priors[g.edge_sample[e]];
        deviations.push_back(g.edges > 0 ? dev / g.edges : 0.0);
    }
    return deviations;
}

// Bethe free energy. The variable term carries the prior weight inside the
// sum over states, which makes the functional vanish at m = 0 and agree with
// the exact log-normalizer on trees. `prior_free_variable_term` switches to
// the unweighted variant for diagnostics.
inline double bethe_free_energy(const MessageState& st, const PoolDesign& design,
                                const TestResults& results, const Scenario& sc,
                                bool prior_free_variable_term = false) {
    BpGraph g(design);
    double total = 0.0;

    for (int x = 0; x < g.n; ++x) {
        double l0 = prior_free_variable_term ? 0.0 : detail::safe_log(1.0 - st.priors[x]);
        double l1 = prior_free_variable_term ? 0.0 : detail::safe_log(st.priors[x]);
        for (int e : g.sample_edges[x]) {
            l0 += detail::safe_log(st.t2s0[e]);
            l1 += detail::safe_log(st.t2s1[e]);
        }
        const double mx = std::max(l0, l1);
        total += mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
    }

    for (int a = 0; a < g.m; ++a) {
        double lpi = 0.0;
        bool zero = false;
        for (int e : g.test_edges[a]) {
            if (st.s2t0[e] > 0.0) lpi += std::log(st.s2t0[e]); else zero = true;
        }
        const double pi = zero ? 0.0 : std::exp(lpi);
        double u;
        if (results.outcomes[a])
            u = sc.q + (1.0 - sc.p - sc.q) * pi;
        else
            u = 1.0 - sc.q + (sc.p + sc.q - 1.0) * pi;
        total += detail::safe_log(std::max(u, 0.0));
    }

    for (int e = 0; e < g.edges; ++e)
        total -= detail::safe_log(st.s2t0[e] * st.t2s0[e] + st.s2t1[e] * st.t2s1[e]);

    return total;
}

namespace detail {
inline double xlogy(double w, double y) { return w > 0.0 ? w * std::log(y) : 0.0; }
} // namespace detail

// Message-based entropy estimate (nats): Bethe term minus the posterior
// expectation of the log prior weight and of the per-test log channel factor.
inline double entropy_estimate(const MessageState& st, const PoolDesign& design,
                               const TestResults& results, const Scenario& sc) {
    BpGraph g(design);
    double h = bethe_free_energy(st, design, results, sc);

    for (int x = 0; x < g.n; ++x) {
        double l0 = detail::safe_log(1.0 - st.priors[x]);
        double l1 = detail::safe_log(st.priors[x]);
        for (int e : g.sample_edges[x]) {
            l0 += detail::safe_log(st.t2s0[e]);
            l1 += detail::safe_log(st.t2s1[e]);
        }
        auto [m0, m1] = detail::normalize_log_pair(l0, l1, "entropy_estimate");
        h -= detail::xlogy(m1, st.priors[x]) + detail::xlogy(m0, 1.0 - st.priors[x]);
    }

    for (int a = 0; a < g.m; ++a) {
        double lpi = 0.0;
        bool zero = false;
        for (int e : g.test_edges[a]) {
            if (st.s2t0[e] > 0.0) lpi += std::log(st.s2t0[e]); else zero = true;
        }
        const double pi = zero ? 0.0 : std::exp(lpi);
        if (results.outcomes[a]) {
            const double denom = sc.q + (1.0 - sc.p - sc.q) * pi;
            if (denom > 0.0) {
                h -= detail::xlogy((1.0 - sc.p) * pi / denom, 1.0 - sc.p);
                h -= detail::xlogy(sc.q * (1.0 - pi) / denom, sc.q);
            }
        } else {
            const double denom = 1.0 - sc.q + (sc.p + sc.q - 1.0) * pi;
            if (denom > 0.0) {
                h -= detail::xlogy(sc.p * pi / denom, sc.p);
                h -= detail::xlogy((1.0 - sc.q) * (1.0 - pi) / denom, 1.0 - sc.q);
            }
        }
    }
    return h;
}

// Definite defectives: infected iff every test of the sample is positive and
// some positive test exists in which every other member is cleared by a
// negative test. Never produces false positives on noiseless data.
inline Classification dd_classify(const PoolDesign& design, const TestResults& results) {
    Classification out(design.n, 0);
    std::vector<std::uint8_t> cleared(design.n, 0);
    for (int a = 0; a < design.m; ++a)
        if (!results.outcomes[a])
            for (int x : design.tests[a])
                cleared[x] = 1;

    for (int x = 0; x < design.n; ++x) {
        if (design.samples[x].empty()) continue;
        bool all_positive = true;
        for (int a : design.samples[x])
            if (!results.outcomes[a]) { all_positive = false; break; }
        if (!all_positive) continue;
        for (int a : design.samples[x]) {
            bool others_cleared = true;
            for (int y : design.tests[a])
                if (y != x && !cleared[y]) { others_cleared = false; break; }
            if (others_cleared) {
                out[x] = 1;
                break;
            }
        }
    }
    return out;
}

// Strict-inequality thresholding; exact ties classify as healthy.
inline Classification threshold_classify(const MarginalVector& marginals, double threshold = 0.5) {
    Classification out(marginals.size());
    for (std::size_t i = 0; i < marginals.size(); ++i)
        out[i] = marginals[i] > threshold ? 1 : 0;
    return out;
}

} // namespace gtbp
