#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtbp/bp.hpp"
#include "gtbp/designs.hpp"
#include "gtbp/model.hpp"
#include "gtbp/rng.hpp"

namespace gtbp {

enum class NoiseLevel { noiseless, moderate, high, custom };

inline NoiseLevel classify_noise(const Scenario& sc) {
    auto near = [](double a, double b) { return std::abs(a - b) < 1e-12; };
    if (near(sc.p, 1.0) && near(sc.q, 1.0)) return NoiseLevel::noiseless;
    if (near(sc.p, 0.99) && near(sc.q, 0.98)) return NoiseLevel::moderate;
    if (near(sc.p, 0.95) && near(sc.q, 0.95)) return NoiseLevel::high;
    return NoiseLevel::custom;
}

enum class CombineRule { and_infected, or_infected, majority };

// Stage-1/stage-2 sizing constants found via optimization, per algorithm,
// prior and noise level. c sizes the second-stage biregular design as
// m' = round(c * lambda' * n' * log(n')).
struct AbpParams {
    double m1_over_n = 0.0;
    double c = 0.0;
};

namespace detail {

inline int lambda_slot(double lambda) {
    static constexpr double kPriors[4] = {0.005, 0.01, 0.05, 0.1};
    for (int i = 0; i < 4; ++i)
        if (std::abs(lambda - kPriors[i]) < 1e-9) return i;
    return -1;
}

inline int noise_slot(NoiseLevel lvl) {
    switch (lvl) {
        case NoiseLevel::noiseless: return 0;
        case NoiseLevel::moderate: return 1;
        case NoiseLevel::high: return 2;
        default: return -1;
    }
}

} // namespace detail

constexpr double kNa = -1.0;

// m1/n for the single-pass BP baselines, [prior][noise]
inline std::optional<double> bp_individual_m1_preset(double lambda, NoiseLevel lvl) {
    static constexpr double tbl[4][3] = {
        {0.05, 0.09, 0.11}, {0.08, 0.12, 0.16}, {0.23, 0.37, 0.45}, {0.3, 0.7, 0.34}};
    const int i = detail::lambda_slot(lambda), j = detail::noise_slot(lvl);
    if (i < 0 || j < 0) return std::nullopt;
    return tbl[i][j];
}

inline std::optional<double> bp_inf_dorfman_m1_preset(double lambda, NoiseLevel lvl) {
    static constexpr double tbl[4][3] = {
        {0.045, 0.05, 0.045}, {0.075, 0.075, 0.1}, {0.28, 0.24, 0.16}, {0.125, 0.1, 0.1}};
    const int i = detail::lambda_slot(lambda), j = detail::noise_slot(lvl);
    if (i < 0 || j < 0) return std::nullopt;
    return tbl[i][j];
}

inline std::optional<AbpParams> abp_preset(int variant, double lambda, NoiseLevel lvl) {
    // [prior][noise] pairs (m1/n, c); kNa marks unsupported combinations
    static constexpr double v1[4][3][2] = {
        {{0.035, 1.0}, {0.05, 2.0}, {0.05, 2.0}},
        {{0.075, 1.0}, {0.085, 2.0}, {0.1, 2.0}},
        {{0.28, 1.0}, {0.18, 2.0}, {0.16, 2.0}},
        {{0.125, 0.25}, {0.15, 4.0}, {0.1, 2.0}}};
    static constexpr double v2[4][3][2] = {
        {{kNa, kNa}, {0.075, 8.0}, {0.02, 8.0}},
        {{kNa, kNa}, {0.12, 8.0}, {0.03, 8.0}},
        {{kNa, kNa}, {0.4, 2.0}, {0.36, 2.0}},
        {{kNa, kNa}, {0.5, 2.0}, {0.325, 2.0}}};
    static constexpr double v3[4][3][2] = {
        {{kNa, kNa}, {0.075, 8.0}, {0.02, 8.0}},
        {{kNa, kNa}, {0.085, 8.0}, {0.03, 8.0}},
        {{kNa, kNa}, {0.4, 2.0}, {0.4, 2.0}},
        {{kNa, kNa}, {0.55, 2.0}, {0.5, 2.0}}};
    const int i = detail::lambda_slot(lambda), j = detail::noise_slot(lvl);
    if (i < 0 || j < 0 || variant < 1 || variant > 3) return std::nullopt;
    const double* cell = variant == 1 ? v1[i][j] : variant == 2 ? v2[i][j] : v3[i][j];
    if (cell[0] == kNa) return std::nullopt;
    return AbpParams{cell[0], cell[1]};
}

// Disjoint split of the samples after a BP stage.
struct RiskPartition {
    std::vector<int> decided_healthy;
    std::vector<int> decided_infected;
    std::vector<int> low_risk;
    std::vector<int> high_risk;
};

// Thresholds: <= 0.1% healthy, >= 99.9% infected, < 12.4% low risk.
inline RiskPartition partition_by_marginal(const MarginalVector& marginals,
                                           const std::vector<int>* subset = nullptr) {
    RiskPartition part;
    auto place = [&](int x) {
        const double mu = marginals[x];
        if (mu <= 0.001)
            part.decided_healthy.push_back(x);
        else if (mu >= 0.999)
            part.decided_infected.push_back(x);
        else if (mu < 0.124)
            part.low_risk.push_back(x);
        else
            part.high_risk.push_back(x);
    };
    if (subset) {
        for (int x : *subset) place(x);
    } else {
        for (int x = 0; x < static_cast<int>(marginals.size()); ++x) place(x);
    }
    return part;
}

struct StageRecord {
    int stage = 1;
    std::string label;
    std::vector<std::vector<int>> pools;
    std::vector<std::uint8_t> outcomes;

    int tests() const { return static_cast<int>(pools.size()); }
};

struct PipelineTrace {
    std::string name;
    int n = 0;
    std::vector<StageRecord> stages;
    Classification classification;
    std::vector<int> decided_stage; // per sample, 1-based stage index

    int total_tests() const {
        int t = 0;
        for (const auto& s : stages) t += s.tests();
        return t;
    }

    int max_pool_size() const {
        std::size_t g = 0;
        for (const auto& s : stages)
            for (const auto& p : s.pools) g = std::max(g, p.size());
        return static_cast<int>(g);
    }

    // number of tests each sample participates in, over all stages
    std::vector<int> sample_degrees() const {
        std::vector<int> deg(n, 0);
        for (const auto& s : stages)
            for (const auto& p : s.pools)
                for (int x : p) ++deg[x];
        return deg;
    }

    void write(std::ostream& os) const {
        os << "pipeline " << name << " n=" << n << " tests=" << total_tests() << '\n';
        for (const auto& s : stages) {
            os << "stage " << s.stage << " label=" << s.label << " tests=" << s.tests() << '\n';
            for (std::size_t i = 0; i < s.pools.size(); ++i) {
                os << "  pool";
                for (int x : s.pools[i]) os << ' ' << x;
                os << " -> " << int(s.outcomes[i]) << '\n';
            }
        }
        os << "classification";
        for (auto c : classification) os << ' ' << int(c);
        os << '\n' << "decided_stage";
        for (int d : decided_stage) os << ' ' << d;
        os << '\n';
    }
};

namespace detail {

// Runs the given pools through the channel and records them in the trace.
inline const StageRecord& conduct(PipelineTrace& trace, int stage, const std::string& label,
                                  std::vector<std::vector<int>> pools, const GroundTruth& truth,
                                  const Scenario& sc, RngStream& rng) {
    PoolDesign d = PoolDesign::from_tests(trace.n, std::move(pools));
    TestResults r = run_tests(d, truth, sc, rng);
    StageRecord rec;
    rec.stage = stage;
    rec.label = label;
    rec.pools = std::move(d.tests);
    rec.outcomes = std::move(r.outcomes);
    trace.stages.push_back(std::move(rec));
    return trace.stages.back();
}

inline std::vector<std::vector<int>> singleton_pools(const std::vector<int>& ids) {
    std::vector<std::vector<int>> pools;
    pools.reserve(ids.size());
    for (int x : ids) pools.push_back({x});
    return pools;
}

inline std::vector<double> clamp_priors(const MarginalVector& marginals) {
    std::vector<double> priors(marginals.size());
    for (std::size_t i = 0; i < marginals.size(); ++i)
        priors[i] = std::clamp(marginals[i], 1e-6, 1.0 - 1e-6);
    return priors;
}

// In a noiseless channel the only certain verdicts are structural: every
// member of a negative test is healthy, and the sole uncleared member of a
// positive test is infected. Snap those marginals to 0/1 and keep everything
// else strictly inside the decision thresholds, so an overconfident loopy-BP
// estimate is retested instead of trusted.
inline void snap_noiseless_marginals(const PoolDesign& design, const TestResults& results,
                                     const Scenario& sc, MarginalVector& marginals) {
    if (sc.p != 1.0 || sc.q != 1.0) return;
    const Classification forced = dd_classify(design, results);
    std::vector<char> cleared(marginals.size(), 0);
    for (int a = 0; a < design.m; ++a)
        if (!results.outcomes[a])
            for (int x : design.tests[a]) cleared[x] = 1;
    for (std::size_t x = 0; x < marginals.size(); ++x) {
        if (cleared[x])
            marginals[x] = 0.0;
        else if (forced[x])
            marginals[x] = 1.0;
        else
            marginals[x] = std::clamp(marginals[x], 0.0015, 0.9985);
    }
}

// Runs BP on a biregular stage-1 design; returns the marginals.
struct Stage1Result {
    PoolDesign design;
    TestResults results;
    MarginalVector marginals;
};

inline Stage1Result run_stage1_bp(PipelineTrace& trace, int n, double m1_over_n,
                                  const GroundTruth& truth, const Scenario& sc,
                                  const SeedCtx& ctx) {
    Stage1Result out;
    const int m1 = std::max(1, static_cast<int>(std::lround(m1_over_n * n)));
    const DegreePair deg = choose_degrees(sc.lambda, m1, n);
    RngStream design_rng = ctx.stream(1, Purpose::design);
    out.design = build_biregular(n, m1, deg, design_rng);
    RngStream outcome_rng = ctx.stream(1, Purpose::outcomes);
    out.results = run_tests(out.design, truth, sc, outcome_rng);

    StageRecord rec;
    rec.stage = 1;
    rec.label = "biregular";
    rec.pools = out.design.tests;
    rec.outcomes = out.results.outcomes;
    trace.stages.push_back(std::move(rec));

    RngStream bp_rng = ctx.stream(1, Purpose::bp);
    std::vector<double> priors(n, sc.lambda);
    out.marginals = run_bp(out.design, out.results, priors, sc, {}, bp_rng).marginals;
    snap_noiseless_marginals(out.design, out.results, sc, out.marginals);
    return out;
}

} // namespace detail

// One informative Dorfman procedure on the candidate set: a pooled round, then
// individual retests of every member of a positive pool. A negative pool
// clears all its members.
struct DorfmanVerdicts {
    std::vector<int> ids;
    Classification verdict;          // aligned with ids
    std::vector<int> decided_stage;  // aligned with ids
};

inline DorfmanVerdicts run_informative_dorfman(PipelineTrace& trace, const std::vector<int>& ids,
                                               const MarginalVector& marginals, const Scenario& sc,
                                               const GroundTruth& truth, int pooled_stage,
                                               int individual_stage, const std::string& label,
                                               RngStream& pool_rng, RngStream& indiv_rng) {
    DorfmanVerdicts out;
    out.ids = ids;
    out.verdict.assign(ids.size(), 0);
    out.decided_stage.assign(ids.size(), pooled_stage);
    if (ids.empty()) return out;

    std::vector<int> pos_in_ids(trace.n, -1);
    for (std::size_t i = 0; i < ids.size(); ++i)
        pos_in_ids[ids[i]] = static_cast<int>(i);

    const DorfmanPlan plan = informative_dorfman_plan(ids, marginals, sc);

    std::vector<std::vector<int>> round1 = plan.pools;
    for (int x : plan.individual) round1.push_back({x});
    const StageRecord& rec = detail::conduct(trace, pooled_stage, label + "-pools",
                                             std::move(round1), truth, sc, pool_rng);

    std::vector<int> retest;
    for (std::size_t i = 0; i < rec.pools.size(); ++i) {
        const bool positive = rec.outcomes[i] != 0;
        if (i < plan.pools.size()) {
            if (positive)
                for (int x : rec.pools[i]) retest.push_back(x);
            // negative pooled test: all members stay classified healthy
        } else {
            // plan-level individual test decides directly
            const int x = rec.pools[i][0];
            out.verdict[pos_in_ids[x]] = positive ? 1 : 0;
        }
    }

    if (!retest.empty()) {
        const StageRecord& rec2 = detail::conduct(trace, individual_stage, label + "-individual",
                                                  detail::singleton_pools(retest), truth, sc, indiv_rng);
        for (std::size_t i = 0; i < rec2.pools.size(); ++i) {
            const int x = rec2.pools[i][0];
            out.verdict[pos_in_ids[x]] = rec2.outcomes[i] ? 1 : 0;
            out.decided_stage[pos_in_ids[x]] = individual_stage;
        }
    }
    return out;
}

// Second-stage biregular design on the low risk group, with the stage-1
// marginals acting as per-sample priors. Samples whose new marginals stay
// between the thresholds are forwarded to individual testing.
struct Stage2LowResult {
    std::vector<int> decided_healthy;
    std::vector<int> decided_infected;
    std::vector<int> unresolved;
    int tests_used = 0;
};

inline Stage2LowResult stage2_low_risk(PipelineTrace& trace, const std::vector<int>& low_ids,
                                       const MarginalVector& stage1_marginals, double c,
                                       const Scenario& sc, const GroundTruth& truth,
                                       const SeedCtx& ctx) {
    Stage2LowResult out;
    if (low_ids.empty()) return out;

    const int np = static_cast<int>(low_ids.size());
    double lambda_eff = 0.0;
    for (int x : low_ids) lambda_eff += stage1_marginals[x];
    lambda_eff = std::clamp(lambda_eff / np, 1e-9, 1.0 - 1e-9);

    const int mp = static_cast<int>(std::lround(c * lambda_eff * np * std::log(static_cast<double>(np))));
    DegreePair deg{};
    bool feasible = mp >= 1;
    if (feasible) {
        deg.gamma = std::clamp(static_cast<int>(std::lround(std::log(2.0) / lambda_eff)), 1,
                               std::numeric_limits<int>::max());
        feasible = deg.gamma <= np; // a group smaller than one pool is tested individually
    }
    if (!feasible) {
        out.unresolved = low_ids;
        return out;
    }
    deg = choose_degrees(lambda_eff, mp, np);

    // local index space for the low-risk subgraph
    RngStream design_rng = ctx.stream(2, Purpose::design);
    PoolDesign local = build_biregular(np, mp, deg, design_rng);
    std::vector<std::vector<int>> pools(local.m);
    for (int a = 0; a < local.m; ++a)
        for (int j : local.tests[a]) pools[a].push_back(low_ids[j]);

    RngStream outcome_rng = ctx.stream(2, Purpose::outcomes);
    const StageRecord& rec = detail::conduct(trace, 2, "low-risk-biregular", pools, truth, sc, outcome_rng);
    out.tests_used = rec.tests();
    TestResults results{rec.outcomes};

    std::vector<double> priors(np);
    for (int j = 0; j < np; ++j)
        priors[j] = std::clamp(stage1_marginals[low_ids[j]], 1e-6, 1.0 - 1e-6);

    RngStream bp_rng = ctx.stream(2, Purpose::bp);
    MarginalVector marg = run_bp(local, results, priors, sc, {}, bp_rng).marginals;
    detail::snap_noiseless_marginals(local, results, sc, marg);

    for (int j = 0; j < np; ++j) {
        if (marg[j] <= 0.001)
            out.decided_healthy.push_back(low_ids[j]);
        else if (marg[j] >= 0.999)
            out.decided_infected.push_back(low_ids[j]);
        else
            out.unresolved.push_back(low_ids[j]);
    }
    return out;
}

// Replicated informative Dorfman on the high risk group. r independent
// procedures; verdicts are combined by the given rule.
struct Stage2HighResult {
    std::vector<int> ids;
    Classification verdict;
    std::vector<int> decided_stage;
    int tests_used = 0;
};

inline Stage2HighResult stage2_high_risk(PipelineTrace& trace, const std::vector<int>& high_ids,
                                         const MarginalVector& stage1_marginals, const Scenario& sc,
                                         int replication, CombineRule rule, const GroundTruth& truth,
                                         const SeedCtx& ctx) {
    if (replication < 1 || replication > 3)
        throw std::invalid_argument("stage2_high_risk: replication must be 1, 2 or 3");
    Stage2HighResult out;
    out.ids = high_ids;
    out.verdict.assign(high_ids.size(), 0);
    out.decided_stage.assign(high_ids.size(), 2);
    if (high_ids.empty()) return out;

    const int before = trace.total_tests();
    std::vector<DorfmanVerdicts> runs;
    for (int i = 0; i < replication; ++i) {
        RngStream pool_rng = ctx.stream(200 + i, Purpose::outcomes);
        RngStream indiv_rng = ctx.stream(300 + i, Purpose::outcomes);
        runs.push_back(run_informative_dorfman(trace, high_ids, stage1_marginals, sc, truth, 2, 3,
                                               "high-risk-dorfman" + std::to_string(i + 1),
                                               pool_rng, indiv_rng));
    }
    out.tests_used = trace.total_tests() - before;

    for (std::size_t j = 0; j < high_ids.size(); ++j) {
        int votes = 0;
        int stage = 2;
        for (const auto& r : runs) {
            votes += r.verdict[j];
            stage = std::max(stage, r.decided_stage[j]);
        }
        bool infected;
        if (replication == 1)
            infected = votes > 0;
        else if (replication == 2)
            infected = rule == CombineRule::or_infected ? votes > 0 : votes == 2;
        else
            infected = votes >= 2;
        out.verdict[j] = infected ? 1 : 0;
        out.decided_stage[j] = stage;
    }
    return out;
}

// The full adaptive pipeline: biregular + BP, risk partition, second-stage
// biregular for low risk and replicated informative Dorfman for high risk,
// individual cleanup.
inline PipelineTrace run_adaptive_bp(int n, const Scenario& sc, int variant,
                                     const GroundTruth& truth, const SeedCtx& ctx,
                                     CombineRule rule = CombineRule::and_infected,
                                     std::optional<AbpParams> params_override = std::nullopt) {
    const NoiseLevel lvl = classify_noise(sc);
    std::optional<AbpParams> params =
        params_override ? params_override : abp_preset(variant, sc.lambda, lvl);
    if (!params)
        throw std::invalid_argument("run_adaptive_bp: no parameters for this variant/prior/noise");

    PipelineTrace trace;
    trace.name = "abp" + std::to_string(variant);
    trace.n = n;
    trace.classification.assign(n, 0);
    trace.decided_stage.assign(n, 0);

    const auto s1 = detail::run_stage1_bp(trace, n, params->m1_over_n, truth, sc, ctx);
    const RiskPartition part = partition_by_marginal(s1.marginals);

    for (int x : part.decided_healthy) trace.decided_stage[x] = 1;
    for (int x : part.decided_infected) {
        trace.classification[x] = 1;
        trace.decided_stage[x] = 1;
    }

    const Stage2LowResult low =
        stage2_low_risk(trace, part.low_risk, s1.marginals, params->c, sc, truth, ctx);
    for (int x : low.decided_healthy) trace.decided_stage[x] = 2;
    for (int x : low.decided_infected) {
        trace.classification[x] = 1;
        trace.decided_stage[x] = 2;
    }

    const Stage2HighResult high =
        stage2_high_risk(trace, part.high_risk, s1.marginals, sc, variant, rule, truth, ctx);
    for (std::size_t j = 0; j < high.ids.size(); ++j) {
        trace.classification[high.ids[j]] = high.verdict[j];
        trace.decided_stage[high.ids[j]] = high.decided_stage[j];
    }

    if (!low.unresolved.empty()) {
        RngStream rng = ctx.stream(3, Purpose::outcomes);
        const StageRecord& rec = detail::conduct(trace, 3, "low-risk-individual",
                                                 detail::singleton_pools(low.unresolved), truth, sc, rng);
        for (std::size_t i = 0; i < rec.pools.size(); ++i) {
            const int x = rec.pools[i][0];
            trace.classification[x] = rec.outcomes[i] ? 1 : 0;
            trace.decided_stage[x] = 3;
        }
    }
    return trace;
}

enum class BaselineKind {
    individual,
    individual2,
    individual3,
    dorfman2,
    dorfman3,
    grid,
    bp_individual,
    bp_inf_dorfman,
    plain_bp,
};

inline BaselineKind parse_baseline(const std::string& name) {
    if (name == "individual") return BaselineKind::individual;
    if (name == "individual2") return BaselineKind::individual2;
    if (name == "individual3") return BaselineKind::individual3;
    if (name == "dorfman2") return BaselineKind::dorfman2;
    if (name == "dorfman3") return BaselineKind::dorfman3;
    if (name == "grid") return BaselineKind::grid;
    if (name == "bp_individual") return BaselineKind::bp_individual;
    if (name == "bp_inf_dorfman") return BaselineKind::bp_inf_dorfman;
    if (name == "plain_bp") return BaselineKind::plain_bp;
    throw std::invalid_argument("unknown baseline: " + name);
}

struct BaselineParams {
    double m1_over_n = 0.0; // 0: look up the preset table
};

namespace detail {

inline PipelineTrace run_individual_repeats(int n, const Scenario& sc, int repeats,
                                            const GroundTruth& truth, const SeedCtx& ctx) {
    PipelineTrace trace;
    trace.name = repeats == 1 ? "individual" : "individual" + std::to_string(repeats);
    trace.n = n;
    trace.classification.assign(n, 0);
    trace.decided_stage.assign(n, 1);

    std::vector<int> votes(n, 0);
    for (int r = 0; r < repeats; ++r) {
        std::vector<int> all(n);
        std::iota(all.begin(), all.end(), 0);
        RngStream rng = ctx.stream(100 + r, Purpose::outcomes);
        const StageRecord& rec = conduct(trace, 1, "individual", singleton_pools(all), truth, sc, rng);
        for (int i = 0; i < n; ++i)
            votes[rec.pools[i][0]] += rec.outcomes[i];
    }
    for (int i = 0; i < n; ++i) {
        // 1x: the outcome; 2x: infected only if both positive; 3x: majority
        const bool infected = repeats == 2 ? votes[i] == 2 : votes[i] * 2 > repeats;
        trace.classification[i] = infected ? 1 : 0;
    }
    return trace;
}

inline PipelineTrace run_dorfman2_pipeline(int n, const Scenario& sc, const GroundTruth& truth,
                                           const SeedCtx& ctx) {
    PipelineTrace trace;
    trace.name = "dorfman2";
    trace.n = n;
    trace.classification.assign(n, 0);
    trace.decided_stage.assign(n, 1);

    const Dorfman2Plan plan = build_dorfman2(n, sc.lambda);
    RngStream rng1 = ctx.stream(1, Purpose::outcomes);
    const StageRecord& rec1 = conduct(trace, 1, "pools", plan.stage1.tests, truth, sc, rng1);

    std::vector<int> retest;
    for (std::size_t i = 0; i < rec1.pools.size(); ++i)
        if (rec1.outcomes[i])
            for (int x : rec1.pools[i]) retest.push_back(x);

    if (!retest.empty()) {
        RngStream rng2 = ctx.stream(2, Purpose::outcomes);
        const StageRecord& rec2 = conduct(trace, 2, "individual", singleton_pools(retest), truth, sc, rng2);
        for (std::size_t i = 0; i < rec2.pools.size(); ++i) {
            const int x = rec2.pools[i][0];
            trace.classification[x] = rec2.outcomes[i] ? 1 : 0;
            trace.decided_stage[x] = 2;
        }
    }
    return trace;
}

inline PipelineTrace run_dorfman3_pipeline(int n, const Scenario& sc, const GroundTruth& truth,
                                           const SeedCtx& ctx) {
    PipelineTrace trace;
    trace.name = "dorfman3";
    trace.n = n;
    trace.classification.assign(n, 0);
    trace.decided_stage.assign(n, 1);

    const Dorfman3Plan plan = build_dorfman3(n, sc.lambda, sc);
    RngStream rng1 = ctx.stream(1, Purpose::outcomes);
    const StageRecord& rec1 = conduct(trace, 1, "pools", plan.stage1.tests, truth, sc, rng1);

    std::vector<std::vector<int>> sub_pools;
    for (std::size_t i = 0; i < rec1.pools.size(); ++i)
        if (rec1.outcomes[i])
            for (auto& sub : consecutive_pools(rec1.pools[i], plan.s2))
                sub_pools.push_back(std::move(sub));

    std::vector<int> retest;
    if (!sub_pools.empty()) {
        RngStream rng2 = ctx.stream(2, Purpose::outcomes);
        const StageRecord& rec2 = conduct(trace, 2, "sub-pools", std::move(sub_pools), truth, sc, rng2);
        for (std::size_t i = 0; i < rec2.pools.size(); ++i) {
            for (int x : rec2.pools[i]) trace.decided_stage[x] = 2;
            if (rec2.outcomes[i])
                for (int x : rec2.pools[i]) retest.push_back(x);
        }
    }
    if (!retest.empty()) {
        RngStream rng3 = ctx.stream(3, Purpose::outcomes);
        const StageRecord& rec3 = conduct(trace, 3, "individual", singleton_pools(retest), truth, sc, rng3);
        for (std::size_t i = 0; i < rec3.pools.size(); ++i) {
            const int x = rec3.pools[i][0];
            trace.classification[x] = rec3.outcomes[i] ? 1 : 0;
            trace.decided_stage[x] = 3;
        }
    }
    return trace;
}

inline PipelineTrace run_grid_pipeline(int n, const Scenario& sc, const GroundTruth& truth,
                                       const SeedCtx& ctx) {
    PipelineTrace trace;
    trace.name = "grid";
    trace.n = n;
    trace.classification.assign(n, 0);
    trace.decided_stage.assign(n, 1);

    const GridPlan plan = build_grid(n, sc.lambda);
    RngStream rng1 = ctx.stream(1, Purpose::outcomes);
    const StageRecord& rec1 = conduct(trace, 1, "grid-pools", plan.stage1.tests, truth, sc, rng1);

    // a sample is retested iff both its row pool and its column pool are positive
    std::vector<int> retest;
    for (int x = 0; x < n; ++x)
        if (rec1.outcomes[plan.row_pool[x]] && rec1.outcomes[plan.col_pool[x]])
            retest.push_back(x);

    if (!retest.empty()) {
        RngStream rng2 = ctx.stream(2, Purpose::outcomes);
        const StageRecord& rec2 = conduct(trace, 2, "individual", singleton_pools(retest), truth, sc, rng2);
        for (std::size_t i = 0; i < rec2.pools.size(); ++i) {
            const int x = rec2.pools[i][0];
            trace.classification[x] = rec2.outcomes[i] ? 1 : 0;
            trace.decided_stage[x] = 2;
        }
    }
    return trace;
}

inline double resolve_m1(BaselineKind kind, const Scenario& sc, const BaselineParams& params) {
    if (params.m1_over_n > 0.0) return params.m1_over_n;
    const NoiseLevel lvl = classify_noise(sc);
    std::optional<double> preset;
    if (kind == BaselineKind::bp_individual)
        preset = bp_individual_m1_preset(sc.lambda, lvl);
    else if (kind == BaselineKind::bp_inf_dorfman)
        preset = bp_inf_dorfman_m1_preset(sc.lambda, lvl);
    if (!preset)
        throw std::invalid_argument("no m1/n preset for this baseline/prior/noise; pass m1_over_n");
    return *preset;
}

inline PipelineTrace run_bp_individual_pipeline(int n, const Scenario& sc, double m1_over_n,
                                                const GroundTruth& truth, const SeedCtx& ctx) {
    PipelineTrace trace;
    trace.name = "bp_individual";
    trace.n = n;
    trace.classification.assign(n, 0);
    trace.decided_stage.assign(n, 1);

    const auto s1 = run_stage1_bp(trace, n, m1_over_n, truth, sc, ctx);
    std::vector<int> unresolved;
    for (int x = 0; x < n; ++x) {
        if (s1.marginals[x] <= 0.001) continue;
        if (s1.marginals[x] >= 0.999) {
            trace.classification[x] = 1;
            continue;
        }
        unresolved.push_back(x);
    }
    if (!unresolved.empty()) {
        RngStream rng = ctx.stream(2, Purpose::outcomes);
        const StageRecord& rec = conduct(trace, 2, "individual", singleton_pools(unresolved), truth, sc, rng);
        for (std::size_t i = 0; i < rec.pools.size(); ++i) {
            const int x = rec.pools[i][0];
            trace.classification[x] = rec.outcomes[i] ? 1 : 0;
            trace.decided_stage[x] = 2;
        }
    }
    return trace;
}

inline PipelineTrace run_bp_inf_dorfman_pipeline(int n, const Scenario& sc, double m1_over_n,
                                                 const GroundTruth& truth, const SeedCtx& ctx) {
    PipelineTrace trace;
    trace.name = "bp_inf_dorfman";
    trace.n = n;
    trace.classification.assign(n, 0);
    trace.decided_stage.assign(n, 1);

    const auto s1 = run_stage1_bp(trace, n, m1_over_n, truth, sc, ctx);
    std::vector<int> unresolved;
    for (int x = 0; x < n; ++x) {
        if (s1.marginals[x] <= 0.001) continue;
        if (s1.marginals[x] >= 0.999) {
            trace.classification[x] = 1;
            continue;
        }
        unresolved.push_back(x);
    }
    if (!unresolved.empty()) {
        RngStream pool_rng = ctx.stream(2, Purpose::outcomes);
        RngStream indiv_rng = ctx.stream(3, Purpose::outcomes);
        const DorfmanVerdicts v = run_informative_dorfman(trace, unresolved, s1.marginals, sc, truth,
                                                          2, 3, "inf-dorfman", pool_rng, indiv_rng);
        for (std::size_t j = 0; j < v.ids.size(); ++j) {
            trace.classification[v.ids[j]] = v.verdict[j];
            trace.decided_stage[v.ids[j]] = v.decided_stage[j];
        }
    }
    return trace;
}

inline PipelineTrace run_plain_bp_pipeline(int n, const Scenario& sc, double m1_over_n,
                                           const GroundTruth& truth, const SeedCtx& ctx) {
    PipelineTrace trace;
    trace.name = "plain_bp";
    trace.n = n;
    trace.classification.assign(n, 0);
    trace.decided_stage.assign(n, 1);

    const auto s1 = run_stage1_bp(trace, n, m1_over_n, truth, sc, ctx);
    trace.classification = threshold_classify(s1.marginals, 0.5);
    return trace;
}

} // namespace detail

inline PipelineTrace run_baseline(BaselineKind kind, int n, const Scenario& sc,
                                  const BaselineParams& params, const GroundTruth& truth,
                                  const SeedCtx& ctx) {
    switch (kind) {
        case BaselineKind::individual:
            return detail::run_individual_repeats(n, sc, 1, truth, ctx);
        case BaselineKind::individual2:
            return detail::run_individual_repeats(n, sc, 2, truth, ctx);
        case BaselineKind::individual3:
            return detail::run_individual_repeats(n, sc, 3, truth, ctx);
        case BaselineKind::dorfman2:
            return detail::run_dorfman2_pipeline(n, sc, truth, ctx);
        case BaselineKind::dorfman3:
            return detail::run_dorfman3_pipeline(n, sc, truth, ctx);
        case BaselineKind::grid:
            return detail::run_grid_pipeline(n, sc, truth, ctx);
        case BaselineKind::bp_individual:
            return detail::run_bp_individual_pipeline(n, sc, detail::resolve_m1(kind, sc, params), truth, ctx);
        case BaselineKind::bp_inf_dorfman:
            return detail::run_bp_inf_dorfman_pipeline(n, sc, detail::resolve_m1(kind, sc, params), truth, ctx);
        case BaselineKind::plain_bp: {
            const double m1 = params.m1_over_n > 0.0 ? params.m1_over_n : 0.5;
            return detail::run_plain_bp_pipeline(n, sc, m1, truth, ctx);
        }
    }
    throw std::invalid_argument("run_baseline: unknown kind");
}

} // namespace gtbp
