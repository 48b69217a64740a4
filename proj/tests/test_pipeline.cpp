#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "gtbp/gtbp.hpp"

using namespace gtbp;

TEST_CASE("noise level classification") {
    CHECK(classify_noise(Scenario::noiseless(0.05)) == NoiseLevel::noiseless);
    CHECK(classify_noise(Scenario::moderate(0.1)) == NoiseLevel::moderate);
    CHECK(classify_noise(Scenario::high(0.01)) == NoiseLevel::high);
    CHECK(classify_noise(Scenario(0.05, 0.9, 0.9)) == NoiseLevel::custom);
}

TEST_CASE("partition by marginal thresholds") {
    const MarginalVector mu{0.0005, 0.05, 0.2, 0.9995, 0.001, 0.999, 0.124};
    const RiskPartition part = partition_by_marginal(mu);
    CHECK(part.decided_healthy == std::vector<int>{0, 4}); // <= 0.001 is healthy
    CHECK(part.decided_infected == std::vector<int>{3, 5}); // >= 0.999 is infected
    CHECK(part.low_risk == std::vector<int>{1});            // < 0.124
    CHECK(part.high_risk == std::vector<int>{2, 6});        // 0.124 itself is high risk

    // exhaustive and disjoint for arbitrary inputs
    RngStream rng(2);
    MarginalVector random_mu(200);
    for (double& v : random_mu) v = rng.uniform();
    const RiskPartition rp = partition_by_marginal(random_mu);
    CHECK(rp.decided_healthy.size() + rp.decided_infected.size() + rp.low_risk.size() +
              rp.high_risk.size() == random_mu.size());
}

TEST_CASE("parameter presets") {
    const auto v1 = abp_preset(1, 0.01, NoiseLevel::high);
    REQUIRE(v1.has_value());
    CHECK(v1->m1_over_n == doctest::Approx(0.1));
    CHECK(v1->c == doctest::Approx(2.0));

    const auto v3 = abp_preset(3, 0.005, NoiseLevel::moderate);
    REQUIRE(v3.has_value());
    CHECK(v3->m1_over_n == doctest::Approx(0.075));
    CHECK(v3->c == doctest::Approx(8.0));

    CHECK_FALSE(abp_preset(2, 0.05, NoiseLevel::noiseless).has_value());
    CHECK_FALSE(abp_preset(3, 0.01, NoiseLevel::noiseless).has_value());
    CHECK_FALSE(abp_preset(1, 0.03, NoiseLevel::high).has_value()); // unknown prior

    CHECK(bp_individual_m1_preset(0.05, NoiseLevel::noiseless).value() == doctest::Approx(0.23));
    CHECK(bp_inf_dorfman_m1_preset(0.1, NoiseLevel::high).value() == doctest::Approx(0.1));
    const auto abp1_high_05 = abp_preset(1, 0.05, NoiseLevel::high);
    REQUIRE(abp1_high_05.has_value());
    CHECK(abp1_high_05->m1_over_n == doctest::Approx(0.16));
    CHECK(abp1_high_05->c == doctest::Approx(2.0));
}

TEST_CASE("stage2_low_risk no-ops on an empty set") {
    PipelineTrace trace;
    trace.n = 10;
    const Stage2LowResult r = stage2_low_risk(trace, {}, MarginalVector(10, 0.05),
                                              2.0, Scenario::noiseless(0.05), GroundTruth{},
                                              SeedCtx{1, 0});
    CHECK(r.tests_used == 0);
    CHECK(r.decided_healthy.empty());
    CHECK(r.unresolved.empty());
    CHECK(trace.total_tests() == 0);
}

TEST_CASE("informative dorfman procedure: a negative pool clears its members") {
    PipelineTrace trace;
    trace.n = 6;
    trace.classification.assign(6, 0);
    trace.decided_stage.assign(6, 0);
    GroundTruth truth;
    truth.status.assign(6, 0);
    const MarginalVector mu(6, 0.02);
    RngStream pr(1), ir(2);
    const DorfmanVerdicts v =
        run_informative_dorfman(trace, {0, 1, 2, 3, 4, 5}, mu, Scenario::noiseless(0.02), truth,
                                2, 3, "t", pr, ir);
    CHECK(trace.total_tests() == 1); // one pooled test, negative, no retests
    for (auto verdict : v.verdict) CHECK(verdict == 0);
    for (int s : v.decided_stage) CHECK(s == 2);
}

namespace {

// Recompute per-procedure verdicts from the recorded trace and combine them,
// independently of the pipeline's own bookkeeping.
std::map<int, int> replay_combined(const PipelineTrace& trace, int replication,
                                   CombineRule rule) {
    std::map<int, int> votes;
    for (int i = 0; i < replication; ++i) {
        const std::string pool_label = "high-risk-dorfman" + std::to_string(i + 1) + "-pools";
        const std::string ind_label = "high-risk-dorfman" + std::to_string(i + 1) + "-individual";
        const StageRecord* pools = nullptr;
        const StageRecord* indiv = nullptr;
        for (const auto& s : trace.stages) {
            if (s.label == pool_label) pools = &s;
            if (s.label == ind_label) indiv = &s;
        }
        REQUIRE(pools != nullptr);
        std::map<int, int> retest_outcome;
        if (indiv)
            for (std::size_t t = 0; t < indiv->pools.size(); ++t)
                retest_outcome[indiv->pools[t][0]] = indiv->outcomes[t];
        for (std::size_t t = 0; t < pools->pools.size(); ++t) {
            const auto& pool = pools->pools[t];
            if (pool.size() == 1) {
                votes[pool[0]] += pools->outcomes[t];
            } else if (!pools->outcomes[t]) {
                for (int x : pool) votes[x] += 0;
            } else {
                for (int x : pool) votes[x] += retest_outcome.at(x);
            }
        }
    }
    std::map<int, int> combined;
    for (const auto& [x, v] : votes) {
        bool infected;
        if (replication == 1)
            infected = v > 0;
        else if (replication == 2)
            infected = rule == CombineRule::or_infected ? v > 0 : v == 2;
        else
            infected = v >= 2;
        combined[x] = infected ? 1 : 0;
    }
    return combined;
}

} // namespace

TEST_CASE("stage2_high_risk combines replicated verdicts correctly") {
    RngStream truth_rng(9);
    const int n = 60;
    const GroundTruth truth = sample_ground_truth(n, 0.3, truth_rng);
    std::vector<int> ids(n);
    MarginalVector mu(n);
    RngStream mu_rng(10);
    for (int i = 0; i < n; ++i) {
        ids[i] = i;
        mu[i] = 0.13 + 0.6 * mu_rng.uniform(); // mixed pooled/individual plan
    }
    const Scenario sc(0.3, 0.8, 0.8); // noisy enough for procedures to disagree

    for (const auto& [r, rule] :
         std::vector<std::pair<int, CombineRule>>{{1, CombineRule::and_infected},
                                                  {2, CombineRule::and_infected},
                                                  {2, CombineRule::or_infected},
                                                  {3, CombineRule::majority}}) {
        PipelineTrace trace;
        trace.n = n;
        trace.classification.assign(n, 0);
        trace.decided_stage.assign(n, 0);
        const Stage2HighResult out =
            stage2_high_risk(trace, ids, mu, sc, r, rule, truth, SeedCtx{123, 0});
        const auto replay = replay_combined(trace, r, rule);
        for (std::size_t j = 0; j < out.ids.size(); ++j)
            CHECK(int(out.verdict[j]) == replay.at(out.ids[j]));
        CHECK(out.tests_used == trace.total_tests());
    }

    // the two r=2 rules bracket each other: and-combined <= or-combined
    PipelineTrace ta, to;
    ta.n = to.n = n;
    ta.classification.assign(n, 0);
    ta.decided_stage.assign(n, 0);
    to.classification.assign(n, 0);
    to.decided_stage.assign(n, 0);
    const auto va = stage2_high_risk(ta, ids, mu, sc, 2, CombineRule::and_infected, truth, SeedCtx{5, 0});
    const auto vo = stage2_high_risk(to, ids, mu, sc, 2, CombineRule::or_infected, truth, SeedCtx{5, 0});
    for (std::size_t j = 0; j < va.verdict.size(); ++j)
        CHECK(int(va.verdict[j]) <= int(vo.verdict[j]));

    PipelineTrace bad;
    bad.n = n;
    CHECK_THROWS_AS(stage2_high_risk(bad, ids, mu, sc, 4, CombineRule::majority, truth, SeedCtx{1, 0}),
                    std::invalid_argument);
}

TEST_CASE("adaptive pipeline is exact on noiseless data") {
    for (std::uint64_t rep = 0; rep < 10; ++rep) {
        const int n = 400;
        const Scenario sc = Scenario::noiseless(0.05);
        const SeedCtx ctx{777, rep};
        RngStream truth_rng = ctx.stream(0, Purpose::truth);
        const GroundTruth truth = sample_ground_truth(n, 0.05, truth_rng);
        const PipelineTrace trace = run_adaptive_bp(n, sc, 1, truth, ctx);
        const RunMetrics m = metrics_from_trace(trace, truth);
        CHECK(m.fp == 0);
        CHECK(m.fn == 0);
        // every sample decided exactly once, at a recorded stage
        for (int d : trace.decided_stage) {
            CHECK(d >= 1);
            CHECK(d <= 3);
        }
        CHECK(m.stage_frac[0] + m.stage_frac[1] + m.stage_frac[2] == doctest::Approx(1.0));
    }
    CHECK_THROWS_AS(run_adaptive_bp(100, Scenario::noiseless(0.05), 2, GroundTruth{{0}}, SeedCtx{1, 0}),
                    std::invalid_argument);
}

TEST_CASE("variant cost is monotone for fixed seed and parameters") {
    const int n = 400;
    const Scenario sc = Scenario::moderate(0.05);
    const AbpParams params{0.2, 2.0};
    for (std::uint64_t rep = 0; rep < 5; ++rep) {
        const SeedCtx ctx{31, rep};
        RngStream truth_rng = ctx.stream(0, Purpose::truth);
        const GroundTruth truth = sample_ground_truth(n, 0.05, truth_rng);
        const int t1 = run_adaptive_bp(n, sc, 1, truth, ctx, CombineRule::and_infected, params).total_tests();
        const int t2 = run_adaptive_bp(n, sc, 2, truth, ctx, CombineRule::and_infected, params).total_tests();
        const int t3 = run_adaptive_bp(n, sc, 3, truth, ctx, CombineRule::and_infected, params).total_tests();
        CHECK(t1 <= t2);
        CHECK(t2 <= t3);
    }
}

TEST_CASE("baselines on perfect tests recover the truth") {
    const int n = 300;
    const Scenario sc = Scenario::noiseless(0.05);
    const SeedCtx ctx{91, 4};
    RngStream truth_rng = ctx.stream(0, Purpose::truth);
    const GroundTruth truth = sample_ground_truth(n, 0.05, truth_rng);

    const auto check_exact = [&](BaselineKind kind) {
        const PipelineTrace t = run_baseline(kind, n, sc, {}, truth, ctx);
        CHECK(t.classification == truth.status);
        return t;
    };
    const PipelineTrace ind = check_exact(BaselineKind::individual);
    CHECK(ind.total_tests() == n);
    CHECK(check_exact(BaselineKind::individual2).total_tests() == 2 * n);
    CHECK(check_exact(BaselineKind::individual3).total_tests() == 3 * n);
    check_exact(BaselineKind::dorfman2);
    check_exact(BaselineKind::dorfman3);
    check_exact(BaselineKind::grid);
    check_exact(BaselineKind::bp_individual);
    check_exact(BaselineKind::bp_inf_dorfman);

    const PipelineTrace pb =
        run_baseline(BaselineKind::plain_bp, n, sc, BaselineParams{0.5}, truth, ctx);
    CHECK(pb.classification.size() == static_cast<std::size_t>(n));
    CHECK(pb.total_tests() == n / 2);

    CHECK_THROWS_AS(parse_baseline("nonsense"), std::invalid_argument);
}

TEST_CASE("repeated individual testing matches the closed-form error rates") {
    // both-positive rule: E[FP] = (n-k)(1-p)^2; E[FN] ~ k(1-q^2)
    const int n = 2000, reps = 40;
    const Scenario sc(0.05, 0.99, 0.99);
    double fp = 0, fn = 0, k_total = 0;
    for (std::uint64_t rep = 0; rep < reps; ++rep) {
        const SeedCtx ctx{2024, rep};
        RngStream truth_rng = ctx.stream(0, Purpose::truth);
        const GroundTruth truth = sample_ground_truth(n, 0.05, truth_rng);
        const RunMetrics m = metrics_from_trace(
            run_baseline(BaselineKind::individual2, n, sc, {}, truth, ctx), truth);
        fp += m.fp;
        fn += m.fn;
        k_total += truth.k();
    }
    fp /= reps;
    fn /= reps;
    const double k_mean = k_total / reps;
    const double exp_fp = (n - k_mean) * 0.01 * 0.01;
    const double exp_fn = k_mean * (1 - 0.99 * 0.99);
    CHECK(std::abs(fp - exp_fp) <= 3 * std::sqrt(exp_fp / reps) + 0.05);
    CHECK(std::abs(fn - exp_fn) <= 3 * std::sqrt(exp_fn / reps) + 0.05);
}

TEST_CASE("trace serialization accounts for every test") {
    const int n = 120;
    const Scenario sc = Scenario::high(0.05);
    const SeedCtx ctx{8, 0};
    RngStream truth_rng = ctx.stream(0, Purpose::truth);
    const GroundTruth truth = sample_ground_truth(n, 0.05, truth_rng);
    const PipelineTrace trace = run_adaptive_bp(n, sc, 3, truth, ctx);

    int from_stages = 0;
    for (const auto& s : trace.stages) from_stages += s.tests();
    CHECK(from_stages == trace.total_tests());

    std::ostringstream os;
    trace.write(os);
    const std::string text = os.str();
    CHECK(text.find("pipeline abp3") == 0);
    CHECK(text.find("classification") != std::string::npos);
    CHECK(text.find("decided_stage") != std::string::npos);
}
