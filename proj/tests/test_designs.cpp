#include <cmath>
#include <set>

#include "doctest.h"
#include "gtbp/gtbp.hpp"

using namespace gtbp;

TEST_CASE("dorfman pool size") {
    CHECK(dorfman_pool_size(0.05) == 5);
    CHECK(dorfman_pool_size(0.01) == 11);
    // at lambda = 0.3 pooling still (barely) beats individual testing:
    // 1/3 + 1 - 0.7^3 = 0.9903 < 1
    CHECK(dorfman_pool_size(0.3) == 3);
    CHECK(dorfman_tests_per_sample(0.3, 3) == doctest::Approx(1.0 / 3 + 1 - 0.343));
    CHECK_THROWS_AS(dorfman_pool_size(0.0), std::invalid_argument);
    CHECK_THROWS_AS(dorfman_pool_size(1.0), std::invalid_argument);
}

TEST_CASE("dorfman pool size objective is locally minimal at the returned s") {
    for (double lambda : {0.004, 0.01, 0.02, 0.05, 0.08, 0.1, 0.2}) {
        const int s = dorfman_pool_size(lambda);
        const double at = dorfman_tests_per_sample(lambda, s);
        CHECK(at <= dorfman_tests_per_sample(lambda, s + 1));
        if (s > 1) CHECK(at <= dorfman_tests_per_sample(lambda, s - 1));
    }
}

TEST_CASE("build_dorfman2 pooling") {
    const Dorfman2Plan plan = build_dorfman2(10, 0.05);
    CHECK(plan.pool_size == 5);
    CHECK(plan.stage1.m == 2);
    CHECK(plan.stage1.tests[0].size() == 5);
    CHECK(plan.stage1.tests[1].size() == 5);

    const Dorfman2Plan single = build_dorfman2(1, 0.05);
    CHECK(single.stage1.m == 1);
    CHECK(single.stage1.tests[0] == std::vector<int>{0});
}

TEST_CASE("build_dorfman3 pool sizes") {
    const Scenario sc = Scenario::noiseless(0.05);
    const Dorfman3Plan plan = build_dorfman3(100, 0.05, sc);
    CHECK(plan.s2 == 5);
    CHECK(plan.s1 == plan.s2 * dorfman3_split_factor(0.05, sc));
    CHECK(plan.s1 == 15);

    // n smaller than s1 degenerates to a single stage-1 pool
    const Dorfman3Plan tiny = build_dorfman3(5, 0.05, sc);
    CHECK(tiny.stage1.m == 1);
    CHECK(tiny.stage1.tests[0].size() == 5);
}

TEST_CASE("dorfman3 split factor minimizes the expected-tests objective") {
    for (const Scenario& sc : {Scenario::noiseless(0.05), Scenario(0.05, 0.99, 0.99)}) {
        const int s2 = dorfman_pool_size(sc.lambda);
        const int r = dorfman3_split_factor(sc.lambda, sc);
        const double best = detail::dorfman3_tests_per_sample(sc.lambda, r * s2, s2, sc);
        for (int rr = 2; rr <= 20; ++rr)
            CHECK(best <= detail::dorfman3_tests_per_sample(sc.lambda, rr * s2, s2, sc) + 1e-15);
    }
}

TEST_CASE("grid design structure") {
    const GridPlan plan = build_grid(16, 0.05);
    CHECK(plan.g == 4);
    CHECK(plan.stage1.m == 8); // 4 rows + 4 columns
    for (int x = 0; x < 16; ++x) {
        CHECK(plan.stage1.samples[x].size() == 2);
        CHECK(plan.row_pool[x] >= 0);
        CHECK(plan.col_pool[x] >= 0);
        CHECK(plan.row_pool[x] != plan.col_pool[x]);
    }

    // exactly one infected sample: one positive row and one positive column
    GroundTruth truth;
    truth.status.assign(16, 0);
    truth.status[6] = 1;
    RngStream rng(3);
    const TestResults r = run_tests(plan.stage1, truth, Scenario::noiseless(0.05), rng);
    int positives = 0;
    for (auto o : r.outcomes) positives += o;
    CHECK(positives == 2);
    CHECK(r.outcomes[plan.row_pool[6]] == 1);
    CHECK(r.outcomes[plan.col_pool[6]] == 1);

    // all healthy, perfect specificity: nothing to follow up
    truth.status.assign(16, 0);
    const TestResults r2 = run_tests(plan.stage1, truth, Scenario::noiseless(0.05), rng);
    for (auto o : r2.outcomes) CHECK(o == 0);
}

TEST_CASE("choose_degrees") {
    CHECK(choose_degrees(0.05, 250, 1000).gamma == 14);
    CHECK(choose_degrees(std::log(2.0), 10, 10).gamma == 1);
    CHECK(choose_degrees(0.005, 50, 1000).gamma == 139);
    CHECK_THROWS_AS(choose_degrees(0.0, 10, 10), std::invalid_argument);
    CHECK_THROWS_AS(choose_degrees(1.0, 10, 10), std::invalid_argument);
}

TEST_CASE("build_biregular small instances") {
    RngStream rng(17);
    const PoolDesign tiny = build_biregular(1, 1, DegreePair{1, 1}, rng);
    CHECK(tiny.incidence_count() == 1);

    // Fig.-6-style degrees: 4 samples, 3 tests, gamma 4 -> all degrees exact
    for (int rep = 0; rep < 20; ++rep) {
        const PoolDesign d = build_biregular(4, 3, DegreePair{3, 4}, rng);
        for (const auto& pool : d.tests) CHECK(pool.size() <= 4);
        int incid = d.incidence_count();
        CHECK(incid <= 12);
        if (incid == 12) // no pairing-model duplicates collapsed
            for (int x = 0; x < 4; ++x) CHECK(d.samples[x].size() == 3);
    }
    CHECK_THROWS_AS(build_biregular(3, 2, DegreePair{1, 4}, rng), std::invalid_argument);
}

TEST_CASE("build_biregular degree accounting over many draws") {
    // dense pools: duplicates are common, collapses only ever shrink things
    {
        RngStream rng(23);
        int collapsed = 0;
        for (int rep = 0; rep < 100; ++rep) {
            const PoolDesign d = build_biregular(100, 20, DegreePair{3, 14}, rng);
            const int incid = d.incidence_count();
            CHECK(incid <= 280);
            if (incid < 280) ++collapsed;
            for (const auto& pool : d.tests) CHECK(pool.size() <= 14);
            for (int x = 0; x < 100; ++x) CHECK(d.samples[x].size() <= 3);
        }
        CHECK(collapsed > 0);
    }
    // small pools: most draws are duplicate free and exactly near-biregular
    {
        RngStream rng(24);
        int full_draws = 0;
        for (int rep = 0; rep < 500; ++rep) {
            const PoolDesign d = build_biregular(100, 140, DegreePair{3, 2}, rng);
            const int incid = d.incidence_count();
            CHECK(incid <= 280);
            if (incid < 280) continue; // a duplicate was collapsed
            ++full_draws;
            for (const auto& pool : d.tests) CHECK(pool.size() == 2);
            int total = 0;
            for (int x = 0; x < 100; ++x) {
                const int deg = static_cast<int>(d.samples[x].size());
                CHECK(deg >= 2);
                CHECK(deg <= 3);
                total += deg;
            }
            CHECK(total == 280);
        }
        CHECK(full_draws > 150); // collapses are the exception here
    }
}

namespace {

double brute_force_best_partition(const std::vector<double>& mu, const Scenario& sc) {
    // minimum expected tests over all contiguous partitions of the sorted list
    const int k = static_cast<int>(mu.size());
    std::vector<double> best(k + 1, 0.0);
    for (int j = 1; j <= k; ++j) {
        best[j] = std::numeric_limits<double>::infinity();
        for (int i = 0; i < j; ++i) {
            double all_healthy = 1.0;
            for (int t = i; t < j; ++t) all_healthy *= 1.0 - mu[t];
            const double pos = sc.q * (1 - all_healthy) + (1 - sc.p) * all_healthy;
            const double seg = (j - i == 1) ? 1.0 : 1.0 + (j - i) * pos;
            best[j] = std::min(best[j], best[i] + seg);
        }
    }
    return best[k];
}

} // namespace

TEST_CASE("informative dorfman plan") {
    const Scenario sc = Scenario::noiseless(0.05);

    // marginals above the 0.3 rule all go individual
    {
        std::vector<int> ids{0, 1, 2};
        std::vector<double> mu{0.5, 0.5, 0.5};
        const DorfmanPlan plan = informative_dorfman_plan(ids, mu, sc);
        CHECK(plan.pools.empty());
        CHECK(plan.individual.size() == 3);
    }
    // singleton input
    {
        const DorfmanPlan plan = informative_dorfman_plan({0}, {0.01}, sc);
        CHECK(plan.pools.empty());
        CHECK(plan.individual == std::vector<int>{0});
    }
    // DP optimum matches brute force on ten equal marginals
    {
        std::vector<int> ids(10);
        std::vector<double> mu(10, 0.01);
        for (int i = 0; i < 10; ++i) ids[i] = i;
        const DorfmanPlan plan = informative_dorfman_plan(ids, mu, sc);
        CHECK(dorfman_plan_expected_tests(plan, mu, sc) ==
              doctest::Approx(brute_force_best_partition(mu, sc)).epsilon(1e-12));
    }
    // plan never loses to the trivial single-pool or all-individual plans
    {
        RngStream rng(31);
        for (int rep = 0; rep < 30; ++rep) {
            const int k = 2 + static_cast<int>(rng.below(12));
            std::vector<int> ids(k);
            std::vector<double> mu(k);
            for (int i = 0; i < k; ++i) {
                ids[i] = i;
                mu[i] = 0.29 * rng.uniform();
            }
            const Scenario noisy(0.05, 0.97, 0.96);
            const DorfmanPlan plan = informative_dorfman_plan(ids, mu, noisy);
            const double got = dorfman_plan_expected_tests(plan, mu, noisy);

            DorfmanPlan single;
            single.pools.push_back(ids);
            CHECK(got <= dorfman_plan_expected_tests(single, mu, noisy) + 1e-12);
            DorfmanPlan indiv;
            indiv.individual = ids;
            CHECK(got <= dorfman_plan_expected_tests(indiv, mu, noisy) + 1e-12);

            // partition property: pools and individual cover the input exactly
            std::set<int> seen;
            for (const auto& pool : plan.pools) {
                CHECK(pool.size() >= 2);
                for (int x : pool) CHECK(seen.insert(x).second);
            }
            for (int x : plan.individual) CHECK(seen.insert(x).second);
            CHECK(seen.size() == ids.size());
        }
    }
}

TEST_CASE("all constructors produce mirror-consistent designs") {
    RngStream rng(37);
    auto check_mirror = [](const PoolDesign& d) {
        std::size_t from_tests = 0, from_samples = 0;
        for (const auto& t : d.tests) from_tests += t.size();
        for (const auto& s : d.samples) from_samples += s.size();
        CHECK(from_tests == from_samples);
    };
    check_mirror(build_dorfman2(103, 0.05).stage1);
    check_mirror(build_dorfman3(103, 0.05, Scenario::noiseless(0.05)).stage1);
    check_mirror(build_grid(103, 0.05).stage1);
    check_mirror(build_biregular(103, 29, choose_degrees(0.05, 29, 103), rng));
}
