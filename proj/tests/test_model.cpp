#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gtbp/gtbp.hpp"

using namespace gtbp;

TEST_CASE("scenario validation and presets") {
    CHECK_THROWS_AS(Scenario(-0.1, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(Scenario(0.5, 1.5, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(Scenario(0.5, 1.0, -0.2), std::invalid_argument);
    CHECK(Scenario::noiseless(0.05).p == 1.0);
    CHECK(Scenario::noiseless(0.05).q == 1.0);
    CHECK(Scenario::moderate(0.05).p == doctest::Approx(0.99));
    CHECK(Scenario::moderate(0.05).q == doctest::Approx(0.98));
    CHECK(Scenario::high(0.05).p == doctest::Approx(0.95));
    CHECK(Scenario::high(0.05).q == doctest::Approx(0.95));
}

TEST_CASE("sample_ground_truth degenerate priors") {
    RngStream rng(1);
    const GroundTruth zero = sample_ground_truth(5, 0.0, rng);
    CHECK(zero.n() == 5);
    CHECK(zero.k() == 0);
    const GroundTruth one = sample_ground_truth(5, 1.0, rng);
    CHECK(one.k() == 5);
    CHECK_THROWS_AS(sample_ground_truth(5, 1.5, rng), std::invalid_argument);
    CHECK_THROWS_AS(sample_ground_truth(0, 0.5, rng), std::invalid_argument);
}

TEST_CASE("sample_ground_truth binomial concentration") {
    RngStream rng(42);
    const int n = 10000, draws = 200;
    const double lambda = 0.05;
    double mean_k = 0.0;
    for (int d = 0; d < draws; ++d)
        mean_k += sample_ground_truth(n, lambda, rng).k();
    mean_k /= draws;
    const double sd = std::sqrt(n * lambda * (1 - lambda) / draws);
    CHECK(std::abs(mean_k - 500.0) <= 3 * sd);
}

TEST_CASE("sample_ground_truth deterministic given seed") {
    RngStream a(77), b(77);
    CHECK(sample_ground_truth(100, 0.3, a).status == sample_ground_truth(100, 0.3, b).status);
}

TEST_CASE("pool design construction and mirrors") {
    const PoolDesign d = PoolDesign::from_tests(4, {{0, 1}, {1, 2, 3}});
    CHECK(d.m == 2);
    CHECK(d.samples[1] == std::vector<int>{0, 1});
    CHECK(d.samples[0] == std::vector<int>{0});
    CHECK(d.incidence_count() == 5);
    CHECK(d.max_pool_size() == 3);
    // mirror invariant both ways
    for (int a = 0; a < d.m; ++a)
        for (int x : d.tests[a]) {
            bool found = false;
            for (int t : d.samples[x]) found = found || t == a;
            CHECK(found);
        }

    CHECK_THROWS_AS(PoolDesign::from_tests(4, {{}}), std::invalid_argument);
    CHECK_THROWS_AS(PoolDesign::from_tests(4, {{0, 0}}), std::invalid_argument);
    CHECK_THROWS_AS(PoolDesign::from_tests(4, {{4}}), std::invalid_argument);
    CHECK_THROWS_AS(PoolDesign::from_tests(4, {{-1}}), std::invalid_argument);
}

TEST_CASE("pool design text round trip") {
    const PoolDesign d = PoolDesign::from_tests(6, {{0, 3, 5}, {1}, {2, 4}});
    std::ostringstream os;
    d.write(os);
    std::istringstream is(os.str());
    const PoolDesign back = PoolDesign::read(is);
    CHECK(back.n == d.n);
    CHECK(back.tests == d.tests);
    std::ostringstream os2;
    back.write(os2);
    CHECK(os2.str() == os.str()); // bit-exact round trip
}

TEST_CASE("run_tests perfect channel") {
    RngStream rng(5);
    const PoolDesign d = PoolDesign::from_tests(3, {{0, 1}, {1, 2}});
    GroundTruth truth;
    truth.status = {0, 0, 1};
    const TestResults r = run_tests(d, truth, Scenario::noiseless(0.1), rng);
    CHECK(r.outcomes[0] == 0); // two healthy samples, p = 1
    CHECK(r.outcomes[1] == 1); // contains an infected sample, q = 1
}

TEST_CASE("run_tests equals noiseless OR on random designs") {
    RngStream rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 2 + static_cast<int>(rng.below(10));
        const PoolDesign d = random_tree_design(n, 3, rng);
        const GroundTruth truth = sample_ground_truth(n, 0.4, rng);
        const TestResults r = run_tests(d, truth, Scenario::noiseless(0.4), rng);
        for (int a = 0; a < d.m; ++a) {
            bool any = false;
            for (int x : d.tests[a]) any = any || truth.status[x];
            CHECK(int(r.outcomes[a]) == int(any));
        }
    }
}

TEST_CASE("run_tests false positive rate matches the channel") {
    RngStream rng(11);
    const int trials = 100000;
    GroundTruth truth;
    truth.status = {0, 0};
    const PoolDesign d = PoolDesign::from_tests(2, {{0, 1}});
    const Scenario sc(0.05, 0.95, 0.95);
    int positives = 0;
    for (int t = 0; t < trials; ++t)
        positives += run_tests(d, truth, sc, rng).outcomes[0];
    const double frac = static_cast<double>(positives) / trials;
    CHECK(std::abs(frac - 0.05) <= 3 * std::sqrt(0.05 * 0.95 / trials));
}

TEST_CASE("log_posterior_weight examples") {
    // prior only
    {
        const PoolDesign d = PoolDesign::from_tests(1, {});
        const Scenario sc(0.3, 1.0, 1.0);
        CHECK(log_posterior_weight({1}, d, TestResults{{}}, sc) ==
              doctest::Approx(std::log(0.3)).epsilon(1e-12));
    }
    // perfect-test contradiction
    {
        const PoolDesign d = PoolDesign::from_tests(1, {{0}});
        const Scenario sc(0.3, 1.0, 1.0);
        CHECK(log_posterior_weight({1}, d, TestResults{{0}}, sc) == kNegInf);
    }
    // hand-evaluated two-sample positive test
    {
        const PoolDesign d = PoolDesign::from_tests(2, {{0, 1}});
        const Scenario sc(0.1, 0.9, 0.9);
        CHECK(log_posterior_weight({0, 0}, d, TestResults{{1}}, sc) ==
              doctest::Approx(std::log(0.081)).epsilon(1e-12));
    }
}

TEST_CASE("posterior weights normalize; m=0 reduces to the prior product") {
    RngStream rng(13);
    const int n = 8;
    const PoolDesign d = PoolDesign::from_tests(n, {});
    const Scenario sc(0.23, 1.0, 1.0);
    double total = 0.0;
    for (int bits = 0; bits < (1 << n); ++bits) {
        std::vector<std::uint8_t> sigma(n);
        double prior = 1.0;
        for (int i = 0; i < n; ++i) {
            sigma[i] = (bits >> i) & 1;
            prior *= sigma[i] ? sc.lambda : 1.0 - sc.lambda;
        }
        const double w = std::exp(log_posterior_weight(sigma, d, TestResults{{}}, sc));
        CHECK(w == doctest::Approx(prior).epsilon(1e-10));
        total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}
