#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "gtbp/rng.hpp"

namespace gtbp {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Prior infection probability plus the test channel's specificity/sensitivity.
struct Scenario {
    double lambda = 0.05;
    double p = 1.0; // specificity: all-healthy pool tests negative with prob p
    double q = 1.0; // sensitivity: pool with an infected sample tests positive with prob q

    Scenario() = default;
    Scenario(double lambda_, double p_, double q_) : lambda(lambda_), p(p_), q(q_) {
        validate();
    }

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0))
            throw std::invalid_argument("Scenario: lambda outside [0,1]");
        if (!(p >= 0.0 && p <= 1.0) || !(q >= 0.0 && q <= 1.0))
            throw std::invalid_argument("Scenario: p or q outside [0,1]");
    }

    static Scenario noiseless(double lambda) { return {lambda, 1.0, 1.0}; }
    static Scenario moderate(double lambda) { return {lambda, 0.99, 0.98}; }
    static Scenario high(double lambda) { return {lambda, 0.95, 0.95}; }
};

struct GroundTruth {
    std::vector<std::uint8_t> status; // 1 = infected

    int n() const { return static_cast<int>(status.size()); }
    int k() const { return static_cast<int>(std::accumulate(status.begin(), status.end(), 0)); }
};

// Bipartite sample/test incidence structure. Both adjacency directions are
// kept and are exact mirrors of each other.
struct PoolDesign {
    int n = 0;
    int m = 0;
    std::vector<std::vector<int>> tests;   // per test: ordered member sample indices
    std::vector<std::vector<int>> samples; // per sample: member test indices

    static PoolDesign from_tests(int n, std::vector<std::vector<int>> tests) {
        PoolDesign d;
        d.n = n;
        d.m = static_cast<int>(tests.size());
        d.tests = std::move(tests);
        d.samples.assign(n, {});
        for (int a = 0; a < d.m; ++a) {
            if (d.tests[a].empty())
                throw std::invalid_argument("PoolDesign: empty pool");
            std::set<int> seen;
            for (int x : d.tests[a]) {
                if (x < 0 || x >= n)
                    throw std::invalid_argument("PoolDesign: sample index out of range");
                if (!seen.insert(x).second)
                    throw std::invalid_argument("PoolDesign: duplicate incidence");
                d.samples[x].push_back(a);
            }
        }
        return d;
    }

    int incidence_count() const {
        std::size_t e = 0;
        for (const auto& t : tests) e += t.size();
        return static_cast<int>(e);
    }

    int max_pool_size() const {
        std::size_t g = 0;
        for (const auto& t : tests) g = std::max(g, t.size());
        return static_cast<int>(g);
    }

    // Line-oriented text format: header "n m", then one line per test with
    // 0-based member indices. Round-trips bit-exactly.
    void write(std::ostream& os) const {
        os << n << ' ' << m << '\n';
        for (const auto& t : tests) {
            for (std::size_t i = 0; i < t.size(); ++i)
                os << (i ? " " : "") << t[i];
            os << '\n';
        }
    }

    static PoolDesign read(std::istream& is) {
        int n = 0, m = 0;
        if (!(is >> n >> m))
            throw std::invalid_argument("PoolDesign::read: bad header");
        std::string line;
        std::getline(is, line);
        std::vector<std::vector<int>> tests(m);
        for (int a = 0; a < m; ++a) {
            if (!std::getline(is, line))
                throw std::invalid_argument("PoolDesign::read: truncated file");
            std::vector<int> pool;
            std::size_t pos = 0;
            while (pos < line.size()) {
                while (pos < line.size() && line[pos] == ' ') ++pos;
                if (pos >= line.size()) break;
                std::size_t next = 0;
                pool.push_back(std::stoi(line.substr(pos), &next));
                pos += next;
            }
            tests[a] = std::move(pool);
        }
        return from_tests(n, std::move(tests));
    }
};

struct TestResults {
    std::vector<std::uint8_t> outcomes; // 1 = positive

    int m() const { return static_cast<int>(outcomes.size()); }
};

inline GroundTruth sample_ground_truth(int n, double lambda, RngStream& rng) {
    if (n < 1)
        throw std::invalid_argument("sample_ground_truth: n must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("sample_ground_truth: lambda outside [0,1]");
    GroundTruth t;
    t.status.resize(n);
    for (int i = 0; i < n; ++i)
        t.status[i] = rng.bernoulli(lambda) ? 1 : 0;
    return t;
}

// Noisy OR channel: a pool with no infected member is positive w.p. 1-p,
// a pool with at least one infected member is positive w.p. q. Outcomes are
// mutually independent given the truth.
inline TestResults run_tests(const PoolDesign& design, const GroundTruth& truth,
                             const Scenario& sc, RngStream& rng) {
    if (design.n != truth.n())
        throw std::invalid_argument("run_tests: design/truth size mismatch");
    TestResults r;
    r.outcomes.resize(design.m);
    for (int a = 0; a < design.m; ++a) {
        bool infected = false;
        for (int x : design.tests[a])
            if (truth.status[x]) { infected = true; break; }
        const double pos_prob = infected ? sc.q : 1.0 - sc.p;
        r.outcomes[a] = rng.bernoulli(pos_prob) ? 1 : 0;
    }
    return r;
}

namespace detail {
inline double safe_log(double v) { return v > 0.0 ? std::log(v) : kNegInf; }
} // namespace detail

// Log of the unnormalized posterior weight of a candidate assignment:
// per-sample prior factors times one channel factor per test. Exactly-zero
// factors yield -inf.
inline double log_posterior_weight(const std::vector<std::uint8_t>& sigma,
                                   const PoolDesign& design,
                                   const TestResults& results,
                                   const Scenario& sc) {
    if (static_cast<int>(sigma.size()) != design.n)
        throw std::invalid_argument("log_posterior_weight: sigma length mismatch");
    if (results.m() != design.m)
        throw std::invalid_argument("log_posterior_weight: results length mismatch");
    double lw = 0.0;
    for (int i = 0; i < design.n; ++i)
        lw += detail::safe_log(sigma[i] ? sc.lambda : 1.0 - sc.lambda);
    for (int a = 0; a < design.m; ++a) {
        bool infected = false;
        for (int x : design.tests[a])
            if (sigma[x]) { infected = true; break; }
        double factor;
        if (results.outcomes[a])
            factor = infected ? sc.q : 1.0 - sc.p;
        else
            factor = infected ? 1.0 - sc.q : sc.p;
        lw += detail::safe_log(factor);
    }
    return lw;
}

} // namespace gtbp
