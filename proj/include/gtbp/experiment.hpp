#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "gtbp/bp.hpp"
#include "gtbp/designs.hpp"
#include "gtbp/metrics.hpp"
#include "gtbp/model.hpp"
#include "gtbp/pipeline.hpp"
#include "gtbp/rng.hpp"

namespace gtbp {

namespace detail {

// fixed double formatting so identical runs emit identical bytes
inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

// minimal bounded worker pool over an index range
template <class F>
void parallel_for(int count, F&& body, int workers = 0) {
    if (count <= 0) return;
    if (workers <= 0) {
        workers = static_cast<int>(std::thread::hardware_concurrency());
        if (workers <= 0) workers = 4;
    }
    workers = std::min(workers, count);
    if (workers == 1) {
        for (int i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1))
                body(i);
        });
    for (auto& t : pool) t.join();
}

} // namespace detail

struct ExperimentConfig {
    int n = 1000;
    Scenario scenario;
    std::string design = "individual"; // baseline name or "abp"
    int variant = 1;                   // adaptive-pipeline variant (1, 2 or 3)
    double m1_over_n = 0.0;            // 0: preset lookup
    CombineRule combine = CombineRule::and_infected;
    int reps = 1;
    std::uint64_t master_seed = 1;
    int workers = 0; // 0: hardware concurrency

    void validate() const {
        scenario.validate();
        if (n < 1) throw std::invalid_argument("ExperimentConfig: n must be >= 1");
        if (reps < 1) throw std::invalid_argument("ExperimentConfig: reps must be >= 1");
    }
};

// One independent replicate: fresh ground truth from the replicate's seed
// context, then the named procedure.
inline PipelineTrace run_one(const ExperimentConfig& cfg, std::uint64_t replicate,
                             GroundTruth* truth_out = nullptr) {
    const SeedCtx ctx{cfg.master_seed, replicate};
    RngStream truth_rng = ctx.stream(0, Purpose::truth);
    const GroundTruth truth = sample_ground_truth(cfg.n, cfg.scenario.lambda, truth_rng);
    if (truth_out) *truth_out = truth;

    std::string name = cfg.design;
    int variant = cfg.variant;
    if (name.size() == 4 && name.rfind("abp", 0) == 0 && name[3] >= '1' && name[3] <= '3') {
        variant = name[3] - '0';
        name = "abp";
    }
    if (name == "abp")
        return run_adaptive_bp(cfg.n, cfg.scenario, variant, truth, ctx, cfg.combine,
                               cfg.m1_over_n > 0.0
                                   ? std::optional<AbpParams>(AbpParams{cfg.m1_over_n, 2.0})
                                   : std::nullopt);
    return run_baseline(parse_baseline(name), cfg.n, cfg.scenario, BaselineParams{cfg.m1_over_n},
                        truth, ctx);
}

struct RunRow {
    bool ok = false;
    std::string error;
    std::uint64_t rep = 0;
    RunMetrics metrics;
};

struct ExperimentTable {
    ExperimentConfig config;
    std::vector<RunRow> rows; // ordered by replicate index

    static const char* header() {
        return "design,n,lambda,p,q,rep,tests_total,fp,fn,fpr,fnr,"
               "stage1_frac,stage2_frac,stage3_frac,gamma_max,delta_max,delta_avg";
    }

    void write_csv(std::ostream& os, bool with_aggregates = true) const {
        using detail::fmt;
        os << header() << '\n';
        const std::string prefix = config.design + ',' + std::to_string(config.n) + ',' +
                                   fmt(config.scenario.lambda) + ',' + fmt(config.scenario.p) +
                                   ',' + fmt(config.scenario.q) + ',';
        auto emit = [&](const std::string& rep_label, double tests, double fp, double fn,
                        double fpr, double fnr, double s1, double s2, double s3, double gmax,
                        double dmax, double davg) {
            os << prefix << rep_label << ',' << fmt(tests) << ',' << fmt(fp) << ',' << fmt(fn)
               << ',' << fmt(fpr) << ',' << fmt(fnr) << ',' << fmt(s1) << ',' << fmt(s2) << ','
               << fmt(s3) << ',' << fmt(gmax) << ',' << fmt(dmax) << ',' << fmt(davg) << '\n';
        };

        std::vector<std::vector<double>> ok_rows;
        for (const auto& r : rows) {
            if (!r.ok) {
                os << "# rep " << r.rep << " failed: " << r.error << '\n';
                continue;
            }
            const RunMetrics& m = r.metrics;
            std::vector<double> v{static_cast<double>(m.tests_total),
                                  static_cast<double>(m.fp),
                                  static_cast<double>(m.fn),
                                  m.fpr,
                                  m.fnr,
                                  m.stage_frac[0],
                                  m.stage_frac[1],
                                  m.stage_frac[2],
                                  static_cast<double>(m.gamma_max),
                                  static_cast<double>(m.delta_max),
                                  m.delta_avg};
            emit(std::to_string(r.rep), v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8],
                 v[9], v[10]);
            ok_rows.push_back(std::move(v));
        }
        if (!with_aggregates || ok_rows.empty()) return;

        const std::size_t cols = ok_rows.front().size();
        std::vector<double> mean(cols, 0.0), sd(cols, 0.0);
        for (const auto& v : ok_rows)
            for (std::size_t c = 0; c < cols; ++c) mean[c] += v[c];
        for (double& v : mean) v /= ok_rows.size();
        if (ok_rows.size() > 1) {
            for (const auto& v : ok_rows)
                for (std::size_t c = 0; c < cols; ++c)
                    sd[c] += (v[c] - mean[c]) * (v[c] - mean[c]);
            for (double& v : sd) v = std::sqrt(v / (ok_rows.size() - 1));
        }
        emit("mean", mean[0], mean[1], mean[2], mean[3], mean[4], mean[5], mean[6], mean[7],
             mean[8], mean[9], mean[10]);
        emit("std", sd[0], sd[1], sd[2], sd[3], sd[4], sd[5], sd[6], sd[7], sd[8], sd[9], sd[10]);
    }

    double mean_of(double RunMetrics::* field) const {
        double s = 0.0;
        int k = 0;
        for (const auto& r : rows)
            if (r.ok) { s += r.metrics.*field; ++k; }
        return k ? s / k : 0.0;
    }

    double mean_tests() const {
        double s = 0.0;
        int k = 0;
        for (const auto& r : rows)
            if (r.ok) { s += r.metrics.tests_total; ++k; }
        return k ? s / k : 0.0;
    }
};

// Replicates run concurrently; rows are stored by replicate index, so the
// output is independent of scheduling. Per-replicate failures are recorded in
// the row, not rethrown.
inline ExperimentTable run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentTable table;
    table.config = cfg;
    table.rows.resize(cfg.reps);
    detail::parallel_for(
        cfg.reps,
        [&](int i) {
            RunRow& row = table.rows[i];
            row.rep = static_cast<std::uint64_t>(i);
            try {
                GroundTruth truth;
                const PipelineTrace trace = run_one(cfg, row.rep, &truth);
                row.metrics = metrics_from_trace(trace, truth);
                row.ok = true;
            } catch (const std::exception& e) {
                row.error = e.what();
            }
        },
        cfg.workers);
    return table;
}

// Cartesian sweep over designs x priors x channels; one concatenated CSV.
inline void sweep(const std::vector<std::string>& designs, const std::vector<double>& lambdas,
                  const std::vector<Scenario>& channels, int n, int reps,
                  std::uint64_t master_seed, std::ostream& os, int workers = 0) {
    os << ExperimentTable::header() << '\n';
    for (const auto& design : designs)
        for (double lambda : lambdas)
            for (const Scenario& ch : channels) {
                ExperimentConfig cfg;
                cfg.n = n;
                cfg.scenario = Scenario(lambda, ch.p, ch.q);
                cfg.design = design;
                cfg.reps = reps;
                cfg.master_seed = master_seed;
                cfg.workers = workers;
                std::ostringstream block;
                run_experiment(cfg).write_csv(block);
                // drop the per-table header; keep one for the whole sweep
                const std::string s = block.str();
                os << s.substr(s.find('\n') + 1);
            }
}

struct EntropyPoint {
    int m = 0;
    double mean = 0.0;
    double sd = 0.0;
};

// Mean remaining-entropy estimate after BP on a biregular design, per test
// count. m = 0 evaluates to the prior entropy exactly.
inline std::vector<EntropyPoint> entropy_curve(int n, double lambda, const Scenario& sc,
                                               const std::vector<int>& m_grid, int reps,
                                               std::uint64_t master_seed, int workers = 0) {
    if (n < 1 || reps < 1)
        throw std::invalid_argument("entropy_curve: n and reps must be >= 1");
    std::vector<EntropyPoint> out(m_grid.size());
    for (std::size_t gi = 0; gi < m_grid.size(); ++gi) {
        const int m = m_grid[gi];
        std::vector<double> vals(reps, 0.0);
        detail::parallel_for(
            reps,
            [&](int r) {
                const SeedCtx ctx{master_seed, static_cast<std::uint64_t>(r)};
                RngStream truth_rng = ctx.stream(0, Purpose::truth);
                const GroundTruth truth = sample_ground_truth(n, lambda, truth_rng);
                if (m == 0) {
                    vals[r] = prior_entropy(n, lambda);
                    return;
                }
                RngStream design_rng = ctx.stream(static_cast<std::uint64_t>(m), Purpose::design);
                const PoolDesign d = build_biregular(n, m, choose_degrees(lambda, m, n), design_rng);
                RngStream outcome_rng = ctx.stream(static_cast<std::uint64_t>(m), Purpose::outcomes);
                const TestResults res = run_tests(d, truth, sc, outcome_rng);
                RngStream bp_rng = ctx.stream(static_cast<std::uint64_t>(m), Purpose::bp);
                const BPResult bp = run_bp(d, res, std::vector<double>(n, lambda), sc, {}, bp_rng);
                vals[r] = entropy_estimate(bp.state, d, res, sc);
            },
            workers);
        EntropyPoint& pt = out[gi];
        pt.m = m;
        for (double v : vals) pt.mean += v;
        pt.mean /= reps;
        if (reps > 1) {
            for (double v : vals) pt.sd += (v - pt.mean) * (v - pt.mean);
            pt.sd = std::sqrt(pt.sd / (reps - 1));
        }
    }
    return out;
}

inline void write_entropy_csv(const std::vector<EntropyPoint>& pts, std::ostream& os) {
    os << "m,entropy_mean,entropy_std\n";
    for (const auto& p : pts)
        os << p.m << ',' << detail::fmt(p.mean) << ',' << detail::fmt(p.sd) << '\n';
}

} // namespace gtbp
