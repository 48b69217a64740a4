// Command-line front end: simulation harness, parameter sweeps, entropy
// curves, population dynamics, oracle cross-checks and closed-form Dorfman
// expectations. All randomized outputs are reproducible from --seed.

#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gtbp/gtbp.hpp"

namespace {

gtbp::Scenario make_scenario(double lambda, const std::string& noise) {
    if (noise == "none") return gtbp::Scenario::noiseless(lambda);
    if (noise == "moderate") return gtbp::Scenario::moderate(lambda);
    if (noise == "high") return gtbp::Scenario::high(lambda);
    if (noise.rfind("custom:", 0) == 0) {
        const std::string spec = noise.substr(7);
        const auto comma = spec.find(',');
        if (comma == std::string::npos)
            throw CLI::ValidationError("--noise", "custom noise must be custom:p,q");
        return gtbp::Scenario(lambda, std::stod(spec.substr(0, comma)),
                              std::stod(spec.substr(comma + 1)));
    }
    throw CLI::ValidationError("--noise", "expected none|moderate|high|custom:p,q");
}

std::unique_ptr<std::ofstream> open_out(const std::string& path, std::ostream*& os) {
    os = &std::cout;
    if (path.empty()) return nullptr;
    auto file = std::make_unique<std::ofstream>(path);
    if (!*file)
        throw CLI::ValidationError("--out", "cannot open " + path + " for writing");
    os = file.get();
    return file;
}

struct CommonOpts {
    int n = 1000;
    double lambda = 0.05;
    std::string noise = "none";
    int reps = 1;
    std::uint64_t seed = 1;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_reps = true) {
    cmd->add_option("--n", o.n, "number of samples")->check(CLI::PositiveNumber);
    cmd->add_option("--lambda", o.lambda, "prior infection probability")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--noise", o.noise, "none|moderate|high|custom:p,q");
    if (with_reps)
        cmd->add_option("--reps", o.reps, "independent replicates")->check(CLI::PositiveNumber);
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--out", o.out, "output file (default: stdout)");
}

int cmd_simulate(const CommonOpts& o, const std::string& design, int variant, double m1) {
    gtbp::ExperimentConfig cfg;
    cfg.n = o.n;
    cfg.scenario = make_scenario(o.lambda, o.noise);
    cfg.design = design;
    cfg.variant = variant;
    cfg.m1_over_n = m1;
    cfg.reps = o.reps;
    cfg.master_seed = o.seed;
    std::ostream* os = nullptr;
    auto file = open_out(o.out, os);
    gtbp::run_experiment(cfg).write_csv(*os);
    return 0;
}

int cmd_sweep(const CommonOpts& o, const std::vector<std::string>& designs,
              const std::vector<double>& lambdas, const std::vector<std::string>& noises) {
    std::vector<gtbp::Scenario> channels;
    for (const auto& nz : noises)
        channels.push_back(make_scenario(0.5, nz)); // lambda placeholder, replaced per cell
    std::ostream* os = nullptr;
    auto file = open_out(o.out, os);
    gtbp::sweep(designs, lambdas, channels, o.n, o.reps, o.seed, *os);
    return 0;
}

int cmd_entropy(const CommonOpts& o, std::vector<int> m_grid) {
    if (m_grid.empty())
        for (int m = 0; m <= o.n / 2; m += std::max(1, o.n / 20)) m_grid.push_back(m);
    const auto pts = gtbp::entropy_curve(o.n, o.lambda, make_scenario(o.lambda, o.noise), m_grid,
                                         o.reps, o.seed);
    std::ostream* os = nullptr;
    auto file = open_out(o.out, os);
    gtbp::write_entropy_csv(pts, *os);
    return 0;
}

int cmd_popdyn(const CommonOpts& o, double m_over_n, long long pop, int iters) {
    gtbp::PopDynConfig cfg;
    cfg.scenario = make_scenario(o.lambda, o.noise);
    const int m = std::max(1, static_cast<int>(std::lround(m_over_n * o.n)));
    cfg.degrees = gtbp::choose_degrees(o.lambda, m, o.n);
    cfg.population = pop;
    cfg.iterations = iters;
    gtbp::RngStream rng = gtbp::SeedCtx{o.seed, 0}.stream(0, gtbp::Purpose::popdyn);
    const gtbp::PopDynResult res = gtbp::popdyn_run(cfg, rng);
    std::ostream* os = nullptr;
    auto file = open_out(o.out, os);
    res.write_csv(*os);
    std::cerr << "polarised_healthy=" << res.polarised_healthy
              << " polarised_infected=" << res.polarised_infected << '\n';
    return 0;
}

// BP vs exhaustive enumeration on trees, Glauber vs exhaustive everywhere.
int cmd_oracle_check(const CommonOpts& o, int instances) {
    const gtbp::Scenario presets[3] = {gtbp::Scenario::noiseless(o.lambda),
                                       gtbp::Scenario::moderate(o.lambda),
                                       gtbp::Scenario::high(o.lambda)};
    double worst_glauber = 0.0, worst_bp = 0.0, worst_bethe = 0.0;
    int trees = 0;
    for (int i = 0; i < instances; ++i) {
        const gtbp::SeedCtx ctx{o.seed, static_cast<std::uint64_t>(i)};
        gtbp::RngStream rng = ctx.stream(0, gtbp::Purpose::design);
        const gtbp::Scenario sc = presets[i % 3];
        const int n_cap = std::max(2, std::min(o.n, 12));
        const int n = 2 + static_cast<int>(rng.below(n_cap - 1));
        const bool is_tree = i % 2 == 1;
        gtbp::PoolDesign d;
        if (is_tree) {
            d = gtbp::random_tree_design(n, 4, rng);
        } else {
            const int m = 1 + static_cast<int>(rng.below(n));
            const gtbp::DegreePair deg{2, 1 + static_cast<int>(rng.below(n))};
            d = gtbp::build_biregular(n, m, deg, rng);
        }

        gtbp::RngStream truth_rng = ctx.stream(0, gtbp::Purpose::truth);
        const gtbp::GroundTruth truth = gtbp::sample_ground_truth(n, o.lambda, truth_rng);
        gtbp::RngStream outcome_rng = ctx.stream(0, gtbp::Purpose::outcomes);
        const gtbp::TestResults res = gtbp::run_tests(d, truth, sc, outcome_rng);
        const std::vector<double> priors(n, o.lambda);

        const gtbp::MarginalVector exact = gtbp::exhaustive_marginals(d, res, priors, sc);
        gtbp::RngStream grng = ctx.stream(0, gtbp::Purpose::glauber);
        const gtbp::MarginalVector mc = gtbp::glauber_run(d, res, priors, sc, {}, grng);
        for (int x = 0; x < n; ++x)
            worst_glauber = std::max(worst_glauber, std::abs(mc[x] - exact[x]));

        if (is_tree) {
            ++trees;
            gtbp::RngStream bp_rng = ctx.stream(0, gtbp::Purpose::bp);
            const gtbp::BPResult bp = gtbp::run_bp(d, res, priors, sc, {}, bp_rng);
            for (int x = 0; x < n; ++x)
                worst_bp = std::max(worst_bp, std::abs(bp.marginals[x] - exact[x]));
            const double log_z = gtbp::exhaustive_log_normalizer(d, res, priors, sc);
            worst_bethe = std::max(
                worst_bethe, std::abs(gtbp::bethe_free_energy(bp.state, d, res, sc) - log_z));
        }
    }
    std::cout << "instances=" << instances << " trees=" << trees
              << " glauber_linf=" << worst_glauber << " bp_tree_linf=" << worst_bp
              << " bethe_tree_err=" << worst_bethe << '\n';
    const bool ok = worst_glauber <= 0.02 && worst_bp <= 1e-6 && worst_bethe <= 1e-6;
    std::cout << (ok ? "OK" : "MISMATCH") << '\n';
    return ok ? 0 : 1;
}

int cmd_expect(const CommonOpts& o, int stages) {
    const gtbp::Scenario sc = make_scenario(o.lambda, o.noise);
    const gtbp::DorfmanExpectations e = gtbp::dorfman_expectations(o.n, o.lambda, sc, stages);
    std::cout << "stages=" << stages << " n=" << o.n << " lambda=" << o.lambda << " p=" << sc.p
              << " q=" << sc.q << '\n'
              << "expected_tests=" << e.tests << " (" << e.tests / o.n << " per sample)\n"
              << "expected_false_positives=" << e.fp << '\n'
              << "expected_false_negatives=" << e.fn << '\n'
              << "info_lower_bound_tests=" << gtbp::info_lower_bound(o.n, o.lambda) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"group-testing simulation and inference toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "flat key = value config file; flags override");
    app.allow_config_extras(false);

    CommonOpts o;

    auto* sim = app.add_subcommand("simulate", "run one design, CSV metrics per replicate");
    std::string design = "individual";
    int variant = 1;
    double m1 = 0.0;
    add_common(sim, o);
    sim->add_option("--design", design,
                    "individual|individual2|individual3|dorfman2|dorfman3|grid|"
                    "bp_individual|bp_inf_dorfman|plain_bp|abp|abp1|abp2|abp3");
    sim->add_option("--variant", variant, "adaptive-pipeline variant")->check(CLI::Range(1, 3));
    sim->add_option("--m1", m1, "stage-1 tests per sample (overrides presets)");

    auto* sw = app.add_subcommand("sweep", "grid of designs x priors x channels");
    std::vector<std::string> designs{"individual", "dorfman2"};
    std::vector<double> lambdas{0.05};
    std::vector<std::string> noises{"none"};
    add_common(sw, o);
    sw->add_option("--design", designs, "designs to sweep (repeatable)");
    sw->add_option("--lambdas", lambdas, "priors to sweep (repeatable)");
    sw->add_option("--noises", noises, "channels to sweep (repeatable)");

    auto* ec = app.add_subcommand("entropy-curve", "remaining entropy vs test count");
    std::vector<int> m_grid;
    add_common(ec, o);
    ec->add_option("--m", m_grid, "test counts to evaluate (repeatable)");

    auto* pd = app.add_subcommand("popdyn", "population-dynamics marginal distribution");
    double m_over_n = 0.25;
    long long pop = 10000;
    int iters = 20;
    add_common(pd, o, false);
    pd->add_option("--m-over-n", m_over_n, "tests per sample of the modelled design");
    pd->add_option("--population", pop, "population size (>= 10^4)");
    pd->add_option("--iterations", iters, "population-dynamics iterations");

    auto* oc = app.add_subcommand("oracle-check", "BP/Glauber vs exhaustive on tiny instances");
    int instances = 50;
    add_common(oc, o, false);
    oc->add_option("--instances", instances, "random instances to check");

    auto* ex = app.add_subcommand("expect", "closed-form Dorfman expectations");
    int stages = 2;
    add_common(ex, o, false);
    ex->add_option("--stages", stages, "2 or 3")->check(CLI::Range(2, 3));

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(o, design, variant, m1);
        if (sw->parsed()) return cmd_sweep(o, designs, lambdas, noises);
        if (ec->parsed()) return cmd_entropy(o, m_grid);
        if (pd->parsed()) return cmd_popdyn(o, m_over_n, pop, iters);
        if (oc->parsed()) return cmd_oracle_check(o, instances);
        if (ex->parsed()) return cmd_expect(o, stages);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
