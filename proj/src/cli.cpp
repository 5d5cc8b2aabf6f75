#include "viv/cli.hpp"

#include "viv/bifurcation.hpp"
#include "viv/config.hpp"
#include "viv/evolution.hpp"
#include "viv/io.hpp"
#include "viv/periodic.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>

namespace viv::cli {

namespace {

const std::vector<std::string> kSubcommands = {
    "steady",   "thresholds", "evolve", "spectrum",
    "resonance", "periodic",  "branch", "pipeline"};

struct Context {
    Config cfg;
    std::string out_dir;

    std::string path(const std::string& name) const {
        return (std::filesystem::path(out_dir) / name).string();
    }
    void report(const std::string& name, json j) const {
        write_report(path(name), std::move(j), cfg.hash());
    }
};

MeshConfig mesh_from(const Config& cfg) {
    MeshConfig mc;
    mc.x0 = cfg.get_double("mesh.x0", -8.0);
    mc.x1 = cfg.get_double("mesh.x1", 16.0);
    mc.y0 = cfg.get_double("mesh.y0", -8.0);
    mc.y1 = cfg.get_double("mesh.y1", 8.0);
    mc.h = cfg.get_double("mesh.h", 0.25);
    mc.outflow = cfg.get_bool("mesh.outflow", true);
    return mc;
}

Params params_from(const Config& cfg) {
    Params p;
    p.lambda = cfg.get_double("params.lambda", 0.0);
    p.omega_n_sq = cfg.get_double("params.omega_n_sq", 1.0);
    p.varpi = cfg.get_double("params.varpi", 1.0);
    validate(p);
    return p;
}

SteadyOptions steady_opts_from(const Config& cfg, bool sensitivity = false) {
    SteadyOptions so;
    so.tol = cfg.get_double("steady.tol", 1e-10);
    so.max_iter = cfg.get_int("steady.max_iter", 30);
    so.compute_sensitivity = cfg.get_bool("steady.sensitivity", sensitivity);
    return so;
}

std::vector<double> parse_double_list(const std::string& text,
                                      const std::string& key) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(tok, &pos));
            if (pos != tok.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ValidationError("config key '" + key +
                                  "': not a number list: " + text);
        }
    }
    if (out.empty())
        throw ValidationError("config key '" + key + "': empty list");
    return out;
}

json json_threshold(const ThresholdValue& tv) {
    json j;
    j["finite"] = tv.finite;
    if (tv.finite) j["value"] = tv.value;
    return j;
}

json json_complex(Cplx z) {
    return json{{"re", z.real()}, {"im", z.imag()}};
}

const char* class_name(BranchClass c) {
    switch (c) {
    case BranchClass::supercritical: return "supercritical";
    case BranchClass::subcritical: return "subcritical";
    default: return "degenerate";
    }
}

json steady_summary(const SteadyState& s, const OperatorSet& ops) {
    const auto [nd, ng] = strain_norm(ops, s.u0);
    json j;
    j["lambda"] = s.lambda;
    j["chi0"] = {s.chi0[0], s.chi0[1]};
    j["residual"] = s.residual;
    j["norm_D"] = nd;
    j["norm_grad"] = ng;
    return j;
}

SteadyState run_steady_solve(const Context& ctx, const OperatorSet& ops,
                             const Params& p, bool sensitivity = false) {
    return solve_steady(p, ops, nullptr, steady_opts_from(ctx.cfg, sensitivity));
}

json thresholds_summary(const SteadyState& s, const OperatorSet& ops,
                        const Params& p) {
    const Thresholds th = compute_thresholds(s, ops);
    json j;
    j["lambda1"] = json_threshold(th.lambda1);
    j["lambda2"] = json_threshold(th.lambda2);
    j["gamma"] = th.gamma(p.lambda);
    return j;
}

json spectrum_summary(const Context& ctx, const SteadyState& s,
                      const OperatorSet& ops, const Params& p) {
    const auto L = assemble_linearization(s, p, ops);
    std::vector<Cplx> shifts;
    for (double im : parse_double_list(
             ctx.cfg.get_string("spectrum.shifts", "0"), "spectrum.shifts"))
        shifts.emplace_back(0.0, im);
    const int n = ctx.cfg.get_int("spectrum.n_eigs", 8);
    auto pairs = spectrum_at_shifts(L, shifts, n);
    std::sort(pairs.begin(), pairs.end(),
              [](const EigenPair& a, const EigenPair& b) {
                  return a.nu.real() != b.nu.real()
                             ? a.nu.real() < b.nu.real()
                             : a.nu.imag() < b.nu.imag();
              });
    json j;
    j["eigenvalues"] = json::array();
    for (const auto& e : pairs) {
        json je = json_complex(e.nu);
        je["residual"] = e.residual;
        j["eigenvalues"].push_back(je);
    }
    // non-resonance report anchored at the least-damped oscillatory pair
    int best = -1;
    double best_re = std::numeric_limits<double>::infinity();
    for (int i = 0; i < (int)pairs.size(); ++i)
        if (pairs[i].nu.imag() > 1e-6 &&
            std::abs(pairs[i].nu.real()) < best_re) {
            best_re = std::abs(pairs[i].nu.real());
            best = i;
        }
    if (best >= 0) {
        std::vector<Cplx> values;
        for (const auto& e : pairs) {
            values.push_back(e.nu);
            values.push_back(std::conj(e.nu));
        }
        const H2Report h2 =
            check_H2prime(values, pairs[best].nu,
                          ctx.cfg.get_int("spectrum.h2_kmax", 8),
                          ctx.cfg.get_double("spectrum.h2_threshold", 1e-6));
        json jh;
        jh["anchor"] = json_complex(pairs[best].nu);
        jh["ok"] = h2.ok;
        jh["simplicity_margin"] = h2.simplicity_margin;
        jh["first_failure_k"] = h2.first_failure_k;
        jh["harmonic_distance"] = h2.harmonic_distance;
        j["h2"] = jh;
    }
    return j;
}

CrossingOptions crossing_opts_from(const Config& cfg) {
    CrossingOptions co;
    co.n_eigs = cfg.get_int("crossing.n_eigs", 8);
    co.re_tol = cfg.get_double("crossing.re_tol", 1e-8);
    co.max_bisect = cfg.get_int("crossing.max_bisect", 100);
    co.h2_kmax = cfg.get_int("crossing.h2_kmax", 8);
    return co;
}

BranchOptions branch_opts_from(const Config& cfg) {
    BranchOptions bo;
    bo.K_trunc = cfg.get_int("branch.K_trunc", 6);
    bo.tol = cfg.get_double("branch.tol", 1e-11);
    bo.max_iter = cfg.get_int("branch.max_iter", 30);
    bo.gmres_maxit = cfg.get_int("branch.gmres_maxit", 300);
    bo.precond_shift = cfg.get_double("branch.precond_shift", 0.05);
    return bo;
}

json crossing_summary(const HopfPoint& hp) {
    json j;
    j["lambda0"] = hp.lambda0;
    j["zeta0"] = hp.zeta0;
    j["nu"] = json_complex(hp.eig.nu);
    j["nu_prime"] = json_complex(hp.crossing.nu_prime);
    j["h1_ok"] = hp.h1.ok;
    j["h1_sigma_min"] = hp.h1.sigma_min;
    j["h2_ok"] = hp.h2.ok;
    j["frozen_base"] = hp.frozen_base;
    return j;
}

json branch_summary(const Branch& br) {
    json j;
    j["mu2"] = br.mu2;
    j["fit_residual"] = br.fit_residual;
    j["classification"] = class_name(br.classification);
    j["limit_ratio_small"] = br.limit_ratio_small;
    j["limit_ratio_smaller"] = br.limit_ratio_smaller;
    j["truncated"] = br.truncated;
    if (!br.termination.empty()) j["termination"] = br.termination;
    j["points"] = json::array();
    for (const auto& pt : br.points) {
        json jp;
        jp["epsilon"] = pt.epsilon;
        jp["mu"] = pt.mu;
        jp["zeta"] = pt.zeta;
        jp["iterations"] = pt.iterations;
        jp["residual_newton"] = pt.residuals.newton;
        jp["residual_side1"] = pt.residuals.side1;
        jp["residual_side2"] = pt.residuals.side2;
        jp["residual_time_domain"] = pt.residuals.time_domain;
        json norms = json::array();
        for (int k = 1; pt.w.has(k); ++k) norms.push_back(pt.w.at(k).w.norm());
        jp["mode_norms"] = norms;
        j["points"].push_back(jp);
    }
    return j;
}

/// Crossing + branch trace shared by `branch` and `pipeline`.
std::pair<HopfPoint, Branch> run_branch_trace(const Context& ctx,
                                              const OperatorSet& ops,
                                              const Params& p) {
    const double lo = ctx.cfg.require_double("branch.lambda_lo");
    const double hi = ctx.cfg.require_double("branch.lambda_hi");
    CrossingOptions co = crossing_opts_from(ctx.cfg);
    if (ctx.cfg.has("branch.frozen_lambda")) {
        Params pf = p;
        pf.lambda = ctx.cfg.require_double("branch.frozen_lambda");
        co.frozen_base = solve_steady(pf, ops, nullptr, steady_opts_from(ctx.cfg));
    }
    const HopfPoint hp = locate_crossing(lo, hi, p, ops, co);
    const auto eps = parse_double_list(
        ctx.cfg.get_string("branch.eps", "0.01,-0.01,0.02,-0.02,0.04,-0.04"),
        "branch.eps");
    const Branch br = trace_branch(hp, p, ops, eps, branch_opts_from(ctx.cfg));
    return {hp, br};
}

// ---- subcommand drivers ----------------------------------------------------

int cmd_steady(const Context& ctx) {
    const Mesh m = build_mesh(mesh_from(ctx.cfg));
    const Params p = params_from(ctx.cfg);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = run_steady_solve(ctx, ops, p);
    save_field(ctx.path("steady_u0.bin"), m, s.u0);
    save_pressure(ctx.path("steady_p0.bin"), m, s.p0);
    if (ctx.cfg.get_bool("steady.csv", false))
        export_field_csv(ctx.path("steady_u0.csv"), m, s.u0);
    ctx.report("steady.json", steady_summary(s, ops));
    return 0;
}

int cmd_thresholds(const Context& ctx) {
    const Mesh m = build_mesh(mesh_from(ctx.cfg));
    const Params p = params_from(ctx.cfg);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = run_steady_solve(ctx, ops, p);
    json j = thresholds_summary(s, ops, p);
    j["steady"] = steady_summary(s, ops);
    ctx.report("thresholds.json", j);
    return 0;
}

int cmd_evolve(const Context& ctx) {
    const Mesh m = build_mesh(mesh_from(ctx.cfg));
    const Params p = params_from(ctx.cfg);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = run_steady_solve(ctx, ops, p);

    const double T = ctx.cfg.get_double("evolve.t_final", 10.0);
    const double dt = ctx.cfg.get_double("evolve.dt", 0.01);
    const double amp = ctx.cfg.get_double("evolve.amplitude", 1e-3);
    const bool lin = ctx.cfg.get_bool("evolve.linearized", false);
    const unsigned seed = (unsigned)ctx.cfg.get_int("seed", 0);

    EvolState st = EvolState::zero(m);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int i = 0; i < st.u.z.size(); ++i) st.u.z[i] = dist(rng);
    st.chi = Eigen::Vector2d(dist(rng), dist(rng));
    const double n0 = std::sqrt(st.u.z.squaredNorm() + st.chi.squaredNorm());
    st.u.z *= amp / n0;
    st.chi *= amp / n0;

    const EvolveResult res = evolve(st, s, p, ops, T, dt, lin);
    atomic_write(ctx.path("evolve.csv"), res.log.to_csv());

    json j;
    j["t_final"] = T;
    j["dt"] = dt;
    j["steps"] = res.log.size();
    j["nan_aborted"] = res.nan_aborted;
    if (!res.log.E.empty()) {
        j["energy_initial"] = res.log.E.front();
        j["energy_final"] = res.log.E.back();
    }
    if (ctx.cfg.get_bool("evolve.report_decay", false)) {
        const Thresholds th = compute_thresholds(s, ops);
        const DecayReport dr = decay_metrics(res.log, p, th);
        json jd;
        jd["decayed"] = dr.decayed;
        jd["monotone_tail"] = dr.monotone_tail;
        jd["rate"] = dr.rate;
        jd["gamma"] = dr.gamma;
        jd["gamma_positive"] = dr.gamma_positive;
        j["decay"] = jd;
    }
    ctx.report("evolve.json", j);
    return 0;
}

int cmd_spectrum(const Context& ctx) {
    const Mesh m = build_mesh(mesh_from(ctx.cfg));
    const Params p = params_from(ctx.cfg);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = run_steady_solve(ctx, ops, p);
    ctx.report("spectrum.json", spectrum_summary(ctx, s, ops, p));
    return 0;
}

int cmd_resonance(const Context& ctx) {
    const Mesh m = build_mesh(mesh_from(ctx.cfg));
    const Params p = params_from(ctx.cfg);
    const OperatorSet ops = build_operators(m, p.varpi);

    const double zeta0 =
        ctx.cfg.get_double("resonance.zeta0", std::sqrt(p.omega_n_sq));
    const int k_min = ctx.cfg.get_int("resonance.k_min", 1);
    const int k_max = ctx.cfg.get_int("resonance.k_max", 16);
    if (k_min < 1 || k_max < k_min)
        throw ValidationError("resonance: need 1 <= k_min <= k_max");
    std::vector<int> ks;
    for (int k = k_min; k <= k_max; ++k) ks.push_back(k);
    const auto varpis = parse_double_list(
        ctx.cfg.get_string("resonance.varpis", "0.5"), "resonance.varpis");

    const auto rows = resonance_scan(ops, ks, varpis, zeta0, p);
    atomic_write(ctx.path("resonance.csv"), resonance_csv(rows));

    json j;
    j["zeta0"] = zeta0;
    j["lambda0"] = p.lambda;
    j["rows"] = json::array();
    for (const auto& r : rows)
        j["rows"].push_back(json{{"k", r.k},
                                 {"varpi", r.varpi},
                                 {"sigma_min", r.sigma_min},
                                 {"cond", r.cond}});
    ctx.report("resonance.json", j);
    return 0;
}

int cmd_periodic(const Context& ctx) {
    const Mesh m = build_mesh(mesh_from(ctx.cfg));
    const Params p = params_from(ctx.cfg);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = run_steady_solve(ctx, ops, p);

    PeriodicOptions po;
    po.K_trunc = ctx.cfg.get_int("periodic.K_trunc", 16);
    po.tol = ctx.cfg.get_double("periodic.tol", 1e-11);
    po.max_iter = ctx.cfg.get_int("periodic.max_iter", 40);
    const double zeta_guess =
        ctx.cfg.get_double("periodic.zeta_guess", std::sqrt(p.omega_n_sq));

    const PeriodicSolution sol =
        solve_periodic_nonlinear(s, p, ops, zeta_guess, nullptr, po);

    json j;
    j["trivial"] = sol.trivial;
    j["zeta"] = sol.zeta;
    j["amplitude"] = sol.amplitude;
    j["iterations"] = sol.iterations;
    j["residual"] = sol.residual;
    json norms = json::array();
    for (int k = 1; sol.modes.has(k); ++k) norms.push_back(sol.modes.at(k).w.norm());
    j["mode_norms"] = norms;
    ctx.report("periodic.json", j);
    return 0;
}

int cmd_branch(const Context& ctx) {
    const Mesh m = build_mesh(mesh_from(ctx.cfg));
    const Params p = params_from(ctx.cfg);
    const OperatorSet ops = build_operators(m, p.varpi);
    const auto [hp, br] = run_branch_trace(ctx, ops, p);
    json j = branch_summary(br);
    j["crossing"] = crossing_summary(hp);
    ctx.report("branch.json", j);
    return 0;
}

int cmd_pipeline(const Context& ctx) {
    const Mesh m = build_mesh(mesh_from(ctx.cfg));
    const Params p = params_from(ctx.cfg);
    const OperatorSet ops = build_operators(m, p.varpi);

    json j;
    const SteadyState s = run_steady_solve(ctx, ops, p);
    j["steady"] = steady_summary(s, ops);
    j["thresholds"] = thresholds_summary(s, ops, p);
    const auto [hp, br] = run_branch_trace(ctx, ops, p);
    j["crossing"] = crossing_summary(hp);
    j["branch"] = branch_summary(br);
    ctx.report("pipeline.json", j);
    return 0;
}

} // namespace

int run(const std::vector<std::string>& args) {
    if (args.empty()) {
        std::cerr << "usage: viv <subcommand> [--config FILE] [--out DIR] "
                     "[--set key=value ...]\n  subcommands:";
        for (const auto& s : kSubcommands) std::cerr << " " << s;
        std::cerr << "\n";
        return 64;
    }
    const std::string sub = args[0];
    if (std::find(kSubcommands.begin(), kSubcommands.end(), sub) ==
        kSubcommands.end()) {
        std::cerr << "unknown subcommand: " << sub << "\n";
        return 64;
    }

    std::string config_path, out_flag;
    std::vector<std::string> overrides;
    CLI::App app{"coupled flow-body toolkit", "viv " + sub};
    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--out", out_flag, "output directory");
    app.add_option("--set", overrides, "override: key=value");
    try {
        app.parse(std::vector<std::string>(args.rbegin(), args.rend() - 1));
    } catch (const CLI::ParseError& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    }

    try {
        Context ctx;
        if (!config_path.empty()) ctx.cfg = Config::parse_file(config_path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ValidationError("override must be key=value: " + kv);
            ctx.cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }

        ctx.out_dir = out_flag;
        if (ctx.out_dir.empty())
            if (const char* env = std::getenv("VIV_OUT_DIR")) ctx.out_dir = env;
        if (ctx.out_dir.empty())
            ctx.out_dir = ctx.cfg.get_string("output.dir", ".");
        std::filesystem::create_directories(ctx.out_dir);

        int rc;
        if (sub == "steady") rc = cmd_steady(ctx);
        else if (sub == "thresholds") rc = cmd_thresholds(ctx);
        else if (sub == "evolve") rc = cmd_evolve(ctx);
        else if (sub == "spectrum") rc = cmd_spectrum(ctx);
        else if (sub == "resonance") rc = cmd_resonance(ctx);
        else if (sub == "periodic") rc = cmd_periodic(ctx);
        else if (sub == "branch") rc = cmd_branch(ctx);
        else rc = cmd_pipeline(ctx);

        // effective-config echo: rerunning the same subcommand from this file
        // reproduces every numeric output bit-identically
        atomic_write(ctx.path("effective.cfg"), ctx.cfg.to_string());
        return rc;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return 3;
    }
}

} // namespace viv::cli
