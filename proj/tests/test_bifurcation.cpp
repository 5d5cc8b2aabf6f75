#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "viv/bifurcation.hpp"
#include "viv/steady.hpp"

#include <cmath>
#include <complex>

using namespace viv;

namespace {

MeshConfig tiny_box() {
    MeshConfig cfg;
    cfg.x0 = -1.5;
    cfg.x1 = 1.5;
    cfg.y0 = -1.5;
    cfg.y1 = 1.5;
    cfg.h = 0.25;
    cfg.outflow = true;
    return cfg;
}

Params light_params(double lambda) {
    Params p;
    p.lambda = lambda;
    p.omega_n_sq = 25.0;
    p.varpi = 0.05;
    p.dim = 2;
    return p;
}

struct Fixture {
    Mesh mesh;
    Params params;
    OperatorSet ops;
    SteadyState base;
    HopfPoint hopf;

    Fixture()
        : mesh(build_mesh(tiny_box())),
          params(light_params(0.6)),
          ops(build_operators(mesh, params.varpi)),
          base(solve_steady(params, ops)) {
        CrossingOptions co;
        co.frozen_base = base;
        hopf = locate_crossing(20.0, 30.0, params, ops, co);
    }
};

const Fixture& fix() {
    static Fixture f;
    return f;
}

/// Smallest decay rate of the frozen-base pencil at a given lambda.
double frozen_decay_rate(const Fixture& f, double lambda) {
    SteadyState s = f.base;
    s.lambda = lambda;
    Params p = f.params;
    p.lambda = lambda;
    const auto L = assemble_linearization(s, p, f.ops);
    const auto es =
        spectrum_at_shifts(L, {Cplx(0.0, 0.0), Cplx(0.0, f.hopf.zeta0)}, 8);
    double mr = std::numeric_limits<double>::infinity();
    for (const auto& e : es) mr = std::min(mr, e.nu.real());
    return mr;
}

/// Decay rate of the pencil eigenvalue tracking a given reference (the member
/// of the spectrum nearest nu_ref), used to follow the crossing pair itself.
double tracked_decay_rate(const Fixture& f, double lambda, Cplx nu_ref) {
    SteadyState s = f.base;
    s.lambda = lambda;
    Params p = f.params;
    p.lambda = lambda;
    const auto L = assemble_linearization(s, p, f.ops);
    const auto es = spectrum_at_shifts(L, {Cplx(0.0, nu_ref.imag())}, 8);
    double best = std::numeric_limits<double>::infinity();
    Cplx nu;
    for (const auto& e : es)
        if (std::abs(e.nu - nu_ref) < best) {
            best = std::abs(e.nu - nu_ref);
            nu = e.nu;
        }
    return nu.real();
}

/// Full state vector of mode k of a branch point ([z; chi; p] stacking).
CVec mode_state(const Mesh& m, int np, const BranchPoint& pt, int k) {
    const int nz = m.nz();
    CVec x = CVec::Zero(nz + 2 + np);
    const ModeSolution& ms = pt.w.at(k);
    x.head(nz) = ms.w;
    x[nz] = ms.xi[0];
    x[nz + 1] = ms.xi[1];
    x.tail(np) = ms.q;
    return x;
}

} // namespace

TEST_CASE("locate_crossing certifies a simple oscillatory crossing") {
    const Fixture& f = fix();
    const HopfPoint& hp = f.hopf;

    CHECK(hp.frozen_base);
    CHECK(hp.lambda0 > 20.0);
    CHECK(hp.lambda0 < 30.0);
    CHECK(hp.zeta0 > 0.0);
    CHECK(std::abs(hp.eig.nu.real()) <= 1e-8);
    CHECK(hp.eig.nu.imag() == doctest::Approx(hp.zeta0));
    CHECK(hp.eig.residual <= 1e-10);
    CHECK(hp.h1.ok);
    CHECK(hp.h2.ok);
    CHECK(hp.h2.simplicity_margin > 1e-6);
    CHECK(hp.state.lambda == doctest::Approx(hp.lambda0));
    // the stored sensitivity of a frozen base is identically zero
    REQUIRE(hp.state.du0_dlambda.has_value());
    CHECK(hp.state.du0_dlambda->z.norm() == 0.0);

    // cross-check: the pencil at lambda0 really has an eigenvalue at i zeta0
    const double m0 = frozen_decay_rate(f, hp.lambda0);
    CHECK(std::abs(m0) <= 1e-7);

    // crossing speed against a secant of the decay rate through the crossing
    const double dl = 0.25;
    const double secant = (tracked_decay_rate(f, hp.lambda0 + dl, hp.eig.nu) -
                           tracked_decay_rate(f, hp.lambda0 - dl, hp.eig.nu)) /
                          (2.0 * dl);
    CHECK(hp.crossing.nu_prime.real() ==
          doctest::Approx(secant).epsilon(0.05));
    // internal quadrature cross-check of the frame pairing
    CHECK(std::abs(hp.crossing.a4_real - hp.crossing.pairing.real()) <= 1e-8);
    CHECK(hp.crossing.nu_prime.real() < 0.0); // destabilizes with lambda
}

TEST_CASE("locate_crossing error paths") {
    const Fixture& f = fix();

    CHECK_THROWS_AS(locate_crossing(5.0, 5.0, f.params, f.ops),
                    ValidationError);

    SUBCASE("no sign change over a stable interval") {
        CrossingOptions co;
        co.frozen_base = f.base;
        CHECK_THROWS_AS(locate_crossing(0.6, 5.0, f.params, f.ops, co),
                        SolverError);
    }
    SUBCASE("physical family crosses through a real eigenvalue") {
        // The continuation family on this coarse box destabilizes via a real
        // (steady-type) eigenvalue near lambda ~ 7.2.
        CHECK_THROWS_AS(locate_crossing(5.0, 10.0, f.params, f.ops),
                        SolverError);
    }
}

TEST_CASE("zero amplitude returns the trivial point") {
    const Fixture& f = fix();
    const BranchPoint pt = lyapunov_schmidt_solve(f.hopf, f.params, f.ops, 0.0);
    CHECK(pt.epsilon == 0.0);
    CHECK(pt.mu == 0.0);
    CHECK(pt.zeta == doctest::Approx(f.hopf.zeta0));
    CHECK(pt.v.z.norm() == 0.0);
    CHECK(pt.eta_bar.norm() == 0.0);
    CHECK(pt.mean_p.norm() == 0.0);
    CHECK(pt.w.modes.empty());
    CHECK(pt.iterations == 0);
}

TEST_CASE("single branch point: convergence, side conditions, conjugacy") {
    const Fixture& f = fix();
    const double eps = 0.02;
    const BranchPoint pt = lyapunov_schmidt_solve(f.hopf, f.params, f.ops, eps);
    const int np = (int)f.base.p0.p.size();

    CHECK(pt.iterations <= 5);
    CHECK(pt.residuals.newton <= 1e-9);
    CHECK(pt.residuals.side1 <= 1e-10);
    CHECK(pt.residuals.side2 <= 1e-10);
    CHECK(pt.residuals.time_domain < 1e-6);
    CHECK(pt.zeta > 0.0);

    // stored modes come in conjugate pairs
    for (int k = 1; k <= 6; ++k) {
        REQUIRE(pt.w.has(k));
        REQUIRE(pt.w.has(-k));
        CHECK((pt.w.at(-k).w - pt.w.at(k).w.conjugate()).norm() == 0.0);
        CHECK((pt.w.at(-k).q - pt.w.at(k).q.conjugate()).norm() == 0.0);
    }

    // independent re-evaluation of the amplitude/phase pairings: the
    // oscillatory loop against the dual loops of the adjoint frame
    const int nq = 128; // different sampling than the solver uses
    const Vec& Bd = f.hopf.frame.Bdiag;
    double s1 = 0.0, s2 = 0.0;
    for (int j = 0; j < nq; ++j) {
        const double tau = 2.0 * M_PI * j / nq;
        CVec osc = CVec::Zero(Bd.size());
        for (int k = 1; k <= 6; ++k)
            osc += 2.0 * mode_state(f.mesh, np, pt, k) * std::exp(Cplx(0.0, k * tau));
        const Vec wz = osc.real();
        const CVec ye = f.hopf.frame.y0 * std::exp(Cplx(0.0, tau));
        s1 += wz.dot(Bd.cwiseProduct(2.0 * M_PI * ye.real()));
        s2 += wz.dot(Bd.cwiseProduct(2.0 * M_PI * ye.imag()));
    }
    CHECK(std::abs(s1 / nq - eps) <= 1e-10);
    CHECK(std::abs(s2 / nq) <= 1e-10);

    // leading order of mode 1 is the conjugate frame vector at amplitude eps
    const CVec lead = (0.5 * eps) * f.hopf.frame.v0.x.conjugate();
    const CVec x1 = mode_state(f.mesh, np, pt, 1);
    double acc = 0.0;
    for (int i = 0; i < Bd.size(); ++i) acc += Bd[i] * std::norm(x1[i] - lead[i]);
    CHECK(std::sqrt(acc) / eps < 1e-3);
}

TEST_CASE("orbit is unique up to the pinned phase") {
    const Fixture& f = fix();
    const double eps = 0.02;
    const BranchPoint pt = lyapunov_schmidt_solve(f.hopf, f.params, f.ops, eps);

    // restart from a phase-rotated copy of the converged orbit; the side
    // conditions must pull it back to the identical representative
    BranchPoint rot = pt;
    const Cplx ph = std::exp(Cplx(0.0, 0.3));
    for (auto& [k, ms] : rot.w.modes) {
        const Cplx fac = std::pow(k > 0 ? ph : std::conj(ph), std::abs(k));
        ms.w *= fac;
        ms.q *= fac;
        ms.xi *= fac;
    }
    const BranchPoint pt2 = lyapunov_schmidt_solve(f.hopf, f.params, f.ops, eps, &rot);

    CHECK(std::abs(pt2.mu - pt.mu) <= 1e-9 * (1.0 + std::abs(pt.mu)));
    CHECK(std::abs(pt2.zeta - pt.zeta) <= 1e-9);
    for (int k = 1; k <= 3; ++k)
        CHECK((pt2.w.at(k).w - pt.w.at(k).w).norm() <= 1e-8);
}

TEST_CASE("lambda-inhomogeneous (unfrozen) mean equation stays consistent") {
    const Fixture& f = fix();
    HopfPoint hp = f.hopf;
    hp.frozen_base = false; // activates the mu-proportional mean forcing
    const BranchPoint pt = lyapunov_schmidt_solve(hp, f.params, f.ops, 0.01);
    CHECK(pt.residuals.newton <= 1e-9);
    CHECK(pt.residuals.side1 <= 1e-10);
    CHECK(pt.residuals.side2 <= 1e-10);
    CHECK(pt.residuals.time_domain < 1e-6);
    // the forcing shifts the branch relative to the frozen variant
    const BranchPoint ref = lyapunov_schmidt_solve(f.hopf, f.params, f.ops, 0.01);
    CHECK(std::abs(pt.mu - ref.mu) > 1e-7);
}

TEST_CASE("branch trace: parity, quadratic law, limits, classification") {
    const Fixture& f = fix();
    const std::vector<double> grid{0.01, -0.01, 0.02, -0.02, 0.04, -0.04};
    const Branch br = trace_branch(f.hopf, f.params, f.ops, grid);

    REQUIRE(br.points.size() == 6);
    CHECK_FALSE(br.truncated);
    CHECK(br.termination.empty());
    for (std::size_t i = 1; i < br.points.size(); ++i)
        CHECK(br.points[i - 1].epsilon < br.points[i].epsilon);

    // warm-started points converge quickly
    for (const auto& pt : br.points) {
        CHECK(pt.iterations <= 5);
        CHECK(pt.residuals.time_domain < 1e-6);
    }

    // parity: mu and zeta are even in epsilon
    for (const auto& pt : br.points) {
        const auto mirror = std::find_if(
            br.points.begin(), br.points.end(), [&](const BranchPoint& q) {
                return q.epsilon == -pt.epsilon;
            });
        REQUIRE(mirror != br.points.end());
        CHECK(std::abs(mirror->mu - pt.mu) <= 1e-6 * (1.0 + std::abs(pt.mu)));
        CHECK(std::abs(mirror->zeta - pt.zeta) <= 1e-8 * (1.0 + pt.zeta));
    }

    // quadratic law mu ~ mu2 eps^2 with small relative misfit
    CHECK(br.mu2 > 0.0);
    CHECK(br.fit_residual < 0.05 * std::abs(br.mu2));
    for (const auto& pt : br.points)
        CHECK(pt.mu == doctest::Approx(br.mu2 * pt.epsilon * pt.epsilon)
                           .epsilon(0.05));

    // vanishing small-amplitude limit, improving as eps shrinks
    CHECK(br.limit_ratio_smaller < br.limit_ratio_small);
    CHECK(br.limit_ratio_small < 1e-3);

    CHECK(br.classification == BranchClass::supercritical);
    CHECK(classify_branch(br) == BranchClass::supercritical);
}

TEST_CASE("trace_branch input validation") {
    const Fixture& f = fix();
    CHECK_THROWS_AS(trace_branch(f.hopf, f.params, f.ops, {}), ValidationError);
    CHECK_THROWS_AS(trace_branch(f.hopf, f.params, f.ops, {0.01, 0.02, -0.01}),
                    ValidationError);
    CHECK_THROWS_AS(trace_branch(f.hopf, f.params, f.ops, {0.01, 0.0, -0.01}),
                    ValidationError);
}

TEST_CASE("fit and classification on synthetic branches") {
    auto synthetic = [](const std::vector<double>& eps,
                        auto mu_of_eps) {
        Branch br;
        for (double e : eps) {
            BranchPoint p;
            p.epsilon = e;
            p.mu = mu_of_eps(e);
            br.points.push_back(p);
        }
        const auto [m2, res] = fit_mu2(br.points);
        br.mu2 = m2;
        br.fit_residual = res;
        return br;
    };
    const std::vector<double> grid{0.01, 0.02, 0.04, -0.01, -0.02, -0.04};

    SUBCASE("exact supercritical law") {
        const Branch br = synthetic(grid, [](double e) { return 2.0 * e * e; });
        CHECK(br.mu2 == doctest::Approx(2.0).epsilon(1e-12));
        CHECK(br.fit_residual <= 1e-12);
        CHECK(classify_branch(br) == BranchClass::supercritical);
    }
    SUBCASE("subcritical with a quartic correction") {
        const Branch br = synthetic(
            grid, [](double e) { return -e * e + 0.001 * e * e * e * e; });
        CHECK(br.mu2 == doctest::Approx(-1.0).epsilon(1e-4));
        CHECK(classify_branch(br) == BranchClass::subcritical);
    }
    SUBCASE("noise-level mu is degenerate") {
        int i = 0;
        const Branch br = synthetic(grid, [&](double) {
            return (i++ % 2 ? 1.0 : -1.0) * 1e-9;
        });
        CHECK(classify_branch(br) == BranchClass::degenerate);
    }
    SUBCASE("too few amplitudes per sign") {
        const Branch br =
            synthetic({0.01, 0.02, -0.01, -0.02}, [](double e) { return e * e; });
        CHECK_THROWS_AS(classify_branch(br), ValidationError);
    }
    SUBCASE("fit rejects an all-trivial point set") {
        std::vector<BranchPoint> pts(1);
        CHECK_THROWS_AS(fit_mu2(pts), ValidationError);
    }
}

TEST_CASE("grid-halved classification is stable") {
    const Fixture& f = fix();
    const Branch coarse =
        trace_branch(f.hopf, f.params, f.ops, {0.01, -0.01, 0.02, -0.02, 0.04, -0.04});
    const Branch fine =
        trace_branch(f.hopf, f.params, f.ops,
                     {0.005, -0.005, 0.01, -0.01, 0.02, -0.02});
    CHECK(coarse.classification == fine.classification);
    CHECK(fine.mu2 == doctest::Approx(coarse.mu2).epsilon(0.02));
}
