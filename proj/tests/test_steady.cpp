#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "viv/operators.hpp"
#include "viv/steady.hpp"

#include <Eigen/Dense>

#include <random>

using namespace viv;

namespace {

MeshConfig small_box(bool outflow = true) {
    MeshConfig cfg;
    cfg.x0 = -3.0;
    cfg.x1 = 6.0;
    cfg.y0 = -3.0;
    cfg.y1 = 3.0;
    cfg.h = 0.25;
    cfg.outflow = outflow;
    return cfg;
}

MeshConfig tiny_box(bool outflow) {
    MeshConfig cfg;
    cfg.x0 = -1.5;
    cfg.x1 = 1.5;
    cfg.y0 = -1.5;
    cfg.y1 = 1.5;
    cfg.h = 0.25;
    cfg.outflow = outflow;
    return cfg;
}

Params base_params(double lambda) {
    Params p;
    p.lambda = lambda;
    p.omega_n_sq = 2.0;
    p.varpi = 0.8;
    p.dim = 2;
    return p;
}

/// Mirror a coupled field about the centerline y = 0 (box must be symmetric).
Vec mirror_y(const Mesh& m, const Vec& z) {
    Vec out = Vec::Zero(m.nz());
    for (int j = 0; j < m.ny; ++j) {
        for (int i = 0; i <= m.nx; ++i) {
            const int f = m.ufi(i, j);
            const int g = m.ufi(i, m.ny - 1 - j);
            if (m.ukind[f] == FaceKind::Free) out[m.udof[f]] = z[m.udof[g]];
        }
    }
    for (int j = 0; j <= m.ny; ++j) {
        for (int i = 0; i < m.nx; ++i) {
            const int f = m.vfi(i, j);
            const int g = m.vfi(i, m.ny - j);
            if (m.vkind[f] == FaceKind::Free)
                out[m.nu + m.vdof[f]] = -z[m.nu + m.vdof[g]];
        }
    }
    out[m.nf()] = z[m.nf()];
    out[m.nf() + 1] = -z[m.nf() + 1];
    return out;
}

/// Dense generalized eigenvalue oracle: largest theta of A x = theta S x over
/// the kernel of D.
double dense_constrained_max_eig(const SpMat& A, const SpMat& S, const SpMat& D) {
    const Eigen::MatrixXd Dd(D);
    const Eigen::MatrixXd K = Eigen::FullPivLU<Eigen::MatrixXd>(Dd).kernel();
    const Eigen::MatrixXd Ak = K.transpose() * Eigen::MatrixXd(A) * K;
    const Eigen::MatrixXd Sk = K.transpose() * Eigen::MatrixXd(S) * K;
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(
        0.5 * (Ak + Ak.transpose()), 0.5 * (Sk + Sk.transpose()));
    return es.eigenvalues().maxCoeff();
}

} // namespace

TEST_CASE("steady: Stokes limit solves in one Newton step") {
    const Mesh m = build_mesh(small_box());
    const Params p = base_params(0.0);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = solve_steady(p, ops);

    CHECK(s.residual <= 1e-11);
    CHECK((ops.D * s.u0.z).lpNorm<Eigen::Infinity>() <= 1e-10);
    CHECK(s.u0.hat().isApprox(Eigen::Vector2d(1.0, 0.0), 1e-14));

    // closure of the spring equation
    const Eigen::Vector2d t = traction_integral(ops, s.u0, s.p0);
    const Eigen::Vector2d closure = p.omega_n_sq * s.chi0 + p.varpi * t;
    CHECK(closure.norm() <= 1e-10 * std::max(1.0, t.norm()));

    // symmetric geometry: elongation aligned with the stream
    CHECK(std::abs(s.chi0[1]) <= 1e-8 * s.chi0.norm());
    CHECK(s.chi0.norm() > 1e-3);
}

TEST_CASE("steady: drag is stable under grid refinement") {
    const Params p = base_params(0.0);
    MeshConfig coarse = small_box();
    MeshConfig fine = small_box();
    fine.h = 0.125;

    const OperatorSet oc = build_operators(build_mesh(coarse), p.varpi);
    const OperatorSet of = build_operators(build_mesh(fine), p.varpi);
    const SteadyState sc = solve_steady(p, oc);
    const SteadyState sf = solve_steady(p, of);

    const double drag_c = traction_integral(oc, sc.u0, sc.p0)[0];
    const double drag_f = traction_integral(of, sf.u0, sf.p0)[0];
    CHECK(drag_c != 0.0);
    CHECK(std::abs(drag_c - drag_f) <= 0.10 * std::abs(drag_f));
}

TEST_CASE("steady: nonlinear solve, symmetry, and residual") {
    const Mesh m = build_mesh(small_box());
    const Params p = base_params(0.5);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = solve_steady(p, ops);

    CHECK(s.residual <= 1e-10);
    const Vec r = steady_residual(p, ops, s.u0.z, s.p0.p);
    CHECK(r.norm() <= 1e-10);

    // the discrete operator is mirror symmetric, so the solution is too
    const Vec zm = mirror_y(m, s.u0.z);
    CHECK((zm - s.u0.z).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(std::abs(s.chi0[1]) <= 1e-8 * s.chi0.norm());
}

TEST_CASE("steady: continuation matches direct solves and carries sensitivity") {
    const Mesh m = build_mesh(small_box());
    const Params p = base_params(0.0);
    const OperatorSet ops = build_operators(m, p.varpi);

    const std::vector<double> lams{0.0, 0.25, 0.5, 0.75, 1.0};
    const auto branch = continue_steady(p, ops, lams);
    REQUIRE(branch.size() == lams.size());
    for (const auto& s : branch) {
        CHECK(s.residual <= 1e-10);
        REQUIRE(s.du0_dlambda.has_value());
    }

    Params p1 = base_params(1.0);
    const SteadyState direct = solve_steady(p1, ops);
    CHECK((direct.u0.z - branch.back().u0.z).norm() <= 1e-8);

    // finite-difference check of du0/dlambda at lambda = 0.5
    const SteadyState& mid = branch[2];
    const double delta = 1e-3;
    Params pp = base_params(0.5 + delta);
    Params pm = base_params(0.5 - delta);
    SteadyOptions tight;
    tight.tol = 1e-12;
    const SteadyState sp = solve_steady(pp, ops, &mid, tight);
    const SteadyState sm = solve_steady(pm, ops, &mid, tight);
    const Vec fd = (sp.u0.z - sm.u0.z) / (2.0 * delta);
    const Vec& du = mid.du0_dlambda->z;
    CHECK((fd - du).norm() <= 1e-4 * du.norm());
}

TEST_CASE("thresholds: dense oracle and ordering on the coarse mesh") {
    for (const bool outflow : {true, false}) {
        CAPTURE(outflow);
        const Mesh m = build_mesh(tiny_box(outflow));
        const Params p = base_params(1.0);
        const OperatorSet ops = build_operators(m, p.varpi);
        const SteadyState s = solve_steady(p, ops);

        const Thresholds th = compute_thresholds(s, ops);
        REQUIRE(th.lambda1.finite);
        REQUIRE(th.lambda2.finite);
        CHECK(th.lambda2.value <= th.lambda1.value * (1.0 + 1e-10));

        const int nf = m.nf();
        const FaceGradients g = face_gradients(m, s.u0);
        const SpMat H = face_volume_matrix(m);
        const SpMat A2 = SpMat(H * multiplier_grad(m, g, true));
        const double theta2 = dense_constrained_max_eig(A2, ops.S, ops.D);
        CHECK(1.0 / th.lambda2.value ==
              doctest::Approx(theta2).epsilon(1e-10));

        const SpMat A1full = SpMat(H * multiplier_grad(m, g, false));
        const SpMat A1 = A1full.topLeftCorner(nf, nf);
        const SpMat S1 = ops.S.topLeftCorner(nf, nf);
        const SpMat D1 = ops.D.leftCols(nf);
        const double theta1 = dense_constrained_max_eig(A1, S1, D1);
        CHECK(1.0 / th.lambda1.value ==
              doctest::Approx(theta1).epsilon(1e-10));

        CHECK(th.gamma(0.0) == doctest::Approx(1.0));
        CHECK(th.gamma(th.lambda2.value) == doctest::Approx(0.0));
    }
}

TEST_CASE("thresholds: vanishing base flow means no threshold") {
    const Mesh m = build_mesh(tiny_box(true));
    const OperatorSet ops = build_operators(m, 1.0);
    SteadyState s;
    s.u0 = CoupledField::zero(m);
    s.p0 = PressureField::zero(m);
    const Thresholds th = compute_thresholds(s, ops);
    CHECK_FALSE(th.lambda1.finite);
    CHECK_FALSE(th.lambda2.finite);
    CHECK(th.gamma(123.0) == 1.0);
}

TEST_CASE("thresholds: Rayleigh quotients of random trials stay below the max") {
    const Mesh m = build_mesh(tiny_box(true));
    const Params p = base_params(1.0);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = solve_steady(p, ops);
    const Thresholds th = compute_thresholds(s, ops);
    REQUIRE(th.lambda1.finite);
    const double theta1 = 1.0 / th.lambda1.value;

    std::mt19937_64 rng(99);
    std::normal_distribution<double> dist;
    for (int trial = 0; trial < 200; ++trial) {
        Vec x(m.nz());
        for (int i = 0; i < m.nz(); ++i) x[i] = dist(rng);
        const double q = lambda1_rayleigh(s, ops, x);
        CHECK(q <= theta1 + 1e-8);
    }
}

TEST_CASE("injectivity check: dense SVD oracle and rank-deficient detection") {
    const Mesh m = build_mesh(tiny_box(true));
    const Params p = base_params(0.8);
    const OperatorSet ops = build_operators(m, p.varpi);
    const SteadyState s = solve_steady(p, ops);

    const H1Report rep = check_H1prime(s, p, ops);
    CHECK(rep.ok);
    CHECK(rep.sigma_min > 0.0);
    CHECK(rep.op_norm > rep.sigma_min);

    const SpMat J = assemble_h1_matrix(s, p, ops);
    Eigen::BDCSVD<Eigen::MatrixXd> svd{Eigen::MatrixXd(J)};
    const double smin_dense = svd.singularValues().tail(1)[0];
    const double smax_dense = svd.singularValues()[0];
    CHECK(rep.sigma_min == doctest::Approx(smin_dense).epsilon(1e-3));
    CHECK(rep.op_norm == doctest::Approx(smax_dense).epsilon(1e-2));

    // manufactured rank deficiency: drop one column
    std::vector<Eigen::Triplet<double>> trips;
    for (int k = 0; k < J.outerSize(); ++k)
        for (SpMat::InnerIterator it(J, k); it; ++it)
            if (it.col() != 0) trips.emplace_back(it.row(), it.col(), it.value());
    SpMat Jdef(J.rows(), J.cols());
    Jdef.setFromTriplets(trips.begin(), trips.end());
    const auto [smin, smax] = singular_value_range(Jdef);
    CHECK(smin <= 1e-8 * smax);
}

TEST_CASE("steady: Newton stagnation reports the residual") {
    const Mesh m = build_mesh(tiny_box(true));
    const Params p = base_params(40.0); // far from the warm-start basin
    const OperatorSet ops = build_operators(m, p.varpi);
    SteadyOptions opts;
    opts.max_iter = 1;
    CHECK_THROWS_AS(solve_steady(p, ops, nullptr, opts), SolverError);
}
