#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "viv/io.hpp"
#include "viv/operators.hpp"

#include <Eigen/Dense>

#include <cstdio>
#include <random>

using namespace viv;

namespace {

MeshConfig small_box() {
    MeshConfig c;
    c.x0 = -2.0;
    c.x1 = 2.0;
    c.y0 = -2.0;
    c.y1 = 2.0;
    c.h = 0.25;
    return c;
}

Vec random_vec(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> dist;
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

// Dense M-orthogonal projector onto ker(D) built from a null-space basis.
Vec dense_projection(const OperatorSet& ops, const Vec& f) {
    const Eigen::MatrixXd D = Eigen::MatrixXd(ops.D);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(D);
    lu.setThreshold(1e-10);
    const Eigen::MatrixXd K = lu.kernel();
    const Eigen::MatrixXd MK = ops.mass.asDiagonal() * K;
    const Eigen::MatrixXd G = K.transpose() * MK;
    const Vec c = G.ldlt().solve(MK.transpose() * f);
    return K * c;
}

} // namespace

TEST_CASE("build_mesh: counts, determinism, validation") {
    MeshConfig c; // default production box
    Mesh m = build_mesh(c);
    CHECK(m.nx == 96);
    CHECK(m.ny == 64);
    CHECK(m.np == 96 * 64 - 16); // body occupies 4x4 cells
    CHECK(m.nz() == m.nu + m.nv + 2);

    Mesh m2 = build_mesh(c);
    CHECK(m.udof == m2.udof);
    CHECK(m.vdof == m2.vdof);
    CHECK(m.cell_dof == m2.cell_dof);

    MeshConfig coarse = c;
    coarse.h = 2.0; // larger than the body
    CHECK_THROWS_AS(build_mesh(coarse), ValidationError);

    MeshConfig touching = c;
    touching.body_x0 = c.x0;
    CHECK_THROWS_AS(build_mesh(touching), ValidationError);

    CHECK_THROWS_AS(build_mesh(c, 3), ValidationError);
}

TEST_CASE("inner product matches dense summation oracle") {
    Mesh m = build_mesh(small_box());
    const double varpi = 2.0;
    OperatorSet ops = build_operators(m, varpi);
    std::mt19937_64 rng(7);

    CoupledField f{random_vec(m.nz(), rng)}, g{random_vec(m.nz(), rng)};
    // brute-force: loop every face DOF with its cell volume, plus body term
    double acc = 0.0;
    const double h2 = m.cfg.h * m.cfg.h;
    for (int k = 0; k < m.nf(); ++k) acc += h2 * f.z[k] * g.z[k];
    acc += (f.hat().dot(g.hat())) / varpi;
    CHECK(inner(ops, f, g) == doctest::Approx(acc).epsilon(1e-13));

    CoupledField zf = CoupledField::zero(m);
    CHECK(inner(ops, zf, zf) == 0.0);

    CoupledField e1 = CoupledField::zero(m);
    e1.set_hat({1.0, 0.0});
    CHECK(inner(ops, e1, e1) == doctest::Approx(0.5).epsilon(1e-15));

    CHECK_THROWS_AS(build_operators(m, 0.0), ValidationError);
}

TEST_CASE("projection: idempotence, orthogonality, complement, dense oracle") {
    for (bool outflow : {true, false}) {
        MeshConfig c = small_box();
        c.outflow = outflow;
        Mesh m = build_mesh(c);
        OperatorSet ops = build_operators(m, 1.3);
        std::mt19937_64 rng(11);

        for (int trial = 0; trial < 5; ++trial) {
            CoupledField f{random_vec(m.nz(), rng)};
            PressureField q;
            CoupledField pf = project(ops, f, &q);

            // solenoidal output
            CHECK((ops.D * pf.z).lpNorm<Eigen::Infinity>() < 1e-10 * f.z.norm());
            // idempotence
            CoupledField ppf = project(ops, pf);
            CHECK((ppf.z - pf.z).norm() < 1e-10 * f.z.norm());
            // orthogonality in the weighted metric
            CoupledField resid{f.z - pf.z};
            CHECK(std::abs(inner(ops, pf, resid)) < 1e-10 * f.z.squaredNorm());
            // dense null-space oracle
            const Vec dense = dense_projection(ops, f.z);
            CHECK((dense - pf.z).norm() < 1e-9 * f.z.norm());
        }

        // complement: a lifted pressure gradient projects to zero
        CoupledField g = CoupledField::zero(m);
        Vec q = random_vec(m.np, rng);
        const double h2 = m.cfg.h * m.cfg.h;
        g.z = -h2 * ops.mass.cwiseInverse().cwiseProduct(ops.D.transpose() * q);
        CoupledField pg = project(ops, g);
        CHECK(pg.z.norm() < 1e-9 * g.z.norm());

        // duality: <G q, v> = -h^2 q' D v for all q, v
        CoupledField v{random_vec(m.nz(), rng)};
        const double lhs = inner(ops, g, v);
        const double rhs = -h2 * q.dot(ops.D * v.z);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("convection: constants, skew symmetry, jacobian consistency") {
    Mesh m = build_mesh(small_box());
    OperatorSet ops = build_operators(m, 1.0);
    std::mt19937_64 rng(23);

    // spatially constant b (constant on every face, including boundaries):
    // a·∇b vanishes for any solenoidal transport field. Closed box, so the
    // solenoidal field has no one-sided outflow stencils.
    {
        MeshConfig cc = small_box();
        cc.outflow = false;
        Mesh mc = build_mesh(cc);
        OperatorSet opsc = build_operators(mc, 1.0);
        CoupledField az = project(opsc, CoupledField{random_vec(mc.nz(), rng)});
        const auto a = scatter_faces<double>(mc, az.z);
        FaceArrays<double> b;
        b.u.assign(mc.ukind.size(), 0.7);
        b.v.assign(mc.vkind.size(), -1.2);
        Vec out;
        conv_apply(mc, a, b, out);
        CHECK(out.lpNorm<Eigen::Infinity>() < 1e-13);
    }

    // skew symmetry: a solenoidal, b zero on the whole outer boundary and on
    // the body
    {
        CoupledField a = project(ops, CoupledField{random_vec(m.nz(), rng)});
        CoupledField b{random_vec(m.nz(), rng)};
        b.set_hat({0.0, 0.0});
        // zero b on the outflow column and the faces its ghost stencils touch
        for (int j = 0; j < m.ny; ++j) {
            const int f = m.ufi(m.nx, j);
            if (m.ukind[f] == FaceKind::Free) b.z[m.udof[f]] = 0.0;
        }
        for (int j = 1; j < m.ny; ++j) {
            const int f = m.vfi(m.nx - 1, j);
            if (m.vkind[f] == FaceKind::Free) b.z[m.nu + m.vdof[f]] = 0.0;
        }
        CoupledField cab = convection(ops, a, b);
        const double h2 = m.cfg.h * m.cfg.h;
        const double pairing = h2 * cab.z.head(m.nf()).dot(b.z.head(m.nf()));
        const double scale = h2 * b.z.head(m.nf()).squaredNorm();
        CHECK(std::abs(pairing) < 1e-12 * std::max(scale, 1.0));
        CHECK(cab.z[m.nf()] == 0.0);
        CHECK(cab.z[m.nf() + 1] == 0.0);
    }

    // bilinearity ties kernels and assembled jacobians together exactly
    {
        CoupledField a{random_vec(m.nz(), rng)}, b{random_vec(m.nz(), rng)};
        CoupledField cab = convection(ops, a, b);
        SpMat Jb = conv_jacobian_b(m, a);
        SpMat Ja = conv_jacobian_a(m, b);
        CHECK((Jb * b.z - cab.z).lpNorm<Eigen::Infinity>() < 1e-13);
        CHECK((Ja * a.z - cab.z).lpNorm<Eigen::Infinity>() < 1e-13);
    }

    // serial and parallel kernels agree bitwise
    {
        CoupledField a{random_vec(m.nz(), rng)}, b{random_vec(m.nz(), rng)};
        CoupledField s = convection(ops, a, b, KernelImpl::Serial);
        CoupledField p = convection(ops, a, b, KernelImpl::Parallel);
        CHECK((s.z - p.z).lpNorm<Eigen::Infinity>() == 0.0);
    }
}

TEST_CASE("streamwise derivative is skew on interior-supported fields") {
    Mesh m = build_mesh(small_box());
    OperatorSet ops = build_operators(m, 1.0);
    std::mt19937_64 rng(31);
    CoupledField w = CoupledField::zero(m);
    std::normal_distribution<double> dist;
    // support away from the outer boundary (two-face margin)
    for (int j = 2; j < m.ny - 2; ++j)
        for (int i = 2; i < m.nx - 1; ++i) {
            const int f = m.ufi(i, j);
            if (m.ukind[f] == FaceKind::Free) w.z[m.udof[f]] = dist(rng);
        }
    for (int j = 2; j < m.ny - 1; ++j)
        for (int i = 2; i < m.nx - 2; ++i) {
            const int f = m.vfi(i, j);
            if (m.vkind[f] == FaceKind::Free) w.z[m.nu + m.vdof[f]] = dist(rng);
        }
    const double pairing = (ops.P1 * w.z).head(m.nf()).dot(w.z.head(m.nf()));
    CHECK(std::abs(pairing) < 1e-12 * w.z.squaredNorm());
}

TEST_CASE("traction: constant pressure and rigid motion give zero") {
    Mesh m = build_mesh(small_box());
    OperatorSet ops = build_operators(m, 1.0);

    PressureField pc;
    pc.p = Vec::Constant(m.np, 3.7);
    Eigen::Vector2d t = traction_integral(ops, CoupledField::zero(m), pc);
    CHECK(t.norm() < 1e-12);

    // constant velocity field matching the body value: no viscous force
    CoupledField rigid = CoupledField::zero(m);
    rigid.z.setConstant(0.0);
    for (int k = 0; k < m.nu; ++k) rigid.z[k] = 2.0;
    rigid.set_hat({2.0, 0.0});
    Eigen::Vector2d t2 = traction_integral(ops, rigid, PressureField::zero(m));
    CHECK(t2.norm() < 1e-12);
}

TEST_CASE("strain norms: zero field and the sqrt(2) gradient identity") {
    Mesh m = build_mesh(small_box());
    OperatorSet ops = build_operators(m, 1.0);

    auto [d0, g0] = strain_norm(ops, CoupledField::zero(m));
    CHECK(d0 == 0.0);
    CHECK(g0 == 0.0);

    // smooth divergence-free bump supported away from all boundaries:
    // u = dpsi/dy, v = -dpsi/dx with psi a C^inf bump
    auto psi = [](double x, double y) {
        const double r2 = (x - 1.0) * (x - 1.0) + y * y;
        return r2 < 0.64 ? std::exp(-1.0 / (0.64 - r2)) : 0.0;
    };
    const double eps = 1e-6;
    CoupledField w = CoupledField::zero(m);
    for (int j = 0; j < m.ny; ++j)
        for (int i = 0; i <= m.nx; ++i) {
            const int f = m.ufi(i, j);
            if (m.ukind[f] != FaceKind::Free) continue;
            const double x = m.ux(i), y = m.uy(j);
            w.z[m.udof[f]] = (psi(x, y + eps) - psi(x, y - eps)) / (2 * eps);
        }
    for (int j = 0; j <= m.ny; ++j)
        for (int i = 0; i < m.nx; ++i) {
            const int f = m.vfi(i, j);
            if (m.vkind[f] != FaceKind::Free) continue;
            const double x = m.vx(i), y = m.vy(j);
            w.z[m.nu + m.vdof[f]] = -(psi(x + eps, y) - psi(x - eps, y)) / (2 * eps);
        }
    auto [nd, ng] = strain_norm(ops, w);
    CHECK(nd > 0.0);
    const double ratio = ng / nd;
    const double tol = 10.0 * m.cfg.h;
    CHECK(ratio > std::sqrt(2.0) * (1.0 - tol));
    CHECK(ratio < std::sqrt(2.0) * (1.0 + tol));
}

TEST_CASE("field snapshots round-trip; csv export runs") {
    Mesh m = build_mesh(small_box());
    std::mt19937_64 rng(41);
    CoupledField f{random_vec(m.nz(), rng)};
    const std::string path = "test_snapshot.bin";
    save_field(path, m, f);
    CoupledField g = load_field(path, m);
    CHECK((f.z - g.z).lpNorm<Eigen::Infinity>() == 0.0);

    PressureField p{random_vec(m.np, rng)};
    save_pressure("test_pressure.bin", m, p);
    PressureField p2 = load_pressure("test_pressure.bin", m);
    CHECK((p.p - p2.p).lpNorm<Eigen::Infinity>() == 0.0);

    export_field_csv("test_field.csv", m, f);
    std::FILE* fh = std::fopen("test_field.csv", "r");
    REQUIRE(fh != nullptr);
    std::fclose(fh);

    Mesh other = build_mesh(MeshConfig{});
    CHECK_THROWS_AS(load_field(path, other), ValidationError);

    std::remove("test_snapshot.bin");
    std::remove("test_snapshot.bin.json");
    std::remove("test_pressure.bin");
    std::remove("test_pressure.bin.json");
    std::remove("test_field.csv");
}
