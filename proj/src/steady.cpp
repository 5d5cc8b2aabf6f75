#include "viv/steady.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <random>
#include <sstream>

namespace viv {

namespace {

using Trip = Eigen::Triplet<double>;

/// Triplets of the fluid saddle system over unknowns [u_free; p]:
///   [ A_ff   -h^2 D_f' ]
///   [ D_f        0     ]
/// with A an nz x nz momentum operator. Closed boxes get the pressure pin
/// (row/col nf+0), which removes the constant-pressure nullspace.
void saddle_triplets(const Mesh& m, const SpMat& A, const SpMat& D, bool closed,
                     std::vector<Trip>& trips) {
    const int nf = m.nf();
    const double h2 = m.cfg.h * m.cfg.h;
    for (int k = 0; k < A.outerSize(); ++k) {
        for (SpMat::InnerIterator it(A, k); it; ++it) {
            if (it.row() < nf && it.col() < nf)
                trips.emplace_back(it.row(), it.col(), it.value());
        }
    }
    for (int k = 0; k < D.outerSize(); ++k) {
        for (SpMat::InnerIterator it(D, k); it; ++it) {
            if (it.col() >= nf) continue;
            trips.emplace_back(nf + it.row(), it.col(), it.value());
            trips.emplace_back(it.col(), nf + it.row(), -h2 * it.value());
        }
    }
    if (closed) trips.emplace_back(nf, nf, 1.0);
}

/// Momentum operator of the steady Newton linearization at z.
SpMat newton_operator(const Params& params, const OperatorSet& ops, const Vec& z) {
    const double h2 = ops.mesh.cfg.h * ops.mesh.cfg.h;
    const CoupledField zf(z);
    SpMat A = ops.S - (params.lambda * h2) * ops.P1;
    if (params.lambda != 0.0) {
        A += (params.lambda * h2) *
             SpMat(conv_jacobian_b(ops.mesh, zf) + conv_jacobian_a(ops.mesh, zf));
    }
    return A;
}

Eigen::Vector2d spring_elongation(const Params& params, const OperatorSet& ops,
                                  const CoupledField& u0, const PressureField& p0) {
    return -(params.varpi / params.omega_n_sq) * traction_integral(ops, u0, p0);
}

} // namespace

Vec steady_residual(const Params& params, const OperatorSet& ops, const Vec& z,
                    const Vec& p) {
    const Mesh& m = ops.mesh;
    const double h2 = m.cfg.h * m.cfg.h;
    Vec mom = ops.S * z - (params.lambda * h2) * (ops.P1 * z);
    if (params.lambda != 0.0) {
        const CoupledField zf(z);
        mom += (params.lambda * h2) * convection(ops, zf, zf).z;
    }
    mom -= h2 * (ops.D.transpose() * p);
    Vec r(m.nf() + m.np);
    r.head(m.nf()) = mom.head(m.nf());
    r.tail(m.np) = ops.D * z;
    return r;
}

SteadyState solve_steady(const Params& params, const OperatorSet& ops,
                         const SteadyState* guess, const SteadyOptions& opts) {
    validate(params);
    const Mesh& m = ops.mesh;
    const int nf = m.nf();
    const int n = nf + m.np;

    Vec z, p;
    if (guess != nullptr) {
        z = guess->u0.z;
        p = guess->p0.p;
    } else {
        z = Vec::Zero(m.nz());
        p = Vec::Zero(m.np);
    }
    z[nf] = 1.0; // body trace e1
    z[nf + 1] = 0.0;

    Eigen::SparseLU<SpMat> lu;
    double rnorm = 0.0;
    bool converged = false;
    for (int it = 0; it <= opts.max_iter; ++it) {
        Vec r = steady_residual(params, ops, z, p);
        if (ops.closed) r[nf] += p[0]; // gauge row: pins p_0 through the solve
        rnorm = r.norm();
        if (rnorm <= opts.tol) {
            converged = true;
            break;
        }
        if (it == opts.max_iter) break;

        std::vector<Trip> trips;
        saddle_triplets(m, newton_operator(params, ops, z), ops.D, ops.closed, trips);
        SpMat J(n, n);
        J.setFromTriplets(trips.begin(), trips.end());
        lu.compute(J);
        if (lu.info() != Eigen::Success)
            throw SolverError("steady Newton matrix factorization failed");
        const Vec dx = lu.solve(-r);
        z.head(nf) += dx.head(nf);
        p += dx.tail(m.np);
    }
    if (!converged) {
        std::ostringstream msg;
        msg << "steady Newton stagnated at lambda = " << params.lambda
            << ", residual = " << rnorm;
        throw SolverError(msg.str());
    }

    if (ops.closed) p.array() -= p.mean(); // zero-mean gauge

    SteadyState out;
    out.u0 = CoupledField(z);
    out.u0.solenoidal = true;
    out.p0 = PressureField(p);
    out.lambda = params.lambda;
    out.residual = rnorm;
    out.chi0 = spring_elongation(params, ops, out.u0, out.p0);

    if (opts.compute_sensitivity) {
        std::vector<Trip> trips;
        saddle_triplets(m, newton_operator(params, ops, z), ops.D, ops.closed, trips);
        SpMat J(n, n);
        J.setFromTriplets(trips.begin(), trips.end());
        lu.compute(J);
        if (lu.info() != Eigen::Success)
            throw SolverError("steady sensitivity factorization failed");
        const double h2 = m.cfg.h * m.cfg.h;
        const CoupledField zf(z);
        Vec dmom = -h2 * (ops.P1 * z) + h2 * convection(ops, zf, zf).z;
        Vec rhs = Vec::Zero(n);
        rhs.head(nf) = -dmom.head(nf);
        const Vec dx = lu.solve(rhs);
        CoupledField du = CoupledField::zero(m);
        du.z.head(nf) = dx.head(nf);
        du.solenoidal = true;
        out.du0_dlambda = du;
    }
    return out;
}

std::vector<SteadyState> continue_steady(const Params& params, const OperatorSet& ops,
                                         const std::vector<double>& lambdas,
                                         const SteadyOptions& opts) {
    std::vector<SteadyState> branch;
    branch.reserve(lambdas.size());
    SteadyOptions o = opts;
    o.compute_sensitivity = true;
    for (double lam : lambdas) {
        Params p = params;
        p.lambda = lam;
        const SteadyState* warm = branch.empty() ? nullptr : &branch.back();
        branch.push_back(solve_steady(p, ops, warm, o));
    }
    return branch;
}

ConstrainedEigs constrained_top_eigs(const SpMat& A, const SpMat& S, const SpMat& D,
                                     bool pin_pressure, int want, int iters) {
    const int n = static_cast<int>(S.rows());
    const int np = static_cast<int>(D.rows());
    const int N = n + np;

    std::vector<Trip> trips;
    trips.reserve(S.nonZeros() + 2 * D.nonZeros() + 1);
    for (int k = 0; k < S.outerSize(); ++k)
        for (SpMat::InnerIterator it(S, k); it; ++it)
            trips.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < D.outerSize(); ++k) {
        for (SpMat::InnerIterator it(D, k); it; ++it) {
            trips.emplace_back(n + it.row(), it.col(), it.value());
            trips.emplace_back(it.col(), n + it.row(), it.value());
        }
    }
    if (pin_pressure) trips.emplace_back(n, n, 1.0);
    SpMat K(N, N);
    K.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<SpMat> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success)
        throw SolverError("threshold saddle factorization failed");

    // y = S-orthogonal projection of S^{-1} f onto ker D
    const auto apply = [&](const Vec& f) -> Vec {
        Vec rhs = Vec::Zero(N);
        rhs.head(n) = f;
        return lu.solve(rhs).head(n);
    };

    std::mt19937_64 rng(7);
    std::normal_distribution<double> dist;
    Vec seed(n);
    for (int i = 0; i < n; ++i) seed[i] = dist(rng);

    Vec v = apply(S * seed); // projection of the seed onto ker D
    double beta = std::sqrt(v.dot(S * v));
    if (!(beta > 0.0)) throw SolverError("threshold Lanczos seed degenerate");
    v /= beta;

    // dimension of ker D: D has full row rank except for the pinned constant
    // pressure mode of a closed box; never iterate past exhaustion, where
    // normalized noise would enter the basis as ghost vectors
    const int kerdim = n - np + (pin_pressure ? 1 : 0);
    const int m = std::max(1, std::min({n, iters, kerdim}));
    std::vector<Vec> basis;
    basis.push_back(v);
    std::vector<double> alphas, betas;
    double beta_prev = 0.0;
    double scale = 0.0; // ~ norm of the tridiagonal, for breakdown detection
    for (int k = 0; k < m; ++k) {
        Vec w = apply(A * basis[k]);
        const double alpha = basis[k].dot(S * w);
        alphas.push_back(alpha);
        scale = std::max(scale, std::abs(alpha));
        w -= alpha * basis[k];
        if (k > 0) w -= beta_prev * basis[k - 1];
        // full reorthogonalization (two modified Gram-Schmidt passes)
        for (int pass = 0; pass < 2; ++pass)
            for (const Vec& b : basis) w -= (b.dot(S * w)) * b;
        // re-project onto ker D: keeps constraint noise at roundoff relative
        // to w even when w is nearly exhausted (normalization would otherwise
        // amplify out-of-kernel noise into the basis)
        w = apply(S * w);
        beta = std::sqrt(std::max(0.0, w.dot(S * w)));
        // relative breakdown test: the constrained space is exhausted once
        // the residual is noise-level; noise vectors would produce ghosts
        if (beta <= 1e-10 * std::max(scale, 1e-300)) break;
        if (static_cast<int>(basis.size()) >= m) break; // space exhausted
        scale = std::max(scale, beta);
        betas.push_back(beta);
        beta_prev = beta;
        basis.push_back(w / beta);
    }

    // explicit Rayleigh-Ritz on the (S-orthonormal) Krylov basis; more
    // accurate for interior Ritz pairs than the three-term recurrence
    const int kdim = static_cast<int>(basis.size());
    Eigen::MatrixXd B(n, kdim);
    for (int j = 0; j < kdim; ++j) B.col(j) = basis[j];
    const Eigen::MatrixXd Ga = B.transpose() * (A * B);
    const Eigen::MatrixXd Gs = B.transpose() * (S * B);
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(
        0.5 * (Ga + Ga.transpose()), 0.5 * (Gs + Gs.transpose()));

    ConstrainedEigs out;
    const int take = std::min(want, kdim);
    for (int r = 0; r < take; ++r) {
        const int col = kdim - 1 - r; // eigenvalues ascending -> take from the top
        out.theta.push_back(es.eigenvalues()[col]);
        out.vecs.push_back(Vec(B * es.eigenvectors().col(col)));
    }
    return out;
}

namespace {

double constrained_max_eig(const SpMat& A, const SpMat& S, const SpMat& D,
                           bool pin_pressure) {
    return constrained_top_eigs(A, S, D, pin_pressure, 1).theta.front();
}

ThresholdValue threshold_from_theta(double theta) {
    if (theta <= 1e-13) return ThresholdValue::infinite();
    return ThresholdValue::of(1.0 / theta);
}

SpMat sym_part(const SpMat& A) {
    SpMat At = A.transpose();
    return 0.5 * SpMat(A + At);
}

} // namespace

Thresholds compute_thresholds(const SteadyState& s, const OperatorSet& ops) {
    const Mesh& m = ops.mesh;
    const int nf = m.nf();
    const FaceGradients g = face_gradients(m, s.u0);
    const SpMat H = face_volume_matrix(m);

    // coupled form: body motion allowed
    const SpMat A2 = sym_part(SpMat(H * multiplier_grad(m, g, true)));
    const double theta2 = constrained_max_eig(A2, ops.S, ops.D, ops.closed);

    // restricted form: zero body trace (drop the hat rows and columns)
    const SpMat A1full = sym_part(SpMat(H * multiplier_grad(m, g, false)));
    const SpMat A1 = A1full.topLeftCorner(nf, nf);
    const SpMat S1 = ops.S.topLeftCorner(nf, nf);
    const SpMat D1 = ops.D.leftCols(nf);
    const double theta1 = constrained_max_eig(A1, S1, D1, ops.closed);

    Thresholds out;
    out.lambda1 = threshold_from_theta(theta1);
    out.lambda2 = threshold_from_theta(theta2);
    return out;
}

double lambda1_rayleigh(const SteadyState& s, const OperatorSet& ops, const Vec& trial) {
    const Mesh& m = ops.mesh;
    const int nf = m.nf();
    const SpMat S1 = ops.S.topLeftCorner(nf, nf);
    const SpMat D1 = ops.D.leftCols(nf);
    const int N = nf + m.np;

    std::vector<Trip> trips;
    for (int k = 0; k < S1.outerSize(); ++k)
        for (SpMat::InnerIterator it(S1, k); it; ++it)
            trips.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < D1.outerSize(); ++k) {
        for (SpMat::InnerIterator it(D1, k); it; ++it) {
            trips.emplace_back(nf + it.row(), it.col(), it.value());
            trips.emplace_back(it.col(), nf + it.row(), it.value());
        }
    }
    if (ops.closed) trips.emplace_back(nf, nf, 1.0);
    SpMat K(N, N);
    K.setFromTriplets(trips.begin(), trips.end());
    Eigen::SparseLU<SpMat> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success)
        throw SolverError("rayleigh saddle factorization failed");

    Vec rhs = Vec::Zero(N);
    rhs.head(nf) = S1 * trial.head(nf);
    const Vec y = lu.solve(rhs).head(nf);
    const double denom = y.dot(S1 * y);
    if (denom <= 0.0) throw SolverError("rayleigh trial projects to zero");

    const FaceGradients g = face_gradients(m, s.u0);
    const SpMat A1full =
        sym_part(SpMat(face_volume_matrix(m) * multiplier_grad(m, g, false)));
    const SpMat A1 = A1full.topLeftCorner(nf, nf);
    return y.dot(A1 * y) / denom;
}

SpMat assemble_h1_matrix(const SteadyState& s, const Params& params,
                         const OperatorSet& ops) {
    const Mesh& m = ops.mesh;
    const int nf = m.nf();
    const int N = nf + m.np + 2;
    const double h2 = m.cfg.h * m.cfg.h;

    Params p = params;
    p.lambda = s.lambda;
    const SpMat A = newton_operator(p, ops, s.u0.z);

    std::vector<Trip> trips;
    saddle_triplets(m, A, ops.D, ops.closed, trips);

    // spring rows: omega_n^2 chi + varpi * (body rows of [S u - h^2 D' p])
    for (int k = 0; k < ops.S.outerSize(); ++k) {
        for (SpMat::InnerIterator it(ops.S, k); it; ++it) {
            if (it.row() >= nf && it.col() < nf)
                trips.emplace_back(nf + m.np + (it.row() - nf), it.col(),
                                   params.varpi * it.value());
        }
    }
    for (int k = 0; k < ops.D.outerSize(); ++k) {
        for (SpMat::InnerIterator it(ops.D, k); it; ++it) {
            if (it.col() >= nf)
                trips.emplace_back(nf + m.np + (it.col() - nf), nf + it.row(),
                                   -params.varpi * h2 * it.value());
        }
    }
    trips.emplace_back(nf + m.np, nf + m.np, params.omega_n_sq);
    trips.emplace_back(nf + m.np + 1, nf + m.np + 1, params.omega_n_sq);

    SpMat J(N, N);
    J.setFromTriplets(trips.begin(), trips.end());
    return J;
}

std::pair<double, double> singular_value_range(const SpMat& A, int iters) {
    const int n = static_cast<int>(A.rows());
    std::mt19937_64 rng(11);
    std::normal_distribution<double> dist;
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = dist(rng);
    x.normalize();

    // largest singular value: power iteration on A'A
    double smax_sq = 0.0;
    Vec y = x;
    for (int k = 0; k < 5 * iters; ++k) {
        Vec w = A.transpose() * (A * y);
        smax_sq = y.dot(w);
        const double nw = w.norm();
        if (nw == 0.0) break;
        y = w / nw;
    }
    const double smax = std::sqrt(std::max(0.0, smax_sq));

    Eigen::SparseLU<SpMat> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success) return {0.0, smax};

    // smallest singular value: inverse power iteration on A'A
    double inv_sq = 0.0;
    for (int k = 0; k < iters; ++k) {
        const Vec u = lu.adjoint().solve(x);
        Vec w = lu.solve(u);
        inv_sq = x.dot(w);
        const double nw = w.norm();
        if (nw == 0.0) return {0.0, smax};
        x = w / nw;
    }
    const double smin = inv_sq > 0.0 ? 1.0 / std::sqrt(inv_sq) : 0.0;
    return {smin, smax};
}

H1Report check_H1prime(const SteadyState& s, const Params& params,
                       const OperatorSet& ops, double rel_threshold) {
    const SpMat J = assemble_h1_matrix(s, params, ops);
    const auto [smin, smax] = singular_value_range(J);
    H1Report rep;
    rep.sigma_min = smin;
    rep.op_norm = smax;
    rep.ok = smax > 0.0 && smin > rel_threshold * smax;
    return rep;
}

} // namespace viv
