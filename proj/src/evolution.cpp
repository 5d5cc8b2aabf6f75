#include "viv/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace viv {

namespace {

using Trip = Eigen::Triplet<double>;

/// Implicit system matrix over unknowns [z (nz); chi (2); p (np)]:
///   (a M + S) z + (omega_n^2/varpi) chi on body rows - h^2 D' p = rhs
///   a chi - sigma = rhs_chi
///   D z = 0 (+ closed-box gauge pin)
SpMat assemble_evol_matrix(const OperatorSet& ops, const Params& params,
                           double acoef) {
    const Mesh& m = ops.mesh;
    const int nz = m.nz();
    const int nf = m.nf();
    const int N = nz + 2 + m.np;
    const double h2 = m.cfg.h * m.cfg.h;

    std::vector<Trip> trips;
    trips.reserve(ops.S.nonZeros() + 2 * ops.D.nonZeros() + nz + 8);
    for (int i = 0; i < nz; ++i) trips.emplace_back(i, i, acoef * ops.mass[i]);
    for (int k = 0; k < ops.S.outerSize(); ++k)
        for (SpMat::InnerIterator it(ops.S, k); it; ++it)
            trips.emplace_back(it.row(), it.col(), it.value());
    for (int k = 0; k < ops.D.outerSize(); ++k) {
        for (SpMat::InnerIterator it(ops.D, k); it; ++it) {
            trips.emplace_back(nz + 2 + it.row(), it.col(), it.value());
            trips.emplace_back(it.col(), nz + 2 + it.row(), -h2 * it.value());
        }
    }
    for (int a = 0; a < 2; ++a) {
        trips.emplace_back(nf + a, nz + a, params.omega_n_sq / params.varpi);
        trips.emplace_back(nz + a, nz + a, acoef);
        trips.emplace_back(nz + a, nf + a, -1.0);
    }
    if (ops.closed) trips.emplace_back(nz + 2, nz + 2, 1.0);

    SpMat A(N, N);
    A.setFromTriplets(trips.begin(), trips.end());
    return A;
}

} // namespace

Evolver::Evolver(const SteadyState& s, const Params& params, const OperatorSet& ops,
                 double dt, bool linearized)
    : ops_(ops), params_(params), dt_(dt), linearized_(linearized) {
    validate(params);
    validate_positive_varpi(params);
    if (!(dt > 0.0)) throw ValidationError("dt must be positive");
    u0_faces_ = scatter_faces<double>(ops.mesh, s.u0.z);
    const FaceGradients g0 = face_gradients(ops.mesh, s.u0);
    MG_ = multiplier_grad(ops.mesh, g0, true);
    conv_u0_ = conv_jacobian_b(ops.mesh, s.u0);
}

Vec Evolver::transport_term(const Vec& z) const {
    const Mesh& m = ops_.mesh;
    if (params_.lambda == 0.0) return Vec::Zero(m.nz());
    Vec e = ops_.P1 * z - conv_u0_ * z + MG_ * z;
    if (!linearized_) {
        auto zf = scatter_faces<double>(m, z);
        FaceArrays<double> a;
        a.u.resize(zf.u.size());
        a.v.resize(zf.v.size());
        const double sx = z[m.nf()], sy = z[m.nf() + 1];
        for (std::size_t f = 0; f < zf.u.size(); ++f) a.u[f] = sx - zf.u[f];
        for (std::size_t f = 0; f < zf.v.size(); ++f) a.v[f] = sy - zf.v[f];
        Vec cz;
        conv_apply(m, a, zf, cz);
        e -= cz;
    }
    return params_.lambda * e;
}

void Evolver::check_cfl(const Vec& z) const {
    if (params_.lambda == 0.0) return;
    double umax = 0.0;
    for (double v : u0_faces_.u) umax = std::max(umax, std::abs(v));
    for (double v : u0_faces_.v) umax = std::max(umax, std::abs(v));
    const double zmax = z.lpNorm<Eigen::Infinity>();
    const double speed = params_.lambda * (umax + 2.0 * zmax);
    if (speed > 0.0 && dt_ > ops_.mesh.cfg.h / speed) {
        std::ostringstream msg;
        msg << "dt = " << dt_ << " violates the advective CFL bound "
            << ops_.mesh.cfg.h / speed;
        throw ValidationError(msg.str());
    }
}

Eigen::SparseLU<SpMat>& Evolver::factorization(double acoef, int which) {
    auto& lu = which == 0 ? lu_euler_ : lu_bdf2_;
    bool& have = which == 0 ? have_euler_ : have_bdf2_;
    if (!have) {
        lu.compute(assemble_evol_matrix(ops_, params_, acoef));
        if (lu.info() != Eigen::Success)
            throw SolverError("time-step matrix factorization failed");
        have = true;
    }
    return lu;
}

EvolState Evolver::advance(const EvolState& st) {
    const Mesh& m = ops_.mesh;
    const int nz = m.nz();
    const int N = nz + 2 + m.np;
    const double h2 = m.cfg.h * m.cfg.h;
    const Vec& z = st.u.z;
    check_cfl(z);

    Vec rhs = Vec::Zero(N);
    Eigen::SparseLU<SpMat>* lu = nullptr;
    if (!have_history_) {
        lu = &factorization(1.0 / dt_, 0);
        rhs.head(nz) = ops_.mass.cwiseProduct(z) / dt_ + h2 * transport_term(z);
        rhs.segment<2>(nz) = st.chi / dt_;
    } else {
        lu = &factorization(1.5 / dt_, 1);
        const Vec hist = (4.0 * z - z_prev_) / (2.0 * dt_);
        const Vec expl = 2.0 * transport_term(z) - transport_term(z_prev_);
        rhs.head(nz) = ops_.mass.cwiseProduct(hist) + h2 * expl;
        rhs.segment<2>(nz) = (4.0 * st.chi - chi_prev_) / (2.0 * dt_);
    }

    const Vec x = lu->solve(rhs);
    z_prev_ = z;
    chi_prev_ = st.chi;
    have_history_ = true;

    EvolState out;
    out.u = CoupledField(x.head(nz));
    out.u.solenoidal = true;
    out.chi = x.segment<2>(nz);
    out.p = PressureField(x.tail(m.np));
    out.t = st.t + dt_;
    return out;
}

double Evolver::energy(const EvolState& st) const {
    return inner(ops_, st.u, st.u) +
           params_.omega_n_sq / params_.varpi * st.chi.squaredNorm();
}

EvolState step(const EvolState& st, const SteadyState& s, const Params& params,
               const OperatorSet& ops, double dt) {
    Evolver ev(s, params, ops, dt);
    return ev.advance(st);
}

namespace {

void log_state(EnergyLog& log, const OperatorSet& ops, const Evolver& ev,
               const EvolState& st) {
    const auto [nD, nG] = strain_norm(ops, st.u);
    log.append(st.t, ev.energy(st), nD, nG, st.chi.norm(), st.chidot().norm());
}

} // namespace

EvolveResult evolve(const EvolState& state0, const SteadyState& s,
                    const Params& params, const OperatorSet& ops, double T,
                    double dt, bool linearized) {
    if (T < 0.0) throw ValidationError("T must be nonnegative");
    Evolver ev(s, params, ops, dt, linearized);

    EvolveResult res;
    res.state = state0;
    log_state(res.log, ops, ev, res.state);

    const int nsteps = static_cast<int>(std::llround(T / dt));
    for (int n = 0; n < nsteps; ++n) {
        EvolState next = ev.advance(res.state);
        if (!next.u.z.allFinite() || !next.chi.allFinite()) {
            res.nan_aborted = true;
            break;
        }
        res.state = std::move(next);
        log_state(res.log, ops, ev, res.state);
    }
    return res;
}

std::vector<StokesEigenpair> stokes_eigenbasis(const OperatorSet& ops,
                                               const Params& params, int n) {
    validate_positive_varpi(params);
    const Mesh& m = ops.mesh;
    if (n < 1 || n > m.nf()) throw ValidationError("eigenbasis size out of range");

    SpMat M(m.nz(), m.nz());
    {
        std::vector<Trip> trips;
        for (int i = 0; i < m.nz(); ++i) trips.emplace_back(i, i, ops.mass[i]);
        M.setFromTriplets(trips.begin(), trips.end());
    }
    // buffer modes guard the subspace iteration against clusters at the edge
    const int nb = std::min(m.nf(), n + 5);
    const int iters = std::max(160, 8 * nb);
    const ConstrainedEigs eig =
        constrained_top_eigs(M, ops.S, ops.D, ops.closed, nb, iters);
    if (static_cast<int>(eig.theta.size()) < n)
        throw SolverError("Stokes eigenbasis iteration returned too few pairs");
    const int nsub = static_cast<int>(eig.theta.size());

    Eigen::MatrixXd V(m.nz(), nsub);
    for (int i = 0; i < nsub; ++i) V.col(i) = eig.vecs[i];

    // polish by constrained block inverse iteration, re-diagonalizing the
    // pencil on the subspace each round (metric-orthonormal, S-diagonal)
    const int nz = m.nz();
    const int N = nz + m.np;
    SpMat K(N, N);
    {
        std::vector<Trip> trips;
        for (int k = 0; k < ops.S.outerSize(); ++k)
            for (SpMat::InnerIterator it(ops.S, k); it; ++it)
                trips.emplace_back(it.row(), it.col(), it.value());
        for (int k = 0; k < ops.D.outerSize(); ++k) {
            for (SpMat::InnerIterator it(ops.D, k); it; ++it) {
                trips.emplace_back(nz + it.row(), it.col(), it.value());
                trips.emplace_back(it.col(), nz + it.row(), it.value());
            }
        }
        if (ops.closed) trips.emplace_back(nz, nz, 1.0);
        K.setFromTriplets(trips.begin(), trips.end());
    }
    Eigen::SparseLU<SpMat> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success)
        throw SolverError("Stokes eigenbasis saddle factorization failed");

    Eigen::VectorXd evals(nsub);
    for (int round = 0; round < 6; ++round) {
        if (round > 0) {
            for (int i = 0; i < nsub; ++i) {
                Vec rhs = Vec::Zero(N);
                rhs.head(nz) = ops.mass.cwiseProduct(Vec(V.col(i)));
                V.col(i) = lu.solve(rhs).head(nz);
            }
        }
        const Eigen::MatrixXd Gm = V.transpose() * (ops.mass.asDiagonal() * V);
        const Eigen::MatrixXd Gs = V.transpose() * (ops.S * V);
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(
            0.5 * (Gs + Gs.transpose()), 0.5 * (Gm + Gm.transpose()));
        V = V * es.eigenvectors();
        evals = es.eigenvalues();
    }

    std::vector<StokesEigenpair> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        StokesEigenpair pair;
        pair.lambda_R = evals[i];
        pair.psi = CoupledField(V.col(i));
        pair.psi.solenoidal = true;

        // recover the eigenpressure from the momentum defect
        const Vec r = ops.S * pair.psi.z - pair.lambda_R * ops.mass.cwiseProduct(pair.psi.z);
        CoupledField f(r.cwiseQuotient(ops.mass));
        PressureField q;
        project(ops, f, &q);
        pair.phi = PressureField(-q.p);
        out.push_back(std::move(pair));
    }
    return out;
}

EvolveResult galerkin_evolve(const std::vector<StokesEigenpair>& basis,
                             const SteadyState& s, const Params& params,
                             const OperatorSet& ops, const EvolState& state0,
                             double T, double dt) {
    const Mesh& m = ops.mesh;
    const int n = static_cast<int>(basis.size());
    if (n == 0) throw ValidationError("empty Galerkin basis");

    Eigen::MatrixXd Psi(m.nz(), n);
    for (int i = 0; i < n; ++i) Psi.col(i) = basis[i].psi.z;
    const Eigen::MatrixXd W = ops.mass.asDiagonal() * Psi; // pairing weights
    const Eigen::MatrixXd Sr = Psi.transpose() * (ops.S * Psi);
    Eigen::MatrixXd hats(2, n);
    for (int i = 0; i < n; ++i) hats.col(i) = basis[i].psi.hat();

    Evolver ev(s, params, ops, dt); // supplies transport_term and energy

    // reduced dynamics: cdot = -Sr c + W' E(Psi c) - (omega_n^2/varpi) hats' chi
    //                   chidot = hats c
    const auto rhs = [&](const Eigen::VectorXd& c, const Eigen::Vector2d& chi,
                         Eigen::VectorXd& dc, Eigen::Vector2d& dchi) {
        const Vec z = Psi * c;
        dc = -Sr * c + W.transpose() * ev.transport_term(z) -
             (params.omega_n_sq / params.varpi) * (hats.transpose() * chi);
        dchi = hats * c;
    };

    Eigen::VectorXd c = W.transpose() * state0.u.z;
    Eigen::Vector2d chi = state0.chi;
    double t = state0.t;

    EvolveResult res;
    const auto make_state = [&]() {
        EvolState st;
        st.u = CoupledField(Psi * c);
        st.u.solenoidal = true;
        st.chi = chi;
        st.t = t;
        st.p = PressureField::zero(m);
        return st;
    };
    const auto log_now = [&]() {
        const EvolState st = make_state();
        const auto [nD, nG] = strain_norm(ops, st.u);
        res.log.append(t, ev.energy(st), nD, nG, chi.norm(), st.chidot().norm());
    };
    log_now();

    const int nsteps = static_cast<int>(std::llround(T / dt));
    Eigen::VectorXd k1c(n), k2c(n), k3c(n), k4c(n);
    Eigen::Vector2d k1x, k2x, k3x, k4x;
    for (int step = 0; step < nsteps; ++step) {
        rhs(c, chi, k1c, k1x);
        rhs(c + 0.5 * dt * k1c, chi + 0.5 * dt * k1x, k2c, k2x);
        rhs(c + 0.5 * dt * k2c, chi + 0.5 * dt * k2x, k3c, k3x);
        rhs(c + dt * k3c, chi + dt * k3x, k4c, k4x);
        c += dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c);
        chi += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        t += dt;
        if (!c.allFinite() || !chi.allFinite()) {
            res.nan_aborted = true;
            break;
        }
        log_now();
    }
    res.state = make_state();
    return res;
}

std::string EnergyLog::to_csv() const {
    std::string out = "t,E,normD,normGrad,chi,chidot\n";
    char buf[256];
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      t[i], E[i], normD[i], normGrad[i], chi_norm[i],
                      chidot_norm[i]);
        out += buf;
    }
    return out;
}

DecayReport decay_metrics(const EnergyLog& log, const Params& params,
                          const Thresholds& th) {
    if (log.size() == 0) throw ValidationError("empty energy log");
    DecayReport rep;
    rep.gamma = th.gamma(params.lambda);
    rep.gamma_positive = rep.gamma > 0.0;

    const std::size_t start = log.size() / 2;
    rep.monotone_tail = true;
    for (std::size_t i = start; i + 1 < log.size(); ++i)
        if (log.E[i + 1] > log.E[i] + 1e-8) rep.monotone_tail = false;

    // least-squares slope of log E over the tail (positive entries only)
    double st = 0, se = 0, stt = 0, ste = 0;
    int cnt = 0;
    for (std::size_t i = start; i < log.size(); ++i) {
        if (log.E[i] <= 0.0) continue;
        const double x = log.t[i], y = std::log(log.E[i]);
        st += x;
        se += y;
        stt += x * x;
        ste += x * y;
        ++cnt;
    }
    if (cnt >= 2 && stt * cnt - st * st > 0.0)
        rep.rate = (cnt * ste - st * se) / (cnt * stt - st * st);
    rep.decayed = rep.monotone_tail && rep.rate <= 0.0;
    return rep;
}

} // namespace viv
