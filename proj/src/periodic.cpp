#include "viv/periodic.hpp"

#include "hb_internal.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace viv {

namespace {

using CTrip = Eigen::Triplet<Cplx>;
using hb::apply_real;

/// Complex mode operator at frequency k zeta0: fluid momentum rows with the
/// hat rows replaced by identity (prescribed body velocity), divergence rows,
/// pressure gauge pin on a closed box. Unknowns [z (nz); q (np)].
struct ModeContext {
    int k = 0;
    int nz = 0, nf = 0, np = 0;
    double h2 = 0.0;
    CSpMat A;
    std::unique_ptr<Eigen::SparseLU<CSpMat>> lu;

    int size() const { return nz + np; }
};

ModeContext make_mode_context(const OperatorSet& ops, double zeta0, double lambda0,
                              int k) {
    if (k == 0) throw ValidationError("mode_resolvent: k must be nonzero");
    if (zeta0 == 0.0) throw ValidationError("mode_resolvent: zeta0 must be nonzero");
    const Mesh& m = ops.mesh;
    ModeContext ctx;
    ctx.k = k;
    ctx.nz = m.nz();
    ctx.nf = m.nf();
    ctx.np = m.np;
    ctx.h2 = m.cfg.h * m.cfg.h;

    auto is_hat = [&](int r) { return r == ctx.nf || r == ctx.nf + 1; };
    std::vector<CTrip> trips;
    trips.reserve(ops.S.nonZeros() + 2 * ops.D.nonZeros() + ctx.nz + 4);
    for (int c = 0; c < ops.S.outerSize(); ++c)
        for (SpMat::InnerIterator it(ops.S, c); it; ++it)
            if (!is_hat((int)it.row()))
                trips.emplace_back(it.row(), it.col(), Cplx(it.value(), 0.0));
    if (lambda0 != 0.0)
        for (int c = 0; c < ops.P1.outerSize(); ++c)
            for (SpMat::InnerIterator it(ops.P1, c); it; ++it)
                if (!is_hat((int)it.row()))
                    trips.emplace_back(it.row(), it.col(),
                                       Cplx(-lambda0 * ctx.h2 * it.value(), 0.0));
    for (int r = 0; r < ctx.nz; ++r)
        if (!is_hat(r)) trips.emplace_back(r, r, Cplx(0.0, k * zeta0 * ctx.h2));
    for (int c = 0; c < ops.D.outerSize(); ++c) {
        for (SpMat::InnerIterator it(ops.D, c); it; ++it) {
            trips.emplace_back(ctx.nz + it.row(), it.col(), Cplx(it.value(), 0.0));
            if (!is_hat((int)it.col()))
                trips.emplace_back(it.col(), ctx.nz + it.row(),
                                   Cplx(-ctx.h2 * it.value(), 0.0));
        }
    }
    trips.emplace_back(ctx.nf, ctx.nf, Cplx(1.0, 0.0));
    trips.emplace_back(ctx.nf + 1, ctx.nf + 1, Cplx(1.0, 0.0));
    if (ops.closed) trips.emplace_back(ctx.nz, ctx.nz, Cplx(1.0, 0.0));

    ctx.A.resize(ctx.size(), ctx.size());
    ctx.A.setFromTriplets(trips.begin(), trips.end());
    ctx.lu = std::make_unique<Eigen::SparseLU<CSpMat>>();
    ctx.lu->compute(ctx.A);
    if (ctx.lu->info() != Eigen::Success)
        throw SolverError("mode operator factorization failed");
    return ctx;
}

CVec mode_rhs(const ModeContext& ctx, const CVec& f, const Eigen::Vector2cd& bdata) {
    CVec rhs = CVec::Zero(ctx.size());
    if (f.size() > 0) {
        if ((int)f.size() != ctx.nz)
            throw ValidationError("mode forcing has wrong length");
        rhs.head(ctx.nz) = ctx.h2 * f;
    }
    rhs[ctx.nf] = bdata[0];
    rhs[ctx.nf + 1] = bdata[1];
    return rhs;
}

ModeSolution solve_mode(const ModeContext& ctx, const CVec& f,
                        const Eigen::Vector2cd& bdata) {
    const CVec rhs = mode_rhs(ctx, f, bdata);
    const CVec x = ctx.lu->solve(rhs);
    ModeSolution out;
    out.k = ctx.k;
    out.w = x.head(ctx.nz);
    out.q = x.tail(ctx.np);
    out.residual = (ctx.A * x - rhs).norm() / (rhs.norm() + 1.0);
    return out;
}

ModeSolution conj_mode(const ModeSolution& s) {
    ModeSolution out;
    out.k = -s.k;
    out.w = s.w.conjugate();
    out.q = s.q.conjugate();
    out.xi = s.xi.conjugate();
    out.residual = s.residual;
    return out;
}

} // namespace

Eigen::Vector2cd traction_integral_c(const OperatorSet& ops, const CVec& w,
                                     const CVec& q) {
    const int nf = ops.nf();
    const double h2 = ops.mesh.cfg.h * ops.mesh.cfg.h;
    const CVec sw = apply_real(ops.S, w);
    const CVec dq = apply_real(SpMat(ops.D.transpose()), q);
    return {sw[nf] - h2 * dq[nf], sw[nf + 1] - h2 * dq[nf + 1]};
}

ModeSolution mode_resolvent(const OperatorSet& ops, double zeta0, double lambda0,
                            int k, const CVec& f, const Eigen::Vector2cd& bdata) {
    const ModeContext ctx = make_mode_context(ops, zeta0, lambda0, k);
    return solve_mode(ctx, f, bdata);
}

ResolventBasis resolvent_basis(const OperatorSet& ops, double zeta0, double lambda0,
                               int k) {
    const ModeContext ctx = make_mode_context(ops, zeta0, lambda0, k);
    ResolventBasis basis;
    basis.k = k;
    for (int i = 0; i < 2; ++i) {
        Eigen::Vector2cd e = Eigen::Vector2cd::Zero();
        e[i] = 1.0;
        basis.h[i] = solve_mode(ctx, CVec(), e);
    }
    return basis;
}

Eigen::Matrix2cd traction_matrix(const OperatorSet& ops, double zeta0, double lambda0,
                                 int k) {
    const ResolventBasis basis = resolvent_basis(ops, zeta0, lambda0, k);
    Eigen::Matrix2cd K;
    for (int i = 0; i < 2; ++i)
        K.col(i) = traction_integral_c(ops, basis.h[i].w, basis.h[i].q);
    return K;
}

ResonanceMatrices resonance_matrix(int k, double zeta0, const Params& params,
                                   const Eigen::Matrix2cd& K) {
    if (k == 0) throw ValidationError("resonance_matrix: k must be nonzero");
    ResonanceMatrices out;
    out.K = K;
    out.M = (-double(k) * k * zeta0 * zeta0 + params.omega_n_sq) *
                Eigen::Matrix2cd::Identity() +
            Cplx(0.0, 1.0) * double(k) * params.varpi * K;
    Eigen::JacobiSVD<Eigen::Matrix2cd> svd(out.M);
    out.sigma_min = svd.singularValues().minCoeff();
    out.sigma_max = svd.singularValues().maxCoeff();
    return out;
}

std::vector<ResonanceRow> resonance_scan(const OperatorSet& ops,
                                         const std::vector<int>& ks,
                                         const std::vector<double>& varpis,
                                         double zeta0, const Params& params) {
    if (ks.empty() || varpis.empty())
        throw ValidationError("resonance_scan: empty range");
    std::vector<ResonanceRow> rows;
    for (int k : ks) {
        const Eigen::Matrix2cd K = traction_matrix(ops, zeta0, params.lambda, k);
        Eigen::JacobiSVD<Eigen::Matrix2cd> svdK(K);
        const double smin_K = svdK.singularValues().minCoeff();
        const bool resonant =
            std::abs(double(k) * k * zeta0 * zeta0 - params.omega_n_sq) <=
            1e-12 * (1.0 + params.omega_n_sq);
        for (double vp : varpis) {
            Params p = params;
            p.varpi = vp;
            const ResonanceMatrices rm = resonance_matrix(k, zeta0, p, K);
            if (resonant) {
                // linear-in-varpi law: M = i k varpi K exactly at resonance
                const double expect = std::abs(k) * vp * smin_K;
                if (std::abs(rm.sigma_min - expect) > 1e-12 * (expect + 1e-300))
                    throw SolverError("resonance scan: linear-in-varpi law violated");
            }
            rows.push_back({k, vp, rm.sigma_min, rm.cond()});
        }
    }
    return rows;
}

std::string resonance_csv(const std::vector<ResonanceRow>& rows) {
    std::ostringstream os;
    os.precision(17);
    os << "k,varpi,sigma_min,cond\n";
    for (const auto& r : rows)
        os << r.k << ',' << r.varpi << ',' << r.sigma_min << ',' << r.cond << '\n';
    return os.str();
}

ModeSet solve_periodic_linear(const OperatorSet& ops, double zeta0,
                              const Params& params,
                              const std::map<int, ModeForcing>& forcing,
                              int K_trunc) {
    validate_positive_varpi(params);
    for (const auto& [k, mf] : forcing) {
        (void)mf;
        if (k <= 0 || k > K_trunc)
            throw ValidationError(
                "periodic forcing keys must satisfy 1 <= k <= K_trunc "
                "(negative modes are implied by conjugation, the mean must vanish)");
    }

    ModeSet out;
    for (const auto& [k, mf] : forcing) {
        const ModeContext ctx = make_mode_context(ops, zeta0, params.lambda, k);

        // particular solution carrying the forcing and the extra boundary data
        ModeSolution part = solve_mode(ctx, mf.f, mf.G);
        const Eigen::Vector2cd t_part = traction_integral_c(ops, part.w, part.q);

        // unit-boundary resolvent basis and the 2x2 mode closure
        Eigen::Matrix2cd K;
        std::array<ModeSolution, 2> h;
        for (int i = 0; i < 2; ++i) {
            Eigen::Vector2cd e = Eigen::Vector2cd::Zero();
            e[i] = 1.0;
            h[i] = solve_mode(ctx, CVec(), e);
            K.col(i) = traction_integral_c(ops, h[i].w, h[i].q);
        }
        const ResonanceMatrices rm = resonance_matrix(k, zeta0, params, K);
        const Eigen::Vector2cd xi =
            rm.M.fullPivLu().solve(mf.F - params.varpi * t_part);

        ModeSolution mode;
        mode.k = k;
        mode.xi = xi;
        const Cplx ik(0.0, double(k));
        mode.w = part.w + ik * (xi[0] * h[0].w + xi[1] * h[1].w);
        mode.q = part.q + ik * (xi[0] * h[0].q + xi[1] * h[1].q);

        // residual certificate: mode system at the assembled solution plus the
        // spring row
        CVec x(ctx.size());
        x.head(ctx.nz) = mode.w;
        x.tail(ctx.np) = mode.q;
        const CVec rhs = mode_rhs(ctx, mf.f, Eigen::Vector2cd(ik * xi + mf.G));
        const Eigen::Vector2cd t_full = traction_integral_c(ops, mode.w, mode.q);
        const Eigen::Vector2cd ode =
            (-double(k) * k * zeta0 * zeta0 + params.omega_n_sq) * xi +
            params.varpi * t_full - mf.F;
        mode.residual =
            ((ctx.A * x - rhs).norm() + ode.norm()) / (rhs.norm() + mf.F.norm() + 1.0);

        out.modes[-k] = conj_mode(mode);
        out.modes[k] = std::move(mode);
    }
    return out;
}

Vec reconstruct_modes(const ModeSet& set, int nz, double tau) {
    CVec acc = CVec::Zero(nz);
    for (const auto& [k, mode] : set.modes)
        acc += mode.w * std::exp(Cplx(0.0, k * tau));
    return acc.real();
}

// ---------------------------------------------------------------------------
// nonlinear harmonic balance
// ---------------------------------------------------------------------------

std::vector<CVec> harmonic_residual(const SteadyState& s, const Params& params,
                                    const OperatorSet& ops, double zeta,
                                    const std::vector<CVec>& x) {
    if (x.empty()) throw ValidationError("harmonic_residual: no modes given");
    hb::HBWork w = hb::make_hb_work(s, params, ops, (int)x.size() - 1);
    if (x[0].imag().norm() > 0.0)
        throw ValidationError("harmonic_residual: the mean mode must be real");
    Vec U = Vec::Zero(w.nun());
    for (int k = 0; k <= w.K; ++k) {
        if ((int)x[k].size() != w.N)
            throw ValidationError("harmonic_residual: wrong mode length");
        w.set_mode(U, k, x[k]);
    }
    U[w.nun() - 1] = zeta;
    w.frozen = true;
    const Vec R = w.residual(U);
    std::vector<CVec> out(w.K + 1);
    for (int k = 0; k <= w.K; ++k) out[k] = w.mode(R, k);
    return out;
}

PeriodicSolution solve_periodic_nonlinear(const SteadyState& s, const Params& params,
                                          const OperatorSet& ops, double zeta_guess,
                                          const ModeSet* init,
                                          const PeriodicOptions& opts) {
    validate(params);
    validate_positive_varpi(params);
    if (!(zeta_guess > 0.0))
        throw ValidationError("zeta_guess must be positive");

    const Mesh& m = ops.mesh;
    hb::HBWork w = hb::make_hb_work(s, params, ops, opts.K_trunc);

    Vec U = Vec::Zero(w.nun());
    U[w.nun() - 1] = zeta_guess;
    if (init) {
        for (const auto& [k, mode] : init->modes) {
            if (k <= 0) continue;
            if (k > w.K) throw ValidationError("init mode beyond K_trunc");
            CVec x = CVec::Zero(w.N);
            x.head(w.nz) = mode.w;
            x[w.nz] = mode.xi[0];
            x[w.nz + 1] = mode.xi[1];
            w.set_mode(U, k, x);
        }
    }

    auto amplitude = [&](const Vec& UU) {
        double a = 0.0;
        for (int k = 1; k <= w.K; ++k) {
            const CVec x = w.mode(UU, k);
            double e = 0.0;
            for (int i = 0; i < w.N; ++i)
                if (w.Bdiag[i] != 0.0) e += w.Bdiag[i] * std::norm(x[i]);
            a = std::max(a, std::sqrt(e));
        }
        return a;
    };

    hb::HBPrecond P;
    P.w = &w;
    double rnorm = 0.0;
    int iter = 0;
    for (; iter < opts.max_iter; ++iter) {
        const double amp = amplitude(U);
        w.frozen = amp < opts.freeze_amplitude;
        if (!w.frozen && w.phase_ref.isZero()) w.phase_ref = w.mode(U, 1);

        const Vec R = w.residual(U);
        rnorm = R.norm();
        const double scale = 1.0 + U.head(w.nun() - 1).norm();
        if (rnorm <= opts.tol * scale) break;

        P.factor(U[w.nun() - 1]);
        const Vec delta = hb::gmres_solve(
            [&](const Vec& V) { return w.jacobian_apply(U, V); },
            [&](const Vec& R2) { return P.apply(R2); }, -R, 1e-10, 200);

        double step = 1.0;
        Vec Unew;
        for (int back = 0; back < 8; ++back) {
            Unew = U + step * delta;
            if (w.residual(Unew).norm() <= (1.0 - 1e-4 * step) * rnorm) break;
            step *= 0.5;
            if (back == 7) Unew = U + step * delta;
        }
        U = Unew;
    }
    if (iter == opts.max_iter)
        throw SolverError("harmonic balance Newton stagnated, residual " +
                          std::to_string(rnorm));

    PeriodicSolution sol;
    sol.iterations = iter;
    sol.residual = rnorm;
    sol.zeta = U[w.nun() - 1];
    sol.amplitude = amplitude(U);
    sol.trivial = sol.amplitude < opts.freeze_amplitude &&
                  w.block0(U).norm() < opts.freeze_amplitude;
    sol.mean_z = w.block0(U).head(w.nz);
    sol.mean_chi = w.block0(U).segment<2>(w.nz);
    sol.mean_p = w.block0(U).tail(m.np);
    if (sol.trivial) {
        sol.mean_z.setZero();
        sol.mean_chi.setZero();
        sol.mean_p.setZero();
    }
    for (int k = 1; k <= w.K; ++k) {
        const CVec x = w.mode(U, k);
        ModeSolution mode;
        mode.k = k;
        mode.w = sol.trivial ? CVec::Zero(w.nz) : CVec(x.head(w.nz));
        mode.q = sol.trivial ? CVec::Zero(m.np) : CVec(x.tail(m.np));
        mode.xi = sol.trivial ? Eigen::Vector2cd::Zero()
                              : Eigen::Vector2cd(x[w.nz], x[w.nz + 1]);
        mode.residual = rnorm;
        sol.modes.modes[-k] = conj_mode(mode);
        sol.modes.modes[k] = std::move(mode);
    }
    return sol;
}

} // namespace viv
