#pragma once

// Shared internals of the truncated-Fourier (harmonic balance) machinery used
// by the periodic solver and the branch-tracing code. Not installed.

#include "viv/field.hpp"
#include "viv/kernels.hpp"
#include "viv/spectral.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

namespace viv::hb {

inline CVec apply_real(const SpMat& A, const CVec& x) {
    const Vec re = A * x.real();
    const Vec im = A * x.imag();
    return re + Cplx(0.0, 1.0) * im;
}

/// Quadratic transport (sigma - z)·grad z on free rows (the same face loop as
/// the time integrator uses).
inline Vec quad_term(const Mesh& m, const Vec& z) {
    auto zf = scatter_faces<double>(m, z);
    FaceArrays<double> a;
    a.u.resize(zf.u.size());
    a.v.resize(zf.v.size());
    const double sx = z[m.nf()], sy = z[m.nf() + 1];
    for (std::size_t f = 0; f < zf.u.size(); ++f) a.u[f] = sx - zf.u[f];
    for (std::size_t f = 0; f < zf.v.size(); ++f) a.v[f] = sy - zf.v[f];
    Vec out;
    conv_apply(m, a, zf, out);
    return out;
}

/// Bilinear polarization of quad_term: (sigma_a - a)·grad b.
inline Vec quad_bilinear(const Mesh& m, const Vec& a, const Vec& b) {
    auto bf = scatter_faces<double>(m, b);
    auto af = scatter_faces<double>(m, a);
    FaceArrays<double> mult;
    mult.u.resize(af.u.size());
    mult.v.resize(af.v.size());
    const double sx = a[m.nf()], sy = a[m.nf() + 1];
    for (std::size_t f = 0; f < af.u.size(); ++f) mult.u[f] = sx - af.u[f];
    for (std::size_t f = 0; f < af.v.size(); ++f) mult.v[f] = sy - af.v[f];
    Vec out;
    conv_apply(m, mult, bf, out);
    return out;
}

/// Workspace for the truncated Fourier system: mode stacking, collocation of
/// the quadratic transport, residual and exact directional derivative. The
/// mode region of a stacked vector is [x_0 (N real); (Re x_k, Im x_k) (2N)
/// for k = 1..K]; trailing entries (frequency, parameters) are owned by the
/// caller except for the residual/jacobian trailing slot conventions below.
struct HBWork {
    const SteadyState* s = nullptr;
    Params params;
    const OperatorSet* ops = nullptr;
    SpMat A;   // linearization pencil matrix (N x N)
    Vec Bdiag; // pencil metric
    int N = 0, nz = 0, K = 0, ntau = 0;
    double h2 = 0.0;
    bool frozen = true;
    CVec phase_ref; // reference for the phase condition on mode 1 (length N)

    int nun() const { return N + 2 * N * K + 1; }

    Eigen::Map<const Vec> block0(const Vec& U) const {
        return Eigen::Map<const Vec>(U.data(), N);
    }
    CVec mode(const Vec& U, int k) const {
        if (k == 0) return block0(U).cast<Cplx>();
        const int off = N + (k - 1) * 2 * N;
        return Eigen::Map<const Vec>(U.data() + off, N) +
               Cplx(0.0, 1.0) * Eigen::Map<const Vec>(U.data() + off + N, N);
    }
    void set_mode(Vec& U, int k, const CVec& z) const {
        if (k == 0) {
            U.segment(0, N) = z.real();
            return;
        }
        const int off = N + (k - 1) * 2 * N;
        U.segment(off, N) = z.real();
        U.segment(off + N, N) = z.imag();
    }
    void add_mode(Vec& R, int k, const CVec& r) const {
        if (k == 0) {
            R.segment(0, N) += r.real();
            return;
        }
        const int off = N + (k - 1) * 2 * N;
        R.segment(off, N) += r.real();
        R.segment(off + N, N) += r.imag();
    }

    /// z-layout samples of the reconstructed signal over one period.
    std::vector<Vec> tau_samples(const Vec& U) const {
        std::vector<Vec> zs(ntau);
        std::vector<CVec> zk(K + 1);
        for (int k = 0; k <= K; ++k) zk[k] = mode(U, k).head(nz);
        for (int j = 0; j < ntau; ++j) {
            const double tau = 2.0 * M_PI * j / ntau;
            CVec acc = zk[0];
            for (int k = 1; k <= K; ++k)
                acc += 2.0 * zk[k] * std::exp(Cplx(0.0, k * tau));
            zs[j] = acc.real();
        }
        return zs;
    }

    /// Fourier coefficients (k = 0..K) of per-sample z-layout data.
    std::vector<CVec> dft(const std::vector<Vec>& qs) const {
        std::vector<CVec> out(K + 1, CVec::Zero(nz));
        for (int j = 0; j < ntau; ++j) {
            const double tau = 2.0 * M_PI * j / ntau;
            for (int k = 0; k <= K; ++k)
                out[k] += qs[j].cast<Cplx>() * std::exp(Cplx(0.0, -k * tau));
        }
        for (auto& c : out) c /= double(ntau);
        return out;
    }

    /// Modes of the quadratic transport of the loop carried by U.
    std::vector<CVec> quad_modes(const Vec& U) const {
        const auto zs = tau_samples(U);
        std::vector<Vec> qs(ntau);
        for (int j = 0; j < ntau; ++j) qs[j] = quad_term(ops->mesh, zs[j]);
        return dft(qs);
    }

    /// Modes of the polarized quadratic transport of the loops in U and V.
    std::vector<CVec> quad_modes_bilinear(const Vec& U, const Vec& V) const {
        const auto zs = tau_samples(U);
        const auto vs = tau_samples(V);
        std::vector<Vec> qs(ntau);
        for (int j = 0; j < ntau; ++j)
            qs[j] = quad_bilinear(ops->mesh, zs[j], vs[j]) +
                    quad_bilinear(ops->mesh, vs[j], zs[j]);
        return dft(qs);
    }

    /// Residual; U layout [modes; zeta], result layout [modes; phase row].
    Vec residual(const Vec& U) const {
        const double zeta = U[nun() - 1];
        Vec R = Vec::Zero(nun());
        const auto Nk = quad_modes(U);
        for (int k = 0; k <= K; ++k) {
            const CVec x = mode(U, k);
            CVec r = apply_real(A, x) +
                     Cplx(0.0, k * zeta) * Bdiag.cast<Cplx>().cwiseProduct(x);
            r.head(nz) += h2 * params.lambda * Nk[k];
            add_mode(R, k, r);
        }
        if (!frozen) {
            const CVec z1 = mode(U, 1);
            R[nun() - 1] = (phase_ref.conjugate().cwiseProduct(z1)).sum().imag();
        }
        return R;
    }

    /// Exact directional derivative of the residual.
    Vec jacobian_apply(const Vec& U, const Vec& V) const {
        const double zeta = U[nun() - 1];
        const double dzeta = V[nun() - 1];
        Vec R = Vec::Zero(nun());
        const auto Nk = quad_modes_bilinear(U, V);
        for (int k = 0; k <= K; ++k) {
            const CVec x = mode(U, k);
            const CVec v = mode(V, k);
            CVec r = apply_real(A, v) +
                     Cplx(0.0, k * zeta) * Bdiag.cast<Cplx>().cwiseProduct(v) +
                     Cplx(0.0, k * dzeta) * Bdiag.cast<Cplx>().cwiseProduct(x);
            r.head(nz) += h2 * params.lambda * Nk[k];
            add_mode(R, k, r);
        }
        if (frozen)
            R[nun() - 1] = dzeta;
        else {
            const CVec v1 = mode(V, 1);
            R[nun() - 1] = (phase_ref.conjugate().cwiseProduct(v1)).sum().imag();
        }
        return R;
    }
};

inline HBWork make_hb_work(const SteadyState& s, const Params& params,
                           const OperatorSet& ops, int K) {
    HBWork w;
    w.s = &s;
    w.params = params;
    w.params.lambda = s.lambda;
    w.ops = &ops;
    const LinearizedOperator L = assemble_linearization(s, w.params, ops);
    w.A = L.A;
    w.Bdiag = L.Bdiag;
    w.N = L.size();
    w.nz = ops.mesh.nz();
    w.K = K;
    w.ntau = 4 * (K + 1);
    w.h2 = ops.mesh.cfg.h * ops.mesh.cfg.h;
    w.phase_ref = CVec::Zero(w.N);
    return w;
}

/// Block preconditioner: (A + (i k zeta + delta_k) B)^{-1} per mode, identity
/// on any trailing scalar slots.
struct HBPrecond {
    const HBWork* w = nullptr;
    Eigen::SparseLU<SpMat> lu0;
    std::vector<std::unique_ptr<Eigen::SparseLU<CSpMat>>> luk;

    void factor(double zeta, double shift1 = 0.0) {
        const int N = w->N;
        lu0.compute(w->A);
        if (lu0.info() != Eigen::Success)
            throw SolverError("harmonic balance: mean-block factorization failed");
        luk.clear();
        std::vector<Eigen::Triplet<Cplx>> bt;
        for (int k = 1; k <= w->K; ++k) {
            const Cplx sh(k == 1 ? shift1 : 0.0, k * zeta);
            CSpMat Ak = w->A.cast<Cplx>();
            bt.clear();
            for (int i = 0; i < N; ++i)
                if (w->Bdiag[i] != 0.0) bt.emplace_back(i, i, sh * w->Bdiag[i]);
            CSpMat Bs(N, N);
            Bs.setFromTriplets(bt.begin(), bt.end());
            Ak = Ak + Bs;
            auto lu = std::make_unique<Eigen::SparseLU<CSpMat>>();
            lu->compute(Ak);
            if (lu->info() != Eigen::Success)
                throw SolverError("harmonic balance: mode-block factorization failed");
            luk.push_back(std::move(lu));
        }
    }

    /// Applies the inverse blockwise to the mode region; entries past it are
    /// copied through.
    Vec apply(const Vec& R) const {
        const int N = w->N;
        Vec out = R;
        out.segment(0, N) = lu0.solve(R.segment(0, N));
        for (int k = 1; k <= w->K; ++k) {
            const int off = N + (k - 1) * 2 * N;
            const CVec rk =
                R.segment(off, N) +
                Cplx(0.0, 1.0) * Eigen::Map<const Vec>(R.data() + off + N, N);
            const CVec yk = luk[k - 1]->solve(rk);
            out.segment(off, N) = yk.real();
            out.segment(off + N, N) = yk.imag();
        }
        return out;
    }
};

/// Left-preconditioned GMRES (no restart); returns the correction for
/// matvec(x) = rhs.
inline Vec gmres_solve(const std::function<Vec(const Vec&)>& matvec,
                       const std::function<Vec(const Vec&)>& precond,
                       const Vec& rhs, double tol, int maxit) {
    const int n = (int)rhs.size();
    const Vec b = precond(rhs);
    const double bnorm = b.norm();
    if (bnorm == 0.0) return Vec::Zero(n);

    std::vector<Vec> V{b / bnorm};
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(maxit + 1, maxit);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(maxit + 1);
    g[0] = bnorm;
    std::vector<double> cs(maxit), sn(maxit);
    int it = 0;
    for (; it < maxit; ++it) {
        Vec t = precond(matvec(V[it]));
        for (int j = 0; j <= it; ++j) {
            H(j, it) = V[j].dot(t);
            t -= H(j, it) * V[j];
        }
        H(it + 1, it) = t.norm();
        if (H(it + 1, it) > 0.0) V.push_back(t / H(it + 1, it));
        for (int j = 0; j < it; ++j) {
            const double tmp = cs[j] * H(j, it) + sn[j] * H(j + 1, it);
            H(j + 1, it) = -sn[j] * H(j, it) + cs[j] * H(j + 1, it);
            H(j, it) = tmp;
        }
        const double denom = std::hypot(H(it, it), H(it + 1, it));
        cs[it] = H(it, it) / denom;
        sn[it] = H(it + 1, it) / denom;
        H(it, it) = denom;
        H(it + 1, it) = 0.0;
        g[it + 1] = -sn[it] * g[it];
        g[it] = cs[it] * g[it];
        if (std::abs(g[it + 1]) <= tol * bnorm) {
            ++it;
            break;
        }
        if ((int)V.size() == it + 1) {
            ++it;
            break; // exact breakdown: solution reached
        }
    }
    Eigen::VectorXd y =
        H.topLeftCorner(it, it).triangularView<Eigen::Upper>().solve(g.head(it));
    Vec x = Vec::Zero(n);
    for (int j = 0; j < it; ++j) x += y[j] * V[j];
    return x;
}

} // namespace viv::hb
