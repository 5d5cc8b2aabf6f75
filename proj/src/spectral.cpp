#include "viv/spectral.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace viv {

namespace {

using Trip = Eigen::Triplet<double>;

void append_sparse(std::vector<Trip>& trips, const SpMat& M, double scale,
                   int row_off = 0, int col_off = 0) {
    for (int k = 0; k < M.outerSize(); ++k)
        for (SpMat::InnerIterator it(M, k); it; ++it)
            trips.emplace_back(row_off + it.row(), col_off + it.col(),
                               scale * it.value());
}

/// Transport block lambda (P1 - u0·grad + multiplier) of the linearization,
/// plus optionally its lambda-derivative pieces built from du0/dlambda.
SpMat transport_block(const SteadyState& s, const OperatorSet& ops, bool derivative) {
    const Mesh& m = ops.mesh;
    SpMat T = ops.P1;
    T = T - conv_jacobian_b(m, s.u0) + multiplier_grad(m, face_gradients(m, s.u0), true);
    if (derivative) {
        if (!s.du0_dlambda)
            throw ValidationError("steady state carries no du0/dlambda sensitivity");
        const CoupledField& du = *s.du0_dlambda;
        SpMat Tp = multiplier_grad(m, face_gradients(m, du), true);
        Tp = Tp - conv_jacobian_b(m, du);
        T = T + s.lambda * Tp;
    }
    return T;
}

} // namespace

LinearizedOperator assemble_linearization(const SteadyState& s, const Params& params,
                                          const OperatorSet& ops) {
    validate(params);
    validate_positive_varpi(params);
    const Mesh& m = ops.mesh;
    const int nz = m.nz();
    const int nf = m.nf();
    const int np = m.np;
    const int N = nz + 2 + np;
    const double h2 = m.cfg.h * m.cfg.h;

    std::vector<Trip> trips;
    trips.reserve(ops.S.nonZeros() + 2 * ops.D.nonZeros() + 8);
    append_sparse(trips, ops.S, 1.0);
    if (s.lambda != 0.0)
        append_sparse(trips, transport_block(s, ops, false), -h2 * s.lambda);
    for (int k = 0; k < ops.D.outerSize(); ++k) {
        for (SpMat::InnerIterator it(ops.D, k); it; ++it) {
            trips.emplace_back(nz + 2 + it.row(), it.col(), it.value());
            trips.emplace_back(it.col(), nz + 2 + it.row(), -h2 * it.value());
        }
    }
    for (int a = 0; a < 2; ++a) {
        trips.emplace_back(nf + a, nz + a, params.omega_n_sq / params.varpi);
        trips.emplace_back(nz + a, nf + a, -1.0);
    }
    if (ops.closed) trips.emplace_back(nz + 2, nz + 2, 1.0);

    LinearizedOperator L;
    L.A.resize(N, N);
    L.A.setFromTriplets(trips.begin(), trips.end());
    L.Bdiag = Vec::Zero(N);
    L.Bdiag.head(nz) = ops.mass;
    L.Bdiag[nz] = 1.0;
    L.Bdiag[nz + 1] = 1.0;
    L.nz = nz;
    L.np = np;
    L.params = params;
    L.params.lambda = s.lambda;
    L.closed = ops.closed;
    return L;
}

SpMat assemble_S011(const SteadyState& s, const Params& params, const OperatorSet& ops) {
    const Mesh& m = ops.mesh;
    const int N = m.nz() + 2 + m.np;
    const double h2 = m.cfg.h * m.cfg.h;
    std::vector<Trip> trips;
    append_sparse(trips, transport_block(s, ops, true), -h2);
    (void)params;
    SpMat out(N, N);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

namespace {

/// One complex shift-invert Arnoldi run: Ritz pairs of (A - s B)^{-1} B.
struct ArnoldiResult {
    std::vector<Cplx> theta;
    std::vector<CVec> vecs;
};

ArnoldiResult arnoldi_shift_invert(const LinearizedOperator& L, Cplx shift, int m) {
    const int N = L.size();
    m = std::min(m, N);

    CSpMat As = L.A.cast<Cplx>();
    {
        std::vector<Eigen::Triplet<Cplx>> bt;
        bt.reserve(N);
        for (int i = 0; i < N; ++i)
            if (L.Bdiag[i] != 0.0) bt.emplace_back(i, i, -shift * L.Bdiag[i]);
        CSpMat Bs(N, N);
        Bs.setFromTriplets(bt.begin(), bt.end());
        As = As + Bs;
    }
    Eigen::SparseLU<CSpMat> lu;
    lu.compute(As);
    if (lu.info() != Eigen::Success)
        throw SolverError("shift-invert factorization failed");

    std::mt19937 rng(20260823);
    std::normal_distribution<double> gauss;
    CVec v0(N);
    for (int i = 0; i < N; ++i) v0[i] = Cplx(gauss(rng), gauss(rng));
    v0.normalize();

    std::vector<CVec> V{v0};
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(m + 1, m);
    int k = 0;
    for (; k < m; ++k) {
        CVec w = lu.solve(L.Bdiag.cast<Cplx>().cwiseProduct(V[k]));
        for (int pass = 0; pass < 2; ++pass) {
            for (int j = 0; j <= k; ++j) {
                const Cplx hij = V[j].dot(w); // conjugate-linear in V[j]
                H(j, k) += hij;
                w -= hij * V[j];
            }
        }
        const double beta = w.norm();
        H(k + 1, k) = beta;
        if (beta <= 1e-13) {
            ++k;
            break;
        }
        if (k + 1 < m) V.push_back(w / beta);
    }

    ArnoldiResult out;
    if (k == 0) return out;
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(H.topLeftCorner(k, k));
    if (es.info() != Eigen::Success) throw SolverError("Ritz eigensolve failed");
    for (int r = 0; r < k; ++r) {
        CVec x = CVec::Zero(N);
        for (int j = 0; j < k && j < (int)V.size(); ++j)
            x += es.eigenvectors()(j, r) * V[j];
        const double nx = x.norm();
        if (nx <= 0.0) continue;
        out.theta.push_back(es.eigenvalues()[r]);
        out.vecs.push_back(x / nx);
    }
    return out;
}

double pair_residual(const LinearizedOperator& L, Cplx nu, const CVec& x) {
    const CVec r = L.A * x - nu * L.Bdiag.cast<Cplx>().cwiseProduct(x);
    return r.norm();
}

} // namespace

std::vector<EigenPair> eigs(const LinearizedOperator& L, Cplx shift, int n,
                            int max_arnoldi) {
    if (n <= 0) throw ValidationError("eigs: n must be positive");
    const int N = L.size();
    int m = max_arnoldi > 0 ? max_arnoldi : std::min(N, std::max(60, 6 * n + 20));
    Cplx s = shift;

    std::string last_err;
    for (int attempt = 0; attempt < 4; ++attempt) {
        ArnoldiResult ar;
        try {
            ar = arnoldi_shift_invert(L, s, m);
        } catch (const SolverError& e) {
            // shift on (or numerically too near) an eigenvalue: jitter and retry
            last_err = e.what();
            s += Cplx(3e-4, 5e-4) * (1.0 + std::abs(s));
            continue;
        }

        // map Ritz values back, dropping the images of infinite eigenvalues
        double tmax = 0.0;
        for (const Cplx& t : ar.theta) tmax = std::max(tmax, std::abs(t));
        std::vector<EigenPair> cand;
        for (std::size_t i = 0; i < ar.theta.size(); ++i) {
            if (std::abs(ar.theta[i]) <= 1e-12 * std::max(tmax, 1.0)) continue;
            EigenPair p;
            p.nu = s + 1.0 / ar.theta[i];
            p.x = std::move(ar.vecs[i]);
            cand.push_back(std::move(p));
        }
        std::sort(cand.begin(), cand.end(), [&](const EigenPair& a, const EigenPair& b) {
            return std::abs(a.nu - shift) < std::abs(b.nu - shift);
        });
        if ((int)cand.size() > n) cand.resize(n);

        bool ok = (int)cand.size() == std::min(n, N);
        for (EigenPair& p : cand) {
            p.residual = pair_residual(L, p.nu, p.x);
            if (p.residual > 1e-8 * (1.0 + std::abs(p.nu))) ok = false;
        }
        if (ok) return cand;
        if (attempt == 3) {
            std::ostringstream msg;
            msg << "eigs: residual certificates not met at Arnoldi size " << m;
            throw SolverError(msg.str());
        }
        // a shift sitting (numerically) on an eigenvalue poisons the solves
        // without failing the factorization: move it slightly and grow the
        // Krylov space
        s += Cplx(2e-5, 3e-5) * (1.0 + std::abs(s));
        m = std::min(std::min(N, 600), 2 * m);
    }
    throw SolverError("eigs: repeated factorization failures: " + last_err);
}

std::vector<EigenPair> spectrum_at_shifts(const LinearizedOperator& L,
                                          const std::vector<Cplx>& shifts,
                                          int n_per_shift) {
    std::vector<std::vector<EigenPair>> per(shifts.size());
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < (int)shifts.size(); ++i) {
        try {
            per[i] = eigs(L, shifts[i], n_per_shift);
        } catch (...) {
#pragma omp critical
            err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);

    std::vector<EigenPair> all;
    for (auto& v : per) {
        for (auto& p : v) {
            bool dup = false;
            for (const auto& q : all)
                if (std::abs(q.nu - p.nu) <= 1e-7 * (1.0 + std::abs(p.nu))) {
                    dup = true;
                    break;
                }
            if (!dup) all.push_back(std::move(p));
        }
    }
    return all;
}

namespace {

Cplx bilinear_B(const LinearizedOperator& L, const CVec& a, const CVec& b) {
    Cplx acc = 0.0;
    for (int i = 0; i < L.size(); ++i)
        if (L.Bdiag[i] != 0.0) acc += a[i] * L.Bdiag[i] * b[i];
    return acc;
}

} // namespace

AdjointFrame adjoint_frame(const LinearizedOperator& L, const EigenPair& pair,
                           double min_separation) {
    const Cplx nu0 = pair.nu;
    const Cplx probe = nu0 + Cplx(1e-4, 0.0) * (1.0 + std::abs(nu0));

    // simplicity: the next-nearest eigenvalue must be clearly separated
    const auto near = eigs(L, probe, 4);
    double sep = std::numeric_limits<double>::infinity();
    for (const auto& p : near) {
        const double d = std::abs(p.nu - nu0);
        if (d > 1e-9 * (1.0 + std::abs(nu0))) sep = std::min(sep, d);
    }
    if (!(sep > min_separation)) {
        std::ostringstream msg;
        msg << "eigenvalue at (" << nu0.real() << ", " << nu0.imag()
            << ") is clustered or defective: separation " << sep;
        throw SolverError(msg.str());
    }

    // left eigenvector: same pencil with A transposed
    LinearizedOperator LT = L;
    LT.A = SpMat(L.A.transpose());
    const auto lefts = eigs(LT, probe, 3);
    const EigenPair* best = nullptr;
    for (const auto& p : lefts)
        if (!best || std::abs(p.nu - nu0) < std::abs(best->nu - nu0)) best = &p;
    if (!best || std::abs(best->nu - nu0) > 1e-6 * (1.0 + std::abs(nu0)))
        throw SolverError("left eigenvalue does not match the right one");

    AdjointFrame f;
    f.v0 = pair;
    f.zeta0 = nu0.imag();
    CVec y0 = best->x;
    const Cplx scale = bilinear_B(L, y0, pair.x);
    if (std::abs(scale) <= 1e-12)
        throw SolverError("degenerate left/right pairing (defective eigenvalue?)");
    y0 *= Cplx(1.0 / M_PI, 0.0) / scale;
    f.y0 = y0;
    f.Bdiag = L.Bdiag;
    f.v1 = pair.x.real();
    f.v2 = pair.x.imag();
    f.v1d = 2.0 * M_PI * y0.real();
    f.v2d = -2.0 * M_PI * y0.imag();
    return f;
}

CrossingSpeed crossing_speed(const AdjointFrame& frame, const SpMat& dA,
                             int tau_samples) {
    CrossingSpeed out;
    // pairing <y0, dA v0> and the exact eigenvalue derivative
    CVec dv = dA * frame.v0.x;
    Cplx pairing = 0.0;
    for (int i = 0; i < dv.size(); ++i) pairing += frame.y0[i] * dv[i];
    out.pairing = pairing;

    Cplx denom = 0.0;
    for (int i = 0; i < dv.size(); ++i)
        if (frame.Bdiag[i] != 0.0) denom += frame.y0[i] * frame.Bdiag[i] * frame.v0.x[i];
    out.nu_prime = pairing / denom;

    // independent (A.4)-style evaluation by tau quadrature
    double acc = 0.0;
    for (int q = 0; q < tau_samples; ++q) {
        const double tau = 2.0 * M_PI * q / tau_samples;
        const Vec v1t = std::cos(tau) * frame.v1 - std::sin(tau) * frame.v2;
        const Vec v1dt = std::cos(tau) * frame.v1d - std::sin(tau) * frame.v2d;
        acc += v1dt.dot(dA * v1t);
    }
    out.a4_real = (acc / tau_samples) / M_PI;
    return out;
}

H2Report check_H2prime(const std::vector<Cplx>& spectrum, Cplx nu0, int k_max,
                       double threshold) {
    H2Report rep;
    rep.simplicity_margin = std::numeric_limits<double>::infinity();
    for (const Cplx& nu : spectrum) {
        const double d = std::abs(nu - nu0);
        if (d > 1e-9 * (1.0 + std::abs(nu0)))
            rep.simplicity_margin = std::min(rep.simplicity_margin, d);
    }
    rep.ok = rep.simplicity_margin > threshold;
    if (!rep.ok) rep.first_failure_k = 1;

    const Cplx izeta(0.0, nu0.imag());
    for (int k = 2; k <= k_max; ++k) {
        const Cplx target = double(k) * izeta;
        double d = std::numeric_limits<double>::infinity();
        for (const Cplx& nu : spectrum) d = std::min(d, std::abs(nu - target));
        rep.harmonic_distance.push_back(d);
        if (d <= threshold && rep.first_failure_k == 0) {
            rep.ok = false;
            rep.first_failure_k = k;
        }
    }
    return rep;
}

} // namespace viv
