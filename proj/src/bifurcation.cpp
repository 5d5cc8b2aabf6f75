#include "viv/bifurcation.hpp"

#include "hb_internal.hpp"
#include "viv/steady.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace viv {

namespace {

constexpr double kOscillatoryTol = 1e-6;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

/// Smallest decay rate among the probed eigenvalues, with the responsible pair.
struct SpectrumProbe {
    std::vector<EigenPair> pairs;
    double min_re = 0.0;
    int argmin = -1;
};

SpectrumProbe probe_spectrum(const LinearizedOperator& L,
                             const std::vector<Cplx>& shifts, int n_eigs) {
    SpectrumProbe pr;
    pr.pairs = spectrum_at_shifts(L, shifts, n_eigs);
    pr.min_re = std::numeric_limits<double>::infinity();
    for (int i = 0; i < (int)pr.pairs.size(); ++i)
        if (pr.pairs[i].nu.real() < pr.min_re) {
            pr.min_re = pr.pairs[i].nu.real();
            pr.argmin = i;
        }
    if (pr.argmin < 0) throw SolverError("spectral probe returned no eigenvalues");
    return pr;
}

/// Base state at a probe lambda: a copy with zero sensitivity when the base is
/// frozen, a warm-started Newton solve otherwise.
struct BaseProvider {
    const Params* params = nullptr;
    const OperatorSet* ops = nullptr;
    const CrossingOptions* opts = nullptr;
    SteadyState warm;
    bool have_warm = false;

    SteadyState at(double lambda, bool sensitivity) {
        if (opts->frozen_base) {
            SteadyState s = *opts->frozen_base;
            s.lambda = lambda;
            s.du0_dlambda = CoupledField::zero(ops->mesh);
            return s;
        }
        Params p = *params;
        p.lambda = lambda;
        SteadyOptions so;
        so.compute_sensitivity = sensitivity;
        SteadyState s = solve_steady(p, *ops, have_warm ? &warm : nullptr, so);
        warm = s;
        have_warm = true;
        return s;
    }
};

} // namespace

HopfPoint locate_crossing(double lambda_lo, double lambda_hi, const Params& params,
                          const OperatorSet& ops, const CrossingOptions& opts) {
    validate_positive_varpi(params);
    if (!(lambda_lo < lambda_hi))
        throw ValidationError("locate_crossing: lambda_lo must be < lambda_hi");

    BaseProvider base{&params, &ops, &opts};
    double zeta_ref = std::sqrt(params.omega_n_sq);

    auto decay_rate = [&](double lambda) {
        const SteadyState s = base.at(lambda, false);
        Params p = params;
        p.lambda = lambda;
        const LinearizedOperator L = assemble_linearization(s, p, ops);
        const auto pr = probe_spectrum(L, {Cplx(0.0, 0.0), Cplx(0.0, zeta_ref)},
                                       opts.n_eigs);
        const double im = std::abs(pr.pairs[pr.argmin].nu.imag());
        if (im > 1e-8) zeta_ref = im;
        return pr.min_re;
    };

    double lo = lambda_lo, hi = lambda_hi;
    double m_lo = decay_rate(lo);
    double m_hi = decay_rate(hi);
    double lambda0;
    if (std::abs(m_lo) <= opts.re_tol)
        lambda0 = lo;
    else if (std::abs(m_hi) <= opts.re_tol)
        lambda0 = hi;
    else {
        if (m_lo * m_hi > 0.0)
            throw SolverError("locate_crossing: no sign change of the smallest "
                              "decay rate over [" +
                              fmt(lambda_lo) + ", " + fmt(lambda_hi) + "] (" +
                              fmt(m_lo) + " vs " + fmt(m_hi) + ")");
        bool resolved = false;
        lambda0 = 0.5 * (lo + hi);
        for (int it = 0; it < opts.max_bisect; ++it) {
            lambda0 = 0.5 * (lo + hi);
            const double m_mid = decay_rate(lambda0);
            if (std::abs(m_mid) <= opts.re_tol) {
                resolved = true;
                break;
            }
            if (m_lo * m_mid < 0.0) {
                hi = lambda0;
                m_hi = m_mid;
            } else {
                lo = lambda0;
                m_lo = m_mid;
            }
        }
        if (!resolved)
            throw SolverError(
                "locate_crossing: bisection exhausted without resolving the "
                "crossing to tolerance " +
                fmt(opts.re_tol));
    }

    // Final assessment at the resolved lambda0.
    HopfPoint hp;
    hp.frozen_base = opts.frozen_base.has_value();
    hp.lambda0 = lambda0;
    hp.state = base.at(lambda0, true);
    Params p0 = params;
    p0.lambda = lambda0;
    const LinearizedOperator L = assemble_linearization(hp.state, p0, ops);

    // Wide probe covering the harmonic ladder for the non-resonance report.
    std::vector<Cplx> shifts{Cplx(0.0, 0.0)};
    for (int k = 1; k <= std::max(1, opts.h2_kmax); ++k)
        shifts.emplace_back(0.0, k * zeta_ref);
    const auto pr = probe_spectrum(L, shifts, opts.n_eigs);

    int best = -1;
    double best_re = std::numeric_limits<double>::infinity();
    for (int i = 0; i < (int)pr.pairs.size(); ++i)
        if (std::abs(pr.pairs[i].nu.real()) < best_re) {
            best_re = std::abs(pr.pairs[i].nu.real());
            best = i;
        }
    EigenPair pair = pr.pairs[best];
    if (std::abs(pair.nu.imag()) <= kOscillatoryTol * (1.0 + std::abs(pair.nu)))
        throw SolverError("locate_crossing: the crossing pair is not "
                          "oscillatory (nu = " +
                          fmt(pair.nu.real()) + " + " + fmt(pair.nu.imag()) +
                          "i)");
    if (pair.nu.imag() < 0.0) {
        pair.nu = std::conj(pair.nu);
        pair.x = pair.x.conjugate();
    }
    hp.eig = pair;
    hp.zeta0 = pair.nu.imag();

    hp.frame = adjoint_frame(L, pair);
    const SpMat dA = assemble_S011(hp.state, p0, ops);
    hp.crossing = crossing_speed(hp.frame, dA);

    std::vector<Cplx> values;
    values.reserve(2 * pr.pairs.size());
    for (const auto& e : pr.pairs) {
        values.push_back(e.nu);
        values.push_back(std::conj(e.nu));
    }
    hp.h2 = check_H2prime(values, pair.nu, opts.h2_kmax);
    hp.h1 = check_H1prime(hp.state, p0, ops);
    return hp;
}

namespace {

/// Truncated Fourier system about a fixed Hopf base. Unknown stacking:
/// [mean (N); (Re x_k, Im x_k) (2N) for k = 1..K; mu; zeta]. The two trailing
/// residual rows are the amplitude and phase side conditions pairing mode 1
/// against the adjoint frame.
struct LSWork {
    hb::HBWork w;
    SpMat A0, AT;    // pencil split A(lambda) = A0 + lambda AT
    Vec g0;          // lambda-derivative of the base equation (mean rows)
    CVec y0;         // left frame vector
    double lambda0 = 0.0, zeta0 = 0.0, epsilon = 0.0;
    double lambda_set = 0.0;

    int nun() const { return w.N * (2 * w.K + 1) + 2; }
    int mu_idx() const { return nun() - 2; }
    int zeta_idx() const { return nun() - 1; }

    void set_lambda(double lambda) {
        if (lambda == lambda_set) return;
        w.A = A0 + lambda * AT;
        w.params.lambda = lambda;
        lambda_set = lambda;
    }

    Cplx frame_pairing(const CVec& x1) const {
        Cplx c(0.0, 0.0);
        for (int i = 0; i < w.N; ++i)
            c += std::conj(y0[i]) * w.Bdiag[i] * x1[i];
        return c;
    }

    Vec residual(const Vec& U) {
        const double mu = U[mu_idx()];
        const double zeta = U[zeta_idx()];
        const double lambda = lambda0 + mu;
        set_lambda(lambda);
        Vec R = Vec::Zero(nun());
        const auto Nk = w.quad_modes(U);
        for (int k = 0; k <= w.K; ++k) {
            const CVec x = w.mode(U, k);
            CVec r = hb::apply_real(w.A, x) +
                     Cplx(0.0, k * zeta) * w.Bdiag.cast<Cplx>().cwiseProduct(x);
            r.head(w.nz) += w.h2 * lambda * Nk[k];
            if (k == 0) r += mu * g0.cast<Cplx>();
            w.add_mode(R, k, r);
        }
        const Cplx c = frame_pairing(w.mode(U, 1));
        R[mu_idx()] = 2.0 * M_PI * c.real() - epsilon;
        R[zeta_idx()] = -2.0 * M_PI * c.imag();
        return R;
    }

    /// Per-mode column of the mu-derivative of the residual at U (the quad
    /// modes of U are passed in to avoid recomputation inside GMRES).
    CVec mu_column(const Vec& U, const std::vector<CVec>& Nk, int k) const {
        CVec r = hb::apply_real(AT, w.mode(U, k));
        r.head(w.nz) += w.h2 * Nk[k];
        if (k == 0) r += g0.cast<Cplx>();
        return r;
    }

    /// Exact directional derivative at U applied to V; Nk are the quad modes
    /// of U.
    Vec jacobian_apply(const Vec& U, const std::vector<CVec>& Nk, const Vec& V) {
        const double mu = U[mu_idx()];
        const double zeta = U[zeta_idx()];
        const double lambda = lambda0 + mu;
        set_lambda(lambda);
        const double dmu = V[mu_idx()];
        const double dzeta = V[zeta_idx()];
        Vec R = Vec::Zero(nun());
        const auto dNk = w.quad_modes_bilinear(U, V);
        for (int k = 0; k <= w.K; ++k) {
            const CVec x = w.mode(U, k);
            const CVec v = w.mode(V, k);
            CVec r = hb::apply_real(w.A, v) +
                     Cplx(0.0, k * zeta) * w.Bdiag.cast<Cplx>().cwiseProduct(v) +
                     Cplx(0.0, k * dzeta) * w.Bdiag.cast<Cplx>().cwiseProduct(x);
            r.head(w.nz) += w.h2 * lambda * dNk[k];
            if (dmu != 0.0) r += dmu * mu_column(U, Nk, k);
            w.add_mode(R, k, r);
        }
        const Cplx c = frame_pairing(w.mode(V, 1));
        R[mu_idx()] = 2.0 * M_PI * c.real();
        R[zeta_idx()] = -2.0 * M_PI * c.imag();
        return R;
    }
};

LSWork make_ls_work(const HopfPoint& hopf, const Params& params,
                    const OperatorSet& ops, double epsilon, int K) {
    LSWork ls;
    ls.w = hb::make_hb_work(hopf.state, params, ops, K);
    ls.lambda0 = hopf.lambda0;
    ls.zeta0 = hopf.zeta0;
    ls.epsilon = epsilon;
    ls.y0 = hopf.frame.y0;
    ls.lambda_set = hopf.state.lambda;

    SteadyState sa = hopf.state;
    Params p = params;
    sa.lambda = 0.0;
    ls.A0 = assemble_linearization(sa, p, ops).A;
    sa.lambda = 1.0;
    ls.AT = assemble_linearization(sa, p, ops).A - ls.A0;

    ls.g0 = Vec::Zero(ls.w.N);
    if (!hopf.frozen_base) {
        const Vec& z0 = hopf.state.u0.z;
        const Vec& q0 = hopf.state.p0.p;
        Params pa = params, pb = params;
        pa.lambda = 0.0;
        pb.lambda = 1.0;
        const Vec ra = steady_residual(pa, ops, z0, q0);
        const Vec rb = steady_residual(pb, ops, z0, q0);
        const int nf = ops.mesh.nf();
        ls.g0.head(nf) = (rb - ra).head(nf);
    }
    return ls;
}

BranchPoint trivial_point(const HopfPoint& hopf, const OperatorSet& ops) {
    BranchPoint pt;
    pt.zeta = hopf.zeta0;
    pt.v = CoupledField::zero(ops.mesh);
    pt.mean_p = Vec::Zero(hopf.state.p0.p.size());
    return pt;
}

/// Unknown vector carrying a previously solved point, rescaled from its
/// amplitude to epsilon (mode 1 linearly, everything quadratic in amplitude
/// by its leading order).
Vec predictor_from_point(const LSWork& ls, const BranchPoint& prev,
                         double epsilon) {
    const int nz = ls.w.nz;
    const int np = ls.w.N - nz - 2;
    const double f = epsilon / prev.epsilon;
    Vec U = Vec::Zero(ls.nun());

    CVec x0 = CVec::Zero(ls.w.N);
    x0.head(nz) = prev.v.z.cast<Cplx>();
    x0[nz] = prev.eta_bar[0];
    x0[nz + 1] = prev.eta_bar[1];
    x0.tail(np) = prev.mean_p.cast<Cplx>();
    ls.w.set_mode(U, 0, f * f * x0);

    for (int k = 1; k <= ls.w.K; ++k) {
        if (!prev.w.has(k)) continue;
        const ModeSolution& ms = prev.w.at(k);
        CVec xk = CVec::Zero(ls.w.N);
        xk.head(nz) = ms.w;
        xk[nz] = ms.xi[0];
        xk[nz + 1] = ms.xi[1];
        xk.tail(np) = ms.q;
        ls.w.set_mode(U, k, (k == 1 ? f : f * f) * xk);
    }
    U[ls.mu_idx()] = f * f * prev.mu;
    U[ls.zeta_idx()] = ls.zeta0 + f * f * (prev.zeta - ls.zeta0);
    return U;
}

/// First-order predictor: mode 1 carries the conjugate frame vector at
/// amplitude epsilon; (mu, zeta) solve the projected solvability system.
Vec predictor_from_frame(LSWork& ls, const HopfPoint& hopf, double epsilon) {
    Vec U = Vec::Zero(ls.nun());
    const CVec x1 = (0.5 * epsilon) * hopf.frame.v0.x.conjugate();
    ls.w.set_mode(U, 1, x1);
    U[ls.zeta_idx()] = ls.zeta0;

    Vec R = ls.residual(U);
    const auto Nk = ls.w.quad_modes(U);
    const CVec r1 = ls.w.mode(R, 1);
    const Cplx ca = ls.frame_pairing(ls.mu_column(U, Nk, 1));
    const Cplx cb =
        ls.frame_pairing(Cplx(0.0, 1.0) *
                         ls.w.Bdiag.cast<Cplx>().cwiseProduct(ls.w.mode(U, 1)));
    const Cplx cr = ls.frame_pairing(r1);
    const double det = ca.real() * cb.imag() - ca.imag() * cb.real();
    const double scale = (std::abs(ca) + std::abs(cb));
    if (std::abs(det) <= 1e-12 * scale * scale)
        throw SolverError("lyapunov_schmidt_solve: side-condition system is "
                          "singular (the crossing speed has no real part)");
    const double dmu = (-cr.real() * cb.imag() + cr.imag() * cb.real()) / det;
    const double dzeta = (-ca.real() * cr.imag() + ca.imag() * cr.real()) / det;
    U[ls.mu_idx()] += dmu;
    U[ls.zeta_idx()] += dzeta;
    return U;
}

BranchPoint pack_point(LSWork& ls, const Vec& U, double epsilon, int iterations,
                       double newton_residual) {
    const int nz = ls.w.nz;
    const int np = ls.w.N - nz - 2;
    BranchPoint pt;
    pt.epsilon = epsilon;
    pt.mu = U[ls.mu_idx()];
    pt.zeta = U[ls.zeta_idx()];

    const CVec x0 = ls.w.mode(U, 0);
    pt.v = CoupledField(x0.head(nz).real());
    pt.eta_bar = Eigen::Vector2d(x0[nz].real(), x0[nz + 1].real());
    pt.mean_p = x0.tail(np).real();

    std::vector<CVec> xs(ls.w.K + 1);
    for (int k = 0; k <= ls.w.K; ++k) xs[k] = ls.w.mode(U, k);
    for (int k = 1; k <= ls.w.K; ++k) {
        ModeSolution ms;
        ms.k = k;
        ms.w = xs[k].head(nz);
        ms.xi = Eigen::Vector2cd(xs[k][nz], xs[k][nz + 1]);
        ms.q = xs[k].tail(np);
        pt.w.modes[k] = ms;
        ModeSolution mc;
        mc.k = -k;
        mc.w = ms.w.conjugate();
        mc.xi = ms.xi.conjugate();
        mc.q = ms.q.conjugate();
        pt.w.modes[-k] = mc;
    }

    pt.iterations = iterations;
    pt.residuals.newton = newton_residual;

    // Independent quadrature of the side conditions against the dual loops.
    const int nq = 64;
    double s1 = 0.0, s2 = 0.0;
    for (int j = 0; j < nq; ++j) {
        const double tau = 2.0 * M_PI * j / nq;
        CVec osc = CVec::Zero(ls.w.N);
        for (int k = 1; k <= ls.w.K; ++k)
            osc += 2.0 * xs[k] * std::exp(Cplx(0.0, k * tau));
        const Vec wz = osc.real();
        const CVec ye = ls.y0 * std::exp(Cplx(0.0, tau));
        const Vec v1d = 2.0 * M_PI * ye.real();
        const Vec v2d = 2.0 * M_PI * ye.imag();
        s1 += wz.dot(ls.w.Bdiag.cwiseProduct(v1d));
        s2 += wz.dot(ls.w.Bdiag.cwiseProduct(v2d));
    }
    s1 /= nq;
    s2 /= nq;
    pt.residuals.side1 = std::abs(s1 - epsilon);
    pt.residuals.side2 = std::abs(s2);

    // Pointwise residual of the full (untruncated) system over one period.
    const double lambda = ls.lambda0 + pt.mu;
    ls.set_lambda(lambda);
    double worst = 0.0;
    for (int j = 0; j < nq; ++j) {
        const double tau = 2.0 * M_PI * j / nq;
        CVec zc = xs[0].cast<Cplx>();
        CVec zd = CVec::Zero(ls.w.N);
        for (int k = 1; k <= ls.w.K; ++k) {
            const Cplx ph = std::exp(Cplx(0.0, k * tau));
            zc += 2.0 * xs[k] * ph;
            zd += 2.0 * Cplx(0.0, k) * xs[k] * ph;
        }
        const Vec z = zc.real();
        const Vec dz = zd.real();
        Vec r = pt.zeta * ls.w.Bdiag.cwiseProduct(dz) + ls.w.A * z + pt.mu * ls.g0;
        r.head(ls.w.nz) +=
            ls.w.h2 * lambda * hb::quad_term(ls.w.ops->mesh, z.head(ls.w.nz));
        worst = std::max(worst, r.norm());
    }
    pt.residuals.time_domain = worst;
    return pt;
}

} // namespace

BranchPoint lyapunov_schmidt_solve(const HopfPoint& hopf, const Params& params,
                                   const OperatorSet& ops, double epsilon,
                                   const BranchPoint* predictor,
                                   const BranchOptions& opts) {
    validate_positive_varpi(params);
    if (opts.K_trunc < 1)
        throw ValidationError("lyapunov_schmidt_solve: K_trunc must be >= 1");
    if (epsilon == 0.0) return trivial_point(hopf, ops);

    LSWork ls = make_ls_work(hopf, params, ops, epsilon, opts.K_trunc);
    Vec U = (predictor && predictor->epsilon != 0.0)
                ? predictor_from_point(ls, *predictor, epsilon)
                : predictor_from_frame(ls, hopf, epsilon);

    hb::HBPrecond P;
    P.w = &ls.w;
    const double shift1 = opts.precond_shift * (1.0 + std::abs(ls.zeta0));
    double lambda_fact = ls.lambda0 + U[ls.mu_idx()];
    double zeta_fact = U[ls.zeta_idx()];
    ls.set_lambda(lambda_fact);
    P.factor(zeta_fact, shift1);

    Vec R = ls.residual(U);
    double rnorm = R.norm();
    int iterations = 0;
    for (int it = 0; it < opts.max_iter; ++it) {
        if (rnorm <= opts.tol * (1.0 + U.norm())) break;
        const double lambda = ls.lambda0 + U[ls.mu_idx()];
        const double zeta = U[ls.zeta_idx()];
        if (std::abs(lambda - lambda_fact) > 0.01 * (1.0 + std::abs(lambda)) ||
            std::abs(zeta - zeta_fact) > 0.01 * (1.0 + std::abs(zeta))) {
            ls.set_lambda(lambda);
            P.factor(zeta, shift1);
            lambda_fact = lambda;
            zeta_fact = zeta;
        }
        const auto Nk = ls.w.quad_modes(U);
        auto matvec = [&](const Vec& V) { return ls.jacobian_apply(U, Nk, V); };
        auto precond = [&](const Vec& V) { return P.apply(V); };
        const Vec delta =
            hb::gmres_solve(matvec, precond, -R, 1e-10, opts.gmres_maxit);

        double step = 1.0;
        Vec U_new, R_new;
        double rnorm_new = rnorm;
        for (int bt = 0; bt < 8; ++bt) {
            U_new = U + step * delta;
            R_new = ls.residual(U_new);
            rnorm_new = R_new.norm();
            if (rnorm_new < rnorm) break;
            step *= 0.5;
        }
        U = U_new;
        R = R_new;
        rnorm = rnorm_new;
        ++iterations;
    }
    if (rnorm > opts.tol * (1.0 + U.norm()))
        throw SolverError(
            "lyapunov_schmidt_solve: Newton stagnated at epsilon " +
            fmt(epsilon) + ", residual " + fmt(rnorm));

    return pack_point(ls, U, epsilon, iterations, rnorm);
}

std::pair<double, double> fit_mu2(const std::vector<BranchPoint>& points) {
    double num = 0.0, den = 0.0;
    int n = 0;
    for (const auto& p : points) {
        if (p.epsilon == 0.0) continue;
        const double e2 = p.epsilon * p.epsilon;
        num += p.mu * e2;
        den += e2 * e2;
        ++n;
    }
    if (n == 0 || den == 0.0)
        throw ValidationError("fit_mu2: no points with nonzero amplitude");
    const double mu2 = num / den;
    double ss = 0.0, me2 = 0.0;
    for (const auto& p : points) {
        if (p.epsilon == 0.0) continue;
        const double e2 = p.epsilon * p.epsilon;
        const double d = p.mu - mu2 * e2;
        ss += d * d;
        me2 += e2;
    }
    me2 /= n;
    const double rms = std::sqrt(ss / n);
    return {mu2, rms / me2};
}

BranchClass classify_branch(const Branch& branch) {
    int pos = 0, neg = 0;
    for (const auto& p : branch.points) {
        if (p.epsilon > 0.0) ++pos;
        if (p.epsilon < 0.0) ++neg;
    }
    if (pos < 3 || neg < 3)
        throw ValidationError("classify_branch: need at least 3 amplitudes of "
                              "each sign, have " +
                              std::to_string(pos) + " / " + std::to_string(neg));
    const auto [mu2, res] = fit_mu2(branch.points);
    if (std::abs(mu2) < 10.0 * res) return BranchClass::degenerate;
    return mu2 > 0.0 ? BranchClass::supercritical : BranchClass::subcritical;
}

Branch trace_branch(const HopfPoint& hopf, const Params& params,
                    const OperatorSet& ops, const std::vector<double>& eps_grid,
                    const BranchOptions& opts) {
    if (eps_grid.empty())
        throw ValidationError("trace_branch: empty epsilon grid");
    std::vector<double> grid = eps_grid;
    std::sort(grid.begin(), grid.end());
    const int n = (int)grid.size();
    for (int i = 0; i < n; ++i) {
        if (grid[i] == 0.0)
            throw ValidationError("trace_branch: epsilon grid must not contain 0");
        const double mirror = grid[n - 1 - i];
        if (std::abs(grid[i] + mirror) > 1e-12 * std::max(1.0, std::abs(grid[i])))
            throw ValidationError(
                "trace_branch: epsilon grid must be symmetric about 0");
    }

    Branch br;
    std::vector<double> pos, neg;
    for (double e : grid) (e > 0.0 ? pos : neg).push_back(e);
    std::sort(pos.begin(), pos.end()); // ascending amplitude
    std::sort(neg.begin(), neg.end(), [](double a, double b) {
        return std::abs(a) < std::abs(b);
    });

    for (const auto& sweep : {pos, neg}) {
        const BranchPoint* warm = nullptr;
        BranchPoint last;
        for (double e : sweep) {
            try {
                last = lyapunov_schmidt_solve(hopf, params, ops, e, warm, opts);
            } catch (const SolverError& err) {
                br.truncated = true;
                if (br.termination.empty()) br.termination = err.what();
                break;
            }
            br.points.push_back(last);
            warm = &last;
        }
    }
    std::sort(br.points.begin(), br.points.end(),
              [](const BranchPoint& a, const BranchPoint& b) {
                  return a.epsilon < b.epsilon;
              });

    if (!br.points.empty()) {
        const auto [mu2, res] = fit_mu2(br.points);
        br.mu2 = mu2;
        br.fit_residual = res;
    }

    // Small-amplitude limit: distance of the scaled loop to the frame mode.
    std::vector<const BranchPoint*> pps;
    for (const auto& p : br.points)
        if (p.epsilon > 0.0) pps.push_back(&p);
    std::sort(pps.begin(), pps.end(), [](const auto* a, const auto* b) {
        return a->epsilon < b->epsilon;
    });
    auto limit_ratio = [&](const BranchPoint& p) {
        const int nz = ops.mesh.nz();
        const Vec& Bd = hopf.frame.Bdiag;
        const int N = (int)Bd.size();
        const int np = N - nz - 2;
        double acc = 0.0;
        for (int k = 1; k <= opts.K_trunc; ++k) {
            if (!p.w.has(k)) continue;
            const ModeSolution& ms = p.w.at(k);
            CVec xk = CVec::Zero(N);
            xk.head(nz) = ms.w;
            xk[nz] = ms.xi[0];
            xk[nz + 1] = ms.xi[1];
            xk.tail(np) = ms.q;
            if (k == 1) xk -= (0.5 * p.epsilon) * hopf.frame.v0.x.conjugate();
            for (int i = 0; i < N; ++i) acc += Bd[i] * std::norm(xk[i]);
        }
        return std::sqrt(acc) / std::abs(p.epsilon);
    };
    if (pps.size() >= 2) {
        br.limit_ratio_smaller = limit_ratio(*pps[0]);
        br.limit_ratio_small = limit_ratio(*pps[1]);
    }

    try {
        br.classification = classify_branch(br);
    } catch (const ValidationError&) {
        br.classification = BranchClass::degenerate;
        if (br.termination.empty())
            br.termination = "too few points for classification";
    }
    return br;
}

} // namespace viv
