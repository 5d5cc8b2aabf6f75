#pragma once

#include "viv/periodic.hpp"

#include <optional>
#include <string>
#include <vector>

namespace viv {

/// Parameter point where a simple complex eigenvalue pair of the linearization
/// reaches the imaginary axis: the onset of a time-periodic branch.
struct HopfPoint {
    double lambda0 = 0.0;
    double zeta0 = 0.0; ///< |Im| of the crossing pair (positive)
    SteadyState state;  ///< base state at lambda0 (du0_dlambda populated)
    EigenPair eig;      ///< crossing eigenvalue with positive imaginary part
    AdjointFrame frame;
    CrossingSpeed crossing; ///< derivative of the eigenvalue in lambda
    H2Report h2;            ///< non-resonance of the higher harmonics
    H1Report h1;            ///< injectivity of the mean (steady) block
    bool frozen_base = false;
};

struct CrossingOptions {
    int n_eigs = 8;          ///< eigenvalues per probe shift
    double re_tol = 1e-8;    ///< |Re nu| accepted at the crossing
    int max_bisect = 100;
    int h2_kmax = 8;
    /// When set, the base state is held fixed over the whole lambda interval
    /// and only the spectral problem moves: a certified-crossing surrogate for
    /// configurations whose physical steady family has no reachable crossing.
    std::optional<SteadyState> frozen_base;
};

/// Bisection on lambda -> (smallest decay rate of the linearized spectrum),
/// re-solving the steady state by warm-started continuation at every probe
/// (unless a frozen base is supplied). Requires a sign change of the decay
/// rate over [lambda_lo, lambda_hi]; throws SolverError otherwise, and when
/// the crossing pair is not simple or not oscillatory.
HopfPoint locate_crossing(double lambda_lo, double lambda_hi, const Params& params,
                          const OperatorSet& ops, const CrossingOptions& opts = {});

struct BranchResiduals {
    double newton = 0.0;      ///< final Fourier-system residual norm
    double side1 = 0.0;       ///< |(w|v1-dual) - epsilon|, independent quadrature
    double side2 = 0.0;       ///< |(w|v2-dual)|, independent quadrature
    double time_domain = 0.0; ///< max pointwise residual over 64 samples
};

/// One point of the bifurcating family at amplitude epsilon.
struct BranchPoint {
    double epsilon = 0.0;
    double mu = 0.0;   ///< lambda - lambda0
    double zeta = 0.0; ///< orbit frequency (2 pi / period)
    CoupledField v;    ///< averaged velocity correction (z-layout)
    Eigen::Vector2d eta_bar = Eigen::Vector2d::Zero(); ///< averaged elongation
    Vec mean_p;        ///< averaged pressure correction
    ModeSet w;         ///< oscillatory part, modes +-1..+-K
    BranchResiduals residuals;
    int iterations = 0;
};

struct BranchOptions {
    int K_trunc = 6;
    double tol = 1e-11;
    int max_iter = 30;
    int gmres_maxit = 300;
    /// Real spectral shift regularizing the mode-1 preconditioner block
    /// (relative to 1 + zeta0); the block itself is singular at the crossing.
    double precond_shift = 0.05;
};

/// Amplitude-constrained Newton solve of the truncated Fourier system about
/// the Hopf point: unknowns are the mean correction, the oscillatory modes,
/// mu and zeta; the two scalar side conditions pin amplitude and phase of
/// mode 1 against the adjoint frame. epsilon = 0 returns the trivial point
/// without iterating.
BranchPoint lyapunov_schmidt_solve(const HopfPoint& hopf, const Params& params,
                                   const OperatorSet& ops, double epsilon,
                                   const BranchPoint* predictor = nullptr,
                                   const BranchOptions& opts = {});

enum class BranchClass { supercritical, subcritical, degenerate };

struct Branch {
    std::vector<BranchPoint> points; ///< ordered by epsilon
    double mu2 = 0.0;                ///< even-quadratic fit mu ~ mu2 eps^2
    double fit_residual = 0.0;       ///< rms misfit relative to mean eps^2
    BranchClass classification = BranchClass::degenerate;
    /// ||w(eps) - eps w1|| / eps at the two smallest positive amplitudes
    /// (larger first); both must vanish with eps.
    double limit_ratio_small = 0.0, limit_ratio_smaller = 0.0;
    bool truncated = false; ///< a point failed; partial data returned
    std::string termination;
};

/// Traces the branch over a symmetric epsilon grid (warm-started within each
/// sign), fits mu2, checks the small-amplitude limit, and classifies.
Branch trace_branch(const HopfPoint& hopf, const Params& params,
                    const OperatorSet& ops, const std::vector<double>& eps_grid,
                    const BranchOptions& opts = {});

/// Even-quadratic fit of mu over epsilon; fit_residual is the rms misfit
/// divided by the mean squared amplitude (same units as mu2).
std::pair<double, double> fit_mu2(const std::vector<BranchPoint>& points);

/// supercritical / subcritical by the sign of mu2, degenerate when |mu2| is
/// below 10x the fit residual. Requires at least 3 amplitudes per sign.
BranchClass classify_branch(const Branch& branch);

} // namespace viv
