#pragma once

#include "viv/operators.hpp"
#include "viv/params.hpp"

#include <optional>
#include <vector>

namespace viv {

/// Steady solution (u0, p0, chi0) at a given lambda. The body trace of u0 is
/// e1 (unit stream). chi0 is the spring elongation balancing the hydrodynamic
/// force. du0_dlambda is filled by continuation.
struct SteadyState {
    CoupledField u0;
    PressureField p0;
    Eigen::Vector2d chi0 = Eigen::Vector2d::Zero();
    double lambda = 0.0;
    std::optional<CoupledField> du0_dlambda;
    double residual = 0.0;
};

/// A positive scalar or +infinity, the latter as an explicit variant.
struct ThresholdValue {
    bool finite = true;
    double value = 0.0;

    static ThresholdValue infinite() { return {false, 0.0}; }
    static ThresholdValue of(double v) { return {true, v}; }
};

/// Uniqueness threshold lambda1 and stability threshold lambda2
/// (lambda2 <= lambda1: its maximization runs over the larger space).
struct Thresholds {
    ThresholdValue lambda1;
    ThresholdValue lambda2;

    /// gamma = 1 - lambda/lambda2 (1 when lambda2 is infinite).
    double gamma(double lambda) const {
        return lambda2.finite ? 1.0 - lambda / lambda2.value : 1.0;
    }
};

struct SteadyOptions {
    double tol = 1e-10;
    int max_iter = 30;
    /// Also solve the linearized system for du0/dlambda at the converged state.
    bool compute_sensitivity = false;
};

/// Residual of the discrete steady momentum/divergence system at (z, p) with
/// the body trace already embedded in z. Layout: [free momentum rows; div rows].
Vec steady_residual(const Params& params, const OperatorSet& ops, const Vec& z,
                    const Vec& p);

/// Newton solve of the steady problem. The default initial guess is the rigid
/// extension of e1 (one Newton step from it yields the Stokes solution when
/// lambda = 0). Throws SolverError on stagnation, with the last residual in
/// the message.
SteadyState solve_steady(const Params& params, const OperatorSet& ops,
                         const SteadyState* guess = nullptr,
                         const SteadyOptions& opts = {});

/// Warm-started continuation over the given lambda values (monotone grid in,
/// monotone grid out). Every returned state carries du0_dlambda from the
/// linearized solve at the converged point.
std::vector<SteadyState> continue_steady(const Params& params, const OperatorSet& ops,
                                         const std::vector<double>& lambdas,
                                         const SteadyOptions& opts = {});

/// Rayleigh-quotient thresholds: 1/lambda1 maximizes -(u·∇u0, u)/‖∇u‖² over
/// solenoidal fields vanishing on the body; 1/lambda2 the coupled analog with
/// body motion allowed. Nonpositive maxima are reported as +infinity.
Thresholds compute_thresholds(const SteadyState& s, const OperatorSet& ops);

/// Rayleigh quotient of a single (projected) trial field for the lambda1 form;
/// used by the brute-force property test.
double lambda1_rayleigh(const SteadyState& s, const OperatorSet& ops, const Vec& trial);

/// Largest eigenpairs of the constrained symmetric pencil A x = theta S x
/// over ker D, computed by Lanczos in the S inner product with saddle-point
/// projections. theta is sorted descending; vecs are S-orthonormal.
struct ConstrainedEigs {
    std::vector<double> theta;
    std::vector<Vec> vecs;
};

ConstrainedEigs constrained_top_eigs(const SpMat& A, const SpMat& S, const SpMat& D,
                                     bool pin_pressure, int want, int iters = 160);

struct H1Report {
    bool ok = false;
    double sigma_min = 0.0;
    double op_norm = 0.0;
};

/// Assemble the steady linearization at s with zero body trace, together with
/// the spring-elongation rows (the full saddle system; unknowns u, r, chi).
SpMat assemble_h1_matrix(const SteadyState& s, const Params& params,
                         const OperatorSet& ops);

/// Smallest/largest singular value estimates of a square sparse matrix via
/// inverse/forward power iteration on A'A.
std::pair<double, double> singular_value_range(const SpMat& A, int iters = 120);

/// Injectivity check of the steady linearization: sigma_min relative to the
/// operator norm must exceed rel_threshold.
H1Report check_H1prime(const SteadyState& s, const Params& params,
                       const OperatorSet& ops, double rel_threshold = 1e-8);

} // namespace viv
