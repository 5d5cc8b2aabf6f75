#pragma once

#include "viv/steady.hpp"

#include <complex>
#include <vector>

namespace viv {

/// Linearization about a steady state as a generalized pencil
///   A x = nu B x,   x = [z (free fluid + body velocity); chi; p],
/// where B = diag(mass, I_2, 0). Modes evolve like e^{-nu t}, so the
/// stable half-plane is Re nu > 0. Row blocks:
///   z rows:   S z - h^2 lambda (P1 - u0·grad + multiplier) z
///             + (omega_n^2/varpi) chi on body rows - h^2 D' p
///   chi rows: -sigma                     (elongation rate)
///   p rows:   D z (+ gauge pin when the box is closed)
struct LinearizedOperator {
    SpMat A;    ///< pencil left-hand matrix, N x N with N = nz + 2 + np
    Vec Bdiag;  ///< pencil metric diagonal: mass, 1, 1, then zeros
    int nz = 0;
    int np = 0;
    Params params;
    bool closed = false;

    int size() const { return nz + 2 + np; }
};

LinearizedOperator assemble_linearization(const SteadyState& s, const Params& params,
                                          const OperatorSet& ops);

/// Eigenpair of the pencil with a residual certificate computed directly from
/// the matrices (independent of the iteration that produced it).
struct EigenPair {
    Cplx nu;
    CVec x;              ///< unit 2-norm eigenvector over [z; chi; p]
    double residual = 0; ///< ||A x - nu B x||_2
};

/// n eigenvalues of the pencil nearest `shift`, by complex shift-invert
/// Arnoldi. The shift is jittered and the factorization retried when it lands
/// on (or too near) an eigenvalue. Throws SolverError when the residual
/// certificates cannot be brought below 1e-8 (1 + |nu|).
std::vector<EigenPair> eigs(const LinearizedOperator& L, Cplx shift, int n,
                            int max_arnoldi = 0);

/// Union of eigs() runs at several shifts (deduplicated), shifts processed
/// concurrently.
std::vector<EigenPair> spectrum_at_shifts(const LinearizedOperator& L,
                                          const std::vector<Cplx>& shifts,
                                          int n_per_shift);

/// Parameter derivative dA/dlambda of the pencil matrix at s (the steady state
/// must carry du0_dlambda from continuation): the transport block
///   -h^2 [ (P1 - u0·grad + multiplier(u0))
///          + lambda (-u0'·grad + multiplier(u0')) ]
/// on the z rows, zero elsewhere.
SpMat assemble_S011(const SteadyState& s, const Params& params, const OperatorSet& ops);

/// Right/left eigenvector frame at a simple eigenvalue nu0 = i zeta0.
/// Bilinear pairings <a, b> := a' diag(Bdiag) b (no conjugation). The left
/// eigenvector y0 is normalized so that <y0, v0> = 1/pi. The rotating real
/// pair is v1(tau) = Re[v0 e^{i tau}], v2(tau) = Im[v0 e^{i tau}] with duals
/// v1d(tau) = 2 pi Re[y0 e^{-i tau}], v2d(tau) = -2 pi Im[y0 e^{-i tau}];
/// the stored vectors are the tau = 0 representatives. They satisfy
/// <v1, v1d> = <v2, v2d> = 1 and <v1, v2d> = <v2, v1d> = 0 for every tau.
struct AdjointFrame {
    EigenPair v0;
    CVec y0;
    Vec Bdiag; ///< pencil metric of the operator the frame was built from
    double zeta0 = 0.0;
    Vec v1, v2, v1d, v2d;
};

/// Builds the frame, checking simplicity: the nearest other eigenvalue must be
/// separated from nu0 by more than min_separation (else SolverError).
AdjointFrame adjoint_frame(const LinearizedOperator& L, const EigenPair& pair,
                           double min_separation = 1e-6);

/// Eigenvalue drift under a pencil perturbation A + mu dA:
///   nu_prime = <y0, dA v0> / <y0, B v0>      (the derivative d nu / d mu),
///   pairing  = <y0, dA v0>                   (= nu_prime / pi under the frame
///                                             normalization),
///   a4_real  = pi^{-1} avg_tau v1d(tau)' dA v1(tau), evaluated by quadrature;
/// equals Re(pairing) identically, kept as an independent cross-check.
struct CrossingSpeed {
    Cplx nu_prime;
    Cplx pairing;
    double a4_real = 0.0;
};

CrossingSpeed crossing_speed(const AdjointFrame& frame, const SpMat& dA,
                             int tau_samples = 64);

/// Non-resonance certificate at nu0 = i zeta0: simplicity margin of nu0 and,
/// for each k = 2..k_max, the distance from i k zeta0 to the nearest point of
/// the supplied spectrum. All quantities must exceed `threshold` to pass.
struct H2Report {
    bool ok = false;
    double simplicity_margin = 0.0;
    std::vector<double> harmonic_distance; ///< entry j is for k = j + 2
    int first_failure_k = 0;               ///< 0 when ok
};

H2Report check_H2prime(const std::vector<Cplx>& spectrum, Cplx nu0, int k_max,
                       double threshold = 1e-6);

} // namespace viv
