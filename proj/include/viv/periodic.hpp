#pragma once

#include "viv/spectral.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace viv {

/// One temporal Fourier mode of a periodic solution: velocity (with the body
/// velocity in the hat entries), pressure, elongation coefficient, and a
/// residual certificate of the discrete mode system.
struct ModeSolution {
    int k = 0;
    CVec w;                                          ///< nz
    CVec q;                                          ///< np
    Eigen::Vector2cd xi = Eigen::Vector2cd::Zero();
    double residual = 0.0;
};

/// Modes of a real periodic signal: entry at -k is the conjugate of the entry
/// at k, and the k = 0 coefficient is absent for zero-mean signals.
struct ModeSet {
    std::map<int, ModeSolution> modes;

    bool has(int k) const { return modes.count(k) != 0; }
    const ModeSolution& at(int k) const { return modes.at(k); }
};

/// Complex variational traction of a velocity/pressure mode (body rows of the
/// weak viscous + pressure operator).
Eigen::Vector2cd traction_integral_c(const OperatorSet& ops, const CVec& w,
                                     const CVec& q);

/// Solves the k-th mode resolvent problem
///   i k zeta0 w - lambda0 d1 w - Laplace w + grad q = f,  div w = 0,
/// with prescribed body velocity bdata (outer boundary at rest). Requires
/// k != 0 and zeta0 != 0. The returned ModeSolution carries no xi (set to 0)
/// and a residual certificate of the assembled linear system.
ModeSolution mode_resolvent(const OperatorSet& ops, double zeta0, double lambda0,
                            int k, const CVec& f, const Eigen::Vector2cd& bdata);

/// Unit-boundary-data resolvent solutions h^(i), i = 1..dim (zero forcing).
struct ResolventBasis {
    int k = 0;
    std::array<ModeSolution, 2> h;
};

ResolventBasis resolvent_basis(const OperatorSet& ops, double zeta0, double lambda0,
                               int k);

/// Traction matrix: column i holds the traction of h^(i).
Eigen::Matrix2cd traction_matrix(const OperatorSet& ops, double zeta0, double lambda0,
                                 int k);

/// Resonance matrix M = (-k^2 zeta0^2 + omega_n^2) I + i k varpi K with its
/// extreme singular values.
struct ResonanceMatrices {
    Eigen::Matrix2cd K;
    Eigen::Matrix2cd M;
    double sigma_min = 0.0;
    double sigma_max = 0.0;

    double cond() const { return sigma_min > 0.0 ? sigma_max / sigma_min : 0.0; }
};

ResonanceMatrices resonance_matrix(int k, double zeta0, const Params& params,
                                   const Eigen::Matrix2cd& K);

/// One row of the resonance scan table.
struct ResonanceRow {
    int k = 0;
    double varpi = 0.0;
    double sigma_min = 0.0;
    double cond = 0.0;
};

/// Scan over modes and density ratios at fixed zeta0 (traction matrices are
/// computed once per k with params.lambda as lambda0). At a resonant k
/// (k^2 zeta0^2 = omega_n^2) the linear-in-varpi law
/// sigma_min(M) = |k| varpi sigma_min(K) is asserted internally.
std::vector<ResonanceRow> resonance_scan(const OperatorSet& ops,
                                         const std::vector<int>& ks,
                                         const std::vector<double>& varpis,
                                         double zeta0, const Params& params);

std::string resonance_csv(const std::vector<ResonanceRow>& rows);

/// Per-mode forcing of the linear periodic problem: fluid body force f,
/// spring force F, and an extra prescribed body-velocity offset G (the body
/// trace of mode k is i k xi_k + G_k).
struct ModeForcing {
    CVec f;                                         ///< nz (may be empty: zero)
    Eigen::Vector2cd F = Eigen::Vector2cd::Zero();
    Eigen::Vector2cd G = Eigen::Vector2cd::Zero();
};

/// Linear periodic solve, diagonal in k: for every 1 <= k <= K_trunc the mode
/// system is closed by the 2x2 solve M xi_k = F_k - varpi * (traction of the
/// particular solution). Entries at -k are stored as conjugates. Forcing keys
/// with k = 0 or |k| > K_trunc are rejected.
ModeSet solve_periodic_linear(const OperatorSet& ops, double zeta0,
                              const Params& params,
                              const std::map<int, ModeForcing>& forcing,
                              int K_trunc = 16);

/// Trigonometric reconstruction of a ModeSet at tau (real signal).
Vec reconstruct_modes(const ModeSet& set, int nz, double tau);

/// Harmonic-balance solution of the nonlinear periodic perturbation system
/// about a steady state. The oscillating part is carried by `modes`
/// (k = +-1..+-K_trunc, xi = elongation modes), the mean part separately.
struct PeriodicSolution {
    bool trivial = true;
    double zeta = 0.0;         ///< angular frequency (2 pi / period)
    ModeSet modes;
    Vec mean_z;
    Eigen::Vector2d mean_chi = Eigen::Vector2d::Zero();
    Vec mean_p;
    double residual = 0.0;
    int iterations = 0;
    double amplitude = 0.0;    ///< max mode magnitude (metric norm)
};

/// Residual of the truncated Fourier system at a candidate loop: x[k] is the
/// full state [z; chi; p] of mode k for k = 0..K (negative modes implied by
/// conjugation; x[0] must be real). Returns one complex residual vector per
/// mode. The nonlinear solver drives exactly this map to zero; it is exposed
/// so the Fourier-side assembly can be checked against a time-domain
/// evaluation of the same equations.
std::vector<CVec> harmonic_residual(const SteadyState& s, const Params& params,
                                    const OperatorSet& ops, double zeta,
                                    const std::vector<CVec>& x);

struct PeriodicOptions {
    int K_trunc = 16;
    double tol = 1e-11;
    int max_iter = 40;
    double freeze_amplitude = 1e-8; ///< below this, zeta is held fixed
};

/// Newton (GMRES with per-mode shift preconditioning) on the truncated
/// Fourier system with the quadratic transport coupling modes by convolution;
/// the frequency zeta is an unknown fixed by a phase condition on mode 1.
/// Below the stability threshold the iteration collapses to the zero
/// solution, reported with trivial = true.
PeriodicSolution solve_periodic_nonlinear(const SteadyState& s, const Params& params,
                                          const OperatorSet& ops, double zeta_guess,
                                          const ModeSet* init = nullptr,
                                          const PeriodicOptions& opts = {});

} // namespace viv
