#pragma once

#include "viv/steady.hpp"

#include <Eigen/SparseLU>

#include <string>
#include <vector>

namespace viv {

/// Instantaneous state of the perturbation system: coupled velocity (body
/// trace = chidot, stored as the hat part of u) and spring displacement chi.
struct EvolState {
    CoupledField u;
    Eigen::Vector2d chi = Eigen::Vector2d::Zero();
    double t = 0.0;
    /// Last computed pressure (diagnostic; empty before the first step).
    PressureField p;

    Eigen::Vector2d chidot() const { return u.hat(); }

    static EvolState zero(const Mesh& m) {
        EvolState st;
        st.u = CoupledField::zero(m);
        st.p = PressureField::zero(m);
        return st;
    }
};

/// Time series of the energy diagnostics
///   E = ||u||^2 + (1/varpi)(|chidot|^2 + omega_n^2 |chi|^2).
struct EnergyLog {
    std::vector<double> t, E, normD, normGrad, chi_norm, chidot_norm;

    std::size_t size() const { return t.size(); }
    void append(double time, double energy, double nD, double nG, double nchi,
                double nchidot) {
        t.push_back(time);
        E.push_back(energy);
        normD.push_back(nD);
        normGrad.push_back(nG);
        chi_norm.push_back(nchi);
        chidot_norm.push_back(nchidot);
    }
    std::string to_csv() const;
};

struct DecayReport {
    bool decayed = false;
    bool monotone_tail = false;
    double rate = 0.0; ///< fitted slope of log E over the trailing half
    double gamma = 0.0;
    bool gamma_positive = false;
};

struct EvolveResult {
    EvolState state;
    EnergyLog log;
    bool nan_aborted = false;
};

/// Monolithic IMEX integrator for the perturbation system about a steady
/// state: diffusion, pressure, and the spring ODE implicit (BDF2 after an
/// Euler startup step), transport explicit with extrapolation. The body ODE is
/// solved in the same matrix as the fluid (no partitioned coupling).
class Evolver {
public:
    Evolver(const SteadyState& s, const Params& params, const OperatorSet& ops,
            double dt, bool linearized = false);

    /// Advance by one step using the internal history (Euler on the first
    /// call after construction or reset, BDF2 afterwards).
    EvolState advance(const EvolState& st);

    /// Forget history; the next advance() is an Euler startup step again.
    void reset() { have_history_ = false; }

    double energy(const EvolState& st) const;

    /// Explicit transport right-hand side at a given state (z-layout; body
    /// rows zero). Shared with the Galerkin cross-validation integrator.
    Vec transport_term(const Vec& z) const;

private:
    void check_cfl(const Vec& z) const;
    Eigen::SparseLU<SpMat>& factorization(double acoef, int which);

    const OperatorSet& ops_;
    Params params_;
    double dt_;
    bool linearized_;

    FaceArrays<double> u0_faces_;
    SpMat MG_;      // multiplier (sigma - u) . grad u0
    SpMat conv_u0_; // u0 . grad (.)

    Eigen::SparseLU<SpMat> lu_euler_, lu_bdf2_;
    bool have_euler_ = false, have_bdf2_ = false;

    bool have_history_ = false;
    Vec z_prev_;
    Eigen::Vector2d chi_prev_ = Eigen::Vector2d::Zero();
};

/// One IMEX Euler step (convenience wrapper building a fresh Evolver).
EvolState step(const EvolState& st, const SteadyState& s, const Params& params,
               const OperatorSet& ops, double dt);

/// Integrate to time T with fixed dt, logging energy diagnostics every step.
/// A NaN in the state aborts the run, returning the last finite state with
/// nan_aborted set.
EvolveResult evolve(const EvolState& state0, const SteadyState& s,
                    const Params& params, const OperatorSet& ops, double T,
                    double dt, bool linearized = false);

/// Eigenpair of the coupled modified Stokes problem: S psi = lambda_R M psi on
/// the solenoidal space, M the weighted metric.
struct StokesEigenpair {
    double lambda_R = 0.0;
    CoupledField psi;
    PressureField phi;
};

/// n smallest coupled Stokes eigenpairs, orthonormal in the weighted metric.
std::vector<StokesEigenpair> stokes_eigenbasis(const OperatorSet& ops,
                                               const Params& params, int n);

/// Galerkin-in-eigenbasis integrator (explicit RK4 on the reduced system);
/// cross-validation device only. state0 should lie in the span of the basis.
EvolveResult galerkin_evolve(const std::vector<StokesEigenpair>& basis,
                             const SteadyState& s, const Params& params,
                             const OperatorSet& ops, const EvolState& state0,
                             double T, double dt);

/// Decay diagnostics of an energy log against the gamma = 1 - lambda/lambda2
/// coercivity margin.
DecayReport decay_metrics(const EnergyLog& log, const Params& params,
                          const Thresholds& th);

} // namespace viv
