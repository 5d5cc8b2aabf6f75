#pragma once

#include <stdexcept>
#include <string>

namespace viv {

/// Error thrown when user-supplied inputs or configuration are invalid.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Error thrown when a solver fails (stagnation, singular factorization, ...).
class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dimensional inputs describing the physical setup: a spring-mounted body of
/// diameter L and mass M held in a uniform stream of speed V.
struct PhysicalInputs {
    double stream_speed = 1.0;        ///< V, length/time
    double body_diameter = 1.0;       ///< L, length
    double kinematic_viscosity = 1.0; ///< nu, length^2/time
    double spring_constant = 1.0;     ///< ell, mass/time^2
    double body_mass = 1.0;           ///< M, mass
    double fluid_density = 1.0;       ///< rho, mass/length^3
};

/// Nondimensional parameter set: lambda = V L / nu (Reynolds number),
/// omega_n_sq = L^2 ell / (M nu) (squared natural frequency),
/// varpi = rho L^3 / M (fluid/body density ratio).
struct Params {
    double lambda = 0.0;
    double omega_n_sq = 1.0;
    double varpi = 1.0;
    int dim = 2;
};

/// Derive the nondimensional parameters from physical inputs.
/// Throws ValidationError naming the offending field if any input is
/// nonpositive.
Params nondimensionalize(const PhysicalInputs& p);

/// Check Params invariants: lambda >= 0, omega_n_sq > 0, varpi >= 0,
/// dim in {2, 3}. Throws ValidationError with a descriptive message.
void validate(const Params& params);

/// Like validate(), but additionally rejects varpi == 0. Solvers that divide
/// by varpi call this; only the resonance scan accepts the degenerate limit.
void validate_positive_varpi(const Params& params);

} // namespace viv
