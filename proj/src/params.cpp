#include "viv/params.hpp"

namespace viv {

namespace {

void require_positive(double value, const char* name) {
    if (!(value > 0.0)) {
        throw ValidationError(std::string(name) + " must be positive");
    }
}

} // namespace

Params nondimensionalize(const PhysicalInputs& p) {
    require_positive(p.stream_speed, "stream_speed");
    require_positive(p.body_diameter, "body_diameter");
    require_positive(p.kinematic_viscosity, "kinematic_viscosity");
    require_positive(p.spring_constant, "spring_constant");
    require_positive(p.body_mass, "body_mass");
    require_positive(p.fluid_density, "fluid_density");

    const double V = p.stream_speed;
    const double L = p.body_diameter;
    const double nu = p.kinematic_viscosity;

    Params out;
    out.lambda = V * L / nu;
    out.omega_n_sq = L * L * p.spring_constant / (p.body_mass * nu);
    out.varpi = p.fluid_density * L * L * L / p.body_mass;
    out.dim = 2;
    return out;
}

void validate(const Params& params) {
    if (!(params.lambda >= 0.0)) {
        throw ValidationError("lambda must be nonnegative");
    }
    if (!(params.omega_n_sq > 0.0)) {
        throw ValidationError("omega_n_sq must be positive");
    }
    if (!(params.varpi >= 0.0)) {
        throw ValidationError("varpi must be nonnegative");
    }
    if (params.dim != 2 && params.dim != 3) {
        throw ValidationError("dim must be 2 or 3");
    }
}

void validate_positive_varpi(const Params& params) {
    validate(params);
    if (!(params.varpi > 0.0)) {
        throw ValidationError("varpi must be positive for this solver");
    }
}

} // namespace viv
