#pragma once

#include "viv/mesh.hpp"

#include <Eigen/Dense>

#include <complex>
#include <vector>

namespace viv {

using Vec = Eigen::VectorXd;
using CVec = Eigen::VectorXcd;
using Cplx = std::complex<double>;

/// Coupled body--fluid velocity field: free fluid DOFs plus the rigid body
/// velocity u_hat stored in the last two entries of z (layout documented in
/// Mesh).
struct CoupledField {
    Vec z;
    bool solenoidal = false;

    CoupledField() = default;
    explicit CoupledField(Vec zz) : z(std::move(zz)) {}

    static CoupledField zero(const Mesh& m) {
        CoupledField f;
        f.z = Vec::Zero(m.nz());
        return f;
    }

    Eigen::Vector2d hat() const {
        const auto n = z.size();
        return Eigen::Vector2d(z[n - 2], z[n - 1]);
    }
    void set_hat(const Eigen::Vector2d& v) {
        const auto n = z.size();
        z[n - 2] = v[0];
        z[n - 1] = v[1];
    }
};

/// Cell-centered pressure over fluid cells.
struct PressureField {
    Vec p;

    PressureField() = default;
    explicit PressureField(Vec pp) : p(std::move(pp)) {}

    static PressureField zero(const Mesh& m) {
        PressureField f;
        f.p = Vec::Zero(m.np);
        return f;
    }
};

/// Per-face value arrays over ALL faces (free, rigid, boundary), used by the
/// stencil kernels. Rigid faces carry the body velocity component, boundary
/// faces carry 0.
template <class S>
struct FaceArrays {
    std::vector<S> u; ///< (nx+1)*ny
    std::vector<S> v; ///< nx*(ny+1)
};

/// Expand a z-vector into full face arrays.
template <class S, class Derived>
FaceArrays<S> scatter_faces(const Mesh& m, const Eigen::MatrixBase<Derived>& z) {
    FaceArrays<S> out;
    out.u.assign(m.ukind.size(), S(0));
    out.v.assign(m.vkind.size(), S(0));
    const S hx = z[m.nf()];
    const S hy = z[m.nf() + 1];
    for (std::size_t f = 0; f < m.ukind.size(); ++f) {
        if (m.ukind[f] == FaceKind::Free) {
            out.u[f] = z[m.udof[f]];
        } else if (m.ukind[f] == FaceKind::Rigid) {
            out.u[f] = hx;
        }
    }
    for (std::size_t f = 0; f < m.vkind.size(); ++f) {
        if (m.vkind[f] == FaceKind::Free) {
            out.v[f] = z[m.nu + m.vdof[f]];
        } else if (m.vkind[f] == FaceKind::Rigid) {
            out.v[f] = hy;
        }
    }
    return out;
}

} // namespace viv
