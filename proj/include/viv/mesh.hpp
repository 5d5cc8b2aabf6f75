#pragma once

#include "viv/params.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace viv {

/// Geometry of the truncated computational box and the body footprint.
/// Lengths are nondimensional (body diameter = 1). The body rectangle must be
/// aligned with the grid so that its boundary coincides with cell faces.
struct MeshConfig {
    double x0 = -8.0, x1 = 16.0; ///< box extents, streamwise
    double y0 = -8.0, y1 = 8.0;  ///< box extents, lateral
    double h = 0.25;             ///< grid spacing (square cells)
    double body_x0 = -0.5, body_x1 = 0.5;
    double body_y0 = -0.5, body_y1 = 0.5;
    /// Traction-free outflow at x = x1. When false the box is closed
    /// (homogeneous Dirichlet on all four sides) and the pressure is only
    /// determined up to a constant.
    bool outflow = true;
};

/// Classification of a velocity face.
enum class FaceKind : std::uint8_t {
    Free,     ///< unknown fluid DOF
    Rigid,    ///< face on/inside the body: value equals the body velocity
    Boundary, ///< outer-box Dirichlet face, value 0 (perturbation framing)
};

/// Staggered (MAC) mesh: pressures at cell centers, u at vertical faces,
/// v at horizontal faces. The body is a grid-aligned rectangle; cells inside
/// it are solid, faces touching a solid cell carry the rigid body velocity.
///
/// Coupled velocity vectors ("z-vectors") are laid out as
///   [ free u faces | free v faces | u_hat_x | u_hat_y ]
/// so nz() = nu + nv + 2. Pressure vectors enumerate fluid cells only.
struct Mesh {
    MeshConfig cfg;
    int nx = 0, ny = 0; ///< cell counts

    std::vector<std::uint8_t> cell_solid; ///< nx*ny, 1 = inside body
    std::vector<int> cell_dof;            ///< nx*ny -> pressure DOF or -1

    std::vector<FaceKind> ukind; ///< (nx+1)*ny
    std::vector<FaceKind> vkind; ///< nx*(ny+1)
    std::vector<int> udof;       ///< face -> free DOF id or -1
    std::vector<int> vdof;       ///< face -> free DOF id or -1

    int nu = 0; ///< free u-face count
    int nv = 0; ///< free v-face count
    int np = 0; ///< fluid cell count

    int nf() const { return nu + nv; }
    int nz() const { return nu + nv + 2; }

    int ci(int i, int j) const { return i + nx * j; }
    int ufi(int i, int j) const { return i + (nx + 1) * j; }
    int vfi(int i, int j) const { return i + nx * j; }

    bool solid(int i, int j) const { return cell_solid[ci(i, j)] != 0; }

    double ux(int i) const { return cfg.x0 + i * cfg.h; }
    double uy(int j) const { return cfg.y0 + (j + 0.5) * cfg.h; }
    double vx(int i) const { return cfg.x0 + (i + 0.5) * cfg.h; }
    double vy(int j) const { return cfg.y0 + j * cfg.h; }
    double px(int i) const { return cfg.x0 + (i + 0.5) * cfg.h; }
    double py(int j) const { return cfg.y0 + (j + 0.5) * cfg.h; }
};

/// Build the mesh. Throws ValidationError when the body is not strictly
/// interior, not resolved by at least 4 cells in each direction, or not
/// aligned with the grid. Only dim = 2 is supported; dim = 3 is rejected
/// with a clear message.
Mesh build_mesh(const MeshConfig& cfg, int dim = 2);

/// Mesh geometry from a run configuration (keys mesh.x0, mesh.x1, ...).
class Config;
MeshConfig mesh_config_from(const Config& cfg);

} // namespace viv
