#include "viv/mesh.hpp"

#include "viv/config.hpp"

#include <cmath>

namespace viv {

namespace {

// Snap a coordinate to the nearest grid line index; reject misalignment.
int grid_index(double coord, double origin, double h, const char* what) {
    const double raw = (coord - origin) / h;
    const double snapped = std::round(raw);
    if (std::abs(raw - snapped) > 1e-9) {
        throw ValidationError(std::string(what) +
                              " is not aligned with the grid (spacing h)");
    }
    return static_cast<int>(snapped);
}

} // namespace

Mesh build_mesh(const MeshConfig& cfg, int dim) {
    if (dim == 3) {
        throw ValidationError(
            "dim = 3 meshes are not implemented; only the planar (dim = 2) "
            "discretization is available");
    }
    if (dim != 2) {
        throw ValidationError("dim must be 2 or 3");
    }
    if (!(cfg.h > 0.0)) {
        throw ValidationError("mesh spacing h must be positive");
    }
    if (!(cfg.x1 > cfg.x0) || !(cfg.y1 > cfg.y0)) {
        throw ValidationError("box extents must satisfy x0 < x1 and y0 < y1");
    }
    if (!(cfg.body_x0 > cfg.x0 && cfg.body_x1 < cfg.x1 &&
          cfg.body_y0 > cfg.y0 && cfg.body_y1 < cfg.y1)) {
        throw ValidationError("body must be strictly interior to the box");
    }

    Mesh m;
    m.cfg = cfg;
    m.nx = grid_index(cfg.x1, cfg.x0, cfg.h, "box width");
    m.ny = grid_index(cfg.y1, cfg.y0, cfg.h, "box height");
    if (m.nx < 4 || m.ny < 4) {
        throw ValidationError("box resolution too coarse");
    }

    const int bi0 = grid_index(cfg.body_x0, cfg.x0, cfg.h, "body_x0");
    const int bi1 = grid_index(cfg.body_x1, cfg.x0, cfg.h, "body_x1");
    const int bj0 = grid_index(cfg.body_y0, cfg.y0, cfg.h, "body_y0");
    const int bj1 = grid_index(cfg.body_y1, cfg.y0, cfg.h, "body_y1");
    if (bi1 - bi0 < 4 || bj1 - bj0 < 4) {
        throw ValidationError(
            "resolution too coarse: body must span at least 4 cells per direction");
    }
    if (bi0 < 1 || bj0 < 1 || bi1 > m.nx - 1 || bj1 > m.ny - 1) {
        throw ValidationError("body touches the box boundary");
    }

    m.cell_solid.assign(static_cast<std::size_t>(m.nx) * m.ny, 0);
    for (int j = bj0; j < bj1; ++j) {
        for (int i = bi0; i < bi1; ++i) {
            m.cell_solid[m.ci(i, j)] = 1;
        }
    }

    m.cell_dof.assign(m.cell_solid.size(), -1);
    int np = 0;
    for (int j = 0; j < m.ny; ++j) {
        for (int i = 0; i < m.nx; ++i) {
            if (!m.solid(i, j)) m.cell_dof[m.ci(i, j)] = np++;
        }
    }
    m.np = np;

    m.ukind.assign(static_cast<std::size_t>(m.nx + 1) * m.ny, FaceKind::Free);
    m.udof.assign(m.ukind.size(), -1);
    int nu = 0;
    for (int j = 0; j < m.ny; ++j) {
        for (int i = 0; i <= m.nx; ++i) {
            const bool left_solid = (i > 0) && m.solid(i - 1, j);
            const bool right_solid = (i < m.nx) && m.solid(i, j);
            FaceKind k = FaceKind::Free;
            if (left_solid || right_solid) {
                k = FaceKind::Rigid;
            } else if (i == 0) {
                k = FaceKind::Boundary;
            } else if (i == m.nx && !cfg.outflow) {
                k = FaceKind::Boundary;
            }
            m.ukind[m.ufi(i, j)] = k;
            if (k == FaceKind::Free) m.udof[m.ufi(i, j)] = nu++;
        }
    }
    m.nu = nu;

    m.vkind.assign(static_cast<std::size_t>(m.nx) * (m.ny + 1), FaceKind::Free);
    m.vdof.assign(m.vkind.size(), -1);
    int nv = 0;
    for (int j = 0; j <= m.ny; ++j) {
        for (int i = 0; i < m.nx; ++i) {
            const bool below_solid = (j > 0) && m.solid(i, j - 1);
            const bool above_solid = (j < m.ny) && m.solid(i, j);
            FaceKind k = FaceKind::Free;
            if (below_solid || above_solid) {
                k = FaceKind::Rigid;
            } else if (j == 0 || j == m.ny) {
                k = FaceKind::Boundary;
            }
            m.vkind[m.vfi(i, j)] = k;
            if (k == FaceKind::Free) m.vdof[m.vfi(i, j)] = nv++;
        }
    }
    m.nv = nv;

    return m;
}

MeshConfig mesh_config_from(const Config& cfg) {
    MeshConfig mc;
    mc.x0 = cfg.get_double("mesh.x0", mc.x0);
    mc.x1 = cfg.get_double("mesh.x1", mc.x1);
    mc.y0 = cfg.get_double("mesh.y0", mc.y0);
    mc.y1 = cfg.get_double("mesh.y1", mc.y1);
    mc.h = cfg.get_double("mesh.h", mc.h);
    mc.body_x0 = cfg.get_double("mesh.body_x0", mc.body_x0);
    mc.body_x1 = cfg.get_double("mesh.body_x1", mc.body_x1);
    mc.body_y0 = cfg.get_double("mesh.body_y0", mc.body_y0);
    mc.body_y1 = cfg.get_double("mesh.body_y1", mc.body_y1);
    mc.outflow = cfg.get_bool("mesh.outflow", mc.outflow);
    return mc;
}

} // namespace viv
