#include "viv/operators.hpp"

#include <cmath>
#include <vector>

namespace viv {

namespace {

using Trip = Eigen::Triplet<double>;

// z-column of a u-face: free DOF, hat-x for rigid, -1 for boundary (value 0).
int ucol(const Mesh& m, int i, int j) {
    const int f = m.ufi(i, j);
    switch (m.ukind[f]) {
    case FaceKind::Free: return m.udof[f];
    case FaceKind::Rigid: return m.nf();
    default: return -1;
    }
}

int vcol(const Mesh& m, int i, int j) {
    const int f = m.vfi(i, j);
    switch (m.vkind[f]) {
    case FaceKind::Free: return m.nu + m.vdof[f];
    case FaceKind::Rigid: return m.nf() + 1;
    default: return -1;
    }
}

void add(std::vector<Trip>& t, int r, int c, double v) {
    if (r >= 0 && c >= 0 && v != 0.0) t.emplace_back(r, c, v);
}

// One graph-Laplacian edge (za - zb)^2 contribution.
void add_edge(std::vector<Trip>& t, int a, int b, double w = 1.0) {
    if (a >= 0) t.emplace_back(a, a, w);
    if (b >= 0) t.emplace_back(b, b, w);
    if (a >= 0 && b >= 0) {
        t.emplace_back(a, b, -w);
        t.emplace_back(b, a, -w);
    }
}

// Transverse-component interpolation stencils (4-point averages, one-sided at
// the inflow/outflow columns and at the walls). Shared by face_gradients and
// multiplier_grad so the two stay consistent.
struct Stencil {
    int idx[4];
    double w[4];
    int n = 0;
    void push(int i, double ww) {
        idx[n] = i;
        w[n] = ww;
        ++n;
    }
};

Stencil v_at_uface_stencil(const Mesh& m, int i, int j) {
    Stencil s;
    const bool left = i > 0, right = i < m.nx;
    const double w = (left && right) ? 0.25 : 0.5;
    if (left) {
        s.push(m.vfi(i - 1, j), w);
        s.push(m.vfi(i - 1, j + 1), w);
    }
    if (right) {
        s.push(m.vfi(i, j), w);
        s.push(m.vfi(i, j + 1), w);
    }
    return s;
}

Stencil u_at_vface_stencil(const Mesh& m, int i, int j) {
    Stencil s;
    const bool below = j > 0, above = j < m.ny;
    const double w = (below && above) ? 0.25 : 0.5;
    if (below) {
        s.push(m.ufi(i, j - 1), w);
        s.push(m.ufi(i + 1, j - 1), w);
    }
    if (above) {
        s.push(m.ufi(i, j), w);
        s.push(m.ufi(i + 1, j), w);
    }
    return s;
}

} // namespace

OperatorSet build_operators(const Mesh& mesh, double varpi) {
    if (!(varpi > 0.0)) {
        throw ValidationError("varpi must be positive to build the weighted operators");
    }
    OperatorSet ops;
    ops.mesh = mesh;
    ops.varpi = varpi;
    ops.closed = !mesh.cfg.outflow;

    const Mesh& m = ops.mesh;
    const int nz = m.nz(), nf = m.nf(), nx = m.nx, ny = m.ny;
    const double h = m.cfg.h;

    // --- divergence -------------------------------------------------------
    {
        std::vector<Trip> t;
        for (int j = 0; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                if (m.solid(i, j)) continue;
                const int r = m.cell_dof[m.ci(i, j)];
                add(t, r, ucol(m, i + 1, j), 1.0 / h);
                add(t, r, ucol(m, i, j), -1.0 / h);
                add(t, r, vcol(m, i, j + 1), 1.0 / h);
                add(t, r, vcol(m, i, j), -1.0 / h);
            }
        }
        ops.D.resize(m.np, nz);
        ops.D.setFromTriplets(t.begin(), t.end());
    }

    // --- stiffness (gradient form), edge-assembled ------------------------
    {
        std::vector<Trip> t;
        // u-faces: streamwise neighbours (one per cell row)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                add_edge(t, ucol(m, i, j), ucol(m, i + 1, j));
        // u-faces: lateral neighbours
        for (int j = 0; j + 1 < ny; ++j)
            for (int i = 0; i <= nx; ++i)
                add_edge(t, ucol(m, i, j), ucol(m, i, j + 1));
        // u ghost edges at the lateral walls (Dirichlet half-cell away)
        for (int i = 0; i <= nx; ++i) {
            const int a = ucol(m, i, 0);
            const int b = ucol(m, i, ny - 1);
            if (a >= 0) t.emplace_back(a, a, 2.0);
            if (b >= 0) t.emplace_back(b, b, 2.0);
        }
        // v-faces: lateral neighbours
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i)
                add_edge(t, vcol(m, i, j), vcol(m, i, j + 1));
        // v-faces: streamwise neighbours
        for (int j = 0; j <= ny; ++j)
            for (int i = 0; i + 1 < nx; ++i)
                add_edge(t, vcol(m, i, j), vcol(m, i + 1, j));
        // v ghost edges at inflow wall; east wall only when closed
        for (int j = 0; j <= ny; ++j) {
            const int a = vcol(m, 0, j);
            if (a >= 0) t.emplace_back(a, a, 2.0);
            if (ops.closed) {
                const int b = vcol(m, nx - 1, j);
                if (b >= 0) t.emplace_back(b, b, 2.0);
            }
        }
        ops.S.resize(nz, nz);
        ops.S.setFromTriplets(t.begin(), t.end());
    }

    // --- streamwise derivative on free faces ------------------------------
    {
        std::vector<Trip> t;
        for (int j = 0; j < ny; ++j) {
            for (int i = 1; i <= nx; ++i) {
                const int f = m.ufi(i, j);
                if (m.ukind[f] != FaceKind::Free) continue;
                const int r = m.udof[f];
                if (i == nx) {
                    add(t, r, ucol(m, i, j), 1.0 / h);
                    add(t, r, ucol(m, i - 1, j), -1.0 / h);
                } else {
                    add(t, r, ucol(m, i + 1, j), 0.5 / h);
                    add(t, r, ucol(m, i - 1, j), -0.5 / h);
                }
            }
        }
        for (int j = 1; j < ny; ++j) {
            for (int i = 0; i < nx; ++i) {
                const int f = m.vfi(i, j);
                if (m.vkind[f] != FaceKind::Free) continue;
                const int r = m.nu + m.vdof[f];
                if (i == 0) {
                    // wall ghost v(-1) = -v(0)
                    add(t, r, vcol(m, 1, j), 0.5 / h);
                    add(t, r, vcol(m, 0, j), 0.5 / h);
                } else if (i == nx - 1) {
                    if (ops.closed) {
                        add(t, r, vcol(m, i, j), -0.5 / h);
                        add(t, r, vcol(m, i - 1, j), -0.5 / h);
                    } else {
                        add(t, r, vcol(m, i, j), 1.0 / h);
                        add(t, r, vcol(m, i - 1, j), -1.0 / h);
                    }
                } else {
                    add(t, r, vcol(m, i + 1, j), 0.5 / h);
                    add(t, r, vcol(m, i - 1, j), -0.5 / h);
                }
            }
        }
        ops.P1.resize(nz, nz);
        ops.P1.setFromTriplets(t.begin(), t.end());
    }

    // --- metric and pressure operator -------------------------------------
    ops.mass = Vec::Constant(nz, h * h);
    ops.mass[nf] = 1.0 / varpi;
    ops.mass[nf + 1] = 1.0 / varpi;

    Vec minv = ops.mass.cwiseInverse();
    SpMat Dt = ops.D.transpose();
    ops.Ap = (h * h) * (ops.D * minv.asDiagonal() * Dt);
    if (ops.closed) {
        // pin one pressure DOF; compatible right-hand sides are unaffected
        ops.Ap = ops.Ap.pruned();
        for (int k = 0; k < ops.Ap.outerSize(); ++k) {
            for (SpMat::InnerIterator it(ops.Ap, k); it; ++it) {
                if (it.row() == 0 || it.col() == 0) {
                    it.valueRef() = (it.row() == it.col()) ? 1.0 : 0.0;
                }
            }
        }
        ops.Ap.prune(0.0);
    }
    ops.Ap_fact = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
    ops.Ap_fact->compute(ops.Ap);
    if (ops.Ap_fact->info() != Eigen::Success) {
        throw SolverError("pressure operator factorization failed");
    }
    return ops;
}

double inner(const OperatorSet& ops, const CoupledField& f, const CoupledField& g) {
    return f.z.cwiseProduct(ops.mass).dot(g.z);
}

CoupledField project(const OperatorSet& ops, const CoupledField& f,
                     PressureField* q_out) {
    const Mesh& m = ops.mesh;
    const double h = m.cfg.h;
    Vec rhs = -(ops.D * f.z);
    if (ops.closed) rhs[0] = 0.0;
    Vec q = ops.Ap_fact->solve(rhs);
    if (ops.Ap_fact->info() != Eigen::Success) {
        throw SolverError("projection solve failed");
    }
    if (ops.closed) q.array() -= q.mean();
    CoupledField out;
    out.z = f.z + (h * h) * ops.mass.cwiseInverse().cwiseProduct(ops.D.transpose() * q);
    out.solenoidal = true;
    if (q_out) q_out->p = q;
    return out;
}

CoupledField convection(const OperatorSet& ops, const CoupledField& a,
                        const CoupledField& b, KernelImpl impl) {
    const Mesh& m = ops.mesh;
    const auto af = scatter_faces<double>(m, a.z);
    const auto bf = scatter_faces<double>(m, b.z);
    CoupledField out;
    conv_apply(m, af, bf, out.z, impl);
    return out;
}

Eigen::Vector2d traction_integral(const OperatorSet& ops, const CoupledField& u,
                                  const PressureField& p) {
    const double h = ops.mesh.cfg.h;
    Vec w = ops.S * u.z - (h * h) * (ops.D.transpose() * p.p);
    return Eigen::Vector2d(w[ops.nf()], w[ops.nf() + 1]);
}

std::pair<double, double> strain_norm(const OperatorSet& ops, const CoupledField& u) {
    const Mesh& m = ops.mesh;
    const double h = m.cfg.h;
    const double grad2 = u.z.dot(ops.S * u.z);

    const auto f = scatter_faces<double>(m, u.z);
    double d2 = 0.0;
    for (int j = 0; j < m.ny; ++j) {
        for (int i = 0; i < m.nx; ++i) {
            const double d11 = (f.u[m.ufi(i + 1, j)] - f.u[m.ufi(i, j)]) / h;
            const double d22 = (f.v[m.vfi(i, j + 1)] - f.v[m.vfi(i, j)]) / h;
            d2 += h * h * (d11 * d11 + d22 * d22);
        }
    }
    for (int j = 1; j < m.ny; ++j) {
        for (int i = 1; i < m.nx; ++i) {
            const double du = (f.u[m.ufi(i, j)] - f.u[m.ufi(i, j - 1)]) / h;
            const double dv = (f.v[m.vfi(i, j)] - f.v[m.vfi(i - 1, j)]) / h;
            const double d12 = 0.5 * (du + dv);
            d2 += 2.0 * h * h * d12 * d12;
        }
    }
    return {std::sqrt(d2), std::sqrt(std::max(grad2, 0.0))};
}

SpMat conv_jacobian_b(const Mesh& m, const CoupledField& a) {
    const auto af = scatter_faces<double>(m, a.z);
    const double h = m.cfg.h;
    const int nx = m.nx, ny = m.ny;
    std::vector<Trip> t;
    for (int j = 0; j < ny; ++j) {
        for (int i = 1; i <= nx; ++i) {
            const int ff = m.ufi(i, j);
            if (m.ukind[ff] != FaceKind::Free) continue;
            const int r = m.udof[ff];
            if (i < nx) {
                const double ae = 0.5 * (af.u[m.ufi(i, j)] + af.u[m.ufi(i + 1, j)]);
                add(t, r, ucol(m, i, j), 0.5 * ae / h);
                add(t, r, ucol(m, i + 1, j), 0.5 * ae / h);
            } else {
                add(t, r, ucol(m, i, j), af.u[m.ufi(i, j)] / h);
            }
            {
                const double aw = 0.5 * (af.u[m.ufi(i - 1, j)] + af.u[m.ufi(i, j)]);
                add(t, r, ucol(m, i - 1, j), -0.5 * aw / h);
                add(t, r, ucol(m, i, j), -0.5 * aw / h);
            }
            {
                const double an =
                    (i < nx) ? 0.5 * (af.v[m.vfi(i - 1, j + 1)] + af.v[m.vfi(i, j + 1)])
                             : af.v[m.vfi(nx - 1, j + 1)];
                if (j + 1 < ny) {
                    add(t, r, ucol(m, i, j), 0.5 * an / h);
                    add(t, r, ucol(m, i, j + 1), 0.5 * an / h);
                } else {
                    add(t, r, ucol(m, i, j), an / h);
                }
            }
            {
                const double as = (i < nx)
                                      ? 0.5 * (af.v[m.vfi(i - 1, j)] + af.v[m.vfi(i, j)])
                                      : af.v[m.vfi(nx - 1, j)];
                if (j > 0) {
                    add(t, r, ucol(m, i, j - 1), -0.5 * as / h);
                    add(t, r, ucol(m, i, j), -0.5 * as / h);
                } else {
                    add(t, r, ucol(m, i, j), -as / h);
                }
            }
        }
    }
    for (int j = 1; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int ff = m.vfi(i, j);
            if (m.vkind[ff] != FaceKind::Free) continue;
            const int r = m.nu + m.vdof[ff];
            {
                const double an = 0.5 * (af.v[m.vfi(i, j)] + af.v[m.vfi(i, j + 1)]);
                add(t, r, vcol(m, i, j), 0.5 * an / h);
                add(t, r, vcol(m, i, j + 1), 0.5 * an / h);
            }
            {
                const double as = 0.5 * (af.v[m.vfi(i, j - 1)] + af.v[m.vfi(i, j)]);
                add(t, r, vcol(m, i, j - 1), -0.5 * as / h);
                add(t, r, vcol(m, i, j), -0.5 * as / h);
            }
            {
                const double ae = 0.5 * (af.u[m.ufi(i + 1, j - 1)] + af.u[m.ufi(i + 1, j)]);
                if (i + 1 < nx) {
                    add(t, r, vcol(m, i, j), 0.5 * ae / h);
                    add(t, r, vcol(m, i + 1, j), 0.5 * ae / h);
                } else {
                    add(t, r, vcol(m, i, j), ae / h);
                }
            }
            {
                const double aw = 0.5 * (af.u[m.ufi(i, j - 1)] + af.u[m.ufi(i, j)]);
                if (i > 0) {
                    add(t, r, vcol(m, i - 1, j), -0.5 * aw / h);
                    add(t, r, vcol(m, i, j), -0.5 * aw / h);
                } else {
                    add(t, r, vcol(m, i, j), -aw / h);
                }
            }
        }
    }
    SpMat J(m.nz(), m.nz());
    J.setFromTriplets(t.begin(), t.end());
    return J;
}

SpMat conv_jacobian_a(const Mesh& m, const CoupledField& b) {
    const auto bf = scatter_faces<double>(m, b.z);
    const double h = m.cfg.h;
    const int nx = m.nx, ny = m.ny;
    std::vector<Trip> t;
    for (int j = 0; j < ny; ++j) {
        for (int i = 1; i <= nx; ++i) {
            const int ff = m.ufi(i, j);
            if (m.ukind[ff] != FaceKind::Free) continue;
            const int r = m.udof[ff];
            if (i < nx) {
                const double be = 0.5 * (bf.u[m.ufi(i, j)] + bf.u[m.ufi(i + 1, j)]);
                add(t, r, ucol(m, i, j), 0.5 * be / h);
                add(t, r, ucol(m, i + 1, j), 0.5 * be / h);
            } else {
                add(t, r, ucol(m, i, j), bf.u[m.ufi(i, j)] / h);
            }
            {
                const double bw = 0.5 * (bf.u[m.ufi(i - 1, j)] + bf.u[m.ufi(i, j)]);
                add(t, r, ucol(m, i - 1, j), -0.5 * bw / h);
                add(t, r, ucol(m, i, j), -0.5 * bw / h);
            }
            {
                const double bn = (j + 1 < ny)
                                      ? 0.5 * (bf.u[m.ufi(i, j)] + bf.u[m.ufi(i, j + 1)])
                                      : bf.u[m.ufi(i, j)];
                if (i < nx) {
                    add(t, r, vcol(m, i - 1, j + 1), 0.5 * bn / h);
                    add(t, r, vcol(m, i, j + 1), 0.5 * bn / h);
                } else {
                    add(t, r, vcol(m, nx - 1, j + 1), bn / h);
                }
            }
            {
                const double bs = (j > 0)
                                      ? 0.5 * (bf.u[m.ufi(i, j - 1)] + bf.u[m.ufi(i, j)])
                                      : bf.u[m.ufi(i, j)];
                if (i < nx) {
                    add(t, r, vcol(m, i - 1, j), -0.5 * bs / h);
                    add(t, r, vcol(m, i, j), -0.5 * bs / h);
                } else {
                    add(t, r, vcol(m, nx - 1, j), -bs / h);
                }
            }
        }
    }
    for (int j = 1; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int ff = m.vfi(i, j);
            if (m.vkind[ff] != FaceKind::Free) continue;
            const int r = m.nu + m.vdof[ff];
            {
                const double bn = 0.5 * (bf.v[m.vfi(i, j)] + bf.v[m.vfi(i, j + 1)]);
                add(t, r, vcol(m, i, j), 0.5 * bn / h);
                add(t, r, vcol(m, i, j + 1), 0.5 * bn / h);
            }
            {
                const double bs = 0.5 * (bf.v[m.vfi(i, j - 1)] + bf.v[m.vfi(i, j)]);
                add(t, r, vcol(m, i, j - 1), -0.5 * bs / h);
                add(t, r, vcol(m, i, j), -0.5 * bs / h);
            }
            {
                const double be = (i + 1 < nx)
                                      ? 0.5 * (bf.v[m.vfi(i, j)] + bf.v[m.vfi(i + 1, j)])
                                      : bf.v[m.vfi(i, j)];
                add(t, r, ucol(m, i + 1, j - 1), 0.5 * be / h);
                add(t, r, ucol(m, i + 1, j), 0.5 * be / h);
            }
            {
                const double bw = (i > 0)
                                      ? 0.5 * (bf.v[m.vfi(i - 1, j)] + bf.v[m.vfi(i, j)])
                                      : bf.v[m.vfi(i, j)];
                add(t, r, ucol(m, i, j - 1), -0.5 * bw / h);
                add(t, r, ucol(m, i, j), -0.5 * bw / h);
            }
        }
    }
    SpMat J(m.nz(), m.nz());
    J.setFromTriplets(t.begin(), t.end());
    return J;
}

FaceGradients face_gradients(const Mesh& m, const CoupledField& base) {
    const auto f = scatter_faces<double>(m, base.z);
    const double h = m.cfg.h;
    const int nx = m.nx, ny = m.ny;
    FaceGradients g;
    g.dux.assign(f.u.size(), 0.0);
    g.duy.assign(f.u.size(), 0.0);
    g.v_at_uface.assign(f.u.size(), 0.0);
    g.dvx.assign(f.v.size(), 0.0);
    g.dvy.assign(f.v.size(), 0.0);
    g.u_at_vface.assign(f.v.size(), 0.0);

    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
            const int ff = m.ufi(i, j);
            if (i == 0) {
                g.dux[ff] = (f.u[m.ufi(1, j)] - f.u[m.ufi(0, j)]) / h;
            } else if (i == nx) {
                g.dux[ff] = (f.u[m.ufi(nx, j)] - f.u[m.ufi(nx - 1, j)]) / h;
            } else {
                g.dux[ff] = (f.u[m.ufi(i + 1, j)] - f.u[m.ufi(i - 1, j)]) / (2 * h);
            }
            if (j == 0) {
                g.duy[ff] = (f.u[m.ufi(i, 1)] - f.u[m.ufi(i, 0)]) / h;
            } else if (j == ny - 1) {
                g.duy[ff] = (f.u[m.ufi(i, j)] - f.u[m.ufi(i, j - 1)]) / h;
            } else {
                g.duy[ff] = (f.u[m.ufi(i, j + 1)] - f.u[m.ufi(i, j - 1)]) / (2 * h);
            }
            const Stencil s = v_at_uface_stencil(m, i, j);
            double acc = 0.0;
            for (int k = 0; k < s.n; ++k) acc += s.w[k] * f.v[s.idx[k]];
            g.v_at_uface[ff] = acc;
        }
    }
    for (int j = 0; j <= ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int ff = m.vfi(i, j);
            if (i == 0) {
                g.dvx[ff] = (f.v[m.vfi(1, j)] - f.v[m.vfi(0, j)]) / h;
            } else if (i == nx - 1) {
                g.dvx[ff] = (f.v[m.vfi(i, j)] - f.v[m.vfi(i - 1, j)]) / h;
            } else {
                g.dvx[ff] = (f.v[m.vfi(i + 1, j)] - f.v[m.vfi(i - 1, j)]) / (2 * h);
            }
            if (j == 0) {
                g.dvy[ff] = (f.v[m.vfi(i, 1)] - f.v[m.vfi(i, 0)]) / h;
            } else if (j == ny) {
                g.dvy[ff] = (f.v[m.vfi(i, ny)] - f.v[m.vfi(i, ny - 1)]) / h;
            } else {
                g.dvy[ff] = (f.v[m.vfi(i, j + 1)] - f.v[m.vfi(i, j - 1)]) / (2 * h);
            }
            const Stencil s = u_at_vface_stencil(m, i, j);
            double acc = 0.0;
            for (int k = 0; k < s.n; ++k) acc += s.w[k] * f.u[s.idx[k]];
            g.u_at_vface[ff] = acc;
        }
    }
    return g;
}

SpMat multiplier_grad(const Mesh& m, const FaceGradients& g, bool with_sigma) {
    const int nx = m.nx, ny = m.ny, nf = m.nf();
    std::vector<Trip> t;
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
            const int ff = m.ufi(i, j);
            if (m.ukind[ff] != FaceKind::Free) continue;
            const int r = m.udof[ff];
            if (with_sigma) {
                add(t, r, nf, g.dux[ff]);
                add(t, r, nf + 1, g.duy[ff]);
            }
            add(t, r, m.udof[ff], -g.dux[ff]);
            const Stencil s = v_at_uface_stencil(m, i, j);
            for (int k = 0; k < s.n; ++k) {
                const int c = vcol(m, s.idx[k] % nx, s.idx[k] / nx);
                add(t, r, c, -s.w[k] * g.duy[ff]);
            }
        }
    }
    for (int j = 0; j <= ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int ff = m.vfi(i, j);
            if (m.vkind[ff] != FaceKind::Free) continue;
            const int r = m.nu + m.vdof[ff];
            if (with_sigma) {
                add(t, r, nf, g.dvx[ff]);
                add(t, r, nf + 1, g.dvy[ff]);
            }
            add(t, r, m.nu + m.vdof[ff], -g.dvy[ff]);
            const Stencil s = u_at_vface_stencil(m, i, j);
            for (int k = 0; k < s.n; ++k) {
                const int c = ucol(m, s.idx[k] % (nx + 1), s.idx[k] / (nx + 1));
                add(t, r, c, -s.w[k] * g.dvx[ff]);
            }
        }
    }
    SpMat M(m.nz(), m.nz());
    M.setFromTriplets(t.begin(), t.end());
    return M;
}

SpMat face_volume_matrix(const Mesh& m) {
    const double h2 = m.cfg.h * m.cfg.h;
    std::vector<Trip> t;
    t.reserve(m.nf());
    for (int k = 0; k < m.nf(); ++k) t.emplace_back(k, k, h2);
    SpMat H(m.nz(), m.nz());
    H.setFromTriplets(t.begin(), t.end());
    return H;
}

} // namespace viv
