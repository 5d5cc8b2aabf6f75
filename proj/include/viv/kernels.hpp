#pragma once

#include "viv/field.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace viv {

/// Kernel implementation selector. Parallel uses OpenMP worksharing; Serial is
/// the plain reference loop kept for testing and as a baseline in the kernel
/// benchmark.
enum class KernelImpl { Serial, Parallel };

inline KernelImpl default_kernel_impl() {
#ifdef _OPENMP
    return KernelImpl::Parallel;
#else
    return KernelImpl::Serial;
#endif
}

namespace detail {

// Divergence-form transport flux balance for one u-face. Fluxes are products
// of the averaged transport field a and averaged b, so that the discrete
// transport energy (conv(a,b), b) telescopes to zero whenever a is
// discretely solenoidal and b vanishes on all boundaries.
template <class S>
inline S conv_u_face(const Mesh& m, const FaceArrays<S>& a,
                     const FaceArrays<S>& b, int i, int j) {
    const int nx = m.nx;
    S FE, FW, FN, FS;
    if (i < nx) {
        const S ae = (a.u[m.ufi(i, j)] + a.u[m.ufi(i + 1, j)]) * 0.5;
        FE = ae * (b.u[m.ufi(i, j)] + b.u[m.ufi(i + 1, j)]) * 0.5;
    } else {
        // outflow: zero-gradient ghost
        FE = a.u[m.ufi(i, j)] * b.u[m.ufi(i, j)];
    }
    {
        const S aw = (a.u[m.ufi(i - 1, j)] + a.u[m.ufi(i, j)]) * 0.5;
        FW = aw * (b.u[m.ufi(i - 1, j)] + b.u[m.ufi(i, j)]) * 0.5;
    }
    {
        const S an = (i < nx)
                         ? S((a.v[m.vfi(i - 1, j + 1)] + a.v[m.vfi(i, j + 1)]) * 0.5)
                         : a.v[m.vfi(nx - 1, j + 1)];
        const S bn = (j + 1 < m.ny)
                         ? S((b.u[m.ufi(i, j)] + b.u[m.ufi(i, j + 1)]) * 0.5)
                         : b.u[m.ufi(i, j)];
        FN = an * bn;
    }
    {
        const S as = (i < nx)
                         ? S((a.v[m.vfi(i - 1, j)] + a.v[m.vfi(i, j)]) * 0.5)
                         : a.v[m.vfi(nx - 1, j)];
        const S bs = (j > 0) ? S((b.u[m.ufi(i, j - 1)] + b.u[m.ufi(i, j)]) * 0.5)
                             : b.u[m.ufi(i, j)];
        FS = as * bs;
    }
    return (FE - FW + FN - FS) / m.cfg.h;
}

template <class S>
inline S conv_v_face(const Mesh& m, const FaceArrays<S>& a,
                     const FaceArrays<S>& b, int i, int j) {
    const int nx = m.nx;
    S FN, FS, FE, FW;
    {
        const S an = (a.v[m.vfi(i, j)] + a.v[m.vfi(i, j + 1)]) * 0.5;
        FN = an * (b.v[m.vfi(i, j)] + b.v[m.vfi(i, j + 1)]) * 0.5;
    }
    {
        const S as = (a.v[m.vfi(i, j - 1)] + a.v[m.vfi(i, j)]) * 0.5;
        FS = as * (b.v[m.vfi(i, j - 1)] + b.v[m.vfi(i, j)]) * 0.5;
    }
    {
        const S ae = (a.u[m.ufi(i + 1, j - 1)] + a.u[m.ufi(i + 1, j)]) * 0.5;
        const S be = (i + 1 < nx) ? S((b.v[m.vfi(i, j)] + b.v[m.vfi(i + 1, j)]) * 0.5)
                                  : b.v[m.vfi(i, j)];
        FE = ae * be;
    }
    {
        const S aw = (a.u[m.ufi(i, j - 1)] + a.u[m.ufi(i, j)]) * 0.5;
        const S bw = (i > 0) ? S((b.v[m.vfi(i - 1, j)] + b.v[m.vfi(i, j)]) * 0.5)
                             : b.v[m.vfi(i, j)];
        FW = aw * bw;
    }
    return (FN - FS + FE - FW) / m.cfg.h;
}

} // namespace detail

/// Transport term a·∇b in divergence form, evaluated on free faces. The body
/// rows of the result are zero (the term is extended by zero on the body).
/// `out` must have size mesh.nz().
template <class S>
void conv_apply(const Mesh& m, const FaceArrays<S>& a, const FaceArrays<S>& b,
                Eigen::Vector<S, Eigen::Dynamic>& out,
                KernelImpl impl = default_kernel_impl()) {
    out.setZero(m.nz());
    const int nx = m.nx, ny = m.ny;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (impl == KernelImpl::Parallel)
#endif
    for (int j = 0; j < ny; ++j) {
        for (int i = 1; i <= nx; ++i) {
            const int f = m.ufi(i, j);
            if (m.ukind[f] == FaceKind::Free) {
                out[m.udof[f]] = detail::conv_u_face(m, a, b, i, j);
            }
        }
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (impl == KernelImpl::Parallel)
#endif
    for (int j = 1; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int f = m.vfi(i, j);
            if (m.vkind[f] == FaceKind::Free) {
                out[m.nu + m.vdof[f]] = detail::conv_v_face(m, a, b, i, j);
            }
        }
    }
}

} // namespace viv
