#pragma once

#include "viv/field.hpp"
#include "viv/kernels.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <memory>
#include <utility>

namespace viv {

using SpMat = Eigen::SparseMatrix<double>;
using CSpMat = Eigen::SparseMatrix<Cplx>;

/// Per-face gradient samples of a base coupled field, used by the multiplier
/// terms (w − sigma)·∇u0 of the linearized equations.
struct FaceGradients {
    // at u-faces: d/dx and d/dy of the first velocity component
    std::vector<double> dux, duy;
    // at v-faces: d/dx and d/dy of the second velocity component
    std::vector<double> dvx, dvy;
    // the transverse component of the base field interpolated to each face
    std::vector<double> v_at_uface, u_at_vface;
};

/// Discrete operators over the coupled z-vector layout
/// [free u | free v | u_hat]. Momentum-type rows are scaled by the cell
/// volume h^2 (weak form with unit test functions), so that
///   z' S z   approximates  ∫ ∇u : ∇z,
///   (D z)_c  approximates  (div u) at cell c,
/// and the weighted inner product is <f, g> = f' M g with M = diag(mass).
struct OperatorSet {
    Mesh mesh;
    double varpi = 1.0;

    SpMat D;   ///< divergence, np x nz (includes u_hat columns)
    SpMat S;   ///< coupled stiffness (gradient form), nz x nz, symmetric
    SpMat P1;  ///< streamwise derivative on free faces, nz x nz, hat rows 0
    Vec mass;  ///< metric weights: h^2 on faces, 1/varpi on hat entries

    SpMat Ap;  ///< pressure operator h^2 D M^{-1} D', pinned when closed
    std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> Ap_fact;
    bool closed = false; ///< no outflow: pressure determined up to a constant

    int nz() const { return mesh.nz(); }
    int nf() const { return mesh.nf(); }
};

OperatorSet build_operators(const Mesh& mesh, double varpi);

/// Weighted inner product (fluid volume integral plus varpi^{-1} body term).
double inner(const OperatorSet& ops, const CoupledField& f, const CoupledField& g);

/// Orthogonal projection onto the discrete coupled solenoidal space. The
/// complement is G q = -M^{-1} h^2 D' q: a fluid pressure gradient paired with
/// the body part -varpi ∮ q n. Optionally returns the pressure potential q.
CoupledField project(const OperatorSet& ops, const CoupledField& f,
                     PressureField* q_out = nullptr);

/// Transport term a·∇b on free faces, zero on the body rows.
CoupledField convection(const OperatorSet& ops, const CoupledField& a,
                        const CoupledField& b,
                        KernelImpl impl = default_kernel_impl());

/// Variational traction: the body rows of the weak viscous + pressure
/// operator, i.e. the discrete ∮ T(u, p)·n entering the spring equation.
Eigen::Vector2d traction_integral(const OperatorSet& ops, const CoupledField& u,
                                  const PressureField& p);

/// (‖D(u)‖, ‖∇u‖) for a field with zero outer-boundary trace.
std::pair<double, double> strain_norm(const OperatorSet& ops, const CoupledField& u);

/// Jacobian of convection(a, b) with respect to b at fixed a (w -> a·∇w).
/// Rows on free faces, columns over the full z layout.
SpMat conv_jacobian_b(const Mesh& m, const CoupledField& a);

/// Jacobian of convection(a, b) with respect to a at fixed b (w -> w·∇b).
SpMat conv_jacobian_a(const Mesh& m, const CoupledField& b);

/// One-sided / centered gradient samples of a base field at every face.
FaceGradients face_gradients(const Mesh& m, const CoupledField& base);

/// Multiplier operator z -> (sigma_z - z_fluid)·∇base evaluated on free
/// faces, where sigma_z is the hat part of z. Central ingredient of the
/// linearized transport and of the lambda_1 / lambda_2 quadratic forms.
SpMat multiplier_grad(const Mesh& m, const FaceGradients& g, bool with_sigma = true);

/// Volume scaling matrix: diag(h^2) on free-face rows, zero hat rows.
SpMat face_volume_matrix(const Mesh& m);

} // namespace viv
