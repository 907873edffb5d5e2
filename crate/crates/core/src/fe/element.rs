//! Bilinear quad4 shape functions and element-level kinematics.

use crate::tensor::Tensor2;

/// Shape function values and parent-space gradients at `(xi, eta)`.
///
/// Node order is counter-clockwise from `(-1, -1)`. Values satisfy the
/// partition of unity; gradients sum to zero.
pub fn shape_eval(xi: f64, eta: f64) -> ([f64; 4], [[f64; 2]; 4]) {
    let values = [
        0.25 * (1.0 - xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 - eta),
        0.25 * (1.0 + xi) * (1.0 + eta),
        0.25 * (1.0 - xi) * (1.0 + eta),
    ];
    let gradients = [
        [-0.25 * (1.0 - eta), -0.25 * (1.0 - xi)],
        [0.25 * (1.0 - eta), -0.25 * (1.0 + xi)],
        [0.25 * (1.0 + eta), 0.25 * (1.0 + xi)],
        [-0.25 * (1.0 + eta), 0.25 * (1.0 - xi)],
    ];
    (values, gradients)
}

/// Shape gradients with respect to reference coordinates, plus the
/// reference Jacobian determinant, at one parent point of one element.
///
/// `∇_X N_a = J₀⁻ᵀ ∇_ξ N_a` with `J₀ = Σ_a X_a ⊗ ∇_ξ N_a`.
pub fn shape_gradients_ref(coords: &[[f64; 2]; 4], xi: f64, eta: f64) -> ([[f64; 2]; 4], f64) {
    let (_, dn) = shape_eval(xi, eta);
    let mut j0 = [[0.0f64; 2]; 2];
    for a in 0..4 {
        for i in 0..2 {
            for al in 0..2 {
                j0[i][al] += coords[a][i] * dn[a][al];
            }
        }
    }
    let det = j0[0][0] * j0[1][1] - j0[0][1] * j0[1][0];
    // inverse transpose of J0, written out
    let inv_t = [
        [j0[1][1] / det, -j0[1][0] / det],
        [-j0[0][1] / det, j0[0][0] / det],
    ];
    let mut grad_x = [[0.0f64; 2]; 4];
    for a in 0..4 {
        for i in 0..2 {
            grad_x[a][i] = inv_t[i][0] * dn[a][0] + inv_t[i][1] * dn[a][1];
        }
    }
    (grad_x, det)
}

/// Deformation gradient `F = I + Σ_a u_a ⊗ ∇_X N_a` from nodal
/// displacements and reference shape gradients.
pub fn deformation_gradient(u_nodes: &[[f64; 2]; 4], grad_x: &[[f64; 2]; 4]) -> Tensor2 {
    let mut f = Tensor2::IDENTITY;
    for a in 0..4 {
        f.a11 += u_nodes[a][0] * grad_x[a][0];
        f.a12 += u_nodes[a][0] * grad_x[a][1];
        f.a21 += u_nodes[a][1] * grad_x[a][0];
        f.a22 += u_nodes[a][1] * grad_x[a][1];
    }
    f
}
