//! Total-Lagrangian assembly of internal forces and tangent stiffness.
//!
//! All integrals are taken over the reference configuration. Assembly is
//! split in two layers: a table-driven layer that integrates caller-supplied
//! per-Gauss-point stresses/moduli (shared with the two-scale driver, where
//! the constitutive response comes from an RVE solve or a surrogate), and a
//! material layer that evaluates a [`Constitutive`] law in place.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fe::element::{deformation_gradient, shape_gradients_ref};
use crate::fe::mesh::Mesh;
use crate::fe::quadrature::QuadratureRule;
use crate::tensor::{self, MaterialParams, Tensor2, Tensor4};

/// Per-element, per-Gauss-point constitutive response in reference
/// (first Piola-Kirchhoff) form.
pub trait Constitutive: Sync {
    fn pk_stress(&self, elem: usize, gp: usize, f: Tensor2) -> Result<Tensor2>;
    fn tangent(&self, elem: usize, gp: usize, f: Tensor2) -> Result<Tensor4>;
}

/// One neo-Hookean material for the whole mesh.
impl Constitutive for MaterialParams {
    fn pk_stress(&self, _elem: usize, _gp: usize, f: Tensor2) -> Result<Tensor2> {
        tensor::neo_hookean_pk(f, self)
    }

    fn tangent(&self, _elem: usize, _gp: usize, f: Tensor2) -> Result<Tensor4> {
        tensor::material_tangent(self, f)
    }
}

/// Per-element neo-Hookean materials (two-phase microstructures).
#[derive(Debug, Clone)]
pub struct PerElementMaterial {
    pub materials: Vec<MaterialParams>,
}

impl Constitutive for PerElementMaterial {
    fn pk_stress(&self, elem: usize, _gp: usize, f: Tensor2) -> Result<Tensor2> {
        tensor::neo_hookean_pk(f, &self.materials[elem])
    }

    fn tangent(&self, elem: usize, _gp: usize, f: Tensor2) -> Result<Tensor4> {
        tensor::material_tangent(&self.materials[elem], f)
    }
}

fn gather_element_u(mesh: &Mesh, e: usize, u: &DVector<f64>) -> [[f64; 2]; 4] {
    let conn = mesh.element(e);
    let mut out = [[0.0; 2]; 4];
    for (a, &n) in conn.iter().enumerate() {
        out[a] = [u[2 * n], u[2 * n + 1]];
    }
    out
}

/// Deformation gradient at every Gauss point, indexed `[element][gp]`.
/// Does not check orientation; callers decide how to treat `det F <= 0`.
pub fn gp_deformation_gradients(
    mesh: &Mesh,
    quad: &QuadratureRule,
    u: &DVector<f64>,
) -> Vec<Vec<Tensor2>> {
    assert_eq!(
        u.len(),
        mesh.n_dofs(),
        "displacement vector length mismatch"
    );
    (0..mesh.n_elements())
        .map(|e| {
            let coords = mesh.element_coords(e);
            let ue = gather_element_u(mesh, e, u);
            quad.points()
                .iter()
                .map(|pt| {
                    let (gx, _) = shape_gradients_ref(&coords, pt.xi, pt.eta);
                    deformation_gradient(&ue, &gx)
                })
                .collect()
        })
        .collect()
}

/// Integrate nodal internal forces from a per-Gauss-point stress table:
/// `f[a,i] += w · detJ₀ · P_iJ · ∂N_a/∂X_J`.
pub fn assemble_forces_from_stresses(
    mesh: &Mesh,
    quad: &QuadratureRule,
    stresses: &[Vec<Tensor2>],
) -> DVector<f64> {
    let mut f_int = DVector::zeros(mesh.n_dofs());
    for (e, stress_row) in stresses.iter().enumerate() {
        let coords = mesh.element_coords(e);
        let conn = mesh.element(e);
        for (g, pt) in quad.points().iter().enumerate() {
            let (gx, det) = shape_gradients_ref(&coords, pt.xi, pt.eta);
            let p = &stress_row[g];
            let dv = pt.weight * det;
            for a in 0..4 {
                for i in 0..2 {
                    let val = p.get(i, 0) * gx[a][0] + p.get(i, 1) * gx[a][1];
                    f_int[2 * conn[a] + i] += dv * val;
                }
            }
        }
    }
    f_int
}

/// Integrate the tangent stiffness from a per-Gauss-point moduli table:
/// `K[(a,i),(b,k)] += w · detJ₀ · ∂N_a/∂X_J · A_iJkL · ∂N_b/∂X_L`.
pub fn assemble_tangent_from_moduli(
    mesh: &Mesh,
    quad: &QuadratureRule,
    moduli: &[Vec<Tensor4>],
) -> DMatrix<f64> {
    let n = mesh.n_dofs();
    let mut k = DMatrix::zeros(n, n);
    for (e, moduli_row) in moduli.iter().enumerate() {
        let coords = mesh.element_coords(e);
        let conn = mesh.element(e);
        for (g, pt) in quad.points().iter().enumerate() {
            let (gx, det) = shape_gradients_ref(&coords, pt.xi, pt.eta);
            let a4 = &moduli_row[g];
            let dv = pt.weight * det;
            for a in 0..4 {
                for b in 0..4 {
                    for i in 0..2 {
                        for kk in 0..2 {
                            let mut s = 0.0;
                            for j in 0..2 {
                                for l in 0..2 {
                                    s += gx[a][j] * a4.get(i, j, kk, l) * gx[b][l];
                                }
                            }
                            k[(2 * conn[a] + i, 2 * conn[b] + kk)] += dv * s;
                        }
                    }
                }
            }
        }
    }
    k
}

fn gp_stresses(
    mesh: &Mesh,
    quad: &QuadratureRule,
    u: &DVector<f64>,
    mat: &impl Constitutive,
) -> Result<Vec<Vec<Tensor2>>> {
    let fs = gp_deformation_gradients(mesh, quad, u);
    fs.iter()
        .enumerate()
        .map(|(e, row)| {
            row.iter()
                .enumerate()
                .map(|(g, &f)| {
                    let det = f.det();
                    if !(det > 0.0) {
                        return Err(Error::ElementInversion { element: e, det });
                    }
                    mat.pk_stress(e, g, f)
                })
                .collect()
        })
        .collect()
}

/// Internal force vector for a displacement state under a constitutive law.
/// Errors with [`Error::ElementInversion`] naming the element when
/// `det F <= 0` at any Gauss point.
pub fn assemble_internal_forces(
    mesh: &Mesh,
    u: &DVector<f64>,
    mat: &impl Constitutive,
    quad: &QuadratureRule,
) -> Result<DVector<f64>> {
    Ok(assemble_forces_from_stresses(
        mesh,
        quad,
        &gp_stresses(mesh, quad, u, mat)?,
    ))
}

/// Consistent tangent `K = ∂f_int/∂u` under a constitutive law.
pub fn assemble_tangent(
    mesh: &Mesh,
    u: &DVector<f64>,
    mat: &impl Constitutive,
    quad: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    let fs = gp_deformation_gradients(mesh, quad, u);
    let moduli: Vec<Vec<Tensor4>> = fs
        .iter()
        .enumerate()
        .map(|(e, row)| {
            row.iter()
                .enumerate()
                .map(|(g, &f)| {
                    let det = f.det();
                    if !(det > 0.0) {
                        return Err(Error::ElementInversion { element: e, det });
                    }
                    mat.tangent(e, g, f)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble_tangent_from_moduli(mesh, quad, &moduli))
}
