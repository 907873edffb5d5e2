//! Newton iteration for the constrained equilibrium problem
//! `f_int(u) = f_ext` with Dirichlet and tie constraints eliminated.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::assembly::{
    assemble_internal_forces, assemble_tangent, gp_deformation_gradients, Constitutive,
};
use crate::fe::constraints::{ConstraintMap, ConstraintSet};
use crate::fe::linalg::solve_linear;
use crate::fe::mesh::Mesh;
use crate::fe::quadrature::QuadratureRule;

/// Convergence record of one Newton solve. `iterations` counts residual
/// evaluations; `residual_history` holds the reduced-residual 2-norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub converged: bool,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

/// Solve the constrained equilibrium problem starting from `u = 0`.
///
/// The residual is the 2-norm of the reduced (free-dof) imbalance
/// `f_int − f_ext`; `tol` is absolute in force units.
pub fn newton_solve(
    mesh: &Mesh,
    mat: &impl Constitutive,
    quad: &QuadratureRule,
    constraints: &ConstraintSet,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, NewtonReport)> {
    let u0 = DVector::zeros(mesh.n_dofs());
    newton_solve_from(mesh, mat, quad, constraints, None, &u0, tol, max_iter)
}

/// Newton solve with an external load vector and a warm start.
#[allow(clippy::too_many_arguments)]
pub fn newton_solve_from(
    mesh: &Mesh,
    mat: &impl Constitutive,
    quad: &QuadratureRule,
    constraints: &ConstraintSet,
    f_ext: Option<&DVector<f64>>,
    u_start: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, NewtonReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Newton tol must be > 0, got {tol}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidInput("Newton max_iter must be >= 1".into()));
    }
    let map = ConstraintMap::build(mesh.n_dofs(), &constraints.flatten(mesh.n_nodes())?)?;
    let mut u = u_start.clone();
    map.enforce(&mut u);

    let mut history = Vec::new();
    loop {
        let f_int = assemble_internal_forces(mesh, &u, mat, quad)?;
        let residual_full = match f_ext {
            Some(fe) => &f_int - fe,
            None => f_int,
        };
        let r = map.reduce_vector(&residual_full);
        let norm = r.norm();
        history.push(norm);
        if norm <= tol {
            return Ok((
                u,
                NewtonReport {
                    converged: true,
                    iterations: history.len(),
                    residual_history: history,
                },
            ));
        }
        if history.len() > max_iter {
            return Err(Error::NonConvergence {
                residual_history: history,
            });
        }
        let k = assemble_tangent(mesh, &u, mat, quad)?;
        let k_red = map.reduce_matrix(&k);
        let delta = solve_linear(&k_red, &(-r))?;
        let full_step = map.expand_correction(&delta);
        u = damped_update(mesh, quad, &u, &full_step)?;
    }
}

/// First inverted Gauss point of a displacement state, if any.
fn find_inversion(mesh: &Mesh, quad: &QuadratureRule, u: &DVector<f64>) -> Option<(usize, f64)> {
    for (e, row) in gp_deformation_gradients(mesh, quad, u).iter().enumerate() {
        for f in row {
            let det = f.det();
            if !(det > 0.0) {
                return Some((e, det));
            }
        }
    }
    None
}

/// Apply a Newton step, halving it while the trial state inverts an
/// element. Full steps pass untouched, so convergence near the solution is
/// unaffected; if even a 2^-8 step inverts, the full-step inversion is
/// reported.
fn damped_update(
    mesh: &Mesh,
    quad: &QuadratureRule,
    u: &DVector<f64>,
    step: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut alpha = 1.0;
    let mut first_inversion = None;
    for _ in 0..9 {
        let trial = u + step * alpha;
        match find_inversion(mesh, quad, &trial) {
            None => return Ok(trial),
            Some(inv) => {
                first_inversion.get_or_insert(inv);
                alpha *= 0.5;
            }
        }
    }
    let (element, det) = first_inversion.expect("loop ran at least once");
    Err(Error::ElementInversion { element, det })
}
