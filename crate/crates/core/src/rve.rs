//! The micro-scale half of the two-scale method: impose a macroscale
//! deformation gradient on a unit cell, solve the cell equilibrium, and
//! homogenize the stress (boundary-force dyadic sum) and the tangent
//! (static condensation of the cell stiffness onto the boundary).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::assembly::{assemble_internal_forces, assemble_tangent, PerElementMaterial};
use crate::fe::constraints::ConstraintSet;
use crate::fe::linalg::condense;
use crate::fe::mesh::{Mesh, MeshFile};
use crate::fe::newton::{newton_solve_from, NewtonReport};
use crate::fe::quadrature::QuadratureRule;
use crate::tensor::{MaterialParams, Tensor2, Tensor4};

/// How the macroscale deformation gradient is imposed on the cell boundary.
///
/// `Affine` prescribes `u = (F_M − I) X` on every boundary node. `Periodic`
/// pins the four corners that way and ties each mirror pair of boundary
/// nodes so that `u⁺ − u⁻ = (F_M − I)(X⁺ − X⁻)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BcMode {
    Affine,
    Periodic,
}

/// A unit-cell problem: mesh, per-element material, reference volume and
/// boundary-condition mode. Immutable once built; solves on the same
/// problem are independent.
#[derive(Debug, Clone)]
pub struct RveProblem {
    mesh: Mesh,
    materials: Vec<MaterialParams>,
    v0: f64,
    bc_mode: BcMode,
}

/// Geometric tolerance for matching mirror-image boundary nodes.
const PAIR_TOL: f64 = 1e-10;

/// Corner node ids plus (follower, leader) mirror pairs of a periodic cell.
type CornersAndPairs = (Vec<usize>, Vec<(usize, usize)>);

/// Dof partition of a cell mesh: `p` are boundary ("prescribed") dofs in
/// boundary-node order, `f` the interior ("free") dofs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryPartition {
    pub p: Vec<usize>,
    pub f: Vec<usize>,
}

/// Converged cell state: full displacement vector, boundary nodal reaction
/// forces (one 2-vector per boundary node, in boundary-node order) and the
/// applied macroscale deformation gradient.
#[derive(Debug, Clone)]
pub struct RveSolution {
    pub u: DVector<f64>,
    pub f_p: Vec<[f64; 2]>,
    pub f_m_applied: Tensor2,
    pub report: NewtonReport,
}

/// Boundary-only Schur complement of the cell stiffness plus the reference
/// coordinates of the boundary nodes it couples.
#[derive(Debug, Clone)]
pub struct CondensedStiffness {
    pub k: DMatrix<f64>,
    pub coords: Vec<[f64; 2]>,
}

/// Which index pairing to use when contracting the condensed stiffness
/// with boundary coordinates into the homogenized tangent.
///
/// `Derived` pairs the second coordinate factor with the column node
/// (`K^{ij}_{ac} X^{i}_b X^{j}_d`), which is what the incremental
/// stress identity yields. `RowIndexTwice` pairs both coordinate factors
/// with the row node (`X^{i}_b X^{i}_d`); it is kept for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TangentFormula {
    Derived,
    RowIndexTwice,
}

/// On-disk cell mesh: the plain mesh format plus optional per-element
/// material ids for multi-phase microstructures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RveFile {
    #[serde(flatten)]
    pub mesh: MeshFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_materials: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<BTreeMap<String, MaterialParams>>,
}

impl RveProblem {
    /// Single-phase cell.
    pub fn new(mesh: Mesh, mat: MaterialParams, bc_mode: BcMode) -> Result<Self> {
        let materials = vec![mat; mesh.n_elements()];
        Self::with_materials(mesh, materials, bc_mode)
    }

    /// Cell with one material record per element.
    pub fn with_materials(
        mesh: Mesh,
        materials: Vec<MaterialParams>,
        bc_mode: BcMode,
    ) -> Result<Self> {
        if materials.len() != mesh.n_elements() {
            return Err(Error::InvalidInput(format!(
                "{} materials for {} elements",
                materials.len(),
                mesh.n_elements()
            )));
        }
        for m in &materials {
            // deserialized records bypass the constructor's checks
            MaterialParams::new(m.lambda, m.mu)?;
        }
        let v0 = mesh.reference_area();
        let problem = RveProblem {
            mesh,
            materials,
            v0,
            bc_mode,
        };
        if problem.bc_mode == BcMode::Periodic {
            problem.periodic_pairs()?; // fail early on non-periodic meshes
        }
        Ok(problem)
    }

    /// Structured homogeneous unit-square cell.
    pub fn homogeneous(n: usize, mat: MaterialParams, bc_mode: BcMode) -> Result<Self> {
        Self::new(Mesh::structured(n, n, 1.0, 1.0)?, mat, bc_mode)
    }

    /// Structured unit-square cell with a centered rectangular inclusion
    /// covering roughly `fraction` of the cell span in each direction.
    pub fn with_inclusion(
        n: usize,
        matrix: MaterialParams,
        inclusion: MaterialParams,
        fraction: f64,
        bc_mode: BcMode,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidInput(format!(
                "inclusion fraction must be in [0, 1], got {fraction}"
            )));
        }
        let mesh = Mesh::structured(n, n, 1.0, 1.0)?;
        let half = fraction / 2.0;
        let materials = (0..mesh.n_elements())
            .map(|e| {
                let coords = mesh.element_coords(e);
                let cx = coords.iter().map(|c| c[0]).sum::<f64>() / 4.0;
                let cy = coords.iter().map(|c| c[1]).sum::<f64>() / 4.0;
                if (cx - 0.5).abs() < half && (cy - 0.5).abs() < half {
                    inclusion
                } else {
                    matrix
                }
            })
            .collect();
        Self::with_materials(mesh, materials, bc_mode)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn materials(&self) -> &[MaterialParams] {
        &self.materials
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn bc_mode(&self) -> BcMode {
        self.bc_mode
    }

    pub fn with_bc_mode(mut self, bc_mode: BcMode) -> Result<Self> {
        self.bc_mode = bc_mode;
        if bc_mode == BcMode::Periodic {
            self.periodic_pairs()?;
        }
        Ok(self)
    }

    fn material_map(&self) -> PerElementMaterial {
        PerElementMaterial {
            materials: self.materials.clone(),
        }
    }

    /// Boundary/interior dof partition, boundary dofs in boundary-node order.
    pub fn boundary_partition(&self) -> BoundaryPartition {
        BoundaryPartition {
            p: self.mesh.boundary_dofs(),
            f: self.mesh.interior_dofs(),
        }
    }

    /// Corner nodes and mirror pairs of an axis-aligned rectangular cell.
    ///
    /// Pairs are (follower on Γ_R or Γ_T, leader on Γ_L or Γ_B); corner
    /// nodes appear in no pair. Errors with [`Error::MeshNotPeriodic`] when
    /// a non-corner boundary node has no mirror image.
    fn periodic_pairs(&self) -> Result<CornersAndPairs> {
        let nodes = self.mesh.nodes();
        let boundary = self.mesh.boundary_nodes();
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &n in boundary {
            x_min = x_min.min(nodes[n][0]);
            x_max = x_max.max(nodes[n][0]);
            y_min = y_min.min(nodes[n][1]);
            y_max = y_max.max(nodes[n][1]);
        }
        let on = |v: f64, target: f64| (v - target).abs() <= PAIR_TOL;
        let mut corners = Vec::new();
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut bottom = Vec::new();
        let mut top = Vec::new();
        for &n in boundary {
            let [x, y] = nodes[n];
            let lx = on(x, x_min);
            let rx = on(x, x_max);
            let by = on(y, y_min);
            let ty = on(y, y_max);
            if (lx || rx) && (by || ty) {
                corners.push(n);
            } else if lx {
                left.push(n);
            } else if rx {
                right.push(n);
            } else if by {
                bottom.push(n);
            } else if ty {
                top.push(n);
            } else {
                return Err(Error::MeshNotPeriodic(format!(
                    "boundary node {n} at ({x}, {y}) lies on no face of the bounding box"
                )));
            }
        }
        if corners.len() != 4 {
            return Err(Error::MeshNotPeriodic(format!(
                "expected 4 corner nodes, found {}",
                corners.len()
            )));
        }
        let mut pairs = Vec::new();
        let mut match_faces =
            |followers: &[usize], leaders: &[usize], axis: usize, face: &str| -> Result<()> {
                let mut used = vec![false; leaders.len()];
                for &fnode in followers {
                    let target = nodes[fnode][axis];
                    let found = leaders
                        .iter()
                        .enumerate()
                        .find(|(i, &l)| !used[*i] && (nodes[l][axis] - target).abs() <= PAIR_TOL);
                    match found {
                        Some((i, &l)) => {
                            used[i] = true;
                            pairs.push((fnode, l));
                        }
                        None => {
                            return Err(Error::MeshNotPeriodic(format!(
                                "no mirror image on {face} for boundary node {fnode}"
                            )))
                        }
                    }
                }
                if used.iter().any(|&u| !u) {
                    return Err(Error::MeshNotPeriodic(format!(
                        "unmatched nodes remain on {face}"
                    )));
                }
                Ok(())
            };
        match_faces(&right, &left, 1, "the left face")?;
        match_faces(&top, &bottom, 0, "the bottom face")?;
        Ok((corners, pairs))
    }

    /// Boundary conditions realizing `x = F_M X` on the cell.
    pub fn apply_macro_bc(&self, f_m: Tensor2) -> Result<ConstraintSet> {
        let det = f_m.det();
        if !(det > 0.0) {
            return Err(Error::InvalidDeformation { det });
        }
        let h = f_m.sub(&Tensor2::IDENTITY);
        let mut c = ConstraintSet::default();
        match self.bc_mode {
            BcMode::Affine => {
                for &n in self.mesh.boundary_nodes() {
                    let v = h.matvec(self.mesh.node(n));
                    c.fix(n, 0, v[0]);
                    c.fix(n, 1, v[1]);
                }
            }
            BcMode::Periodic => {
                let (corners, pairs) = self.periodic_pairs()?;
                for &n in &corners {
                    let v = h.matvec(self.mesh.node(n));
                    c.fix(n, 0, v[0]);
                    c.fix(n, 1, v[1]);
                }
                for &(follower, leader) in &pairs {
                    let dx = [
                        self.mesh.node(follower)[0] - self.mesh.node(leader)[0],
                        self.mesh.node(follower)[1] - self.mesh.node(leader)[1],
                    ];
                    let offset = h.matvec(dx);
                    c.tie(follower, leader, 0, offset[0]);
                    c.tie(follower, leader, 1, offset[1]);
                }
            }
        }
        Ok(c)
    }

    /// Solve the cell equilibrium under the imposed macroscale deformation
    /// gradient. Boundary reactions are recovered from the internal force
    /// vector at the converged state, so tied pairs each report their own
    /// force.
    ///
    /// Newton starts from the affine field `u = (F_M − I) X`, which
    /// satisfies both boundary-condition modes exactly and keeps every
    /// element orientation-preserving at the first iterate.
    pub fn solve(&self, f_m: Tensor2, tol: f64, max_iter: usize) -> Result<RveSolution> {
        let constraints = self.apply_macro_bc(f_m)?;
        let quad = QuadratureRule::gauss_2x2();
        let mat = self.material_map();
        let h = f_m.sub(&Tensor2::IDENTITY);
        let mut u0 = DVector::zeros(self.mesh.n_dofs());
        for (n, &x) in self.mesh.nodes().iter().enumerate() {
            let v = h.matvec(x);
            u0[2 * n] = v[0];
            u0[2 * n + 1] = v[1];
        }
        let (u, report) = newton_solve_from(
            &self.mesh,
            &mat,
            &quad,
            &constraints,
            None,
            &u0,
            tol,
            max_iter,
        )?;
        let f_int = assemble_internal_forces(&self.mesh, &u, &mat, &quad)?;
        let f_p = self
            .mesh
            .boundary_nodes()
            .iter()
            .map(|&n| [f_int[2 * n], f_int[2 * n + 1]])
            .collect();
        Ok(RveSolution {
            u,
            f_p,
            f_m_applied: f_m,
            report,
        })
    }

    /// Condensed tangent stiffness at a converged displacement state.
    pub fn condensed_stiffness(&self, u: &DVector<f64>) -> Result<CondensedStiffness> {
        let quad = QuadratureRule::gauss_2x2();
        let k_full = assemble_tangent(&self.mesh, u, &self.material_map(), &quad)?;
        let part = self.boundary_partition();
        let k = condense_stiffness(&k_full, &part)?;
        let coords = self
            .mesh
            .boundary_nodes()
            .iter()
            .map(|&n| self.mesh.node(n))
            .collect();
        Ok(CondensedStiffness { k, coords })
    }

    pub fn to_file(&self) -> RveFile {
        // collapse the per-element list to unique materials with stable ids
        let mut unique: Vec<MaterialParams> = Vec::new();
        let ids: Vec<usize> = self
            .materials
            .iter()
            .map(|m| match unique.iter().position(|u| u == m) {
                Some(i) => i,
                None => {
                    unique.push(*m);
                    unique.len() - 1
                }
            })
            .collect();
        if unique.len() <= 1 {
            RveFile {
                mesh: self.mesh.to_file(),
                element_materials: None,
                materials: None,
            }
        } else {
            RveFile {
                mesh: self.mesh.to_file(),
                element_materials: Some(ids),
                materials: Some(
                    unique
                        .iter()
                        .enumerate()
                        .map(|(i, m)| (i.to_string(), *m))
                        .collect(),
                ),
            }
        }
    }

    /// Build a problem from an on-disk cell file. `fallback_material` is
    /// used when the file embeds no materials.
    pub fn from_file(
        file: RveFile,
        fallback_material: Option<MaterialParams>,
        bc_mode: BcMode,
    ) -> Result<Self> {
        let mesh = Mesh::from_file(file.mesh)?;
        match (file.element_materials, file.materials) {
            (Some(ids), Some(table)) => {
                if ids.len() != mesh.n_elements() {
                    return Err(Error::InvalidInput(format!(
                        "element_materials has {} entries for {} elements",
                        ids.len(),
                        mesh.n_elements()
                    )));
                }
                let materials = ids
                    .iter()
                    .map(|id| {
                        table.get(&id.to_string()).copied().ok_or_else(|| {
                            Error::InvalidInput(format!("material id {id} not in materials table"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::with_materials(mesh, materials, bc_mode)
            }
            (None, None) => match fallback_material {
                Some(mat) => Self::new(mesh, mat, bc_mode),
                None => Err(Error::InvalidInput(
                    "cell file embeds no materials and no material was supplied".into(),
                )),
            },
            _ => Err(Error::InvalidInput(
                "element_materials and materials must be given together".into(),
            )),
        }
    }

    pub fn load_json(
        path: &Path,
        fallback_material: Option<MaterialParams>,
        bc_mode: BcMode,
    ) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?, fallback_material, bc_mode)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }
}

/// Homogenized first Piola-Kirchhoff stress from boundary reactions:
/// `P_M = (1/V₀) Σ_i f_p⁽ⁱ⁾ ⊗ X⁽ⁱ⁾`.
pub fn homogenized_pk(sol: &RveSolution, rve: &RveProblem) -> Tensor2 {
    let mut p = Tensor2::ZERO;
    for (&n, f) in rve.mesh().boundary_nodes().iter().zip(&sol.f_p) {
        let x = rve.mesh().node(n);
        p = p.add(&Tensor2::dyad(*f, x));
    }
    p.scale(1.0 / rve.v0())
}

/// Schur complement of the full stiffness onto the boundary dofs:
/// `K = K_pp − K_pf K_ff⁻¹ K_fp`.
pub fn condense_stiffness(k_full: &DMatrix<f64>, part: &BoundaryPartition) -> Result<DMatrix<f64>> {
    condense(k_full, &part.p, &part.f)
}

/// Homogenized tangent from the condensed stiffness and boundary
/// coordinates. With 2x2 blocks `K⁽ⁱʲ⁾` coupling boundary nodes `i`, `j`:
///
/// `ℂ_M[a][b][c][d] = (1/V₀) Σ_i Σ_j K⁽ⁱʲ⁾_ac · X⁽ⁱ⁾_b · X_d`
///
/// where the last factor is `X⁽ʲ⁾_d` for [`TangentFormula::Derived`] and
/// `X⁽ⁱ⁾_d` for [`TangentFormula::RowIndexTwice`].
pub fn homogenized_tangent(cs: &CondensedStiffness, v0: f64, formula: TangentFormula) -> Tensor4 {
    let n = cs.coords.len();
    debug_assert_eq!(cs.k.nrows(), 2 * n);
    let mut out = Tensor4::ZERO;
    for i in 0..n {
        for j in 0..n {
            let xi = cs.coords[i];
            let xj = cs.coords[j];
            for a in 0..2 {
                for c in 0..2 {
                    let kij = cs.k[(2 * i + a, 2 * j + c)];
                    for b in 0..2 {
                        for d in 0..2 {
                            let x2 = match formula {
                                TangentFormula::Derived => xj[d],
                                TangentFormula::RowIndexTwice => xi[d],
                            };
                            out.c[a][b][c][d] += kij * xi[b] * x2;
                        }
                    }
                }
            }
        }
    }
    out.scale(1.0 / v0)
}

/// Homogenized stress and tangent from one converged solve at `f_m`.
pub fn homogenized_response(
    rve: &RveProblem,
    f_m: Tensor2,
    tol: f64,
    max_iter: usize,
) -> Result<(Tensor2, Tensor4)> {
    let sol = rve.solve(f_m, tol, max_iter)?;
    let p = homogenized_pk(&sol, rve);
    let cs = rve.condensed_stiffness(&sol.u)?;
    let c = homogenized_tangent(&cs, rve.v0(), TangentFormula::Derived);
    Ok((p, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{material_tangent_fd, neo_hookean_pk};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat11() -> MaterialParams {
        MaterialParams::new(1.0, 1.0).unwrap()
    }

    const TOL: f64 = 1e-11;
    const MAX_IT: usize = 25;

    #[test]
    fn v0_matches_element_area_sum() {
        let rve = RveProblem::homogeneous(4, mat11(), BcMode::Affine).unwrap();
        assert!((rve.v0() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_bc_values() {
        let rve = RveProblem::homogeneous(1, mat11(), BcMode::Affine).unwrap();
        // F = I: all boundary displacements zero
        let c = rve.apply_macro_bc(Tensor2::IDENTITY).unwrap();
        assert!(c.ties.is_empty());
        assert!(c.dirichlet.iter().all(|d| d.value == 0.0));
        // corner (1,1) under diag(1.1, 1): u = (0.1, 0)
        let c = rve.apply_macro_bc(Tensor2::diag(1.1, 1.0)).unwrap();
        let corner = c
            .dirichlet
            .iter()
            .filter(|d| rve.mesh().node(d.node) == [1.0, 1.0])
            .collect::<Vec<_>>();
        assert_eq!(corner.len(), 2);
        for d in corner {
            let expected = if d.dof == 0 { 0.1 } else { 0.0 };
            assert!((d.value - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn periodic_bc_identity_is_all_zero() {
        let rve = RveProblem::homogeneous(3, mat11(), BcMode::Periodic).unwrap();
        let c = rve.apply_macro_bc(Tensor2::IDENTITY).unwrap();
        assert_eq!(c.dirichlet.len(), 8); // 4 corners x 2 dofs
        assert!(c.dirichlet.iter().all(|d| d.value == 0.0));
        assert!(c.ties.iter().all(|t| t.offset == 0.0));
        // 2 non-corner nodes per face x 2 faces tied x 2 dofs
        assert_eq!(c.ties.len(), 8);
    }

    #[test]
    fn periodic_rejects_unmatched_mesh() {
        // a mesh whose right face nodes have no mirrors: stretch one row
        let mut nodes = Mesh::structured(2, 2, 1.0, 1.0).unwrap().nodes().to_vec();
        nodes[5][1] = 0.61; // mid-right node moved off its mirror height
        let mesh = Mesh::new(
            nodes,
            Mesh::structured(2, 2, 1.0, 1.0)
                .unwrap()
                .elements()
                .to_vec(),
            Mesh::structured(2, 2, 1.0, 1.0)
                .unwrap()
                .boundary_nodes()
                .to_vec(),
        )
        .unwrap();
        let err = RveProblem::new(mesh, mat11(), BcMode::Periodic);
        assert!(matches!(err, Err(Error::MeshNotPeriodic(_))));
    }

    #[test]
    fn identity_solve_is_trivial() {
        for mode in [BcMode::Affine, BcMode::Periodic] {
            let rve = RveProblem::homogeneous(2, mat11(), mode).unwrap();
            let sol = rve.solve(Tensor2::IDENTITY, TOL, MAX_IT).unwrap();
            assert!(sol.u.amax() < 1e-12);
            assert!(sol
                .f_p
                .iter()
                .all(|f| f[0].abs() < 1e-12 && f[1].abs() < 1e-12));
        }
    }

    #[test]
    fn homogeneous_affine_solution_is_affine_everywhere() {
        let rve = RveProblem::homogeneous(3, mat11(), BcMode::Affine).unwrap();
        let f_m = Tensor2::diag(1.1, 1.0);
        let sol = rve.solve(f_m, TOL, MAX_IT).unwrap();
        let h = f_m.sub(&Tensor2::IDENTITY);
        for (n, &x) in rve.mesh().nodes().iter().enumerate() {
            let expected = h.matvec(x);
            assert!((sol.u[2 * n] - expected[0]).abs() < 1e-9);
            assert!((sol.u[2 * n + 1] - expected[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn periodic_equals_affine_for_homogeneous_cell() {
        let f_m = Tensor2::diag(1.1, 1.0);
        let affine = RveProblem::homogeneous(3, mat11(), BcMode::Affine).unwrap();
        let periodic = RveProblem::homogeneous(3, mat11(), BcMode::Periodic).unwrap();
        let ua = affine.solve(f_m, TOL, MAX_IT).unwrap().u;
        let up = periodic.solve(f_m, TOL, MAX_IT).unwrap().u;
        assert!((ua - up).amax() < 1e-9);
    }

    #[test]
    fn reactions_sum_to_zero() {
        let rve = RveProblem::with_inclusion(
            4,
            mat11(),
            MaterialParams::new(10.0, 10.0).unwrap(),
            0.5,
            BcMode::Periodic,
        )
        .unwrap();
        let sol = rve
            .solve(Tensor2::new(1.08, 0.03, 0.0, 0.95), TOL, MAX_IT)
            .unwrap();
        let total = sol
            .f_p
            .iter()
            .fold([0.0f64; 2], |acc, f| [acc[0] + f[0], acc[1] + f[1]]);
        let scale = sol
            .f_p
            .iter()
            .map(|f| f[0].abs().max(f[1].abs()))
            .fold(0.0f64, f64::max);
        assert!(total[0].abs() <= 1e-8 * scale.max(1e-30));
        assert!(total[1].abs() <= 1e-8 * scale.max(1e-30));
    }

    #[test]
    fn homogenized_pk_reproduces_constitutive_law() {
        // exactness on homogeneous media, both modes, 20 random F with
        // components within 0.2 of the identity
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for mode in [BcMode::Affine, BcMode::Periodic] {
            let rve = RveProblem::homogeneous(3, mat11(), mode).unwrap();
            for _ in 0..20 {
                let f_m = loop {
                    let f = Tensor2::new(
                        1.0 + rng.gen_range(-0.2..0.2),
                        rng.gen_range(-0.2..0.2),
                        rng.gen_range(-0.2..0.2),
                        1.0 + rng.gen_range(-0.2..0.2),
                    );
                    if f.det() > 0.5 {
                        break f;
                    }
                };
                let sol = rve.solve(f_m, TOL, MAX_IT).unwrap();
                let p = homogenized_pk(&sol, &rve);
                let exact = neo_hookean_pk(f_m, &mat11()).unwrap();
                let rel = p.sub(&exact).norm() / exact.norm().max(1e-12);
                assert!(rel < 1e-6, "mode {mode:?}: rel err {rel}");
            }
        }
    }

    #[test]
    fn origin_shift_leaves_homogenized_pk_unchanged() {
        // at equilibrium the reactions sum to ~0, so shifting all boundary
        // coordinates by a constant changes P_M only at solver-tolerance level
        let rve = RveProblem::homogeneous(3, mat11(), BcMode::Affine).unwrap();
        let f_m = Tensor2::diag(1.1, 1.0);
        let sol = rve.solve(f_m, TOL, MAX_IT).unwrap();
        let p = homogenized_pk(&sol, &rve);
        let shift = [2.3, -1.7];
        let mut p_shifted = Tensor2::ZERO;
        for (&n, f) in rve.mesh().boundary_nodes().iter().zip(&sol.f_p) {
            let x = rve.mesh().node(n);
            p_shifted = p_shifted.add(&Tensor2::dyad(*f, [x[0] + shift[0], x[1] + shift[1]]));
        }
        p_shifted = p_shifted.scale(1.0 / rve.v0());
        assert!(p.sub(&p_shifted).max_abs() < 1e-8);
    }

    #[test]
    fn single_element_tangent_matches_material_tangent_at_identity() {
        let rve = RveProblem::homogeneous(1, mat11(), BcMode::Affine).unwrap();
        let sol = rve.solve(Tensor2::IDENTITY, TOL, MAX_IT).unwrap();
        let cs = rve.condensed_stiffness(&sol.u).unwrap();
        let c = homogenized_tangent(&cs, rve.v0(), TangentFormula::Derived);
        let fd = material_tangent_fd(&mat11(), Tensor2::IDENTITY, 1e-6).unwrap();
        let rel = c.sub(&fd).max_abs() / fd.max_abs();
        assert!(rel < 1e-4, "rel err {rel}");
    }

    #[test]
    fn condensed_stiffness_is_symmetric() {
        let rve = RveProblem::with_inclusion(
            4,
            mat11(),
            MaterialParams::new(10.0, 10.0).unwrap(),
            0.5,
            BcMode::Affine,
        )
        .unwrap();
        let sol = rve
            .solve(Tensor2::new(1.06, 0.02, 0.0, 0.97), TOL, MAX_IT)
            .unwrap();
        let cs = rve.condensed_stiffness(&sol.u).unwrap();
        let asym = (&cs.k - cs.k.transpose()).amax() / cs.k.amax();
        assert!(asym < 1e-10, "condensed stiffness asymmetry {asym}");
    }

    #[test]
    fn tangent_scales_inversely_with_v0() {
        let rve = RveProblem::homogeneous(2, mat11(), BcMode::Affine).unwrap();
        let sol = rve.solve(Tensor2::IDENTITY, TOL, MAX_IT).unwrap();
        let cs = rve.condensed_stiffness(&sol.u).unwrap();
        let c1 = homogenized_tangent(&cs, 1.0, TangentFormula::Derived);
        let c2 = homogenized_tangent(&cs, 2.0, TangentFormula::Derived);
        assert!(c1.scale(0.5).sub(&c2).max_abs() < 1e-14);
    }

    #[test]
    fn tangent_formulas_differ_off_center() {
        // the printed row-index-twice variant is not the derivative; on a
        // generic state the two disagree
        let rve = RveProblem::homogeneous(2, mat11(), BcMode::Affine).unwrap();
        let sol = rve
            .solve(Tensor2::new(1.07, 0.04, 0.0, 0.96), TOL, MAX_IT)
            .unwrap();
        let cs = rve.condensed_stiffness(&sol.u).unwrap();
        let derived = homogenized_tangent(&cs, rve.v0(), TangentFormula::Derived);
        let printed = homogenized_tangent(&cs, rve.v0(), TangentFormula::RowIndexTwice);
        assert!(derived.sub(&printed).max_abs() > 1e-3);
    }

    #[test]
    fn condensed_tangent_matches_fd_of_homogenized_pk() {
        // consistency of the condensed-stiffness tangent with central
        // differences of F_M -> P_M over full solves, affine mode
        let rve = RveProblem::homogeneous(2, mat11(), BcMode::Affine).unwrap();
        let f0 = Tensor2::diag(1.05, 1.0);
        let sol = rve.solve(f0, 1e-12, MAX_IT).unwrap();
        let cs = rve.condensed_stiffness(&sol.u).unwrap();
        let c = homogenized_tangent(&cs, rve.v0(), TangentFormula::Derived);
        let h = 1e-6;
        for k in 0..2 {
            for l in 0..2 {
                let mut fp = f0;
                fp.set(k, l, f0.get(k, l) + h);
                let mut fm = f0;
                fm.set(k, l, f0.get(k, l) - h);
                let pp = homogenized_pk(&rve.solve(fp, 1e-12, MAX_IT).unwrap(), &rve);
                let pm = homogenized_pk(&rve.solve(fm, 1e-12, MAX_IT).unwrap(), &rve);
                for i in 0..2 {
                    for j in 0..2 {
                        let fd = (pp.get(i, j) - pm.get(i, j)) / (2.0 * h);
                        let an = c.get(i, j, k, l);
                        assert!(
                            (fd - an).abs() <= 1e-3 * c.max_abs(),
                            "C[{i}{j}{k}{l}]: fd {fd} vs analytic {an}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn two_phase_periodic_softer_than_affine() {
        // periodic constraints are weaker, so the work of the uniaxial
        // stretch response cannot exceed the affine one
        let inclusion = MaterialParams::new(10.0, 10.0).unwrap();
        let delta = Tensor2::diag(0.1, 0.0);
        let f_m = Tensor2::IDENTITY.add(&delta);
        let affine =
            RveProblem::with_inclusion(4, mat11(), inclusion, 0.5, BcMode::Affine).unwrap();
        let periodic =
            RveProblem::with_inclusion(4, mat11(), inclusion, 0.5, BcMode::Periodic).unwrap();
        let pa = homogenized_pk(&affine.solve(f_m, TOL, MAX_IT).unwrap(), &affine);
        let pp = homogenized_pk(&periodic.solve(f_m, TOL, MAX_IT).unwrap(), &periodic);
        let work_affine = pa.contract(&delta);
        let work_periodic = pp.contract(&delta);
        assert!(
            work_periodic <= work_affine + 1e-12,
            "periodic {work_periodic} vs affine {work_affine}"
        );
    }

    #[test]
    fn nonpositive_materials_in_file_rejected() {
        let mesh = Mesh::structured(1, 1, 1.0, 1.0).unwrap();
        let bad = MaterialParams {
            lambda: -1.0,
            mu: 1.0,
        };
        let err = RveProblem::new(mesh, bad, BcMode::Affine);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rve_file_round_trip_two_phase() {
        let rve = RveProblem::with_inclusion(
            4,
            mat11(),
            MaterialParams::new(10.0, 5.0).unwrap(),
            0.5,
            BcMode::Periodic,
        )
        .unwrap();
        let text = serde_json::to_string(&rve.to_file()).unwrap();
        let file: RveFile = serde_json::from_str(&text).unwrap();
        let back = RveProblem::from_file(file, None, BcMode::Periodic).unwrap();
        assert_eq!(rve.mesh(), back.mesh());
        assert_eq!(rve.materials(), back.materials());
    }
}
