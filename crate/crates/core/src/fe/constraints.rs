//! Dirichlet and tie constraints, applied by elimination.
//!
//! A tie `u_follower = u_leader + offset` substitutes the follower dof by
//! its leader, so the reduced system stays symmetric and static
//! condensation downstream needs no multiplier bookkeeping.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One prescribed displacement component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dirichlet {
    pub node: usize,
    /// 0 = X1 direction, 1 = X2 direction.
    pub dof: usize,
    pub value: f64,
}

/// One tied pair: `u[follower] = u[leader] + offset` on the given dof.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tie {
    pub follower: usize,
    pub leader: usize,
    pub dof: usize,
    pub offset: f64,
}

/// Node-level constraint collection for a 2-dof-per-node mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintSet {
    pub dirichlet: Vec<Dirichlet>,
    pub ties: Vec<Tie>,
}

impl ConstraintSet {
    pub fn fix(&mut self, node: usize, dof: usize, value: f64) {
        self.dirichlet.push(Dirichlet { node, dof, value });
    }

    pub fn tie(&mut self, follower: usize, leader: usize, dof: usize, offset: f64) {
        self.ties.push(Tie {
            follower,
            leader,
            dof,
            offset,
        });
    }

    pub fn merged(&self, other: &ConstraintSet) -> ConstraintSet {
        let mut out = self.clone();
        out.dirichlet.extend_from_slice(&other.dirichlet);
        out.ties.extend_from_slice(&other.ties);
        out
    }

    /// Lower to flat dof indices (`2*node + dof`) for an `n_nodes` mesh.
    pub fn flatten(&self, n_nodes: usize) -> Result<FlatConstraints> {
        let mut flat = FlatConstraints::default();
        for d in &self.dirichlet {
            if d.node >= n_nodes || d.dof >= 2 {
                return Err(Error::ConstraintError(format!(
                    "dirichlet target (node {}, dof {}) out of range",
                    d.node, d.dof
                )));
            }
            flat.fixed.push((2 * d.node + d.dof, d.value));
        }
        for t in &self.ties {
            if t.follower >= n_nodes || t.leader >= n_nodes || t.dof >= 2 {
                return Err(Error::ConstraintError(format!(
                    "tie (follower {}, leader {}, dof {}) out of range",
                    t.follower, t.leader, t.dof
                )));
            }
            flat.ties
                .push((2 * t.follower + t.dof, 2 * t.leader + t.dof, t.offset));
        }
        Ok(flat)
    }
}

/// Constraints addressed by flat dof index; independent of any mesh layout.
#[derive(Debug, Clone, Default)]
pub struct FlatConstraints {
    /// (dof, prescribed value)
    pub fixed: Vec<(usize, f64)>,
    /// (follower dof, leader dof, offset)
    pub ties: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DofKind {
    Free { reduced: usize },
    Fixed { value: f64 },
    Tied { leader: usize, offset: f64 },
}

/// Resolved elimination map between the full system and the reduced one.
#[derive(Debug, Clone)]
pub struct ConstraintMap {
    kinds: Vec<DofKind>,
    n_full: usize,
    n_reduced: usize,
}

impl ConstraintMap {
    pub fn build(n_dofs: usize, constraints: &FlatConstraints) -> Result<ConstraintMap> {
        #[derive(Clone, Copy)]
        enum Raw {
            Free,
            Fixed(f64),
            Tied(usize, f64),
        }
        let mut raw = vec![Raw::Free; n_dofs];
        for &(dof, value) in &constraints.fixed {
            if dof >= n_dofs {
                return Err(Error::ConstraintError(format!("dof {dof} out of range")));
            }
            match raw[dof] {
                Raw::Free => raw[dof] = Raw::Fixed(value),
                _ => {
                    return Err(Error::ConstraintError(format!(
                        "dof {dof} constrained more than once"
                    )))
                }
            }
        }
        let mut is_follower = vec![false; n_dofs];
        for &(follower, leader, offset) in &constraints.ties {
            if follower >= n_dofs || leader >= n_dofs {
                return Err(Error::ConstraintError("tie dof out of range".into()));
            }
            if follower == leader {
                return Err(Error::ConstraintError(format!(
                    "dof {follower} tied to itself"
                )));
            }
            match raw[follower] {
                Raw::Free => raw[follower] = Raw::Tied(leader, offset),
                _ => {
                    return Err(Error::ConstraintError(format!(
                        "dof {follower} constrained more than once"
                    )))
                }
            }
            is_follower[follower] = true;
        }
        // acyclicity: a follower must never serve as a leader
        for &(_, leader, _) in &constraints.ties {
            if is_follower[leader] {
                return Err(Error::ConstraintError(format!(
                    "dof {leader} is both a tie follower and a leader"
                )));
            }
        }
        // resolve: followers of fixed leaders become fixed
        let mut kinds = Vec::with_capacity(n_dofs);
        let mut n_reduced = 0;
        for dof in 0..n_dofs {
            let kind = match raw[dof] {
                Raw::Free => {
                    let k = DofKind::Free { reduced: n_reduced };
                    n_reduced += 1;
                    k
                }
                Raw::Fixed(value) => DofKind::Fixed { value },
                Raw::Tied(leader, offset) => match raw[leader] {
                    Raw::Fixed(v) => DofKind::Fixed { value: v + offset },
                    _ => DofKind::Tied { leader, offset },
                },
            };
            kinds.push(kind);
        }
        Ok(ConstraintMap {
            kinds,
            n_full: n_dofs,
            n_reduced,
        })
    }

    pub fn n_full(&self) -> usize {
        self.n_full
    }

    pub fn n_reduced(&self) -> usize {
        self.n_reduced
    }

    fn reduced_index(&self, dof: usize) -> Option<usize> {
        match self.kinds[dof] {
            DofKind::Free { reduced } => Some(reduced),
            _ => None,
        }
    }

    /// Reduced index that the dof's value follows (itself if free, its
    /// leader if tied, none if fixed).
    fn reduced_source(&self, dof: usize) -> Option<usize> {
        match self.kinds[dof] {
            DofKind::Free { reduced } => Some(reduced),
            DofKind::Tied { leader, .. } => self.reduced_index(leader),
            DofKind::Fixed { .. } => None,
        }
    }

    /// Overwrite constrained entries of `u` with their prescribed values
    /// (fixed values, and followers from their leaders plus offsets).
    pub fn enforce(&self, u: &mut DVector<f64>) {
        for dof in 0..self.n_full {
            if let DofKind::Fixed { value } = self.kinds[dof] {
                u[dof] = value;
            }
        }
        for dof in 0..self.n_full {
            if let DofKind::Tied { leader, offset } = self.kinds[dof] {
                u[dof] = u[leader] + offset;
            }
        }
    }

    /// Expand a reduced correction to the full space with homogeneous
    /// constraint values (fixed dofs stay put, followers copy leaders).
    pub fn expand_correction(&self, delta: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.n_full);
        for dof in 0..self.n_full {
            if let Some(r) = self.reduced_source(dof) {
                full[dof] = delta[r];
            }
        }
        full
    }

    /// Full solution vector from reduced values and inhomogeneous
    /// constraint data (`u = T u_r + g`).
    pub fn expand(&self, reduced: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.n_full);
        for dof in 0..self.n_full {
            match self.kinds[dof] {
                DofKind::Free { reduced: r } => full[dof] = reduced[r],
                DofKind::Fixed { value } => full[dof] = value,
                DofKind::Tied { .. } => {}
            }
        }
        for dof in 0..self.n_full {
            if let DofKind::Tied { leader, offset } = self.kinds[dof] {
                full[dof] = full[leader] + offset;
            }
        }
        full
    }

    /// `Tᵀ r`: accumulate full-space rows onto their reduced sources.
    pub fn reduce_vector(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_reduced);
        for dof in 0..self.n_full {
            if let Some(rr) = self.reduced_source(dof) {
                out[rr] += r[dof];
            }
        }
        out
    }

    /// `Tᵀ K T`.
    pub fn reduce_matrix(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n_reduced, self.n_reduced);
        for row in 0..self.n_full {
            let Some(rr) = self.reduced_source(row) else {
                continue;
            };
            for col in 0..self.n_full {
                if let Some(cc) = self.reduced_source(col) {
                    out[(rr, cc)] += k[(row, col)];
                }
            }
        }
        out
    }

    /// The inhomogeneous part `g` of `u = T u_r + g`.
    pub fn inhomogeneous_part(&self) -> DVector<f64> {
        let mut g = DVector::zeros(self.n_full);
        for dof in 0..self.n_full {
            match self.kinds[dof] {
                DofKind::Fixed { value } => g[dof] = value,
                DofKind::Tied { offset, .. } => g[dof] = offset,
                DofKind::Free { .. } => {}
            }
        }
        g
    }

    /// Dofs that carry a prescribed value (fixed only).
    pub fn fixed_dofs(&self) -> Vec<usize> {
        (0..self.n_full)
            .filter(|&d| matches!(self.kinds[d], DofKind::Fixed { .. }))
            .collect()
    }
}

/// Reduced linear system `K_r u_r = f_r` together with the map needed to
/// recover the full solution and the constraint reactions.
pub struct ReducedSystem {
    pub k: DMatrix<f64>,
    pub f: DVector<f64>,
    pub map: ConstraintMap,
}

/// Eliminate constraints from a linear system `K u = f`.
///
/// With `u = T u_r + g`, the reduced system is
/// `Tᵀ K T u_r = Tᵀ (f − K g)`.
pub fn apply_constraints(
    k: &DMatrix<f64>,
    f: &DVector<f64>,
    constraints: &FlatConstraints,
) -> Result<ReducedSystem> {
    let n = k.nrows();
    if k.ncols() != n || f.len() != n {
        return Err(Error::InvalidInput(format!(
            "system shape mismatch: K is {}x{}, f has length {}",
            k.nrows(),
            k.ncols(),
            f.len()
        )));
    }
    let map = ConstraintMap::build(n, constraints)?;
    let g = map.inhomogeneous_part();
    let rhs_full = f - k * g;
    Ok(ReducedSystem {
        k: map.reduce_matrix(k),
        f: map.reduce_vector(&rhs_full),
        map,
    })
}

impl ReducedSystem {
    /// Recover the full vector and reactions `r = K u − f` given the full
    /// original system and the reduced solution.
    pub fn recover(
        &self,
        k_full: &DMatrix<f64>,
        f_full: &DVector<f64>,
        u_reduced: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let u = self.map.expand(u_reduced);
        let reactions = k_full * &u - f_full;
        (u, reactions)
    }
}
