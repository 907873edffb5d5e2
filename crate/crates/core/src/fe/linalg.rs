//! Dense LU with partial pivoting and static condensation.
//!
//! Meshes here are desk-scale (a few hundred dofs), so a dense direct
//! solver is the right tool; no sparse storage anywhere.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// LU factorization `P A = L U` with row partial pivoting.
pub struct LuFactors {
    lu: DMatrix<f64>,
    perm: Vec<usize>,
}

/// Factor a square matrix. Errors with [`Error::SingularSystem`] carrying
/// the pivot index at which elimination broke down.
pub fn lu_factor(mut a: DMatrix<f64>) -> Result<LuFactors> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "lu_factor needs a square matrix");
    let scale = a.amax().max(1.0);
    let tol = f64::EPSILON * scale * n.max(1) as f64;
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        // pivot search in column k
        let mut p = k;
        let mut best = a[(k, k)].abs();
        for r in (k + 1)..n {
            let v = a[(r, k)].abs();
            if v > best {
                best = v;
                p = r;
            }
        }
        if !(best > tol) || !best.is_finite() {
            return Err(Error::SingularSystem { pivot: k });
        }
        if p != k {
            a.swap_rows(p, k);
            perm.swap(p, k);
        }
        let pivot = a[(k, k)];
        for r in (k + 1)..n {
            let m = a[(r, k)] / pivot;
            a[(r, k)] = m;
            for c in (k + 1)..n {
                a[(r, c)] -= m * a[(k, c)];
            }
        }
    }
    Ok(LuFactors { lu: a, perm })
}

impl LuFactors {
    pub fn n(&self) -> usize {
        self.lu.nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        assert_eq!(b.len(), n, "rhs length mismatch");
        let mut x = DVector::zeros(n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        // forward substitution (unit lower)
        for i in 0..n {
            for j in 0..i {
                let lij = self.lu[(i, j)];
                x[i] -= lij * x[j];
            }
        }
        // back substitution
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let uij = self.lu[(i, j)];
                x[i] -= uij * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }

    /// Solve against every column of `b`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for c in 0..b.ncols() {
            let col = DVector::from_column_slice(b.column(c).as_slice());
            out.set_column(c, &self.solve(&col));
        }
        out
    }
}

/// Direct solve of `K x = rhs` by LU with partial pivoting.
pub fn solve_linear(k: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if k.nrows() != k.ncols() || rhs.len() != k.nrows() {
        return Err(Error::InvalidInput(format!(
            "solve_linear shape mismatch: K is {}x{}, rhs has length {}",
            k.nrows(),
            k.ncols(),
            rhs.len()
        )));
    }
    if k.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(lu_factor(k.clone())?.solve(rhs))
}

/// Static condensation: `K = K_pp − K_pf K_ff⁻¹ K_fp` for the dof
/// partition (`p` retained, `f` eliminated). `K_ff` is factored once and
/// back-solved against the columns of `K_fp`.
pub fn condense(k: &DMatrix<f64>, p: &[usize], f: &[usize]) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    assert_eq!(n, k.ncols(), "condense needs a square matrix");
    debug_assert_eq!(p.len() + f.len(), n, "partition must cover all dofs");
    let np = p.len();
    let nf = f.len();
    let k_pp = DMatrix::from_fn(np, np, |i, j| k[(p[i], p[j])]);
    if nf == 0 {
        return Ok(k_pp);
    }
    let k_pf = DMatrix::from_fn(np, nf, |i, j| k[(p[i], f[j])]);
    let k_fp = DMatrix::from_fn(nf, np, |i, j| k[(f[i], p[j])]);
    let k_ff = DMatrix::from_fn(nf, nf, |i, j| k[(f[i], f[j])]);
    let factors = lu_factor(k_ff)?;
    let x = factors.solve_matrix(&k_fp); // K_ff^{-1} K_fp
    Ok(k_pp - k_pf * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve() {
        let k = DMatrix::identity(3, 3);
        let rhs = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(solve_linear(&k, &rhs).unwrap(), rhs);
    }

    #[test]
    fn diagonal_solve() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let rhs = DVector::from_vec(vec![2.0, 8.0]);
        let x = solve_linear(&k, &rhs).unwrap();
        assert_eq!(x, DVector::from_vec(vec![1.0, 2.0]));
    }

    #[test]
    fn random_spd_20x20_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        // SPD via A Aᵀ + n I
        let k = &a * a.transpose() + DMatrix::identity(n, n) * n as f64;
        let x_true = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let rhs = &k * &x_true;
        let x = solve_linear(&k, &rhs).unwrap();
        let rel = (&x - &x_true).norm() / x_true.norm();
        assert!(rel < 1e-10, "relative error {rel}");
        let res = (&k * &x - &rhs).norm() / rhs.norm();
        assert!(res < 1e-10, "residual {res}");
    }

    #[test]
    fn singular_reports_pivot() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        match solve_linear(&k, &DVector::zeros(2)) {
            Err(Error::SingularSystem { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected SingularSystem, got {other:?}"),
        }
    }

    #[test]
    fn condense_no_interior_is_identity_restriction() {
        let k = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let out = condense(&k, &[0, 1], &[]).unwrap();
        assert_eq!(out, k);
    }

    #[test]
    fn condense_two_spring_chain() {
        // series of two unit springs condenses to stiffness 1/2
        let k = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        let out = condense(&k, &[0, 2], &[1]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((out - expected).amax() < 1e-14);
    }

    #[test]
    fn condensed_matvec_matches_full_system_reactions() {
        // boundary response equivalence on a random symmetric system:
        // for a prescribed du_p with interior relaxed, K_cond du_p equals
        // the boundary rows of K du
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let k = &a * a.transpose() + DMatrix::identity(n, n) * (2 * n) as f64;
        let p: Vec<usize> = vec![0, 3, 7, 11];
        let f: Vec<usize> = (0..n).filter(|i| !p.contains(i)).collect();
        let kc = condense(&k, &p, &f).unwrap();
        for _ in 0..10 {
            let du_p = DVector::from_fn(p.len(), |_, _| rng.gen_range(-1.0..1.0));
            // interior solve: K_ff u_f = -K_fp du_p
            let k_ff = DMatrix::from_fn(f.len(), f.len(), |i, j| k[(f[i], f[j])]);
            let k_fp = DMatrix::from_fn(f.len(), p.len(), |i, j| k[(f[i], p[j])]);
            let u_f = lu_factor(k_ff).unwrap().solve(&(-&k_fp * &du_p));
            let mut u = DVector::zeros(n);
            for (i, &d) in p.iter().enumerate() {
                u[d] = du_p[i];
            }
            for (i, &d) in f.iter().enumerate() {
                u[d] = u_f[i];
            }
            let full_forces = &k * &u;
            let df_p = &kc * &du_p;
            for (i, &d) in p.iter().enumerate() {
                assert!(
                    (full_forces[d] - df_p[i]).abs() < 1e-10,
                    "boundary force mismatch at dof {d}"
                );
            }
        }
    }
}
