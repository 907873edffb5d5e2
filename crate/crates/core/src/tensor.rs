//! Small dense tensor algebra for 2D finite-strain kinematics and the
//! compressible neo-Hookean constitutive law.
//!
//! Everything here is plane strain: deformation gradients, stresses and
//! tangent moduli are 2x2 (respectively 2x2x2x2) and the out-of-plane
//! direction does not contribute to the volume ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Second-order tensor in 2D. Houses deformation gradients, Cauchy and
/// first Piola-Kirchhoff stresses and the left Cauchy-Green tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Tensor2 {
    pub const ZERO: Tensor2 = Tensor2::new(0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Tensor2 = Tensor2::new(1.0, 0.0, 0.0, 1.0);

    pub const fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Tensor2 { a11, a12, a21, a22 }
    }

    pub const fn diag(a11: f64, a22: f64) -> Self {
        Tensor2::new(a11, 0.0, 0.0, a22)
    }

    /// Rotation by angle `theta` (radians), counter-clockwise.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Tensor2::new(c, -s, s, c)
    }

    /// Dyadic product `u ⊗ v`.
    pub fn dyad(u: [f64; 2], v: [f64; 2]) -> Self {
        Tensor2::new(u[0] * v[0], u[0] * v[1], u[1] * v[0], u[1] * v[1])
    }

    /// Row-major component access with 0-based indices.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => self.a11,
            (0, 1) => self.a12,
            (1, 0) => self.a21,
            (1, 1) => self.a22,
            _ => panic!("Tensor2 index out of range: ({i}, {j})"),
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        match (i, j) {
            (0, 0) => self.a11 = value,
            (0, 1) => self.a12 = value,
            (1, 0) => self.a21 = value,
            (1, 1) => self.a22 = value,
            _ => panic!("Tensor2 index out of range: ({i}, {j})"),
        }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn transpose(&self) -> Tensor2 {
        Tensor2::new(self.a11, self.a21, self.a12, self.a22)
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// Inverse; errors with [`Error::InvalidDeformation`] when the
    /// determinant is not positive (the only way a singular 2x2 arises here).
    pub fn inverse(&self) -> Result<Tensor2> {
        let det = self.det();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::InvalidDeformation { det });
        }
        Ok(Tensor2::new(
            self.a22 / det,
            -self.a12 / det,
            -self.a21 / det,
            self.a11 / det,
        ))
    }

    pub fn matmul(&self, rhs: &Tensor2) -> Tensor2 {
        Tensor2::new(
            self.a11 * rhs.a11 + self.a12 * rhs.a21,
            self.a11 * rhs.a12 + self.a12 * rhs.a22,
            self.a21 * rhs.a11 + self.a22 * rhs.a21,
            self.a21 * rhs.a12 + self.a22 * rhs.a22,
        )
    }

    pub fn matvec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a21 * v[0] + self.a22 * v[1],
        ]
    }

    pub fn scale(&self, s: f64) -> Tensor2 {
        Tensor2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    pub fn add(&self, rhs: &Tensor2) -> Tensor2 {
        Tensor2::new(
            self.a11 + rhs.a11,
            self.a12 + rhs.a12,
            self.a21 + rhs.a21,
            self.a22 + rhs.a22,
        )
    }

    pub fn sub(&self, rhs: &Tensor2) -> Tensor2 {
        Tensor2::new(
            self.a11 - rhs.a11,
            self.a12 - rhs.a12,
            self.a21 - rhs.a21,
            self.a22 - rhs.a22,
        )
    }

    /// Double contraction `A : B`.
    pub fn contract(&self, rhs: &Tensor2) -> f64 {
        self.a11 * rhs.a11 + self.a12 * rhs.a12 + self.a21 * rhs.a21 + self.a22 * rhs.a22
    }

    pub fn norm(&self) -> f64 {
        self.contract(self).sqrt()
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.a11
            .abs()
            .max(self.a12.abs())
            .max(self.a21.abs())
            .max(self.a22.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.a11.is_finite() && self.a12.is_finite() && self.a21.is_finite() && self.a22.is_finite()
    }

    /// Row-major flattening `[a11, a12, a21, a22]`.
    pub fn to_flat(&self) -> [f64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }

    pub fn from_flat(c: [f64; 4]) -> Tensor2 {
        Tensor2::new(c[0], c[1], c[2], c[3])
    }
}

impl std::ops::Add for Tensor2 {
    type Output = Tensor2;
    fn add(self, rhs: Tensor2) -> Tensor2 {
        Tensor2::add(&self, &rhs)
    }
}

impl std::ops::Sub for Tensor2 {
    type Output = Tensor2;
    fn sub(self, rhs: Tensor2) -> Tensor2 {
        Tensor2::sub(&self, &rhs)
    }
}

impl std::ops::Mul<Tensor2> for Tensor2 {
    type Output = Tensor2;
    fn mul(self, rhs: Tensor2) -> Tensor2 {
        self.matmul(&rhs)
    }
}

impl std::ops::Mul<f64> for Tensor2 {
    type Output = Tensor2;
    fn mul(self, s: f64) -> Tensor2 {
        self.scale(s)
    }
}

/// Fourth-order tensor in 2D, `c[i][j][k][l]` with 0-based indices.
/// Houses material tangents `dP/dF`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor4 {
    pub c: [[[[f64; 2]; 2]; 2]; 2],
}

impl Tensor4 {
    pub const ZERO: Tensor4 = Tensor4 {
        c: [[[[0.0; 2]; 2]; 2]; 2],
    };

    pub fn from_fn(mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Tensor4 {
        let mut t = Tensor4::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        t.c[i][j][k][l] = f(i, j, k, l);
                    }
                }
            }
        }
        t
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[i][j][k][l]
    }

    /// Contraction with a second-order tensor over the trailing index pair:
    /// `(C : D)_{ij} = sum_kl C_{ijkl} D_{kl}`.
    pub fn contract2(&self, d: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        s += self.c[i][j][k][l] * d.get(k, l);
                    }
                }
                out.set(i, j, s);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Tensor4 {
        Tensor4::from_fn(|i, j, k, l| self.c[i][j][k][l] * s)
    }

    pub fn sub(&self, rhs: &Tensor4) -> Tensor4 {
        Tensor4::from_fn(|i, j, k, l| self.c[i][j][k][l] - rhs.c[i][j][k][l])
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        m = m.max(self.c[i][j][k][l].abs());
                    }
                }
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.c
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .all(|v| v.is_finite())
    }
}

/// Lamé parameters of the neo-Hookean law, plane strain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub lambda: f64,
    pub mu: f64,
}

impl MaterialParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(mu > 0.0) {
            return Err(Error::InvalidInput(format!(
                "material parameters must be positive: lambda = {lambda}, mu = {mu}"
            )));
        }
        Ok(MaterialParams { lambda, mu })
    }
}

/// Deformation state derived from a deformation gradient: the volume ratio
/// `J = det F` and the left Cauchy-Green tensor `b = F Fᵀ`.
#[derive(Debug, Clone, Copy)]
pub struct KinematicState {
    pub f: Tensor2,
    pub j: f64,
    pub b: Tensor2,
}

/// Build the kinematic state for a deformation gradient.
///
/// Errors with [`Error::InvalidDeformation`] when `det F <= 0`.
pub fn kinematics(f: Tensor2) -> Result<KinematicState> {
    let j = f.det();
    if !(j > 0.0) || !j.is_finite() {
        return Err(Error::InvalidDeformation { det: j });
    }
    let b12 = f.a11 * f.a21 + f.a12 * f.a22;
    let b = Tensor2::new(
        f.a11 * f.a11 + f.a12 * f.a12,
        b12,
        b12, // b is symmetric by construction; store the identical value
        f.a21 * f.a21 + f.a22 * f.a22,
    );
    Ok(KinematicState { f, j, b })
}

/// Cauchy stress of the compressible neo-Hookean law,
/// `σ = ½ (λ/J)(J² − 1) I + (μ/J)(b − I)`.
pub fn cauchy_neo_hookean(state: &KinematicState, mat: &MaterialParams) -> Tensor2 {
    let vol = 0.5 * mat.lambda / state.j * (state.j * state.j - 1.0);
    let dev = mat.mu / state.j;
    Tensor2::new(
        vol + dev * (state.b.a11 - 1.0),
        dev * state.b.a12,
        dev * state.b.a21,
        vol + dev * (state.b.a22 - 1.0),
    )
}

/// Pull a Cauchy stress back to the first Piola-Kirchhoff stress,
/// `P = J σ F⁻ᵀ` (Nanson's relation applied to `df = σ n dA = P n₀ dA₀`).
pub fn first_pk_from_cauchy(sigma: &Tensor2, f: &Tensor2) -> Result<Tensor2> {
    let j = f.det();
    if !(j > 0.0) || !j.is_finite() {
        return Err(Error::InvalidDeformation { det: j });
    }
    let f_inv_t = f.inverse()?.transpose();
    Ok(sigma.matmul(&f_inv_t).scale(j))
}

/// First Piola-Kirchhoff stress of the neo-Hookean law, via the Cauchy
/// stress and the pull-back. This is the constitutive map used everywhere
/// a stress is assembled.
pub fn neo_hookean_pk(f: Tensor2, mat: &MaterialParams) -> Result<Tensor2> {
    let state = kinematics(f)?;
    let sigma = cauchy_neo_hookean(&state, mat);
    first_pk_from_cauchy(&sigma, &state.f)
}

/// Analytic material tangent `A_{iJkL} = ∂P_iJ/∂F_kL` of the neo-Hookean law.
///
/// Obtained by differentiating `P = μ F + [½λ(J²−1) − μ] F⁻ᵀ`:
/// `A = μ δik δJL + λ J² G_iJ G_kL − c G_iL G_kJ` with `G = F⁻ᵀ` and
/// `c = ½λ(J²−1) − μ`.
pub fn material_tangent(mat: &MaterialParams, f: Tensor2) -> Result<Tensor4> {
    let j = f.det();
    if !(j > 0.0) || !j.is_finite() {
        return Err(Error::InvalidDeformation { det: j });
    }
    let g = f.inverse()?.transpose();
    let c = 0.5 * mat.lambda * (j * j - 1.0) - mat.mu;
    let lj2 = mat.lambda * j * j;
    Ok(Tensor4::from_fn(|i, jj, k, l| {
        let kron = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        mat.mu * kron(i, k) * kron(jj, l) + lj2 * g.get(i, jj) * g.get(k, l)
            - c * g.get(i, l) * g.get(k, jj)
    }))
}

/// Reference tangent `∂P/∂F` by central finite differences of the composed
/// map `F ↦ P`. Used to cross-check [`material_tangent`] and surrogate
/// tangents.
///
/// The step is `h`, applied to one component at a time; both perturbed
/// states must remain orientation-preserving.
pub fn material_tangent_fd(mat: &MaterialParams, f: Tensor2, h: f64) -> Result<Tensor4> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "FD step must be positive, got {h}"
        )));
    }
    let mut t = Tensor4::ZERO;
    for k in 0..2 {
        for l in 0..2 {
            let mut fp = f;
            fp.set(k, l, f.get(k, l) + h);
            let mut fm = f;
            fm.set(k, l, f.get(k, l) - h);
            let pp = neo_hookean_pk(fp, mat)?;
            let pm = neo_hookean_pk(fm, mat)?;
            for i in 0..2 {
                for j in 0..2 {
                    t.c[i][j][k][l] = (pp.get(i, j) - pm.get(i, j)) / (2.0 * h);
                }
            }
        }
    }
    Ok(t)
}

/// Default relative finite-difference step: `1e-6 · max(1, ‖F‖)`.
pub fn default_fd_step(f: &Tensor2) -> f64 {
    1e-6 * f.norm().max(1.0)
}
