//! The macroscale solver: load increments, Newton iteration with
//! Gauss-point constitutive response supplied either by on-the-fly cell
//! solves (direct mode) or by the trained surrogate, plus the
//! direct-vs-surrogate comparison harness and the run configuration format.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::assembly::{
    assemble_forces_from_stresses, assemble_tangent_from_moduli, gp_deformation_gradients,
};
use crate::fe::constraints::{ConstraintMap, ConstraintSet};
use crate::fe::linalg::solve_linear;
use crate::fe::mesh::Mesh;
use crate::fe::newton::NewtonReport;
use crate::fe::quadrature::QuadratureRule;
use crate::net::mlp::{default_surrogate_step, surrogate_pk, surrogate_tangent, MlpNetwork};
use crate::rve::{homogenized_pk, homogenized_tangent, RveProblem, TangentFormula};
use crate::tensor::{Tensor2, Tensor4};

/// Kind of macroscale loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadKind {
    #[serde(rename = "displacement")]
    PrescribedDisplacement,
    #[serde(rename = "force")]
    NodalForce,
}

/// Loading program: target values reached in uniform fractions over
/// `n_increments` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSchedule {
    pub kind: LoadKind,
    /// (node, dof, final value)
    pub targets: Vec<(usize, usize, f64)>,
    pub n_increments: usize,
}

/// The macroscale boundary value problem.
#[derive(Debug, Clone)]
pub struct MacroProblem {
    pub mesh: Mesh,
    pub quad: QuadratureRule,
    pub load: LoadSchedule,
    pub fixed_bcs: ConstraintSet,
}

/// When the homogenized tangent is refreshed.
///
/// `Initial` computes it once at `F = I` before the load loop and keeps it
/// for every iteration (the literal algorithm); `PerIteration` recomputes
/// it at the current state, restoring Newton's usual convergence rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentPolicy {
    Initial,
    PerIteration,
}

/// Where the Gauss-point constitutive response comes from.
#[derive(Debug, Clone)]
pub enum ProviderMode {
    Direct(RveProblem),
    Surrogate(MlpNetwork),
}

/// Constitutive response provider for the macroscale Gauss points.
#[derive(Debug, Clone)]
pub struct ConstitutiveProvider {
    pub mode: ProviderMode,
    pub tangent_policy: TangentPolicy,
    /// Newton settings for the nested cell solves (direct mode).
    pub rve_tol: f64,
    pub rve_max_iter: usize,
}

impl ConstitutiveProvider {
    pub fn direct(rve: RveProblem, tangent_policy: TangentPolicy) -> Self {
        ConstitutiveProvider {
            mode: ProviderMode::Direct(rve),
            tangent_policy,
            rve_tol: 1e-10,
            rve_max_iter: 30,
        }
    }

    pub fn surrogate(net: MlpNetwork, tangent_policy: TangentPolicy) -> Self {
        ConstitutiveProvider {
            mode: ProviderMode::Surrogate(net),
            tangent_policy,
            rve_tol: 1e-10,
            rve_max_iter: 30,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self.mode {
            ProviderMode::Direct(_) => "direct",
            ProviderMode::Surrogate(_) => "surrogate",
        }
    }
}

/// One Gauss-point response.
#[derive(Debug, Clone, Copy)]
pub struct GpResponse {
    pub p: Tensor2,
    pub c: Option<Tensor4>,
    /// Surrogate mode: the input left the training box.
    pub extrapolated: bool,
}

/// Constitutive response at one Gauss point: homogenized stress and, when
/// requested, the homogenized tangent.
///
/// Direct mode solves the cell problem and condenses its stiffness at the
/// converged state. Surrogate mode evaluates the network and, for the
/// tangent, central finite differences of it; the response is flagged when
/// any component of `F_M` deviates from the identity by more than the
/// training amplitude.
pub fn gauss_point_response(
    provider: &ConstitutiveProvider,
    f_m: Tensor2,
    want_tangent: bool,
) -> Result<GpResponse> {
    let det = f_m.det();
    if !(det > 0.0) {
        return Err(Error::InvalidDeformation { det });
    }
    match &provider.mode {
        ProviderMode::Direct(rve) => {
            let sol = rve.solve(f_m, provider.rve_tol, provider.rve_max_iter)?;
            let p = homogenized_pk(&sol, rve);
            let c = if want_tangent {
                let cs = rve.condensed_stiffness(&sol.u)?;
                Some(homogenized_tangent(&cs, rve.v0(), TangentFormula::Derived))
            } else {
                None
            };
            Ok(GpResponse {
                p,
                c,
                extrapolated: false,
            })
        }
        ProviderMode::Surrogate(net) => {
            let p = surrogate_pk(net, f_m)?;
            let c = if want_tangent {
                Some(surrogate_tangent(net, f_m, default_surrogate_step(&f_m))?)
            } else {
                None
            };
            let extrapolated = match net.meta.amplitude {
                Some(eps) => f_m.sub(&Tensor2::IDENTITY).max_abs() > eps + 1e-12,
                None => false,
            };
            Ok(GpResponse { p, c, extrapolated })
        }
    }
}

/// Record of one load increment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementRecord {
    pub load_factor: f64,
    /// Full nodal displacement vector, 2 entries per node.
    pub u: Vec<f64>,
    /// Per-Gauss-point deformation gradients, element-major, row-major
    /// components.
    pub gp_f: Vec<[f64; 4]>,
    /// Per-Gauss-point homogenized stresses.
    pub gp_p: Vec<[f64; 4]>,
    pub newton: NewtonReport,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub offline_seconds: f64,
    pub online_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub model_hash: String,
}

/// Everything a run produces. The payload (everything but `timing`) is a
/// deterministic function of the inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub mode: String,
    pub tangent_policy: TangentPolicy,
    pub n_nodes: usize,
    pub n_gauss_points: usize,
    pub increments: Vec<IncrementRecord>,
    pub extrapolation_warnings: usize,
    pub completed: bool,
    pub timing: Timing,
    pub provenance: Provenance,
}

impl SimulationResult {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    /// Flat CSV of nodal displacements: `increment,node,u1,u2`.
    pub fn displacements_csv(&self) -> String {
        let mut out = String::from("increment,node,u1,u2\n");
        for (k, inc) in self.increments.iter().enumerate() {
            for node in 0..self.n_nodes {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    k + 1,
                    node,
                    crate::io::format_f64_exact(inc.u[2 * node]),
                    crate::io::format_f64_exact(inc.u[2 * node + 1]),
                ));
            }
        }
        out
    }
}

#[cfg(not(target_arch = "wasm32"))]
mod clock {
    pub struct Stopwatch(std::time::Instant);
    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch(std::time::Instant::now())
        }
        pub fn seconds(&self) -> f64 {
            self.0.elapsed().as_secs_f64()
        }
    }
}

#[cfg(target_arch = "wasm32")]
mod clock {
    /// `std::time::Instant` is unavailable on bare wasm; report zero.
    pub struct Stopwatch;
    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch
        }
        pub fn seconds(&self) -> f64 {
            0.0
        }
    }
}

fn validate_macro_problem(problem: &MacroProblem) -> Result<()> {
    if problem.load.n_increments == 0 {
        return Err(Error::InvalidInput("load.n_increments must be >= 1".into()));
    }
    for &(node, dof, _) in &problem.load.targets {
        if node >= problem.mesh.n_nodes() || dof >= 2 {
            return Err(Error::InvalidInput(format!(
                "load target (node {node}, dof {dof}) out of range"
            )));
        }
    }
    problem.quad.validate()
}

/// Constraints and external force for one load fraction.
fn loading_at(problem: &MacroProblem, factor: f64) -> (ConstraintSet, Option<DVector<f64>>) {
    let mut constraints = problem.fixed_bcs.clone();
    let mut f_ext = None;
    match problem.load.kind {
        LoadKind::PrescribedDisplacement => {
            for &(node, dof, value) in &problem.load.targets {
                constraints.fix(node, dof, factor * value);
            }
        }
        LoadKind::NodalForce => {
            let mut f = DVector::zeros(problem.mesh.n_dofs());
            for &(node, dof, value) in &problem.load.targets {
                f[2 * node + dof] += factor * value;
            }
            f_ext = Some(f);
        }
    }
    (constraints, f_ext)
}

/// Per-Gauss-point responses at the current state. Parallel over Gauss
/// points when the `parallel` feature is on; results are collected in
/// input order either way.
fn all_gp_responses(
    provider: &ConstitutiveProvider,
    fs: &[Vec<Tensor2>],
    want_tangent: bool,
) -> Vec<(usize, usize, Result<GpResponse>)> {
    let jobs: Vec<(usize, usize, Tensor2)> = fs
        .iter()
        .enumerate()
        .flat_map(|(e, row)| row.iter().enumerate().map(move |(g, &f)| (e, g, f)))
        .collect();
    let run = |&(e, g, f): &(usize, usize, Tensor2)| {
        let det = f.det();
        let res = if det > 0.0 {
            gauss_point_response(provider, f, want_tangent)
        } else {
            Err(Error::ElementInversion { element: e, det })
        };
        (e, g, res)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(run).collect()
    }
}

/// Homogenized tangent at the reference state, replicated over all Gauss
/// points (the initialization step of the literal algorithm).
fn initial_moduli_table(
    provider: &ConstitutiveProvider,
    n_elements: usize,
    n_gp: usize,
) -> Result<Vec<Vec<Tensor4>>> {
    let c0 = gauss_point_response(provider, Tensor2::IDENTITY, true)?
        .c
        .expect("tangent requested");
    Ok(vec![vec![c0; n_gp]; n_elements])
}

/// Run the two-scale simulation: for each load increment, Newton-iterate
/// the macroscale equilibrium with Gauss-point stresses (and tangents,
/// policy-dependent) supplied by the provider.
///
/// A Newton or Gauss-point failure terminates the run; the failed
/// increment carries the failure record and `completed` is false.
pub fn run_fe2(
    problem: &MacroProblem,
    provider: &ConstitutiveProvider,
    tol: f64,
    max_iter: usize,
) -> Result<SimulationResult> {
    validate_macro_problem(problem)?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidInput(
            "Newton settings need tol > 0 and max_iter >= 1".into(),
        ));
    }
    let mesh = &problem.mesh;
    let quad = &problem.quad;
    let n_gp_per_elem = quad.len();
    let n_gp = mesh.n_elements() * n_gp_per_elem;

    let watch = clock::Stopwatch::start();
    let moduli_initial = match provider.tangent_policy {
        TangentPolicy::Initial => Some(initial_moduli_table(
            provider,
            mesh.n_elements(),
            n_gp_per_elem,
        )?),
        TangentPolicy::PerIteration => None,
    };

    let mut u = DVector::zeros(mesh.n_dofs());
    let mut increments = Vec::with_capacity(problem.load.n_increments);
    let mut warnings = 0usize;
    let mut completed = true;

    'increments: for k in 1..=problem.load.n_increments {
        let factor = k as f64 / problem.load.n_increments as f64;
        let (constraints, f_ext) = loading_at(problem, factor);
        let map = ConstraintMap::build(mesh.n_dofs(), &constraints.flatten(mesh.n_nodes())?)?;
        map.enforce(&mut u);

        let mut history: Vec<f64> = Vec::new();
        let mut failure: Option<String> = None;
        let (gp_f, gp_p) = loop {
            let fs = gp_deformation_gradients(mesh, quad, &u);
            let want_tangent = provider.tangent_policy == TangentPolicy::PerIteration;
            let responses = all_gp_responses(provider, &fs, want_tangent);

            let mut stresses: Vec<Vec<Tensor2>> =
                vec![vec![Tensor2::ZERO; n_gp_per_elem]; mesh.n_elements()];
            let mut moduli: Vec<Vec<Tensor4>> =
                vec![vec![Tensor4::ZERO; n_gp_per_elem]; mesh.n_elements()];
            let mut gp_error = None;
            for (e, g, res) in responses {
                match res {
                    Ok(resp) => {
                        stresses[e][g] = resp.p;
                        if resp.extrapolated {
                            warnings += 1;
                        }
                        if let Some(c) = resp.c {
                            moduli[e][g] = c;
                        }
                    }
                    Err(err) => {
                        if gp_error.is_none() {
                            let centroid = mesh
                                .element_coords(e)
                                .iter()
                                .fold([0.0f64; 2], |a, c| [a[0] + c[0] / 4.0, a[1] + c[1] / 4.0]);
                            gp_error = Some(format!(
                                "gauss point {g} of element {e} (near X = ({:.3}, {:.3})): {err}",
                                centroid[0], centroid[1]
                            ));
                        }
                    }
                }
            }
            if let Some(msg) = gp_error {
                failure = Some(msg);
                break (Vec::new(), Vec::new());
            }

            let f_int = assemble_forces_from_stresses(mesh, quad, &stresses);
            let residual_full = match &f_ext {
                Some(fe) => &f_int - fe,
                None => f_int,
            };
            let r = map.reduce_vector(&residual_full);
            let norm = r.norm();
            history.push(norm);
            if norm <= tol {
                let flat = |table: &Vec<Vec<Tensor2>>| {
                    table
                        .iter()
                        .flat_map(|row| row.iter().map(|t| t.to_flat()))
                        .collect::<Vec<_>>()
                };
                break (flat(&fs), flat(&stresses));
            }
            if history.len() > max_iter {
                failure = Some(format!(
                    "Newton did not converge after {max_iter} iterations (residual {norm:.3e})"
                ));
                break (Vec::new(), Vec::new());
            }

            let k_table = match &moduli_initial {
                Some(init) => init,
                None => &moduli,
            };
            let k_mat = assemble_tangent_from_moduli(mesh, quad, k_table);
            let k_red = map.reduce_matrix(&k_mat);
            match solve_linear(&k_red, &(-r)) {
                Ok(delta) => u += map.expand_correction(&delta),
                Err(err) => {
                    failure = Some(format!("macroscale solve failed: {err}"));
                    break (Vec::new(), Vec::new());
                }
            }
        };

        let converged = failure.is_none();
        increments.push(IncrementRecord {
            load_factor: factor,
            u: u.as_slice().to_vec(),
            gp_f,
            gp_p,
            newton: NewtonReport {
                converged,
                iterations: history.len(),
                residual_history: history,
            },
            failure,
        });
        if !converged {
            completed = false;
            break 'increments;
        }
    }

    Ok(SimulationResult {
        mode: provider.mode_name().to_string(),
        tangent_policy: provider.tangent_policy,
        n_nodes: mesh.n_nodes(),
        n_gauss_points: n_gp,
        increments,
        extrapolation_warnings: warnings,
        completed,
        timing: Timing {
            offline_seconds: 0.0,
            online_seconds: watch.seconds(),
        },
        provenance: Provenance::default(),
    })
}

/// Canonical small fixture: `nx` x `ny` unit square, left edge held
/// horizontally, bottom-left corner pinned, right edge pulled to
/// `stretch` x width over `n_increments` steps.
pub fn uniaxial_stretch_problem(
    nx: usize,
    ny: usize,
    stretch: f64,
    n_increments: usize,
) -> Result<MacroProblem> {
    let mesh = Mesh::structured(nx, ny, 1.0, 1.0)?;
    let mut fixed = ConstraintSet::default();
    let mut targets = Vec::new();
    for (n, &x) in mesh.nodes().iter().enumerate() {
        if x[0].abs() < 1e-12 {
            fixed.fix(n, 0, 0.0);
            if x[1].abs() < 1e-12 {
                fixed.fix(n, 1, 0.0);
            }
        }
        if (x[0] - 1.0).abs() < 1e-12 {
            targets.push((n, 0, stretch));
        }
    }
    Ok(MacroProblem {
        mesh,
        quad: QuadratureRule::gauss_2x2(),
        load: LoadSchedule {
            kind: LoadKind::PrescribedDisplacement,
            targets,
            n_increments,
        },
        fixed_bcs: fixed,
    })
}

/// Per-increment error statistics between two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementComparison {
    pub increment: usize,
    pub max_du: f64,
    pub rms_du: f64,
    pub max_dp: f64,
}

/// Comparison of two runs of the same problem and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub increments: Vec<IncrementComparison>,
    pub overall_max_du: f64,
    pub overall_max_dp: f64,
    /// Online wall time of `a` divided by online wall time of `b`.
    pub online_time_ratio: f64,
}

impl ComparisonReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)
    }
}

/// Compare two simulation results increment by increment.
pub fn compare_runs(a: &SimulationResult, b: &SimulationResult) -> Result<ComparisonReport> {
    if a.n_nodes != b.n_nodes {
        return Err(Error::IncompatibleResults(format!(
            "node counts differ: {} vs {}",
            a.n_nodes, b.n_nodes
        )));
    }
    if a.n_gauss_points != b.n_gauss_points {
        return Err(Error::IncompatibleResults(format!(
            "gauss point counts differ: {} vs {}",
            a.n_gauss_points, b.n_gauss_points
        )));
    }
    if a.increments.len() != b.increments.len() {
        return Err(Error::IncompatibleResults(format!(
            "increment counts differ: {} vs {}",
            a.increments.len(),
            b.increments.len()
        )));
    }
    let mut increments = Vec::with_capacity(a.increments.len());
    let mut overall_max_du = 0.0f64;
    let mut overall_max_dp = 0.0f64;
    for (k, (ia, ib)) in a.increments.iter().zip(&b.increments).enumerate() {
        if (ia.load_factor - ib.load_factor).abs() > 1e-12 {
            return Err(Error::IncompatibleResults(format!(
                "load factors differ at increment {}",
                k + 1
            )));
        }
        let mut max_du = 0.0f64;
        let mut sum_sq = 0.0f64;
        for (ua, ub) in ia.u.iter().zip(&ib.u) {
            let d = (ua - ub).abs();
            max_du = max_du.max(d);
            sum_sq += d * d;
        }
        let rms_du = (sum_sq / ia.u.len() as f64).sqrt();
        let mut max_dp = 0.0f64;
        for (pa, pb) in ia.gp_p.iter().zip(&ib.gp_p) {
            for (x, y) in pa.iter().zip(pb.iter()) {
                max_dp = max_dp.max((x - y).abs());
            }
        }
        overall_max_du = overall_max_du.max(max_du);
        overall_max_dp = overall_max_dp.max(max_dp);
        increments.push(IncrementComparison {
            increment: k + 1,
            max_du,
            rms_du,
            max_dp,
        });
    }
    let denom = b.timing.online_seconds;
    let online_time_ratio = if denom > 0.0 {
        a.timing.online_seconds / denom
    } else {
        f64::NAN
    };
    Ok(ComparisonReport {
        increments,
        overall_max_du,
        overall_max_dp,
        online_time_ratio,
    })
}

// ---------------------------------------------------------------------------
// Run configuration format
// ---------------------------------------------------------------------------

/// Load section of a run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadConfig {
    pub kind: LoadKind,
    /// `[node, dof, final value]` triples; dof 0 is X1, dof 1 is X2.
    pub targets: Vec<(usize, usize, f64)>,
}

/// On-disk run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub macro_mesh: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rve_mesh: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<PathBuf>,
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub bc_mode: Option<crate::rve::BcMode>,
    #[serde(default)]
    pub tangent_policy: Option<TangentPolicy>,
    pub load: LoadConfig,
    /// Homogeneous supports: `[node, dof, value]` triples.
    #[serde(default)]
    pub fixed: Vec<(usize, usize, f64)>,
    pub increments: usize,
    pub tol: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub rve_tol: Option<f64>,
    #[serde(default)]
    pub rve_max_iter: Option<usize>,
    pub out: PathBuf,
}

/// Newton settings resolved from a configuration.
#[derive(Debug, Clone, Copy)]
pub struct RunSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl RunConfig {
    pub fn load_json(path: &Path) -> Result<Self> {
        crate::io::read_json(path)
    }

    /// Resolve the configuration into a runnable problem and provider,
    /// reading the referenced mesh/material/model files. Paths are
    /// interpreted relative to `base_dir` when given.
    pub fn build(
        &self,
        base_dir: Option<&Path>,
    ) -> Result<(MacroProblem, ConstitutiveProvider, RunSettings)> {
        let resolve = |p: &PathBuf| -> PathBuf {
            match base_dir {
                Some(base) if p.is_relative() => base.join(p),
                _ => p.clone(),
            }
        };
        let mesh = Mesh::load_json(&resolve(&self.macro_mesh))?;
        for &(node, dof, _) in self.fixed.iter().chain(&self.load.targets) {
            if node >= mesh.n_nodes() {
                return Err(Error::InvalidInput(format!(
                    "fixed/load target references node {node}, mesh has {} nodes",
                    mesh.n_nodes()
                )));
            }
            if dof >= 2 {
                return Err(Error::InvalidInput(format!(
                    "fixed/load target dof must be 0 or 1, got {dof}"
                )));
            }
        }
        let mut fixed_bcs = ConstraintSet::default();
        for &(node, dof, value) in &self.fixed {
            fixed_bcs.fix(node, dof, value);
        }
        let tangent_policy = self.tangent_policy.unwrap_or(TangentPolicy::PerIteration);
        let bc_mode = self.bc_mode.unwrap_or(crate::rve::BcMode::Periodic);

        let mode = match self.mode.as_str() {
            "direct" => {
                let rve_path = self.rve_mesh.as_ref().ok_or_else(|| {
                    Error::InvalidInput("mode \"direct\" requires rve_mesh".into())
                })?;
                let material = match &self.material {
                    Some(p) => Some(crate::io::read_json::<crate::tensor::MaterialParams>(
                        &resolve(p),
                    )?),
                    None => None,
                };
                let rve = RveProblem::load_json(&resolve(rve_path), material, bc_mode)?;
                ProviderMode::Direct(rve)
            }
            "surrogate" => {
                let model_path = self.model.as_ref().ok_or_else(|| {
                    Error::InvalidInput("mode \"surrogate\" requires model".into())
                })?;
                ProviderMode::Surrogate(MlpNetwork::load_json(&resolve(model_path))?)
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "mode must be \"direct\" or \"surrogate\", got {other:?}"
                )))
            }
        };
        let provider = ConstitutiveProvider {
            mode,
            tangent_policy,
            rve_tol: self.rve_tol.unwrap_or(1e-10),
            rve_max_iter: self.rve_max_iter.unwrap_or(30),
        };
        let problem = MacroProblem {
            mesh,
            quad: QuadratureRule::gauss_2x2(),
            load: LoadSchedule {
                kind: self.load.kind,
                targets: self.load.targets.clone(),
                n_increments: self.increments,
            },
            fixed_bcs,
        };
        let settings = RunSettings {
            tol: self.tol,
            max_iter: self.max_iter.unwrap_or(25),
        };
        Ok((problem, provider, settings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rve::BcMode;
    use crate::tensor::MaterialParams;

    fn mat11() -> MaterialParams {
        MaterialParams::new(1.0, 1.0).unwrap()
    }

    fn direct_provider(n: usize, policy: TangentPolicy) -> ConstitutiveProvider {
        let rve = RveProblem::homogeneous(n, mat11(), BcMode::Periodic).unwrap();
        ConstitutiveProvider::direct(rve, policy)
    }

    #[test]
    fn zero_load_gives_zero_displacement_in_one_iteration() {
        let mut problem = uniaxial_stretch_problem(2, 2, 0.0, 1).unwrap();
        problem.load.targets.clear();
        let provider = direct_provider(1, TangentPolicy::PerIteration);
        let result = run_fe2(&problem, &provider, 1e-8, 10).unwrap();
        assert!(result.completed);
        assert_eq!(result.increments.len(), 1);
        let inc = &result.increments[0];
        assert_eq!(inc.newton.iterations, 1);
        assert!(inc.u.iter().all(|&v| v.abs() < 1e-14));
        assert!(inc.gp_p.iter().flatten().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn gauss_point_response_identity_is_stress_free() {
        let provider = direct_provider(2, TangentPolicy::PerIteration);
        let resp = gauss_point_response(&provider, Tensor2::IDENTITY, true).unwrap();
        assert!(resp.p.max_abs() < 1e-9);
        let c = resp.c.unwrap();
        // lambda + 2 mu at the reference state
        assert!((c.get(0, 0, 0, 0) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn gauss_point_response_matches_constitutive_law_for_homogeneous_cell() {
        let provider = direct_provider(2, TangentPolicy::PerIteration);
        let f = Tensor2::new(1.06, 0.02, -0.01, 0.97);
        let resp = gauss_point_response(&provider, f, true).unwrap();
        let exact = crate::tensor::neo_hookean_pk(f, &mat11()).unwrap();
        assert!(resp.p.sub(&exact).max_abs() / exact.max_abs() < 1e-6);
        let fd = crate::tensor::material_tangent_fd(&mat11(), f, 1e-6).unwrap();
        let c = resp.c.unwrap();
        assert!(c.sub(&fd).max_abs() / fd.max_abs() < 1e-3);
    }

    #[test]
    fn run_payload_is_reproducible() {
        let problem = uniaxial_stretch_problem(2, 2, 0.05, 2).unwrap();
        let provider = direct_provider(2, TangentPolicy::PerIteration);
        let mut a = run_fe2(&problem, &provider, 1e-9, 15).unwrap();
        let mut b = run_fe2(&problem, &provider, 1e-9, 15).unwrap();
        a.timing = Timing::default();
        b.timing = Timing::default();
        assert_eq!(a, b);
    }

    #[test]
    fn compare_identical_runs_is_all_zero() {
        let problem = uniaxial_stretch_problem(2, 1, 0.04, 2).unwrap();
        let provider = direct_provider(1, TangentPolicy::PerIteration);
        let result = run_fe2(&problem, &provider, 1e-9, 15).unwrap();
        let report = compare_runs(&result, &result).unwrap();
        assert_eq!(report.overall_max_du, 0.0);
        assert_eq!(report.overall_max_dp, 0.0);
        for inc in &report.increments {
            assert_eq!(inc.max_du, 0.0);
            assert_eq!(inc.rms_du, 0.0);
        }
    }

    #[test]
    fn compare_rejects_mismatched_schedules() {
        let problem2 = uniaxial_stretch_problem(2, 1, 0.04, 2).unwrap();
        let problem3 = uniaxial_stretch_problem(2, 1, 0.04, 3).unwrap();
        let provider = direct_provider(1, TangentPolicy::PerIteration);
        let a = run_fe2(&problem2, &provider, 1e-9, 15).unwrap();
        let b = run_fe2(&problem3, &provider, 1e-9, 15).unwrap();
        assert!(matches!(
            compare_runs(&a, &b),
            Err(Error::IncompatibleResults(_))
        ));
    }

    #[test]
    fn failure_is_recorded_not_panicked() {
        // 60% stretch in one increment with a tiny iteration budget
        let problem = uniaxial_stretch_problem(2, 2, 0.6, 1).unwrap();
        let provider = direct_provider(1, TangentPolicy::PerIteration);
        let result = run_fe2(&problem, &provider, 1e-10, 2).unwrap();
        assert!(!result.completed);
        let last = result.increments.last().unwrap();
        assert!(last.failure.is_some());
        assert!(!last.newton.converged);
    }

    #[test]
    fn unconstrained_problem_records_singular_solve_failure() {
        // force loading with no supports: rigid-body modes make the macro
        // tangent singular at zero load
        let mesh = crate::fe::mesh::Mesh::structured(1, 1, 1.0, 1.0).unwrap();
        let problem = MacroProblem {
            mesh,
            quad: QuadratureRule::gauss_2x2(),
            load: LoadSchedule {
                kind: LoadKind::NodalForce,
                targets: vec![(1, 0, 0.1)],
                n_increments: 1,
            },
            fixed_bcs: ConstraintSet::default(),
        };
        let provider = direct_provider(1, TangentPolicy::PerIteration);
        let result = run_fe2(&problem, &provider, 1e-9, 10).unwrap();
        assert!(!result.completed);
        let failure = result.increments[0].failure.as_deref().unwrap();
        assert!(failure.contains("singular"), "{failure}");
    }

    #[test]
    fn per_iteration_newton_contracts_superlinearly() {
        let problem = uniaxial_stretch_problem(2, 2, 0.1, 1).unwrap();
        let provider = direct_provider(2, TangentPolicy::PerIteration);
        let result = run_fe2(&problem, &provider, 1e-12, 20).unwrap();
        assert!(result.completed);
        let h = &result.increments[0].newton.residual_history;
        assert!(h.len() >= 3, "history too short: {h:?}");
        // contraction factors shrink as the iterates approach the solution
        let mut ratios = Vec::new();
        for w in h.windows(2) {
            if w[0] > 1e-13 {
                ratios.push(w[1] / w[0]);
            }
        }
        for pair in ratios.windows(2) {
            assert!(
                pair[1] < pair[0],
                "contraction not accelerating: {ratios:?} from {h:?}"
            );
        }
    }

    #[test]
    fn result_and_config_files_round_trip() {
        let problem = uniaxial_stretch_problem(1, 1, 0.02, 1).unwrap();
        let provider = direct_provider(1, TangentPolicy::PerIteration);
        let result = run_fe2(&problem, &provider, 1e-9, 15).unwrap();
        let dir = std::env::temp_dir().join(format!("fe2-driver-rt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("result.json");
        result.save_json(&path).unwrap();
        let back = SimulationResult::load_json(&path).unwrap();
        assert_eq!(result, back);

        let config = RunConfig {
            macro_mesh: "macro.json".into(),
            rve_mesh: Some("rve.json".into()),
            material: Some("material.json".into()),
            mode: "direct".into(),
            model: None,
            bc_mode: Some(crate::rve::BcMode::Periodic),
            tangent_policy: Some(TangentPolicy::Initial),
            load: LoadConfig {
                kind: LoadKind::PrescribedDisplacement,
                targets: vec![(1, 0, 0.1)],
            },
            fixed: vec![(0, 0, 0.0)],
            increments: 5,
            tol: 1e-8,
            max_iter: Some(20),
            rve_tol: None,
            rve_max_iter: None,
            out: "out.json".into(),
        };
        let text = serde_json::to_string(&config).unwrap();
        let parsed: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(
            serde_json::to_value(&config).unwrap(),
            serde_json::to_value(&parsed).unwrap()
        );
    }

    #[test]
    fn displacement_csv_shape() {
        let problem = uniaxial_stretch_problem(1, 1, 0.02, 2).unwrap();
        let provider = direct_provider(1, TangentPolicy::PerIteration);
        let result = run_fe2(&problem, &provider, 1e-9, 15).unwrap();
        let csv = result.displacements_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "increment,node,u1,u2");
        assert_eq!(lines.len(), 1 + 2 * 4);
    }
}
