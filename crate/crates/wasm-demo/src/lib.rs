//! Browser demo: interactive cell solves, in-browser surrogate training
//! and a stretch sweep comparing the surrogate with direct homogenization.
//!
//! Every exported function takes and returns JSON strings so the page
//! needs no generated bindings beyond the wasm module itself. Errors come
//! back as `{"error": "..."}` rather than thrown exceptions.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::wasm_bindgen;

use fe2_core::net::{surrogate_pk, train_lm, MlpNetwork, TrainingConfig};
use fe2_core::pipeline::{generate_dataset, sample_deformation_gradients, SamplingSpec};
use fe2_core::rve::{homogenized_pk, BcMode, RveProblem};
use fe2_core::tensor::{MaterialParams, Tensor2};

thread_local! {
    /// Most recently trained surrogate, reused by the stretch sweep.
    static TRAINED: RefCell<Option<MlpNetwork>> = const { RefCell::new(None) };
}

const SOLVE_TOL: f64 = 1e-9;
const SOLVE_MAX_ITER: usize = 30;

/// Unit-cell settings shared by all three operations.
#[derive(Debug, Clone, Deserialize)]
struct CellConfig {
    /// Elements per side of the structured cell.
    #[serde(default = "default_n")]
    n: usize,
    /// Centered stiff inclusion on/off.
    #[serde(default)]
    inclusion: bool,
    /// Stiffness contrast of the inclusion.
    #[serde(default = "default_contrast")]
    contrast: f64,
    #[serde(default = "default_bc")]
    bc_mode: String,
}

fn default_n() -> usize {
    4
}

fn default_contrast() -> f64 {
    10.0
}

fn default_bc() -> String {
    "periodic".into()
}

impl CellConfig {
    fn build(&self) -> Result<RveProblem, fe2_core::Error> {
        let bc = match self.bc_mode.as_str() {
            "affine" => BcMode::Affine,
            _ => BcMode::Periodic,
        };
        let matrix = MaterialParams::new(1.0, 1.0)?;
        if self.inclusion {
            let c = self.contrast.clamp(1.0, 1000.0);
            let stiff = MaterialParams::new(c, c)?;
            RveProblem::with_inclusion(self.n.clamp(2, 12), matrix, stiff, 0.5, bc)
        } else {
            RveProblem::homogeneous(self.n.clamp(1, 12), matrix, bc)
        }
    }
}

fn error_json(msg: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": msg.to_string() }).to_string()
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(error_json)
}

// ---------------------------------------------------------------------------
// Operation 1: solve the cell under a chosen deformation gradient
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct SolveRequest {
    f: [f64; 4],
    #[serde(flatten)]
    cell: CellConfig,
}

#[derive(Serialize)]
struct SolveResponse {
    nodes: Vec<[f64; 2]>,
    deformed: Vec<[f64; 2]>,
    elements: Vec<[usize; 4]>,
    /// 0 = matrix, 1 = inclusion, per element.
    phases: Vec<u8>,
    boundary_nodes: Vec<usize>,
    p_m: [f64; 4],
    iterations: usize,
    det_f: f64,
}

/// Solve the cell problem for a macroscale deformation gradient and return
/// the deformed mesh plus the homogenized stress.
#[wasm_bindgen]
pub fn demo_solve_cell(config: &str) -> String {
    let request: SolveRequest = match serde_json::from_str(config) {
        Ok(r) => r,
        Err(e) => return error_json(e),
    };
    let f_m = Tensor2::from_flat(request.f);
    let rve = match request.cell.build() {
        Ok(r) => r,
        Err(e) => return error_json(e),
    };
    let sol = match rve.solve(f_m, SOLVE_TOL, SOLVE_MAX_ITER) {
        Ok(s) => s,
        Err(e) => return error_json(e),
    };
    let p_m = homogenized_pk(&sol, &rve);
    let matrix_mat = rve.materials()[0];
    let response = SolveResponse {
        nodes: rve.mesh().nodes().to_vec(),
        deformed: rve
            .mesh()
            .nodes()
            .iter()
            .enumerate()
            .map(|(n, &x)| [x[0] + sol.u[2 * n], x[1] + sol.u[2 * n + 1]])
            .collect(),
        elements: rve.mesh().elements().to_vec(),
        phases: rve
            .materials()
            .iter()
            .map(|m| u8::from(*m != matrix_mat))
            .collect(),
        boundary_nodes: rve.mesh().boundary_nodes().to_vec(),
        p_m: p_m.to_flat(),
        iterations: sol.report.iterations,
        det_f: f_m.det(),
    };
    to_json(&response)
}

// ---------------------------------------------------------------------------
// Operation 2: train a surrogate on the current cell
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct TrainRequest {
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_amplitude")]
    amplitude: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_hidden")]
    hidden: Vec<usize>,
    #[serde(default = "default_max_iter")]
    max_iter: usize,
    #[serde(flatten)]
    cell: CellConfig,
}

fn default_samples() -> usize {
    200
}

fn default_amplitude() -> f64 {
    0.15
}

fn default_hidden() -> Vec<usize> {
    vec![12, 12]
}

fn default_max_iter() -> usize {
    60
}

#[derive(Serialize)]
struct TrainResponse {
    final_mse: f64,
    iterations: usize,
    mse_history: Vec<f64>,
    rows: usize,
    failed_samples: usize,
}

/// Generate a dataset on the chosen cell and train the surrogate in the
/// browser. The trained network is kept for the sweep operation.
#[wasm_bindgen]
pub fn demo_train_surrogate(config: &str) -> String {
    let request: TrainRequest = match serde_json::from_str(config) {
        Ok(r) => r,
        Err(e) => return error_json(e),
    };
    let rve = match request.cell.build() {
        Ok(r) => r,
        Err(e) => return error_json(e),
    };
    let spec = SamplingSpec {
        n_samples: request.samples.clamp(10, 1000),
        amplitude: request.amplitude.clamp(0.01, 0.4),
        min_det: 0.5,
        seed: request.seed,
    };
    let samples = match sample_deformation_gradients(&spec) {
        Ok(s) => s,
        Err(e) => return error_json(e),
    };
    let gen = match generate_dataset(&rve, &samples, SOLVE_TOL, SOLVE_MAX_ITER) {
        Ok(g) => g,
        Err(e) => return error_json(e),
    };
    let mut layer_sizes = vec![4];
    layer_sizes.extend(request.hidden.iter().map(|&h| h.clamp(1, 64)));
    layer_sizes.push(4);
    let net = match MlpNetwork::init_nguyen_widrow(&layer_sizes, request.seed) {
        Ok(n) => n,
        Err(e) => return error_json(e),
    };
    let cfg = TrainingConfig {
        max_iterations: request.max_iter.clamp(1, 500),
        target_mse: 1e-7,
        seed: request.seed,
        ..Default::default()
    };
    let (net, report) = match train_lm(net, &gen.dataset, &cfg) {
        Ok(out) => out,
        Err(e) => return error_json(e),
    };
    TRAINED.with(|slot| *slot.borrow_mut() = Some(net));
    to_json(&TrainResponse {
        final_mse: report.final_mse,
        iterations: report.iterations_used,
        mse_history: report.mse_history,
        rows: gen.dataset.len(),
        failed_samples: gen.failures.len(),
    })
}

// ---------------------------------------------------------------------------
// Operation 3: stress sweep, direct homogenization vs trained surrogate
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct SweepRequest {
    /// "uniaxial" stretches F11, "shear" drives F12, "biaxial" both axes.
    #[serde(default = "default_sweep")]
    kind: String,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default = "default_range")]
    range: f64,
    #[serde(flatten)]
    cell: CellConfig,
}

fn default_sweep() -> String {
    "uniaxial".into()
}

fn default_steps() -> usize {
    21
}

fn default_range() -> f64 {
    0.15
}

#[derive(Serialize)]
struct SweepResponse {
    parameter: Vec<f64>,
    /// Component P11 along the sweep (P12 for the shear sweep).
    direct: Vec<f64>,
    surrogate: Option<Vec<f64>>,
    component: String,
}

fn sweep_f(kind: &str, t: f64) -> Tensor2 {
    match kind {
        "shear" => Tensor2::new(1.0, t, 0.0, 1.0),
        "biaxial" => Tensor2::new(1.0 + t, 0.0, 0.0, 1.0 + t),
        _ => Tensor2::new(1.0 + t, 0.0, 0.0, 1.0),
    }
}

/// Sweep a loading parameter and tabulate the homogenized stress from
/// direct cell solves next to the trained surrogate's prediction.
#[wasm_bindgen]
pub fn demo_stress_sweep(config: &str) -> String {
    let request: SweepRequest = match serde_json::from_str(config) {
        Ok(r) => r,
        Err(e) => return error_json(e),
    };
    let rve = match request.cell.build() {
        Ok(r) => r,
        Err(e) => return error_json(e),
    };
    let steps = request.steps.clamp(3, 101);
    let range = request.range.clamp(0.01, 0.3);
    let component = if request.kind == "shear" {
        "P12"
    } else {
        "P11"
    };
    let pick = |p: &Tensor2| {
        if request.kind == "shear" {
            p.a12
        } else {
            p.a11
        }
    };

    let mut parameter = Vec::with_capacity(steps);
    let mut direct = Vec::with_capacity(steps);
    let mut surrogate_vals = Vec::with_capacity(steps);
    let has_net = TRAINED.with(|slot| slot.borrow().is_some());
    for k in 0..steps {
        let t = -range + 2.0 * range * k as f64 / (steps - 1) as f64;
        let f_m = sweep_f(&request.kind, t);
        let sol = match rve.solve(f_m, SOLVE_TOL, SOLVE_MAX_ITER) {
            Ok(s) => s,
            Err(e) => return error_json(e),
        };
        parameter.push(t);
        direct.push(pick(&homogenized_pk(&sol, &rve)));
        if has_net {
            let value = TRAINED.with(|slot| {
                let borrowed = slot.borrow();
                let net = borrowed.as_ref().expect("checked above");
                surrogate_pk(net, f_m).map(|p| pick(&p))
            });
            match value {
                Ok(v) => surrogate_vals.push(v),
                Err(e) => return error_json(e),
            }
        }
    }
    to_json(&SweepResponse {
        parameter,
        direct,
        surrogate: has_net.then_some(surrogate_vals),
        component: component.to_string(),
    })
}
