//! Levenberg-Marquardt training of the surrogate network on
//! deformation-gradient / homogenized-stress pairs.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io;
use crate::net::mlp::{activation_deriv_from_output, AffineNorm, MlpNetwork};
use crate::tensor::Tensor2;

/// One training pair, both tensors flattened row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetRow {
    pub f: [f64; 4],
    pub p: [f64; 4],
}

/// Training data in physical units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
}

pub const CSV_HEADER: &str = "F11,F12,F21,F22,P11,P12,P21,P22";

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, f: Tensor2, p: Tensor2) {
        self.rows.push(DatasetRow {
            f: f.to_flat(),
            p: p.to_flat(),
        });
    }

    /// Type invariants: every deformation gradient orientation-preserving,
    /// no duplicated inputs.
    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            let det = Tensor2::from_flat(row.f).det();
            if !(det > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "dataset row {i} has det F = {det}"
                )));
            }
        }
        let mut keys: Vec<([u64; 4], usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.f.map(f64::to_bits), i))
            .collect();
        keys.sort_unstable();
        for w in keys.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidInput(format!(
                    "dataset rows {} and {} have identical F",
                    w[0].1, w[1].1
                )));
            }
        }
        Ok(())
    }

    /// Exact CSV: fixed header, 17-significant-digit scientific notation,
    /// LF line endings, no trailing whitespace.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 + self.rows.len() * 200);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row
                .f
                .iter()
                .chain(row.p.iter())
                .map(|&v| io::format_f64_exact(v))
                .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Dataset> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == CSV_HEADER => {}
            other => {
                return Err(Error::InvalidInput(format!(
                    "bad dataset header: expected {CSV_HEADER:?}, got {other:?}"
                )))
            }
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        Error::InvalidInput(format!("dataset line {}: bad number {s:?}", k + 2))
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != 8 {
                return Err(Error::InvalidInput(format!(
                    "dataset line {}: expected 8 fields, got {}",
                    k + 2,
                    vals.len()
                )));
            }
            rows.push(DatasetRow {
                f: [vals[0], vals[1], vals[2], vals[3]],
                p: [vals[4], vals[5], vals[6], vals[7]],
            });
        }
        Ok(Dataset { rows })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        io::write_text(path, &self.to_csv())
    }

    pub fn load_csv(path: &Path) -> Result<Dataset> {
        Dataset::from_csv(&io::read_text(path)?)
    }

    /// Content hash of the canonical CSV form.
    pub fn hash(&self) -> String {
        io::fnv1a_hex(self.to_csv().as_bytes())
    }

    /// Largest deviation of any input component from the identity.
    pub fn amplitude(&self) -> f64 {
        let identity = Tensor2::IDENTITY.to_flat();
        self.rows
            .iter()
            .flat_map(|r| {
                r.f.iter()
                    .zip(identity.iter())
                    .map(|(&v, &i)| (v - i).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Levenberg-Marquardt settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub max_iterations: usize,
    pub target_mse: f64,
    pub lm_lambda0: f64,
    pub lm_lambda_factor: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_iterations: 500,
            target_mse: 1e-8,
            lm_lambda0: 1e-3,
            lm_lambda_factor: 10.0,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_mse > 0.0) {
            return Err(Error::InvalidInput("target_mse must be > 0".into()));
        }
        if !(self.lm_lambda0 > 0.0) {
            return Err(Error::InvalidInput("lm_lambda0 must be > 0".into()));
        }
        if !(self.lm_lambda_factor > 1.0) {
            return Err(Error::InvalidInput("lm_lambda_factor must be > 1".into()));
        }
        Ok(())
    }
}

/// Training outcome. `mse_history` starts at the initial loss and appends
/// the loss after every accepted step, so it is non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub final_mse: f64,
    pub iterations_used: usize,
    pub mse_history: Vec<f64>,
}

const LAMBDA_OVERFLOW: f64 = 1e10;
const LAMBDA_FLOOR: f64 = 1e-15;

struct FlatParams;

impl FlatParams {
    fn read(net: &MlpNetwork) -> DVector<f64> {
        let mut out = Vec::with_capacity(net.n_params());
        for (w, b) in net.weights.iter().zip(&net.biases) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    out.push(w[(i, j)]);
                }
            }
            out.extend_from_slice(b.as_slice());
        }
        DVector::from_vec(out)
    }

    fn write(net: &mut MlpNetwork, params: &DVector<f64>) {
        let mut at = 0;
        for (w, b) in net.weights.iter_mut().zip(net.biases.iter_mut()) {
            for i in 0..w.nrows() {
                for j in 0..w.ncols() {
                    w[(i, j)] = params[at];
                    at += 1;
                }
            }
            for i in 0..b.len() {
                b[i] = params[at];
                at += 1;
            }
        }
        debug_assert_eq!(at, params.len());
    }
}

/// Residual vector over all samples and outputs, in normalized units.
fn residuals(net: &MlpNetwork, inputs: &[DVector<f64>], targets: &[DVector<f64>]) -> DVector<f64> {
    let n_out = net.n_outputs();
    let mut r = DVector::zeros(inputs.len() * n_out);
    for (s, (z, t)) in inputs.iter().zip(targets).enumerate() {
        let y = net.forward_normalized(z);
        for k in 0..n_out {
            r[s * n_out + k] = y[k] - t[k];
        }
    }
    r
}

fn mse_of(r: &DVector<f64>) -> f64 {
    r.dot(r) / r.len() as f64
}

/// Jacobian of the residual vector with respect to all weights and biases,
/// one reverse-mode sweep per sample and output component.
fn residual_jacobian(net: &MlpNetwork, inputs: &[DVector<f64>]) -> DMatrix<f64> {
    let n_out = net.n_outputs();
    let n_params = net.n_params();
    let n_layers = net.weights.len();
    // parameter offset of each layer in the flattened vector
    let mut offsets = Vec::with_capacity(n_layers);
    let mut at = 0;
    for (w, b) in net.weights.iter().zip(&net.biases) {
        offsets.push(at);
        at += w.len() + b.len();
    }
    let mut jac = DMatrix::zeros(inputs.len() * n_out, n_params);
    for (s, z) in inputs.iter().enumerate() {
        let trace = net.forward_trace(z);
        for k in 0..n_out {
            let row = s * n_out + k;
            let mut delta = DVector::zeros(n_out);
            delta[k] = 1.0;
            // delta holds d y_k / d s_l (pre-activation) while walking down
            for l in (0..n_layers).rev() {
                let base = offsets[l];
                let w_cols = net.weights[l].ncols();
                for i in 0..delta.len() {
                    let di = delta[i];
                    if di != 0.0 {
                        for j in 0..w_cols {
                            jac[(row, base + i * w_cols + j)] = di * trace[l][j];
                        }
                    }
                    jac[(row, base + net.weights[l].len() + i)] = di;
                }
                if l > 0 {
                    let mut upstream: DVector<f64> = net.weights[l].transpose() * &delta;
                    for (i, v) in upstream.iter_mut().enumerate() {
                        *v *= activation_deriv_from_output(trace[l][i]);
                    }
                    delta = upstream;
                }
            }
        }
    }
    jac
}

/// Mean squared residual of a network over physical-unit pairs, in the
/// network's normalized output units (the training loss).
pub fn evaluate_mse(
    net: &MlpNetwork,
    input_rows: &[Vec<f64>],
    target_rows: &[Vec<f64>],
) -> Result<f64> {
    if input_rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let inputs: Vec<DVector<f64>> = input_rows
        .iter()
        .map(|r| {
            if r.len() != net.n_inputs() {
                return Err(Error::ShapeError {
                    expected: net.n_inputs(),
                    got: r.len(),
                });
            }
            Ok(DVector::from_vec(net.input_norm.normalize(r)))
        })
        .collect::<Result<_>>()?;
    let targets: Vec<DVector<f64>> = target_rows
        .iter()
        .map(|r| DVector::from_vec(net.output_norm.normalize(r)))
        .collect();
    Ok(mse_of(&residuals(net, &inputs, &targets)))
}

/// Train a network on the dataset by damped Gauss-Newton
/// (Levenberg-Marquardt). The dataset hash and training amplitude are
/// recorded in the model metadata.
pub fn train_lm(
    net: MlpNetwork,
    data: &Dataset,
    cfg: &TrainingConfig,
) -> Result<(MlpNetwork, TrainingReport)> {
    if net.n_inputs() != 4 || net.n_outputs() != 4 {
        return Err(Error::ShapeError {
            expected: 4,
            got: net.n_inputs(),
        });
    }
    let f_rows: Vec<Vec<f64>> = data.rows.iter().map(|r| r.f.to_vec()).collect();
    let p_rows: Vec<Vec<f64>> = data.rows.iter().map(|r| r.p.to_vec()).collect();
    let (mut net, report) = train_lm_pairs(net, &f_rows, &p_rows, cfg)?;
    net.meta.dataset_hash = data.hash();
    net.meta.amplitude = Some(data.amplitude());
    Ok((net, report))
}

/// Levenberg-Marquardt on arbitrary input/target pairs:
///
/// `δw = −(JᵀJ + λI)⁻¹ Jᵀ r`
///
/// λ shrinks by `lm_lambda_factor` on accepted steps and grows on rejected
/// ones (the step is undone). Stops at `target_mse`, `max_iterations`, or λ
/// overflow. Input/output normalizations are fitted from the pairs before
/// the first iteration; the loss is the mean squared residual over all
/// samples and output components in normalized units.
pub fn train_lm_pairs(
    mut net: MlpNetwork,
    input_rows: &[Vec<f64>],
    target_rows: &[Vec<f64>],
    cfg: &TrainingConfig,
) -> Result<(MlpNetwork, TrainingReport)> {
    cfg.validate()?;
    if input_rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if input_rows.len() != target_rows.len() {
        return Err(Error::InvalidInput(format!(
            "{} inputs vs {} targets",
            input_rows.len(),
            target_rows.len()
        )));
    }
    net.validate()?;
    for row in input_rows {
        if row.len() != net.n_inputs() {
            return Err(Error::ShapeError {
                expected: net.n_inputs(),
                got: row.len(),
            });
        }
    }
    for row in target_rows {
        if row.len() != net.n_outputs() {
            return Err(Error::ShapeError {
                expected: net.n_outputs(),
                got: row.len(),
            });
        }
    }

    net.input_norm = AffineNorm::fit(input_rows, net.n_inputs());
    net.output_norm = AffineNorm::fit(target_rows, net.n_outputs());
    net.meta.seed = cfg.seed;

    let inputs: Vec<DVector<f64>> = input_rows
        .iter()
        .map(|r| DVector::from_vec(net.input_norm.normalize(r)))
        .collect();
    let targets: Vec<DVector<f64>> = target_rows
        .iter()
        .map(|r| DVector::from_vec(net.output_norm.normalize(r)))
        .collect();

    let mut params = FlatParams::read(&net);
    let mut r = residuals(&net, &inputs, &targets);
    let mut mse = mse_of(&r);
    if !mse.is_finite() {
        return Err(Error::TrainingDiverged { iteration: 0 });
    }
    let mut history = vec![mse];
    let mut lambda = cfg.lm_lambda0;
    let mut iterations = 0;

    'outer: while iterations < cfg.max_iterations && mse > cfg.target_mse {
        iterations += 1;
        let jac = residual_jacobian(&net, &inputs);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        loop {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda;
            }
            let step = crate::fe::linalg::lu_factor(a).map(|lu| lu.solve(&(-&jtr)));
            let accepted = match step {
                Ok(delta) => {
                    let trial = &params + &delta;
                    FlatParams::write(&mut net, &trial);
                    let r_trial = residuals(&net, &inputs, &targets);
                    let mse_trial = mse_of(&r_trial);
                    if mse_trial.is_finite() && mse_trial < mse {
                        params = trial;
                        r = r_trial;
                        mse = mse_trial;
                        true
                    } else {
                        FlatParams::write(&mut net, &params); // undo
                        false
                    }
                }
                Err(_) => false,
            };
            if accepted {
                lambda = (lambda / cfg.lm_lambda_factor).max(LAMBDA_FLOOR);
                history.push(mse);
                break;
            }
            lambda *= cfg.lm_lambda_factor;
            if lambda > LAMBDA_OVERFLOW {
                break 'outer;
            }
        }
    }

    net.meta.final_mse = mse;
    Ok((
        net,
        TrainingReport {
            final_mse: mse,
            iterations_used: iterations,
            mse_history: history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::mlp::surrogate_pk;

    fn linear_dataset() -> Dataset {
        // y = 2x embedded in the 4->4 map: F offsets drive P components
        let mut data = Dataset::default();
        for k in 0..10 {
            let x = -1.0 + 2.0 * k as f64 / 9.0;
            let f = Tensor2::new(1.0 + 0.1 * x, 0.05 * x, -0.03 * x, 1.0 - 0.08 * x);
            let p = Tensor2::new(2.0 * x, -x, 0.5 * x, x);
            data.push(f, p);
        }
        data
    }

    #[test]
    fn csv_round_trip_exact() {
        let data = linear_dataset();
        let text = data.to_csv();
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.ends_with('\n'));
        assert!(!text.contains(' '));
        assert!(!text.contains('\r'));
        let back = Dataset::from_csv(&text).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(Dataset::from_csv("F11,F12\n").is_err());
    }

    #[test]
    fn validate_catches_duplicates_and_bad_det() {
        let mut data = linear_dataset();
        data.validate().unwrap();
        let first = data.rows[0];
        data.rows.push(first);
        assert!(data.validate().is_err());

        let mut data = Dataset::default();
        data.push(Tensor2::diag(-1.0, 1.0), Tensor2::ZERO);
        assert!(data.validate().is_err());
    }

    #[test]
    fn amplitude_measures_deviation_from_identity() {
        let mut data = Dataset::default();
        data.push(Tensor2::new(1.12, -0.05, 0.0, 0.9), Tensor2::ZERO);
        assert!((data.amplitude() - 0.12).abs() < 1e-15);
    }

    #[test]
    fn zero_iterations_returns_initial_network() {
        let net = MlpNetwork::init_nguyen_widrow(&[4, 4, 4], 1).unwrap();
        let weights_before = net.weights.clone();
        let cfg = TrainingConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let (out, report) = train_lm(net, &linear_dataset(), &cfg).unwrap();
        assert_eq!(report.iterations_used, 0);
        assert_eq!(out.weights, weights_before);
    }

    #[test]
    fn empty_dataset_rejected() {
        let net = MlpNetwork::init_nguyen_widrow(&[4, 4, 4], 1).unwrap();
        assert!(matches!(
            train_lm(net, &Dataset::default(), &TrainingConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn fits_linear_map_to_tight_mse() {
        let net = MlpNetwork::init_nguyen_widrow(&[4, 4, 4], 1).unwrap();
        let cfg = TrainingConfig {
            max_iterations: 100,
            target_mse: 1e-9,
            ..Default::default()
        };
        let (net, report) = train_lm(net, &linear_dataset(), &cfg).unwrap();
        assert!(
            report.final_mse < 1e-8,
            "final mse {} after {} iterations",
            report.final_mse,
            report.iterations_used
        );
        assert!(report.iterations_used <= 100);
        // trained net reproduces a training point
        let row = linear_dataset().rows[3];
        let p = surrogate_pk(&net, Tensor2::from_flat(row.f)).unwrap();
        for (a, b) in p.to_flat().iter().zip(row.p.iter()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn accepted_history_is_non_increasing() {
        let net = MlpNetwork::init_nguyen_widrow(&[4, 6, 4], 5).unwrap();
        let cfg = TrainingConfig {
            max_iterations: 40,
            target_mse: 1e-12,
            ..Default::default()
        };
        let (_, report) = train_lm(net, &linear_dataset(), &cfg).unwrap();
        for w in report.mse_history.windows(2) {
            assert!(w[1] <= w[0], "history increased: {:?}", report.mse_history);
        }
    }

    #[test]
    fn training_is_reproducible_bitwise() {
        let cfg = TrainingConfig {
            max_iterations: 25,
            target_mse: 1e-14,
            ..Default::default()
        };
        let run = || {
            let net = MlpNetwork::init_nguyen_widrow(&[4, 6, 4], 7).unwrap();
            train_lm(net, &linear_dataset(), &cfg).unwrap().0
        };
        let a = run();
        let b = run();
        for (wa, wb) in a.weights.iter().zip(&b.weights) {
            for (x, y) in wa.iter().zip(wb.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn normalization_fitted_from_dataset() {
        let net = MlpNetwork::init_nguyen_widrow(&[4, 4, 4], 1).unwrap();
        let cfg = TrainingConfig {
            max_iterations: 0,
            ..Default::default()
        };
        let data = linear_dataset();
        let (out, _) = train_lm(net, &data, &cfg).unwrap();
        // shift is the column mean of the inputs
        let mean_f11: f64 = data.rows.iter().map(|r| r.f[0]).sum::<f64>() / data.len() as f64;
        assert!((out.input_norm.shift[0] - mean_f11).abs() < 1e-14);
        assert_eq!(out.meta.dataset_hash, data.hash());
    }
}
