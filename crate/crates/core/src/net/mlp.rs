//! Multilayer perceptron with the sigmoid `2/(1+e^{-2x}) - 1` on hidden
//! layers and a linear output layer, mapping a flattened deformation
//! gradient to a flattened first Piola-Kirchhoff stress.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor2, Tensor4};

/// Sigmoid activation `2/(1+e^{-2x}) - 1`, range (-1, 1).
pub fn activation(x: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * x).exp()) - 1.0
}

/// Derivative of [`activation`] expressed through its output: `1 - o²`.
pub fn activation_deriv_from_output(o: f64) -> f64 {
    1.0 - o * o
}

/// Per-component affine map `z = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl AffineNorm {
    pub fn identity(n: usize) -> Self {
        AffineNorm {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Fit to zero mean and unit range per component. Constant components
    /// get scale 1 so the map stays invertible.
    pub fn fit(rows: &[Vec<f64>], n: usize) -> Self {
        let mut shift = vec![0.0; n];
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for row in rows {
            for c in 0..n {
                shift[c] += row[c];
                lo[c] = lo[c].min(row[c]);
                hi[c] = hi[c].max(row[c]);
            }
        }
        let count = rows.len().max(1) as f64;
        let scale = (0..n)
            .map(|c| {
                let range = hi[c] - lo[c];
                if range > 1e-300 {
                    range
                } else {
                    1.0
                }
            })
            .collect();
        for s in &mut shift {
            *s /= count;
        }
        AffineNorm { shift, scale }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&v, (&sh, &sc))| (v - sh) / sc)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&v, (&sh, &sc))| v * sc + sh)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shift.len() != self.scale.len() {
            return Err(Error::InvalidInput(
                "normalization shift/scale length mismatch".into(),
            ));
        }
        if self.scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidInput(
                "normalization scales must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// Training provenance carried inside a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub final_mse: f64,
    pub dataset_hash: String,
    /// Largest |F - I| component seen in the training inputs; used to warn
    /// about extrapolation at run time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta {
            seed: 0,
            final_mse: f64::NAN,
            dataset_hash: String::new(),
            amplitude: None,
        }
    }
}

/// Fully connected network. `weights[l]` is `(layer_sizes[l+1] x
/// layer_sizes[l])`, `biases[l]` matches the layer output. Hidden layers
/// use [`activation`], the output layer is linear, and inputs/outputs pass
/// through the stored normalization maps.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input_norm: AffineNorm,
    pub output_norm: AffineNorm,
    pub meta: ModelMeta,
}

impl MlpNetwork {
    /// Zero-weight network with identity normalization.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "invalid layer sizes {layer_sizes:?}"
            )));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_sizes[1..]
            .iter()
            .map(|&s| DVector::zeros(s))
            .collect();
        Ok(MlpNetwork {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            input_norm: AffineNorm::identity(layer_sizes[0]),
            output_norm: AffineNorm::identity(*layer_sizes.last().unwrap()),
            meta: ModelMeta::default(),
        })
    }

    /// Nguyen-Widrow initialization: hidden-layer weight rows drawn uniform
    /// and rescaled to norm `0.7 · H^(1/n)` (H units, n inputs), biases
    /// uniformly spaced inside `(-β, β)`; output layer small uniform.
    pub fn init_nguyen_widrow(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::InvalidInput(
                "Nguyen-Widrow initialization needs at least one hidden layer".into(),
            ));
        }
        let mut net = Self::zeros(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_layers = net.weights.len();
        for l in 0..n_layers - 1 {
            let n_in = layer_sizes[l];
            let h = layer_sizes[l + 1];
            let beta = 0.7 * (h as f64).powf(1.0 / n_in as f64);
            for i in 0..h {
                let mut row: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    for v in &mut row {
                        *v *= beta / norm;
                    }
                } else {
                    row[0] = beta;
                }
                for (j, &v) in row.iter().enumerate() {
                    net.weights[l][(i, j)] = v;
                }
                // midpoints of h equal bins of (-beta, beta)
                net.biases[l][i] = beta * (2.0 * (i as f64 + 0.5) / h as f64 - 1.0);
            }
        }
        let last = n_layers - 1;
        for i in 0..net.weights[last].nrows() {
            for j in 0..net.weights[last].ncols() {
                net.weights[last][(i, j)] = rng.gen_range(-0.1..0.1);
            }
            net.biases[last][i] = rng.gen_range(-0.1..0.1);
        }
        net.meta.seed = seed;
        Ok(net)
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Forward pass on normalized values, returning every layer output
    /// (index 0 is the input itself). Backprop consumes this trace.
    pub(crate) fn forward_trace(&self, z_in: &DVector<f64>) -> Vec<DVector<f64>> {
        let n_layers = self.weights.len();
        let mut outputs = Vec::with_capacity(n_layers + 1);
        outputs.push(z_in.clone());
        for l in 0..n_layers {
            let mut s = &self.weights[l] * outputs.last().unwrap() + &self.biases[l];
            if l + 1 < n_layers {
                s.apply(|v| *v = activation(*v));
            }
            outputs.push(s);
        }
        outputs
    }

    /// Forward pass on normalized values.
    pub(crate) fn forward_normalized(&self, z_in: &DVector<f64>) -> DVector<f64> {
        self.forward_trace(z_in).pop().unwrap()
    }

    /// Evaluate the network in physical units: normalize, propagate,
    /// denormalize.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.n_inputs() {
            return Err(Error::ShapeError {
                expected: self.n_inputs(),
                got: input.len(),
            });
        }
        let z = DVector::from_vec(self.input_norm.normalize(input));
        let y = self.forward_normalized(&z);
        Ok(self.output_norm.denormalize(y.as_slice()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidInput(
                "network needs at least two layers".into(),
            ));
        }
        if self.weights.len() != self.layer_sizes.len() - 1
            || self.biases.len() != self.weights.len()
        {
            return Err(Error::InvalidInput(
                "weight/bias layer count mismatch".into(),
            ));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.nrows() != self.layer_sizes[l + 1]
                || w.ncols() != self.layer_sizes[l]
                || b.len() != self.layer_sizes[l + 1]
            {
                return Err(Error::InvalidInput(format!(
                    "layer {l} shapes do not chain with layer_sizes"
                )));
            }
        }
        if self.input_norm.shift.len() != self.n_inputs()
            || self.output_norm.shift.len() != self.n_outputs()
        {
            return Err(Error::InvalidInput("normalization length mismatch".into()));
        }
        self.input_norm.validate()?;
        self.output_norm.validate()
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            layer_sizes: self.layer_sizes.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| {
                    // row-major
                    (0..w.nrows())
                        .flat_map(|i| (0..w.ncols()).map(move |j| (i, j)))
                        .map(|(i, j)| w[(i, j)])
                        .collect()
                })
                .collect(),
            biases: self.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
            meta: self.meta.clone(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        let n_layers = file.layer_sizes.len().saturating_sub(1);
        if file.weights.len() != n_layers || file.biases.len() != n_layers {
            return Err(Error::InvalidInput(
                "model file layer count mismatch".into(),
            ));
        }
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let rows = file.layer_sizes[l + 1];
            let cols = file.layer_sizes[l];
            if file.weights[l].len() != rows * cols {
                return Err(Error::InvalidInput(format!(
                    "layer {l} expects {} weights, file has {}",
                    rows * cols,
                    file.weights[l].len()
                )));
            }
            weights.push(DMatrix::from_row_slice(rows, cols, &file.weights[l]));
            if file.biases[l].len() != rows {
                return Err(Error::InvalidInput(format!(
                    "layer {l} expects {rows} biases, file has {}",
                    file.biases[l].len()
                )));
            }
            biases.push(DVector::from_vec(file.biases[l].clone()));
        }
        let net = MlpNetwork {
            layer_sizes: file.layer_sizes,
            weights,
            biases,
            input_norm: file.input_norm,
            output_norm: file.output_norm,
            meta: file.meta,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }
}

/// On-disk model: weights row-major per layer, biases per layer,
/// normalization maps and training provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_norm: AffineNorm,
    pub output_norm: AffineNorm,
    pub meta: ModelMeta,
}

/// Surrogate stress: flatten `F_M` row-major, evaluate the network,
/// reshape to a tensor.
pub fn surrogate_pk(net: &MlpNetwork, f_m: Tensor2) -> Result<Tensor2> {
    let det = f_m.det();
    if !(det > 0.0) {
        return Err(Error::InvalidDeformation { det });
    }
    let out = net.forward(&f_m.to_flat())?;
    let arr: [f64; 4] = out.try_into().map_err(|_| Error::ShapeError {
        expected: 4,
        got: 0,
    })?;
    Ok(Tensor2::from_flat(arr))
}

/// Surrogate tangent `∂P/∂F` by central finite differences of
/// [`surrogate_pk`] with step `h`.
pub fn surrogate_tangent(net: &MlpNetwork, f_m: Tensor2, h: f64) -> Result<Tensor4> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "FD step must be positive, got {h}"
        )));
    }
    let mut t = Tensor4::ZERO;
    for k in 0..2 {
        for l in 0..2 {
            let mut fp = f_m;
            fp.set(k, l, f_m.get(k, l) + h);
            let mut fm = f_m;
            fm.set(k, l, f_m.get(k, l) - h);
            let pp = surrogate_pk(net, fp)?;
            let pm = surrogate_pk(net, fm)?;
            for i in 0..2 {
                for j in 0..2 {
                    t.c[i][j][k][l] = (pp.get(i, j) - pm.get(i, j)) / (2.0 * h);
                }
            }
        }
    }
    Ok(t)
}

/// Default finite-difference step for the surrogate tangent:
/// `1e-5 · max(1, ‖F‖)`.
pub fn default_surrogate_step(f_m: &Tensor2) -> f64 {
    1e-5 * f_m.norm().max(1.0)
}
