//! Offline phase: sample deformation gradients around the identity and
//! solve the cell problem for each to build the training dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::train::Dataset;
use crate::rve::{homogenized_pk, RveProblem};
use crate::tensor::Tensor2;

/// Box sampling around the identity: `F = I + δ` with each `δ` component
/// i.i.d. uniform in `[-amplitude, amplitude]`, rejecting draws with
/// `det F < min_det`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSpec {
    pub n_samples: usize,
    pub amplitude: f64,
    pub min_det: f64,
    pub seed: u64,
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be >= 1".into()));
        }
        if !(self.amplitude >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "amplitude must be >= 0, got {}",
                self.amplitude
            )));
        }
        if !(self.min_det > 0.0 && self.min_det < 1.0) {
            return Err(Error::InvalidInput(format!(
                "min_det must lie in (0, 1), got {}",
                self.min_det
            )));
        }
        Ok(())
    }
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            n_samples: 500,
            amplitude: 0.15,
            min_det: 0.5,
            seed: 0,
        }
    }
}

/// A rejected draw is retried up to this many times; past it the rejection
/// rate exceeds 99% and sampling is infeasible.
const MAX_DRAWS_PER_SAMPLE: usize = 100;

/// Draw deformation gradients per the sampling spec. The identity is
/// always the first sample; output is deterministic in the seed.
pub fn sample_deformation_gradients(spec: &SamplingSpec) -> Result<Vec<Tensor2>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.n_samples);
    out.push(Tensor2::IDENTITY);
    while out.len() < spec.n_samples {
        let mut accepted = None;
        for _ in 0..MAX_DRAWS_PER_SAMPLE {
            let a = spec.amplitude;
            let draw = Tensor2::new(
                1.0 + rng.gen_range(-a..=a),
                rng.gen_range(-a..=a),
                rng.gen_range(-a..=a),
                1.0 + rng.gen_range(-a..=a),
            );
            if draw.det() >= spec.min_det {
                accepted = Some(draw);
                break;
            }
        }
        match accepted {
            Some(f) => out.push(f),
            None => {
                return Err(Error::SamplingInfeasible {
                    amplitude: spec.amplitude,
                    min_det: spec.min_det,
                })
            }
        }
    }
    Ok(out)
}

/// Outcome of dataset generation: converged rows in input order plus
/// per-sample failure diagnostics for the skipped ones.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub failures: Vec<(usize, String)>,
    pub n_samples: usize,
}

impl GeneratedDataset {
    pub fn n_converged(&self) -> usize {
        self.dataset.len()
    }
}

/// Solve the cell problem for every sampled deformation gradient and
/// collect `(F, P)` rows in input order. Failed solves are skipped and
/// reported; more than 10% failures aborts with
/// [`Error::DatasetGenerationFailed`].
pub fn generate_dataset(
    rve: &RveProblem,
    samples: &[Tensor2],
    tol: f64,
    max_iter: usize,
) -> Result<GeneratedDataset> {
    let solve_one = |f_m: &Tensor2| -> std::result::Result<Tensor2, String> {
        rve.solve(*f_m, tol, max_iter)
            .map(|sol| homogenized_pk(&sol, rve))
            .map_err(|e| e.to_string())
    };

    #[cfg(feature = "parallel")]
    let results: Vec<std::result::Result<Tensor2, String>> = {
        use rayon::prelude::*;
        samples.par_iter().map(solve_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<std::result::Result<Tensor2, String>> =
        samples.iter().map(solve_one).collect();

    let mut dataset = Dataset::default();
    let mut failures = Vec::new();
    for (i, (f_m, res)) in samples.iter().zip(results).enumerate() {
        match res {
            Ok(p) => dataset.push(*f_m, p),
            Err(msg) => failures.push((i, msg)),
        }
    }
    if failures.len() * 10 > samples.len() {
        return Err(Error::DatasetGenerationFailed {
            failed: failures.len(),
            total: samples.len(),
            diagnostics: failures,
        });
    }
    Ok(GeneratedDataset {
        dataset,
        failures,
        n_samples: samples.len(),
    })
}
