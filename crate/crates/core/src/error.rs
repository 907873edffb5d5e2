//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A deformation gradient with non-positive determinant was encountered.
    #[error("invalid deformation gradient: det F = {det} (must be > 0)")]
    InvalidDeformation { det: f64 },

    /// An element turned inside out (det F <= 0 at a Gauss point).
    #[error("element {element} inverted: det F = {det} at a Gauss point")]
    ElementInversion { element: usize, det: f64 },

    /// Malformed mesh (ids, connectivity, boundary set or reference geometry).
    #[error("invalid mesh: {0}")]
    MeshInvalid(String),

    /// A mesh handed to periodic boundary conditions lacks mirror-image node pairs.
    #[error("mesh is not periodic: {0}")]
    MeshNotPeriodic(String),

    /// Invalid or inconsistent constraint set.
    #[error("constraint error: {0}")]
    ConstraintError(String),

    /// Linear system is singular to working precision.
    #[error("singular system: zero pivot at index {pivot}")]
    SingularSystem { pivot: usize },

    /// Newton iteration exhausted its iteration budget.
    #[error("Newton solve did not converge after {} iterations (last residual {:.3e})",
            residual_history.len(), residual_history.last().copied().unwrap_or(f64::NAN))]
    NonConvergence { residual_history: Vec<f64> },

    /// Network input/output length does not match the layer sizes.
    #[error("shape mismatch: expected length {expected}, got {got}")]
    ShapeError { expected: usize, got: usize },

    /// Training loss became non-finite.
    #[error("training diverged: loss is not finite at iteration {iteration}")]
    TrainingDiverged { iteration: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    /// Deformation gradient sampling rejects (almost) every draw.
    #[error("sampling infeasible: rejection rate exceeds 99% (amplitude {amplitude}, min_det {min_det})")]
    SamplingInfeasible { amplitude: f64, min_det: f64 },

    /// Too many RVE solves failed while generating a dataset.
    #[error("dataset generation failed: {failed} of {total} samples did not converge")]
    DatasetGenerationFailed {
        failed: usize,
        total: usize,
        diagnostics: Vec<(usize, String)>,
    },

    /// Two simulation results cannot be compared.
    #[error("incompatible results: {0}")]
    IncompatibleResults(String),

    /// Invalid parameter or configuration value.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}
