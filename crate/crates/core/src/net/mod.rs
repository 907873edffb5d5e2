//! The machine-learning half: an MLP surrogate for the homogenized
//! constitutive response and its Levenberg-Marquardt trainer.

pub mod mlp;
pub mod train;

pub use mlp::{
    activation, default_surrogate_step, surrogate_pk, surrogate_tangent, AffineNorm, MlpNetwork,
    ModelFile, ModelMeta,
};
pub use train::{
    evaluate_mse, train_lm, train_lm_pairs, Dataset, DatasetRow, TrainingConfig, TrainingReport,
    CSV_HEADER,
};
