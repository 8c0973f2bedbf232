//! End-to-end pipeline: synthetic data, the assembled model, two-stage
//! training, evaluation, uncertainty stratification, and ablation runs.

mod ablate;
mod adam;
mod eval;
mod model;
mod synth;
mod train;

pub use ablate::{run_ablation, AblateCell, AblateConfig, AblateReport, Comparison};
pub use adam::{adam_step, cosine_lr, AdamHyper, AdamState};
pub use eval::{evaluate, stratify_uncertainty, AuMetrics, EvalReport, FrameEval, StrataReport, Stratum};
pub use model::{Conditioning, EmbeddingMode, ForwardOptions, Model, ModelConfig, SequenceForward, Trainable};
pub use synth::{
    features_for_frame, generate_dataset, generate_sequence, Dataset, FeatureGen, Record,
    SequenceData, Split, SyntheticConfig,
};
pub use train::{au_weights_from_dataset, train_stage1, train_stage2, AuWeightMode, EpochLog, TrainConfig, TrainLog};

use crate::region::RegionError;
use crate::relation::RelationError;
use crate::motion::MotionError;
use crate::cvae::CvaeError;
use crate::evidence::EvidenceError;
use crate::loss::LossError;
use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid synthetic config: {0}")]
    BadConfig(String),
    #[error("training diverged at epoch {epoch}, sequence {seq}: loss = {loss}")]
    Diverged { epoch: usize, seq: u64, loss: f64 },
    #[error("dataset parse error at line {line}: {detail}")]
    DatasetParse { line: usize, detail: String },
    #[error("model is missing parameter '{0}'")]
    MissingParam(String),
    #[error("gradient/parameter shape mismatch for '{name}': {param:?} vs {grad:?}")]
    GradShape {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("need at least {need} frames, got {got}")]
    NotEnoughFrames { need: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Cvae(#[from] CvaeError),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
