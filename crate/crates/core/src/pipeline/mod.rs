//! Coarse-to-fine transfer end to end: pretrain an encoder from set labels,
//! freeze it, embed fine-labelled data and fit few-shot classifiers on top.

mod fine;
mod pretrain;

use serde::{Deserialize, Serialize};

pub use fine::{
    build_dictionary, embed_fine, embed_instances, evaluate_encoder, fit_fine, predict, FinePredictor,
    FinePredictorSpec, EMBED_NORM_EPS,
};
pub use pretrain::{pretrain_coarse, HeadSpec, OptimSpec, PretrainMethod, PretrainOutput, PretrainSpec};

/// Everything needed to replay a pretraining run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub spec: PretrainSpec,
    pub data_seed: u64,
    pub coarse_seed: u64,
    pub dataset_digests: Vec<(String, String)>,
    pub final_coarse_loss: Option<f64>,
    pub steps: usize,
    pub checkpoint: Option<String>,
    pub version: String,
    pub created_unix: u64,
}
