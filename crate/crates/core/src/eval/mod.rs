//! Few-shot evaluation: classifiers fitted on frozen embeddings, latent
//! augmentation, and aggregate scores over sampled meta-tasks.

mod classifiers;
mod la;
mod metrics;
mod protocol;

pub use classifiers::{
    Classifier, ClassifierKind, ClassifierParams, LogisticRegression, LrConfig, NearestCentroid, RidgeClassifier,
};
pub use la::{kmeans, BaseDictionary, LaConfig};
pub use metrics::{accuracy, macro_f1, mean_ci95};
pub use protocol::{evaluate_protocol, run_task, task_seed, Arm, ArmSummary, EvalReport, ProtocolConfig, TaskScore};
