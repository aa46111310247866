use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledInstance;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_protocol, BaseDictionary, Classifier, ClassifierKind, ClassifierParams, EvalReport, LaConfig,
    ProtocolConfig,
};
use crate::models::EncoderConfig;
use crate::tensor::{norm, Params, Tensor};

pub const EMBED_NORM_EPS: f64 = 1e-12;

/// Frozen embeddings of `rows`, each scaled to unit length.
pub fn embed_fine<R: AsRef<[f64]>>(encoder: &EncoderConfig, params: &Params, rows: &[R]) -> Result<Tensor> {
    let mut z = encoder.embed(params, rows)?;
    let d = z.cols();
    for row in z.data_mut().chunks_mut(d) {
        let n = norm(row).max(EMBED_NORM_EPS);
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(z)
}

pub fn embed_instances(encoder: &EncoderConfig, params: &Params, data: &[LabeledInstance]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = data.iter().map(|i| i.features.as_slice()).collect();
    embed_fine(encoder, params, &rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinePredictorSpec {
    pub classifier: ClassifierKind,
    pub params: ClassifierParams,
    pub latent_augmentation: bool,
    pub la_count: usize,
}

impl FinePredictorSpec {
    pub fn new(classifier: ClassifierKind) -> Self {
        Self {
            classifier,
            params: ClassifierParams::default(),
            latent_augmentation: false,
            la_count: LaConfig::default().count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.lr.lambda < 0.0 || self.params.ridge_alpha < 0.0 {
            return Err(Error::Config("classifier regularization must be >= 0".into()));
        }
        Ok(())
    }
}

/// `f̂` fitted on embedded support rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FinePredictor {
    pub classifier: Classifier,
    /// Rows the classifier was fitted on (after any augmentation).
    pub fitted_rows: usize,
}

pub fn fit_fine(
    spec: &FinePredictorSpec,
    support: &Tensor,
    labels: &[usize],
    num_classes: usize,
    dict: Option<&BaseDictionary>,
    seed: u64,
) -> Result<FinePredictor> {
    spec.validate()?;
    let expanded;
    let (x, y) = if spec.latent_augmentation {
        let dict = dict.ok_or_else(|| Error::Config("latent augmentation requested without a base dictionary".into()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        expanded = dict.expand(support, labels, spec.la_count, &mut rng)?;
        (&expanded.0, expanded.1.as_slice())
    } else {
        (support, labels)
    };
    Ok(FinePredictor {
        classifier: Classifier::fit(spec.classifier, x, y, num_classes, &spec.params)?,
        fitted_rows: x.rows(),
    })
}

/// `f̂ ∘ ê` on raw query rows.
pub fn predict<R: AsRef<[f64]>>(
    fine: &FinePredictor,
    encoder: &EncoderConfig,
    params: &Params,
    queries: &[R],
) -> Result<Vec<usize>> {
    let z = embed_fine(encoder, params, queries)?;
    Ok(fine.classifier.predict(&z))
}

/// Base dictionary over embeddings of the pretraining instance pool.
pub fn build_dictionary(
    encoder: &EncoderConfig,
    params: &Params,
    pool: &[Vec<f64>],
    cfg: &LaConfig,
    seed: u64,
) -> Result<BaseDictionary> {
    let z = embed_fine(encoder, params, pool)?;
    BaseDictionary::build(&z, cfg, seed)
}

/// Embeds `test` once with the frozen encoder, then runs the meta-task protocol.
pub fn evaluate_encoder(
    encoder: &EncoderConfig,
    params: &Params,
    test: &[LabeledInstance],
    cfg: &ProtocolConfig,
    dict: Option<&BaseDictionary>,
    seed: u64,
) -> Result<EvalReport> {
    let z = embed_instances(encoder, params, test)?;
    let labels: Vec<usize> = test.iter().map(|i| i.fine_label).collect();
    evaluate_protocol(&z, &labels, cfg, dict, seed)
}
