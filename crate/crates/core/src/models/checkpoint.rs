use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AggregatorConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::tensor::Params;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub aggregator: Option<AggregatorConfig>,
}

/// Parameters plus the configs needed to rebuild and shape-check them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub header: CheckpointHeader,
    pub params: Params,
}

impl ModelCheckpoint {
    pub fn new(header: CheckpointHeader, params: Params) -> Result<Self> {
        let ckpt = Self { header, params };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Encoder-only checkpoint with every non-encoder parameter dropped.
    pub fn encoder_only(encoder: EncoderConfig, params: &Params) -> Result<Self> {
        let params = params.with_prefix(&format!("{}.", EncoderConfig::PREFIX));
        Self::new(
            CheckpointHeader {
                encoder,
                aggregator: None,
            },
            params,
        )
    }

    /// Checks that parameter names and shapes are exactly those the header's
    /// configs would initialize.
    pub fn validate(&self) -> Result<()> {
        self.header.encoder.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut expected = self.header.encoder.init(&mut rng);
        if let Some(agg) = &self.header.aggregator {
            expected.extend(agg.init(&mut rng)?);
        }
        let want: BTreeMap<&String, &[usize]> = expected.iter().map(|(k, v)| (k, v.shape())).collect();
        let have: BTreeMap<&String, &[usize]> = self.params.iter().map(|(k, v)| (k, v.shape())).collect();
        if want != have {
            let missing: Vec<_> = want.keys().filter(|k| !have.contains_key(*k)).collect();
            let extra: Vec<_> = have.keys().filter(|k| !want.contains_key(*k)).collect();
            let mismatched: Vec<_> = want
                .iter()
                .filter(|(k, s)| have.get(*k).is_some_and(|h| h != *s))
                .map(|(k, _)| k)
                .collect();
            return Err(Error::Format(format!(
                "checkpoint does not match header: missing {missing:?}, unexpected {extra:?}, wrong shape {mismatched:?}"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::AggregatorKind;
    use crate::tensor::Tensor;

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            encoder: EncoderConfig {
                input_dim: 4,
                hidden_dims: vec![6],
                embed_dim: 3,
            },
            aggregator: Some(AggregatorConfig::new(AggregatorKind::SetTransformer, 3, 8, 2)),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let h = header();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = h.encoder.init(&mut rng);
        p.extend(h.aggregator.as_ref().unwrap().init(&mut rng).unwrap());
        let ckpt = ModelCheckpoint::new(h, p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        for ((_, a), (_, b)) in back.params.iter().zip(ckpt.params.iter()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let h = header();
        let mut p = h.encoder.init(&mut ChaCha8Rng::seed_from_u64(0));
        assert!(ModelCheckpoint::new(h.clone(), p.clone()).is_err());
        let enc = ModelCheckpoint::encoder_only(h.encoder.clone(), &p).unwrap();
        assert!(enc.header.aggregator.is_none());
        p.insert("encoder.0.bias", Tensor::vector(vec![0.0; 5]).unwrap());
        assert!(matches!(
            ModelCheckpoint::encoder_only(h.encoder, &p),
            Err(Error::Format(_))
        ));
    }
}
