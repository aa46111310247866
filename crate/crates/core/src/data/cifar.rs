//! CIFAR-100 binary format.
//!
//! Each record is 3074 bytes: coarse label, fine label, then the red, green
//! and blue 32×32 planes in row-major order. Features keep that planar
//! channel-major layout, scaled to `[0, 1]`.

use std::path::Path;

use super::LabeledInstance;
use crate::error::{Error, Result};

pub const RECORD_BYTES: usize = 3074;
pub const PIXELS: usize = 3072;
pub const SIDE: usize = 32;
pub const NUM_COARSE: usize = 20;
pub const NUM_FINE: usize = 100;
pub const TRAIN_RECORDS: usize = 50_000;
pub const TEST_RECORDS: usize = 10_000;

pub fn parse_cifar100(bytes: &[u8]) -> Result<Vec<LabeledInstance>> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Format(format!(
            "CIFAR-100 file length {} is not a positive multiple of {RECORD_BYTES}",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            let (coarse, fine) = (rec[0] as usize, rec[1] as usize);
            if coarse >= NUM_COARSE {
                return Err(Error::CorruptRecord {
                    index,
                    msg: format!("coarse label {coarse} >= {NUM_COARSE}"),
                });
            }
            if fine >= NUM_FINE {
                return Err(Error::CorruptRecord {
                    index,
                    msg: format!("fine label {fine} >= {NUM_FINE}"),
                });
            }
            Ok(LabeledInstance {
                features: rec[2..].iter().map(|&b| f64::from(b) / 255.0).collect(),
                fine_label: fine,
                super_label: coarse,
            })
        })
        .collect()
}

pub fn read_cifar100(path: &Path) -> Result<Vec<LabeledInstance>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar100(&bytes)
}

/// Loads the train and test files. Record counts are not forced to the
/// standard 50,000 / 10,000 so that subsets can be used.
pub fn load_cifar100(
    train_path: &Path,
    test_path: &Path,
) -> Result<(Vec<LabeledInstance>, Vec<LabeledInstance>)> {
    Ok((read_cifar100(train_path)?, read_cifar100(test_path)?))
}

/// Serializes one record; pixels must already be bytes in planar RGB order.
pub fn encode_record(coarse: u8, fine: u8, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != PIXELS {
        return Err(Error::Format(format!(
            "record needs {PIXELS} pixel bytes, got {}",
            pixels.len()
        )));
    }
    let mut rec = Vec::with_capacity(RECORD_BYTES);
    rec.push(coarse);
    rec.push(fine);
    rec.extend_from_slice(pixels);
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_file_is_rejected() {
        assert!(matches!(parse_cifar100(&[0u8; 3073]), Err(Error::Format(_))));
        assert!(matches!(parse_cifar100(&[]), Err(Error::Format(_))));
    }

    #[test]
    fn bad_labels_are_corrupt_records() {
        let ok = encode_record(1, 2, &[0; PIXELS]).unwrap();
        let bad = encode_record(1, 100, &[0; PIXELS]).unwrap();
        let file = [ok, bad].concat();
        match parse_cifar100(&file) {
            Err(Error::CorruptRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected corrupt record, got {other:?}"),
        }
        let bad_coarse = encode_record(20, 0, &[0; PIXELS]).unwrap();
        assert!(parse_cifar100(&bad_coarse).is_err());
    }
}
