//! Feature bundles: trained features, targets, and the trained output
//! weight of any model, so the ReDense head can be fitted without the
//! model itself.
//!
//! Layout (little-endian):
//!
//! ```text
//! "RDFB"            4 bytes
//! version           u32 = 1
//! features          u64 rows, u64 cols, rows*cols f64   (J x n)
//! targets           u64 rows, u64 cols, rows*cols f64   (J x Q)
//! output weight     u64 rows, u64 cols, rows*cols f64   (Q x n)
//! metadata count    u32
//! per entry         u32 len + UTF-8 key, u32 len + UTF-8 value
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const BUNDLE_MAGIC: &[u8; 4] = b"RDFB";
pub const BUNDLE_VERSION: u32 = 1;

/// Metadata key for the base model's training loss under its own loss.
pub const META_BASE_TRAIN_LOSS: &str = "base_train_loss";
/// Metadata key for the loss the base model was trained with.
pub const META_BASE_LOSS: &str = "base_loss";
pub const META_SOURCE_MODEL: &str = "source_model";
/// Metadata key for the cross-entropy of the stored head on these features.
pub const META_OLD_LOSS: &str = "old_loss";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub features: Matrix,
    pub targets: Matrix,
    pub output_weight: Matrix,
    pub metadata: BTreeMap<String, String>,
}

impl FeatureBundle {
    pub fn new(
        features: Matrix,
        targets: Matrix,
        output_weight: Matrix,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let b = Self {
            features,
            targets,
            output_weight,
            metadata,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.rows() != self.targets.rows() {
            return Err(Error::mismatch(
                "bundle targets",
                self.features.shape(),
                self.targets.shape(),
            ));
        }
        if self.output_weight.cols() != self.features.cols() || self.output_weight.rows() != self.targets.cols() {
            return Err(Error::mismatch(
                "bundle output weight",
                self.output_weight.shape(),
                (self.targets.cols(), self.features.cols()),
            ));
        }
        if !(self.features.is_finite() && self.targets.is_finite() && self.output_weight.is_finite()) {
            return Err(Error::NonFinite("bundle"));
        }
        for key in [META_BASE_TRAIN_LOSS, META_OLD_LOSS] {
            if let Some(v) = self.metadata.get(key) {
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() && x >= 0.0 => {}
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "metadata {key}={v:?} is not a finite non-negative number"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    /// `(J, n, Q)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.features.rows(), self.features.cols(), self.targets.cols())
    }

    pub fn base_train_loss(&self) -> Option<f64> {
        self.metadata.get(META_BASE_TRAIN_LOSS).and_then(|v| v.parse().ok())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(BUNDLE_MAGIC);
        w.u32(BUNDLE_VERSION);
        w.matrix(&self.features);
        w.matrix(&self.targets);
        w.matrix(&self.output_weight);
        w.u32(self.metadata.len() as u32);
        for (k, v) in &self.metadata {
            w.string(k);
            w.string(v);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "feature bundle");
        r.magic(BUNDLE_MAGIC)?;
        let version = r.u32()?;
        if version != BUNDLE_VERSION {
            return Err(Error::Version {
                what: "feature bundle",
                found: version,
                expected: BUNDLE_VERSION,
            });
        }
        let features = r.matrix()?;
        let targets = r.matrix()?;
        let output_weight = r.matrix()?;
        let count = r.u32()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..count {
            let at = r.offset();
            let k = r.string()?;
            let v = r.string()?;
            if metadata.insert(k.clone(), v).is_some() {
                return Err(Error::Format {
                    what: "feature bundle",
                    offset: at,
                    message: format!("duplicate metadata key {k:?}"),
                });
            }
        }
        r.finish()?;
        Self::new(features, targets, output_weight, metadata)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_feature_bundle(path: impl AsRef<Path>) -> Result<FeatureBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureBundle::from_bytes(&bytes)
}
