use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngSeed};
use crate::nn::Dataset;

/// Radius of the circle the blob centers sit on.
const BLOB_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Isotropic Gaussian clusters centered evenly on a circle.
    Blobs,
    /// Interleaved half-circle arcs; two classes give the usual two moons.
    Moons,
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::Moons => "moons",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "blobs" => Ok(SyntheticKind::Blobs),
            "moons" => Ok(SyntheticKind::Moons),
            other => Err(Error::InvalidConfig(format!("unknown synthetic dataset {other:?}"))),
        }
    }
}

/// Labeled 2-D dataset. Sample `j` belongs to class `j % classes`, so class
/// counts differ by at most one. Rows are shuffled afterwards.
pub fn gen_synthetic(
    kind: SyntheticKind,
    samples: usize,
    classes: usize,
    noise: f64,
    seed: RngSeed,
) -> Result<Dataset> {
    if classes < 2 || samples < classes {
        return Err(Error::InvalidConfig(format!(
            "need samples >= classes >= 2, got samples={samples} classes={classes}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = seed.rng();
    let mut points = Vec::with_capacity(samples);
    for j in 0..samples {
        let c = j % classes;
        let (x, y) = match kind {
            SyntheticKind::Blobs => {
                let angle = 2.0 * PI * c as f64 / classes as f64;
                (BLOB_RADIUS * angle.cos(), BLOB_RADIUS * angle.sin())
            }
            SyntheticKind::Moons => {
                let t: f64 = rng.gen_range(0.0..PI);
                if c % 2 == 0 {
                    (c as f64 + t.cos(), t.sin())
                } else {
                    (c as f64 - t.cos(), 0.5 - t.sin())
                }
            }
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        points.push((x + noise * nx, y + noise * ny, c));
    }
    // Fisher-Yates with the same stream keeps the whole draw seed-determined.
    for i in (1..points.len()).rev() {
        let k = rng.gen_range(0..=i);
        points.swap(i, k);
    }
    let inputs = Matrix::from_vec(samples, 2, points.iter().flat_map(|&(x, y, _)| [x, y]).collect())?;
    let labels: Vec<usize> = points.iter().map(|p| p.2).collect();
    Dataset::from_labels(inputs, &labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        for kind in [SyntheticKind::Blobs, SyntheticKind::Moons] {
            assert_eq!(
                gen_synthetic(kind, 50, 3, 0.2, RngSeed(4)).unwrap(),
                gen_synthetic(kind, 50, 3, 0.2, RngSeed(4)).unwrap()
            );
        }
    }

    #[test]
    fn balanced_classes() {
        let d = gen_synthetic(SyntheticKind::Moons, 101, 4, 0.1, RngSeed(1)).unwrap();
        let mut counts = [0usize; 4];
        for l in d.labels() {
            counts[l] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(gen_synthetic(SyntheticKind::Blobs, 10, 1, 0.0, RngSeed(0)).is_err());
        assert!(gen_synthetic(SyntheticKind::Blobs, 2, 3, 0.0, RngSeed(0)).is_err());
        assert!(gen_synthetic(SyntheticKind::Blobs, 10, 2, -1.0, RngSeed(0)).is_err());
    }
}
