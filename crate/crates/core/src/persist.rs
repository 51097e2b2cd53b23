//! Model files and learning-curve CSVs.
//!
//! Model file layout (little-endian):
//!
//! ```text
//! "RDNM"         4 bytes
//! version        u32 = 1
//! header         u32 length + UTF-8 JSON architecture descriptor
//! parameters     raw f64 blocks in header order:
//!                  per hidden layer: weight (out x in), bias (out)
//!                  output weight (Q x n), output bias (Q)
//!                  ReDense block, if present: R (m x n), O (Q x 2m),
//!                  base output weight (Q x n), epsilon (1)
//! ```
//!
//! Either the network or the ReDense block may be absent: a head fitted on an
//! external feature bundle is stored without a network.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, RngSeed};
use crate::nn::{Activation, DenseLayer, Loss, MlpModel};
use crate::redense::RedenseLayer;

pub const MODEL_MAGIC: &[u8; 4] = b"RDNM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub network: Option<MlpModel>,
    /// Loss the network (or the external source model) was trained with.
    pub loss: Loss,
    pub redense: Option<RedenseLayer>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    network: Option<NetworkHeader>,
    loss: Loss,
    redense: Option<RedenseHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkHeader {
    input_dim: usize,
    layers: Vec<LayerHeader>,
    outputs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerHeader {
    inputs: usize,
    outputs: usize,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RedenseHeader {
    n: usize,
    m: usize,
    classes: usize,
    seed: RngSeed,
}

impl ModelFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            network: self.network.as_ref().map(|net| NetworkHeader {
                input_dim: net.input_dim(),
                layers: net
                    .layers()
                    .iter()
                    .map(|l| LayerHeader {
                        inputs: l.in_dim(),
                        outputs: l.out_dim(),
                        activation: l.activation,
                    })
                    .collect(),
                outputs: net.output_dim(),
            }),
            loss: self.loss,
            redense: self.redense.as_ref().map(|h| RedenseHeader {
                n: h.n(),
                m: h.m(),
                classes: h.classes(),
                seed: h.seed(),
            }),
        };
        let json = serde_json::to_string(&header).expect("header serializes");

        let mut w = Writer::default();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.string(&json);
        if let Some(net) = &self.network {
            for l in net.layers() {
                w.f64s(l.weight.as_slice());
                w.f64s(&l.bias);
            }
            w.f64s(net.output_weight().as_slice());
            w.f64s(net.output_bias());
        }
        if let Some(h) = &self.redense {
            w.f64s(h.projection().as_slice());
            w.f64s(h.output_weight().as_slice());
            w.f64s(h.base_output_weight().as_slice());
            w.f64(h.epsilon());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelFile> {
        let mut r = Reader::new(bytes, "model file");
        r.magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Version {
                what: "model file",
                found: version,
                expected: MODEL_VERSION,
            });
        }
        let header_at = r.offset();
        let json = r.string()?;
        let header: Header = serde_json::from_str(&json).map_err(|e| Error::Format {
            what: "model file",
            offset: header_at,
            message: format!("bad header: {e}"),
        })?;

        // Check the declared shapes against the payload before reading it.
        let declared = declared_len(&header).ok_or_else(|| r.error("declared shapes overflow"))?;
        let remaining = (bytes.len() as u64).saturating_sub(r.offset());
        if declared.checked_mul(8) != Some(remaining) {
            return Err(r.error(format!(
                "header declares {declared} parameters but {remaining} payload bytes follow"
            )));
        }

        let matrix = |rows: usize, cols: usize, r: &mut Reader<'_>| -> Result<Matrix> {
            Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)
        };
        let network = match &header.network {
            Some(nh) => {
                let mut layers = Vec::with_capacity(nh.layers.len());
                let mut expected_in = nh.input_dim;
                for lh in &nh.layers {
                    if lh.inputs != expected_in {
                        return Err(r.error(format!(
                            "layer expects {} inputs but previous width is {expected_in}",
                            lh.inputs
                        )));
                    }
                    let weight = matrix(lh.outputs, lh.inputs, &mut r)?;
                    let bias = r.f64s(lh.outputs)?;
                    layers.push(DenseLayer {
                        weight,
                        bias,
                        activation: lh.activation,
                    });
                    expected_in = lh.outputs;
                }
                let ow = matrix(nh.outputs, expected_in, &mut r)?;
                let ob = r.f64s(nh.outputs)?;
                Some(MlpModel::new(layers, ow, ob)?)
            }
            None => None,
        };
        let redense = match &header.redense {
            Some(rh) => {
                let projection = matrix(rh.m, rh.n, &mut r)?;
                let output_weight = matrix(rh.classes, 2 * rh.m, &mut r)?;
                let base = matrix(rh.classes, rh.n, &mut r)?;
                let epsilon = r.f64s(1)?[0];
                Some(RedenseLayer::from_parts(
                    projection,
                    epsilon,
                    output_weight,
                    base,
                    rh.seed,
                )?)
            }
            None => None,
        };
        r.finish()?;
        if let (Some(net), Some(h)) = (&network, &redense) {
            if net.feature_dim() + 1 != h.n() && net.feature_dim() != h.n() {
                return Err(Error::mismatch(
                    "model file redense block",
                    net.output_weight().shape(),
                    h.base_output_weight().shape(),
                ));
            }
        }
        Ok(ModelFile {
            network,
            loss: header.loss,
            redense,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }
}

fn declared_len(h: &Header) -> Option<u64> {
    let mut total: u64 = 0;
    let add = |t: &mut u64, a: usize, b: usize| -> Option<()> {
        *t = t.checked_add((a as u64).checked_mul(b as u64)?)?;
        Some(())
    };
    if let Some(nh) = &h.network {
        let mut fan_in = nh.input_dim;
        for l in &nh.layers {
            add(&mut total, l.outputs, l.inputs)?;
            add(&mut total, l.outputs, 1)?;
            fan_in = l.outputs;
        }
        add(&mut total, nh.outputs, fan_in)?;
        add(&mut total, nh.outputs, 1)?;
    }
    if let Some(rh) = &h.redense {
        add(&mut total, rh.m, rh.n)?;
        add(&mut total, rh.classes, rh.m.checked_mul(2)?)?;
        add(&mut total, rh.classes, rh.n)?;
        add(&mut total, 1, 1)?;
    }
    Some(total)
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    model.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelFile::from_bytes(&bytes)
}

/// One learning-curve row. Test columns are empty when no held-out set was
/// evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

pub const CURVE_HEADER: &str = "epoch,train_loss,test_loss,test_accuracy";

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// Writes `epoch,train_loss,test_loss,test_accuracy` with 17 significant digits.
pub fn write_curve(path: impl AsRef<Path>, rows: &[CurveRow]) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(Error::InvalidConfig("learning curve is empty".into()));
    }
    for row in rows {
        let vals = [Some(row.train_loss), row.test_loss, row.test_accuracy];
        if vals.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("learning curve"));
        }
    }
    let mut out = Vec::new();
    writeln!(out, "{CURVE_HEADER}").expect("vec write");
    for row in rows {
        writeln!(
            out,
            "{},{},{},{}",
            row.epoch,
            fmt_cell(Some(row.train_loss)),
            fmt_cell(row.test_loss),
            fmt_cell(row.test_accuracy)
        )
        .expect("vec write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<Vec<CurveRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |line: usize, msg: &str| Error::Format {
        what: "curve csv",
        offset: line as u64,
        message: msg.to_string(),
    };
    if lines.next() != Some(CURVE_HEADER) {
        return Err(bad(0, "missing header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 4 {
            return Err(bad(i + 1, "expected 4 columns"));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(i + 1, "bad number"))
            }
        };
        rows.push(CurveRow {
            epoch: cells[0].parse().map_err(|_| bad(i + 1, "bad epoch"))?,
            train_loss: opt(cells[1])?.ok_or_else(|| bad(i + 1, "missing train loss"))?,
            test_loss: opt(cells[2])?,
            test_accuracy: opt(cells[3])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sample_gaussian;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("redense-persist-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample_file() -> ModelFile {
        let net = MlpModel::init(3, &[4, 5], Activation::LeakyRelu { slope: 0.1 }, 2, RngSeed(8)).unwrap();
        let head = RedenseLayer::build(net.output_weight(), 5, 7, RngSeed(9)).unwrap();
        ModelFile {
            network: Some(net),
            loss: Loss::Huber { delta: 0.3 },
            redense: Some(head),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let path = tmp("model.rdnm");
        let file = sample_file();
        save_model(&path, &file).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, file);
        assert_eq!(loaded.to_bytes().unwrap(), fs::read(&path).unwrap());
    }

    #[test]
    fn loaded_forward_is_bit_exact() {
        let file = sample_file();
        let back = ModelFile::from_bytes(&file.to_bytes().unwrap()).unwrap();
        let x = sample_gaussian(4, 3, RngSeed(1));
        assert_eq!(
            back.network.unwrap().forward(&x).unwrap().logits,
            file.network.unwrap().forward(&x).unwrap().logits
        );
    }

    #[test]
    fn corrupted_shape_header_is_rejected() {
        let bytes = sample_file().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("\"outputs\":4").expect("layer header present");
        let mut corrupt = bytes.clone();
        corrupt[at + 10] = b'6';
        assert!(matches!(ModelFile::from_bytes(&corrupt), Err(Error::Format { .. })));
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = sample_file().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(
            ModelFile::from_bytes(&bytes),
            Err(Error::Version { found: 2, .. })
        ));
    }

    #[test]
    fn single_row_curve() {
        let path = tmp("one.csv");
        let rows = [CurveRow {
            epoch: 0,
            train_loss: 0.1,
            test_loss: Some(1.0 / 3.0),
            test_accuracy: Some(0.75),
        }];
        write_curve(&path, &rows).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert_eq!(read_curve(&path).unwrap(), rows);
    }

    #[test]
    fn curve_without_test_columns() {
        let path = tmp("notest.csv");
        let rows = [CurveRow {
            epoch: 3,
            train_loss: 2.5,
            test_loss: None,
            test_accuracy: None,
        }];
        write_curve(&path, &rows).unwrap();
        assert_eq!(read_curve(&path).unwrap(), rows);
    }

    #[test]
    fn non_finite_curve_rejected() {
        let rows = [CurveRow {
            epoch: 0,
            train_loss: f64::NAN,
            test_loss: None,
            test_accuracy: None,
        }];
        assert!(matches!(write_curve(tmp("nan.csv"), &rows), Err(Error::NonFinite(_))));
        assert!(write_curve(tmp("empty.csv"), &[]).is_err());
    }
}
