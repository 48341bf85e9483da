//! Text formats. Every float is written with 17 significant digits, which
//! round-trips any `f64` exactly; parsing uses serde_json's exact float path.

use std::io::{self, Write};
use std::path::Path;

use hardlabel_core::linalg::Matrix;
use hardlabel_core::{Architecture, Layer, ModelParameters};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, Serializer};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Compact JSON with `{:.16e}` floats.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, serde_json::Error> {
    let mut out = Vec::new();
    value.serialize(&mut Serializer::with_formatter(&mut out, FullPrecision))?;
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFile {
    /// Row-major, one row per neuron of this layer.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dims: Vec<usize>,
    pub layers: Vec<LayerFile>,
}

impl From<&ModelParameters> for ModelFile {
    fn from(m: &ModelParameters) -> Self {
        Self {
            dims: m.arch().dims().to_vec(),
            layers: m
                .layers()
                .iter()
                .map(|l| LayerFile {
                    weights: (0..l.weights.rows())
                        .map(|r| l.weights.row(r).to_vec())
                        .collect(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelFile> for ModelParameters {
    type Error = hardlabel_core::Error;

    fn try_from(f: ModelFile) -> Result<Self, Self::Error> {
        let arch = Architecture::new(f.dims)?;
        let expected = arch.dims().len() - 1;
        if f.layers.len() != expected {
            return Err(hardlabel_core::Error::Shape {
                expected,
                found: f.layers.len(),
            });
        }
        let mut layers = Vec::with_capacity(expected);
        for (l, w) in f.layers.into_iter().zip(arch.dims().windows(2)) {
            if l.weights.len() != w[1] {
                return Err(hardlabel_core::Error::Shape {
                    expected: w[1],
                    found: l.weights.len(),
                });
            }
            if let Some(bad) = l.weights.iter().find(|r| r.len() != w[0]) {
                return Err(hardlabel_core::Error::Shape {
                    expected: w[0],
                    found: bad.len(),
                });
            }
            layers.push(Layer {
                weights: Matrix::from_rows(&l.weights),
                bias: l.bias,
            });
        }
        ModelParameters::new(arch, layers)
    }
}

/// Model file text: the header, then one line per layer.
pub fn model_to_string(m: &ModelParameters) -> Result<String, serde_json::Error> {
    let f = ModelFile::from(m);
    let mut s = format!("{{\"dims\":{},\"layers\":[\n", to_json(&f.dims)?);
    for (i, l) in f.layers.iter().enumerate() {
        s.push_str(&to_json(l)?);
        s.push_str(if i + 1 == f.layers.len() { "\n" } else { ",\n" });
    }
    s.push_str("]}\n");
    Ok(s)
}

pub fn parse_model(text: &str) -> Result<ModelParameters, CliError> {
    let f: ModelFile = serde_json::from_str(text)?;
    Ok(ModelParameters::try_from(f)?)
}

pub fn read_model(path: &Path) -> Result<ModelParameters, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    let f: ModelFile = serde_json::from_str(&text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ModelParameters::try_from(f)?)
}

pub fn write_model(path: &Path, m: &ModelParameters) -> Result<(), CliError> {
    std::fs::write(path, model_to_string(m)?).map_err(CliError::io(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(
        &std::fs::read(path).map_err(CliError::io(path))?,
    ))
}

/// Parses `"d0-d1-…-dk+1"`.
pub fn parse_arch(spec: &str) -> Result<Architecture, CliError> {
    let dims: Result<Vec<usize>, _> = spec.trim().split('-').map(str::parse::<usize>).collect();
    let dims = dims.map_err(|_| CliError::ArchSpec(spec.to_string()))?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(CliError::ArchSpec(spec.to_string()));
    }
    Ok(Architecture::new(dims)?)
}
