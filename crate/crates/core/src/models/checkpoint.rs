use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Detector, EncoderKind};
use crate::error::{Result, SanError};
use crate::numerics::{ParamGroup, Tensor};

pub const CHECKPOINT_FORMAT: &str = "san-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    encoder: EncoderKind,
    d_in: usize,
    d_h: usize,
    seed: u64,
    n_params: usize,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRecord {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Serialized detector: a header line followed by one line per parameter
/// tensor. Values round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub detector: Detector,
    /// Free-form provenance, e.g. the resolved training configuration.
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(detector: Detector, meta: serde_json::Value) -> Self {
        Checkpoint { detector, meta }
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let d = &self.detector;
        let header = Header {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            encoder: d.arch.kind,
            d_in: d.arch.d_in,
            d_h: d.arch.d_h,
            seed: d.seed,
            n_params: d.params.len(),
            meta: self.meta.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header)?)?;
        for e in d.params.entries() {
            let rec = ParamRecord {
                name: e.name.clone(),
                group: e.group,
                shape: e.value.shape().to_vec(),
                values: e.value.values().to_vec(),
            };
            writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        }
        w.flush()
    }

    pub fn from_reader<R: std::io::Read>(r: R, source: &str) -> Result<Checkpoint> {
        let parse = |line: usize, e: serde_json::Error| SanError::Parse {
            location: format!("{source}:{line}"),
            message: e.to_string(),
        };
        let mut lines = BufReader::new(r).lines();
        let first = lines
            .next()
            .ok_or_else(|| SanError::Parse {
                location: source.into(),
                message: "empty checkpoint".into(),
            })?
            .map_err(|e| SanError::io(source, e))?;
        let header: Header = serde_json::from_str(&first).map_err(|e| parse(1, e))?;
        if header.format != CHECKPOINT_FORMAT || header.version != 1 {
            return Err(SanError::Parse {
                location: format!("{source}:1"),
                message: format!("unsupported checkpoint {} v{}", header.format, header.version),
            });
        }
        let arch = Architecture::new(header.encoder, header.d_in, header.d_h)?;
        // The layout must match a fresh initialization exactly.
        let mut params = arch.init_params(header.seed);
        let mut seen = 0;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| SanError::io(source, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ParamRecord = serde_json::from_str(&line).map_err(|e| parse(i + 2, e))?;
            let id = params.find(&rec.name).ok_or_else(|| {
                SanError::Data(format!("{source}: unexpected parameter {} for {}", rec.name, header.encoder))
            })?;
            if params.entry(id).group != rec.group {
                return Err(SanError::Data(format!("{source}: parameter {} has the wrong group", rec.name)));
            }
            params.set(id, Tensor::new(rec.shape, rec.values)?)?;
            seen += 1;
        }
        if seen != params.len() || header.n_params != params.len() {
            return Err(SanError::Data(format!(
                "{source}: expected {} parameter tensors, found {seen}",
                params.len()
            )));
        }
        Ok(Checkpoint {
            detector: Detector {
                arch,
                params,
                seed: header.seed,
            },
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| SanError::io(path, e))?;
        self.to_writer(BufWriter::new(f)).map_err(|e| SanError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| SanError::io(path, e))?;
        Checkpoint::from_reader(f, &path.display().to_string())
    }
}
