//! Line-oriented corpus files.
//!
//! The first line is a manifest object
//! `{"format":"san-corpus","version":1,"d_in":D,"count":N}`; each further
//! line is one sample:
//!
//! ```text
//! {"id":"s1","label":"fake","event":"e0","x":[..],
//!  "tree":{"root_id":"n0","nodes":[["n0",0,[..]],..],"edges":[["n0","n1"],..]}}
//! ```
//!
//! `event` and `tree` are optional. An empty file is an empty corpus.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sample::{Label, NewsSample};
use super::tree::{PropagationTree, TreeNode};
use crate::error::{Result, SanError};

pub const CORPUS_FORMAT: &str = "san-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub d_in: usize,
    pub count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRecord {
    root_id: String,
    nodes: Vec<(String, i64, Vec<f64>)>,
    edges: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: String,
    label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    event: Option<String>,
    x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tree: Option<TreeRecord>,
}

impl SampleRecord {
    fn from_sample(s: &NewsSample) -> Self {
        SampleRecord {
            id: s.id.clone(),
            label: s.label,
            event: s.event.clone(),
            x: s.x.clone(),
            tree: s.tree.as_ref().map(|t| TreeRecord {
                root_id: t.root_node().id.clone(),
                nodes: t
                    .nodes()
                    .iter()
                    .map(|n| (n.id.clone(), n.timestamp_order, n.features.clone()))
                    .collect(),
                edges: t.edge_ids(),
            }),
        }
    }

    fn into_sample(self, d_in: usize) -> Result<NewsSample> {
        if self.x.len() != d_in {
            return Err(SanError::Data(format!(
                "sample {} has {} content features, manifest says {d_in}",
                self.id,
                self.x.len()
            )));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(SanError::Data(format!("sample {} has non-finite content features", self.id)));
        }
        let tree = match self.tree {
            None => None,
            Some(rec) => {
                let nodes = rec
                    .nodes
                    .into_iter()
                    .map(|(id, timestamp_order, features)| TreeNode {
                        id,
                        timestamp_order,
                        features,
                    })
                    .collect();
                let tree = PropagationTree::new(&self.id, nodes, &rec.edges, &rec.root_id)?;
                if tree.feature_dim() != d_in {
                    return Err(SanError::Structure {
                        sample: self.id.clone(),
                        message: format!("node features have dimension {}, expected {d_in}", tree.feature_dim()),
                    });
                }
                if tree.root_node().features != self.x {
                    return Err(SanError::Structure {
                        sample: self.id.clone(),
                        message: "root features differ from content features x".into(),
                    });
                }
                Some(tree)
            }
        };
        Ok(NewsSample {
            id: self.id,
            x: self.x,
            tree,
            label: self.label,
            event: self.event,
        })
    }
}

/// Parses a corpus from any reader. `source` is used in error locations.
pub fn read_corpus<R: Read>(reader: R, source: &str) -> Result<Vec<NewsSample>> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let io_err = |e: std::io::Error| SanError::io(source, e);
    let manifest = loop {
        match lines.next() {
            None => return Ok(Vec::new()),
            Some((_, line)) if line.as_ref().map(|l| l.trim().is_empty()).unwrap_or(false) => continue,
            Some((n, line)) => {
                let line = line.map_err(io_err)?;
                let m: CorpusManifest = serde_json::from_str(&line).map_err(|e| SanError::Parse {
                    location: format!("{source}:{}", n + 1),
                    message: format!("bad manifest: {e}"),
                })?;
                if m.format != CORPUS_FORMAT || m.version != CORPUS_VERSION {
                    return Err(SanError::Parse {
                        location: format!("{source}:{}", n + 1),
                        message: format!("unsupported format {} v{}", m.format, m.version),
                    });
                }
                break m;
            }
        }
    };
    let mut samples = Vec::with_capacity(manifest.count);
    let mut seen = std::collections::HashSet::new();
    for (n, line) in lines {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| SanError::Parse {
            location: format!("{source}:{}", n + 1),
            message: e.to_string(),
        })?;
        let sample = record.into_sample(manifest.d_in)?;
        if !seen.insert(sample.id.clone()) {
            return Err(SanError::Data(format!("duplicate sample id {}", sample.id)));
        }
        samples.push(sample);
    }
    if samples.len() != manifest.count {
        return Err(SanError::Data(format!(
            "{source}: manifest declares {} samples, found {}",
            manifest.count,
            samples.len()
        )));
    }
    Ok(samples)
}

/// Writes a corpus; an empty slice produces an empty file.
pub fn write_corpus<W: Write>(mut writer: W, samples: &[NewsSample]) -> std::io::Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    let manifest = CorpusManifest {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        d_in: first.x.len(),
        count: samples.len(),
    };
    writeln!(writer, "{}", serde_json::to_string(&manifest)?)?;
    for s in samples {
        writeln!(writer, "{}", serde_json::to_string(&SampleRecord::from_sample(s))?)?;
    }
    writer.flush()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<NewsSample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| SanError::io(path, e))?;
    read_corpus(file, &path.display().to_string())
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[NewsSample]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| SanError::io(path, e))?;
    write_corpus(std::io::BufWriter::new(file), samples).map_err(|e| SanError::io(path, e))
}
