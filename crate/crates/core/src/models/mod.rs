//! Encoders mapping `(x, tree)` to a hidden representation, the veracity
//! classifier head, and the structure discriminator head.

mod checkpoint;
mod graph;

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
pub use graph::{directed_norm, neighborhoods, symmetric_norm, GraphBatch};

use crate::data::{Label, NewsSample};
use crate::error::{Result, SanError};
use crate::numerics::{softmax_rows, Neighborhoods, ParamGroup, ParamSets, SparseMatrix, Tape, Tensor, Var};

pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const GAT_HEADS: usize = 4;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Discriminator output column for "computed with a tree" (`y_d = 1`).
pub const WITH_STRUCTURE: usize = 0;
/// Discriminator output column for "content only" (`y_d = 0`).
pub const CONTENT_ONLY: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Two-layer perceptron over the source content only.
    Content,
    Gcn,
    Gat,
    /// Separate top-down and bottom-up GCN stacks.
    Bigcn,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [EncoderKind::Content, EncoderKind::Gcn, EncoderKind::Gat, EncoderKind::Bigcn];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Content => "content",
            EncoderKind::Gcn => "gcn",
            EncoderKind::Gat => "gat",
            EncoderKind::Bigcn => "bigcn",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = SanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "content" | "mlp" => Ok(EncoderKind::Content),
            "gcn" | "gcnfn" => Ok(EncoderKind::Gcn),
            "gat" => Ok(EncoderKind::Gat),
            "bigcn" => Ok(EncoderKind::Bigcn),
            other => Err(SanError::Config(format!(
                "unknown encoder {other:?}; expected content, gcn, gat or bigcn"
            ))),
        }
    }
}

/// Hidden representation of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenRep {
    pub h: Vec<f64>,
    pub has_structure: bool,
}

/// Outputs of both heads for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[p(fake), p(real)]`
    pub probs: [f64; 2],
    /// Probability the discriminator assigns to "computed with a tree".
    pub structure_prob: f64,
    pub hidden: HiddenRep,
}

impl Prediction {
    /// Arg-max label; ties go to `Fake`.
    pub fn label(&self) -> Label {
        if self.probs[1] > self.probs[0] {
            Label::Real
        } else {
            Label::Fake
        }
    }
}

/// Shape of a detector: which encoder and its dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub kind: EncoderKind,
    pub d_in: usize,
    pub d_h: usize,
}

fn layer(params: &mut ParamSets, rng: &mut ChaCha8Rng, prefix: &str, fan_in: usize, fan_out: usize) {
    params.add_glorot(ParamGroup::Encoder, format!("{prefix}.w"), fan_in, fan_out, rng);
    params.add_zeros(ParamGroup::Encoder, format!("{prefix}.b"), &[fan_out]);
}

impl Architecture {
    pub fn new(kind: EncoderKind, d_in: usize, d_h: usize) -> Result<Self> {
        if d_in == 0 || d_h == 0 {
            return Err(SanError::Config("d_in and d_h must be positive".into()));
        }
        if kind == EncoderKind::Gat && d_h % GAT_HEADS != 0 {
            return Err(SanError::Config(format!("gat needs d_h divisible by {GAT_HEADS}, got {d_h}")));
        }
        Ok(Architecture { kind, d_in, d_h })
    }

    /// Freshly initialized parameters: Glorot-uniform weights, zero biases,
    /// drawn in a fixed order (encoder, classifier, discriminator).
    pub fn init_params(&self, seed: u64) -> ParamSets {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSets::new();
        let (d_in, d_h) = (self.d_in, self.d_h);
        match self.kind {
            EncoderKind::Content => {
                layer(&mut p, &mut rng, "enc.mlp1", d_in, d_h);
                layer(&mut p, &mut rng, "enc.mlp2", d_h, d_h);
            }
            EncoderKind::Gcn => {
                layer(&mut p, &mut rng, "enc.gcn1", d_in, d_h);
                layer(&mut p, &mut rng, "enc.gcn2", d_h, d_h);
            }
            EncoderKind::Gat => {
                for (prefix, fan_in, heads) in [("enc.gat1", d_in, GAT_HEADS), ("enc.gat2", d_h, 1)] {
                    let f = d_h / heads;
                    p.add_glorot(ParamGroup::Encoder, format!("{prefix}.w"), fan_in, d_h, &mut rng);
                    for a in ["a_src", "a_dst"] {
                        let bound = (6.0 / (f + 1) as f64).sqrt();
                        let values = (0..heads * f)
                            .map(|_| rand::Rng::random_range(&mut rng, -bound..bound))
                            .collect();
                        p.add(
                            ParamGroup::Encoder,
                            format!("{prefix}.{a}"),
                            Tensor::new(vec![heads, f], values).expect("positive dims"),
                        );
                    }
                    p.add_zeros(ParamGroup::Encoder, format!("{prefix}.b"), &[d_h]);
                }
            }
            EncoderKind::Bigcn => {
                layer(&mut p, &mut rng, "enc.td1", d_in, d_h);
                layer(&mut p, &mut rng, "enc.td2", d_h, d_h);
                layer(&mut p, &mut rng, "enc.bu1", d_in, d_h);
                layer(&mut p, &mut rng, "enc.bu2", d_h, d_h);
                layer(&mut p, &mut rng, "enc.proj", 2 * d_h, d_h);
            }
        }
        p.add_glorot(ParamGroup::Classifier, "cls.w", d_h, 2, &mut rng);
        p.add_zeros(ParamGroup::Classifier, "cls.b", &[2]);
        p.add_glorot(ParamGroup::Discriminator, "disc.w", d_h, 2, &mut rng);
        p.add_zeros(ParamGroup::Discriminator, "disc.b", &[2]);
        p
    }

    pub fn batch(&self, samples: &[&NewsSample]) -> Result<GraphBatch> {
        GraphBatch::build(self.kind, self.d_in, samples)
    }

    fn p(&self, tape: &mut Tape, params: &ParamSets, name: &str) -> Result<Var> {
        let id = params.require(name)?;
        Ok(tape.param(params, id))
    }

    fn dense(&self, tape: &mut Tape, params: &ParamSets, prefix: &str, x: Var) -> Result<Var> {
        let w = self.p(tape, params, &format!("{prefix}.w"))?;
        let b = self.p(tape, params, &format!("{prefix}.b"))?;
        tape.affine(x, w, b)
    }

    fn gcn_stack(&self, tape: &mut Tape, params: &ParamSets, adj: &Rc<SparseMatrix>, prefix: &str, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 1..=2 {
            let w = self.p(tape, params, &format!("{prefix}{l}.w"))?;
            let b = self.p(tape, params, &format!("{prefix}{l}.b"))?;
            h = gcn_layer(tape, adj.clone(), h, w, b)?;
        }
        Ok(h)
    }

    /// Hidden representations `[batch, d_h]` for a prepared batch.
    pub fn encode(&self, tape: &mut Tape, params: &ParamSets, batch: &GraphBatch) -> Result<Var> {
        let x = tape.input(batch.features.clone());
        let missing = || SanError::Consistency("batch was built for a different encoder".into());
        match self.kind {
            EncoderKind::Content => {
                let h = self.dense(tape, params, "enc.mlp1", x)?;
                let h = tape.relu(h);
                let h = self.dense(tape, params, "enc.mlp2", h)?;
                Ok(tape.relu(h))
            }
            EncoderKind::Gcn => {
                let adj = batch.symmetric.as_ref().ok_or_else(missing)?;
                let nodes = self.gcn_stack(tape, params, adj, "enc.gcn", x)?;
                tape.segment_mean(batch.segments.clone(), nodes)
            }
            EncoderKind::Gat => {
                let graph = batch.neighborhoods.as_ref().ok_or_else(missing)?;
                let mut h = x;
                for (prefix, heads) in [("enc.gat1", GAT_HEADS), ("enc.gat2", 1)] {
                    let w = self.p(tape, params, &format!("{prefix}.w"))?;
                    let a_src = self.p(tape, params, &format!("{prefix}.a_src"))?;
                    let a_dst = self.p(tape, params, &format!("{prefix}.a_dst"))?;
                    let b = self.p(tape, params, &format!("{prefix}.b"))?;
                    h = gat_layer(tape, graph.clone(), h, w, a_src, a_dst, b, heads)?;
                }
                tape.segment_mean(batch.segments.clone(), h)
            }
            EncoderKind::Bigcn => {
                let (td, bu) = (
                    batch.top_down.as_ref().ok_or_else(missing)?,
                    batch.bottom_up.as_ref().ok_or_else(missing)?,
                );
                let down = self.gcn_stack(tape, params, td, "enc.td", x)?;
                let down = tape.segment_mean(batch.segments.clone(), down)?;
                let up = self.gcn_stack(tape, params, bu, "enc.bu", x)?;
                let up = tape.segment_mean(batch.segments.clone(), up)?;
                let both = tape.concat_cols(down, up)?;
                self.dense(tape, params, "enc.proj", both)
            }
        }
    }

    /// Veracity logits `[batch, 2]`.
    pub fn classifier_logits(&self, tape: &mut Tape, params: &ParamSets, h: Var) -> Result<Var> {
        self.dense(tape, params, "cls", h)
    }

    /// Structure logits `[batch, 2]`, with gradient reversal between the
    /// encoder output and the discriminator.
    pub fn discriminator_logits(&self, tape: &mut Tape, params: &ParamSets, h: Var, coeff: f64) -> Result<Var> {
        let reversed = tape.grl(h, coeff)?;
        self.dense(tape, params, "disc", reversed)
    }

    /// Forward pass without gradients.
    pub fn predict(&self, params: &ParamSets, samples: &[&NewsSample]) -> Result<Vec<Prediction>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let batch = self.batch(samples)?;
        let mut tape = Tape::new();
        let h = self.encode(&mut tape, params, &batch)?;
        let cls = self.classifier_logits(&mut tape, params, h)?;
        let disc = self.discriminator_logits(&mut tape, params, h, 1.0)?;
        let probs = softmax_rows(tape.value(cls));
        let structure = softmax_rows(tape.value(disc));
        let hv = tape.value(h);
        Ok((0..samples.len())
            .map(|i| Prediction {
                probs: [probs.at(i, 0), probs.at(i, 1)],
                structure_prob: structure.at(i, WITH_STRUCTURE),
                hidden: HiddenRep {
                    h: hv.row(i).to_vec(),
                    has_structure: batch.has_structure[i],
                },
            })
            .collect())
    }
}

/// One graph convolution `relu(adj · x · w + b)`.
pub fn gcn_layer(tape: &mut Tape, adj: Rc<SparseMatrix>, x: Var, w: Var, b: Var) -> Result<Var> {
    let mixed = tape.propagate(adj, x)?;
    let out = tape.affine(mixed, w, b)?;
    Ok(tape.relu(out))
}

/// One multi-head attention layer `relu(attend(x · w) + b)`.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer(
    tape: &mut Tape,
    graph: Rc<Neighborhoods>,
    x: Var,
    w: Var,
    a_src: Var,
    a_dst: Var,
    b: Var,
    heads: usize,
) -> Result<Var> {
    let z = tape.matmul(x, w)?;
    let attended = tape.attention(z, a_src, a_dst, graph, heads, LEAKY_SLOPE)?;
    let out = tape.add_bias(attended, b)?;
    Ok(tape.relu(out))
}

/// Class probabilities `softmax(h · w + b)` for a single hidden vector.
pub fn classify(h: &[f64], params: &ParamSets) -> Result<[f64; 2]> {
    head_probs(h, params, "cls")
}

/// Probability that `h` was computed with a propagation tree.
pub fn discriminate(h: &[f64], coeff: f64, params: &ParamSets) -> Result<f64> {
    let mut tape = Tape::new();
    let hv = tape.input(Tensor::from_rows(&[h])?);
    let g = tape.grl(hv, coeff)?;
    let w = tape.param(params, params.require("disc.w")?);
    let b = tape.param(params, params.require("disc.b")?);
    let logits = tape.affine(g, w, b)?;
    Ok(softmax_rows(tape.value(logits)).at(0, WITH_STRUCTURE))
}

fn head_probs(h: &[f64], params: &ParamSets, prefix: &str) -> Result<[f64; 2]> {
    let mut tape = Tape::new();
    let hv = tape.input(Tensor::from_rows(&[h])?);
    let w = tape.param(params, params.require(&format!("{prefix}.w"))?);
    let b = tape.param(params, params.require(&format!("{prefix}.b"))?);
    let logits = tape.affine(hv, w, b)?;
    let p = softmax_rows(tape.value(logits));
    Ok([p.at(0, 0), p.at(0, 1)])
}

/// A detector: architecture plus its trained parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub arch: Architecture,
    pub params: ParamSets,
    pub seed: u64,
}

impl Detector {
    pub fn new(arch: Architecture, seed: u64) -> Detector {
        Detector {
            params: arch.init_params(seed),
            arch,
            seed,
        }
    }

    pub fn predict(&self, samples: &[NewsSample]) -> Result<Vec<Prediction>> {
        let refs: Vec<&NewsSample> = samples.iter().collect();
        let mut out = Vec::with_capacity(samples.len());
        for chunk in refs.chunks(256) {
            out.extend(self.arch.predict(&self.params, chunk)?);
        }
        Ok(out)
    }
}
