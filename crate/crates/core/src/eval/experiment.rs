use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion, mean_std, metrics, Metrics};
use super::stats::{paired_t_test, TTest};
use crate::data::{events, fnv1a_hex, split_event_aware, split_general_with, DatasetSplit, Label, NewsSample};
use crate::error::{Result, SanError};
use crate::models::{Detector, EncoderKind};
use crate::training::{train_san, train_vanilla, TrainOutcome, TrainingConfig};

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// How the corpus is cut into training and cold-start test data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Protocol {
    /// Seeded random split; test trees are removed.
    General {
        #[serde(default = "default_ratio")]
        train_ratio: f64,
        #[serde(default)]
        stratified: bool,
    },
    /// Each event in turn is held out as the cold-start test set.
    EventAware,
}

fn default_ratio() -> f64 {
    0.75
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::General {
            train_ratio: default_ratio(),
            stratified: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vanilla,
    San,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::San => "san",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub method: Method,
    pub training: TrainingConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: Protocol::default(),
            method: Method::San,
            training: TrainingConfig::default(),
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// Stable hash of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        fnv1a_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn training_for(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            seed,
            ..self.training.clone()
        }
    }
}

/// Scores of one trained model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n_test: usize,
    pub cold: Metrics,
    pub warm: Metrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    /// Validation accuracy of the kept parameters.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventResult {
    pub event: String,
    pub eval: Evaluation,
}

/// Everything measured for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Under the event-aware protocol, the mean over held-out events.
    pub cold: Metrics,
    pub warm: Metrics,
    /// Validation accuracy used for model selection (mean over events).
    pub val_acc: Option<f64>,
    pub events: Option<Vec<EventResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Metrics,
    pub std: Metrics,
}

impl Summary {
    fn of(values: &[Metrics]) -> Summary {
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        for k in 0..5 {
            let column: Vec<f64> = values.iter().map(|m| m.as_array()[k]).collect();
            (mean[k], std[k]) = mean_std(&column);
        }
        Summary {
            mean: Metrics::from_array(mean),
            std: Metrics::from_array(std),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub event: String,
    pub n_test: usize,
    pub weighted_f1: f64,
    pub weighted_f1_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedResult>,
    pub cold: Summary,
    pub warm: Summary,
    /// Seed-averaged weighted-F1 per held-out event.
    pub events: Option<Vec<EventSummary>>,
    /// Mean of the per-event weighted-F1 values.
    pub event_average: Option<f64>,
}

/// Scores a detector on `test` twice: with trees and with trees removed.
pub fn evaluate(detector: &Detector, test: &[NewsSample]) -> Result<(Metrics, Metrics)> {
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    let cold_set = crate::data::strip_propagation(test);
    if cold_set.iter().any(|s| !s.is_cold_start()) {
        return Err(SanError::Consistency("cold-start test set still carries trees".into()));
    }
    let score = |set: &[NewsSample]| -> Result<Metrics> {
        let preds: Vec<Label> = detector.predict(set)?.iter().map(|p| p.label()).collect();
        Ok(metrics(&confusion(&preds, &labels)?))
    };
    Ok((score(&cold_set)?, score(test)?))
}

/// Trains according to `method` on the training side of `split`.
pub fn train(method: Method, split: &DatasetSplit, config: &TrainingConfig) -> Result<TrainOutcome> {
    match method {
        Method::Vanilla => train_vanilla(&split.train, config),
        Method::San => train_san(&split.train, config),
    }
}

fn run_split(split: &DatasetSplit, config: &ExperimentConfig, seed: u64) -> Result<Evaluation> {
    let outcome = train(config.method, split, &config.training_for(seed))?;
    let (cold, warm) = evaluate(&outcome.detector, &split.test)?;
    Ok(Evaluation {
        n_test: split.test.len(),
        cold,
        warm,
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.trace.len(),
        val_acc: outcome.best_val_acc,
    })
}

/// The protocol's split for `seed` (general) or held-out `event`.
pub fn make_split(corpus: &[NewsSample], protocol: &Protocol, seed: u64, event: Option<&str>) -> Result<DatasetSplit> {
    match (protocol, event) {
        (Protocol::General { train_ratio, stratified }, _) => split_general_with(corpus, *train_ratio, seed, *stratified),
        (Protocol::EventAware, Some(e)) => split_event_aware(corpus, e),
        (Protocol::EventAware, None) => Err(SanError::Config("event-aware split needs an event".into())),
    }
}

/// Runs one seed of an experiment.
pub fn run_seed(corpus: &[NewsSample], config: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    if corpus.is_empty() {
        return Err(SanError::InsufficientData("corpus is empty".into()));
    }
    let context = |e: SanError| match e {
        SanError::Numeric(m) => SanError::Numeric(format!("seed {seed}: {m}")),
        other => other,
    };
    match config.protocol {
        Protocol::General { .. } => {
            let split = make_split(corpus, &config.protocol, seed, None)?;
            let eval = run_split(&split, config, seed).map_err(context)?;
            Ok(SeedResult {
                seed,
                cold: eval.cold,
                warm: eval.warm,
                val_acc: eval.val_acc,
                events: None,
            })
        }
        Protocol::EventAware => {
            let names = events(corpus).map_err(|e| SanError::Config(format!("event-aware protocol: {e}")))?;
            let mut results = Vec::with_capacity(names.len());
            for event in names {
                let split = make_split(corpus, &config.protocol, seed, Some(&event))?;
                let eval = run_split(&split, config, seed).map_err(context)?;
                results.push(EventResult { event, eval });
            }
            let cold = Summary::of(&results.iter().map(|r| r.eval.cold).collect::<Vec<_>>()).mean;
            let warm = Summary::of(&results.iter().map(|r| r.eval.warm).collect::<Vec<_>>()).mean;
            let vals: Option<Vec<f64>> = results.iter().map(|r| r.eval.val_acc).collect();
            let val_acc = vals.map(|v| v.iter().sum::<f64>() / v.len() as f64);
            Ok(SeedResult {
                seed,
                cold,
                warm,
                val_acc,
                events: Some(results),
            })
        }
    }
}

/// Trains and evaluates once per configured seed and aggregates.
pub fn run_experiment(corpus: &[NewsSample], config: &ExperimentConfig) -> Result<ExperimentReport> {
    if config.seeds.is_empty() {
        return Err(SanError::Config("no seeds given".into()));
    }
    let per_seed = config
        .seeds
        .iter()
        .map(|&s| run_seed(corpus, config, s))
        .collect::<Result<Vec<_>>>()?;
    ExperimentReport::assemble(config.clone(), per_seed)
}

impl ExperimentReport {
    /// Aggregates per-seed results; seeds must be distinct.
    pub fn assemble(config: ExperimentConfig, mut per_seed: Vec<SeedResult>) -> Result<ExperimentReport> {
        if per_seed.is_empty() {
            return Err(SanError::InsufficientData("no seed results to merge".into()));
        }
        per_seed.sort_by_key(|r| r.seed);
        if per_seed.windows(2).any(|w| w[0].seed == w[1].seed) {
            return Err(SanError::Data("duplicate seed in results".into()));
        }
        let cold = Summary::of(&per_seed.iter().map(|r| r.cold).collect::<Vec<_>>());
        let warm = Summary::of(&per_seed.iter().map(|r| r.warm).collect::<Vec<_>>());
        let (events, event_average) = match per_seed[0].events.as_ref() {
            None => (None, None),
            Some(first) => {
                let mut out = Vec::with_capacity(first.len());
                for (k, e) in first.iter().enumerate() {
                    let mut values = Vec::with_capacity(per_seed.len());
                    for r in &per_seed {
                        let found = r
                            .events
                            .as_ref()
                            .and_then(|ev| ev.get(k))
                            .filter(|x| x.event == e.event)
                            .ok_or_else(|| SanError::Data(format!("seed {} lacks event {}", r.seed, e.event)))?;
                        values.push(found.eval.cold.weighted_f1);
                    }
                    let (m, s) = mean_std(&values);
                    out.push(EventSummary {
                        event: e.event.clone(),
                        n_test: e.eval.n_test,
                        weighted_f1: m,
                        weighted_f1_std: s,
                    });
                }
                let avg = out.iter().map(|e| e.weighted_f1).sum::<f64>() / out.len() as f64;
                (Some(out), Some(avg))
            }
        };
        Ok(ExperimentReport {
            fingerprint: config.fingerprint(),
            config,
            per_seed,
            cold,
            warm,
            events,
            event_average,
        })
    }

    pub fn encoder(&self) -> EncoderKind {
        self.config.training.encoder
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.per_seed.iter().map(|r| r.seed).collect()
    }

    /// Per-seed cold-start values of a metric field.
    pub fn cold_values(&self, field: &str) -> Result<Vec<f64>> {
        self.per_seed
            .iter()
            .map(|r| r.cold.get(field).ok_or_else(|| SanError::Config(format!("unknown metric {field}"))))
            .collect()
    }

    /// Mean validation accuracy over seeds, when every seed had one.
    pub fn mean_val_acc(&self) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.per_seed.iter().map(|r| r.val_acc).collect();
        vals.map(|v| mean_std(&v).0)
    }

    /// Text table; general protocol: Acc, ma-F1, F1 fake, F1 real.
    /// Event-aware: weighted-F1 per event and their average.
    pub fn table(&self) -> String {
        let name = format!("{}+{}", self.encoder(), self.config.method.as_str());
        match &self.events {
            None => {
                let (m, s) = (&self.cold.mean, &self.cold.std);
                let w = &self.warm.mean;
                format!(
                    "{:<14} {:>8} {:>8} {:>8} {:>8}\n{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
                    "model", "Acc", "ma-F1", "F1-fake", "F1-real",
                    name, m.accuracy, m.macro_f1, m.f1_fake, m.f1_real,
                    "  (std)", s.accuracy, s.macro_f1, s.f1_fake, s.f1_real,
                    "  (warm)", w.accuracy, w.macro_f1, w.f1_fake, w.f1_real,
                )
            }
            Some(events) => {
                let mut head = format!("{:<14}", "model");
                let mut row = format!("{name:<14}");
                for e in events {
                    head.push_str(&format!(" {:>8}", e.event));
                    row.push_str(&format!(" {:>8.4}", e.weighted_f1));
                }
                head.push_str(&format!(" {:>8}\n", "Avg."));
                row.push_str(&format!(" {:>8.4}\n", self.event_average.unwrap_or(f64::NAN)));
                head + &row
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| SanError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentReport> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SanError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| SanError::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Paired t-test of `a` against `b` on a cold-start metric, pairing by seed.
pub fn compare(a: &ExperimentReport, b: &ExperimentReport, field: &str) -> Result<TTest> {
    if a.seeds() != b.seeds() {
        return Err(SanError::Data(format!(
            "reports cover different seeds: {:?} vs {:?}",
            a.seeds(),
            b.seeds()
        )));
    }
    paired_t_test(&a.cold_values(field)?, &b.cold_values(field)?)
}

/// Which part of the data an embedding came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitTag {
    TrainFull,
    TrainStripped,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub split: SplitTag,
    pub label: Label,
    pub h: Vec<f64>,
}

/// Writes one JSON line per sample with its hidden representation.
pub fn write_embeddings<W: Write>(detector: &Detector, sets: &[(SplitTag, &[NewsSample])], mut w: W) -> Result<usize> {
    let mut n = 0;
    for (tag, samples) in sets {
        for (s, p) in samples.iter().zip(detector.predict(samples)?) {
            let rec = EmbeddingRecord {
                id: s.id.clone(),
                split: *tag,
                label: s.label,
                h: p.hidden.h,
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| SanError::io("<embeddings>", e))?;
            n += 1;
        }
    }
    Ok(n)
}

pub fn dump_embeddings(detector: &Detector, sets: &[(SplitTag, &[NewsSample])], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| SanError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    let n = write_embeddings(detector, sets, &mut w).map_err(|e| match e {
        SanError::Io { source, .. } => SanError::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| SanError::io(path, e))?;
    Ok(n)
}

pub fn read_embeddings(text: &str) -> Result<Vec<EmbeddingRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SanError::Parse {
                location: format!("embeddings:{}", i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}
