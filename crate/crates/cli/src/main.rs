use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use san_core::config::RunConfig;
use san_core::data::{
    generate_synthetic, load_dataset, save_dataset, strip_propagation, summarize, DatasetSplit, SplitDescriptor,
};
use san_core::eval::{
    compare, dump_embeddings, evaluate, make_split, run_seed, train, ExperimentConfig, ExperimentReport, Method,
    Protocol, SeedResult, SplitTag,
};
use san_core::models::{Checkpoint, EncoderKind};
use san_core::training::{GradcheckBatch, ValidationMode};
use san_core::{ErrorKind, Result, SanError};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "san", version, about = "Cold-start fake news detection with structure-adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and print its summary.
    Generate(GenerateArgs),
    /// Train one detector on the training side of a split.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or run a multi-seed experiment.
    Eval(EvalArgs),
    /// Check analytic gradients of the full objective for every encoder.
    Gradcheck(GradcheckArgs),
    /// Merge per-seed result files into one report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    fake_ratio: Option<f64>,
    #[arg(long)]
    d_in: Option<usize>,
    #[arg(long)]
    content_separation: Option<f64>,
    #[arg(long)]
    structure_separation: Option<f64>,
    #[arg(long)]
    n_events: Option<usize>,
}

/// Flags that override the `[training]`, `[protocol]` and top-level config.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    adversarial: Option<bool>,
    #[arg(long)]
    grl_coeff: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    /// cold or warm
    #[arg(long)]
    validation_mode: Option<String>,
    /// general or event-aware
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    train_ratio: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    /// Seed for the split and the model.
    #[arg(long)]
    seed: Option<u64>,
    /// Event held out as test data under the event-aware protocol.
    #[arg(long)]
    held_out_event: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch trace (JSON lines).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Evaluate this checkpoint on the test side of the split it was trained on.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Comma-separated seeds for the multi-seed mode.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one result file per seed into this directory.
    #[arg(long)]
    per_seed_dir: Option<PathBuf>,
    /// Report of a baseline run to test against (paired over seeds).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Write hidden representations (checkpoint mode only).
    #[arg(long)]
    dump_embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Test hook: perturb one analytic gradient entry before comparing.
    #[arg(long)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Per-seed result files written by `eval --per-seed-dir`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
        ErrorKind::Io => 1,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn config_err(msg: String) -> SanError {
    SanError::Config(msg)
}

fn resolve(o: &Overrides) -> Result<RunConfig> {
    let mut cfg = load_config(o.config.as_deref())?;
    let t = &mut cfg.training;
    if let Some(m) = &o.method {
        cfg.method = match m.as_str() {
            "san" => Method::San,
            "vanilla" => Method::Vanilla,
            other => return Err(config_err(format!("unknown method {other:?} (san or vanilla)"))),
        };
    }
    if let Some(v) = o.encoder {
        t.encoder = v;
    }
    if let Some(v) = o.hidden_dim {
        t.hidden_dim = v;
    }
    if let Some(v) = o.eta {
        t.eta = v;
    }
    if let Some(v) = o.lambda {
        t.lambda = v;
    }
    if let Some(v) = o.epochs {
        t.epochs = v;
    }
    if let Some(v) = o.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = o.adversarial {
        t.adversarial = v;
    }
    if let Some(v) = o.grl_coeff {
        t.grl_coeff = v;
    }
    if let Some(v) = o.patience {
        t.patience = v;
    }
    if let Some(v) = o.validation_fraction {
        t.validation_fraction = v;
    }
    if let Some(v) = &o.validation_mode {
        t.validation_mode = match v.as_str() {
            "cold" => ValidationMode::Cold,
            "warm" => ValidationMode::Warm,
            other => return Err(config_err(format!("unknown validation mode {other:?} (cold or warm)"))),
        };
    }
    match o.protocol.as_deref() {
        None => {}
        Some("general") => {
            if !matches!(cfg.protocol, Protocol::General { .. }) {
                cfg.protocol = Protocol::default();
            }
        }
        Some("event-aware") => cfg.protocol = Protocol::EventAware,
        Some(other) => return Err(config_err(format!("unknown protocol {other:?} (general or event-aware)"))),
    }
    if let Some(r) = o.train_ratio {
        match &mut cfg.protocol {
            Protocol::General { train_ratio, .. } => *train_ratio = r,
            Protocol::EventAware => return Err(config_err("--train-ratio only applies to the general protocol".into())),
        }
    }
    cfg.validate()?;
    if cfg.method == Method::San && !cfg.lambda_in_grid(cfg.training.lambda) && cfg.training.lambda != 0.0 {
        eprintln!(
            "warning: lambda {} is outside the search grid {:?}",
            cfg.training.lambda, cfg.lambda_grid
        );
    }
    Ok(cfg)
}

fn generate(a: GenerateArgs) -> Result<ExitCode> {
    let mut cfg = load_config(a.config.as_deref())?.synthetic;
    if let Some(v) = a.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = a.fake_ratio {
        cfg.fake_ratio = v;
    }
    if let Some(v) = a.d_in {
        cfg.d_in = v;
    }
    if let Some(v) = a.content_separation {
        cfg.content_separation = v;
    }
    if let Some(v) = a.structure_separation {
        cfg.structure_separation = v;
    }
    if let Some(v) = a.n_events {
        cfg.n_events = v;
    }
    let samples = generate_synthetic(&cfg, a.seed)?;
    save_dataset(&a.out, &samples)?;
    let s = summarize(&samples);
    println!("config {}", serde_json::to_string(&cfg).expect("config serializes"));
    println!("samples {} fake {} real {}", s.n_samples, s.n_fake, s.n_real);
    for (event, n) in &s.per_event {
        println!("event {event} {n}");
    }
    println!(
        "mean_depth fake {:.4} real {:.4} mean_nodes {:.4}",
        s.mean_depth_fake, s.mean_depth_real, s.mean_nodes
    );
    Ok(ExitCode::SUCCESS)
}

fn split_for(corpus: &[san_core::data::NewsSample], cfg: &RunConfig, seed: u64, event: Option<&str>) -> Result<DatasetSplit> {
    if cfg.protocol == Protocol::EventAware {
        san_core::data::events(corpus).map_err(|e| config_err(format!("event-aware protocol: {e}")))?;
        if event.is_none() {
            return Err(config_err("event-aware training needs --held-out-event".into()));
        }
    }
    make_split(corpus, &cfg.protocol, seed, event)
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = resolve(&a.overrides)?;
    if let Some(seed) = a.seed {
        cfg.training.seed = seed;
    }
    let corpus = load_dataset(&a.corpus)?;
    let split = split_for(&corpus, &cfg, cfg.training.seed, a.held_out_event.as_deref())?;
    let outcome = train(cfg.method, &split, &cfg.training)?;
    if let Some(path) = &a.trace {
        outcome.save_trace(path)?;
    }
    let meta = serde_json::json!({
        "method": cfg.method,
        "config": cfg.experiment(),
        "split": split.provenance,
        "best_epoch": outcome.best_epoch,
        "epochs_run": outcome.trace.len(),
    });
    Checkpoint::new(outcome.detector, meta).save(&a.out)?;
    let last = outcome.trace.last().expect("at least one epoch");
    println!(
        "trained {}+{} seed {} epochs {} best_epoch {} train_loss {:.6} val_acc {}",
        cfg.training.encoder,
        cfg.method.as_str(),
        cfg.training.seed,
        outcome.trace.len(),
        outcome.best_epoch,
        last.total,
        outcome
            .best_val_acc
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "-".into())
    );
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(a: EvalArgs) -> Result<ExitCode> {
    match &a.checkpoint {
        Some(path) => eval_checkpoint(&a, path),
        None => eval_experiment(&a),
    }
}

fn eval_checkpoint(a: &EvalArgs, path: &Path) -> Result<ExitCode> {
    let ck = Checkpoint::load(path)?;
    let corpus = load_dataset(&a.corpus)?;
    let d_in = corpus.first().map(|s| s.x.len()).unwrap_or(ck.detector.arch.d_in);
    if d_in != ck.detector.arch.d_in {
        return Err(SanError::dim("checkpoint vs corpus", &[ck.detector.arch.d_in], &[d_in]));
    }
    let provenance: SplitDescriptor = serde_json::from_value(ck.meta["split"].clone())
        .map_err(|e| SanError::Data(format!("checkpoint {} has no usable split record: {e}", path.display())))?;
    let split = DatasetSplit::from_descriptor(&corpus, provenance)?;
    let (cold, warm) = evaluate(&ck.detector, &split.test)?;
    println!("{:<8} {:>8} {:>8} {:>8} {:>8} {:>8}", "test", "Acc", "ma-F1", "F1-fake", "F1-real", "w-F1");
    for (name, m) in [("cold", cold), ("warm", warm)] {
        println!(
            "{name:<8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            m.accuracy, m.macro_f1, m.f1_fake, m.f1_real, m.weighted_f1
        );
    }
    if let Some(out) = &a.out {
        let body = serde_json::json!({
            "checkpoint": path.display().to_string(),
            "n_test": split.test.len(),
            "cold": cold,
            "warm": warm,
        });
        write_text(out, &(serde_json::to_string_pretty(&body).expect("serializes") + "\n"))?;
    }
    if let Some(dump) = &a.dump_embeddings {
        let stripped_train = strip_propagation(&split.train);
        let cold_test = strip_propagation(&split.test);
        let n = dump_embeddings(
            &ck.detector,
            &[
                (SplitTag::TrainFull, &split.train),
                (SplitTag::TrainStripped, &stripped_train),
                (SplitTag::Test, &cold_test),
            ],
            dump,
        )?;
        println!("embeddings {n} records -> {}", dump.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SeedFile {
    config: ExperimentConfig,
    result: SeedResult,
}

fn eval_experiment(a: &EvalArgs) -> Result<ExitCode> {
    if a.dump_embeddings.is_some() {
        return Err(config_err("--dump-embeddings needs --checkpoint".into()));
    }
    let mut cfg = resolve(&a.overrides)?;
    if let Some(seeds) = &a.seeds {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    let corpus = load_dataset(&a.corpus)?;
    let experiment = cfg.experiment();
    if let Some(dir) = &a.per_seed_dir {
        std::fs::create_dir_all(dir).map_err(|e| SanError::Io {
            path: dir.clone(),
            source: e,
        })?;
    }
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let result = run_seed(&corpus, &experiment, seed)?;
        eprintln!("seed {seed}: cold acc {:.4} warm acc {:.4}", result.cold.accuracy, result.warm.accuracy);
        if let Some(dir) = &a.per_seed_dir {
            let file = SeedFile {
                config: ExperimentConfig {
                    seeds: vec![seed],
                    ..experiment.clone()
                },
                result: result.clone(),
            };
            write_text(
                &dir.join(format!("seed-{seed}.json")),
                &(serde_json::to_string_pretty(&file).expect("serializes") + "\n"),
            )?;
        }
        results.push(result);
    }
    let report = ExperimentReport::assemble(experiment, results)?;
    finish_report(&report, a.out.as_deref(), a.baseline.as_deref())
}

fn finish_report(report: &ExperimentReport, out: Option<&Path>, baseline: Option<&Path>) -> Result<ExitCode> {
    print!("{}", report.table());
    println!("fingerprint {}", report.fingerprint);
    if let Some(b) = baseline {
        let base = ExperimentReport::load(b)?;
        for field in ["accuracy", "macro_f1", "weighted_f1"] {
            let t = compare(report, &base, field)?;
            println!(
                "paired t-test vs baseline on {field}: t {:.4} df {} p {:.6}{}",
                t.t,
                t.df,
                t.p_value,
                if t.degenerate { " (identical)" } else { "" }
            );
        }
    }
    if let Some(path) = out {
        report.save(path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn report(a: ReportArgs) -> Result<ExitCode> {
    let mut config: Option<ExperimentConfig> = None;
    let mut results = Vec::new();
    for path in &a.inputs {
        let text = std::fs::read_to_string(path).map_err(|e| SanError::Io {
            path: path.clone(),
            source: e,
        })?;
        let file: SeedFile = serde_json::from_str(&text).map_err(|e| SanError::Parse {
            location: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut seeds = config.as_ref().map(|c| c.seeds.clone()).unwrap_or_default();
        seeds.push(file.result.seed);
        let this = ExperimentConfig {
            seeds: Vec::new(),
            ..file.config.clone()
        };
        if let Some(prev) = &config {
            if (ExperimentConfig {
                seeds: Vec::new(),
                ..prev.clone()
            }) != this
            {
                return Err(SanError::Data(format!("{} was produced with a different configuration", path.display())));
            }
        }
        seeds.sort_unstable();
        config = Some(ExperimentConfig { seeds, ..this });
        results.push(file.result);
    }
    let report = ExperimentReport::assemble(config.expect("at least one input"), results)?;
    finish_report(&report, a.out.as_deref(), a.baseline.as_deref())
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut all_ok = true;
    println!("{:<8} {:>14} {:>8} {:>6}", "encoder", "max_rel_error", "checked", "status");
    for kind in EncoderKind::ALL {
        let batch = GradcheckBatch::new(kind, a.seed, a.lambda)?;
        let corrupt = a.corrupt_gradient;
        let report = batch.check(a.epsilon, |g, p| {
            if corrupt {
                if let Some(id) = p.ids().next() {
                    g.perturb(id, 0, 1.0);
                }
            }
        })?;
        let ok = report.max_rel_error <= GRADCHECK_TOLERANCE;
        all_ok &= ok;
        println!(
            "{:<8} {:>14.3e} {:>8} {:>6}",
            kind.as_str(),
            report.max_rel_error,
            report.checked,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check exceeded tolerance {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::from(exit_code(ErrorKind::Numeric)))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| SanError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
