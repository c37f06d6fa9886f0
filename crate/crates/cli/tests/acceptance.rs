//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! (or SKIP when its inputs are not available); the process fails if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use san_core::data::{generate_synthetic, load_dataset, split_event_aware, Label, NewsSample, SyntheticConfig};
use san_core::eval::{
    confusion, metrics, paired_t_test, run_experiment, ExperimentConfig, ExperimentReport, Method, Protocol,
};
use san_core::models::{Architecture, EncoderKind, WITH_STRUCTURE};
use san_core::numerics::{GrlMode, ParamGroup, ParamSets, Tape};
use san_core::training::{train_observed, TrainingConfig, LAMBDA_GRID};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_san")
}

fn run_san(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(bin()).args(args).current_dir(dir).output().expect("san runs")
}

fn benchmark_corpus() -> Vec<NewsSample> {
    let cfg = SyntheticConfig {
        n_samples: 2000,
        content_separation: 0.5,
        structure_separation: 2.0,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg, 0).expect("corpus")
}

fn criterion_1() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = run_san(dir.path(), &["gradcheck", "--epsilon", "1e-5"]);
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    let worst = rows
        .iter()
        .filter_map(|r| r.split_whitespace().nth(1)?.parse::<f64>().ok())
        .fold(0.0f64, f64::max);
    let detail = format!("4 encoders, max rel error {worst:.3e}, {:.1}s", elapsed.as_secs_f64());
    if out.status.success() && rows.len() == 4 && worst <= 1e-4 && elapsed < Duration::from_secs(30) {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(format!("{detail}; output:\n{text}"))
    }
}

fn criterion_2() -> Outcome {
    let corpus = benchmark_corpus();
    let mut worst_enc: f64 = 0.0;
    let mut disc_equal = true;
    for kind in EncoderKind::ALL {
        let arch = Architecture::new(kind, corpus[0].x.len(), 64).unwrap();
        let params = arch.init_params(1);
        let batch: Vec<&NewsSample> = corpus.iter().take(8).collect();
        let graph = arch.batch(&batch).unwrap();
        let mut tape = Tape::new();
        let h = arch.encode(&mut tape, &params, &graph).unwrap();
        let logits = arch.discriminator_logits(&mut tape, &params, h, 1.0).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[WITH_STRUCTURE; 8]).unwrap();
        let rev = tape.backward_with(loss, GrlMode::Reverse).unwrap();
        let plain = tape.backward_with(loss, GrlMode::PassThrough).unwrap();
        for id in params.ids() {
            match params.entry(id).group {
                ParamGroup::Encoder => {
                    let (a, b) = (rev.get(id).unwrap(), plain.get(id).unwrap());
                    for (x, y) in a.values().iter().zip(b.values()) {
                        worst_enc = worst_enc.max((x + y).abs());
                    }
                }
                ParamGroup::Discriminator => disc_equal &= rev.get(id) == plain.get(id),
                ParamGroup::Classifier => {}
            }
        }
    }
    let detail = format!("max |g_rev + g_plain| over encoder params {worst_enc:.1e}, discriminator identical: {disc_equal}");
    if worst_enc <= 1e-12 && disc_equal {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn snapshot(p: &ParamSets) -> Vec<u64> {
    p.entries()
        .iter()
        .flat_map(|e| e.value.values().iter().map(|v| v.to_bits()))
        .collect()
}

fn criterion_3() -> Outcome {
    let corpus = benchmark_corpus();
    let train: Vec<NewsSample> = corpus[..600].to_vec();
    let cfg = TrainingConfig {
        encoder: EncoderKind::Gcn,
        adversarial: false,
        lambda: 0.0,
        epochs: 50,
        patience: 0,
        seed: 7,
        ..TrainingConfig::default()
    };
    let mut san = Vec::new();
    let mut van = Vec::new();
    train_observed(&train, &cfg, true, &mut |_, p| san.push(snapshot(p))).unwrap();
    train_observed(&train, &cfg, false, &mut |_, p| van.push(snapshot(p))).unwrap();
    let moved = san.first() != san.last();
    let detail = format!("{} epochs compared, parameters moved: {moved}", san.len());
    if san.len() == 50 && san == van && moved {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn brute_force(preds: &[Label], labels: &[Label]) -> [f64; 5] {
    let n = labels.len() as f64;
    let acc = preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / n;
    let mut f = [0.0; 2];
    let mut support = [0.0; 2];
    for (k, class) in [Label::Fake, Label::Real].into_iter().enumerate() {
        let hit = |p: &Label, l: &Label| (*p == class, *l == class);
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for (p, l) in preds.iter().zip(labels) {
            match hit(p, l) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fneg += 1.0,
                _ => {}
            }
        }
        support[k] = tp + fneg;
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
        f[k] = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    }
    [acc, f[0], f[1], (f[0] + f[1]) / 2.0, (support[0] * f[0] + support[1] * f[1]) / n]
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut balanced_bad = 0;
    for i in 0..1000 {
        let n = rng.random_range(1..80);
        let balanced = i % 4 == 0;
        let labels: Vec<Label> = (0..n)
            .map(|j| {
                if balanced {
                    if j % 2 == 0 { Label::Fake } else { Label::Real }
                } else if rng.random_bool(0.5) {
                    Label::Fake
                } else {
                    Label::Real
                }
            })
            .collect();
        let n = if balanced && n % 2 == 1 { n - 1 } else { n };
        if n == 0 {
            continue;
        }
        let labels = &labels[..n];
        let preds: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.5) { Label::Fake } else { Label::Real })
            .collect();
        let m = metrics(&confusion(&preds, labels).unwrap());
        if m.as_array() != brute_force(&preds, labels) {
            mismatches += 1;
        }
        if balanced && (m.macro_f1 - m.weighted_f1).abs() > 1e-15 {
            balanced_bad += 1;
        }
    }
    let detail = format!("1000 random sets, {mismatches} mismatches, {balanced_bad} balanced-support violations");
    if mismatches == 0 && balanced_bad == 0 {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn experiment(encoder: EncoderKind, method: Method, lambda: f64) -> ExperimentConfig {
    ExperimentConfig {
        protocol: Protocol::default(),
        method,
        training: TrainingConfig {
            encoder,
            lambda,
            ..TrainingConfig::default()
        },
        seeds: vec![0, 1, 2, 3, 4],
    }
}

fn criterion_5(corpus: &[NewsSample]) -> (Outcome, ExperimentReport) {
    let start = Instant::now();
    let report = run_experiment(corpus, &experiment(EncoderKind::Gcn, Method::Vanilla, 0.0)).unwrap();
    let elapsed = start.elapsed();
    let gap = report.warm.mean.accuracy - report.cold.mean.accuracy;
    let detail = format!(
        "GCN warm acc {:.4}, cold acc {:.4}, gap {:.1} points, {:.1}s",
        report.warm.mean.accuracy,
        report.cold.mean.accuracy,
        100.0 * gap,
        elapsed.as_secs_f64()
    );
    let outcome = if gap >= 0.08 && elapsed < Duration::from_secs(300) {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    };
    (outcome, report)
}

fn criterion_6(corpus: &[NewsSample], gcn_vanilla: ExperimentReport) -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut ok = true;
    for encoder in [EncoderKind::Gcn, EncoderKind::Gat] {
        let vanilla = if encoder == EncoderKind::Gcn {
            gcn_vanilla.clone()
        } else {
            run_experiment(corpus, &experiment(encoder, Method::Vanilla, 0.0)).unwrap()
        };
        // The grid value is picked by mean validation accuracy; test data
        // plays no part in the choice.
        let mut best: Option<(f64, f64, ExperimentReport)> = None;
        for lambda in LAMBDA_GRID {
            let r = run_experiment(corpus, &experiment(encoder, Method::San, lambda)).unwrap();
            let val = r.mean_val_acc().unwrap_or(f64::NEG_INFINITY);
            if best.as_ref().is_none_or(|(v, _, _)| val > *v) {
                best = Some((val, lambda, r));
            }
        }
        let (_, lambda, san) = best.unwrap();
        let t = paired_t_test(&san.cold_values("accuracy").unwrap(), &vanilla.cold_values("accuracy").unwrap()).unwrap();
        let better = san.cold.mean.accuracy > vanilla.cold.mean.accuracy;
        ok &= better && t.p_value < 0.05;
        lines.push(format!(
            "{encoder}: vanilla cold {:.4}, SAN(lambda={lambda}) cold {:.4}, p={:.4}",
            vanilla.cold.mean.accuracy, san.cold.mean.accuracy, t.p_value
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(20 * 60);
    let detail = format!("{}; {:.0}s", lines.join("; "), elapsed.as_secs_f64());
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn criterion_7() -> Outcome {
    let cfg = SyntheticConfig {
        n_samples: 300,
        n_events: 5,
        ..SyntheticConfig::default()
    };
    let corpus = generate_synthetic(&cfg, 3).unwrap();
    let mut seen: Vec<String> = Vec::new();
    let mut partition_ok = true;
    for e in 0..5 {
        let split = split_event_aware(&corpus, &format!("e{e}")).unwrap();
        partition_ok &= split.train.len() + split.test.len() == corpus.len();
        partition_ok &= split.test.iter().all(|s| s.event.as_deref() == Some(format!("e{e}").as_str()));
        partition_ok &= split.train.iter().all(|s| s.event.as_deref() != Some(format!("e{e}").as_str()));
        seen.extend(split.test.iter().map(|s| s.id.clone()));
    }
    let mut ids: Vec<String> = corpus.iter().map(|s| s.id.clone()).collect();
    ids.sort();
    seen.sort();
    partition_ok &= ids == seen;
    let exp = ExperimentConfig {
        protocol: Protocol::EventAware,
        method: Method::San,
        training: TrainingConfig {
            epochs: 5,
            hidden_dim: 16,
            ..TrainingConfig::default()
        },
        seeds: vec![0, 1],
    };
    let report = run_experiment(&corpus, &exp).unwrap();
    let events = report.events.clone().unwrap_or_default();
    let avg_ok = report
        .event_average
        .is_some_and(|a| (a - events.iter().map(|e| e.weighted_f1).sum::<f64>() / events.len() as f64).abs() < 1e-12);
    let table = report.table();
    let layout_ok = table.lines().next().is_some_and(|h| h.split_whitespace().count() == 7 && h.ends_with("Avg."));
    let detail = format!(
        "partition exact: {partition_ok}, per-event values: {}, average consistent: {avg_ok}, table layout: {layout_ok}",
        events.len()
    );
    if partition_ok && events.len() == 5 && avg_ok && layout_ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn criterion_8() -> Outcome {
    let expected = [
        ("SAN_POLITIFACT", 157usize, 157usize),
        ("SAN_GOSSIPCOP", 2732, 2732),
        ("SAN_PHEME", 230, 581),
    ];
    let mut checked = Vec::new();
    let mut ok = true;
    for (var, fake, real) in expected {
        let Some(path) = std::env::var_os(var).map(PathBuf::from) else {
            continue;
        };
        match load_dataset(&path) {
            Ok(samples) => {
                let f = samples.iter().filter(|s| s.label == Label::Fake).count();
                let r = samples.len() - f;
                ok &= f == fake && r == real;
                checked.push(format!("{var}: {f} fake / {r} real (want {fake}/{real})"));
            }
            Err(e) => {
                ok = false;
                checked.push(format!("{var}: {e}"));
            }
        }
    }
    if checked.is_empty() {
        return Outcome::Skip("no real corpora supplied (set SAN_POLITIFACT, SAN_GOSSIPCOP, SAN_PHEME)".into());
    }
    if ok {
        Outcome::Pass(checked.join("; "))
    } else {
        Outcome::Fail(checked.join("; "))
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: Vec<Vec<&str>> = vec![
        vec!["generate", "--n-samples", "150", "--out", "c.jsonl"],
        vec!["train", "--corpus", "c.jsonl", "--epochs", "5", "--seed", "2", "--out", "m.ck", "--trace", "t.jsonl"],
        vec!["eval", "--corpus", "c.jsonl", "--checkpoint", "m.ck", "--out", "single.json", "--dump-embeddings", "e.jsonl"],
        vec!["eval", "--corpus", "c.jsonl", "--epochs", "3", "--seeds", "0,1", "--per-seed-dir", "s", "--out", "r.json"],
        vec!["report", "s/seed-0.json", "s/seed-1.json", "--out", "merged.json"],
        vec!["gradcheck"],
    ];
    let outputs = ["c.jsonl", "m.ck", "t.jsonl", "single.json", "e.jsonl", "r.json", "merged.json"];
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    for _ in 0..2 {
        let mut stdouts = Vec::new();
        for args in &steps {
            let o = run_san(d, args);
            if !o.status.success() {
                return Outcome::Fail(format!("{args:?} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
            stdouts.push(o.stdout);
        }
        for f in outputs {
            stdouts.push(std::fs::read(d.join(f)).unwrap());
        }
        runs.push(stdouts);
    }
    let differing: Vec<usize> = (0..runs[0].len()).filter(|&i| runs[0][i] != runs[1][i]).collect();
    let detail = format!(
        "{} command outputs and {} files compared, {} differ",
        steps.len(),
        outputs.len(),
        differing.len()
    );
    if differing.is_empty() {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn main() {
    // The test harness passes flags such as --nocapture; only a name filter
    // is honoured: `cargo test --test acceptance -- 6` runs criterion 6 only.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: u32| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let mut failed = 0;
    let mut report = |n: u32, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} criterion {n} ({name}): {detail}");
    };
    if wanted(1) {
        report(1, "gradient correctness", criterion_1());
    }
    if wanted(2) {
        report(2, "reversal exactness", criterion_2());
    }
    if wanted(3) {
        report(3, "reduction equivalence", criterion_3());
    }
    if wanted(4) {
        report(4, "metric oracle", criterion_4());
    }
    if wanted(5) || wanted(6) {
        let corpus = benchmark_corpus();
        let (c5, gcn_vanilla) = criterion_5(&corpus);
        if wanted(5) {
            report(5, "cold-start degradation", c5);
        }
        if wanted(6) {
            report(6, "adversarial improvement", criterion_6(&corpus, gcn_vanilla));
        }
    }
    if wanted(7) {
        report(7, "event-aware protocol", criterion_7());
    }
    if wanted(8) {
        report(8, "real corpus counts", criterion_8());
    }
    if wanted(9) {
        report(9, "determinism", criterion_9());
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
