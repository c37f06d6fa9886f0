//! Seeded generator of labeled news samples with propagation cascades.
//!
//! Content features of the two classes are unit-variance Gaussians whose
//! means lie `content_separation` apart along a random direction. Fake items
//! spread deeper and wider. Replies to fake items also carry a shift of size
//! `reply_signal` along a second direction orthogonal to the content
//! direction, which is only observable when the tree is present.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sample::{Label, NewsSample};
use super::tree::{PropagationTree, TreeNode};
use crate::error::{Result, SanError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub fake_ratio: f64,
    pub d_in: usize,
    /// Distance between the class means of the content features.
    pub content_separation: f64,
    /// Gap in expected cascade depth (levels) between fake and real items;
    /// also widens fake branching.
    pub structure_separation: f64,
    pub max_depth: usize,
    pub max_branching: usize,
    pub n_events: usize,
    /// Shift of fake-item reply features along the reply direction.
    pub reply_signal: f64,
    /// Standard deviation of reply feature noise around the content.
    pub node_noise: f64,
    /// Hard cap on nodes per tree, root included.
    pub max_nodes: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_samples: 2000,
            fake_ratio: 0.5,
            d_in: 32,
            content_separation: 0.5,
            structure_separation: 2.0,
            max_depth: 8,
            max_branching: 3,
            n_events: 5,
            reply_signal: 3.0,
            node_noise: 1.0,
            max_nodes: 48,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SanError::Config(m));
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if !(self.fake_ratio > 0.0 && self.fake_ratio < 1.0) {
            return bad(format!("fake_ratio must lie in (0, 1), got {}", self.fake_ratio));
        }
        if self.d_in < 2 {
            return bad("d_in must be at least 2".into());
        }
        for (name, v) in [
            ("content_separation", self.content_separation),
            ("structure_separation", self.structure_separation),
            ("reply_signal", self.reply_signal),
            ("node_noise", self.node_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.max_depth == 0 || self.max_branching == 0 || self.n_events == 0 {
            return bad("max_depth, max_branching and n_events must be positive".into());
        }
        if self.max_nodes <= self.max_depth {
            return bad("max_nodes must exceed max_depth".into());
        }
        Ok(())
    }
}

const BASE_DEPTH: f64 = 2.0;
const DEPTH_SPREAD: f64 = 0.75;
const BASE_BRANCH_P: f64 = 0.2;

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= n;
    }
}

fn binomial(rng: &mut ChaCha8Rng, trials: usize, p: f64) -> usize {
    (0..trials).filter(|_| rng.random_bool(p)).count()
}

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<Vec<NewsSample>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_in;

    let mut content_dir = gaussian_vec(&mut rng, d);
    normalize(&mut content_dir);
    let mut reply_dir = gaussian_vec(&mut rng, d);
    let proj: f64 = reply_dir.iter().zip(&content_dir).map(|(a, b)| a * b).sum();
    for (r, c) in reply_dir.iter_mut().zip(&content_dir) {
        *r -= proj * c;
    }
    normalize(&mut reply_dir);

    let n_fake = ((config.n_samples as f64 * config.fake_ratio) + 0.5).floor() as usize;
    let mut labels: Vec<Label> = (0..config.n_samples)
        .map(|i| if i < n_fake { Label::Fake } else { Label::Real })
        .collect();
    labels.shuffle(&mut rng);

    let width = (config.n_samples.max(2) - 1).to_string().len();
    let mut samples = Vec::with_capacity(config.n_samples);
    for (i, label) in labels.into_iter().enumerate() {
        let fake = label == Label::Fake;
        let sign = if fake { 1.0 } else { -1.0 };
        let x: Vec<f64> = content_dir
            .iter()
            .map(|u| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                sign * 0.5 * config.content_separation * u + noise
            })
            .collect();
        let id = format!("s{i:0width$}");
        let tree = grow_tree(config, &mut rng, &id, &x, fake, &reply_dir)?;
        samples.push(NewsSample {
            id,
            x,
            tree: Some(tree),
            label,
            event: Some(format!("e{}", i % config.n_events)),
        });
    }
    Ok(samples)
}

fn grow_tree(
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
    sample: &str,
    x: &[f64],
    fake: bool,
    reply_dir: &[f64],
) -> Result<PropagationTree> {
    let gap = if fake { config.structure_separation } else { 0.0 };
    let noise: f64 = StandardNormal.sample(rng);
    let depth = (BASE_DEPTH + gap + DEPTH_SPREAD * noise)
        .round()
        .clamp(1.0, config.max_depth as f64) as usize;
    let p_branch = (BASE_BRANCH_P + 0.1 * gap).min(0.9);

    // parent/depth per node; node 0 is the root. The main chain fixes the
    // cascade depth, side branches never go deeper than it.
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut level = vec![0usize];
    for d in 1..=depth {
        parent.push(Some(d - 1));
        level.push(d);
    }
    let mut frontier: std::collections::VecDeque<usize> = (0..depth).collect();
    while let Some(n) = frontier.pop_front() {
        if level[n] >= depth {
            continue;
        }
        let on_chain = n < depth;
        let trials = if on_chain { config.max_branching - 1 } else { config.max_branching };
        for _ in 0..binomial(rng, trials, p_branch) {
            if parent.len() >= config.max_nodes {
                break;
            }
            parent.push(Some(n));
            level.push(level[n] + 1);
            frontier.push_back(parent.len() - 1);
        }
    }

    // Timestamps follow breadth-first order.
    let mut order: Vec<usize> = (0..parent.len()).collect();
    order.sort_by_key(|&n| (level[n], n));
    let mut stamp = vec![0i64; parent.len()];
    for (t, &n) in order.iter().enumerate() {
        stamp[n] = t as i64;
    }

    let shift = if fake { config.reply_signal } else { 0.0 };
    let nodes: Vec<TreeNode> = (0..parent.len())
        .map(|n| {
            let features = if n == 0 {
                x.to_vec()
            } else {
                x.iter()
                    .zip(reply_dir)
                    .map(|(xi, r)| {
                        let eps: f64 = StandardNormal.sample(rng);
                        xi + shift * r + config.node_noise * eps
                    })
                    .collect()
            };
            TreeNode {
                id: format!("n{n}"),
                timestamp_order: stamp[n],
                features,
            }
        })
        .collect();
    let edges: Vec<(usize, usize)> = parent
        .iter()
        .enumerate()
        .filter_map(|(c, p)| p.map(|p| (p, c)))
        .collect();
    PropagationTree::from_parts(sample, nodes, &edges, 0)
}

/// Per-class summary used by the CLI and by tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub n_samples: usize,
    pub n_fake: usize,
    pub n_real: usize,
    pub per_event: Vec<(String, usize)>,
    pub mean_depth_fake: f64,
    pub mean_depth_real: f64,
    pub mean_nodes: f64,
}

pub fn summarize(samples: &[NewsSample]) -> CorpusSummary {
    let mut per_event = std::collections::BTreeMap::new();
    let (mut df, mut nf, mut dr, mut nr, mut nodes, mut with_tree) = (0.0, 0usize, 0.0, 0usize, 0.0, 0usize);
    for s in samples {
        *per_event.entry(s.event.clone().unwrap_or_else(|| "-".into())).or_insert(0) += 1;
        let depth = s.tree.as_ref().map(|t| t.depth()).unwrap_or(0) as f64;
        if let Some(t) = &s.tree {
            nodes += t.len() as f64;
            with_tree += 1;
        }
        match s.label {
            Label::Fake => {
                df += depth;
                nf += 1;
            }
            Label::Real => {
                dr += depth;
                nr += 1;
            }
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    CorpusSummary {
        n_samples: samples.len(),
        n_fake: nf,
        n_real: nr,
        per_event: per_event.into_iter().collect(),
        mean_depth_fake: mean(df, nf),
        mean_depth_real: mean(dr, nr),
        mean_nodes: mean(nodes, with_tree),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_depth_gap(structure_separation: f64) -> f64 {
        let cfg = SyntheticConfig {
            n_samples: 2000,
            d_in: 4,
            structure_separation,
            ..SyntheticConfig::default()
        };
        let s = summarize(&generate_synthetic(&cfg, 17).unwrap());
        s.mean_depth_fake - s.mean_depth_real
    }

    #[test]
    fn exact_label_counts() {
        let cfg = SyntheticConfig {
            n_samples: 100,
            d_in: 4,
            ..SyntheticConfig::default()
        };
        let s = summarize(&generate_synthetic(&cfg, 1).unwrap());
        assert_eq!((s.n_fake, s.n_real), (50, 50));
        assert_eq!(s.per_event.len(), 5);
        assert!(s.per_event.iter().all(|(_, n)| *n == 20));
    }

    #[test]
    fn depth_gap_follows_structure_separation() {
        assert!(mean_depth_gap(0.0).abs() < 0.2);
        assert!(mean_depth_gap(2.0) > 1.0);
    }

    #[test]
    fn reproducible_per_seed() {
        let cfg = SyntheticConfig {
            n_samples: 50,
            d_in: 6,
            ..SyntheticConfig::default()
        };
        let a = generate_synthetic(&cfg, 5).unwrap();
        assert_eq!(a, generate_synthetic(&cfg, 5).unwrap());
        assert_ne!(a, generate_synthetic(&cfg, 6).unwrap());
    }

    #[test]
    fn trees_respect_caps_and_root_content() {
        let cfg = SyntheticConfig {
            n_samples: 300,
            d_in: 3,
            structure_separation: 6.0,
            max_nodes: 20,
            ..SyntheticConfig::default()
        };
        for s in generate_synthetic(&cfg, 2).unwrap() {
            let t = s.tree.as_ref().unwrap();
            assert!(t.len() <= 20);
            assert!(t.depth() <= cfg.max_depth);
            assert_eq!(t.root_node().features, s.x);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = SyntheticConfig::default();
        cfg.fake_ratio = 1.0;
        assert!(generate_synthetic(&cfg, 0).is_err());
        cfg.fake_ratio = 0.5;
        cfg.structure_separation = -1.0;
        assert!(matches!(generate_synthetic(&cfg, 0), Err(SanError::Config(_))));
    }
}
