use crate::data::{generate_synthetic, NewsSample, SyntheticConfig};
use crate::error::Result;
use crate::models::{Architecture, EncoderKind, CONTENT_ONLY, WITH_STRUCTURE};
use crate::numerics::{finite_difference_check, GradCheckReport, Gradients, ParamGroup, ParamSets, Tape, Var};

/// The per-batch training objective.
///
/// The tape sees `cls_full + lambda*cls_stripped + disc_full +
/// lambda*disc_stripped` with gradient reversal between the encoder and the
/// discriminator, so encoder and classifier parameters descend
/// `L_CLS - L_d` while discriminator parameters descend `L_d`.
#[derive(Debug, Clone, Copy)]
pub struct BatchObjective {
    pub arch: Architecture,
    pub lambda: f64,
    pub grl_coeff: f64,
    pub adversarial: bool,
}

/// Loss values of one batch and, when requested, the gradients of the
/// whole objective.
#[derive(Debug, Clone)]
pub struct ObjectiveParts {
    pub cls_full: f64,
    pub cls_stripped: f64,
    pub disc_full: f64,
    pub disc_stripped: f64,
    /// `(cls_full - disc_full) + lambda * (cls_stripped - disc_stripped)`.
    pub total: f64,
    pub gradients: Gradients,
}

impl ObjectiveParts {
    /// Weighted discriminator loss, the quantity the discriminator descends.
    pub fn disc_objective(&self, lambda: f64) -> f64 {
        self.disc_full + lambda * self.disc_stripped
    }
}

impl BatchObjective {
    /// Forward and backward over paired full and stripped batches. An empty
    /// `stripped` slice drops the stripped terms entirely.
    pub fn evaluate(&self, params: &ParamSets, full: &[&NewsSample], stripped: &[&NewsSample]) -> Result<ObjectiveParts> {
        self.run(params, full, stripped, true)
    }

    pub fn losses(&self, params: &ParamSets, full: &[&NewsSample], stripped: &[&NewsSample]) -> Result<ObjectiveParts> {
        self.run(params, full, stripped, false)
    }

    fn run(
        &self,
        params: &ParamSets,
        full: &[&NewsSample],
        stripped: &[&NewsSample],
        with_grad: bool,
    ) -> Result<ObjectiveParts> {
        let mut tape = Tape::new();
        let (h_full, cls_full) = self.classify(&mut tape, params, full)?;
        let mut root = cls_full;
        let mut cls_s = None;
        let mut h_s = None;
        if !stripped.is_empty() {
            let (h, c) = self.classify(&mut tape, params, stripped)?;
            let weighted = tape.scale(c, self.lambda);
            root = tape.add(root, weighted)?;
            cls_s = Some(c);
            h_s = Some(h);
        }
        let mut disc_full = None;
        let mut disc_s = None;
        if self.adversarial {
            let d = self.discriminate(&mut tape, params, h_full, WITH_STRUCTURE)?;
            root = tape.add(root, d)?;
            disc_full = Some(d);
            if let Some(h) = h_s {
                let d = self.discriminate(&mut tape, params, h, CONTENT_ONLY)?;
                let weighted = tape.scale(d, self.lambda);
                root = tape.add(root, weighted)?;
                disc_s = Some(d);
            }
        }
        let read = |v: Option<Var>| v.map(|v| tape.value(v).item()).unwrap_or(0.0);
        let (cf, cs, df, ds) = (read(Some(cls_full)), read(cls_s), read(disc_full), read(disc_s));
        let gradients = if with_grad {
            tape.backward(root)?
        } else {
            Gradients::for_params(params)
        };
        Ok(ObjectiveParts {
            cls_full: cf,
            cls_stripped: cs,
            disc_full: df,
            disc_stripped: ds,
            total: (cf - df) + self.lambda * (cs - ds),
            gradients,
        })
    }

    fn classify(&self, tape: &mut Tape, params: &ParamSets, samples: &[&NewsSample]) -> Result<(Var, Var)> {
        let batch = self.arch.batch(samples)?;
        let h = self.arch.encode(tape, params, &batch)?;
        let logits = self.arch.classifier_logits(tape, params, h)?;
        let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
        Ok((h, tape.softmax_cross_entropy(logits, &labels)?))
    }

    fn discriminate(&self, tape: &mut Tape, params: &ParamSets, h: Var, target: usize) -> Result<Var> {
        let logits = self.arch.discriminator_logits(tape, params, h, self.grl_coeff)?;
        let n = tape.value(h).rows();
        tape.softmax_cross_entropy(logits, &vec![target; n])
    }
}

/// A small seeded problem for checking the full adversarial objective.
#[derive(Debug, Clone)]
pub struct GradcheckBatch {
    pub objective: BatchObjective,
    pub params: ParamSets,
    pub full: Vec<NewsSample>,
    pub stripped: Vec<NewsSample>,
}

impl GradcheckBatch {
    /// Four synthetic samples with trees, `d_in = 6`, `d_h = 8`.
    pub fn new(kind: EncoderKind, seed: u64, lambda: f64) -> Result<GradcheckBatch> {
        let cfg = SyntheticConfig {
            n_samples: 4,
            d_in: 6,
            n_events: 1,
            max_nodes: 10,
            reply_signal: 1.0,
            ..SyntheticConfig::default()
        };
        let full = generate_synthetic(&cfg, seed)?;
        let stripped = full.iter().map(|s| s.stripped()).collect();
        let arch = Architecture::new(kind, cfg.d_in, 8)?;
        Ok(GradcheckBatch {
            objective: BatchObjective {
                arch,
                lambda,
                grl_coeff: 1.0,
                adversarial: true,
            },
            params: arch.init_params(seed),
            full,
            stripped,
        })
    }

    /// Compares tape gradients with central differences: encoder and
    /// classifier against `L_total`, discriminator against the weighted
    /// discriminator loss. `tamper` may edit the analytic gradients first.
    pub fn check(&self, epsilon: f64, tamper: impl FnOnce(&mut Gradients, &ParamSets)) -> Result<GradCheckReport> {
        let full: Vec<&NewsSample> = self.full.iter().collect();
        let bare: Vec<&NewsSample> = self.stripped.iter().collect();
        let mut grads = self.objective.evaluate(&self.params, &full, &bare)?.gradients;
        tamper(&mut grads, &self.params);
        let obj = self.objective;
        let main = finite_difference_check(
            &self.params,
            &grads,
            epsilon,
            &[ParamGroup::Encoder, ParamGroup::Classifier],
            |p| Ok(obj.losses(p, &full, &bare)?.total),
        )?;
        let disc = finite_difference_check(&self.params, &grads, epsilon, &[ParamGroup::Discriminator], |p| {
            Ok(obj.losses(p, &full, &bare)?.disc_objective(obj.lambda))
        })?;
        Ok(main.merge(disc))
    }
}

/// Gradient check of the full objective for one encoder on the seeded
/// four-sample batch.
pub fn san_gradcheck(kind: EncoderKind, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    GradcheckBatch::new(kind, seed, 1.0)?.check(epsilon, |_, _| {})
}
