//! Desk-scale Siamese training loop, β sweeps and metrics records.
//!
//! One step: draw a batch of view pairs, embed both views, estimate each
//! branch's score matrix from that batch alone (detached), take the loss
//! gradient with respect to the embeddings, backpropagate into the online
//! encoder, apply SGD, and move the EMA target if there is one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    alignment_metric, embedding_spread, linear_probe_with, uniformity_metric, GenConfig, ProbeConfig,
    ViewGenerator, ViewPairBatch,
};
use crate::encoder::{EncoderModel, MomentumSchedule, Sgd, TargetBranch};
use crate::entropy::{entropy_surrogate, entropy_surrogate_grad};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{
    alignment, alignment_grad, decorrelation_loss_grad, infonce_loss_grad, BaselineConfig, LossTerms,
};
use crate::stein::{stein_estimate, SteinConfig};

/// Stream ids under the run seed. Keeping them apart means changing the
/// batch size never perturbs initialization or the evaluation set.
const STREAM_INIT: u64 = 0;
const STREAM_BATCHES: u64 = 1;
const STREAM_EVAL: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wiring {
    /// One shared encoder for both views; gradients flow through both.
    Symmetric,
    /// View 2 goes through an EMA copy that receives no gradient.
    MomentumTarget,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mveb,
    Infonce,
    Decorrelation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub sgd_momentum: f64,
    pub weight_decay: f64,
    pub wiring: Wiring,
    pub ema_base: f64,
    pub stein: SteinConfig<f64>,
    pub data: GenConfig,
    pub loss_kind: LossKind,
    pub temperature: f64,
    pub decorrelation_lambda: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Records are emitted at step 1, every `log_every` steps, and at the end.
    pub log_every: usize,
    /// Probe accuracy is attached to records at multiples of this (0 = end only).
    pub probe_every: usize,
    /// Size of each of the held-out probe-train and probe-test sets.
    pub eval_size: usize,
    pub probe: ProbeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.01,
            batch_size: 256,
            steps: 2000,
            lr: 0.05,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            wiring: Wiring::Symmetric,
            ema_base: 0.996,
            stein: SteinConfig::default(),
            data: GenConfig::default(),
            loss_kind: LossKind::Mveb,
            temperature: 0.2,
            decorrelation_lambda: 1.0,
            seed: 0,
            hidden: vec![64, 64],
            output_dim: 16,
            log_every: 100,
            probe_every: 0,
            eval_size: 1000,
            probe: ProbeConfig::default(),
        }
    }
}

fn bad(name: &'static str, reason: &str) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.to_string(),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(bad("beta", "must be finite and ≥ 0"));
        }
        if self.batch_size < 2 {
            return Err(bad("batch_size", "must be ≥ 2"));
        }
        if self.steps < 1 {
            return Err(bad("steps", "must be ≥ 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(bad("lr", "must be finite and ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) {
            return Err(bad("sgd_momentum", "must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(bad("weight_decay", "must be ≥ 0"));
        }
        if !(0.0..=1.0).contains(&self.ema_base) {
            return Err(bad("ema_base", "must be in [0, 1]"));
        }
        if self.output_dim < 2 {
            return Err(bad("output_dim", "must be ≥ 2"));
        }
        if self.hidden.contains(&0) {
            return Err(bad("hidden", "layer widths must be ≥ 1"));
        }
        if self.log_every < 1 {
            return Err(bad("log_every", "must be ≥ 1"));
        }
        if self.eval_size < 2 {
            return Err(bad("eval_size", "must be ≥ 2"));
        }
        if !(self.probe.lr > 0.0) || !(self.probe.l2 >= 0.0) {
            return Err(bad("probe", "need lr > 0 and l2 ≥ 0"));
        }
        BaselineConfig {
            temperature: self.temperature,
            decorrelation_lambda: self.decorrelation_lambda,
        }
        .validate()?;
        self.stein.validate()?;
        self.data.validate()
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub alignment: f64,
    pub entropy_surr_1: f64,
    pub entropy_surr_2: f64,
    pub total: f64,
    pub beta: f64,
    pub alignment_metric: f64,
    pub uniformity_metric: f64,
    pub embedding_spread: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probe_accuracy: Option<f64>,
    pub resolved_bandwidth: f64,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record fields are plain numbers")
    }
}

/// Held-out evaluation of the online encoder after training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub beta: f64,
    pub final_loss: f64,
    pub alignment_metric: f64,
    pub uniformity_metric: f64,
    pub embedding_spread: f64,
    pub probe_accuracy: f64,
}

pub struct TrainOutcome {
    pub model: EncoderModel<f64>,
    pub target: Option<EncoderModel<f64>>,
    pub records: Vec<MetricsRecord>,
    pub final_metrics: FinalMetrics,
}

struct EvalSet {
    train: ViewPairBatch<f64>,
    test: ViewPairBatch<f64>,
}

fn eval_set(cfg: &TrainConfig, gen: &ViewGenerator) -> Result<EvalSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_EVAL);
    Ok(EvalSet {
        train: gen.sample(&mut rng, cfg.eval_size)?,
        test: gen.sample(&mut rng, cfg.eval_size)?,
    })
}

fn probe(cfg: &TrainConfig, model: &EncoderModel<f64>, eval: &EvalSet) -> Result<f64> {
    let ztr = model.embed(&eval.train.v1)?;
    let zte = model.embed(&eval.test.v1)?;
    linear_probe_with(&ztr, &eval.train.labels, &zte, &eval.test.labels, &cfg.probe)
}

fn nan_guard(step: usize, what: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericalFailure {
            step,
            what: format!("{what} is {x}"),
        })
    }
}

struct StepResult {
    terms: LossTerms<f64>,
    g1: Matrix<f64>,
    g2: Option<Matrix<f64>>,
    bandwidth: f64,
}

/// Loss terms and embedding gradients for one batch. `z2` is the second
/// branch (online or target), `z2_online` is set only when view 2 also went
/// through the online encoder under the momentum wiring.
fn loss_step(
    cfg: &TrainConfig,
    step: usize,
    z1: &Matrix<f64>,
    z2: &Matrix<f64>,
    z2_online: Option<&Matrix<f64>>,
) -> Result<StepResult> {
    let wrap = |e: Error| Error::NumericalFailure {
        step,
        what: e.to_string(),
    };
    match cfg.loss_kind {
        LossKind::Mveb => {
            let a = alignment_grad(z1, z2)?;
            let align = alignment(z1, z2)?;
            let entropy_branch = z2_online.unwrap_or(z2);
            if cfg.beta == 0.0 {
                // scores carry zero weight; skip the estimate entirely
                let bandwidth = cfg.stein.kernel.resolve(z1).map_err(wrap)?;
                let terms = LossTerms {
                    alignment: align,
                    entropy_surr_1: 0.0,
                    entropy_surr_2: 0.0,
                    total: -align,
                    beta: 0.0,
                };
                return Ok(StepResult {
                    terms,
                    g1: a.z1.scale(-1.0),
                    g2: z2_online.is_none().then(|| a.z2.scale(-1.0)),
                    bandwidth,
                });
            }
            let s1 = stein_estimate(z1, &cfg.stein).map_err(wrap)?;
            let s2 = stein_estimate(entropy_branch, &cfg.stein).map_err(wrap)?;
            let e1 = entropy_surrogate(z1, &s1)?.value;
            let e2 = entropy_surrogate(entropy_branch, &s2)?.value;
            let terms = LossTerms {
                alignment: align,
                entropy_surr_1: e1,
                entropy_surr_2: e2,
                total: 0.0,
                beta: cfg.beta,
            };
            let terms = LossTerms {
                total: terms.reassemble(),
                ..terms
            };
            let hb = 0.5 * cfg.beta;
            let g1 = entropy_surrogate_grad(&s1)?.scale(hb).sub(&a.z1)?;
            let mut g2 = entropy_surrogate_grad(&s2)?.scale(hb);
            if z2_online.is_none() {
                g2 = g2.sub(&a.z2)?;
            }
            Ok(StepResult {
                terms,
                g1,
                g2: Some(g2),
                bandwidth: s1.resolved_bandwidth,
            })
        }
        LossKind::Infonce | LossKind::Decorrelation => {
            let (value, grads) = if cfg.loss_kind == LossKind::Infonce {
                infonce_loss_grad(z1, z2, cfg.temperature)?
            } else {
                decorrelation_loss_grad(z1, z2, cfg.decorrelation_lambda)?
            };
            let bandwidth = cfg.stein.kernel.resolve(z1).map_err(wrap)?;
            Ok(StepResult {
                terms: LossTerms {
                    alignment: alignment(z1, z2)?,
                    entropy_surr_1: 0.0,
                    entropy_surr_2: 0.0,
                    total: value,
                    beta: cfg.beta,
                },
                g1: grads.z1,
                g2: (cfg.wiring == Wiring::Symmetric).then_some(grads.z2),
                bandwidth,
            })
        }
    }
}

/// Trains per the config and returns the online model, the metrics stream
/// and a held-out evaluation. Identical configs give bit-identical results.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_observer(cfg, |_| {})
}

/// Like [`train`], calling `observe` on each record as it is produced.
pub fn train_with_observer<F: FnMut(&MetricsRecord)>(cfg: &TrainConfig, mut observe: F) -> Result<TrainOutcome> {
    cfg.validate()?;
    let gen = ViewGenerator::new(&cfg.data)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(STREAM_INIT);
    let mut model = EncoderModel::<f64>::new_random(cfg.data.input_dim, &cfg.hidden, cfg.output_dim, &mut init_rng)?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    batch_rng.set_stream(STREAM_BATCHES);
    let eval = eval_set(cfg, &gen)?;

    let mut opt = (cfg.lr > 0.0)
        .then(|| Sgd::new(cfg.lr, cfg.sgd_momentum, cfg.weight_decay))
        .transpose()?;
    let mut target = match cfg.wiring {
        Wiring::Symmetric => None,
        Wiring::MomentumTarget => Some(TargetBranch::new(
            &model,
            cfg.ema_base,
            MomentumSchedule::CosineIncrease,
        )?),
    };

    let mut records = Vec::new();
    let mut last_total = f64::NAN;
    for step in 1..=cfg.steps {
        let batch: ViewPairBatch<f64> = gen.sample(&mut batch_rng, cfg.batch_size)?;
        let pass1 = model.forward(&batch.v1)?;
        let pass2 = model.forward(&batch.v2)?;
        let z1 = &pass1.output;
        let (result, z2_for_metrics) = match &target {
            None => (loss_step(cfg, step, z1, &pass2.output, None)?, pass2.output.clone()),
            Some(t) => {
                let z2t = t.params.embed(&batch.v2)?;
                let r = match cfg.loss_kind {
                    LossKind::Mveb => loss_step(cfg, step, z1, &z2t, Some(&pass2.output))?,
                    _ => loss_step(cfg, step, z1, &z2t, None)?,
                };
                (r, z2t)
            }
        };
        let t = &result.terms;
        nan_guard(step, "loss", t.total)?;
        last_total = t.total;

        let is_log = step == 1 || step % cfg.log_every == 0 || step == cfg.steps;
        if is_log {
            let probe_accuracy = if step == cfg.steps || (cfg.probe_every > 0 && step % cfg.probe_every == 0) {
                Some(probe(cfg, &model, &eval)?)
            } else {
                None
            };
            let rec = MetricsRecord {
                step,
                alignment: t.alignment,
                entropy_surr_1: t.entropy_surr_1,
                entropy_surr_2: t.entropy_surr_2,
                total: t.total,
                beta: t.beta,
                alignment_metric: alignment_metric(z1, &z2_for_metrics)?,
                uniformity_metric: uniformity_metric(z1)?,
                embedding_spread: embedding_spread(z1)?,
                probe_accuracy,
                resolved_bandwidth: result.bandwidth,
            };
            observe(&rec);
            records.push(rec);
        }

        if let Some(opt) = opt.as_mut() {
            let mut tape = model.backward(&pass1, &result.g1)?;
            if let Some(g2) = &result.g2 {
                tape.add_assign(&model.backward(&pass2, g2)?)?;
            }
            if tape.flat().iter().any(|g| !g.is_finite()) {
                return Err(Error::NumericalFailure {
                    step,
                    what: "non-finite parameter gradient".into(),
                });
            }
            opt.step(&mut model, &tape)?;
        }
        if let Some(t) = target.as_mut() {
            t.ema_update(&model, step, cfg.steps)?;
        }
    }

    let final_metrics = evaluate(cfg, &model, &eval, last_total)?;
    Ok(TrainOutcome {
        model,
        target: target.map(|t| t.params),
        records,
        final_metrics,
    })
}

fn evaluate(cfg: &TrainConfig, model: &EncoderModel<f64>, eval: &EvalSet, final_loss: f64) -> Result<FinalMetrics> {
    let z1 = model.embed(&eval.test.v1)?;
    let z2 = model.embed(&eval.test.v2)?;
    Ok(FinalMetrics {
        beta: cfg.beta,
        final_loss,
        alignment_metric: alignment_metric(&z1, &z2)?,
        uniformity_metric: uniformity_metric(&z1)?,
        embedding_spread: embedding_spread(&z1)?,
        probe_accuracy: probe(cfg, model, eval)?,
    })
}

/// Probe accuracy of an arbitrary encoder on the run's held-out sets.
pub fn probe_model(cfg: &TrainConfig, model: &EncoderModel<f64>) -> Result<FinalMetrics> {
    cfg.validate()?;
    let gen = ViewGenerator::new(&cfg.data)?;
    let eval = eval_set(cfg, &gen)?;
    evaluate(cfg, model, &eval, f64::NAN)
}

pub type SweepRow = FinalMetrics;

/// One training run per β, all with the config's seed.
pub fn beta_sweep(cfg: &TrainConfig, betas: &[f64]) -> Result<Vec<SweepRow>> {
    if betas.is_empty() {
        return Err(bad("betas", "need at least one value"));
    }
    betas
        .iter()
        .map(|&beta| {
            let run = TrainConfig { beta, ..cfg.clone() };
            Ok(train(&run)?.final_metrics)
        })
        .collect()
}

pub const SUMMARY_HEADER: &str =
    "beta,final_loss,alignment_metric,uniformity_metric,embedding_spread,probe_accuracy";

/// Comma-separated summary table with a header row.
pub fn summary_csv(rows: &[FinalMetrics]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.beta, r.final_loss, r.alignment_metric, r.uniformity_metric, r.embedding_spread, r.probe_accuracy
        ));
    }
    out
}
