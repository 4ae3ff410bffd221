//! Deterministic preference-training loop over the toy policy.

mod dynamics;
mod kl;
mod rmsprop;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use dynamics::{compare_dynamics, DynamicsReport, ObjectiveRun, OrderingVerdict};
pub use kl::{derangement, estimate_kl};
pub use rmsprop::{rmsprop_step, RmsProp};

use crate::dataset::{LengthCaps, PreferenceTriple, TokenizedTriple};
use crate::error::{Error, Result};
use crate::objectives::{batch_loss, ObjectiveKind, ObjectiveSpec, RewardPair};
use crate::policy::PolicyParams;
use crate::seed::SeedSplitter;
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    LinearDecay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalInterval {
    Epoch,
    Steps(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub seed: u64,
    pub heldout_fraction: f64,
    /// Lower bound on the held-out size, capped at half the dataset.
    pub min_heldout: usize,
    pub order: usize,
    pub caps: LengthCaps,
    pub eval_interval: EvalInterval,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveSpec::new(ObjectiveKind::Dpo),
            epochs: 18,
            batch_size: 16,
            learning_rate: 1e-2,
            lr_schedule: LrSchedule::LinearDecay,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            seed: 0,
            heldout_fraction: 0.05,
            min_heldout: 100,
            order: 1,
            caps: LengthCaps::default(),
            eval_interval: EvalInterval::Epoch,
        }
    }
}

impl TrainConfig {
    pub fn with_objective(mut self, kind: ObjectiveKind) -> Self {
        self.objective.kind = kind;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be non-negative, got {}", self.learning_rate));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 0.5) {
            return bad(format!(
                "held-out fraction must lie in (0, 0.5), got {}",
                self.heldout_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) || !(self.rmsprop_eps >= 0.0) {
            return bad("rmsprop decay must lie in [0, 1) and eps be non-negative".into());
        }
        if let EvalInterval::Steps(0) = self.eval_interval {
            return bad("evaluation interval must be positive".into());
        }
        Ok(())
    }

    /// Learning rate applied at optimizer step `step` (0-based) of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::LinearDecay => {
                self.learning_rate * (total - step.min(total)) as f64 / total as f64
            }
        }
    }
}

/// Held-out averages at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub epoch: usize,
    pub mean_ll_w: f64,
    pub mean_ll_l: f64,
    pub mean_r_w: f64,
    pub mean_r_l: f64,
    /// Running mean of the training loss over the current epoch. At step 0 it
    /// is the mean loss over the training split at initialization.
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub policy: PolicyParams,
    pub reference: PolicyParams,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Dataset indices of the held-out split, in evaluation order.
    pub heldout: Vec<usize>,
    pub train: Vec<usize>,
    pub total_steps: usize,
}

/// Seeded train/held-out split over `n` items.
pub fn split_indices(n: usize, config: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Empty("training split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut SeedSplitter::new(config.seed).rng("split", &[]));
    let by_fraction = (config.heldout_fraction * n as f64).ceil() as usize;
    let held = by_fraction.max(config.min_heldout).min(n / 2).max(1);
    let train = idx.split_off(held);
    Ok((idx, train))
}

struct Scored {
    ll_w: f64,
    ll_l: f64,
    ref_w: f64,
    ref_l: f64,
}

fn score(
    policy: &PolicyParams,
    t: &TokenizedTriple,
    ref_ll: (f64, f64),
) -> Result<Scored> {
    Ok(Scored {
        ll_w: policy.log_likelihood(&t.prompt_ids, &t.winning_ids)?,
        ll_l: policy.log_likelihood(&t.prompt_ids, &t.losing_ids)?,
        ref_w: ref_ll.0,
        ref_l: ref_ll.1,
    })
}

fn evaluate(
    policy: &PolicyParams,
    data: &[TokenizedTriple],
    ref_ll: &[(f64, f64)],
    idx: &[usize],
    beta: f64,
) -> Result<[f64; 4]> {
    let mut acc = [0.0; 4];
    for &i in idx {
        let s = score(policy, &data[i], ref_ll[i])?;
        acc[0] += s.ll_w;
        acc[1] += s.ll_l;
        acc[2] += beta * (s.ll_w - s.ref_w);
        acc[3] += beta * (s.ll_l - s.ref_l);
    }
    let n = idx.len() as f64;
    Ok(acc.map(|a| a / n))
}

/// Trains a freshly initialized policy on `dataset` with `config`.
pub fn train(
    dataset: &[PreferenceTriple],
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<TrainRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let seeds = SeedSplitter::new(config.seed);
    let init = PolicyParams::random_init(config.order, vocab.len(), seeds.derive("init", &[]))?;
    train_from(dataset, vocab, config, init)
}

/// Trains starting from `init`, which is also frozen as the reference.
pub fn train_from(
    dataset: &[PreferenceTriple],
    vocab: &Vocabulary,
    config: &TrainConfig,
    init: PolicyParams,
) -> Result<TrainRun> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    if init.vocab_size() != vocab.len() {
        return Err(Error::InvalidArgument(format!(
            "policy vocabulary size {} does not match vocabulary of {}",
            init.vocab_size(),
            vocab.len()
        )));
    }
    let seeds = SeedSplitter::new(config.seed);
    let spec = config.objective;
    let beta = spec.beta;
    let data: Vec<TokenizedTriple> = dataset
        .iter()
        .map(|t| TokenizedTriple::new(t, vocab, config.caps))
        .collect();
    let (heldout, train_idx) = split_indices(data.len(), config)?;

    let mut policy = init;
    let reference = policy.snapshot();
    let ref_ll = data
        .iter()
        .map(|t| {
            Ok((
                reference.log_likelihood(&t.prompt_ids, &t.winning_ids)?,
                reference.log_likelihood(&t.prompt_ids, &t.losing_ids)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let steps_per_epoch = train_idx.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut optimizer = RmsProp::new(policy.weights().len(), config.rmsprop_decay, config.rmsprop_eps);
    let mut grad = vec![0.0; policy.weights().len()];

    let init_loss = {
        let pairs = train_idx
            .iter()
            .map(|&i| {
                let s = score(&policy, &data[i], ref_ll[i])?;
                RewardPair::new(s.ll_w, s.ll_l, s.ref_w, s.ref_l, beta)
            })
            .collect::<Result<Vec<_>>>()?;
        batch_loss(&pairs, &spec.with_kl(0.0))?.mean_loss
    };
    let point = |policy: &PolicyParams, step, epoch, train_loss| -> Result<TrajectoryPoint> {
        let [ll_w, ll_l, r_w, r_l] = evaluate(policy, &data, &ref_ll, &heldout, beta)?;
        Ok(TrajectoryPoint {
            step,
            epoch,
            mean_ll_w: ll_w,
            mean_ll_l: ll_l,
            mean_r_w: r_w,
            mean_r_l: r_l,
            train_loss,
        })
    };
    let mut trajectory = vec![point(&policy, 0, 0, init_loss)?];

    let mut step = 0;
    let mut order = train_idx.clone();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut seeds.rng("shuffle", &[epoch as u64]));
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TokenizedTriple> = chunk.iter().map(|&i| &data[i]).collect();
            let mut pairs = Vec::with_capacity(batch.len());
            let mut grads = Vec::with_capacity(batch.len());
            for (&i, t) in chunk.iter().zip(&batch) {
                let (ll_w, g_w) = policy.log_likelihood_grad(&t.prompt_ids, &t.winning_ids)?;
                let (ll_l, g_l) = policy.log_likelihood_grad(&t.prompt_ids, &t.losing_ids)?;
                pairs.push(RewardPair::new(ll_w, ll_l, ref_ll[i].0, ref_ll[i].1, beta)?);
                grads.push((g_w, g_l));
            }
            let step_spec = if spec.kind.uses_kl() {
                let owned: Vec<TokenizedTriple> = batch.iter().map(|t| (*t).clone()).collect();
                let kl = estimate_kl(&owned, &policy, &reference, &mut seeds.rng("kl", &[step as u64]))?;
                spec.with_kl(kl)
            } else {
                spec
            };
            let bl = batch_loss(&pairs, &step_spec)?;
            let non_finite = !bl.mean_loss.is_finite()
                || bl.per_pair.iter().any(|g| !(g.d_rw.is_finite() && g.d_rl.is_finite()));
            if non_finite {
                return Err(Error::NonFinite {
                    step,
                    objective: spec.kind.to_string(),
                    detail: format!("batch loss {}", bl.mean_loss),
                });
            }

            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = beta / pairs.len() as f64;
            for (lg, (g_w, g_l)) in bl.per_pair.iter().zip(&grads) {
                g_w.add_scaled_into(&mut grad, lg.d_rw * scale);
                if lg.d_rl != 0.0 {
                    g_l.add_scaled_into(&mut grad, lg.d_rl * scale);
                }
            }
            let lr = config.lr_at(step, total_steps);
            optimizer.step(policy.weights_mut(), &grad, lr)?;
            if let Some(w) = policy.weights().iter().find(|w| !w.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    objective: spec.kind.to_string(),
                    detail: format!("weight became {w}"),
                });
            }
            step += 1;
            loss_sum += bl.mean_loss * pairs.len() as f64;
            loss_count += pairs.len();

            if let EvalInterval::Steps(n) = config.eval_interval {
                if step % n == 0 {
                    trajectory.push(point(&policy, step, epoch, loss_sum / loss_count as f64)?);
                }
            }
        }
        if config.eval_interval == EvalInterval::Epoch {
            trajectory.push(point(&policy, step, epoch, loss_sum / loss_count as f64)?);
        }
    }

    Ok(TrainRun {
        policy,
        reference,
        trajectory,
        heldout,
        train: train_idx,
        total_steps,
    })
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            fixed
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

pub const TRAJECTORY_HEADER: &str = "step,epoch,objective,ll_w,ll_l,r_w,r_l,loss";

pub fn trajectory_csv(objective: ObjectiveKind, points: &[TrajectoryPoint]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            p.step,
            p.epoch,
            objective,
            format_sig9(p.mean_ll_w),
            format_sig9(p.mean_ll_l),
            format_sig9(p.mean_r_w),
            format_sig9(p.mean_r_l),
            format_sig9(p.train_loss),
        ));
    }
    out
}

pub fn write_trajectory_csv(
    path: &Path,
    objective: ObjectiveKind,
    points: &[TrajectoryPoint],
) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(trajectory_csv(objective, points).as_bytes()))
        .map_err(|e| Error::io(path, e))
}
