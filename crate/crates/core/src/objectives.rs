//! Rewards and the contrastive / anchored alignment losses.
//!
//! Every loss is expressed as a function of the two per-pair rewards
//!
//! ```text
//! r = beta * (ll_theta(y | x) - ll_ref(y | x))
//! ```
//!
//! and returns its gradient with respect to `(r_w, r_l)`. The chain rule into
//! policy parameters happens in the trainer, which keeps the
//! direction/magnitude decomposition of each objective directly testable:
//!
//! ```text
//! DPO        -log s(r_w - r_l)              d_rw = -s(r_l - r_w)         d_rl = +s(r_l - r_w)
//! APO-zero   -s(r_w) + s(r_l)               d_rw = -d(r_w)               d_rl = +d(r_l)
//! APO-down    s(r_w) - s(r_w - r_l)         d_rw = d(r_w) - d(r_w - r_l) d_rl = +d(r_w - r_l)
//! KTO-pair   -s(r_w - b*KL) - s(b*KL - r_l) d_rw = -d(r_w - b*KL)        d_rl = +d(b*KL - r_l)
//! ```
//!
//! where `s` is the logistic sigmoid and `d(x) = s(x) * (1 - s(x))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logistic sigmoid, evaluated on the branch that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without underflow for large negative `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `sigmoid(x) * (1 - sigmoid(x))`; maximal (0.25) at zero.
pub fn delta(x: f64) -> f64 {
    sigmoid(x) * sigmoid(-x)
}

/// Per-pair log-likelihoods and the rewards derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardPair {
    pub ll_w_theta: f64,
    pub ll_l_theta: f64,
    pub ll_w_ref: f64,
    pub ll_l_ref: f64,
    pub beta: f64,
    pub r_w: f64,
    pub r_l: f64,
}

impl RewardPair {
    pub fn new(
        ll_w_theta: f64,
        ll_l_theta: f64,
        ll_w_ref: f64,
        ll_l_ref: f64,
        beta: f64,
    ) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            ll_w_theta,
            ll_l_theta,
            ll_w_ref,
            ll_l_ref,
            beta,
            r_w: beta * (ll_w_theta - ll_w_ref),
            r_l: beta * (ll_l_theta - ll_l_ref),
        })
    }

    /// Builds a pair with the given rewards over reference log-likelihoods of
    /// zero. Policy log-likelihoods are back-solved as `r / beta`.
    pub fn from_rewards(r_w: f64, r_l: f64, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            ll_w_theta: r_w / beta,
            ll_l_theta: r_l / beta,
            ll_w_ref: 0.0,
            ll_l_ref: 0.0,
            beta,
            r_w,
            r_l,
        })
    }

    pub fn margin(&self) -> f64 {
        self.r_w - self.r_l
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("beta must be positive, got {beta}")))
    }
}

/// A loss value and its gradient with respect to the two rewards.
///
/// For unpaired losses evaluated on a single response, `d_rw` carries the
/// derivative with respect to that response's reward and `d_rl` is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGrad {
    pub loss: f64,
    pub d_rw: f64,
    pub d_rl: f64,
}

pub fn loss_dpo(r: &RewardPair) -> LossGrad {
    let m = r.r_w - r.r_l;
    let s = sigmoid(-m);
    LossGrad {
        loss: -log_sigmoid(m),
        d_rw: -s,
        d_rl: s,
    }
}

pub fn loss_apo_zero(r: &RewardPair) -> LossGrad {
    LossGrad {
        loss: -sigmoid(r.r_w) + sigmoid(r.r_l),
        d_rw: -delta(r.r_w),
        d_rl: delta(r.r_l),
    }
}

pub fn loss_apo_down(r: &RewardPair) -> LossGrad {
    let m = r.r_w - r.r_l;
    LossGrad {
        loss: sigmoid(r.r_w) - sigmoid(m),
        d_rw: delta(r.r_w) - delta(m),
        d_rl: delta(m),
    }
}

/// Paired KTO. `kl` is a detached estimate in nats; the anchor is `beta * kl`.
pub fn loss_kto_pair(r: &RewardPair, kl: f64) -> Result<LossGrad> {
    check_kl(kl)?;
    let anchor = r.beta * kl;
    Ok(LossGrad {
        loss: -sigmoid(r.r_w - anchor) - sigmoid(anchor - r.r_l),
        d_rw: -delta(r.r_w - anchor),
        d_rl: delta(anchor - r.r_l),
    })
}

/// Negative winning log-likelihood. Since `ll_w_theta = ll_w_ref + r_w / beta`,
/// the reward gradient is `-1 / beta`.
pub fn loss_sft(r: &RewardPair) -> LossGrad {
    LossGrad {
        loss: -r.ll_w_theta,
        d_rw: -1.0 / r.beta,
        d_rl: 0.0,
    }
}

fn check_kl(kl: f64) -> Result<()> {
    if kl >= 0.0 && kl.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("kl must be non-negative, got {kl}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Desirable,
    Undesirable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnpairedWeights {
    pub desirable: f64,
    pub undesirable: f64,
}

impl Default for UnpairedWeights {
    fn default() -> Self {
        Self {
            desirable: 1.0,
            undesirable: 1.0,
        }
    }
}

/// Unpaired KTO and its zero-anchored variant on one response reward.
pub fn loss_unpaired(
    reward: f64,
    label: Label,
    kl: f64,
    kind: ObjectiveKind,
    beta: f64,
    weights: UnpairedWeights,
) -> Result<LossGrad> {
    check_beta(beta)?;
    if !(weights.desirable >= 0.0 && weights.undesirable >= 0.0) {
        return Err(Error::Precondition(format!(
            "unpaired weights must be non-negative, got {weights:?}"
        )));
    }
    let kl = match kind {
        ObjectiveKind::KtoUnpaired => {
            check_kl(kl)?;
            kl
        }
        ObjectiveKind::ApoZeroUnpaired => 0.0,
        other => {
            return Err(Error::InvalidArgument(format!(
                "{other} is not an unpaired objective"
            )))
        }
    };
    let anchor = beta * kl;
    let (loss, d) = match label {
        Label::Desirable => {
            let z = reward - anchor;
            (
                weights.desirable * (1.0 - sigmoid(z)),
                -weights.desirable * delta(z),
            )
        }
        Label::Undesirable => {
            let z = anchor - reward;
            (
                weights.undesirable * (1.0 - sigmoid(z)),
                weights.undesirable * delta(z),
            )
        }
    };
    Ok(LossGrad {
        loss,
        d_rw: d,
        d_rl: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    Sft,
    Dpo,
    ApoZero,
    ApoDown,
    KtoPair,
    KtoUnpaired,
    ApoZeroUnpaired,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 7] = [
        ObjectiveKind::Sft,
        ObjectiveKind::Dpo,
        ObjectiveKind::ApoZero,
        ObjectiveKind::ApoDown,
        ObjectiveKind::KtoPair,
        ObjectiveKind::KtoUnpaired,
        ObjectiveKind::ApoZeroUnpaired,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectiveKind::Sft => "sft",
            ObjectiveKind::Dpo => "dpo",
            ObjectiveKind::ApoZero => "apo-zero",
            ObjectiveKind::ApoDown => "apo-down",
            ObjectiveKind::KtoPair => "kto-pair",
            ObjectiveKind::KtoUnpaired => "kto-unpaired",
            ObjectiveKind::ApoZeroUnpaired => "apo-zero-unpaired",
        }
    }

    /// Whether the loss consumes the detached KL estimate.
    pub fn uses_kl(&self) -> bool {
        matches!(self, ObjectiveKind::KtoPair | ObjectiveKind::KtoUnpaired)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown objective {s:?}")))
    }
}

/// Loss variant plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub beta: f64,
    /// Detached KL estimate in nats, used by the KTO variants.
    pub kl_estimate: f64,
    pub weights: UnpairedWeights,
}

impl ObjectiveSpec {
    pub const DEFAULT_BETA: f64 = 0.1;

    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            beta: Self::DEFAULT_BETA,
            kl_estimate: 0.0,
            weights: UnpairedWeights::default(),
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_kl(mut self, kl: f64) -> Self {
        self.kl_estimate = kl;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        check_kl(self.kl_estimate)?;
        if !(self.weights.desirable > 0.0 && self.weights.undesirable > 0.0) {
            return Err(Error::Precondition(format!(
                "unpaired weights must be positive, got {:?}",
                self.weights
            )));
        }
        Ok(())
    }

    /// Evaluates the objective on one pair. Unpaired kinds split the pair into
    /// a desirable winning example and an undesirable losing example and sum
    /// the two losses.
    pub fn evaluate(&self, r: &RewardPair) -> Result<LossGrad> {
        Ok(match self.kind {
            ObjectiveKind::Sft => loss_sft(r),
            ObjectiveKind::Dpo => loss_dpo(r),
            ObjectiveKind::ApoZero => loss_apo_zero(r),
            ObjectiveKind::ApoDown => loss_apo_down(r),
            ObjectiveKind::KtoPair => loss_kto_pair(r, self.kl_estimate)?,
            ObjectiveKind::KtoUnpaired | ObjectiveKind::ApoZeroUnpaired => {
                let w = loss_unpaired(
                    r.r_w,
                    Label::Desirable,
                    self.kl_estimate,
                    self.kind,
                    r.beta,
                    self.weights,
                )?;
                let l = loss_unpaired(
                    r.r_l,
                    Label::Undesirable,
                    self.kl_estimate,
                    self.kind,
                    r.beta,
                    self.weights,
                )?;
                LossGrad {
                    loss: w.loss + l.loss,
                    d_rw: w.d_rw,
                    d_rl: l.d_rw,
                }
            }
        })
    }
}

/// Mean loss over a batch together with each pair's own (unscaled) loss and
/// reward gradients. The gradient of the mean with respect to pair `i` is
/// `per_pair[i] / len`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub mean_loss: f64,
    pub per_pair: Vec<LossGrad>,
}

pub fn batch_loss(pairs: &[RewardPair], spec: &ObjectiveSpec) -> Result<BatchLoss> {
    if pairs.is_empty() {
        return Err(Error::Empty("batch"));
    }
    spec.validate()?;
    let per_pair = pairs
        .iter()
        .map(|r| spec.evaluate(r))
        .collect::<Result<Vec<_>>>()?;
    let mean_loss = per_pair.iter().map(|g| g.loss).sum::<f64>() / per_pair.len() as f64;
    Ok(BatchLoss {
        mean_loss,
        per_pair,
    })
}
