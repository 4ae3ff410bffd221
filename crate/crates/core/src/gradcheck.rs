//! Finite-difference verification of the analytic gradients: loss
//! derivatives with respect to the two rewards, and policy log-likelihood
//! derivatives with respect to the weight table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::objectives::{ObjectiveKind, ObjectiveSpec, RewardPair};
use crate::policy::PolicyParams;
use crate::seed::SeedSplitter;
use crate::vocab::Vocabulary;

/// `|a - n| / max(|a|, |n|, 1)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Random reward pairs per objective.
    pub trials: usize,
    /// Rewards are drawn uniformly from `[-range, range]`.
    pub range: f64,
    /// Random sequences per policy order.
    pub policy_trials: usize,
    pub policy_vocab: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Negates every analytic gradient before comparison. Only useful as a
    /// negative control for the checker itself.
    pub flip_sign: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            range: 20.0,
            policy_trials: 100,
            policy_vocab: 8,
            step: 1e-5,
            tolerance: 1e-6,
            seed: 0,
            flip_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    /// Inputs at which `max_rel_err` occurred.
    pub worst_case: String,
}

impl CheckResult {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            max_rel_err: 0.0,
            worst_case: String::new(),
        }
    }

    fn record(&mut self, err: f64, case: impl FnOnce() -> String) {
        self.cases += 1;
        if err > self.max_rel_err || err.is_nan() {
            self.max_rel_err = err;
            self.worst_case = case();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.max_rel_err < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !(r.max_rel_err < self.tolerance))
    }
}

/// Compares `(d_rw, d_rl)` of `kind` against central differences at
/// `config.trials` random reward pairs. KTO variants draw `kl` from `[0, 10]`.
pub fn check_objective(kind: ObjectiveKind, config: &GradcheckConfig) -> Result<CheckResult> {
    let mut rng = SeedSplitter::new(config.seed).rng("objective", &[kind as u64]);
    let sign = if config.flip_sign { -1.0 } else { 1.0 };
    let mut out = CheckResult::new(kind.to_string());
    let beta = ObjectiveSpec::DEFAULT_BETA;
    for _ in 0..config.trials {
        let r_w = rng.gen_range(-config.range..=config.range);
        let r_l = rng.gen_range(-config.range..=config.range);
        let kl = if kind.uses_kl() { rng.gen_range(0.0..=10.0) } else { 0.0 };
        let spec = ObjectiveSpec::new(kind).with_beta(beta).with_kl(kl);
        let loss = |w: f64, l: f64| -> f64 {
            let pair = RewardPair::from_rewards(w, l, beta).expect("beta is positive");
            spec.evaluate(&pair).expect("spec is valid").loss
        };
        let g = spec.evaluate(&RewardPair::from_rewards(r_w, r_l, beta)?)?;
        let n_w = central_difference(|x| loss(x, r_l), r_w, config.step);
        let n_l = central_difference(|x| loss(r_w, x), r_l, config.step);
        let (a_w, a_l) = (sign * g.d_rw, sign * g.d_rl);
        let err = rel_err(a_w, n_w).max(rel_err(a_l, n_l));
        out.record(err, || {
            format!(
                "r_w={r_w} r_l={r_l} kl={kl}: analytic ({a_w:e}, {a_l:e}) numeric ({n_w:e}, {n_l:e})"
            )
        });
    }
    Ok(out)
}

/// Compares the log-likelihood gradient of an order-`order` policy against
/// central differences over every weight, on random 5-token responses
/// ending in EOS.
pub fn check_policy(order: usize, config: &GradcheckConfig) -> Result<CheckResult> {
    let v = config.policy_vocab.max(Vocabulary::NUM_SPECIAL + 1);
    let mut rng = SeedSplitter::new(config.seed).rng("policy", &[order as u64]);
    let sign = if config.flip_sign { -1.0 } else { 1.0 };
    let mut out = CheckResult::new(format!("policy-k{order}"));
    for trial in 0..config.policy_trials {
        let weights = (0..v.pow(order as u32) * v)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let mut policy = PolicyParams::from_weights(order, v, weights)?;
        let prompt: Vec<usize> = (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(0..v)).collect();
        let mut response: Vec<usize> = (0..4).map(|_| rng.gen_range(0..v)).collect();
        response.push(Vocabulary::EOS);
        let (_, grad) = policy.log_likelihood_grad(&prompt, &response)?;
        let mut dense = vec![0.0; policy.weights().len()];
        grad.add_scaled_into(&mut dense, sign);
        let mut worst = (0.0f64, 0usize, 0.0, 0.0);
        for i in 0..dense.len() {
            let orig = policy.weights()[i];
            let mut at = |x: f64| {
                policy.weights_mut()[i] = x;
                policy.log_likelihood(&prompt, &response).expect("ids in range")
            };
            let numeric = (at(orig + config.step) - at(orig - config.step)) / (2.0 * config.step);
            policy.weights_mut()[i] = orig;
            let e = rel_err(dense[i], numeric);
            if e > worst.0 || e.is_nan() {
                worst = (e, i, dense[i], numeric);
            }
        }
        out.record(worst.0, || {
            format!(
                "trial {trial} prompt {prompt:?} response {response:?} weight {}: analytic {:e} numeric {:e}",
                worst.1, worst.2, worst.3
            )
        });
    }
    Ok(out)
}

/// Every objective, then the policy at orders 1 and 2.
pub fn run_all(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut results = ObjectiveKind::ALL
        .iter()
        .map(|&k| check_objective(k, config))
        .collect::<Result<Vec<_>>>()?;
    for order in [1, 2] {
        results.push(check_policy(order, config)?);
    }
    Ok(GradcheckReport {
        tolerance: config.tolerance,
        results,
    })
}
