//! Order-k autoregressive categorical policy.
//!
//! The policy is a table of unnormalized logits with one row per context of
//! `order` previous tokens. Prompts shorter than the order are left-padded
//! with BOS, so every response position has a well-defined context.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    order: usize,
    vocab_size: usize,
    /// Row-major `[vocab_size^order, vocab_size]`.
    weights: Vec<f64>,
}

/// Sparse gradient of a log-likelihood: only visited context rows are stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGrad {
    rows: BTreeMap<usize, Vec<f64>>,
}

impl ParamGrad {
    pub fn row(&self, ctx: usize) -> Option<&[f64]> {
        self.rows.get(&ctx).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&c, r)| (c, r.as_slice()))
    }

    /// Gradient entry for `(context row, token)`; zero when unvisited.
    pub fn get(&self, ctx: usize, token: TokenId) -> f64 {
        self.rows.get(&ctx).map_or(0.0, |r| r[token])
    }

    /// `dense += scale * self`.
    pub fn add_scaled_into(&self, dense: &mut [f64], scale: f64) {
        for (&ctx, row) in &self.rows {
            let width = row.len();
            let dst = &mut dense[ctx * width..(ctx + 1) * width];
            for (d, g) in dst.iter_mut().zip(row) {
                *d += scale * g;
            }
        }
    }
}

/// Numerically stable log-softmax of one row.
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(|z| z - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl PolicyParams {
    pub fn zeros(order: usize, vocab_size: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("policy order must be at least 1".into()));
        }
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocabulary is empty".into()));
        }
        let rows = vocab_size
            .checked_pow(order as u32)
            .filter(|r| r.checked_mul(vocab_size).is_some())
            .ok_or_else(|| Error::InvalidArgument("policy table too large".into()))?;
        Ok(Self {
            order,
            vocab_size,
            weights: vec![0.0; rows * vocab_size],
        })
    }

    /// Weights drawn from `uniform(-0.1, 0.1)`.
    pub fn random_init(order: usize, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(order, vocab_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut p.weights {
            *w = rng.gen_range(-0.1..0.1);
        }
        Ok(p)
    }

    pub fn from_weights(order: usize, vocab_size: usize, weights: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(order, vocab_size)?;
        if weights.len() != p.weights.len() {
            return Err(Error::ShapeMismatch {
                expected: p.weights.len(),
                actual: weights.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite weight {w}")));
        }
        p.weights = weights;
        Ok(p)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_contexts(&self) -> usize {
        self.weights.len() / self.vocab_size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, ctx: usize) -> &[f64] {
        &self.weights[ctx * self.vocab_size..(ctx + 1) * self.vocab_size]
    }

    pub fn row_mut(&mut self, ctx: usize) -> &mut [f64] {
        let v = self.vocab_size;
        &mut self.weights[ctx * v..(ctx + 1) * v]
    }

    /// Row index of the last `order` tokens of `history`.
    pub fn context_index(&self, history: &[TokenId]) -> usize {
        debug_assert!(history.len() >= self.order);
        history[history.len() - self.order..]
            .iter()
            .fold(0, |acc, &t| acc * self.vocab_size + t)
    }

    /// Next-token distribution after `history`.
    pub fn next_token_probs(&self, history: &[TokenId]) -> Vec<f64> {
        softmax(self.row(self.context_index(history)))
    }

    /// Greedy next token after `history`; ties resolve to the lowest id.
    pub fn argmax_next(&self, history: &[TokenId]) -> TokenId {
        let row = self.row(self.context_index(history));
        let mut best = 0;
        for (i, &z) in row.iter().enumerate() {
            if z > row[best] {
                best = i;
            }
        }
        best
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// BOS-padded conditioning history for `prompt`.
    pub fn start_history(&self, prompt: &[TokenId]) -> Vec<TokenId> {
        let pad = self.order.saturating_sub(prompt.len());
        let mut h = Vec::with_capacity(pad + prompt.len() + 32);
        h.resize(pad, Vocabulary::BOS);
        h.extend_from_slice(prompt);
        h
    }

    /// Sum of per-token log-probabilities of `response` given `prompt`.
    pub fn log_likelihood(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<f64> {
        self.check_ids(prompt)?;
        self.check_ids(response)?;
        let mut history = self.start_history(prompt);
        let mut total = 0.0;
        for &y in response {
            let row = self.row(self.context_index(&history));
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += row[y] - lse;
            history.push(y);
        }
        Ok(total)
    }

    /// Log-likelihood and its gradient: for each visited context `c` and
    /// token `v`, the sum over positions with that context of
    /// `1[v == y_t] - softmax(row_c)[v]`.
    pub fn log_likelihood_grad(
        &self,
        prompt: &[TokenId],
        response: &[TokenId],
    ) -> Result<(f64, ParamGrad)> {
        self.check_ids(prompt)?;
        self.check_ids(response)?;
        let mut history = self.start_history(prompt);
        let mut grad = ParamGrad::default();
        let mut total = 0.0;
        for &y in response {
            let ctx = self.context_index(&history);
            let logp = log_softmax(self.row(ctx));
            total += logp[y];
            let g = grad
                .rows
                .entry(ctx)
                .or_insert_with(|| vec![0.0; self.vocab_size]);
            for (gv, lp) in g.iter_mut().zip(&logp) {
                *gv -= lp.exp();
            }
            g[y] += 1.0;
            history.push(y);
        }
        Ok((total, grad))
    }

    /// Ancestral sampling until EOS (included) or `max_len` tokens.
    pub fn sample(&self, prompt: &[TokenId], max_len: usize, seed: u64) -> Result<Vec<TokenId>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(prompt, max_len, &mut rng)
    }

    pub fn sample_with<R: Rng>(
        &self,
        prompt: &[TokenId],
        max_len: usize,
        rng: &mut R,
    ) -> Result<Vec<TokenId>> {
        self.check_ids(prompt)?;
        let mut history = self.start_history(prompt);
        let start = history.len();
        while history.len() - start < max_len {
            let probs = self.next_token_probs(&history);
            let dist = rand::distributions::WeightedIndex::new(&probs)
                .map_err(|e| Error::InvalidArgument(format!("degenerate policy row: {e}")))?;
            let y = dist.sample(rng);
            history.push(y);
            if y == Vocabulary::EOS {
                break;
            }
        }
        Ok(history.split_off(start))
    }

    /// Deep copy used as the frozen reference policy.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: PolicyParams = serde_json::from_str(&text)?;
        Self::from_weights(raw.order, raw.vocab_size, raw.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, Just, ProptestConfig, Strategy};
    use rand::Rng;

    const EOS: TokenId = Vocabulary::EOS;

    fn rand_seq(rng: &mut ChaCha8Rng, len: usize, v: usize) -> Vec<TokenId> {
        (0..len).map(|_| rng.gen_range(0..v)).collect()
    }

    #[test]
    fn uniform_weights_give_minus_l_ln_v() {
        let p = PolicyParams::zeros(1, 32).unwrap();
        let resp = [5, 9, 11, EOS];
        let ll = p.log_likelihood(&[4, 4], &resp).unwrap();
        assert!((ll - -4.0 * 32f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn one_hot_favoring_row() {
        let v = 8;
        let mut p = PolicyParams::zeros(1, v).unwrap();
        let ctx = p.context_index(&[6]);
        p.row_mut(ctx)[EOS] = 10.0;
        let ll = p.log_likelihood(&[6], &[EOS]).unwrap();
        // -ln(1 + 7 e^-10), 40-digit reference -3.17749020769977050e-4
        assert!((ll - -3.177_490_207_699_770_5e-4).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_ids_rejected() {
        let p = PolicyParams::zeros(1, 8).unwrap();
        assert!(matches!(
            p.log_likelihood(&[9], &[EOS]),
            Err(Error::TokenOutOfRange { id: 9, .. })
        ));
        assert!(p.log_likelihood_grad(&[1], &[8]).is_err());
    }

    #[test]
    fn concatenation_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for order in [1, 2, 3] {
            let p = PolicyParams::random_init(order, 8, 9).unwrap();
            for _ in 0..50 {
                let (lp, la, lb) = (rng.gen_range(0..4), rng.gen_range(0..6), rng.gen_range(0..6));
                let prompt = rand_seq(&mut rng, lp, 8);
                let a = rand_seq(&mut rng, la, 8);
                let mut b = rand_seq(&mut rng, lb, 8);
                b.push(EOS);
                let whole: Vec<_> = a.iter().chain(&b).copied().collect();
                let lhs = p.log_likelihood(&prompt, &whole).unwrap();
                let mut prompt2 = p.start_history(&prompt);
                prompt2.extend(&a);
                let rhs = p.log_likelihood(&prompt, &a).unwrap()
                    + p.log_likelihood(&prompt2, &b).unwrap();
                assert!((lhs - rhs).abs() < 1e-12, "{lhs} {rhs}");
            }
        }
    }

    fn check_gradient(order: usize, seed: u64) {
        let v = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = PolicyParams::random_init(order, v, seed).unwrap();
        for w in p.weights_mut() {
            *w *= 10.0;
        }
        let prompt = rand_seq(&mut rng, 2, v);
        let resp = rand_seq(&mut rng, 5, v);
        let (ll, grad) = p.log_likelihood_grad(&prompt, &resp).unwrap();
        assert!((ll - p.log_likelihood(&prompt, &resp).unwrap()).abs() < 1e-12);
        let h = 1e-5;
        for i in 0..p.weights().len() {
            let mut plus = p.clone();
            plus.weights_mut()[i] += h;
            let mut minus = p.clone();
            minus.weights_mut()[i] -= h;
            let num = (plus.log_likelihood(&prompt, &resp).unwrap()
                - minus.log_likelihood(&prompt, &resp).unwrap())
                / (2.0 * h);
            let ana = grad.get(i / v, i % v);
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1.0);
            assert!(rel < 1e-6, "order {order} entry {i}: {ana} vs {num}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            check_gradient(1, seed);
            check_gradient(2, seed);
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero_and_unvisited_are_zero() {
        let p = PolicyParams::random_init(1, 8, 3).unwrap();
        let (_, g) = p.log_likelihood_grad(&[4], &[5, 6, 5, EOS]).unwrap();
        let visited: Vec<usize> = g.rows().map(|(c, _)| c).collect();
        assert_eq!(visited, vec![4, 5, 6]);
        for (_, row) in g.rows() {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        assert_eq!(g.get(7, 2), 0.0);
        assert!(g.row(0).is_none());
    }

    #[test]
    fn dense_accumulation() {
        let p = PolicyParams::random_init(1, 4, 3).unwrap();
        let (_, g) = p.log_likelihood_grad(&[1], &[2, EOS]).unwrap();
        let mut dense = vec![0.0; 16];
        g.add_scaled_into(&mut dense, 2.0);
        for i in 0..16 {
            assert_eq!(dense[i], 2.0 * g.get(i / 4, i % 4));
        }
    }

    #[test]
    fn sampling_forced_eos_and_determinism() {
        let mut p = PolicyParams::zeros(1, 8).unwrap();
        for c in 0..8 {
            p.row_mut(c)[EOS] = 1e6;
        }
        assert_eq!(p.sample(&[5], 10, 1).unwrap(), vec![EOS]);

        let q = PolicyParams::random_init(2, 8, 1).unwrap();
        let a = q.sample(&[4, 5], 20, 42).unwrap();
        assert_eq!(a, q.sample(&[4, 5], 20, 42).unwrap());
        assert!(a.len() <= 20);
        assert!(a[..a.len() - 1].iter().all(|&t| t != EOS));
    }

    #[test]
    fn sampled_frequencies_match_softmax_row() {
        let v = 8;
        let mut p = PolicyParams::zeros(1, v).unwrap();
        let logits = [0.3, -1.0, 0.0, 0.8, 1.5, -0.2, 0.1, 0.6];
        p.row_mut(Vocabulary::BOS).copy_from_slice(&logits);
        let probs = softmax(&logits);
        let n = 100_000;
        let mut counts = vec![0usize; v];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..n {
            let s = p.sample_with(&[], 1, &mut rng).unwrap();
            counts[s[0]] += 1;
        }
        for t in 0..v {
            let expect = n as f64 * probs[t];
            let sd = (n as f64 * probs[t] * (1.0 - probs[t])).sqrt();
            assert!(
                (counts[t] as f64 - expect).abs() < 3.0 * sd,
                "token {t}: {} vs {expect}",
                counts[t]
            );
        }
    }

    #[test]
    fn snapshot_is_independent_and_idempotent() {
        let mut p = PolicyParams::random_init(1, 8, 2).unwrap();
        let snap = p.snapshot();
        assert_eq!(snap.snapshot(), snap);
        let resp = [4, 5, EOS];
        let before = snap.log_likelihood(&[6], &resp).unwrap();
        assert_eq!(p.log_likelihood(&[6], &resp).unwrap(), before);
        p.weights_mut()[13] += 1.0;
        assert_eq!(snap.log_likelihood(&[6], &resp).unwrap(), before);
        assert_ne!(p, snap);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut p = PolicyParams::random_init(2, 8, 5).unwrap();
        p.weights_mut()[0] = 1e-300;
        p.weights_mut()[1] = -123456.78901234567;
        p.weights_mut()[2] = f64::MIN_POSITIVE / 3.0;
        p.save(&path).unwrap();
        let back = PolicyParams::load(&path).unwrap();
        for (a, b) in p.weights().iter().zip(back.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.order(), 2);
        assert_eq!(back.vocab_size(), 8);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(PolicyParams::zeros(0, 8).is_err());
        assert!(PolicyParams::from_weights(1, 4, vec![0.0; 15]).is_err());
        assert!(PolicyParams::from_weights(1, 2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rows_are_distributions(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut p = PolicyParams::random_init(1, 16, seed).unwrap();
            for w in p.weights_mut() { *w *= scale * 10.0; }
            for c in 0..p.num_contexts() {
                let probs = softmax(p.row(c));
                prop_assert!(probs.iter().all(|&x| x >= 0.0));
                prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn relabeling_preserves_log_likelihood(
            seed in any::<u64>(),
            order in 1usize..3,
            perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(),
            prompt in proptest::collection::vec(0usize..8, 0..3),
            resp in proptest::collection::vec(0usize..8, 1..8),
        ) {
            // BOS is the padding symbol, so it must map to itself.
            let mut perm = perm;
            let bos_pos = perm.iter().position(|&x| x == Vocabulary::BOS).unwrap();
            perm.swap(bos_pos, Vocabulary::BOS);
            let v = 8;
            let p = PolicyParams::random_init(order, v, seed).unwrap();
            let mut q = PolicyParams::zeros(order, v).unwrap();
            for ctx in 0..p.num_contexts() {
                let mut digits = vec![0; order];
                let mut c = ctx;
                for d in digits.iter_mut().rev() { *d = c % v; c /= v; }
                let mapped: Vec<_> = digits.iter().map(|&d| perm[d]).collect();
                let qctx = q.context_index(&mapped);
                for tok in 0..v {
                    q.row_mut(qctx)[perm[tok]] = p.row(ctx)[tok];
                }
            }
            let map = |s: &[usize]| s.iter().map(|&t| perm[t]).collect::<Vec<_>>();
            let a = p.log_likelihood(&prompt, &resp).unwrap();
            let b = q.log_likelihood(&map(&prompt), &map(&resp)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
