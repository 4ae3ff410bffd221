//! Detached KL anchor for the KTO objectives.

use rand::Rng;

use crate::dataset::TokenizedTriple;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;

/// A uniformly random cyclic permutation (Sattolo's algorithm); no element
/// maps to itself when `n >= 2`.
pub fn derangement<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        perm.swap(i, j);
    }
    perm
}

/// Mean log-ratio `ll_theta - ll_ref` (nats) of the batch's winning and
/// losing responses re-attached to deranged prompts, clamped at zero.
///
/// The value is treated as a constant by the losses. A single-pair batch has
/// no mismatched prompt to borrow and yields zero.
pub fn estimate_kl<R: Rng>(
    batch: &[TokenizedTriple],
    policy: &PolicyParams,
    reference: &PolicyParams,
    rng: &mut R,
) -> Result<f64> {
    match batch.len() {
        0 => return Err(Error::Empty("batch")),
        1 => {
            log::warn!("KL estimate needs at least two pairs; using 0");
            return Ok(0.0);
        }
        _ => {}
    }
    let perm = derangement(batch.len(), rng);
    let mut total = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let prompt = &batch[perm[i]].prompt_ids;
        for resp in [&t.winning_ids, &t.losing_ids] {
            total += policy.log_likelihood(prompt, resp)? - reference.log_likelihood(prompt, resp)?;
        }
    }
    Ok((total / (2 * batch.len()) as f64).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Vocabulary;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<TokenizedTriple> {
        let mut seq = |len: usize, eos: bool| {
            let mut v: Vec<usize> = (0..len).map(|_| rng.gen_range(4..8)).collect();
            if eos {
                v.push(Vocabulary::EOS);
            }
            v
        };
        (0..n)
            .map(|_| TokenizedTriple {
                prompt_ids: seq(3, false),
                winning_ids: seq(4, true),
                losing_ids: seq(5, true),
            })
            .collect()
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 2..40 {
            let p = derangement(n, &mut rng);
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
        }
    }

    #[test]
    fn zero_for_identical_policies_and_single_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = batch(&mut rng, 8);
        let p = PolicyParams::random_init(1, 8, 3).unwrap();
        assert_eq!(estimate_kl(&b, &p, &p.snapshot(), &mut rng).unwrap(), 0.0);
        let mut q = p.clone();
        q.weights_mut()[5] += 3.0;
        assert_eq!(estimate_kl(&b[..1], &q, &p, &mut rng).unwrap(), 0.0);
        assert!(estimate_kl(&[], &q, &p, &mut rng).is_err());
    }

    #[test]
    fn matches_brute_force_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = batch(&mut rng, 6);
        let reference = PolicyParams::random_init(1, 8, 4).unwrap();
        let mut policy = reference.clone();
        for (i, w) in policy.weights_mut().iter_mut().enumerate() {
            *w += ((i * 7919) % 13) as f64 * 0.3;
        }
        let got = estimate_kl(&b, &policy, &reference, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();

        let perm = derangement(6, &mut ChaCha8Rng::seed_from_u64(9));
        // Token-by-token log-softmax, independent of PolicyParams::log_likelihood.
        let ll = |p: &PolicyParams, prompt: &[usize], resp: &[usize]| {
            let mut prev = *prompt.last().unwrap();
            let mut s = 0.0;
            for &y in resp {
                let row = p.row(prev);
                let z: f64 = row.iter().map(|x| x.exp()).sum();
                s += (row[y].exp() / z).ln();
                prev = y;
            }
            s
        };
        let mut terms = Vec::new();
        for i in 0..6 {
            let prompt = &b[perm[i]].prompt_ids;
            for resp in [&b[i].winning_ids, &b[i].losing_ids] {
                terms.push(ll(&policy, prompt, resp) - ll(&reference, prompt, resp));
            }
        }
        let expect = (terms.iter().sum::<f64>() / 12.0).max(0.0);
        assert!((got - expect).abs() < 1e-12, "{got} {expect}");
        assert!(got >= 0.0);
    }
}
