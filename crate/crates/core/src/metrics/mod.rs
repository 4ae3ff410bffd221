//! Contrastiveness of preference pairs: token Jaccard similarity and
//! character Levenshtein distance between winning and losing responses.

mod levenshtein;

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use levenshtein::{levenshtein, levenshtein_chars, levenshtein_fast};

use crate::dataset::PreferenceTriple;
use crate::error::{Error, Result};

/// Tokenization knobs for [`jaccard`]. Whitespace split, case-sensitive and
/// set semantics by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JaccardOptions {
    pub lowercase: bool,
    /// Count repeated tokens (`sum min / sum max`) instead of unique tokens.
    pub multiset: bool,
}

fn tokens(text: &str, opts: JaccardOptions) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if opts.lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Intersection over union of the token sets of `a` and `b`. Two empty
/// inputs are identical and score 1.
pub fn jaccard(a: &str, b: &str, opts: JaccardOptions) -> f64 {
    let (ta, tb) = (tokens(a, opts), tokens(b, opts));
    if opts.multiset {
        let count = |ts: Vec<String>| {
            let mut m: HashMap<String, usize> = HashMap::new();
            for t in ts {
                *m.entry(t).or_default() += 1;
            }
            m
        };
        let (ca, cb) = (count(ta), count(tb));
        let mut inter = 0;
        let mut union = 0;
        for key in ca.keys().chain(cb.keys().filter(|k| !ca.contains_key(*k))) {
            let x = ca.get(key).copied().unwrap_or(0);
            let y = cb.get(key).copied().unwrap_or(0);
            inter += x.min(y);
            union += x.max(y);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    } else {
        let sa: HashSet<String> = ta.into_iter().collect();
        let sb: HashSet<String> = tb.into_iter().collect();
        let union = sa.union(&sb).count();
        if union == 0 {
            1.0
        } else {
            sa.intersection(&sb).count() as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairContrast {
    pub jaccard: f64,
    pub levenshtein: usize,
}

pub fn score_pair(triple: &PreferenceTriple, opts: JaccardOptions) -> PairContrast {
    PairContrast {
        jaccard: jaccard(&triple.winning, &triple.losing, opts),
        levenshtein: levenshtein_fast(&triple.winning, &triple.losing),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub per_pair: Vec<PairContrast>,
    pub jaccard_mean: f64,
    pub levenshtein_mean: f64,
    pub count: usize,
}

/// The corpus-level part of a report, as emitted by the `metrics` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    pub pairs: usize,
    pub jaccard_mean: f64,
    pub levenshtein_mean: f64,
}

impl ContrastReport {
    pub fn summary(&self) -> ContrastSummary {
        ContrastSummary {
            pairs: self.count,
            jaccard_mean: self.jaccard_mean,
            levenshtein_mean: self.levenshtein_mean,
        }
    }

    /// `index,jaccard,levenshtein`, one row per pair.
    pub fn write_per_pair_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("index,jaccard,levenshtein\n");
        for (i, p) in self.per_pair.iter().enumerate() {
            out.push_str(&format!("{i},{},{}\n", p.jaccard, p.levenshtein));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Scores each pair in order and averages. Pairs are consumed one at a time;
/// only the per-pair scores are retained.
pub fn score_dataset<'a, I>(triples: I, opts: JaccardOptions) -> Result<ContrastReport>
where
    I: IntoIterator<Item = &'a PreferenceTriple>,
{
    let mut per_pair = Vec::new();
    let (mut jsum, mut lsum) = (0.0, 0.0);
    for t in triples {
        let s = score_pair(t, opts);
        jsum += s.jaccard;
        lsum += s.levenshtein as f64;
        per_pair.push(s);
    }
    if per_pair.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let n = per_pair.len() as f64;
    Ok(ContrastReport {
        count: per_pair.len(),
        jaccard_mean: jsum / n,
        levenshtein_mean: lsum / n,
        per_pair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Source;
    use proptest::prelude::*;

    const SET: JaccardOptions = JaccardOptions {
        lowercase: false,
        multiset: false,
    };

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard("a b c", "a b c", SET), 1.0);
        assert_eq!(jaccard("a b", "c d", SET), 0.0);
        // {a,b} / {a,b,c,d}
        assert_eq!(jaccard("a b c", "a b d", SET), 0.5);
        assert_eq!(jaccard("", "", SET), 1.0);
        assert_eq!(jaccard("", "a", SET), 0.0);
        assert_eq!(jaccard("a a b", "a b b", SET), 1.0);
    }

    #[test]
    fn jaccard_flags() {
        let lower = JaccardOptions {
            lowercase: true,
            multiset: false,
        };
        assert_eq!(jaccard("A b", "a B", SET), 0.0);
        assert_eq!(jaccard("A b", "a B", lower), 1.0);
        let multi = JaccardOptions {
            lowercase: false,
            multiset: true,
        };
        // min: a1 b1 = 2, max: a2 b2 = 4
        assert_eq!(jaccard("a a b", "a b b", multi), 0.5);
    }

    fn triple(w: &str, l: &str) -> PreferenceTriple {
        PreferenceTriple::new("p", w, l, Source::Synthetic).unwrap()
    }

    #[test]
    fn score_dataset_examples() {
        assert!(matches!(score_dataset(&[], SET), Err(Error::Empty(_))));
        let same = vec![triple("x y", "x y"); 5];
        let r = score_dataset(&same, SET).unwrap();
        assert_eq!((r.jaccard_mean, r.levenshtein_mean, r.count), (1.0, 0.0, 5));
        let one = [triple("a b c", "a b d")];
        let r = score_dataset(&one, SET).unwrap();
        assert_eq!(r.jaccard_mean, 0.5);
        assert_eq!(r.levenshtein_mean, 1.0);
        assert_eq!(r.summary().pairs, 1);
    }

    #[test]
    fn means_match_compensated_recomputation() {
        let words = ["alpha", "beta", "gamma", "delta", "eps"];
        let triples: Vec<_> = (0..500)
            .map(|i| {
                let w: Vec<&str> = (0..(i % 7 + 1)).map(|k| words[(i + k) % 5]).collect();
                let l: Vec<&str> = (0..(i % 5 + 1)).map(|k| words[(i * 3 + k) % 5]).collect();
                triple(&w.join(" "), &l.join(" "))
            })
            .collect();
        let r = score_dataset(&triples, SET).unwrap();
        let kahan = |xs: Vec<f64>| {
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for x in xs {
                let y = x - c;
                let t = s + y;
                c = (t - s) - y;
                s = t;
            }
            s
        };
        let n = triples.len() as f64;
        let j = kahan(triples.iter().map(|t| jaccard(&t.winning, &t.losing, SET)).collect()) / n;
        let l = kahan(
            triples
                .iter()
                .map(|t| levenshtein(&t.winning, &t.losing) as f64)
                .collect(),
        ) / n;
        assert!((r.jaccard_mean - j).abs() < 1e-12);
        assert!((r.levenshtein_mean - l).abs() < 1e-12);
    }

    #[test]
    fn per_pair_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pp.csv");
        let r = score_dataset(&[triple("a", "b"), triple("a", "a")], SET).unwrap();
        r.write_per_pair_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "index,jaccard,levenshtein\n0,0,1\n1,1,0\n");
    }

    proptest! {
        #[test]
        fn jaccard_axioms(a in "[a-d ]{0,20}", b in "[a-d ]{0,20}") {
            let ab = jaccard(&a, &b, SET);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, jaccard(&b, &a, SET));
            let sa: HashSet<&str> = a.split_whitespace().collect();
            let sb: HashSet<&str> = b.split_whitespace().collect();
            prop_assert_eq!(ab == 1.0, sa == sb);
        }
    }
}
