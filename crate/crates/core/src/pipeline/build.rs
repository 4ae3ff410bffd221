//! The four dataset constructions: revision, on- and off-policy judging,
//! and stronger-model preferred.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::client::{dispatch, ChatClient, ChatRequest, RetryPolicy};
use super::generate::Generator;
use super::parse::{parse_judgement, parse_revision, LengthFilter, Reject};
use super::prompts::{render_judge_prompt, render_reviser_prompt};
use crate::dataset::{PreferenceTriple, Source};
use crate::error::{Error, Result};
use crate::seed::SeedSplitter;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub reviser_model: String,
    pub judge_model: String,
    pub max_concurrent: usize,
    pub retry: RetryPolicy,
    /// Applied to revisions only. `None` keeps every parsed revision.
    pub length_filter: Option<LengthFilter>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            reviser_model: "reviser".into(),
            judge_model: "judge".into(),
            max_concurrent: 8,
            retry: RetryPolicy::default(),
            length_filter: Some(LengthFilter::default()),
            seed: 0,
        }
    }
}

/// A prompt that produced no triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub prompt: String,
    pub stage: String,
    pub reason: String,
}

/// One external response, as read from an off-policy pool file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub prompt: String,
    pub response: String,
    pub model: String,
}

/// Kept triples and dropped prompts, both in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildOutput {
    pub triples: Vec<PreferenceTriple>,
    pub drops: Vec<DropRecord>,
}

impl BuildOutput {
    fn drop(&mut self, prompt: &str, stage: &str, reason: impl Into<String>) {
        let reason = reason.into();
        log::debug!("dropped prompt at {stage}: {reason}");
        self.drops.push(DropRecord {
            prompt: prompt.to_string(),
            stage: stage.to_string(),
            reason,
        });
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn non_empty(prompts: &[String]) -> Result<()> {
    if prompts.is_empty() {
        Err(Error::Empty("prompt list"))
    } else {
        Ok(())
    }
}

enum Prepared<T> {
    Ready(T),
    Dropped { stage: &'static str, reason: String },
}

fn sample(target: &dyn Generator, prompt: &str, draw: u64) -> std::result::Result<String, String> {
    match target.generate(prompt, draw) {
        Ok(s) if s.trim().is_empty() => Err(Reject::EmptyResponse.to_string()),
        Ok(s) => Ok(s),
        Err(e) => Err(format!("sampler: {e}")),
    }
}

/// Samples `y_l` from `target`, asks `reviser` to improve it, and keeps the
/// parsed revision as `y_w`.
pub fn build_clair(
    prompts: &[String],
    target: &dyn Generator,
    reviser: &dyn ChatClient,
    config: &PipelineConfig,
) -> Result<BuildOutput> {
    non_empty(prompts)?;
    let prepared: Vec<Prepared<String>> = prompts
        .iter()
        .enumerate()
        .map(|(i, x)| match sample(target, x, i as u64) {
            Ok(y_l) => Prepared::Ready(y_l),
            Err(reason) => Prepared::Dropped { stage: "sample", reason },
        })
        .collect();
    let requests: Vec<ChatRequest> = prepared
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match p {
            Prepared::Ready(y_l) => Some(ChatRequest::single(
                i as u64,
                &config.reviser_model,
                render_reviser_prompt(&prompts[i], y_l),
            )),
            Prepared::Dropped { .. } => None,
        })
        .collect();
    let mut replies = dispatch(reviser, &requests, config.max_concurrent, &config.retry).into_iter();

    let mut out = BuildOutput::default();
    for (i, (x, prep)) in prompts.iter().zip(prepared).enumerate() {
        let y_l = match prep {
            Prepared::Dropped { stage, reason } => {
                out.drop(x, stage, reason);
                continue;
            }
            Prepared::Ready(y_l) => y_l,
        };
        let raw = match replies.next().expect("one reply per request") {
            Ok(raw) => raw,
            Err(e) => {
                out.drop(x, "revise", format!("transport: {e}"));
                continue;
            }
        };
        let revision = match parse_revision(&raw) {
            Ok(r) => r,
            Err(r) => {
                out.drop(x, "parse", r.as_str());
                continue;
            }
        };
        if let Some(filter) = config.length_filter {
            if let Err(r) = filter.check(&y_l, &revision.revised) {
                out.drop(x, "filter", r.as_str());
                continue;
            }
        }
        let identical = revision.revised == y_l;
        let triple = PreferenceTriple::new(x.clone(), revision.revised, y_l, Source::Clair)?
            .with_meta("index", i.to_string())
            .with_meta("target", target.name())
            .with_meta("reviser", &config.reviser_model)
            .with_meta("raw_sha256", sha256_hex(&raw))
            .with_meta("identical", identical.to_string());
        out.triples.push(triple);
    }
    Ok(out)
}

struct Candidates {
    y1: String,
    y2: String,
    meta: Vec<(&'static str, String)>,
}

/// Judges each candidate pair, presenting the two answers in a seeded random
/// order. `meta.order` is `1,2` or `2,1`: which candidate was shown first.
fn judge_candidates(
    prompts: &[String],
    prepared: Vec<Prepared<Candidates>>,
    judge: &dyn ChatClient,
    source: Source,
    config: &PipelineConfig,
) -> Result<BuildOutput> {
    let seeds = SeedSplitter::new(config.seed);
    let swaps: Vec<bool> = (0..prompts.len())
        .map(|i| seeds.rng("judge-order", &[i as u64]).gen_bool(0.5))
        .collect();
    let requests: Vec<ChatRequest> = prepared
        .iter()
        .enumerate()
        .filter_map(|(i, p)| match p {
            Prepared::Ready(c) => {
                let (a, b) = if swaps[i] { (&c.y2, &c.y1) } else { (&c.y1, &c.y2) };
                Some(ChatRequest::single(
                    i as u64,
                    &config.judge_model,
                    render_judge_prompt(&prompts[i], a, b),
                ))
            }
            Prepared::Dropped { .. } => None,
        })
        .collect();
    let mut replies = dispatch(judge, &requests, config.max_concurrent, &config.retry).into_iter();

    let mut out = BuildOutput::default();
    for (i, (x, prep)) in prompts.iter().zip(prepared).enumerate() {
        let c = match prep {
            Prepared::Dropped { stage, reason } => {
                out.drop(x, stage, reason);
                continue;
            }
            Prepared::Ready(c) => c,
        };
        let raw = match replies.next().expect("one reply per request") {
            Ok(raw) => raw,
            Err(e) => {
                out.drop(x, "judge", format!("transport: {e}"));
                continue;
            }
        };
        let verdict = match parse_judgement(&raw) {
            Ok(v) => v,
            Err(r) => {
                out.drop(x, "parse", r.as_str());
                continue;
            }
        };
        // Presented slot -> original candidate.
        let first_is_y1 = !swaps[i];
        let winner_is_y1 = (verdict.winner_index == 1) == first_is_y1;
        let identical = c.y1 == c.y2;
        let (w, l) = if winner_is_y1 { (c.y1, c.y2) } else { (c.y2, c.y1) };
        let mut triple = PreferenceTriple::new(x.clone(), w, l, source)?
            .with_meta("index", i.to_string())
            .with_meta("judge", &config.judge_model)
            .with_meta("order", if first_is_y1 { "1,2" } else { "2,1" })
            .with_meta("winner", if winner_is_y1 { "1" } else { "2" })
            .with_meta("raw_sha256", sha256_hex(&raw))
            .with_meta("identical", identical.to_string());
        for (k, v) in c.meta {
            triple = triple.with_meta(k, v);
        }
        out.triples.push(triple);
    }
    Ok(out)
}

/// Two independent target samples per prompt, ranked by `judge`.
pub fn build_judge_on_policy(
    prompts: &[String],
    target: &dyn Generator,
    judge: &dyn ChatClient,
    config: &PipelineConfig,
) -> Result<BuildOutput> {
    non_empty(prompts)?;
    let prepared = prompts
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let i = i as u64;
            match (sample(target, x, 2 * i), sample(target, x, 2 * i + 1)) {
                (Ok(y1), Ok(y2)) => Prepared::Ready(Candidates {
                    y1,
                    y2,
                    meta: vec![("target", target.name().to_string())],
                }),
                (Err(reason), _) | (_, Err(reason)) => Prepared::Dropped { stage: "sample", reason },
            }
        })
        .collect();
    judge_candidates(prompts, prepared, judge, Source::JudgeOnPolicy, config)
}

/// One response from each external pool per prompt, ranked by `judge`.
/// Prompts missing from either pool are dropped at the `pool` stage.
pub fn build_judge_off_policy(
    prompts: &[String],
    pool_1: &[PoolRecord],
    pool_2: &[PoolRecord],
    judge: &dyn ChatClient,
    config: &PipelineConfig,
) -> Result<BuildOutput> {
    non_empty(prompts)?;
    let index = |pool: &[PoolRecord]| {
        let mut m: HashMap<String, PoolRecord> = HashMap::new();
        for r in pool {
            m.entry(r.prompt.clone()).or_insert_with(|| r.clone());
        }
        m
    };
    let (p1, p2) = (index(pool_1), index(pool_2));
    let prepared = prompts
        .iter()
        .map(|x| match (p1.get(x), p2.get(x)) {
            (Some(a), Some(b)) if !a.response.trim().is_empty() && !b.response.trim().is_empty() => {
                Prepared::Ready(Candidates {
                    y1: a.response.clone(),
                    y2: b.response.clone(),
                    meta: vec![("model_1", a.model.clone()), ("model_2", b.model.clone())],
                })
            }
            (Some(_), Some(_)) => Prepared::Dropped {
                stage: "pool",
                reason: Reject::EmptyResponse.to_string(),
            },
            (a, _) => Prepared::Dropped {
                stage: "pool",
                reason: format!("missing-response: pool {}", if a.is_none() { 1 } else { 2 }),
            },
        })
        .collect();
    judge_candidates(prompts, prepared, judge, Source::JudgeOffPolicy, config)
}

/// `y_l` from `target` and `y_w` from `stronger`, both on draw `i` of
/// prompt `i`, without judging.
pub fn build_stronger_preferred(
    prompts: &[String],
    target: &dyn Generator,
    stronger: &dyn Generator,
) -> Result<BuildOutput> {
    non_empty(prompts)?;
    let mut out = BuildOutput::default();
    for (i, x) in prompts.iter().enumerate() {
        let pair = sample(target, x, i as u64).and_then(|l| Ok((sample(stronger, x, i as u64)?, l)));
        match pair {
            Ok((w, l)) => {
                let identical = w == l;
                out.triples.push(
                    PreferenceTriple::new(x.clone(), w, l, Source::StrongerPreferred)?
                        .with_meta("index", i.to_string())
                        .with_meta("target", target.name())
                        .with_meta("stronger", stronger.name())
                        .with_meta("identical", identical.to_string()),
                );
            }
            Err(reason) => out.drop(x, "sample", reason),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::client::TransportError;
    use crate::pipeline::mock::{EchoReviser, JudgeRule, MockJudge};

    /// Deterministic text generator: `"<prompt> r<draw>"`.
    struct Fixed(&'static str);

    impl Generator for Fixed {
        fn name(&self) -> &str {
            self.0
        }
        fn generate(&self, prompt: &str, draw: u64) -> Result<String> {
            Ok(format!("{prompt} r{draw}"))
        }
    }

    struct Constant(&'static str);

    impl ChatClient for Constant {
        fn complete(&self, _: &ChatRequest) -> std::result::Result<String, TransportError> {
            Ok(self.0.to_string())
        }
    }

    fn prompts(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn quick() -> PipelineConfig {
        PipelineConfig {
            retry: RetryPolicy::immediate(2),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn echo_revision_is_kept_and_flagged() {
        let out = build_clair(&prompts(3), &Fixed("t"), &EchoReviser, &quick()).unwrap();
        assert_eq!(out.triples.len(), 3);
        for (i, t) in out.triples.iter().enumerate() {
            assert_eq!(t.winning, t.losing);
            assert_eq!(t.meta["identical"], "true");
            assert_eq!(t.meta["index"], i.to_string());
            assert_eq!(t.source, Source::Clair);
            assert_eq!(t.meta["raw_sha256"].len(), 64);
        }
    }

    #[test]
    fn missing_identifier_drops_pair() {
        let out = build_clair(&prompts(4), &Fixed("t"), &Constant("looks good"), &quick()).unwrap();
        assert!(out.triples.is_empty());
        assert_eq!(out.drops.len(), 4);
        assert!(out.drops.iter().all(|d| d.stage == "parse" && d.reason == "missing-identifier"));
    }

    #[test]
    fn length_filter_drops_long_revisions() {
        let long = Constant("{{corrected_student_solution}}: a much much longer revision than before");
        let out = build_clair(&prompts(2), &Fixed("t"), &long, &quick()).unwrap();
        assert_eq!(out.drops.len(), 2);
        assert_eq!(out.drops[0].reason, "length-ratio");
        let cfg = PipelineConfig {
            length_filter: None,
            ..quick()
        };
        assert_eq!(build_clair(&prompts(2), &Fixed("t"), &long, &cfg).unwrap().triples.len(), 2);
    }

    #[test]
    fn empty_prompt_list_rejected() {
        assert!(build_clair(&[], &Fixed("t"), &EchoReviser, &quick()).is_err());
        assert!(build_stronger_preferred(&[], &Fixed("t"), &Fixed("s")).is_err());
    }

    #[test]
    fn judge_winner_is_order_invariant() {
        let judge = MockJudge {
            rule: JudgeRule::LexicographicallySmaller,
        };
        let ps = prompts(200);
        let out = build_judge_on_policy(&ps, &Fixed("t"), &judge, &quick()).unwrap();
        assert_eq!(out.triples.len(), 200);
        let mut orders = std::collections::HashSet::new();
        for t in &out.triples {
            assert!(t.winning < t.losing);
            assert_eq!(t.source, Source::JudgeOnPolicy);
            orders.insert(t.meta["order"].clone());
        }
        assert_eq!(orders.len(), 2, "both presentation orders occur");
        let other = PipelineConfig { seed: 99, ..quick() };
        let again = build_judge_on_policy(&ps, &Fixed("t"), &judge, &other).unwrap();
        let winners = |o: &BuildOutput| o.triples.iter().map(|t| t.winning.clone()).collect::<Vec<_>>();
        assert_eq!(winners(&out), winners(&again));
        assert_ne!(
            out.triples.iter().map(|t| &t.meta["order"]).collect::<Vec<_>>(),
            again.triples.iter().map(|t| &t.meta["order"]).collect::<Vec<_>>()
        );
    }

    #[test]
    fn identical_candidates_accepted() {
        struct Same;
        impl Generator for Same {
            fn name(&self) -> &str {
                "same"
            }
            fn generate(&self, _: &str, _: u64) -> Result<String> {
                Ok("x".into())
            }
        }
        let judge = MockJudge {
            rule: JudgeRule::LexicographicallySmaller,
        };
        let out = build_judge_on_policy(&prompts(3), &Same, &judge, &quick()).unwrap();
        assert_eq!(out.triples.len(), 3);
        assert!(out.triples.iter().all(|t| t.meta["identical"] == "true"));
        let out = build_judge_on_policy(&prompts(3), &Same, &Constant("undecided"), &quick()).unwrap();
        assert_eq!(out.drops.len(), 3);
        assert_eq!(out.drops[0].reason, "no-verdict");
    }

    #[test]
    fn off_policy_skips_missing_pool_entries() {
        let rec = |p: &str, r: &str, m: &str| PoolRecord {
            prompt: p.into(),
            response: r.into(),
            model: m.into(),
        };
        let ps = prompts(3);
        let pool_1 = vec![rec("p0", "alpha", "m1"), rec("p1", "beta", "m1"), rec("p2", "gamma", "m1")];
        let pool_2 = vec![rec("p0", "delta", "m2"), rec("p2", "eps", "m2")];
        let judge = MockJudge {
            rule: JudgeRule::LexicographicallySmaller,
        };
        let out = build_judge_off_policy(&ps, &pool_1, &pool_2, &judge, &quick()).unwrap();
        assert_eq!(out.triples.len(), 2);
        assert_eq!(out.drops.len(), 1);
        assert_eq!(out.drops[0].prompt, "p1");
        assert_eq!(out.drops[0].stage, "pool");
        assert!(out.drops[0].reason.starts_with("missing-response"));
        for t in &out.triples {
            assert!(t.meta.contains_key("order"));
            assert_eq!(t.source, Source::JudgeOffPolicy);
        }
        assert_eq!(out.triples[0].winning, "alpha");
        assert_eq!(out.triples[1].winning, "eps");
    }

    #[test]
    fn stronger_equal_to_target_is_degenerate() {
        let out = build_stronger_preferred(&prompts(5), &Fixed("t"), &Fixed("t")).unwrap();
        assert_eq!(out.triples.len(), 5);
        assert!(out.triples.iter().all(|t| t.winning == t.losing));
    }

    #[test]
    fn transport_failures_are_recorded() {
        struct Down;
        impl ChatClient for Down {
            fn complete(&self, _: &ChatRequest) -> std::result::Result<String, TransportError> {
                Err(TransportError::retryable("connection reset"))
            }
        }
        let out = build_clair(&prompts(3), &Fixed("t"), &Down, &quick()).unwrap();
        assert_eq!(out.drops.len(), 3);
        assert!(out.drops.iter().all(|d| d.stage == "revise" && d.reason.starts_with("transport")));
    }
}
