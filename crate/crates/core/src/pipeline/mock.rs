//! Offline stand-ins for the target model, the stronger model, the reviser
//! and the judge, all backed by toy policies over a small shared vocabulary.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::client::{ChatClient, ChatRequest, TransportError};
use super::parse::{CORRECTED_ID, REASONING_ID};
use super::prompts::{parse_judge_prompt, parse_reviser_prompt};
use crate::dataset::LengthCaps;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::seed::SeedSplitter;
use crate::vocab::{TokenId, Vocabulary};

pub const WORLD_WORDS: [&str; 28] = [
    "the", "a", "cat", "dog", "sat", "ran", "on", "mat", "rug", "big", "small", "red", "blue",
    "quick", "slow", "and", "then", "it", "was", "very", "happy", "sad", "home", "park", "today",
    "again", "here", "there",
];

/// Two toy models over one vocabulary: a stronger model `G` with a sharp
/// preferred successor for every word, and a diffuse target model `M`. A
/// third unrelated `peer` model supplies off-policy responses.
#[derive(Debug, Clone)]
pub struct MockWorld {
    pub vocab: Vocabulary,
    pub stronger: PolicyParams,
    pub target: PolicyParams,
    pub peer: PolicyParams,
    /// Per-token probability that a revision replaces a token.
    pub flip_probability: f64,
    pub caps: LengthCaps,
    pub seed: u64,
}

/// Logit given to the special tokens that never appear in text.
const BLOCKED: f64 = -30.0;

fn toy_policy<R: Rng>(
    rng: &mut R,
    vocab: &Vocabulary,
    spread: f64,
    eos_logit: f64,
    successor: Option<(&[TokenId], f64)>,
) -> Result<PolicyParams> {
    let v = vocab.len();
    let mut w = vec![0.0; v * v];
    for ctx in 0..v {
        let row = &mut w[ctx * v..(ctx + 1) * v];
        for (tok, z) in row.iter_mut().enumerate() {
            *z = if tok < Vocabulary::NUM_SPECIAL {
                BLOCKED
            } else {
                spread * rng.sample::<f64, _>(StandardNormal)
            };
        }
        row[Vocabulary::EOS] = eos_logit;
        if let Some((succ, boost)) = successor {
            row[succ[ctx]] += boost;
        }
    }
    PolicyParams::from_weights(1, v, w)
}

/// Shape of the world's toy models. Logits of ordinary words are drawn as
/// `spread * N(0, 1)`; the stronger model adds `successor_boost` to one
/// preferred word per context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub target_spread: f64,
    pub target_eos: f64,
    pub stronger_spread: f64,
    pub stronger_eos: f64,
    pub successor_boost: f64,
    pub flip_probability: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            target_spread: 2.0,
            target_eos: 1.5,
            stronger_spread: 0.5,
            stronger_eos: 2.0,
            successor_boost: 4.0,
            flip_probability: 0.3,
        }
    }
}

impl MockWorld {
    pub fn new(seed: u64) -> Result<Self> {
        Self::with_config(seed, WorldConfig::default())
    }

    pub fn with_config(seed: u64, c: WorldConfig) -> Result<Self> {
        let vocab = Vocabulary::from_words(WORLD_WORDS)?;
        let seeds = SeedSplitter::new(seed);
        let words: Vec<TokenId> = vocab.word_ids().collect();
        // Every context, special ones included, gets a preferred successor.
        let mut rng = seeds.rng("successor", &[]);
        let successor: Vec<TokenId> = (0..vocab.len())
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect();
        let stronger = toy_policy(
            &mut seeds.rng("stronger", &[]),
            &vocab,
            c.stronger_spread,
            c.stronger_eos,
            Some((&successor, c.successor_boost)),
        )?;
        let target = toy_policy(&mut seeds.rng("target", &[]), &vocab, c.target_spread, c.target_eos, None)?;
        let peer = toy_policy(&mut seeds.rng("peer", &[]), &vocab, c.target_spread, c.target_eos, None)?;
        Self {
            vocab,
            stronger,
            target,
            peer,
            flip_probability: 0.0,
            caps: LengthCaps::default(),
            seed,
        }
        .with_flip_probability(c.flip_probability)
    }

    pub fn with_flip_probability(mut self, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("flip probability {p} outside [0, 1]")));
        }
        self.flip_probability = p;
        Ok(self)
    }

    pub fn seeds(&self) -> SeedSplitter {
        SeedSplitter::new(self.seed)
    }

    /// `n` prompts of two to six uniformly drawn words.
    pub fn prompts(&self, n: usize) -> Vec<String> {
        let mut rng = self.seeds().rng("prompts", &[]);
        let words = &WORLD_WORDS;
        (0..n)
            .map(|_| {
                let len = rng.gen_range(2..=6);
                (0..len)
                    .map(|_| words[rng.gen_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    pub fn prompt_ids(&self, prompt: &str) -> Vec<TokenId> {
        let mut ids = self.vocab.encode(prompt, false);
        if ids.len() > self.caps.max_prompt {
            ids.drain(..ids.len() - self.caps.max_prompt);
        }
        ids
    }

    /// The stronger model's most likely word after `history`.
    pub fn greedy_word(&self, history: &[TokenId]) -> TokenId {
        let row = self.stronger.row(self.stronger.context_index(history));
        let mut best = Vocabulary::NUM_SPECIAL;
        for t in self.vocab.word_ids() {
            if row[t] > row[best] {
                best = t;
            }
        }
        best
    }

    /// Replaces each token of `response` independently with probability
    /// `flip_probability` by the stronger model's greedy word given the
    /// revised prefix.
    pub fn revise_ids<R: Rng>(&self, prompt: &[TokenId], response: &[TokenId], rng: &mut R) -> Vec<TokenId> {
        let mut history = self.stronger.start_history(prompt);
        let mut out = Vec::with_capacity(response.len());
        for &tok in response {
            let flip = rng.gen::<f64>() < self.flip_probability;
            let y = if flip { self.greedy_word(&history) } else { tok };
            out.push(y);
            history.push(y);
        }
        out
    }

    pub fn revise(&self, prompt: &str, response: &str, draw: u64) -> Result<String> {
        let mut rng = self.seeds().rng("revise", &[draw]);
        let ids = self.revise_ids(&self.prompt_ids(prompt), &self.vocab.encode(response, false), &mut rng);
        self.vocab.decode(&ids)
    }

    /// Log-likelihood of `response` (with EOS) under the stronger model.
    pub fn stronger_score(&self, prompt: &str, response: &str) -> Result<f64> {
        self.stronger
            .log_likelihood(&self.prompt_ids(prompt), &self.vocab.encode(response, true))
    }
}

/// Reviser backed by [`MockWorld::revise`], keyed by request id.
pub struct MockReviser<'a> {
    pub world: &'a MockWorld,
}

impl ChatClient for MockReviser<'_> {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError> {
        let (x, y_l) = parse_reviser_prompt(request.prompt())
            .ok_or_else(|| TransportError::fatal("mock reviser received an unrecognized prompt"))?;
        let revised = self
            .world
            .revise(&x, &y_l, request.id)
            .map_err(|e| TransportError::fatal(e.to_string()))?;
        Ok(format!(
            "{REASONING_ID}: Some words can follow more naturally.\n\n{CORRECTED_ID}: {revised}"
        ))
    }
}

/// Reviser that copies the student solution unchanged.
pub struct EchoReviser;

impl ChatClient for EchoReviser {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError> {
        let (_, y_l) = parse_reviser_prompt(request.prompt())
            .ok_or_else(|| TransportError::fatal("unrecognized prompt"))?;
        Ok(format!("{REASONING_ID}: Nothing to fix.\n{CORRECTED_ID}: {y_l}"))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum JudgeRule<'a> {
    /// Higher likelihood under the world's stronger model; ties go to the
    /// lexicographically smaller text.
    Stronger(&'a MockWorld),
    LexicographicallySmaller,
}

pub struct MockJudge<'a> {
    pub rule: JudgeRule<'a>,
}

impl MockJudge<'_> {
    fn first_wins(&self, x: &str, y1: &str, y2: &str) -> std::result::Result<bool, TransportError> {
        let lex = y1 <= y2;
        match self.rule {
            JudgeRule::LexicographicallySmaller => Ok(lex),
            JudgeRule::Stronger(world) => {
                let score = |y: &str| world.stronger_score(x, y).map_err(|e| TransportError::fatal(e.to_string()));
                let (a, b) = (score(y1)?, score(y2)?);
                Ok(if a == b { lex } else { a > b })
            }
        }
    }
}

impl ChatClient for MockJudge<'_> {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError> {
        let (x, y1, y2) = parse_judge_prompt(request.prompt())
            .ok_or_else(|| TransportError::fatal("mock judge received an unrecognized prompt"))?;
        let verdict = if self.first_wins(&x, &y1, &y2)? { 1 } else { 2 };
        Ok(format!(
            "{REASONING_ID}: Weighing [1] against [2] on clarity and correctness.\nFinal answer: [{verdict}]"
        ))
    }
}

/// Wraps a client and injects faults chosen per request id: a fraction of
/// requests fail at the transport level on every attempt, another fraction
/// receives a malformed reply.
pub struct FaultyClient<C> {
    pub inner: C,
    pub malformed: f64,
    pub transport: f64,
    pub seed: u64,
}

impl<C> FaultyClient<C> {
    pub fn new(inner: C, seed: u64) -> Self {
        Self {
            inner,
            malformed: 0.10,
            transport: 0.05,
            seed,
        }
    }
}

impl<C: ChatClient> ChatClient for FaultyClient<C> {
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, TransportError> {
        let mut rng = SeedSplitter::new(self.seed).rng("fault", &[request.id]);
        let u: f64 = rng.gen();
        if u < self.transport {
            return Err(TransportError::retryable(format!(
                "injected transport failure for request {}",
                request.id
            )));
        }
        if u < self.transport + self.malformed {
            return Ok(if rng.gen_bool(0.5) {
                "I am unable to follow the requested format.".into()
            } else {
                format!("{REASONING_ID}: fine as is.\n{CORRECTED_ID}:   \n")
            });
        }
        self.inner.complete(request)
    }
}
