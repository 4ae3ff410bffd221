//! Response generators standing in for the target and stronger models.

use super::client::{complete_with_retry, ChatClient, ChatRequest, RetryPolicy};
use crate::dataset::LengthCaps;
use crate::error::{Error, Result};
use crate::policy::PolicyParams;
use crate::seed::SeedSplitter;
use crate::vocab::Vocabulary;

pub trait Generator: Sync {
    /// Model name recorded in triple metadata.
    fn name(&self) -> &str;

    /// One response to `prompt`. `draw` selects an independent random
    /// stream, so equal `(prompt, draw)` gives equal output.
    fn generate(&self, prompt: &str, draw: u64) -> Result<String>;
}

/// Samples from a toy policy. Samples with no word tokens are redrawn from
/// the same stream, up to a fixed number of tries.
#[derive(Debug, Clone)]
pub struct PolicyGenerator {
    pub name: String,
    pub policy: PolicyParams,
    pub vocab: Vocabulary,
    pub caps: LengthCaps,
    pub seeds: SeedSplitter,
}

const MAX_REDRAWS: usize = 64;

impl PolicyGenerator {
    pub fn new(
        name: impl Into<String>,
        policy: PolicyParams,
        vocab: Vocabulary,
        caps: LengthCaps,
        seed: u64,
    ) -> Result<Self> {
        if policy.vocab_size() != vocab.len() {
            return Err(Error::ShapeMismatch {
                expected: vocab.len(),
                actual: policy.vocab_size(),
            });
        }
        Ok(Self {
            name: name.into(),
            policy,
            vocab,
            caps,
            seeds: SeedSplitter::new(seed),
        })
    }

    pub fn prompt_ids(&self, prompt: &str) -> Vec<usize> {
        let mut ids = self.vocab.encode(prompt, false);
        if ids.len() > self.caps.max_prompt {
            ids.drain(..ids.len() - self.caps.max_prompt);
        }
        ids
    }

    pub fn generate_ids(&self, prompt: &str, draw: u64) -> Result<Vec<usize>> {
        let prompt_ids = self.prompt_ids(prompt);
        let mut rng = self.seeds.rng("generate", &[draw]);
        let max_len = self.caps.max_response.saturating_sub(1).max(1);
        for _ in 0..MAX_REDRAWS {
            let mut ids = self.policy.sample_with(&prompt_ids, max_len, &mut rng)?;
            if ids.last() == Some(&Vocabulary::EOS) {
                ids.pop();
            }
            ids.retain(|&t| t >= Vocabulary::NUM_SPECIAL);
            if !ids.is_empty() {
                return Ok(ids);
            }
        }
        Err(Error::Precondition(format!(
            "{} produced no words in {MAX_REDRAWS} draws",
            self.name
        )))
    }
}

impl Generator for PolicyGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, draw: u64) -> Result<String> {
        self.vocab.decode(&self.generate_ids(prompt, draw)?)
    }
}

/// Asks a chat endpoint for a completion of the prompt itself.
pub struct ChatGenerator<C> {
    pub client: C,
    pub model: String,
    pub retry: RetryPolicy,
}

impl<C: ChatClient> Generator for ChatGenerator<C> {
    fn name(&self) -> &str {
        &self.model
    }

    fn generate(&self, prompt: &str, draw: u64) -> Result<String> {
        complete_with_retry(&self.client, &ChatRequest::single(draw, &self.model, prompt), &self.retry)
            .map_err(|e| Error::Precondition(format!("generation failed: {e}")))
    }
}
