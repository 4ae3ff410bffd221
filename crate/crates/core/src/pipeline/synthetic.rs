use super::build::{
    build_clair, build_judge_off_policy, build_judge_on_policy, build_stronger_preferred,
    BuildOutput, PipelineConfig, PoolRecord,
};
use super::client::RetryPolicy;
use super::generate::{Generator, PolicyGenerator};
use super::mock::{JudgeRule, MockJudge, MockReviser, MockWorld};
use crate::error::{Error, Result};

/// One dataset per construction, all over the same prompts.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub prompts: Vec<String>,
    pub clair: BuildOutput,
    pub judge_on_policy: BuildOutput,
    pub judge_off_policy: BuildOutput,
    pub stronger_preferred: BuildOutput,
}

impl SyntheticSuite {
    /// `(file stem, output)` pairs in a fixed order.
    pub fn datasets(&self) -> [(&'static str, &BuildOutput); 4] {
        [
            ("clair", &self.clair),
            ("judge-on-policy", &self.judge_on_policy),
            ("judge-off-policy", &self.judge_off_policy),
            ("stronger-preferred", &self.stronger_preferred),
        ]
    }
}

pub struct WorldGenerators {
    pub target: PolicyGenerator,
    pub stronger: PolicyGenerator,
    pub peer: PolicyGenerator,
}

impl MockWorld {
    pub fn generators(&self) -> Result<WorldGenerators> {
        let seeds = self.seeds();
        let make = |name: &str, p: &crate::policy::PolicyParams| {
            PolicyGenerator::new(name, p.clone(), self.vocab.clone(), self.caps, seeds.derive("sampler", &[]))
        };
        Ok(WorldGenerators {
            target: make("target", &self.target)?,
            stronger: make("stronger", &self.stronger)?,
            peer: make("peer", &self.peer)?,
        })
    }

    /// Pipeline settings for in-process mocks: sequential, no waiting, no
    /// length filter.
    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            reviser_model: "mock-reviser".into(),
            judge_model: "mock-judge".into(),
            max_concurrent: 1,
            retry: RetryPolicy::immediate(1),
            length_filter: None,
            seed: self.seeds().derive("pipeline", &[]),
        }
    }
}

/// Builds the four datasets from `n` world prompts.
///
/// Revision replaces tokens of the target sample with the stronger model's
/// greedy word; judges prefer the answer the stronger model finds more
/// likely; off-policy pools come from the stronger and peer models.
pub fn build_synthetic_suite(world: &MockWorld, n: usize) -> Result<SyntheticSuite> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic suite needs n >= 1".into()));
    }
    let prompts = world.prompts(n);
    let g = world.generators()?;
    let cfg = world.pipeline_config();
    let reviser = MockReviser { world };
    let judge = MockJudge {
        rule: JudgeRule::Stronger(world),
    };
    let pool = |gen: &PolicyGenerator| -> Result<Vec<PoolRecord>> {
        prompts
            .iter()
            .enumerate()
            .map(|(i, x)| {
                Ok(PoolRecord {
                    prompt: x.clone(),
                    response: gen.generate(x, (n + i) as u64)?,
                    model: gen.name().to_string(),
                })
            })
            .collect()
    };
    Ok(SyntheticSuite {
        clair: build_clair(&prompts, &g.target, &reviser, &cfg)?,
        judge_on_policy: build_judge_on_policy(&prompts, &g.target, &judge, &cfg)?,
        judge_off_policy: build_judge_off_policy(&prompts, &pool(&g.stronger)?, &pool(&g.peer)?, &judge, &cfg)?,
        stronger_preferred: build_stronger_preferred(&prompts, &g.target, &g.stronger)?,
        prompts,
    })
}
