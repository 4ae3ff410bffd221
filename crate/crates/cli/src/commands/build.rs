use std::path::{Path, PathBuf};
use std::time::Duration;

use alab_core::dataset::{read_jsonl, write_dataset, write_jsonl};
use alab_core::pipeline::mock::{JudgeRule, MockJudge, MockReviser};
use alab_core::pipeline::{
    build_clair, build_judge_off_policy, build_judge_on_policy, build_stronger_preferred,
    build_synthetic_suite, BuildOutput, ChatClient, ChatGenerator, Generator, HttpChatClient,
    LengthFilter, MockWorld, PipelineConfig, PoolRecord, RetryPolicy,
};
use clap::{Args, ValueEnum};
use serde_json::json;

use super::classify;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::Context;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Minimal revisions of target samples.
    Clair,
    /// Two target samples ranked by a judge.
    JudgeOn,
    /// Two external pool responses ranked by a judge.
    JudgeOff,
    /// Stronger-model sample preferred over a target sample.
    Stronger,
    /// All four datasets from the built-in mock world.
    SyntheticSuite,
}

impl Method {
    fn stem(self) -> &'static str {
        match self {
            Method::Clair => "clair",
            Method::JudgeOn => "judge-on-policy",
            Method::JudgeOff => "judge-off-policy",
            Method::Stronger => "stronger-preferred",
            Method::SyntheticSuite => "synthetic-suite",
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    #[arg(long, value_enum)]
    method: Method,

    /// Use the in-process mock world instead of a chat endpoint.
    #[arg(long)]
    mock: bool,

    /// Number of generated prompts when `--prompts` is not given.
    #[arg(long)]
    n: Option<usize>,

    /// Prompt file, one prompt per line.
    #[arg(long)]
    prompts: Option<PathBuf>,

    /// Off-policy pools (JSONL with prompt, response, model).
    #[arg(long)]
    pool_1: Option<PathBuf>,
    #[arg(long)]
    pool_2: Option<PathBuf>,

    /// Chat completion URL. The bearer token is read from ALAB_API_KEY.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    reviser_model: Option<String>,
    #[arg(long)]
    judge_model: Option<String>,
    #[arg(long)]
    target_model: Option<String>,
    #[arg(long)]
    stronger_model: Option<String>,

    #[arg(long)]
    max_concurrent: Option<usize>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    #[arg(long)]
    max_attempts: Option<u32>,

    /// Mock reviser: chance of replacing each token.
    #[arg(long)]
    flip_probability: Option<f64>,

    /// Keep revisions whose length ratio to the original lies in [lo, hi].
    #[arg(long)]
    length_lo: Option<f64>,
    #[arg(long)]
    length_hi: Option<f64>,
    #[arg(long)]
    no_length_filter: bool,
}

enum Backend {
    Mock(MockWorld),
    Http {
        endpoint: String,
        timeout: Duration,
        retry: RetryPolicy,
    },
}

fn read_prompts(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("reading prompts {}: {e}", path.display()))?;
    let prompts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if prompts.is_empty() {
        return Err(anyhow::anyhow!("prompt file {} is empty", path.display()).into());
    }
    Ok(prompts)
}

fn write_output(ctx: &Context, stem: &str, out: &BuildOutput, manifest: &mut ManifestBuilder) -> CliResult<()> {
    let data = ctx.out.join(format!("{stem}.jsonl"));
    let drops = ctx.out.join(format!("{stem}.drops.jsonl"));
    write_dataset(&data, &out.triples)?;
    write_jsonl(&drops, &out.drops)?;
    manifest.output(&data);
    manifest.output(&drops);
    println!(
        "{stem}: kept {} dropped {} -> {}",
        out.triples.len(),
        out.drops.len(),
        data.display()
    );
    Ok(())
}

pub fn run(ctx: &Context, args: BuildArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let mock = args.mock || cfg.pick(None, "mock", false)?;
    let n = cfg.pick(args.n, "n", 500usize)?;
    let prompts_path: Option<PathBuf> = cfg.pick_opt(args.prompts, "prompts")?;
    let mut manifest = ManifestBuilder::new("build-dataset");
    manifest.seed("root", ctx.seed);

    let backend = if mock {
        let mut world = MockWorld::new(ctx.seed).map_err(classify)?;
        if let Some(p) = cfg.pick_opt(args.flip_probability, "flip-probability")? {
            world = world.with_flip_probability(p).map_err(classify)?;
        }
        Backend::Mock(world)
    } else {
        let endpoint: String = cfg.pick_opt(args.endpoint, "endpoint")?.ok_or_else(|| {
            CliError::usage("--endpoint is required unless --mock is given")
        })?;
        let retry = RetryPolicy {
            max_attempts: cfg.pick(args.max_attempts, "max-attempts", RetryPolicy::default().max_attempts)?,
            jitter_seed: ctx.seed,
            ..RetryPolicy::default()
        };
        Backend::Http {
            endpoint,
            timeout: Duration::from_secs(cfg.pick(args.timeout_secs, "timeout-secs", 60u64)?),
            retry,
        }
    };
    if args.method == Method::SyntheticSuite && !mock {
        return Err(CliError::usage("synthetic-suite requires --mock"));
    }

    let mut pipeline = match &backend {
        Backend::Mock(world) => world.pipeline_config(),
        Backend::Http { retry, .. } => PipelineConfig {
            retry: *retry,
            seed: ctx.seed,
            ..PipelineConfig::default()
        },
    };
    pipeline.reviser_model = cfg.pick(args.reviser_model, "reviser-model", pipeline.reviser_model)?;
    pipeline.judge_model = cfg.pick(args.judge_model, "judge-model", pipeline.judge_model)?;
    pipeline.max_concurrent = cfg.pick(args.max_concurrent, "max-concurrent", pipeline.max_concurrent)?;
    if pipeline.max_concurrent == 0 {
        return Err(CliError::usage("--max-concurrent must be at least 1"));
    }
    let lo = cfg.pick_opt(args.length_lo, "length-lo")?;
    let hi = cfg.pick_opt(args.length_hi, "length-hi")?;
    if args.no_length_filter || cfg.pick(None, "no-length-filter", false)? {
        pipeline.length_filter = None;
    } else if lo.is_some() || hi.is_some() {
        let d = LengthFilter::default();
        pipeline.length_filter = Some(LengthFilter::new(lo.unwrap_or(d.lo), hi.unwrap_or(d.hi)).map_err(classify)?);
    }
    let target_model: String = cfg.pick(args.target_model, "target-model", "target".to_string())?;
    let stronger_model: String = cfg.pick(args.stronger_model, "stronger-model", "stronger".to_string())?;
    let pool_1: Option<PathBuf> = cfg.pick_opt(args.pool_1, "pool-1")?;
    let pool_2: Option<PathBuf> = cfg.pick_opt(args.pool_2, "pool-2")?;

    manifest.config(json!({
        "method": args.method.stem(),
        "mock": mock,
        "n": n,
        "reviser_model": pipeline.reviser_model,
        "judge_model": pipeline.judge_model,
        "target_model": target_model,
        "stronger_model": stronger_model,
        "max_concurrent": pipeline.max_concurrent,
        "max_attempts": pipeline.retry.max_attempts,
        "length_filter": pipeline.length_filter.map(|f| [f.lo, f.hi]),
        "flip_probability": match &backend { Backend::Mock(w) => Some(w.flip_probability), _ => None },
    }))?;

    let prompts = match (&prompts_path, &backend) {
        (Some(p), _) => {
            manifest.input(p);
            read_prompts(p)?
        }
        (None, Backend::Mock(world)) => {
            if n == 0 {
                return Err(CliError::usage("--n must be at least 1"));
            }
            world.prompts(n)
        }
        (None, Backend::Http { .. }) => {
            return Err(CliError::usage("--prompts is required with a chat endpoint"))
        }
    };

    let outputs: Vec<(&'static str, BuildOutput)> = match backend {
        Backend::Mock(world) => {
            if args.method == Method::SyntheticSuite {
                let suite = build_synthetic_suite(&world, prompts.len()).map_err(classify)?;
                suite.datasets().into_iter().map(|(s, o)| (s, o.clone())).collect()
            } else {
                let g = world.generators().map_err(classify)?;
                let reviser = MockReviser { world: &world };
                let judge = MockJudge {
                    rule: JudgeRule::Stronger(&world),
                };
                let mock_pool = |gen: &dyn Generator| -> CliResult<Vec<PoolRecord>> {
                    prompts
                        .iter()
                        .enumerate()
                        .map(|(i, x)| {
                            Ok(PoolRecord {
                                prompt: x.clone(),
                                response: gen.generate(x, (prompts.len() + i) as u64).map_err(classify)?,
                                model: gen.name().to_string(),
                            })
                        })
                        .collect()
                };
                let pools = || -> CliResult<(Vec<PoolRecord>, Vec<PoolRecord>)> {
                    Ok((
                        load_pool(pool_1.as_deref(), &mut || mock_pool(&g.stronger))?,
                        load_pool(pool_2.as_deref(), &mut || mock_pool(&g.peer))?,
                    ))
                };
                vec![(
                    args.method.stem(),
                    run_method(args.method, &prompts, &g.target, &g.stronger, &reviser, &judge, pools, &pipeline)?,
                )]
            }
        }
        Backend::Http {
            endpoint,
            timeout,
            retry,
        } => {
            let client = HttpChatClient::from_env(endpoint, timeout).map_err(classify)?;
            let target = ChatGenerator {
                client: &client,
                model: target_model,
                retry,
            };
            let stronger = ChatGenerator {
                client: &client,
                model: stronger_model,
                retry,
            };
            let pools = || -> CliResult<(Vec<PoolRecord>, Vec<PoolRecord>)> {
                let need = || -> CliResult<Vec<PoolRecord>> {
                    Err(CliError::usage("judge-off needs --pool-1 and --pool-2"))
                };
                Ok((
                    load_pool(pool_1.as_deref(), &mut need.clone())?,
                    load_pool(pool_2.as_deref(), &mut need.clone())?,
                ))
            };
            vec![(
                args.method.stem(),
                run_method(args.method, &prompts, &target, &stronger, &client, &client, pools, &pipeline)?,
            )]
        }
    };
    for p in [&pool_1, &pool_2].into_iter().flatten() {
        if args.method == Method::JudgeOff {
            manifest.input(p);
        }
    }

    for (stem, out) in &outputs {
        write_output(ctx, stem, out, &mut manifest)?;
    }
    manifest.finish(&ctx.out.join(format!("build-{}.manifest.json", args.method.stem())))?;

    let empty: Vec<&str> = outputs
        .iter()
        .filter(|(_, o)| o.triples.is_empty())
        .map(|(s, _)| *s)
        .collect();
    if !empty.is_empty() {
        return Err(anyhow::anyhow!("no pairs survived for {}", empty.join(", ")).into());
    }
    Ok(())
}

fn load_pool(
    path: Option<&Path>,
    fallback: &mut dyn FnMut() -> CliResult<Vec<PoolRecord>>,
) -> CliResult<Vec<PoolRecord>> {
    match path {
        Some(p) => read_jsonl(p).map_err(|e| anyhow::anyhow!("reading pool {}: {e}", p.display()).into()),
        None => fallback(),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    method: Method,
    prompts: &[String],
    target: &dyn Generator,
    stronger: &dyn Generator,
    reviser: &dyn ChatClient,
    judge: &dyn ChatClient,
    pools: impl FnOnce() -> CliResult<(Vec<PoolRecord>, Vec<PoolRecord>)>,
    config: &PipelineConfig,
) -> CliResult<BuildOutput> {
    let out = match method {
        Method::Clair => build_clair(prompts, target, reviser, config),
        Method::JudgeOn => build_judge_on_policy(prompts, target, judge, config),
        Method::JudgeOff => {
            let (p1, p2) = pools()?;
            build_judge_off_policy(prompts, &p1, &p2, judge, config)
        }
        Method::Stronger => build_stronger_preferred(prompts, target, stronger),
        Method::SyntheticSuite => unreachable!("handled by the caller"),
    };
    out.map_err(classify)
}
