use std::path::PathBuf;

use alab_core::dataset::LengthCaps;
use alab_core::objectives::UnpairedWeights;
use alab_core::trainer::{self, EvalInterval, LrSchedule, TrainConfig};
use alab_core::{ObjectiveKind, ObjectiveSpec, PreferenceTriple, Vocabulary};
use clap::Args;

use super::{classify, load_dataset};
use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::Context;

/// Optimizer and schedule flags shared by `train` and `dynamics`.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainOpts {
    /// Reward scale.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub learning_rate: Option<f64>,
    /// `constant` or `linear-decay`.
    #[arg(long)]
    pub lr_schedule: Option<String>,
    #[arg(long)]
    pub rmsprop_decay: Option<f64>,
    #[arg(long)]
    pub rmsprop_eps: Option<f64>,
    #[arg(long)]
    pub heldout_fraction: Option<f64>,
    /// Smallest held-out split, when the dataset is large enough.
    #[arg(long)]
    pub min_heldout: Option<usize>,
    /// Context length of the toy policy.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub max_prompt: Option<usize>,
    /// Includes the trailing end-of-sequence token.
    #[arg(long)]
    pub max_response: Option<usize>,
    /// Evaluate every N steps instead of once per epoch.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Vocabulary size including the four special tokens.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[arg(long)]
    pub desirable_weight: Option<f64>,
    #[arg(long)]
    pub undesirable_weight: Option<f64>,
}

fn parse_schedule(s: &str) -> Result<LrSchedule, String> {
    match s {
        "constant" => Ok(LrSchedule::Constant),
        "linear-decay" | "linear" => Ok(LrSchedule::LinearDecay),
        other => Err(format!("unknown lr schedule {other:?} (constant | linear-decay)")),
    }
}

impl TrainOpts {
    pub fn resolve(&self, cfg: &ConfigFile, kind: ObjectiveKind, seed: u64) -> CliResult<TrainConfig> {
        let d = TrainConfig::default();
        let dw = UnpairedWeights::default();
        let schedule = match cfg.pick_opt(self.lr_schedule.clone(), "lr-schedule")? {
            Some(s) => parse_schedule(&s).map_err(CliError::Usage)?,
            None => d.lr_schedule,
        };
        let eval_interval = match cfg.pick_opt(self.eval_every, "eval-every")? {
            Some(n) => EvalInterval::Steps(n),
            None => EvalInterval::Epoch,
        };
        let mut objective = ObjectiveSpec::new(kind).with_beta(cfg.pick(self.beta, "beta", ObjectiveSpec::DEFAULT_BETA)?);
        objective.weights = UnpairedWeights {
            desirable: cfg.pick(self.desirable_weight, "desirable-weight", dw.desirable)?,
            undesirable: cfg.pick(self.undesirable_weight, "undesirable-weight", dw.undesirable)?,
        };
        let config = TrainConfig {
            objective,
            epochs: cfg.pick(self.epochs, "epochs", d.epochs)?,
            batch_size: cfg.pick(self.batch_size, "batch-size", d.batch_size)?,
            learning_rate: cfg.pick(self.learning_rate, "learning-rate", d.learning_rate)?,
            lr_schedule: schedule,
            rmsprop_decay: cfg.pick(self.rmsprop_decay, "rmsprop-decay", d.rmsprop_decay)?,
            rmsprop_eps: cfg.pick(self.rmsprop_eps, "rmsprop-eps", d.rmsprop_eps)?,
            seed,
            heldout_fraction: cfg.pick(self.heldout_fraction, "heldout-fraction", d.heldout_fraction)?,
            min_heldout: cfg.pick(self.min_heldout, "min-heldout", d.min_heldout)?,
            order: cfg.pick(self.order, "order", d.order)?,
            caps: LengthCaps {
                max_prompt: cfg.pick(self.max_prompt, "max-prompt", d.caps.max_prompt)?,
                max_response: cfg.pick(self.max_response, "max-response", d.caps.max_response)?,
            },
            eval_interval,
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    pub fn vocab_size(&self, cfg: &ConfigFile) -> CliResult<usize> {
        cfg.pick(self.max_vocab, "max-vocab", 32)
    }
}

/// Closed vocabulary over every text in the dataset.
pub fn corpus_vocab(data: &[PreferenceTriple], max_size: usize) -> CliResult<Vocabulary> {
    Vocabulary::from_corpus(
        data.iter()
            .flat_map(|t| [t.prompt.as_str(), t.winning.as_str(), t.losing.as_str()]),
        max_size,
    )
    .map_err(classify)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Preference dataset (JSONL).
    #[arg(long)]
    dataset: Option<PathBuf>,

    /// sft | dpo | apo-zero | apo-down | kto-pair | kto-unpaired | apo-zero-unpaired
    #[arg(long)]
    objective: Option<ObjectiveKind>,

    #[command(flatten)]
    opts: TrainOpts,
}

pub fn run(ctx: &Context, args: TrainArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let dataset: PathBuf = cfg
        .pick_opt(args.dataset, "dataset")?
        .ok_or_else(|| CliError::usage("--dataset is required"))?;
    let kind: ObjectiveKind = match args.objective {
        Some(k) => k,
        None => match cfg.pick_opt::<String>(None, "objective")? {
            Some(s) => s.parse().map_err(classify)?,
            None => return Err(CliError::usage("--objective is required")),
        },
    };
    let config = args.opts.resolve(cfg, kind, ctx.seed)?;
    let data = load_dataset(&dataset)?;
    let vocab = corpus_vocab(&data, args.opts.vocab_size(cfg)?)?;

    let mut manifest = ManifestBuilder::new("train");
    manifest.config(&config)?;
    manifest.seed("root", ctx.seed);
    manifest.input(&dataset);

    let run = trainer::train(&data, &vocab, &config).map_err(classify)?;

    let stem = kind.as_str();
    let csv = ctx.out.join(format!("{stem}.trajectory.csv"));
    let ckpt = ctx.out.join(format!("{stem}.checkpoint.json"));
    let vocab_path = ctx.out.join(format!("{stem}.vocab.json"));
    trainer::write_trajectory_csv(&csv, kind, &run.trajectory)?;
    run.policy.save(&ckpt)?;
    vocab.save(&vocab_path)?;
    for p in [&csv, &ckpt, &vocab_path] {
        manifest.output(p);
    }
    manifest.finish(&ctx.out.join(format!("{stem}.manifest.json")))?;

    let last = run.trajectory.last().expect("trajectory has a step-0 point");
    println!(
        "{stem}: {} steps, held-out {} pairs, final r_w {:+.6} r_l {:+.6} ll_w {:.4} ll_l {:.4}",
        run.total_steps,
        run.heldout.len(),
        last.mean_r_w,
        last.mean_r_l,
        last.mean_ll_w,
        last.mean_ll_l
    );
    println!("wrote {}", csv.display());
    Ok(())
}
