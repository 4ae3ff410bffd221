use std::path::PathBuf;

use alab_core::pipeline::{build_synthetic_suite, MockWorld};
use alab_core::trainer::{compare_dynamics, write_trajectory_csv};
use alab_core::{write_dataset, ObjectiveKind};
use clap::Args;
use serde_json::json;

use super::train::{corpus_vocab, TrainOpts};
use super::{classify, load_dataset};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_atomic, ManifestBuilder};
use crate::Context;

#[derive(Args, Debug)]
pub struct DynamicsArgs {
    /// Preference dataset (JSONL).
    #[arg(long, conflicts_with = "synthetic")]
    dataset: Option<PathBuf>,

    /// Train on a minimal-revision dataset of this many pairs from the mock world.
    #[arg(long)]
    synthetic: Option<usize>,

    /// Comma-separated objectives to compare.
    #[arg(long, value_delimiter = ',')]
    objectives: Option<Vec<ObjectiveKind>>,

    #[command(flatten)]
    opts: TrainOpts,
}

fn default_objectives() -> Vec<ObjectiveKind> {
    vec![ObjectiveKind::ApoZero, ObjectiveKind::Dpo, ObjectiveKind::ApoDown]
}

pub fn run(ctx: &Context, args: DynamicsArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let objectives = match args.objectives {
        Some(o) => o,
        None => match cfg.pick_opt::<Vec<String>>(None, "objectives")? {
            Some(names) => names
                .iter()
                .map(|s| s.parse().map_err(classify))
                .collect::<CliResult<_>>()?,
            None => default_objectives(),
        },
    };
    if objectives.len() < 2 {
        return Err(CliError::usage("--objectives needs at least two entries"));
    }
    // any objective will do here; each run swaps in its own
    let config = args.opts.resolve(cfg, objectives[0], ctx.seed)?;
    let mut manifest = ManifestBuilder::new("dynamics");
    manifest.seed("root", ctx.seed);

    let dataset: Option<PathBuf> = cfg.pick_opt(args.dataset, "dataset")?;
    let synthetic: Option<usize> = cfg.pick_opt(args.synthetic, "synthetic")?;
    let data = match (dataset, synthetic) {
        (Some(path), None) => {
            manifest.input(&path);
            load_dataset(&path)?
        }
        (None, Some(n)) => {
            let world = MockWorld::new(ctx.seed).map_err(classify)?;
            let triples = build_synthetic_suite(&world, n).map_err(classify)?.clair.triples;
            let path = ctx.out.join("synthetic-clair.jsonl");
            write_dataset(&path, &triples)?;
            manifest.output(&path);
            triples
        }
        (Some(_), Some(_)) => return Err(CliError::usage("give either --dataset or --synthetic, not both")),
        (None, None) => return Err(CliError::usage("one of --dataset or --synthetic is required")),
    };
    let vocab = corpus_vocab(&data, args.opts.vocab_size(cfg)?)?;
    manifest.config(json!({
        "objectives": objectives.iter().map(|k| k.as_str()).collect::<Vec<_>>(),
        "synthetic": synthetic,
        "vocab_size": vocab.len(),
        "train": config,
    }))?;

    let report = compare_dynamics(&data, &vocab, &config, &objectives).map_err(classify)?;

    let mut finals = serde_json::Map::new();
    for run in &report.runs {
        let path = ctx.out.join(format!("{}.trajectory.csv", run.objective));
        write_trajectory_csv(&path, run.objective, &run.trajectory)?;
        manifest.output(&path);
        let p = run.final_point();
        println!(
            "{:<18} final r_w {:+.6} r_l {:+.6} ll_w {:.4} ll_l {:.4}",
            run.objective.as_str(),
            p.mean_r_w,
            p.mean_r_l,
            p.mean_ll_w,
            p.mean_ll_l
        );
        finals.insert(
            run.objective.to_string(),
            json!({ "r_w": p.mean_r_w, "r_l": p.mean_r_l, "ll_w": p.mean_ll_w, "ll_l": p.mean_ll_l }),
        );
    }
    let v = report.verdict;
    let show = |name: &str, x: Option<bool>| {
        if let Some(b) = x {
            println!("{name}: {b}");
        }
    };
    show("apo-zero highest", v.apo_zero_highest);
    show("apo-down lowest", v.apo_down_lowest);
    show("dpo between", v.dpo_between);
    show("positive margins", v.positive_margins);
    show("dpo tracks apo-zero early", v.dpo_tracks_apo_zero_early);

    let ordering = ctx.out.join("ordering.json");
    let body = json!({ "verdict": v, "final": finals });
    write_atomic(&ordering, serde_json::to_string_pretty(&body)?.as_bytes())?;
    manifest.output(&ordering);
    manifest.finish(&ctx.out.join("dynamics.manifest.json"))?;
    Ok(())
}
