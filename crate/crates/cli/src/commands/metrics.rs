use std::path::PathBuf;

use alab_core::metrics::{score_dataset, JaccardOptions};
use clap::Args;

use super::{classify, load_dataset};
use crate::error::{CliError, CliResult};
use crate::manifest::{write_atomic, ManifestBuilder};
use crate::Context;

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Preference dataset (JSONL).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Also write one row per pair to metrics.per-pair.csv.
    #[arg(long)]
    per_pair: bool,
    /// Lowercase tokens before comparing.
    #[arg(long)]
    lowercase: bool,
    /// Count repeated tokens in the Jaccard score.
    #[arg(long)]
    multiset: bool,
}

pub fn run(ctx: &Context, args: MetricsArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let dataset: PathBuf = cfg
        .pick_opt(args.dataset, "dataset")?
        .ok_or_else(|| CliError::usage("--dataset is required"))?;
    let opts = JaccardOptions {
        lowercase: args.lowercase || cfg.pick(None, "lowercase", false)?,
        multiset: args.multiset || cfg.pick(None, "multiset", false)?,
    };
    let per_pair = args.per_pair || cfg.pick(None, "per-pair", false)?;

    let mut manifest = ManifestBuilder::new("metrics");
    manifest.config(opts)?;
    manifest.input(&dataset);

    let data = load_dataset(&dataset)?;
    let report = score_dataset(&data, opts).map_err(classify)?;
    let summary = serde_json::to_string_pretty(&report.summary())?;
    println!("{summary}");

    let path = ctx.out.join("metrics.json");
    write_atomic(&path, summary.as_bytes())?;
    manifest.output(&path);
    if per_pair {
        let csv = ctx.out.join("metrics.per-pair.csv");
        report.write_per_pair_csv(&csv)?;
        manifest.output(&csv);
    }
    manifest.finish(&ctx.out.join("metrics.manifest.json"))?;
    Ok(())
}
