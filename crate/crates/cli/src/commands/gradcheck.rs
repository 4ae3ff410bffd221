use alab_core::gradcheck::{run_all, GradcheckConfig};
use clap::Args;

use super::classify;
use crate::error::CliResult;
use crate::manifest::{write_atomic, ManifestBuilder};
use crate::Context;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random reward pairs per objective.
    #[arg(long)]
    trials: Option<usize>,
    /// Random sequences per policy order.
    #[arg(long)]
    policy_trials: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Negate analytic gradients (checker self-test).
    #[arg(long, hide = true)]
    flip_sign: bool,
}

pub fn run(ctx: &Context, args: GradcheckArgs) -> CliResult<()> {
    let cfg = &ctx.config;
    let d = GradcheckConfig::default();
    let config = GradcheckConfig {
        trials: cfg.pick(args.trials, "trials", d.trials)?,
        policy_trials: cfg.pick(args.policy_trials, "policy-trials", d.policy_trials)?,
        tolerance: cfg.pick(args.tolerance, "tolerance", d.tolerance)?,
        seed: ctx.seed,
        flip_sign: args.flip_sign,
        ..d
    };
    let mut manifest = ManifestBuilder::new("gradcheck");
    manifest.config(config)?;
    manifest.seed("root", ctx.seed);

    let report = run_all(&config).map_err(classify)?;
    for r in &report.results {
        let verdict = if r.max_rel_err < report.tolerance { "ok" } else { "FAIL" };
        println!(
            "{:<20} {verdict:<4} cases {:>5}  max rel err {:.3e}",
            r.name, r.cases, r.max_rel_err
        );
    }
    let path = ctx.out.join("gradcheck.json");
    write_atomic(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
    manifest.output(&path);
    manifest.finish(&ctx.out.join("gradcheck.manifest.json"))?;

    if report.passed() {
        println!("all gradients within {:e}", report.tolerance);
        return Ok(());
    }
    for f in report.failures() {
        eprintln!("{}: worst case {}", f.name, f.worst_case);
    }
    Err(anyhow::anyhow!(
        "{} of {} checks exceed tolerance {:e}",
        report.failures().count(),
        report.results.len(),
        report.tolerance
    )
    .into())
}
