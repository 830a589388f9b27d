use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dtdc::decentral::Algorithm;
use dtdc::env::{generate_bundle, stationary_distribution, EnvParams};
use dtdc::harness::files::{self, ExperimentSpec};
use dtdc::harness::plotdata::{emit_plotdata, GroupBy};
use dtdc::harness::runner::{execute_spec, write_outputs};
use dtdc::harness::verify::verify_suite;
use dtdc::tdc::expected_stats;

/// Decentralized mini-batch TDC simulator for multi-agent off-policy
/// evaluation.
#[derive(Parser)]
#[command(name = "dtdc", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an environment bundle (MDP, policies, features) and save it.
    Gen(GenArgs),
    /// Execute an experiment spec and write rows.csv / summary.csv.
    Run(RunArgs),
    /// Expand batch-size / gossip-round grids over a template spec and run.
    Sweep(SweepArgs),
    /// Run the invariant verification suite.
    Verify(VerifyArgs),
    /// Export per-run plot series from a rows.csv.
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    states: usize,
    #[arg(long, default_value_t = 10)]
    agents: usize,
    #[arg(long, default_value_t = 2)]
    actions: usize,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    r_max: f64,
    #[arg(long, default_value_t = 0.05)]
    noise_std: f64,
    #[arg(long, default_value_t = 0.01)]
    floor_prob: f64,
    /// Output path for the bundle (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Also export the fixed-point summary (TOML) to this path.
    #[arg(long)]
    fixed_point: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Batch sizes to expand over the first exact-ratio run.
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Vec<usize>,
    /// Gossip round counts to expand over the first estimated-ratio run.
    #[arg(long, value_delimiter = ',')]
    gossip_rounds: Vec<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct PlotdataArgs {
    #[arg(long)]
    csv: PathBuf,
    /// `samples` or `param-comm`.
    #[arg(long)]
    group_by: String,
    #[arg(long)]
    out: PathBuf,
}

fn configure_parallelism() {
    if let Ok(width) = std::env::var("DTDC_THREADS") {
        if let Ok(n) = width.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

fn main() -> ExitCode {
    configure_parallelism();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Plotdata(args) => cmd_plotdata(args),
    }
}

fn cmd_gen(args: GenArgs) -> anyhow::Result<ExitCode> {
    let params = EnvParams {
        seed: args.seed,
        n_states: args.states,
        n_agents: args.agents,
        actions_per_agent: args.actions,
        feature_dim: args.dim,
        gamma: args.gamma,
        r_max: args.r_max,
        noise_std: args.noise_std,
        floor_prob: args.floor_prob,
    };
    let bundle = generate_bundle(&params).context("generating environment")?;
    files::write_bundle(&args.out, &bundle).context("writing bundle")?;
    println!(
        "wrote bundle: {} ({} states, {} agents, {} joint actions)",
        args.out.display(),
        bundle.mdp.n_states(),
        bundle.mdp.n_agents(),
        bundle.mdp.n_joint_actions()
    );
    if let Some(fp_path) = args.fixed_point {
        let mu = stationary_distribution(&bundle.mdp, &bundle.policies, 1e-12)?;
        let fp = expected_stats(&bundle.mdp, &bundle.policies, &bundle.features, &mu)?;
        if fp.cond_a > 1e10 {
            eprintln!("warning: cond(A) = {:.3e} exceeds 1e10", fp.cond_a);
        }
        files::write_fixed_point(&fp_path, &fp)?;
        println!(
            "wrote fixed point: {} (lambda1 = {:.6e}, lambda2 = {:.6e}, cond(A) = {:.3e})",
            fp_path.display(),
            fp.lambda1,
            fp.lambda2,
            fp.cond_a
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn execute_and_report(spec: &ExperimentSpec, base: &Path, out: &Path) -> anyhow::Result<ExitCode> {
    let result = execute_spec(spec, base)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    let (rows, summary) = write_outputs(&result, out)?;
    println!("wrote {} and {}", rows.display(), summary.display());
    for s in &result.summaries {
        if let Some(last) = s.points.last() {
            println!(
                "run {:<24} final median convErr = {:.6e} (p5 {:.3e}, p95 {:.3e}) \
                 after {} samples, {} param rounds",
                s.label, last.median, last.p5, last.p95, last.samples, last.param_comm
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<ExitCode> {
    let spec = files::load_spec(&args.spec)?;
    let base = args.spec.parent().unwrap_or(Path::new(".")).to_path_buf();
    execute_and_report(&spec, &base, &args.out)
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<ExitCode> {
    let mut spec = files::load_spec(&args.spec)?;
    let base = args.spec.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut expanded = Vec::new();
    if !args.batch_sizes.is_empty() {
        let template = spec
            .runs
            .iter()
            .find(|(_, cfg)| cfg.algorithm == Algorithm::Alg1)
            .cloned()
            .map(|(_, cfg)| cfg);
        let Some(template) = template else {
            bail!("--batch-sizes needs an exact-ratio run in the spec as template");
        };
        let budget = template.samples_needed();
        for &n in &args.batch_sizes {
            if n == 0 {
                bail!("batch size 0 in sweep grid");
            }
            let mut cfg = template.clone();
            cfg.batch_size = n;
            cfg.iterations = (budget / n).max(1);
            expanded.push((format!("tdc-n{n}"), cfg));
        }
    }
    if !args.gossip_rounds.is_empty() {
        let template = spec
            .runs
            .iter()
            .find(|(_, cfg)| cfg.algorithm == Algorithm::Alg2)
            .cloned()
            .map(|(_, cfg)| cfg);
        let Some(template) = template else {
            bail!("--gossip-rounds needs an estimated-ratio run in the spec as template");
        };
        for &l in &args.gossip_rounds {
            if l == 0 {
                bail!("gossip round count 0 in sweep grid");
            }
            let mut cfg = template.clone();
            cfg.gossip_rounds = Some(l);
            expanded.push((format!("tdc-inexact-l{l}"), cfg));
        }
    }
    if expanded.is_empty() {
        bail!("sweep needs --batch-sizes and/or --gossip-rounds");
    }
    spec.runs = expanded;
    execute_and_report(&spec, &base, &args.out)
}

fn cmd_verify(args: VerifyArgs) -> anyhow::Result<ExitCode> {
    let results = verify_suite(args.seed)?;
    let mut all_passed = true;
    for check in &results {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<44} {}", check.name, check.margin);
        all_passed &= check.passed;
    }
    if all_passed {
        println!("verification suite: {} checks passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verification suite: FAILURES present");
        Ok(ExitCode::from(2))
    }
}

fn cmd_plotdata(args: PlotdataArgs) -> anyhow::Result<ExitCode> {
    let group_by = GroupBy::from_str(&args.group_by)?;
    let files = emit_plotdata(&args.csv, group_by, &args.out)?;
    println!("wrote {} series files under {}", files.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
