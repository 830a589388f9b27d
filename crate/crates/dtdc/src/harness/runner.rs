//! Experiment execution: trajectory pools, repetition fan-out, CSV export.
//!
//! Repetitions reuse a pool of trajectories generated once per spec from
//! `(seed, repetition)`, so every run in a spec sees the same sample stream
//! of its repetition. Repetitions run in parallel; rows are assembled in a
//! fixed order afterwards, so output files are byte-identical across reruns.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::decentral::{run, PooledSource, Trace};
use crate::env::{EnvBundle, Transition, TrajectorySampler};
use crate::error::{Error, Result};
use crate::network::CommMatrix;
use crate::rng::stream_rng;
use crate::tdc::{expected_stats, FixedPoint};

use super::files::{build_env, build_topology, ExperimentSpec};

/// One CSV data row: `(run, repetition, recorded iteration)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub run_label: String,
    pub repetition: usize,
    pub iter: usize,
    pub samples: usize,
    pub param_comm: usize,
    pub ratio_comm: usize,
    pub conv_err: f64,
    pub cons_err: f64,
    pub w_err: f64,
}

pub const CSV_HEADER: &str =
    "runLabel,repetition,iter,samples,paramComm,ratioComm,convErr,consErr,wErr";

/// Median and percentile envelope of the convergence error at one recorded
/// iteration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryPoint {
    pub iter: usize,
    pub samples: usize,
    pub param_comm: usize,
    pub ratio_comm: usize,
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub label: String,
    pub points: Vec<SummaryPoint>,
}

/// In-memory result of an executed spec.
pub struct ExperimentResult {
    /// `traces[run_index][repetition]`.
    pub traces: Vec<Vec<Trace>>,
    pub rows: Vec<CsvRow>,
    pub summaries: Vec<RunSummary>,
    pub warnings: Vec<String>,
    pub fixed_point: FixedPoint,
}

/// Executes every `(run, repetition)` pair of the spec. `base` anchors
/// relative bundle/topology paths.
pub fn execute_spec(spec: &ExperimentSpec, base: &Path) -> Result<ExperimentResult> {
    let env = build_env(&spec.env, base)?;
    let v = build_topology(&spec.topology, env.mdp.n_agents(), base)?;
    execute_spec_with(spec, &env, &v)
}

/// Same, with the environment and topology already resolved.
pub fn execute_spec_with(
    spec: &ExperimentSpec,
    env: &EnvBundle,
    v: &CommMatrix,
) -> Result<ExperimentResult> {
    let mut warnings = Vec::new();
    let mu = crate::env::stationary_distribution(&env.mdp, &env.policies, 1e-12)?;
    let fp = expected_stats(&env.mdp, &env.policies, &env.features, &mu)?;
    if fp.cond_a > 1e10 {
        warnings.push(format!(
            "expected matrix A is ill conditioned (cond = {:.3e}); the fixed point may be inaccurate",
            fp.cond_a
        ));
    }
    if fp.lambda1_imag > 1e-8 {
        warnings.push(format!(
            "eigenvalues of A^T C^-1 A have imaginary parts up to {:.3e}",
            fp.lambda1_imag
        ));
    }

    let pool_len = spec
        .runs
        .iter()
        .map(|(_, cfg)| cfg.samples_needed())
        .max()
        .unwrap_or(0);

    let per_rep: Vec<Result<Vec<Trace>>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| {
            let pool = generate_pool(env, spec.seed, rep, pool_len)?;
            spec.runs
                .iter()
                .map(|(label, cfg)| {
                    let mut src = PooledSource::new(&pool);
                    run(cfg, env, v, &fp, &mut src).map_err(|e| {
                        Error::Spec(format!("run {label:?}, repetition {rep}: {e}"))
                    })
                })
                .collect()
        })
        .collect();

    let mut traces: Vec<Vec<Trace>> = vec![Vec::with_capacity(spec.repetitions); spec.runs.len()];
    for (rep, res) in per_rep.into_iter().enumerate() {
        let rep_traces = res?;
        debug_assert_eq!(rep_traces.len(), spec.runs.len());
        for (run_idx, trace) in rep_traces.into_iter().enumerate() {
            debug_assert_eq!(traces[run_idx].len(), rep);
            traces[run_idx].push(trace);
        }
    }

    let rows = assemble_rows(spec, &traces);
    let summaries = summarize(spec, &traces);
    Ok(ExperimentResult {
        traces,
        rows,
        summaries,
        warnings,
        fixed_point: fp,
    })
}

/// One shared trajectory per repetition, started from a uniformly drawn
/// state, keyed by `(spec seed, repetition)`.
pub fn generate_pool(
    env: &EnvBundle,
    seed: u64,
    repetition: usize,
    length: usize,
) -> Result<Vec<Transition>> {
    let mut rng = stream_rng(seed, &format!("trajectory-{repetition}"));
    let s0 = rng.random_range(0..env.mdp.n_states());
    let mut sampler = TrajectorySampler::new(&env.mdp, &env.policies, s0, rng)?;
    Ok(sampler.sample(length))
}

fn assemble_rows(spec: &ExperimentSpec, traces: &[Vec<Trace>]) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for (run_idx, (label, _)) in spec.runs.iter().enumerate() {
        for (rep, trace) in traces[run_idx].iter().enumerate() {
            for r in &trace.records {
                rows.push(CsvRow {
                    run_label: label.clone(),
                    repetition: rep,
                    iter: r.iter,
                    samples: r.samples_consumed,
                    param_comm: r.param_comm_rounds,
                    ratio_comm: r.ratio_comm_rounds,
                    conv_err: r.convergence_error,
                    cons_err: r.consensus_error,
                    w_err: r.w_tracking_error,
                });
            }
        }
    }
    rows
}

fn summarize(spec: &ExperimentSpec, traces: &[Vec<Trace>]) -> Vec<RunSummary> {
    let mut out = Vec::new();
    for (run_idx, (label, _)) in spec.runs.iter().enumerate() {
        let reps = &traces[run_idx];
        let n_records = reps.first().map_or(0, |t| t.records.len());
        let mut points = Vec::with_capacity(n_records);
        for i in 0..n_records {
            let template = &reps[0].records[i];
            let errs: Vec<f64> = reps.iter().map(|t| t.records[i].convergence_error).collect();
            points.push(SummaryPoint {
                iter: template.iter,
                samples: template.samples_consumed,
                param_comm: template.param_comm_rounds,
                ratio_comm: template.ratio_comm_rounds,
                median: percentile(&errs, 50.0),
                p5: percentile(&errs, 5.0),
                p95: percentile(&errs, 95.0),
            });
        }
        out.push(RunSummary {
            label: label.clone(),
            points,
        });
    }
    out
}

/// Nearest-rank percentile; with 100 values, p5/p95 select the 5th and 95th
/// order statistics. Non-finite values sort last, so a diverged repetition
/// drags the upper envelope to infinity rather than poisoning the sort.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted: Vec<f64> = values
        .iter()
        .map(|&x| if x.is_nan() { f64::INFINITY } else { x })
        .collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((p / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// 17-significant-digit float formatting, fixed across platforms.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `rows.csv` and `summary.csv` under `out_dir`; returns their paths.
pub fn write_outputs(result: &ExperimentResult, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir)?;
    let rows_path = out_dir.join("rows.csv");
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for r in &result.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.run_label,
            r.repetition,
            r.iter,
            r.samples,
            r.param_comm,
            r.ratio_comm,
            fmt_float(r.conv_err),
            fmt_float(r.cons_err),
            fmt_float(r.w_err),
        ));
    }
    fs::write(&rows_path, text)?;

    let summary_path = out_dir.join("summary.csv");
    let mut text = String::from("runLabel,iter,samples,paramComm,ratioComm,median,p5,p95\n");
    for s in &result.summaries {
        for p in &s.points {
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.label,
                p.iter,
                p.samples,
                p.param_comm,
                p.ratio_comm,
                fmt_float(p.median),
                fmt_float(p.p5),
                fmt_float(p.p95),
            ));
        }
    }
    fs::write(&summary_path, text)?;
    Ok((rows_path, summary_path))
}

/// Loads, executes and exports a spec in one call.
pub fn run_experiment(spec_path: &Path, out_dir: &Path) -> Result<ExperimentResult> {
    let spec = super::files::load_spec(spec_path)?;
    let base = spec_path.parent().unwrap_or(Path::new("."));
    let result = execute_spec(&spec, base)?;
    write_outputs(&result, out_dir)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decentral::{Algorithm, ParamInit, RunConfig};
    use crate::env::EnvParams;
    use crate::harness::files::{EnvSection, TopologySection};

    fn small_spec() -> ExperimentSpec {
        let run_a = RunConfig {
            algorithm: Algorithm::Alg1,
            batch_size: 4,
            iterations: 50,
            post_averaging: 0,
            gossip_rounds: None,
            alpha: 0.1,
            beta: 0.05,
            seed: 3,
            metrics_every: 1,
            init: ParamInit::Gaussian { scale: 1.0 },
        };
        let mut run_b = run_a.clone();
        run_b.batch_size = 8;
        ExperimentSpec {
            name: "test".into(),
            repetitions: 3,
            seed: 3,
            env: EnvSection {
                bundle: None,
                generate: Some(EnvParams {
                    seed: 3,
                    n_states: 5,
                    n_agents: 3,
                    actions_per_agent: 2,
                    feature_dim: 3,
                    gamma: 0.9,
                    r_max: 1.0,
                    noise_std: 0.05,
                    floor_prob: 0.01,
                }),
            },
            topology: TopologySection {
                kind: "fully-connected".into(),
                diag: Some(0.8),
                neighbor: None,
                path: None,
            },
            runs: vec![("a".into(), run_a), ("b".into(), run_b)],
        }
    }

    #[test]
    fn row_count_matches_grid() {
        // 2 runs x 3 repetitions x 50 recorded iterations = 300 rows.
        let spec = small_spec();
        let result = execute_spec(&spec, Path::new(".")).unwrap();
        assert_eq!(result.rows.len(), 300);
    }

    #[test]
    fn csv_outputs_are_byte_identical() {
        let spec = small_spec();
        let dir_a = std::env::temp_dir().join("dtdc-runner-a");
        let dir_b = std::env::temp_dir().join("dtdc-runner-b");
        let ra = execute_spec(&spec, Path::new(".")).unwrap();
        let rb = execute_spec(&spec, Path::new(".")).unwrap();
        write_outputs(&ra, &dir_a).unwrap();
        write_outputs(&rb, &dir_b).unwrap();
        let a = fs::read(dir_a.join("rows.csv")).unwrap();
        let b = fs::read(dir_b.join("rows.csv")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }

    #[test]
    fn repetitions_share_trajectory_pools_across_runs() {
        let spec = small_spec();
        let env = build_env(&spec.env, Path::new(".")).unwrap();
        let p1 = generate_pool(&env, spec.seed, 1, 64).unwrap();
        let p2 = generate_pool(&env, spec.seed, 1, 64).unwrap();
        let other = generate_pool(&env, spec.seed, 2, 64).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1, other);
    }

    #[test]
    fn percentile_nearest_rank() {
        let values: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&values, 5.0), 5.0);
        assert_eq!(percentile(&values, 95.0), 95.0);
        assert_eq!(percentile(&values, 50.0), 50.0);
        assert_eq!(percentile(&[2.0], 5.0), 2.0);
        assert_eq!(percentile(&[2.0, f64::NAN], 95.0), f64::INFINITY);
    }

    #[test]
    fn summary_single_repetition_collapses_envelopes() {
        let mut spec = small_spec();
        spec.repetitions = 1;
        let result = execute_spec(&spec, Path::new(".")).unwrap();
        for s in &result.summaries {
            for p in &s.points {
                assert_eq!(p.median, p.p5);
                assert_eq!(p.median, p.p95);
            }
        }
    }
}
