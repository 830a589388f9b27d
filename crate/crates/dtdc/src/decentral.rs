//! Decentralized algorithm loops.
//!
//! Both algorithms interleave mini-batch TDC updates with one gossip round on
//! each parameter block per iteration, then finish with a gossip-only local
//! averaging phase that drives all agents to the network average:
//!
//! * exact-ratio variant — agents broadcast local ratios and apply shared
//!   batch statistics, each with its private reward vector;
//! * estimated-ratio variant — agents gossip log ratios for `L` rounds and
//!   apply statistics built from their own global-ratio estimates;
//! * TD(0) baseline — one sample per iteration, exact ratio, no correction
//!   term, only the main parameter block is synchronized. This is the natural
//!   dropped-correction restriction of the update above.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{EnvBundle, Transition, TrajectorySampler};
use crate::error::{Error, Result};
use crate::network::{consensus_error, CommMatrix};
use crate::ratios;
use crate::rng::stream_rng;
use crate::tdc::{batch_average, sample_stats, BatchStats, FixedPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Mini-batch TDC with exact global ratios.
    Alg1,
    /// Mini-batch TDC with gossip-estimated global ratios.
    Alg2,
    /// Decentralized TD(0), batch size 1, exact ratios.
    Td0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamInit {
    Zero,
    /// Seeded per-agent Gaussian entries on the main parameter block; keeps
    /// consensus-error plots non-degenerate.
    Gaussian { scale: f64 },
}

/// Per-agent parameter blocks; row `m` belongs to agent `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub theta: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl AgentParams {
    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            theta: DMatrix::zeros(m, d),
            w: DMatrix::zeros(m, d),
        }
    }

    pub fn gaussian(m: usize, d: usize, scale: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "init");
        let normal = Normal::new(0.0, scale).expect("nonnegative init scale");
        Self {
            theta: DMatrix::from_fn(m, d, |_, _| normal.sample(&mut rng)),
            w: DMatrix::zeros(m, d),
        }
    }

    pub fn theta_bar(&self) -> DVector<f64> {
        self.theta.row_mean().transpose()
    }

    pub fn w_bar(&self) -> DVector<f64> {
        self.w.row_mean().transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub batch_size: usize,
    pub iterations: usize,
    /// Gossip-only rounds after the TDC iterations.
    pub post_averaging: usize,
    /// Ratio-gossip rounds per iteration; required for the estimated variant.
    pub gossip_rounds: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub metrics_every: usize,
    pub init: ParamInit,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.metrics_every == 0 {
            return Err(Error::InvalidArgument("metrics_every must be >= 1".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }
        match self.algorithm {
            Algorithm::Alg1 => {}
            Algorithm::Alg2 => {
                if self.gossip_rounds.is_none_or(|l| l == 0) {
                    return Err(Error::InvalidArgument(
                        "the estimated-ratio variant needs gossip_rounds >= 1".into(),
                    ));
                }
            }
            Algorithm::Td0 => {
                if self.batch_size != 1 {
                    return Err(Error::InvalidArgument(
                        "the TD(0) baseline uses batch size 1".into(),
                    ));
                }
            }
        }
        if let Algorithm::Alg1 | Algorithm::Alg2 = self.algorithm {
            if self.beta <= 0.0 {
                return Err(Error::InvalidArgument("beta must be positive".into()));
            }
        }
        if let ParamInit::Gaussian { scale } = self.init {
            if scale < 0.0 {
                return Err(Error::InvalidArgument("init scale must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn samples_needed(&self) -> usize {
        self.batch_size * self.iterations
    }
}

/// Per-iteration metrics relative to the fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub samples_consumed: usize,
    pub param_comm_rounds: usize,
    pub ratio_comm_rounds: usize,
    /// `||theta_bar - theta*|| / ||theta*||`.
    pub convergence_error: f64,
    /// `max_m ||theta^(m) - theta_bar|| / ||theta*||`.
    pub consensus_error: f64,
    /// `||w_bar - w*(theta_bar)||`.
    pub w_tracking_error: f64,
}

/// Full result of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub config: RunConfig,
    pub records: Vec<IterationRecord>,
    pub final_theta: DMatrix<f64>,
    /// For the estimated-ratio variant: whether the configured `L` meets the
    /// round count under which the estimation error bound is guaranteed.
    pub ratio_bound_guaranteed: Option<bool>,
}

/// Streams transitions into a run; either a live sampler or a pre-generated
/// pool shared across runs.
pub trait TransitionSource {
    fn draw(&mut self) -> Result<Transition>;
}

impl TransitionSource for TrajectorySampler<'_> {
    fn draw(&mut self) -> Result<Transition> {
        Ok(self.next_transition())
    }
}

/// Cursor over a pre-generated trajectory.
pub struct PooledSource<'a> {
    pool: &'a [Transition],
    cursor: usize,
}

impl<'a> PooledSource<'a> {
    pub fn new(pool: &'a [Transition]) -> Self {
        Self { pool, cursor: 0 }
    }
}

impl TransitionSource for PooledSource<'_> {
    fn draw(&mut self) -> Result<Transition> {
        let tr = self.pool.get(self.cursor).cloned().ok_or(Error::SampleExhausted {
            needed: self.cursor + 1,
            available: self.pool.len(),
        })?;
        self.cursor += 1;
        Ok(tr)
    }
}

fn check_shapes(p: &AgentParams, v: &CommMatrix, d: usize, n_agents: usize) -> Result<()> {
    if p.theta.nrows() != v.m() || p.w.nrows() != v.m() || v.m() != n_agents {
        return Err(Error::ShapeMismatch(format!(
            "parameter rows {} / topology {} / agents {n_agents}",
            p.theta.nrows(),
            v.m()
        )));
    }
    if p.theta.ncols() != d || p.w.ncols() != d {
        return Err(Error::ShapeMismatch(format!(
            "parameter dim {} does not match feature dim {d}",
            p.theta.ncols()
        )));
    }
    Ok(())
}

/// One exact-ratio iteration: gossip both blocks, then every agent applies the
/// shared batch statistics with its private reward vector.
pub fn alg1_iteration(
    p: &AgentParams,
    v: &CommMatrix,
    bs: &BatchStats,
    alpha: f64,
    beta: f64,
) -> Result<AgentParams> {
    let d = bs.a_bar.nrows();
    check_shapes(p, v, d, bs.b_bar_vecs.len())?;
    let mut theta = v.apply(&p.theta)?;
    let mut w = v.apply(&p.w)?;
    for m in 0..v.m() {
        let theta_m = p.theta.row(m).transpose();
        let w_m = p.w.row(m).transpose();
        let common = &bs.a_bar * &theta_m + &bs.b_bar_vecs[m];
        let theta_drive = &common + &bs.b_bar * &w_m;
        let w_drive = common + &bs.c_bar * &w_m;
        for j in 0..d {
            theta[(m, j)] += alpha * theta_drive[j];
            w[(m, j)] += beta * w_drive[j];
        }
    }
    Ok(AgentParams { theta, w })
}

/// One estimated-ratio iteration: as above, but agent `m` applies statistics
/// built from its own global-ratio estimates (the quadratic feature term is
/// ratio-free and shared).
pub fn alg2_iteration(
    p: &AgentParams,
    v: &CommMatrix,
    per_agent: &[BatchStats],
    alpha: f64,
    beta: f64,
) -> Result<AgentParams> {
    if per_agent.len() != v.m() {
        return Err(Error::ShapeMismatch(format!(
            "{} per-agent batches for a {}-agent topology",
            per_agent.len(),
            v.m()
        )));
    }
    let d = per_agent[0].a_bar.nrows();
    check_shapes(p, v, d, per_agent[0].b_bar_vecs.len())?;
    let mut theta = v.apply(&p.theta)?;
    let mut w = v.apply(&p.w)?;
    for m in 0..v.m() {
        let bs = &per_agent[m];
        let theta_m = p.theta.row(m).transpose();
        let w_m = p.w.row(m).transpose();
        let common = &bs.a_bar * &theta_m + &bs.b_bar_vecs[m];
        let theta_drive = &common + &bs.b_bar * &w_m;
        let w_drive = common + &bs.c_bar * &w_m;
        for j in 0..d {
            theta[(m, j)] += alpha * theta_drive[j];
            w[(m, j)] += beta * w_drive[j];
        }
    }
    Ok(AgentParams { theta, w })
}

/// TD(0) step: one sample, exact ratio, correction term dropped, only the
/// main block updated.
pub fn td0_iteration(
    p: &AgentParams,
    v: &CommMatrix,
    stats: &crate::tdc::SampleStats,
    alpha: f64,
) -> Result<AgentParams> {
    let d = stats.a_mat.nrows();
    check_shapes(p, v, d, stats.b_vecs.len())?;
    let mut theta = v.apply(&p.theta)?;
    for m in 0..v.m() {
        let theta_m = p.theta.row(m).transpose();
        let drive = &stats.a_mat * &theta_m + &stats.b_vecs[m];
        for j in 0..d {
            theta[(m, j)] += alpha * drive[j];
        }
    }
    Ok(AgentParams {
        theta,
        w: p.w.clone(),
    })
}

/// Gossip-only rounds on the main block; the row mean stays fixed while the
/// deviation from consensus contracts by `sigma2` per round.
pub fn local_averaging_phase(
    p: &AgentParams,
    v: &CommMatrix,
    t_prime: usize,
) -> Result<AgentParams> {
    let mut theta = p.theta.clone();
    for _ in 0..t_prime {
        theta = v.apply(&theta)?;
    }
    Ok(AgentParams {
        theta,
        w: p.w.clone(),
    })
}

/// Exact-ratio run.
pub fn run_algorithm1(
    cfg: &RunConfig,
    env: &EnvBundle,
    v: &CommMatrix,
    fp: &FixedPoint,
    src: &mut dyn TransitionSource,
) -> Result<Trace> {
    if cfg.algorithm != Algorithm::Alg1 {
        return Err(Error::InvalidArgument("config is not an alg1 run".into()));
    }
    run(cfg, env, v, fp, src)
}

/// Estimated-ratio run.
pub fn run_algorithm2(
    cfg: &RunConfig,
    env: &EnvBundle,
    v: &CommMatrix,
    fp: &FixedPoint,
    src: &mut dyn TransitionSource,
) -> Result<Trace> {
    if cfg.algorithm != Algorithm::Alg2 {
        return Err(Error::InvalidArgument("config is not an alg2 run".into()));
    }
    run(cfg, env, v, fp, src)
}

/// TD(0) baseline run.
pub fn run_td0_baseline(
    cfg: &RunConfig,
    env: &EnvBundle,
    v: &CommMatrix,
    fp: &FixedPoint,
    src: &mut dyn TransitionSource,
) -> Result<Trace> {
    if cfg.algorithm != Algorithm::Td0 {
        return Err(Error::InvalidArgument("config is not a td0 run".into()));
    }
    run(cfg, env, v, fp, src)
}

/// Shared loop for the three algorithms.
///
/// Communication accounting per TDC iteration: 2 parameter rounds (both
/// blocks) for the TDC variants, 1 for TD(0); ratio rounds are `M - 1`
/// (broadcast) for the exact variants and `L` for the estimated one. Each
/// averaging round costs 1 parameter round.
pub fn run(
    cfg: &RunConfig,
    env: &EnvBundle,
    v: &CommMatrix,
    fp: &FixedPoint,
    src: &mut dyn TransitionSource,
) -> Result<Trace> {
    cfg.validate()?;
    let m = v.m();
    let d = env.features.dim();
    if env.mdp.n_agents() != m {
        return Err(Error::ShapeMismatch(format!(
            "environment has {} agents, topology has {m}",
            env.mdp.n_agents()
        )));
    }
    if fp.theta_star.len() != d {
        return Err(Error::ShapeMismatch(
            "fixed point dimension does not match features".into(),
        ));
    }
    let gamma = env.mdp.gamma();
    let gossip_rounds = cfg.gossip_rounds.unwrap_or(0);
    let ratio_bound_guaranteed = match cfg.algorithm {
        Algorithm::Alg2 => Some(if v.sigma2() == 0.0 {
            true
        } else {
            gossip_rounds >= ratios::min_rounds(m, v.sigma2())?
        }),
        _ => None,
    };

    let mut params = match cfg.init {
        ParamInit::Zero => AgentParams::zeros(m, d),
        ParamInit::Gaussian { scale } => AgentParams::gaussian(m, d, scale, cfg.seed),
    };
    let mut records = Vec::new();
    let mut param_comm = 0usize;
    let mut ratio_comm = 0usize;
    let theta_star_norm = fp.theta_star.norm().max(f64::MIN_POSITIVE);

    let record =
        |records: &mut Vec<IterationRecord>, p: &AgentParams, iter, samples, pc, rc| {
            let theta_bar = p.theta_bar();
            let w_bar = p.w_bar();
            let conv = (&theta_bar - &fp.theta_star).norm() / theta_star_norm;
            let (_, max_row) = consensus_error(&p.theta);
            let w_star = fp.w_star(&theta_bar);
            records.push(IterationRecord {
                iter,
                samples_consumed: samples,
                param_comm_rounds: pc,
                ratio_comm_rounds: rc,
                convergence_error: conv,
                consensus_error: max_row / theta_star_norm,
                w_tracking_error: (w_bar - w_star).norm(),
            });
        };

    let n = cfg.batch_size;
    for t in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            batch.push(src.draw()?);
        }
        params = match cfg.algorithm {
            Algorithm::Alg1 => {
                let stats = exact_batch(&batch, env, gamma)?;
                ratio_comm += m.saturating_sub(1);
                alg1_iteration(&params, v, &stats, cfg.alpha, cfg.beta)?
            }
            Algorithm::Alg2 => {
                let per_agent = estimated_batches(&batch, env, v, gossip_rounds, gamma)?;
                ratio_comm += gossip_rounds;
                alg2_iteration(&params, v, &per_agent, cfg.alpha, cfg.beta)?
            }
            Algorithm::Td0 => {
                let tr = &batch[0];
                let locals = ratios::local_ratios(&env.policies, tr)?;
                let rho = ratios::global_ratio_exact(&locals)?;
                let stats = sample_stats(tr, &env.features, rho, gamma)?;
                ratio_comm += m.saturating_sub(1);
                td0_iteration(&params, v, &stats, cfg.alpha)?
            }
        };
        param_comm += match cfg.algorithm {
            Algorithm::Td0 => 1,
            _ => 2,
        };
        if t.is_multiple_of(cfg.metrics_every) || t + 1 == cfg.iterations {
            record(
                &mut records,
                &params,
                t,
                (t + 1) * n,
                param_comm,
                ratio_comm,
            );
        }
    }

    let samples_total = cfg.iterations * n;
    for k in 0..cfg.post_averaging {
        params.theta = v.apply(&params.theta)?;
        param_comm += 1;
        let iter = cfg.iterations + k;
        if iter.is_multiple_of(cfg.metrics_every) || k + 1 == cfg.post_averaging {
            record(
                &mut records,
                &params,
                iter,
                samples_total,
                param_comm,
                ratio_comm,
            );
        }
    }

    Ok(Trace {
        config: cfg.clone(),
        records,
        final_theta: params.theta,
        ratio_bound_guaranteed,
    })
}

/// Batch statistics with exact global ratios, one private reward vector per
/// agent.
pub fn exact_batch(batch: &[Transition], env: &EnvBundle, gamma: f64) -> Result<BatchStats> {
    let mut stats = Vec::with_capacity(batch.len());
    for tr in batch {
        let locals = ratios::local_ratios(&env.policies, tr)?;
        let rho = ratios::global_ratio_exact(&locals)?;
        stats.push(sample_stats(tr, &env.features, rho, gamma)?);
    }
    batch_average(&stats)
}

/// Per-agent batch statistics with gossip-estimated global ratios. All
/// samples of the batch are gossiped together as one log-ratio matrix.
pub fn estimated_batches(
    batch: &[Transition],
    env: &EnvBundle,
    v: &CommMatrix,
    rounds: usize,
    gamma: f64,
) -> Result<Vec<BatchStats>> {
    let m = v.m();
    let n = batch.len();
    let mut logs = DMatrix::zeros(m, n);
    for (i, tr) in batch.iter().enumerate() {
        let locals = ratios::local_ratios(&env.policies, tr)?;
        for (mm, &r) in locals.iter().enumerate() {
            logs[(mm, i)] = r.ln();
        }
    }
    let rho_hat = ratios::estimate_global_ratios_batch(&logs, v, rounds)?;
    let mut per_agent = Vec::with_capacity(m);
    for mm in 0..m {
        let mut stats = Vec::with_capacity(n);
        for (i, tr) in batch.iter().enumerate() {
            stats.push(sample_stats(tr, &env.features, rho_hat[(mm, i)], gamma)?);
        }
        per_agent.push(batch_average(&stats)?);
    }
    Ok(per_agent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_bundle, stationary_distribution, EnvParams};
    use crate::network::{build_fully_connected, build_ring};
    use crate::tdc::{centralized_tdc_step, expected_stats, MeanStats};

    fn desk_env(n_agents: usize) -> EnvBundle {
        generate_bundle(&EnvParams {
            seed: 1,
            n_states: 6,
            n_agents,
            actions_per_agent: 2,
            feature_dim: 3,
            gamma: 0.95,
            r_max: 1.0,
            noise_std: 0.05,
            floor_prob: 0.01,
        })
        .unwrap()
    }

    fn fixed_point(env: &EnvBundle) -> FixedPoint {
        let mu = stationary_distribution(&env.mdp, &env.policies, 1e-13).unwrap();
        expected_stats(&env.mdp, &env.policies, &env.features, &mu).unwrap()
    }

    fn sample_batch(env: &EnvBundle, n: usize, seed: u64) -> Vec<Transition> {
        let mut sampler =
            TrajectorySampler::new(&env.mdp, &env.policies, 0, stream_rng(seed, "traj")).unwrap();
        sampler.sample(n)
    }

    #[test]
    fn single_agent_reduces_to_centralized_step() {
        let env = desk_env(1);
        let v = build_fully_connected(1, 1.0).unwrap();
        let batch = sample_batch(&env, 10, 3);
        let bs = exact_batch(&batch, &env, 0.95).unwrap();

        let p = AgentParams::gaussian(1, 3, 1.0, 9);
        let next = alg1_iteration(&p, &v, &bs, 0.1, 0.2).unwrap();

        let theta0 = p.theta.row(0).transpose();
        let w0 = p.w.row(0).transpose();
        let (theta1, w1) = centralized_tdc_step(&theta0, &w0, MeanStats::from(&bs), 0.1, 0.2);
        assert_eq!(next.theta.row(0).transpose(), theta1);
        assert_eq!(next.w.row(0).transpose(), w1);
    }

    #[test]
    fn zero_rates_are_pure_gossip() {
        let env = desk_env(5);
        let v = build_ring(5, 0.8, 0.1).unwrap();
        let batch = sample_batch(&env, 4, 4);
        let bs = exact_batch(&batch, &env, 0.95).unwrap();
        let p = AgentParams::gaussian(5, 3, 1.0, 10);

        let next = alg1_iteration(&p, &v, &bs, 0.0, 0.0).unwrap();
        assert!((next.theta.clone() - v.apply(&p.theta).unwrap()).norm() < 1e-15);
        assert!((next.w.clone() - v.apply(&p.w).unwrap()).norm() < 1e-15);

        let per_agent = estimated_batches(&batch, &env, &v, 3, 0.95).unwrap();
        let next2 = alg2_iteration(&p, &v, &per_agent, 0.0, 0.0).unwrap();
        assert_eq!(next2.theta, next.theta);
    }

    #[test]
    fn alg1_row_means_follow_averaged_recursion() {
        let env = desk_env(5);
        let v = build_ring(5, 0.8, 0.1).unwrap();
        let mut p = AgentParams::gaussian(5, 3, 1.0, 11);
        let mut theta_bar = p.theta_bar();
        let mut w_bar = p.w_bar();
        let mut sampler =
            TrajectorySampler::new(&env.mdp, &env.policies, 0, stream_rng(12, "traj")).unwrap();
        for _ in 0..50 {
            let batch = sampler.sample(5);
            let bs = exact_batch(&batch, &env, 0.95).unwrap();
            p = alg1_iteration(&p, &v, &bs, 0.05, 0.1).unwrap();
            let common = &bs.a_bar * &theta_bar + &bs.b_double_bar;
            let theta_next = &theta_bar + 0.05 * (&common + &bs.b_bar * &w_bar);
            let w_next = &w_bar + 0.1 * (&common + &bs.c_bar * &w_bar);
            theta_bar = theta_next;
            w_bar = w_next;
            let scale = theta_bar.norm().max(1.0);
            assert!((p.theta_bar() - &theta_bar).norm() <= 1e-12 * scale);
            assert!((p.w_bar() - &w_bar).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn alg2_with_exact_estimates_matches_alg1() {
        let env = desk_env(4);
        let v = build_fully_connected(4, 0.7).unwrap();
        let batch = sample_batch(&env, 6, 5);
        let bs = exact_batch(&batch, &env, 0.95).unwrap();

        // Hand alg2 per-agent stats built from the exact global ratios.
        let per_agent: Vec<BatchStats> = (0..4)
            .map(|_| {
                let stats: Vec<_> = batch
                    .iter()
                    .map(|tr| {
                        let locals = ratios::local_ratios(&env.policies, tr).unwrap();
                        let rho = ratios::global_ratio_exact(&locals).unwrap();
                        sample_stats(tr, &env.features, rho, 0.95).unwrap()
                    })
                    .collect();
                batch_average(&stats).unwrap()
            })
            .collect();

        let p = AgentParams::gaussian(4, 3, 1.0, 13);
        let a1 = alg1_iteration(&p, &v, &bs, 0.1, 0.2).unwrap();
        let a2 = alg2_iteration(&p, &v, &per_agent, 0.1, 0.2).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn averaging_phase_contracts_and_preserves_mean() {
        for v in [
            build_fully_connected(6, 0.8).unwrap(),
            build_ring(6, 0.8, 0.1).unwrap(),
        ] {
            let p = AgentParams::gaussian(6, 3, 1.0, 14);
            let unchanged = local_averaging_phase(&p, &v, 0).unwrap();
            assert_eq!(unchanged, p);

            let (before, _) = consensus_error(&p.theta);
            let mut current = p.clone();
            for rounds in 1..=15 {
                current = local_averaging_phase(&current, &v, 1).unwrap();
                let (after, _) = consensus_error(&current.theta);
                assert!(after <= v.sigma2().powi(rounds) * before + 1e-10);
                assert!((current.theta_bar() - p.theta_bar()).norm() < 1e-12);
            }

            let consensus = AgentParams {
                theta: DMatrix::from_fn(6, 3, |_, j| j as f64),
                w: DMatrix::zeros(6, 3),
            };
            let out = local_averaging_phase(&consensus, &v, 7).unwrap();
            assert!((out.theta - &consensus.theta).norm() < 1e-12);
        }
    }

    fn base_cfg(algorithm: Algorithm) -> RunConfig {
        RunConfig {
            algorithm,
            batch_size: if algorithm == Algorithm::Td0 { 1 } else { 5 },
            iterations: 20,
            post_averaging: 5,
            gossip_rounds: if algorithm == Algorithm::Alg2 {
                Some(4)
            } else {
                None
            },
            alpha: 0.1,
            beta: 0.05,
            seed: 7,
            metrics_every: 1,
            init: ParamInit::Gaussian { scale: 1.0 },
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let env = desk_env(5);
        let v = build_ring(5, 0.8, 0.1).unwrap();
        let fp = fixed_point(&env);
        for algorithm in [Algorithm::Alg1, Algorithm::Alg2, Algorithm::Td0] {
            let cfg = base_cfg(algorithm);
            let pool = sample_batch(&env, cfg.samples_needed(), 21);
            let a = run(&cfg, &env, &v, &fp, &mut PooledSource::new(&pool)).unwrap();
            let b = run(&cfg, &env, &v, &fp, &mut PooledSource::new(&pool)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn trace_counters_and_shape() {
        let env = desk_env(5);
        let v = build_ring(5, 0.8, 0.1).unwrap();
        let fp = fixed_point(&env);
        let cfg = base_cfg(Algorithm::Alg1);
        let pool = sample_batch(&env, cfg.samples_needed(), 22);
        let trace = run(&cfg, &env, &v, &fp, &mut PooledSource::new(&pool)).unwrap();
        // metrics_every = 1: one record per iteration plus averaging rounds.
        assert_eq!(trace.records.len(), cfg.iterations + cfg.post_averaging);
        let last_tdc = &trace.records[cfg.iterations - 1];
        assert_eq!(last_tdc.samples_consumed, cfg.samples_needed());
        assert_eq!(last_tdc.param_comm_rounds, 2 * cfg.iterations);
        assert_eq!(last_tdc.ratio_comm_rounds, 4 * cfg.iterations);
        let last = trace.records.last().unwrap();
        assert_eq!(
            last.param_comm_rounds,
            2 * cfg.iterations + cfg.post_averaging
        );
        assert_eq!(last.samples_consumed, cfg.samples_needed());
        assert!(trace.ratio_bound_guaranteed.is_none());

        // Alg2 flags sub-threshold round counts.
        let cfg2 = base_cfg(Algorithm::Alg2);
        let pool2 = sample_batch(&env, cfg2.samples_needed(), 23);
        let trace2 = run(&cfg2, &env, &v, &fp, &mut PooledSource::new(&pool2)).unwrap();
        assert_eq!(trace2.ratio_bound_guaranteed, Some(false));
        assert_eq!(
            trace2.records[cfg2.iterations - 1].ratio_comm_rounds,
            4 * cfg2.iterations
        );
    }

    #[test]
    fn zero_iterations_leaves_mean_unchanged() {
        let env = desk_env(5);
        let v = build_ring(5, 0.8, 0.1).unwrap();
        let fp = fixed_point(&env);
        let mut cfg = base_cfg(Algorithm::Alg1);
        cfg.iterations = 0;
        let trace = run(&cfg, &env, &v, &fp, &mut PooledSource::new(&[])).unwrap();
        assert_eq!(trace.records.len(), cfg.post_averaging);
        let init = AgentParams::gaussian(5, 3, 1.0, cfg.seed);
        assert!((trace.final_theta.row_mean() - init.theta.row_mean()).norm() < 1e-12);
    }

    #[test]
    fn pool_exhaustion_is_detected() {
        let env = desk_env(5);
        let v = build_ring(5, 0.8, 0.1).unwrap();
        let fp = fixed_point(&env);
        let cfg = base_cfg(Algorithm::Alg1);
        let pool = sample_batch(&env, 10, 24);
        assert!(matches!(
            run(&cfg, &env, &v, &fp, &mut PooledSource::new(&pool)),
            Err(Error::SampleExhausted { .. })
        ));
    }

    #[test]
    fn td0_with_zero_rate_is_pure_gossip() {
        let env = desk_env(5);
        let v = build_ring(5, 0.8, 0.1).unwrap();
        let batch = sample_batch(&env, 1, 25);
        let locals = ratios::local_ratios(&env.policies, &batch[0]).unwrap();
        let rho = ratios::global_ratio_exact(&locals).unwrap();
        let stats = sample_stats(&batch[0], &env.features, rho, 0.95).unwrap();
        let p = AgentParams::gaussian(5, 3, 1.0, 26);
        let next = td0_iteration(&p, &v, &stats, 0.0).unwrap();
        assert!((next.theta.clone() - v.apply(&p.theta).unwrap()).norm() < 1e-15);
        assert_eq!(next.w, p.w);
    }

    #[test]
    fn alg2_matches_alg1_when_rounds_exceed_threshold() {
        // Well past the guaranteed round count the two variants agree per
        // iteration. The tolerance follows from the ratio-estimation error
        // bound at that L: with sum_m (rho_hat - rho)^2 <= B per sample,
        // ||Theta'_est - Theta'_exact||_F <= alpha sqrt(B) ((1+gamma) t + R_max
        // + gamma w) for row norms bounded by t, w.
        let env = generate_bundle(&EnvParams::reference_default(1)).unwrap();
        let v = build_fully_connected(10, 0.8).unwrap();
        let l = ratios::min_rounds(10, v.sigma2()).unwrap() + 10;
        let (rho_min, rho_max) = ratios::ratio_extrema(&env.policies);
        let per_sample_bound =
            ratios::ratio_error_bound(10, v.sigma2(), l, rho_min, rho_max).unwrap();
        let alpha = 0.1;
        let beta = 0.01;

        let mut sampler =
            TrajectorySampler::new(&env.mdp, &env.policies, 0, stream_rng(31, "traj")).unwrap();
        let batch = sampler.sample(100);
        let bs = exact_batch(&batch, &env, 0.95).unwrap();
        let per_agent = estimated_batches(&batch, &env, &v, l, 0.95).unwrap();
        let p = AgentParams::gaussian(10, 5, 1.0, 32);
        let a1 = alg1_iteration(&p, &v, &bs, alpha, beta).unwrap();
        let a2 = alg2_iteration(&p, &v, &per_agent, alpha, beta).unwrap();
        let diff = (&a1.theta - &a2.theta).norm().max((&a1.w - &a2.w).norm());

        let theta_max = (0..10).map(|m| p.theta.row(m).norm()).fold(0.0, f64::max);
        let w_max = (0..10).map(|m| p.w.row(m).norm()).fold(0.0, f64::max);
        let gate = alpha.max(beta)
            * per_sample_bound.sqrt()
            * (1.95 * theta_max + env.mdp.r_max() + 0.95 * w_max);
        assert!(diff <= gate, "Frobenius gap {diff} above derived gate {gate}");
        assert!(diff <= 1e-4, "Frobenius gap {diff} at experiment scale");
    }

    #[test]
    fn td0_on_policy_tabular_converges_to_fixed_point() {
        // On-policy, tabular features: the TD(0) and TDC fixed points agree,
        // so the baseline's mean iterate approaches theta*.
        let mdp = crate::env::generate_mdp(17, 5, 2, 2, 1.0, 0.9).unwrap();
        let policies = crate::env::generate_policies(17, &mdp, 0.0, 0.2).unwrap();
        let features =
            crate::env::FeatureMap::new(DMatrix::identity(5, 5)).unwrap();
        let params = crate::env::EnvParams {
            seed: 17,
            n_states: 5,
            n_agents: 2,
            actions_per_agent: 2,
            feature_dim: 5,
            gamma: 0.9,
            r_max: 1.0,
            noise_std: 0.0,
            floor_prob: 0.2,
        };
        let env = EnvBundle {
            mdp,
            policies,
            features,
            params,
        };
        let fp = fixed_point(&env);
        let v = build_fully_connected(2, 0.6).unwrap();
        let cfg = RunConfig {
            algorithm: Algorithm::Td0,
            batch_size: 1,
            iterations: 20_000,
            post_averaging: 10,
            gossip_rounds: None,
            alpha: 0.1,
            beta: 0.0,
            seed: 17,
            metrics_every: 1000,
            init: ParamInit::Gaussian { scale: 1.0 },
        };
        let mut sampler =
            TrajectorySampler::new(&env.mdp, &env.policies, 0, stream_rng(33, "traj")).unwrap();
        let trace = run(&cfg, &env, &v, &fp, &mut sampler).unwrap();
        let first = trace.records.first().unwrap().convergence_error;
        let last = trace.records.last().unwrap().convergence_error;
        assert!(
            last < 0.25 && last < first * 0.5,
            "td0 did not approach theta*: {first} -> {last}"
        );
    }

    #[test]
    fn single_agent_alg1_trace_equals_centralized_recursion() {
        let env = desk_env(1);
        let v = build_fully_connected(1, 1.0).unwrap();
        let fp = fixed_point(&env);
        let mut cfg = base_cfg(Algorithm::Alg1);
        cfg.post_averaging = 0;
        let pool = sample_batch(&env, cfg.samples_needed(), 27);
        let trace = run(&cfg, &env, &v, &fp, &mut PooledSource::new(&pool)).unwrap();

        let init = AgentParams::gaussian(1, 3, 1.0, cfg.seed);
        let mut theta = init.theta.row(0).transpose();
        let mut w = init.w.row(0).transpose();
        for t in 0..cfg.iterations {
            let batch = &pool[t * cfg.batch_size..(t + 1) * cfg.batch_size];
            let bs = exact_batch(batch, &env, 0.95).unwrap();
            let (tn, wn) = centralized_tdc_step(&theta, &w, MeanStats::from(&bs), cfg.alpha, cfg.beta);
            theta = tn;
            w = wn;
        }
        assert_eq!(trace.final_theta.row(0).transpose(), theta);
    }
}
