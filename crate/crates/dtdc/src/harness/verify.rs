//! Executable invariant suite.
//!
//! Every analytic property the simulator relies on is checked here against
//! freshly generated instances: spectral contraction of the topologies, norm
//! bounds on sampled statistics, the gossip-ratio error bound, the
//! averaged-iterate identities of both algorithm variants, equivalence of the
//! fixed point with a direct Bellman solve, and the `1/N` scaling of
//! mini-batch deviations. Checks report a measured margin; the CLI exits
//! nonzero when any of them fails.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::decentral::{alg1_iteration, alg2_iteration, AgentParams};
use crate::env::{
    generate_bundle, generate_features, generate_mdp, generate_policies,
    stationary_distribution, EnvBundle, EnvParams, FeatureMap, MultiAgentMdp, PolicySet,
    TrajectorySampler,
};
use crate::error::{Error, Result};
use crate::network::{build_fully_connected, build_ring, consensus_error, deviation, CommMatrix};
use crate::ratios;
use crate::rng::stream_rng;
use crate::tdc::{
    compute_bounds, empirical_batch_deviation, expected_stats, sample_stats, FixedPoint,
};

/// Outcome of one check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub margin: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, margin: String) -> Self {
        Self {
            name: name.into(),
            passed,
            margin,
        }
    }
}

/// Target-policy value function by direct linear solve,
/// `(I - gamma P_pi)^(-1) r_pi`, with rewards averaged over agents. This is
/// the independent oracle the fixed point is checked against; it never touches
/// the expectation-enumeration path.
pub fn bellman_value_direct(mdp: &MultiAgentMdp, policies: &PolicySet) -> Result<DVector<f64>> {
    let n = mdp.n_states();
    let n_agents = mdp.n_agents();
    let mut p_pi = DMatrix::zeros(n, n);
    let mut r_pi = DVector::zeros(n);
    let mut actions = vec![0usize; n_agents];
    for s in 0..n {
        for joint in 0..mdp.n_joint_actions() {
            mdp.decode_joint(joint, &mut actions);
            let mut prob = 1.0;
            for (m, &am) in actions.iter().enumerate() {
                prob *= policies.target_prob(m, s, am);
            }
            if prob == 0.0 {
                continue;
            }
            for (s_next, &q) in mdp.kernel_row(s, joint).iter().enumerate() {
                if q == 0.0 {
                    continue;
                }
                p_pi[(s, s_next)] += prob * q;
                let mean_reward: f64 = (0..n_agents)
                    .map(|m| mdp.reward(m, s, joint, s_next))
                    .sum::<f64>()
                    / n_agents as f64;
                r_pi[s] += prob * q * mean_reward;
            }
        }
    }
    let system = DMatrix::identity(n, n) - mdp.gamma() * p_pi;
    system
        .lu()
        .solve(&r_pi)
        .ok_or_else(|| Error::AssumptionViolation("I - gamma P_pi is singular".into()))
}

/// Topology sanity plus the contraction lemma: `||V^n delta x|| <=
/// sigma2^n ||delta x||` for n = 1..=20 on random input.
pub fn spectral_check(v: &CommMatrix, seed: u64) -> CheckResult {
    let name = format!("spectral-contraction(m={})", v.m());
    if let Err(violation) = v.validate() {
        return CheckResult::new(name, false, violation.to_string());
    }
    let mut rng = stream_rng(seed, "verify-spectral");
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = DMatrix::from_fn(v.m(), 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut y = deviation(&x);
        let initial = y.norm();
        if initial < 1e-12 {
            continue;
        }
        for n in 1..=20 {
            y = v.apply(&y).expect("shape checked");
            let bound = v.sigma2().powi(n) * initial + 1e-10;
            worst = worst.max(y.norm() / bound);
        }
    }
    CheckResult::new(name, worst <= 1.0, format!("max ||V^n dx|| / bound = {worst:.6}"))
}

/// Norm bounds of the appendix lemma on `count` sampled transitions.
pub fn sample_stat_bounds_check(env: &EnvBundle, seed: u64, count: usize) -> CheckResult {
    let (rho_min, rho_max) = ratios::ratio_extrema(&env.policies);
    let bounds = match compute_bounds(rho_min, rho_max, env.mdp.gamma(), env.mdp.r_max()) {
        Ok(b) => b,
        Err(e) => return CheckResult::new("sample-stat-bounds", false, e.to_string()),
    };
    let mut sampler = match TrajectorySampler::new(
        &env.mdp,
        &env.policies,
        0,
        stream_rng(seed, "verify-bounds"),
    ) {
        Ok(s) => s,
        Err(e) => return CheckResult::new("sample-stat-bounds", false, e.to_string()),
    };
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let tr = sampler.next_transition();
        let locals = match ratios::local_ratios(&env.policies, &tr) {
            Ok(l) => l,
            Err(e) => return CheckResult::new("sample-stat-bounds", false, e.to_string()),
        };
        let rho = locals.iter().product::<f64>();
        let stats = match sample_stats(&tr, &env.features, rho, env.mdp.gamma()) {
            Ok(s) => s,
            Err(e) => return CheckResult::new("sample-stat-bounds", false, e.to_string()),
        };
        worst = worst.max(stats.a_mat.norm() / (bounds.omega_a + 1e-12));
        worst = worst.max(stats.b_mat.norm() / (bounds.omega_b + 1e-12));
        worst = worst.max(stats.c_mat.norm() / (1.0 + 1e-12));
        for b in &stats.b_vecs {
            worst = worst.max(b.norm() / (bounds.omega_b_vec + 1e-12));
        }
    }
    CheckResult::new(
        format!("sample-stat-bounds(count={count})"),
        worst <= 1.0,
        format!("max norm / bound = {worst:.12}"),
    )
}

/// The gossip-ratio error bound at `L = min_rounds` over `draws` freshly
/// perturbed policy sets, plus the per-round contraction of the log-ratio
/// deviation.
pub fn gossip_corollary_check(
    mdp: &MultiAgentMdp,
    v: &CommMatrix,
    seed: u64,
    draws: usize,
) -> CheckResult {
    let name = format!("gossip-ratio-corollary(m={},sigma2={:.4})", v.m(), v.sigma2());
    let l = match ratios::min_rounds(v.m(), v.sigma2()) {
        Ok(l) => l,
        Err(e) => return CheckResult::new(name, false, e.to_string()),
    };
    let mut rng = stream_rng(seed, "verify-corollary");
    let mut worst_bound_frac: f64 = 0.0;
    let mut worst_rate: f64 = 0.0;
    let mut failures = 0usize;
    for k in 0..draws {
        let policies = match generate_policies(seed.wrapping_add(k as u64), mdp, 0.05, 0.01) {
            Ok(p) => p,
            Err(e) => return CheckResult::new(name, false, e.to_string()),
        };
        let (rho_min, rho_max) = ratios::ratio_extrema(&policies);
        let bound =
            match ratios::ratio_error_bound(v.m(), v.sigma2(), l, rho_min, rho_max) {
                Ok(b) => b,
                Err(e) => return CheckResult::new(name, false, e.to_string()),
            };
        // One random (state, joint action) per draw.
        let s = rng.random_range(0..mdp.n_states());
        let locals: Vec<f64> = (0..mdp.n_agents())
            .map(|m| {
                let a = rng.random_range(0..mdp.actions_per_agent()[m]);
                policies.target_prob(m, s, a) / policies.behavior_prob(m, s, a)
            })
            .collect();
        let exact: f64 = locals.iter().product();

        // Track the deviation contraction round by round.
        let mut logs = DMatrix::from_fn(v.m(), 1, |i, _| locals[i].ln());
        let mut prev_dev = deviation(&logs).norm_squared();
        for _ in 0..l {
            logs = v.apply(&logs).expect("shape checked");
            let dev = deviation(&logs).norm_squared();
            if prev_dev > 1e-20 {
                worst_rate = worst_rate.max(dev / prev_dev);
            }
            prev_dev = dev;
        }
        let m = v.m() as f64;
        let err: f64 = (0..v.m())
            .map(|i| ((m * logs[(i, 0)]).exp() - exact).powi(2))
            .sum();
        if err > bound {
            failures += 1;
        }
        if bound > 0.0 {
            worst_bound_frac = worst_bound_frac.max(err / bound);
        }
    }
    let rate_limit = v.sigma2() * v.sigma2() + 0.01;
    let passed = failures == 0 && worst_rate <= rate_limit;
    CheckResult::new(
        name,
        passed,
        format!(
            "bound held in {}/{draws} draws (max err/bound = {worst_bound_frac:.3e}); \
             max per-round contraction {worst_rate:.6} vs {rate_limit:.6}",
            draws - failures
        ),
    )
}

/// Which algorithm variant an averaged-iterate check exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AveragedVariant {
    Exact,
    Estimated { gossip_rounds: usize },
}

/// Runs the matrix-form recursion and the averaged recursion in lockstep and
/// reports the worst relative deviation of the row means. The averaged
/// recursion for the estimated variant consumes the matrix iterate's rows, as
/// its update rule prescribes.
#[allow(clippy::too_many_arguments)]
pub fn averaged_iterate_check(
    env: &EnvBundle,
    v: &CommMatrix,
    variant: AveragedVariant,
    iterations: usize,
    batch_size: usize,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> Result<CheckResult> {
    let name = match variant {
        AveragedVariant::Exact => "averaged-iterate(exact)",
        AveragedVariant::Estimated { .. } => "averaged-iterate(estimated)",
    };
    let m = v.m();
    let d = env.features.dim();
    let gamma = env.mdp.gamma();
    let mut sampler =
        TrajectorySampler::new(&env.mdp, &env.policies, 0, stream_rng(seed, "verify-avg"))?;
    let mut params = AgentParams::gaussian(m, d, 1.0, seed);
    let mut theta_bar = params.theta_bar();
    let mut w_bar = params.w_bar();
    let mut worst: f64 = 0.0;

    for _ in 0..iterations {
        let batch = sampler.sample(batch_size);
        match variant {
            AveragedVariant::Exact => {
                let bs = crate::decentral::exact_batch(&batch, env, gamma)?;
                let common = &bs.a_bar * &theta_bar + &bs.b_double_bar;
                let theta_next = &theta_bar + alpha * (&common + &bs.b_bar * &w_bar);
                let w_next = &w_bar + beta * (&common + &bs.c_bar * &w_bar);
                params = alg1_iteration(&params, v, &bs, alpha, beta)?;
                theta_bar = theta_next;
                w_bar = w_next;
            }
            AveragedVariant::Estimated { gossip_rounds } => {
                let per_agent =
                    crate::decentral::estimated_batches(&batch, env, v, gossip_rounds, gamma)?;
                let mut theta_drive = DVector::zeros(d);
                let mut w_drive = DVector::zeros(d);
                for (mm, bs) in per_agent.iter().enumerate() {
                    let theta_m = params.theta.row(mm).transpose();
                    let w_m = params.w.row(mm).transpose();
                    let common = &bs.a_bar * &theta_m + &bs.b_bar_vecs[mm];
                    theta_drive += &common + &bs.b_bar * &w_m;
                    w_drive += common + &bs.c_bar * &w_m;
                }
                let theta_next = &theta_bar + (alpha / m as f64) * theta_drive;
                let w_next = &w_bar + (beta / m as f64) * w_drive;
                params = alg2_iteration(&params, v, &per_agent, alpha, beta)?;
                theta_bar = theta_next;
                w_bar = w_next;
            }
        }
        let scale = theta_bar.norm().max(1.0);
        worst = worst.max((params.theta_bar() - &theta_bar).norm() / scale);
        let w_scale = w_bar.norm().max(1.0);
        worst = worst.max((params.w_bar() - &w_bar).norm() / w_scale);
    }
    Ok(CheckResult::new(
        name,
        worst <= 1e-12,
        format!("max relative row-mean deviation = {worst:.3e} over {iterations} iterations"),
    ))
}

/// Tabular on-policy instance: the fixed point must price states exactly like
/// the direct Bellman solve.
pub fn fixed_point_oracle_check(seed: u64) -> Result<CheckResult> {
    let mdp = generate_mdp(seed, 5, 2, 2, 1.0, 0.95)?;
    let policies = generate_policies(seed, &mdp, 0.0, 0.2)?;
    let features = FeatureMap::new(DMatrix::identity(5, 5))?;
    let mu = stationary_distribution(&mdp, &policies, 1e-13)?;
    let fp = expected_stats(&mdp, &policies, &features, &mu)?;
    let value = bellman_value_direct(&mdp, &policies)?;
    let predicted = features.table().transpose() * &fp.theta_star;
    let worst = (0..5)
        .map(|s| (predicted[s] - value[s]).abs())
        .fold(0.0, f64::max);
    Ok(CheckResult::new(
        "fixed-point-oracle(tabular-on-policy)",
        worst <= 1e-8,
        format!("max componentwise |diff| = {worst:.3e}"),
    ))
}

/// `1/N` scaling of the mean squared deviation of mini-batch means.
pub fn batch_scaling_check(
    env: &EnvBundle,
    fp: &FixedPoint,
    seed: u64,
    trials: usize,
) -> Result<CheckResult> {
    let mut sampler = TrajectorySampler::new(
        &env.mdp,
        &env.policies,
        0,
        stream_rng(seed, "verify-scaling"),
    )?;
    sampler.sample(1000);
    let (_, msd_small) = empirical_batch_deviation(
        &mut sampler,
        &env.features,
        &env.policies,
        fp,
        10,
        trials,
        env.mdp.gamma(),
    )?;
    let (_, msd_large) = empirical_batch_deviation(
        &mut sampler,
        &env.features,
        &env.policies,
        fp,
        100,
        trials,
        env.mdp.gamma(),
    )?;
    let ratio = msd_small / msd_large;
    Ok(CheckResult::new(
        format!("batch-deviation-scaling(trials={trials})"),
        (6.0..=14.0).contains(&ratio),
        format!("msd(N=10)/msd(N=100) = {ratio:.3} (expected within [6, 14])"),
    ))
}

/// Numerical row rank of a feature table.
pub fn feature_rank_check(table: &DMatrix<f64>) -> CheckResult {
    let svd = table.clone().svd(false, false);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let s_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let ratio = if s_max > 0.0 { s_min / s_max } else { 0.0 };
    CheckResult::new(
        "feature-rank",
        ratio > 1e-8,
        format!("sigma_min/sigma_max = {ratio:.3e}"),
    )
}

/// Runs the full suite on freshly generated reference-scale instances.
pub fn verify_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let env = generate_bundle(&EnvParams::reference_default(seed))?;
    let fc = build_fully_connected(10, 0.8)?;
    let ring = build_ring(10, 0.8, 0.1)?;
    let mu = stationary_distribution(&env.mdp, &env.policies, 1e-12)?;
    let fp = expected_stats(&env.mdp, &env.policies, &env.features, &mu)?;

    let mut results = vec![
        spectral_check(&fc, seed),
        spectral_check(&ring, seed),
        consensus_phase_check(&fc, seed),
        consensus_phase_check(&ring, seed),
        sample_stat_bounds_check(&env, seed, 10_000),
        gossip_corollary_check(&env.mdp, &fc, seed, 1000),
        gossip_corollary_check(&env.mdp, &ring, seed, 1000),
    ];
    results.push(averaged_iterate_check(
        &env,
        &fc,
        AveragedVariant::Exact,
        100,
        10,
        0.1,
        0.01,
        seed,
    )?);
    results.push(averaged_iterate_check(
        &env,
        &fc,
        AveragedVariant::Estimated { gossip_rounds: 5 },
        100,
        10,
        0.1,
        0.01,
        seed,
    )?);
    results.push(fixed_point_oracle_check(seed)?);
    results.push(batch_scaling_check(&env, &fp, seed, 200)?);
    results.push(feature_rank_check(env.features.table()));
    results.push(feature_rank_check(
        generate_features(seed, 10, 5)?.table(),
    ));
    Ok(results)
}

/// Consensus decay of a gossip-only averaging phase on random parameters.
pub fn consensus_phase_check(v: &CommMatrix, seed: u64) -> CheckResult {
    let name = format!("consensus-decay(m={},sigma2={:.4})", v.m(), v.sigma2());
    let mut rng = stream_rng(seed, "verify-consensus");
    let theta = DMatrix::from_fn(v.m(), 5, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let (initial, _) = consensus_error(&theta);
    let mut current = theta;
    let mut worst: f64 = 0.0;
    for n in 1..=30 {
        current = v.apply(&current).expect("shape checked");
        let (fro, _) = consensus_error(&current);
        let bound = v.sigma2().powi(n) * initial + 1e-10;
        worst = worst.max(fro / bound);
    }
    CheckResult::new(
        name,
        worst <= 1.0,
        format!("max ||delta Theta|| / bound = {worst:.6}"),
    )
}
