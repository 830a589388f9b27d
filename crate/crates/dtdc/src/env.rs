//! Multi-agent MDP generation and simulation.
//!
//! The environment is a finite MDP shared by `M` agents: every agent sees the
//! common state, draws its own action from its behavior policy, and receives a
//! private reward. Joint actions are a single mixed-radix index over the
//! per-agent action sets. This module also computes the behavior-policy
//! stationary distribution (power iteration on the state-marginal chain) and a
//! geometric-mixing estimate `(nu, delta)` of the total-variation decay.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Tolerance for probability rows to sum to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

const POWER_ITERATION_CAP: usize = 1_000_000;
const FEATURE_REDRAW_LIMIT: u64 = 16;
const RANK_THRESHOLD: f64 = 1e-8;

/// Shared finite state space, per-agent action sets, joint transition kernel,
/// per-agent reward tables and discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiAgentMdp {
    n_states: usize,
    actions_per_agent: Vec<usize>,
    n_joint: usize,
    /// Transition kernel, flat `[s][a][s']` with `a` the joint-action index.
    kernel: Vec<f64>,
    /// Rewards, flat `[m][s][a][s']`, each entry in `[0, r_max]`.
    rewards: Vec<f64>,
    gamma: f64,
    r_max: f64,
}

impl MultiAgentMdp {
    pub fn new(
        actions_per_agent: Vec<usize>,
        n_states: usize,
        kernel: Vec<f64>,
        rewards: Vec<f64>,
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        if n_states == 0 || actions_per_agent.is_empty() {
            return Err(Error::InvalidArgument(
                "state and agent counts must be positive".into(),
            ));
        }
        if actions_per_agent.contains(&0) {
            return Err(Error::InvalidArgument(
                "every agent needs at least one action".into(),
            ));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must lie in (0,1), got {gamma}"
            )));
        }
        if r_max <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "r_max must be positive, got {r_max}"
            )));
        }
        let n_joint = actions_per_agent
            .iter()
            .try_fold(1usize, |acc, &a| acc.checked_mul(a))
            .ok_or_else(|| Error::InvalidArgument("joint action space overflows".into()))?;
        let n_agents = actions_per_agent.len();
        if kernel.len() != n_states * n_joint * n_states {
            return Err(Error::ShapeMismatch(format!(
                "kernel has {} entries, expected {}",
                kernel.len(),
                n_states * n_joint * n_states
            )));
        }
        if rewards.len() != n_agents * n_states * n_joint * n_states {
            return Err(Error::ShapeMismatch(format!(
                "rewards has {} entries, expected {}",
                rewards.len(),
                n_agents * n_states * n_joint * n_states
            )));
        }
        let mdp = Self {
            n_states,
            actions_per_agent,
            n_joint,
            kernel,
            rewards,
            gamma,
            r_max,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_joint {
                let row = self.kernel_row(s, a);
                if row.iter().any(|&p| p < 0.0) {
                    return Err(Error::Validation(format!(
                        "kernel row ({s},{a}) has a negative entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::Validation(format!(
                        "kernel row ({s},{a}) sums to {sum}, not 1"
                    )));
                }
            }
        }
        if self
            .rewards
            .iter()
            .any(|&r| !(0.0..=self.r_max).contains(&r))
        {
            return Err(Error::Validation(format!(
                "reward entry outside [0, {}]",
                self.r_max
            )));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agents(&self) -> usize {
        self.actions_per_agent.len()
    }

    pub fn actions_per_agent(&self) -> &[usize] {
        &self.actions_per_agent
    }

    pub fn n_joint_actions(&self) -> usize {
        self.n_joint
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Transition distribution over next states for `(s, joint_action)`.
    pub fn kernel_row(&self, s: usize, joint: usize) -> &[f64] {
        let base = (s * self.n_joint + joint) * self.n_states;
        &self.kernel[base..base + self.n_states]
    }

    pub fn reward(&self, agent: usize, s: usize, joint: usize, s_next: usize) -> f64 {
        let base = ((agent * self.n_states + s) * self.n_joint + joint) * self.n_states;
        self.rewards[base + s_next]
    }

    /// Mixed-radix encoding of per-agent actions; agent 0 is the least
    /// significant digit.
    pub fn encode_joint(&self, actions: &[usize]) -> usize {
        debug_assert_eq!(actions.len(), self.n_agents());
        let mut idx = 0;
        let mut stride = 1;
        for (m, &a) in actions.iter().enumerate() {
            debug_assert!(a < self.actions_per_agent[m]);
            idx += a * stride;
            stride *= self.actions_per_agent[m];
        }
        idx
    }

    pub fn decode_joint(&self, mut joint: usize, out: &mut [usize]) {
        debug_assert_eq!(out.len(), self.n_agents());
        for (m, slot) in out.iter_mut().enumerate() {
            let k = self.actions_per_agent[m];
            *slot = joint % k;
            joint /= k;
        }
    }
}

/// Per-agent behavior and target policy tables; each row lives on the
/// probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    /// `behavior[m]` is `n_states x actions_per_agent[m]`.
    behavior: Vec<DMatrix<f64>>,
    target: Vec<DMatrix<f64>>,
    floor_prob: f64,
}

impl PolicySet {
    pub fn new(
        behavior: Vec<DMatrix<f64>>,
        target: Vec<DMatrix<f64>>,
        floor_prob: f64,
    ) -> Result<Self> {
        if behavior.len() != target.len() || behavior.is_empty() {
            return Err(Error::ShapeMismatch(
                "behavior/target agent counts differ or are empty".into(),
            ));
        }
        let set = Self {
            behavior,
            target,
            floor_prob,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.floor_prob <= 0.0 {
            return Err(Error::Validation("floor probability must be positive".into()));
        }
        for (label, tables) in [("behavior", &self.behavior), ("target", &self.target)] {
            for (m, table) in tables.iter().enumerate() {
                for s in 0..table.nrows() {
                    let row = table.row(s);
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(Error::Validation(format!(
                            "{label} policy of agent {m}, state {s} sums to {sum}"
                        )));
                    }
                    if row.iter().any(|&p| p < self.floor_prob - 1e-15) {
                        return Err(Error::Validation(format!(
                            "{label} policy of agent {m}, state {s} has an entry below the \
                             support floor {}",
                            self.floor_prob
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_agents(&self) -> usize {
        self.behavior.len()
    }

    pub fn behavior(&self, agent: usize) -> &DMatrix<f64> {
        &self.behavior[agent]
    }

    pub fn target(&self, agent: usize) -> &DMatrix<f64> {
        &self.target[agent]
    }

    pub fn floor_prob(&self) -> f64 {
        self.floor_prob
    }

    pub fn behavior_prob(&self, agent: usize, s: usize, a: usize) -> f64 {
        self.behavior[agent][(s, a)]
    }

    pub fn target_prob(&self, agent: usize, s: usize, a: usize) -> f64 {
        self.target[agent][(s, a)]
    }
}

/// Linear state features; column `s` of `table` is `phi(s)` with norm <= 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    table: DMatrix<f64>,
}

impl FeatureMap {
    pub fn new(table: DMatrix<f64>) -> Result<Self> {
        if table.nrows() == 0 || table.ncols() == 0 {
            return Err(Error::InvalidArgument("empty feature table".into()));
        }
        for s in 0..table.ncols() {
            let norm = table.column(s).norm();
            if norm > 1.0 + ROW_SUM_TOL {
                return Err(Error::Validation(format!(
                    "feature column {s} has norm {norm} > 1"
                )));
            }
        }
        if numerical_rank(&table) < table.nrows() {
            return Err(Error::AssumptionViolation(
                "feature matrix is not full row rank".into(),
            ));
        }
        Ok(Self { table })
    }

    pub fn dim(&self) -> usize {
        self.table.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.table.ncols()
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }

    pub fn feature(&self, s: usize) -> DVector<f64> {
        self.table.column(s).into_owned()
    }
}

fn numerical_rank(table: &DMatrix<f64>) -> usize {
    let svd = table.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_THRESHOLD * sigma_max)
        .count()
}

/// One step of the shared chain: common state, per-agent actions, next state,
/// per-agent rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub joint_action: Vec<usize>,
    pub s_next: usize,
    pub rewards: Vec<f64>,
}

/// Uniform transition kernel and reward tables, normalized row-wise.
pub fn generate_mdp(
    seed: u64,
    n_states: usize,
    n_agents: usize,
    actions_per_agent: usize,
    r_max: f64,
    gamma: f64,
) -> Result<MultiAgentMdp> {
    if n_states == 0 || n_agents == 0 || actions_per_agent == 0 {
        return Err(Error::InvalidArgument(
            "state, agent and action counts must be positive".into(),
        ));
    }
    if r_max <= 0.0 {
        return Err(Error::InvalidArgument("r_max must be positive".into()));
    }
    let actions = vec![actions_per_agent; n_agents];
    let n_joint = actions
        .iter()
        .try_fold(1usize, |acc, &a| acc.checked_mul(a))
        .ok_or_else(|| Error::InvalidArgument("joint action space overflows".into()))?;

    let mut kernel_rng = stream_rng(seed, "mdp-kernel");
    let mut kernel = Vec::with_capacity(n_states * n_joint * n_states);
    for _ in 0..n_states * n_joint {
        let mut row: Vec<f64> = (0..n_states).map(|_| kernel_rng.random::<f64>()).collect();
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            // Probability-zero event; fall back to the uniform row.
            row.iter_mut().for_each(|p| *p = 1.0 / n_states as f64);
        } else {
            row.iter_mut().for_each(|p| *p /= sum);
        }
        kernel.extend_from_slice(&row);
    }

    let mut reward_rng = stream_rng(seed, "mdp-rewards");
    let rewards: Vec<f64> = (0..n_agents * n_states * n_joint * n_states)
        .map(|_| reward_rng.random::<f64>() * r_max)
        .collect();

    MultiAgentMdp::new(actions, n_states, kernel, rewards, gamma, r_max)
}

/// Uniform behavior policies plus Gaussian-perturbed targets, clamped to
/// `floor_prob` and renormalized so every action keeps nonzero probability.
pub fn generate_policies(
    seed: u64,
    mdp: &MultiAgentMdp,
    noise_std: f64,
    floor_prob: f64,
) -> Result<PolicySet> {
    if noise_std < 0.0 {
        return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
    }
    let max_actions = *mdp.actions_per_agent().iter().max().unwrap();
    if !(floor_prob > 0.0 && floor_prob < 1.0 / max_actions as f64) {
        return Err(Error::InvalidArgument(format!(
            "floor_prob must lie in (0, 1/{max_actions})"
        )));
    }

    let mut rng = stream_rng(seed, "policy-noise");
    let noise = Normal::new(0.0, noise_std)
        .map_err(|e| Error::InvalidArgument(format!("bad noise width: {e}")))?;

    let mut behavior = Vec::with_capacity(mdp.n_agents());
    let mut target = Vec::with_capacity(mdp.n_agents());
    for &k in mdp.actions_per_agent() {
        let uniform = DMatrix::from_element(mdp.n_states(), k, 1.0 / k as f64);
        let mut perturbed = uniform.clone();
        for s in 0..mdp.n_states() {
            let mut row: Vec<f64> = (0..k)
                .map(|a| uniform[(s, a)] + noise.sample(&mut rng))
                .collect();
            project_to_floored_simplex(&mut row, floor_prob);
            for (a, &p) in row.iter().enumerate() {
                perturbed[(s, a)] = p;
            }
        }
        behavior.push(uniform);
        target.push(perturbed);
    }
    PolicySet::new(behavior, target, floor_prob)
}

/// Clamp-then-renormalize onto the simplex with a hard lower bound `floor` on
/// every coordinate. Clamped coordinates sit exactly at `floor`; the rest are
/// scaled to spend the remaining mass.
fn project_to_floored_simplex(row: &mut [f64], floor: f64) {
    let k = row.len();
    debug_assert!(floor * k as f64 <= 1.0);
    if k == 1 {
        row[0] = 1.0;
        return;
    }
    let mut clamped = vec![false; k];
    loop {
        let n_clamped = clamped.iter().filter(|&&c| c).count();
        if n_clamped == k {
            // All mass driven to the floor; release the largest coordinate.
            let best = (0..k)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            for (i, p) in row.iter_mut().enumerate() {
                *p = if i == best {
                    1.0 - floor * (k - 1) as f64
                } else {
                    floor
                };
            }
            return;
        }
        let budget = 1.0 - floor * n_clamped as f64;
        let free_sum: f64 = row
            .iter()
            .zip(&clamped)
            .filter(|(_, &c)| !c)
            .map(|(&p, _)| p)
            .sum();
        if free_sum <= 0.0 {
            clamped.iter_mut().for_each(|c| *c = true);
            continue;
        }
        // Skip the rescale when it would be a no-op at machine precision, so a
        // zero perturbation leaves the row bit-identical.
        let scale = if (free_sum - budget).abs() <= 1e-14 * budget {
            1.0
        } else {
            budget / free_sum
        };
        let mut newly_clamped = false;
        for i in 0..k {
            if !clamped[i] && row[i] * scale < floor {
                clamped[i] = true;
                newly_clamped = true;
            }
        }
        if newly_clamped {
            continue;
        }
        for i in 0..k {
            row[i] = if clamped[i] { floor } else { row[i] * scale };
        }
        return;
    }
}

/// Standard-Gaussian features with unit-norm columns, redrawn with a bumped
/// seed whenever the numerical rank falls short of `dim`.
pub fn generate_features(seed: u64, n_states: usize, dim: usize) -> Result<FeatureMap> {
    if dim == 0 || dim > n_states {
        return Err(Error::InvalidArgument(format!(
            "feature dim must lie in 1..={n_states}, got {dim}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for attempt in 0..=FEATURE_REDRAW_LIMIT {
        let mut rng = stream_rng(seed + attempt, "features");
        let mut table = DMatrix::from_fn(dim, n_states, |_, _| normal.sample(&mut rng));
        let mut degenerate = false;
        for s in 0..n_states {
            let norm = table.column(s).norm();
            if norm < 1e-12 {
                degenerate = true;
                break;
            }
            let mut col = table.column_mut(s);
            col /= norm;
        }
        if degenerate {
            continue;
        }
        if numerical_rank(&table) == dim {
            return Ok(FeatureMap { table });
        }
    }
    Err(Error::Generation(format!(
        "features rank-deficient after {FEATURE_REDRAW_LIMIT} redraws"
    )))
}

/// How the sampler picks the current state.
#[derive(Debug, Clone)]
pub enum SampleMode {
    /// Chain state carries over between calls: consecutive mini-batches form
    /// one trajectory.
    Markovian,
    /// Every step draws the state i.i.d. from the given distribution
    /// (used to isolate Markovian bias in deviation measurements).
    IidStationary(DVector<f64>),
}

/// Stateful sampler of the shared behavior-policy chain.
pub struct TrajectorySampler<'a> {
    mdp: &'a MultiAgentMdp,
    policies: &'a PolicySet,
    state: usize,
    rng: ChaCha8Rng,
    mode: SampleMode,
    action_buf: Vec<usize>,
}

impl<'a> TrajectorySampler<'a> {
    pub fn new(
        mdp: &'a MultiAgentMdp,
        policies: &'a PolicySet,
        s0: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if s0 >= mdp.n_states() {
            return Err(Error::InvalidArgument(format!(
                "start state {s0} out of range"
            )));
        }
        if policies.n_agents() != mdp.n_agents() {
            return Err(Error::ShapeMismatch(
                "policy set agent count differs from MDP".into(),
            ));
        }
        Ok(Self {
            mdp,
            policies,
            state: s0,
            rng,
            mode: SampleMode::Markovian,
            action_buf: vec![0; mdp.n_agents()],
        })
    }

    pub fn iid_stationary(
        mdp: &'a MultiAgentMdp,
        policies: &'a PolicySet,
        mu: DVector<f64>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        if mu.len() != mdp.n_states() {
            return Err(Error::ShapeMismatch("stationary distribution length".into()));
        }
        let mut sampler = Self::new(mdp, policies, 0, rng)?;
        sampler.mode = SampleMode::IidStationary(mu);
        Ok(sampler)
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn next_transition(&mut self) -> Transition {
        if let SampleMode::IidStationary(mu) = &self.mode {
            self.state = sample_categorical(&mut self.rng, mu.iter().copied());
        }
        let s = self.state;
        for m in 0..self.mdp.n_agents() {
            let row = self.policies.behavior(m).row(s);
            self.action_buf[m] = sample_categorical(&mut self.rng, row.iter().copied());
        }
        let joint = self.mdp.encode_joint(&self.action_buf);
        let s_next = sample_categorical(
            &mut self.rng,
            self.mdp.kernel_row(s, joint).iter().copied(),
        );
        let rewards: Vec<f64> = (0..self.mdp.n_agents())
            .map(|m| self.mdp.reward(m, s, joint, s_next))
            .collect();
        self.state = s_next;
        Transition {
            s,
            joint_action: self.action_buf.clone(),
            s_next,
            rewards,
        }
    }

    pub fn sample(&mut self, length: usize) -> Vec<Transition> {
        (0..length).map(|_| self.next_transition()).collect()
    }
}

fn sample_categorical(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p <= 0.0 {
            continue;
        }
        cum += p;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

/// State-marginal chain under the behavior policies:
/// `P(s'|s) = sum_a pi_b(a|s) P(s'|s,a)`.
pub fn marginal_kernel(mdp: &MultiAgentMdp, policies: &PolicySet) -> DMatrix<f64> {
    let n = mdp.n_states();
    let mut p = DMatrix::zeros(n, n);
    let mut actions = vec![0usize; mdp.n_agents()];
    for s in 0..n {
        for a in 0..mdp.n_joint_actions() {
            mdp.decode_joint(a, &mut actions);
            let mut prob = 1.0;
            for (m, &am) in actions.iter().enumerate() {
                prob *= policies.behavior_prob(m, s, am);
            }
            if prob == 0.0 {
                continue;
            }
            let row = mdp.kernel_row(s, a);
            for (s_next, &q) in row.iter().enumerate() {
                p[(s, s_next)] += prob * q;
            }
        }
    }
    p
}

/// Stationary distribution of the behavior chain by power iteration; the
/// result satisfies `||mu^T P - mu^T||_1 < tol`.
pub fn stationary_distribution(
    mdp: &MultiAgentMdp,
    policies: &PolicySet,
    tol: f64,
) -> Result<DVector<f64>> {
    let p = marginal_kernel(mdp, policies);
    stationary_of_kernel(&p, tol)
}

pub(crate) fn stationary_of_kernel(p: &DMatrix<f64>, tol: f64) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_ITERATION_CAP {
        let mut next = p.transpose() * &mu;
        let sum: f64 = next.iter().sum();
        next /= sum;
        let residual: f64 = (&next - &mu).abs().sum();
        mu = next;
        if residual < tol {
            return Ok(mu);
        }
    }
    Err(Error::NonConvergence(
        "power iteration hit the cap; chain may be reducible or periodic".into(),
    ))
}

/// Fit of the geometric mixing envelope: computes
/// `sup_s d_TV(P(s_t | s_0 = s), mu)` exactly for `t = 1..=horizon`, then fits
/// `log sup-d_TV ~ log nu + t log delta` by least squares. `nu` is inflated to
/// the tightest constant with `nu * delta^t` above every measured point.
/// A sequence with no decay over the horizon is a fit failure.
pub fn mixing_estimate(
    mdp: &MultiAgentMdp,
    policies: &PolicySet,
    horizon: usize,
) -> Result<(f64, f64)> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let p = marginal_kernel(mdp, policies);
    let mu = stationary_of_kernel(&p, 1e-12)?;
    let n = mdp.n_states();

    let mut dists = DMatrix::<f64>::identity(n, n);
    let mut sup_dtv = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        dists *= &p;
        let mut sup = 0.0f64;
        for s in 0..n {
            let dtv: f64 = 0.5
                * (0..n)
                    .map(|s2| (dists[(s, s2)] - mu[s2]).abs())
                    .sum::<f64>();
            sup = sup.max(dtv);
        }
        sup_dtv.push(sup);
    }

    if sup_dtv[0] <= 1e-14 {
        // One-step mixing: the chain lands on mu immediately.
        return Ok((0.0, 0.0));
    }
    if sup_dtv[horizon - 1] >= sup_dtv[0] {
        return Err(Error::MixingFit(format!(
            "sup d_TV did not decay over horizon {horizon} ({} -> {})",
            sup_dtv[0],
            sup_dtv[horizon - 1]
        )));
    }

    let points: Vec<(f64, f64)> = sup_dtv
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 1e-300)
        .map(|(i, &d)| ((i + 1) as f64, d.ln()))
        .collect();
    let n_pts = points.len() as f64;
    let sum_t: f64 = points.iter().map(|p| p.0).sum();
    let sum_y: f64 = points.iter().map(|p| p.1).sum();
    let sum_tt: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sum_ty: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n_pts * sum_tt - sum_t * sum_t;
    let slope = if denom.abs() < 1e-300 {
        return Err(Error::MixingFit("degenerate least-squares system".into()));
    } else {
        (n_pts * sum_ty - sum_t * sum_y) / denom
    };
    let delta = slope.exp();
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::MixingFit(format!(
            "fitted decay rate {delta} is not in (0,1)"
        )));
    }
    let nu = sup_dtv
        .iter()
        .enumerate()
        .map(|(i, &d)| d / delta.powi(i as i32 + 1))
        .fold(0.0, f64::max);
    Ok((nu, delta))
}

/// Everything a run needs from the environment side.
#[derive(Debug, Clone)]
pub struct EnvBundle {
    pub mdp: MultiAgentMdp,
    pub policies: PolicySet,
    pub features: FeatureMap,
    pub params: EnvParams,
}

/// Generation parameters for an environment bundle; also the `[env]` section
/// of experiment spec files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    pub seed: u64,
    pub n_states: usize,
    pub n_agents: usize,
    pub actions_per_agent: usize,
    pub feature_dim: usize,
    pub gamma: f64,
    pub r_max: f64,
    pub noise_std: f64,
    pub floor_prob: f64,
}

impl EnvParams {
    /// The main-text experiment scale: 10 agents, 10 states, 2 actions each,
    /// dimension-5 unit-norm features, gamma 0.95.
    pub fn reference_default(seed: u64) -> Self {
        Self {
            seed,
            n_states: 10,
            n_agents: 10,
            actions_per_agent: 2,
            feature_dim: 5,
            gamma: 0.95,
            r_max: 1.0,
            noise_std: 0.05,
            floor_prob: 0.01,
        }
    }
}

pub fn generate_bundle(params: &EnvParams) -> Result<EnvBundle> {
    let mdp = generate_mdp(
        params.seed,
        params.n_states,
        params.n_agents,
        params.actions_per_agent,
        params.r_max,
        params.gamma,
    )?;
    let policies = generate_policies(params.seed, &mdp, params.noise_std, params.floor_prob)?;
    let features = generate_features(params.seed, params.n_states, params.feature_dim)?;
    Ok(EnvBundle {
        mdp,
        policies,
        features,
        params: params.clone(),
    })
}
