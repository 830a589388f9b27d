//! Importance sampling ratios.
//!
//! Every agent owns a local ratio `rho^(m) = pi^(m)(a|s) / pi_b^(m)(a|s)`;
//! correct off-policy updates need the global ratio `rho = prod_m rho^(m)`.
//! Besides the exact product this module implements the decentralized
//! estimator: agents gossip the logs of their local ratios for `L` rounds and
//! exponentiate `M` times the result, which converges to the exact global
//! ratio at rate `sigma2` per round.

use nalgebra::DMatrix;

use crate::env::{PolicySet, Transition};
use crate::error::{Error, Result};
use crate::network::CommMatrix;

/// Local and global ratios for one transition, with the table-wide extrema.
#[derive(Debug, Clone)]
pub struct RatioBundle {
    pub local: Vec<f64>,
    pub exact_global: f64,
    /// Per-agent gossip estimates of the global ratio, when requested.
    pub estimates: Option<Vec<f64>>,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl RatioBundle {
    pub fn compute(
        policies: &PolicySet,
        tr: &Transition,
        gossip: Option<(&CommMatrix, usize)>,
    ) -> Result<Self> {
        let local = local_ratios(policies, tr)?;
        let exact_global = global_ratio_exact(&local)?;
        let estimates = match gossip {
            Some((v, rounds)) => Some(estimate_global_ratios(&local, v, rounds)?),
            None => None,
        };
        let (rho_min, rho_max) = ratio_extrema(policies);
        Ok(Self {
            local,
            exact_global,
            estimates,
            rho_min,
            rho_max,
        })
    }
}

/// `pi^(m)(a|s) / pi_b^(m)(a|s)` for one agent.
pub fn local_ratio(policies: &PolicySet, agent: usize, s: usize, a: usize) -> Result<f64> {
    let behavior = policies.behavior_prob(agent, s, a);
    if behavior <= 0.0 {
        return Err(Error::SupportViolation(format!(
            "behavior policy of agent {agent} puts zero mass on action {a} in state {s}"
        )));
    }
    Ok(policies.target_prob(agent, s, a) / behavior)
}

/// Local ratios of all agents for one transition.
pub fn local_ratios(policies: &PolicySet, tr: &Transition) -> Result<Vec<f64>> {
    (0..policies.n_agents())
        .map(|m| local_ratio(policies, m, tr.s, tr.joint_action[m]))
        .collect()
}

/// Exact global ratio: the product of the local ratios.
pub fn global_ratio_exact(locals: &[f64]) -> Result<f64> {
    if locals.iter().any(|&r| r <= 0.0) {
        return Err(Error::InvalidArgument(
            "local ratios must be positive".into(),
        ));
    }
    Ok(locals.iter().product())
}

/// Decentralized estimate of the global ratio: initialize with the log of the
/// local ratio, gossip for `rounds` rounds, exponentiate `M` times the result.
pub fn estimate_global_ratios(
    locals: &[f64],
    v: &CommMatrix,
    rounds: usize,
) -> Result<Vec<f64>> {
    if locals.len() != v.m() {
        return Err(Error::ShapeMismatch(format!(
            "{} local ratios for a {}-agent topology",
            locals.len(),
            v.m()
        )));
    }
    if locals.iter().any(|&r| r <= 0.0) {
        return Err(Error::InvalidArgument(
            "local ratios must be positive".into(),
        ));
    }
    if rounds == 0 {
        return Err(Error::InvalidArgument("need at least one round".into()));
    }
    let logs = DMatrix::from_fn(v.m(), 1, |i, _| locals[i].ln());
    let mixed = gossip_logs(&logs, v, rounds)?;
    let m = v.m() as f64;
    Ok((0..v.m()).map(|i| (m * mixed[(i, 0)]).exp()).collect())
}

/// Vectorized form for a whole mini-batch: column `i` of `local_logs` holds
/// the per-agent log ratios of sample `i`. Numerically identical to gossiping
/// each sample separately.
pub fn estimate_global_ratios_batch(
    local_logs: &DMatrix<f64>,
    v: &CommMatrix,
    rounds: usize,
) -> Result<DMatrix<f64>> {
    let mixed = gossip_logs(local_logs, v, rounds)?;
    let m = v.m() as f64;
    Ok(mixed.map(|x| (m * x).exp()))
}

fn gossip_logs(logs: &DMatrix<f64>, v: &CommMatrix, rounds: usize) -> Result<DMatrix<f64>> {
    let mut state = logs.clone();
    for _ in 0..rounds {
        state = v.apply(&state)?;
    }
    Ok(state)
}

/// Smallest round count under which the estimation error bound is guaranteed:
/// `ceil(3 ln M / (2 ln(1/sigma2)))`, at least 1.
pub fn min_rounds(m: usize, sigma2: f64) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidArgument("agent count must be >= 1".into()));
    }
    if m == 1 {
        return Ok(1);
    }
    if !(sigma2 > 0.0 && sigma2 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must lie in (0,1), got {sigma2}"
        )));
    }
    let raw = 3.0 * (m as f64).ln() / (2.0 * (1.0 / sigma2).ln());
    Ok((raw.ceil() as usize).max(1))
}

/// Worst-case squared estimation error over agents,
/// `M^3 sigma2^(2L) (rho_max^2 / rho_min) ln^2(rho_max / rho_min)`,
/// valid once `l >= min_rounds(m, sigma2)`.
pub fn ratio_error_bound(
    m: usize,
    sigma2: f64,
    l: usize,
    rho_min: f64,
    rho_max: f64,
) -> Result<f64> {
    if rho_min <= 0.0 {
        return Err(Error::InvalidArgument("rho_min must be positive".into()));
    }
    if rho_max < rho_min {
        return Err(Error::InvalidArgument(
            "rho_max must be at least rho_min".into(),
        ));
    }
    if !(0.0..1.0).contains(&sigma2) {
        return Err(Error::InvalidArgument(format!(
            "sigma2 must lie in [0,1), got {sigma2}"
        )));
    }
    let m = m as f64;
    let log_spread = (rho_max / rho_min).ln();
    Ok(m.powi(3) * sigma2.powi(2 * l as i32) * (rho_max * rho_max / rho_min) * log_spread * log_spread)
}

/// Exact extrema of local and global ratios over the full `(s, a)` tables.
/// The global extrema factor over agents, so no joint enumeration is needed.
pub fn ratio_extrema(policies: &PolicySet) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let n_states = policies.behavior(0).nrows();
    for s in 0..n_states {
        let mut prod_min = 1.0;
        let mut prod_max = 1.0;
        for m in 0..policies.n_agents() {
            let mut agent_min = f64::INFINITY;
            let mut agent_max = 0.0f64;
            for a in 0..policies.behavior(m).ncols() {
                let r = policies.target_prob(m, s, a) / policies.behavior_prob(m, s, a);
                agent_min = agent_min.min(r);
                agent_max = agent_max.max(r);
            }
            lo = lo.min(agent_min);
            hi = hi.max(agent_max);
            prod_min *= agent_min;
            prod_max *= agent_max;
        }
        lo = lo.min(prod_min);
        hi = hi.max(prod_max);
    }
    (lo, hi)
}
