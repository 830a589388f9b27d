//! TDC statistics and fixed-point quantities.
//!
//! Per sample `(s, a, s', R)` with ratio `rho` and features `phi`:
//!
//! ```text
//! A_t = rho * phi(s) (gamma phi(s') - phi(s))^T      B_t = -gamma rho phi(s') phi(s)^T
//! C_t = -phi(s) phi(s)^T                             b_t^(m) = rho R^(m) phi(s)
//! ```
//!
//! Mini-batches average these componentwise. The expected versions `A, B, C,
//! b` under the stationary behavior distribution give the TDC fixed point
//! `theta* = -A^(-1) b_mean` and the curvature constants `lambda1, lambda2`.

use nalgebra::{DMatrix, DVector};

use crate::env::{FeatureMap, MultiAgentMdp, PolicySet, Transition, TrajectorySampler};
use crate::error::{Error, Result};
use crate::ratios;

/// Guard for exact expectation: refuse to enumerate more than this many
/// `(s, a, s')` triples, since the result backs test oracles and must stay
/// exact rather than sampled.
pub const ENUMERATION_GUARD: usize = 10_000_000;

/// Statistics of a single transition.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
    /// One reward-weighted feature vector per agent.
    pub b_vecs: Vec<DVector<f64>>,
}

/// Mini-batch averages of [`SampleStats`].
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    pub b_bar_vecs: Vec<DVector<f64>>,
    /// Mean of `b_bar_vecs` over agents.
    pub b_double_bar: DVector<f64>,
    pub n: usize,
}

/// Expected matrices, fixed point and curvature of the evaluation problem.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub a_exp: DMatrix<f64>,
    pub b_exp: DMatrix<f64>,
    pub c_exp: DMatrix<f64>,
    pub b_mean: DVector<f64>,
    pub per_agent_b: Vec<DVector<f64>>,
    pub theta_star: DVector<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub c_inv: DMatrix<f64>,
    /// Condition number of `A`; solves are suspect above ~1e10.
    pub cond_a: f64,
    /// Largest imaginary part among the eigenvalues of `A^T C^(-1) A`;
    /// nonzero beyond 1e-8 flags a dubious lambda1.
    pub lambda1_imag: f64,
}

impl FixedPoint {
    /// Tracking target `w*(theta) = -C^(-1)(A theta + b_mean)`.
    pub fn w_star(&self, theta_bar: &DVector<f64>) -> DVector<f64> {
        -(&self.c_inv * (&self.a_exp * theta_bar + &self.b_mean))
    }
}

/// Borrowed view of mean statistics; lets the centralized recursion run on a
/// mini-batch or on the exact expected matrices.
#[derive(Debug, Clone, Copy)]
pub struct MeanStats<'a> {
    pub a: &'a DMatrix<f64>,
    pub b: &'a DMatrix<f64>,
    pub c: &'a DMatrix<f64>,
    pub b_vec: &'a DVector<f64>,
}

impl<'a> From<&'a BatchStats> for MeanStats<'a> {
    fn from(bs: &'a BatchStats) -> Self {
        Self {
            a: &bs.a_bar,
            b: &bs.b_bar,
            c: &bs.c_bar,
            b_vec: &bs.b_double_bar,
        }
    }
}

impl<'a> From<&'a FixedPoint> for MeanStats<'a> {
    fn from(fp: &'a FixedPoint) -> Self {
        Self {
            a: &fp.a_exp,
            b: &fp.b_exp,
            c: &fp.c_exp,
            b_vec: &fp.b_mean,
        }
    }
}

/// Statistics of one transition under the given ratio.
pub fn sample_stats(
    tr: &Transition,
    features: &FeatureMap,
    rho: f64,
    gamma: f64,
) -> Result<SampleStats> {
    if rho <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ratio must be positive, got {rho}"
        )));
    }
    if tr.s >= features.n_states() || tr.s_next >= features.n_states() {
        return Err(Error::ShapeMismatch(
            "transition state out of feature-table range".into(),
        ));
    }
    let phi_s = features.feature(tr.s);
    let phi_next = features.feature(tr.s_next);
    let diff = gamma * &phi_next - &phi_s;
    let a_mat = rho * &phi_s * diff.transpose();
    let b_mat = -gamma * rho * &phi_next * phi_s.transpose();
    let c_mat = -&phi_s * phi_s.transpose();
    let b_vecs = tr
        .rewards
        .iter()
        .map(|&r| rho * r * &phi_s)
        .collect();
    Ok(SampleStats {
        a_mat,
        b_mat,
        c_mat,
        b_vecs,
    })
}

/// Componentwise arithmetic mean of a nonempty batch, accumulated in sample
/// order so results are deterministic.
pub fn batch_average(stats: &[SampleStats]) -> Result<BatchStats> {
    let first = stats
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let d = first.a_mat.nrows();
    let n_agents = first.b_vecs.len();
    let mut a_bar = DMatrix::zeros(d, d);
    let mut b_bar = DMatrix::zeros(d, d);
    let mut c_bar = DMatrix::zeros(d, d);
    let mut b_bar_vecs = vec![DVector::zeros(d); n_agents];
    for s in stats {
        if s.a_mat.nrows() != d || s.b_vecs.len() != n_agents {
            return Err(Error::ShapeMismatch("inconsistent batch entries".into()));
        }
        a_bar += &s.a_mat;
        b_bar += &s.b_mat;
        c_bar += &s.c_mat;
        for (acc, v) in b_bar_vecs.iter_mut().zip(&s.b_vecs) {
            *acc += v;
        }
    }
    let n = stats.len();
    let scale = 1.0 / n as f64;
    a_bar *= scale;
    b_bar *= scale;
    c_bar *= scale;
    for v in &mut b_bar_vecs {
        *v *= scale;
    }
    let mut b_double_bar = DVector::zeros(d);
    for v in &b_bar_vecs {
        b_double_bar += v;
    }
    b_double_bar /= n_agents as f64;
    Ok(BatchStats {
        a_bar,
        b_bar,
        c_bar,
        b_bar_vecs,
        b_double_bar,
        n,
    })
}

/// Exact expectations by enumerating `(s, a, s')` with the stationary weights
/// and exact ratios, then the fixed point `theta* = -A^(-1) b_mean` and the
/// curvature constants `lambda1 = -lambda_max(A^T C^(-1) A)`,
/// `lambda2 = -lambda_max(C)`.
pub fn expected_stats(
    mdp: &MultiAgentMdp,
    policies: &PolicySet,
    features: &FeatureMap,
    mu: &DVector<f64>,
) -> Result<FixedPoint> {
    let n = mdp.n_states();
    let d = features.dim();
    let n_agents = mdp.n_agents();
    if mu.len() != n || features.n_states() != n {
        return Err(Error::ShapeMismatch(
            "stationary distribution or feature table does not match the MDP".into(),
        ));
    }
    let triples = n
        .checked_mul(mdp.n_joint_actions())
        .and_then(|x| x.checked_mul(n))
        .ok_or_else(|| Error::InvalidArgument("enumeration size overflows".into()))?;
    if triples > ENUMERATION_GUARD {
        return Err(Error::InvalidArgument(format!(
            "refusing to enumerate {triples} (s,a,s') triples (cap {ENUMERATION_GUARD}); \
             the exact oracle must not be approximated"
        )));
    }

    let mut a_exp = DMatrix::zeros(d, d);
    let mut b_exp = DMatrix::zeros(d, d);
    let mut c_exp = DMatrix::zeros(d, d);
    let mut per_agent_b = vec![DVector::zeros(d); n_agents];
    let mut actions = vec![0usize; n_agents];

    for s in 0..n {
        let phi_s = features.feature(s);
        c_exp -= mu[s] * &phi_s * phi_s.transpose();
        for joint in 0..mdp.n_joint_actions() {
            mdp.decode_joint(joint, &mut actions);
            let mut pb = 1.0;
            let mut rho = 1.0;
            for (m, &am) in actions.iter().enumerate() {
                let b = policies.behavior_prob(m, s, am);
                pb *= b;
                rho *= policies.target_prob(m, s, am) / b;
            }
            let weight = mu[s] * pb * rho;
            if weight == 0.0 {
                continue;
            }
            let kernel_row = mdp.kernel_row(s, joint);
            let mut mean_phi_next = DVector::zeros(d);
            let mut mean_rewards = vec![0.0f64; n_agents];
            for (s_next, &p) in kernel_row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                mean_phi_next += p * features.feature(s_next);
                for (m, mr) in mean_rewards.iter_mut().enumerate() {
                    *mr += p * mdp.reward(m, s, joint, s_next);
                }
            }
            let diff = mdp.gamma() * &mean_phi_next - &phi_s;
            a_exp += weight * &phi_s * diff.transpose();
            b_exp -= mdp.gamma() * weight * &mean_phi_next * phi_s.transpose();
            for (m, bm) in per_agent_b.iter_mut().enumerate() {
                *bm += weight * mean_rewards[m] * &phi_s;
            }
        }
    }

    let mut b_mean = DVector::zeros(d);
    for bm in &per_agent_b {
        b_mean += bm;
    }
    b_mean /= n_agents as f64;

    let a_lu = a_exp.clone().lu();
    let theta_star = a_lu
        .solve(&(-&b_mean))
        .ok_or_else(|| Error::AssumptionViolation("expected matrix A is singular".into()))?;
    let c_lu = c_exp.clone().lu();
    let c_inv = c_lu
        .solve(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::AssumptionViolation("expected matrix C is singular".into()))?;

    let lambda2 = -c_exp
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let gain = a_exp.transpose() * &c_inv * &a_exp;
    let eig = gain.complex_eigenvalues();
    let mut max_re = f64::NEG_INFINITY;
    let mut max_im = 0.0f64;
    for e in eig.iter() {
        max_re = max_re.max(e.re);
        max_im = max_im.max(e.im.abs());
    }
    let lambda1 = -max_re;
    if lambda1 <= 0.0 || lambda2 <= 0.0 {
        return Err(Error::AssumptionViolation(format!(
            "curvature constants must be positive: lambda1 = {lambda1}, lambda2 = {lambda2}"
        )));
    }

    let svd = a_exp.clone().svd(false, false);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let s_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cond_a = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };

    Ok(FixedPoint {
        a_exp,
        b_exp,
        c_exp,
        b_mean,
        per_agent_b,
        theta_star,
        lambda1,
        lambda2,
        c_inv,
        cond_a,
        lambda1_imag: max_im,
    })
}

/// One centralized two-timescale update:
/// `theta' = theta + alpha (A theta + b + B w)`,
/// `w' = w + beta (A theta + b + C w)`.
pub fn centralized_tdc_step(
    theta: &DVector<f64>,
    w: &DVector<f64>,
    stats: MeanStats<'_>,
    alpha: f64,
    beta: f64,
) -> (DVector<f64>, DVector<f64>) {
    let common = stats.a * theta + stats.b_vec;
    let theta_next = theta + alpha * (&common + stats.b * w);
    let w_next = w + beta * (&common + stats.c * w);
    (theta_next, w_next)
}

/// Analytic norm bounds on the statistics and the ratio-estimation deviation
/// constants derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSet {
    /// `rho_max (1 + gamma)`, bounds `||A_t||_F`.
    pub omega_a: f64,
    /// `rho_max gamma`, bounds `||B_t||_F`.
    pub omega_b: f64,
    /// `rho_max R_max`, bounds `||b_t^(m)||`.
    pub omega_b_vec: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub d_b_vec: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub r_max: f64,
    pub gamma: f64,
}

pub fn compute_bounds(rho_min: f64, rho_max: f64, gamma: f64, r_max: f64) -> Result<BoundSet> {
    if !(rho_min > 0.0 && rho_max >= rho_min) {
        return Err(Error::InvalidArgument(
            "need 0 < rho_min <= rho_max".into(),
        ));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument("gamma must lie in (0,1)".into()));
    }
    if r_max <= 0.0 {
        return Err(Error::InvalidArgument("r_max must be positive".into()));
    }
    let spread = (rho_max * rho_max / rho_min) * (rho_max / rho_min).ln().powi(2);
    Ok(BoundSet {
        omega_a: rho_max * (1.0 + gamma),
        omega_b: rho_max * gamma,
        omega_b_vec: rho_max * r_max,
        d_a: (1.0 + gamma).powi(2) * spread,
        d_b: gamma * gamma * spread,
        d_b_vec: r_max * r_max * spread,
        rho_min,
        rho_max,
        r_max,
        gamma,
    })
}

/// Deviation of Markovian mini-batch means from the expected `A` matrix:
/// the norm of the averaged bias and the mean squared deviation over
/// `trials` consecutive mini-batches. Both shrink as `O(1/N)`.
pub fn empirical_batch_deviation(
    sampler: &mut TrajectorySampler<'_>,
    features: &FeatureMap,
    policies: &PolicySet,
    fp: &FixedPoint,
    n: usize,
    trials: usize,
    gamma: f64,
) -> Result<(f64, f64)> {
    if n == 0 || trials == 0 {
        return Err(Error::InvalidArgument(
            "batch size and trial count must be positive".into(),
        ));
    }
    let d = features.dim();
    let mut sum_dev = DMatrix::zeros(d, d);
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let mut acc = DMatrix::zeros(d, d);
        for _ in 0..n {
            let tr = sampler.next_transition();
            let locals = ratios::local_ratios(policies, &tr)?;
            let rho = ratios::global_ratio_exact(&locals)?;
            let stats = sample_stats(&tr, features, rho, gamma)?;
            acc += stats.a_mat;
        }
        acc /= n as f64;
        let dev = acc - &fp.a_exp;
        sum_sq += dev.norm_squared();
        sum_dev += dev;
    }
    let mean_bias_norm = (sum_dev / trials as f64).norm();
    let mean_sq_dev = sum_sq / trials as f64;
    Ok((mean_bias_norm, mean_sq_dev))
}
