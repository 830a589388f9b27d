//! Decentralized mini-batch TDC simulator for multi-agent off-policy policy
//! evaluation.
//!
//! A network of agents shares a finite MDP: each agent acts with its own
//! behavior policy, collects private rewards and evaluates the joint target
//! policies by two-timescale TD with gradient correction. Agents synchronize
//! through a doubly stochastic mixing matrix, either broadcasting their local
//! importance sampling ratios exactly or estimating the global ratio by
//! gossiping logs for a few rounds. The crate provides:
//!
//! * [`env`] — MDP/policy/feature generation, trajectory sampling, stationary
//!   distribution and mixing estimates;
//! * [`network`] — mixing matrices, spectral gap, gossip and consensus error;
//! * [`ratios`] — local/global importance sampling ratios and the log-space
//!   gossip estimator with its error bound;
//! * [`tdc`] — per-sample and batch statistics, expected matrices, the fixed
//!   point and analytic norm bounds;
//! * [`decentral`] — the decentralized algorithm loops and the TD(0) baseline;
//! * [`harness`] — experiment specs, CSV export, plot series and the
//!   verification suite.

pub mod decentral;
pub mod env;
pub mod error;
pub mod harness;
pub mod network;
pub mod ratios;
pub mod rng;
pub mod tdc;

pub use error::{Error, Result};
