//! On-disk formats: environment bundles (JSON), topologies and experiment
//! specs (TOML), fixed-point exports (TOML). All formats are versioned and
//! parsed strictly; unknown keys are rejected.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decentral::{Algorithm, ParamInit, RunConfig};
use crate::env::{EnvBundle, EnvParams, FeatureMap, MultiAgentMdp, PolicySet};
use crate::error::{Error, Result};
use crate::network::{build_fully_connected, build_ring, CommMatrix};
use crate::tdc::FixedPoint;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    version: u32,
    params: EnvParams,
    actions_per_agent: Vec<usize>,
    /// Flat `[s][a][s']`.
    kernel: Vec<f64>,
    /// Flat `[m][s][a][s']`.
    rewards: Vec<f64>,
    /// Per agent, flat `[s][a]`.
    behavior: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
    /// Flat row-major, `feature_dim x n_states`.
    features: Vec<f64>,
}

pub fn write_bundle(path: &Path, bundle: &EnvBundle) -> Result<()> {
    let n_agents = bundle.mdp.n_agents();
    let file = BundleFile {
        version: FORMAT_VERSION,
        params: bundle.params.clone(),
        actions_per_agent: bundle.mdp.actions_per_agent().to_vec(),
        kernel: bundle.mdp.kernel().to_vec(),
        rewards: bundle.mdp.rewards().to_vec(),
        behavior: (0..n_agents)
            .map(|m| matrix_to_rows(bundle.policies.behavior(m)))
            .collect(),
        target: (0..n_agents)
            .map(|m| matrix_to_rows(bundle.policies.target(m)))
            .collect(),
        features: matrix_to_rows(bundle.features.table()),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Spec(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<EnvBundle> {
    let text = fs::read_to_string(path)?;
    let file: BundleFile = serde_json::from_str(&text)
        .map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::Spec(format!(
            "bundle version {} unsupported (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let p = &file.params;
    let mdp = MultiAgentMdp::new(
        file.actions_per_agent.clone(),
        p.n_states,
        file.kernel,
        file.rewards,
        p.gamma,
        p.r_max,
    )?;
    let behavior = rows_to_matrices(&file.behavior, p.n_states, &file.actions_per_agent)?;
    let target = rows_to_matrices(&file.target, p.n_states, &file.actions_per_agent)?;
    let policies = PolicySet::new(behavior, target, p.floor_prob)?;
    let features = rows_to_matrix(&file.features, p.feature_dim, p.n_states)?;
    let features = FeatureMap::new(features)?;
    Ok(EnvBundle {
        mdp,
        policies,
        features,
        params: file.params,
    })
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn rows_to_matrix(flat: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if flat.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "expected {rows}x{cols} = {} entries, got {}",
            rows * cols,
            flat.len()
        )));
    }
    Ok(DMatrix::from_row_slice(rows, cols, flat))
}

fn rows_to_matrices(
    tables: &[Vec<f64>],
    n_states: usize,
    actions: &[usize],
) -> Result<Vec<DMatrix<f64>>> {
    if tables.len() != actions.len() {
        return Err(Error::ShapeMismatch(
            "policy table count differs from agent count".into(),
        ));
    }
    tables
        .iter()
        .zip(actions)
        .map(|(flat, &k)| rows_to_matrix(flat, n_states, k))
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    version: u32,
    m: usize,
    /// Row-major `m x m` weights.
    weights: Vec<f64>,
    /// Optional expected spectral value, cross-checked on load.
    sigma2: Option<f64>,
}

pub fn write_topology(path: &Path, v: &CommMatrix) -> Result<()> {
    let file = TopologyFile {
        version: FORMAT_VERSION,
        m: v.m(),
        weights: matrix_to_rows(v.weights()),
        sigma2: Some(v.sigma2()),
    };
    let text = toml::to_string(&file).map_err(|e| Error::Spec(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn read_topology(path: &Path) -> Result<CommMatrix> {
    let text = fs::read_to_string(path)?;
    let file: TopologyFile =
        toml::from_str(&text).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
    if file.version != FORMAT_VERSION {
        return Err(Error::Spec(format!(
            "topology version {} unsupported (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    let weights = rows_to_matrix(&file.weights, file.m, file.m)?;
    let v = CommMatrix::from_weights(weights)?;
    if let Some(expected) = file.sigma2 {
        if (expected - v.sigma2()).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "topology file declares sigma2 = {expected}, computed {}",
                v.sigma2()
            )));
        }
    }
    Ok(v)
}

/// `[env]` section: either a path to a saved bundle or inline generation
/// parameters, exactly one of the two.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<EnvParams>,
}

/// `[topology]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// `fully-connected`, `ring` or `file`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// One `[[runs]]` entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub label: String,
    pub algorithm: Algorithm,
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default)]
    pub post_averaging: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gossip_rounds: Option<usize>,
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_metrics_every")]
    pub metrics_every: usize,
    /// `zero` (default) or a Gaussian scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_scale: Option<f64>,
    /// Defaults to the spec seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_metrics_every() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub version: u32,
    pub name: String,
    pub repetitions: usize,
    pub seed: u64,
    pub env: EnvSection,
    pub topology: TopologySection,
    pub runs: Vec<RunSection>,
}

/// Validated experiment spec.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub repetitions: usize,
    pub seed: u64,
    pub env: EnvSection,
    pub topology: TopologySection,
    pub runs: Vec<(String, RunConfig)>,
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path)?;
    let file: SpecFile =
        toml::from_str(&text).map_err(|e| Error::Spec(format!("{}:\n{e}", path.display())))?;
    spec_from_file(file)
}

pub fn spec_from_file(file: SpecFile) -> Result<ExperimentSpec> {
    if file.version != FORMAT_VERSION {
        return Err(Error::Spec(format!(
            "spec version {} unsupported (expected {FORMAT_VERSION})",
            file.version
        )));
    }
    if file.repetitions == 0 {
        return Err(Error::Spec("repetitions must be >= 1".into()));
    }
    if file.runs.is_empty() {
        return Err(Error::Spec("spec declares no runs".into()));
    }
    match (&file.env.bundle, &file.env.generate) {
        (Some(_), Some(_)) | (None, None) => {
            return Err(Error::Spec(
                "[env] needs exactly one of `bundle` or `generate`".into(),
            ))
        }
        _ => {}
    }
    validate_topology_section(&file.topology)?;

    let mut labels = std::collections::BTreeSet::new();
    let mut runs = Vec::with_capacity(file.runs.len());
    for section in &file.runs {
        if section.label.is_empty()
            || !section
                .label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::Spec(format!(
                "run label {:?} must be nonempty ASCII alphanumeric/dash/underscore",
                section.label
            )));
        }
        if !labels.insert(section.label.clone()) {
            return Err(Error::Spec(format!(
                "duplicate run label {:?}",
                section.label
            )));
        }
        let cfg = RunConfig {
            algorithm: section.algorithm,
            batch_size: section.batch_size,
            iterations: section.iterations,
            post_averaging: section.post_averaging,
            gossip_rounds: section.gossip_rounds,
            alpha: section.alpha,
            beta: section.beta,
            seed: section.seed.unwrap_or(file.seed),
            metrics_every: section.metrics_every,
            init: match section.init_scale {
                None => ParamInit::Zero,
                Some(scale) => ParamInit::Gaussian { scale },
            },
        };
        cfg.validate()
            .map_err(|e| Error::Spec(format!("run {:?}: {e}", section.label)))?;
        runs.push((section.label.clone(), cfg));
    }
    Ok(ExperimentSpec {
        name: file.name,
        repetitions: file.repetitions,
        seed: file.seed,
        env: file.env,
        topology: file.topology,
        runs,
    })
}

fn validate_topology_section(t: &TopologySection) -> Result<()> {
    match t.kind.as_str() {
        "fully-connected" => {
            if t.diag.is_none() || t.neighbor.is_some() || t.path.is_some() {
                return Err(Error::Spec(
                    "fully-connected topology takes exactly `diag`".into(),
                ));
            }
        }
        "ring" => {
            if t.diag.is_none() || t.neighbor.is_none() || t.path.is_some() {
                return Err(Error::Spec(
                    "ring topology takes `diag` and `neighbor`".into(),
                ));
            }
        }
        "file" => {
            if t.path.is_none() || t.diag.is_some() || t.neighbor.is_some() {
                return Err(Error::Spec("file topology takes exactly `path`".into()));
            }
        }
        other => {
            return Err(Error::Spec(format!(
                "unknown topology kind {other:?} (expected fully-connected, ring or file)"
            )))
        }
    }
    Ok(())
}

/// Resolves the topology section against the agent count of the environment.
pub fn build_topology(section: &TopologySection, m: usize, base: &Path) -> Result<CommMatrix> {
    match section.kind.as_str() {
        "fully-connected" => build_fully_connected(m, section.diag.unwrap()),
        "ring" => build_ring(m, section.diag.unwrap(), section.neighbor.unwrap()),
        "file" => {
            let v = read_topology(&base.join(section.path.as_ref().unwrap()))?;
            if v.m() != m {
                return Err(Error::ShapeMismatch(format!(
                    "topology file has {} agents, environment has {m}",
                    v.m()
                )));
            }
            Ok(v)
        }
        _ => unreachable!("validated on load"),
    }
}

/// Resolves the env section: generates inline parameters or loads a bundle.
pub fn build_env(section: &EnvSection, base: &Path) -> Result<EnvBundle> {
    match (&section.bundle, &section.generate) {
        (Some(path), None) => read_bundle(&base.join(path)),
        (None, Some(params)) => crate::env::generate_bundle(params),
        _ => Err(Error::Spec(
            "[env] needs exactly one of `bundle` or `generate`".into(),
        )),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixedPointFile {
    version: u32,
    theta_star: Vec<f64>,
    lambda1: f64,
    lambda2: f64,
    cond_a: f64,
    lambda1_imag: f64,
}

/// Exports the solver-facing summary of a fixed point.
pub fn write_fixed_point(path: &Path, fp: &FixedPoint) -> Result<()> {
    let file = FixedPointFile {
        version: FORMAT_VERSION,
        theta_star: fp.theta_star.iter().copied().collect(),
        lambda1: fp.lambda1,
        lambda2: fp.lambda2,
        cond_a: fp.cond_a,
        lambda1_imag: fp.lambda1_imag,
    };
    let text = toml::to_string(&file).map_err(|e| Error::Spec(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_bundle;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("dtdc-files-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn bundle_round_trip() {
        let params = EnvParams {
            seed: 5,
            n_states: 4,
            n_agents: 3,
            actions_per_agent: 2,
            feature_dim: 2,
            gamma: 0.9,
            r_max: 1.0,
            noise_std: 0.05,
            floor_prob: 0.01,
        };
        let bundle = generate_bundle(&params).unwrap();
        let path = tmp("bundle.json");
        write_bundle(&path, &bundle).unwrap();
        let loaded = read_bundle(&path).unwrap();
        assert_eq!(loaded.mdp, bundle.mdp);
        assert_eq!(loaded.policies, bundle.policies);
        assert_eq!(loaded.features, bundle.features);
        assert_eq!(loaded.params, params);
    }

    #[test]
    fn topology_round_trip_and_sigma_check() {
        let v = build_ring(6, 0.8, 0.1).unwrap();
        let path = tmp("ring.toml");
        write_topology(&path, &v).unwrap();
        let loaded = read_topology(&path).unwrap();
        assert_eq!(loaded.weights(), v.weights());

        // Corrupt the declared sigma2.
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("sigma2 = ", "sigma2 = 0.123 # ");
        let bad = tmp("ring-bad.toml");
        std::fs::write(&bad, text).unwrap();
        assert!(read_topology(&bad).is_err());
    }

    fn minimal_spec_text() -> String {
        r#"
version = 1
name = "minimal"
repetitions = 2
seed = 3

[env.generate]
seed = 3
n_states = 4
n_agents = 3
actions_per_agent = 2
feature_dim = 2
gamma = 0.9
r_max = 1.0
noise_std = 0.05
floor_prob = 0.01

[topology]
kind = "fully-connected"
diag = 0.8

[[runs]]
label = "alg1-small"
algorithm = "alg1"
batch_size = 5
iterations = 10
post_averaging = 3
alpha = 0.1
beta = 0.05
"#
        .to_string()
    }

    #[test]
    fn minimal_spec_loads() {
        let path = tmp("minimal.toml");
        std::fs::write(&path, minimal_spec_text()).unwrap();
        let spec = load_spec(&path).unwrap();
        assert_eq!(spec.repetitions, 2);
        assert_eq!(spec.runs.len(), 1);
        assert_eq!(spec.runs[0].0, "alg1-small");
        assert_eq!(spec.runs[0].1.metrics_every, 1);
    }

    #[test]
    fn zero_repetitions_rejected() {
        let path = tmp("zero-reps.toml");
        std::fs::write(
            &path,
            minimal_spec_text().replace("repetitions = 2", "repetitions = 0"),
        )
        .unwrap();
        assert!(load_spec(&path).is_err());
    }

    #[test]
    fn unknown_keys_rejected_with_context() {
        let path = tmp("unknown.toml");
        std::fs::write(
            &path,
            minimal_spec_text() + "\n[extra]\nnonsense = true\n",
        )
        .unwrap();
        let err = load_spec(&path).unwrap_err().to_string();
        assert!(err.contains("line"), "error should carry line context: {err}");
    }

    #[test]
    fn alg2_requires_gossip_rounds() {
        let path = tmp("alg2-missing-l.toml");
        std::fs::write(
            &path,
            minimal_spec_text().replace("algorithm = \"alg1\"", "algorithm = \"alg2\""),
        )
        .unwrap();
        assert!(load_spec(&path).is_err());
    }

    #[test]
    fn duplicate_labels_rejected() {
        let extra = r#"
[[runs]]
label = "alg1-small"
algorithm = "alg1"
batch_size = 5
iterations = 10
alpha = 0.1
beta = 0.05
"#;
        let path = tmp("dup.toml");
        std::fs::write(&path, minimal_spec_text() + extra).unwrap();
        assert!(load_spec(&path).is_err());
    }
}
