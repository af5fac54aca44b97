use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::{FaultConfigError, PermanentFaultConfig, TransientFaultConfig};
use crate::fti::ProtocolConfig;
use crate::isolation::DetectionSchedule;
use crate::node::NodeId;
use crate::sim::{StreamKind, Streams};
use crate::tmr::PolicyKind;
use crate::workload::{generate_random_app, parse_stg_named, Application, GenerateError, StgError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("n_nodes must be at least 3, got {0}")]
    TooFewNodes(usize),
    #[error("cores_per_node must be at least 3, got {0}")]
    TooFewCores(usize),
    #[error("faulty_core_counts has {got} entries for {nodes} nodes")]
    FaultCountLength { got: usize, nodes: usize },
    #[error("node {node} has {count} faulty cores but only {cores} cores")]
    TooManyFaulty {
        node: NodeId,
        count: usize,
        cores: usize,
    },
    #[error("explicit fault on node {node} core {core} is out of range")]
    FaultOutOfRange { node: NodeId, core: usize },
    #[error("runs_per_node must be positive")]
    NoRuns,
    #[error("scenario lists no applications")]
    NoApplications,
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("two applications share the name {0:?}")]
    DuplicateApplication(String),
    #[error(transparent)]
    Fault(#[from] FaultConfigError),
    #[error("reading {path}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("STG file {path}")]
    Stg { path: PathBuf, source: StgError },
    #[error(transparent)]
    Generate(#[from] GenerateError),
}

/// Where a scenario's application comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ApplicationSpec {
    /// Path is relative to the scenario file's directory.
    Stg { path: PathBuf, name: Option<String> },
    Random {
        count: usize,
        min_duration: f64,
        max_duration: f64,
        seed: u64,
        name: Option<String>,
    },
}

impl ApplicationSpec {
    pub fn label(&self) -> String {
        match self {
            ApplicationSpec::Stg { name: Some(n), .. } => n.clone(),
            ApplicationSpec::Stg { path, .. } => path
                .file_stem()
                .map_or_else(|| "stg".into(), |s| s.to_string_lossy().into_owned()),
            ApplicationSpec::Random { name, .. } => name.clone().unwrap_or_else(|| "random".into()),
        }
    }

    pub fn load(&self, base: &Path) -> Result<Application, ConfigError> {
        match self {
            ApplicationSpec::Stg { path, .. } => {
                let full = base.join(path);
                let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::Io {
                    path: full.clone(),
                    source,
                })?;
                parse_stg_named(&self.label(), &text)
                    .map_err(|source| ConfigError::Stg { path: full, source })
            }
            ApplicationSpec::Random {
                count,
                min_duration,
                max_duration,
                seed,
                ..
            } => {
                let mut app = generate_random_app(*count, (*min_duration, *max_duration), *seed)?;
                app.name = self.label();
                Ok(app)
            }
        }
    }
}

fn default_counts() -> Vec<usize> {
    vec![0, 0, 0, 0, 0, 1, 2, 3, 4]
}

/// Experiment description. Every field has a default, so a scenario file
/// only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub name: String,
    pub n_nodes: usize,
    pub cores_per_node: usize,
    /// Number of permanently faulty cores on each node; which cores is
    /// drawn from the seed. Ignored for nodes listed in
    /// `permanent.faulty_cores`.
    pub faulty_core_counts: Vec<usize>,
    pub policy: PolicyKind,
    /// Policies run by `compare`.
    pub policies: Vec<PolicyKind>,
    pub applications: Vec<ApplicationSpec>,
    pub runs_per_node: u32,
    pub seed: u64,
    pub rtmr_detector_broken: bool,
    pub rtmr_loss_threshold: u32,
    pub transient: TransientFaultConfig,
    pub permanent: PermanentFaultConfig,
    pub detection: DetectionSchedule,
    pub protocol: ProtocolConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            n_nodes: 9,
            cores_per_node: 4,
            faulty_core_counts: default_counts(),
            policy: PolicyKind::FtiTmr,
            policies: vec![
                PolicyKind::CTmr,
                PolicyKind::TpTmrPlus,
                PolicyKind::RTmr,
                PolicyKind::FtiTmr,
            ],
            applications: vec![ApplicationSpec::Random {
                count: 200,
                min_duration: 1.0,
                max_duration: 10.0,
                seed: 42,
                name: None,
            }],
            runs_per_node: 100,
            seed: 1,
            rtmr_detector_broken: false,
            rtmr_loss_threshold: crate::tmr::DEFAULT_LOSS_THRESHOLD,
            transient: TransientFaultConfig::default(),
            permanent: PermanentFaultConfig::default(),
            detection: DetectionSchedule::default(),
            protocol: ProtocolConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::Override(item.to_string());
    let (key, raw) = item.split_once('=').ok_or_else(bad)?;
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").ok_or_else(bad)?,
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut path: Vec<&str> = key.trim().split('.').collect();
    let last = path.pop().filter(|k| !k.is_empty()).ok_or_else(bad)?;
    let mut at = table;
    for part in path {
        at = at
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(bad)?;
    }
    at.insert(last.to_string(), value);
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, base_dir, &[])
    }

    /// Parses a scenario and then applies `key=value` overrides. Keys may be
    /// dotted (`transient.lambda0=0`); values use TOML syntax, and anything
    /// that does not parse as TOML is taken as a bare string.
    pub fn from_toml_with(
        text: &str,
        base_dir: impl Into<PathBuf>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: ScenarioConfig = toml::Value::Table(table).try_into()?;
        cfg.base_dir = base_dir.into();
        cfg.detection = cfg.detection.restarted();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::load_with(path, &[])
    }

    pub fn load_with(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::from_toml_with(&text, base, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_nodes < 3 {
            return Err(ConfigError::TooFewNodes(self.n_nodes));
        }
        if self.cores_per_node < 3 {
            return Err(ConfigError::TooFewCores(self.cores_per_node));
        }
        if !self.faulty_core_counts.is_empty() && self.faulty_core_counts.len() != self.n_nodes {
            return Err(ConfigError::FaultCountLength {
                got: self.faulty_core_counts.len(),
                nodes: self.n_nodes,
            });
        }
        for (node, &count) in self.faulty_core_counts.iter().enumerate() {
            if count > self.cores_per_node {
                return Err(ConfigError::TooManyFaulty {
                    node,
                    count,
                    cores: self.cores_per_node,
                });
            }
        }
        for (&node, cores) in &self.permanent.faulty_cores {
            if let Some(&core) = cores
                .iter()
                .find(|&&c| c >= self.cores_per_node)
                .or((node >= self.n_nodes).then_some(&0))
            {
                return Err(ConfigError::FaultOutOfRange { node, core });
            }
        }
        if self.runs_per_node == 0 {
            return Err(ConfigError::NoRuns);
        }
        if self.applications.is_empty() {
            return Err(ConfigError::NoApplications);
        }
        let mut labels = BTreeSet::new();
        for a in &self.applications {
            if !labels.insert(a.label()) {
                return Err(ConfigError::DuplicateApplication(a.label()));
            }
        }
        self.transient.validate()?;
        self.permanent.validate()?;
        Ok(())
    }

    pub fn load_applications(&self) -> Result<Vec<Application>, ConfigError> {
        self.applications
            .iter()
            .map(|a| a.load(&self.base_dir))
            .collect()
    }

    /// Resolves the fault placement: explicit entries win, the rest are drawn
    /// uniformly per node from the fault-placement stream.
    pub fn fault_placement(&self, seed: u64) -> BTreeMap<NodeId, BTreeSet<usize>> {
        let streams = Streams::new(seed);
        let mut out = BTreeMap::new();
        for (node, &count) in self.faulty_core_counts.iter().enumerate() {
            if count == 0 || self.permanent.faulty_cores.contains_key(&node) {
                continue;
            }
            let mut rng = streams.stream(StreamKind::FaultPlacement, node as u64);
            let cores: BTreeSet<usize> = sample(&mut rng, self.cores_per_node, count)
                .into_iter()
                .collect();
            out.insert(node, cores);
        }
        for (&node, cores) in &self.permanent.faulty_cores {
            if !cores.is_empty() {
                out.insert(node, cores.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = ScenarioConfig {
            n_nodes: 2,
            faulty_core_counts: vec![],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(ConfigError::TooFewNodes(2))));
        let cfg = ScenarioConfig {
            faulty_core_counts: vec![0, 5, 0, 0, 0, 0, 0, 0, 0],
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::TooManyFaulty { node: 1, .. })
        ));
        let cfg = ScenarioConfig {
            faulty_core_counts: vec![0; 4],
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(ConfigError::FaultCountLength { .. })
        ));
    }

    #[test]
    fn placement_counts_and_determinism() {
        let cfg = ScenarioConfig::default();
        let p = cfg.fault_placement(9);
        let counts: Vec<usize> = (0..9).map(|n| p.get(&n).map_or(0, |s| s.len())).collect();
        assert_eq!(counts, default_counts());
        assert_eq!(p, cfg.fault_placement(9));
    }

    #[test]
    fn overrides_apply() {
        let set = |s: &str| s.to_string();
        let cfg = ScenarioConfig::from_toml_with(
            "runs_per_node = 5\n",
            ".",
            &[
                set("runs_per_node=7"),
                set("transient.lambda0=0"),
                set("policy=r_tmr"),
                set("name = with space"),
            ],
        )
        .unwrap();
        assert_eq!(cfg.runs_per_node, 7);
        assert_eq!(cfg.transient.lambda0, 0.0);
        assert_eq!(cfg.policy, PolicyKind::RTmr);
        assert_eq!(cfg.name, "with space");
        assert!(matches!(
            ScenarioConfig::from_toml_with("", ".", &[set("noequals")]),
            Err(ConfigError::Override(_))
        ));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ScenarioConfig {
            name: "rt".into(),
            seed: 77,
            ..Default::default()
        };
        let back = ScenarioConfig::from_toml(&cfg.to_toml(), ".").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_file() {
        let cfg = ScenarioConfig::from_toml("name = \"x\"\npolicy = \"r_tmr\"\n", ".").unwrap();
        assert_eq!(cfg.policy, PolicyKind::RTmr);
        assert_eq!(cfg.n_nodes, 9);
    }
}
