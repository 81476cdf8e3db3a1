//! Experiment configuration: a strict TOML schema with documented defaults,
//! dotted-path overrides and validation.
//!
//! Every field has a default, so an empty config file describes the default
//! rotated-clusters scenario. Unknown keys are rejected. Overrides of the
//! form `section.key=value` are applied on top of the parsed file and go
//! through the same strict schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autonet::{ModelLayout, TrainConfig};
use crate::error::{Error, Result};
use crate::federation::{BaselineKind, Participation, SubsampleSettings, TransportBackend};
use crate::synthdata::{self, ClientPartition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of the run derives from it.
    pub seed: u64,
    /// Default output directory for artifacts (CLI `--out` overrides).
    pub out: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub federation: FederationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: "run_out".into(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            federation: FederationConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Rotated,
    Backdoor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Number of clients C.
    pub clients: usize,
    /// Nominal cluster count K (rotated generator).
    pub clusters: usize,
    /// Class count of the rotated generator (backdoor uses a fixed count).
    pub classes: usize,
    /// Train samples per client; val/test follow the 80/10/10 rule.
    pub train_per_client: usize,
    /// One rotation angle (degrees) per nominal cluster.
    pub angles: Vec<f64>,
    /// Blob noise of the rotated generator.
    pub noise: f64,
    /// Backdoor feature strength (backdoor generator).
    pub patch_strength: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Rotated,
            clients: 16,
            clusters: 4,
            classes: 4,
            train_per_client: 200,
            angles: vec![0.0, 90.0, 180.0, 270.0],
            noise: 0.15,
            patch_strength: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    /// Learning rate kappa.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![32],
            embed_dim: 16,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-6,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Emdcfl,
    Oracle,
    Fedavg,
    ParamDistance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Exact,
    Sinkhorn,
}

/// `"all"` or an integer count of participants per round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParticipationConfig(pub Participation);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ParticipationRepr {
    Count(usize),
    Name(String),
}

impl Serialize for ParticipationConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Participation::All => s.serialize_str("all"),
            Participation::Count(k) => s.serialize_u64(k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ParticipationConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match ParticipationRepr::deserialize(d)? {
            ParticipationRepr::Count(k) => Ok(Self(Participation::Count(k))),
            ParticipationRepr::Name(name) if name == "all" => Ok(Self(Participation::All)),
            ParticipationRepr::Name(other) => Err(serde::de::Error::custom(format!(
                "participation must be \"all\" or a count, got \"{other}\""
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationConfig {
    /// Distance tolerance epsilon.
    pub epsilon: f64,
    /// Global epochs T.
    pub global_epochs: usize,
    /// Local epochs E per round.
    pub local_epochs: usize,
    pub participation: ParticipationConfig,
    pub backend: BackendKind,
    pub sinkhorn_reg: f64,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    /// Shared projection target dimension as a ratio of the embedding dim.
    pub projection_ratio: f64,
    /// Rescale epsilon by sqrt(out_dim/in_dim) of the projection.
    pub rescale_epsilon: bool,
    pub subsample_fraction: f64,
    pub subsample_cap: usize,
    pub subsample_floor: usize,
    pub method: MethodKind,
    pub param_distance_threshold: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            global_epochs: 10,
            local_epochs: 10,
            participation: ParticipationConfig(Participation::All),
            backend: BackendKind::Exact,
            sinkhorn_reg: 0.1,
            sinkhorn_max_iter: 10_000,
            sinkhorn_tol: 1e-9,
            projection_ratio: 0.9,
            rescale_epsilon: false,
            subsample_fraction: 0.1,
            subsample_cap: 512,
            subsample_floor: 512,
            method: MethodKind::Emdcfl,
            param_distance_threshold: 5.0,
        }
    }
}

impl ExperimentConfig {
    /// Strict parse of a TOML string; syntax and unknown-key errors carry
    /// line references from the TOML parser.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Parses a config file (or the empty default when `path` is `None`) and
    /// applies `section.key=value` overrides through the strict schema.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        // Surface file-level errors (with line references) before overrides.
        let base = Self::from_toml_str(&text)?;
        if overrides.is_empty() {
            return Ok(base);
        }

        let mut value: toml::Value = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for spec in overrides {
            let (key, raw) = spec.split_once('=').ok_or_else(|| {
                Error::Config(format!("override '{spec}' is not of the form key=value"))
            })?;
            set_path(&mut value, key.trim(), parse_raw_value(raw.trim()))?;
        }
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one dotted-path override to this config, returning the result.
    pub fn with_override(&self, key: &str, raw: &str) -> Result<Self> {
        let mut value =
            toml::Value::try_from(self.clone()).map_err(|e| Error::Config(e.to_string()))?;
        set_path(&mut value, key, parse_raw_value(raw))?;
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.clients == 0 {
            return Err(Error::Config("dataset.clients must be >= 1".into()));
        }
        match d.kind {
            DatasetKind::Rotated => {
                if d.clusters == 0 || d.clusters > d.clients {
                    return Err(Error::Config(format!(
                        "dataset.clusters must be in [1, clients], got {}",
                        d.clusters
                    )));
                }
                if d.angles.len() != d.clusters {
                    return Err(Error::Config(format!(
                        "dataset.angles has {} entries for {} clusters",
                        d.angles.len(),
                        d.clusters
                    )));
                }
            }
            DatasetKind::Backdoor => {
                if d.clients % 3 != 0 {
                    return Err(Error::Config(format!(
                        "backdoor dataset needs clients divisible by 3, got {}",
                        d.clients
                    )));
                }
            }
        }
        if d.train_per_client == 0 {
            return Err(Error::Config("dataset.train_per_client must be >= 1".into()));
        }

        let f = &self.federation;
        if !(f.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "federation.epsilon must be positive, got {}",
                f.epsilon
            )));
        }
        if f.global_epochs == 0 {
            return Err(Error::Config("federation.global_epochs must be >= 1".into()));
        }
        if let Participation::Count(k) = f.participation.0 {
            if k == 0 || k > d.clients {
                return Err(Error::Config(format!(
                    "federation.participation must be in [1, clients], got {k}"
                )));
            }
        }
        if !(f.projection_ratio > 0.0 && f.projection_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "federation.projection_ratio must be in (0, 1], got {}",
                f.projection_ratio
            )));
        }
        if !(f.subsample_fraction > 0.0 && f.subsample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "federation.subsample_fraction must be in (0, 1], got {}",
                f.subsample_fraction
            )));
        }
        if f.subsample_cap == 0 {
            return Err(Error::Config("federation.subsample_cap must be >= 1".into()));
        }
        if !(f.sinkhorn_reg > 0.0) {
            return Err(Error::Config(format!(
                "federation.sinkhorn_reg must be positive, got {}",
                f.sinkhorn_reg
            )));
        }
        self.train_config().validate().map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::Config(format!("model section: {msg}")),
            other => other,
        })?;
        Ok(())
    }

    pub fn build_partition(&self) -> Result<ClientPartition> {
        let d = &self.dataset;
        match d.kind {
            DatasetKind::Rotated => synthdata::make_rotated_clusters(
                d.clients,
                d.clusters,
                d.classes,
                d.train_per_client,
                &d.angles,
                d.noise,
                self.seed,
            ),
            DatasetKind::Backdoor => synthdata::make_backdoor_partition(
                d.clients,
                d.train_per_client,
                d.patch_strength,
                self.seed,
            ),
        }
    }

    pub fn model_layout(&self, input_dim: usize, num_classes: usize) -> ModelLayout {
        ModelLayout {
            input_dim,
            hidden_dims: self.model.hidden_dims.clone(),
            embed_dim: self.model.embed_dim,
            num_classes,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.model.lr,
            momentum: self.model.momentum,
            weight_decay: self.model.weight_decay,
            local_epochs: self.federation.local_epochs,
            batch_size: self.model.batch_size,
        }
    }

    pub fn backend(&self) -> TransportBackend {
        match self.federation.backend {
            BackendKind::Exact => TransportBackend::Exact,
            BackendKind::Sinkhorn => TransportBackend::Sinkhorn {
                reg: self.federation.sinkhorn_reg,
                max_iter: self.federation.sinkhorn_max_iter,
                tol: self.federation.sinkhorn_tol,
            },
        }
    }

    pub fn participation(&self) -> Participation {
        self.federation.participation.0
    }

    pub fn subsample_settings(&self) -> SubsampleSettings {
        SubsampleSettings {
            fraction: self.federation.subsample_fraction,
            cap: self.federation.subsample_cap,
            floor: self.federation.subsample_floor,
        }
    }

    pub fn baseline_kind(&self) -> Option<BaselineKind> {
        match self.federation.method {
            MethodKind::Emdcfl => None,
            MethodKind::Oracle => Some(BaselineKind::Oracle),
            MethodKind::Fedavg => Some(BaselineKind::FedAvg),
            MethodKind::ParamDistance => Some(BaselineKind::ParamDistance {
                threshold: self.federation.param_distance_threshold,
            }),
        }
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string
/// (so `backend=sinkhorn` works without quoting).
fn parse_raw_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    if let Ok(table) = toml::from_str::<toml::Table>(&probe) {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}

fn set_path(root: &mut toml::Value, path: &str, new: toml::Value) -> Result<()> {
    if path.is_empty() {
        return Err(Error::Config("override key must be nonempty".into()));
    }
    let parts: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), new);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_scenario() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.dataset.clients, 16);
        assert_eq!(cfg.federation.epsilon, 0.025);
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let err = ExperimentConfig::from_toml_str("[federation]\nepsilonn = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epsilonn"), "{msg}");
        assert!(msg.contains("line"), "expected a line reference: {msg}");
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = ExperimentConfig::load(None, &["federation.epsilon=0.05".into()]).unwrap();
        assert_eq!(cfg.federation.epsilon, 0.05);
        let cfg = ExperimentConfig::load(None, &["federation.backend=sinkhorn".into()]).unwrap();
        assert_eq!(cfg.federation.backend, BackendKind::Sinkhorn);
        let cfg = ExperimentConfig::load(None, &["federation.participation=8".into()]).unwrap();
        assert_eq!(cfg.participation(), Participation::Count(8));
        let cfg =
            ExperimentConfig::load(None, &["dataset.angles=[-3.0, -1.0, 1.0, 3.0]".into()])
                .unwrap();
        assert_eq!(cfg.dataset.angles, vec![-3.0, -1.0, 1.0, 3.0]);
    }

    #[test]
    fn unknown_override_key_fails() {
        let err = ExperimentConfig::load(None, &["federation.nope=1".into()]).unwrap_err();
        assert!(err.to_string().contains("nope"));
        assert!(ExperimentConfig::load(None, &["broken".into()]).is_err());
    }

    #[test]
    fn validation_catches_inconsistencies() {
        assert!(ExperimentConfig::load(None, &["dataset.clusters=20".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["federation.epsilon=0".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["federation.participation=17".into()]).is_err());
        assert!(ExperimentConfig::load(
            None,
            &["dataset.kind=backdoor".into(), "dataset.clients=16".into()]
        )
        .is_err());
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::load(
            None,
            &[
                "federation.participation=8".into(),
                "federation.backend=sinkhorn".into(),
                "seed=9".into(),
            ],
        )
        .unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
