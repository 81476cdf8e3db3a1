//! Deterministic artifact emission and reading.
//!
//! A run directory holds:
//!
//! - `metrics.csv` — `epoch,client_id,cluster_id,test_accuracy`
//! - `clusters.json` — per-epoch assignment and ARI against the ground truth
//! - `distances.json` — final W (null marks unmeasured entries) and M
//! - `summary.json` — final metrics plus the effective config
//! - `params.json` — named-tensor dumps of the initial model and each
//!   client's latest post-update parameters
//!
//! Every file is a pure function of `(config, seed)`: maps are ordered,
//! floats print shortest-roundtrip, so identical runs produce identical
//! bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autonet::{self, ModelParams, NamedTensor};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::federation::RunArtifacts;
use crate::metrics::DiagnosticsReport;

pub const METRICS_CSV: &str = "metrics.csv";
pub const CLUSTERS_JSON: &str = "clusters.json";
pub const DISTANCES_JSON: &str = "distances.json";
pub const SUMMARY_JSON: &str = "summary.json";
pub const PARAMS_JSON: &str = "params.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClustersFile {
    pub ground_truth: Vec<usize>,
    pub epochs: Vec<ClustersEpoch>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClustersEpoch {
    pub epoch: usize,
    pub participants: Vec<usize>,
    pub pi: Vec<usize>,
    pub ari: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistancesFile {
    pub epsilon: f64,
    pub w: Vec<Vec<Option<f64>>>,
    pub m: Vec<Vec<bool>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryFile {
    pub seed: u64,
    pub method: String,
    pub final_ari: f64,
    pub num_clusters: usize,
    pub avg_accuracy: f64,
    pub worst_accuracy: f64,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamsFile {
    pub initial: BTreeMap<String, NamedTensor>,
    /// Client id -> latest post-update parameters.
    pub clients: BTreeMap<String, BTreeMap<String, NamedTensor>>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the full artifact set of a completed run.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, run: &RunArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut csv = String::from("epoch,client_id,cluster_id,test_accuracy\n");
    for epoch in &run.epochs {
        for m in &epoch.clients {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                epoch.epoch, m.client_id, m.cluster_id, m.test_accuracy
            ));
        }
    }
    write_bytes(&dir.join(METRICS_CSV), csv.as_bytes())?;

    let clusters = ClustersFile {
        ground_truth: run.ground_truth.clone(),
        epochs: run
            .epochs
            .iter()
            .map(|e| ClustersEpoch {
                epoch: e.epoch,
                participants: e.participants.clone(),
                pi: e.pi.clone(),
                ari: e.ari,
            })
            .collect(),
    };
    write_json(&dir.join(CLUSTERS_JSON), &clusters)?;

    let distances = DistancesFile {
        epsilon: run.effective_epsilon,
        w: run.final_w.clone(),
        m: run.final_m.clone(),
    };
    write_json(&dir.join(DISTANCES_JSON), &distances)?;

    let summary = SummaryFile {
        seed: run.seed,
        method: run.method.clone(),
        final_ari: run.final_ari,
        num_clusters: run.num_clusters,
        avg_accuracy: run.avg_accuracy,
        worst_accuracy: run.worst_accuracy,
        config: cfg.clone(),
    };
    write_json(&dir.join(SUMMARY_JSON), &summary)?;

    let params = ParamsFile {
        initial: run.initial_params.to_named_tensors(),
        clients: run
            .post_update_params
            .iter()
            .enumerate()
            .map(|(i, p)| (i.to_string(), p.to_named_tensors()))
            .collect(),
    };
    write_json(&dir.join(PARAMS_JSON), &params)?;

    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<SummaryFile> {
    read_json(&dir.join(SUMMARY_JSON))
}

pub fn read_distances(dir: &Path) -> Result<DistancesFile> {
    read_json(&dir.join(DISTANCES_JSON))
}

pub fn read_clusters(dir: &Path) -> Result<ClustersFile> {
    read_json(&dir.join(CLUSTERS_JSON))
}

/// Reads the per-client post-update parameters back into model values.
pub fn read_client_params(dir: &Path) -> Result<Vec<ModelParams>> {
    let file: ParamsFile = read_json(&dir.join(PARAMS_JSON))?;
    let mut out = Vec::with_capacity(file.clients.len());
    for i in 0..file.clients.len() {
        let tensors = file
            .clients
            .get(&i.to_string())
            .ok_or_else(|| Error::Serialization(format!("params.json misses client {i}")))?;
        out.push(autonet::params_from_named_tensors(tensors)?);
    }
    Ok(out)
}

fn matrix_csv<T: Copy, F: Fn(T) -> String>(matrix: &[Vec<T>], fmt: F) -> String {
    let mut text = String::new();
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|&v| fmt(v)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    text
}

/// Writes the diagnostics report: one JSON plus one CSV per matrix.
pub fn write_diagnostics(dir: &Path, report: &DiagnosticsReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join(DIAGNOSTICS_JSON), report)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    let plain = |v: f64| format!("{v}");
    write_bytes(
        &dir.join("emd.csv"),
        matrix_csv(&report.emd, opt).as_bytes(),
    )?;
    write_bytes(
        &dir.join("param_l2.csv"),
        matrix_csv(&report.param_l2, plain).as_bytes(),
    )?;
    write_bytes(
        &dir.join("grad_cosine.csv"),
        matrix_csv(&report.grad_cosine, plain).as_bytes(),
    )?;
    write_bytes(
        &dir.join("principal_angle.csv"),
        matrix_csv(&report.principal_angle, plain).as_bytes(),
    )?;
    Ok(())
}

/// One sweep point for `sweep.csv`.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: String,
    pub final_ari: f64,
    pub avg_accuracy: f64,
    pub worst_accuracy: f64,
}

pub fn write_sweep_csv(dir: &Path, rows: &[SweepRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("value,final_ari,avg_accuracy,worst_accuracy\n");
    for row in rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.value, row.final_ari, row.avg_accuracy, row.worst_accuracy
        ));
    }
    write_bytes(&dir.join(SWEEP_CSV), csv.as_bytes())
}

/// Filesystem-safe directory name for a sweep value.
pub fn sweep_dir_name(value: &str) -> PathBuf {
    let safe: String = value
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    PathBuf::from(safe)
}
