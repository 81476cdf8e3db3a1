//! Server/client orchestration: one-shot pairwise EMD measurement,
//! epsilon-threshold adjacency, neighbourhood clustering, weighted FedAvg
//! aggregation, and baseline runners.
//!
//! Per round: sample participants, run local updates in parallel, measure
//! every not-yet-measured pair that involves a participant (both sides must
//! have trained at least once, so measurements always compare trained
//! models), recluster from the adjacency matrix, aggregate per cluster and
//! broadcast. Each unordered pair's two directed entries are written exactly
//! once per run; once all pairs are measured the rounds reduce to training
//! and aggregation within fixed clusters.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autonet::{self, ModelParams, TrainConfig};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, ClusterAssignment};
use crate::projection::{self, ProjectionMatrix, ProjectionSpec};
use crate::seeds::{self, Tag};
use crate::synthdata::{ClientData, LabeledDataset};
use crate::transport::{self, DiscreteDistribution};

/// Which W1 backend measurements use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransportBackend {
    Exact,
    Sinkhorn { reg: f64, max_iter: usize, tol: f64 },
}

/// How many clients participate per round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Participation {
    All,
    Count(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsampleSettings {
    pub fraction: f64,
    pub cap: usize,
    pub floor: usize,
}

/// Everything a pair measurement needs besides the two client records.
#[derive(Clone, Copy, Debug)]
pub struct MeasureSettings {
    pub backend: TransportBackend,
    pub subsample: SubsampleSettings,
    pub projection_ratio: f64,
    pub epsilon: f64,
    pub rescale_epsilon: bool,
    pub base_seed: u64,
}

impl MeasureSettings {
    /// Threshold actually compared against, optionally rescaled by the
    /// expected JL contraction `sqrt(out_dim / in_dim)`.
    pub fn effective_epsilon(&self, in_dim: usize) -> Result<f64> {
        if !self.rescale_epsilon {
            return Ok(self.epsilon);
        }
        let spec = ProjectionSpec::from_ratio(0, in_dim, self.projection_ratio)?;
        Ok(self.epsilon * (spec.out_dim as f64 / in_dim as f64).sqrt())
    }
}

/// A client's local state as the server simulation sees it.
#[derive(Clone, Debug)]
pub struct ClientRecord {
    pub id: usize,
    pub data: ClientData,
    pub params: ModelParams,
    /// Reference distance from the most recent measurement this client took
    /// part in (computed under that pair's shared projection).
    pub tau: Option<f64>,
}

/// Server-side matrices and per-cluster models.
#[derive(Clone, Debug)]
pub struct ServerState {
    pub w: Vec<Vec<Option<f64>>>,
    pub m: Vec<Vec<bool>>,
    pub cluster_models: BTreeMap<usize, ModelParams>,
    pub round: usize,
}

impl ServerState {
    /// Identity adjacency, empty distance matrix.
    pub fn new(clients: usize) -> Self {
        let mut m = vec![vec![false; clients]; clients];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = true;
        }
        Self {
            w: vec![vec![None; clients]; clients],
            m,
            cluster_models: BTreeMap::new(),
            round: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasureOutcome {
    Measured,
    AlreadyMeasured,
}

/// Baselines sharing the training loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaselineKind {
    Oracle,
    FedAvg,
    ParamDistance { threshold: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Mode {
    EmdCfl,
    Baseline(BaselineKind),
}

/// Uniform random participant subset, deterministic per `(seed, round)`.
pub fn sample_participants(
    clients: usize,
    participation: Participation,
    round: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    match participation {
        Participation::All => Ok((0..clients).collect()),
        Participation::Count(k) => {
            if k == 0 || k > clients {
                return Err(Error::InvalidArgument(format!(
                    "cannot sample {k} of {clients} clients"
                )));
            }
            let mut rng = seeds::rng(seed, Tag::Participants, &[round as u64]);
            let mut picked = transport::sample_without_replacement(&mut rng, clients, k);
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

fn raw_distribution(ds: &LabeledDataset) -> Result<DiscreteDistribution> {
    DiscreteDistribution::uniform(ds.x.clone())
}

fn embed_project(
    lens: &ModelParams,
    points: &DiscreteDistribution,
    r: &ProjectionMatrix,
) -> Result<DiscreteDistribution> {
    let z = autonet::forward_embed(lens, &points.points().view())?;
    let zp = projection::project(&z.view(), r)?;
    DiscreteDistribution::uniform(zp)
}

fn w1(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    backend: TransportBackend,
) -> Result<f64> {
    let cost = transport::cost_matrix(a, b)?;
    let plan = match backend {
        TransportBackend::Exact => transport::emd_exact(a, b, &cost)?,
        TransportBackend::Sinkhorn { reg, max_iter, tol } => {
            transport::sinkhorn(a, b, &cost, reg, max_iter, tol)?
        }
    };
    Ok(plan.value)
}

fn client_subsample(
    client: &ClientRecord,
    split: &LabeledDataset,
    split_tag: u64,
    settings: &MeasureSettings,
) -> Result<DiscreteDistribution> {
    let raw = raw_distribution(split)?;
    let sub_seed = seeds::derive(
        settings.base_seed,
        Tag::Subsample,
        &[client.id as u64, split_tag],
    );
    transport::subsample(
        &raw,
        settings.subsample.fraction,
        settings.subsample.cap,
        settings.subsample.floor,
        sub_seed,
    )
}

/// Reference distance `tau = W1` between the client's own projected train and
/// validation embeddings, both under its current model and the given shared
/// projection.
pub fn reference_distance(
    client: &ClientRecord,
    r: &ProjectionMatrix,
    settings: &MeasureSettings,
) -> Result<f64> {
    if client.data.val.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "client {} has a degenerate validation split ({} samples)",
            client.id,
            client.data.val.len()
        )));
    }
    let train_sub = client_subsample(client, &client.data.train, 0, settings)?;
    let val_sub = client_subsample(client, &client.data.val, 1, settings)?;
    let z_train = embed_project(&client.params, &train_sub, r)?;
    let z_val = embed_project(&client.params, &val_sub, r)?;
    w1(&z_train, &z_val, settings.backend)
}

/// The numbers one pair exchange produces.
#[derive(Clone, Copy, Debug)]
pub struct PairMeasurement {
    pub w_ij: f64,
    pub w_ji: f64,
    pub tau_i: f64,
    pub tau_j: f64,
}

/// Pure computation of a pair's two calibrated directed distances.
///
/// Both clients derive the shared projection from the pair seed, exchange
/// embedding models, and submit projected subsampled embeddings:
/// `W[i][j] = W1(Z_i|i R, Z_j|i R) - tau_i` compares the two datasets under
/// client i's lens; `W[j][i] = W1(Z_j|i R, Z_j|j R) - tau_j` compares the two
/// lenses on client j's data.
pub fn measure_pair_values(
    ci: &ClientRecord,
    cj: &ClientRecord,
    settings: &MeasureSettings,
) -> Result<PairMeasurement> {
    let embed_dim = ci.params.embed_dim();
    if embed_dim != cj.params.embed_dim() {
        return Err(Error::DimensionMismatch(
            "clients disagree on the embedding dimension".into(),
        ));
    }
    let r_seed = seeds::pair_seed(settings.base_seed, ci.id, cj.id);
    let spec = ProjectionSpec::from_ratio(r_seed, embed_dim, settings.projection_ratio)?;
    let r = projection::make_projection(&spec);

    let tau_i = reference_distance(ci, &r, settings)?;
    let tau_j = reference_distance(cj, &r, settings)?;

    let sub_i = client_subsample(ci, &ci.data.train, 0, settings)?;
    let sub_j = client_subsample(cj, &cj.data.train, 0, settings)?;

    let z_ii = embed_project(&ci.params, &sub_i, &r)?;
    let z_ji = embed_project(&ci.params, &sub_j, &r)?;
    let z_jj = embed_project(&cj.params, &sub_j, &r)?;

    let w_ij = w1(&z_ii, &z_ji, settings.backend)? - tau_i;
    let w_ji = w1(&z_ji, &z_jj, settings.backend)? - tau_j;
    Ok(PairMeasurement {
        w_ij,
        w_ji,
        tau_i,
        tau_j,
    })
}

fn apply_measurement(
    state: &mut ServerState,
    clients: &mut [ClientRecord],
    i: usize,
    j: usize,
    values: PairMeasurement,
    effective_epsilon: f64,
) {
    state.w[i][j] = Some(values.w_ij);
    state.w[j][i] = Some(values.w_ji);
    let adjacent = values.w_ij < effective_epsilon && values.w_ji < effective_epsilon;
    state.m[i][j] = adjacent;
    state.m[j][i] = adjacent;
    clients[i].tau = Some(values.tau_i);
    clients[j].tau = Some(values.tau_j);
}

/// Measures one unordered pair, writing both directed entries and the
/// adjacency bit. Re-measuring an already measured pair is a logged no-op.
pub fn measure_pair(
    state: &mut ServerState,
    clients: &mut [ClientRecord],
    i: usize,
    j: usize,
    settings: &MeasureSettings,
) -> Result<MeasureOutcome> {
    if i == j {
        return Err(Error::InvalidArgument("cannot measure a client against itself".into()));
    }
    if state.w[i][j].is_some() || state.w[j][i].is_some() {
        log::debug!("pair ({i}, {j}) already measured; skipping");
        return Ok(MeasureOutcome::AlreadyMeasured);
    }
    let values = measure_pair_values(&clients[i], &clients[j], settings)?;
    let eps = settings.effective_epsilon(clients[i].params.embed_dim())?;
    apply_measurement(state, clients, i, j, values, eps);
    Ok(MeasureOutcome::Measured)
}

/// Clusters clients whose adjacency rows are identical as sets; distinct
/// rows form distinct clusters. Ids are contiguous in first-occurrence order.
pub fn neighbourhoods(m: &[Vec<bool>]) -> Vec<usize> {
    let mut seen: std::collections::HashMap<&[bool], usize> = std::collections::HashMap::new();
    let mut pi = Vec::with_capacity(m.len());
    for row in m {
        let next = seen.len();
        pi.push(*seen.entry(row.as_slice()).or_insert(next));
    }
    pi
}

/// Dataset-size-weighted elementwise average `theta = Σ (N_c / N) theta_c`.
pub fn aggregate(models: &[(&ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("aggregate needs at least one model".into()))?;
    if models.iter().any(|(p, _)| !p.same_shape(first)) {
        return Err(Error::DimensionMismatch(
            "aggregate got models of different shapes".into(),
        ));
    }
    let total: usize = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::InvalidArgument(
            "aggregate weights sum to zero".into(),
        ));
    }
    let mut acc = vec![0.0f64; first.num_params()];
    for (params, n) in models {
        let w = *n as f64 / total as f64;
        for (a, p) in acc.iter_mut().zip(params.flatten()) {
            *a += w * p;
        }
    }
    let mut out = (*first).clone();
    out.assign_flat(&acc)?;
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochClientMetric {
    pub client_id: usize,
    pub cluster_id: usize,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub participants: Vec<usize>,
    pub pi: Vec<usize>,
    pub ari: f64,
    pub clients: Vec<EpochClientMetric>,
}

/// One pair measurement event (for the one-shot audit trail).
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct MeasureEvent {
    pub epoch: usize,
    pub a: usize,
    pub b: usize,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub seed: u64,
    pub method: String,
    pub ground_truth: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
    pub final_w: Vec<Vec<Option<f64>>>,
    pub final_m: Vec<Vec<bool>>,
    pub final_pi: Vec<usize>,
    pub final_ari: f64,
    pub num_clusters: usize,
    pub avg_accuracy: f64,
    pub worst_accuracy: f64,
    pub effective_epsilon: f64,
    pub initial_params: ModelParams,
    /// Post-local-update parameters from each client's latest trained round.
    pub post_update_params: Vec<ModelParams>,
    /// Final per-client parameters (after the last broadcast).
    pub client_params: Vec<ModelParams>,
    pub cluster_models: BTreeMap<usize, ModelParams>,
    pub measurements: Vec<MeasureEvent>,
}

/// Runs the one-shot EMD clustering experiment described by the config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_loop(cfg, Mode::EmdCfl)
}

/// Runs a baseline sharing the same training loop: `oracle` fixes clusters to
/// the ground truth, `fedavg` trains one global cluster, `param_distance`
/// re-derives adjacency each round by thresholding L2 distances between
/// flattened parameters.
pub fn run_baseline(kind: BaselineKind, cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    run_loop(cfg, Mode::Baseline(kind))
}

/// Dispatches on the configured method.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    match cfg.baseline_kind() {
        None => run_experiment(cfg),
        Some(kind) => run_baseline(kind, cfg),
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::EmdCfl => "emdcfl",
        Mode::Baseline(BaselineKind::Oracle) => "oracle",
        Mode::Baseline(BaselineKind::FedAvg) => "fedavg",
        Mode::Baseline(BaselineKind::ParamDistance { .. }) => "param_distance",
    }
}

fn run_loop(cfg: &ExperimentConfig, mode: Mode) -> Result<RunArtifacts> {
    cfg.validate()?;
    let partition = cfg.build_partition()?;
    let c = partition.clients.len();
    let seed = cfg.seed;
    let layout = cfg.model_layout(partition.input_dim, partition.num_classes);
    let initial_params = ModelParams::init(&layout, seeds::derive(seed, Tag::ModelInit, &[]))?;
    let train_cfg: TrainConfig = cfg.train_config();
    let settings = MeasureSettings {
        backend: cfg.backend(),
        subsample: cfg.subsample_settings(),
        projection_ratio: cfg.federation.projection_ratio,
        epsilon: cfg.federation.epsilon,
        rescale_epsilon: cfg.federation.rescale_epsilon,
        base_seed: seed,
    };
    let effective_epsilon = settings.effective_epsilon(cfg.model.embed_dim)?;

    let ground_truth = partition.ground_truth.clone();
    let truth_assignment = ClusterAssignment::from_labels(&ground_truth);

    let mut clients: Vec<ClientRecord> = partition
        .clients
        .iter()
        .map(|data| ClientRecord {
            id: data.id,
            data: data.clone(),
            params: initial_params.clone(),
            tau: None,
        })
        .collect();
    let mut state = ServerState::new(c);
    let mut trained = vec![false; c];
    let mut post_update_params: Vec<ModelParams> = vec![initial_params.clone(); c];
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(cfg.federation.global_epochs);
    let mut measurements: Vec<MeasureEvent> = Vec::new();

    for round in 1..=cfg.federation.global_epochs {
        state.round = round;
        let participants = sample_participants(c, cfg.participation(), round, seed)?;

        // Local updates run in parallel; results are merged by index, so the
        // outcome does not depend on completion order.
        let updated: Vec<(usize, ModelParams)> = participants
            .par_iter()
            .map(|&cid| {
                let record = &clients[cid];
                let update_seed =
                    seeds::derive(seed, Tag::ClientUpdate, &[round as u64, cid as u64]);
                autonet::client_update(
                    &record.params,
                    &record.data.train.x.view(),
                    &record.data.train.y,
                    &train_cfg,
                    update_seed,
                )
                .map(|p| (cid, p))
            })
            .collect::<Result<_>>()?;
        for (cid, params) in updated {
            post_update_params[cid] = params.clone();
            clients[cid].params = params;
            trained[cid] = true;
        }

        match mode {
            Mode::EmdCfl => {
                // One-shot measurement: every unmeasured pair touching a
                // participant, both sides trained. Computed in parallel,
                // merged by a single writer.
                let in_round = {
                    let mut flags = vec![false; c];
                    for &p in &participants {
                        flags[p] = true;
                    }
                    flags
                };
                let mut candidates = Vec::new();
                for i in 0..c {
                    for j in (i + 1)..c {
                        if state.w[i][j].is_none()
                            && trained[i]
                            && trained[j]
                            && (in_round[i] || in_round[j])
                        {
                            candidates.push((i, j));
                        }
                    }
                }
                let results: Vec<(usize, usize, PairMeasurement)> = candidates
                    .par_iter()
                    .map(|&(i, j)| {
                        measure_pair_values(&clients[i], &clients[j], &settings)
                            .map(|v| (i, j, v))
                    })
                    .collect::<Result<_>>()?;
                for (i, j, values) in results {
                    apply_measurement(&mut state, &mut clients, i, j, values, effective_epsilon);
                    measurements.push(MeasureEvent {
                        epoch: round,
                        a: i,
                        b: j,
                    });
                }
            }
            Mode::Baseline(BaselineKind::ParamDistance { threshold }) => {
                // Repeated clustering from scratch on current parameters.
                let flats: Vec<Vec<f64>> = clients.iter().map(|r| r.params.flatten()).collect();
                for i in 0..c {
                    for j in (i + 1)..c {
                        let dist = flats[i]
                            .iter()
                            .zip(&flats[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt();
                        let adjacent = dist < threshold;
                        state.m[i][j] = adjacent;
                        state.m[j][i] = adjacent;
                        state.w[i][j] = Some(dist);
                        state.w[j][i] = Some(dist);
                    }
                }
            }
            Mode::Baseline(BaselineKind::Oracle) | Mode::Baseline(BaselineKind::FedAvg) => {}
        }

        let pi: Vec<usize> = match mode {
            Mode::EmdCfl | Mode::Baseline(BaselineKind::ParamDistance { .. }) => {
                neighbourhoods(&state.m)
            }
            Mode::Baseline(BaselineKind::Oracle) => ground_truth.clone(),
            Mode::Baseline(BaselineKind::FedAvg) => vec![0; c],
        };

        // Aggregate this round's participants per cluster and broadcast to
        // every member; clusters without participants keep their models.
        let num_clusters = pi.iter().max().map_or(0, |&k| k + 1);
        let mut cluster_models = BTreeMap::new();
        for k in 0..num_clusters {
            let members: Vec<usize> = (0..c).filter(|&i| pi[i] == k).collect();
            let contributors: Vec<(&ModelParams, usize)> = members
                .iter()
                .filter(|&&i| participants.binary_search(&i).is_ok())
                .map(|&i| (&clients[i].params, clients[i].data.n_train))
                .collect();
            if contributors.is_empty() {
                cluster_models.insert(k, clients[members[0]].params.clone());
                continue;
            }
            let model = aggregate(&contributors)?;
            for &i in &members {
                clients[i].params = model.clone();
            }
            cluster_models.insert(k, model);
        }
        state.cluster_models = cluster_models;

        let accuracies: Vec<EpochClientMetric> = clients
            .par_iter()
            .map(|record| {
                autonet::evaluate(
                    &record.params,
                    &record.data.test.x.view(),
                    &record.data.test.y,
                )
                .map(|acc| EpochClientMetric {
                    client_id: record.id,
                    cluster_id: pi[record.id],
                    test_accuracy: acc,
                })
            })
            .collect::<Result<_>>()?;
        let ari = metrics::ari(&ClusterAssignment::from_labels(&pi), &truth_assignment)?;
        epochs.push(EpochRecord {
            epoch: round,
            participants,
            pi,
            ari,
            clients: accuracies,
        });
    }

    let last = epochs.last().expect("at least one epoch");
    let per_client: Vec<f64> = last.clients.iter().map(|m| m.test_accuracy).collect();
    let (avg_accuracy, worst_accuracy) = metrics::accuracy_summary(&per_client)?;
    let final_pi = last.pi.clone();
    let num_clusters = final_pi.iter().max().map_or(0, |&k| k + 1);

    Ok(RunArtifacts {
        seed,
        method: mode_name(mode).to_string(),
        ground_truth,
        final_ari: last.ari,
        final_pi,
        num_clusters,
        avg_accuracy,
        worst_accuracy,
        effective_epsilon,
        epochs,
        final_w: state.w,
        final_m: state.m,
        initial_params,
        post_update_params,
        client_params: clients.into_iter().map(|r| r.params).collect(),
        cluster_models: state.cluster_models,
        measurements,
    })
}

/// Gradient at the shared initial model, flattened; used by diagnostics.
pub fn initial_gradient(cfg: &ExperimentConfig) -> Result<(ModelParams, Array2<f64>)> {
    let partition = cfg.build_partition()?;
    let layout = cfg.model_layout(partition.input_dim, partition.num_classes);
    let initial = ModelParams::init(&layout, seeds::derive(cfg.seed, Tag::ModelInit, &[]))?;
    let n = initial.num_params();
    let mut grads = Array2::zeros((partition.clients.len(), n));
    for (i, client) in partition.clients.iter().enumerate() {
        let (_, g) = autonet::loss_and_grad(
            &initial,
            &client.train.x.view(),
            &client.train.y,
            cfg.model.weight_decay,
        )?;
        for (dst, src) in grads.row_mut(i).iter_mut().zip(g.flatten()) {
            *dst = src;
        }
    }
    Ok((initial, grads))
}
