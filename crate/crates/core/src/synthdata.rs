//! Deterministic generators for cluster-structured federated datasets.
//!
//! Two families mirror the induced-clustering and backdoor-feature setups at
//! desk scale:
//!
//! - rotated clusters: 2-D Gaussian class blobs, one rotation angle per
//!   cluster. Class means sit at distinct radii so no nontrivial rotation
//!   maps the constellation onto itself, which keeps distinct clusters
//!   genuinely far apart in input space while labels stay invariant.
//! - backdoor partition: the same blob constellation plus one extra
//!   coordinate. One third of clients is clean, one third carries the extra
//!   coordinate correlated with the label, one third has shifted class means.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, Tag};

/// Internal class count of the backdoor construction.
pub const BACKDOOR_CLASSES: usize = 2;
/// Gaussian noise on the backdoor coordinate.
pub const BACKDOOR_COORD_NOISE: f64 = 0.5;
/// Blob noise of the backdoor construction.
pub const BACKDOOR_BLOB_NOISE: f64 = 0.3;
/// Translation of the distinct-distribution subset's class means. The x
/// offset lands one shifted blob on top of a clean blob of another class,
/// so a single global model cannot resolve every subset by position alone.
pub const BACKDOOR_SHIFT_X: f64 = 5.0;
pub const BACKDOOR_SHIFT_Y: f64 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Marks a dataset whose `coord` column is a planted label-correlated
/// feature; carried so the feature can be re-pointed at test time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackdoorSpec {
    pub coord: usize,
    pub strength: f64,
    pub noise_sd: f64,
    pub num_classes: usize,
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub split: Split,
    pub backdoor: Option<BackdoorSpec>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// One client's local data.
#[derive(Clone, Debug)]
pub struct ClientData {
    pub id: usize,
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test: LabeledDataset,
    pub n_train: usize,
}

/// A full federation: per-client splits plus the ground-truth clustering.
#[derive(Clone, Debug)]
pub struct ClientPartition {
    pub clients: Vec<ClientData>,
    pub ground_truth: Vec<usize>,
    pub nominal_clusters: usize,
    pub num_classes: usize,
    pub input_dim: usize,
}

/// Blob mean of a class: distinct radii break rotational symmetry of the
/// constellation, so every nonzero rotation moves the input distribution.
fn class_mean(class: usize, classes: usize) -> (f64, f64) {
    let radius = if classes <= 1 {
        1.0
    } else {
        1.0 + 3.0 * class as f64 / (classes as f64 - 1.0)
    };
    let angle = std::f64::consts::TAU * class as f64 / classes as f64;
    (radius * angle.cos(), radius * angle.sin())
}

/// 80/10/10 split sizes given the train size.
fn split_sizes(n_train: usize) -> (usize, usize, usize) {
    let total = (n_train as f64 / 0.8).round() as usize;
    let n_val = ((total as f64) * 0.1).round() as usize;
    let n_test = total.saturating_sub(n_train + n_val);
    (n_train, n_val.max(1), n_test.max(1))
}

fn dataset_slices(
    x: Array2<f64>,
    y: Vec<usize>,
    n_train: usize,
    n_val: usize,
    backdoor: Option<BackdoorSpec>,
) -> (LabeledDataset, LabeledDataset, LabeledDataset) {
    let take = |range: std::ops::Range<usize>, split: Split| LabeledDataset {
        x: x.slice(ndarray::s![range.clone(), ..]).to_owned(),
        y: y[range].to_vec(),
        split,
        backdoor,
    };
    let n = y.len();
    (
        take(0..n_train, Split::Train),
        take(n_train..n_train + n_val, Split::Val),
        take(n_train + n_val..n, Split::Test),
    )
}

/// Rotated-blob federation: clients split round-robin across `k` clusters
/// (`cluster = client mod k`); within a cluster all clients draw iid from the
/// same rotated mixture and labels are invariant to the rotation.
pub fn make_rotated_clusters(
    c: usize,
    k: usize,
    classes: usize,
    n_per_client: usize,
    angles_deg: &[f64],
    noise: f64,
    seed: u64,
) -> Result<ClientPartition> {
    if c == 0 || k == 0 || k > c {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= clusters <= clients, got {k} clusters for {c} clients"
        )));
    }
    if angles_deg.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{} angles for {k} clusters",
            angles_deg.len()
        )));
    }
    if classes == 0 || n_per_client == 0 {
        return Err(Error::InvalidArgument(
            "classes and samples per client must be positive".into(),
        ));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be nonnegative, got {noise}"
        )));
    }

    let (n_train, n_val, n_test) = split_sizes(n_per_client);
    let total = n_train + n_val + n_test;

    let mut clients = Vec::with_capacity(c);
    let mut ground_truth = Vec::with_capacity(c);
    for id in 0..c {
        let cluster = id % k;
        ground_truth.push(cluster);
        let theta = angles_deg[cluster].to_radians();
        let (cos_t, sin_t) = (theta.cos(), theta.sin());

        let mut rng = seeds::rng(seed, Tag::ClientData, &[id as u64]);
        let mut x = Array2::zeros((total, 2));
        let mut y = Vec::with_capacity(total);
        for i in 0..total {
            let class = i % classes;
            let (mx, my) = class_mean(class, classes);
            let px = mx + noise * rng.sample::<f64, _>(StandardNormal);
            let py = my + noise * rng.sample::<f64, _>(StandardNormal);
            x[[i, 0]] = cos_t * px - sin_t * py;
            x[[i, 1]] = sin_t * px + cos_t * py;
            y.push(class);
        }
        let (train, val, test) = dataset_slices(x, y, n_train, n_val, None);
        clients.push(ClientData {
            id,
            train,
            val,
            test,
            n_train,
        });
    }

    Ok(ClientPartition {
        clients,
        ground_truth,
        nominal_clusters: k,
        num_classes: classes,
        input_dim: 2,
    })
}

/// Backdoor-intensity value of a class, spread evenly over `[-1, 1]`.
fn backdoor_value(class: usize, classes: usize) -> f64 {
    if classes <= 1 {
        0.0
    } else {
        2.0 * class as f64 / (classes as f64 - 1.0) - 1.0
    }
}

/// Backdoor federation of three equal subsets: clean clients, clients whose
/// extra coordinate is correlated with the label (strength `patch_strength`),
/// and clients with translated class means. Ground truth has 3 clusters.
pub fn make_backdoor_partition(
    c: usize,
    n_per_client: usize,
    patch_strength: f64,
    seed: u64,
) -> Result<ClientPartition> {
    if c == 0 || c % 3 != 0 {
        return Err(Error::InvalidArgument(format!(
            "backdoor partition needs a client count divisible by 3, got {c}"
        )));
    }
    if n_per_client == 0 {
        return Err(Error::InvalidArgument(
            "samples per client must be positive".into(),
        ));
    }
    if !patch_strength.is_finite() || patch_strength < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "patch strength must be finite and nonnegative, got {patch_strength}"
        )));
    }

    let classes = BACKDOOR_CLASSES;
    let spec = BackdoorSpec {
        coord: 2,
        strength: patch_strength,
        noise_sd: BACKDOOR_COORD_NOISE,
        num_classes: classes,
    };
    let per_subset = c / 3;
    let (n_train, n_val, n_test) = split_sizes(n_per_client);
    let total = n_train + n_val + n_test;

    let mut clients = Vec::with_capacity(c);
    let mut ground_truth = Vec::with_capacity(c);
    for id in 0..c {
        let subset = id / per_subset;
        ground_truth.push(subset);
        let mut rng = seeds::rng(seed, Tag::ClientData, &[id as u64]);
        let mut x = Array2::zeros((total, 3));
        let mut y = Vec::with_capacity(total);
        for i in 0..total {
            let class = i % classes;
            let (mut mx, mut my) = class_mean(class, classes);
            if subset == 2 {
                mx += BACKDOOR_SHIFT_X;
                my += BACKDOOR_SHIFT_Y;
            }
            x[[i, 0]] = mx + BACKDOOR_BLOB_NOISE * rng.sample::<f64, _>(StandardNormal);
            x[[i, 1]] = my + BACKDOOR_BLOB_NOISE * rng.sample::<f64, _>(StandardNormal);
            let signal = if subset == 1 {
                patch_strength * backdoor_value(class, classes)
            } else {
                0.0
            };
            x[[i, 2]] = signal + BACKDOOR_COORD_NOISE * rng.sample::<f64, _>(StandardNormal);
            y.push(class);
        }
        let (train, val, test) = dataset_slices(x, y, n_train, n_val, Some(spec));
        clients.push(ClientData {
            id,
            train,
            val,
            test,
            n_train,
        });
    }

    Ok(ClientPartition {
        clients,
        ground_truth,
        nominal_clusters: 3,
        num_classes: classes,
        input_dim: 3,
    })
}

/// Re-points the backdoor coordinate of every sample at a uniformly random
/// wrong class, leaving labels unchanged. Models that learned to rely on the
/// coordinate misclassify; models that ignored it are unaffected.
pub fn flip_backdoor(test: &LabeledDataset, seed: u64) -> Result<LabeledDataset> {
    let spec = test.backdoor.ok_or_else(|| {
        Error::InvalidArgument("dataset has no backdoor coordinate to flip".into())
    })?;
    let mut rng = seeds::rng(seed, Tag::BackdoorFlip, &[]);
    let mut out = test.clone();
    for (i, &label) in test.y.iter().enumerate() {
        let wrong = if spec.num_classes <= 1 {
            label
        } else {
            let draw = rng.random_range(0..spec.num_classes - 1);
            if draw >= label {
                draw + 1
            } else {
                draw
            }
        };
        let signal = spec.strength * backdoor_value(wrong, spec.num_classes);
        out.x[[i, spec.coord]] = signal + spec.noise_sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(out)
}

/// One row per sample: features..., label, split, client_id.
pub fn export_csv<W: std::io::Write>(partition: &ClientPartition, out: &mut W) -> Result<()> {
    let d = partition.input_dim;
    let header: Vec<String> = (0..d)
        .map(|i| format!("f{i}"))
        .chain(["label".into(), "split".into(), "client_id".into()])
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for client in &partition.clients {
        for ds in [&client.train, &client.val, &client.test] {
            let split = match ds.split {
                Split::Train => "train",
                Split::Val => "val",
                Split::Test => "test",
            };
            for (row, &label) in ds.x.rows().into_iter().zip(&ds.y) {
                let feats: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                writeln!(out, "{},{label},{split},{}", feats.join(","), client.id)?;
            }
        }
    }
    Ok(())
}
