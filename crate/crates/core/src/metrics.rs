//! Clustering and downstream-performance metrics plus pairwise distance
//! diagnostics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autonet::{self, ModelParams};
use crate::error::{Error, Result};
use crate::synthdata::ClientPartition;

/// A hard clustering of `C` clients, ids contiguous from 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
}

impl ClusterAssignment {
    /// Normalises arbitrary labels to contiguous first-occurrence ids.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &l in raw {
            let next = map.len();
            labels.push(*map.entry(l).or_insert(next));
        }
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }
}

/// Adjusted Rand index (pair-counting form with expected-index correction).
pub fn ari(pred: &ClusterAssignment, truth: &ClusterAssignment) -> Result<f64> {
    let n = pred.labels.len();
    if n != truth.labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "assignments cover {n} vs {} clients",
            truth.labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty assignments".into()));
    }

    let kp = pred.num_clusters();
    let kt = truth.num_clusters();
    let mut contingency = vec![vec![0usize; kt]; kp];
    let mut rows = vec![0usize; kp];
    let mut cols = vec![0usize; kt];
    for (&p, &t) in pred.labels.iter().zip(truth.labels.iter()) {
        contingency[p][t] += 1;
        rows[p] += 1;
        cols[t] += 1;
    }

    let comb2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = contingency
        .iter()
        .flat_map(|r| r.iter())
        .map(|&c| comb2(c))
        .sum();
    let sum_rows: f64 = rows.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = cols.iter().map(|&c| comb2(c)).sum();
    let n_pairs = comb2(n);

    let expected = sum_rows * sum_cols / n_pairs;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < f64::EPSILON {
        // Degenerate partitions (both trivial); identical by construction.
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// Arithmetic mean and minimum of per-client accuracies.
pub fn accuracy_summary(per_client: &[f64]) -> Result<(f64, f64)> {
    if per_client.is_empty() {
        return Err(Error::InvalidArgument("no per-client accuracies".into()));
    }
    let avg = per_client.iter().sum::<f64>() / per_client.len() as f64;
    let worst = per_client.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((avg, worst))
}

/// Four C×C matrices for qualitative heatmap comparison. All are symmetric
/// with zero diagonals; the EMD matrix symmetrises the directed calibrated
/// entries by elementwise max (matching the AND adjacency rule) and clips
/// negatives to zero for display.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub emd: Vec<Vec<Option<f64>>>,
    pub param_l2: Vec<Vec<f64>>,
    pub grad_cosine: Vec<Vec<f64>>,
    pub principal_angle: Vec<Vec<f64>>,
}

/// Computes the diagnostics from a completed run: final post-update client
/// parameters, full-batch gradients at the shared initial model, and
/// truncated SVD bases of the raw client inputs.
pub fn distance_diagnostics(
    partition: &ClientPartition,
    client_params: &[ModelParams],
    initial_params: &ModelParams,
    w: &[Vec<Option<f64>>],
    weight_decay: f64,
) -> Result<DiagnosticsReport> {
    let c = partition.clients.len();
    if client_params.len() != c || w.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "diagnostics need {c} clients of parameters and a {c}x{c} distance matrix"
        )));
    }

    let mut emd = vec![vec![None; c]; c];
    for i in 0..c {
        emd[i][i] = Some(0.0);
        for j in 0..c {
            if i == j {
                continue;
            }
            let sym = match (w[i][j], w[j][i]) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (Some(a), None) | (None, Some(a)) => Some(a),
                (None, None) => None,
            };
            emd[i][j] = sym.map(|v| v.max(0.0));
        }
    }

    let flats: Vec<Vec<f64>> = client_params.iter().map(|p| p.flatten()).collect();
    let mut param_l2 = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in (i + 1)..c {
            let d = l2_distance(&flats[i], &flats[j]);
            param_l2[i][j] = d;
            param_l2[j][i] = d;
        }
    }

    let grads: Vec<Vec<f64>> = partition
        .clients
        .iter()
        .map(|cl| {
            autonet::loss_and_grad(
                initial_params,
                &cl.train.x.view(),
                &cl.train.y,
                weight_decay,
            )
            .map(|(_, g)| g.flatten())
        })
        .collect::<Result<_>>()?;
    let mut grad_cosine = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in (i + 1)..c {
            let d = cosine_dissimilarity(&grads[i], &grads[j]);
            grad_cosine[i][j] = d;
            grad_cosine[j][i] = d;
        }
    }

    let d_in = partition.input_dim;
    let p = d_in.saturating_sub(1).clamp(1, 3);
    let bases: Vec<Array2<f64>> = partition
        .clients
        .iter()
        .map(|cl| top_right_singular_vectors(&cl.train.x, p))
        .collect();
    let mut principal_angle = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in (i + 1)..c {
            let d = subspace_distance(&bases[i], &bases[j]);
            principal_angle[i][j] = d;
            principal_angle[j][i] = d;
        }
    }

    Ok(DiagnosticsReport {
        emd,
        param_l2,
        grad_cosine,
        principal_angle,
    })
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cosine_dissimilarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-300 && nb < 1e-300 {
        return 0.0;
    }
    if na < 1e-300 || nb < 1e-300 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

/// Top-`p` right singular vectors of `x` as columns, via the eigensystem of
/// the small Gram matrix `xᵀx`.
fn top_right_singular_vectors(x: &Array2<f64>, p: usize) -> Array2<f64> {
    let d = x.ncols();
    let gram = x.t().dot(x);
    let (eigvals, eigvecs) = jacobi_eigen(&gram);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let p = p.min(d);
    let mut basis = Array2::zeros((d, p));
    for (col, &idx) in order[..p].iter().enumerate() {
        basis.column_mut(col).assign(&eigvecs.column(idx));
    }
    basis
}

/// Mean `1 - cos(theta_k)` over the principal angles between two bases.
fn subspace_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let overlap = a.t().dot(b);
    let gram = overlap.t().dot(&overlap);
    let (eigvals, _) = jacobi_eigen(&gram);
    let p = gram.nrows();
    let mut vals: Vec<f64> = eigvals
        .iter()
        .map(|&l| l.max(0.0).sqrt().clamp(0.0, 1.0))
        .collect();
    vals.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
    vals.iter().take(p).map(|s| 1.0 - s).sum::<f64>() / p as f64
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix. Returns
/// (eigenvalues, eigenvectors-as-columns).
fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = a.nrows();
    let mut m = a.clone();
    let mut v: Array2<f64> = Array2::eye(d);
    let scale = a.iter().fold(0.0f64, |acc, &x| acc.max(x.abs())).max(1.0);

    for _sweep in 0..64 {
        let mut off = 0.0f64;
        for p in 0..d {
            for q in (p + 1)..d {
                off = off.max(m[[p, q]].abs());
            }
        }
        if off < 1e-13 * scale {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..d {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..d {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..d {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals = (0..d).map(|i| m[[i, i]]).collect();
    (eigvals, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ari_perfect_match_up_to_relabelling() {
        let truth = ClusterAssignment::from_labels(&[0, 0, 1, 1, 2, 2]);
        let pred = ClusterAssignment::from_labels(&[5, 5, 9, 9, 0, 0]);
        assert!((ari(&pred, &truth).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ari_all_in_one_vs_two_clusters_is_zero() {
        let truth = ClusterAssignment::from_labels(&[0, 0, 1, 1]);
        let pred = ClusterAssignment::from_labels(&[0, 0, 0, 0]);
        assert!(ari(&pred, &truth).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ari_reaches_documented_lower_bound() {
        let truth = ClusterAssignment::from_labels(&[0, 0, 1, 1]);
        let pred = ClusterAssignment::from_labels(&[0, 1, 0, 1]);
        assert!((ari(&pred, &truth).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn ari_validates_lengths() {
        let a = ClusterAssignment::from_labels(&[0, 1]);
        let b = ClusterAssignment::from_labels(&[0, 1, 2]);
        assert!(ari(&a, &b).is_err());
    }

    #[test]
    fn ari_is_permutation_invariant() {
        let truth = ClusterAssignment::from_labels(&[0, 0, 1, 1, 2, 2, 2]);
        let pred_a = ClusterAssignment::from_labels(&[0, 1, 1, 1, 2, 2, 0]);
        let pred_b = ClusterAssignment::from_labels(&[2, 0, 0, 0, 1, 1, 2]);
        let va = ari(&pred_a, &truth).unwrap();
        let vb = ari(&pred_b, &truth).unwrap();
        assert!((va - vb).abs() < 1e-12);
        assert!(va <= 1.0);
    }

    #[test]
    fn accuracy_summary_basics() {
        assert_eq!(accuracy_summary(&[0.9, 0.9]).unwrap(), (0.9, 0.9));
        let (avg, worst) = accuracy_summary(&[1.0, 0.5]).unwrap();
        assert!((avg - 0.75).abs() < 1e-12);
        assert_eq!(worst, 0.5);
        assert!(accuracy_summary(&[]).is_err());
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, vecs) = jacobi_eigen(&a);
        let mut sorted = vals.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((sorted[0] - 1.0).abs() < 1e-10);
        assert!((sorted[1] - 3.0).abs() < 1e-10);
        // columns orthonormal
        let g = vecs.t().dot(&vecs);
        assert!((g[[0, 0]] - 1.0).abs() < 1e-10);
        assert!(g[[0, 1]].abs() < 1e-10);
    }

    #[test]
    fn subspace_distance_separates_rotated_lines() {
        let along_x = array![[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]];
        let along_y = array![[0.0, 1.0], [0.0, 2.0], [0.0, -1.0]];
        let bx = top_right_singular_vectors(&along_x, 1);
        let by = top_right_singular_vectors(&along_y, 1);
        assert!(subspace_distance(&bx, &bx) < 1e-10);
        assert!(subspace_distance(&bx, &by) > 0.9);
    }

    #[test]
    fn cosine_dissimilarity_edge_cases() {
        assert_eq!(cosine_dissimilarity(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(cosine_dissimilarity(&[0.0], &[1.0]), 1.0);
        assert!(cosine_dissimilarity(&[1.0, 0.0], &[1.0, 0.0]).abs() < 1e-12);
        assert!((cosine_dissimilarity(&[1.0, 0.0], &[-1.0, 0.0]) - 2.0).abs() < 1e-12);
    }
}
