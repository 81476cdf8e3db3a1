//! Discrete optimal transport between empirical distributions.
//!
//! Distances are 1-Wasserstein values under a Euclidean ground cost. Two
//! backends are provided: an exact transportation-simplex solver
//! ([`emd_exact`]) and entropically regularised Sinkhorn iterations
//! ([`sinkhorn`]) whose reported value excludes the entropy term, so both
//! backends are interchangeable under a single distance threshold.
//!
//! All operations are pure functions of their inputs and safe to call
//! concurrently.

mod exact;
mod sinkhorn;

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seeds::{self, Tag};

/// Tolerance on the weight normalisation invariant.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// An empirical distribution: `n` points in `d` dimensions with nonnegative
/// weights summing to one.
#[derive(Clone, Debug)]
pub struct DiscreteDistribution {
    points: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteDistribution {
    pub fn new(points: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::InvalidDistribution(
                "distribution needs at least one point".into(),
            ));
        }
        if points.nrows() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDistribution(
                "point coordinates must be finite".into(),
            ));
        }
        if weights.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        Ok(Self { points, weights })
    }

    /// Uniform weights over the given points.
    pub fn uniform(points: Array2<f64>) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::InvalidDistribution(
                "distribution needs at least one point".into(),
            ));
        }
        let w = Array1::from_elem(n, 1.0 / n as f64);
        Self::new(points, w)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // n >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }
}

/// Pairwise ground costs between a source and a target point set.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    costs: Array2<f64>,
}

impl CostMatrix {
    pub fn costs(&self) -> &Array2<f64> {
        &self.costs
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.costs.nrows(), self.costs.ncols())
    }
}

/// A feasible coupling together with its total transport cost.
///
/// Row sums match the source weights, column sums the target weights and
/// `value` is `Σ_ij coupling[i][j] * cost[i][j]`. `converged` is only ever
/// false for Sinkhorn plans returned after hitting the iteration cap.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub coupling: Array2<f64>,
    pub value: f64,
    pub converged: bool,
}

/// Euclidean (L2) distances between every source point and every target point.
pub fn cost_matrix(a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<CostMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "source points have {} dims, target points {}",
            a.dim(),
            b.dim()
        )));
    }
    let mut costs = Array2::zeros((a.len(), b.len()));
    for (i, p) in a.points.rows().into_iter().enumerate() {
        for (j, q) in b.points.rows().into_iter().enumerate() {
            let d2: f64 = p
                .iter()
                .zip(q.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            costs[[i, j]] = d2.sqrt();
        }
    }
    Ok(CostMatrix { costs })
}

fn check_problem(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostMatrix,
) -> Result<()> {
    if cost.shape() != (a.len(), b.len()) {
        return Err(Error::DimensionMismatch(format!(
            "cost matrix is {:?}, expected ({}, {})",
            cost.shape(),
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Exact 1-Wasserstein distance via the transportation simplex.
///
/// Returns an optimal extreme-point plan; `value` is the exact `W_1`.
pub fn emd_exact(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostMatrix,
) -> Result<TransportPlan> {
    check_problem(a, b, cost)?;
    let coupling = exact::solve(
        a.weights.as_slice().expect("contiguous"),
        b.weights.as_slice().expect("contiguous"),
        &cost.costs,
    )?;
    let value = (&coupling * &cost.costs).sum();
    Ok(TransportPlan {
        coupling,
        value,
        converged: true,
    })
}

/// Entropically regularised transport cost via log-domain Sinkhorn scaling.
///
/// Iterations run in the log domain from the start, so small `reg` does not
/// underflow the scaling vectors. Iterations stop once the L1 marginal
/// violation of the implied plan drops below `tol`; if the cap is reached
/// first the best iterate is returned with `converged = false`. The reported
/// `value` is the plan cost `Σ γC` with the entropy term excluded, so it
/// approaches the exact `W_1` as `reg → 0`.
pub fn sinkhorn(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: &CostMatrix,
    reg: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    check_problem(a, b, cost)?;
    if !(reg > 0.0) || !reg.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sinkhorn regularisation must be positive, got {reg}"
        )));
    }
    sinkhorn::solve(&a.weights, &b.weights, &cost.costs, reg, max_iter, tol)
}

/// Uniformly subsamples `k = max(floor, min(⌈fraction·n⌉, cap))` points
/// without replacement (clamped to `n`), reweighting uniformly to `1/k`.
/// Deterministic for a given seed.
pub fn subsample(
    dist: &DiscreteDistribution,
    fraction: f64,
    cap: usize,
    floor: usize,
    seed: u64,
) -> Result<DiscreteDistribution> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subsample fraction must be in (0, 1], got {fraction}"
        )));
    }
    if cap == 0 {
        return Err(Error::InvalidArgument("subsample cap must be >= 1".into()));
    }
    let n = dist.len();
    let by_rule = ((fraction * n as f64).ceil() as usize).min(cap);
    let k = floor.max(by_rule).min(n).max(1);

    let mut rng = seeds::rng(seed, Tag::Subsample, &[]);
    let mut indices = sample_without_replacement(&mut rng, n, k);
    indices.sort_unstable();

    let d = dist.dim();
    let mut points = Array2::zeros((k, d));
    for (row, &idx) in indices.iter().enumerate() {
        points.row_mut(row).assign(&dist.points.row(idx));
    }
    DiscreteDistribution::uniform(points)
}

/// Partial Fisher-Yates draw of `k` distinct indices from `0..n`.
pub(crate) fn sample_without_replacement<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn point_mass(coords: &[f64]) -> DiscreteDistribution {
        let d = coords.len();
        DiscreteDistribution::uniform(Array2::from_shape_vec((1, d), coords.to_vec()).unwrap())
            .unwrap()
    }

    fn uniform_1d(xs: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::uniform(Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap())
            .unwrap()
    }

    #[test]
    fn distribution_rejects_bad_weights() {
        let pts = array![[0.0], [1.0]];
        assert!(DiscreteDistribution::new(pts.clone(), array![0.5, 0.6]).is_err());
        assert!(DiscreteDistribution::new(pts.clone(), array![-0.5, 1.5]).is_err());
        assert!(DiscreteDistribution::new(pts, array![0.5]).is_err());
        assert!(DiscreteDistribution::uniform(Array2::zeros((0, 2))).is_err());
    }

    #[test]
    fn distribution_rejects_nonfinite_points() {
        let pts = array![[f64::NAN], [1.0]];
        assert!(DiscreteDistribution::new(pts, array![0.5, 0.5]).is_err());
    }

    #[test]
    fn cost_matrix_identity_case() {
        let a = point_mass(&[0.0, 0.0]);
        let c = cost_matrix(&a, &a).unwrap();
        assert_eq!(c.shape(), (1, 1));
        assert_eq!(c.costs()[[0, 0]], 0.0);
    }

    #[test]
    fn cost_matrix_3_4_5() {
        let a = point_mass(&[0.0, 0.0]);
        let b = point_mass(&[3.0, 4.0]);
        let c = cost_matrix(&a, &b).unwrap();
        assert!((c.costs()[[0, 0]] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn cost_matrix_1d_values() {
        let a = uniform_1d(&[0.0, 1.0]);
        let b = uniform_1d(&[2.0, 3.0]);
        let c = cost_matrix(&a, &b).unwrap();
        assert_eq!(c.costs(), &array![[2.0, 3.0], [1.0, 2.0]]);
    }

    #[test]
    fn cost_matrix_dimension_mismatch() {
        let a = point_mass(&[0.0, 0.0]);
        let b = point_mass(&[1.0]);
        assert!(matches!(
            cost_matrix(&a, &b),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn emd_identical_distributions_is_zero() {
        let a = uniform_1d(&[0.0, 1.0, 2.0]);
        let c = cost_matrix(&a, &a).unwrap();
        let plan = emd_exact(&a, &a, &c).unwrap();
        assert!(plan.value.abs() < 1e-12);
    }

    #[test]
    fn emd_point_masses() {
        let a = point_mass(&[0.0, 0.0]);
        let b = point_mass(&[3.0, 4.0]);
        let c = cost_matrix(&a, &b).unwrap();
        let plan = emd_exact(&a, &b, &c).unwrap();
        assert!((plan.value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn emd_two_point_shift() {
        // Brute force over the two matchings: monotone gives (2 + 2) / 2.
        let a = uniform_1d(&[0.0, 1.0]);
        let b = uniform_1d(&[2.0, 3.0]);
        let c = cost_matrix(&a, &b).unwrap();
        let plan = emd_exact(&a, &b, &c).unwrap();
        assert!((plan.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn emd_cost_shape_mismatch() {
        let a = uniform_1d(&[0.0, 1.0]);
        let b = uniform_1d(&[2.0]);
        let c = cost_matrix(&a, &a).unwrap();
        assert!(emd_exact(&a, &b, &c).is_err());
    }

    #[test]
    fn sinkhorn_point_masses_forced_plan() {
        let a = point_mass(&[0.0, 0.0]);
        let b = point_mass(&[3.0, 4.0]);
        let c = cost_matrix(&a, &b).unwrap();
        for reg in [0.01, 0.1, 1.0] {
            let plan = sinkhorn(&a, &b, &c, reg, 1000, 1e-9).unwrap();
            assert!((plan.value - 5.0).abs() < 1e-9, "reg {reg}: {}", plan.value);
        }
    }

    #[test]
    fn sinkhorn_identical_point_masses() {
        let a = point_mass(&[1.0]);
        let c = cost_matrix(&a, &a).unwrap();
        let plan = sinkhorn(&a, &a, &c, 0.5, 1000, 1e-9).unwrap();
        assert!(plan.value.abs() < 1e-9);
    }

    #[test]
    fn sinkhorn_close_to_exact_at_small_reg() {
        let a = uniform_1d(&[0.0, 1.0]);
        let b = uniform_1d(&[2.0, 3.0]);
        let c = cost_matrix(&a, &b).unwrap();
        let plan = sinkhorn(&a, &b, &c, 0.01, 20_000, 1e-10).unwrap();
        assert!(plan.converged);
        assert!((plan.value - 2.0).abs() < 0.05, "value {}", plan.value);
    }

    #[test]
    fn sinkhorn_rejects_nonpositive_reg() {
        let a = point_mass(&[0.0]);
        let c = cost_matrix(&a, &a).unwrap();
        assert!(sinkhorn(&a, &a, &c, 0.0, 10, 1e-9).is_err());
    }

    #[test]
    fn sinkhorn_flags_nonconvergence() {
        let a = uniform_1d(&[0.0, 1.0, 5.0]);
        let b = uniform_1d(&[2.0, 3.0, 9.0]);
        let c = cost_matrix(&a, &b).unwrap();
        let plan = sinkhorn(&a, &b, &c, 0.005, 2, 1e-12).unwrap();
        assert!(!plan.converged);
    }

    #[test]
    fn subsample_paper_rule() {
        // lesser of 10% and the cap
        let pts = Array2::zeros((10_000, 2));
        let d = DiscreteDistribution::uniform(pts).unwrap();
        let s = subsample(&d, 0.1, 512, 1, 7).unwrap();
        assert_eq!(s.len(), 512);

        let pts = Array2::zeros((100, 2));
        let d = DiscreteDistribution::uniform(pts).unwrap();
        let s = subsample(&d, 0.1, 512, 1, 7).unwrap();
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn subsample_clamps_to_n() {
        let pts = Array2::zeros((5, 2));
        let d = DiscreteDistribution::uniform(pts).unwrap();
        for floor in [1, 5, 64] {
            let s = subsample(&d, 0.1, 512, floor, 7).unwrap();
            assert!(s.len() <= 5);
            if floor >= 5 {
                assert_eq!(s.len(), 5);
            }
        }
    }

    #[test]
    fn subsample_floor_applies() {
        let pts = Array2::zeros((200, 2));
        let d = DiscreteDistribution::uniform(pts).unwrap();
        let s = subsample(&d, 0.1, 512, 64, 7).unwrap();
        assert_eq!(s.len(), 64);
        assert!((s.weights()[0] - 1.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn subsample_is_deterministic() {
        let mut pts = Array2::zeros((50, 1));
        for i in 0..50 {
            pts[[i, 0]] = i as f64;
        }
        let d = DiscreteDistribution::uniform(pts).unwrap();
        let s1 = subsample(&d, 0.2, 512, 1, 99).unwrap();
        let s2 = subsample(&d, 0.2, 512, 1, 99).unwrap();
        assert_eq!(s1.points(), s2.points());
        let s3 = subsample(&d, 0.2, 512, 1, 100).unwrap();
        assert_ne!(s1.points(), s3.points());
    }

    #[test]
    fn subsample_rejects_bad_fraction() {
        let d = point_mass(&[0.0]);
        assert!(subsample(&d, 0.0, 512, 1, 7).is_err());
        assert!(subsample(&d, 1.5, 512, 1, 7).is_err());
        assert!(subsample(&d, 0.5, 0, 1, 7).is_err());
    }
}
