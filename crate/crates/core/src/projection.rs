//! Seeded Gaussian random projections.
//!
//! Entries are iid `N(0, 1/out_dim)` drawn from a ChaCha12 stream, so a
//! [`ProjectionSpec`] regenerates the identical matrix everywhere it is
//! evaluated. Two clients of a measurement pair derive the same spec from the
//! experiment seed and their unordered pair, which keeps the projection
//! unknown to the server.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Everything needed to regenerate a projection matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProjectionSpec {
    pub seed: u64,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ProjectionSpec {
    pub fn new(seed: u64, in_dim: usize, out_dim: usize) -> Result<Self> {
        if out_dim == 0 || out_dim > in_dim {
            return Err(Error::InvalidArgument(format!(
                "projection out_dim must satisfy 1 <= out_dim <= in_dim, got {out_dim} for in_dim {in_dim}"
            )));
        }
        Ok(Self {
            seed,
            in_dim,
            out_dim,
        })
    }

    /// Spec for a target dimension given as a ratio of the input dimension,
    /// rounded to the nearest dimension and clamped to `[1, in_dim]`.
    pub fn from_ratio(seed: u64, in_dim: usize, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "projection ratio must be in (0, 1], got {ratio}"
            )));
        }
        let out_dim = ((ratio * in_dim as f64).round() as usize).clamp(1, in_dim);
        Self::new(seed, in_dim, out_dim)
    }
}

/// A realised `in_dim × out_dim` Gaussian projection.
#[derive(Clone, Debug)]
pub struct ProjectionMatrix {
    entries: Array2<f64>,
}

impl ProjectionMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn in_dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.entries.ncols()
    }

    /// Identity pass-through of matching shape; test hook for exercising the
    /// measurement path without distortion.
    pub fn identity(dim: usize) -> Self {
        Self {
            entries: Array2::eye(dim),
        }
    }
}

/// Deterministically realises the Gaussian matrix for a spec.
pub fn make_projection(spec: &ProjectionSpec) -> ProjectionMatrix {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let scale = 1.0 / (spec.out_dim as f64).sqrt();
    let entries = Array2::from_shape_fn((spec.in_dim, spec.out_dim), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    });
    ProjectionMatrix { entries }
}

/// Projects row vectors: `Z · R`.
pub fn project(z: &ArrayView2<f64>, r: &ProjectionMatrix) -> Result<Array2<f64>> {
    if z.ncols() != r.in_dim() {
        return Err(Error::DimensionMismatch(format!(
            "points have {} dims but projection expects {}",
            z.ncols(),
            r.in_dim()
        )));
    }
    Ok(z.dot(&r.entries))
}
