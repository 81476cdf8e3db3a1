//! Log-domain Sinkhorn scaling for entropically regularised transport.
//!
//! The scaling vectors are kept as potentials `f`, `g` with the implied plan
//! `γ_ij = exp((f_i + g_j - C_ij) / reg)`, so small regularisation strengths
//! never underflow. Atoms with zero weight keep their potential at `-∞` and
//! receive no mass.

use ndarray::{Array1, Array2};

use super::TransportPlan;
use crate::error::Result;

pub(super) fn solve(
    a: &Array1<f64>,
    b: &Array1<f64>,
    cost: &Array2<f64>,
    reg: f64,
    max_iter: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let n = a.len();
    let m = b.len();
    let log_a: Vec<f64> = a.iter().map(|&w| safe_ln(w)).collect();
    let log_b: Vec<f64> = b.iter().map(|&w| safe_ln(w)).collect();

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    for (fi, &la) in f.iter_mut().zip(&log_a) {
        if la == f64::NEG_INFINITY {
            *fi = f64::NEG_INFINITY;
        }
    }
    for (gj, &lb) in g.iter_mut().zip(&log_b) {
        if lb == f64::NEG_INFINITY {
            *gj = f64::NEG_INFINITY;
        }
    }

    let mut scratch = vec![0.0f64; n.max(m)];
    let mut converged = false;

    for _ in 0..max_iter {
        // f_i = reg * (ln a_i - lse_j((g_j - C_ij) / reg))
        for i in 0..n {
            if log_a[i] == f64::NEG_INFINITY {
                continue;
            }
            let row = cost.row(i);
            for j in 0..m {
                scratch[j] = (g[j] - row[j]) / reg;
            }
            f[i] = reg * (log_a[i] - logsumexp(&scratch[..m]));
        }
        // g_j = reg * (ln b_j - lse_i((f_i - C_ij) / reg))
        for j in 0..m {
            if log_b[j] == f64::NEG_INFINITY {
                continue;
            }
            for i in 0..n {
                scratch[i] = (f[i] - cost[[i, j]]) / reg;
            }
            g[j] = reg * (log_b[j] - logsumexp(&scratch[..n]));
        }

        if marginal_violation(&f, &g, cost, a, b, reg) < tol {
            converged = true;
            break;
        }
    }

    if !converged {
        log::warn!("sinkhorn hit the iteration cap ({max_iter}) before reaching tol {tol}");
    }

    let mut coupling = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            coupling[[i, j]] = plan_entry(f[i], g[j], cost[[i, j]], reg);
        }
    }
    let value = (&coupling * cost).sum();
    Ok(TransportPlan {
        coupling,
        value,
        converged,
    })
}

fn safe_ln(w: f64) -> f64 {
    if w > 0.0 {
        w.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn plan_entry(f: f64, g: f64, c: f64, reg: f64) -> f64 {
    if f == f64::NEG_INFINITY || g == f64::NEG_INFINITY {
        0.0
    } else {
        ((f + g - c) / reg).exp()
    }
}

/// L1 violation of both marginal constraints for the implied plan.
fn marginal_violation(
    f: &[f64],
    g: &[f64],
    cost: &Array2<f64>,
    a: &Array1<f64>,
    b: &Array1<f64>,
    reg: f64,
) -> f64 {
    let n = f.len();
    let m = g.len();
    let mut col_sums = vec![0.0f64; m];
    let mut err = 0.0;
    for i in 0..n {
        let mut row_sum = 0.0;
        let row = cost.row(i);
        for j in 0..m {
            let p = plan_entry(f[i], g[j], row[j], reg);
            row_sum += p;
            col_sums[j] += p;
        }
        err += (row_sum - a[i]).abs();
    }
    for j in 0..m {
        err += (col_sums[j] - b[j]).abs();
    }
    err
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn logsumexp_handles_neg_infinity() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        let v = logsumexp(&[0.0, f64::NEG_INFINITY]);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn matches_reference_symmetric_instance() {
        // Hand-checkable 2x2 instance with reg = 1; plan entries follow the
        // Gibbs kernel symmetry.
        let a = array![0.5, 0.5];
        let b = array![0.5, 0.5];
        let cost = array![[0.0, 1.0], [1.0, 0.0]];
        let plan = solve(&a, &b, &cost, 1.0, 1000, 1e-12).unwrap();
        assert!(plan.converged);
        assert!((plan.coupling[[0, 0]] - plan.coupling[[1, 1]]).abs() < 1e-9);
        assert!((plan.coupling[[0, 1]] - plan.coupling[[1, 0]]).abs() < 1e-9);
        let row: f64 = plan.coupling.row(0).sum();
        assert!((row - 0.5).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_atoms_receive_no_mass() {
        let a = array![1.0, 0.0];
        let b = array![0.5, 0.5];
        let cost = array![[0.0, 1.0], [1.0, 0.0]];
        let plan = solve(&a, &b, &cost, 0.1, 5000, 1e-10).unwrap();
        assert!(plan.coupling.row(1).iter().all(|&p| p == 0.0));
        let total: f64 = plan.coupling.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
