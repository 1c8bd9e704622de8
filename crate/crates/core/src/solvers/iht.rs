use std::cmp::Ordering;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{relative_residual, ReconstructionResult};
use crate::error::{Error, Result};

pub const IHT_MAX_ITERS: usize = 300;
pub const IHT_TOLERANCE: f64 = 1e-6;

/// Step-size multiplier applied to the adaptive step.
const STEP_SCALE: f64 = 1.0;
/// Backtracking safeguard: shrink factor and slack used when the support moves.
const SHRINK: f64 = 2.0;
const SLACK: f64 = 0.01;

/// Indices of the `k` largest-magnitude entries, ties broken by lower index.
fn top_k(v: &DVector<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        let cmp = |a: &usize, b: &usize| {
            v[*b]
                .abs()
                .partial_cmp(&v[*a].abs())
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        };
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// `H_k`: keeps the `k` largest-magnitude entries and zeroes the rest.
pub fn hard_threshold(v: &DVector<f64>, k: usize) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for i in top_k(v, k) {
        out[i] = v[i];
    }
    out
}

fn support(v: &DVector<f64>) -> Vec<usize> {
    v.iter()
        .enumerate()
        .filter(|(_, x)| **x != 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Normalized iterative hard thresholding with oracle sparsity `k`:
///
/// ```text
/// x ← H_k(x + μ Aᵀ(y − A x)),   μ = ‖g_Γ‖² / ‖A_Γ g_Γ‖²
/// ```
///
/// where `Γ` is the current support. When the support changes the step is
/// halved until it satisfies the usual stability bound. Returns the iterate
/// with the smallest residual seen.
pub fn iht_solve(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    k: usize,
    max_iters: usize,
) -> Result<ReconstructionResult> {
    let (n, big_n) = a.shape();
    if k == 0 || k > n {
        return Err(Error::InvalidSparsity { k, limit: n });
    }
    if y.len() != n {
        return Err(Error::InvalidDims(format!(
            "y has length {}, expected {n}",
            y.len()
        )));
    }

    let start = Instant::now();
    let y_norm = y.norm();
    let mut x = DVector::<f64>::zeros(big_n);
    let mut best = x.clone();
    let mut best_res = relative_residual(a, &x, y);
    let mut iterations = 0;

    let g0 = a.tr_mul(y);
    let mut active = top_k(&g0, k);

    while iterations < max_iters && best_res >= IHT_TOLERANCE {
        iterations += 1;
        let residual = y - a * &x;
        let g = a.tr_mul(&residual);

        let mut g_active = DVector::zeros(big_n);
        for &i in &active {
            g_active[i] = g[i];
        }
        let num = g_active.norm_squared();
        let den = (a * &g_active).norm_squared();
        if num == 0.0 || den == 0.0 {
            break;
        }
        let mut mu = STEP_SCALE * num / den;

        let mut next = hard_threshold(&(&x + &g * mu), k);
        let mut next_support = support(&next);
        if next_support != active {
            // Guard against overshooting when the support moves.
            for _ in 0..60 {
                let diff = &next - &x;
                let ad = (a * &diff).norm_squared();
                let omega = if ad > 0.0 {
                    (1.0 - SLACK) * diff.norm_squared() / ad
                } else {
                    f64::INFINITY
                };
                if mu <= omega {
                    break;
                }
                mu /= SHRINK * (1.0 - SLACK);
                next = hard_threshold(&(&x + &g * mu), k);
                next_support = support(&next);
            }
        }
        x = next;
        if !next_support.is_empty() {
            active = next_support;
        }

        let res = if y_norm == 0.0 {
            x.norm()
        } else {
            relative_residual(a, &x, y)
        };
        if res < best_res {
            best_res = res;
            best.copy_from(&x);
        }
    }

    Ok(ReconstructionResult {
        residual_feasibility: relative_residual(a, &best, y),
        x_hat: best,
        outer_iterations: iterations,
        inner_iterations_total: iterations,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{make_instance, Suite};
    use nalgebra::dvector;

    #[test]
    fn threshold_keeps_largest() {
        let v = dvector![3.0, -1.0, 0.5, 2.0];
        assert_eq!(hard_threshold(&v, 2), dvector![3.0, 0.0, 0.0, 2.0]);
        assert_eq!(hard_threshold(&v, 0), DVector::zeros(4));
        assert_eq!(hard_threshold(&v, 4), v);
    }

    #[test]
    fn threshold_ties_prefer_lower_index() {
        let v = dvector![1.0, -1.0, 1.0];
        assert_eq!(hard_threshold(&v, 2), dvector![1.0, -1.0, 0.0]);
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = DMatrix::<f64>::identity(6, 6);
        let x = dvector![0.0, 2.0, 0.0, 0.0, -1.0, 0.0];
        let res = iht_solve(&a, &x, 2, IHT_MAX_ITERS).unwrap();
        assert_eq!(res.outer_iterations, 1);
        assert_eq!(res.x_hat, x);
    }

    #[test]
    fn rejects_bad_sparsity() {
        let a = DMatrix::<f64>::identity(3, 3);
        let y = dvector![1.0, 0.0, 0.0];
        assert!(matches!(
            iht_solve(&a, &y, 0, 10),
            Err(Error::InvalidSparsity { .. })
        ));
        assert!(matches!(
            iht_solve(&a, &y, 4, 10),
            Err(Error::InvalidSparsity { .. })
        ));
    }

    #[test]
    fn recovers_easy_instance() {
        let inst = make_instance(200, 0.5, 0.05, Suite::UseRademacher, 2).unwrap();
        let res = iht_solve(&inst.a, &inst.y, inst.k, IHT_MAX_ITERS).unwrap();
        let err = (&res.x_hat - &inst.x).norm_squared() / inst.x.norm_squared();
        assert!(err < 1e-4, "relative error {err}");
    }
}
