//! Dense kernels behind every SL0 projection.
//!
//! All operators are derived from a Householder QR factorization of `Aᵀ`:
//!
//! ```text
//! Aᵀ = [Q1 Q2] [R; 0],   A† = Q1 R⁻ᵀ,   I − A†A = I − Q1 Q1ᵀ = Q2 Q2ᵀ
//! ```
//!
//! Neither `A†` nor the projector is ever formed explicitly. Since
//! `Aᵀ = Q1 R`, the pseudo-inverse is applied as `Aᵀ R⁻¹ R⁻ᵀ v`, so `Q1` is
//! only accumulated from the reflectors when a caller asks for it.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `|r_ii|` (scaled by `‖A‖_F`) below which `A` is
/// treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorMode {
    /// Only `Q1` and `R`.
    Reduced,
    /// `Q1`, `Q2` and `R`.
    Full,
}

/// Which algebraic route is used to apply `I − A†A`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionForm {
    /// `d − A†(A d)`.
    ViaPseudoInverse,
    /// `d − Q1 (Q1ᵀ d)`.
    ViaQ1,
    /// `Q2 (Q2ᵀ d)`; requires a full factorization.
    ViaQ2Split,
}

/// QR-derived operators of a full-row-rank measurement matrix `A` (n×N).
#[derive(Debug, Clone)]
pub struct MatrixFactorization {
    a: DMatrix<f64>,
    /// `Aᵀ`, kept so that `Aᵀ z` is a plain column-major product.
    at: DMatrix<f64>,
    /// Householder vectors below the diagonal of the factored `Aᵀ`.
    reflectors: DMatrix<f64>,
    taus: Vec<f64>,
    /// Rows of `R` that were negated to make the diagonal nonnegative.
    flipped: Vec<bool>,
    q1: OnceLock<DMatrix<f64>>,
    q2: Option<DMatrix<f64>>,
    r: DMatrix<f64>,
    frobenius: f64,
}

impl MatrixFactorization {
    /// Number of measurements (rows of `A`).
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Signal length (columns of `A`).
    #[allow(non_snake_case)]
    pub fn N(&self) -> usize {
        self.a.ncols()
    }

    pub fn mode(&self) -> FactorMode {
        if self.q2.is_some() {
            FactorMode::Full
        } else {
            FactorMode::Reduced
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Orthonormal basis of the row space of `A`, N×n.
    ///
    /// Built on first use.
    pub fn q1(&self) -> &DMatrix<f64> {
        self.q1.get_or_init(|| {
            let mut q1 = accumulate_q(&self.reflectors, &self.taus, 0, self.n());
            for (i, flip) in self.flipped.iter().enumerate() {
                if *flip {
                    q1.column_mut(i).neg_mut();
                }
            }
            q1
        })
    }

    /// Orthonormal basis of the null space of `A`, N×(N−n).
    pub fn q2(&self) -> Option<&DMatrix<f64>> {
        self.q2.as_ref()
    }

    /// Upper-triangular factor with a nonnegative diagonal, n×n.
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius
    }

    pub fn delta(&self) -> f64 {
        self.n() as f64 / self.N() as f64
    }
}

/// Householder QR of `Aᵀ`.
///
/// The diagonal of `r` is normalized to be nonnegative so that factorizations
/// are reproducible across implementations. `Q2` is only built in
/// [`FactorMode::Full`].
pub fn factorize(a: &DMatrix<f64>, mode: FactorMode) -> Result<MatrixFactorization> {
    let (n, big_n) = a.shape();
    if n == 0 || big_n == 0 {
        return Err(Error::InvalidDims(format!("A is {n}x{big_n}")));
    }
    if n > big_n {
        return Err(Error::InvalidDims(format!(
            "A is {n}x{big_n}; need n <= N"
        )));
    }

    let frobenius = a.norm();
    let at = a.transpose();
    let mut work = at.clone();
    let taus = householder_in_place(&mut work);

    let mut r = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            r[(i, j)] = work[(i, j)];
        }
    }

    let tolerance = RANK_TOLERANCE * frobenius;
    for i in 0..n {
        let value = r[(i, i)].abs();
        // NaN must also be rejected, hence the negated comparison.
        if !(value >= tolerance) || value == 0.0 {
            return Err(Error::RankDeficient {
                index: i,
                value,
                tolerance,
            });
        }
    }

    let flipped: Vec<bool> = (0..n).map(|i| r[(i, i)] < 0.0).collect();
    for (i, flip) in flipped.iter().enumerate() {
        if *flip {
            r.row_mut(i).neg_mut();
        }
    }

    let q2 = match mode {
        FactorMode::Reduced => None,
        FactorMode::Full => Some(accumulate_q(&work, &taus, n, big_n)),
    };

    Ok(MatrixFactorization {
        a: a.clone(),
        at,
        reflectors: work,
        taus,
        flipped,
        q1: OnceLock::new(),
        q2,
        r,
        frobenius,
    })
}

/// Panel width of the blocked factorization.
const BLOCK: usize = 64;

/// Overwrites `w` (N×n, N ≥ n) with R in its upper triangle and the
/// Householder vectors (implicit unit leading entry) below the diagonal.
/// Returns the reflector coefficients `tau`.
///
/// Panels of [`BLOCK`] columns are factored one reflector at a time; the
/// trailing columns are then updated with the panel's compact WY form
/// `I − V T Vᵀ`, so most of the work runs as matrix-matrix products.
fn householder_in_place(w: &mut DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = w.shape();
    let mut taus = vec![0.0; cols];
    let mut k0 = 0;
    while k0 < cols {
        let k1 = (k0 + BLOCK).min(cols);
        factor_panel(w, k0, k1, &mut taus);
        if k1 < cols {
            let (v, t) = compact_wy(w, &taus, k0, k1);
            let m = rows - k0;
            let rest = cols - k1;
            let mut wk = DMatrix::<f64>::zeros(k1 - k0, rest);
            wk.gemm(1.0, &v.transpose(), &w.view((k0, k1), (m, rest)), 0.0);
            let wk = t.transpose() * wk;
            w.view_mut((k0, k1), (m, rest)).gemm(-1.0, &v, &wk, 1.0);
        }
        k0 = k1;
    }
    taus
}

/// Unblocked Householder steps on columns `k0..k1`, touching only those columns.
fn factor_panel(w: &mut DMatrix<f64>, k0: usize, k1: usize, taus: &mut [f64]) {
    let rows = w.nrows();
    let data = w.as_mut_slice();
    for j in k0..k1 {
        let (head, tail) = data.split_at_mut((j + 1) * rows);
        let col = &mut head[j * rows + j..];
        let x0 = col[0];
        let tail_sq: f64 = col[1..].iter().map(|v| v * v).sum();
        if tail_sq == 0.0 {
            // Already triangular in this column; H = I.
            continue;
        }
        let alpha = (x0 * x0 + tail_sq).sqrt();
        let beta = if x0 >= 0.0 { -alpha } else { alpha };
        let tau = (beta - x0) / beta;
        let scale = 1.0 / (x0 - beta);
        for v in col[1..].iter_mut() {
            *v *= scale;
        }
        col[0] = beta;
        taus[j] = tau;

        let v = &col[1..];
        for c in 0..(k1 - j - 1) {
            let target = &mut tail[c * rows + j..(c + 1) * rows];
            apply_reflector(v, tau, target);
        }
    }
}

/// `V` (unit lower trapezoidal, rows `k0..`) and upper-triangular `T` with
/// `H_{k0} ⋯ H_{k1−1} = I − V T Vᵀ`.
fn compact_wy(
    w: &DMatrix<f64>,
    taus: &[f64],
    k0: usize,
    k1: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = w.nrows() - k0;
    let nb = k1 - k0;
    let mut v = DMatrix::<f64>::zeros(m, nb);
    for j in 0..nb {
        v[(j, j)] = 1.0;
        for i in (j + 1)..m {
            v[(i, j)] = w[(k0 + i, k0 + j)];
        }
    }
    let mut s = DMatrix::<f64>::zeros(nb, nb);
    s.gemm(1.0, &v.transpose(), &v, 0.0);
    let mut t = DMatrix::<f64>::zeros(nb, nb);
    for i in 0..nb {
        let tau = taus[k0 + i];
        t[(i, i)] = tau;
        if i == 0 || tau == 0.0 {
            continue;
        }
        // T[0..i, i] = −tau · T[0..i, 0..i] · (VᵀV)[0..i, i]
        let z = s.view((0, i), (i, 1)) * -tau;
        let tz = t.view((0, 0), (i, i)) * z;
        t.view_mut((0, i), (i, 1)).copy_from(&tz);
    }
    (v, t)
}

/// Applies `H = I − tau·[1; v][1; v]ᵀ` to `target` (same length as `[1; v]`).
#[inline]
fn apply_reflector(v: &[f64], tau: f64, target: &mut [f64]) {
    let (first, rest) = target.split_first_mut().expect("non-empty target");
    let dot = *first + v.iter().zip(rest.iter()).map(|(a, b)| a * b).sum::<f64>();
    let s = tau * dot;
    if s == 0.0 {
        return;
    }
    *first -= s;
    for (t, vi) in rest.iter_mut().zip(v) {
        *t -= s * vi;
    }
}

/// Columns `from..to` of `Q = H_0 H_1 … H_{n−1}`, applied panel by panel
/// from the last to the first.
fn accumulate_q(work: &DMatrix<f64>, taus: &[f64], from: usize, to: usize) -> DMatrix<f64> {
    let rows = work.nrows();
    let width = to - from;
    let mut q = DMatrix::<f64>::zeros(rows, width);
    for c in 0..width {
        q[(from + c, c)] = 1.0;
    }
    let n = taus.len();
    let mut k1 = n;
    while k1 > 0 {
        let k0 = (k1 - 1) / BLOCK * BLOCK;
        let (v, t) = compact_wy(work, taus, k0, k1);
        // Columns of Q1 left of k0 are still unit vectors above row k0.
        let first = if from == 0 { k0 } else { 0 };
        let m = rows - k0;
        let cols = width - first;
        if cols > 0 {
            let mut wk = DMatrix::<f64>::zeros(k1 - k0, cols);
            wk.gemm(1.0, &v.transpose(), &q.view((k0, first), (m, cols)), 0.0);
            let wk = t * wk;
            q.view_mut((k0, first), (m, cols)).gemm(-1.0, &v, &wk, 1.0);
        }
        k1 = k0;
    }
    q
}

/// Solves `Rᵀ u = v` by forward substitution.
fn solve_rt(r: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut u = v.clone();
    let rs = r.as_slice();
    let us = u.as_mut_slice();
    for i in 0..n {
        let col = &rs[i * n..i * n + i];
        let dot: f64 = col.iter().zip(&us[..i]).map(|(a, b)| a * b).sum();
        us[i] = (us[i] - dot) / rs[i * n + i];
    }
    u
}

/// Solves `R z = u` by back substitution.
fn solve_r(r: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64> {
    let n = r.nrows();
    let mut z = u.clone();
    let rs = r.as_slice();
    let zs = z.as_mut_slice();
    for i in (0..n).rev() {
        let zi = zs[i] / rs[i * n + i];
        zs[i] = zi;
        for (zp, c) in zs[..i].iter_mut().zip(&rs[i * n..i * n + i]) {
            *zp -= c * zi;
        }
    }
    z
}

/// `A† v = Q1 R⁻ᵀ v = Aᵀ R⁻¹ R⁻ᵀ v`.
pub fn apply_pseudo_inverse(f: &MatrixFactorization, v: &DVector<f64>) -> DVector<f64> {
    assert_eq!(v.len(), f.n(), "pseudo-inverse input must have length n");
    let z = solve_r(&f.r, &solve_rt(&f.r, v));
    &f.at * z
}

/// Minimum-norm solution of `A x = y`.
pub fn least_norm_solution(f: &MatrixFactorization, y: &DVector<f64>) -> DVector<f64> {
    apply_pseudo_inverse(f, y)
}

/// Projects `d` onto the null space of `A` using the requested route.
pub fn project_null_space(
    f: &MatrixFactorization,
    d: &DVector<f64>,
    form: ProjectionForm,
) -> Result<DVector<f64>> {
    assert_eq!(d.len(), f.N(), "projection input must have length N");
    match form {
        ProjectionForm::ViaPseudoInverse => {
            let ad = &f.a * d;
            Ok(d - apply_pseudo_inverse(f, &ad))
        }
        ProjectionForm::ViaQ1 => {
            let q1 = f.q1();
            let c = q1.tr_mul(d);
            Ok(d - q1 * c)
        }
        ProjectionForm::ViaQ2Split => {
            let q2 = f.q2.as_ref().ok_or(Error::MissingNullBasis)?;
            let v = q2.tr_mul(d);
            Ok(q2 * v)
        }
    }
}

/// Implementation switch for the SL0 update: the pseudo-inverse route up to
/// and including `δ = 1/2`, the `Q2` split beyond.
pub fn preferred_form(n: usize, big_n: usize) -> ProjectionForm {
    assert!(n <= big_n && big_n > 0, "need 0 < N and n <= N");
    // 2n <= N is the exact integer form of n/N <= 0.5.
    if 2 * n <= big_n {
        ProjectionForm::ViaPseudoInverse
    } else {
        ProjectionForm::ViaQ2Split
    }
}

/// Floating-point operation counts for applying `Q2 Q2ᵀ` to a vector, either
/// as one explicit N×N product or as two thin products.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopModel {
    pub n: usize,
    pub big_n: usize,
}

impl FlopModel {
    pub fn new(n: usize, big_n: usize) -> Self {
        assert!(n <= big_n, "need n <= N");
        Self { n, big_n }
    }

    pub fn flops_direct(&self) -> u64 {
        let big_n = self.big_n as u64;
        big_n * (2 * big_n).saturating_sub(1)
    }

    pub fn flops_split(&self) -> u64 {
        let big_n = self.big_n as u64;
        let null_dim = (self.big_n - self.n) as u64;
        null_dim * (2 * big_n - 1) + big_n * (2 * null_dim).saturating_sub(1)
    }

    pub fn split_is_cheaper(&self) -> bool {
        self.flops_split() < self.flops_direct()
    }

    /// Smallest `n` for which the split product is cheaper, if any.
    pub fn crossover(big_n: usize) -> Option<usize> {
        (1..=big_n).find(|&n| FlopModel::new(n, big_n).split_is_cheaper())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    fn pseudo_random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        // Tiny LCG; good enough for well-conditioned test inputs.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DMatrix::from_fn(rows, cols, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn factorize_padded_identity() {
        let a = dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0];
        let f = factorize(&a, FactorMode::Full).unwrap();
        assert!((f.r() - DMatrix::identity(2, 2)).norm() < 1e-14);
        let expected_q1 = dmatrix![1.0, 0.0; 0.0, 1.0; 0.0, 0.0];
        assert!((f.q1() - expected_q1).norm() < 1e-14);
        let q2 = f.q2().unwrap();
        assert_eq!(q2.shape(), (3, 1));
        assert!((q2[(2, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn factorize_diagonal_input() {
        let a = dmatrix![2.0, 0.0, 0.0; 0.0, 1.0, 0.0];
        let f = factorize(&a, FactorMode::Reduced).unwrap();
        assert!((f.r()[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((f.r()[(1, 1)] - 1.0).abs() < 1e-14);
        assert_eq!(f.mode(), FactorMode::Reduced);
        assert!(f.q2().is_none());
    }

    #[test]
    fn factorize_rejects_bad_shapes_and_rank() {
        let tall = DMatrix::<f64>::zeros(3, 2);
        assert!(matches!(
            factorize(&tall, FactorMode::Reduced),
            Err(Error::InvalidDims(_))
        ));
        let dup = dmatrix![1.0, 2.0, 3.0; 2.0, 4.0, 6.0];
        assert!(matches!(
            factorize(&dup, FactorMode::Reduced),
            Err(Error::RankDeficient { index: 1, .. })
        ));
        let zero = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            factorize(&zero, FactorMode::Reduced),
            Err(Error::RankDeficient { index: 0, .. })
        ));
    }

    #[test]
    fn factorization_invariants_random() {
        let a = pseudo_random_matrix(5, 8, 3);
        let f = factorize(&a, FactorMode::Full).unwrap();
        let q1 = f.q1();
        let q2 = f.q2().unwrap();
        assert!((q1.tr_mul(q1) - DMatrix::identity(5, 5)).norm() < 1e-12);
        assert!((q2.tr_mul(q2) - DMatrix::identity(3, 3)).norm() < 1e-12);
        assert!(q1.tr_mul(q2).norm() < 1e-12);
        let rel = (a.transpose() - q1 * f.r()).norm() / a.norm();
        assert!(rel <= 1e-10, "reconstruction error {rel}");
        for i in 0..5 {
            assert!(f.r()[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(f.r()[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn blocked_factorization_spans_several_panels() {
        let (n, big_n) = (2 * BLOCK + 11, 4 * BLOCK + 3);
        let a = pseudo_random_matrix(n, big_n, 11);
        let f = factorize(&a, FactorMode::Full).unwrap();
        let q1 = f.q1();
        let q2 = f.q2().unwrap();
        assert!((q1.tr_mul(q1) - DMatrix::identity(n, n)).norm() < 1e-11);
        assert!((q2.tr_mul(q2) - DMatrix::identity(big_n - n, big_n - n)).norm() < 1e-11);
        assert!(q1.tr_mul(q2).norm() < 1e-11);
        let rel = (a.transpose() - q1 * f.r()).norm() / a.norm();
        assert!(rel <= 1e-12, "reconstruction error {rel}");

        // Both routes to A† must agree.
        let v = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let via_q1 = q1 * solve_rt(f.r(), &v);
        assert!((apply_pseudo_inverse(&f, &v) - via_q1).norm() < 1e-10 * v.norm());
    }

    #[test]
    fn pseudo_inverse_small_cases() {
        let a = dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0];
        let f = factorize(&a, FactorMode::Reduced).unwrap();
        let x = apply_pseudo_inverse(&f, &dvector![3.0, 4.0]);
        assert!((x - dvector![3.0, 4.0, 0.0]).norm() < 1e-14);

        let a = dmatrix![1.0, 1.0];
        let f = factorize(&a, FactorMode::Reduced).unwrap();
        let x = least_norm_solution(&f, &dvector![2.0]);
        assert!((x - dvector![1.0, 1.0]).norm() < 1e-14);
    }

    #[test]
    fn square_system_is_solved_exactly() {
        let a = dmatrix![2.0, 1.0; 1.0, 3.0];
        let f = factorize(&a, FactorMode::Full).unwrap();
        let x = least_norm_solution(&f, &dvector![3.0, 5.0]);
        // A⁻¹ y = (0.8, 1.4)
        assert!((x - dvector![0.8, 1.4]).norm() < 1e-14);
        assert_eq!(f.q2().unwrap().ncols(), 0);
    }

    #[test]
    fn projection_axis_aligned() {
        let a = dmatrix![1.0, 0.0, 0.0; 0.0, 1.0, 0.0];
        let f = factorize(&a, FactorMode::Full).unwrap();
        let d = dvector![1.0, 2.0, 3.0];
        for form in [
            ProjectionForm::ViaPseudoInverse,
            ProjectionForm::ViaQ1,
            ProjectionForm::ViaQ2Split,
        ] {
            let p = project_null_space(&f, &d, form).unwrap();
            assert!((p - dvector![0.0, 0.0, 3.0]).norm() < 1e-14, "{form:?}");
        }
    }

    #[test]
    fn row_space_input_is_annihilated() {
        let a = pseudo_random_matrix(4, 9, 11);
        let f = factorize(&a, FactorMode::Full).unwrap();
        let d = apply_pseudo_inverse(&f, &dvector![0.3, -1.0, 2.0, 0.5]);
        for form in [
            ProjectionForm::ViaPseudoInverse,
            ProjectionForm::ViaQ1,
            ProjectionForm::ViaQ2Split,
        ] {
            let p = project_null_space(&f, &d, form).unwrap();
            assert!(p.norm() <= 1e-12 * d.norm(), "{form:?}: {}", p.norm());
        }
    }

    #[test]
    fn q2_split_needs_full_mode() {
        let a = pseudo_random_matrix(2, 4, 5);
        let f = factorize(&a, FactorMode::Reduced).unwrap();
        let d = DVector::from_element(4, 1.0);
        assert_eq!(
            project_null_space(&f, &d, ProjectionForm::ViaQ2Split),
            Err(Error::MissingNullBasis)
        );
    }

    #[test]
    fn preferred_form_boundary() {
        assert_eq!(preferred_form(400, 800), ProjectionForm::ViaPseudoInverse);
        assert_eq!(preferred_form(401, 800), ProjectionForm::ViaQ2Split);
        assert_eq!(preferred_form(1, 800), ProjectionForm::ViaPseudoInverse);
        assert_eq!(preferred_form(800, 800), ProjectionForm::ViaQ2Split);
    }

    #[test]
    fn flop_model_counts() {
        let m = FlopModel::new(0, 10);
        assert_eq!(m.flops_direct(), 190);
        // n = 0: Q2 is N×N, split costs exactly two full products.
        assert_eq!(m.flops_split(), 380);
        let m = FlopModel::new(10, 10);
        assert_eq!(m.flops_split(), 0);
        assert!(m.split_is_cheaper());
    }
}
