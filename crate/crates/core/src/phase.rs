//! Phase-transition experiments on a `(δ, ρ)` grid.
//!
//! Each grid point runs a fixed number of seeded Monte Carlo trials. Per δ the
//! success counts over ρ are summarized by the 50%-success location, estimated
//! with a ridge-stabilized logistic fit or, for completely separated data, the
//! midpoint between the last all-success and the first all-failure ρ.

use std::time::Duration;

use log::warn;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{make_instance, trial_seed, Suite};
use crate::error::{Error, Result};
use crate::solvers::{Reconstructor, SolveContext};

/// Squared relative error below which a reconstruction counts as a success.
pub const SUCCESS_THRESHOLD: f64 = 1e-4;

pub const LOGISTIC_RIDGE: f64 = 1e-6;
pub const LOGISTIC_MAX_ITERS: usize = 100;
pub const LOGISTIC_GRAD_TOL: f64 = 1e-10;

/// Cells flagged when the isotonic violation exceeds this many trials.
pub const MONOTONICITY_TOLERANCE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseGridSpec {
    /// Signal length N.
    pub signal_length: usize,
    pub delta_values: Vec<f64>,
    pub rho_values: Vec<f64>,
    pub trials: usize,
    pub suite: Suite,
    /// Registry name of the algorithm.
    pub algorithm: String,
    pub base_seed: u64,
    /// Stop a δ column after this many consecutive all-failure cells; the
    /// remaining cells are recorded as 0 successes. `None` runs every cell.
    pub early_cutoff: Option<usize>,
}

/// `{step, 2·step, …, 1}` computed as `i/count` to avoid accumulated error.
pub fn uniform_grid(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / count as f64).collect()
}

impl PhaseGridSpec {
    /// N = 800, δ ∈ {0.025, …, 1}, ρ ∈ {0.01, …, 1}, 10 trials.
    pub fn full(algorithm: &str, suite: Suite, base_seed: u64) -> Self {
        Self {
            signal_length: 800,
            delta_values: uniform_grid(40),
            rho_values: uniform_grid(100),
            trials: 10,
            suite,
            algorithm: algorithm.to_string(),
            base_seed,
            early_cutoff: Some(3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal_length == 0 {
            return Err(Error::InvalidGrid("N must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidGrid("trials must be at least 1".into()));
        }
        check_axis("delta", &self.delta_values)?;
        check_axis("rho", &self.rho_values)?;
        if self.early_cutoff == Some(0) {
            return Err(Error::InvalidGrid("early cutoff must be at least 1".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_axis(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidGrid(format!("{name} grid is empty")));
    }
    if values.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
        return Err(Error::InvalidGrid(format!("{name} values must lie in (0, 1]")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!(
            "{name} grid must be strictly increasing"
        )));
    }
    Ok(())
}

/// Outcome of one seeded trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub success: bool,
    pub elapsed: Option<Duration>,
    /// Solver error message, if the solve failed outright.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub delta: f64,
    pub rho: f64,
    pub successes: usize,
    pub trials: usize,
    /// Mean wall clock over successful trials only.
    pub mean_time_success: Option<Duration>,
    /// False when the cell was filled in by the early cutoff.
    pub evaluated: bool,
}

impl PhaseCell {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// `‖x̂ − x‖₂² / ‖x‖₂² < 10⁻⁴`.
pub fn success_criterion(x_hat: &DVector<f64>, x: &DVector<f64>) -> Result<bool> {
    let denom = x.norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroTruth);
    }
    Ok((x_hat - x).norm_squared() / denom < SUCCESS_THRESHOLD)
}

/// Runs one seeded trial. Solver failures are reported as unsuccessful
/// trials; only invalid grid coordinates are errors.
pub fn run_trial(
    algo: &dyn Reconstructor,
    signal_length: usize,
    delta: f64,
    rho: f64,
    suite: Suite,
    seed: u64,
) -> Result<TrialRecord> {
    let inst = make_instance(signal_length, delta, rho, suite, seed)?;
    let ctx = SolveContext::for_problem(&inst.a, inst.k);
    let record = match algo.reconstruct(&inst.a, &inst.y, &ctx) {
        Ok(res) => {
            let success = success_criterion(&res.x_hat, &inst.x)?
                && res.x_hat.iter().all(|v| v.is_finite());
            TrialRecord {
                seed,
                success,
                elapsed: Some(res.elapsed),
                error: None,
            }
        }
        Err(err) => TrialRecord {
            seed,
            success: false,
            elapsed: None,
            error: Some(err.to_string()),
        },
    };
    Ok(record)
}

pub(crate) fn mean_success_time(records: &[TrialRecord]) -> Option<Duration> {
    let times: Vec<Duration> = records
        .iter()
        .filter(|r| r.success)
        .filter_map(|r| r.elapsed)
        .collect();
    if times.is_empty() {
        None
    } else {
        Some(times.iter().sum::<Duration>() / times.len() as u32)
    }
}

fn cell_records(
    spec: &PhaseGridSpec,
    algo: &dyn Reconstructor,
    delta: f64,
    rho: f64,
) -> Result<Vec<TrialRecord>> {
    (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(spec.base_seed, spec.signal_length, delta, rho, t);
            run_trial(algo, spec.signal_length, delta, rho, spec.suite, seed)
        })
        .collect()
}

pub fn run_cell(
    spec: &PhaseGridSpec,
    algo: &dyn Reconstructor,
    delta: f64,
    rho: f64,
) -> Result<PhaseCell> {
    let records = cell_records(spec, algo, delta, rho)?;
    Ok(PhaseCell {
        delta,
        rho,
        successes: records.iter().filter(|r| r.success).count(),
        trials: spec.trials,
        mean_time_success: mean_success_time(&records),
        evaluated: true,
    })
}

/// Aggregated binomial observation at one ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialSample {
    pub rho: f64,
    pub successes: usize,
    pub trials: usize,
}

impl From<&PhaseCell> for BinomialSample {
    fn from(cell: &PhaseCell) -> Self {
        Self {
            rho: cell.rho,
            successes: cell.successes,
            trials: cell.trials,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub beta0: f64,
    pub beta1: f64,
    pub iterations: usize,
}

impl LogisticFit {
    /// ρ at which the fitted success probability is one half.
    pub fn crossing(&self) -> f64 {
        -self.beta0 / self.beta1
    }

    pub fn probability(&self, rho: f64) -> f64 {
        1.0 / (1.0 + (-(self.beta0 + self.beta1 * rho)).exp())
    }
}

/// `ln(1 + eᶻ)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn penalized_loglik(samples: &[BinomialSample], b0: f64, b1: f64) -> f64 {
    let ll: f64 = samples
        .iter()
        .map(|s| {
            let z = b0 + b1 * s.rho;
            let succ = s.successes as f64;
            let fail = (s.trials - s.successes) as f64;
            -succ * softplus(-z) - fail * softplus(z)
        })
        .sum();
    ll - 0.5 * LOGISTIC_RIDGE * (b0 * b0 + b1 * b1)
}

/// Ridge-penalized maximum likelihood fit of
/// `P(success | ρ) = 1 / (1 + exp(−(β0 + β1·ρ)))` by damped Newton steps.
pub fn fit_logistic(samples: &[BinomialSample]) -> Result<LogisticFit> {
    if samples.is_empty() {
        return Err(Error::InvalidGrid("no samples to fit".into()));
    }
    let (mut b0, mut b1) = (0.0f64, 0.0f64);
    let mut current = penalized_loglik(samples, b0, b1);

    for iter in 0..LOGISTIC_MAX_ITERS {
        let (mut g0, mut g1) = (-LOGISTIC_RIDGE * b0, -LOGISTIC_RIDGE * b1);
        let (mut h00, mut h01, mut h11) = (LOGISTIC_RIDGE, 0.0, LOGISTIC_RIDGE);
        for s in samples {
            let z = b0 + b1 * s.rho;
            let p = 1.0 / (1.0 + (-z).exp());
            let t = s.trials as f64;
            let resid = s.successes as f64 - t * p;
            g0 += resid;
            g1 += resid * s.rho;
            let w = t * p * (1.0 - p);
            h00 += w;
            h01 += w * s.rho;
            h11 += w * s.rho * s.rho;
        }
        if g0.abs().max(g1.abs()) < LOGISTIC_GRAD_TOL {
            return Ok(LogisticFit {
                beta0: b0,
                beta1: b1,
                iterations: iter,
            });
        }
        let det = h00 * h11 - h01 * h01;
        let step0 = (h11 * g0 - h01 * g1) / det;
        let step1 = (h00 * g1 - h01 * g0) / det;

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let (c0, c1) = (b0 + scale * step0, b1 + scale * step1);
            let candidate = penalized_loglik(samples, c0, c1);
            // Near the optimum the gain drops below rounding; do not reject it.
            if candidate >= current - 1e-12 * current.abs().max(1.0) {
                b0 = c0;
                b1 = c1;
                current = candidate;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No ascent possible at double precision; treat as stationary.
            return Ok(LogisticFit {
                beta0: b0,
                beta1: b1,
                iterations: iter + 1,
            });
        }
    }
    Err(Error::DidNotConverge {
        iterations: LOGISTIC_MAX_ITERS,
        beta0: b0,
        beta1: b1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    Logistic,
    SeparationMidpoint,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Logistic => "logistic",
            FitMethod::SeparationMidpoint => "separation-midpoint",
        }
    }
}

/// Transition estimate at one δ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPoint {
    pub delta: f64,
    pub rho_star: f64,
    pub method: FitMethod,
    pub beta0: Option<f64>,
    pub beta1: Option<f64>,
    /// False if the logistic fit hit its iteration limit.
    pub converged: bool,
}

/// Location of the 50% success level for one δ column.
pub fn transition_location(samples: &[BinomialSample]) -> Result<TransitionPoint> {
    if samples.is_empty() {
        return Err(Error::InvalidGrid("no samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.rho.total_cmp(&b.rho));
    let lo = sorted[0].rho;
    let hi = sorted[sorted.len() - 1].rho;
    let point = |rho_star, method, fit: Option<&LogisticFit>, converged| TransitionPoint {
        delta: f64::NAN,
        rho_star,
        method,
        beta0: fit.map(|f| f.beta0),
        beta1: fit.map(|f| f.beta1),
        converged,
    };

    let full = |s: &BinomialSample| s.successes == s.trials;
    let none = |s: &BinomialSample| s.successes == 0;
    if sorted.iter().all(full) {
        return Ok(point(hi, FitMethod::SeparationMidpoint, None, true));
    }
    if sorted.iter().all(none) {
        return Ok(point(lo, FitMethod::SeparationMidpoint, None, true));
    }
    if sorted.iter().all(|s| full(s) || none(s)) {
        let last_full = sorted.iter().filter(|s| full(s)).map(|s| s.rho).fold(f64::MIN, f64::max);
        let first_none = sorted.iter().filter(|s| none(s)).map(|s| s.rho).fold(f64::MAX, f64::min);
        if last_full < first_none {
            let mid = 0.5 * (last_full + first_none);
            return Ok(point(mid, FitMethod::SeparationMidpoint, None, true));
        }
    }

    let (fit, converged) = match fit_logistic(&sorted) {
        Ok(fit) => (fit, true),
        Err(Error::DidNotConverge {
            iterations,
            beta0,
            beta1,
        }) => {
            warn!("logistic fit stopped after {iterations} iterations; using partial estimate");
            (
                LogisticFit {
                    beta0,
                    beta1,
                    iterations,
                },
                false,
            )
        }
        Err(e) => return Err(e),
    };
    let lower = (lo - 0.01).max(0.0);
    let upper = (hi + 0.01).min(1.0);
    let crossing = fit.crossing();
    let rho_star = if crossing.is_nan() {
        0.5 * (lower + upper)
    } else {
        crossing.clamp(lower, upper)
    };
    Ok(point(rho_star, FitMethod::Logistic, Some(&fit), converged))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransitionCurve {
    pub points: Vec<TransitionPoint>,
}

impl TransitionCurve {
    pub fn from_points(mut points: Vec<TransitionPoint>) -> Self {
        points.sort_by(|a, b| a.delta.total_cmp(&b.delta));
        Self { points }
    }

    /// Linear interpolation in δ, constant beyond the sampled range.
    pub fn rho_star_at(&self, delta: f64) -> Option<f64> {
        let pts = &self.points;
        let first = pts.first()?;
        let last = pts.last()?;
        if delta <= first.delta {
            return Some(first.rho_star);
        }
        if delta >= last.delta {
            return Some(last.rho_star);
        }
        let i = pts.partition_point(|p| p.delta <= delta);
        let (a, b) = (&pts[i - 1], &pts[i]);
        let t = (delta - a.delta) / (b.delta - a.delta);
        Some(a.rho_star + t * (b.rho_star - a.rho_star))
    }
}

/// Pool-adjacent-violators fit of a non-increasing sequence.
pub fn isotonic_nonincreasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // Blocks of (mean, weight, length).
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let n = blocks.len();
            if blocks[n - 2].0 >= blocks[n - 1].0 {
                break;
            }
            let (m2, w2, l2) = blocks.pop().unwrap();
            let (m1, w1, l1) = blocks.pop().unwrap();
            let w = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / w, w, l1 + l2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, len)| std::iter::repeat_n(m, len))
        .collect()
}

/// Total distance (in successful trials) between a column's success rates
/// over increasing ρ and their non-increasing isotonic projection.
pub fn monotonicity_violation(column: &[PhaseCell]) -> f64 {
    let rates: Vec<f64> = column.iter().map(PhaseCell::success_rate).collect();
    let weights: Vec<f64> = column.iter().map(|c| c.trials as f64).collect();
    let iso = isotonic_nonincreasing(&rates, &weights);
    rates
        .iter()
        .zip(&iso)
        .zip(&weights)
        .map(|((r, i), w)| (r - i).abs() * w)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    /// Column-major: all ρ for the first δ, then the next δ.
    pub cells: Vec<PhaseCell>,
    pub curve: TransitionCurve,
    /// δ columns whose success rates are implausibly non-monotone in ρ.
    pub flagged_deltas: Vec<f64>,
}

fn run_column(
    spec: &PhaseGridSpec,
    algo: &dyn Reconstructor,
    delta: f64,
) -> Result<Vec<PhaseCell>> {
    let mut cells = Vec::with_capacity(spec.rho_values.len());
    let mut consecutive_failures = 0;
    for &rho in &spec.rho_values {
        if let Some(limit) = spec.early_cutoff {
            if consecutive_failures >= limit {
                cells.push(PhaseCell {
                    delta,
                    rho,
                    successes: 0,
                    trials: spec.trials,
                    mean_time_success: None,
                    evaluated: false,
                });
                continue;
            }
        }
        let cell = run_cell(spec, algo, delta, rho)?;
        if cell.successes == 0 {
            consecutive_failures += 1;
        } else {
            consecutive_failures = 0;
        }
        cells.push(cell);
    }
    Ok(cells)
}

/// Runs every δ column of the grid and estimates the transition per column.
///
/// Columns and trials run on the current rayon pool; results do not depend
/// on the number of workers.
pub fn run_phase_grid(spec: &PhaseGridSpec, algo: &dyn Reconstructor) -> Result<PhaseReport> {
    spec.validate()?;
    let columns: Vec<Vec<PhaseCell>> = spec
        .delta_values
        .par_iter()
        .map(|&delta| run_column(spec, algo, delta))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(columns.len());
    let mut flagged = Vec::new();
    for (column, &delta) in columns.iter().zip(&spec.delta_values) {
        let samples: Vec<BinomialSample> = column.iter().map(BinomialSample::from).collect();
        let mut point = transition_location(&samples)?;
        point.delta = delta;
        points.push(point);
        let violation = monotonicity_violation(column);
        if violation > MONOTONICITY_TOLERANCE {
            warn!("delta = {delta}: success rates violate monotonicity by {violation} trials");
            flagged.push(delta);
        }
    }

    Ok(PhaseReport {
        cells: columns.into_iter().flatten().collect(),
        curve: TransitionCurve::from_points(points),
        flagged_deltas: flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn sample(rho: f64, successes: usize, trials: usize) -> BinomialSample {
        BinomialSample {
            rho,
            successes,
            trials,
        }
    }

    #[test]
    fn criterion_boundaries() {
        let e1 = dvector![1.0, 0.0, 0.0];
        assert!(success_criterion(&e1, &e1).unwrap());
        assert!(!success_criterion(&(&e1 * 1.011), &e1).unwrap());
        assert!(success_criterion(&(&e1 * 1.009), &e1).unwrap());
        assert_eq!(
            success_criterion(&e1, &DVector::zeros(3)),
            Err(Error::ZeroTruth)
        );
    }

    #[test]
    fn symmetric_logistic_data_crosses_at_midpoint() {
        let data = [sample(0.2, 10, 10), sample(0.4, 5, 10), sample(0.6, 0, 10)];
        let fit = fit_logistic(&data).unwrap();
        assert!((fit.crossing() - 0.4).abs() <= 0.01, "{fit:?}");
        assert!(fit.beta1 < 0.0);
        let loc = transition_location(&data).unwrap();
        assert_eq!(loc.method, FitMethod::Logistic);
        assert!((loc.rho_star - 0.4).abs() <= 0.01);
    }

    #[test]
    fn fit_converges_when_gains_reach_rounding() {
        let counts = [9, 7, 4, 2, 1, 0, 0, 0, 0, 0];
        let data: Vec<BinomialSample> = counts
            .iter()
            .enumerate()
            .map(|(i, &s)| sample((i + 1) as f64 / 10.0, s, 10))
            .collect();
        let fit = fit_logistic(&data).unwrap();
        assert!(fit.iterations < 20, "{fit:?}");
        assert!((fit.beta1 + 12.0997796).abs() < 1e-6);
    }

    #[test]
    fn separated_data_uses_midpoint() {
        let data = [sample(0.3, 10, 10), sample(0.5, 0, 10)];
        let loc = transition_location(&data).unwrap();
        assert_eq!(loc.method, FitMethod::SeparationMidpoint);
        assert!((loc.rho_star - 0.4).abs() < 1e-15);
        assert!(loc.beta0.is_none() && loc.beta1.is_none());

        let data = [
            sample(0.1, 10, 10),
            sample(0.2, 10, 10),
            sample(0.3, 10, 10),
            sample(0.4, 0, 10),
            sample(0.5, 0, 10),
        ];
        let loc = transition_location(&data).unwrap();
        assert_eq!(loc.method, FitMethod::SeparationMidpoint);
        assert!((loc.rho_star - 0.35).abs() < 1e-12);
    }

    #[test]
    fn saturated_columns_clamp() {
        let all = [sample(0.1, 10, 10), sample(0.5, 10, 10), sample(1.0, 10, 10)];
        assert_eq!(transition_location(&all).unwrap().rho_star, 1.0);
        let none = [sample(0.1, 0, 10), sample(0.5, 0, 10)];
        assert_eq!(transition_location(&none).unwrap().rho_star, 0.1);
    }

    #[test]
    fn interleaved_pure_cells_fall_back_to_logistic() {
        let data = [
            sample(0.1, 10, 10),
            sample(0.2, 0, 10),
            sample(0.3, 10, 10),
            sample(0.4, 0, 10),
        ];
        let loc = transition_location(&data).unwrap();
        assert_eq!(loc.method, FitMethod::Logistic);
        assert!(loc.rho_star >= 0.09 && loc.rho_star <= 0.41);
    }

    #[test]
    fn isotonic_projection() {
        let iso = isotonic_nonincreasing(&[1.0, 0.5, 0.7, 0.0], &[1.0; 4]);
        assert_eq!(iso, vec![1.0, 0.6, 0.6, 0.0]);
        let iso = isotonic_nonincreasing(&[0.0, 1.0], &[1.0, 3.0]);
        assert_eq!(iso, vec![0.75, 0.75]);
    }

    #[test]
    fn interpolation_of_curve() {
        let mk = |delta, rho_star| TransitionPoint {
            delta,
            rho_star,
            method: FitMethod::Logistic,
            beta0: None,
            beta1: None,
            converged: true,
        };
        let curve = TransitionCurve::from_points(vec![mk(0.5, 0.4), mk(0.1, 0.2)]);
        assert_eq!(curve.rho_star_at(0.05), Some(0.2));
        assert_eq!(curve.rho_star_at(0.9), Some(0.4));
        assert!((curve.rho_star_at(0.3).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(TransitionCurve::default().rho_star_at(0.3), None);
    }

    #[test]
    fn grid_validation() {
        let mut spec = PhaseGridSpec::full("sl0-mss", Suite::UseRademacher, 1);
        assert!(spec.validate().is_ok());
        assert_eq!(spec.delta_values.len(), 40);
        assert_eq!(spec.delta_values[0], 0.025);
        assert_eq!(spec.rho_values[99], 1.0);
        spec.rho_values = vec![0.2, 0.1];
        assert!(spec.validate().is_err());
        spec.rho_values = vec![0.1];
        spec.trials = 0;
        assert!(spec.validate().is_err());
    }
}
