//! Reconstruction-time experiments below an algorithm's own transition.
//!
//! Timed solves always run sequentially on the calling thread.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ensembles::{trial_seed, Suite};
use crate::error::{Error, Result};
use crate::phase::{check_axis, mean_success_time, run_trial, TransitionCurve, TrialRecord};
use crate::solvers::Reconstructor;

/// Slack on the eligibility comparison so grid values produced by different
/// arithmetic routes compare as intended.
const ELIGIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSpec {
    pub signal_lengths: Vec<usize>,
    pub delta_values: Vec<f64>,
    pub rho_values: Vec<f64>,
    /// Minimum distance below the transition, on the ρ axis.
    pub margin: f64,
    pub trials: usize,
    pub transition: TransitionCurve,
    pub suite: Suite,
    pub base_seed: u64,
}

fn tenths() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

impl TimingSpec {
    /// N ∈ {200, 400, 800}.
    pub fn desk(transition: TransitionCurve, base_seed: u64) -> Self {
        Self {
            signal_lengths: vec![200, 400, 800],
            delta_values: tenths(),
            rho_values: tenths(),
            margin: 0.025,
            trials: 10,
            transition,
            suite: Suite::UseRademacher,
            base_seed,
        }
    }

    /// N ∈ {800, 1600, 3200, 6400, 12800}.
    pub fn full(transition: TransitionCurve, base_seed: u64) -> Self {
        Self {
            signal_lengths: vec![800, 1600, 3200, 6400, 12800],
            ..Self::desk(transition, base_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.signal_lengths.is_empty() || self.signal_lengths.contains(&0) {
            return Err(Error::InvalidGrid("signal lengths must be positive".into()));
        }
        check_axis("delta", &self.delta_values)?;
        check_axis("rho", &self.rho_values)?;
        if !(self.margin >= 0.0) {
            return Err(Error::InvalidGrid("margin must be nonnegative".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidGrid("trials must be at least 1".into()));
        }
        if self.transition.points.is_empty() {
            return Err(Error::InvalidGrid("transition curve is empty".into()));
        }
        Ok(())
    }
}

/// Grid points with `ρ ≤ ρ*(δ) − margin`, where `ρ*` is linearly
/// interpolated from the transition curve.
pub fn eligible_points(spec: &TimingSpec) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let mut out = Vec::new();
    for &delta in &spec.delta_values {
        let limit = spec
            .transition
            .rho_star_at(delta)
            .expect("validated non-empty curve")
            - spec.margin;
        for &rho in &spec.rho_values {
            if rho <= limit + ELIGIBILITY_SLACK {
                out.push((delta, rho));
            }
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyEligibleSet);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub signal_length: usize,
    pub delta: f64,
    pub rho: f64,
    pub trials: usize,
    pub successes: usize,
    pub mean_time: Option<Duration>,
    pub records: Vec<TrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

impl TimingReport {
    /// Mean over eligible ρ of the per-point mean time, per δ, at one N.
    pub fn by_delta(&self, signal_length: usize) -> Vec<(f64, Duration)> {
        let mut groups: BTreeMap<u64, (f64, Vec<Duration>)> = BTreeMap::new();
        for row in self.rows.iter().filter(|r| r.signal_length == signal_length) {
            if let Some(t) = row.mean_time {
                groups
                    .entry(row.delta.to_bits())
                    .or_insert_with(|| (row.delta, Vec::new()))
                    .1
                    .push(t);
            }
        }
        let mut out: Vec<(f64, Duration)> = groups
            .into_values()
            .map(|(delta, ts)| (delta, ts.iter().sum::<Duration>() / ts.len() as u32))
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Mean over eligible ρ of the per-point mean time, per N, at one δ.
    pub fn by_signal_length(&self, delta: f64) -> Vec<(usize, Duration)> {
        let mut groups: BTreeMap<usize, Vec<Duration>> = BTreeMap::new();
        for row in self.rows.iter().filter(|r| r.delta == delta) {
            if let Some(t) = row.mean_time {
                groups.entry(row.signal_length).or_default().push(t);
            }
        }
        groups
            .into_iter()
            .map(|(n, ts)| (n, ts.iter().sum::<Duration>() / ts.len() as u32))
            .collect()
    }
}

/// Times `algo` on every eligible point for every N of the spec.
pub fn run_timing(spec: &TimingSpec, algo: &dyn Reconstructor) -> Result<TimingReport> {
    let points = eligible_points(spec)?;
    run_timing_at(spec, algo, &points)
}

/// Times `algo` on an explicit list of `(δ, ρ)` points.
///
/// One untimed warm-up solve per `(N, δ)` precedes the timed trials.
pub fn run_timing_at(
    spec: &TimingSpec,
    algo: &dyn Reconstructor,
    points: &[(f64, f64)],
) -> Result<TimingReport> {
    if spec.trials == 0 {
        return Err(Error::InvalidGrid("trials must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(points.len() * spec.signal_lengths.len());
    for &big_n in &spec.signal_lengths {
        let mut warmed: Option<f64> = None;
        for &(delta, rho) in points {
            if warmed != Some(delta) {
                let seed = trial_seed(spec.base_seed, big_n, delta, rho, usize::MAX);
                run_trial(algo, big_n, delta, rho, spec.suite, seed)?;
                warmed = Some(delta);
            }
            let records = (0..spec.trials)
                .map(|t| {
                    let seed = trial_seed(spec.base_seed, big_n, delta, rho, t);
                    run_trial(algo, big_n, delta, rho, spec.suite, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(TimingRow {
                signal_length: big_n,
                delta,
                rho,
                trials: spec.trials,
                successes: records.iter().filter(|r| r.success).count(),
                mean_time: mean_success_time(&records),
                records,
            });
        }
    }
    Ok(TimingReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::{FitMethod, TransitionPoint};

    fn flat(rho_star: f64) -> TransitionCurve {
        TransitionCurve::from_points(
            tenths()
                .into_iter()
                .map(|delta| TransitionPoint {
                    delta,
                    rho_star,
                    method: FitMethod::Logistic,
                    beta0: None,
                    beta1: None,
                    converged: true,
                })
                .collect(),
        )
    }

    #[test]
    fn flat_unit_transition_excludes_top_row() {
        let spec = TimingSpec::desk(flat(1.0), 0);
        let pts = eligible_points(&spec).unwrap();
        // ρ = 1.0 sits only 0 below ρ* = 1.0, so it is not eligible.
        assert_eq!(pts.len(), 90);
        let spec = TimingSpec {
            margin: 0.0,
            ..TimingSpec::desk(flat(1.0), 0)
        };
        assert_eq!(eligible_points(&spec).unwrap().len(), 100);
    }

    #[test]
    fn margin_arithmetic() {
        let spec = TimingSpec::desk(flat(0.12), 0);
        assert_eq!(eligible_points(&spec), Err(Error::EmptyEligibleSet));
        let spec = TimingSpec::desk(flat(0.13), 0);
        let pts = eligible_points(&spec).unwrap();
        assert!(pts.contains(&(0.3, 0.1)));
        assert!(pts.iter().all(|(_, rho)| *rho == 0.1));
    }

    #[test]
    fn smaller_margin_grows_eligible_set() {
        let wide = TimingSpec::desk(flat(0.51), 0);
        let narrow = TimingSpec {
            margin: 0.0,
            ..wide.clone()
        };
        let a = eligible_points(&wide).unwrap();
        let b = eligible_points(&narrow).unwrap();
        assert!(a.iter().all(|p| b.contains(p)));
        assert!(b.len() > a.len());
    }

    #[test]
    fn empty_curve_is_rejected() {
        let spec = TimingSpec::desk(TransitionCurve::default(), 0);
        assert!(matches!(eligible_points(&spec), Err(Error::InvalidGrid(_))));
    }
}
