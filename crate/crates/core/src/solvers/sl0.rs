use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{descent_direction, inner_cap, relative_residual, ReconstructionResult, SolverSchedule};
use crate::error::{Error, Result};
use crate::linalg::{
    apply_pseudo_inverse, least_norm_solution, preferred_form, project_null_space,
    MatrixFactorization, ProjectionForm,
};

/// How one projected gradient step is carried out. All rules compute the same
/// iterate in exact arithmetic when started from a feasible point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateRule {
    /// Unconstrained step `x̂ − μd`, then re-projection `x̂ − A†(Ax̂ − y)`.
    SplitReproject,
    /// `v = Q2ᵀd`, then `x̂ − μ Q2 v`.
    Q2Split,
    /// `x̂ − μ(I − A†A)d` with the projector applied through `form`.
    Combined(ProjectionForm),
}

/// Implementation of the SL0 MSS update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MssImpl {
    /// Infeasible step plus pseudo-inverse re-projection.
    MssI,
    /// Null-space split through `Q2`.
    MssII,
    /// Chosen from the indeterminacy: `MssI` for `δ ≤ 1/2`, else `MssII`.
    Auto,
}

impl MssImpl {
    pub fn resolve(self, n: usize, big_n: usize) -> MssImpl {
        match self {
            MssImpl::Auto => match preferred_form(n, big_n) {
                ProjectionForm::ViaQ2Split => MssImpl::MssII,
                _ => MssImpl::MssI,
            },
            other => other,
        }
    }

    pub fn update_rule(self, n: usize, big_n: usize) -> UpdateRule {
        match self.resolve(n, big_n) {
            MssImpl::MssII => UpdateRule::Q2Split,
            _ => UpdateRule::SplitReproject,
        }
    }
}

/// Gradient step followed by re-projection onto `{x : Ax = y}`.
pub fn split_update(
    f: &MatrixFactorization,
    x: &DVector<f64>,
    d: &DVector<f64>,
    mu: f64,
    y: &DVector<f64>,
) -> DVector<f64> {
    let mut out = x.clone();
    step_split(f, &mut out, d, mu, y);
    out
}

/// `x̂ − μ(I − A†A)d`.
pub fn combined_update(
    f: &MatrixFactorization,
    x: &DVector<f64>,
    d: &DVector<f64>,
    mu: f64,
    form: ProjectionForm,
) -> Result<DVector<f64>> {
    let p = project_null_space(f, d, form)?;
    Ok(x - p * mu)
}

fn step_split(
    f: &MatrixFactorization,
    x: &mut DVector<f64>,
    d: &DVector<f64>,
    mu: f64,
    y: &DVector<f64>,
) {
    x.axpy(-mu, d, 1.0);
    let mut residual = y.clone();
    residual.gemv(1.0, f.matrix(), x, -1.0);
    let correction = apply_pseudo_inverse(f, &residual);
    *x -= correction;
}

fn step(
    f: &MatrixFactorization,
    rule: UpdateRule,
    x: &mut DVector<f64>,
    d: &DVector<f64>,
    mu: f64,
    y: &DVector<f64>,
) -> Result<()> {
    match rule {
        UpdateRule::SplitReproject => step_split(f, x, d, mu, y),
        UpdateRule::Q2Split => {
            let q2 = f.q2().ok_or(Error::MissingNullBasis)?;
            let v = q2.tr_mul(d);
            x.gemv(-mu, q2, &v, 1.0);
        }
        UpdateRule::Combined(form) => {
            let p = project_null_space(f, d, form)?;
            x.axpy(-mu, &p, 1.0);
        }
    }
    Ok(())
}

/// Generic smoothed-ℓ0 iteration driven by `schedule`.
///
/// Starts from the least-norm solution and, for each σ of the geometric
/// sequence, runs at most `⌊L⌋` projected gradient steps (fewer if the
/// ε-criterion fires). `delta` only enters through
/// [`SigmaInit::InverseDelta`](super::SigmaInit::InverseDelta).
pub fn sl0_solve(
    f: &MatrixFactorization,
    y: &DVector<f64>,
    schedule: &SolverSchedule,
    delta: f64,
    rule: UpdateRule,
) -> Result<ReconstructionResult> {
    schedule.validate()?;
    if y.len() != f.n() {
        return Err(Error::InvalidDims(format!(
            "y has length {}, expected {}",
            y.len(),
            f.n()
        )));
    }
    let needs_q2 = matches!(
        rule,
        UpdateRule::Q2Split | UpdateRule::Combined(ProjectionForm::ViaQ2Split)
    );
    if needs_q2 && f.q2().is_none() {
        return Err(Error::MissingNullBasis);
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidSchedule(format!("delta = {delta} must be positive")));
    }

    let start = Instant::now();
    let mut x = least_norm_solution(f, y);
    let max_abs = x.amax();
    if max_abs == 0.0 {
        return Ok(ReconstructionResult {
            residual_feasibility: relative_residual(f.matrix(), &x, y),
            x_hat: x,
            outer_iterations: 0,
            inner_iterations_total: 0,
            elapsed: start.elapsed(),
        });
    }

    let mut sigma = schedule.initial_sigma(max_abs, delta);
    let mut budget = schedule.l_init;
    let mut outer = 0;
    let mut inner_total = 0;
    let early_stop = schedule.epsilon > 0.0;
    let mut prev = DVector::zeros(x.len());

    while sigma > schedule.sigma_min {
        outer += 1;
        let mu = schedule.mu(outer);
        let cap = inner_cap(budget);
        // x̂_prev starts at 0 for every σ.
        prev.fill(0.0);
        let mut i = 0;
        while i < cap {
            if early_stop && (&x - &prev).norm() <= sigma * schedule.epsilon {
                break;
            }
            if early_stop {
                prev.copy_from(&x);
            }
            let d = descent_direction(&x, sigma);
            step(f, rule, &mut x, &d, mu, y)?;
            i += 1;
        }
        inner_total += i;

        debug_assert!(
            {
                let res = (f.matrix() * &x - y).norm();
                res <= 1e-8 * y.norm().max(f64::MIN_POSITIVE)
            },
            "SL0 iterate left the feasible set at outer iteration {outer}"
        );

        sigma *= schedule.sigma_up;
        budget *= schedule.l_up;
    }

    let elapsed = start.elapsed();
    Ok(ReconstructionResult {
        residual_feasibility: relative_residual(f.matrix(), &x, y),
        x_hat: x,
        outer_iterations: outer,
        inner_iterations_total: inner_total,
        elapsed,
    })
}

/// Classic SL0: fixed budget, unconstrained step plus re-projection.
pub fn sl0_std_solve(
    f: &MatrixFactorization,
    y: &DVector<f64>,
    schedule: &SolverSchedule,
) -> Result<ReconstructionResult> {
    sl0_solve(f, y, schedule, f.delta(), UpdateRule::SplitReproject)
}

/// SL0 with a geometrically growing inner budget. Same update as
/// [`sl0_std_solve`]; the growth comes from `schedule.l_up`
/// (see [`SolverSchedule::min`]).
pub fn sl0_min_solve(
    f: &MatrixFactorization,
    y: &DVector<f64>,
    schedule: &SolverSchedule,
) -> Result<ReconstructionResult> {
    sl0_solve(f, y, schedule, f.delta(), UpdateRule::SplitReproject)
}

/// SL0 MSS with the tuned schedule of [`SolverSchedule::mss`].
pub fn sl0_mss_solve(
    f: &MatrixFactorization,
    y: &DVector<f64>,
    delta: f64,
    implementation: MssImpl,
) -> Result<ReconstructionResult> {
    let rule = implementation.update_rule(f.n(), f.N());
    sl0_solve(f, y, &SolverSchedule::mss(), delta, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::make_instance;
    use crate::ensembles::Suite;
    use crate::linalg::{factorize, FactorMode};
    use nalgebra::{dmatrix, dvector, DMatrix};

    #[test]
    fn square_system_is_recovered_exactly() {
        let a = dmatrix![2.0, 1.0, 0.0; 1.0, 3.0, 1.0; 0.0, 1.0, 4.0];
        let x = dvector![0.0, 1.5, -2.0];
        let y = &a * &x;
        let f = factorize(&a, FactorMode::Full).unwrap();
        for res in [
            sl0_std_solve(&f, &y, &SolverSchedule::standard()).unwrap(),
            sl0_min_solve(&f, &y, &SolverSchedule::min()).unwrap(),
            sl0_mss_solve(&f, &y, 1.0, MssImpl::MssI).unwrap(),
            sl0_mss_solve(&f, &y, 1.0, MssImpl::MssII).unwrap(),
        ] {
            assert!((&res.x_hat - &x).norm() <= 1e-8 * x.norm());
        }
    }

    #[test]
    fn zero_measurement_returns_zero() {
        let inst = make_instance(40, 0.5, 0.1, Suite::UseGaussian, 4).unwrap();
        let f = factorize(&inst.a, FactorMode::Full).unwrap();
        let y = DVector::zeros(inst.n());
        let res = sl0_std_solve(&f, &y, &SolverSchedule::standard()).unwrap();
        assert_eq!(res.x_hat, DVector::zeros(40));
        assert_eq!(res.outer_iterations, 0);
        let res = sl0_mss_solve(&f, &y, 0.5, MssImpl::Auto).unwrap();
        assert_eq!(res.x_hat, DVector::zeros(40));
    }

    #[test]
    fn mss2_needs_full_factorization() {
        let inst = make_instance(20, 0.5, 0.1, Suite::UseGaussian, 4).unwrap();
        let f = factorize(&inst.a, FactorMode::Reduced).unwrap();
        assert_eq!(
            sl0_mss_solve(&f, &inst.y, 0.5, MssImpl::MssII),
            Err(Error::MissingNullBasis)
        );
    }

    #[test]
    fn auto_dispatch_follows_indeterminacy() {
        assert_eq!(MssImpl::Auto.resolve(400, 800), MssImpl::MssI);
        assert_eq!(MssImpl::Auto.resolve(401, 800), MssImpl::MssII);
        assert_eq!(MssImpl::MssII.resolve(10, 800), MssImpl::MssII);
    }

    #[test]
    fn outer_and_inner_counts_follow_schedule() {
        let inst = make_instance(60, 0.5, 0.1, Suite::UseRademacher, 8).unwrap();
        let f = factorize(&inst.a, FactorMode::Reduced).unwrap();
        let schedule = SolverSchedule::min();
        let res = sl0_min_solve(&f, &inst.y, &schedule).unwrap();
        let x0 = least_norm_solution(&f, &inst.y);
        let sigmas = schedule.sigma_sequence(2.0 * x0.amax());
        assert_eq!(res.outer_iterations, sigmas.len());
        let caps: usize = schedule.inner_caps(sigmas.len()).iter().sum();
        assert_eq!(res.inner_iterations_total, caps);
        assert!(res.residual_feasibility <= 1e-6);
    }

    #[test]
    fn early_stop_at_fixed_point() {
        // With a single nonzero far above σ the direction vanishes, so after
        // one step the iterate no longer moves and the ε-rule fires.
        let a = DMatrix::<f64>::identity(3, 3);
        let y = dvector![0.0, 0.0, 100.0];
        let f = factorize(&a, FactorMode::Full).unwrap();
        let schedule = SolverSchedule {
            sigma_init: crate::solvers::SigmaInit::TwiceMaxAbs,
            sigma_up: 0.5,
            sigma_min: 0.5,
            l_init: 50.0,
            l_up: 1.0,
            epsilon: 1e-2,
            mu_sequence: vec![1.0],
        };
        let res = sl0_solve(&f, &y, &schedule, 1.0, UpdateRule::SplitReproject).unwrap();
        // Square A: every projected step returns to the unique feasible
        // point, so each σ stops after one step instead of 50.
        assert_eq!(res.inner_iterations_total, res.outer_iterations);
        assert!(res.outer_iterations > 0);
    }
}
