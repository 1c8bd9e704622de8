//! Reconstruction algorithms: the smoothed-ℓ0 family and an IHT baseline.

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod iht;
mod registry;
mod sl0;

pub use iht::{hard_threshold, iht_solve, IHT_MAX_ITERS, IHT_TOLERANCE};
pub use registry::{AlgorithmRegistry, Iht, Reconstructor, SolveContext, Sl0Min, Sl0Mss, Sl0Std};
pub use sl0::{
    combined_update, sl0_min_solve, sl0_mss_solve, sl0_solve, sl0_std_solve, split_update,
    MssImpl, UpdateRule,
};

/// `f_σ(x) = exp(−x²/(2σ²))`.
#[inline]
pub fn gaussian_kernel(x: f64, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    (-(x * x) / (2.0 * sigma * sigma)).exp()
}

/// `g(x) = Σ f_σ(x_i)`; `N − g(x)` approximates the number of nonzeros.
pub fn smoothed_zero_count(x: &DVector<f64>, sigma: f64) -> f64 {
    x.iter().map(|&v| gaussian_kernel(v, sigma)).sum()
}

/// `d = x ∘ exp(−(x ∘ x)/(2σ²))`. Since `∇g = −d/σ²`, a small step
/// `x − μd` decreases `N − g`.
pub fn descent_direction(x: &DVector<f64>, sigma: f64) -> DVector<f64> {
    x.map(|v| v * gaussian_kernel(v, sigma))
}

/// Initial σ as a function of the least-norm start `x̂₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaInit {
    /// `σ₀ = 2·max|x̂₀|`.
    TwiceMaxAbs,
    /// `σ₀ = max|x̂₀| / (c·δ)`.
    InverseDelta(f64),
}

/// Parameters of one SL0 variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSchedule {
    pub sigma_up: f64,
    pub sigma_min: f64,
    pub sigma_init: SigmaInit,
    /// Step size per outer iteration; the last entry repeats.
    pub mu_sequence: Vec<f64>,
    /// Inner-iteration budget for the first σ; real valued.
    pub l_init: f64,
    /// Growth factor of the budget after each σ decrease.
    pub l_up: f64,
    /// Inner loop stops once `‖x̂ − x̂_prev‖₂ ≤ σ·ε`; zero disables the check.
    pub epsilon: f64,
}

impl SolverSchedule {
    /// Classic SL0 with the widely used problem-independent parameters.
    pub fn standard() -> Self {
        Self {
            sigma_up: 0.5,
            sigma_min: 0.01,
            sigma_init: SigmaInit::TwiceMaxAbs,
            mu_sequence: vec![1.0],
            l_init: 3.0,
            l_up: 1.0,
            epsilon: 0.0,
        }
    }

    /// Standard SL0 with the inner budget growing by 1.7 per σ.
    pub fn min() -> Self {
        Self {
            l_up: 1.7,
            ..Self::standard()
        }
    }

    /// Modified-step-size schedule (SL0 MSS).
    pub fn mss() -> Self {
        Self {
            sigma_up: 0.7,
            sigma_min: 0.01,
            sigma_init: SigmaInit::InverseDelta(2.75),
            mu_sequence: vec![0.001, 0.001, 0.001, 0.05, 0.06, 1.4],
            l_init: 2.0,
            l_up: 1.9,
            epsilon: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSchedule(msg.to_string()));
        if !(self.sigma_up > 0.0 && self.sigma_up < 1.0) {
            return bad("sigma_up must lie in (0, 1)");
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return bad("sigma_min must be positive");
        }
        if self.mu_sequence.is_empty() {
            return bad("mu_sequence must not be empty");
        }
        if self.mu_sequence.iter().any(|mu| !(*mu > 0.0 && mu.is_finite())) {
            return bad("step sizes must be positive");
        }
        if !(self.l_init > 0.0 && self.l_init.is_finite()) {
            return bad("L must be positive");
        }
        if !(self.l_up >= 1.0 && self.l_up.is_finite()) {
            return bad("L_up must be at least 1");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be nonnegative");
        }
        if let SigmaInit::InverseDelta(c) = self.sigma_init {
            if !(c > 0.0 && c.is_finite()) {
                return bad("sigma init constant must be positive");
            }
        }
        Ok(())
    }

    /// Step size of outer iteration `m` (1-based).
    pub fn mu(&self, m: usize) -> f64 {
        let idx = m.clamp(1, self.mu_sequence.len()) - 1;
        self.mu_sequence[idx]
    }

    pub fn initial_sigma(&self, max_abs: f64, delta: f64) -> f64 {
        match self.sigma_init {
            SigmaInit::TwiceMaxAbs => 2.0 * max_abs,
            SigmaInit::InverseDelta(c) => max_abs / (c * delta),
        }
    }

    /// The geometric σ sequence visited from `sigma0`.
    pub fn sigma_sequence(&self, sigma0: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut sigma = sigma0;
        while sigma > self.sigma_min {
            out.push(sigma);
            sigma *= self.sigma_up;
        }
        out
    }

    /// Inner-iteration caps per outer iteration: `⌊L_init·L_upᵐ⌋`.
    pub fn inner_caps(&self, outer: usize) -> Vec<usize> {
        let mut l = self.l_init;
        (0..outer)
            .map(|_| {
                let cap = inner_cap(l);
                l *= self.l_up;
                cap
            })
            .collect()
    }
}

/// Number of inner iterations a real budget `L` allows.
pub(crate) fn inner_cap(l: f64) -> usize {
    l.floor() as usize
}

/// Output of one reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub x_hat: DVector<f64>,
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    /// Wall clock of the reconstruction.
    pub elapsed: Duration,
    /// `‖A x̂ − y‖₂ / ‖y‖₂` (zero when `y = 0` and `x̂ = 0`).
    pub residual_feasibility: f64,
}

pub(crate) fn relative_residual(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let r = (a * x - y).norm();
    let ny = y.norm();
    if ny == 0.0 {
        r
    } else {
        r / ny
    }
}
