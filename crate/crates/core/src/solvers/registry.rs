//! Name-keyed registry of reconstruction algorithms.
//!
//! Every algorithm implements [`Reconstructor`] and sees the raw measurement
//! matrix, so the time it reports covers its own factorization work.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{
    iht_solve, sl0_solve, MssImpl, ReconstructionResult, SolverSchedule, UpdateRule,
    IHT_MAX_ITERS,
};
use crate::error::{Error, Result};
use crate::linalg::{factorize, FactorMode};

/// Side information a solver may use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveContext {
    /// Indeterminacy `n/N` of the problem.
    pub delta: f64,
    /// True number of nonzeros (only oracle-sparsity methods read it).
    pub sparsity: usize,
}

impl SolveContext {
    pub fn for_problem(a: &DMatrix<f64>, sparsity: usize) -> Self {
        Self {
            delta: a.nrows() as f64 / a.ncols() as f64,
            sparsity,
        }
    }
}

pub trait Reconstructor: Send + Sync {
    fn name(&self) -> &str;

    fn reconstruct(
        &self,
        a: &DMatrix<f64>,
        y: &DVector<f64>,
        ctx: &SolveContext,
    ) -> Result<ReconstructionResult>;
}

impl fmt::Debug for dyn Reconstructor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Reconstructor({})", self.name())
    }
}

fn timed_sl0(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    schedule: &SolverSchedule,
    delta: f64,
    rule: UpdateRule,
) -> Result<ReconstructionResult> {
    let start = Instant::now();
    let mode = match rule {
        UpdateRule::Q2Split => FactorMode::Full,
        _ => FactorMode::Reduced,
    };
    let f = factorize(a, mode)?;
    let mut res = sl0_solve(&f, y, schedule, delta, rule)?;
    res.elapsed = start.elapsed();
    Ok(res)
}

/// Classic SL0.
#[derive(Debug, Clone)]
pub struct Sl0Std {
    pub schedule: SolverSchedule,
}

impl Default for Sl0Std {
    fn default() -> Self {
        Self {
            schedule: SolverSchedule::standard(),
        }
    }
}

impl Reconstructor for Sl0Std {
    fn name(&self) -> &str {
        "sl0-std"
    }

    fn reconstruct(
        &self,
        a: &DMatrix<f64>,
        y: &DVector<f64>,
        ctx: &SolveContext,
    ) -> Result<ReconstructionResult> {
        timed_sl0(a, y, &self.schedule, ctx.delta, UpdateRule::SplitReproject)
    }
}

/// SL0 with a growing inner budget.
#[derive(Debug, Clone)]
pub struct Sl0Min {
    pub schedule: SolverSchedule,
}

impl Default for Sl0Min {
    fn default() -> Self {
        Self {
            schedule: SolverSchedule::min(),
        }
    }
}

impl Reconstructor for Sl0Min {
    fn name(&self) -> &str {
        "sl0-min"
    }

    fn reconstruct(
        &self,
        a: &DMatrix<f64>,
        y: &DVector<f64>,
        ctx: &SolveContext,
    ) -> Result<ReconstructionResult> {
        timed_sl0(a, y, &self.schedule, ctx.delta, UpdateRule::SplitReproject)
    }
}

#[derive(Debug, Clone)]
pub struct Sl0Mss {
    pub implementation: MssImpl,
}

impl Reconstructor for Sl0Mss {
    fn name(&self) -> &str {
        match self.implementation {
            MssImpl::Auto => "sl0-mss",
            MssImpl::MssI => "sl0-mss1",
            MssImpl::MssII => "sl0-mss2",
        }
    }

    fn reconstruct(
        &self,
        a: &DMatrix<f64>,
        y: &DVector<f64>,
        ctx: &SolveContext,
    ) -> Result<ReconstructionResult> {
        let rule = self.implementation.update_rule(a.nrows(), a.ncols());
        timed_sl0(a, y, &SolverSchedule::mss(), ctx.delta, rule)
    }
}

#[derive(Debug, Clone)]
pub struct Iht {
    pub max_iters: usize,
}

impl Default for Iht {
    fn default() -> Self {
        Self {
            max_iters: IHT_MAX_ITERS,
        }
    }
}

impl Reconstructor for Iht {
    fn name(&self) -> &str {
        "iht"
    }

    fn reconstruct(
        &self,
        a: &DMatrix<f64>,
        y: &DVector<f64>,
        ctx: &SolveContext,
    ) -> Result<ReconstructionResult> {
        let k = ctx.sparsity.min(a.nrows());
        iht_solve(a, y, k, self.max_iters)
    }
}

#[derive(Clone, Default)]
pub struct AlgorithmRegistry {
    entries: BTreeMap<String, Arc<dyn Reconstructor>>,
}

impl AlgorithmRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `sl0-std`, `sl0-min`, `sl0-mss` (auto-dispatching), `sl0-mss1`,
    /// `sl0-mss2` and `iht`.
    pub fn builtin() -> Self {
        let mut reg = Self::new();
        reg.register(Arc::new(Sl0Std::default()));
        reg.register(Arc::new(Sl0Min::default()));
        for implementation in [MssImpl::Auto, MssImpl::MssI, MssImpl::MssII] {
            reg.register(Arc::new(Sl0Mss { implementation }));
        }
        reg.register(Arc::new(Iht::default()));
        reg
    }

    /// Registers under the algorithm's own name, replacing any previous entry.
    pub fn register(&mut self, algo: Arc<dyn Reconstructor>) {
        self.entries.insert(algo.name().to_string(), algo);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Reconstructor>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownAlgorithm(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl fmt::Debug for AlgorithmRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}
