//! Benchmark problems: Burgers control, semilinear elliptic control, a
//! one-hidden-layer PINN and a small quadratic toy.

use rmntr::{
    CurvatureMode, EngineError, EvalError, LevelStack, ProxError, ProxFunction, SmoothObjective,
    TransferError, TransferOperator,
};
use thiserror::Error;

pub mod burgers;
pub mod mg;
pub mod noise;
pub mod pinn;
pub mod quadratic;
pub mod semilinear;
pub mod tridiag;

pub use burgers::{BurgersConfig, BurgersObjective, BurgersProblem};
pub use pinn::{PinnCoarseModel, PinnConfig, PinnObjective, PinnProblem};
pub use quadratic::{QuadraticConfig, QuadraticProblem};
pub use semilinear::{SemilinearConfig, SemilinearObjective, SemilinearProblem};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid problem configuration: {0}")]
    Config(String),
    #[error("{levels} levels requested, at most {max} possible")]
    TooManyLevels { levels: usize, max: usize },
    #[error("curvature mode {0:?} is not available for this problem")]
    Curvature(CurvatureMode),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Named columns for solution export.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(cols: Vec<(&str, Vec<f64>)>) -> Self {
        let (headers, columns) = cols.into_iter().map(|(h, c)| (h.to_string(), c)).unzip();
        Self { headers, columns }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

/// A problem family that can produce a hierarchy of objectives.
///
/// Level 0 is the coarsest; `levels - 1` is the fine problem.
pub trait Benchmark {
    fn dim(&self) -> usize;
    fn phi(&self) -> Result<ProxFunction, ProblemError>;
    fn initial_point(&self) -> Vec<f64>;
    fn max_levels(&self) -> usize;
    fn level_objective(&self, level: usize, levels: usize) -> Result<Box<dyn SmoothObjective>, ProblemError>;
    /// Transfer from level `level + 1` to level `level`.
    fn transfer(&self, level: usize, levels: usize) -> Result<TransferOperator, ProblemError>;
    fn export(&self, x: &[f64]) -> Result<Table, ProblemError>;

    fn level_stack(&self, levels: usize) -> Result<LevelStack<'static>, ProblemError> {
        let max = self.max_levels();
        if levels == 0 || levels > max {
            return Err(ProblemError::TooManyLevels { levels, max });
        }
        let objectives = (0..levels)
            .map(|l| self.level_objective(l, levels))
            .collect::<Result<Vec<_>, _>>()?;
        let transfers = (0..levels - 1)
            .map(|l| self.transfer(l, levels))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LevelStack::new(objectives, transfers)?)
    }
}

/// Apply a curvature choice to a problem objective whose native `hessvec` is
/// `native`.
pub(crate) fn with_curvature<O: SmoothObjective + 'static>(
    obj: O,
    mode: CurvatureMode,
    native: CurvatureMode,
) -> Result<Box<dyn SmoothObjective>, ProblemError> {
    if mode == native {
        Ok(Box::new(obj))
    } else if mode == CurvatureMode::FdGradient {
        Ok(Box::new(rmntr::smooth::FdGradient::new(obj)))
    } else {
        Err(ProblemError::Curvature(mode))
    }
}

/// Number of times `n` can be halved while staying even, plus one.
pub(crate) fn halvings(mut n: usize, min: usize) -> usize {
    let mut levels = 1;
    while n % 2 == 0 && n / 2 >= min {
        n /= 2;
        levels += 1;
    }
    levels
}
