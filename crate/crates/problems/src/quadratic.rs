//! Convex toy: `½ xᵀ A x − bᵀ x + β‖x‖₁` with `A = tridiag(−1, 2 + shift, −1)`.
//! Coarse levels are Galerkin, `f(Rᵀ y)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmntr::linalg::dot;
use rmntr::smooth::check_dim;
use rmntr::{CurvatureMode, EvalError, ProxFunction, SmoothObjective, TransferOperator};
use serde::{Deserialize, Serialize};

use crate::tridiag::Tridiagonal;
use crate::{halvings, with_curvature, Benchmark, ProblemError, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadraticConfig {
    pub n: usize,
    pub shift: f64,
    pub beta: f64,
    pub seed: u64,
    pub curvature: CurvatureMode,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self { n: 64, shift: 0.01, beta: 1e-3, seed: 7, curvature: CurvatureMode::Exact }
    }
}

pub struct TridiagonalQuadratic {
    a: Tridiagonal,
    b: Vec<f64>,
}

impl SmoothObjective for TridiagonalQuadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        check_dim(self.dim(), x.len())?;
        Ok(0.5 * dot(x, &self.a.apply(x)) - dot(&self.b, x))
    }
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.dim(), x.len())?;
        Ok(self.a.apply(x).iter().zip(&self.b).map(|(p, q)| p - q).collect())
    }
    fn hessvec(&mut self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.dim(), v.len())?;
        Ok(self.a.apply(v))
    }
}

/// `y ↦ f(Rᵀ y)`.
pub struct Galerkin {
    inner: Box<dyn SmoothObjective>,
    r: TransferOperator,
}

impl Galerkin {
    pub fn new(inner: Box<dyn SmoothObjective>, r: TransferOperator) -> Result<Self, ProblemError> {
        if inner.dim() != r.n_fine() {
            return Err(ProblemError::Config("Galerkin transfer does not match objective".into()));
        }
        Ok(Self { inner, r })
    }

    fn up(&self, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.r.n_coarse(), y.len())?;
        self.r.prolong(y).map_err(|e| EvalError::StateSolve(e.to_string()))
    }

    fn down(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.r.restrict(x).map_err(|e| EvalError::StateSolve(e.to_string()))
    }
}

impl SmoothObjective for Galerkin {
    fn dim(&self) -> usize {
        self.r.n_coarse()
    }
    fn value(&mut self, y: &[f64]) -> Result<f64, EvalError> {
        let x = self.up(y)?;
        self.inner.value(&x)
    }
    fn gradient(&mut self, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let x = self.up(y)?;
        let g = self.inner.gradient(&x)?;
        self.down(&g)
    }
    fn hessvec(&mut self, y: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        let x = self.up(y)?;
        let w = self.up(v)?;
        let hw = self.inner.hessvec(&x, &w)?;
        self.down(&hw)
    }
}

pub struct QuadraticProblem {
    cfg: QuadraticConfig,
    b: Vec<f64>,
}

impl QuadraticProblem {
    pub fn new(cfg: QuadraticConfig) -> Result<Self, ProblemError> {
        if cfg.n == 0 || !(cfg.shift > 0.0) || !(cfg.beta >= 0.0) {
            return Err(ProblemError::Config("quadratic needs n >= 1, shift > 0, beta >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let b = (0..cfg.n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Ok(Self { cfg, b })
    }

    pub fn fine_objective(&self) -> TridiagonalQuadratic {
        let n = self.cfg.n;
        TridiagonalQuadratic {
            a: Tridiagonal { sub: vec![-1.0; n], diag: vec![2.0 + self.cfg.shift; n], sup: vec![-1.0; n] },
            b: self.b.clone(),
        }
    }
}

impl Benchmark for QuadraticProblem {
    fn dim(&self) -> usize {
        self.cfg.n
    }

    fn phi(&self) -> Result<ProxFunction, ProblemError> {
        Ok(ProxFunction::l1(self.cfg.beta)?)
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.cfg.n]
    }

    fn max_levels(&self) -> usize {
        halvings(self.cfg.n, 1)
    }

    fn level_objective(&self, level: usize, levels: usize) -> Result<Box<dyn SmoothObjective>, ProblemError> {
        let mut obj: Box<dyn SmoothObjective> = Box::new(self.fine_objective());
        for l in (level..levels - 1).rev() {
            obj = Box::new(Galerkin::new(obj, self.transfer(l, levels)?)?);
        }
        match self.cfg.curvature {
            CurvatureMode::Exact => Ok(obj),
            mode => with_curvature(obj, mode, CurvatureMode::Exact),
        }
    }

    fn transfer(&self, level: usize, levels: usize) -> Result<TransferOperator, ProblemError> {
        Ok(TransferOperator::avg_1d(self.cfg.n >> (levels - 2 - level))?)
    }

    fn export(&self, x: &[f64]) -> Result<Table, ProblemError> {
        let i = (0..x.len()).map(|i| i as f64).collect();
        Ok(Table::new(vec![("i", i), ("x", x.to_vec())]))
    }
}
