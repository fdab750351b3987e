//! Distributed control of the steady viscous Burgers equation
//! `−ν u″ + u u′ = z + g` on `(0, 1)` with `u(0) = 0`, `u(1) = −1`.
//!
//! The state is continuous piecewise linear and the control piecewise
//! constant on a uniform mesh with `n` cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rmntr::linalg::{dot, norm, norm_inf};
use rmntr::smooth::{check_dim, Rescaled};
use rmntr::{CurvatureMode, EvalError, ProxFunction, SmoothObjective, TransferOperator};
use serde::{Deserialize, Serialize};

use crate::noise::StepNoise;
use crate::tridiag::Tridiagonal;
use crate::{halvings, with_curvature, Benchmark, ProblemError, Table};

const NEWTON_MAX_IT: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 30;
const NEWTON_TOL: f64 = 1e-12;
const RESIDUAL_BOUND: f64 = 1e-10;
const CACHE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BurgersConfig {
    pub n: usize,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub noise: Option<StepNoise>,
    pub curvature: CurvatureMode,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            n: 2048,
            nu: 0.08,
            alpha: 1e-4,
            beta: 1e-2,
            seed: 7,
            noise: Some(StepNoise::default()),
            curvature: CurvatureMode::GaussNewton,
        }
    }
}

/// `g(x) = 2(ν + x³)`
pub fn forcing(nu: f64, x: f64) -> f64 {
    2.0 * (nu + x * x * x)
}

pub fn target_exact(x: f64) -> f64 {
    -x * x
}

pub struct BurgersProblem {
    cfg: BurgersConfig,
    /// Target at the fine nodes, noise included.
    target: Vec<f64>,
}

impl BurgersProblem {
    pub fn new(cfg: BurgersConfig) -> Result<Self, ProblemError> {
        if cfg.n < 2 {
            return Err(ProblemError::Config("Burgers needs n >= 2".into()));
        }
        if !(cfg.nu > 0.0 && cfg.alpha >= 0.0 && cfg.beta >= 0.0) {
            return Err(ProblemError::Config("need nu > 0, alpha >= 0, beta >= 0".into()));
        }
        let n = cfg.n;
        let mut target: Vec<f64> = (0..=n).map(|i| target_exact(i as f64 / n as f64)).collect();
        if let Some(noise) = &cfg.noise {
            noise.validate().map_err(ProblemError::Config)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for (t, e) in target.iter_mut().zip(noise.sample(n, &mut rng)) {
                *t += e;
            }
        }
        Ok(Self { cfg, target })
    }

    pub fn config(&self) -> &BurgersConfig {
        &self.cfg
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// The rediscretized objective on `n >> depth` cells, in physical control
    /// units.
    pub fn objective_at_depth(&self, depth: usize) -> Result<BurgersObjective, ProblemError> {
        let stride = 1 << depth;
        let n = self.cfg.n / stride;
        let target = self.target.iter().step_by(stride).copied().collect();
        BurgersObjective::new(n, self.cfg.nu, self.cfg.alpha, target)
    }
}

impl Benchmark for BurgersProblem {
    fn dim(&self) -> usize {
        self.cfg.n
    }

    fn phi(&self) -> Result<ProxFunction, ProblemError> {
        Ok(ProxFunction::l1(self.cfg.beta / self.cfg.n as f64)?)
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.cfg.n]
    }

    fn max_levels(&self) -> usize {
        halvings(self.cfg.n, 2)
    }

    fn level_objective(&self, level: usize, levels: usize) -> Result<Box<dyn SmoothObjective>, ProblemError> {
        let depth = levels - 1 - level;
        let obj = self.objective_at_depth(depth)?;
        let native = CurvatureMode::GaussNewton;
        if depth == 0 {
            with_curvature(obj, self.cfg.curvature, native)
        } else {
            let scale = 0.5f64.powf(depth as f64 / 2.0);
            with_curvature(Rescaled::new(obj, scale), self.cfg.curvature, native)
        }
    }

    fn transfer(&self, level: usize, levels: usize) -> Result<TransferOperator, ProblemError> {
        let depth = levels - 2 - level;
        Ok(TransferOperator::avg_1d(self.cfg.n >> depth)?)
    }

    fn export(&self, z: &[f64]) -> Result<Table, ProblemError> {
        let n = self.cfg.n;
        let mut obj = self.objective_at_depth(0)?;
        let u = obj.state(z)?;
        let x: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        // control on the cell to the right of each node, repeated at x = 1
        let mut zc = z.to_vec();
        zc.push(z[n - 1]);
        Ok(Table::new(vec![("x", x), ("u", u), ("u_d", self.target.clone()), ("z", zc)]))
    }
}

struct State {
    z: Vec<f64>,
    /// Interior nodal values.
    u: Vec<f64>,
    jac: Tridiagonal,
}

/// Reduced objective `½‖S(z) − u_d‖²_M + (α/2) h ‖z‖²` with `S` the discrete
/// solution operator.
pub struct BurgersObjective {
    n: usize,
    h: f64,
    nu: f64,
    alpha: f64,
    target: Vec<f64>,
    gload: Vec<f64>,
    cache: Vec<State>,
    warm: Vec<f64>,
}

impl BurgersObjective {
    pub fn new(n: usize, nu: f64, alpha: f64, target: Vec<f64>) -> Result<Self, ProblemError> {
        if n < 2 || target.len() != n + 1 {
            return Err(ProblemError::Config(format!("need n >= 2 and n + 1 target values, n = {n}")));
        }
        let h = 1.0 / n as f64;
        let gq = [(-(0.6f64).sqrt(), 5.0 / 9.0), (0.0, 8.0 / 9.0), ((0.6f64).sqrt(), 5.0 / 9.0)];
        let mut node_load = vec![0.0; n + 1];
        for cell in 0..n {
            let xl = cell as f64 * h;
            for &(xi, w) in &gq {
                let s = 0.5 * (xi + 1.0);
                let gx = forcing(nu, xl + s * h) * w * 0.5 * h;
                node_load[cell] += gx * (1.0 - s);
                node_load[cell + 1] += gx * s;
            }
        }
        let warm = (1..n).map(|i| -(i as f64) * h).collect();
        Ok(Self {
            n,
            h,
            nu,
            alpha,
            target,
            gload: node_load[1..n].to_vec(),
            cache: Vec::new(),
            warm,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn full(&self, u: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n + 1);
        out.push(0.0);
        out.extend_from_slice(u);
        out.push(-1.0);
        out
    }

    /// `(M_z z)_i = h/2 (z_{i-1} + z_i)` at interior node `i`.
    fn control_load(&self, z: &[f64]) -> Vec<f64> {
        (1..self.n).map(|i| 0.5 * self.h * (z[i - 1] + z[i])).collect()
    }

    /// `M_zᵀ λ` for an interior vector `λ`.
    fn control_load_t(&self, lam: &[f64]) -> Vec<f64> {
        let node = |i: usize| if i == 0 || i == self.n { 0.0 } else { lam[i - 1] };
        (0..self.n).map(|j| 0.5 * self.h * (node(j) + node(j + 1))).collect()
    }

    /// Interior rows of the consistent mass matrix applied to a nodal vector.
    fn mass_interior(&self, e: &[f64]) -> Vec<f64> {
        (1..self.n).map(|i| self.h / 6.0 * (e[i - 1] + 4.0 * e[i] + e[i + 1])).collect()
    }

    fn residual(&self, u: &[f64], load: &[f64]) -> Vec<f64> {
        let uf = self.full(u);
        let c = self.nu / self.h;
        (1..self.n)
            .map(|i| {
                let (l, m, r) = (uf[i - 1], uf[i], uf[i + 1]);
                c * (2.0 * m - l - r) + (m - l) * (l + 2.0 * m) / 6.0 + (r - m) * (2.0 * m + r) / 6.0
                    - load[i - 1]
            })
            .collect()
    }

    fn jacobian(&self, u: &[f64]) -> Tridiagonal {
        let uf = self.full(u);
        let c = self.nu / self.h;
        let m = self.n - 1;
        let mut jac = Tridiagonal { sub: vec![0.0; m], diag: vec![0.0; m], sup: vec![0.0; m] };
        for i in 1..self.n {
            let (l, mid, r) = (uf[i - 1], uf[i], uf[i + 1]);
            jac.sub[i - 1] = -c - (2.0 * l + mid) / 6.0;
            jac.diag[i - 1] = 2.0 * c + (r - l) / 6.0;
            jac.sup[i - 1] = -c + (mid + 2.0 * r) / 6.0;
        }
        jac
    }

    fn newton(&self, z: &[f64], start: &[f64]) -> Result<(Vec<f64>, Tridiagonal), EvalError> {
        let mut load = self.control_load(z);
        for (a, b) in load.iter_mut().zip(&self.gload) {
            *a += b;
        }
        let mut u = start.to_vec();
        let mut r = self.residual(&u, &load);
        let mut rn = norm(&r);
        // one extra step after the tolerance is met pushes the state to round-off
        let mut polish = false;
        for _ in 0..NEWTON_MAX_IT {
            if polish {
                break;
            }
            polish = norm_inf(&r) <= NEWTON_TOL;
            let step = self
                .jacobian(&u)
                .solve(&r)
                .ok_or_else(|| EvalError::StateSolve("singular Burgers Jacobian".into()))?;
            let mut lam = 1.0;
            let mut accepted = None;
            for _ in 0..=NEWTON_MAX_HALVINGS {
                let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a - lam * b).collect();
                let rt = self.residual(&trial, &load);
                let rtn = norm(&rt);
                if rtn < rn {
                    accepted = Some((trial, rt, rtn));
                    break;
                }
                lam *= 0.5;
            }
            match accepted {
                Some((trial, rt, rtn)) => {
                    u = trial;
                    r = rt;
                    rn = rtn;
                }
                None => break,
            }
        }
        let res = norm_inf(&r);
        if !(res <= RESIDUAL_BOUND) {
            return Err(EvalError::StateSolve(format!(
                "Burgers Newton stopped with residual {res:e} (n = {})",
                self.n
            )));
        }
        let jac = self.jacobian(&u);
        Ok((u, jac))
    }

    fn solve(&mut self, z: &[f64]) -> Result<usize, EvalError> {
        check_dim(self.n, z.len())?;
        if let Some(i) = self.cache.iter().position(|s| s.z == z) {
            return Ok(i);
        }
        let (u, jac) = match self.newton(z, &self.warm) {
            Ok(v) => v,
            Err(_) => {
                let cold: Vec<f64> = (1..self.n).map(|i| -(i as f64) * self.h).collect();
                self.newton(z, &cold)?
            }
        };
        self.warm = u.clone();
        if self.cache.len() == CACHE {
            self.cache.remove(0);
        }
        self.cache.push(State { z: z.to_vec(), u, jac });
        Ok(self.cache.len() - 1)
    }

    /// Nodal state `S(z)`, boundary values included.
    pub fn state(&mut self, z: &[f64]) -> Result<Vec<f64>, EvalError> {
        let i = self.solve(z)?;
        Ok(self.full(&self.cache[i].u))
    }

    /// Max-norm of the discrete state residual at `S(z)`.
    pub fn state_residual(&mut self, z: &[f64]) -> Result<f64, EvalError> {
        let i = self.solve(z)?;
        let mut load = self.control_load(z);
        for (a, b) in load.iter_mut().zip(&self.gload) {
            *a += b;
        }
        Ok(norm_inf(&self.residual(&self.cache[i].u, &load)))
    }

    fn error(&self, u: &[f64]) -> Vec<f64> {
        let uf = self.full(u);
        uf.iter().zip(&self.target).map(|(a, b)| a - b).collect()
    }
}

impl SmoothObjective for BurgersObjective {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&mut self, z: &[f64]) -> Result<f64, EvalError> {
        let i = self.solve(z)?;
        let e = self.error(&self.cache[i].u);
        let tracking: f64 = e.windows(2).map(|w| w[0] * w[0] + w[0] * w[1] + w[1] * w[1]).sum::<f64>() * self.h / 6.0;
        Ok(tracking + 0.5 * self.alpha * self.h * dot(z, z))
    }

    fn gradient(&mut self, z: &[f64]) -> Result<Vec<f64>, EvalError> {
        let i = self.solve(z)?;
        let e = self.error(&self.cache[i].u);
        let rhs = self.mass_interior(&e);
        let lam = self.cache[i]
            .jac
            .transpose()
            .solve(&rhs)
            .ok_or_else(|| EvalError::StateSolve("singular adjoint system".into()))?;
        let mut g = self.control_load_t(&lam);
        for (gj, zj) in g.iter_mut().zip(z) {
            *gj += self.alpha * self.h * zj;
        }
        Ok(g)
    }

    fn hessvec(&mut self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.n, v.len())?;
        let i = self.solve(z)?;
        let singular = || EvalError::StateSolve("singular linearized system".into());
        let jac = &self.cache[i].jac;
        let w = jac.solve(&self.control_load(v)).ok_or_else(singular)?;
        let mut wf = vec![0.0; self.n + 1];
        wf[1..self.n].copy_from_slice(&w);
        let q = self.mass_interior(&wf);
        let p = jac.transpose().solve(&q).ok_or_else(singular)?;
        let mut out = self.control_load_t(&p);
        for (o, vj) in out.iter_mut().zip(v) {
            *o += self.alpha * self.h * vj;
        }
        Ok(out)
    }
}
