//! Control of `−Δu + u³ = z` on the unit square with `u = 0` on the
//! boundary, P1 state on a uniform "/"-split triangulation and a piecewise
//! constant control stored on the `n × n` cell grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rmntr::linalg::{dot, norm_inf};
use rmntr::smooth::{check_dim, Rescaled};
use rmntr::{CurvatureMode, EvalError, ProxFunction, SmoothObjective, TransferOperator};
use serde::{Deserialize, Serialize};

use crate::mg::{apply_operator, pcg, Multigrid};
use crate::{halvings, with_curvature, Benchmark, ProblemError, Table};

const NEWTON_MAX_IT: usize = 50;
const NEWTON_MAX_HALVINGS: usize = 30;
const NEWTON_TOL: f64 = 1e-13;
const RESIDUAL_BOUND: f64 = 1e-10;
const CG_REL: f64 = 1e-13;
const CG_MAXIT: usize = 200;
const CACHE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemilinearConfig {
    /// Cells per side, a power of two.
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lower: f64,
    pub upper: f64,
    pub target: f64,
    /// Standard deviation of Gaussian noise added to the target; 0 disables it.
    pub sigma: f64,
    pub seed: u64,
    pub curvature: CurvatureMode,
}

impl Default for SemilinearConfig {
    fn default() -> Self {
        Self {
            n: 64,
            alpha: 1e-4,
            beta: 0.01,
            lower: -25.0,
            upper: 25.0,
            target: -1.0,
            sigma: 0.0,
            seed: 7,
            curvature: CurvatureMode::GaussNewton,
        }
    }
}

pub struct SemilinearProblem {
    cfg: SemilinearConfig,
    /// Target on all `(n+1)²` vertices, row-major.
    target: Vec<f64>,
}

impl SemilinearProblem {
    pub fn new(cfg: SemilinearConfig) -> Result<Self, ProblemError> {
        if cfg.n < 2 || !cfg.n.is_power_of_two() {
            return Err(ProblemError::Config(format!("semilinear n must be a power of two >= 2, got {}", cfg.n)));
        }
        if !(cfg.alpha >= 0.0 && cfg.beta >= 0.0 && cfg.sigma >= 0.0 && cfg.lower <= 0.0 && cfg.upper >= 0.0) {
            return Err(ProblemError::Config("need alpha, beta, sigma >= 0 and lower <= 0 <= upper".into()));
        }
        let nv = cfg.n + 1;
        let mut target = vec![cfg.target; nv * nv];
        if cfg.sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let normal = Normal::new(0.0, cfg.sigma).map_err(|e| ProblemError::Config(e.to_string()))?;
            for t in &mut target {
                *t += normal.sample(&mut rng);
            }
        }
        Ok(Self { cfg, target })
    }

    pub fn config(&self) -> &SemilinearConfig {
        &self.cfg
    }

    pub fn objective_at_depth(&self, depth: usize) -> Result<SemilinearObjective, ProblemError> {
        let stride = 1 << depth;
        let n = self.cfg.n / stride;
        let nv_f = self.cfg.n + 1;
        let mut target = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                target.push(self.target[j * stride * nv_f + i * stride]);
            }
        }
        SemilinearObjective::new(n, self.cfg.alpha, target)
    }
}

impl Benchmark for SemilinearProblem {
    fn dim(&self) -> usize {
        self.cfg.n * self.cfg.n
    }

    fn phi(&self) -> Result<ProxFunction, ProblemError> {
        let area = 1.0 / (self.cfg.n * self.cfg.n) as f64;
        Ok(ProxFunction::l1_box(self.cfg.beta * area, self.cfg.lower, self.cfg.upper)?)
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
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
            with_curvature(Rescaled::new(obj, 0.5f64.powi(depth as i32)), self.cfg.curvature, native)
        }
    }

    fn transfer(&self, level: usize, levels: usize) -> Result<TransferOperator, ProblemError> {
        let depth = levels - 2 - level;
        Ok(TransferOperator::tensor_2d(self.cfg.n >> depth, 2)?)
    }

    fn export(&self, z: &[f64]) -> Result<Table, ProblemError> {
        let n = self.cfg.n;
        let mut obj = self.objective_at_depth(0)?;
        let u = obj.state(z)?;
        let h = 1.0 / n as f64;
        let (mut x, mut y, mut zc, mut w) = (vec![], vec![], vec![], vec![]);
        // one row per vertex; control of the cell to the upper right, clamped
        for j in 0..=n {
            for i in 0..=n {
                x.push(i as f64 * h);
                y.push(j as f64 * h);
                zc.push(z[j.min(n - 1) * n + i.min(n - 1)]);
                w.push(self.target[j * (n + 1) + i]);
            }
        }
        Ok(Table::new(vec![("x", x), ("y", y), ("u", u), ("w", w), ("z", zc)]))
    }
}

struct State {
    z: Vec<f64>,
    /// Interior vertex values.
    u: Vec<f64>,
    mg: Multigrid,
    reaction: Vec<f64>,
}

/// `½ Σ_v m_v (S(z)_v − w_v)² + (α/2) h² ‖z‖²` with lumped vertex masses.
pub struct SemilinearObjective {
    n: usize,
    h2: f64,
    alpha: f64,
    target: Vec<f64>,
    /// Lumped mass of every vertex, row-major over `(n+1)²`.
    mass: Vec<f64>,
    cache: Vec<State>,
    warm: Vec<f64>,
}

impl SemilinearObjective {
    pub fn new(n: usize, alpha: f64, target: Vec<f64>) -> Result<Self, ProblemError> {
        let nv = n + 1;
        if n < 2 || !n.is_power_of_two() || target.len() != nv * nv {
            return Err(ProblemError::Config(format!("bad semilinear level: n = {n}, {} targets", target.len())));
        }
        let h2 = 1.0 / (n * n) as f64;
        // each triangle gives a third of its area h²/2 to each corner
        let mut mass = vec![0.0; nv * nv];
        for j in 0..n {
            for i in 0..n {
                let sw = j * nv + i;
                let (se, nw, ne) = (sw + 1, sw + nv, sw + nv + 1);
                for v in [sw, ne] {
                    mass[v] += h2 / 3.0;
                }
                for v in [se, nw] {
                    mass[v] += h2 / 6.0;
                }
            }
        }
        let m = n - 1;
        Ok(Self { n, h2, alpha, target, mass, cache: Vec::new(), warm: vec![0.0; m * m] })
    }

    fn m(&self) -> usize {
        self.n - 1
    }

    fn vertex_of_interior(&self, k: usize) -> usize {
        let m = self.m();
        (k / m + 1) * (self.n + 1) + k % m + 1
    }

    /// `∫ z φ_v` at interior vertices.
    fn control_load(&self, z: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m());
        let mut out = vec![0.0; m * m];
        let mut add = |i: usize, j: usize, v: f64| {
            if i >= 1 && j >= 1 && i < n && j < n {
                out[(j - 1) * m + i - 1] += v;
            }
        };
        let w = self.h2 / 6.0;
        for j in 0..n {
            for i in 0..n {
                let zc = z[j * n + i];
                add(i, j, 2.0 * w * zc);
                add(i + 1, j + 1, 2.0 * w * zc);
                add(i + 1, j, w * zc);
                add(i, j + 1, w * zc);
            }
        }
        out
    }

    fn control_load_t(&self, lam: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m());
        let at = |i: usize, j: usize| -> f64 {
            if i >= 1 && j >= 1 && i < n && j < n {
                lam[(j - 1) * m + i - 1]
            } else {
                0.0
            }
        };
        let w = self.h2 / 6.0;
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                out[j * n + i] = w * (2.0 * at(i, j) + 2.0 * at(i + 1, j + 1) + at(i + 1, j) + at(i, j + 1));
            }
        }
        out
    }

    fn interior_mass(&self, k: usize) -> f64 {
        self.mass[self.vertex_of_interior(k)]
    }

    /// `K u + M u³ − B z`
    fn residual(&self, u: &[f64], load: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; u.len()];
        let mut r = apply_operator(self.n, &zero, u);
        for (k, rk) in r.iter_mut().enumerate() {
            *rk += self.interior_mass(k) * u[k].powi(3) - load[k];
        }
        r
    }

    fn reaction(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(k, v)| 3.0 * self.interior_mass(k) * v * v).collect()
    }

    fn linear_solve(&self, reaction: &[f64], mg: &Multigrid, b: &[f64]) -> Result<Vec<f64>, EvalError> {
        let out = pcg(|x| apply_operator(self.n, reaction, x), |r| mg.vcycle(r), b, CG_REL, 1e-300, CG_MAXIT);
        if !out.converged && out.residual > 1e-12 * norm_inf(b).max(1e-300) {
            return Err(EvalError::StateSolve(format!(
                "CG stalled at residual {:e} after {} iterations",
                out.residual, out.iterations
            )));
        }
        Ok(out.x)
    }

    fn newton(&self, load: &[f64], start: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut u = start.to_vec();
        let mut r = self.residual(&u, load);
        let mut rn = rmntr::linalg::norm(&r);
        // one extra step after the tolerance is met pushes the state to round-off
        let mut polish = false;
        for _ in 0..NEWTON_MAX_IT {
            if polish {
                break;
            }
            polish = norm_inf(&r) <= NEWTON_TOL;
            let c = self.reaction(&u);
            let mg = Multigrid::new(self.n, &c);
            let step = self.linear_solve(&c, &mg, &r)?;
            let mut lam = 1.0;
            let mut accepted = None;
            for _ in 0..=NEWTON_MAX_HALVINGS {
                let trial: Vec<f64> = u.iter().zip(&step).map(|(a, b)| a - lam * b).collect();
                let rt = self.residual(&trial, load);
                let rtn = rmntr::linalg::norm(&rt);
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
                "semilinear Newton stopped with residual {res:e} (n = {})",
                self.n
            )));
        }
        Ok(u)
    }

    fn solve(&mut self, z: &[f64]) -> Result<usize, EvalError> {
        check_dim(self.n * self.n, z.len())?;
        if let Some(i) = self.cache.iter().position(|s| s.z == z) {
            return Ok(i);
        }
        let load = self.control_load(z);
        let u = match self.newton(&load, &self.warm) {
            Ok(u) => u,
            Err(_) => self.newton(&load, &vec![0.0; self.warm.len()])?,
        };
        let reaction = self.reaction(&u);
        let mg = Multigrid::new(self.n, &reaction);
        self.warm = u.clone();
        if self.cache.len() == CACHE {
            self.cache.remove(0);
        }
        self.cache.push(State { z: z.to_vec(), u, mg, reaction });
        Ok(self.cache.len() - 1)
    }

    /// State on all vertices, boundary zeros included.
    pub fn state(&mut self, z: &[f64]) -> Result<Vec<f64>, EvalError> {
        let i = self.solve(z)?;
        let nv = self.n + 1;
        let mut full = vec![0.0; nv * nv];
        for (k, v) in self.cache[i].u.iter().enumerate() {
            full[self.vertex_of_interior(k)] = *v;
        }
        Ok(full)
    }

    pub fn state_residual(&mut self, z: &[f64]) -> Result<f64, EvalError> {
        let i = self.solve(z)?;
        let load = self.control_load(z);
        Ok(norm_inf(&self.residual(&self.cache[i].u, &load)))
    }
}

impl SmoothObjective for SemilinearObjective {
    fn dim(&self) -> usize {
        self.n * self.n
    }

    fn value(&mut self, z: &[f64]) -> Result<f64, EvalError> {
        let u = self.state(z)?;
        let tracking: f64 = u
            .iter()
            .zip(&self.target)
            .zip(&self.mass)
            .map(|((a, b), m)| m * (a - b) * (a - b))
            .sum();
        Ok(0.5 * tracking + 0.5 * self.alpha * self.h2 * dot(z, z))
    }

    fn gradient(&mut self, z: &[f64]) -> Result<Vec<f64>, EvalError> {
        let i = self.solve(z)?;
        let rhs: Vec<f64> = self.cache[i]
            .u
            .iter()
            .enumerate()
            .map(|(k, u)| self.interior_mass(k) * (u - self.target[self.vertex_of_interior(k)]))
            .collect();
        let st = &self.cache[i];
        let lam = self.linear_solve(&st.reaction, &st.mg, &rhs)?;
        let mut g = self.control_load_t(&lam);
        for (gj, zj) in g.iter_mut().zip(z) {
            *gj += self.alpha * self.h2 * zj;
        }
        Ok(g)
    }

    fn hessvec(&mut self, z: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.n * self.n, v.len())?;
        let i = self.solve(z)?;
        let st = &self.cache[i];
        let w = self.linear_solve(&st.reaction, &st.mg, &self.control_load(v))?;
        let q: Vec<f64> = w.iter().enumerate().map(|(k, x)| self.interior_mass(k) * x).collect();
        let p = self.linear_solve(&st.reaction, &st.mg, &q)?;
        let mut out = self.control_load_t(&p);
        for (o, vj) in out.iter_mut().zip(v) {
            *o += self.alpha * self.h2 * vj;
        }
        Ok(out)
    }
}
