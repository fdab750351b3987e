//! PINN for `−∇·(κ∇u) = g` on the unit square with `u = 0` on the boundary,
//! using a 2–H–1 sigmoid network.
//!
//! Parameters are laid out as `(W1 row-major as a 2×H matrix, b1, W2[, b2])`,
//! i.e. `(a_1..a_H, c_1..c_H, b_1..b_H, v_1..v_H)` for
//! `N(x, y) = Σ_k v_k σ(a_k x + c_k y + b_k)`.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rmntr::smooth::{check_dim, Anchored};
use rmntr::{CurvatureMode, EvalError, LevelStack, ProxFunction, SmoothObjective, TransferOperator};
use serde::{Deserialize, Serialize};

use crate::{with_curvature, Benchmark, ProblemError, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PinnConfig {
    pub hidden: usize,
    /// Collocation points per side, including the boundary.
    pub grid: usize,
    pub beta: f64,
    pub seed: u64,
    /// Standard deviation of the initial `W1` and `b1` entries.
    pub init_inner: f64,
    /// Standard deviation of the initial `W2` entries.
    pub init_outer: f64,
    pub output_bias: bool,
    pub curvature: CurvatureMode,
    pub coarse_model: PinnCoarseModel,
}

/// How a coarser level sees the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PinnCoarseModel {
    /// `f(x + Rᵀ(y − R x))` around the finer iterate `x`.
    Anchored,
    /// `f(Rᵀ y)`: a narrower network of merged neurons.
    Merged,
}

impl Default for PinnConfig {
    fn default() -> Self {
        Self {
            hidden: 60,
            grid: 32,
            beta: 1e-4,
            seed: 7,
            init_inner: 1.0,
            init_outer: 0.1,
            output_bias: false,
            curvature: CurvatureMode::Exact,
            coarse_model: PinnCoarseModel::Anchored,
        }
    }
}

pub fn kappa(x: f64, y: f64) -> [f64; 3] {
    let (sx, cx) = (2.0 * PI * x).sin_cos();
    let (sy, cy) = (2.0 * PI * y).sin_cos();
    [1.1 + 0.2 * sx * cy, 0.4 * PI * cx * cy, -0.4 * PI * sx * sy]
}

pub fn exact_solution(x: f64, y: f64) -> f64 {
    let q = 1.0 + 0.25 * (2.0 * PI * x).sin() * (2.0 * PI * y).sin() + 0.1 * x * y;
    x * (1.0 - x) * y * (1.0 - y) * q
}

/// `g = −∇·(κ∇u*)` in closed form.
pub fn forcing(x: f64, y: f64) -> f64 {
    let (sx, cx) = (2.0 * PI * x).sin_cos();
    let (sy, cy) = (2.0 * PI * y).sin_cos();
    let (px, py) = (x * (1.0 - x), y * (1.0 - y));
    let (dpx, dpy) = (1.0 - 2.0 * x, 1.0 - 2.0 * y);
    let p = px * py;
    let (p_x, p_y) = (dpx * py, px * dpy);
    let (p_xx, p_yy) = (-2.0 * py, -2.0 * px);
    let q = 1.0 + 0.25 * sx * sy + 0.1 * x * y;
    let q_x = 0.5 * PI * cx * sy + 0.1 * y;
    let q_y = 0.5 * PI * sx * cy + 0.1 * x;
    let q_xx = -PI * PI * sx * sy;
    let q_yy = q_xx;
    let u_x = p_x * q + p * q_x;
    let u_y = p_y * q + p * q_y;
    let lap = p_xx * q + 2.0 * p_x * q_x + p * q_xx + p_yy * q + 2.0 * p_y * q_y + p * q_yy;
    let [k, k_x, k_y] = kappa(x, y);
    -k * lap - k_x * u_x - k_y * u_y
}

/// Arithmetic needed by the loss; `f64` for values, [`Dual`] for directional
/// derivatives of the gradient.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> + AddAssign
{
    fn cst(v: f64) -> Self;
    /// `σ, σ′, σ″, σ‴`
    fn sigmoid(self) -> [Self; 4];
}

fn sigmoid_derivs(t: f64) -> [f64; 5] {
    let s = if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    };
    let d1 = s * (1.0 - s);
    let d2 = d1 * (1.0 - 2.0 * s);
    let d3 = d1 * (1.0 - 6.0 * s + 6.0 * s * s);
    let d4 = d2 * (1.0 - 12.0 * s + 12.0 * s * s);
    [s, d1, d2, d3, d4]
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn sigmoid(self) -> [Self; 4] {
        let d = sigmoid_derivs(self);
        [d[0], d[1], d[2], d[3]]
    }
}

/// `re + eps·ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual { re: self.re + o.re, eps: self.eps + o.eps }
    }
}
impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual { re: self.re - o.re, eps: self.eps - o.eps }
    }
}
impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}
impl Neg for Dual {
    type Output = Self;
    fn neg(self) -> Self {
        Dual { re: -self.re, eps: -self.eps }
    }
}
impl AddAssign for Dual {
    fn add_assign(&mut self, o: Self) {
        self.re += o.re;
        self.eps += o.eps;
    }
}

impl Scalar for Dual {
    fn cst(v: f64) -> Self {
        Dual { re: v, eps: 0.0 }
    }
    fn sigmoid(self) -> [Self; 4] {
        let d = sigmoid_derivs(self.re);
        std::array::from_fn(|j| Dual { re: d[j], eps: self.eps * d[j + 1] })
    }
}

#[derive(Debug, Clone, Copy)]
struct Interior {
    x: f64,
    y: f64,
    k: f64,
    kx: f64,
    ky: f64,
    g: f64,
}

/// Collocation data shared by all levels.
#[derive(Debug, Clone)]
pub struct Collocation {
    interior: Vec<Interior>,
    boundary: Vec<(f64, f64)>,
}

impl Collocation {
    pub fn uniform(grid: usize) -> Self {
        let h = 1.0 / (grid - 1) as f64;
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for j in 0..grid {
            for i in 0..grid {
                let (x, y) = (i as f64 * h, j as f64 * h);
                if i == 0 || j == 0 || i == grid - 1 || j == grid - 1 {
                    boundary.push((x, y));
                } else {
                    let [k, kx, ky] = kappa(x, y);
                    interior.push(Interior { x, y, k, kx, ky, g: forcing(x, y) });
                }
            }
        }
        Self { interior, boundary }
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }
}

/// Loss and gradient in physical parameters `(a, c, b, v[, b2])`. With
/// `frozen` residuals `r̄` the gradient is that of `Σ w_i r̄_i r_i(θ)` instead.
fn loss_grad<T: Scalar>(col: &Collocation, hidden: usize, p: &[T], frozen: Option<&[f64]>) -> (T, Vec<T>) {
    let h = hidden;
    let (a, rest) = p.split_at(h);
    let (c, rest) = rest.split_at(h);
    let (b, rest) = rest.split_at(h);
    let (v, rest) = rest.split_at(h);
    let b2 = rest.first().copied();
    let zero = T::cst(0.0);
    let mut grad = vec![zero; p.len()];
    let mut loss = zero;
    let mut sig = vec![[zero; 4]; h];

    let wi = 1.0 / col.interior.len() as f64;
    for (i, pt) in col.interior.iter().enumerate() {
        let (x, y) = (T::cst(pt.x), T::cst(pt.y));
        let (k, kx, ky) = (T::cst(pt.k), T::cst(pt.kx), T::cst(pt.ky));
        let mut r = T::cst(-pt.g);
        for j in 0..h {
            sig[j] = (a[j] * x + c[j] * y + b[j]).sigmoid();
            let [_, s1, s2, _] = sig[j];
            let q = a[j] * a[j] + c[j] * c[j];
            let m = kx * a[j] + ky * c[j];
            r += v[j] * (-(k * q * s2) - m * s1);
        }
        loss += T::cst(0.5 * wi) * r * r;
        let w = frozen.map_or(T::cst(wi) * r, |f| T::cst(wi * f[i]));
        for j in 0..h {
            let [_, s1, s2, s3] = sig[j];
            let q = a[j] * a[j] + c[j] * c[j];
            let m = kx * a[j] + ky * c[j];
            let two = T::cst(2.0);
            let wv = w * v[j];
            grad[j] += wv * (-(k * (two * a[j] * s2 + q * s3 * x)) - kx * s1 - m * s2 * x);
            grad[h + j] += wv * (-(k * (two * c[j] * s2 + q * s3 * y)) - ky * s1 - m * s2 * y);
            grad[2 * h + j] += wv * (-(k * q * s3) - m * s2);
            grad[3 * h + j] += w * (-(k * q * s2) - m * s1);
        }
    }

    let wb = 1.0 / col.boundary.len() as f64;
    let ni = col.interior.len();
    for (i, &(px, py)) in col.boundary.iter().enumerate() {
        let (x, y) = (T::cst(px), T::cst(py));
        let mut n = b2.unwrap_or(zero);
        for j in 0..h {
            sig[j] = (a[j] * x + c[j] * y + b[j]).sigmoid();
            n += v[j] * sig[j][0];
        }
        loss += T::cst(0.5 * wb) * n * n;
        let w = frozen.map_or(T::cst(wb) * n, |f| T::cst(wb * f[ni + i]));
        for j in 0..h {
            let [s0, s1, _, _] = sig[j];
            let wv = w * v[j] * s1;
            grad[j] += wv * x;
            grad[h + j] += wv * y;
            grad[2 * h + j] += wv;
            grad[3 * h + j] += w * s0;
        }
        if b2.is_some() {
            grad[4 * h] += w;
        }
    }
    (loss, grad)
}

/// Rows `∂r_i/∂p` for interior residuals then `∂N/∂p` at boundary points,
/// row-major, together with the residual values.
fn jacobian(col: &Collocation, hidden: usize, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = hidden;
    let dim = p.len();
    let (a, c, b, v) = (&p[..h], &p[h..2 * h], &p[2 * h..3 * h], &p[3 * h..4 * h]);
    let b2 = p.get(4 * h).copied();
    let rows = col.interior.len() + col.boundary.len();
    let mut jac = vec![0.0; rows * dim];
    let mut res = Vec::with_capacity(rows);
    for (i, pt) in col.interior.iter().enumerate() {
        let row = &mut jac[i * dim..(i + 1) * dim];
        let mut r = -pt.g;
        for j in 0..h {
            let [_, s1, s2, s3, _] = sigmoid_derivs(a[j] * pt.x + c[j] * pt.y + b[j]);
            let q = a[j] * a[j] + c[j] * c[j];
            let m = pt.kx * a[j] + pt.ky * c[j];
            let phi = -pt.k * q * s2 - m * s1;
            r += v[j] * phi;
            row[j] = v[j] * (-pt.k * (2.0 * a[j] * s2 + q * s3 * pt.x) - pt.kx * s1 - m * s2 * pt.x);
            row[h + j] = v[j] * (-pt.k * (2.0 * c[j] * s2 + q * s3 * pt.y) - pt.ky * s1 - m * s2 * pt.y);
            row[2 * h + j] = v[j] * (-pt.k * q * s3 - m * s2);
            row[3 * h + j] = phi;
        }
        res.push(r);
    }
    let ni = col.interior.len();
    for (i, &(x, y)) in col.boundary.iter().enumerate() {
        let row = &mut jac[(ni + i) * dim..(ni + i + 1) * dim];
        let mut n = b2.unwrap_or(0.0);
        for j in 0..h {
            let [s0, s1, ..] = sigmoid_derivs(a[j] * x + c[j] * y + b[j]);
            n += v[j] * s0;
            row[j] = v[j] * s1 * x;
            row[h + j] = v[j] * s1 * y;
            row[2 * h + j] = v[j] * s1;
            row[3 * h + j] = s0;
        }
        if b2.is_some() {
            row[4 * h] = 1.0;
        }
        res.push(n);
    }
    (jac, res)
}

/// Exact Hessian at a fixed point, `Jᵀ W J + Σ w_i r_i ∇²r_i`, where the
/// second part is block diagonal over neurons.
struct HessianCache {
    at: Vec<f64>,
    jac: Vec<f64>,
    weights: Vec<f64>,
    /// Row-major 4×4 blocks over `(a_k, c_k, b_k, v_k)`.
    blocks: Vec<[f64; 16]>,
}

impl HessianCache {
    fn build(col: &Collocation, hidden: usize, p: &[f64]) -> Self {
        let (jac, res) = jacobian(col, hidden, p);
        let (ni, nb) = (col.interior.len(), col.boundary.len());
        let mut weights = vec![1.0 / ni as f64; ni];
        weights.extend(std::iter::repeat_n(1.0 / nb as f64, nb));
        let mut blocks = vec![[0.0; 16]; hidden];
        for q in 0..4 {
            let dir: Vec<Dual> = p
                .iter()
                .enumerate()
                .map(|(j, &re)| Dual { re, eps: if j / hidden == q && j < 4 * hidden { 1.0 } else { 0.0 } })
                .collect();
            let (_, g) = loss_grad(col, hidden, &dir, Some(&res));
            for (k, blk) in blocks.iter_mut().enumerate() {
                for i in 0..4 {
                    blk[i * 4 + q] = g[i * hidden + k].eps;
                }
            }
        }
        Self { at: p.to_vec(), jac, weights, blocks }
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        let dim = u.len();
        let hidden = self.blocks.len();
        let mut out = vec![0.0; dim];
        for (row, w) in self.jac.chunks_exact(dim).zip(&self.weights) {
            let t = w * row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            for (o, r) in out.iter_mut().zip(row) {
                *o += t * r;
            }
        }
        for (k, blk) in self.blocks.iter().enumerate() {
            let idx = [k, hidden + k, 2 * hidden + k, 3 * hidden + k];
            for i in 0..4 {
                out[idx[i]] += (0..4).map(|j| blk[i * 4 + j] * u[idx[j]]).sum::<f64>();
            }
        }
        out
    }
}

/// Network value at a point for physical parameters.
pub fn network(hidden: usize, p: &[f64], x: f64, y: f64) -> f64 {
    let h = hidden;
    let mut n = p.get(4 * h).copied().unwrap_or(0.0);
    for j in 0..h {
        let t = p[j] * x + p[h + j] * y + p[2 * h + j];
        n += p[3 * h + j] * sigmoid_derivs(t)[0];
    }
    n
}

/// PINN loss over `θ`, evaluated at the physical parameters `S θ` where `S`
/// scales the first-layer block by `inner` and the output weights by `outer`.
pub struct PinnObjective {
    col: std::rc::Rc<Collocation>,
    hidden: usize,
    bias: bool,
    inner: f64,
    outer: f64,
    hessian: Option<HessianCache>,
}

impl PinnObjective {
    pub fn new(col: std::rc::Rc<Collocation>, hidden: usize, bias: bool, inner: f64, outer: f64) -> Self {
        Self { col, hidden, bias, inner, outer, hessian: None }
    }

    /// Hessian-vector product by forward differentiation of the gradient;
    /// slower than [`SmoothObjective::hessvec`] but independent of the cache.
    pub fn hessvec_dual(&self, theta: &[f64], w: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.check(theta)?;
        self.check(w)?;
        let p: Vec<Dual> = theta
            .iter()
            .zip(w)
            .enumerate()
            .map(|(j, (t, d))| Dual { re: t * self.scale(j), eps: d * self.scale(j) })
            .collect();
        let (_, g) = loss_grad(&self.col, self.hidden, &p, None);
        Ok(g.iter().enumerate().map(|(j, v)| v.eps * self.scale(j)).collect())
    }

    fn scale(&self, j: usize) -> f64 {
        if j < 3 * self.hidden {
            self.inner
        } else if j < 4 * self.hidden {
            self.outer
        } else {
            1.0
        }
    }

    pub fn physical(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().enumerate().map(|(j, t)| t * self.scale(j)).collect()
    }

    fn check(&self, v: &[f64]) -> Result<(), EvalError> {
        check_dim(self.dim(), v.len())
    }
}

impl SmoothObjective for PinnObjective {
    fn dim(&self) -> usize {
        4 * self.hidden + usize::from(self.bias)
    }

    fn value(&mut self, theta: &[f64]) -> Result<f64, EvalError> {
        self.check(theta)?;
        let (l, _) = loss_grad(&self.col, self.hidden, &self.physical(theta), None);
        if l.is_finite() {
            Ok(l)
        } else {
            Err(EvalError::NonFinite("PINN loss"))
        }
    }

    fn gradient(&mut self, theta: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.check(theta)?;
        let (_, g) = loss_grad(&self.col, self.hidden, &self.physical(theta), None);
        Ok(g.iter().enumerate().map(|(j, v)| v * self.scale(j)).collect())
    }

    fn hessvec(&mut self, theta: &[f64], w: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.check(theta)?;
        self.check(w)?;
        let p = self.physical(theta);
        if self.hessian.as_ref().is_none_or(|h| h.at != p) {
            self.hessian = Some(HessianCache::build(&self.col, self.hidden, &p));
        }
        let u = self.physical(w);
        let hu = self.hessian.as_ref().expect("built above").apply(&u);
        Ok(hu.iter().enumerate().map(|(j, v)| v * self.scale(j)).collect())
    }
}

pub struct PinnProblem {
    cfg: PinnConfig,
    col: std::rc::Rc<Collocation>,
}

impl PinnProblem {
    pub fn new(cfg: PinnConfig) -> Result<Self, ProblemError> {
        if cfg.hidden == 0 || cfg.grid < 3 {
            return Err(ProblemError::Config("PINN needs hidden >= 1 and grid >= 3".into()));
        }
        if !(cfg.beta >= 0.0 && cfg.init_inner >= 0.0 && cfg.init_outer >= 0.0) {
            return Err(ProblemError::Config("beta and init scales must be nonnegative".into()));
        }
        let col = std::rc::Rc::new(Collocation::uniform(cfg.grid));
        Ok(Self { cfg, col })
    }

    pub fn config(&self) -> &PinnConfig {
        &self.cfg
    }

    pub fn collocation(&self) -> &Collocation {
        &self.col
    }

    pub fn objective_at_depth(&self, depth: usize) -> PinnObjective {
        let hidden = self.cfg.hidden >> depth;
        let half = 0.5f64.powf(depth as f64 / 2.0);
        PinnObjective::new(self.col.clone(), hidden, self.cfg.output_bias, half, 1.0 / half)
    }
}

impl Benchmark for PinnProblem {
    fn dim(&self) -> usize {
        4 * self.cfg.hidden + usize::from(self.cfg.output_bias)
    }

    fn phi(&self) -> Result<ProxFunction, ProblemError> {
        Ok(ProxFunction::l1(self.cfg.beta)?)
    }

    fn initial_point(&self) -> Vec<f64> {
        let h = self.cfg.hidden;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let draw = |sd: f64, rng: &mut ChaCha8Rng| {
            if sd == 0.0 {
                0.0
            } else {
                Normal::new(0.0, sd).expect("validated").sample(rng)
            }
        };
        let mut theta: Vec<f64> = (0..3 * h).map(|_| draw(self.cfg.init_inner, &mut rng)).collect();
        theta.extend((0..h).map(|_| draw(self.cfg.init_outer, &mut rng)));
        if self.cfg.output_bias {
            theta.push(0.0);
        }
        theta
    }

    fn max_levels(&self) -> usize {
        if self.cfg.output_bias {
            return 1;
        }
        crate::halvings(self.cfg.hidden, 1)
    }

    fn level_objective(&self, level: usize, levels: usize) -> Result<Box<dyn SmoothObjective>, ProblemError> {
        let obj = self.objective_at_depth(levels - 1 - level);
        with_curvature(obj, self.cfg.curvature, CurvatureMode::Exact)
    }

    fn transfer(&self, level: usize, levels: usize) -> Result<TransferOperator, ProblemError> {
        let depth = levels - 2 - level;
        Ok(TransferOperator::avg_1d(4 * (self.cfg.hidden >> depth))?)
    }

    fn level_stack(&self, levels: usize) -> Result<LevelStack<'static>, ProblemError> {
        let max = self.max_levels();
        if levels == 0 || levels > max {
            return Err(ProblemError::TooManyLevels { levels, max });
        }
        if self.cfg.coarse_model == PinnCoarseModel::Merged {
            let objectives = (0..levels)
                .map(|l| self.level_objective(l, levels))
                .collect::<Result<Vec<_>, _>>()?;
            let transfers = (0..levels - 1)
                .map(|l| self.transfer(l, levels))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(LevelStack::new(objectives, transfers)?);
        }
        let transfers = (0..levels - 1)
            .map(|l| self.transfer(l, levels))
            .collect::<Result<Vec<_>, _>>()?;
        let offsets: Vec<_> = transfers
            .iter()
            .map(|r| Rc::new(RefCell::new(vec![0.0; r.n_fine()])))
            .collect();
        let fine = || with_curvature(self.objective_at_depth(0), self.cfg.curvature, CurvatureMode::Exact);
        let mut objectives = Vec::with_capacity(levels);
        for level in 0..levels {
            // Each level nests the transfers of all finer ones around a
            // fresh copy of the fine network.
            let mut obj = fine()?;
            for l in (level..levels - 1).rev() {
                obj = Box::new(Anchored::with_offset(obj, transfers[l].clone(), offsets[l].clone())?);
            }
            objectives.push(obj);
        }
        Ok(LevelStack::new(objectives, transfers)?)
    }

    fn export(&self, theta: &[f64]) -> Result<Table, ProblemError> {
        check_dim(self.dim(), theta.len())?;
        let g = self.cfg.grid;
        let h = 1.0 / (g - 1) as f64;
        let (mut x, mut y, mut n, mut u) = (vec![], vec![], vec![], vec![]);
        for j in 0..g {
            for i in 0..g {
                let (px, py) = (i as f64 * h, j as f64 * h);
                x.push(px);
                y.push(py);
                n.push(network(self.cfg.hidden, theta, px, py));
                u.push(exact_solution(px, py));
            }
        }
        Ok(Table::new(vec![("x", x), ("y", y), ("u", n), ("u_exact", u)]))
    }
}
