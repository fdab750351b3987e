//! Nonsmooth trust-region iteration and its recursive multilevel driver.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{add, dist, dot, norm, sub};
use crate::prox::{ProxError, ProxFunction};
use crate::smooth::{build_coarse_model, Counters, EvalError, SmoothObjective};
use crate::spg::{spg_solve, SpgError, SpgParams};
use crate::transfer::{TransferError, TransferOperator};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid trust-region parameters: {0}")]
    InvalidParams(String),
    #[error("initial point is outside dom φ")]
    Infeasible,
    #[error("inconsistent level stack: {0}")]
    Stack(String),
    #[error("non-positive predicted reduction {pred:e} at level {level}, k = {k}")]
    NonPositivePred { level: usize, k: usize, pred: f64 },
    #[error("FCD violated at level {level}, k = {k}: pred {pred:e} < {bound:e} (h = {h:e}, Δ = {delta:e})")]
    Fcd { level: usize, k: usize, pred: f64, bound: f64, h: f64, delta: f64 },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Spg(#[from] SpgError),
    #[error(transparent)]
    Prox(#[from] ProxError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TRParams {
    /// `Δ_i^s`, also the top-level initial radius.
    pub delta0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub kappa_stop: f64,
    /// Stopping tolerance `ε_r^h` at the finest level.
    pub eps_h: f64,
    /// Optional `ε_i^h` per level, coarsest first.
    pub eps_h_levels: Option<Vec<f64>>,
    /// Model-choice threshold `ε_{i-1}` used when `i > 1`.
    pub eps_entry: f64,
    /// `ε_i^Δ` for the return test of coarse sequences.
    pub eps_delta: f64,
    /// Iteration budget at the finest level.
    pub max_iter: usize,
    /// Iteration cap for each coarse minimization sequence.
    pub max_coarse_iter: usize,
    /// Fixed `t` in the stationarity measure.
    pub prox_t: f64,
    /// Abort on an FCD violation instead of only counting it.
    pub abort_on_fcd: bool,
    pub spg: SpgParams,
}

impl Default for TRParams {
    fn default() -> Self {
        Self {
            delta0: 50.0,
            eta1: 0.05,
            eta2: 0.95,
            gamma1: 0.25,
            gamma2: 0.25,
            gamma3: 2.0,
            kappa_stop: 0.6,
            eps_h: 1e-7,
            eps_h_levels: None,
            eps_entry: 0.1,
            eps_delta: 0.01,
            max_iter: 1000,
            max_coarse_iter: 100,
            prox_t: 1.0,
            abort_on_fcd: true,
            spg: SpgParams::default(),
        }
    }
}

impl TRParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidParams(m.to_string()));
        if !(self.delta0 > 0.0) {
            return bad("delta0 must be positive");
        }
        if !(0.0 < self.eta1 && self.eta1 < self.eta2 && self.eta2 < 1.0) {
            return bad("need 0 < eta1 < eta2 < 1");
        }
        if !(0.0 < self.gamma1 && self.gamma1 <= self.gamma2 && self.gamma2 < 1.0 && 1.0 <= self.gamma3) {
            return bad("need 0 < gamma1 <= gamma2 < 1 <= gamma3");
        }
        if !(0.0 < self.kappa_stop && self.kappa_stop < 1.0) {
            return bad("kappa_stop must lie in (0, 1)");
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.eps_h) || !unit(self.eps_entry) || !unit(self.eps_delta) {
            return bad("eps_h, eps_entry and eps_delta must lie in (0, 1)");
        }
        if let Some(levels) = &self.eps_h_levels {
            if !levels.iter().all(|&v| unit(v)) {
                return bad("eps_h_levels must lie in (0, 1)");
            }
        }
        if self.max_iter == 0 || self.max_coarse_iter == 0 {
            return bad("iteration budgets must be positive");
        }
        if !(self.prox_t > 0.0) {
            return bad("prox_t must be positive");
        }
        self.spg.validate()?;
        Ok(())
    }

    /// `ε_i^h` for level `level` of a stack whose finest level is `top`.
    pub fn eps_h_at(&self, level: usize, top: usize) -> f64 {
        if let Some(v) = self.eps_h_levels.as_ref().and_then(|l| l.get(level)) {
            return *v;
        }
        let mut eps = self.eps_h;
        for _ in level..top {
            eps = (0.1 * eps).max(1e-7);
        }
        eps
    }

    /// `ε_{i-1}` in the model-choice test at level `i`.
    pub fn entry_threshold(&self, level: usize, top: usize) -> f64 {
        if level > 1 {
            self.eps_entry
        } else {
            self.eps_h_at(0, top)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Taylor,
    Recursive,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Taylor => "taylor",
            ModelKind::Recursive => "recursive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessClass {
    Unsuccessful,
    Successful,
    VerySuccessful,
}

impl fmt::Display for SuccessClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuccessClass::Unsuccessful => "unsuccessful",
            SuccessClass::Successful => "successful",
            SuccessClass::VerySuccessful => "very_successful",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub rho: f64,
    pub accepted: bool,
    pub delta_plus: f64,
    pub class: SuccessClass,
}

/// Ratio test and radius update with fixed band representatives.
pub fn accept_and_update(
    ared: f64,
    pred: f64,
    delta: f64,
    params: &TRParams,
) -> Result<Acceptance, EngineError> {
    if !(pred > 0.0) {
        return Err(EngineError::NonPositivePred { level: 0, k: 0, pred });
    }
    let rho = if ared == f64::NEG_INFINITY { f64::NEG_INFINITY } else { ared / pred };
    let (class, delta_plus) = if rho >= params.eta2 {
        (SuccessClass::VerySuccessful, params.gamma3 * delta)
    } else if rho >= params.eta1 {
        (SuccessClass::Successful, delta)
    } else {
        (SuccessClass::Unsuccessful, params.gamma2 * delta)
    };
    Ok(Acceptance { rho, accepted: class != SuccessClass::Unsuccessful, delta_plus, class })
}

/// Recursive iff `i > 0`, `h_{i-1,0} ≥ κ_stop·h_{i,k}` and `h_{i-1,0} ≥ ε_{i-1}`.
pub fn model_choice(h_coarse0: f64, h_fine: f64, params: &TRParams, level: usize, top: usize) -> ModelKind {
    if level > 0
        && h_coarse0 >= params.kappa_stop * h_fine
        && h_coarse0 >= params.entry_threshold(level, top)
    {
        ModelKind::Recursive
    } else {
        ModelKind::Taylor
    }
}

/// `½·min{1, t_min κ_stop², κ_stop⁴/(κ_H − 1)}`.
pub fn kappa_fcd(t_min: f64, kappa_stop: f64, kappa_h: f64) -> f64 {
    let k2 = kappa_stop * kappa_stop;
    let curv = if kappa_h > 1.0 { k2 * k2 / (kappa_h - 1.0) } else { f64::INFINITY };
    0.5 * 1f64.min(t_min * k2).min(curv)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub level: usize,
    pub k: usize,
    /// `h_{i,k}` at the start of the iteration.
    pub h: f64,
    /// `Δ_{i,k}`
    pub delta: f64,
    pub rho: f64,
    pub kind: ModelKind,
    pub class: SuccessClass,
    /// Level objective after the iteration.
    pub f: f64,
    /// Minimization sequence this row belongs to.
    pub seq: usize,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceSummary {
    pub level: usize,
    pub iterations: usize,
    pub successes: usize,
    /// Largest `‖x_{i,ℓ} − x_{i,0}‖ / Δ_{i+1}` seen in the sequence.
    pub max_radius_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrustRegionTrace {
    pub rows: Vec<TraceRow>,
    pub sequences: Vec<SequenceSummary>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub fcd_violations: usize,
    pub prolonged_cauchy_violations: usize,
    pub prolonged_cauchy_checks: usize,
    /// Recursive steps that gave no admissible decrease and were replaced
    /// by a Taylor step.
    pub recursive_fallbacks: usize,
    pub infeasible_coarse: usize,
    pub containment_violations: usize,
    pub kappa_h_est: f64,
    pub kappa_h_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub status: SolveStatus,
    /// `F(x)` at the finest level.
    pub value: f64,
    pub h: f64,
    /// Iterations at the finest level.
    pub iterations: usize,
    pub trace: TrustRegionTrace,
    pub diagnostics: Diagnostics,
    pub counters: Counters,
    pub level_counters: Vec<Counters>,
}

/// Objectives ordered coarsest first with `transfers[j]` mapping level
/// `j + 1` to level `j`.
pub struct LevelStack<'a> {
    levels: Vec<Box<dyn SmoothObjective + 'a>>,
    transfers: Vec<TransferOperator>,
}

impl<'a> LevelStack<'a> {
    pub fn new(
        levels: Vec<Box<dyn SmoothObjective + 'a>>,
        transfers: Vec<TransferOperator>,
    ) -> Result<Self, EngineError> {
        if levels.is_empty() {
            return Err(EngineError::Stack("no levels".into()));
        }
        if transfers.len() + 1 != levels.len() {
            return Err(EngineError::Stack(format!(
                "{} levels need {} transfers, got {}",
                levels.len(),
                levels.len() - 1,
                transfers.len()
            )));
        }
        for (j, r) in transfers.iter().enumerate() {
            if r.n_coarse() != levels[j].dim() || r.n_fine() != levels[j + 1].dim() {
                return Err(EngineError::Stack(format!(
                    "transfer {j} maps {} -> {}, levels have {} and {}",
                    r.n_fine(),
                    r.n_coarse(),
                    levels[j + 1].dim(),
                    levels[j].dim()
                )));
            }
        }
        Ok(Self { levels, transfers })
    }

    pub fn single(level: Box<dyn SmoothObjective + 'a>) -> Self {
        Self { levels: vec![level], transfers: vec![] }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn transfers(&self) -> &[TransferOperator] {
        &self.transfers
    }

    pub fn finest_mut(&mut self) -> &mut (dyn SmoothObjective + 'a) {
        self.levels.last_mut().expect("non-empty").as_mut()
    }

    /// Level objectives, coarsest first.
    pub fn into_objectives(self) -> Vec<Box<dyn SmoothObjective + 'a>> {
        self.levels
    }
}

type Tally = Rc<RefCell<Vec<Counters>>>;

struct Counted<'a> {
    inner: &'a mut dyn SmoothObjective,
    level: usize,
    tally: Tally,
}

impl SmoothObjective for Counted<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        self.tally.borrow_mut()[self.level].fval += 1;
        self.inner.value(x)
    }
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.tally.borrow_mut()[self.level].grad += 1;
        self.inner.gradient(x)
    }
    fn hessvec(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.tally.borrow_mut()[self.level].hess += 1;
        self.inner.hessvec(x, v)
    }
    fn recenter(&mut self, x_fine: &[f64]) -> Result<(), EvalError> {
        self.inner.recenter(x_fine)
    }
}

struct LevelOutcome {
    x: Vec<f64>,
    /// Smooth model values at the start and end of the sequence.
    f0: f64,
    f: f64,
    h: f64,
    status: SolveStatus,
    iterations: usize,
}

struct Engine<'p> {
    params: &'p TRParams,
    top: usize,
    tally: Tally,
    trace: TrustRegionTrace,
    diag: Diagnostics,
}

impl Engine<'_> {
    fn totals(&self) -> Counters {
        let mut c = Counters::default();
        for lc in self.tally.borrow().iter() {
            c += *lc;
        }
        c
    }

    fn phi_value(&self, level: usize, phi: &ProxFunction, x: &[f64]) -> Result<f64, EngineError> {
        self.tally.borrow_mut()[level].phi += 1;
        Ok(phi.value(x)?)
    }

    fn phi_decrease(&self, level: usize, phi: &ProxFunction, x: &[f64], y: &[f64]) -> Result<f64, EngineError> {
        self.tally.borrow_mut()[level].phi += 1;
        Ok(phi.decrease(x, y)?)
    }

    /// `prox_{tφ}(x − t g) − x`
    fn prox_step(&self, level: usize, phi: &ProxFunction, g: &[f64], x: &[f64]) -> Result<Vec<f64>, EngineError> {
        self.tally.borrow_mut()[level].prox += 1;
        let t = self.params.prox_t;
        let trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - t * b).collect();
        Ok(sub(&phi.prox(t, &trial)?, x))
    }

    fn stationarity(&self, level: usize, phi: &ProxFunction, g: &[f64], x: &[f64]) -> Result<f64, EngineError> {
        Ok(norm(&self.prox_step(level, phi, g, x)?) / self.params.prox_t)
    }

    fn fcd_bound(&self, h: f64, delta: f64) -> f64 {
        let kh = self.diag.kappa_h_est.max(1.0);
        let kf = kappa_fcd(self.params.spg.t_min, self.params.kappa_stop, kh);
        kf * h * (h / kh).min(delta)
    }

    #[allow(clippy::too_many_arguments)]
    fn minimize(
        &mut self,
        level: usize,
        model: &mut dyn SmoothObjective,
        lower: &mut [Counted<'_>],
        transfers: &[TransferOperator],
        phi: &ProxFunction,
        x0: Vec<f64>,
        delta_parent: f64,
    ) -> Result<LevelOutcome, EngineError> {
        let params = self.params;
        let is_top = level == self.top;
        let budget = if is_top { params.max_iter } else { params.max_coarse_iter };
        let eps_h = params.eps_h_at(level, self.top);
        let seq = self.trace.sequences.len();
        self.trace.sequences.push(SequenceSummary {
            level,
            iterations: 0,
            successes: 0,
            max_radius_ratio: 0.0,
        });

        let mut x = x0.clone();
        let f0 = model.value(&x)?;
        let mut fx = f0;
        let mut phix = self.phi_value(level, phi, &x)?;
        let mut g = model.gradient(&x)?;
        let mut h = self.stationarity(level, phi, &g, &x)?;
        let mut delta = params.delta0.min(delta_parent);
        let mut status = SolveStatus::BudgetExhausted;
        let mut k = 0;

        if h <= eps_h {
            status = SolveStatus::Converged;
        }
        while status != SolveStatus::Converged && k < budget {
            let mut step: Option<(Vec<f64>, f64, ModelKind)> = None;

            if level > 0 {
                let r = &transfers[level - 1];
                let y0 = r.restrict(&x)?;
                let rg = r.restrict(&g)?;
                let phi_c = ProxFunction::pulled_back(phi, &x, r)?;
                let sc = self.prox_step(level - 1, &phi_c, &rg, &y0)?;
                let h_c = norm(&sc) / params.prox_t;
                self.check_prolonged_cauchy(level, phi, r, &g, &x, &sc)?;

                if model_choice(h_c, h, params, level, self.top) == ModelKind::Recursive {
                    let (next, rest) = lower.split_last_mut().expect("coarser level exists");
                    next.recenter(&x)?;
                    let mut coarse = build_coarse_model(&g, r, next, &y0)?;
                    let out = self.minimize(level - 1, &mut coarse, rest, transfers, &phi_c, y0.clone(), delta)?;
                    let phi_dec = self.phi_decrease(level - 1, &phi_c, &y0, &out.x)?;
                    let pred = (out.f0 - out.f) + phi_dec;
                    let s = r.prolong(&sub(&out.x, &y0))?;
                    let mut trial = add(&x, &s);
                    phi.project_domain(&mut trial);
                    if pred > 0.0 && pred >= self.fcd_bound(h, delta) && norm(&s) > 0.0 {
                        step = Some((trial, pred, ModelKind::Recursive));
                    } else {
                        self.diag.recursive_fallbacks += 1;
                    }
                }
            }

            let (trial, pred, kind) = match step {
                Some(st) => st,
                None => {
                    let anchor: &[f64] = if is_top { &x } else { &x0 };
                    let mut curvature = |v: &[f64]| model.hessvec(anchor, v);
                    let res = spg_solve(&g, &mut curvature, phi, &x, delta, &params.spg)?;
                    {
                        let mut t = self.tally.borrow_mut();
                        t[level].prox += res.trace.prox_calls;
                        t[level].phi += res.trace.phi_calls;
                    }
                    self.diag.kappa_h_est = self.diag.kappa_h_est.max(1.0 + res.trace.curvature_max);
                    let pred = res.model_decrease(&g, &x, phi)?;
                    let bound = self.fcd_bound(h, delta);
                    if !(pred >= bound) || !(pred > 0.0) {
                        self.diag.fcd_violations += 1;
                        if params.abort_on_fcd {
                            return Err(EngineError::Fcd { level, k, pred, bound, h, delta });
                        }
                        if !(pred > 0.0) {
                            return Err(EngineError::NonPositivePred { level, k, pred });
                        }
                    }
                    (res.x, pred, ModelKind::Taylor)
                }
            };

            let s_norm = dist(&trial, &x);
            if s_norm > delta * (1.0 + 1e-10) {
                self.diag.containment_violations += 1;
            }

            let f_trial = model.value(&trial)?;
            let phi_dec = self.phi_decrease(level, phi, &x, &trial)?;
            if phi_dec == f64::NEG_INFINITY && kind == ModelKind::Recursive {
                self.diag.infeasible_coarse += 1;
            }
            let ared = if phi_dec == f64::NEG_INFINITY { f64::NEG_INFINITY } else { (fx - f_trial) + phi_dec };
            let acc = accept_and_update(ared, pred, delta, params).map_err(|e| match e {
                EngineError::NonPositivePred { pred, .. } => EngineError::NonPositivePred { level, k, pred },
                other => other,
            })?;

            let (h_k, delta_k) = (h, delta);
            if acc.accepted {
                x = trial;
                fx = f_trial;
                phix = self.phi_value(level, phi, &x)?;
                g = model.gradient(&x)?;
                h = self.stationarity(level, phi, &g, &x)?;
                self.trace.sequences[seq].successes += 1;
            }
            self.trace.sequences[seq].iterations += 1;
            let counters = self.totals();
            self.trace.rows.push(TraceRow {
                level,
                k,
                h: h_k,
                delta: delta_k,
                rho: acc.rho,
                kind,
                class: acc.class,
                f: fx + phix,
                seq,
                counters,
            });
            k += 1;

            let moved = dist(&x, &x0);
            if delta_parent.is_finite() {
                let ratio = moved / delta_parent;
                let summary = &mut self.trace.sequences[seq];
                summary.max_radius_ratio = summary.max_radius_ratio.max(ratio);
            }
            if h <= eps_h {
                status = SolveStatus::Converged;
                break;
            }
            if moved > (1.0 - params.eps_delta) * delta_parent {
                break;
            }
            delta = acc.delta_plus.min(delta_parent - moved);
        }

        Ok(LevelOutcome { x, f0, f: fx, h, status, iterations: k })
    }

    /// Numerical check of `φ(x) − φ(x + s) ≥ ⟨g, s⟩ + ‖s‖²/t` for the
    /// prolonged coarse Cauchy step `s = Rᵀ s_c`.
    fn check_prolonged_cauchy(
        &mut self,
        level: usize,
        phi: &ProxFunction,
        r: &TransferOperator,
        g: &[f64],
        x: &[f64],
        sc: &[f64],
    ) -> Result<(), EngineError> {
        let s = r.prolong(sc)?;
        let xs = add(x, &s);
        let lhs = self.phi_decrease(level, phi, x, &xs)?;
        let rhs = dot(g, &s) + dot(&s, &s) / self.params.prox_t;
        self.diag.prolonged_cauchy_checks += 1;
        if lhs - rhs < -1e-10 {
            self.diag.prolonged_cauchy_violations += 1;
        }
        Ok(())
    }
}

/// Recursive multilevel trust-region method on a level stack.
pub fn rmntr(
    stack: &mut LevelStack<'_>,
    phi: &ProxFunction,
    x0: &[f64],
    params: &TRParams,
) -> Result<SolveResult, EngineError> {
    params.validate()?;
    let n_levels = stack.levels.len();
    let top = n_levels - 1;
    let n = stack.levels[top].dim();
    if x0.len() != n {
        return Err(EvalError::DimensionMismatch { expected: n, got: x0.len() }.into());
    }
    if let Some(d) = phi.dim() {
        if d != n {
            return Err(ProxError::DimensionMismatch { expected: n, got: d }.into());
        }
    }
    if !phi.value(x0)?.is_finite() {
        return Err(EngineError::Infeasible);
    }

    let tally: Tally = Rc::new(RefCell::new(vec![Counters::default(); n_levels]));
    let mut counted: Vec<Counted<'_>> = stack
        .levels
        .iter_mut()
        .enumerate()
        .map(|(level, obj)| Counted { inner: obj.as_mut(), level, tally: tally.clone() })
        .collect();
    let mut engine = Engine {
        params,
        top,
        tally: tally.clone(),
        trace: TrustRegionTrace::default(),
        diag: Diagnostics { kappa_h_est: 1.0, ..Diagnostics::default() },
    };
    let (finest, lower) = counted.split_last_mut().expect("non-empty");
    let out = engine.minimize(top, finest, lower, &stack.transfers, phi, x0.to_vec(), f64::INFINITY)?;
    drop(counted);

    let phi_final = phi.value(&out.x)?;
    engine.diag.kappa_h_flag = engine.diag.kappa_h_est > 1e8;
    let level_counters = tally.borrow().clone();
    let counters = engine.totals();
    Ok(SolveResult {
        value: out.f + phi_final,
        x: out.x,
        status: out.status,
        h: out.h,
        iterations: out.iterations,
        trace: engine.trace,
        diagnostics: engine.diag,
        counters,
        level_counters,
    })
}

/// The single-level method: `rmntr` on a one-level stack.
pub fn solve_single_level(
    obj: &mut dyn SmoothObjective,
    phi: &ProxFunction,
    x0: &[f64],
    params: &TRParams,
) -> Result<SolveResult, EngineError> {
    let mut stack = LevelStack::single(Box::new(obj));
    rmntr(&mut stack, phi, x0, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::soft_threshold;
    use crate::smooth::DenseQuadratic;
    use proptest::prelude::*;

    fn quadratic(diag: &[f64], b: &[f64]) -> DenseQuadratic {
        let n = diag.len();
        DenseQuadratic {
            a: (0..n).map(|i| (0..n).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect(),
            b: b.to_vec(),
        }
    }

    #[test]
    fn defaults_are_valid() {
        TRParams::default().validate().unwrap();
        let bad = TRParams { eta1: 0.9, eta2: 0.5, ..TRParams::default() };
        assert!(bad.validate().is_err());
        let bad = TRParams { gamma2: 0.1, ..TRParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn accept_and_update_examples() {
        let p = TRParams::default();
        let a = accept_and_update(1.0, 1.0, 3.0, &p).unwrap();
        assert_eq!((a.class, a.delta_plus, a.accepted), (SuccessClass::VerySuccessful, 6.0, true));
        let a = accept_and_update(0.0, 1.0, 3.0, &p).unwrap();
        assert_eq!((a.class, a.delta_plus, a.accepted), (SuccessClass::Unsuccessful, 0.75, false));
        let a = accept_and_update(0.5, 1.0, 3.0, &p).unwrap();
        assert_eq!((a.class, a.delta_plus, a.accepted), (SuccessClass::Successful, 3.0, true));
        let a = accept_and_update(f64::NEG_INFINITY, 1.0, 3.0, &p).unwrap();
        assert!(!a.accepted && a.rho == f64::NEG_INFINITY);
        assert!(accept_and_update(1.0, 0.0, 1.0, &p).is_err());
    }

    proptest! {
        #[test]
        fn class_matches_rho(ared in -2.0f64..2.0, pred in 1e-6f64..2.0, delta in 1e-3f64..10.0) {
            let p = TRParams::default();
            let a = accept_and_update(ared, pred, delta, &p).unwrap();
            let rho = ared / pred;
            match a.class {
                SuccessClass::VerySuccessful => prop_assert!(rho >= p.eta2 && a.delta_plus >= delta),
                SuccessClass::Successful => prop_assert!(rho >= p.eta1 && rho < p.eta2 && a.delta_plus == delta),
                SuccessClass::Unsuccessful => prop_assert!(
                    rho < p.eta1 && a.delta_plus >= p.gamma1 * delta && a.delta_plus <= p.gamma2 * delta
                ),
            }
        }
    }

    #[test]
    fn model_choice_examples() {
        let p = TRParams::default();
        assert_eq!(model_choice(10.0, 0.1, &p, 0, 1), ModelKind::Taylor);
        assert_eq!(model_choice(0.05, 0.1, &p, 2, 2), ModelKind::Taylor);
        assert_eq!(model_choice(0.5, 0.1, &p, 2, 2), ModelKind::Recursive);
        // ε_{i-1} = 0.1 once i > 1
        assert_eq!(model_choice(0.09, 0.1, &p, 2, 2), ModelKind::Taylor);
    }

    #[test]
    fn kappa_fcd_formula() {
        let k = kappa_fcd(1e-12, 0.6, 1.0);
        assert!((k - 0.5 * 1e-12 * 0.36).abs() < 1e-28);
        let k = kappa_fcd(1.0, 0.6, 1.0 + 0.6f64.powi(4) * 4.0);
        assert!((k - 0.125).abs() < 1e-15);
    }

    #[test]
    fn strongly_convex_quadratic() {
        let mut q = quadratic(&[1.0, 1.0], &[0.0, 0.0]);
        let r = solve_single_level(&mut q, &ProxFunction::Zero, &[1.0, 1.0], &TRParams::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!(r.h <= 1e-7);
        assert!(norm(&r.x) <= 1e-7);
    }

    #[test]
    fn separable_l1_matches_soft_threshold() {
        let a = [2.0, -0.3, 0.05, -4.0, 0.7];
        let beta = 0.5;
        // ½‖x − a‖² = ½‖x‖² − ⟨a, x⟩ + const
        let mut q = quadratic(&[1.0; 5], &a);
        let phi = ProxFunction::l1(beta).unwrap();
        let r = solve_single_level(&mut q, &phi, &[0.0; 5], &TRParams::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        for i in 0..5 {
            assert!((r.x[i] - soft_threshold(a[i], beta)).abs() < 1e-7);
        }
    }

    #[test]
    fn rejected_steps_keep_the_iterate() {
        // f(x) = x⁴ with a model curvature far too small: early steps overshoot.
        struct Quartic;
        impl SmoothObjective for Quartic {
            fn dim(&self) -> usize {
                1
            }
            fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
                Ok(x[0].powi(4))
            }
            fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
                Ok(vec![4.0 * x[0].powi(3)])
            }
            fn hessvec(&mut self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
                Ok(vec![1e-3 * v[0]])
            }
        }
        let params = TRParams { max_iter: 200, eps_h: 1e-6, ..TRParams::default() };
        let r = solve_single_level(&mut Quartic, &ProxFunction::Zero, &[3.0], &params).unwrap();
        let rows = &r.trace.rows;
        assert!(rows.iter().any(|row| row.class == SuccessClass::Unsuccessful));
        for w in rows.windows(2) {
            if w[0].class == SuccessClass::Unsuccessful {
                assert_eq!(w[1].delta, params.gamma2 * w[0].delta);
            }
            if w[1].class == SuccessClass::Unsuccessful {
                assert_eq!(w[1].f, w[0].f);
            }
            assert!(w[1].f <= w[0].f);
        }
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let mut q = quadratic(&[1.0], &[0.0]);
        let phi = ProxFunction::boxed(0.0, 1.0).unwrap();
        assert!(matches!(
            solve_single_level(&mut q, &phi, &[2.0], &TRParams::default()),
            Err(EngineError::Infeasible)
        ));
    }

    /// 1D Laplacian-like quadratic `½xᵀAx − bᵀx` discretized at `n` points,
    /// scaled so restriction of the fine problem matches the coarse one.
    fn laplace(n: usize, c: f64) -> DenseQuadratic {
        let h = 1.0 / (n as f64 + 1.0);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = 2.0 / (h * h) * h + c;
            if i > 0 {
                a[i][i - 1] = -1.0 / (h * h) * h;
            }
            if i + 1 < n {
                a[i][i + 1] = -1.0 / (h * h) * h;
            }
        }
        let b = (0..n).map(|i| ((i as f64 + 1.0) * h * 7.0).sin()).collect();
        DenseQuadratic { a, b }
    }

    #[test]
    fn two_level_matches_single_level_minimum() {
        let n = 32;
        let phi = ProxFunction::l1(0.05).unwrap();
        let params = TRParams::default();
        let mut fine = laplace(n, 1.0);
        let single = solve_single_level(&mut fine, &phi, &vec![0.0; n], &params).unwrap();
        assert_eq!(single.status, SolveStatus::Converged);

        let r = TransferOperator::avg_1d(n).unwrap();
        let levels: Vec<Box<dyn SmoothObjective>> = vec![Box::new(laplace(n / 2, 1.0)), Box::new(laplace(n, 1.0))];
        let mut stack = LevelStack::new(levels, vec![r]).unwrap();
        let multi = rmntr(&mut stack, &phi, &vec![0.0; n], &params).unwrap();
        assert_eq!(multi.status, SolveStatus::Converged);
        assert!(multi.h <= 1e-7);
        assert!((multi.value - single.value).abs() <= 1e-6);
        assert!(multi.trace.rows.iter().any(|row| row.level == 0));
        assert_eq!(multi.diagnostics.fcd_violations, 0);
        assert_eq!(multi.diagnostics.prolonged_cauchy_violations, 0);
        for s in multi.trace.sequences.iter().filter(|s| s.level == 0) {
            assert!(s.successes >= 1);
            assert!(s.max_radius_ratio <= 1.0 + 1e-12);
        }
        let fine_rows: Vec<_> = multi.trace.rows.iter().filter(|row| row.level == 1).collect();
        for w in fine_rows.windows(2) {
            assert!(w[1].f <= w[0].f);
        }
    }

    #[test]
    fn radius_cap_holds_at_coarse_levels() {
        let n = 64;
        let phi = ProxFunction::l1_box(0.02, -0.5, 0.5).unwrap();
        let levels: Vec<Box<dyn SmoothObjective>> = vec![
            Box::new(laplace(16, 1.0)),
            Box::new(laplace(32, 1.0)),
            Box::new(laplace(64, 1.0)),
        ];
        let transfers = vec![TransferOperator::avg_1d(32).unwrap(), TransferOperator::avg_1d(64).unwrap()];
        let mut stack = LevelStack::new(levels, transfers).unwrap();
        let params = TRParams { delta0: 0.5, ..TRParams::default() };
        let r = rmntr(&mut stack, &phi, &vec![0.0; n], &params).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert_eq!(r.diagnostics.containment_violations, 0);
        assert!(r.x.iter().all(|v| (-0.5..=0.5).contains(v)));
        for s in &r.trace.sequences[1..] {
            assert!(s.max_radius_ratio <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn stack_validation() {
        let levels: Vec<Box<dyn SmoothObjective>> = vec![Box::new(laplace(3, 1.0)), Box::new(laplace(8, 1.0))];
        let err = LevelStack::new(levels, vec![TransferOperator::avg_1d(8).unwrap()]);
        assert!(matches!(err, Err(EngineError::Stack(_))));
    }
}
