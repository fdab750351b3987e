//! Nonsmooth terms: evaluation, proximal mappings, the coarse-level pullback
//! and the proximal-gradient stationarity measure.
//!
//! Every supported term is coordinate separable. Each coordinate carries a
//! convex piecewise-linear function `Σ_k w_k |x − p_k|` restricted to an
//! interval `[lo, hi]` (either end may be infinite). That family is closed
//! under pulling back through a block-averaging transfer, which is what lets
//! the coarse prox be solved exactly at arbitrary coarse points.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::norm;
use crate::transfer::TransferOperator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProxError {
    #[error("prox step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid nonsmooth term: {0}")]
    Invalid(String),
}

/// Lower/upper bounds, either uniform or one pair per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, ProxError> {
        Self::per_coordinate(vec![lo], vec![hi])
    }

    pub fn per_coordinate(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ProxError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(ProxError::Invalid("bounds need matching nonempty lo/hi".into()));
        }
        if let Some(i) = lo.iter().zip(&hi).position(|(l, h)| !(l <= h)) {
            return Err(ProxError::Invalid(format!("lo > hi at coordinate {i}")));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn at(&self, i: usize) -> (f64, f64) {
        if self.lo.len() == 1 {
            (self.lo[0], self.hi[0])
        } else {
            (self.lo[i], self.hi[i])
        }
    }

    fn dim(&self) -> Option<usize> {
        (self.lo.len() > 1).then_some(self.lo.len())
    }
}

/// One coordinate of a separable term: `Σ w_k |x − p_k|` on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarTerm {
    /// `(p_k, w_k)` sorted by `p_k`, all `w_k ≥ 0`.
    kinks: Vec<(f64, f64)>,
    lo: f64,
    hi: f64,
}

impl ScalarTerm {
    fn new(mut kinks: Vec<(f64, f64)>, lo: f64, hi: f64) -> Self {
        kinks.retain(|&(_, w)| w > 0.0);
        kinks.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { kinks, lo, hi }
    }

    pub fn value(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::INFINITY;
        }
        self.kinks.iter().map(|&(p, w)| w * (x - p).abs()).sum()
    }

    /// Exact minimizer of `value(x) + (x − y)²/(2t)` by walking the sorted
    /// kinks; the unconstrained 1D minimizer is then clipped to `[lo, hi]`.
    pub fn prox(&self, t: f64, y: f64) -> f64 {
        let mut slope: f64 = -self.kinks.iter().map(|&(_, w)| w).sum::<f64>();
        let mut left = f64::NEG_INFINITY;
        let mut x = y - t * slope;
        for &(p, w) in &self.kinks {
            if x <= p {
                x = x.max(left);
                return x.clamp(self.lo, self.hi);
            }
            left = p;
            slope += 2.0 * w;
            x = y - t * slope;
        }
        x.max(left).clamp(self.lo, self.hi)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }
}

/// The nonsmooth part `φ` of a composite objective.
#[derive(Clone, PartialEq)]
pub enum ProxFunction {
    Zero,
    L1 { beta: f64 },
    Box(Bounds),
    L1Box { beta: f64, bounds: Bounds },
    PulledBack(PulledBack),
}

impl fmt::Debug for ProxFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProxFunction::Zero => write!(f, "Zero"),
            ProxFunction::L1 { beta } => write!(f, "L1({beta})"),
            ProxFunction::Box(b) => write!(f, "Box({:?})", b.at(0)),
            ProxFunction::L1Box { beta, bounds } => write!(f, "L1Box({beta}, {:?})", bounds.at(0)),
            ProxFunction::PulledBack(p) => write!(f, "PulledBack(n={})", p.terms.len()),
        }
    }
}

/// Coarse term `w ↦ φ(c + Rᵀ(w − Rc))`, compiled into per-coordinate pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct PulledBack {
    anchor_coarse: Vec<f64>,
    terms: Vec<ScalarTerm>,
    /// Contribution of fine coordinates that no block covers (frozen at `c`).
    constant: f64,
}

impl PulledBack {
    pub fn new(
        parent: &ProxFunction,
        anchor: &[f64],
        transfer: &TransferOperator,
    ) -> Result<Self, ProxError> {
        check_dim(transfer.n_fine(), anchor.len())?;
        if let Some(d) = parent.dim() {
            check_dim(d, anchor.len())?;
        }
        let anchor_coarse = transfer
            .restrict(anchor)
            .map_err(|e| ProxError::Invalid(e.to_string()))?;
        let mut terms = Vec::with_capacity(transfer.n_coarse());
        for (j, &a) in anchor_coarse.iter().enumerate() {
            let w = transfer.weight(j);
            let mut kinks = Vec::new();
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for &b in transfer.block(j) {
                // fine coordinate b moves as x_b = c_b + w (y − a)
                let term = parent.scalar_term(b);
                let c = anchor[b];
                kinks.extend(term.kinks.iter().map(|&(p, beta)| (a + (p - c) / w, beta * w)));
                lo = lo.max(a + (term.lo - c) / w);
                hi = hi.min(a + (term.hi - c) / w);
            }
            if !(lo <= hi) {
                return Err(ProxError::Invalid(format!(
                    "anchor outside the domain of the fine term in block {j}"
                )));
            }
            terms.push(ScalarTerm::new(kinks, lo, hi));
        }
        let mut constant = match parent {
            ProxFunction::PulledBack(p) => p.constant,
            _ => 0.0,
        };
        for (b, &c) in anchor.iter().enumerate() {
            if transfer.owner(b).is_none() {
                constant += parent.scalar_term(b).value(c);
            }
        }
        Ok(Self {
            anchor_coarse,
            terms,
            constant,
        })
    }

    /// `R c`, the coarse point at which the pullback equals `φ(c)`.
    pub fn anchor_coarse(&self) -> &[f64] {
        &self.anchor_coarse
    }

    pub fn term(&self, j: usize) -> &ScalarTerm {
        &self.terms[j]
    }
}

impl ProxFunction {
    pub fn l1(beta: f64) -> Result<Self, ProxError> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(ProxError::Invalid(format!("L1 weight must be >= 0, got {beta}")));
        }
        Ok(ProxFunction::L1 { beta })
    }

    pub fn boxed(lo: f64, hi: f64) -> Result<Self, ProxError> {
        Ok(ProxFunction::Box(Bounds::uniform(lo, hi)?))
    }

    pub fn l1_box(beta: f64, lo: f64, hi: f64) -> Result<Self, ProxError> {
        Self::l1(beta)?;
        Ok(ProxFunction::L1Box {
            beta,
            bounds: Bounds::uniform(lo, hi)?,
        })
    }

    /// Pull `parent` back to the coarse side of `transfer` around fine anchor `c`.
    pub fn pulled_back(
        parent: &ProxFunction,
        anchor: &[f64],
        transfer: &TransferOperator,
    ) -> Result<Self, ProxError> {
        Ok(ProxFunction::PulledBack(PulledBack::new(parent, anchor, transfer)?))
    }

    /// Fixed dimension, if the term carries one.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ProxFunction::Zero | ProxFunction::L1 { .. } => None,
            ProxFunction::Box(b) | ProxFunction::L1Box { bounds: b, .. } => b.dim(),
            ProxFunction::PulledBack(p) => Some(p.terms.len()),
        }
    }

    /// The per-coordinate piece at index `i`.
    pub fn scalar_term(&self, i: usize) -> ScalarTerm {
        match self {
            ProxFunction::Zero => ScalarTerm::new(vec![], f64::NEG_INFINITY, f64::INFINITY),
            ProxFunction::L1 { beta } => {
                ScalarTerm::new(vec![(0.0, *beta)], f64::NEG_INFINITY, f64::INFINITY)
            }
            ProxFunction::Box(b) => {
                let (lo, hi) = b.at(i);
                ScalarTerm::new(vec![], lo, hi)
            }
            ProxFunction::L1Box { beta, bounds } => {
                let (lo, hi) = bounds.at(i);
                ScalarTerm::new(vec![(0.0, *beta)], lo, hi)
            }
            ProxFunction::PulledBack(p) => p.terms[i].clone(),
        }
    }

    fn check(&self, n: usize) -> Result<(), ProxError> {
        match self.dim() {
            Some(d) => check_dim(d, n),
            None => Ok(()),
        }
    }

    /// `φ(x)`; `+∞` outside the effective domain.
    pub fn value(&self, x: &[f64]) -> Result<f64, ProxError> {
        self.check(x.len())?;
        Ok(match self {
            ProxFunction::Zero => 0.0,
            ProxFunction::L1 { beta } => beta * x.iter().map(|v| v.abs()).sum::<f64>(),
            ProxFunction::Box(b) => {
                if in_box(b, x) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::L1Box { beta, bounds } => {
                if in_box(bounds, x) {
                    beta * x.iter().map(|v| v.abs()).sum::<f64>()
                } else {
                    f64::INFINITY
                }
            }
            ProxFunction::PulledBack(p) => {
                p.constant + p.terms.iter().zip(x).map(|(term, &v)| term.value(v)).sum::<f64>()
            }
        })
    }

    /// `argmin_x φ(x) + ‖x − y‖²/(2t)`.
    pub fn prox(&self, t: f64, y: &[f64]) -> Result<Vec<f64>, ProxError> {
        if !(t > 0.0) {
            return Err(ProxError::NonPositiveStep(t));
        }
        self.check(y.len())?;
        Ok(match self {
            ProxFunction::Zero => y.to_vec(),
            ProxFunction::L1 { beta } => y.iter().map(|&v| soft_threshold(v, t * beta)).collect(),
            ProxFunction::Box(b) => y
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let (lo, hi) = b.at(i);
                    v.clamp(lo, hi)
                })
                .collect(),
            ProxFunction::L1Box { beta, bounds } => y
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let (lo, hi) = bounds.at(i);
                    soft_threshold(v, t * beta).clamp(lo, hi)
                })
                .collect(),
            ProxFunction::PulledBack(p) => p
                .terms
                .iter()
                .zip(y)
                .map(|(term, &v)| term.prox(t, v))
                .collect(),
        })
    }

    /// `φ(x) − φ(y)` summed coordinate by coordinate, which keeps small
    /// differences accurate; `−∞` if `y` leaves the domain.
    pub fn decrease(&self, x: &[f64], y: &[f64]) -> Result<f64, ProxError> {
        self.check(x.len())?;
        check_dim(x.len(), y.len())?;
        if self.value(y)? == f64::INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(match self {
            ProxFunction::Zero | ProxFunction::Box(_) => 0.0,
            ProxFunction::L1 { beta } | ProxFunction::L1Box { beta, .. } => {
                beta * x.iter().zip(y).map(|(a, b)| a.abs() - b.abs()).sum::<f64>()
            }
            ProxFunction::PulledBack(p) => p
                .terms
                .iter()
                .zip(x.iter().zip(y))
                .map(|(term, (&a, &b))| term.value(a) - term.value(b))
                .sum(),
        })
    }

    /// Clamp `x` into the effective domain. Used to absorb rounding after a
    /// prolongated or interpolated step; a no-op for unconstrained terms.
    pub fn project_domain(&self, x: &mut [f64]) {
        match self {
            ProxFunction::Zero | ProxFunction::L1 { .. } => {}
            ProxFunction::Box(b) | ProxFunction::L1Box { bounds: b, .. } => {
                for (i, v) in x.iter_mut().enumerate() {
                    let (lo, hi) = b.at(i);
                    *v = v.clamp(lo, hi);
                }
            }
            ProxFunction::PulledBack(p) => {
                for (term, v) in p.terms.iter().zip(x.iter_mut()) {
                    *v = v.clamp(term.lo, term.hi);
                }
            }
        }
    }
}

#[inline]
pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    if v > tau {
        v - tau
    } else if v < -tau {
        v + tau
    } else {
        0.0
    }
}

fn in_box(b: &Bounds, x: &[f64]) -> bool {
    x.iter().enumerate().all(|(i, &v)| {
        let (lo, hi) = b.at(i);
        v >= lo && v <= hi
    })
}

fn check_dim(expected: usize, got: usize) -> Result<(), ProxError> {
    if expected == got {
        Ok(())
    } else {
        Err(ProxError::DimensionMismatch { expected, got })
    }
}

/// `argmin_w φ(c + Rᵀ(w − Rc)) + ‖w − y‖²/(2t)`.
pub fn prox_pullback(
    parent: &ProxFunction,
    anchor: &[f64],
    transfer: &TransferOperator,
    t: f64,
    y: &[f64],
) -> Result<Vec<f64>, ProxError> {
    ProxFunction::pulled_back(parent, anchor, transfer)?.prox(t, y)
}

/// Proximal-gradient stationarity measure `‖x − prox(x − t0 g)‖ / t0`.
pub fn stationarity_h(
    grad: &[f64],
    x: &[f64],
    phi: &ProxFunction,
    t0: f64,
) -> Result<f64, ProxError> {
    check_dim(x.len(), grad.len())?;
    let trial: Vec<f64> = x.iter().zip(grad).map(|(xi, gi)| xi - t0 * gi).collect();
    let p = phi.prox(t0, &trial)?;
    let diff: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
    Ok(norm(&diff) / t0)
}

/// Serializable descriptor, e.g. `{"kind":"l1box","beta":0.05,"lo":-25,"hi":25}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProxSpec {
    Zero,
    L1 { beta: f64 },
    Box { lo: f64, hi: f64 },
    L1box { beta: f64, lo: f64, hi: f64 },
}

impl ProxSpec {
    pub fn build(&self) -> Result<ProxFunction, ProxError> {
        match *self {
            ProxSpec::Zero => Ok(ProxFunction::Zero),
            ProxSpec::L1 { beta } => ProxFunction::l1(beta),
            ProxSpec::Box { lo, hi } => ProxFunction::boxed(lo, hi),
            ProxSpec::L1box { beta, lo, hi } => ProxFunction::l1_box(beta, lo, hi),
        }
    }
}
