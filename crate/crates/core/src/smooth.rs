//! Smooth objectives, call counting, the gradient-corrected coarse model and
//! the curvature operators used by the quadratic (Taylor) models.

use std::cell::RefCell;
use std::ops::AddAssign;
use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{all_finite, axpy, dot, norm, sub};
use crate::prox::{ProxError, ProxFunction};
use crate::transfer::TransferOperator;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("state solve failed: {0}")]
    StateSolve(String),
    #[error(transparent)]
    Prox(#[from] ProxError),
}

/// `f`, `∇f` and a curvature product `B(x) v`.
///
/// Methods take `&mut self` so implementations may cache state solves and
/// factorizations between calls at the same point.
pub trait SmoothObjective {
    fn dim(&self) -> usize;
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError>;
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError>;
    fn hessvec(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError>;

    /// Told the iterate of the next finer level before a coarse model is
    /// built on this objective. Most objectives ignore it.
    fn recenter(&mut self, _x_fine: &[f64]) -> Result<(), EvalError> {
        Ok(())
    }
}

impl<T: SmoothObjective + ?Sized> SmoothObjective for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        (**self).value(x)
    }
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        (**self).gradient(x)
    }
    fn hessvec(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        (**self).hessvec(x, v)
    }
    fn recenter(&mut self, x_fine: &[f64]) -> Result<(), EvalError> {
        (**self).recenter(x_fine)
    }
}

impl<T: SmoothObjective + ?Sized> SmoothObjective for &mut T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        (**self).value(x)
    }
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        (**self).gradient(x)
    }
    fn hessvec(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        (**self).hessvec(x, v)
    }
    fn recenter(&mut self, x_fine: &[f64]) -> Result<(), EvalError> {
        (**self).recenter(x_fine)
    }
}

pub fn check_dim(expected: usize, got: usize) -> Result<(), EvalError> {
    if expected == got {
        Ok(())
    } else {
        Err(EvalError::DimensionMismatch { expected, got })
    }
}

/// Evaluation counters; the columns of the performance table.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub fval: u64,
    pub grad: u64,
    pub hess: u64,
    pub phi: u64,
    pub prox: u64,
}

impl AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.fval += o.fval;
        self.grad += o.grad;
        self.hess += o.hess;
        self.phi += o.phi;
        self.prox += o.prox;
    }
}

/// Wraps an objective and counts every callback.
pub struct CountingObjective<O> {
    inner: O,
    counts: Counters,
}

impl<O: SmoothObjective> CountingObjective<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            counts: Counters::default(),
        }
    }

    pub fn counts(&self) -> Counters {
        self.counts
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut O {
        &mut self.inner
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: SmoothObjective> SmoothObjective for CountingObjective<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        self.counts.fval += 1;
        self.inner.value(x)
    }
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.counts.grad += 1;
        self.inner.gradient(x)
    }
    fn hessvec(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.counts.hess += 1;
        self.inner.hessvec(x, v)
    }
    fn recenter(&mut self, x_fine: &[f64]) -> Result<(), EvalError> {
        self.inner.recenter(x_fine)
    }
}

/// Coarse smooth model `y ↦ f_{i-1}(y) + ⟨v, y − y0⟩` with
/// `v = R ∇L̃_i(x_{i,k}) − ∇f_{i-1}(y0)`; its gradient at `y0` is `R ∇L̃_i`.
pub struct CoarseSmoothModel<'a> {
    base: &'a mut dyn SmoothObjective,
    correction: Vec<f64>,
    anchor: Vec<f64>,
}

impl<'a> CoarseSmoothModel<'a> {
    pub fn correction(&self) -> &[f64] {
        &self.correction
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }
}

/// Build the first-order coherent coarse model around `x_coarse0 = R x_{i,k}`.
pub fn build_coarse_model<'a>(
    fine_grad: &[f64],
    transfer: &TransferOperator,
    f_coarse: &'a mut dyn SmoothObjective,
    x_coarse0: &[f64],
) -> Result<CoarseSmoothModel<'a>, EvalError> {
    check_dim(transfer.n_coarse(), f_coarse.dim())?;
    check_dim(transfer.n_coarse(), x_coarse0.len())?;
    let restricted = transfer.restrict(fine_grad).map_err(|_| EvalError::DimensionMismatch {
        expected: transfer.n_fine(),
        got: fine_grad.len(),
    })?;
    let base_grad = f_coarse.gradient(x_coarse0)?;
    Ok(CoarseSmoothModel {
        base: f_coarse,
        correction: sub(&restricted, &base_grad),
        anchor: x_coarse0.to_vec(),
    })
}

impl SmoothObjective for CoarseSmoothModel<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn value(&mut self, y: &[f64]) -> Result<f64, EvalError> {
        let shift = sub(y, &self.anchor);
        Ok(self.base.value(y)? + dot(&self.correction, &shift))
    }
    fn gradient(&mut self, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut g = self.base.gradient(y)?;
        axpy(1.0, &self.correction, &mut g);
        Ok(g)
    }
    fn hessvec(&mut self, y: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.base.hessvec(y, v)
    }
}

/// A linear operator `v ↦ B v`.
pub trait Curvature {
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>, EvalError>;
}

impl<F> Curvature for F
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, EvalError>,
{
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>, EvalError> {
        self(v)
    }
}

/// `B = ∇²f(x)` (or whatever the objective's `hessvec` provides) frozen at `x`.
pub struct HessianAt<'a> {
    obj: &'a mut dyn SmoothObjective,
    at: &'a [f64],
}

impl<'a> HessianAt<'a> {
    pub fn new(obj: &'a mut dyn SmoothObjective, at: &'a [f64]) -> Self {
        Self { obj, at }
    }
}

impl Curvature for HessianAt<'_> {
    fn apply(&mut self, v: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.obj.hessvec(self.at, v)
    }
}

/// Quadratic model `m(x + s) = L(x) + ⟨g, s⟩ + ½⟨B s, s⟩ + φ(x + s) − φ(x)`.
pub struct TaylorModel<'a, B: Curvature> {
    pub anchor: &'a [f64],
    pub gradient: &'a [f64],
    pub curvature: B,
    /// `L(x)` including `φ(x)`.
    pub value: f64,
}

impl<B: Curvature> TaylorModel<'_, B> {
    pub fn eval(&mut self, phi: &ProxFunction, s: &[f64]) -> Result<f64, EvalError> {
        check_dim(self.anchor.len(), s.len())?;
        let bs = self.curvature.apply(s)?;
        let xs: Vec<f64> = self.anchor.iter().zip(s).map(|(a, b)| a + b).collect();
        let phi_x = phi.value(self.anchor)?;
        let phi_xs = phi.value(&xs)?;
        Ok(self.value + dot(self.gradient, s) + 0.5 * dot(&bs, s) + phi_xs - phi_x)
    }
}

/// `m(x) − m(x + s) = −⟨g,s⟩ − ½⟨Bs,s⟩ + φ(x) − φ(x+s)`; `−∞` if `x + s`
/// leaves the domain of `φ`.
pub fn taylor_decrease<B: Curvature>(
    model: &mut TaylorModel<'_, B>,
    phi: &ProxFunction,
    s: &[f64],
) -> Result<f64, EvalError> {
    check_dim(model.anchor.len(), s.len())?;
    if s.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let bs = model.curvature.apply(s)?;
    let xs: Vec<f64> = model.anchor.iter().zip(s).map(|(a, b)| a + b).collect();
    let phi_x = phi.value(model.anchor)?;
    let phi_xs = phi.value(&xs)?;
    if phi_xs == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(-dot(model.gradient, s) - 0.5 * dot(&bs, s) + phi_x - phi_xs)
}

/// Curvature choices for `B_{i,k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureMode {
    /// Problem-supplied exact second derivatives.
    Exact,
    /// `Jᵀ J v + α v` for least-squares reduced objectives.
    GaussNewton,
    /// Central difference of the gradient.
    FdGradient,
}

/// Replaces `hessvec` by a central difference of the gradient with step
/// `sqrt(eps)·(1 + ‖x‖)/‖v‖`.
pub struct FdGradient<O> {
    inner: O,
}

impl<O: SmoothObjective> FdGradient<O> {
    pub fn new(inner: O) -> Self {
        Self { inner }
    }
}

impl<O: SmoothObjective> SmoothObjective for FdGradient<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        self.inner.value(x)
    }
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.inner.gradient(x)
    }
    fn hessvec(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(x.len(), v.len())?;
        let nv = norm(v);
        if nv == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        let eps = f64::EPSILON.sqrt() * (1.0 + norm(x)) / nv;
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + eps * b).collect();
        let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - eps * b).collect();
        let gp = self.inner.gradient(&xp)?;
        let gm = self.inner.gradient(&xm)?;
        if !all_finite(&gp) || !all_finite(&gm) {
            return Err(EvalError::NonFinite("gradient in finite-difference Hessian"));
        }
        Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
    }
    fn recenter(&mut self, x_fine: &[f64]) -> Result<(), EvalError> {
        self.inner.recenter(x_fine)
    }
}

/// A residual map `r(x)` with Jacobian products.
pub trait LeastSquaresResidual {
    fn dim(&self) -> usize;
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError>;
    fn jvp(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError>;
    fn vjp(&mut self, x: &[f64], w: &[f64]) -> Result<Vec<f64>, EvalError>;
}

/// `f(x) = ½‖r(x)‖² + (α/2)‖x‖²` with Gauss–Newton curvature `JᵀJ + αI`.
pub struct GaussNewton<P> {
    residual: P,
    alpha: f64,
}

impl<P: LeastSquaresResidual> GaussNewton<P> {
    pub fn new(residual: P, alpha: f64) -> Self {
        Self { residual, alpha }
    }
}

impl<P: LeastSquaresResidual> SmoothObjective for GaussNewton<P> {
    fn dim(&self) -> usize {
        self.residual.dim()
    }
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        let r = self.residual.residual(x)?;
        Ok(0.5 * dot(&r, &r) + 0.5 * self.alpha * dot(x, x))
    }
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let r = self.residual.residual(x)?;
        let mut g = self.residual.vjp(x, &r)?;
        axpy(self.alpha, x, &mut g);
        Ok(g)
    }
    fn hessvec(&mut self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        let jv = self.residual.jvp(x, v)?;
        let mut out = self.residual.vjp(x, &jv)?;
        axpy(self.alpha, v, &mut out);
        Ok(out)
    }
}

/// `y ↦ f(c·y)`: a coarse rediscretization expressed in the variables that the
/// averaging restriction produces (`c = 1/sqrt(block size)` per level).
pub struct Rescaled<O> {
    inner: O,
    factor: f64,
}

impl<O: SmoothObjective> Rescaled<O> {
    pub fn new(inner: O, factor: f64) -> Self {
        Self { inner, factor }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut O {
        &mut self.inner
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }
}

impl<O: SmoothObjective> SmoothObjective for Rescaled<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn value(&mut self, y: &[f64]) -> Result<f64, EvalError> {
        let x: Vec<f64> = y.iter().map(|v| v * self.factor).collect();
        self.inner.value(&x)
    }
    fn gradient(&mut self, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let x: Vec<f64> = y.iter().map(|v| v * self.factor).collect();
        let mut g = self.inner.gradient(&x)?;
        g.iter_mut().for_each(|v| *v *= self.factor);
        Ok(g)
    }
    fn hessvec(&mut self, y: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        let x: Vec<f64> = y.iter().map(|a| a * self.factor).collect();
        let mut out = self.inner.hessvec(&x, v)?;
        let c2 = self.factor * self.factor;
        out.iter_mut().for_each(|a| *a *= c2);
        Ok(out)
    }
    fn recenter(&mut self, x_fine: &[f64]) -> Result<(), EvalError> {
        self.inner.recenter(x_fine)
    }
}

/// `y ↦ f(b + Rᵀ y)` with `b = x − RᵀR x` for the last finer iterate `x`
/// passed to `recenter`, i.e. `f` on the affine subspace through `x` spanned
/// by the prolongation. Before the first `recenter`, `b = 0`.
///
/// The offset is shared through [`Anchored::offset`] so that a copy of this
/// objective nested inside a coarser one follows the same iterate.
pub struct Anchored<O> {
    inner: O,
    r: TransferOperator,
    offset: Rc<RefCell<Vec<f64>>>,
}

impl<O: SmoothObjective> Anchored<O> {
    pub fn new(inner: O, r: TransferOperator) -> Result<Self, EvalError> {
        let offset = Rc::new(RefCell::new(vec![0.0; r.n_fine()]));
        Self::with_offset(inner, r, offset)
    }

    pub fn with_offset(inner: O, r: TransferOperator, offset: Rc<RefCell<Vec<f64>>>) -> Result<Self, EvalError> {
        check_dim(inner.dim(), r.n_fine())?;
        check_dim(r.n_fine(), offset.borrow().len())?;
        Ok(Self { inner, r, offset })
    }

    pub fn offset(&self) -> Rc<RefCell<Vec<f64>>> {
        self.offset.clone()
    }

    fn lift(&self, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.r.n_coarse(), y.len())?;
        let mut x = self.r.prolong(y).map_err(transfer_err)?;
        axpy(1.0, &self.offset.borrow(), &mut x);
        Ok(x)
    }
}

fn transfer_err(e: crate::transfer::TransferError) -> EvalError {
    EvalError::StateSolve(e.to_string())
}

impl<O: SmoothObjective> SmoothObjective for Anchored<O> {
    fn dim(&self) -> usize {
        self.r.n_coarse()
    }
    fn value(&mut self, y: &[f64]) -> Result<f64, EvalError> {
        let x = self.lift(y)?;
        self.inner.value(&x)
    }
    fn gradient(&mut self, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        let x = self.lift(y)?;
        let g = self.inner.gradient(&x)?;
        self.r.restrict(&g).map_err(transfer_err)
    }
    fn hessvec(&mut self, y: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        let x = self.lift(y)?;
        check_dim(self.r.n_coarse(), v.len())?;
        let w = self.r.prolong(v).map_err(transfer_err)?;
        let hw = self.inner.hessvec(&x, &w)?;
        self.r.restrict(&hw).map_err(transfer_err)
    }
    /// Only this level's offset moves; a nested copy of a finer objective is
    /// recentered through its shared offset by that level itself.
    fn recenter(&mut self, x_fine: &[f64]) -> Result<(), EvalError> {
        check_dim(self.r.n_fine(), x_fine.len())?;
        let rx = self.r.restrict(x_fine).map_err(transfer_err)?;
        let back = self.r.prolong(&rx).map_err(transfer_err)?;
        *self.offset.borrow_mut() = sub(x_fine, &back);
        Ok(())
    }
}

/// `f_{i-1}(y) = f_i(T y)` with `T` padding zeros: the generic coarse model
/// built from the fine objective alone.
pub struct ExtendByZero<O> {
    inner: O,
    n_coarse: usize,
}

impl<O: SmoothObjective> ExtendByZero<O> {
    pub fn new(inner: O, n_coarse: usize) -> Result<Self, EvalError> {
        if n_coarse > inner.dim() {
            return Err(EvalError::DimensionMismatch {
                expected: inner.dim(),
                got: n_coarse,
            });
        }
        Ok(Self { inner, n_coarse })
    }

    fn extend(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.inner.dim()];
        x[..y.len()].copy_from_slice(y);
        x
    }
}

impl<O: SmoothObjective> SmoothObjective for ExtendByZero<O> {
    fn dim(&self) -> usize {
        self.n_coarse
    }
    fn value(&mut self, y: &[f64]) -> Result<f64, EvalError> {
        check_dim(self.n_coarse, y.len())?;
        let x = self.extend(y);
        self.inner.value(&x)
    }
    fn gradient(&mut self, y: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.n_coarse, y.len())?;
        let x = self.extend(y);
        let mut g = self.inner.gradient(&x)?;
        g.truncate(self.n_coarse);
        Ok(g)
    }
    fn hessvec(&mut self, y: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.n_coarse, y.len())?;
        let x = self.extend(y);
        let w = self.extend(v);
        let mut out = self.inner.hessvec(&x, &w)?;
        out.truncate(self.n_coarse);
        Ok(out)
    }
}

/// `f(x) = ½ xᵀ A x − bᵀ x` with a dense symmetric `A`; handy in tests and
/// as a toy problem.
#[derive(Debug, Clone)]
pub struct DenseQuadratic {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl DenseQuadratic {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.a.iter().map(|row| dot(row, x)).collect()
    }
}

impl SmoothObjective for DenseQuadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
        check_dim(self.b.len(), x.len())?;
        Ok(0.5 * dot(&self.apply(x), x) - dot(&self.b, x))
    }
    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.b.len(), x.len())?;
        Ok(sub(&self.apply(x), &self.b))
    }
    fn hessvec(&mut self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        check_dim(self.b.len(), v.len())?;
        Ok(self.apply(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct HalfNormSq;
    impl SmoothObjective for HalfNormSq {
        fn dim(&self) -> usize {
            3
        }
        fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
            Ok(0.5 * dot(x, x))
        }
        fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(x.to_vec())
        }
        fn hessvec(&mut self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(v.to_vec())
        }
    }

    struct Affine {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    }
    impl LeastSquaresResidual for Affine {
        fn dim(&self) -> usize {
            self.a[0].len()
        }
        fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(self.a.iter().zip(&self.b).map(|(row, bi)| dot(row, x) - bi).collect())
        }
        fn jvp(&mut self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(self.a.iter().map(|row| dot(row, v)).collect())
        }
        fn vjp(&mut self, _x: &[f64], w: &[f64]) -> Result<Vec<f64>, EvalError> {
            let n = self.dim();
            Ok((0..n).map(|j| self.a.iter().zip(w).map(|(row, wi)| row[j] * wi).sum()).collect())
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn taylor_decrease_examples() {
        let x = [0.0, 0.0];
        let g = [1.0, 0.0];
        let mut ident = |v: &[f64]| Ok(v.to_vec());
        let mut model = TaylorModel {
            anchor: &x,
            gradient: &g,
            curvature: &mut ident,
            value: 3.0,
        };
        assert_eq!(taylor_decrease(&mut model, &ProxFunction::Zero, &[0.0, 0.0]).unwrap(), 0.0);
        let s = [-1.0, 0.0];
        let dec = taylor_decrease(&mut model, &ProxFunction::Zero, &s).unwrap();
        assert!((dec - 0.5).abs() < 1e-15);
        // direct model evaluation at both points
        let m0 = model.eval(&ProxFunction::Zero, &[0.0, 0.0]).unwrap();
        let m1 = model.eval(&ProxFunction::Zero, &s).unwrap();
        assert!((m0 - m1 - dec).abs() < 1e-15);

        let mut zero = |v: &[f64]| Ok(vec![0.0; v.len()]);
        let g = [0.3, -2.0];
        let mut lin = TaylorModel {
            anchor: &x,
            gradient: &g,
            curvature: &mut zero,
            value: 0.0,
        };
        let s = [0.5, 0.25];
        let dec = taylor_decrease(&mut lin, &ProxFunction::Zero, &s).unwrap();
        assert!((dec + dot(&g, &s)).abs() < 1e-15);
        let boxed = ProxFunction::boxed(-0.1, 0.1).unwrap();
        assert_eq!(taylor_decrease(&mut lin, &boxed, &s).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn every_mode_is_identity_on_half_norm() {
        let x = [0.3, -1.0, 2.0];
        let v = [1.0, 2.0, -0.5];
        assert_eq!(HalfNormSq.hessvec(&x, &v).unwrap(), v.to_vec());
        let mut fd = FdGradient::new(HalfNormSq);
        for (a, b) in fd.hessvec(&x, &v).unwrap().iter().zip(v) {
            assert!((a - b).abs() < 1e-7);
        }
        let ident = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let mut gn = GaussNewton::new(Affine { a: ident, b: vec![0.0; 3] }, 0.0);
        assert_eq!(gn.hessvec(&x, &v).unwrap(), v.to_vec());
    }

    #[test]
    fn gauss_newton_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut rng, 3)).collect();
        let b = random_vec(&mut rng, 5);
        let mut gn = GaussNewton::new(Affine { a: a.clone(), b }, 0.0);
        let x = random_vec(&mut rng, 3);
        let v = random_vec(&mut rng, 3);
        let got = gn.hessvec(&x, &v).unwrap();
        // dense AᵀA built explicitly
        for j in 0..3 {
            let ata_row: Vec<f64> = (0..3)
                .map(|k| (0..5).map(|i| a[i][j] * a[i][k]).sum())
                .collect();
            assert!((dot(&ata_row, &v) - got[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn fd_gradient_is_symmetric_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let m: Vec<Vec<f64>> = (0..6).map(|_| random_vec(&mut rng, 6)).collect();
            let a: Vec<Vec<f64>> = (0..6)
                .map(|i| (0..6).map(|j| m[i][j] + m[j][i]).collect())
                .collect();
            let q = DenseQuadratic { a: a.clone(), b: random_vec(&mut rng, 6) };
            let mut fd = FdGradient::new(q);
            let x = random_vec(&mut rng, 6);
            let u = random_vec(&mut rng, 6);
            let v = random_vec(&mut rng, 6);
            let bu = fd.hessvec(&x, &u).unwrap();
            let bv = fd.hessvec(&x, &v).unwrap();
            let (l, r) = (dot(&bu, &v), dot(&u, &bv));
            assert!((l - r).abs() <= 1e-6 * (1.0 + l.abs().max(r.abs())));
            let exact: Vec<f64> = a.iter().map(|row| dot(row, &u)).collect();
            assert!((dot(&exact, &v) - l).abs() <= 1e-6 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn fd_gradient_reports_nonfinite() {
        struct Bad;
        impl SmoothObjective for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn value(&mut self, _: &[f64]) -> Result<f64, EvalError> {
                Ok(0.0)
            }
            fn gradient(&mut self, _: &[f64]) -> Result<Vec<f64>, EvalError> {
                Ok(vec![f64::NAN])
            }
            fn hessvec(&mut self, _: &[f64], _: &[f64]) -> Result<Vec<f64>, EvalError> {
                unreachable!()
            }
        }
        assert!(matches!(
            FdGradient::new(Bad).hessvec(&[0.0], &[1.0]),
            Err(EvalError::NonFinite(_))
        ));
    }

    #[test]
    fn coarse_model_first_order_coherence() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = TransferOperator::avg_1d(8).unwrap();
        let m: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 4)).collect();
        let a: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| m[i][j] + m[j][i] + if i == j { 5.0 } else { 0.0 }).collect())
            .collect();
        for _ in 0..20 {
            let mut coarse = DenseQuadratic { a: a.clone(), b: random_vec(&mut rng, 4) };
            let fine_grad: Vec<f64> = random_vec(&mut rng, 8).iter().map(|v| 100.0 * v).collect();
            let y0 = random_vec(&mut rng, 4);
            let base_value = coarse.value(&y0).unwrap();
            let mut model = build_coarse_model(&fine_grad, &r, &mut coarse, &y0).unwrap();
            let g = model.gradient(&y0).unwrap();
            let rg = r.restrict(&fine_grad).unwrap();
            let err = crate::linalg::dist(&g, &rg);
            assert!(err <= 1e-13 * (1.0 + norm(&fine_grad)), "{err}");
            assert_eq!(model.value(&y0).unwrap(), base_value);
        }
    }

    #[test]
    fn zero_correction_leaves_model_unchanged() {
        let r = TransferOperator::avg_1d(4).unwrap();
        let mut coarse = HalfNormSq2;
        let y0 = [0.4, -0.2];
        // fine gradient whose restriction equals ∇f_c(y0) = y0
        let fine_grad = r.prolong(&y0).unwrap();
        let mut model = build_coarse_model(&fine_grad, &r, &mut coarse, &y0).unwrap();
        assert!(model.correction().iter().all(|v| v.abs() < 1e-15));
        let y = [1.0, 2.0];
        assert!((model.value(&y).unwrap() - 2.5).abs() < 1e-15);
    }

    struct HalfNormSq2;
    impl SmoothObjective for HalfNormSq2 {
        fn dim(&self) -> usize {
            2
        }
        fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
            Ok(0.5 * dot(x, x))
        }
        fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(x.to_vec())
        }
        fn hessvec(&mut self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(v.to_vec())
        }
    }

    #[test]
    fn counting_wrapper_counts_each_callback_once() {
        let mut c = CountingObjective::new(HalfNormSq);
        c.value(&[0.0; 3]).unwrap();
        c.value(&[0.0; 3]).unwrap();
        c.gradient(&[0.0; 3]).unwrap();
        c.hessvec(&[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(
            c.counts(),
            Counters { fval: 2, grad: 1, hess: 1, phi: 0, prox: 0 }
        );
    }

    #[test]
    fn rescaled_and_extended_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 4)).collect();
        let a: Vec<Vec<f64>> =
            (0..4).map(|i| (0..4).map(|j| m[i][j] + m[j][i]).collect()).collect();
        let q = DenseQuadratic { a, b: random_vec(&mut rng, 4) };
        let mut objs: Vec<Box<dyn SmoothObjective>> = vec![
            Box::new(Rescaled::new(q.clone(), 0.5f64.sqrt())),
            Box::new(ExtendByZero::new(q.clone(), 3).unwrap()),
            Box::new({
                let mut an = Anchored::new(q, TransferOperator::avg_1d(4).unwrap()).unwrap();
                an.recenter(&random_vec(&mut rng, 4)).unwrap();
                an
            }),
        ];
        for obj in objs.iter_mut() {
            let n = obj.dim();
            let x = random_vec(&mut rng, n);
            let v = random_vec(&mut rng, n);
            let eps = 1e-6;
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
            let fd = (obj.value(&xp).unwrap() - obj.value(&xm).unwrap()) / (2.0 * eps);
            let g = obj.gradient(&x).unwrap();
            assert!((fd - dot(&g, &v)).abs() < 1e-8);
            let hv = obj.hessvec(&x, &v).unwrap();
            let gp = obj.gradient(&xp).unwrap();
            let gm = obj.gradient(&xm).unwrap();
            for i in 0..n {
                assert!(((gp[i] - gm[i]) / (2.0 * eps) - hv[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn anchored_passes_through_the_finer_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = TransferOperator::avg_1d(6).unwrap();
        let mut fine = HalfNormSq6;
        let mut an = Anchored::new(HalfNormSq6, r.clone()).unwrap();
        let x = random_vec(&mut rng, 6);
        an.recenter(&x).unwrap();
        let y = r.restrict(&x).unwrap();
        assert!((an.value(&y).unwrap() - fine.value(&x).unwrap()).abs() < 1e-14);
        let g = an.gradient(&y).unwrap();
        let rg = r.restrict(&fine.gradient(&x).unwrap()).unwrap();
        assert!(g.iter().zip(&rg).all(|(a, b)| (a - b).abs() < 1e-14));

        // A second level sharing the offset follows recentering of the first.
        let offset = an.offset();
        let mut twin = Anchored::with_offset(HalfNormSq6, r.clone(), offset).unwrap();
        let x2 = random_vec(&mut rng, 6);
        an.recenter(&x2).unwrap();
        let y2 = r.restrict(&x2).unwrap();
        assert!((twin.value(&y2).unwrap() - fine.value(&x2).unwrap()).abs() < 1e-14);
    }

    struct HalfNormSq6;
    impl SmoothObjective for HalfNormSq6 {
        fn dim(&self) -> usize {
            6
        }
        fn value(&mut self, x: &[f64]) -> Result<f64, EvalError> {
            Ok(0.5 * dot(x, x))
        }
        fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(x.to_vec())
        }
        fn hessvec(&mut self, _x: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
            Ok(v.to_vec())
        }
    }
}
