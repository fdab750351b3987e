//! Spectral proximal gradient solver for the trust-region subproblem
//! `min ⟨g, s⟩ + ½⟨Bs, s⟩ + φ(x0 + s)` subject to `‖s‖ ≤ Δ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{all_finite, axpy, dist, dot, norm, sub};
use crate::prox::{stationarity_h, ProxError, ProxFunction};
use crate::smooth::{Curvature, EvalError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpgError {
    #[error("invalid SPG parameters: {0}")]
    InvalidParams(String),
    #[error("trust-region radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("starting point is outside dom φ")]
    Infeasible,
    #[error("non-finite {0} in SPG")]
    NonFinite(&'static str),
    #[error("zero step direction")]
    ZeroStep,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prox(#[from] ProxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpgParams {
    pub maxit: usize,
    /// `τ̃`
    pub tol_abs: f64,
    /// `τ_rel`, relative to the initial stationarity measure
    pub tol_rel: f64,
    pub t_min: f64,
    pub t_max: f64,
    /// Initial spectral step.
    pub t0: f64,
    /// Step used for the stationarity measure inside the loop guard.
    pub t_h: f64,
}

impl Default for SpgParams {
    fn default() -> Self {
        Self {
            maxit: 100,
            tol_abs: 1e-10,
            tol_rel: 1e-2,
            t_min: 1e-12,
            t_max: 1e12,
            t0: 1.0,
            t_h: 1.0,
        }
    }
}

impl SpgParams {
    pub fn validate(&self) -> Result<(), SpgError> {
        let bad = |m: &str| Err(SpgError::InvalidParams(m.to_string()));
        if self.maxit == 0 {
            return bad("maxit must be positive");
        }
        if !(self.tol_abs > 0.0 && self.tol_rel > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.t_min > 0.0 && self.t_min <= self.t_max && self.t_max.is_finite()) {
            return bad("need 0 < t_min <= t_max < inf");
        }
        if !(self.t0 >= self.t_min && self.t0 <= self.t_max) {
            return bad("t0 must lie in [t_min, t_max]");
        }
        if !(self.t_h > 0.0) {
            return bad("t_h must be positive");
        }
        Ok(())
    }
}

/// Minimizer of `q(α) = ½α²κ + α·(d_dot_s + phi_diff)` over `[0, alpha_max]`.
pub fn cauchy_alpha(kappa: f64, d_dot_s: f64, phi_diff: f64, alpha_max: f64) -> f64 {
    if kappa <= 0.0 {
        alpha_max
    } else {
        (-(d_dot_s + phi_diff) / kappa).min(alpha_max).max(0.0)
    }
}

/// Positive root of `‖(x − x0) + α s‖² = Δ²`.
pub fn boundary_alpha(x: &[f64], s: &[f64], x0: &[f64], delta: f64) -> Result<f64, SpgError> {
    let a = dot(s, s);
    if a == 0.0 {
        return Err(SpgError::ZeroStep);
    }
    let e = sub(x, x0);
    let b = 2.0 * dot(&e, s);
    let c = (dot(&e, &e) - delta * delta).min(0.0);
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let root = disc.sqrt();
    if b >= 0.0 {
        let q = -0.5 * (b + root);
        Ok(if q == 0.0 { 0.0 } else { c / q })
    } else {
        Ok(0.5 * (root - b) / a)
    }
}

/// What happened inside one subproblem solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpgTrace {
    pub iterations: usize,
    pub h0: f64,
    pub h_final: f64,
    /// Stopped because a step was truncated at the trust-region boundary.
    pub hit_boundary: bool,
    pub prox_calls: u64,
    pub phi_calls: u64,
    /// `max |⟨Bs, s⟩| / ‖s‖²` over the inner steps.
    pub curvature_max: f64,
    /// Model decrease of the first inner step, `−q(α_0)`.
    pub first_decrease: f64,
    /// Inner steps with `q(α) > 0`; should stay zero.
    pub increases: usize,
    pub spectral_steps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SpgResult {
    pub x: Vec<f64>,
    /// Running model gradient `g + B(x − x0)` at the returned point.
    pub d: Vec<f64>,
    pub trace: SpgTrace,
}

impl SpgResult {
    /// `m(x0) − m(x)` for the quadratic model with gradient `g`, using the
    /// running gradient so no extra curvature product is needed.
    pub fn model_decrease(&self, g: &[f64], x0: &[f64], phi: &ProxFunction) -> Result<f64, SpgError> {
        let s = sub(&self.x, x0);
        let gd: Vec<f64> = g.iter().zip(&self.d).map(|(a, b)| a + b).collect();
        Ok(-0.5 * dot(&gd, &s) + phi.decrease(x0, &self.x)?)
    }
}

/// Spectral proximal gradient iteration with the spectral Cauchy line search.
pub fn spg_solve<B: Curvature>(
    g: &[f64],
    b_op: &mut B,
    phi: &ProxFunction,
    x0: &[f64],
    delta: f64,
    params: &SpgParams,
) -> Result<SpgResult, SpgError> {
    params.validate()?;
    if !(delta > 0.0) {
        return Err(SpgError::BadRadius(delta));
    }
    if g.len() != x0.len() {
        return Err(EvalError::DimensionMismatch { expected: x0.len(), got: g.len() }.into());
    }
    let mut trace = SpgTrace::default();
    let mut phi_x = phi.value(x0)?;
    trace.phi_calls += 1;
    if !phi_x.is_finite() {
        return Err(SpgError::Infeasible);
    }
    let mut x = x0.to_vec();
    let mut d = g.to_vec();
    let mut t = params.t0;
    let h0 = stationarity_h(&d, &x, phi, params.t_h)?;
    trace.prox_calls += 1;
    trace.h0 = h0;
    let mut h = h0;
    let tol = params.tol_abs.min(params.tol_rel * h0);

    while trace.iterations < params.maxit && h > tol && dist(&x, x0) <= delta {
        let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi - t * di).collect();
        let p = phi.prox(t, &trial)?;
        trace.prox_calls += 1;
        let s = sub(&p, &x);
        if s.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut alpha_max = 1.0;
        let mut truncated = false;
        let xs: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        if dist(&xs, x0) > delta {
            alpha_max = boundary_alpha(&x, &s, x0, delta)?.min(1.0);
            truncated = true;
        }
        let phi_diff = -phi.decrease(&x, &xs)?;
        trace.phi_calls += 1;
        let bs = b_op.apply(&s)?;
        let kappa = dot(&bs, &s);
        if !kappa.is_finite() || !all_finite(&bs) {
            return Err(SpgError::NonFinite("curvature"));
        }
        let ss = dot(&s, &s);
        trace.curvature_max = trace.curvature_max.max(kappa.abs() / ss);
        let ds = dot(&d, &s);
        let alpha = cauchy_alpha(kappa, ds, phi_diff, alpha_max);
        let q = 0.5 * alpha * alpha * kappa + alpha * (ds + phi_diff);
        if trace.iterations == 0 {
            trace.first_decrease = -q;
        }
        if q > 0.0 {
            trace.increases += 1;
        }
        let d_norm_old = norm(&d);
        axpy(alpha, &s, &mut x);
        phi.project_domain(&mut x);
        axpy(alpha, &bs, &mut d);
        if !all_finite(&d) {
            return Err(SpgError::NonFinite("model gradient"));
        }
        phi_x = phi.value(&x)?;
        trace.phi_calls += 1;
        let t_bar = if kappa <= 0.0 {
            if d_norm_old == 0.0 {
                trace.iterations += 1;
                break;
            }
            t / d_norm_old
        } else {
            ss / kappa
        };
        t = t_bar.clamp(params.t_min, params.t_max);
        trace.spectral_steps.push(t);
        trace.iterations += 1;
        h = stationarity_h(&d, &x, phi, params.t_h)?;
        trace.prox_calls += 1;
        if truncated && alpha >= alpha_max {
            trace.hit_boundary = true;
            break;
        }
    }
    debug_assert!(phi_x.is_finite());
    trace.h_final = h;
    Ok(SpgResult { x, d, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::soft_threshold;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(a: Vec<Vec<f64>>) -> impl FnMut(&[f64]) -> Result<Vec<f64>, EvalError> {
        move |v: &[f64]| Ok(a.iter().map(|row| dot(row, v)).collect())
    }

    #[test]
    fn cauchy_alpha_examples() {
        assert_eq!(cauchy_alpha(0.0, -1.0, 0.0, 0.7), 0.7);
        assert_eq!(cauchy_alpha(2.0, -1.0, 0.0, 1.0), 0.5);
        assert_eq!(cauchy_alpha(2.0, -4.0, 0.0, 1.0), 1.0);
        assert_eq!(cauchy_alpha(2.0, 1.0, 0.0, 1.0), 0.0);
        assert_eq!(cauchy_alpha(-1.0, 5.0, 0.0, 0.3), 0.3);
    }

    #[test]
    fn boundary_alpha_examples() {
        let a = boundary_alpha(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], 0.3).unwrap();
        assert!((a - 0.3).abs() < 1e-15);
        let a = boundary_alpha(&[0.0, 0.6], &[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((a - 0.8).abs() < 1e-15);
        let a = boundary_alpha(&[0.5, 0.0], &[1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((a - 0.5).abs() < 1e-15);
        // pointing back through the center
        let a = boundary_alpha(&[0.5, 0.0], &[-1.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((a - 1.5).abs() < 1e-15);
        assert_eq!(boundary_alpha(&[0.0], &[0.0], &[0.0], 1.0), Err(SpgError::ZeroStep));
    }

    proptest! {
        #[test]
        fn boundary_alpha_lands_on_sphere(
            e in prop::collection::vec(-1.0f64..1.0, 4),
            s in prop::collection::vec(-3.0f64..3.0, 4),
            extra in 0.0f64..2.0,
        ) {
            prop_assume!(norm(&s) > 1e-3);
            let x0 = vec![0.5; 4];
            let x: Vec<f64> = x0.iter().zip(&e).map(|(a, b)| a + b).collect();
            let delta = norm(&e) + extra + 1e-3;
            let a = boundary_alpha(&x, &s, &x0, delta).unwrap();
            prop_assert!(a >= 0.0);
            let y: Vec<f64> = x.iter().zip(&s).map(|(xi, si)| xi + a * si).collect();
            prop_assert!((dist(&y, &x0) - delta).abs() <= 1e-12 * (1.0 + delta));
        }

        #[test]
        fn cauchy_alpha_minimizes_q(
            kappa in -5.0f64..5.0, slope in -5.0f64..0.0, amax in 0.01f64..1.0,
        ) {
            let a = cauchy_alpha(kappa, slope, 0.0, amax);
            let q = |al: f64| 0.5 * al * al * kappa + al * slope;
            for k in 0..=100 {
                let other = amax * k as f64 / 100.0;
                prop_assert!(q(a) <= q(other) + 1e-12);
            }
        }
    }

    #[test]
    fn pure_gradient_step() {
        let mut zero = |v: &[f64]| Ok(vec![0.0; v.len()]);
        let g = [1.0, -2.0];
        let params = SpgParams { maxit: 1, ..SpgParams::default() };
        let r = spg_solve(&g, &mut zero, &ProxFunction::Zero, &[0.0, 0.0], 1e6, &params).unwrap();
        assert_eq!(r.x, vec![-1.0, 2.0]);
        assert_eq!(r.trace.iterations, 1);
    }

    #[test]
    fn identity_curvature_reaches_newton_point() {
        let mut ident = |v: &[f64]| Ok(v.to_vec());
        let g = [0.3, -1.2, 2.0];
        let x0 = [1.0, 1.0, 1.0];
        let r = spg_solve(&g, &mut ident, &ProxFunction::Zero, &x0, f64::INFINITY, &SpgParams::default())
            .unwrap();
        for i in 0..3 {
            assert!((r.x[i] - (x0[i] - g[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn iterates_stay_in_the_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = 6;
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            // indefinite symmetric curvature
            let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[i][j] + m[j][i]).collect()).collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let delta = rng.random_range(0.01..2.0);
            let phi = ProxFunction::l1(rng.random_range(0.0..1.0)).unwrap();
            let r = spg_solve(&g, &mut dense(a), &phi, &x0, delta, &SpgParams::default()).unwrap();
            assert!(dist(&r.x, &x0) <= delta * (1.0 + 1e-12));
            assert_eq!(r.trace.increases, 0);
            assert!(r.trace.spectral_steps.iter().all(|t| (1e-12..=1e12).contains(t)));
        }
    }

    #[test]
    fn first_step_satisfies_cauchy_decrease() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (t_min, kappa_stop) = (1e-12f64, 0.6f64);
        for _ in 0..50 {
            let n = 5;
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[i][j] + m[j][i]).collect()).collect();
            // ‖B‖ bounded by the Frobenius norm
            let b_norm = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x0 = vec![0.0; n];
            let delta = rng.random_range(0.05..3.0);
            let phi = ProxFunction::l1(0.2).unwrap();
            let params = SpgParams { maxit: 1, ..SpgParams::default() };
            let r = spg_solve(&g, &mut dense(a), &phi, &x0, delta, &params).unwrap();
            let h0 = r.trace.h0;
            let kappa_fcd = 0.5 * 1f64.min(t_min * kappa_stop * kappa_stop);
            let bound = kappa_fcd * h0 * (h0 / (1.0 + b_norm)).min(delta);
            assert!(r.trace.first_decrease >= bound, "{} < {bound}", r.trace.first_decrease);
            // with t = 1 the plain Cauchy constant ½ already holds
            assert!(r.trace.first_decrease >= 0.5 * h0 * (h0 / (1.0 + b_norm)).min(delta) * 0.5);
        }
    }

    /// Long plain proximal-gradient run with step `1/L`.
    fn prox_gradient_oracle(a: &[Vec<f64>], g: &[f64], beta: f64, lip: f64) -> Vec<f64> {
        let n = g.len();
        let mut x = vec![0.0; n];
        let step = 1.0 / lip;
        for _ in 0..1_000_000 {
            let grad: Vec<f64> = (0..n).map(|i| g[i] + dot(&a[i], &x)).collect();
            let next: Vec<f64> = (0..n).map(|i| soft_threshold(x[i] - step * grad[i], step * beta)).collect();
            let moved = dist(&next, &x);
            x = next;
            if moved == 0.0 {
                break;
            }
        }
        x
    }

    #[test]
    fn matches_proximal_gradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let n = 5;
            let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let a: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 0.1 } else { 0.0 }).collect())
                .collect();
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let beta = rng.random_range(0.0..0.5);
            let lip = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            let phi = ProxFunction::l1(beta).unwrap();
            let obj = |x: &[f64]| {
                let ax: Vec<f64> = a.iter().map(|row| dot(row, x)).collect();
                dot(&g, x) + 0.5 * dot(&ax, x) + beta * x.iter().map(|v| v.abs()).sum::<f64>()
            };
            let oracle = prox_gradient_oracle(&a, &g, beta, lip);
            let params = SpgParams { maxit: 100_000, tol_abs: 1e-13, ..SpgParams::default() };
            let x0 = vec![0.0; n];
            let r = spg_solve(&g, &mut dense(a.clone()), &phi, &x0, f64::INFINITY, &params).unwrap();
            assert!((obj(&r.x) - obj(&oracle)).abs() <= 1e-6, "{} vs {}", obj(&r.x), obj(&oracle));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut ident = |v: &[f64]| Ok(v.to_vec());
        let p = SpgParams::default();
        assert_eq!(
            spg_solve(&[1.0], &mut ident, &ProxFunction::Zero, &[0.0], 0.0, &p).unwrap_err(),
            SpgError::BadRadius(0.0)
        );
        let boxed = ProxFunction::boxed(0.0, 1.0).unwrap();
        assert_eq!(
            spg_solve(&[1.0], &mut ident, &boxed, &[2.0], 1.0, &p).unwrap_err(),
            SpgError::Infeasible
        );
        let bad = SpgParams { t_min: 2.0, t_max: 1.0, ..p };
        assert!(matches!(
            spg_solve(&[1.0], &mut ident, &ProxFunction::Zero, &[0.0], 1.0, &bad),
            Err(SpgError::InvalidParams(_))
        ));
    }
}
