//! Geometric multigrid for `K + diag(c)` on the interior nodes of a uniform
//! `n × n` square mesh, `K` the 5-point stencil `(4, −1)`, used as a
//! preconditioner for conjugate gradients.

use rmntr::linalg::{axpy, dot, norm};

const OMEGA: f64 = 0.8;
const SMOOTH: usize = 2;

/// One grid: `n` cells per side, reaction coefficient at interior nodes.
#[derive(Debug, Clone)]
struct Level {
    n: usize,
    c: Vec<f64>,
}

impl Level {
    fn m(&self) -> usize {
        self.n - 1
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        apply_operator(self.n, &self.c, x)
    }
}

/// `(K + diag(c)) x` for interior vectors in row-major order.
pub fn apply_operator(n: usize, c: &[f64], x: &[f64]) -> Vec<f64> {
    let m = n - 1;
    let mut out = vec![0.0; m * m];
    for j in 0..m {
        for i in 0..m {
            let k = j * m + i;
            let mut v = (4.0 + c[k]) * x[k];
            if i > 0 {
                v -= x[k - 1];
            }
            if i + 1 < m {
                v -= x[k + 1];
            }
            if j > 0 {
                v -= x[k - m];
            }
            if j + 1 < m {
                v -= x[k + m];
            }
            out[k] = v;
        }
    }
    out
}

pub struct Multigrid {
    /// Finest first.
    levels: Vec<Level>,
}

impl Multigrid {
    /// `n` must be a power of two, at least 2.
    pub fn new(n: usize, c: &[f64]) -> Self {
        assert!(n >= 2 && n.is_power_of_two(), "multigrid needs a power-of-two grid, got {n}");
        assert_eq!(c.len(), (n - 1) * (n - 1));
        let mut levels = vec![Level { n, c: c.to_vec() }];
        while levels.last().unwrap().n > 2 {
            let fine = levels.last().unwrap();
            let (nf, mf) = (fine.n, fine.m());
            let nc = nf / 2;
            let mc = nc - 1;
            // injected coefficient; the reaction term scales with the cell area
            let mut cc = vec![0.0; mc * mc];
            for jc in 0..mc {
                for ic in 0..mc {
                    let (i, j) = (2 * ic + 1, 2 * jc + 1);
                    cc[jc * mc + ic] = 4.0 * fine.c[j * mf + i];
                }
            }
            levels.push(Level { n: nc, c: cc });
        }
        Self { levels }
    }

    /// One symmetric V-cycle from a zero initial guess.
    pub fn vcycle(&self, r: &[f64]) -> Vec<f64> {
        self.cycle(0, r)
    }

    fn cycle(&self, depth: usize, r: &[f64]) -> Vec<f64> {
        let lvl = &self.levels[depth];
        if lvl.n == 2 {
            return vec![r[0] / (4.0 + lvl.c[0])];
        }
        let mut x = vec![0.0; r.len()];
        for _ in 0..SMOOTH {
            jacobi(lvl, r, &mut x);
        }
        let ax = lvl.apply(&x);
        let res: Vec<f64> = r.iter().zip(&ax).map(|(a, b)| a - b).collect();
        let rc = restrict(lvl.n, &res);
        let ec = self.cycle(depth + 1, &rc);
        let ef = prolong(lvl.n / 2, &ec);
        axpy(1.0, &ef, &mut x);
        for _ in 0..SMOOTH {
            jacobi(lvl, r, &mut x);
        }
        x
    }
}

fn jacobi(lvl: &Level, b: &[f64], x: &mut [f64]) {
    let ax = lvl.apply(x);
    for k in 0..x.len() {
        x[k] += OMEGA * (b[k] - ax[k]) / (4.0 + lvl.c[k]);
    }
}

/// Bilinear interpolation from `nc` cells per side to `2 nc`.
pub fn prolong(nc: usize, xc: &[f64]) -> Vec<f64> {
    let mc = nc - 1;
    let nf = 2 * nc;
    let mf = nf - 1;
    let coarse = |i: usize, j: usize| -> f64 {
        // fine node (i, j) with both even; boundary nodes are zero
        if i == 0 || j == 0 || i == nf || j == nf {
            0.0
        } else {
            xc[(j / 2 - 1) * mc + i / 2 - 1]
        }
    };
    let mut out = vec![0.0; mf * mf];
    for j in 1..nf {
        for i in 1..nf {
            let v = match (i % 2, j % 2) {
                (0, 0) => coarse(i, j),
                (1, 0) => 0.5 * (coarse(i - 1, j) + coarse(i + 1, j)),
                (0, 1) => 0.5 * (coarse(i, j - 1) + coarse(i, j + 1)),
                _ => 0.25 * (coarse(i - 1, j - 1) + coarse(i + 1, j - 1) + coarse(i - 1, j + 1) + coarse(i + 1, j + 1)),
            };
            out[(j - 1) * mf + i - 1] = v;
        }
    }
    out
}

/// Transpose of [`prolong`], from `nf` cells per side to `nf / 2`.
pub fn restrict(nf: usize, xf: &[f64]) -> Vec<f64> {
    let mf = nf - 1;
    let nc = nf / 2;
    let mc = nc - 1;
    let mut out = vec![0.0; mc * mc];
    for jc in 1..nc {
        for ic in 1..nc {
            let (i0, j0) = (2 * ic, 2 * jc);
            let mut s = 0.0;
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let w = match (di.abs(), dj.abs()) {
                        (0, 0) => 1.0,
                        (1, 1) => 0.25,
                        _ => 0.5,
                    };
                    let i = (i0 as i64 + di) as usize;
                    let j = (j0 as i64 + dj) as usize;
                    s += w * xf[(j - 1) * mf + i - 1];
                }
            }
            out[(jc - 1) * mc + ic - 1] = s;
        }
    }
    out
}

/// Outcome of [`pcg`].
#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients from a zero initial guess; stops when
/// `‖r‖ ≤ max(rel ‖b‖, abs)`.
pub fn pcg(
    a: impl Fn(&[f64]) -> Vec<f64>,
    m_inv: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel: f64,
    abs: f64,
    maxit: usize,
) -> CgResult {
    let tol = (rel * norm(b)).max(abs);
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut rn = norm(&r);
    if rn <= tol {
        return CgResult { x, iterations: 0, residual: rn, converged: true };
    }
    let mut z = m_inv(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=maxit {
        let ap = a(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return CgResult { x, iterations: it, residual: rn, converged: false };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rn = norm(&r);
        if rn <= tol {
            return CgResult { x, iterations: it, residual: rn, converged: true };
        }
        z = m_inv(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    CgResult { x, iterations: maxit, residual: rn, converged: false }
}
