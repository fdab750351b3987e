//! Tridiagonal systems.

/// `A` with `sub[i] = A[i][i-1]` (`sub[0]` unused), `diag[i] = A[i][i]` and
/// `sup[i] = A[i][i+1]` (last entry unused).
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let m = self.len();
        (0..m)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.sub[i] * x[i - 1];
                }
                if i + 1 < m {
                    v += self.sup[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let m = self.len();
        let mut sub = vec![0.0; m];
        let mut sup = vec![0.0; m];
        for i in 0..m {
            if i > 0 {
                sub[i] = self.sup[i - 1];
            }
            if i + 1 < m {
                sup[i] = self.sub[i + 1];
            }
        }
        Self { sub, diag: self.diag.clone(), sup }
    }

    /// Thomas algorithm without pivoting; `None` on a zero pivot.
    pub fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let m = self.len();
        if m == 0 {
            return Some(vec![]);
        }
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        let mut piv = self.diag[0];
        if piv == 0.0 {
            return None;
        }
        c[0] = self.sup[0] / piv;
        d[0] = rhs[0] / piv;
        for i in 1..m {
            piv = self.diag[i] - self.sub[i] * c[i - 1];
            if piv == 0.0 || !piv.is_finite() {
                return None;
            }
            c[i] = if i + 1 < m { self.sup[i] / piv } else { 0.0 };
            d[i] = (rhs[i] - self.sub[i] * d[i - 1]) / piv;
        }
        for i in (0..m - 1).rev() {
            d[i] -= c[i] * d[i + 1];
        }
        Some(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn solve_inverts_apply(
            diag in prop::collection::vec(4.0f64..6.0, 1..30),
            seed in prop::collection::vec(-1.0f64..1.0, 90),
        ) {
            let m = diag.len();
            let a = Tridiagonal { sub: seed[..m].to_vec(), diag, sup: seed[30..30 + m].to_vec() };
            let x: Vec<f64> = seed[60..60 + m].to_vec();
            let b = a.apply(&x);
            let y = a.solve(&b).unwrap();
            for (u, v) in x.iter().zip(&y) {
                prop_assert!((u - v).abs() < 1e-12);
            }
            // ⟨A x, y⟩ = ⟨x, Aᵀ y⟩
            let at = a.transpose();
            let l: f64 = a.apply(&x).iter().zip(&y).map(|(p, q)| p * q).sum();
            let r: f64 = x.iter().zip(at.apply(&y)).map(|(p, q)| p * q).sum();
            prop_assert!((l - r).abs() < 1e-10);
        }
    }
}
