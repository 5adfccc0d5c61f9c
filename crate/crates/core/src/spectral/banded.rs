//! Unpivoted `LDLᵀ` factorization of banded symmetric matrices.
//!
//! Used both as the linear solver inside shift-invert iteration (where the
//! shifted matrix is positive definite) and for Sylvester inertia counts
//! (where it is indefinite and pivots may come close to zero).

use crate::operator::DiscreteOperator;

#[derive(Debug, Clone)]
pub struct BandedLdl {
    n: usize,
    bw: usize,
    /// `l[i*(bw+1) + (i-j)] = L_ij` for `i-bw ≤ j < i`.
    l: Vec<f64>,
    d: Vec<f64>,
}

impl BandedLdl {
    /// Factor `H − shift·I`. Pivots smaller than `tiny` in magnitude are
    /// replaced by `tiny` with their sign kept (zero counts as positive).
    pub fn factor(op: &DiscreteOperator, shift: f64, tiny: f64) -> Self {
        let n = op.dim();
        let bw = op.bandwidth();
        let w = bw + 1;
        let band = op.lower_band(shift);
        let mut l = vec![0.0; n * w];
        let mut d = vec![0.0; n];
        // ld[k] = L_ik · D_k for the current row i.
        let mut ld = vec![0.0; w];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..i {
                let mut s = band[i][i - j];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= ld[i - k] * l[j * w + (j - k)];
                }
                let lij = s / d[j];
                l[i * w + (i - j)] = lij;
                ld[i - j] = lij * d[j];
            }
            let mut di = band[i][0];
            for j in j0..i {
                di -= l[i * w + (i - j)] * ld[i - j];
            }
            if di.abs() < tiny {
                di = if di < 0.0 { -tiny } else { tiny };
            }
            d[i] = di;
        }
        BandedLdl { n, bw, l, d }
    }

    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    /// Solve `(H − shift·I) x = b` in place.
    pub fn solve(&self, x: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let mut s = x[i];
            for j in j0..i {
                s -= self.l[i * w + (i - j)] * x[j];
            }
            x[i] = s;
        }
        for i in 0..self.n {
            x[i] /= self.d[i];
        }
        for i in (0..self.n).rev() {
            let v = x[i];
            let j0 = i.saturating_sub(self.bw);
            for j in j0..i {
                x[j] -= self.l[i * w + (i - j)] * v;
            }
        }
    }
}
