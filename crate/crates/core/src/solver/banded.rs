//! Symmetric positive-definite band matrices with an in-place Cholesky factor.

use crate::error::{Error, Result};

/// Lower band of a symmetric matrix: entry `(i, j)` with `j <= i <= j + bw`.
/// Each row's band is stored contiguously in ascending column order.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + self.bw - (i - j)
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..i {
                let v = self.data[self.slot(i, j)];
                y[i] += v * x[j];
                y[j] += v * x[i];
            }
            y[i] += self.data[self.slot(i, i)] * x[i];
        }
        y
    }

    /// Factors in place into `L` with `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandCholesky> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let row_i = i * w + bw - i;
                let row_j = j * w + bw - j;
                let mut s = self.data[row_i + j];
                for k in lo..j {
                    s -= self.data[row_i + k] * self.data[row_j + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "matrix not positive definite at row {i} (pivot {s:e})"
                        )));
                    }
                    self.data[row_i + i] = s.sqrt();
                } else {
                    self.data[row_i + j] = s / self.data[row_j + j];
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    factor: BandMatrix,
}

impl BandCholesky {
    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let f = &self.factor;
        let (n, bw) = (f.n, f.bw);
        let w = bw + 1;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let row = i * w + bw - i;
            let lo = i.saturating_sub(bw);
            let mut s = y[i];
            for k in lo..i {
                s -= f.data[row + k] * y[k];
            }
            y[i] = s / f.data[row + i];
        }
        for i in (0..n).rev() {
            let row = i * w + bw - i;
            y[i] /= f.data[row + i];
            let yi = y[i];
            let lo = i.saturating_sub(bw);
            for k in lo..i {
                y[k] -= f.data[row + k] * yi;
            }
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solves_random_spd_band_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n, bw) in [(1, 0), (10, 3), (50, 7), (40, 39)] {
            let mut a = BandMatrix::zeros(n, bw);
            for i in 0..n {
                for j in i.saturating_sub(bw)..i {
                    a.add(i, j, rng.random_range(-1.0..1.0));
                }
                a.add(i, i, 2.0 * bw as f64 + 1.0);
            }
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = a.mul_vec(&x);
            let sol = a.clone().cholesky().unwrap().solve(&b);
            for (s, e) in sol.iter().zip(&x) {
                assert!((s - e).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = BandMatrix::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 0, 2.0);
        a.add(1, 1, 1.0);
        assert!(a.cholesky().is_err());
    }
}
