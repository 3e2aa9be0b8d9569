use crate::error::{Error, Result};

use super::sparse::CsrMatrix;

/// Cholesky factor `A = L Lᵀ` of a symmetric positive definite matrix held
/// in band storage. Lattice operators in natural ordering have a half-band
/// of one grid row, so fill stays inside the band and the factor is exact.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    band: usize,
    // Row i stores L[i, i-band..=i] at offsets 0..=band.
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::InvalidArgument(format!(
                "band Cholesky needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let band = a.bandwidth();
        let w = band + 1;
        let mut l = vec![0.0; n * w];
        for (i, j, v) in a.triplets() {
            if j <= i {
                l[i * w + band + j - i] = v;
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(band);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(band));
                let mut s = l[i * w + band + j - i];
                for k in lo..j {
                    s -= l[i * w + band + k - i] * l[j * w + band + k - j];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { row: i, pivot: s });
                    }
                    l[i * w + band] = s.sqrt();
                } else {
                    l[i * w + band + j - i] = s / l[j * w + band];
                }
            }
        }
        Ok(Self { n, band, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.band + 1) + self.band + j - i]
    }

    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(self.band)..i {
                s -= self.at(i, k) * y[k];
            }
            y[i] = s / self.at(i, i);
        }
        y
    }

    /// `L⁻ᵀ b`
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        for i in (0..self.n).rev() {
            x[i] /= self.at(i, i);
            let xi = x[i];
            for k in i.saturating_sub(self.band)..i {
                x[k] -= self.at(i, k) * xi;
            }
        }
        x
    }

    /// `A⁻¹ b`
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `L x`
    pub fn mul_lower(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (i.saturating_sub(self.band)..=i)
                    .map(|k| self.at(i, k) * x[k])
                    .sum()
            })
            .collect()
    }

    /// `Lᵀ x`
    pub fn mul_upper(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for k in i.saturating_sub(self.band)..=i {
                y[k] += self.at(i, k) * x[i];
            }
        }
        y
    }
}
