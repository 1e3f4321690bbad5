//! Block compound-symmetric covariance `Sigma = sigma^2 R`, with
//! `R_ij = (1 - rho) I + rho J` on each (temperature, time) cell.
//!
//! Everything here is closed form: a block has eigenvalue `1 + (n-1) rho` along
//! the constant vector and `1 - rho` on its orthogonal complement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Margin kept between the REML search interval and the singular endpoints.
pub const RHO_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStructure {
    pub sigma: f64,
    pub rho: f64,
    pub block_sizes: Vec<usize>,
}

fn check_block(n: usize, rho: f64) -> Result<(f64, f64)> {
    let off = 1.0 - rho;
    let along = 1.0 + (n as f64 - 1.0) * rho;
    if n == 0 {
        return Err(Error::InvalidArgument("empty covariance block".into()));
    }
    if n == 1 {
        return Ok((1.0, 1.0));
    }
    if !(off > 0.0) || !(along > 0.0) {
        return Err(Error::SingularCorrelation { rho, block: n });
    }
    Ok((off, along))
}

/// `R_ij^{-1} v` via the Sherman–Morrison closed form.
pub fn block_inverse_apply(n: usize, rho: f64, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != n {
        return Err(Error::InvalidArgument(format!(
            "block of size {n} applied to vector of length {}",
            v.len()
        )));
    }
    let (off, along) = check_block(n, rho)?;
    if n == 1 {
        return Ok(v.to_vec());
    }
    let total: f64 = v.iter().sum();
    let shift = rho / along * total;
    Ok(v.iter().map(|x| (x - shift) / off).collect())
}

/// `log |R_ij| = (n-1) log(1 - rho) + log(1 + (n-1) rho)`.
pub fn block_logdet(n: usize, rho: f64) -> Result<f64> {
    let (off, along) = check_block(n, rho)?;
    if n == 1 {
        return Ok(0.0);
    }
    Ok((n as f64 - 1.0) * off.ln() + along.ln())
}

/// Feasible correlation interval for the largest block, before any margin.
pub fn positive_definite_bounds(max_block: usize) -> (f64, f64) {
    if max_block <= 1 {
        (f64::NEG_INFINITY, 1.0)
    } else {
        (-1.0 / (max_block as f64 - 1.0), 1.0)
    }
}

/// Search interval for REML: nonnegative correlations kept `RHO_MARGIN` away
/// from the singular endpoints.
pub fn reml_rho_bounds(max_block: usize) -> (f64, f64) {
    let (lo, hi) = positive_definite_bounds(max_block);
    (lo.max(0.0) + RHO_MARGIN, hi - RHO_MARGIN)
}

impl ErrorStructure {
    pub fn new(sigma: f64, rho: f64, block_sizes: Vec<usize>) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma = {sigma} must be positive")));
        }
        for &n in &block_sizes {
            check_block(n, rho)?;
        }
        Ok(ErrorStructure {
            sigma,
            rho,
            block_sizes,
        })
    }

    pub fn n(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "vector of length {} for covariance of size {}",
                v.len(),
                self.n()
            )));
        }
        Ok(())
    }

    fn blocks<'a>(&'a self, v: &'a [f64]) -> impl Iterator<Item = (usize, &'a [f64])> + 'a {
        let mut start = 0;
        self.block_sizes.iter().map(move |&n| {
            let block = &v[start..start + n];
            start += n;
            (n, block)
        })
    }

    /// `R^{-1} v`.
    pub fn inverse_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut out = Vec::with_capacity(v.len());
        for (n, block) in self.blocks(v) {
            out.extend(block_inverse_apply(n, self.rho, block)?);
        }
        Ok(out)
    }

    /// `log |R|`.
    pub fn logdet_r(&self) -> Result<f64> {
        self.block_sizes
            .iter()
            .map(|&n| block_logdet(n, self.rho))
            .sum()
    }

    /// `log |Sigma| = 2 n log sigma + log |R|`.
    pub fn logdet(&self) -> Result<f64> {
        Ok(2.0 * self.n() as f64 * self.sigma.ln() + self.logdet_r()?)
    }

    /// `L^{-1} v` for the symmetric square root `L = R^{1/2}`.
    pub fn whiten(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v)?;
        let mut out = Vec::with_capacity(v.len());
        for (n, block) in self.blocks(v) {
            let (off, along) = check_block(n, self.rho)?;
            let a = off.sqrt().recip();
            let b = along.sqrt().recip();
            let mean = block.iter().sum::<f64>() / n as f64;
            out.extend(block.iter().map(|x| a * x + (b - a) * mean));
        }
        Ok(out)
    }

    /// `v' R^{-1} v`.
    pub fn quad_form(&self, v: &[f64]) -> Result<f64> {
        let w = self.inverse_apply(v)?;
        Ok(v.iter().zip(&w).map(|(a, b)| a * b).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_block(n: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho })
    }

    #[test]
    fn inverse_examples() {
        let v = block_inverse_apply(2, 0.5, &[1.0, 0.0]).unwrap();
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-15 && (v[1] + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(block_inverse_apply(3, 0.0, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let ones = block_inverse_apply(3, 0.2, &[1.0; 3]).unwrap();
        assert!(ones.iter().all(|x| (x - 5.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn logdet_examples() {
        assert!((block_logdet(2, 0.5).unwrap() - 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(block_logdet(4, 0.0).unwrap(), 0.0);
        assert_eq!(block_logdet(1, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn singular_blocks_rejected() {
        assert!(block_logdet(3, 1.0).is_err());
        assert!(block_logdet(3, -0.5).is_err());
        assert!(block_inverse_apply(2, -1.0, &[1.0, 1.0]).is_err());
        assert!(ErrorStructure::new(1.0, 1.0, vec![2]).is_err());
        assert!(ErrorStructure::new(0.0, 0.1, vec![2]).is_err());
    }

    #[test]
    fn whitening_examples() {
        let s = ErrorStructure::new(1.0, 0.0, vec![2, 1]).unwrap();
        assert_eq!(s.whiten(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        let s = ErrorStructure::new(1.0, 0.5, vec![2]).unwrap();
        let w = s.whiten(&[1.0, 1.0]).unwrap();
        let norm2: f64 = w.iter().map(|x| x * x).sum();
        assert!((norm2 - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn whitening_matches_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let blocks: Vec<usize> = (0..rng.random_range(1..6)).map(|_| rng.random_range(1..6)).collect();
            let rho = rng.random_range(-0.2..0.95);
            let s = ErrorStructure::new(1.0, rho, blocks).unwrap();
            let v: Vec<f64> = (0..s.n()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w = s.whiten(&v).unwrap();
            let lhs: f64 = w.iter().map(|x| x * x).sum();
            let rhs = s.quad_form(&v).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn agrees_with_dense_algebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=5 {
            for _ in 0..10 {
                let (lo, _) = positive_definite_bounds(n);
                let rho = rng.random_range(lo.max(-0.99) + 0.01..0.99);
                let dense = dense_block(n, rho);
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let expect = dense.clone().lu().solve(&nalgebra::DVector::from_column_slice(&v)).unwrap();
                let got = block_inverse_apply(n, rho, &v).unwrap();
                for (a, b) in got.iter().zip(expect.iter()) {
                    assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
                }
                let ld = dense.determinant().ln();
                assert!((block_logdet(n, rho).unwrap() - ld).abs() <= 1e-9 * ld.abs().max(1.0));
            }
        }
    }

    #[test]
    fn linear_in_vector() {
        let a = [1.0, -2.0, 0.5];
        let b = [0.3, 0.1, 4.0];
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + y).collect();
        let ra = block_inverse_apply(3, 0.3, &a).unwrap();
        let rb = block_inverse_apply(3, 0.3, &b).unwrap();
        let rs = block_inverse_apply(3, 0.3, &sum).unwrap();
        for i in 0..3 {
            assert!((rs[i] - (2.0 * ra[i] + rb[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn search_bounds() {
        let (lo, hi) = reml_rho_bounds(10);
        assert_eq!(lo, 1e-6);
        assert_eq!(hi, 1.0 - 1e-6);
    }
}
