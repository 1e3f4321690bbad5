//! Sufficient statistics of a block-correlated linear model.
//!
//! With `R_c^{-1} = (I - P)/(1 - rho) + P/(1 + (n_c - 1) rho)`, `P = J/n_c`,
//! every GLS or REML quantity splits into a within-block part (scaled by
//! `1/(1 - rho)`) and a block-mean part (scaled by `w_c = n_c/(1 + (n_c-1) rho)`).
//! Blocks of equal size share the weight, so their mean parts are pooled.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct BlockMeans {
    pub n: usize,
    pub xbar: Vec<f64>,
    pub ybar: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct SizeGroup {
    pub n: usize,
    pub h_xx: DMatrix<f64>,
    pub h_xy: DVector<f64>,
    pub h_yy: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockedSystem {
    pub n: usize,
    pub p: usize,
    pub blocks: Vec<BlockMeans>,
    pub e_xx: DMatrix<f64>,
    pub e_xy: DVector<f64>,
    pub e_yy: f64,
    pub groups: Vec<SizeGroup>,
}

pub(crate) fn block_weight(n: usize, rho: f64) -> f64 {
    n as f64 / (1.0 + (n as f64 - 1.0) * rho)
}

impl BlockedSystem {
    /// Blocks whose rows are all equal to `rows[c]` (row-major `C x p`).
    pub fn from_shared_rows<'a, I>(rows: &[f64], p: usize, responses: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut blocks = Vec::new();
        let mut e_yy = 0.0;
        let mut n = 0;
        for (c, ys) in responses.into_iter().enumerate() {
            let k = ys.len();
            let ybar = ys.iter().sum::<f64>() / k as f64;
            e_yy += ys.iter().map(|y| (y - ybar).powi(2)).sum::<f64>();
            n += k;
            blocks.push(BlockMeans {
                n: k,
                xbar: rows[c * p..(c + 1) * p].to_vec(),
                ybar,
            });
        }
        let mut sys = BlockedSystem {
            n,
            p,
            blocks,
            e_xx: DMatrix::zeros(p, p),
            e_xy: DVector::zeros(p),
            e_yy,
            groups: Vec::new(),
        };
        sys.pool_groups();
        sys
    }

    /// General per-reading design `x` (`n x p`) partitioned into consecutive
    /// blocks of the given sizes.
    pub fn from_readings(x: &DMatrix<f64>, y: &[f64], block_sizes: &[usize]) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n || block_sizes.iter().sum::<usize>() != n {
            return Err(Error::InvalidArgument(format!(
                "design has {n} rows, response {} entries, blocks cover {}",
                y.len(),
                block_sizes.iter().sum::<usize>()
            )));
        }
        let mut blocks = Vec::with_capacity(block_sizes.len());
        let mut e_xx = DMatrix::zeros(p, p);
        let mut e_xy = DVector::zeros(p);
        let mut e_yy = 0.0;
        let mut start = 0;
        for &k in block_sizes {
            let rows = x.rows(start, k);
            let xbar: Vec<f64> = (0..p).map(|l| rows.column(l).mean()).collect();
            let ys = &y[start..start + k];
            let ybar = ys.iter().sum::<f64>() / k as f64;
            for r in 0..k {
                let dy = ys[r] - ybar;
                e_yy += dy * dy;
                for a in 0..p {
                    let da = rows[(r, a)] - xbar[a];
                    e_xy[a] += da * dy;
                    for b in 0..p {
                        e_xx[(a, b)] += da * (rows[(r, b)] - xbar[b]);
                    }
                }
            }
            blocks.push(BlockMeans { n: k, xbar, ybar });
            start += k;
        }
        let mut sys = BlockedSystem {
            n,
            p,
            blocks,
            e_xx,
            e_xy,
            e_yy,
            groups: Vec::new(),
        };
        sys.pool_groups();
        Ok(sys)
    }

    fn pool_groups(&mut self) {
        let p = self.p;
        let mut map: BTreeMap<usize, SizeGroup> = BTreeMap::new();
        for b in &self.blocks {
            let g = map.entry(b.n).or_insert_with(|| SizeGroup {
                n: b.n,
                h_xx: DMatrix::zeros(p, p),
                h_xy: DVector::zeros(p),
                h_yy: 0.0,
            });
            for i in 0..p {
                g.h_xy[i] += b.xbar[i] * b.ybar;
                for j in 0..p {
                    g.h_xx[(i, j)] += b.xbar[i] * b.xbar[j];
                }
            }
            g.h_yy += b.ybar * b.ybar;
        }
        self.groups = map.into_values().collect();
    }

    pub fn max_block(&self) -> usize {
        self.blocks.iter().map(|b| b.n).max().unwrap_or(0)
    }

    /// Basis columns that never receive weight from any reading.
    pub fn unsupported_columns(&self) -> Vec<usize> {
        (0..self.p)
            .filter(|&l| {
                self.e_xx[(l, l)] == 0.0 && self.groups.iter().all(|g| g.h_xx[(l, l)] == 0.0)
            })
            .collect()
    }

    /// `X' R^{-1} X`.
    pub fn gram(&self, rho: f64) -> DMatrix<f64> {
        let mut g = &self.e_xx / (1.0 - rho);
        for grp in &self.groups {
            g += &grp.h_xx * block_weight(grp.n, rho);
        }
        g
    }

    /// `X' R^{-1} y`.
    pub fn rhs(&self, rho: f64) -> DVector<f64> {
        let mut c = &self.e_xy / (1.0 - rho);
        for grp in &self.groups {
            c += &grp.h_xy * block_weight(grp.n, rho);
        }
        c
    }

    /// `(y - X gamma)' R^{-1} (y - X gamma)`.
    pub fn quad_form(&self, gamma: &[f64], rho: f64) -> f64 {
        let (within, means) = self.residual_parts(gamma);
        let mut q = within / (1.0 - rho);
        for (n, d) in means {
            q += block_weight(n, rho) * d;
        }
        q
    }

    /// Within-block residual sum of squares and, per block size, the sum of
    /// squared block-mean residuals.
    pub fn residual_parts(&self, gamma: &[f64]) -> (f64, Vec<(usize, f64)>) {
        let g = DVector::from_column_slice(gamma);
        let within = (self.e_yy - 2.0 * g.dot(&self.e_xy) + (g.transpose() * &self.e_xx * &g)[0])
            .max(0.0);
        let mut by_size: BTreeMap<usize, f64> = BTreeMap::new();
        for b in &self.blocks {
            let fitted: f64 = b.xbar.iter().zip(gamma).map(|(x, g)| x * g).sum();
            *by_size.entry(b.n).or_insert(0.0) += (b.ybar - fitted).powi(2);
        }
        (within, by_size.into_iter().collect())
    }

    /// Sum over blocks of `n_c (n_c - 1) rbar_c^2`, used for the moment
    /// estimate of the within-block correlation.
    pub fn pair_products(&self, gamma: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                let fitted: f64 = b.xbar.iter().zip(gamma).map(|(x, g)| x * g).sum();
                (b.n * (b.n - 1)) as f64 * (b.ybar - fitted).powi(2)
            })
            .sum()
    }

    /// Copy with columns merged by `groups` (each a contiguous index range).
    pub fn merge_columns(&self, groups: &[std::ops::Range<usize>]) -> MergedDesign {
        let pu = groups.len();
        let merge = |m: &DMatrix<f64>| {
            DMatrix::from_fn(pu, pu, |a, b| {
                let mut s = 0.0;
                for i in groups[a].clone() {
                    for j in groups[b].clone() {
                        s += m[(i, j)];
                    }
                }
                s
            })
        };
        MergedDesign {
            e_xx: merge(&self.e_xx),
            groups: self
                .groups
                .iter()
                .map(|g| (g.n, self.blocks.iter().filter(|b| b.n == g.n).count(), merge(&g.h_xx)))
                .collect(),
        }
    }
}

/// `X_u` statistics after tied columns have been summed.
#[derive(Debug, Clone)]
pub(crate) struct MergedDesign {
    pub e_xx: DMatrix<f64>,
    /// (block size, block count, pooled mean cross-products)
    pub groups: Vec<(usize, usize, DMatrix<f64>)>,
}

