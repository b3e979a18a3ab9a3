//! Explicit-matrix reference for the grid transfer, for verification only.
//!
//! Built from the hat-function form of linear interpolation,
//! `w(c, p) = max(0, 1 - |clamp(p) - c|)`, rather than the cell/fraction
//! bookkeeping the fast kernels use.

use crate::error::{Error, Result};
use crate::geometry::Grid3;

/// Largest grid (points per grid) accepted by [`dense_p_oracle`].
pub const ORACLE_MAX_POINTS: usize = 512;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.data[r * self.cols..(r + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.get(r, c) * x[r];
            }
        }
        out
    }
}

fn hat_weights(coarse: &Grid3, fine: &Grid3, d: usize) -> Vec<Vec<f64>> {
    let n = coarse.dims()[d];
    (0..fine.dims()[d])
        .map(|i| {
            let world = fine.origin()[d] + i as f64 * fine.spacing()[d];
            let p = ((world - coarse.origin()[d]) / coarse.spacing()[d]).clamp(0.0, (n - 1) as f64);
            (0..n)
                .map(|c| if n == 1 { 1.0 } else { (1.0 - (p - c as f64).abs()).max(0.0) })
                .collect()
        })
        .collect()
}

/// Explicit matrix of one component of `P` (image points x deformation points).
pub fn dense_p_oracle(def_grid: &Grid3, image_grid: &Grid3) -> Result<DenseMatrix> {
    if def_grid.len() > ORACLE_MAX_POINTS || image_grid.len() > ORACLE_MAX_POINTS {
        return Err(Error::OracleTooLarge {
            rows: image_grid.len(),
            cols: def_grid.len(),
            limit: ORACLE_MAX_POINTS,
        });
    }
    def_grid.require_same_domain(image_grid, "dense oracle")?;
    let w = [0, 1, 2].map(|d| hat_weights(def_grid, image_grid, d));
    let mut m = DenseMatrix::zeros(image_grid.len(), def_grid.len());
    for row in 0..image_grid.len() {
        let [i, j, k] = image_grid.delinearize(row);
        for col in 0..def_grid.len() {
            let [a, b, c] = def_grid.delinearize(col);
            m.set(row, col, w[0][i][a] * w[1][j][b] * w[2][k][c]);
        }
    }
    Ok(m)
}
