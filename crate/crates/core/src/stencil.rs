//! Separable 1D stencils applied along one axis of a grid, and their exact
//! transposes, without assembling any matrix.

use rayon::prelude::*;

use crate::geometry::Grid3;
use crate::real::Real;

/// Up to three `(index, coefficient)` taps of one stencil row.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Row {
    taps: [(usize, f64); 3],
    len: usize,
}

impl Row {
    pub const EMPTY: Row = Row {
        taps: [(0, 0.0); 3],
        len: 0,
    };

    pub fn two(a: (usize, f64), b: (usize, f64)) -> Row {
        Row {
            taps: [a, b, (0, 0.0)],
            len: 2,
        }
    }

    pub fn three(a: (usize, f64), b: (usize, f64), c: (usize, f64)) -> Row {
        Row { taps: [a, b, c], len: 3 }
    }

    pub fn taps(&self) -> &[(usize, f64)] {
        &self.taps[..self.len]
    }
}

/// Rows must only reference indices within one of the row index.
pub(crate) type RowFn = fn(usize, usize) -> Row;

/// Central differences inside, one-sided first differences at the faces.
pub(crate) fn gradient_row(i: usize, m: usize) -> Row {
    if m < 2 {
        Row::EMPTY
    } else if i == 0 {
        Row::two((0, -1.0), (1, 1.0))
    } else if i == m - 1 {
        Row::two((m - 2, -1.0), (m - 1, 1.0))
    } else {
        Row::two((i - 1, -0.5), (i + 1, 0.5))
    }
}

/// Second difference. At a face the ghost value is linearly extrapolated,
/// `u[-1] = 2u[0] - u[1]`, which cancels the row entirely.
pub(crate) fn laplacian_row(i: usize, m: usize) -> Row {
    if m < 3 || i == 0 || i == m - 1 {
        Row::EMPTY
    } else {
        Row::three((i - 1, 1.0), (i, -2.0), (i + 1, 1.0))
    }
}

#[inline]
fn axis_geometry(grid: &Grid3, axis: usize) -> (usize, usize) {
    let [mx, my, _] = grid.dims();
    let stride = match axis {
        0 => 1,
        1 => mx,
        _ => mx * my,
    };
    (grid.dims()[axis], stride)
}

/// `out = scale * A_axis v`.
pub(crate) fn apply_axis<T: Real>(v: &[T], grid: &Grid3, axis: usize, row: RowFn, scale: f64) -> Vec<T> {
    let (m, stride) = axis_geometry(grid, axis);
    let scale = T::lit(scale);
    let mut out = vec![T::zero(); v.len()];
    out.par_chunks_mut(grid.slice_len()).enumerate().for_each(|(k, slice)| {
        let base = k * grid.slice_len();
        for (off, o) in slice.iter_mut().enumerate() {
            let idx = base + off;
            let pos = grid.delinearize(idx)[axis];
            let line0 = idx - pos * stride;
            let mut acc = T::zero();
            for &(c, w) in row(pos, m).taps() {
                acc += T::lit(w) * v[line0 + c * stride];
            }
            *o = scale * acc;
        }
    });
    out
}

/// `out = scale * A_axis^T w`.
pub(crate) fn apply_axis_transpose<T: Real>(
    w: &[T],
    grid: &Grid3,
    axis: usize,
    row: RowFn,
    scale: f64,
) -> Vec<T> {
    let (m, stride) = axis_geometry(grid, axis);
    let scale = T::lit(scale);
    let mut out = vec![T::zero(); w.len()];
    out.par_chunks_mut(grid.slice_len()).enumerate().for_each(|(k, slice)| {
        let base = k * grid.slice_len();
        for (off, o) in slice.iter_mut().enumerate() {
            let idx = base + off;
            let pos = grid.delinearize(idx)[axis];
            let line0 = idx - pos * stride;
            let mut acc = T::zero();
            for r in pos.saturating_sub(1)..(pos + 2).min(m) {
                for &(c, coef) in row(r, m).taps() {
                    if c == pos {
                        acc += T::lit(coef) * w[line0 + r * stride];
                    }
                }
            }
            *o = scale * acc;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_1d(row: RowFn, m: usize) -> Vec<Vec<f64>> {
        (0..m)
            .map(|i| {
                let mut r = vec![0.0; m];
                for &(c, w) in row(i, m).taps() {
                    r[c] += w;
                }
                r
            })
            .collect()
    }

    #[test]
    fn rows_stay_within_one_index() {
        for m in 1..8 {
            for i in 0..m {
                for row in [gradient_row as RowFn, laplacian_row] {
                    for &(c, _) in row(i, m).taps() {
                        assert!(c + 1 >= i && c <= i + 1);
                    }
                }
            }
        }
    }

    #[test]
    fn transpose_matches_dense_1d() {
        for m in 1..7 {
            let g = Grid3::unit([m, 1, 1]).unwrap();
            let w: Vec<f64> = (0..m).map(|i| (i as f64 * 1.7).cos()).collect();
            for row in [gradient_row as RowFn, laplacian_row] {
                let d = dense_1d(row, m);
                let got = apply_axis_transpose(&w, &g, 0, row, 1.0);
                for j in 0..m {
                    let want: f64 = (0..m).map(|i| d[i][j] * w[i]).sum();
                    assert!((got[j] - want).abs() < 1e-14);
                }
            }
        }
    }
}
