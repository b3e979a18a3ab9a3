//! Curvature regularizer on the displacement `u = y - identity`:
//! `S = (h/2) * sum_d sum_points (L u_d)^2` with `L` the 7-point Laplacian
//! and `h` the deformation-grid cell volume. Faces use linearly extrapolated
//! ghost values, so `L` vanishes on affine maps everywhere.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Grid3, VectorField3};
use crate::parallel::det_sum;
use crate::real::Real;
use crate::stencil::{apply_axis, apply_axis_transpose, laplacian_row};

/// Regularization weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvatureParams {
    pub alpha: f64,
}

impl CurvatureParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be finite and > 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

/// `L u` for one scalar component.
pub fn apply_laplacian<T: Real>(u: &[T], grid: &Grid3) -> Vec<T> {
    laplacian_impl(u, grid, false)
}

/// `L^T w`.
pub fn apply_laplacian_transpose<T: Real>(w: &[T], grid: &Grid3) -> Vec<T> {
    laplacian_impl(w, grid, true)
}

fn laplacian_impl<T: Real>(u: &[T], grid: &Grid3, transpose: bool) -> Vec<T> {
    assert_eq!(u.len(), grid.len());
    let h = grid.spacing();
    let mut out = vec![T::zero(); u.len()];
    for d in 0..3 {
        if grid.dims()[d] < 3 {
            continue;
        }
        let scale = 1.0 / (h[d] * h[d]);
        let part = if transpose {
            apply_axis_transpose(u, grid, d, laplacian_row, scale)
        } else {
            apply_axis(u, grid, d, laplacian_row, scale)
        };
        out.par_iter_mut().zip(part).for_each(|(o, p)| *o += p);
    }
    out
}

pub fn curvature_value<T: Real>(y: &DeformationField<T>) -> T {
    let grid = *y.grid();
    let u = y.displacement();
    let mut total = T::zero();
    for d in 0..3 {
        let lu = apply_laplacian(u.component(d), &grid);
        total += det_sum(lu.len(), |i| lu[i] * lu[i]);
    }
    T::lit(0.5 * grid.voxel_volume()) * total
}

/// `dS/dy = h * L^T L u` per component.
pub fn curvature_gradient<T: Real>(y: &DeformationField<T>) -> VectorField3<T> {
    let grid = *y.grid();
    let u = y.displacement();
    let hv = T::lit(grid.voxel_volume());
    let comps = [0, 1, 2].map(|d| {
        let lu = apply_laplacian(u.component(d), &grid);
        let mut g = apply_laplacian_transpose(&lu, &grid);
        g.par_iter_mut().for_each(|v| *v *= hv);
        g
    });
    VectorField3::from_raw(grid, comps)
}
