//! Grids, volumes and deformation fields.
//!
//! Grids are axis aligned and cell centered: index `(i, j, k)` sits at
//! `origin + (i*h_x, j*h_y, k*h_z)` in millimeters and the cell spans half a
//! spacing on either side. Volumes are stored x-fastest,
//! `index = i + m_x * (j + m_y * k)`.

use crate::error::{Error, Result};
use crate::real::Real;

/// Axis-aligned cell-centered 3D grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Grid3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&h| !(h.is_finite() && h > 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be finite and > 0, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid(format!("origin must be finite, got {origin:?}")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &m| acc.checked_mul(m))
            .ok_or_else(|| Error::InvalidGrid(format!("point count overflows for {dims:?}")))?;
        Ok(Self { dims, spacing, origin })
    }

    /// Unit spacing, zero origin.
    pub fn unit(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3], [0.0; 3])
    }

    /// Grid with `dims` cells tiling the box `[lo, lo + extent]` per axis.
    pub fn covering(dims: [usize; 3], lo: [f64; 3], extent: [f64; 3]) -> Result<Self> {
        let mut spacing = [0.0; 3];
        let mut origin = [0.0; 3];
        for d in 0..3 {
            spacing[d] = extent[d] / dims[d].max(1) as f64;
            origin[d] = lo[d] + 0.5 * spacing[d];
        }
        Self::new(dims, spacing, origin)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Points in one z-slice.
    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Cell volume `h_x * h_y * h_z` in mm^3.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn delinearize(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn contains_index(&self, index: [usize; 3]) -> bool {
        (0..3).all(|d| index[d] < self.dims[d])
    }

    /// World position (mm) of the center of cell `index`.
    pub fn world_of_index(&self, index: [usize; 3]) -> Result<[f64; 3]> {
        if !self.contains_index(index) {
            return Err(Error::IndexOutOfRange {
                i: index[0],
                j: index[1],
                k: index[2],
                dims: self.dims,
            });
        }
        Ok(self.center(index))
    }

    #[inline]
    pub(crate) fn center(&self, index: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + index[0] as f64 * self.spacing[0],
            self.origin[1] + index[1] as f64 * self.spacing[1],
            self.origin[2] + index[2] as f64 * self.spacing[2],
        ]
    }

    /// Continuous index of a world position (inverse of [`Self::world_of_index`]).
    pub fn index_of_world(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Lower corner of the domain covered by the cells.
    pub fn domain_lo(&self) -> [f64; 3] {
        [0, 1, 2].map(|d| self.origin[d] - 0.5 * self.spacing[d])
    }

    /// Physical size of the domain per axis.
    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|d| self.dims[d] as f64 * self.spacing[d])
    }

    /// Whether two grids tile the same box, within a relative tolerance.
    pub fn same_domain(&self, other: &Grid3) -> bool {
        let (lo_a, lo_b) = (self.domain_lo(), other.domain_lo());
        let (ex_a, ex_b) = (self.extent(), other.extent());
        (0..3).all(|d| {
            let scale = ex_a[d].abs().max(ex_b[d].abs()).max(1.0);
            let tol = 1e-9 * scale;
            (lo_a[d] - lo_b[d]).abs() <= tol && (ex_a[d] - ex_b[d]).abs() <= tol
        })
    }

    pub(crate) fn require_same_domain(&self, other: &Grid3, what: &str) -> Result<()> {
        if self.same_domain(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: domains differ (lo {:?} extent {:?} vs lo {:?} extent {:?})",
                self.domain_lo(),
                self.extent(),
                other.domain_lo(),
                other.extent()
            )))
        }
    }

    pub(crate) fn require_equal(&self, other: &Grid3, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{what}: {self:?} vs {other:?}")))
        }
    }
}

fn check_values<T: Real>(grid: &Grid3, values: &[T]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::LengthMismatch {
            expected: grid.len(),
            actual: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

/// Scalar intensity volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Image3<T = f64> {
    grid: Grid3,
    values: Vec<T>,
}

impl<T: Real> Image3<T> {
    pub fn new(grid: Grid3, values: Vec<T>) -> Result<Self> {
        check_values(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_raw(grid: Grid3, values: Vec<T>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    pub fn constant(grid: Grid3, value: T) -> Self {
        Self::from_raw(grid, vec![value; grid.len()])
    }

    /// Sample `f` at every cell center (world mm).
    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| T::lit(f(grid.center(grid.delinearize(idx)))))
            .collect();
        Self::from_raw(grid, values)
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, index: [usize; 3]) -> T {
        self.values[self.grid.linear(index[0], index[1], index[2])]
    }

    pub fn cast<U: Real>(&self) -> Image3<U> {
        Image3::from_raw(self.grid, self.values.iter().map(|v| U::lit(v.as_f64())).collect())
    }

    /// Arithmetic mean of all voxels, in f64.
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|v| v.as_f64()).sum::<f64>() / self.values.len() as f64
    }
}

/// Three scalar components sampled on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField3<T = f64> {
    grid: Grid3,
    components: [Vec<T>; 3],
}

impl<T: Real> VectorField3<T> {
    pub fn new(grid: Grid3, components: [Vec<T>; 3]) -> Result<Self> {
        for c in &components {
            check_values(&grid, c)?;
        }
        Ok(Self { grid, components })
    }

    pub(crate) fn from_raw(grid: Grid3, components: [Vec<T>; 3]) -> Self {
        debug_assert!(components.iter().all(|c| c.len() == grid.len()));
        Self { grid, components }
    }

    pub fn zeros(grid: Grid3) -> Self {
        let n = grid.len();
        Self::from_raw(grid, [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]])
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn component(&self, d: usize) -> &[T] {
        &self.components[d]
    }

    pub fn components(&self) -> &[Vec<T>; 3] {
        &self.components
    }

    pub fn into_components(self) -> [Vec<T>; 3] {
        self.components
    }

    pub fn at(&self, idx: usize) -> [T; 3] {
        [self.components[0][idx], self.components[1][idx], self.components[2][idx]]
    }

    /// Component-major flat vector: all x, then all y, then all z.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(3 * self.grid.len());
        for c in &self.components {
            out.extend_from_slice(c);
        }
        out
    }

    pub fn from_flat(grid: Grid3, flat: &[T]) -> Result<Self> {
        let n = grid.len();
        if flat.len() != 3 * n {
            return Err(Error::LengthMismatch {
                expected: 3 * n,
                actual: flat.len(),
            });
        }
        Self::new(
            grid,
            [flat[..n].to_vec(), flat[n..2 * n].to_vec(), flat[2 * n..].to_vec()],
        )
    }

    pub fn cast<U: Real>(&self) -> VectorField3<U> {
        VectorField3::from_raw(
            self.grid,
            self.components
                .clone()
                .map(|c| c.iter().map(|v| U::lit(v.as_f64())).collect()),
        )
    }
}

/// World-coordinate map `y` sampled on the deformation grid.
///
/// Component `d` at a grid point is the world position (mm) that point is
/// mapped to. The identity map has every point mapped to its own center.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformationField<T = f64>(VectorField3<T>);

impl<T: Real> DeformationField<T> {
    pub fn new(grid: Grid3, components: [Vec<T>; 3]) -> Result<Self> {
        VectorField3::new(grid, components).map(Self)
    }

    pub fn from_field(field: VectorField3<T>) -> Self {
        Self(field)
    }

    /// The identity map on `grid`.
    pub fn identity(grid: Grid3) -> Self {
        Self(VectorField3::from_raw(grid, identity_components(&grid)))
    }

    /// Identity plus a displacement field sampled as `u(world)`.
    pub fn from_displacement_fn(grid: Grid3, u: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let n = grid.len();
        let mut comps = [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]];
        for idx in 0..n {
            let x = grid.center(grid.delinearize(idx));
            let v = u(x);
            for d in 0..3 {
                comps[d][idx] = T::lit(x[d]) + T::lit(v[d]);
            }
        }
        Self(VectorField3::from_raw(grid, comps))
    }

    /// Identity plus `displacement` (which must live on the same grid).
    pub fn from_displacement(displacement: &VectorField3<T>) -> Self {
        let grid = *displacement.grid();
        let id = identity_components::<T>(&grid);
        let comps = [0, 1, 2].map(|d| {
            id[d].iter()
                .zip(displacement.component(d))
                .map(|(&a, &u)| a + u)
                .collect()
        });
        Self(VectorField3::from_raw(grid, comps))
    }

    pub fn from_flat(grid: Grid3, flat: &[T]) -> Result<Self> {
        VectorField3::from_flat(grid, flat).map(Self)
    }

    pub fn grid(&self) -> &Grid3 {
        self.0.grid()
    }

    pub fn field(&self) -> &VectorField3<T> {
        &self.0
    }

    pub fn into_field(self) -> VectorField3<T> {
        self.0
    }

    pub fn component(&self, d: usize) -> &[T] {
        self.0.component(d)
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.0.to_flat()
    }

    /// `u = y - identity`.
    pub fn displacement(&self) -> VectorField3<T> {
        let grid = *self.grid();
        let id = identity_components::<T>(&grid);
        let comps = [0, 1, 2].map(|d| {
            self.component(d)
                .iter()
                .zip(&id[d])
                .map(|(&y, &x)| y - x)
                .collect()
        });
        VectorField3::from_raw(grid, comps)
    }

    /// Largest displacement magnitude measured in voxels of `voxel_grid`.
    pub fn max_displacement_voxels(&self, voxel_grid: &Grid3) -> f64 {
        let u = self.displacement();
        let h = voxel_grid.spacing();
        (0..self.grid().len())
            .map(|i| {
                let p = u.at(i);
                (0..3)
                    .map(|d| (p[d].as_f64() / h[d]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Real>(&self) -> DeformationField<U> {
        DeformationField(self.0.cast())
    }
}

/// Identity map on `grid`; exposed as a free function for symmetry with the
/// other initializers.
pub fn make_identity<T: Real>(grid: Grid3) -> DeformationField<T> {
    DeformationField::identity(grid)
}

pub(crate) fn identity_components<T: Real>(grid: &Grid3) -> [Vec<T>; 3] {
    let n = grid.len();
    let [mx, my, _] = grid.dims();
    let o = grid.origin();
    let h = grid.spacing();
    let mut comps = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for idx in 0..n {
        let i = idx % mx;
        let j = (idx / mx) % my;
        let k = idx / (mx * my);
        comps[0].push(T::lit(o[0] + i as f64 * h[0]));
        comps[1].push(T::lit(o[1] + j as f64 * h[1]));
        comps[2].push(T::lit(o[2] + k as f64 * h[2]));
    }
    comps
}
