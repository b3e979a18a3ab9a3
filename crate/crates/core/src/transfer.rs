//! Grid conversion between the deformation grid and the image grid.
//!
//! `P` is separable trilinear interpolation from deformation-grid cell
//! centers to image-grid cell centers, clamped to the edge outside the
//! coarse hull. Three implementations of the exact transpose `P^T` are
//! provided:
//!
//! * [`apply_pt_gather`]: each output point sums its own weighted inputs
//!   using per-axis index ranges and weights built once per grid pair. No
//!   two workers write the same location and the summation order is fixed,
//!   so the result does not depend on the worker count.
//! * [`apply_pt_scatter_atomic`]: each input point pushes its contribution
//!   to the (at most eight) affected outputs with atomic adds.
//! * [`apply_pt_redblack`]: image z-slices are grouped by the deformation
//!   slab they fall into; even slabs run concurrently, then odd slabs, so
//!   concurrent groups never touch the same output slice.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{identity_components, DeformationField, Grid3, VectorField3};
use crate::real::Real;

/// Which `P^T` implementation to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum PtVariant {
    #[default]
    Gather,
    ScatterAtomic,
    RedBlack,
}

impl PtVariant {
    pub const ALL: [PtVariant; 3] = [PtVariant::Gather, PtVariant::ScatterAtomic, PtVariant::RedBlack];

    pub fn name(self) -> &'static str {
        match self {
            PtVariant::Gather => "gather",
            PtVariant::ScatterAtomic => "scatter",
            PtVariant::RedBlack => "redblack",
        }
    }
}

impl fmt::Display for PtVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PtVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gather" => Ok(PtVariant::Gather),
            "scatter" | "atomic" | "scatter-atomic" => Ok(PtVariant::ScatterAtomic),
            "redblack" | "red-black" => Ok(PtVariant::RedBlack),
            other => Err(format!(
                "unknown P^T variant '{other}' (expected gather, scatter or redblack)"
            )),
        }
    }
}

/// 1D interpolation stencil of every fine index along one axis: fine index
/// `i` takes weight `lo_w[i]` from coarse index `lower[i]` and `hi_w[i]` from
/// `upper[i]`.
#[derive(Clone, Debug)]
pub(crate) struct AxisStencil {
    pub lower: Vec<usize>,
    pub upper: Vec<usize>,
    pub lo_w: Vec<f64>,
    pub hi_w: Vec<f64>,
}

impl AxisStencil {
    /// Stencil mapping `fine_n` points to `coarse_n` points along an axis.
    ///
    /// Fine point `i` sits at continuous coarse index `offset + i * ratio`.
    pub fn new(coarse_n: usize, fine_n: usize, offset: f64, ratio: f64) -> Self {
        let mut s = AxisStencil {
            lower: Vec::with_capacity(fine_n),
            upper: Vec::with_capacity(fine_n),
            lo_w: Vec::with_capacity(fine_n),
            hi_w: Vec::with_capacity(fine_n),
        };
        for i in 0..fine_n {
            let (l, frac) = locate_clamped(offset + i as f64 * ratio, coarse_n);
            s.lower.push(l);
            s.upper.push((l + 1).min(coarse_n - 1));
            s.lo_w.push(1.0 - frac);
            s.hi_w.push(frac);
        }
        s
    }

    fn between(coarse: &Grid3, fine: &Grid3, d: usize) -> Self {
        let offset = (fine.origin()[d] - coarse.origin()[d]) / coarse.spacing()[d];
        let ratio = fine.spacing()[d] / coarse.spacing()[d];
        Self::new(coarse.dims()[d], fine.dims()[d], offset, ratio)
    }
}

/// Cell `l` and fraction in `[0, 1]` of a continuous index clamped to
/// `[0, n - 1]`, with `l <= n - 2` so that `l + 1` is valid when `n >= 2`.
#[inline]
pub(crate) fn locate_clamped(p: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let top = (n - 1) as f64;
    let p = p.clamp(0.0, top);
    let l = (p.floor() as usize).min(n - 2);
    (l, p - l as f64)
}

fn stencils(coarse: &Grid3, fine: &Grid3) -> [AxisStencil; 3] {
    [0, 1, 2].map(|d| AxisStencil::between(coarse, fine, d))
}

fn check_pair(def_grid: &Grid3, image_grid: &Grid3) -> Result<()> {
    def_grid.require_same_domain(image_grid, "deformation grid vs image grid")?;
    let (dd, di) = (def_grid.dims(), image_grid.dims());
    if (0..3).any(|d| di[d] < dd[d]) {
        return Err(Error::GridMismatch(format!(
            "image grid dims {di:?} must be >= deformation grid dims {dd:?} on every axis"
        )));
    }
    Ok(())
}

/// Trilinear transfer of every component of `src` onto `dst` (same world
/// domain, any relative resolution), clamping outside the source hull.
pub(crate) fn interpolate_onto<T: Real>(src: &VectorField3<T>, dst: &Grid3) -> VectorField3<T> {
    let st = stencils(src.grid(), dst);
    let comps = [0, 1, 2].map(|c| interpolate_component(src.component(c), src.grid(), dst, &st));
    VectorField3::from_raw(*dst, comps)
}

fn interpolate_component<T: Real>(
    src: &[T],
    src_grid: &Grid3,
    dst: &Grid3,
    st: &[AxisStencil; 3],
) -> Vec<T> {
    let [mx, my, _] = dst.dims();
    let [sx, sy, _] = src_grid.dims();
    let mut out = vec![T::zero(); dst.len()];
    out.par_chunks_mut(mx * my).enumerate().for_each(|(k, slice)| {
        let (lz, uz) = (st[2].lower[k], st[2].upper[k]);
        let (wz0, wz1) = (T::lit(st[2].lo_w[k]), T::lit(st[2].hi_w[k]));
        for j in 0..my {
            let (ly, uy) = (st[1].lower[j], st[1].upper[j]);
            let (wy0, wy1) = (T::lit(st[1].lo_w[j]), T::lit(st[1].hi_w[j]));
            let rows = [
                (ly + sy * lz) * sx,
                (uy + sy * lz) * sx,
                (ly + sy * uz) * sx,
                (uy + sy * uz) * sx,
            ];
            for i in 0..mx {
                let (lx, ux) = (st[0].lower[i], st[0].upper[i]);
                let (wx0, wx1) = (T::lit(st[0].lo_w[i]), T::lit(st[0].hi_w[i]));
                let lerp = |row: usize| wx0 * src[row + lx] + wx1 * src[row + ux];
                let c0 = wy0 * lerp(rows[0]) + wy1 * lerp(rows[1]);
                let c1 = wy0 * lerp(rows[2]) + wy1 * lerp(rows[3]);
                slice[i + mx * j] = wz0 * c0 + wz1 * c1;
            }
        }
    });
    out
}

/// `y_hat = P y`: the deformation resampled onto the image grid.
pub fn apply_p<T: Real>(y: &DeformationField<T>, image_grid: &Grid3) -> Result<VectorField3<T>> {
    check_pair(y.grid(), image_grid)?;
    Ok(interpolate_onto(y.field(), image_grid))
}

/// Image-grid positions of a deformation, `x_hat + P (y - x)`.
///
/// `P` acts on the displacement so that the identity on the deformation
/// grid lands exactly on the image-grid identity; near the boundary the
/// clamp then extends the displacement rather than the positions.
pub fn deformation_to_image_grid<T: Real>(y: &DeformationField<T>, image_grid: &Grid3) -> Result<VectorField3<T>> {
    check_pair(y.grid(), image_grid)?;
    Ok(add_identity(interpolate_onto(&y.displacement(), image_grid)))
}

fn add_identity<T: Real>(u: VectorField3<T>) -> VectorField3<T> {
    let grid = *u.grid();
    let id = identity_components::<T>(&grid);
    let mut comps = u.into_components();
    for (c, i) in comps.iter_mut().zip(id) {
        c.iter_mut().zip(i).for_each(|(v, x)| *v += x);
    }
    VectorField3::from_raw(grid, comps)
}

/// Per-axis index ranges and weights for the gather transpose.
#[derive(Clone, Debug)]
pub struct GatherPlan<T = f64> {
    def_grid: Grid3,
    image_grid: Grid3,
    axes: [AxisGather<T>; 3],
}

/// For each coarse index `c` along one axis: the contiguous fine range
/// `start[c] .. start[c] + len(c)` and its weights
/// `weights[offset[c] .. offset[c + 1]]`.
#[derive(Clone, Debug)]
pub struct AxisGather<T> {
    start: Vec<usize>,
    offset: Vec<usize>,
    weights: Vec<T>,
}

impl<T: Real> AxisGather<T> {
    fn from_stencil(st: &AxisStencil, coarse_n: usize) -> Self {
        let mut per: Vec<Vec<(usize, f64)>> = vec![Vec::new(); coarse_n];
        for i in 0..st.lower.len() {
            per[st.lower[i]].push((i, st.lo_w[i]));
            if st.upper[i] != st.lower[i] {
                per[st.upper[i]].push((i, st.hi_w[i]));
            }
        }
        let mut start = Vec::with_capacity(coarse_n);
        let mut offset = Vec::with_capacity(coarse_n + 1);
        let mut weights = Vec::new();
        offset.push(0);
        for list in &mut per {
            // Entries arrive in increasing fine index; zero weights can only
            // appear at the ends of a range.
            let first = list.iter().position(|&(_, w)| w != 0.0).unwrap_or(list.len());
            let last = list.iter().rposition(|&(_, w)| w != 0.0).map_or(first, |p| p + 1);
            let kept = &list[first..last];
            debug_assert!(kept.windows(2).all(|p| p[1].0 == p[0].0 + 1));
            start.push(kept.first().map_or(0, |&(i, _)| i));
            weights.extend(kept.iter().map(|&(_, w)| T::lit(w)));
            offset.push(weights.len());
        }
        Self { start, offset, weights }
    }

    /// Fine index range start and weights contributing to coarse index `c`.
    pub fn range(&self, c: usize) -> (usize, &[T]) {
        (self.start[c], &self.weights[self.offset[c]..self.offset[c + 1]])
    }

    pub fn coarse_len(&self) -> usize {
        self.start.len()
    }

    pub fn all_weights(&self) -> &[T] {
        &self.weights
    }
}

impl<T: Real> GatherPlan<T> {
    pub fn def_grid(&self) -> &Grid3 {
        &self.def_grid
    }

    pub fn image_grid(&self) -> &Grid3 {
        &self.image_grid
    }

    pub fn axis(&self, d: usize) -> &AxisGather<T> {
        &self.axes[d]
    }
}

/// Precompute the gather ranges and weights for one grid pair.
pub fn build_gather_plan<T: Real>(def_grid: &Grid3, image_grid: &Grid3) -> Result<GatherPlan<T>> {
    check_pair(def_grid, image_grid)?;
    let st = stencils(def_grid, image_grid);
    let dd = def_grid.dims();
    let axes = [0, 1, 2].map(|d| AxisGather::from_stencil(&st[d], dd[d]));
    Ok(GatherPlan {
        def_grid: *def_grid,
        image_grid: *image_grid,
        axes,
    })
}

/// `P^T r` computed per deformation-grid point.
pub fn apply_pt_gather<T: Real>(r: &VectorField3<T>, plan: &GatherPlan<T>) -> Result<VectorField3<T>> {
    r.grid().require_equal(&plan.image_grid, "gather plan image grid")?;
    let comps = [0, 1, 2].map(|c| gather_component(r.component(c), plan));
    Ok(VectorField3::from_raw(plan.def_grid, comps))
}

fn gather_component<T: Real>(r: &[T], plan: &GatherPlan<T>) -> Vec<T> {
    let [dx, dy, _] = plan.def_grid.dims();
    let [mx, my, _] = plan.image_grid.dims();
    let [ax, ay, az] = &plan.axes;
    let mut out = vec![T::zero(); plan.def_grid.len()];
    out.par_chunks_mut(dx * dy).enumerate().for_each(|(c, slice)| {
        let (k0, wz) = az.range(c);
        for b in 0..dy {
            let (j0, wy) = ay.range(b);
            for a in 0..dx {
                let (i0, wx) = ax.range(a);
                // One running sum in ascending image index, matching the
                // order the scatter variants add in.
                let mut acc = T::zero();
                for (kk, &w3) in wz.iter().enumerate() {
                    for (jj, &w2) in wy.iter().enumerate() {
                        let w32 = w3 * w2;
                        let row = &r[mx * ((j0 + jj) + my * (k0 + kk)) + i0..];
                        for (ii, &w1) in wx.iter().enumerate() {
                            acc += w32 * w1 * row[ii];
                        }
                    }
                }
                slice[a + dx * b] = acc;
            }
        }
    });
    out
}

/// `P^T r` computed per image-grid point with atomic accumulation.
///
/// With one worker the additions happen in ascending image index and the
/// result equals the gather bit for bit; with more, the order of the atomic
/// adds varies and so do the last bits.
pub fn apply_pt_scatter_atomic<T: Real>(
    r: &VectorField3<T>,
    def_grid: &Grid3,
) -> Result<VectorField3<T>> {
    check_pair(def_grid, r.grid())?;
    let image_grid = *r.grid();
    let st = stencils(def_grid, &image_grid);
    let [mx, my, _] = image_grid.dims();
    let [dx, dy, _] = def_grid.dims();
    let cells: [Vec<T::Atomic>; 3] =
        [(); 3].map(|_| (0..def_grid.len()).map(|_| T::atomic_zero()).collect());

    (0..image_grid.len()).into_par_iter().with_min_len(256).for_each(|idx| {
        let i = idx % mx;
        let j = (idx / mx) % my;
        let k = idx / (mx * my);
        let xs = [(st[0].lower[i], st[0].lo_w[i]), (st[0].upper[i], st[0].hi_w[i])];
        let ys = [(st[1].lower[j], st[1].lo_w[j]), (st[1].upper[j], st[1].hi_w[j])];
        let zs = [(st[2].lower[k], st[2].lo_w[k]), (st[2].upper[k], st[2].hi_w[k])];
        let vals = [r.component(0)[idx], r.component(1)[idx], r.component(2)[idx]];
        for &(c, w3) in &zs {
            if w3 == 0.0 {
                continue;
            }
            for &(b, w2) in &ys {
                if w2 == 0.0 {
                    continue;
                }
                for &(a, w1) in &xs {
                    if w1 == 0.0 {
                        continue;
                    }
                    let w = T::lit(w3) * T::lit(w2) * T::lit(w1);
                    let target = a + dx * (b + dy * c);
                    for d in 0..3 {
                        T::atomic_add(&cells[d][target], w * vals[d]);
                    }
                }
            }
        }
    });

    let comps = cells.map(|cell| cell.into_iter().map(T::atomic_into).collect());
    Ok(VectorField3::from_raw(*def_grid, comps))
}

/// `P^T r` in two slab sweeps. Each image slice feeds the deformation slice
/// below it and the one above it; the first sweep adds every upper
/// contribution, the second every lower one, and within a sweep each
/// deformation slice has a single writer. Per output point the terms arrive
/// in ascending image index, so the result is bit-identical to the gather.
pub fn apply_pt_redblack<T: Real>(r: &VectorField3<T>, def_grid: &Grid3) -> Result<VectorField3<T>> {
    check_pair(def_grid, r.grid())?;
    let image_grid = *r.grid();
    let st = stencils(def_grid, &image_grid);
    let dz = def_grid.dims()[2];
    let slab = def_grid.slice_len();

    // Image slices grouped by the lower deformation slice they interpolate from.
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); dz.saturating_sub(1).max(1)];
    for k in 0..image_grid.dims()[2] {
        groups[st[2].lower[k]].push(k);
    }

    let comps = [0, 1, 2].map(|c| {
        let src = r.component(c);
        let mut out = vec![T::zero(); def_grid.len()];
        out.par_chunks_mut(slab).enumerate().skip(1).for_each(|(s, slice)| {
            accumulate_slice(src, &image_grid, def_grid, &st, &groups[s - 1], true, slice);
        });
        out.par_chunks_mut(slab).enumerate().for_each(|(s, slice)| {
            if s < groups.len() {
                accumulate_slice(src, &image_grid, def_grid, &st, &groups[s], false, slice);
            }
        });
        out
    });
    Ok(VectorField3::from_raw(*def_grid, comps))
}

/// Add the contributions of image slices `ks` into one deformation slice,
/// using their upper or lower z weight.
fn accumulate_slice<T: Real>(
    src: &[T],
    image_grid: &Grid3,
    def_grid: &Grid3,
    st: &[AxisStencil; 3],
    ks: &[usize],
    upper: bool,
    slice: &mut [T],
) {
    let [mx, my, _] = image_grid.dims();
    let [dx, _, _] = def_grid.dims();
    for &k in ks {
        let w3 = if upper { st[2].hi_w[k] } else { st[2].lo_w[k] };
        if w3 == 0.0 {
            continue;
        }
        for j in 0..my {
            let ys = [(st[1].lower[j], st[1].lo_w[j]), (st[1].upper[j], st[1].hi_w[j])];
            for i in 0..mx {
                let v = src[i + mx * (j + my * k)];
                let xs = [(st[0].lower[i], st[0].lo_w[i]), (st[0].upper[i], st[0].hi_w[i])];
                for &(b, w2) in &ys {
                    if w2 == 0.0 {
                        continue;
                    }
                    for &(a, w1) in &xs {
                        if w1 == 0.0 {
                            continue;
                        }
                        let w = T::lit(w3) * T::lit(w2) * T::lit(w1);
                        slice[a + dx * b] += w * v;
                    }
                }
            }
        }
    }
}

/// `P` and `P^T` for one level, with the gather plan built once.
#[derive(Clone, Debug)]
pub struct GridTransfer<T = f64> {
    plan: GatherPlan<T>,
    variant: PtVariant,
}

impl<T: Real> GridTransfer<T> {
    pub fn new(def_grid: &Grid3, image_grid: &Grid3, variant: PtVariant) -> Result<Self> {
        Ok(Self {
            plan: build_gather_plan(def_grid, image_grid)?,
            variant,
        })
    }

    pub fn def_grid(&self) -> &Grid3 {
        &self.plan.def_grid
    }

    pub fn image_grid(&self) -> &Grid3 {
        &self.plan.image_grid
    }

    pub fn variant(&self) -> PtVariant {
        self.variant
    }

    pub fn plan(&self) -> &GatherPlan<T> {
        &self.plan
    }

    pub fn apply_p(&self, y: &DeformationField<T>) -> Result<VectorField3<T>> {
        y.grid().require_equal(&self.plan.def_grid, "deformation grid")?;
        Ok(interpolate_onto(y.field(), &self.plan.image_grid))
    }

    /// See [`deformation_to_image_grid`].
    pub fn positions(&self, y: &DeformationField<T>) -> Result<VectorField3<T>> {
        y.grid().require_equal(&self.plan.def_grid, "deformation grid")?;
        Ok(add_identity(interpolate_onto(&y.displacement(), &self.plan.image_grid)))
    }

    pub fn apply_pt(&self, r: &VectorField3<T>) -> Result<VectorField3<T>> {
        self.apply_pt_with(r, self.variant)
    }

    pub fn apply_pt_with(&self, r: &VectorField3<T>, variant: PtVariant) -> Result<VectorField3<T>> {
        match variant {
            PtVariant::Gather => apply_pt_gather(r, &self.plan),
            PtVariant::ScatterAtomic => apply_pt_scatter_atomic(r, &self.plan.def_grid),
            PtVariant::RedBlack => apply_pt_redblack(r, &self.plan.def_grid),
        }
    }
}
