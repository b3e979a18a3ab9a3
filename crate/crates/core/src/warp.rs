//! Template sampling at deformed positions and image-grid derivatives.
//!
//! The template is padded with one layer of zeros, so the interpolant
//! fades to zero within a voxel outside the hull of its cell centers and
//! stays continuous there.
//! Gradients of warped images are finite differences on the image grid,
//! and every linear piece here has an exact matrix-free transpose.

use rayon::prelude::*;

use crate::geometry::{Grid3, Image3, VectorField3};
use crate::real::Real;
use crate::stencil::{apply_axis, apply_axis_transpose, gradient_row};

/// Template sampled at `y_hat`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpResult<T = f64> {
    pub warped: Image3<T>,
    /// False where the sample position fell outside the template's
    /// cell-center hull.
    pub inside: Vec<bool>,
}

impl<T: Real> WarpResult<T> {
    pub fn inside_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

/// How samples outside the source hull are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Zero,
    Clamp,
}

/// Source grid constants cast to `T`, hoisted out of the per-voxel loops.
struct Sampler<'a, T> {
    values: &'a [T],
    dims: [usize; 3],
    origin: [T; 3],
    inv_h: [T; 3],
}

impl<'a, T: Real> Sampler<'a, T> {
    fn new(img: &'a Image3<T>) -> Self {
        let g = img.grid();
        Self {
            values: img.values(),
            dims: g.dims(),
            origin: g.origin().map(T::lit),
            inv_h: g.spacing().map(|h| T::lit(1.0 / h)),
        }
    }

    /// Lower cell index and fraction along one axis. With
    /// [`Boundary::Zero`] the image is padded by one layer of zeros, so the
    /// lower index may be -1 or `n - 1`; `None` beyond the padding.
    #[inline]
    fn locate(&self, q: T, d: usize, boundary: Boundary) -> Option<(isize, T)> {
        let n = self.dims[d];
        if n == 1 {
            // A single sample: the hull is its cell.
            return match boundary {
                Boundary::Zero if q.abs() > T::lit(0.5) => None,
                _ => Some((0, T::zero())),
            };
        }
        // Positions computed as origin + i*h and mapped back are off by a
        // few ulps; snap them so that sampling at cell centers is exact.
        let r = q.round();
        let tol = T::lit(16.0) * T::epsilon() * r.abs().max(T::one());
        let mut q = if (q - r).abs() <= tol { r } else { q };
        let top = T::lit((n - 1) as f64);
        if q >= T::zero() && q <= top {
            let l = q.floor().to_usize().unwrap_or(0).min(n - 2);
            return Some((l as isize, q - T::lit(l as f64)));
        }
        match boundary {
            Boundary::Zero => {
                if q <= -T::one() || q >= top + T::one() {
                    return None;
                }
                let l = if q < T::zero() { -1 } else { n as isize - 1 };
                Some((l, q - T::lit(l as f64)))
            }
            Boundary::Clamp => {
                q = q.max(T::zero()).min(top);
                let l = q.floor().to_usize().unwrap_or(0).min(n - 2);
                Some((l as isize, q - T::lit(l as f64)))
            }
        }
    }

    /// Whether a continuous index lies in the cell-center hull.
    #[inline]
    fn in_hull(&self, p: [T; 3]) -> bool {
        (0..3).all(|d| {
            let q = (p[d] - self.origin[d]) * self.inv_h[d];
            let n = self.dims[d];
            if n == 1 {
                return q.abs() <= T::lit(0.5);
            }
            let r = q.round();
            let tol = T::lit(16.0) * T::epsilon() * r.abs().max(T::one());
            let q = if (q - r).abs() <= tol { r } else { q };
            q >= T::zero() && q <= T::lit((n - 1) as f64)
        })
    }

    /// Value and spatial gradient (per mm) of the trilinear interpolant at
    /// world position `p`.
    #[inline]
    fn sample(&self, p: [T; 3], boundary: Boundary) -> Option<(T, [T; 3])> {
        let mut cell = [(0isize, T::zero()); 3];
        for d in 0..3 {
            let q = (p[d] - self.origin[d]) * self.inv_h[d];
            cell[d] = self.locate(q, d, boundary)?;
        }
        let [mx, my, mz] = self.dims;
        let [(lx, fx), (ly, fy), (lz, fz)] = cell;
        // Upper neighbor; a single-sample axis reuses index 0.
        let up = |l: isize, m: usize| if m == 1 { 0 } else { l + 1 };
        let (ux, uy, uz) = (up(lx, mx), up(ly, my), up(lz, mz));
        let v = |i: isize, j: isize, k: isize| {
            if i < 0 || j < 0 || k < 0 || i >= mx as isize || j >= my as isize || k >= mz as isize {
                T::zero()
            } else {
                self.values[i as usize + mx * (j as usize + my * k as usize)]
            }
        };
        let one = T::one();
        let (gx, gy, gz) = (one - fx, one - fy, one - fz);
        let c00 = gx * v(lx, ly, lz) + fx * v(ux, ly, lz);
        let c10 = gx * v(lx, uy, lz) + fx * v(ux, uy, lz);
        let c01 = gx * v(lx, ly, uz) + fx * v(ux, ly, uz);
        let c11 = gx * v(lx, uy, uz) + fx * v(ux, uy, uz);
        let c0 = gy * c00 + fy * c10;
        let c1 = gy * c01 + fy * c11;
        let value = gz * c0 + fz * c1;

        let dx = |j: isize, k: isize| v(ux, j, k) - v(lx, j, k);
        let ddx = gz * (gy * dx(ly, lz) + fy * dx(uy, lz)) + fz * (gy * dx(ly, uz) + fy * dx(uy, uz));
        let ddy = gz * (c10 - c00) + fz * (c11 - c01);
        let ddz = c1 - c0;
        let grad = [
            if mx > 1 { ddx * self.inv_h[0] } else { T::zero() },
            if my > 1 { ddy * self.inv_h[1] } else { T::zero() },
            if mz > 1 { ddz * self.inv_h[2] } else { T::zero() },
        ];
        Some((value, grad))
    }
}

/// Sample `template` at every position of `yhat` (trilinear, zero padded).
pub fn warp_image<T: Real>(template: &Image3<T>, yhat: &VectorField3<T>) -> WarpResult<T> {
    let s = Sampler::new(template);
    let (values, inside): (Vec<T>, Vec<bool>) = (0..yhat.grid().len())
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            let p = yhat.at(i);
            match s.sample(p, Boundary::Zero) {
                Some((v, _)) => (v, s.in_hull(p)),
                None => (T::zero(), false),
            }
        })
        .unzip();
    WarpResult {
        warped: Image3::from_raw(*yhat.grid(), values),
        inside,
    }
}

/// `(d T(y_hat) / d y_hat)^T w`: per voxel, `w_i` times the gradient of the
/// template interpolant at `y_hat(i)`; zero outside the template.
pub fn warp_jacobian_apply_transpose<T: Real>(
    template: &Image3<T>,
    yhat: &VectorField3<T>,
    w: &[T],
) -> VectorField3<T> {
    let s = Sampler::new(template);
    let n = yhat.grid().len();
    assert_eq!(w.len(), n, "weight length must match the image grid");
    let per: Vec<[T; 3]> = (0..n)
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            if w[i] == T::zero() {
                return [T::zero(); 3];
            }
            match s.sample(yhat.at(i), Boundary::Zero) {
                Some((_, g)) => g.map(|gd| w[i] * gd),
                None => [T::zero(); 3],
            }
        })
        .collect();
    let comps = [0, 1, 2].map(|d| per.iter().map(|g| g[d]).collect());
    VectorField3::from_raw(*yhat.grid(), comps)
}

/// Resample `src` onto `target` (trilinear, clamp to edge).
pub fn resample<T: Real>(src: &Image3<T>, target: &Grid3) -> Image3<T> {
    let s = Sampler::new(src);
    let values = (0..target.len())
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            let p = target.center(target.delinearize(i)).map(T::lit);
            s.sample(p, Boundary::Clamp).map_or(T::zero(), |(v, _)| v)
        })
        .collect();
    Image3::from_raw(*target, values)
}

/// Trilinear value of `img` at world position `p`, clamped to the edge.
pub fn sample_clamped<T: Real>(img: &Image3<T>, p: [T; 3]) -> T {
    Sampler::new(img).sample(p, Boundary::Clamp).map_or(T::zero(), |(v, _)| v)
}

/// Finite-difference gradient: central inside, one-sided at faces, zero
/// along axes of length 1.
pub fn image_gradient<T: Real>(img: &Image3<T>) -> VectorField3<T> {
    let g = img.grid();
    let h = g.spacing();
    let comps = [0, 1, 2].map(|d| apply_axis(img.values(), g, d, gradient_row, 1.0 / h[d]));
    VectorField3::from_raw(*g, comps)
}

/// `G^T w` for the operator of [`image_gradient`], summed over components.
pub fn image_gradient_apply_transpose<T: Real>(w: &VectorField3<T>, grid: &Grid3) -> Vec<T> {
    let h = grid.spacing();
    let mut out = apply_axis_transpose(w.component(0), grid, 0, gradient_row, 1.0 / h[0]);
    for d in 1..3 {
        let part = apply_axis_transpose(w.component(d), grid, d, gradient_row, 1.0 / h[d]);
        out.par_iter_mut().zip(part).for_each(|(o, p)| *o += p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DeformationField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_positions(g: Grid3) -> VectorField3<f64> {
        DeformationField::<f64>::identity(g).into_field()
    }

    #[test]
    fn identity_warp_is_exact() {
        let g = Grid3::new([5, 4, 3], [0.3, 0.7, 1.9], [0.1, -2.2, 5.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Image3::new(g, (0..g.len()).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let w = warp_image(&t, &identity_positions(g));
        assert_eq!(w.warped, t);
        assert!(w.inside.iter().all(|&b| b));
    }

    #[test]
    fn integer_shift_moves_ramp() {
        let g = Grid3::unit([6, 3, 3]).unwrap();
        let t = Image3::<f64>::from_fn(g, |p| 2.0 * p[0] + 1.0);
        let y = DeformationField::<f64>::from_displacement_fn(g, |_| [1.0, 0.0, 0.0]);
        let w = warp_image(&t, y.field());
        for idx in 0..g.len() {
            let [i, j, k] = g.delinearize(idx);
            if i + 1 < 6 {
                assert!(w.inside[idx]);
                assert_eq!(w.warped.values()[idx], t.get([i + 1, j, k]));
            } else {
                assert!(!w.inside[idx]);
                assert_eq!(w.warped.values()[idx], 0.0);
            }
        }
    }

    #[test]
    fn exact_on_trilinear_fields() {
        let g = Grid3::new([5, 6, 4], [1.0, 0.5, 2.0], [0.0, 0.0, 0.0]).unwrap();
        let f = |p: [f64; 3]| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[2] + 0.3 * p[0] * p[1] - 0.2 * p[1] * p[2] + 0.1 * p[0] * p[1] * p[2];
        let t = Image3::<f64>::from_fn(g, f);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hi = [4.0, 2.5, 6.0];
        let comps = [0, 1, 2].map(|d| (0..g.len()).map(|_| rng.gen_range(0.0..hi[d])).collect());
        let yh = VectorField3::new(g, comps).unwrap();
        let w = warp_image(&t, &yh);
        for i in 0..g.len() {
            assert!(w.inside[i]);
            assert!((w.warped.values()[i] - f(yh.at(i))).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_of_ramp() {
        let g = Grid3::unit([6, 5, 4]).unwrap();
        let t = Image3::<f64>::from_fn(g, |p| 3.0 * p[0]);
        let yh = DeformationField::<f64>::from_displacement_fn(g, |_| [0.25, 0.1, 0.0]);
        let w: Vec<f64> = (0..g.len()).map(|i| 1.0 + i as f64 * 0.01).collect();
        let j = warp_jacobian_apply_transpose(&t, yh.field(), &w);
        for idx in 0..g.len() {
            let [i, jj, _] = g.delinearize(idx);
            if i < 5 && jj < 4 {
                assert!((j.component(0)[idx] - 3.0 * w[idx]).abs() < 1e-12);
                assert!(j.component(1)[idx].abs() < 1e-12);
                assert!(j.component(2)[idx].abs() < 1e-12);
            }
        }
        let zero = warp_jacobian_apply_transpose(&t, yh.field(), &vec![0.0; g.len()]);
        assert_eq!(zero, VectorField3::zeros(g));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let g = Grid3::new([7, 6, 5], [1.0, 1.2, 0.8], [0.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = Image3::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..10.0)).collect()).unwrap();
        let yh = DeformationField::<f64>::from_displacement_fn(g, |p| {
            [0.3 * (0.4 * p[1]).sin(), 0.2 * (0.3 * p[2]).cos(), 0.25 * (0.5 * p[0]).sin()]
        })
        .into_field();
        let w: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let jt = warp_jacobian_apply_transpose(&t, &yh, &w);
        let sp = g.spacing();
        let mut checked = 0;
        while checked < 20 {
            let idx = rng.gen_range(0..g.len());
            let base = warp_image(&t, &yh);
            // Stay away from the hull and from cell faces, where the
            // interpolant jumps or has a kink.
            let q = g.index_of_world(yh.at(idx));
            let dims = g.dims();
            let clear = (0..3).all(|d| {
                let f = q[d] - q[d].floor();
                q[d] > 0.01 && q[d] < dims[d] as f64 - 1.01 && f > 0.01 && f < 0.99
            });
            if !base.inside[idx] || !clear {
                continue;
            }
            for d in 0..3 {
                let h = 1e-4 * sp[d];
                let mut comps = yh.components().clone();
                comps[d][idx] += h;
                let plus = warp_image(&t, &VectorField3::new(g, comps.clone()).unwrap());
                comps[d][idx] -= 2.0 * h;
                let minus = warp_image(&t, &VectorField3::new(g, comps).unwrap());
                let fd = w[idx] * (plus.warped.values()[idx] - minus.warped.values()[idx]) / (2.0 * h);
                let an = jt.component(d)[idx];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "d={d} fd={fd} an={an}");
            }
            checked += 1;
        }
    }

    #[test]
    fn gradient_examples() {
        let g = Grid3::unit([4, 4, 4]).unwrap();
        let c = image_gradient(&Image3::constant(g, 7.0f64));
        assert_eq!(c, VectorField3::zeros(g));

        let g = Grid3::new([5, 3, 4], [0.5, 1.0, 2.0], [1.0, 0.0, 0.0]).unwrap();
        let ramp = image_gradient(&Image3::<f64>::from_fn(g, |p| 3.0 * p[0]));
        for i in 0..g.len() {
            assert!((ramp.component(0)[i] - 3.0).abs() < 1e-12);
            assert_eq!(ramp.component(1)[i], 0.0);
            assert_eq!(ramp.component(2)[i], 0.0);
        }

        // x^2 on 5 points: interior 2x, faces one-sided.
        let g = Grid3::unit([5, 1, 1]).unwrap();
        let q = image_gradient(&Image3::<f64>::from_fn(g, |p| p[0] * p[0]));
        assert_eq!(q.component(0), &[1.0, 2.0, 4.0, 6.0, 7.0]);
        assert!(q.component(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for dims in [[4, 4, 4], [1, 5, 3], [2, 2, 7], [6, 1, 1]] {
            let g = Grid3::new(dims, [0.7, 1.3, 0.9], [0.0; 3]).unwrap();
            let v = Image3::new(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let comps = [(); 3].map(|_| (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let w = VectorField3::new(g, comps).unwrap();
            let gv = image_gradient(&v);
            let lhs: f64 = (0..3)
                .map(|d| gv.component(d).iter().zip(w.component(d)).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let gtw = image_gradient_apply_transpose(&w, &g);
            let rhs: f64 = v.values().iter().zip(&gtw).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + 1.0));
        }
    }

    #[test]
    fn gradient_transpose_matches_dense_matrix() {
        let g = Grid3::new([4, 4, 4], [1.0, 0.5, 2.0], [0.0; 3]).unwrap();
        let n = g.len();
        // Dense G (3n x n) built column by column from unit impulses.
        let mut dense = vec![vec![0.0; n]; 3 * n];
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            let ge = image_gradient(&Image3::new(g, e).unwrap());
            for d in 0..3 {
                for row in 0..n {
                    dense[d * n + row][col] = ge.component(d)[row];
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let comps = [(); 3].map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
        let w = VectorField3::new(g, comps).unwrap();
        let got = image_gradient_apply_transpose(&w, &g);
        let flat = w.to_flat();
        for col in 0..n {
            let want: f64 = (0..3 * n).map(|r| dense[r][col] * flat[r]).sum();
            assert!((got[col] - want).abs() <= 1e-13);
        }
        let zero = image_gradient_apply_transpose(&VectorField3::<f64>::zeros(g), &g);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resample_own_grid_and_constants() {
        let g = Grid3::new([4, 5, 3], [1.0, 2.0, 0.5], [3.0, 0.0, -1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let img = Image3::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        assert_eq!(resample(&img, &g), img);
        let other = Grid3::covering([7, 3, 9], [0.0; 3], [20.0, 5.0, 3.0]).unwrap();
        let c = resample(&Image3::constant(g, 4.5f64), &other);
        assert!(c.values().iter().all(|&v| (v - 4.5).abs() < 1e-14));
    }
}
