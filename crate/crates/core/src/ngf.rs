//! Normalized gradient fields distance.
//!
//! For image-grid gradients `a = grad T_i` (warped template) and
//! `b = grad R_i` (reference), each voxel contributes
//!
//! ```text
//! 1 - r_i^2,   r_i = (<a, b> + tau*rho) / (|a|_tau * |b|_rho),
//! |v|_eps = sqrt(<v, v> + eps^2)
//! ```
//!
//! and `D = (h/2) * sum_i (1 - r_i^2)` with `h` the image voxel volume.
//! The gradient with respect to the sampling positions is assembled
//! matrix-free: closed-form per-voxel derivative with respect to `a`, then
//! the transpose of the finite-difference stencil, then the transpose of the
//! interpolation Jacobian.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Image3, VectorField3};
use crate::parallel::det_sum;
use crate::real::Real;
use crate::warp::{image_gradient, image_gradient_apply_transpose, warp_jacobian_apply_transpose, WarpResult};

/// Edge parameters of the template (`tau`) and reference (`rho`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NgfParams {
    pub tau: f64,
    pub rho: f64,
}

impl Default for NgfParams {
    fn default() -> Self {
        Self { tau: 10.0, rho: 10.0 }
    }
}

impl NgfParams {
    pub fn new(tau: f64, rho: f64) -> Result<Self> {
        let p = Self { tau, rho };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0 && self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tau and rho must be finite and > 0 (tau={}, rho={})",
                self.tau, self.rho
            )));
        }
        Ok(())
    }
}

/// Reference gradients and their smoothed norms, computed once per level.
#[derive(Clone, Debug)]
pub struct ReferenceTerms<T = f64> {
    pub grad: VectorField3<T>,
    pub norm: Vec<T>,
}

pub fn precompute_reference_terms<T: Real>(reference: &Image3<T>, params: &NgfParams) -> ReferenceTerms<T> {
    let grad = image_gradient(reference);
    let rho2 = T::lit(params.rho * params.rho);
    let norm = (0..reference.grid().len())
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            let g = grad.at(i);
            (g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + rho2).sqrt()
        })
        .collect();
    ReferenceTerms { grad, norm }
}

#[inline]
fn alignment<T: Real>(a: [T; 3], b: [T; 3], norm_b: T, tau: T, tau_rho: T) -> (T, T) {
    let norm_a = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + tau * tau).sqrt();
    let r = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + tau_rho) / (norm_a * norm_b);
    (r, norm_a)
}

/// `1 - r^2` from squared norms, so a voxel whose gradients match exactly
/// (with `tau == rho`) gives exactly zero.
#[inline]
fn misalignment<T: Real>(a: [T; 3], b: [T; 3], c: &Constants<T>) -> T {
    let ab = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + c.tau_rho;
    let aa = a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + c.tau2;
    let bb = b[0] * b[0] + b[1] * b[1] + b[2] * b[2] + c.rho2;
    T::one() - ab * ab / (aa * bb)
}

struct Constants<T> {
    tau2: T,
    rho2: T,
    tau_rho: T,
}

impl<T: Real> Constants<T> {
    fn new(p: &NgfParams) -> Self {
        Self {
            tau2: T::lit(p.tau * p.tau),
            rho2: T::lit(p.rho * p.rho),
            tau_rho: T::lit(p.tau * p.rho),
        }
    }
}

fn check_sizes<T: Real>(warped: &WarpResult<T>, reference: &ReferenceTerms<T>) {
    assert_eq!(
        warped.warped.grid(),
        reference.grad.grid(),
        "warped image and reference terms must share the image grid"
    );
}

/// Per-voxel terms `1 - r_i^2` (without the `h/2` factor).
pub fn ngf_voxel_terms<T: Real>(warped: &WarpResult<T>, reference: &ReferenceTerms<T>, params: &NgfParams) -> Vec<T> {
    check_sizes(warped, reference);
    let gt = image_gradient(&warped.warped);
    let c = Constants::new(params);
    (0..gt.grid().len())
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| misalignment(gt.at(i), reference.grad.at(i), &c))
        .collect()
}

/// NGF distance value.
pub fn ngf_value<T: Real>(warped: &WarpResult<T>, reference: &ReferenceTerms<T>, params: &NgfParams, h_bar: f64) -> T {
    let gt = image_gradient(&warped.warped);
    value_from_gradient(&gt, reference, params, h_bar)
}

fn value_from_gradient<T: Real>(gt: &VectorField3<T>, reference: &ReferenceTerms<T>, params: &NgfParams, h_bar: f64) -> T {
    let c = Constants::new(params);
    let sum = det_sum(gt.grid().len(), |i| misalignment(gt.at(i), reference.grad.at(i), &c));
    T::lit(0.5 * h_bar) * sum
}

/// NGF value together with `dD/d y_hat` on the image grid.
pub fn ngf_value_and_gradient<T: Real>(
    warped: &WarpResult<T>,
    reference: &ReferenceTerms<T>,
    template: &Image3<T>,
    yhat: &VectorField3<T>,
    params: &NgfParams,
    h_bar: f64,
) -> (T, VectorField3<T>) {
    check_sizes(warped, reference);
    let grid = *warped.warped.grid();
    let gt = image_gradient(&warped.warped);
    let value = value_from_gradient(&gt, reference, params, h_bar);

    // dD/da_i = -h * r * (b / (|a| |b|) - r * a / |a|^2)
    let tau = T::lit(params.tau);
    let tau_rho = T::lit(params.tau * params.rho);
    let neg_h = T::lit(-h_bar);
    let per: Vec<[T; 3]> = (0..grid.len())
        .into_par_iter()
        .with_min_len(1024)
        .map(|i| {
            let a = gt.at(i);
            let b = reference.grad.at(i);
            let nb = reference.norm[i];
            let (r, na) = alignment(a, b, nb, tau, tau_rho);
            let inv_ab = T::one() / (na * nb);
            let r_over_a2 = r / (na * na);
            [0, 1, 2].map(|d| neg_h * r * (b[d] * inv_ab - r_over_a2 * a[d]))
        })
        .collect();
    let da = VectorField3::from_raw(grid, [0, 1, 2].map(|d| per.iter().map(|v| v[d]).collect()));

    let d_warped = image_gradient_apply_transpose(&da, &grid);
    let grad = warp_jacobian_apply_transpose(template, yhat, &d_warped);
    (value, grad)
}

/// `dD/d y_hat` alone.
pub fn ngf_gradient_wrt_yhat<T: Real>(
    warped: &WarpResult<T>,
    reference: &ReferenceTerms<T>,
    template: &Image3<T>,
    yhat: &VectorField3<T>,
    params: &NgfParams,
    h_bar: f64,
) -> VectorField3<T> {
    ngf_value_and_gradient(warped, reference, template, yhat, params, h_bar).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DeformationField, Grid3};
    use crate::warp::warp_image;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(g: Grid3, rng: &mut ChaCha8Rng) -> Image3<f64> {
        Image3::new(g, (0..g.len()).map(|_| rng.gen_range(0.0..100.0)).collect()).unwrap()
    }

    #[test]
    fn params_validated() {
        assert!(NgfParams::new(0.0, 1.0).is_err());
        assert!(NgfParams::new(1.0, -1.0).is_err());
        assert!(NgfParams::new(0.1, 0.1).is_ok());
    }

    #[test]
    fn reference_terms_examples() {
        let g = Grid3::unit([4, 4, 4]).unwrap();
        let p = NgfParams::new(1.0, 0.1).unwrap();
        let c = precompute_reference_terms(&Image3::constant(g, 3.0f64), &p);
        assert!(c.norm.iter().all(|&n| (n - 0.1).abs() < 1e-15));
        assert_eq!(c.grad, VectorField3::zeros(g));

        let p = NgfParams::new(1.0, 1.0).unwrap();
        let ramp = precompute_reference_terms(&Image3::<f64>::from_fn(g, |x| x[0]), &p);
        assert!(ramp.norm.iter().all(|&n| (n - 2f64.sqrt()).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = NgfParams::new(2.0, 0.7).unwrap();
        let t = precompute_reference_terms(&random_image(g, &mut rng), &p);
        for i in 0..g.len() {
            let gr = t.grad.at(i);
            let g2: f64 = gr.iter().map(|v| v * v).sum();
            let rel = (t.norm[i] * t.norm[i] - g2 - 0.49) / (g2 + 1.0);
            assert!(rel.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_images_have_zero_distance() {
        let g = Grid3::unit([5, 5, 5]).unwrap();
        let p = NgfParams::new(0.3, 0.8).unwrap();
        let r = precompute_reference_terms(&Image3::constant(g, 1.0f64), &p);
        let t = Image3::constant(g, 9.0f64);
        let w = warp_image(&t, DeformationField::identity(g).field());
        assert!(ngf_value(&w, &r, &p, 1.0).abs() < 1e-12);
    }

    #[test]
    fn matched_images_are_stationary() {
        let g = Grid3::new([6, 6, 6], [1.0, 1.5, 0.8], [0.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(g, &mut rng);
        let p = NgfParams::new(5.0, 5.0).unwrap();
        let r = precompute_reference_terms(&img, &p);
        let yh = DeformationField::identity(g).into_field();
        let w = warp_image(&img, &yh);
        let (v, grad) = ngf_value_and_gradient(&w, &r, &img, &yh, &p, g.voxel_volume());
        assert!(v.abs() < 1e-12);
        let gmax = grad.to_flat().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gmax <= 1e-10, "{gmax}");
    }

    #[test]
    fn single_voxel_term() {
        // Voxel with grad T = (1,0,0), grad R = (0,1,0), tau = rho = 0.1.
        let tau = 0.1;
        let norm = (1.0f64 + tau * tau).sqrt();
        let (r, _) = alignment([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], norm, tau, tau * tau);
        let term = 1.0 - r * r;
        assert!((term - (1.0 - (0.01f64 / 1.01).powi(2))).abs() < 1e-15);
        assert!((term - 0.99990197).abs() < 1e-8);
    }

    #[test]
    fn constant_template_has_zero_gradient() {
        let g = Grid3::unit([5, 4, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = NgfParams::default();
        let r = precompute_reference_terms(&random_image(g, &mut rng), &p);
        let t = Image3::constant(g, 2.0f64);
        let yh = DeformationField::<f64>::from_displacement_fn(g, |x| [-0.05 * (x[0] - 2.0), 0.0, -0.04 * (x[2] - 2.5) + 0.01 * x[1]]).into_field();
        let w = warp_image(&t, &yh);
        let grad = ngf_gradient_wrt_yhat(&w, &r, &t, &yh, &p, 1.0);
        assert!(grad.to_flat().iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = Grid3::unit([6, 6, 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = NgfParams::new(8.0, 6.0).unwrap();
        let reference = random_image(g, &mut rng);
        let template = random_image(g, &mut rng);
        let r = precompute_reference_terms(&reference, &p);
        let yh = DeformationField::<f64>::from_displacement_fn(g, |x| {
            [0.3 * (x[1] * 0.7).sin() + 0.1, 0.2 * (x[2] * 0.5).cos(), 0.15 * (x[0] * 0.9).sin() - 0.05]
        })
        .into_field();
        let h_bar = g.voxel_volume();
        let value_at = |f: &VectorField3<f64>| ngf_value(&warp_image(&template, f), &r, &p, h_bar);
        let w = warp_image(&template, &yh);
        let grad = ngf_gradient_wrt_yhat(&w, &r, &template, &yh, &p, h_bar);
        let h = 1e-5;
        for _ in 0..30 {
            let idx = rng.gen_range(0..g.len());
            if !w.inside[idx] {
                continue;
            }
            for d in 0..3 {
                let mut c = yh.components().clone();
                c[d][idx] += h;
                let fp = value_at(&VectorField3::new(g, c.clone()).unwrap());
                c[d][idx] -= 2.0 * h;
                let fm = value_at(&VectorField3::new(g, c).unwrap());
                let fd = (fp - fm) / (2.0 * h);
                let an = grad.component(d)[idx];
                let scale = an.abs().max(fd.abs()).max(1e-6);
                assert!((fd - an).abs() / scale <= 1e-6, "idx {idx} d {d}: fd {fd} an {an}");
            }
        }
    }
}
