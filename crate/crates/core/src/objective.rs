//! `J(y) = D(R, T(P y)) + alpha * S(y)` on one level.
//!
//! The distance is evaluated in three steps: transfer `y` to the image grid,
//! evaluate NGF and its gradient there, and bring the gradient back with
//! `P^T`.

use crate::curvature::{curvature_gradient, curvature_value, CurvatureParams};
use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Grid3, Image3, VectorField3};
use crate::lbfgs::Evaluation;
use crate::ngf::{ngf_value_and_gradient, precompute_reference_terms, NgfParams, ReferenceTerms};
use crate::real::Real;
use crate::transfer::{GridTransfer, PtVariant};
use crate::warp::warp_image;

/// Everything needed to evaluate the objective on one level.
#[derive(Clone, Debug)]
pub struct LevelProblem<T = f64> {
    reference: Image3<T>,
    template: Image3<T>,
    reference_terms: ReferenceTerms<T>,
    transfer: GridTransfer<T>,
    ngf: NgfParams,
    curvature: CurvatureParams,
}

/// Objective value, its parts, and the flat (component-major) gradient.
#[derive(Clone, Debug)]
pub struct ObjectiveValue<T> {
    pub j: T,
    pub d: T,
    pub s: T,
    pub gradient: Vec<T>,
}

impl<T: Real> LevelProblem<T> {
    pub fn new(
        reference: Image3<T>,
        template: Image3<T>,
        def_grid: Grid3,
        ngf: NgfParams,
        curvature: CurvatureParams,
        variant: PtVariant,
    ) -> Result<Self> {
        ngf.validate()?;
        reference
            .grid()
            .require_equal(template.grid(), "reference and template grids (resample the template first)")?;
        let transfer = GridTransfer::new(&def_grid, reference.grid(), variant)?;
        let reference_terms = precompute_reference_terms(&reference, &ngf);
        Ok(Self {
            reference,
            template,
            reference_terms,
            transfer,
            ngf,
            curvature,
        })
    }

    pub fn image_grid(&self) -> &Grid3 {
        self.reference.grid()
    }

    pub fn def_grid(&self) -> &Grid3 {
        self.transfer.def_grid()
    }

    pub fn transfer(&self) -> &GridTransfer<T> {
        &self.transfer
    }

    pub fn reference(&self) -> &Image3<T> {
        &self.reference
    }

    pub fn template(&self) -> &Image3<T> {
        &self.template
    }

    pub fn ngf(&self) -> &NgfParams {
        &self.ngf
    }

    pub fn alpha(&self) -> f64 {
        self.curvature.alpha
    }

    fn check(&self, y: &DeformationField<T>) -> Result<()> {
        y.grid().require_equal(self.def_grid(), "deformation grid of the level")
    }

    /// NGF value and its gradient with respect to the deformation-grid variables.
    pub fn distance_and_gradient(&self, y: &DeformationField<T>) -> Result<(T, VectorField3<T>)> {
        self.distance_and_gradient_with(y, self.transfer.variant())
    }

    pub fn distance_and_gradient_with(
        &self,
        y: &DeformationField<T>,
        variant: PtVariant,
    ) -> Result<(T, VectorField3<T>)> {
        self.check(y)?;
        let yhat = self.transfer.positions(y)?;
        let warped = warp_image(&self.template, &yhat);
        let (d, grad_hat) = ngf_value_and_gradient(
            &warped,
            &self.reference_terms,
            &self.template,
            &yhat,
            &self.ngf,
            self.image_grid().voxel_volume(),
        );
        let grad = self.transfer.apply_pt_with(&grad_hat, variant)?;
        Ok((d, grad))
    }

    pub fn distance(&self, y: &DeformationField<T>) -> Result<T> {
        self.check(y)?;
        let yhat = self.transfer.positions(y)?;
        let warped = warp_image(&self.template, &yhat);
        Ok(crate::ngf::ngf_value(
            &warped,
            &self.reference_terms,
            &self.ngf,
            self.image_grid().voxel_volume(),
        ))
    }

    pub fn evaluate(&self, y: &DeformationField<T>) -> Result<ObjectiveValue<T>> {
        let (d, grad_d) = self.distance_and_gradient(y)?;
        let s = curvature_value(y);
        let grad_s = curvature_gradient(y);
        let alpha = T::lit(self.curvature.alpha);
        let mut gradient = grad_d.to_flat();
        for (g, gs) in gradient.iter_mut().zip(grad_s.to_flat()) {
            *g += alpha * gs;
        }
        let j = d + alpha * s;
        if !j.is_finite() {
            return Err(Error::Numeric(format!("objective not finite (D={d}, S={s})")));
        }
        Ok(ObjectiveValue { j, d, s, gradient })
    }

    /// Objective on a flat component-major vector, in the optimizer's form.
    pub fn evaluate_flat(&self, x: &[T]) -> Result<Evaluation<T>> {
        let y = DeformationField::from_flat(*self.def_grid(), x)?;
        let v = self.evaluate(&y)?;
        Ok(Evaluation {
            value: v.j,
            gradient: v.gradient,
            terms: vec![v.d.as_f64(), v.s.as_f64()],
        })
    }
}

/// Free-function form of [`LevelProblem::distance_and_gradient`].
pub fn distance_and_gradient<T: Real>(
    y: &DeformationField<T>,
    problem: &LevelProblem<T>,
) -> Result<(T, VectorField3<T>)> {
    problem.distance_and_gradient(y)
}

/// Free-function form of [`LevelProblem::evaluate`].
pub fn evaluate_objective<T: Real>(y: &DeformationField<T>, problem: &LevelProblem<T>) -> Result<ObjectiveValue<T>> {
    problem.evaluate(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::with_workers;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(g: Grid3, phase: f64) -> Image3<f64> {
        Image3::from_fn(g, |p| {
            100.0 * (0.9 * p[0] + phase).sin() * (0.7 * p[1]).cos() + 60.0 * (0.8 * p[2] - 0.5 * p[0]).sin() + 150.0
        })
    }

    fn problem(seed: u64) -> (LevelProblem<f64>, DeformationField<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lo = [0.0; 3];
        let ext = [9.0, 9.0, 9.0];
        let ig = Grid3::covering([9, 9, 9], lo, ext).unwrap();
        let dg = Grid3::covering([5, 5, 5], lo, ext).unwrap();
        let p = LevelProblem::new(
            smooth_image(ig, 0.0),
            smooth_image(ig, 0.6),
            dg,
            NgfParams::new(5.0, 5.0).unwrap(),
            CurvatureParams::new(0.5).unwrap(),
            PtVariant::Gather,
        )
        .unwrap();
        let comps = [0, 1, 2].map(|_| (0..dg.len()).map(|_| rng.gen_range(-0.3..0.3)).collect::<Vec<f64>>());
        let y = DeformationField::from_displacement(&VectorField3::new(dg, comps).unwrap());
        (p, y)
    }

    #[test]
    fn matched_images_are_stationary() {
        let g = Grid3::covering([9, 9, 9], [0.0; 3], [9.0; 3]).unwrap();
        let dg = Grid3::covering([5, 5, 5], [0.0; 3], [9.0; 3]).unwrap();
        let img = smooth_image(g, 0.2);
        let p = LevelProblem::new(
            img.clone(),
            img,
            dg,
            NgfParams::new(3.0, 3.0).unwrap(),
            CurvatureParams::new(1.0).unwrap(),
            PtVariant::Gather,
        )
        .unwrap();
        let id = DeformationField::identity(dg);
        let v = p.evaluate(&id).unwrap();
        assert!(v.d.abs() < 1e-12);
        assert_eq!(v.s, 0.0);
        assert!(v.gradient.iter().all(|g| g.abs() <= 1e-10));
    }

    #[test]
    fn distance_only_constant_images() {
        let g = Grid3::unit([6, 6, 6]).unwrap();
        let dg = Grid3::covering([3, 3, 3], [-0.5; 3], [6.0; 3]).unwrap();
        let p = LevelProblem::new(
            Image3::constant(g, 5.0),
            Image3::constant(g, 5.0),
            dg,
            NgfParams::default(),
            CurvatureParams::new(2.5).unwrap(),
            PtVariant::Gather,
        )
        .unwrap();
        // Positions stay inside the template hull, where it is constant.
        let y = DeformationField::<f64>::from_displacement_fn(dg, |x| {
            [-0.04 * (x[0] - 2.5) - 0.01 * (x[1] - 2.5).powi(2), 0.0, -0.04 * (x[2] - 2.5) + 0.005 * (x[0] - 2.5).powi(2)]
        });
        let v = p.evaluate(&y).unwrap();
        assert_eq!(v.d, 0.0);
        assert!(v.s > 0.0);
        assert!((v.j - 2.5 * curvature_value(&y)).abs() <= 1e-12 * v.j.abs());
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (p, y) = problem(21);
        let v = p.evaluate(&y).unwrap();
        let x = y.to_flat();
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..25 {
            let i = rng.gen_range(0..x.len());
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (p.evaluate_flat(&xp).unwrap().value - p.evaluate_flat(&xm).unwrap().value) / (2.0 * h);
            let an = v.gradient[i];
            let scale = an.abs().max(fd.abs()).max(1e-4);
            assert!((fd - an).abs() / scale <= 1e-6, "i {i}: fd {fd} an {an}");
        }
    }

    #[test]
    fn gather_result_independent_of_workers() {
        let (p, y) = problem(5);
        let a = with_workers(1, || p.distance_and_gradient(&y).unwrap()).unwrap();
        let b = with_workers(8, || p.distance_and_gradient(&y).unwrap()).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_foreign_deformation_grid() {
        let (p, _) = problem(1);
        let other = DeformationField::<f64>::identity(Grid3::unit([2, 2, 2]).unwrap());
        assert!(matches!(p.evaluate(&other), Err(Error::GridMismatch(_))));
    }
}
