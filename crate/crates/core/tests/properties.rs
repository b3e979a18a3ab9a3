use ngfreg::curvature::curvature_value;
use ngfreg::io::{read_volume, write_volume};
use ngfreg::lbfgs::Evaluation;
use ngfreg::multilevel::{build_pyramid, prolong_deformation};
use ngfreg::ngf::{ngf_value, ngf_voxel_terms, precompute_reference_terms};
use ngfreg::transfer::{apply_p, apply_pt_gather, apply_pt_redblack, build_gather_plan, deformation_to_image_grid};
use ngfreg::warp::warp_image;
use ngfreg::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims(max: usize) -> impl Strategy<Value = [usize; 3]> {
    [1..=max, 1..=max, 1..=max]
}

/// Deformation and image grids over one random domain.
fn grid_pair(max: usize) -> impl Strategy<Value = (Grid3, Grid3)> {
    (dims(max), [0.0f64..1.0, 0.0..1.0, 0.0..1.0], [-20.0f64..20.0, -20.0..20.0, -20.0..20.0], [1.0f64..30.0, 1.0..30.0, 1.0..30.0])
        .prop_map(|(img, f, lo, ext)| {
            let def = [0, 1, 2].map(|d| 1 + (f[d] * img[d] as f64) as usize % img[d]);
            (Grid3::covering(def, lo, ext).unwrap(), Grid3::covering(img, lo, ext).unwrap())
        })
}

fn field(grid: Grid3, rng: &mut ChaCha8Rng, amp: f64) -> VectorField3<f64> {
    VectorField3::new(grid, [0, 1, 2].map(|_| (0..grid.len()).map(|_| rng.gen_range(-amp..amp)).collect())).unwrap()
}

fn image(grid: Grid3, rng: &mut ChaCha8Rng) -> Image3<f64> {
    Image3::new(grid, (0..grid.len()).map(|_| rng.gen_range(0.0..100.0)).collect()).unwrap()
}

fn dot(a: &VectorField3<f64>, b: &VectorField3<f64>) -> f64 {
    a.to_flat().iter().zip(b.to_flat()).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transpose_is_adjoint((dg, ig) in grid_pair(9), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DeformationField::from_field(field(dg, &mut rng, 1.0));
        let z = field(ig, &mut rng, 1.0);
        let lhs = dot(&apply_p(&x, &ig).unwrap(), &z);
        let plan = build_gather_plan(&dg, &ig).unwrap();
        let rhs = dot(x.field(), &apply_pt_gather(&z, &plan).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + 1.0));
    }

    #[test]
    fn ordered_transposes_agree_exactly((dg, ig) in grid_pair(9), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = field(ig, &mut rng, 1.0);
        let plan = build_gather_plan(&dg, &ig).unwrap();
        prop_assert_eq!(apply_pt_redblack(&z, &dg).unwrap(), apply_pt_gather(&z, &plan).unwrap());
    }

    #[test]
    fn identity_positions_are_exact((dg, ig) in grid_pair(9)) {
        let yh = deformation_to_image_grid(&DeformationField::<f64>::identity(dg), &ig).unwrap();
        prop_assert_eq!(yh, DeformationField::identity(ig).into_field());
    }

    #[test]
    fn warped_values_stay_in_padded_range(d in dims(7), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid3::new(d, [1.0, 1.5, 0.5], [0.0; 3]).unwrap();
        let t = image(g, &mut rng);
        let yh = DeformationField::from_displacement(&field(g, &mut rng, 3.0)).into_field();
        let w = warp_image(&t, &yh);
        let hi = t.values().iter().copied().fold(0.0, f64::max);
        prop_assert!(w.warped.values().iter().all(|&v| (-1e-12..=hi + 1e-9).contains(&v)));
    }

    #[test]
    fn ngf_terms_are_bounded(d in dims(7), seed in any::<u64>(), tau in 0.01f64..50.0, rho in 0.01f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid3::new(d, [1.0, 0.7, 1.3], [0.0; 3]).unwrap();
        let p = NgfParams::new(tau, rho).unwrap();
        let yh = DeformationField::from_displacement(&field(g, &mut rng, 2.0)).into_field();
        let terms = ngf_voxel_terms(&warp_image(&image(g, &mut rng), &yh), &precompute_reference_terms(&image(g, &mut rng), &p), &p);
        prop_assert!(terms.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn ngf_is_scale_invariant(d in dims(6), seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid3::new(d, [1.0; 3], [0.0; 3]).unwrap();
        let (r, t) = (image(g, &mut rng), image(g, &mut rng));
        let scale = |img: &Image3<f64>| Image3::new(g, img.values().iter().map(|v| v * c).collect()).unwrap();
        let yh = DeformationField::from_displacement(&field(g, &mut rng, 0.4)).into_field();
        let (p, pc) = (NgfParams::new(3.0, 5.0).unwrap(), NgfParams::new(3.0 * c, 5.0 * c).unwrap());
        let a = ngf_value(&warp_image(&t, &yh), &precompute_reference_terms(&r, &p), &p, 1.0);
        let b = ngf_value(&warp_image(&scale(&t), &yh), &precompute_reference_terms(&scale(&r), &pc), &pc, 1.0);
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn curvature_vanishes_on_affine_maps(d in dims(8), a in prop::array::uniform3(-5.0f64..5.0), b in prop::array::uniform9(-0.5f64..0.5)) {
        let g = Grid3::new(d, [0.9, 1.7, 2.2], [5.0, -3.0, 1.0]).unwrap();
        let y = DeformationField::<f64>::from_displacement_fn(g, |p| [0, 1, 2].map(|i| a[i] + b[3 * i] * p[0] + b[3 * i + 1] * p[1] + b[3 * i + 2] * p[2]));
        prop_assert!(curvature_value(&y).abs() <= 1e-12);
    }

    #[test]
    fn curvature_is_nonnegative(d in dims(8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid3::unit(d).unwrap();
        let y = DeformationField::from_displacement(&field(g, &mut rng, 2.0));
        prop_assert!(curvature_value(&y) >= 0.0);
    }

    #[test]
    fn lbfgs_trace_is_monotone(diag in prop::collection::vec(0.1f64..100.0, 2..12), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = diag.iter().map(|_| rng.gen_range(-3.0..3.0)).collect();
        let f = |x: &[f64]| -> ngfreg::Result<Evaluation<f64>> {
            let v = x.iter().zip(&diag).map(|(x, a)| 0.5 * a * x * x + x.cos()).sum();
            Ok(Evaluation::new(v, x.iter().zip(&diag).map(|(x, a)| a * x - x.sin()).collect()))
        };
        let (_, trace) = lbfgs_minimize(f, &x0, &LbfgsConfig::default(), &StoppingRules::default()).unwrap();
        prop_assert!(trace.is_monotone());
    }

    #[test]
    fn pyramid_preserves_extent(d in dims(40), spacing in prop::array::uniform3(0.3f64..3.0)) {
        let g = Grid3::new(d, spacing, [1.0, 2.0, 3.0]).unwrap();
        let img = Image3::<f64>::constant(g, 1.0);
        let levels = ngfreg::multilevel::auto_levels(d, 4).max(1);
        let pyr = build_pyramid(&img, levels).unwrap();
        for w in pyr.windows(2) {
            for k in 0..3 {
                prop_assert!((w[0].grid().extent()[k] - w[1].grid().extent()[k]).abs() <= 1e-9);
                prop_assert!((w[0].grid().domain_lo()[k] - w[1].grid().domain_lo()[k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn prolonged_identity_is_identity((coarse, fine) in grid_pair(12)) {
        let y = prolong_deformation(&DeformationField::<f64>::identity(coarse), &fine).unwrap();
        prop_assert_eq!(y, DeformationField::identity(fine));
    }

    #[test]
    fn landmark_error_ignores_order(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid3::new([6, 5, 4], [2.0; 3], [0.0; 3]).unwrap();
        let y = DeformationField::from_displacement(&field(g, &mut rng, 1.0));
        let pts = |rng: &mut ChaCha8Rng| (0..n).map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..8.0), rng.gen_range(0.0..6.0)]).collect::<Vec<_>>();
        let (r, t) = (pts(&mut rng), pts(&mut rng));
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(seed as usize % n);
        let pick = |v: &[[f64; 3]]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let a = landmark_error(&y, &LandmarkSet::from_world(r.clone()).unwrap(), &LandmarkSet::from_world(t.clone()).unwrap(), &g).unwrap();
        let b = landmark_error(&y, &LandmarkSet::from_world(pick(&r)).unwrap(), &LandmarkSet::from_world(pick(&t)).unwrap(), &g).unwrap();
        prop_assert!((a.mean - b.mean).abs() <= 1e-12);
        prop_assert!((a.stddev - b.stddev).abs() <= 1e-12);
    }

    #[test]
    fn volume_files_round_trip(d in dims(6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Grid3::new(d, [0.5, 1.25, 3.0], [-1.0, 0.0, 7.5]).unwrap();
        let img = image(g, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mha");
        write_volume(&img, &p).unwrap();
        prop_assert_eq!(read_volume(&p).unwrap(), img);
    }
}
