//! Landmark error and deformation comparison.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Grid3, Image3};
use crate::warp::sample_clamped;

/// Coordinate convention of landmark triples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LandmarkFrame {
    /// Voxel indices counted from 1 (DIR-lab files).
    #[default]
    OneBased,
    ZeroBased,
    /// World millimeters.
    World,
}

impl FromStr for LandmarkFrame {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "one-based" | "1" | "voxel1" | "index1" => Ok(LandmarkFrame::OneBased),
            "zero-based" | "0" | "voxel0" | "index0" => Ok(LandmarkFrame::ZeroBased),
            "world" | "mm" => Ok(LandmarkFrame::World),
            other => Err(format!("unknown landmark frame '{other}' (one-based, zero-based, world)")),
        }
    }
}

impl fmt::Display for LandmarkFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LandmarkFrame::OneBased => "one-based",
            LandmarkFrame::ZeroBased => "zero-based",
            LandmarkFrame::World => "world",
        })
    }
}

/// Landmarks converted to world millimeters.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    points: Vec<[f64; 3]>,
    frame: LandmarkFrame,
}

impl LandmarkSet {
    /// Convert raw triples given in `frame` to world coordinates of `grid`.
    pub fn from_frame(raw: &[[f64; 3]], frame: LandmarkFrame, grid: &Grid3) -> Result<Self> {
        if let Some(i) = raw.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        let (o, h) = (grid.origin(), grid.spacing());
        let shift = match frame {
            LandmarkFrame::OneBased => 1.0,
            _ => 0.0,
        };
        let points = raw
            .iter()
            .map(|p| match frame {
                LandmarkFrame::World => *p,
                _ => [0, 1, 2].map(|d| o[d] + (p[d] - shift) * h[d]),
            })
            .collect();
        Ok(Self { points, frame })
    }

    pub fn from_world(points: Vec<[f64; 3]>) -> Result<Self> {
        Self::from_frame(&points, LandmarkFrame::World, &Grid3::unit([1, 1, 1])?)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn frame(&self) -> LandmarkFrame {
        self.frame
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkError {
    pub mean: f64,
    /// Population standard deviation.
    pub stddev: f64,
    pub per_landmark: Vec<f64>,
    /// Indices of reference landmarks outside the image domain (evaluated
    /// with clamping anyway).
    pub outside: Vec<usize>,
}

/// Position `y(p)` of an arbitrary world point: the displacement is
/// interpolated trilinearly (clamped to the edge) and added to `p`.
pub fn deformation_at(y: &DeformationField<f64>, p: [f64; 3]) -> [f64; 3] {
    let u = y.displacement();
    let grid = *y.grid();
    let comps = u.into_components();
    let mut out = p;
    for (d, c) in comps.into_iter().enumerate() {
        out[d] += sample_clamped(&Image3::from_raw(grid, c), p);
    }
    out
}

fn inside_domain(grid: &Grid3, p: [f64; 3]) -> bool {
    let (lo, ext) = (grid.domain_lo(), grid.extent());
    (0..3).all(|d| p[d] >= lo[d] && p[d] <= lo[d] + ext[d])
}

/// Distance between mapped reference landmarks and template landmarks.
pub fn landmark_error(
    y: &DeformationField<f64>,
    lm_ref: &LandmarkSet,
    lm_tmpl: &LandmarkSet,
    image_grid: &Grid3,
) -> Result<LandmarkError> {
    if lm_ref.count() != lm_tmpl.count() {
        return Err(Error::LandmarkCountMismatch {
            reference: lm_ref.count(),
            template: lm_tmpl.count(),
        });
    }
    let displacement = y.displacement();
    let grid = *y.grid();
    let comps: Vec<Image3<f64>> = displacement
        .into_components()
        .into_iter()
        .map(|c| Image3::from_raw(grid, c))
        .collect();
    let mut outside = Vec::new();
    let per_landmark: Vec<f64> = lm_ref
        .points()
        .iter()
        .zip(lm_tmpl.points())
        .enumerate()
        .map(|(i, (p, q))| {
            if !inside_domain(image_grid, *p) {
                outside.push(i);
            }
            (0..3)
                .map(|d| (p[d] + sample_clamped(&comps[d], *p) - q[d]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let n = per_landmark.len().max(1) as f64;
    let mean = per_landmark.iter().sum::<f64>() / n;
    let var = per_landmark.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(LandmarkError {
        mean,
        stddev: var.sqrt(),
        per_landmark,
        outside,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldDifference {
    pub max: f64,
    pub mean: f64,
    /// Per-point Euclidean difference (mm) on the deformation grid.
    pub magnitude: Image3<f64>,
}

pub fn field_difference_stats(a: &DeformationField<f64>, b: &DeformationField<f64>) -> Result<FieldDifference> {
    a.grid().require_equal(b.grid(), "compared deformation fields")?;
    let grid = *a.grid();
    let mag: Vec<f64> = (0..grid.len())
        .map(|i| {
            (0..3)
                .map(|d| (a.component(d)[i] - b.component(d)[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let max = mag.iter().copied().fold(0.0, f64::max);
    let mean = mag.iter().sum::<f64>() / mag.len() as f64;
    Ok(FieldDifference {
        max,
        mean,
        magnitude: Image3::from_raw(grid, mag),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> Grid3 {
        Grid3::new([10, 8, 6], [1.5, 1.0, 2.5], [0.0, 0.0, 0.0]).unwrap()
    }

    fn cell_landmarks(g: &Grid3, n: usize, rng: &mut ChaCha8Rng) -> LandmarkSet {
        let raw: Vec<[f64; 3]> = (0..n)
            .map(|_| [0, 1, 2].map(|d| rng.gen_range(1..=g.dims()[d]) as f64))
            .collect();
        LandmarkSet::from_frame(&raw, LandmarkFrame::OneBased, g).unwrap()
    }

    #[test]
    fn identity_gives_zero_error() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lm = cell_landmarks(&g, 30, &mut rng);
        let dg = Grid3::covering([4, 3, 2], g.domain_lo(), g.extent()).unwrap();
        let e = landmark_error(&DeformationField::identity(dg), &lm, &lm, &g).unwrap();
        assert_eq!(e.mean, 0.0);
        assert_eq!(e.stddev, 0.0);
        assert!(e.outside.is_empty());
    }

    #[test]
    fn translation_is_exact() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lm = cell_landmarks(&g, 20, &mut rng);
        let t = [0.7, -1.2, 3.0];
        let moved = LandmarkSet::from_world(lm.points().iter().map(|p| [0, 1, 2].map(|d| p[d] + t[d])).collect()).unwrap();
        let dg = Grid3::covering([4, 3, 2], g.domain_lo(), g.extent()).unwrap();
        let y = DeformationField::from_displacement_fn(dg, |_| t);
        let e = landmark_error(&y, &lm, &moved, &g).unwrap();
        assert!(e.mean < 1e-12);
    }

    #[test]
    fn permutation_invariant() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cell_landmarks(&g, 15, &mut rng);
        let b = cell_landmarks(&g, 15, &mut rng);
        let dg = Grid3::covering([4, 3, 2], g.domain_lo(), g.extent()).unwrap();
        let y = DeformationField::from_displacement_fn(dg, |p| [0.1 * p[1], 0.2, -0.05 * p[0]]);
        let e1 = landmark_error(&y, &a, &b, &g).unwrap();
        let mut order: Vec<usize> = (0..15).collect();
        order.shuffle(&mut rng);
        let pa = LandmarkSet::from_world(order.iter().map(|&i| a.points()[i]).collect()).unwrap();
        let pb = LandmarkSet::from_world(order.iter().map(|&i| b.points()[i]).collect()).unwrap();
        let e2 = landmark_error(&y, &pa, &pb, &g).unwrap();
        assert!((e1.mean - e2.mean).abs() < 1e-12);
        assert!((e1.stddev - e2.stddev).abs() < 1e-12);
    }

    #[test]
    fn count_mismatch_and_outside_flag() {
        let g = grid();
        let a = LandmarkSet::from_world(vec![[1.0, 1.0, 1.0]]).unwrap();
        let b = LandmarkSet::from_world(vec![]).unwrap();
        let y = DeformationField::identity(g);
        assert!(matches!(landmark_error(&y, &a, &b, &g), Err(Error::LandmarkCountMismatch { .. })));
        let far = LandmarkSet::from_world(vec![[100.0, 1.0, 1.0]]).unwrap();
        let e = landmark_error(&y, &far, &far, &g).unwrap();
        assert_eq!(e.outside, vec![0]);
        assert_eq!(e.mean, 0.0);
    }

    #[test]
    fn frame_conversion() {
        let g = Grid3::new([4, 4, 4], [0.97, 0.97, 2.5], [0.0; 3]).unwrap();
        let s = LandmarkSet::from_frame(&[[2.0, 3.0, 4.0], [1.0, 1.0, 1.0]], LandmarkFrame::OneBased, &g).unwrap();
        let p = s.points()[0];
        assert!((p[0] - 0.97).abs() < 1e-12 && (p[1] - 1.94).abs() < 1e-12 && (p[2] - 7.5).abs() < 1e-12);
        assert_eq!(s.points()[1], [0.0, 0.0, 0.0]);
        let z = LandmarkSet::from_frame(&[[1.0, 0.0, 0.0]], LandmarkFrame::ZeroBased, &g).unwrap();
        assert_eq!(z.points()[0], [0.97, 0.0, 0.0]);
    }

    #[test]
    fn field_difference_examples() {
        let g = Grid3::unit([3, 4, 2]).unwrap();
        let a = DeformationField::<f64>::from_displacement_fn(g, |p| [0.1 * p[0], 0.0, p[2]]);
        let same = field_difference_stats(&a, &a).unwrap();
        assert_eq!((same.max, same.mean), (0.0, 0.0));
        let b = DeformationField::from_displacement(
            &DeformationField::<f64>::from_displacement_fn(g, |p| [0.1 * p[0] + 0.5, 0.0, p[2]]).displacement(),
        );
        let s = field_difference_stats(&a, &b).unwrap();
        assert!((s.max - 0.5).abs() < 1e-12 && (s.mean - 0.5).abs() < 1e-12);
        let r = field_difference_stats(&b, &a).unwrap();
        assert_eq!(s, r);
        let other = DeformationField::identity(Grid3::unit([2, 2, 2]).unwrap());
        assert!(field_difference_stats(&a, &other).is_err());
    }
}
