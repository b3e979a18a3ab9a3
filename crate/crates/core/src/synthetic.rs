//! Synthetic volumes with a known deformation.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::evaluation::LandmarkSet;
use crate::geometry::{DeformationField, Grid3, Image3};

/// Smooth intensity pattern: a sum of plane waves with random directions and
/// phases plus a few Gaussian blobs. Values stay within roughly 0..1000.
#[derive(Clone, Debug)]
pub struct SmoothPattern {
    waves: Vec<([f64; 3], f64)>,
    blobs: Vec<([f64; 3], f64, f64)>,
    amplitude: f64,
}

impl SmoothPattern {
    /// `wavelength` and blob placement are in millimeters of `grid`.
    pub fn new(grid: &Grid3, wavelength: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 2.0 * PI / wavelength;
        let waves = (0..3)
            .map(|_| {
                let mut v = [0.0; 3];
                loop {
                    for c in v.iter_mut() {
                        *c = rng.gen_range(-1.0..1.0);
                    }
                    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if n > 0.3 && n <= 1.0 {
                        v.iter_mut().for_each(|c| *c *= k / n);
                        break;
                    }
                }
                (v, rng.gen_range(0.0..2.0 * PI))
            })
            .collect();
        let (lo, ext) = (grid.domain_lo(), grid.extent());
        let blobs = (0..4)
            .map(|_| {
                let c = [0, 1, 2].map(|d| lo[d] + ext[d] * rng.gen_range(0.2..0.8));
                let s = ext.iter().copied().fold(f64::INFINITY, f64::min).max(1.0) * rng.gen_range(0.08..0.15);
                (c, s, rng.gen_range(-1.0..1.0))
            })
            .collect();
        Self {
            waves,
            blobs,
            amplitude: 100.0,
        }
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        let w: f64 = self
            .waves
            .iter()
            .map(|(k, phi)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phi).sin())
            .sum();
        let b: f64 = self
            .blobs
            .iter()
            .map(|(c, s, a)| {
                let r2: f64 = (0..3).map(|d| (p[d] - c[d]).powi(2)).sum();
                a * 2.0 * (-r2 / (2.0 * s * s)).exp()
            })
            .sum();
        500.0 + self.amplitude * (w + b)
    }

    pub fn sample(&self, grid: Grid3) -> Image3<f64> {
        Image3::from_fn(grid, |p| self.eval(p))
    }
}

/// Parameters of the Gaussian-bump test case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpCase {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Peak displacement in voxels of the smallest spacing.
    pub amplitude_voxels: f64,
    pub sigma_voxels: f64,
    /// Wavelength of the intensity pattern in voxels.
    pub wavelength_voxels: f64,
    /// Probe lattice points per axis.
    pub probes: usize,
    pub seed: u64,
}

impl Default for BumpCase {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            spacing: [1.0; 3],
            amplitude_voxels: 4.0,
            sigma_voxels: 12.0,
            wavelength_voxels: 24.0,
            probes: 5,
            seed: 7,
        }
    }
}

/// Unit direction of the bump displacement.
const BUMP_DIRECTION: [f64; 3] = [0.6, 0.48, 0.64];

/// Registration pair with known ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticPair {
    pub reference: Image3<f64>,
    pub template: Image3<f64>,
    /// Probe lattice in the reference frame.
    pub probes_reference: LandmarkSet,
    /// The same probes mapped by the true deformation.
    pub probes_template: LandmarkSet,
    pub case: BumpCase,
}

impl BumpCase {
    pub fn grid(&self) -> Result<Grid3> {
        Grid3::new(self.dims, self.spacing, [0.0; 3])
    }

    fn voxel(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// True displacement (mm) at world position `p`.
    pub fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        let h = self.voxel();
        let c = [0, 1, 2].map(|d| 0.5 * (self.dims[d] as f64 - 1.0) * self.spacing[d]);
        let s = self.sigma_voxels * h;
        let r2: f64 = (0..3).map(|d| (p[d] - c[d]).powi(2)).sum();
        let a = self.amplitude_voxels * h * (-r2 / (2.0 * s * s)).exp();
        BUMP_DIRECTION.map(|v| a * v)
    }

    /// The true deformation sampled on `grid`.
    pub fn true_deformation(&self, grid: Grid3) -> DeformationField<f64> {
        DeformationField::from_displacement_fn(grid, |p| self.displacement(p))
    }

    /// Probe lattice: `probes` points per axis spanning the middle quarter
    /// of the volume, where the bump is strong.
    pub fn probe_points(&self) -> Vec<[f64; 3]> {
        let axis = |d: usize| -> Vec<f64> {
            let m = self.dims[d] as f64;
            let (a, b) = (0.375 * m, 0.625 * m);
            (0..self.probes)
                .map(|i| {
                    let t = if self.probes == 1 { 0.5 } else { i as f64 / (self.probes - 1) as f64 };
                    (a + t * (b - a)).round() * self.spacing[d]
                })
                .collect()
        };
        let (xs, ys, zs) = (axis(0), axis(1), axis(2));
        let mut out = Vec::with_capacity(xs.len() * ys.len() * zs.len());
        for &z in &zs {
            for &y in &ys {
                for &x in &xs {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    /// Template is the pattern itself; the reference is the pattern pulled
    /// back through the bump, so the ideal deformation is `x + u(x)`.
    pub fn generate(&self) -> Result<SyntheticPair> {
        let grid = self.grid()?;
        let pattern = SmoothPattern::new(&grid, self.wavelength_voxels * self.voxel(), self.seed);
        let template = pattern.sample(grid);
        let reference = Image3::from_fn(grid, |p| {
            let u = self.displacement(p);
            pattern.eval([p[0] + u[0], p[1] + u[1], p[2] + u[2]])
        });
        let refs = self.probe_points();
        let tmpl = refs
            .iter()
            .map(|p| {
                let u = self.displacement(*p);
                [0, 1, 2].map(|d| p[d] + u[d])
            })
            .collect();
        Ok(SyntheticPair {
            reference,
            template,
            probes_reference: LandmarkSet::from_world(refs)?,
            probes_template: LandmarkSet::from_world(tmpl)?,
            case: *self,
        })
    }
}

/// Random smooth volume, for benchmarks and tests.
pub fn smooth_volume(grid: Grid3, seed: u64) -> Image3<f64> {
    let wl = 0.4 * grid.extent().iter().copied().fold(0.0, f64::max);
    SmoothPattern::new(&grid, wl.max(4.0), seed).sample(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::landmark_error;

    #[test]
    fn bump_peak_and_probe_error_before_registration() {
        let case = BumpCase::default();
        let c = [31.5; 3];
        let u = case.displacement(c);
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 4.0).abs() < 1e-12);
        let pair = case.generate().unwrap();
        assert_eq!(pair.probes_reference.count(), 125);
        let grid = case.grid().unwrap();
        let e = landmark_error(&DeformationField::identity(grid), &pair.probes_reference, &pair.probes_template, &grid).unwrap();
        assert!(e.mean >= 2.0, "initial error {}", e.mean);
        let truth = landmark_error(&case.true_deformation(grid), &pair.probes_reference, &pair.probes_template, &grid).unwrap();
        assert!(truth.mean < 1e-9);
    }

    #[test]
    fn pattern_is_deterministic_and_bounded() {
        let g = Grid3::unit([12, 10, 8]).unwrap();
        let a = smooth_volume(g, 3);
        let b = smooth_volume(g, 3);
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|v| (-500.0..1500.0).contains(v)));
        assert_ne!(a.values(), smooth_volume(g, 4).values());
    }
}
