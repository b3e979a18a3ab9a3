//! Coarse-to-fine driver.
//!
//! Both images are reduced by 2x2x2 block means until the coarsest level is
//! reached. Each level gets its own deformation grid (`grid_ratio` times
//! coarser than the image grid), starts from the prolonged solution of the
//! level below (identity on the coarsest), and is solved with L-BFGS.

use std::str::FromStr;
use std::time::Instant;

use crate::curvature::CurvatureParams;
use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Grid3, Image3};
use crate::lbfgs::{lbfgs_minimize, IterationRecord, LbfgsConfig, StoppingRules, Termination};
use crate::ngf::NgfParams;
use crate::objective::LevelProblem;
use crate::parallel;
use crate::real::{Precision, Real};
use crate::transfer::{interpolate_onto, PtVariant};

/// Number of pyramid levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Levels {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for Levels {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Levels::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Levels::Fixed(n)),
            _ => Err(format!("levels must be 'auto' or an integer >= 1, got '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultilevelConfig {
    pub levels: Levels,
    pub coarsest_min_dim: usize,
    pub grid_ratio: usize,
    pub alpha: f64,
    pub ngf: NgfParams,
    pub lbfgs: LbfgsConfig,
    pub stopping: StoppingRules,
    pub precision: Precision,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub pt_variant: PtVariant,
}

impl Default for MultilevelConfig {
    fn default() -> Self {
        Self {
            levels: Levels::Auto,
            coarsest_min_dim: 16,
            grid_ratio: 4,
            alpha: 0.5,
            ngf: NgfParams::default(),
            lbfgs: LbfgsConfig::default(),
            stopping: StoppingRules::default(),
            precision: Precision::F64,
            workers: 0,
            pt_variant: PtVariant::Gather,
        }
    }
}

impl MultilevelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Levels::Fixed(0) = self.levels {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if self.grid_ratio == 0 {
            return Err(Error::InvalidConfig("grid_ratio must be >= 1".into()));
        }
        if self.coarsest_min_dim == 0 {
            return Err(Error::InvalidConfig("coarsest_min_dim must be >= 1".into()));
        }
        CurvatureParams::new(self.alpha)?;
        self.ngf.validate()?;
        self.lbfgs.validate()?;
        self.stopping.validate()
    }
}

/// Half resolution by 2x2x2 block means (partial blocks at odd ends average
/// what is available). Axes of length 1 are left alone.
pub fn downsample_image<T: Real>(img: &Image3<T>) -> Image3<T> {
    let g = img.grid();
    let dims = g.dims();
    let new_dims = dims.map(|m| if m == 1 { 1 } else { m.div_ceil(2) });
    let coarse = Grid3::covering(new_dims, g.domain_lo(), g.extent()).expect("halved grid stays valid");
    let [nx, ny, _] = new_dims;
    let values = (0..coarse.len())
        .map(|idx| {
            let [a, b, c] = [idx % nx, (idx / nx) % ny, idx / (nx * ny)];
            let span = |o: usize, d: usize| {
                if dims[d] == 1 {
                    0..1
                } else {
                    2 * o..(2 * o + 2).min(dims[d])
                }
            };
            let mut sum = T::zero();
            let mut count = 0usize;
            for k in span(c, 2) {
                for j in span(b, 1) {
                    for i in span(a, 0) {
                        sum += img.get([i, j, k]);
                        count += 1;
                    }
                }
            }
            sum / T::lit(count as f64)
        })
        .collect();
    Image3::from_raw(coarse, values)
}

fn halved(dims: [usize; 3]) -> [usize; 3] {
    dims.map(|m| if m == 1 { 1 } else { m.div_ceil(2) })
}

/// Levels for the automatic schedule: keep halving while the smallest
/// non-singleton axis stays at or above `coarsest_min_dim`.
pub fn auto_levels(dims: [usize; 3], coarsest_min_dim: usize) -> usize {
    let mut levels = 1;
    let mut cur = dims;
    loop {
        let next = halved(cur);
        if next == cur {
            return levels;
        }
        // Axes that were singleton already do not count; one that halves
        // down to a single cell does.
        match (0..3).filter(|&d| cur[d] > 1).map(|d| next[d]).min() {
            Some(m) if m >= coarsest_min_dim => {
                levels += 1;
                cur = next;
            }
            _ => return levels,
        }
    }
}

/// Pyramid of `levels` images, finest first.
pub fn build_pyramid<T: Real>(img: &Image3<T>, levels: usize) -> Result<Vec<Image3<T>>> {
    if levels == 0 {
        return Err(Error::InvalidConfig("pyramid needs at least one level".into()));
    }
    let mut dims = img.grid().dims();
    for _ in 1..levels {
        let next = halved(dims);
        if (0..3).any(|d| dims[d] > 1 && next[d] < 2) {
            return Err(Error::InvalidConfig(format!(
                "{levels} levels is too deep for image dims {:?}",
                img.grid().dims()
            )));
        }
        dims = next;
    }
    let mut out = Vec::with_capacity(levels);
    out.push(img.clone());
    for _ in 1..levels {
        let next = downsample_image(out.last().expect("non-empty"));
        out.push(next);
    }
    Ok(out)
}

/// Deformation grid for an image grid: `ceil(m / ratio)` cells per axis, at
/// least 2 (or 1 where the image has a single cell), same world box.
pub fn deformation_grid(image_grid: &Grid3, grid_ratio: usize) -> Result<Grid3> {
    let dims = image_grid
        .dims()
        .map(|m| if m == 1 { 1 } else { m.div_ceil(grid_ratio).max(2) });
    Grid3::covering(dims, image_grid.domain_lo(), image_grid.extent())
}

/// Transfer `y` to a finer grid over the same domain by interpolating the
/// displacement and adding it to the finer identity.
pub fn prolong_deformation<T: Real>(y: &DeformationField<T>, finer: &Grid3) -> Result<DeformationField<T>> {
    y.grid().require_same_domain(finer, "prolongation")?;
    let u = interpolate_onto(&y.displacement(), finer);
    Ok(DeformationField::from_displacement(&u))
}

/// Outcome of one level.
#[derive(Clone, Debug)]
pub struct LevelReport {
    pub level: usize,
    pub image_dims: [usize; 3],
    pub def_dims: [usize; 3],
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Accepted iterates; `terms` holds `[D, S]`.
    pub trace: Vec<IterationRecord>,
    pub seconds: f64,
}

impl LevelReport {
    pub fn is_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1].value <= w[0].value)
    }
}

#[derive(Clone, Debug)]
pub struct RegistrationReport {
    pub precision: Precision,
    pub pt_variant: PtVariant,
    pub workers: usize,
    pub alpha: f64,
    pub ngf: NgfParams,
    pub levels: Vec<LevelReport>,
    pub pyramid_seconds: f64,
    pub total_seconds: f64,
    pub final_grad_inf: f64,
}

/// Register `template` onto `reference` (both on the same grid).
///
/// Returns the finest-level deformation (always as f64; single precision
/// results widen exactly) and a report of every level.
pub fn register(
    reference: &Image3<f64>,
    template: &Image3<f64>,
    cfg: &MultilevelConfig,
) -> Result<(DeformationField<f64>, RegistrationReport)> {
    cfg.validate()?;
    reference.grid().require_equal(
        template.grid(),
        "reference and template grids differ (run `resample` first)",
    )?;
    let pool = parallel::pool(cfg.workers)?;
    let workers = pool.current_num_threads();
    pool.install(|| match cfg.precision {
        Precision::F64 => register_typed::<f64>(reference, template, cfg, workers),
        Precision::F32 => register_typed::<f32>(&reference.cast(), &template.cast(), cfg, workers)
            .map(|(y, r)| (y.cast(), r)),
    })
}

fn register_typed<T: Real>(
    reference: &Image3<T>,
    template: &Image3<T>,
    cfg: &MultilevelConfig,
    workers: usize,
) -> Result<(DeformationField<T>, RegistrationReport)> {
    let start = Instant::now();
    let levels = match cfg.levels {
        Levels::Auto => auto_levels(reference.grid().dims(), cfg.coarsest_min_dim),
        Levels::Fixed(n) => n,
    };
    let (rp, tp) = rayon::join(|| build_pyramid(reference, levels), || build_pyramid(template, levels));
    let (rp, tp) = (rp.map_err(|e| e.at_level(0, "pyramid"))?, tp.map_err(|e| e.at_level(0, "pyramid"))?);
    let pyramid_seconds = start.elapsed().as_secs_f64();
    let curvature = CurvatureParams::new(cfg.alpha)?;

    let mut reports = Vec::with_capacity(levels);
    let mut y: Option<DeformationField<T>> = None;
    for level in 0..levels {
        let level_start = Instant::now();
        let r = &rp[levels - 1 - level];
        let t = &tp[levels - 1 - level];
        let def_grid = deformation_grid(r.grid(), cfg.grid_ratio).map_err(|e| e.at_level(level, "grid"))?;
        let y0 = match &y {
            None => DeformationField::identity(def_grid),
            Some(prev) => prolong_deformation(prev, &def_grid).map_err(|e| e.at_level(level, "prolongation"))?,
        };
        let problem = LevelProblem::new(r.clone(), t.clone(), def_grid, cfg.ngf, curvature, cfg.pt_variant)
            .map_err(|e| e.at_level(level, "setup"))?;
        let (x, trace) = lbfgs_minimize(|x| problem.evaluate_flat(x), &y0.to_flat(), &cfg.lbfgs, &cfg.stopping)
            .map_err(|e| e.at_level(level, "optimization"))?;
        y = Some(DeformationField::from_flat(def_grid, &x).map_err(|e| e.at_level(level, "optimization"))?);
        reports.push(LevelReport {
            level,
            image_dims: r.grid().dims(),
            def_dims: def_grid.dims(),
            iterations: trace.iterations(),
            evaluations: trace.evaluations,
            termination: trace.termination,
            trace: trace.records,
            seconds: level_start.elapsed().as_secs_f64(),
        });
    }

    let final_grad_inf = reports
        .last()
        .and_then(|l| l.trace.last())
        .map_or(0.0, |r| r.grad_inf);
    let report = RegistrationReport {
        precision: T::PRECISION,
        pt_variant: cfg.pt_variant,
        workers,
        alpha: cfg.alpha,
        ngf: cfg.ngf,
        levels: reports,
        pyramid_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
        final_grad_inf,
    };
    Ok((y.expect("at least one level"), report))
}
