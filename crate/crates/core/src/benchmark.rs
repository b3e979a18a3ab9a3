//! Timing harness for the transfer operators, the objective and full
//! registrations. Timings are only produced after every transpose variant
//! has been checked against the gather reference.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::curvature::CurvatureParams;
use crate::error::{Error, Result};
use crate::geometry::{DeformationField, Grid3, Image3, VectorField3};
use crate::multilevel::{deformation_grid, register, MultilevelConfig};
use crate::objective::LevelProblem;
use crate::parallel::with_workers;
use crate::real::{Precision, Real};
use crate::synthetic::BumpCase;
use crate::transfer::{GridTransfer, PtVariant};

/// Relative tolerance of the cross-variant gate (double precision).
pub const AGREEMENT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchOp {
    ApplyP,
    ApplyPt,
    /// NGF value and gradient with respect to the deformation grid.
    NgfGradient,
    /// Full objective (NGF plus curvature) with gradient.
    Objective,
    Register,
}

impl BenchOp {
    pub const ALL: [BenchOp; 5] = [
        BenchOp::ApplyP,
        BenchOp::ApplyPt,
        BenchOp::NgfGradient,
        BenchOp::Objective,
        BenchOp::Register,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchOp::ApplyP => "apply_p",
            BenchOp::ApplyPt => "apply_pt",
            BenchOp::NgfGradient => "ngf_gradient",
            BenchOp::Objective => "objective",
            BenchOp::Register => "register",
        }
    }

    /// Whether the op's cost depends on the transpose variant.
    pub fn uses_variant(self) -> bool {
        !matches!(self, BenchOp::ApplyP)
    }
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        BenchOp::ALL
            .into_iter()
            .find(|op| op.name() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| format!("unknown benchmark op '{s}'"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub dims: [usize; 3],
    pub threads: Vec<usize>,
    pub precisions: Vec<Precision>,
    pub variants: Vec<PtVariant>,
    pub ops: Vec<BenchOp>,
    pub reps: usize,
    pub grid_ratio: usize,
    /// Settings of the `register` op; precision, workers and variant are
    /// overridden per record.
    pub registration: MultilevelConfig,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            dims: [64, 64, 64],
            threads: vec![1],
            precisions: vec![Precision::F64],
            variants: PtVariant::ALL.to_vec(),
            ops: BenchOp::ALL.to_vec(),
            reps: 3,
            grid_ratio: 4,
            registration: MultilevelConfig::default(),
            seed: 11,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 3 {
            return Err(Error::InvalidConfig(format!("reps must be >= 3, got {}", self.reps)));
        }
        for (what, empty) in [
            ("threads", self.threads.is_empty()),
            ("precisions", self.precisions.is_empty()),
            ("variants", self.variants.is_empty()),
            ("ops", self.ops.is_empty()),
        ] {
            if empty {
                return Err(Error::InvalidConfig(format!("benchmark {what} list is empty")));
            }
        }
        if self.threads.contains(&0) {
            return Err(Error::InvalidConfig("thread counts must be >= 1".into()));
        }
        self.registration.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRecord {
    pub op: BenchOp,
    /// `None` for ops that do not involve a transpose.
    pub variant: Option<PtVariant>,
    pub precision: Precision,
    pub threads: usize,
    pub dims: [usize; 3],
    pub reps: usize,
    pub min_seconds: f64,
    pub median_seconds: f64,
    /// SHA-256 of the little-endian output of the first repetition.
    pub checksum: String,
    /// Whether every repetition produced the same checksum.
    pub checksum_stable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgreementCheck {
    pub what: String,
    pub variant: PtVariant,
    pub max_relative_difference: f64,
}

#[derive(Clone, Debug)]
pub struct BenchmarkReport {
    pub agreement: Vec<AgreementCheck>,
    pub records: Vec<BenchmarkRecord>,
}

struct Fixture {
    reference: Image3<f64>,
    template: Image3<f64>,
    def_grid: Grid3,
    y: DeformationField<f64>,
    r: VectorField3<f64>,
}

fn fixture(cfg: &BenchmarkConfig) -> Result<Fixture> {
    let case = BumpCase {
        dims: cfg.dims,
        seed: cfg.seed,
        ..BumpCase::default()
    };
    let pair = case.generate()?;
    let image_grid = *pair.reference.grid();
    let def_grid = deformation_grid(&image_grid, cfg.grid_ratio)?;
    let y = case.true_deformation(def_grid);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let comps = [0, 1, 2].map(|_| (0..image_grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let r = VectorField3::new(image_grid, comps)?;
    Ok(Fixture {
        reference: pair.reference,
        template: pair.template,
        def_grid,
        y,
        r,
    })
}

fn max_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn problem<T: Real>(fx: &Fixture, cfg: &BenchmarkConfig, variant: PtVariant) -> Result<LevelProblem<T>> {
    LevelProblem::new(
        fx.reference.cast(),
        fx.template.cast(),
        fx.def_grid,
        cfg.registration.ngf,
        CurvatureParams::new(cfg.registration.alpha)?,
        variant,
    )
}

fn gate(fx: &Fixture, cfg: &BenchmarkConfig) -> Result<Vec<AgreementCheck>> {
    let transfer = GridTransfer::<f64>::new(&fx.def_grid, fx.r.grid(), PtVariant::Gather)?;
    let base_pt = transfer.apply_pt(&fx.r)?.to_flat();
    let prob = problem::<f64>(fx, cfg, PtVariant::Gather)?;
    let base_grad = prob.distance_and_gradient(&fx.y)?.1.to_flat();
    let mut checks = Vec::new();
    for &variant in PtVariant::ALL.iter().filter(|&&v| v != PtVariant::Gather) {
        let pt = transfer.apply_pt_with(&fx.r, variant)?.to_flat();
        let (_, g) = prob.distance_and_gradient_with(&fx.y, variant)?;
        for (what, d) in [
            ("apply_pt", max_relative_difference(&base_pt, &pt)),
            ("ngf_gradient", max_relative_difference(&base_grad, &g.to_flat())),
        ] {
            let check = AgreementCheck {
                what: what.to_string(),
                variant,
                max_relative_difference: d,
            };
            if !(d <= AGREEMENT_TOLERANCE) {
                return Err(Error::Numeric(format!(
                    "{} variant disagrees with gather on {what}: relative difference {d:e} > {AGREEMENT_TOLERANCE:e}",
                    variant.name()
                )));
            }
            checks.push(check);
        }
    }
    Ok(checks)
}

fn checksum<T: Real>(values: impl IntoIterator<Item = T>) -> String {
    let mut bytes = Vec::new();
    for v in values {
        v.write_le(&mut bytes);
    }
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn time_reps(reps: usize, mut run: impl FnMut() -> Result<String>) -> Result<(f64, f64, String, bool)> {
    let mut times = Vec::with_capacity(reps);
    let mut sums = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let sum = run()?;
        times.push(t0.elapsed().as_secs_f64());
        sums.push(sum);
    }
    times.sort_by(f64::total_cmp);
    let median = if reps % 2 == 1 {
        times[reps / 2]
    } else {
        0.5 * (times[reps / 2 - 1] + times[reps / 2])
    };
    let stable = sums.iter().all(|s| *s == sums[0]);
    Ok((times[0], median, sums.swap_remove(0), stable))
}

fn bench_op<T: Real>(
    fx: &Fixture,
    cfg: &BenchmarkConfig,
    op: BenchOp,
    variant: PtVariant,
    threads: usize,
) -> Result<(f64, f64, String, bool)> {
    let reps = cfg.reps;
    match op {
        BenchOp::Register => {
            let mut rc = cfg.registration.clone();
            rc.precision = T::PRECISION;
            rc.workers = threads;
            rc.pt_variant = variant;
            rc.grid_ratio = cfg.grid_ratio;
            time_reps(reps, || {
                let (y, _) = register(&fx.reference, &fx.template, &rc)?;
                Ok(checksum(y.to_flat()))
            })
        }
        _ => {
            let prob = problem::<T>(fx, cfg, variant)?;
            let y: DeformationField<T> = fx.y.cast();
            let r: VectorField3<T> = fx.r.cast();
            with_workers(threads, || {
                time_reps(reps, || match op {
                    BenchOp::ApplyP => Ok(checksum(prob.transfer().apply_p(&y)?.to_flat())),
                    BenchOp::ApplyPt => Ok(checksum(prob.transfer().apply_pt(&r)?.to_flat())),
                    BenchOp::NgfGradient => {
                        let (d, g) = prob.distance_and_gradient(&y)?;
                        Ok(checksum(std::iter::once(d).chain(g.to_flat())))
                    }
                    BenchOp::Objective => {
                        let v = prob.evaluate(&y)?;
                        Ok(checksum(std::iter::once(v.j).chain(v.gradient)))
                    }
                    BenchOp::Register => unreachable!(),
                })
            })?
        }
    }
}

/// Run the agreement gate, then time every requested combination.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkReport> {
    cfg.validate()?;
    let fx = fixture(cfg)?;
    let agreement = gate(&fx, cfg)?;
    let mut records = Vec::new();
    for &op in &cfg.ops {
        let variants: Vec<Option<PtVariant>> = if op.uses_variant() {
            cfg.variants.iter().copied().map(Some).collect()
        } else {
            vec![None]
        };
        for &precision in &cfg.precisions {
            for &variant in &variants {
                for &threads in &cfg.threads {
                    let v = variant.unwrap_or_default();
                    let (min, median, sum, stable) = match precision {
                        Precision::F32 => bench_op::<f32>(&fx, cfg, op, v, threads)?,
                        Precision::F64 => bench_op::<f64>(&fx, cfg, op, v, threads)?,
                    };
                    records.push(BenchmarkRecord {
                        op,
                        variant,
                        precision,
                        threads,
                        dims: cfg.dims,
                        reps: cfg.reps,
                        min_seconds: min,
                        median_seconds: median,
                        checksum: sum,
                        checksum_stable: stable,
                    });
                }
            }
        }
    }
    Ok(BenchmarkReport { agreement, records })
}

pub const TABLE_HEADER: &str = "op\tvariant\tprecision\tthreads\tdims\treps\tmin_s\tmedian_s\tchecksum\tchecksum_stable";

/// Tab-delimited table with a header row.
pub fn format_table(records: &[BenchmarkRecord]) -> String {
    let mut s = String::from(TABLE_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}x{}x{}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
            r.op,
            r.variant.map_or("-", |v| v.name()),
            r.precision,
            r.threads,
            r.dims[0],
            r.dims[1],
            r.dims[2],
            r.reps,
            r.min_seconds,
            r.median_seconds,
            r.checksum,
            r.checksum_stable
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multilevel::Levels;

    fn small() -> BenchmarkConfig {
        let mut registration = MultilevelConfig {
            levels: Levels::Fixed(1),
            ..MultilevelConfig::default()
        };
        registration.lbfgs.max_iterations = 3;
        BenchmarkConfig {
            dims: [12, 10, 8],
            threads: vec![1, 2],
            grid_ratio: 2,
            registration,
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn one_record_per_combination() {
        let cfg = small();
        let rep = run_benchmark(&cfg).unwrap();
        let expected = 2 * (1 + 4 * 3);
        assert_eq!(rep.records.len(), expected);
        assert_eq!(rep.agreement.len(), 4);
        assert!(rep.agreement.iter().all(|c| c.max_relative_difference <= AGREEMENT_TOLERANCE));
        let table = format_table(&rep.records);
        assert_eq!(table.lines().count(), expected + 1);
    }

    #[test]
    fn gather_checksums_match_across_threads() {
        let cfg = BenchmarkConfig {
            threads: vec![1, 2, 8],
            variants: vec![PtVariant::Gather],
            ops: vec![BenchOp::ApplyPt, BenchOp::Objective],
            ..small()
        };
        let rep = run_benchmark(&cfg).unwrap();
        for op in [BenchOp::ApplyPt, BenchOp::Objective] {
            let sums: Vec<_> = rep.records.iter().filter(|r| r.op == op).map(|r| &r.checksum).collect();
            assert_eq!(sums.len(), 3);
            assert!(sums.iter().all(|s| *s == sums[0]));
        }
        assert!(rep.records.iter().all(|r| r.checksum_stable));
    }

    #[test]
    fn rejects_too_few_reps() {
        let cfg = BenchmarkConfig { reps: 2, ..small() };
        assert!(matches!(run_benchmark(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn op_names_parse() {
        for op in BenchOp::ALL {
            assert_eq!(op.name().parse::<BenchOp>().unwrap(), op);
        }
        assert!("nope".parse::<BenchOp>().is_err());
    }
}
