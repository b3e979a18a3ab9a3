//! Command-line front end. [`run`] returns the process exit code:
//! 0 success, 1 usage, 2 I/O, 3 numeric or solver failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::benchmark::{format_table, run_benchmark, BenchOp, BenchmarkConfig};
use crate::error::{Error, Result};
use crate::evaluation::{field_difference_stats, landmark_error, LandmarkFrame};
use crate::geometry::{Grid3, Image3};
use crate::io::{read_deformation, read_header, read_landmarks, read_volume, write_deformation, write_report, write_volume};
use crate::multilevel::{register, Levels, MultilevelConfig};
use crate::ngf::NgfParams;
use crate::real::Precision;
use crate::transfer::{deformation_to_image_grid, PtVariant};
use crate::warp::{resample, warp_image};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "ngfreg", version, about = "Deformable 3D image registration (NGF + curvature, multilevel L-BFGS)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a template volume onto a reference volume.
    Register(RegisterArgs),
    /// Warp a volume with a stored deformation.
    Warp(WarpArgs),
    /// Landmark error of a deformation and/or its difference to another one.
    Evaluate(EvaluateArgs),
    /// Time the transfer operators, the objective and registration.
    Benchmark(BenchmarkArgs),
    /// Resample a volume onto the grid of another volume.
    Resample(ResampleArgs),
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    out_deformation: PathBuf,
    #[arg(long)]
    out_warped: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Pyramid depth, or `auto`.
    #[arg(long, default_value = "auto")]
    levels: Levels,
    #[arg(long)]
    grid_ratio: Option<usize>,
    #[arg(long, default_value = "f64")]
    precision: Precision,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value = "gather")]
    pt_variant: PtVariant,
    /// Iteration cap per level.
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WarpArgs {
    #[arg(long)]
    template: PathBuf,
    #[arg(long)]
    deformation: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference volume for `--out-difference`.
    #[arg(long, requires = "out_difference")]
    reference: Option<PathBuf>,
    /// Writes warped minus reference.
    #[arg(long, requires = "reference")]
    out_difference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    deformation: PathBuf,
    #[arg(long, requires_all = ["landmarks_template", "image_grid_from"])]
    landmarks_ref: Option<PathBuf>,
    #[arg(long, requires = "landmarks_ref")]
    landmarks_template: Option<PathBuf>,
    /// Volume whose grid defines voxel-index landmarks.
    #[arg(long)]
    image_grid_from: Option<PathBuf>,
    /// one-based, zero-based or world.
    #[arg(long, default_value = "one-based")]
    frame: LandmarkFrame,
    /// Per-landmark errors, one per line.
    #[arg(long)]
    out_per_landmark: Option<PathBuf>,
    /// Second deformation to compare against.
    #[arg(long)]
    compare_deformation: Option<PathBuf>,
    /// Magnitude volume of the field difference.
    #[arg(long, requires = "compare_deformation")]
    out_difference: Option<PathBuf>,
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split([',', 'x', 'X'])
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("dims must look like 64,64,64, got '{s}'"))?;
    match v[..] {
        [x, y, z] if x > 0 && y > 0 && z > 0 => Ok([x, y, z]),
        _ => Err(format!("dims must be three positive integers, got '{s}'")),
    }
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[arg(long, default_value = "64,64,64", value_parser = parse_dims)]
    dims: [usize; 3],
    #[arg(long, value_delimiter = ',', default_value = "1")]
    threads: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "f64")]
    precision: Vec<Precision>,
    #[arg(long, value_delimiter = ',', default_value = "gather,scatter,redblack")]
    pt_variant: Vec<PtVariant>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Subset of apply_p, apply_pt, ngf_gradient, objective, register.
    #[arg(long, value_delimiter = ',', default_value = "apply_p,apply_pt,ngf_gradient,objective,register")]
    ops: Vec<BenchOp>,
    #[arg(long, default_value_t = 4)]
    grid_ratio: usize,
    /// Iteration cap per level for the register op.
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Also write the table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ResampleArgs {
    #[arg(long)]
    input: PathBuf,
    /// Volume whose grid is used.
    #[arg(long)]
    like: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_io() => EXIT_IO,
        Error::InvalidConfig(_) => EXIT_USAGE,
        Error::GridMismatch(_) | Error::LandmarkCountMismatch { .. } => EXIT_IO,
        Error::Level { source, .. } => exit_code(source),
        _ => EXIT_NUMERIC,
    }
}

/// Parse `args` (including the program name) and run; messages go to
/// `out` and `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    let result = match cli.command {
        Command::Register(a) => cmd_register(a, out),
        Command::Warp(a) => cmd_warp(a, out),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Benchmark(a) => cmd_benchmark(a, out),
        Command::Resample(a) => cmd_resample(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let _ = writeln!(err, "  caused by: {s}");
                src = s.source();
            }
            if matches!(e, Error::GridMismatch(_)) {
                let _ = writeln!(err, "hint: bring the volumes onto one grid with `ngfreg resample --input T --like R --out T_resampled.mha`");
            }
            exit_code(&e)
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(format!("writing {}", path.display()), e)
}

fn cmd_register(a: RegisterArgs, out: &mut dyn Write) -> Result<()> {
    let reference = read_volume(&a.reference)?;
    let template = read_volume(&a.template)?;
    reference
        .grid()
        .require_equal(template.grid(), "reference and template grids")?;
    let mut cfg = MultilevelConfig {
        levels: a.levels,
        precision: a.precision,
        workers: a.threads,
        pt_variant: a.pt_variant,
        ..MultilevelConfig::default()
    };
    if let Some(alpha) = a.alpha {
        cfg.alpha = alpha;
    }
    cfg.ngf = NgfParams::new(a.tau.unwrap_or(cfg.ngf.tau), a.rho.unwrap_or(cfg.ngf.rho))?;
    if let Some(r) = a.grid_ratio {
        cfg.grid_ratio = r;
    }
    if let Some(n) = a.max_iter {
        cfg.lbfgs.max_iterations = n;
    }
    let (y, report) = register(&reference, &template, &cfg)?;
    write_deformation(&y, &a.out_deformation)?;
    let max_disp = y.max_displacement_voxels(reference.grid());
    if let Some(p) = &a.out_warped {
        let yhat = deformation_to_image_grid(&y, reference.grid())?;
        write_volume(&warp_image(&template, &yhat).warped, p)?;
    }
    let extra = [
        ("reference", a.reference.display().to_string()),
        ("template", a.template.display().to_string()),
        ("final_max_displacement_voxels", format!("{max_disp:e}")),
    ];
    if let Some(p) = &a.report {
        write_report(&report, &extra, p)?;
    }
    let iters: Vec<String> = report.levels.iter().map(|l| l.iterations.to_string()).collect();
    let w = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "levels = {}", report.levels.len())?;
        writeln!(out, "iterations = {}", iters.join(","))?;
        writeln!(out, "final_max_displacement_voxels = {max_disp:e}")?;
        writeln!(out, "total_seconds = {:.3}", report.total_seconds)
    };
    w(out).map_err(io_err(Path::new("stdout")))
}

fn cmd_warp(a: WarpArgs, out: &mut dyn Write) -> Result<()> {
    let template = read_volume(&a.template)?;
    let y = read_deformation(&a.deformation)?;
    let yhat = deformation_to_image_grid(&y, template.grid())?;
    let res = warp_image(&template, &yhat);
    write_volume(&res.warped, &a.out)?;
    if let (Some(rp), Some(dp)) = (&a.reference, &a.out_difference) {
        let reference = read_volume(rp)?;
        reference.grid().require_equal(template.grid(), "reference and template grids")?;
        let diff: Vec<f64> = res.warped.values().iter().zip(reference.values()).map(|(w, r)| w - r).collect();
        write_volume(&Image3::new(*reference.grid(), diff)?, dp)?;
    }
    writeln!(out, "inside_voxels = {} / {}", res.inside_count(), template.grid().len()).map_err(io_err(Path::new("stdout")))
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    if a.landmarks_ref.is_none() && a.compare_deformation.is_none() {
        return Err(Error::InvalidConfig(
            "nothing to evaluate: pass --landmarks-ref/--landmarks-template or --compare-deformation".into(),
        ));
    }
    let y = read_deformation(&a.deformation)?;
    let so = io_err(Path::new("stdout"));
    let mut text = String::new();
    if let (Some(lr), Some(lt), Some(gp)) = (&a.landmarks_ref, &a.landmarks_template, &a.image_grid_from) {
        let grid: Grid3 = read_header(gp)?.grid;
        let r = read_landmarks(lr, a.frame, &grid)?;
        let t = read_landmarks(lt, a.frame, &grid)?;
        let e = landmark_error(&y, &r, &t, &grid)?;
        text.push_str(&format!("landmark_error: {:.4} ± {:.4} mm (n = {})\n", e.mean, e.stddev, e.per_landmark.len()));
        text.push_str(&format!("lme_mean_mm = {:e}\nlme_stddev_mm = {:e}\nlme_count = {}\nlme_outside = {}\n", e.mean, e.stddev, e.per_landmark.len(), e.outside.len()));
        if let Some(p) = &a.out_per_landmark {
            let body: String = e.per_landmark.iter().map(|v| format!("{v:e}\n")).collect();
            fs::write(p, body).map_err(io_err(p))?;
        }
    }
    if let Some(cp) = &a.compare_deformation {
        let other = read_deformation(cp)?;
        let s = field_difference_stats(&y, &other)?;
        text.push_str(&format!("field_difference_max_mm = {:e}\nfield_difference_mean_mm = {:e}\n", s.max, s.mean));
        if let Some(p) = &a.out_difference {
            write_volume(&s.magnitude, p)?;
        }
    }
    out.write_all(text.as_bytes()).map_err(so)
}

fn cmd_benchmark(a: BenchmarkArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = BenchmarkConfig {
        dims: a.dims,
        threads: a.threads,
        precisions: a.precision,
        variants: a.pt_variant,
        ops: a.ops,
        reps: a.reps,
        grid_ratio: a.grid_ratio,
        seed: a.seed,
        ..BenchmarkConfig::default()
    };
    if let Some(n) = a.max_iter {
        cfg.registration.lbfgs.max_iterations = n;
    }
    let rep = run_benchmark(&cfg)?;
    let mut text = String::new();
    for c in &rep.agreement {
        text.push_str(&format!("# agreement {} {} max_rel_diff={:e}\n", c.what, c.variant, c.max_relative_difference));
    }
    let table = format_table(&rep.records);
    text.push_str(&table);
    if let Some(p) = &a.out {
        fs::write(p, &table).map_err(io_err(p))?;
    }
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("stdout")))
}

fn cmd_resample(a: ResampleArgs, out: &mut dyn Write) -> Result<()> {
    let input = read_volume(&a.input)?;
    let like = read_header(&a.like)?.grid;
    let res = resample(&input, &like);
    write_volume(&res, &a.out)?;
    let d = like.dims();
    writeln!(out, "resampled onto {}x{}x{}", d[0], d[1], d[2]).map_err(io_err(Path::new("stdout")))
}
