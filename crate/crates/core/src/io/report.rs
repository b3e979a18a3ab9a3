//! Plain-text registration report: `key = value` lines followed by one
//! whitespace-delimited row per accepted iterate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::multilevel::RegistrationReport;

pub const TRACE_HEADER: &str = "level iteration J D S grad_inf step ls_steps evaluations";

fn dims(d: [usize; 3]) -> String {
    format!("{}x{}x{}", d[0], d[1], d[2])
}

/// Render `report`; `extra` pairs are appended to the key-value block.
pub fn format_report(report: &RegistrationReport, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    let kv = |s: &mut String, k: &str, v: &dyn std::fmt::Display| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv(&mut s, "precision", &report.precision);
    kv(&mut s, "pt_variant", &report.pt_variant.name());
    kv(&mut s, "workers", &report.workers);
    kv(&mut s, "alpha", &report.alpha);
    kv(&mut s, "tau", &report.ngf.tau);
    kv(&mut s, "rho", &report.ngf.rho);
    kv(&mut s, "levels", &report.levels.len());
    kv(&mut s, "pyramid_seconds", &format!("{:.6}", report.pyramid_seconds));
    kv(&mut s, "total_seconds", &format!("{:.6}", report.total_seconds));
    kv(&mut s, "final_grad_inf", &report.final_grad_inf);
    for l in &report.levels {
        let p = format!("level.{}", l.level);
        kv(&mut s, &format!("{p}.image_dims"), &dims(l.image_dims));
        kv(&mut s, &format!("{p}.def_dims"), &dims(l.def_dims));
        kv(&mut s, &format!("{p}.iterations"), &l.iterations);
        kv(&mut s, &format!("{p}.evaluations"), &l.evaluations);
        kv(&mut s, &format!("{p}.termination"), &l.termination);
        kv(&mut s, &format!("{p}.monotone"), &l.is_monotone());
        kv(&mut s, &format!("{p}.seconds"), &format!("{:.6}", l.seconds));
    }
    for (k, v) in extra {
        kv(&mut s, k, v);
    }
    s.push_str("\n[trace]\n");
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for l in &report.levels {
        for r in &l.trace {
            let term = |i: usize| r.terms.get(i).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                "{} {} {:e} {:e} {:e} {:e} {:e} {} {}",
                l.level,
                r.iteration,
                r.value,
                term(0),
                term(1),
                r.grad_inf,
                r.step,
                r.ls_steps,
                r.evaluations
            );
        }
    }
    s
}

pub fn write_report(report: &RegistrationReport, extra: &[(&str, String)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_report(report, extra)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Key-value block of a rendered report.
pub fn parse_report_keys(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .take_while(|l| !l.starts_with('['))
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// Trace rows of a rendered report, as numbers in [`TRACE_HEADER`] order.
pub fn parse_report_trace(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip_while(|l| *l != "[trace]")
        .skip(2)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lbfgs::{IterationRecord, Termination};
    use crate::multilevel::LevelReport;
    use crate::ngf::NgfParams;
    use crate::real::Precision;
    use crate::transfer::PtVariant;

    fn sample() -> RegistrationReport {
        let rec = |i, v| IterationRecord {
            iteration: i,
            value: v,
            terms: vec![v * 0.75, v * 0.25],
            grad_inf: 0.5,
            step: 1.0,
            ls_steps: 0,
            evaluations: i + 1,
        };
        RegistrationReport {
            precision: Precision::F64,
            pt_variant: PtVariant::Gather,
            workers: 2,
            alpha: 1.0,
            ngf: NgfParams::default(),
            levels: vec![LevelReport {
                level: 1,
                image_dims: [8, 8, 8],
                def_dims: [2, 2, 2],
                iterations: 2,
                evaluations: 3,
                termination: Termination::GradientTolerance,
                trace: vec![rec(0, 4.0), rec(1, 2.0), rec(2, 1.0)],
                seconds: 0.1,
            }],
            pyramid_seconds: 0.01,
            total_seconds: 0.2,
            final_grad_inf: 1e-3,
        }
    }

    #[test]
    fn keys_and_trace_parse_back() {
        let text = format_report(&sample(), &[("final_max_displacement_voxels", "0.25".into())]);
        let keys = parse_report_keys(&text);
        assert_eq!(keys["pt_variant"], "gather");
        assert_eq!(keys["level.1.def_dims"], "2x2x2");
        assert_eq!(keys["level.1.monotone"], "true");
        assert_eq!(keys["final_max_displacement_voxels"], "0.25");
        let rows = parse_report_trace(&text);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2][..5], [1.0, 2.0, 1.0, 0.75, 0.25]);
    }
}
