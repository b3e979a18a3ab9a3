//! Limited-memory BFGS with Armijo backtracking.
//!
//! History pairs are only stored when they have positive curvature
//! (`<s, y> > 1e-10 |s| |y|`), which keeps the implicit inverse Hessian
//! positive definite without a Wolfe curvature condition.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::parallel::{det_dot, norm_inf};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored `(s, y)` pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub initial_step: f64,
    pub step_shrink: f64,
    pub max_ls_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 5,
            max_iterations: 100,
            c1: 1e-4,
            initial_step: 1.0,
            step_shrink: 0.5,
            max_ls_steps: 20,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidConfig("L-BFGS memory must be >= 1".into()));
        }
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(Error::InvalidConfig(format!("c1 must lie in (0, 1), got {}", self.c1)));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "step_shrink must lie in (0, 1), got {}",
                self.step_shrink
            )));
        }
        if !(self.initial_step.is_finite() && self.initial_step > 0.0) {
            return Err(Error::InvalidConfig("initial_step must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoppingRules {
    /// Relative change of the objective between accepted iterates.
    pub tol_j: f64,
    /// Gradient infinity norm relative to the initial one.
    pub tol_grad: f64,
    /// Step infinity norm relative to `max(1, |x|_inf)`.
    pub tol_step: f64,
    /// Iterations before the objective and step rules may fire.
    pub min_iterations: usize,
    /// Absolute gradient norm below which the start is taken as stationary.
    pub abs_grad: f64,
}

impl Default for StoppingRules {
    fn default() -> Self {
        Self {
            tol_j: 1e-4,
            tol_grad: 1e-3,
            tol_step: 1e-5,
            min_iterations: 3,
            abs_grad: 1e-10,
        }
    }
}

impl StoppingRules {
    pub fn validate(&self) -> Result<()> {
        let tols = [self.tol_j, self.tol_grad, self.tol_step, self.abs_grad];
        if tols.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidConfig(format!("stopping tolerances must be > 0, got {tols:?}")));
        }
        Ok(())
    }
}

/// Objective value and gradient at one point. `terms` carries optional
/// named parts of the value (for example distance and regularizer) that are
/// copied into the trace.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub terms: Vec<f64>,
}

impl<T> Evaluation<T> {
    pub fn new(value: T, gradient: Vec<T>) -> Self {
        Self {
            value,
            gradient,
            terms: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    /// Initial gradient already below the absolute threshold.
    Stationary,
    GradientTolerance,
    ObjectiveTolerance,
    StepTolerance,
    MaxIterations,
    LineSearchFailed,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Stationary => "stationary",
            Termination::GradientTolerance => "gradient_tolerance",
            Termination::ObjectiveTolerance => "objective_tolerance",
            Termination::StepTolerance => "step_tolerance",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailed => "line_search_failed",
        })
    }
}

/// One accepted iterate (iteration 0 is the starting point).
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub value: f64,
    pub terms: Vec<f64>,
    pub grad_inf: f64,
    pub step: f64,
    pub ls_steps: usize,
    pub evaluations: usize,
}

#[derive(Clone, Debug)]
pub struct Trace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub evaluations: usize,
}

impl Trace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iteration)
    }

    /// Accepted values never increase.
    pub fn is_monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].value <= w[0].value)
    }
}

/// Stored `(s, y)` pairs, oldest first.
#[derive(Clone, Debug, Default)]
pub struct LbfgsHistory<T> {
    pairs: VecDeque<(Vec<T>, Vec<T>)>,
    capacity: usize,
}

impl<T: Real> LbfgsHistory<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Store the pair if it passes the curvature filter; returns whether it did.
    pub fn push(&mut self, s: Vec<T>, y: Vec<T>) -> bool {
        let sy = det_dot(&s, &y).as_f64();
        let ns = det_dot(&s, &s).as_f64().sqrt();
        let ny = det_dot(&y, &y).as_f64().sqrt();
        if !(sy > 1e-10 * ns * ny) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
        true
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[T], &[T])> {
        self.pairs.iter().map(|(s, y)| (s.as_slice(), y.as_slice()))
    }
}

/// Two-loop recursion: approximately `-H g`.
pub fn two_loop_direction<T: Real>(history: &LbfgsHistory<T>, g: &[T]) -> Vec<T> {
    let mut q = g.to_vec();
    let m = history.pairs.len();
    let mut alpha = vec![T::zero(); m];
    let mut rho = vec![T::zero(); m];
    for (i, (s, y)) in history.pairs.iter().enumerate().rev() {
        rho[i] = T::one() / det_dot(s, y);
        alpha[i] = rho[i] * det_dot(s, &q);
        axpy(-alpha[i], y, &mut q);
    }
    let gamma = match history.pairs.back() {
        Some((s, y)) => det_dot(s, y) / det_dot(y, y),
        None => T::one(),
    };
    q.iter_mut().for_each(|v| *v *= gamma);
    for (i, (s, y)) in history.pairs.iter().enumerate() {
        let beta = rho[i] * det_dot(y, &q);
        axpy(alpha[i] - beta, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    y.iter_mut().zip(x).for_each(|(yi, &xi)| *yi += a * xi);
}

/// Minimize `f` from `x0`. Returns the final iterate and its trace.
pub fn lbfgs_minimize<T: Real>(
    mut f: impl FnMut(&[T]) -> Result<Evaluation<T>>,
    x0: &[T],
    cfg: &LbfgsConfig,
    stop: &StoppingRules,
) -> Result<(Vec<T>, Trace)> {
    cfg.validate()?;
    stop.validate()?;

    let mut evaluations = 0usize;
    let mut eval = |x: &[T]| -> Result<Evaluation<T>> {
        let e = f(x)?;
        if e.gradient.len() != x.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                actual: e.gradient.len(),
            });
        }
        Ok(e)
    };

    let mut x = x0.to_vec();
    let mut cur = eval(&x)?;
    evaluations += 1;
    if !cur.value.is_finite() {
        return Err(Error::Numeric("objective is not finite at the starting point".into()));
    }
    let g0 = norm_inf(&cur.gradient).as_f64();
    let mut records = vec![IterationRecord {
        iteration: 0,
        value: cur.value.as_f64(),
        terms: cur.terms.clone(),
        grad_inf: g0,
        step: 0.0,
        ls_steps: 0,
        evaluations,
    }];
    let finish = |x: Vec<T>, records, termination, evaluations| {
        Ok((
            x,
            Trace {
                records,
                termination,
                evaluations,
            },
        ))
    };
    if g0 <= stop.abs_grad {
        return finish(x, records, Termination::Stationary, evaluations);
    }

    let mut history = LbfgsHistory::new(cfg.memory);
    for it in 1..=cfg.max_iterations {
        let mut dir = two_loop_direction(&history, &cur.gradient);
        let mut slope = det_dot(&dir, &cur.gradient);
        if !(slope < T::zero()) || !slope.is_finite() {
            history.clear();
            dir = cur.gradient.iter().map(|&v| -v).collect();
            slope = det_dot(&dir, &cur.gradient);
        }

        // Without curvature information, cap the first trial move to one unit.
        let mut t = cfg.initial_step;
        if history.is_empty() {
            t *= (1.0 / norm_inf(&dir).as_f64()).min(1.0);
        }

        let mut accepted = None;
        let mut ls_steps = 0;
        for _ in 0..cfg.max_ls_steps {
            ls_steps += 1;
            let tt = T::lit(t);
            let trial: Vec<T> = x.iter().zip(&dir).map(|(&xi, &di)| xi + tt * di).collect();
            let e = eval(&trial)?;
            evaluations += 1;
            let bound = cur.value + T::lit(cfg.c1) * tt * slope;
            if e.value.is_finite() && e.value <= bound {
                accepted = Some((trial, e));
                break;
            }
            t *= cfg.step_shrink;
        }
        let Some((x_new, next)) = accepted else {
            return finish(x, records, Termination::LineSearchFailed, evaluations);
        };

        let s: Vec<T> = x_new.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = next.gradient.iter().zip(&cur.gradient).map(|(&a, &b)| a - b).collect();
        let step_inf = norm_inf(&s).as_f64();
        history.push(s, y);

        let prev_value = cur.value.as_f64();
        x = x_new;
        cur = next;
        let g_inf = norm_inf(&cur.gradient).as_f64();
        records.push(IterationRecord {
            iteration: it,
            value: cur.value.as_f64(),
            terms: cur.terms.clone(),
            grad_inf: g_inf,
            step: step_inf,
            ls_steps,
            evaluations,
        });

        if g_inf <= stop.tol_grad * g0 {
            return finish(x, records, Termination::GradientTolerance, evaluations);
        }
        if it >= stop.min_iterations {
            let change = (prev_value - cur.value.as_f64()).abs();
            if change <= stop.tol_j * prev_value.abs().max(f64::MIN_POSITIVE) {
                return finish(x, records, Termination::ObjectiveTolerance, evaluations);
            }
            let x_inf = norm_inf(&x).as_f64();
            if step_inf <= stop.tol_step * x_inf.max(1.0) {
                return finish(x, records, Termination::StepTolerance, evaluations);
            }
        }
    }
    finish(x, records, Termination::MaxIterations, evaluations)
}
