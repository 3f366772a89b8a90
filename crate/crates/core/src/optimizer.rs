//! L-BFGS with a strong-Wolfe line search, plus plain fixed-step descent.
//!
//! The line search brackets a step satisfying the strong Wolfe conditions and
//! then zooms with safeguarded cubic interpolation. If that fails to produce
//! sufficient decrease, a backtracking Armijo search is tried once before the
//! run stops with [`Termination::LineSearchFailure`], returning the best
//! iterate seen.

use std::collections::VecDeque;

use log::debug;

use crate::coremath::Vector;
use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Lbfgs,
    FixedStepGd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    /// Cap on outer iterations (accepted steps).
    pub max_iterations: usize,
    /// Optional cap on objective evaluations, line-search probes included.
    pub max_evaluations: Option<usize>,
    /// Applied both to the relative cost change and to the gradient's max-norm.
    pub tolerance: f64,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub mode: Mode,
    /// Learning rate, used by [`Mode::FixedStepGd`] only.
    pub eta: f64,
    /// Scheduling for objectives evaluated under this config.
    pub exec: Exec,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            memory: 20,
            max_iterations: 400,
            max_evaluations: None,
            tolerance: 1e-9,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            mode: Mode::Lbfgs,
            eta: 0.1,
            exec: Exec::Sequential,
        }
    }
}

impl OptimizerConfig {
    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.wolfe_c1 && self.wolfe_c1 < self.wolfe_c2 && self.wolfe_c2 < 1.0) {
            return Err(Error::Config(format!(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1, got c1={} c2={}",
                self.wolfe_c1, self.wolfe_c2
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.memory == 0 {
            return Err(Error::Config("L-BFGS memory must be at least 1".into()));
        }
        if self.mode == Mode::FixedStepGd && !(self.eta > 0.0) {
            return Err(Error::Config("fixed-step descent needs eta > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    MaxEvaluations,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerReport {
    pub final_cost: f64,
    pub iterations_used: usize,
    pub evaluations: usize,
    /// Max-norm of the gradient at the returned point.
    pub gradient_norm: f64,
    /// Cost at the start point followed by the cost of every accepted iterate.
    pub cost_trace: Vec<f64>,
    pub termination: Termination,
}

/// Per-iteration snapshot handed to observers.
#[derive(Debug, Clone, Copy)]
pub struct IterationInfo {
    pub iteration: usize,
    pub cost: f64,
    pub gradient_norm: f64,
    /// ∇Jᵀd for the search direction taken at this iteration.
    pub directional_derivative: f64,
    pub step: f64,
}

fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Counts evaluations and maps non-finite costs to +inf so comparisons in the
/// line search behave.
struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&Vector) -> (f64, Vector)> Counted<F> {
    fn eval(&mut self, x: &Vector) -> (f64, Vector) {
        self.evals += 1;
        let (c, g) = (self.f)(x);
        if c.is_finite() && g.iter().all(|v| v.is_finite()) {
            (c, g)
        } else {
            (f64::INFINITY, g)
        }
    }
}

pub fn minimize<F>(objective: F, x0: Vector, cfg: &OptimizerConfig) -> Result<(Vector, OptimizerReport)>
where
    F: FnMut(&Vector) -> (f64, Vector),
{
    minimize_observed(objective, x0, cfg, |_| {})
}

pub fn minimize_observed<F, O>(
    objective: F,
    x0: Vector,
    cfg: &OptimizerConfig,
    observer: O,
) -> Result<(Vector, OptimizerReport)>
where
    F: FnMut(&Vector) -> (f64, Vector),
    O: FnMut(&IterationInfo),
{
    cfg.validate()?;
    match cfg.mode {
        Mode::Lbfgs => lbfgs(objective, x0, cfg, observer),
        Mode::FixedStepGd => fixed_step_descent(objective, x0, cfg, observer),
    }
}

fn converged_by_change(f_old: f64, f_new: f64, tol: f64) -> bool {
    (f_old - f_new).abs() <= tol * f_old.abs().max(f_new.abs())
}

struct Pair {
    s: Vector,
    y: Vector,
    rho: f64,
}

fn two_loop(g: &Vector, history: &VecDeque<Pair>) -> Vector {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for p in history.iter().rev() {
        let a = p.rho * p.s.dot(&q);
        q.scaled_add(-a, &p.y);
        alphas.push(a);
    }
    let gamma = history.back().map(|p| p.s.dot(&p.y) / p.y.dot(&p.y)).unwrap_or(1.0);
    let mut r = q * gamma;
    for (p, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * p.y.dot(&r);
        r.scaled_add(a - b, &p.s);
    }
    -r
}

fn lbfgs<F, O>(objective: F, x0: Vector, cfg: &OptimizerConfig, mut observer: O) -> Result<(Vector, OptimizerReport)>
where
    F: FnMut(&Vector) -> (f64, Vector),
    O: FnMut(&IterationInfo),
{
    let mut obj = Counted { f: objective, evals: 0 };
    let mut x = x0;
    let (mut f, mut g) = obj.eval(&x);
    if !f.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let mut trace = vec![f];
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;

    let finish = |x: Vector, f: f64, g: &Vector, trace: Vec<f64>, it: usize, ev: usize, t| {
        let report = OptimizerReport {
            final_cost: f,
            iterations_used: it,
            evaluations: ev,
            gradient_norm: inf_norm(g),
            cost_trace: trace,
            termination: t,
        };
        Ok((x, report))
    };

    if inf_norm(&g) < cfg.tolerance {
        let ev = obj.evals;
        return finish(x, f, &g, trace, 0, ev, Termination::Converged);
    }

    let termination = loop {
        if iterations >= cfg.max_iterations {
            break Termination::MaxIterations;
        }
        if cfg.max_evaluations.is_some_and(|cap| obj.evals >= cap) {
            break Termination::MaxEvaluations;
        }
        iterations += 1;

        let mut d = two_loop(&g, &history);
        let mut gtd = g.dot(&d);
        if !(gtd < 0.0) || !gtd.is_finite() {
            history.clear();
            d = -&g;
            gtd = -g.dot(&g);
        }
        let t0 = if history.is_empty() {
            (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0)
        } else {
            1.0
        };

        let step = strong_wolfe(&mut obj, &x, t0, &d, f, &g, gtd, cfg)
            .or_else(|| backtracking_armijo(&mut obj, &x, t0, &d, f, gtd, cfg.wolfe_c1));
        let Some((t, f_new, g_new)) = step else {
            debug!("line search failed at iteration {iterations}, cost {f}");
            iterations -= 1;
            break Termination::LineSearchFailure;
        };

        let s = &d * t;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back(Pair {
                s: s.clone(),
                y,
                rho: 1.0 / sy,
            });
        }
        x += &s;
        let f_old = f;
        f = f_new;
        g = g_new;
        trace.push(f);
        let gnorm = inf_norm(&g);
        observer(&IterationInfo {
            iteration: iterations,
            cost: f,
            gradient_norm: gnorm,
            directional_derivative: gtd,
            step: t,
        });

        if gnorm < cfg.tolerance || converged_by_change(f_old, f, cfg.tolerance) || inf_norm(&s) < cfg.tolerance {
            break Termination::Converged;
        }
    };
    let ev = obj.evals;
    finish(x, f, &g, trace, iterations, ev, termination)
}

/// Minimizer of the cubic interpolating two points with slopes, clamped to
/// `bounds`. Falls back to bisection when the cubic has no real minimizer.
fn cubic_interpolate(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if x1 <= x2 { (x1, x2) } else { (x2, x1) });
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    let candidate = if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        }
    } else {
        f64::NAN
    };
    if candidate.is_finite() {
        candidate.clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    }
}

#[derive(Clone)]
struct Probe {
    t: f64,
    f: f64,
    g: Vector,
    gtd: f64,
}

const MAX_LINE_SEARCH: usize = 25;

/// Returns `(t, f, g)` for a step with sufficient decrease, or `None`.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F: FnMut(&Vector) -> (f64, Vector)>(
    obj: &mut Counted<F>,
    x: &Vector,
    t_init: f64,
    d: &Vector,
    f0: f64,
    g0: &Vector,
    gtd0: f64,
    cfg: &OptimizerConfig,
) -> Option<(f64, f64, Vector)> {
    let (c1, c2) = (cfg.wolfe_c1, cfg.wolfe_c2);
    let d_norm = inf_norm(d);
    let probe = |obj: &mut Counted<F>, t: f64| {
        let (f, g) = obj.eval(&(x + &(d * t)));
        let gtd = g.dot(d);
        Probe { t, f, g, gtd }
    };

    let mut cur = probe(obj, t_init);
    let mut prev = Probe {
        t: 0.0,
        f: f0,
        g: g0.clone(),
        gtd: gtd0,
    };
    let mut ls_iter = 0;
    let mut done = false;
    let mut bracket: Vec<Probe>;

    loop {
        if ls_iter >= MAX_LINE_SEARCH {
            bracket = vec![
                Probe {
                    t: 0.0,
                    f: f0,
                    g: g0.clone(),
                    gtd: gtd0,
                },
                cur,
            ];
            break;
        }
        if cur.f > f0 + c1 * cur.t * gtd0 || (ls_iter > 1 && cur.f >= prev.f) {
            bracket = vec![prev, cur];
            break;
        }
        if cur.gtd.abs() <= -c2 * gtd0 {
            bracket = vec![cur];
            done = true;
            break;
        }
        if cur.gtd >= 0.0 {
            bracket = vec![prev, cur];
            break;
        }
        let min_step = cur.t + 0.01 * (cur.t - prev.t);
        let max_step = cur.t * 10.0;
        let t_next = cubic_interpolate(
            prev.t,
            prev.f,
            prev.gtd,
            cur.t,
            cur.f,
            cur.gtd,
            Some((min_step, max_step)),
        );
        let next = probe(obj, t_next);
        prev = std::mem::replace(&mut cur, next);
        ls_iter += 1;
    }

    if !done {
        // zoom
        let mut insufficient_progress = false;
        let (mut low, mut high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
        while ls_iter < MAX_LINE_SEARCH {
            let (b0, b1) = (bracket[0].t, bracket[1].t);
            if (b1 - b0).abs() * d_norm < cfg.tolerance.min(1e-9) {
                break;
            }
            let mut t = cubic_interpolate(b0, bracket[0].f, bracket[0].gtd, b1, bracket[1].f, bracket[1].gtd, None);
            let (bmin, bmax) = (b0.min(b1), b0.max(b1));
            let eps = 0.1 * (bmax - bmin);
            if (bmax - t).min(t - bmin) < eps {
                if insufficient_progress || t >= bmax || t <= bmin {
                    t = if (t - bmax).abs() < (t - bmin).abs() {
                        bmax - eps
                    } else {
                        bmin + eps
                    };
                    insufficient_progress = false;
                } else {
                    insufficient_progress = true;
                }
            } else {
                insufficient_progress = false;
            }
            let p = probe(obj, t);
            ls_iter += 1;
            if p.f > f0 + c1 * t * gtd0 || p.f >= bracket[low].f {
                bracket[high] = p;
                (low, high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
            } else {
                if p.gtd.abs() <= -c2 * gtd0 {
                    done = true;
                } else if p.gtd * (bracket[high].t - bracket[low].t) >= 0.0 {
                    bracket[high] = bracket[low].clone();
                }
                bracket[low] = p;
            }
            if done {
                break;
            }
        }
        let best = bracket.swap_remove(low);
        bracket = vec![best];
    }

    let best = bracket.pop().expect("bracket is never empty");
    let sufficient = best.t > 0.0 && best.f.is_finite() && best.f <= f0 + c1 * best.t * gtd0 && best.f < f0;
    sufficient.then_some((best.t, best.f, best.g))
}

fn backtracking_armijo<F: FnMut(&Vector) -> (f64, Vector)>(
    obj: &mut Counted<F>,
    x: &Vector,
    t_init: f64,
    d: &Vector,
    f0: f64,
    gtd0: f64,
    c1: f64,
) -> Option<(f64, f64, Vector)> {
    let mut t = t_init;
    for _ in 0..MAX_LINE_SEARCH * 2 {
        let (f, g) = obj.eval(&(x + &(d * t)));
        if f.is_finite() && f <= f0 + c1 * t * gtd0 && f < f0 {
            return Some((t, f, g));
        }
        // quadratic fit through f0, gtd0 and f(t), kept within [0.1t, 0.5t]
        let t_quad = if f.is_finite() {
            -gtd0 * t * t / (2.0 * (f - f0 - gtd0 * t))
        } else {
            f64::NAN
        };
        t = if t_quad.is_finite() {
            t_quad.clamp(0.1 * t, 0.5 * t)
        } else {
            0.5 * t
        };
    }
    None
}

/// `x ← x − η∇J` until the tolerance test passes or the cap is hit. Aborts
/// with [`Error::Diverged`] once the cost has risen ten steps in a row.
pub fn fixed_step_descent<F, O>(
    objective: F,
    x0: Vector,
    cfg: &OptimizerConfig,
    mut observer: O,
) -> Result<(Vector, OptimizerReport)>
where
    F: FnMut(&Vector) -> (f64, Vector),
    O: FnMut(&IterationInfo),
{
    const DIVERGENCE_RUN: usize = 10;
    let mut obj = Counted { f: objective, evals: 0 };
    let mut x = x0;
    let (mut f, mut g) = obj.eval(&x);
    if !f.is_finite() {
        return Err(Error::NonFiniteStart);
    }
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut rising = 0;
    let mut termination = Termination::MaxIterations;

    if inf_norm(&g) < cfg.tolerance {
        termination = Termination::Converged;
    } else {
        while iterations < cfg.max_iterations {
            if cfg.max_evaluations.is_some_and(|cap| obj.evals >= cap) {
                termination = Termination::MaxEvaluations;
                break;
            }
            iterations += 1;
            let gtd = -g.dot(&g);
            x.scaled_add(-cfg.eta, &g);
            let (f_new, g_new) = obj.eval(&x);
            if f_new > f || !f_new.is_finite() {
                rising += 1;
                if rising >= DIVERGENCE_RUN {
                    return Err(Error::Diverged {
                        steps: rising,
                        cost: f_new,
                    });
                }
            } else {
                rising = 0;
            }
            let f_old = f;
            f = f_new;
            g = g_new;
            trace.push(f);
            let gnorm = inf_norm(&g);
            observer(&IterationInfo {
                iteration: iterations,
                cost: f,
                gradient_norm: gnorm,
                directional_derivative: gtd,
                step: cfg.eta,
            });
            if gnorm < cfg.tolerance || (f.is_finite() && converged_by_change(f_old, f, cfg.tolerance)) {
                termination = Termination::Converged;
                break;
            }
        }
    }
    let report = OptimizerReport {
        final_cost: f,
        iterations_used: iterations,
        evaluations: obj.evals,
        gradient_norm: inf_norm(&g),
        cost_trace: trace,
        termination,
    };
    Ok((x, report))
}
