//! Log-barrier path following with damped Newton centering.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A smooth convex program in barrier form. Implementors expose
/// `t * f0(x) + phi(x)`, where `phi` is a self-concordant barrier whose
/// parameter (the duality-gap multiplier) is `barrier_weight`.
pub(crate) trait BarrierProblem {
    fn dim(&self) -> usize;
    fn barrier_weight(&self) -> f64;
    fn objective(&self, x: &[f64]) -> f64;
    /// `None` outside the barrier's domain.
    fn value(&self, x: &[f64], t: f64) -> Option<f64>;
    /// Overwrites `grad` and `hess`; `x` is inside the domain.
    fn derivatives(&self, x: &[f64], t: f64, grad: &mut DVector<f64>, hess: &mut DMatrix<f64>);
}

#[derive(Clone, Debug)]
pub(crate) struct BarrierOptions {
    /// Stop once `m / t <= rel_gap * max(1, |f0|)`.
    pub rel_gap: f64,
    pub mu: f64,
    pub newton_tol: f64,
    pub max_newton_per_stage: usize,
    pub max_stages: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        BarrierOptions {
            rel_gap: 1e-9,
            mu: 30.0,
            // Centering error adds about decrement^2 / t to f0, far below
            // the m / t gap.
            newton_tol: 1e-6,
            max_newton_per_stage: 60,
            max_stages: 40,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BarrierOutcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub newton_iterations: usize,
    /// `m / t` relative to `max(1, |f0|)` at exit.
    pub rel_gap: f64,
}

/// What the caller's monitor wants after a centering stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Monitor {
    Continue,
    Stop,
}

/// Minimizes `f0` from a strictly feasible `x0`, starting at barrier
/// parameter `t0` (or a scale-matched default). After each centering stage
/// `monitor(x, f0, gap)` may end the solve early, where `gap = m / t`
/// bounds `f0 - f*`.
pub(crate) fn minimize<P: BarrierProblem>(
    problem: &P,
    x0: Vec<f64>,
    t0: Option<f64>,
    opts: &BarrierOptions,
    mut monitor: impl FnMut(&[f64], f64, f64) -> Monitor,
) -> Result<BarrierOutcome> {
    let n = problem.dim();
    if x0.len() != n {
        return Err(Error::Numerical(format!(
            "start point has {} coordinates, problem has {n}",
            x0.len()
        )));
    }
    let m = problem.barrier_weight();
    let mut x = x0;
    if problem.value(&x, 1.0).is_none() {
        return Err(Error::Numerical("start point is not strictly feasible".into()));
    }
    let mut t = t0.unwrap_or_else(|| m / problem.objective(&x).abs().max(1e-3));
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    let mut last_t = t;
    let mut newton_iterations = 0;

    for _ in 0..opts.max_stages {
        newton_iterations += center(problem, &mut x, t, opts, &mut grad, &mut hess)?;
        last_t = t;
        let f0 = problem.objective(&x);
        let gap = m / t;
        let done = gap <= opts.rel_gap * f0.abs().max(1.0);
        if monitor(&x, f0, gap) == Monitor::Stop || done {
            break;
        }
        t *= opts.mu;
    }

    let objective = problem.objective(&x);
    let rel_gap = m / last_t / objective.abs().max(1.0);
    Ok(BarrierOutcome {
        x,
        objective,
        newton_iterations,
        rel_gap,
    })
}

/// Damped Newton on `t f0 + phi`; returns the number of Newton steps.
fn center<P: BarrierProblem>(
    problem: &P,
    x: &mut Vec<f64>,
    t: f64,
    opts: &BarrierOptions,
    grad: &mut DVector<f64>,
    hess: &mut DMatrix<f64>,
) -> Result<usize> {
    let n = x.len();
    let mut trial = vec![0.0; n];
    let mut value = problem
        .value(x, t)
        .ok_or_else(|| Error::Numerical("iterate left the barrier domain".into()))?;
    for it in 0..opts.max_newton_per_stage {
        problem.derivatives(x, t, grad, hess);
        let step = newton_step(hess, grad)?;
        let slope = grad.dot(&step);
        let decrement2 = -slope;
        if !(decrement2 > 0.0) || decrement2 / 2.0 <= opts.newton_tol {
            return Ok(it);
        }
        // Inside the quadratic region a full step stays feasible and the
        // Armijo test is below rounding at large t.
        let full_step_safe = decrement2 < 0.0625;
        let mut s = 1.0;
        loop {
            for i in 0..n {
                trial[i] = x[i] + s * step[i];
            }
            match problem.value(&trial, t) {
                Some(v) if full_step_safe || v <= value + 0.25 * s * slope => {
                    value = v;
                    break;
                }
                _ => {}
            }
            s *= 0.5;
            if s < 1e-14 {
                // No representable progress: the iterate is as centered as
                // floating point allows.
                return Ok(it);
            }
        }
        x.copy_from_slice(&trial);
    }
    Ok(opts.max_newton_per_stage)
}

/// Solves `H d = -g`, adding diagonal regularization if `H` is not
/// numerically positive definite.
fn newton_step(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = hess.clone().cholesky() {
        return Ok(-ch.solve(grad));
    }
    let scale = hess.diagonal().amax().max(1e-300);
    let mut reg = 1e-12 * scale;
    for _ in 0..20 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += reg;
        }
        if let Some(ch) = h.cholesky() {
            return Ok(-ch.solve(grad));
        }
        reg *= 100.0;
    }
    Err(Error::Numerical("Newton system is not positive definite".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// min c.x over the box (0, 1)^n.
    struct BoxLp {
        c: Vec<f64>,
    }

    impl BarrierProblem for BoxLp {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn barrier_weight(&self) -> f64 {
            2.0 * self.c.len() as f64
        }
        fn objective(&self, x: &[f64]) -> f64 {
            self.c.iter().zip(x).map(|(c, x)| c * x).sum()
        }
        fn value(&self, x: &[f64], t: f64) -> Option<f64> {
            if x.iter().any(|&v| v <= 0.0 || v >= 1.0) {
                return None;
            }
            Some(t * self.objective(x) - x.iter().map(|v| v.ln() + (1.0 - v).ln()).sum::<f64>())
        }
        fn derivatives(&self, x: &[f64], t: f64, g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
            h.fill(0.0);
            for i in 0..x.len() {
                g[i] = t * self.c[i] - 1.0 / x[i] + 1.0 / (1.0 - x[i]);
                h[(i, i)] = 1.0 / (x[i] * x[i]) + 1.0 / ((1.0 - x[i]) * (1.0 - x[i]));
            }
        }
    }

    #[test]
    fn box_lp_reaches_vertex() {
        let p = BoxLp {
            c: vec![1.0, -2.0, 0.5],
        };
        let out = minimize(&p, vec![0.5; 3], None, &BarrierOptions::default(), |_, _, _| {
            Monitor::Continue
        })
        .unwrap();
        assert!(out.rel_gap <= 1e-9);
        assert!((out.objective + 2.0).abs() < 1e-8);
        assert!(out.x[0] < 1e-8 && out.x[1] > 1.0 - 1e-8);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let p = BoxLp { c: vec![1.0] };
        assert!(minimize(&p, vec![2.0], None, &BarrierOptions::default(), |_, _, _| {
            Monitor::Continue
        })
        .is_err());
    }

    #[test]
    fn monitor_can_stop_early() {
        let p = BoxLp { c: vec![1.0] };
        let mut stages = 0;
        let out = minimize(&p, vec![0.5], None, &BarrierOptions::default(), |_, _, _| {
            stages += 1;
            Monitor::Stop
        })
        .unwrap();
        assert_eq!(stages, 1);
        assert!(out.rel_gap > 1e-9);
    }
}
