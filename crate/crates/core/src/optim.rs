//! Unconstrained minimizers used for hyperparameter and distribution fits.

use std::cell::RefCell;

use argmin::core::{CostFunction, Error as ArgminError, Executor, Gradient, State, TerminationReason, TerminationStatus};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::neldermead::NelderMead;
use argmin::solver::quasinewton::BFGS;

/// Outcome of a minimization.
#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the gradient norm falls below this.
    pub gtol: f64,
    /// Stop when the change of `f` between iterations falls below this
    /// times `max(1, |f(x0)|)`.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-6,
            ftol: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Stop when the spread of simplex values falls below this.
    pub ftol: f64,
    /// Initial simplex edge length per coordinate.
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            ftol: 1e-10,
            step: 0.5,
        }
    }
}

/// Objective wrapper that caches the last evaluation and remembers the best
/// finite point seen, so a solver failure still yields a usable answer.
struct Tracked<F> {
    f: RefCell<F>,
    last: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
    best: RefCell<Option<(f64, Vec<f64>)>>,
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Tracked<F> {
    fn new(f: F) -> Self {
        Self { f: RefCell::new(f), last: RefCell::new(None), best: RefCell::new(None) }
    }

    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        if let Some((lx, lf, lg)) = &*self.last.borrow() {
            if lx.as_slice() == x {
                return (*lf, lg.clone());
            }
        }
        let (v, g) = (self.f.borrow_mut())(x);
        let v = if v.is_finite() { v } else { f64::INFINITY };
        if v.is_finite() && self.best.borrow().as_ref().map_or(true, |(b, _)| v < *b) {
            *self.best.borrow_mut() = Some((v, x.to_vec()));
        }
        *self.last.borrow_mut() = Some((x.to_vec(), v, g.clone()));
        (v, g)
    }

    fn result(&self, x0: &[f64], iterations: usize, converged: bool) -> Minimum {
        match self.best.borrow().clone() {
            Some((f, x)) => Minimum { x, f, iterations, converged },
            None => Minimum { x: x0.to_vec(), f: f64::INFINITY, iterations, converged: false },
        }
    }
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> CostFunction for &Tracked<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, ArgminError> {
        Ok(self.eval(x).0)
    }
}

impl<F: FnMut(&[f64]) -> (f64, Vec<f64>)> Gradient for &Tracked<F> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> Result<Vec<f64>, ArgminError> {
        Ok(self.eval(x).1)
    }
}

fn outcome<S: State>(state: &S) -> (usize, bool) {
    let converged = matches!(
        state.get_termination_status(),
        TerminationStatus::Terminated(r) if *r != TerminationReason::MaxItersReached
    );
    (state.get_iter() as usize, converged)
}

/// Quasi-Newton BFGS with a More-Thuente line search.
///
/// `fg` returns the objective and its gradient. Non-finite objective values
/// count as `+inf`; the best finite point evaluated is returned.
pub fn bfgs<F>(fg: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let problem = Tracked::new(fg);
    let f0 = problem.eval(x0).0;
    if !f0.is_finite() {
        return Minimum { x: x0.to_vec(), f: f64::INFINITY, iterations: 0, converged: false };
    }
    let eye: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let solver = BFGS::new(MoreThuenteLineSearch::new())
        .with_tolerance_grad(opts.gtol)
        .and_then(|s| s.with_tolerance_cost(opts.ftol * f0.abs().max(1.0)));
    let Ok(solver) = solver else {
        return problem.result(x0, 0, false);
    };
    let run = Executor::new(&problem, solver)
        .configure(|s| s.param(x0.to_vec()).inv_hessian(eye).max_iters(opts.max_iter as u64))
        .run();
    let (iterations, converged) = run.as_ref().map_or((opts.max_iter, false), |r| outcome(r.state()));
    problem.result(x0, iterations, converged)
}

/// Derivative-free downhill simplex.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let problem = Tracked::new(move |x: &[f64]| (f(x), Vec::new()));
    let mut simplex = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += opts.step;
        simplex.push(v);
    }
    let Ok(solver) = NelderMead::new(simplex).with_sd_tolerance(opts.ftol) else {
        return problem.result(x0, 0, false);
    };
    let run = Executor::new(&problem, solver).configure(|s| s.max_iters(opts.max_iter as u64)).run();
    let (iterations, converged) = run.as_ref().map_or((opts.max_iter, false), |r| outcome(r.state()));
    problem.result(x0, iterations, converged)
}

/// Maps an unconstrained value onto `(lo, hi)` through a logistic curve.
pub fn to_box(z: f64, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) / (1.0 + (-z).exp())
}

/// Derivative of [`to_box`] with respect to `z`.
pub fn to_box_deriv(z: f64, lo: f64, hi: f64) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    (hi - lo) * s * (1.0 - s)
}

/// Inverse of [`to_box`]; `v` is clamped slightly inside the box.
pub fn from_box(v: f64, lo: f64, hi: f64) -> f64 {
    let t = ((v - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
    (t / (1.0 - t)).ln()
}
