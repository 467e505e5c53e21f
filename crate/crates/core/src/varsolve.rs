//! Grid solvers for the variational rate constants.
//!
//! All functionals are minimized over the discrete unit sphere
//! `{ψ : h^d Σ ψ² = 1}` by projected gradient descent with Barzilai–Borwein
//! steps, a nonmonotone Armijo test and renormalization after every step.
//! `ρ` denotes the density `ψ²`, optionally convolved with a mollifier.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::grid::{energy_and_gradient, inner, l2_norm, Boundary, Grid, GridFunction, Mollifier};
use crate::kernel::Covariance;
use crate::math::{integrate, unit_sphere_area};
use crate::rng::init_rng;
use crate::scenery::Cumulant;

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Stop once the projected gradient norm falls below this times `max(1, |f|)`.
    pub gradient_tolerance: f64,
    /// Stop once the objective changed by less than `stall_tolerance` (relative) over this many iterations.
    pub stall_window: usize,
    pub stall_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            max_iterations: 50_000,
            gradient_tolerance: 1e-8,
            stall_window: 50,
            stall_tolerance: 1e-9,
            restarts: 5,
            seed: 0,
        }
    }
}

/// Shared data of one variational computation: covariance, mesh, mollifier and optimizer settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RateProblem {
    pub covariance: Covariance,
    pub grid: Grid,
    /// Mollifier width; `None` means no smoothing.
    pub delta: Option<f64>,
    pub optimizer: OptimizerSettings,
}

impl RateProblem {
    pub fn new(covariance: Covariance, radius: f64, m: usize, boundary: Boundary) -> Result<Self> {
        let grid = Grid::new(covariance.dim(), radius, m, boundary)?;
        Ok(RateProblem { covariance, grid, delta: None, optimizer: OptimizerSettings::default() })
    }

    pub fn with_delta(mut self, delta: Option<f64>) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_optimizer(mut self, optimizer: OptimizerSettings) -> Self {
        self.optimizer = optimizer;
        self
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }
}

/// Result of the inner maximization `Φ_H(ρ, u) = sup_{γ≥0} [γu - h^d Σ H(γρ)]`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PhiValue {
    pub value: f64,
    pub gamma: f64,
    /// The supremum is approached only as `γ → ∞` (reported as `+∞`).
    pub infinite: bool,
}

const GAMMA_CEILING: f64 = 1e18;

/// `Φ_H(ρ, u)` and its maximizer `γ*`, found by bracketing the root of
/// `u - h^d Σ ρ H'(γρ)` and refining it by safeguarded regula falsi.
pub fn phi_h<C: Cumulant + ?Sized>(grid: &Grid, rho: &[f64], u: f64, h: &C, gamma_hint: Option<f64>) -> PhiValue {
    let hd = grid.cell_volume();
    let slope = |g: f64| u - hd * rho.iter().map(|&r| r * h.h_prime(g * r)).sum::<f64>();
    let value = |g: f64| g * u - hd * rho.iter().map(|&r| h.h(g * r)).sum::<f64>();
    if slope(0.0) <= 0.0 {
        return PhiValue { value: 0.0, gamma: 0.0, infinite: false };
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    if let Some(g) = gamma_hint.filter(|g| *g > 0.0 && g.is_finite()) {
        if slope(g / 1.1) > 0.0 {
            lo = g / 1.1;
            hi = g * 1.1;
        } else {
            hi = g / 1.1;
        }
    }
    let mut s_hi = slope(hi);
    while s_hi > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > GAMMA_CEILING {
            return PhiValue { value: f64::INFINITY, gamma: f64::INFINITY, infinite: true };
        }
        s_hi = slope(hi);
    }
    let mut s_lo = slope(lo);
    let tol = 1e-12 * u;
    let mut side = 0i32;
    let mut gamma = hi;
    for _ in 0..300 {
        gamma = (lo * s_hi - hi * s_lo) / (s_hi - s_lo);
        if !(gamma > lo && gamma < hi) {
            gamma = 0.5 * (lo + hi);
        }
        let s = slope(gamma);
        if s.abs() <= tol || hi - lo <= 1e-15 * hi {
            break;
        }
        if s > 0.0 {
            lo = gamma;
            s_lo = s;
            if side == 1 {
                s_hi *= 0.5;
            }
            side = 1;
        } else {
            hi = gamma;
            s_hi = s;
            if side == -1 {
                s_lo *= 0.5;
            }
            side = -1;
        }
    }
    PhiValue { value: value(gamma), gamma, infinite: false }
}

/// The functionals minimized on the unit sphere.
#[derive(Copy, Clone)]
pub enum Functional<'a> {
    /// `E(ψ) + D ‖ρ‖_p^{-q}` with `p = q/(q-1)`.
    KDq { d_coef: f64, q: f64 },
    /// `E(ψ) ‖ψ‖_{2p}^{-4q/d}`: scale-invariant form whose infimum is `χ_{d,p}`.
    ChiRatio { q: f64 },
    /// `E(ψ) + Φ_H(ρ, u)`.
    KH { cumulant: &'a dyn Cumulant, u: f64 },
}

/// One evaluation of a functional.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// Partial derivatives with respect to the grid values of `ψ`.
    pub gradient: Vec<f64>,
    pub gamma: Option<f64>,
    pub infinite: bool,
    /// Part of `value` that only pins the scale of scale-invariant functionals.
    pub penalty: f64,
}

/// Weight of the term `(ln ‖ψ‖_{2p}^{2p} - ln N₀)²` that pins the scale of the ratio functional.
/// The ratio is scale invariant in the continuum but decreases on the grid as profiles
/// shrink toward one cell, so without the pin the minimizer collapses onto a spike.
const SCALE_PIN: f64 = 1.0;

/// Evaluates a functional on a fixed problem; carries the `γ*` warm start between calls.
pub struct Evaluator<'a> {
    problem: &'a RateProblem,
    functional: Functional<'a>,
    mollifier: Option<Mollifier>,
    gamma_hint: Option<f64>,
    scale_anchor: f64,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a RateProblem, functional: Functional<'a>) -> Result<Self> {
        match functional {
            Functional::KDq { d_coef, q } => {
                if !(q > 1.0) || !(d_coef > 0.0) {
                    return Err(invalid("K_{D,q} needs D > 0 and q > 1"));
                }
            }
            Functional::ChiRatio { q } => {
                if !(q > 1.0) {
                    return Err(invalid("χ needs q > 1"));
                }
            }
            Functional::KH { u, .. } => {
                if !(u > 0.0) {
                    return Err(invalid("K_H needs u > 0"));
                }
            }
        }
        let mollifier = match (functional, problem.delta) {
            (Functional::ChiRatio { .. }, _) | (_, None) => None,
            (_, Some(delta)) => Some(Mollifier::new(&problem.grid, delta)?),
        };
        // ‖ψ‖_{2p}^{2p} of a gaussian density of standard deviation R/8
        let scale_anchor = match functional {
            Functional::ChiRatio { q } => {
                let p = q / (q - 1.0);
                let d = problem.dim() as f64;
                let s = problem.grid.radius() / 8.0;
                -d * (p - 1.0) / 2.0 * (2.0 * core::f64::consts::PI * s * s).ln() - d / 2.0 * p.ln()
            }
            _ => 0.0,
        };
        Ok(Evaluator { problem, functional, mollifier, gamma_hint: None, scale_anchor })
    }

    pub fn mollifier_under_resolved(&self) -> bool {
        self.mollifier.as_ref().is_some_and(|m| m.is_under_resolved())
    }

    /// `ρ = ψ²`, convolved with the mollifier when one is set.
    pub fn density(&self, psi: &[f64]) -> Vec<f64> {
        let sq: Vec<f64> = psi.iter().map(|v| v * v).collect();
        match &self.mollifier {
            Some(m) => m.apply(&self.problem.grid, &sq),
            None => sq,
        }
    }

    /// Pulls a gradient with respect to `ρ` back to `ψ`.
    fn pull_back(&self, psi: &[f64], d_rho: &[f64]) -> Vec<f64> {
        let smoothed = match &self.mollifier {
            Some(m) => m.apply(&self.problem.grid, d_rho),
            None => d_rho.to_vec(),
        };
        psi.iter().zip(&smoothed).map(|(p, g)| 2.0 * p * g).collect()
    }

    pub fn evaluate(&mut self, psi: &[f64]) -> Evaluation {
        let grid = &self.problem.grid;
        let hd = grid.cell_volume();
        let (energy, mut grad) = energy_and_gradient(grid, &self.problem.covariance, psi, true);
        match self.functional {
            Functional::KDq { d_coef, q } => {
                let p = q / (q - 1.0);
                let rho = self.density(psi);
                let norm = hd * rho.iter().map(|r| r.powf(p)).sum::<f64>();
                let value = energy + d_coef * norm.powf(1.0 - q);
                let factor = d_coef * (1.0 - q) * norm.powf(-q) * hd * p;
                let d_rho: Vec<f64> = rho.iter().map(|r| factor * r.powf(p - 1.0)).collect();
                for (g, extra) in grad.iter_mut().zip(self.pull_back(psi, &d_rho)) {
                    *g += extra;
                }
                Evaluation { value, gradient: grad, gamma: None, infinite: false, penalty: 0.0 }
            }
            Functional::ChiRatio { q } => {
                let p = q / (q - 1.0);
                let d = grid.dim() as f64;
                let c = 2.0 * (q - 1.0) / d;
                let norm = hd * psi.iter().map(|v| v.abs().powf(2.0 * p)).sum::<f64>();
                let scale = norm.powf(-c);
                let ratio = energy * scale;
                let miss = norm.ln() - self.scale_anchor;
                let penalty = SCALE_PIN * miss * miss;
                let factor = (energy * (-c) * norm.powf(-c) + 2.0 * SCALE_PIN * miss) / norm * hd * 2.0 * p;
                for (g, v) in grad.iter_mut().zip(psi) {
                    *g = *g * scale + factor * v.abs().powf(2.0 * p - 1.0) * v.signum();
                }
                Evaluation { value: ratio + penalty, gradient: grad, gamma: None, infinite: false, penalty }
            }
            Functional::KH { cumulant, u } => {
                let rho = self.density(psi);
                let phi = phi_h(grid, &rho, u, cumulant, self.gamma_hint);
                if phi.infinite {
                    return Evaluation { value: f64::INFINITY, gradient: grad, gamma: None, infinite: true, penalty: 0.0 };
                }
                if phi.gamma > 0.0 {
                    self.gamma_hint = Some(phi.gamma);
                }
                let g = phi.gamma;
                let d_rho: Vec<f64> = rho.iter().map(|r| -hd * g * cumulant.h_prime(g * r)).collect();
                for (gr, extra) in grad.iter_mut().zip(self.pull_back(psi, &d_rho)) {
                    *gr += extra;
                }
                Evaluation { value: energy + phi.value, gradient: grad, gamma: Some(g), infinite: false, penalty: 0.0 }
            }
        }
    }
}

/// Outcome of one minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub value: f64,
    pub psi: GridFunction,
    pub converged: bool,
    pub iterations: usize,
    /// Best value reached from each starting point.
    pub restart_values: Vec<f64>,
    pub gamma: Option<f64>,
    pub infinite: bool,
    pub mollifier_under_resolved: bool,
    /// Largest `|h^d Σ ψ² - 1|` seen after any accepted step.
    pub max_normalization_error: f64,
}

struct RunOutcome {
    psi: Vec<f64>,
    value: f64,
    converged: bool,
    iterations: usize,
    max_normalization_error: f64,
}

fn normalize(grid: &Grid, v: &mut [f64]) {
    let n = l2_norm(grid, v);
    for x in v.iter_mut() {
        *x /= n;
    }
}

/// Riesz gradient `∇f / h^d` projected onto the tangent space at `psi`.
fn tangent(grid: &Grid, psi: &[f64], partial: &[f64]) -> Vec<f64> {
    let hd = grid.cell_volume();
    let riesz: Vec<f64> = partial.iter().map(|g| g / hd).collect();
    let along = inner(grid, &riesz, psi);
    riesz.iter().zip(psi).map(|(r, p)| r - along * p).collect()
}

/// Solves `(I + A) x = r` by conjugate gradients, where `A g = ∇E(g) / h^d`.
/// This is the `H¹` Riesz map used to precondition the descent direction.
fn sobolev_solve(grid: &Grid, covariance: &Covariance, r: &[f64]) -> Vec<f64> {
    if grid.dim() == 1 {
        return tridiagonal_sobolev(grid, covariance.get(0, 0) / (grid.h() * grid.h()), r);
    }
    let hd = grid.cell_volume();
    let apply = |v: &[f64]| -> Vec<f64> {
        let (_, g) = energy_and_gradient(grid, covariance, v, true);
        v.iter().zip(g).map(|(a, b)| a + b / hd).collect()
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; r.len()];
    let mut res = r.to_vec();
    let mut dir = res.clone();
    let mut rr = dot(&res, &res);
    let target = 1e-24 * rr;
    for _ in 0..(4 * r.len()).max(50) {
        if rr <= target || rr == 0.0 {
            break;
        }
        let ad = apply(&dir);
        let step = rr / dot(&dir, &ad);
        for i in 0..x.len() {
            x[i] += step * dir[i];
            res[i] -= step * ad[i];
        }
        let next = dot(&res, &res);
        let beta = next / rr;
        rr = next;
        for i in 0..dir.len() {
            dir[i] = res[i] + beta * dir[i];
        }
    }
    x
}

/// One-dimensional case of [`sobolev_solve`]: `(I + c T) x = r` with `T = tridiag(-1, 2, -1)`,
/// closed by zero ghosts (Dirichlet) or wrap-around (periodic, via Sherman–Morrison).
fn tridiagonal_sobolev(grid: &Grid, c: f64, r: &[f64]) -> Vec<f64> {
    let m = r.len();
    let thomas = |diag0: f64, diag_last: f64, rhs: &[f64]| -> Vec<f64> {
        let (off, diag) = (-c, 1.0 + 2.0 * c);
        let mut cp = vec![0.0; m];
        let mut dp = vec![0.0; m];
        let mut b = diag0;
        cp[0] = off / b;
        dp[0] = rhs[0] / b;
        for i in 1..m {
            b = if i == m - 1 { diag_last } else { diag } - off * cp[i - 1];
            cp[i] = off / b;
            dp[i] = (rhs[i] - off * dp[i - 1]) / b;
        }
        for i in (0..m - 1).rev() {
            dp[i] -= cp[i] * dp[i + 1];
        }
        dp
    };
    let diag = 1.0 + 2.0 * c;
    match grid.boundary() {
        Boundary::Dirichlet => thomas(diag, diag, r),
        Boundary::Periodic => {
            if m < 3 {
                return r.iter().map(|v| v / (1.0 + 4.0 * c)).collect();
            }
            // A = B + u vᵀ with u = (-b, 0, ..., 0, -c)ᵀ, v = (1, 0, ..., 0, c/b)ᵀ and b = diag
            let (u0, ulast, vlast) = (-diag, -c, c / diag);
            let y = thomas(diag - u0, diag - ulast * vlast, r);
            let mut u = vec![0.0; m];
            u[0] = u0;
            u[m - 1] = ulast;
            let z = thomas(diag - u0, diag - ulast * vlast, &u);
            let factor = (y[0] + vlast * y[m - 1]) / (1.0 + z[0] + vlast * z[m - 1]);
            y.iter().zip(&z).map(|(a, b)| a - factor * b).collect()
        }
    }
}

/// Preconditioned descent direction: the `H¹` Riesz representative of the tangent gradient,
/// projected back onto the tangent space.
fn descent_direction(grid: &Grid, covariance: &Covariance, psi: &[f64], tangent_grad: &[f64]) -> Vec<f64> {
    let mut d = sobolev_solve(grid, covariance, tangent_grad);
    let along = inner(grid, &d, psi);
    for (x, p) in d.iter_mut().zip(psi) {
        *x -= along * p;
    }
    d
}

fn minimize_on_sphere(evaluator: &mut Evaluator<'_>, start: Vec<f64>, settings: &OptimizerSettings) -> RunOutcome {
    const MEMORY: usize = 10;
    let grid = evaluator.problem.grid;
    let covariance = evaluator.problem.covariance.clone();
    let mut psi = start;
    normalize(&grid, &mut psi);
    let mut eval = evaluator.evaluate(&psi);
    let mut grad = tangent(&grid, &psi, &eval.gradient);
    let mut dir = descent_direction(&grid, &covariance, &psi, &grad);
    let mut history: Vec<f64> = vec![eval.value];
    let mut step = 1.0;
    let mut max_norm_err: f64 = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        let slope = inner(&grid, &grad, &dir);
        if slope.max(0.0).sqrt() <= settings.gradient_tolerance * eval.value.abs().max(1.0) {
            converged = true;
            break;
        }
        let k = history.len();
        if k > settings.stall_window {
            let old = history[k - 1 - settings.stall_window];
            if (old - eval.value).abs() <= settings.stall_tolerance * eval.value.abs().max(1e-300) {
                converged = true;
                break;
            }
        }
        let reference = history.iter().rev().take(MEMORY).copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = psi.iter().zip(&dir).map(|(p, d)| p - alpha * d).collect();
            normalize(&grid, &mut trial);
            let e = evaluator.evaluate(&trial);
            if e.value.is_finite() && e.value <= reference - 1e-4 * alpha * slope {
                accepted = Some((trial, e));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, next_eval)) = accepted else {
            // no decrease is representable any more: the iterate sits at the floating-point floor
            converged = true;
            break;
        };
        iterations += 1;
        let next_grad = tangent(&grid, &next, &next_eval.gradient);
        let next_dir = descent_direction(&grid, &covariance, &next, &next_grad);
        let s: Vec<f64> = next.iter().zip(&psi).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let z: Vec<f64> = next_dir.iter().zip(&dir).map(|(a, b)| a - b).collect();
        let sy = inner(&grid, &s, &y);
        let yz = inner(&grid, &y, &z);
        step = if sy > 0.0 && yz > 0.0 { (sy / yz).clamp(1e-10, 1e6) } else { (alpha * 2.0).min(1e6) };
        psi = next;
        eval = next_eval;
        grad = next_grad;
        dir = next_dir;
        history.push(eval.value);
        max_norm_err = max_norm_err.max((inner(&grid, &psi, &psi) - 1.0).abs());
    }
    RunOutcome { psi, value: eval.value, converged, iterations, max_normalization_error: max_norm_err }
}

/// Positive starting profile: a centered gaussian bump of random width with 1% multiplicative
/// noise plus a floor of `1e-3`. Centering matters: in large boxes the translation mode is
/// nearly flat and an off-center start would take very many iterations to drift back.
pub fn initial_profile(grid: &Grid, seed: u64) -> Vec<f64> {
    let mut rng = init_rng(seed);
    let d = grid.dim();
    let r = grid.radius();
    let width = r * (0.0625 + 0.1875 * rng.random::<f64>());
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let x = grid.center(i);
        let dist2: f64 = (0..d).map(|a| x[a] * x[a]).sum();
        let noise = 1.0 + 0.02 * (rng.random::<f64>() - 0.5);
        values.push((-dist2 / (2.0 * width * width)).exp() * noise + 1e-3);
    }
    normalize(grid, &mut values);
    values
}

/// Minimizes a functional from `restarts` random starts (or from `initial` alone when given).
pub fn minimize(problem: &RateProblem, functional: Functional<'_>, initial: Option<&GridFunction>) -> Result<Solution> {
    let settings = &problem.optimizer;
    let mut evaluator = Evaluator::new(problem, functional)?;
    let starts: Vec<Vec<f64>> = match initial {
        Some(f) => {
            if f.grid != problem.grid {
                return Err(invalid("initial function lives on a different grid"));
            }
            vec![f.values.clone()]
        }
        None => (0..settings.restarts.max(1) as u64)
            .map(|r| initial_profile(&problem.grid, settings.seed.wrapping_add(r)))
            .collect(),
    };
    let mut best: Option<RunOutcome> = None;
    let mut restart_values = Vec::with_capacity(starts.len());
    let mut max_err: f64 = 0.0;
    let mut total_iterations = 0;
    for start in starts {
        evaluator.gamma_hint = None;
        let run = minimize_on_sphere(&mut evaluator, start, settings);
        restart_values.push(run.value - evaluator.evaluate(&run.psi).penalty);
        max_err = max_err.max(run.max_normalization_error);
        total_iterations += run.iterations;
        if best.as_ref().is_none_or(|b| run.value < b.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    evaluator.gamma_hint = None;
    let final_eval = evaluator.evaluate(&best.psi);
    Ok(Solution {
        value: best.value - final_eval.penalty,
        psi: GridFunction { grid: problem.grid, values: best.psi },
        converged: best.converged,
        iterations: total_iterations,
        restart_values,
        gamma: final_eval.gamma,
        infinite: final_eval.infinite,
        mollifier_under_resolved: evaluator.mollifier_under_resolved(),
        max_normalization_error: max_err,
    })
}

/// `K_{D,q}`: Dirichlet grids give the box version `K^{(0)}(R)`, periodic grids with a mollifier `K^{(per)}(δ, R)`.
pub fn solve_k_dq(problem: &RateProblem, d_coef: f64, q: f64) -> Result<Solution> {
    minimize(problem, Functional::KDq { d_coef, q }, None)
}

/// `K_H(u)` on the problem's box.
pub fn solve_k_h(problem: &RateProblem, cumulant: &dyn Cumulant, u: f64) -> Result<Solution> {
    minimize(problem, Functional::KH { cumulant, u }, None)
}

/// `K = (d+2) (D/2)^{2/(d+2)} (χ/d)^{d/(d+2)}`.
pub fn k_from_chi(d: usize, d_coef: f64, chi: f64) -> f64 {
    let d = d as f64;
    (d + 2.0) * (d_coef / 2.0).powf(2.0 / (d + 2.0)) * (chi / d).powf(d / (d + 2.0))
}

/// Inverse of [`k_from_chi`].
pub fn chi_from_k(d: usize, d_coef: f64, k: f64) -> f64 {
    let d = d as f64;
    d * (k / ((d + 2.0) * (d_coef / 2.0).powf(2.0 / (d + 2.0)))).powf((d + 2.0) / d)
}

/// `κ_{d,p} = χ^{-d/(4q)}`.
pub fn kappa_from_chi(d: usize, q: f64, chi: f64) -> f64 {
    chi.powf(-(d as f64) / (4.0 * q))
}

/// Route (a) evaluated at a gaussian density with `Γ = I`: `(dπ/4) p^{1/(p-1)}`.
pub fn gaussian_chi_ratio(d: usize, p: f64) -> f64 {
    d as f64 * core::f64::consts::FRAC_PI_4 * p.powf(1.0 / (p - 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChiSolution {
    /// Minimum of the scale-invariant ratio.
    pub route_a: Solution,
    /// `χ` recovered from `K_{D,q}`.
    pub route_b: f64,
    pub k_solution: Solution,
    pub relative_gap: f64,
    pub kappa: f64,
}

/// `χ_{d,p}` by both routes; route (b) uses `K_{D,q}` with the given `D`.
pub fn solve_chi(problem: &RateProblem, q: f64, d_coef: f64) -> Result<ChiSolution> {
    let route_a = minimize(problem, Functional::ChiRatio { q }, None)?;
    let k_solution = solve_k_dq(problem, d_coef, q)?;
    let route_b = chi_from_k(problem.dim(), d_coef, k_solution.value);
    let relative_gap = (route_a.value - route_b).abs() / route_b.abs();
    let kappa = kappa_from_chi(problem.dim(), q, route_a.value);
    Ok(ChiSolution { route_a, route_b, k_solution, relative_gap, kappa })
}

/// Parameters and norms of one member of the radial trial sequence with
/// `ψ² = D r^{-γ}` on `(0,1)`, `D` on `[1,A]`, `D A^{2d} r^{-2d}` beyond `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialPoint {
    pub n: u64,
    pub d_n: f64,
    pub a_n: f64,
    pub gamma_n: f64,
    /// `‖ψ‖₂²`, `‖ψ‖_{2p}^{2p}` and `½‖∇ψ‖₂²` from the closed forms.
    pub l2_sq: f64,
    pub l2p_pow: f64,
    pub half_grad_sq: f64,
    /// The same three quantities by radial quadrature.
    pub quadrature: [f64; 3],
    /// Limits `2ω_d/d` and `ω_d` of the two norms.
    pub limits: [f64; 2],
    /// Route (a) ratio `½‖∇ψ‖² ‖ψ‖_{2p}^{-4q/d} ‖ψ‖₂^{4q/d-2}`.
    pub chi_ratio: f64,
}

/// `(ln f(t), lower end, upper end, decay rates of the three integrands)`.
type Piece<'a> = (&'a dyn Fn(f64) -> f64, Option<f64>, Option<f64>, [f64; 3]);

/// Schedule `D_n = n^{-2}`, `A_n = D_n^{-1/d}`, `γ_n = (d - D_n^p)/p`.
pub fn trial_sequence_chi_zero(d: usize, p: f64, n: u64) -> Result<TrialPoint> {
    if !(p > 1.0) || n == 0 {
        return Err(invalid("trial sequence needs p > 1 and n ≥ 1"));
    }
    let q = p / (p - 1.0);
    let df = d as f64;
    if !(df > 2.0 * q) {
        return Err(invalid("the trial sequence exists only for d > 2q"));
    }
    let dn = (n as f64).powi(-2);
    let an = dn.powf(-1.0 / df);
    let gamma = (df - dn.powf(p)) / p;
    let omega = unit_sphere_area(d);
    let l2_sq = omega / df * dn * (2.0 * an.powf(df) + gamma / (df - gamma));
    let l2p_pow = omega * dn.powf(p) * p / df * (gamma / (df - p * gamma) + an.powf(df) * 2.0 / (2.0 * p - 1.0));
    let grad_sq = 0.25 * omega * dn * (gamma * gamma / (df - gamma - 2.0) + an.powf(df - 2.0) * 4.0 * df * df / (df + 2.0));
    let quadrature = trial_quadrature(d, p, dn, an, gamma);
    let chi_ratio = 0.5 * grad_sq * l2p_pow.powf(-2.0 * q / (p * df)) * l2_sq.powf(2.0 * q / df - 1.0);
    Ok(TrialPoint {
        n,
        d_n: dn,
        a_n: an,
        gamma_n: gamma,
        l2_sq,
        l2p_pow,
        half_grad_sq: 0.5 * grad_sq,
        quadrature,
        limits: [2.0 * omega / df, omega],
        chi_ratio,
    })
}

fn trial_quadrature(d: usize, p: f64, dn: f64, an: f64, gamma: f64) -> [f64; 3] {
    let df = d as f64;
    let omega = unit_sphere_area(d);
    let ln_d = dn.ln();
    let ln_a = an.ln();
    // each piece of ln f as a function of t = ln r, with the decay rates of the
    // three integrands away from the finite end of unbounded pieces
    let pieces: [Piece<'_>; 3] = [
        (&|t: f64| ln_d - gamma * t, None, Some(0.0), [df - gamma, df - p * gamma, df - gamma - 2.0]),
        (&|_t: f64| ln_d, Some(0.0), Some(ln_a), [0.0; 3]),
        (&|t: f64| ln_d + 2.0 * df * (ln_a - t), Some(ln_a), None, [df, 2.0 * df * p - df, df + 2.0]),
    ];
    let mut out = [0.0; 3];
    for (ln_f, lo, hi, rates) in pieces {
        let slope = |t: f64| (ln_f(t + 1e-5) - ln_f(t - 1e-5)) / 2e-5;
        let integrands: [&dyn Fn(f64) -> f64; 3] = [
            &|t| (ln_f(t) + df * t).exp(),
            &|t| (p * ln_f(t) + df * t).exp(),
            // ½|∇ψ|² = f (d ln f / d ln r)² / (8 r²)
            &|t| (ln_f(t) + (df - 2.0) * t).exp() * slope(t).powi(2) / 8.0,
        ];
        for k in 0..3 {
            let a = lo.unwrap_or_else(|| hi.unwrap() - 60.0 / rates[k]);
            let b = hi.unwrap_or_else(|| lo.unwrap() + 60.0 / rates[k]);
            out[k] += integrate(integrands[k], a, b, 1e-12, 0.0);
        }
    }
    out.map(|v| omega * v)
}

/// Which constant a box study approximates.
#[derive(Copy, Clone)]
pub enum BoxMode<'a> {
    KDq { d_coef: f64, q: f64 },
    KH { cumulant: &'a dyn Cumulant, u: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxRow {
    pub radius: f64,
    pub delta: Option<f64>,
    pub boundary: Boundary,
    pub value: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxStudy {
    pub rows: Vec<BoxRow>,
    /// Every Dirichlet value is at most the matching periodic value plus 2%.
    pub sandwich_holds: bool,
    /// Dirichlet values do not increase with `R` beyond 2%.
    pub dirichlet_monotone: bool,
}

/// Dirichlet and periodic box approximations at fixed mesh width `h`.
///
/// For `K_{D,q}` the Dirichlet values carry no mollifier and the periodic
/// values one of each width in `deltas`; for `K_H` both carry it.
pub fn box_convergence_study(
    covariance: &Covariance,
    mode: BoxMode<'_>,
    h: f64,
    radii: &[f64],
    deltas: &[f64],
    optimizer: &OptimizerSettings,
) -> Result<BoxStudy> {
    if radii.windows(2).any(|w| w[0] >= w[1]) || radii.is_empty() || deltas.is_empty() {
        return Err(invalid("radii must be ascending and both lists non-empty"));
    }
    let solve = |radius: f64, boundary: Boundary, delta: Option<f64>| -> Result<BoxRow> {
        let m = (2.0 * radius / h).round() as usize;
        let problem = RateProblem::new(covariance.clone(), radius, m, boundary)?
            .with_delta(delta)
            .with_optimizer(optimizer.clone());
        let sol = match mode {
            BoxMode::KDq { d_coef, q } => solve_k_dq(&problem, d_coef, q)?,
            BoxMode::KH { cumulant, u } => solve_k_h(&problem, cumulant, u)?,
        };
        Ok(BoxRow { radius, delta, boundary, value: sol.value, converged: sol.converged })
    };
    let mut rows = Vec::new();
    for &radius in radii {
        match mode {
            BoxMode::KDq { .. } => rows.push(solve(radius, Boundary::Dirichlet, None)?),
            BoxMode::KH { .. } => {
                for &delta in deltas {
                    rows.push(solve(radius, Boundary::Dirichlet, Some(delta))?);
                }
            }
        }
        for &delta in deltas {
            rows.push(solve(radius, Boundary::Periodic, Some(delta))?);
        }
    }
    let dirichlet_for = |radius: f64, delta: Option<f64>| {
        rows.iter()
            .find(|r| r.boundary == Boundary::Dirichlet && r.radius == radius && (r.delta.is_none() || r.delta == delta))
            .map(|r| r.value)
    };
    let sandwich_holds = rows
        .iter()
        .filter(|r| r.boundary == Boundary::Periodic)
        .all(|r| dirichlet_for(r.radius, r.delta).is_some_and(|dv| dv <= r.value * 1.02));
    let mut dirichlet_monotone = true;
    let delta_keys: Vec<Option<f64>> = match mode {
        BoxMode::KDq { .. } => vec![None],
        BoxMode::KH { .. } => deltas.iter().map(|d| Some(*d)).collect(),
    };
    for key in delta_keys {
        let vals: Vec<f64> = radii.iter().filter_map(|&r| dirichlet_for(r, key)).collect();
        dirichlet_monotone &= vals.windows(2).all(|w| w[1] <= w[0] * 1.02);
    }
    Ok(BoxStudy { rows, sandwich_holds, dirichlet_monotone })
}
