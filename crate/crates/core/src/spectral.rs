//! Principal eigenvalues of `½∇·Γ∇ + f` and the transfer matrices of the walk.
//!
//! The continuum operator is discretized on a [`Grid`] with the same energy
//! form the variational solvers use, so `λ_R(f) = max ⟨f, ψ²⟩ - E(ψ)` over
//! the discrete unit sphere. The lattice side computes
//! `(α²/n) log E[exp(Σ_{k<n} f_n(S_k)/α²); S stays in the box]` exactly from
//! powers of `A = e^{f_n/(2α²)} P e^{f_n/(2α²)}`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::grid::{energy_and_gradient, Boundary, Grid, GridFunction};
use crate::kernel::{Covariance, StepKernel, DENSE_STATE_LIMIT};
use crate::lattice::{wrap_coord, Site, SiteMap, MAX_DIM};
use crate::math::GAUSS4_UNIT;
use crate::rng::init_rng;

/// Largest operator handled by a dense eigendecomposition; above this Lanczos is used.
pub const DENSE_EIGEN_LIMIT: usize = 1024;

/// Largest transfer matrix whose powers are taken through a dense eigendecomposition;
/// above this the cumulant is computed by exact vector iteration.
pub const DENSE_TRANSFER_LIMIT: usize = 2048;

/// A bounded potential sampled at cell centers together with the diffusion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialProblem {
    pub f: GridFunction,
    pub covariance: Covariance,
}

impl PotentialProblem {
    pub fn new(f: GridFunction, covariance: Covariance) -> Result<Self> {
        if covariance.dim() != f.grid.dim() {
            return Err(invalid("covariance and grid dimensions differ"));
        }
        if f.values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("potential must be finite"));
        }
        Ok(PotentialProblem { f, covariance })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Grid, covariance: Covariance, f: F) -> Result<Self> {
        Self::new(GridFunction::from_fn(grid, f), covariance)
    }

    /// `(f - ½L) v`, where `L v = ∇E(v) / h^d`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let grid = &self.f.grid;
        let (_, g) = energy_and_gradient(grid, &self.covariance, v, true);
        let hd = grid.cell_volume();
        v.iter().zip(&self.f.values).zip(g).map(|((x, f), gi)| f * x - 0.5 * gi / hd).collect()
    }

    /// `⟨f, ψ²⟩ - E(ψ)` divided by `‖ψ‖₂²`.
    pub fn rayleigh_quotient(&self, psi: &[f64]) -> f64 {
        let grid = &self.f.grid;
        let hd = grid.cell_volume();
        let (energy, _) = energy_and_gradient(grid, &self.covariance, psi, false);
        let mass = hd * psi.iter().map(|v| v * v).sum::<f64>();
        let pot = hd * psi.iter().zip(&self.f.values).map(|(v, f)| f * v * v).sum::<f64>();
        (pot - energy) / mass
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    /// Normalized in `L²(grid)` with positive total mass.
    pub vector: GridFunction,
    pub converged: bool,
    pub residual: f64,
}

/// Largest eigenvalue of a symmetric operator through Lanczos with full
/// reorthogonalization, restarted from the current Ritz vector.
fn lanczos_top<F: Fn(&[f64]) -> Vec<f64>>(apply: F, n: usize, seed: u64, tol: f64) -> (f64, Vec<f64>, bool, f64) {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut rng = init_rng(seed);
    let mut start: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    let krylov = n.min(150);
    let mut best = (f64::NEG_INFINITY, start.clone(), false, f64::INFINITY);
    for _ in 0..200 {
        let norm = dot(&start, &start).sqrt();
        let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / norm).collect()];
        let mut alphas = Vec::new();
        let mut betas = Vec::new();
        for j in 0..krylov {
            let mut w = apply(&basis[j]);
            let a = dot(&w, &basis[j]);
            alphas.push(a);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&w, b);
                    for (wi, bi) in w.iter_mut().zip(b) {
                        *wi -= c * bi;
                    }
                }
            }
            let beta = dot(&w, &w).sqrt();
            if j + 1 == krylov || beta <= 1e-13 * a.abs().max(1.0) {
                betas.push(beta);
                break;
            }
            betas.push(beta);
            basis.push(w.iter().map(|v| v / beta).collect());
        }
        let k = alphas.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let top = (0..k).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
        let theta = eig.eigenvalues[top];
        let y = eig.eigenvectors.column(top);
        let mut x = vec![0.0; n];
        for (c, b) in y.iter().zip(&basis) {
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi += c * bi;
            }
        }
        let ax = apply(&x);
        let residual = ax.iter().zip(&x).map(|(a, v)| (a - theta * v).powi(2)).sum::<f64>().sqrt();
        let converged = residual <= tol * theta.abs().max(1.0);
        best = (theta, x.clone(), converged, residual);
        if converged {
            break;
        }
        start = x;
    }
    best
}

fn sign_fix(v: &mut [f64]) {
    if v.iter().sum::<f64>() < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// `λ_R(f)` (Dirichlet grid) or `λ^{(R)}(f)` (periodic grid) with its eigenfunction.
pub fn principal_eigenvalue_continuum(problem: &PotentialProblem) -> Result<Eigenpair> {
    let grid = problem.f.grid;
    if grid.cells_per_axis() < 16 {
        return Err(invalid("the eigenvalue mesh needs at least 16 cells per axis"));
    }
    let n = grid.len();
    let (value, mut vector, converged, residual) = if n <= DENSE_EIGEN_LIMIT {
        let mut m = DMatrix::zeros(n, n);
        let mut unit = vec![0.0; n];
        for j in 0..n {
            unit[j] = 1.0;
            for (i, v) in problem.apply(&unit).into_iter().enumerate() {
                m[(i, j)] = v;
            }
            unit[j] = 0.0;
        }
        let m = (&m + m.transpose()) * 0.5;
        let eig = SymmetricEigen::new(m);
        let top = (0..n).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
        let v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
        let av = problem.apply(&v);
        let theta = eig.eigenvalues[top];
        let residual = av.iter().zip(&v).map(|(a, x)| (a - theta * x).powi(2)).sum::<f64>().sqrt();
        (theta, v, true, residual)
    } else {
        lanczos_top(|v| problem.apply(v), n, 0, 1e-10)
    };
    sign_fix(&mut vector);
    let scale = crate::grid::l2_norm(&grid, &vector);
    for x in vector.iter_mut() {
        *x /= scale;
    }
    Ok(Eigenpair { value, vector: GridFunction { grid, values: vector }, converged, residual })
}

/// The lattice box `{-Rα, …, Rα-1}^d` with the walk either killed on leaving
/// it (Dirichlet) or wrapped onto the torus (periodic).
#[derive(Clone, Debug)]
pub struct LatticeBox {
    dim: usize,
    half_side: i32,
    boundary: Boundary,
    /// Sparse rows `(column, probability)`.
    rows: Vec<Vec<(usize, f64)>>,
}

impl LatticeBox {
    pub fn new(kernel: &StepKernel, half_side: usize, boundary: Boundary) -> Result<Self> {
        if half_side == 0 {
            return Err(invalid("box half side must be positive"));
        }
        let dim = kernel.dim();
        let side = 2 * half_side;
        let states = side.checked_pow(dim as u32).filter(|s| *s <= DENSE_STATE_LIMIT);
        let Some(states) = states else {
            return Err(Error::BoxTooLarge { states: side.saturating_pow(dim as u32), limit: DENSE_STATE_LIMIT });
        };
        let r = half_side as i32;
        let mut lattice = LatticeBox { dim, half_side: r, boundary, rows: Vec::with_capacity(states) };
        for state in 0..states {
            let c = lattice.coords_of(state);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(kernel.len());
            'steps: for (step, p) in kernel.steps() {
                let mut target = [0i32; MAX_DIM];
                for axis in 0..dim {
                    let t = c[axis] + step[axis];
                    target[axis] = match boundary {
                        Boundary::Periodic => wrap_coord(t, r),
                        Boundary::Dirichlet if t < -r || t >= r => continue 'steps,
                        Boundary::Dirichlet => t,
                    };
                }
                let col = lattice.index_of(&target[..dim]);
                match row.iter_mut().find(|(j, _)| *j == col) {
                    Some(e) => e.1 += p,
                    None => row.push((col, p)),
                }
            }
            row.sort_by_key(|e| e.0);
            lattice.rows.push(row);
        }
        Ok(lattice)
    }

    pub fn states(&self) -> usize {
        self.rows.len()
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn coords_of(&self, mut state: usize) -> [i32; MAX_DIM] {
        let side = 2 * self.half_side as usize;
        let mut c = [0; MAX_DIM];
        for x in c.iter_mut().take(self.dim) {
            *x = (state % side) as i32 - self.half_side;
            state /= side;
        }
        c
    }

    /// Coordinates must lie in the box.
    pub fn index_of(&self, coords: &[i32]) -> usize {
        let side = 2 * self.half_side as usize;
        coords.iter().rev().fold(0, |acc, &x| acc * side + (x + self.half_side) as usize)
    }

    pub fn row(&self, state: usize) -> &[(usize, f64)] {
        &self.rows[state]
    }
}

/// `A = D P D` with `D = diag(e^{f_n/(2α²)})` on a lattice box.
#[derive(Clone, Debug)]
pub struct TransferMatrix {
    pub lattice: LatticeBox,
    pub alpha: f64,
    /// `f_n(z)`: the average of `f` over the cell `[z/α, (z+1)/α)^d`.
    pub potential: Vec<f64>,
    half_weights: Vec<f64>,
}

impl TransferMatrix {
    pub fn new<F: Fn(&[f64]) -> f64>(kernel: &StepKernel, f: F, radius: f64, alpha: f64, boundary: Boundary) -> Result<Self> {
        if !(alpha >= 1.0) || !(radius > 0.0) {
            return Err(invalid("transfer matrix needs α ≥ 1 and R > 0"));
        }
        let half = (radius * alpha).round();
        if (half - radius * alpha).abs() > 1e-9 {
            return Err(invalid("Rα must be an integer"));
        }
        let lattice = LatticeBox::new(kernel, half as usize, boundary)?;
        let dim = kernel.dim();
        let (nodes, weights) = GAUSS4_UNIT;
        let potential: Vec<f64> = (0..lattice.states())
            .map(|s| {
                let c = lattice.coords_of(s);
                let mut total = 0.0;
                for k in 0..4usize.pow(dim as u32) {
                    let mut rest = k;
                    let mut x = [0.0; MAX_DIM];
                    let mut w = 1.0;
                    for axis in 0..dim {
                        let q = rest % 4;
                        rest /= 4;
                        x[axis] = (c[axis] as f64 + nodes[q]) / alpha;
                        w *= weights[q];
                    }
                    total += w * f(&x[..dim]);
                }
                total
            })
            .collect();
        let half_weights = potential.iter().map(|v| (v / (2.0 * alpha * alpha)).exp()).collect();
        Ok(TransferMatrix { lattice, alpha, potential, half_weights })
    }

    pub fn states(&self) -> usize {
        self.lattice.states()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.states())
            .map(|i| {
                let s: f64 = self.lattice.row(i).iter().map(|&(j, p)| p * self.half_weights[j] * v[j]).sum();
                self.half_weights[i] * s
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.states();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for &(j, p) in self.lattice.row(i) {
                m[(i, j)] += self.half_weights[i] * p * self.half_weights[j];
            }
        }
        m
    }

    /// Largest eigenvalue of `A` (Perron root).
    pub fn principal_eigenvalue(&self) -> f64 {
        let n = self.states();
        if n <= DENSE_TRANSFER_LIMIT {
            let eig = SymmetricEigen::new(self.to_dense());
            eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        } else {
            lanczos_top(|v| self.apply(v), n, 0, 1e-12).0
        }
    }

    /// `log E[exp(Σ_{k<n} f_n(S_k)/α²); S_k in the box for k < n]` for the walk started at 0.
    pub fn log_expectation(&self, steps: u64) -> Result<f64> {
        if steps == 0 {
            return Err(invalid("need at least one step"));
        }
        let n = self.states();
        let origin = self.lattice.index_of(&[0; MAX_DIM][..self.lattice.dim]);
        let right: Vec<f64> = self.half_weights.clone();
        let power = steps - 1;
        if n <= DENSE_TRANSFER_LIMIT {
            let eig = SymmetricEigen::new(self.to_dense());
            let top = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let right = DVector::from_vec(right);
            let mut total = 0.0;
            for k in 0..n {
                let v = eig.eigenvectors.column(k);
                let weight = self.half_weights[origin] * v[origin] * v.dot(&right);
                total += weight * (eig.eigenvalues[k] / top).powi(power as i32);
            }
            if !(total > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(power as f64 * top.ln() + total.ln())
        } else {
            let mut v = right;
            let mut log_scale = 0.0;
            for _ in 0..power {
                v = self.apply(&v);
                let m = v.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
                if m == 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                log_scale += m.ln();
                for x in v.iter_mut() {
                    *x /= m;
                }
            }
            Ok(log_scale + (self.half_weights[origin] * v[origin]).ln())
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferCumulant {
    /// `(α²/n) log E[…]`.
    pub value: f64,
    /// `α² log λ₁(A)`, the `n → ∞` limit of `value`.
    pub lattice_limit: f64,
    pub states: usize,
}

/// Exact scaled cumulant of the local times in a box of radius `R` at scale `α`
/// after `n` steps. `n` must be a multiple of `α²`.
pub fn transfer_cumulant<F: Fn(&[f64]) -> f64>(
    kernel: &StepKernel,
    f: F,
    radius: f64,
    alpha: u32,
    n: u64,
    boundary: Boundary,
) -> Result<TransferCumulant> {
    let a2 = u64::from(alpha) * u64::from(alpha);
    if alpha == 0 || n == 0 || !n.is_multiple_of(a2) {
        return Err(invalid("n must be a positive multiple of α²"));
    }
    let a = f64::from(alpha);
    let matrix = TransferMatrix::new(kernel, f, radius, a, boundary)?;
    let log_e = matrix.log_expectation(n)?;
    Ok(TransferCumulant {
        value: a * a / n as f64 * log_e,
        lattice_limit: a * a * matrix.principal_eigenvalue().ln(),
        states: matrix.states(),
    })
}

/// `½ Σ_{z, z̃} p(z, z̃) (g(z) - g(z̃))²` for a finitely supported lattice function.
pub fn discrete_dirichlet_form(kernel: &StepKernel, g: &SiteMap<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (site, &gz) in g {
        for (step, p) in kernel.steps() {
            let target = site.offset(step)?;
            match g.get(&target) {
                Some(&gt) => total += p * (gz - gt).powi(2),
                // the pair seen from outside the support contributes the same amount again
                None => total += 2.0 * p * gz * gz,
            }
        }
    }
    Ok(0.5 * total)
}

/// `g(z) = α^{-d/2} ψ(z/α)` on the sites `{-Rα, …, Rα}^d`, dropping exact zeros.
pub fn lattice_rescaling<F: Fn(&[f64]) -> f64>(dim: usize, psi: F, radius: f64, alpha: f64) -> Result<SiteMap<f64>> {
    let r = (radius * alpha).ceil() as i32;
    let side = (2 * r + 1) as usize;
    let count = side.checked_pow(dim as u32).filter(|c| *c <= 1 << 24).ok_or_else(|| invalid("rescaled box too large"))?;
    let scale = alpha.powf(-(dim as f64) / 2.0);
    let mut out = SiteMap::default();
    for k in 0..count {
        let mut rest = k;
        let mut c = [0i32; MAX_DIM];
        let mut x = [0.0; MAX_DIM];
        for axis in 0..dim {
            c[axis] = (rest % side) as i32 - r;
            rest /= side;
            x[axis] = f64::from(c[axis]) / alpha;
        }
        let v = scale * psi(&x[..dim]);
        if v != 0.0 {
            out.insert(Site::new(&c[..dim])?, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn cos_bump(r: f64) -> impl Fn(&[f64]) -> f64 {
        move |x: &[f64]| (PI * x[0] / (2.0 * r)).cos()
    }

    #[test]
    fn constant_potential_dirichlet_ground_state() {
        let grid = Grid::new(1, 4.0, 256, Boundary::Dirichlet).unwrap();
        let p = PotentialProblem::from_fn(grid, Covariance::identity(1), |_| 0.7).unwrap();
        let e = principal_eigenvalue_continuum(&p).unwrap();
        let exact = 0.7 - 0.5 * (PI / 8.0).powi(2);
        assert!((e.value - exact).abs() <= 0.01 * exact.abs());
        assert!(e.vector.values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn constant_potential_periodic_is_exact() {
        let grid = Grid::new(1, 4.0, 64, Boundary::Periodic).unwrap();
        let p = PotentialProblem::from_fn(grid, Covariance::identity(1), |_| -0.3).unwrap();
        assert!((principal_eigenvalue_continuum(&p).unwrap().value + 0.3).abs() < 1e-10);
        let grid2 = Grid::new(2, 2.0, 40, Boundary::Periodic).unwrap();
        let p2 = PotentialProblem::from_fn(grid2, Covariance::identity(2), |_| 1.25).unwrap();
        let e = principal_eigenvalue_continuum(&p2).unwrap();
        assert!((e.value - 1.25).abs() < 1e-10, "{}", e.value);
        assert!(e.converged);
    }

    #[test]
    fn eigenvalue_dominates_rayleigh_quotients() {
        let grid = Grid::new(1, 3.0, 64, Boundary::Dirichlet).unwrap();
        let p = PotentialProblem::from_fn(grid, Covariance::scaled_identity(1, 0.7), |x| (x[0]).sin() + 0.2 * x[0]).unwrap();
        let e = principal_eigenvalue_continuum(&p).unwrap();
        assert!((p.rayleigh_quotient(&e.vector.values) - e.value).abs() < 1e-10);
        let mut rng = init_rng(1);
        for _ in 0..100 {
            let psi: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>() - 0.3).collect();
            assert!(p.rayleigh_quotient(&psi) <= e.value + 1e-9);
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let grid = Grid::new(2, 2.0, 36, Boundary::Dirichlet).unwrap();
        let p = PotentialProblem::from_fn(grid, Covariance::identity(2), |x| (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap();
        assert!(grid.len() > DENSE_EIGEN_LIMIT);
        let lanczos = principal_eigenvalue_continuum(&p).unwrap();
        assert!(lanczos.converged);
        let small = Grid::new(2, 2.0, 32, Boundary::Dirichlet).unwrap();
        let q = PotentialProblem::from_fn(small, Covariance::identity(2), |x| (-(x[0] * x[0] + x[1] * x[1])).exp()).unwrap();
        let dense = principal_eigenvalue_continuum(&q).unwrap();
        assert!((p.rayleigh_quotient(&lanczos.vector.values) - lanczos.value).abs() < 1e-9);
        let (theta, _, converged, _) = lanczos_top(|v| q.apply(v), small.len(), 3, 1e-10);
        assert!(converged);
        assert!((theta - dense.value).abs() < 1e-9, "{theta} vs {}", dense.value);
    }

    #[test]
    fn eigenvalue_monotone_in_potential_and_box() {
        let mut rng = init_rng(5);
        let grid = Grid::new(1, 2.0, 48, Boundary::Dirichlet).unwrap();
        for _ in 0..5 {
            let f: Vec<f64> = (0..48).map(|_| rng.random::<f64>()).collect();
            let g: Vec<f64> = f.iter().map(|v| v + 0.5 * rng.random::<f64>()).collect();
            let lf = principal_eigenvalue_continuum(&PotentialProblem::new(GridFunction { grid, values: f }, Covariance::identity(1)).unwrap()).unwrap();
            let lg = principal_eigenvalue_continuum(&PotentialProblem::new(GridFunction { grid, values: g }, Covariance::identity(1)).unwrap()).unwrap();
            assert!(lf.value <= lg.value + 1e-12);
        }
        let h = 1.0 / 16.0;
        let mut last = f64::NEG_INFINITY;
        for r in [1.0, 2.0, 4.0] {
            let grid = Grid::new(1, r, (2.0 * r / h) as usize, Boundary::Dirichlet).unwrap();
            let p = PotentialProblem::from_fn(grid, Covariance::identity(1), |x| (-x[0] * x[0]).exp()).unwrap();
            let v = principal_eigenvalue_continuum(&p).unwrap().value;
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn transfer_matrix_symmetric_and_stochastic() {
        let k = StepKernel::simple(1).unwrap();
        let t = TransferMatrix::new(&k, |_| 0.0, 2.0, 4.0, Boundary::Periodic).unwrap();
        let m = t.to_dense();
        assert_eq!(m, m.transpose());
        assert!((t.principal_eigenvalue() - 1.0).abs() < 1e-12);
        let tf = TransferMatrix::new(&k, cos_bump(2.0), 2.0, 4.0, Boundary::Dirichlet).unwrap();
        let mf = tf.to_dense();
        assert_eq!(mf, mf.transpose());
        assert!(mf.iter().all(|v| *v >= 0.0));
        let k2 = StepKernel::simple(2).unwrap();
        let t2 = TransferMatrix::new(&k2, |x| x[0] * x[1], 1.0, 3.0, Boundary::Periodic).unwrap();
        let m2 = t2.to_dense();
        assert_eq!(m2, m2.transpose());
    }

    #[test]
    fn dirichlet_below_periodic() {
        let k = StepKernel::simple(1).unwrap();
        for f in [&(|_: &[f64]| 0.0) as &dyn Fn(&[f64]) -> f64, &|x: &[f64]| x[0].sin()] {
            let d = TransferMatrix::new(&k, f, 2.0, 4.0, Boundary::Dirichlet).unwrap().principal_eigenvalue();
            let p = TransferMatrix::new(&k, f, 2.0, 4.0, Boundary::Periodic).unwrap().principal_eigenvalue();
            assert!(d < p);
        }
        let grid = Grid::new(1, 2.0, 64, Boundary::Dirichlet).unwrap();
        let pd = PotentialProblem::from_fn(grid, Covariance::identity(1), |x| x[0].cos()).unwrap();
        let pp = PotentialProblem::from_fn(grid.with_boundary(Boundary::Periodic), Covariance::identity(1), |x| x[0].cos()).unwrap();
        assert!(principal_eigenvalue_continuum(&pd).unwrap().value < principal_eigenvalue_continuum(&pp).unwrap().value);
    }

    #[test]
    fn zero_potential_cumulants() {
        let k = StepKernel::simple(1).unwrap();
        let per = transfer_cumulant(&k, |_| 0.0, 2.0, 4, 64, Boundary::Periodic).unwrap();
        assert!(per.value.abs() < 1e-12);
        // survival oracle by direct iteration of the killed walk
        let r = 8i32;
        let mut prev = 0.0;
        for n in [16u64, 64, 256, 1024] {
            let mut mass = vec![0.0; 2 * r as usize];
            mass[r as usize] = 1.0;
            for _ in 1..n {
                let mut next = vec![0.0; mass.len()];
                for (i, m) in mass.iter().enumerate() {
                    if i > 0 {
                        next[i - 1] += 0.5 * m;
                    }
                    if i + 1 < next.len() {
                        next[i + 1] += 0.5 * m;
                    }
                }
                mass = next;
            }
            let survival: f64 = mass.iter().sum();
            let dir = transfer_cumulant(&k, |_| 0.0, 2.0, 4, n, Boundary::Dirichlet).unwrap();
            assert!((dir.value - 16.0 / n as f64 * survival.ln()).abs() < 1e-10);
            assert!(dir.value < 0.0);
            // the finite-n values decrease toward the Perron limit
            assert!(dir.value < prev && dir.value > dir.lattice_limit);
            prev = dir.value;
        }
    }

    #[test]
    fn eigendecomposition_and_vector_iteration_agree() {
        let k = StepKernel::simple(2).unwrap();
        let m = TransferMatrix::new(&k, |x| (x[0] + x[1]).cos(), 2.0, 6.0, Boundary::Dirichlet).unwrap();
        assert!(m.states() <= DENSE_TRANSFER_LIMIT);
        let dense = m.log_expectation(180).unwrap();
        let mut v = m.half_weights.clone();
        let mut log_scale = 0.0;
        for _ in 0..179 {
            v = m.apply(&v);
            let s = v.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
            log_scale += s.ln();
            v.iter_mut().for_each(|x| *x /= s);
        }
        let origin = m.lattice.index_of(&[0, 0]);
        let iterated = log_scale + (m.half_weights[origin] * v[origin]).ln();
        assert!((dense - iterated).abs() < 1e-8 * dense.abs().max(1.0));
    }

    #[test]
    fn transfer_cumulant_approaches_continuum() {
        let k = StepKernel::simple(1).unwrap();
        let r = 4.0;
        let grid = Grid::new(1, r, 512, Boundary::Dirichlet).unwrap();
        let p = PotentialProblem::from_fn(grid, Covariance::identity(1), cos_bump(r)).unwrap();
        let lambda = principal_eigenvalue_continuum(&p).unwrap().value;
        let mut last = f64::INFINITY;
        for t in [4u64, 16, 64] {
            let c = transfer_cumulant(&k, cos_bump(r), r, 8, t * 64, Boundary::Dirichlet).unwrap();
            let err = (c.value - lambda).abs();
            assert!(err < last);
            last = err;
        }
        assert!(last <= 0.05 * lambda.abs(), "error {last} vs λ {lambda}");
    }

    #[test]
    fn dirichlet_form_small_case() {
        let k = StepKernel::simple(1).unwrap();
        let mut g = SiteMap::default();
        g.insert(Site::new(&[-1]).unwrap(), 0.0);
        g.insert(Site::new(&[0]).unwrap(), 1.0);
        g.insert(Site::new(&[1]).unwrap(), 0.0);
        assert_eq!(discrete_dirichlet_form(&k, &g).unwrap(), 1.0);
        let mut only = SiteMap::default();
        only.insert(Site::new(&[0]).unwrap(), 1.0);
        assert_eq!(discrete_dirichlet_form(&k, &only).unwrap(), 1.0);
        let zero: SiteMap<f64> = SiteMap::default();
        assert_eq!(discrete_dirichlet_form(&k, &zero).unwrap(), 0.0);
    }

    #[test]
    fn dirichlet_form_scales_to_half_energy() {
        // ψ(x) = π^{-1/4} e^{-x²/2} has ‖ψ'‖² = 1/2
        let k = StepKernel::simple(1).unwrap();
        let alpha = 32.0;
        let g = lattice_rescaling(1, |x| PI.powf(-0.25) * (-x[0] * x[0] / 2.0).exp(), 8.0, alpha).unwrap();
        let scaled = alpha * alpha * discrete_dirichlet_form(&k, &g).unwrap();
        assert!((scaled - 0.25).abs() <= 0.05 * 0.25, "{scaled}");
        let k2 = StepKernel::simple(2).unwrap();
        let g2 = lattice_rescaling(2, |x| PI.powf(-0.5) * (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp(), 5.0, 16.0).unwrap();
        // Γ = I/2 so ½‖Γ^{1/2}∇ψ‖² = ¼ ‖∇ψ‖² = ¼
        let scaled2 = 256.0 * discrete_dirichlet_form(&k2, &g2).unwrap();
        assert!((scaled2 - 0.25).abs() <= 0.05 * 0.25, "{scaled2}");
    }
}
