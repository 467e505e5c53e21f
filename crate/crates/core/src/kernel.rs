//! One-step laws of the walk, their periodization onto a torus, and the
//! geometrically stopped Green's function of the periodized walk.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::lattice::{wrap_coord, MAX_DIM};
use crate::math::fit_slope;

/// Largest torus for which dense matrices are formed.
pub const DENSE_STATE_LIMIT: usize = 20_000;

/// Symmetric positive-definite `d×d` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    dim: usize,
    entries: Vec<f64>,
}

impl Covariance {
    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = scale;
        }
        Covariance { dim, entries }
    }

    pub fn from_rows(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(invalid("covariance must be a non-empty square matrix"));
        }
        for i in 0..dim {
            for j in 0..dim {
                if entries[i * dim + j] != entries[j * dim + i] {
                    return Err(invalid("covariance must be symmetric"));
                }
            }
        }
        let m = DMatrix::from_row_slice(dim, dim, &entries);
        if m.cholesky().is_none() {
            return Err(invalid("covariance must be positive definite"));
        }
        Ok(Covariance { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| i == j || self.get(i, j) == 0.0))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Covariance { dim: self.dim, entries: self.entries.iter().map(|v| v * factor).collect() }
    }

    pub fn determinant(&self) -> f64 {
        DMatrix::from_row_slice(self.dim, self.dim, &self.entries).determinant()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }
}

/// Finite-support symmetric step distribution on `Z^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepKernel {
    dim: usize,
    offsets: Vec<i32>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    uniform: bool,
    covariance: Covariance,
}

impl StepKernel {
    /// Builds a kernel from `(offset, probability)` pairs. Repeated offsets are
    /// merged and zero weights dropped.
    pub fn new(dim: usize, support: &[(Vec<i32>, f64)]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidKernel(format!("dimension {dim} outside 1..=4")));
        }
        let mut merged: Vec<(Vec<i32>, f64)> = Vec::new();
        for (offset, p) in support {
            if offset.len() != dim {
                return Err(Error::InvalidKernel(format!("offset {offset:?} is not {dim}-dimensional")));
            }
            if !(p.is_finite() && *p >= 0.0) {
                return Err(Error::InvalidKernel(format!("probability {p} is negative or not finite")));
            }
            if *p == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(o, _)| o == offset) {
                Some(entry) => entry.1 += p,
                None => merged.push((offset.clone(), *p)),
            }
        }
        if merged.is_empty() {
            return Err(Error::InvalidKernel("empty support".to_string()));
        }
        let total: f64 = merged.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidKernel(format!("probabilities sum to {total}")));
        }
        for (offset, p) in &merged {
            let neg: Vec<i32> = offset.iter().map(|c| -c).collect();
            match merged.iter().find(|(o, _)| *o == neg) {
                Some((_, q)) if q == p => {}
                _ => {
                    return Err(Error::InvalidKernel(format!(
                        "weight of {offset:?} differs from weight of its negation"
                    )))
                }
            }
        }
        let mut cov = vec![0.0; dim * dim];
        for (offset, p) in &merged {
            for i in 0..dim {
                for j in 0..dim {
                    cov[i * dim + j] += p * offset[i] as f64 * offset[j] as f64;
                }
            }
        }
        let covariance = Covariance { dim, entries: cov };
        if covariance.determinant() <= 1e-12 {
            return Err(Error::InvalidKernel("covariance is singular".to_string()));
        }
        let probs: Vec<f64> = merged.iter().map(|(_, p)| *p).collect();
        let uniform = probs.iter().all(|p| *p == probs[0]);
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(StepKernel {
            dim,
            offsets: merged.into_iter().flat_map(|(o, _)| o).collect(),
            probs,
            cumulative,
            uniform,
            covariance,
        })
    }

    /// Simple random walk: mass `1/(2d)` on each `±e_i`.
    pub fn simple(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidKernel("dimension must be positive".to_string()));
        }
        let w = 1.0 / (2 * dim) as f64;
        let mut support = Vec::with_capacity(2 * dim);
        for axis in 0..dim {
            for sign in [1, -1] {
                let mut e = vec![0; dim];
                e[axis] = sign;
                support.push((e, w));
            }
        }
        Self::new(dim, &support)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn offset(&self, i: usize) -> &[i32] {
        &self.offsets[i * self.dim..(i + 1) * self.dim]
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn steps(&self) -> impl Iterator<Item = (&[i32], f64)> + '_ {
        (0..self.len()).map(move |i| (self.offset(i), self.probs[i]))
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    /// Largest coordinate magnitude of any step.
    pub fn radius(&self) -> i32 {
        self.offsets.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    /// Draws the index of one step.
    #[inline]
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.uniform {
            return rng.random_range(0..self.probs.len());
        }
        let u: f64 = rng.random();
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.probs.len() - 1)
    }

    /// Probability of the step `z` (zero off the support).
    pub fn weight_of(&self, z: &[i32]) -> f64 {
        (0..self.len()).find(|&i| self.offset(i) == z).map_or(0.0, |i| self.probs[i])
    }
}

/// Walk on the torus `{-R, ..., R-1}^d` with opposite faces identified.
#[derive(Clone, Debug)]
pub struct TorusKernel {
    base: StepKernel,
    radius: usize,
    /// Sparse rows: `(column, probability)` with merged wrap images.
    rows: Vec<Vec<(usize, f64)>>,
}

impl TorusKernel {
    pub fn new(base: &StepKernel, radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(invalid("torus radius must be at least 1"));
        }
        if 2 * radius < 2 * base.radius() as usize {
            return Err(invalid(format!(
                "torus side {} too small for step radius {}",
                2 * radius,
                base.radius()
            )));
        }
        let dim = base.dim();
        let side = 2 * radius;
        let states = side.checked_pow(dim as u32).ok_or(Error::BoxTooLarge { states: usize::MAX, limit: DENSE_STATE_LIMIT })?;
        let r = radius as i32;
        let mut rows = Vec::with_capacity(states);
        let mut coords = [0i32; MAX_DIM];
        for state in 0..states {
            torus_coords(state, dim, radius, &mut coords);
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(base.len());
            for (step, p) in base.steps() {
                let mut target = [0i32; MAX_DIM];
                for axis in 0..dim {
                    target[axis] = wrap_coord(coords[axis] + step[axis], r);
                }
                let col = torus_index(&target, dim, radius);
                match row.iter_mut().find(|(c, _)| *c == col) {
                    Some(entry) => entry.1 += p,
                    None => row.push((col, p)),
                }
            }
            row.sort_by_key(|e| e.0);
            rows.push(row);
        }
        Ok(TorusKernel { base: base.clone(), radius, rows })
    }

    pub fn base(&self) -> &StepKernel {
        &self.base
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, state: usize) -> &[(usize, f64)] {
        &self.rows[state]
    }

    /// Index of the torus site; coordinates must already lie in `[-R, R)`.
    pub fn index_of(&self, coords: &[i32]) -> usize {
        let mut c = [0i32; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        torus_index(&c, self.base.dim(), self.radius)
    }

    pub fn coords_of(&self, state: usize) -> [i32; MAX_DIM] {
        let mut c = [0i32; MAX_DIM];
        torus_coords(state, self.base.dim(), self.radius, &mut c);
        c
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.check_dense()?;
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, p) in row {
                m[(i, j)] += p;
            }
        }
        Ok(m)
    }

    fn check_dense(&self) -> Result<usize> {
        let n = self.states();
        if n > DENSE_STATE_LIMIT {
            return Err(Error::BoxTooLarge { states: n, limit: DENSE_STATE_LIMIT });
        }
        Ok(n)
    }

    /// `s`-step transition matrix by repeated squaring.
    pub fn transition_power(&self, s: u64) -> Result<DMatrix<f64>> {
        let n = self.check_dense()?;
        let mut result = DMatrix::identity(n, n);
        if s == 0 {
            return Ok(result);
        }
        let mut base = self.to_dense()?;
        let mut e = s;
        loop {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e == 0 {
                break;
            }
            base = &base * &base;
        }
        Ok(result)
    }

    /// `G_λ = Σ_{s≥0} e^{-λs} P^s`, from `(I - e^{-λ} P) G = I`.
    pub fn green_function(&self, lambda: f64) -> Result<DMatrix<f64>> {
        if !(lambda > 0.0) {
            return Err(invalid("green function needs λ > 0"));
        }
        let n = self.check_dense()?;
        let system = self.resolvent_system(lambda)?;
        let lu = system.clone().lu();
        let identity = DMatrix::<f64>::identity(n, n);
        let g = lu.solve(&identity).ok_or(Error::SingularSolve { residual: f64::INFINITY })?;
        let residual = (&system * &g - identity).amax();
        if residual > 1e-9 {
            return Err(Error::SingularSolve { residual });
        }
        Ok(g)
    }

    /// Row `x` of the Green's function (one right-hand side; `P` is symmetric).
    pub fn green_row(&self, lambda: f64, x: usize) -> Result<DVector<f64>> {
        if !(lambda > 0.0) {
            return Err(invalid("green function needs λ > 0"));
        }
        let n = self.check_dense()?;
        let system = self.resolvent_system(lambda)?;
        let mut rhs = DVector::zeros(n);
        rhs[x] = 1.0;
        let g = system.clone().lu().solve(&rhs).ok_or(Error::SingularSolve { residual: f64::INFINITY })?;
        let residual = (&system * &g - rhs).amax();
        if residual > 1e-9 {
            return Err(Error::SingularSolve { residual });
        }
        Ok(g)
    }

    fn resolvent_system(&self, lambda: f64) -> Result<DMatrix<f64>> {
        let n = self.states();
        let decay = (-lambda).exp();
        let mut m = self.to_dense()? * (-decay);
        for i in 0..n {
            m[(i, i)] += 1.0;
        }
        Ok(m)
    }
}

fn torus_index(coords: &[i32; MAX_DIM], dim: usize, radius: usize) -> usize {
    let side = 2 * radius;
    let mut idx = 0usize;
    for axis in (0..dim).rev() {
        idx = idx * side + (coords[axis] + radius as i32) as usize;
    }
    idx
}

fn torus_coords(mut state: usize, dim: usize, radius: usize, out: &mut [i32; MAX_DIM]) {
    let side = 2 * radius;
    for c in out.iter_mut().take(dim) {
        *c = (state % side) as i32 - radius as i32;
        state /= side;
    }
}

/// Growth of `Σ_y G^{(⌈Rα⌉)}_{α^{-2}}(0, y)^{p'}` in the scale `α`.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenGrowth {
    pub alphas: Vec<f64>,
    pub sums: Vec<f64>,
    /// Least-squares slope of `log sum` against `log α`.
    pub slope: f64,
    /// Exponent `d + (2-d)p'` of the bound.
    pub bound_exponent: f64,
}

pub fn green_growth_exponent(kernel: &StepKernel, radius: f64, power: f64, alphas: &[f64]) -> Result<GreenGrowth> {
    let d = kernel.dim() as f64;
    if !(power > 1.0) {
        return Err(invalid("p' must exceed 1"));
    }
    if kernel.dim() >= 3 && power >= d / (d - 2.0) {
        return Err(invalid(format!("p' must be below d/(d-2) = {}", d / (d - 2.0))));
    }
    if alphas.len() < 2 {
        return Err(invalid("slope needs at least two scales"));
    }
    if !(radius > 0.0) || alphas.iter().any(|a| !(*a >= 1.0)) {
        return Err(invalid("radius must be positive and scales at least 1"));
    }
    let mut sums = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let torus_radius = (radius * alpha).ceil() as usize;
        let torus = TorusKernel::new(kernel, torus_radius)?;
        let origin = torus.index_of(&vec![0; kernel.dim()]);
        let row = torus.green_row(alpha.powi(-2), origin)?;
        sums.push(row.iter().map(|g| g.powf(power)).sum());
    }
    let xs: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
    let ys: Vec<f64> = sums.iter().map(|s: &f64| s.ln()).collect();
    Ok(GreenGrowth {
        alphas: alphas.to_vec(),
        sums,
        slope: fit_slope(&xs, &ys),
        bound_exponent: d + (2.0 - d) * power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srw_support_and_covariance() {
        let k = StepKernel::simple(1).unwrap();
        assert_eq!(k.len(), 2);
        assert_eq!(k.weight_of(&[1]), 0.5);
        assert_eq!(k.weight_of(&[-1]), 0.5);
        assert_eq!(k.covariance().entries(), &[1.0]);
        let k2 = StepKernel::simple(2).unwrap();
        assert_eq!(k2.covariance().entries(), &[0.5, 0.0, 0.0, 0.5]);
        let k3 = StepKernel::simple(3).unwrap();
        let total: f64 = k3.steps().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-15);
        for (z, p) in k3.steps() {
            let neg: Vec<i32> = z.iter().map(|c| -c).collect();
            assert_eq!(k3.weight_of(&neg), p);
        }
    }

    #[test]
    fn mean_zero_exactly() {
        let k = StepKernel::new(2, &[(vec![1, 2], 0.2), (vec![-1, -2], 0.2), (vec![0, 1], 0.3), (vec![0, -1], 0.3)]).unwrap();
        for axis in 0..2 {
            let m: f64 = k.steps().map(|(z, p)| p * z[axis] as f64).sum();
            assert_eq!(m, 0.0);
        }
    }

    #[test]
    fn rejects_bad_kernels() {
        assert!(StepKernel::simple(0).is_err());
        assert!(StepKernel::new(1, &[(vec![1], 0.6), (vec![-1], 0.4)]).is_err());
        assert!(StepKernel::new(1, &[(vec![1], 0.5), (vec![-1], 0.4)]).is_err());
        assert!(StepKernel::new(1, &[(vec![1], 1.0)]).is_err());
        // singular: all mass on one axis in d = 2
        assert!(StepKernel::new(2, &[(vec![1, 0], 0.5), (vec![-1, 0], 0.5)]).is_err());
        assert!(StepKernel::new(1, &[(vec![1], -0.5), (vec![-1], 1.5)]).is_err());
    }

    #[test]
    fn torus_three_sites_wraps() {
        // side 2R = 2 with R = 1: both steps from any site land on the other site
        let k = StepKernel::simple(1).unwrap();
        let t = TorusKernel::new(&k, 1).unwrap();
        let p = t.to_dense().unwrap();
        assert_eq!(p.nrows(), 2);
        assert_eq!(p[(0, 1)], 1.0);
        assert_eq!(p[(0, 0)], 0.0);
    }

    #[test]
    fn torus_rows_sum_to_one_with_wide_kernel() {
        let k = StepKernel::new(1, &[(vec![2], 0.1), (vec![-2], 0.1), (vec![1], 0.4), (vec![-1], 0.4)]).unwrap();
        let t = TorusKernel::new(&k, 2).unwrap();
        let p = t.to_dense().unwrap();
        for i in 0..p.nrows() {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p, p.transpose());
    }

    #[test]
    fn interior_rows_match_free_walk() {
        let k = StepKernel::simple(2).unwrap();
        let t = TorusKernel::new(&k, 5).unwrap();
        let p = t.to_dense().unwrap();
        let x = t.index_of(&[0, 0]);
        for (z, w) in k.steps() {
            assert_eq!(p[(x, t.index_of(z))], w);
        }
        assert_eq!(p.row(x).iter().filter(|v| **v > 0.0).count(), 4);
    }

    #[test]
    fn transition_powers() {
        let k = StepKernel::simple(1).unwrap();
        let t = TorusKernel::new(&k, 2).unwrap();
        assert_eq!(t.transition_power(0).unwrap(), DMatrix::identity(4, 4));
        assert_eq!(t.transition_power(1).unwrap(), t.to_dense().unwrap());
        // side 4, from 0: two-step paths 0→±1→{0, ±2}; -2 ≡ 2
        let p2 = t.transition_power(2).unwrap();
        let o = t.index_of(&[0]);
        assert!((p2[(o, o)] - 0.5).abs() < 1e-15);
        assert!((p2[(o, t.index_of(&[-2]))] - 0.5).abs() < 1e-15);
        let p = t.to_dense().unwrap();
        let mut naive = DMatrix::identity(4, 4);
        for s in 1..=8u64 {
            naive = &naive * &p;
            assert!((t.transition_power(s).unwrap() - &naive).amax() < 1e-12);
        }
    }

    #[test]
    fn green_row_sums_and_limits() {
        let k = StepKernel::simple(2).unwrap();
        let t = TorusKernel::new(&k, 3).unwrap();
        for lambda in [0.1, 1.0, 10.0] {
            let g = t.green_function(lambda).unwrap();
            let expect = 1.0 / (1.0 - (-lambda).exp());
            for i in 0..g.nrows() {
                assert!((g.row(i).sum() - expect).abs() < 1e-10 * expect);
            }
            assert!(g.iter().all(|v| *v >= -1e-14));
        }
        let g = t.green_function(50.0).unwrap();
        assert!((g - DMatrix::identity(36, 36)).amax() < 1e-12);
        assert!(t.green_function(0.0).is_err());
    }

    #[test]
    fn green_matches_truncated_series() {
        let k = StepKernel::simple(1).unwrap();
        let t = TorusKernel::new(&k, 1).unwrap();
        let p = t.to_dense().unwrap();
        let mut series = DMatrix::zeros(2, 2);
        let mut power = DMatrix::identity(2, 2);
        for s in 0..=60 {
            series += &power * (-(s as f64)).exp();
            power = &power * &p;
        }
        let g = t.green_function(1.0).unwrap();
        assert!((g - series).amax() < 1e-12);
    }

    #[test]
    fn green_growth_slopes_respect_bound() {
        let k1 = StepKernel::simple(1).unwrap();
        let g1 = green_growth_exponent(&k1, 1.0, 2.0, &[4.0, 8.0, 16.0]).unwrap();
        assert_eq!(g1.bound_exponent, 3.0);
        assert!(g1.slope <= g1.bound_exponent + 0.3, "{g1:?}");
        let k2 = StepKernel::simple(2).unwrap();
        let g2 = green_growth_exponent(&k2, 1.0, 2.0, &[4.0, 8.0, 16.0]).unwrap();
        assert!(g2.sums.iter().all(|s| s.is_finite()));
        assert!(g2.slope <= 2.0 + 0.3, "{g2:?}");
        assert!(green_growth_exponent(&k1, 1.0, 2.0, &[4.0]).is_err());
        let k3 = StepKernel::simple(3).unwrap();
        assert!(green_growth_exponent(&k3, 1.0, 3.0, &[2.0, 4.0]).is_err());
        assert!(green_growth_exponent(&k1, 1.0, 1.0, &[2.0, 4.0]).is_err());
    }
}
