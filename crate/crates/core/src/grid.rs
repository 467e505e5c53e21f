//! Cell-centered grids on `Q_R = [-R, R]^d`, discrete Dirichlet energies and mollifiers.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::kernel::Covariance;
use crate::lattice::MAX_DIM;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Values outside the box are zero.
    Dirichlet,
    /// Opposite faces are identified.
    Periodic,
}

/// Uniform mesh with `m` cells per axis of width `h = 2R/m`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    radius: f64,
    m: usize,
    boundary: Boundary,
}

impl Grid {
    pub fn new(dim: usize, radius: f64, m: usize, boundary: Boundary) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid("grid dimension must be in 1..=4"));
        }
        if !(radius > 0.0 && radius.is_finite()) || m < 2 {
            return Err(invalid("grid needs R > 0 and at least two cells per axis"));
        }
        if m.checked_pow(dim as u32).is_none_or(|n| n > 1 << 26) {
            return Err(invalid("grid has too many cells"));
        }
        Ok(Grid { dim, radius, m, boundary })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn cells_per_axis(&self) -> usize {
        self.m
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn with_boundary(&self, boundary: Boundary) -> Grid {
        Grid { boundary, ..*self }
    }

    pub fn h(&self) -> f64 {
        2.0 * self.radius / self.m as f64
    }

    /// Volume `h^d` of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_coords(&self, mut index: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for ci in c.iter_mut().take(self.dim) {
            *ci = index % self.m;
            index /= self.m;
        }
        c
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for axis in (0..self.dim).rev() {
            idx = idx * self.m + coords[axis];
        }
        idx
    }

    /// Cell center along one axis.
    #[inline]
    pub fn center_1d(&self, i: usize) -> f64 {
        -self.radius + (i as f64 + 0.5) * self.h()
    }

    pub fn center(&self, index: usize) -> [f64; MAX_DIM] {
        let c = self.index_coords(index);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = self.center_1d(c[axis]);
        }
        x
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow(axis as u32)
    }
}

/// Values at the cell centers of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        GridFunction { grid, values: vec![0.0; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid("value count does not match the grid"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid values must be finite"));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: Grid, f: F) -> Self {
        let d = grid.dim();
        let values = (0..grid.len()).map(|i| f(&grid.center(i)[..d])).collect();
        GridFunction { grid, values }
    }

    /// `h^d Σ v`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }

    /// `h^d Σ |v|^r`.
    pub fn norm_pow(&self, r: f64) -> f64 {
        self.grid.cell_volume() * self.values.iter().map(|v| v.abs().powf(r)).sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(&self.grid, &self.values)
    }

    /// Rescales to unit discrete `L²` norm.
    pub fn normalized(mut self) -> Self {
        let n = self.l2_norm();
        for v in &mut self.values {
            *v /= n;
        }
        self
    }

    pub fn squared(&self) -> GridFunction {
        GridFunction { grid: self.grid, values: self.values.iter().map(|v| v * v).collect() }
    }

    pub fn energy(&self, gamma: &Covariance) -> f64 {
        energy(&self.grid, gamma, &self.values)
    }
}

pub fn l2_norm(grid: &Grid, values: &[f64]) -> f64 {
    (grid.cell_volume() * values.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

/// `h^d Σ a b`.
pub fn inner(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Forward differences on the extended index set.
///
/// For Dirichlet grids the set is `{-1, ..., m-1}^d` (stored shifted by one,
/// side `m+1`) with zero values outside the box; periodic grids use
/// `{0, ..., m-1}^d` with wrapping. Returns the side and, per extended cell,
/// the pair `(∇_h g, Γ ∇_h g)`.
#[allow(clippy::type_complexity)]
fn differences(grid: &Grid, gamma: &Covariance, g: &[f64]) -> (usize, Vec<([f64; MAX_DIM], [f64; MAX_DIM])>) {
    let d = grid.dim();
    let m = grid.cells_per_axis();
    let h = grid.h();
    let (side, shift) = match grid.boundary() {
        Boundary::Dirichlet => (m + 1, 1isize),
        Boundary::Periodic => (m, 0),
    };
    let total = side.pow(d as u32);
    let mut out = vec![([0.0; MAX_DIM], [0.0; MAX_DIM]); total];
    let mut c = [0isize; MAX_DIM];
    for (e, (grad, flux)) in out.iter_mut().enumerate() {
        let mut rest = e;
        for ci in c.iter_mut().take(d) {
            *ci = (rest % side) as isize - shift;
            rest /= side;
        }
        let here = sample(grid, g, &c);
        for (axis, gr) in grad.iter_mut().enumerate().take(d) {
            let mut n = c;
            n[axis] += 1;
            *gr = (sample(grid, g, &n) - here) / h;
        }
        for (a, fa) in flux.iter_mut().enumerate().take(d) {
            *fa = (0..d).map(|b| gamma.get(a, b) * grad[b]).sum();
        }
    }
    (side, out)
}

/// `½ h^d Σ (∇_h g)ᵀ Γ (∇_h g)` with forward differences.
pub fn energy(grid: &Grid, gamma: &Covariance, g: &[f64]) -> f64 {
    energy_and_gradient(grid, gamma, g, false).0
}

/// Energy and, if requested, its partial derivatives with respect to the grid values.
pub fn energy_and_gradient(grid: &Grid, gamma: &Covariance, g: &[f64], want_gradient: bool) -> (f64, Vec<f64>) {
    let d = grid.dim();
    let m = grid.cells_per_axis();
    let h = grid.h();
    let hd = grid.cell_volume();
    let (side, diffs) = differences(grid, gamma, g);
    let e: f64 = diffs.iter().map(|(gr, fl)| (0..d).map(|a| gr[a] * fl[a]).sum::<f64>()).sum();
    let energy = 0.5 * hd * e;
    if !want_gradient {
        return (energy, Vec::new());
    }
    // ∂E/∂g(y) = h^{d-1} Σ_a [(Γ∇g)_a(y - e_a) - (Γ∇g)_a(y)]
    let dirichlet = grid.boundary() == Boundary::Dirichlet;
    let shift = usize::from(dirichlet);
    let scale = hd / h;
    let mut grad = vec![0.0; g.len()];
    for (y, gy) in grad.iter_mut().enumerate() {
        let cy = grid.index_coords(y);
        let mut acc = 0.0;
        for a in 0..d {
            let mut here = 0usize;
            let mut prev = 0usize;
            for k in (0..d).rev() {
                let ck = cy[k] + shift;
                let pk = match (k == a, dirichlet) {
                    (false, _) => ck,
                    (true, true) => ck - 1,
                    (true, false) => (cy[k] + m - 1) % m,
                };
                here = here * side + ck;
                prev = prev * side + pk;
            }
            acc += diffs[prev].1[a] - diffs[here].1[a];
        }
        *gy = scale * acc;
    }
    (energy, grad)
}

fn sample(grid: &Grid, g: &[f64], c: &[isize; MAX_DIM]) -> f64 {
    let m = grid.cells_per_axis() as isize;
    let mut idx = 0usize;
    for axis in (0..grid.dim()).rev() {
        let mut x = c[axis];
        match grid.boundary() {
            Boundary::Periodic => x = x.rem_euclid(m),
            Boundary::Dirichlet => {
                if x < 0 || x >= m {
                    return 0.0;
                }
            }
        }
        idx = idx * m as usize + x as usize;
    }
    g[idx]
}

/// Discrete smooth bump `exp(-1/(1-|x/δ|²))` normalized so that `h^d Σ κ = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mollifier {
    delta: f64,
    /// `(offset in cells, weight)`.
    taps: Vec<([isize; MAX_DIM], f64)>,
    under_resolved: bool,
}

impl Mollifier {
    pub fn new(grid: &Grid, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(invalid("mollifier width must be positive"));
        }
        let h = grid.h();
        let d = grid.dim();
        if delta < h {
            return Ok(Mollifier { delta, taps: vec![([0; MAX_DIM], 1.0 / grid.cell_volume())], under_resolved: true });
        }
        let reach = (delta / h).ceil() as isize;
        let span = (2 * reach + 1) as usize;
        let mut taps = Vec::new();
        for k in 0..span.pow(d as u32) {
            let mut rest = k;
            let mut off = [0isize; MAX_DIM];
            let mut r2 = 0.0;
            for o in off.iter_mut().take(d) {
                *o = (rest % span) as isize - reach;
                rest /= span;
                r2 += (*o as f64 * h / delta).powi(2);
            }
            if r2 < 1.0 {
                taps.push((off, (-1.0 / (1.0 - r2)).exp()));
            }
        }
        let total: f64 = grid.cell_volume() * taps.iter().map(|t| t.1).sum::<f64>();
        for t in &mut taps {
            t.1 /= total;
        }
        Ok(Mollifier { delta, taps, under_resolved: false })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Whether `δ < h`, in which case convolution is the identity.
    pub fn is_under_resolved(&self) -> bool {
        self.under_resolved
    }

    pub fn weights(&self) -> impl Iterator<Item = (&[isize; MAX_DIM], f64)> + '_ {
        self.taps.iter().map(|(o, w)| (o, *w))
    }

    /// `(f * κ)(x) = h^d Σ_k κ(k) f(x - k)`; periodic grids wrap, Dirichlet grids zero-pad.
    /// This operator is self-adjoint for the plain dot product.
    pub fn apply(&self, grid: &Grid, f: &[f64]) -> Vec<f64> {
        if self.under_resolved {
            return f.to_vec();
        }
        let d = grid.dim();
        let hd = grid.cell_volume();
        let mut out = vec![0.0; f.len()];
        let mut c = [0isize; MAX_DIM];
        for (x, o) in out.iter_mut().enumerate() {
            let cx = grid.index_coords(x);
            let mut acc = 0.0;
            for (off, w) in &self.taps {
                for axis in 0..d {
                    c[axis] = cx[axis] as isize - off[axis];
                }
                acc += w * sample(grid, f, &c);
            }
            *o = hd * acc;
        }
        out
    }
}

/// Mollified function and whether the kernel was under-resolved (`δ < h`).
pub fn mollify(f: &GridFunction, kernel: &Mollifier) -> (GridFunction, bool) {
    let values = kernel.apply(&f.grid, &f.values);
    (GridFunction { grid: f.grid, values }, kernel.is_under_resolved())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::init_rng;
    use core::f64::consts::PI;
    use rand::Rng;

    fn grid1(r: f64, m: usize, b: Boundary) -> Grid {
        Grid::new(1, r, m, b).unwrap()
    }

    #[test]
    fn constant_periodic_energy_is_zero() {
        let g = Grid::new(2, 3.0, 16, Boundary::Periodic).unwrap();
        let f = GridFunction::from_fn(g, |_| 1.7);
        assert_eq!(f.energy(&Covariance::identity(2)), 0.0);
    }

    #[test]
    fn cosine_ground_state_energy() {
        let r = 2.0;
        for m in [256, 512] {
            let g = grid1(r, m, Boundary::Dirichlet);
            let f = GridFunction::from_fn(g, |x| (PI * x[0] / (2.0 * r)).cos()).normalized();
            let e = f.energy(&Covariance::identity(1));
            let exact = 0.5 * (PI / (2.0 * r)).powi(2);
            assert!((e - exact).abs() < 0.01 * exact, "m={m}: {e} vs {exact}");
        }
        let smooth = |m: usize| {
            GridFunction::from_fn(grid1(r, m, Boundary::Dirichlet), |x| (-4.0 * x[0] * x[0]).exp())
                .normalized()
                .energy(&Covariance::identity(1))
        };
        let (e256, e512) = (smooth(256), smooth(512));
        assert!((e256 - e512).abs() <= 1e-3 * e256);
    }

    #[test]
    fn scaling_covariance_scales_energy() {
        let g = Grid::new(2, 2.0, 12, Boundary::Dirichlet).unwrap();
        let f = GridFunction::from_fn(g, |x| (-x[0] * x[0] - 2.0 * x[1] * x[1]).exp());
        let c = Covariance::from_rows(2, alloc::vec![1.0, 0.3, 0.3, 0.5]).unwrap();
        assert!((f.energy(&c.scaled(4.0)) - 4.0 * f.energy(&c)).abs() < 1e-12 * f.energy(&c));
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let mut rng = init_rng(3);
        let cases = [
            (Grid::new(1, 2.0, 64, Boundary::Dirichlet).unwrap(), Covariance::identity(1)),
            (Grid::new(1, 2.0, 64, Boundary::Periodic).unwrap(), Covariance::scaled_identity(1, 0.7)),
            (Grid::new(2, 2.0, 8, Boundary::Dirichlet).unwrap(), Covariance::from_rows(2, alloc::vec![1.0, 0.3, 0.3, 0.5]).unwrap()),
            (Grid::new(2, 2.0, 8, Boundary::Periodic).unwrap(), Covariance::from_rows(2, alloc::vec![1.0, -0.2, -0.2, 0.5]).unwrap()),
        ];
        for (grid, gamma) in cases {
            let g: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>()).collect();
            let (_, grad) = energy_and_gradient(&grid, &gamma, &g, true);
            for _ in 0..10 {
                let i = rng.random_range(0..grid.len());
                let eps = 1e-5;
                let mut gp = g.clone();
                gp[i] += eps;
                let mut gm = g.clone();
                gm[i] -= eps;
                let fd = (energy(&grid, &gamma, &gp) - energy(&grid, &gamma, &gm)) / (2.0 * eps);
                assert!((fd - grad[i]).abs() <= 1e-5 * grad[i].abs().max(1e-3), "{fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn mollifier_normalization_and_mass() {
        let g = Grid::new(2, 4.0, 32, Boundary::Periodic).unwrap();
        let k = Mollifier::new(&g, 0.8).unwrap();
        let total: f64 = g.cell_volume() * k.weights().map(|(_, w)| w).sum::<f64>();
        assert!((total - 1.0).abs() < 1e-14);
        assert!(k.weights().all(|(_, w)| w >= 0.0));
        let mut rng = init_rng(8);
        let f = GridFunction::from_values(g, (0..g.len()).map(|_| rng.random::<f64>()).collect()).unwrap();
        let (out, flag) = mollify(&f, &k);
        assert!(!flag);
        assert!((out.integral() - f.integral()).abs() < 1e-12 * f.integral());
        assert!(out.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn delta_input_reproduces_kernel() {
        let g = grid1(4.0, 64, Boundary::Dirichlet);
        let k = Mollifier::new(&g, 0.5).unwrap();
        let mut f = GridFunction::zeros(g);
        let centre = 32;
        f.values[centre] = 1.0 / g.h();
        let (out, _) = mollify(&f, &k);
        for (off, w) in k.weights() {
            let idx = (centre as isize + off[0]) as usize;
            assert!((out.values[idx] - w).abs() < 1e-12 * w.max(1e-300));
        }
    }

    #[test]
    fn under_resolved_mollifier_is_identity() {
        let g = grid1(4.0, 16, Boundary::Periodic);
        let k = Mollifier::new(&g, 0.1).unwrap();
        let f = GridFunction::from_fn(g, |x| x[0] * x[0]);
        let (out, flag) = mollify(&f, &k);
        assert!(flag);
        assert_eq!(out, f);
    }

    #[test]
    fn mollification_error_shrinks_with_width() {
        let g = grid1(4.0, 512, Boundary::Periodic);
        let f = GridFunction::from_fn(g, |x| (-2.0 * x[0] * x[0]).exp());
        let mut prev = f64::INFINITY;
        for delta in [0.5, 0.25, 0.125] {
            let (out, _) = mollify(&f, &Mollifier::new(&g, delta).unwrap());
            let err = g.h() * out.values.iter().zip(&f.values).map(|(a, b)| (a - b).abs()).sum::<f64>();
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn mollifier_is_self_adjoint() {
        let g = Grid::new(2, 2.0, 12, Boundary::Dirichlet).unwrap();
        let k = Mollifier::new(&g, 0.7).unwrap();
        let mut rng = init_rng(2);
        let a: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>()).collect();
        let lhs: f64 = k.apply(&g, &a).iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(k.apply(&g, &b)).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs());
    }
}
