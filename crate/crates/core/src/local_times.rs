//! Walk simulation and local times.
//!
//! Local times count the positions `S_0, ..., S_{n-1}`, so a field built from
//! `n` positions always has total mass `n`.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::StepKernel;
use crate::lattice::{Site, SiteMap, COORD_LIMIT, MAX_DIM};
use crate::rng::walk_rng;

/// Sparse occupation counts of a walk together with `Λ = Σ ℓ(z)²`.
#[derive(Clone, Debug, Default)]
pub struct LocalTimeField {
    dim: usize,
    n: u64,
    lambda: u64,
    counts: SiteMap<u64>,
}

impl LocalTimeField {
    pub fn new(dim: usize) -> Self {
        LocalTimeField { dim, n: 0, lambda: 0, counts: SiteMap::default() }
    }

    pub fn from_path(dim: usize, path: &[Site]) -> Self {
        let mut field = Self::new(dim);
        for &s in path {
            field.visit(s);
        }
        field
    }

    #[inline]
    pub fn visit(&mut self, site: Site) {
        let c = self.counts.entry(site).or_insert(0);
        self.lambda += 2 * *c + 1;
        *c += 1;
        self.n += 1;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of positions counted.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Self-intersection local time `Λ_n`.
    pub fn self_intersection(&self) -> u64 {
        self.lambda
    }

    /// Number of distinct sites visited.
    pub fn range(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, site: Site) -> u64 {
        self.counts.get(&site).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Site, u64)> + '_ {
        self.counts.iter().map(|(s, c)| (*s, *c))
    }

    /// Visited sites in increasing packed order.
    pub fn sorted_sites(&self) -> Vec<Site> {
        let mut sites: Vec<Site> = self.counts.keys().copied().collect();
        sites.sort_unstable();
        sites
    }

    /// `Σ ℓ(z)²` recomputed from the counts.
    pub fn recompute_self_intersection(&self) -> u64 {
        self.counts.values().map(|c| c * c).sum()
    }

    /// Local times of the walk wrapped onto the torus `{-R, ..., R-1}^d`.
    pub fn periodized(&self, radius: u32) -> Result<LocalTimeField> {
        if radius == 0 {
            return Err(crate::error::invalid("torus radius must be at least 1"));
        }
        let mut out = Self::new(self.dim);
        for site in self.sorted_sites() {
            let c = self.counts[&site];
            let wrapped = site.wrap(self.dim, radius as i32);
            let entry = out.counts.entry(wrapped).or_insert(0);
            out.lambda += 2 * *entry * c + c * c;
            *entry += c;
            out.n += c;
        }
        Ok(out)
    }
}

/// Streams the positions `S_0 = 0, S_1, ...` of a walk.
pub struct Walker<'k, R> {
    kernel: &'k StepKernel,
    rng: R,
    position: [i32; MAX_DIM],
}

impl<'k, R: Rng> Walker<'k, R> {
    pub fn new(kernel: &'k StepKernel, rng: R) -> Self {
        Walker { kernel, rng, position: [0; MAX_DIM] }
    }

    pub fn position(&self) -> Site {
        Site::pack_unchecked(&self.position)
    }

    /// Advances one step and returns the new position.
    #[inline]
    pub fn step(&mut self) -> Result<Site> {
        let i = self.kernel.sample_index(&mut self.rng);
        let step = self.kernel.offset(i);
        for (axis, s) in step.iter().enumerate() {
            let c = self.position[axis] + s;
            if c.abs() > COORD_LIMIT {
                return Err(Error::CoordinateOverflow { coord: c as i64 });
            }
            self.position[axis] = c;
        }
        Ok(self.position())
    }
}

/// Local times of `n` positions of the walk seeded by `seed`.
pub fn walk_local_times(kernel: &StepKernel, n: u64, seed: u64) -> Result<LocalTimeField> {
    if n == 0 {
        return Err(crate::error::invalid("a walk needs at least one position"));
    }
    let mut walker = Walker::new(kernel, walk_rng(seed));
    let mut field = LocalTimeField::new(kernel.dim());
    field.visit(Site::ORIGIN);
    for _ in 1..n {
        field.visit(walker.step()?);
    }
    Ok(field)
}

/// Path `S_0, ..., S_{n-1}` and its local times; same draws as [`walk_local_times`].
pub fn simulate_walk(kernel: &StepKernel, n: u64, seed: u64) -> Result<(Vec<Site>, LocalTimeField)> {
    if n == 0 {
        return Err(crate::error::invalid("a walk needs at least one position"));
    }
    let mut walker = Walker::new(kernel, walk_rng(seed));
    let mut path = Vec::with_capacity(n as usize);
    path.push(Site::ORIGIN);
    for _ in 1..n {
        path.push(walker.step()?);
    }
    let field = LocalTimeField::from_path(kernel.dim(), &path);
    Ok((path, field))
}

/// `Σ_{j,k<n} 1{S_j = S_k}` by direct comparison of path positions.
pub fn self_intersection_by_pairs(path: &[Site]) -> u64 {
    let mut total = 0;
    for a in path {
        for b in path {
            total += u64::from(a == b);
        }
    }
    total
}

/// The rescaled density `L_n(x) = (α^d / n) ℓ_n(⌊xα⌋)`.
#[derive(Clone, Debug)]
pub struct ScaledLocalTimes<'a> {
    base: &'a LocalTimeField,
    alpha: f64,
}

impl<'a> ScaledLocalTimes<'a> {
    pub fn new(base: &'a LocalTimeField, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || base.n() == 0 {
            return Err(crate::error::invalid("scale must be positive and the field non-empty"));
        }
        Ok(ScaledLocalTimes { base, alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn base(&self) -> &LocalTimeField {
        self.base
    }

    pub fn density_at(&self, x: &[f64]) -> f64 {
        let mut c = [0i32; MAX_DIM];
        for (axis, xi) in x.iter().enumerate() {
            let v = libm::floor(xi * self.alpha);
            if v.abs() > COORD_LIMIT as f64 {
                return 0.0;
            }
            c[axis] = v as i32;
        }
        let d = self.base.dim() as i32;
        self.alpha.powi(d) / self.base.n() as f64 * self.base.count(Site::pack_unchecked(&c)) as f64
    }

    /// `∫ L_n`, the sum of cell masses `ℓ(z) α^{-d} · α^d / n`.
    pub fn total_mass(&self) -> f64 {
        let total: u64 = self.base.iter().map(|(_, c)| c).sum();
        total as f64 / self.base.n() as f64
    }

    /// `⟨L_n, g⟩` with `g` evaluated once at the midpoint of each cell.
    pub fn pairing<G: Fn(&[f64]) -> f64>(&self, g: G) -> f64 {
        let d = self.base.dim();
        let n = self.base.n() as f64;
        let mut x = [0.0; MAX_DIM];
        let mut total = 0.0;
        for site in self.base.sorted_sites() {
            for (axis, xi) in x.iter_mut().enumerate().take(d) {
                *xi = (site.coord(axis) as f64 + 0.5) / self.alpha;
            }
            total += self.base.count(site) as f64 / n * g(&x[..d]);
        }
        total
    }
}
