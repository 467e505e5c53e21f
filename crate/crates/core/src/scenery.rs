//! Scenery laws, their cumulant generating functions and cut variants.

use alloc::boxed::Box;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{invalid, Result};
use crate::lattice::{Site, SiteMap, MAX_DIM};
use crate::math::{integrate, ln_normal_tail};
use crate::rng::site_rng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// `ln(1e18)`: the numeric integrals stop where the integrand falls this far below its peak.
const LOG_CUTOFF: f64 = 41.446_531_673_892_82;

/// A convex cumulant generating function `H` with `H(0) = 0`, evaluated for `t ≥ 0`.
pub trait Cumulant {
    fn h(&self, t: f64) -> f64;
    fn h_prime(&self, t: f64) -> f64;

    /// `H'(0)`, the mean of the underlying law.
    fn mean(&self) -> f64 {
        self.h_prime(0.0)
    }
}

/// Law of the scenery value `Y(0)`.
#[derive(Clone, Debug, PartialEq)]
pub enum SceneryModel {
    /// Centered normal with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Symmetric law with `P(|Y| > r) = exp(-D r^q)` for `r ≥ 0`.
    WeibullTail { d: f64, q: f64 },
    /// `base + shift`.
    Shifted { base: Box<SceneryModel>, shift: f64 },
    /// Uniform on `[a, b]`.
    BoundedUniform { a: f64, b: f64 },
}

impl SceneryModel {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("gaussian scenery needs σ > 0"));
        }
        Ok(SceneryModel::Gaussian { sigma })
    }

    pub fn weibull_tail(d: f64, q: f64) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) || !(q > 1.0 && q.is_finite()) {
            return Err(invalid("weibull-tail scenery needs D > 0 and q > 1"));
        }
        Ok(SceneryModel::WeibullTail { d, q })
    }

    pub fn shifted(base: SceneryModel, shift: f64) -> Result<Self> {
        if !shift.is_finite() {
            return Err(invalid("shift must be finite"));
        }
        Ok(SceneryModel::Shifted { base: Box::new(base), shift })
    }

    pub fn bounded_uniform(a: f64, b: f64) -> Result<Self> {
        if !(a < b && a.is_finite() && b.is_finite()) {
            return Err(invalid("uniform scenery needs a < b"));
        }
        Ok(SceneryModel::BoundedUniform { a, b })
    }

    pub fn family(&self) -> &'static str {
        match self {
            SceneryModel::Gaussian { .. } => "gaussian",
            SceneryModel::WeibullTail { .. } => "weibull_tail",
            SceneryModel::Shifted { .. } => "shifted",
            SceneryModel::BoundedUniform { .. } => "bounded_uniform",
        }
    }

    /// Whether `H` is evaluated in closed form rather than by quadrature.
    pub fn closed_form_cumulant(&self) -> bool {
        match self {
            SceneryModel::Gaussian { .. } | SceneryModel::BoundedUniform { .. } => true,
            SceneryModel::WeibullTail { .. } => false,
            SceneryModel::Shifted { base, .. } => base.closed_form_cumulant(),
        }
    }

    /// Upper tail pair `(D, q)` with `log P(Y > r) ~ -D r^q`, when the law has one.
    pub fn tail_pair(&self) -> Option<(f64, f64)> {
        match self {
            SceneryModel::Gaussian { sigma } => Some((0.5 / (sigma * sigma), 2.0)),
            SceneryModel::WeibullTail { d, q } => Some((*d, *q)),
            SceneryModel::Shifted { base, .. } => base.tail_pair(),
            SceneryModel::BoundedUniform { .. } => None,
        }
    }

    /// Centered gaussian standard deviation, if the law is one.
    pub fn gaussian_sigma(&self) -> Option<f64> {
        match self {
            SceneryModel::Gaussian { sigma } => Some(*sigma),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            SceneryModel::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                sigma * z
            }
            SceneryModel::WeibullTail { d, q } => {
                let negative: bool = rng.random();
                let e: f64 = Exp1.sample(rng);
                let r = (e / d).powf(1.0 / q);
                if negative {
                    -r
                } else {
                    r
                }
            }
            SceneryModel::Shifted { base, shift } => base.sample(rng) + shift,
            SceneryModel::BoundedUniform { a, b } => {
                let u: f64 = rng.random();
                a + (b - a) * u
            }
        }
    }

    /// The value at `site` of the scenery with seed `seed`.
    pub fn value_at(&self, seed: u64, site: Site) -> f64 {
        self.sample(&mut site_rng(seed, site))
    }

    /// `P(Y ≤ y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            SceneryModel::Gaussian { sigma } => crate::math::normal_tail(-y / sigma),
            SceneryModel::WeibullTail { d, q } => {
                let tail = 0.5 * (-d * y.abs().powf(*q)).exp();
                if y >= 0.0 {
                    1.0 - tail
                } else {
                    tail
                }
            }
            SceneryModel::Shifted { base, shift } => base.cdf(y - shift),
            SceneryModel::BoundedUniform { a, b } => ((y - a) / (b - a)).clamp(0.0, 1.0),
        }
    }

    /// `(ln ∫_{y>lower} e^{ty} dF(y), tilted mean on that range)`; `lower = None` means the whole line.
    /// Returns `(-∞, lower)` when the range carries no mass.
    pub fn restricted_log_mgf(&self, t: f64, lower: Option<f64>) -> (f64, f64) {
        match self {
            SceneryModel::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                match lower {
                    None => (0.5 * t * t * s2, t * s2),
                    Some(l) => {
                        let x = (l - t * s2) / sigma;
                        let ln_tail = ln_normal_tail(x);
                        let hazard = (-0.5 * x * x - LN_SQRT_2PI - ln_tail).exp();
                        (0.5 * t * t * s2 + ln_tail, t * s2 + sigma * hazard)
                    }
                }
            }
            SceneryModel::BoundedUniform { a, b } => {
                let lo = lower.map_or(*a, |l| l.max(*a));
                if lo >= *b {
                    return (f64::NEG_INFINITY, lo);
                }
                let (ln_int, mean) = uniform_piece(t, lo, *b);
                (ln_int - (b - a).ln(), mean)
            }
            SceneryModel::Shifted { base, shift } => {
                let (ln_i, mean) = base.restricted_log_mgf(t, lower.map(|l| l - shift));
                (ln_i + t * shift, mean + shift)
            }
            SceneryModel::WeibullTail { d, q } => {
                let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(2);
                match lower {
                    None => {
                        pieces.push(weibull_piece(t, *d, *q, 0.0, f64::INFINITY));
                        pieces.push(weibull_piece(-t, *d, *q, 0.0, f64::INFINITY));
                    }
                    Some(l) if l < 0.0 => {
                        pieces.push(weibull_piece(t, *d, *q, 0.0, f64::INFINITY));
                        pieces.push(weibull_piece(-t, *d, *q, 0.0, -l));
                    }
                    Some(l) => pieces.push(weibull_piece(t, *d, *q, l, f64::INFINITY)),
                }
                // the negative piece was integrated in r = -y
                if pieces.len() == 2 {
                    pieces[1].1 = -pieces[1].1;
                }
                combine(&pieces)
            }
        }
    }
}

impl Cumulant for SceneryModel {
    fn h(&self, t: f64) -> f64 {
        match self {
            SceneryModel::Gaussian { sigma } => 0.5 * t * t * sigma * sigma,
            _ => self.restricted_log_mgf(t, None).0,
        }
    }

    fn h_prime(&self, t: f64) -> f64 {
        match self {
            SceneryModel::Gaussian { sigma } => t * sigma * sigma,
            _ => self.restricted_log_mgf(t, None).1,
        }
    }
}

/// Combines `(ln I_k, mean_k)` pieces into the log of the total and the overall mean.
fn combine(pieces: &[(f64, f64)]) -> (f64, f64) {
    let max = pieces.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (max, 0.0);
    }
    let mut total = 0.0;
    let mut moment = 0.0;
    for &(ln_i, mean) in pieces {
        let w = (ln_i - max).exp();
        total += w;
        moment += w * mean;
    }
    (max + total.ln(), moment / total)
}

/// `ln ∫_lo^hi e^{ty} dy` and the mean of the tilted uniform on `[lo, hi]`.
fn uniform_piece(t: f64, lo: f64, hi: f64) -> (f64, f64) {
    let w = hi - lo;
    let x = t * w;
    if x.abs() < 1e-6 {
        let ln_int = t * lo + w.ln() + x / 2.0 + x * x / 24.0;
        return (ln_int, lo + w * (0.5 + x / 12.0));
    }
    // ∫ = e^{t hi} (1 - e^{-x}) / t
    let ln_int = t * hi + (-(-x).exp_m1()).ln() - t.ln();
    let mean = hi - 1.0 / t + w / x.exp_m1();
    (ln_int, mean)
}

/// `ln ∫_{r0}^{r1} e^{s r} f(r) dr` and the tilted mean of `r`, where
/// `f(r) = ½ D q r^{q-1} e^{-D r^q}` is one half of the symmetric density.
fn weibull_piece(s: f64, d: f64, q: f64, r0: f64, r1: f64) -> (f64, f64) {
    let log_f = |r: f64| s * r + (q - 1.0) * r.ln() - d * r.powf(q);
    let slope = |r: f64| s + (q - 1.0) / r - d * q * r.powf(q - 1.0);
    // the exponent is concave on r > 0: bisect the derivative in log r
    let (mut lo, mut hi) = (1e-300f64.ln(), 0.0f64);
    while slope(hi.exp()) > 0.0 {
        hi += 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let mode = (0.5 * (lo + hi)).exp().clamp(r0, r1);
    let peak = log_f(mode);
    let below = |r: f64| log_f(r) < peak - LOG_CUTOFF;
    let mut right = mode;
    if r1.is_finite() && !below(r1) {
        right = r1;
    } else {
        let mut step = mode.max(1e-3);
        while !below(right + step) && right + step < r1 {
            right += step;
            step *= 2.0;
        }
        right = (right + step).min(r1);
    }
    let mut left = r0;
    if mode > r0 {
        let (mut a, mut b) = (r0, mode);
        if below(a.max(f64::MIN_POSITIVE)) {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if below(m) {
                    a = m;
                } else {
                    b = m;
                }
            }
            left = a;
        }
    }
    if right <= left {
        return (f64::NEG_INFINITY, mode);
    }
    let scaled = |r: f64| if r <= 0.0 { 0.0 } else { (log_f(r) - peak).exp() };
    let i0 = integrate(scaled, left, right, 1e-12, 0.0);
    let i1 = integrate(|r| r * scaled(r), left, right, 1e-12, 0.0);
    let ln_int = (0.5 * d * q).ln() + peak + i0.ln();
    (ln_int, i1 / i0)
}

/// Which law a cut scenery describes.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum CutLaw {
    /// `Y ∨ (-M)`, with cumulant `H_M`.
    Floor,
    /// `Y` conditioned on `Y ≥ -M`, with cumulant `H̃_M`.
    Conditional,
}

/// A scenery cut at level `M`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutScenery {
    pub base: SceneryModel,
    pub level: f64,
    pub law: CutLaw,
}

impl CutScenery {
    pub fn new(base: SceneryModel, level: f64, law: CutLaw) -> Result<Self> {
        if !(level > 0.0 && level.is_finite()) {
            return Err(invalid("cut level must be positive"));
        }
        Ok(CutScenery { base, level, law })
    }

    /// `y^{(≤M)} = (y ∧ M) ∨ (-M)`.
    pub fn truncated(&self, y: f64) -> f64 {
        y.clamp(-self.level, self.level)
    }

    /// `y^{(>M)} = (y - M)_+`.
    pub fn excess(&self, y: f64) -> f64 {
        (y - self.level).max(0.0)
    }

    fn mgf_parts(&self, t: f64) -> (f64, f64) {
        let m = self.level;
        let (ln_above, mean_above) = self.base.restricted_log_mgf(t, Some(-m));
        match self.law {
            CutLaw::Conditional => {
                let (ln_mass, _) = self.base.restricted_log_mgf(0.0, Some(-m));
                (ln_above - ln_mass, mean_above)
            }
            CutLaw::Floor => {
                let atom = self.base.cdf(-m);
                if atom <= 0.0 {
                    return (ln_above, mean_above);
                }
                combine(&[(atom.ln() - t * m, -m), (ln_above, mean_above)])
            }
        }
    }
}

impl Cumulant for CutScenery {
    fn h(&self, t: f64) -> f64 {
        self.mgf_parts(t).0
    }

    fn h_prime(&self, t: f64) -> f64 {
        self.mgf_parts(t).1
    }
}

/// `H(t) = D̃ t^p`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PowerCumulant {
    pub coefficient: f64,
    pub p: f64,
}

impl PowerCumulant {
    pub fn new(coefficient: f64, p: f64) -> Result<Self> {
        if !(coefficient > 0.0) || !(p > 1.0) {
            return Err(invalid("power cumulant needs D̃ > 0 and p > 1"));
        }
        Ok(PowerCumulant { coefficient, p })
    }

    /// The Kasahara dual of the tail pair `(D, q)`.
    pub fn from_tail(d: f64, q: f64) -> Result<Self> {
        let (coefficient, p) = kasahara_dual(d, q)?;
        Self::new(coefficient, p)
    }
}

impl Cumulant for PowerCumulant {
    fn h(&self, t: f64) -> f64 {
        self.coefficient * t.powf(self.p)
    }

    fn h_prime(&self, t: f64) -> f64 {
        self.coefficient * self.p * t.powf(self.p - 1.0)
    }
}

/// A cumulant sampled on a quadratic knot grid over `[0, t_max]` and
/// interpolated by cubic Hermite segments; `H'` is interpolated linearly.
/// Beyond `t_max` the last tangent is followed.
#[derive(Clone, Debug)]
pub struct TabulatedCumulant {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl TabulatedCumulant {
    pub fn new<C: Cumulant + ?Sized>(source: &C, t_max: f64, intervals: usize) -> Result<Self> {
        if !(t_max > 0.0) || intervals < 2 {
            return Err(invalid("tabulation needs t_max > 0 and at least two intervals"));
        }
        let knots: Vec<f64> = (0..=intervals).map(|i| t_max * (i as f64 / intervals as f64).powi(2)).collect();
        let values = knots.iter().map(|&t| source.h(t)).collect();
        let slopes = knots.iter().map(|&t| source.h_prime(t)).collect();
        Ok(TabulatedCumulant { knots, values, slopes })
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&t).unwrap_or(core::cmp::Ordering::Less)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }
}

impl Cumulant for TabulatedCumulant {
    fn h(&self, t: f64) -> f64 {
        let last = self.knots.len() - 1;
        if t >= self.knots[last] {
            return self.values[last] + self.slopes[last] * (t - self.knots[last]);
        }
        let i = self.locate(t);
        let (t0, t1) = (self.knots[i], self.knots[i + 1]);
        let w = t1 - t0;
        let s = (t - t0) / w;
        let (h00, h10, h01, h11) =
            (2.0 * s * s * s - 3.0 * s * s + 1.0, s * s * s - 2.0 * s * s + s, -2.0 * s * s * s + 3.0 * s * s, s * s * s - s * s);
        h00 * self.values[i] + h10 * w * self.slopes[i] + h01 * self.values[i + 1] + h11 * w * self.slopes[i + 1]
    }

    fn h_prime(&self, t: f64) -> f64 {
        let last = self.knots.len() - 1;
        if t >= self.knots[last] {
            return self.slopes[last];
        }
        let i = self.locate(t);
        let s = (t - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        (1.0 - s) * self.slopes[i] + s * self.slopes[i + 1]
    }
}

impl<C: Cumulant + ?Sized> Cumulant for &C {
    fn h(&self, t: f64) -> f64 {
        (**self).h(t)
    }

    fn h_prime(&self, t: f64) -> f64 {
        (**self).h_prime(t)
    }
}

/// `(D̃, p)` with `D̃ = (q-1)(D q^q)^{1/(1-q)}` and `p = q/(q-1)`.
pub fn kasahara_dual(d: f64, q: f64) -> Result<(f64, f64)> {
    if !(q > 1.0) || !(d > 0.0) {
        return Err(invalid("Kasahara duality needs D > 0 and q > 1"));
    }
    let dual = (q - 1.0) * (d * q.powf(q)).powf(1.0 / (1.0 - q));
    Ok((dual, q / (q - 1.0)))
}

/// Independent draws at the given sites; each value depends only on `(seed, site)`.
pub fn sample_field(model: &SceneryModel, sites: &[Site], seed: u64) -> SiteMap<f64> {
    let mut out = SiteMap::with_capacity_and_hasher(sites.len(), Default::default());
    for &s in sites {
        out.insert(s, model.value_at(seed, s));
    }
    out
}

/// `Ȳ(x) = Y(⌊xα⌋) / b` on `Q_R = [-R, R)^d`, sampled lazily.
#[derive(Clone, Debug)]
pub struct RescaledField<'m> {
    model: &'m SceneryModel,
    dim: usize,
    alpha: f64,
    b: f64,
    radius: f64,
    seed: u64,
}

impl<'m> RescaledField<'m> {
    pub fn new(model: &'m SceneryModel, dim: usize, alpha: f64, b: f64, radius: f64, seed: u64) -> Result<Self> {
        if !(alpha >= 1.0) || !(b > 0.0) || !(radius > 0.0) || dim == 0 || dim > MAX_DIM {
            return Err(invalid("rescaled field needs α ≥ 1, b > 0, R > 0 and 1 ≤ d ≤ 4"));
        }
        Ok(RescaledField { model, dim, alpha, b, radius, seed })
    }

    pub fn site_of(&self, x: &[f64]) -> Result<Site> {
        let mut c = [0i32; MAX_DIM];
        for axis in 0..self.dim {
            if !(x[axis] >= -self.radius && x[axis] < self.radius) {
                return Err(invalid("point outside the box Q_R"));
            }
            c[axis] = libm::floor(x[axis] * self.alpha) as i32;
        }
        Site::new(&c[..self.dim])
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_at_site(self.site_of(x)?))
    }

    pub fn value_at_site(&self, site: Site) -> f64 {
        self.model.value_at(self.seed, site) / self.b
    }
}
