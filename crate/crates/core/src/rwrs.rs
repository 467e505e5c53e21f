//! The accumulated scenery `Z_n`, deviation scales and tail estimators.
//!
//! Replicate `i` under base seed `s` uses the seed `s + i` for both its walk
//! and its scenery (separate generator streams), so every estimate is a
//! deterministic function of `(s, replicates)` and of nothing else. The
//! accumulators merge associatively, which lets a caller split replicates
//! into fixed blocks and combine them in block order.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Error, Result};
use crate::kernel::StepKernel;
use crate::lattice::{Site, SiteMap};
use crate::local_times::{walk_local_times, LocalTimeField};
use crate::math::{ln_normal_tail, normal_tail};
use crate::rng::replicate_seed;
use crate::scenery::SceneryModel;

/// `Z_n = Σ_z Y(z) ℓ_n(z)`, summed over sites in increasing order.
pub fn rwrs_value(field: &LocalTimeField, scenery: &SiteMap<f64>) -> Result<f64> {
    let mut total = 0.0;
    for site in field.sorted_sites() {
        let y = scenery.get(&site).ok_or(Error::MissingSite(site.coords()))?;
        total += y * field.count(site) as f64;
    }
    Ok(total)
}

/// `Z_n = Σ_{k<n} Y(S_k)` along the path.
pub fn rwrs_time_sum(path: &[Site], scenery: &SiteMap<f64>) -> Result<f64> {
    let mut total = 0.0;
    for site in path {
        total += scenery.get(site).ok_or(Error::MissingSite(site.coords()))?;
    }
    Ok(total)
}

/// `Z_n` for one replicate: the walk and the scenery on its visited sites.
pub fn replicate_z(kernel: &StepKernel, model: &SceneryModel, n: u64, seed: u64) -> Result<(LocalTimeField, f64)> {
    let field = walk_local_times(kernel, n, seed)?;
    let mut z = 0.0;
    for site in field.sorted_sites() {
        z += model.value_at(seed, site) * field.count(site) as f64;
    }
    Ok((field, z))
}

/// `ln Φ̄(n b / (σ √Λ_n))` for one replicate walk.
pub fn replicate_cond_gaussian_log(kernel: &StepKernel, sigma: f64, n: u64, b: f64, seed: u64) -> Result<f64> {
    let field = walk_local_times(kernel, n, seed)?;
    Ok(ln_normal_tail(n as f64 * b / (sigma * (field.self_intersection() as f64).sqrt())))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum TailMethod {
    Naive,
    CondGaussian,
    ExactEnum,
}

impl TailMethod {
    pub fn name(self) -> &'static str {
        match self {
            TailMethod::Naive => "naive",
            TailMethod::CondGaussian => "cond-gaussian",
            TailMethod::ExactEnum => "exact-enum",
        }
    }
}

/// An estimate of `P(Z_n / n > b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailEstimate {
    pub method: TailMethod,
    pub n: u64,
    pub b: f64,
    pub estimate: f64,
    pub log_estimate: f64,
    pub std_error: f64,
    /// Standard error divided by the estimate; stays meaningful when the estimate underflows.
    pub relative_std_error: f64,
    pub replicates: u64,
    pub rate_normalized: Option<f64>,
}

impl TailEstimate {
    pub fn with_rate(mut self, regime: &ScaleRegime) -> Self {
        self.rate_normalized = Some(regime.rate_normalized(self.n, self.log_estimate));
        self
    }
}

/// Hit counter for the naive estimator.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq)]
pub struct NaiveAccumulator {
    pub hits: u64,
    pub total: u64,
}

impl NaiveAccumulator {
    pub fn push(&mut self, hit: bool) {
        self.hits += u64::from(hit);
        self.total += 1;
    }

    pub fn merge(&mut self, other: &NaiveAccumulator) {
        self.hits += other.hits;
        self.total += other.total;
    }

    pub fn finish(&self, n: u64, b: f64) -> TailEstimate {
        let p = self.hits as f64 / self.total.max(1) as f64;
        let se = (p * (1.0 - p) / self.total.max(1) as f64).sqrt();
        TailEstimate {
            method: TailMethod::Naive,
            n,
            b,
            estimate: p,
            log_estimate: p.ln(),
            std_error: se,
            relative_std_error: if p > 0.0 { se / p } else { f64::INFINITY },
            replicates: self.total,
            rate_normalized: None,
        }
    }
}

/// Mean of `e^{x_i}` kept in scaled form: `e^{shift} · Σ e^{x_i - shift}`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LogMeanAccumulator {
    count: u64,
    shift: f64,
    sum: f64,
    sum_sq: f64,
}

impl Default for LogMeanAccumulator {
    fn default() -> Self {
        LogMeanAccumulator { count: 0, shift: f64::NEG_INFINITY, sum: 0.0, sum_sq: 0.0 }
    }
}

impl LogMeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.merge(&LogMeanAccumulator { count: 1, shift: x, sum: 1.0, sum_sq: 1.0 });
    }

    pub fn merge(&mut self, other: &LogMeanAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        if other.shift > self.shift {
            let f = (self.shift - other.shift).exp();
            self.sum = self.sum * f + other.sum;
            self.sum_sq = self.sum_sq * f * f + other.sum_sq;
            self.shift = other.shift;
        } else {
            let f = (other.shift - self.shift).exp();
            self.sum += other.sum * f;
            self.sum_sq += other.sum_sq * f * f;
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `ln( (1/N) Σ e^{x_i} )`.
    pub fn log_mean(&self) -> f64 {
        self.shift + (self.sum / self.count as f64).ln()
    }

    /// Standard error of the mean relative to the mean.
    pub fn relative_std_error(&self) -> f64 {
        let n = self.count as f64;
        if self.count < 2 {
            return f64::INFINITY;
        }
        let mean = self.sum / n;
        let var = ((self.sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
        (var / n).sqrt() / mean
    }

    pub fn finish(&self, n: u64, b: f64) -> TailEstimate {
        let log_p = self.log_mean();
        let rel = self.relative_std_error();
        TailEstimate {
            method: TailMethod::CondGaussian,
            n,
            b,
            estimate: log_p.exp(),
            log_estimate: log_p,
            std_error: rel * log_p.exp(),
            relative_std_error: rel,
            replicates: self.count,
            rate_normalized: None,
        }
    }
}

/// Fraction of replicates with `Z_n / n > b`.
pub fn tail_naive(kernel: &StepKernel, model: &SceneryModel, n: u64, b: f64, replicates: u64, seed: u64) -> Result<TailEstimate> {
    if replicates == 0 {
        return Err(invalid("at least one replicate is required"));
    }
    let mut acc = NaiveAccumulator::default();
    for i in 0..replicates {
        let (_, z) = replicate_z(kernel, model, n, replicate_seed(seed, i))?;
        acc.push(z / n as f64 > b);
    }
    Ok(acc.finish(n, b))
}

/// Mean of `Φ̄(n b / (σ √Λ_n))` over walks: the scenery is integrated out exactly.
pub fn tail_cond_gaussian(kernel: &StepKernel, model: &SceneryModel, n: u64, b: f64, replicates: u64, seed: u64) -> Result<TailEstimate> {
    let sigma = model.gaussian_sigma().ok_or(Error::NotGaussian)?;
    if replicates == 0 {
        return Err(invalid("at least one replicate is required"));
    }
    let mut acc = LogMeanAccumulator::default();
    for i in 0..replicates {
        acc.push(replicate_cond_gaussian_log(kernel, sigma, n, b, replicate_seed(seed, i))?);
    }
    Ok(acc.finish(n, b))
}

/// `P(Z_n / n > b)` given the local-time counts of one path.
type ConditionalTail = Box<dyn Fn(&[u64]) -> Result<f64>>;

/// Largest number of paths `exact_enum` will visit.
pub const ENUMERATION_LIMIT: u64 = 1 << 24;

/// `P(Z_n / n > b)` by summing over all walk paths with the exact conditional law of `Z_n`.
///
/// Supported sceneries: gaussian (also shifted), and uniform on an interval
/// when a path visits at most five distinct sites.
pub fn exact_enum(kernel: &StepKernel, model: &SceneryModel, n: u64, b: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let support = kernel.len() as u64;
    let paths = support.checked_pow((n - 1) as u32).filter(|p| *p <= ENUMERATION_LIMIT);
    if paths.is_none() {
        return Err(Error::InstanceTooLarge(format!("{support}^{} paths exceed 2^24", n - 1)));
    }
    let conditional: ConditionalTail = match model {
        SceneryModel::Gaussian { .. } | SceneryModel::Shifted { .. } => {
            let (sigma, shift) = match model {
                SceneryModel::Gaussian { sigma } => (*sigma, 0.0),
                SceneryModel::Shifted { base, shift } => match base.as_ref() {
                    SceneryModel::Gaussian { sigma } => (*sigma, *shift),
                    _ => return Err(Error::NotGaussian),
                },
                _ => unreachable!(),
            };
            Box::new(move |counts: &[u64]| {
                let lambda: u64 = counts.iter().map(|c| c * c).sum();
                Ok(normal_tail((n as f64 * (b - shift)) / (sigma * (lambda as f64).sqrt())))
            })
        }
        SceneryModel::BoundedUniform { a, b: top } => {
            let (a, w) = (*a, top - a);
            Box::new(move |counts: &[u64]| {
                if counts.len() > 5 {
                    return Err(Error::InstanceTooLarge("more than five distinct sites".into()));
                }
                // Σ ℓ_i (a + w V_i) > n b  ⇔  Σ ℓ_i V_i > (n b - n a) / w
                let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
                let threshold = n as f64 * (b - a) / w;
                Ok(uniform_sum_survival(&weights, threshold))
            })
        }
        SceneryModel::WeibullTail { .. } => {
            return Err(invalid("exact enumeration needs a gaussian or uniform scenery"));
        }
    };
    let mut total = 0.0;
    let mut stack_path: Vec<Site> = vec![Site::ORIGIN];
    enumerate(kernel, n as usize, &mut stack_path, 1.0, &mut |path, prob| {
        let mut sites: Vec<Site> = path.to_vec();
        sites.sort_unstable();
        let mut counts: Vec<u64> = Vec::new();
        let mut prev: Option<Site> = None;
        for s in sites {
            if Some(s) == prev {
                *counts.last_mut().unwrap() += 1;
            } else {
                counts.push(1);
                prev = Some(s);
            }
        }
        total += prob * conditional(&counts)?;
        Ok(())
    })?;
    Ok(total)
}

fn enumerate<F: FnMut(&[Site], f64) -> Result<()>>(kernel: &StepKernel, n: usize, path: &mut Vec<Site>, prob: f64, visit: &mut F) -> Result<()> {
    if path.len() == n {
        return visit(path, prob);
    }
    let here = *path.last().unwrap();
    for (step, p) in kernel.steps() {
        path.push(here.offset(step)?);
        enumerate(kernel, n, path, prob * p, visit)?;
        path.pop();
    }
    Ok(())
}

/// `P(Σ c_i V_i > s)` for independent uniforms `V_i` on `[0, 1]` and weights `c_i > 0`.
pub fn uniform_sum_survival(weights: &[f64], s: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    if s <= 0.0 {
        return 1.0;
    }
    if s >= total {
        return 0.0;
    }
    // by symmetry V ↦ 1 - V the survival at s is the distribution function at total - s
    uniform_sum_cdf(weights, total - s)
}

fn uniform_sum_cdf(weights: &[f64], s: f64) -> f64 {
    let k = weights.len();
    let mut norm = 1.0;
    for (i, c) in weights.iter().enumerate() {
        norm *= c * (i + 1) as f64;
    }
    let mut acc = 0.0;
    for mask in 0u32..(1 << k) {
        let shift: f64 = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| weights[i]).sum();
        let x = s - shift;
        if x > 0.0 {
            let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * x.powi(k as i32);
        }
    }
    (acc / norm).clamp(0.0, 1.0)
}

/// Reference small-deviation scale `a_n^{(0)}`.
pub fn typical_scale(d: usize, n: f64) -> f64 {
    match d {
        1 => n.powf(-0.25),
        2 => (n / n.ln()).powf(-0.5),
        _ => n.powf(-0.5),
    }
}

/// Upper end `a_n^{(1)} = n^{-1/2} log n` of the two-dimensional small-deviation window.
pub fn small_deviation_upper_scale(n: f64) -> f64 {
    n.powf(-0.5) * n.ln()
}

/// Deviation level and spatial scale as functions of `n`.
#[derive(Clone, Debug, PartialEq)]
pub enum ScaleRegime {
    /// `b_n = coefficient · n^{exponent} → ∞` with `α_n^{d+2} b_n^q = n`.
    VeryLarge { d: usize, q: f64, coefficient: f64, exponent: f64 },
    /// Fixed level `b_n = u` with `α_n = n^{1/(d+2)}`.
    Large { d: usize, u: f64 },
    /// Two-dimensional gaussian small deviations `b_n = n^{-1/2} (log n)^θ`.
    SmallDeviation { theta: f64 },
}

impl ScaleRegime {
    pub fn name(&self) -> &'static str {
        match self {
            ScaleRegime::VeryLarge { .. } => "V",
            ScaleRegime::Large { .. } => "L",
            ScaleRegime::SmallDeviation { .. } => "small-dev",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ScaleRegime::VeryLarge { d, .. } | ScaleRegime::Large { d, .. } => *d,
            ScaleRegime::SmallDeviation { .. } => 2,
        }
    }

    pub fn b(&self, n: u64) -> f64 {
        let nf = n as f64;
        match self {
            ScaleRegime::VeryLarge { coefficient, exponent, .. } => coefficient * nf.powf(*exponent),
            ScaleRegime::Large { u, .. } => *u,
            ScaleRegime::SmallDeviation { theta } => nf.powf(-0.5) * nf.ln().powf(*theta),
        }
    }

    pub fn alpha(&self, n: u64) -> f64 {
        let nf = n as f64;
        match self {
            ScaleRegime::VeryLarge { d, q, .. } => {
                let b = self.b(n);
                nf.powf(1.0 / (*d as f64 + 2.0)) * b.powf(-q / (*d as f64 + 2.0))
            }
            ScaleRegime::Large { d, .. } => nf.powf(1.0 / (*d as f64 + 2.0)),
            ScaleRegime::SmallDeviation { .. } => 1.0,
        }
    }

    /// Normalization `s_n` with `log P ≈ -s_n · rate`.
    pub fn speed(&self, n: u64) -> f64 {
        let nf = n as f64;
        match self {
            ScaleRegime::VeryLarge { .. } | ScaleRegime::Large { .. } => {
                let a = self.alpha(n);
                nf / (a * a)
            }
            ScaleRegime::SmallDeviation { .. } => {
                let b = self.b(n);
                b * b * nf / nf.ln()
            }
        }
    }

    pub fn rate_normalized(&self, n: u64, log_p: f64) -> f64 {
        log_p / self.speed(n)
    }

    /// Checks the growth conditions of the regime at `n`.
    pub fn check(&self, n: u64) -> Result<()> {
        let nf = n as f64;
        if n < 3 {
            return Err(invalid("scales need n ≥ 3"));
        }
        match self {
            ScaleRegime::VeryLarge { d, q, .. } => {
                let b = self.b(n);
                if *d == 0 || !(*q > 1.0) {
                    return Err(invalid("regime V needs d ≥ 1 and q > 1"));
                }
                if !(b >= 1.0 && b.powf(*q) <= nf) {
                    return Err(invalid(format!("b_n = {b} outside [1, n^(1/q)]")));
                }
            }
            ScaleRegime::Large { d, u } => {
                if *d == 0 || !(*u > 0.0) {
                    return Err(invalid("regime L needs d ≥ 1 and u > 0"));
                }
            }
            ScaleRegime::SmallDeviation { theta } => {
                if !(*theta > 0.5 && *theta < 1.0) {
                    return Err(invalid("small-deviation exponent θ must lie in (1/2, 1)"));
                }
                let b = self.b(n);
                if !(typical_scale(2, nf) <= b && b <= small_deviation_upper_scale(nf)) {
                    return Err(invalid(format!("b_n = {b} outside the small-deviation window")));
                }
            }
        }
        Ok(())
    }

    /// Limit of the rate-normalized log-probability when it is known in closed form.
    pub fn closed_form_prediction(&self) -> Option<f64> {
        match self {
            ScaleRegime::SmallDeviation { .. } => Some(-core::f64::consts::FRAC_PI_4),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub n: u64,
    pub b: f64,
    pub alpha: f64,
    pub estimate: TailEstimate,
    pub rate_normalized: f64,
    /// Standard error of the rate-normalized value (delta method).
    pub rate_std_error: f64,
    pub prediction: Option<f64>,
}

/// Runs `estimator(n, b_n)` over `n_list` and normalizes by the regime speed.
///
/// `prediction` overrides the regime's closed-form limit (variational
/// constants are computed by the caller).
pub fn rate_table<F>(regime: &ScaleRegime, n_list: &[u64], prediction: Option<f64>, mut estimator: F) -> Result<Vec<RateRow>>
where
    F: FnMut(u64, f64) -> Result<TailEstimate>,
{
    if n_list.len() < 3 {
        return Err(invalid("a rate table needs at least three values of n"));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("n values must be strictly increasing"));
    }
    let prediction = prediction.or_else(|| regime.closed_form_prediction());
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        regime.check(n)?;
        let b = regime.b(n);
        let estimate = estimator(n, b)?;
        let speed = regime.speed(n);
        rows.push(RateRow {
            n,
            b,
            alpha: regime.alpha(n),
            rate_normalized: estimate.log_estimate / speed,
            rate_std_error: estimate.relative_std_error / speed,
            estimate,
            prediction,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_times::simulate_walk;
    use crate::math::normal_tail;
    use crate::scenery::sample_field;
    use crate::ScaledLocalTimes;
    use crate::scenery::RescaledField;

    fn srw(d: usize) -> StepKernel {
        StepKernel::simple(d).unwrap()
    }

    #[test]
    fn single_position_gives_origin_value() {
        let g = SceneryModel::gaussian(1.0).unwrap();
        let (_, z) = replicate_z(&srw(1), &g, 1, 3).unwrap();
        assert_eq!(z, g.value_at(3, Site::ORIGIN));
    }

    #[test]
    fn straight_path_hand_sum() {
        let path: Vec<Site> = (0..3).map(|i| Site::new(&[i]).unwrap()).collect();
        let mut field = SiteMap::default();
        for (s, y) in path.iter().zip([1.0, 2.0, -1.0]) {
            field.insert(*s, y);
        }
        let lt = LocalTimeField::from_path(1, &path);
        assert_eq!(rwrs_value(&lt, &field).unwrap(), 2.0);
        assert_eq!(rwrs_time_sum(&path, &field).unwrap(), 2.0);
        field.remove(&path[2]);
        assert!(matches!(rwrs_value(&lt, &field), Err(Error::MissingSite(_))));
    }

    #[test]
    fn site_sum_equals_time_sum_and_scaled_pairing() {
        let g = SceneryModel::gaussian(1.0).unwrap();
        for seed in 0..50 {
            let (path, lt) = simulate_walk(&srw(2), 300, seed).unwrap();
            let field = sample_field(&g, &lt.sorted_sites(), seed);
            let a = rwrs_value(&lt, &field).unwrap();
            let t = rwrs_time_sum(&path, &field).unwrap();
            assert!((a - t).abs() <= 1e-9 * a.abs().max(1.0));
            let (alpha, b) = (3.0, 2.5);
            let scaled = ScaledLocalTimes::new(&lt, alpha).unwrap();
            let ybar = RescaledField::new(&g, 2, alpha, b, 1e3, seed).unwrap();
            let pairing = scaled.pairing(|x| ybar.value(x).unwrap());
            let n = lt.n() as f64;
            assert!((a / n - b * pairing).abs() <= 1e-9 * (a / n).abs().max(1e-3));
            let (_, z) = replicate_z(&srw(2), &g, 300, seed).unwrap();
            assert!((z - a).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn exact_small_cases() {
        let g = SceneryModel::gaussian(1.0).unwrap();
        let k = srw(1);
        let p2 = exact_enum(&k, &g, 2, 1.0).unwrap();
        assert!((p2 - normal_tail(2f64.sqrt())).abs() < 1e-15);
        let p3 = exact_enum(&k, &g, 3, 1.0).unwrap();
        let expect = 0.5 * normal_tail(3.0 / 5f64.sqrt()) + 0.5 * normal_tail(3.0 / 3f64.sqrt());
        assert!((p3 - expect).abs() < 1e-15);
        let mut prev = 1.0;
        for b in [-1.0, 0.0, 0.5, 1.0, 2.0, 5.0, 50.0] {
            let p = exact_enum(&k, &g, 6, b).unwrap();
            assert!(p <= prev);
            prev = p;
        }
        assert!(prev < 1e-100);
        assert!(exact_enum(&k, &g, 26, 1.0).is_err());
        assert!(exact_enum(&srw(2), &g, 8, 1.0).is_ok());
        assert!(exact_enum(&srw(2), &g, 14, 1.0).is_err());
    }

    #[test]
    fn uniform_sum_survival_matches_known_cases() {
        // one uniform
        assert!((uniform_sum_survival(&[1.0], 0.3) - 0.7).abs() < 1e-15);
        // triangle: P(U1 + U2 > 1.5) = 1/8
        assert!((uniform_sum_survival(&[1.0, 1.0], 1.5) - 0.125).abs() < 1e-15);
        // P(2 U1 + U2 > 2) = 1/4
        assert!((uniform_sum_survival(&[2.0, 1.0], 2.0) - 0.25).abs() < 1e-15);
        assert_eq!(uniform_sum_survival(&[1.0, 2.0], -1.0), 1.0);
        assert_eq!(uniform_sum_survival(&[1.0, 2.0], 3.0), 0.0);
    }

    #[test]
    fn uniform_enumeration_against_simulation() {
        let u = SceneryModel::bounded_uniform(-1.0, 1.0).unwrap();
        let k = srw(1);
        let exact = exact_enum(&k, &u, 4, 0.2).unwrap();
        let est = tail_naive(&k, &u, 4, 0.2, 100_000, 17).unwrap();
        assert!((est.estimate - exact).abs() < 4.0 * est.std_error, "{exact} vs {:?}", est);
        let est = tail_naive(&k, &u, 4, -2.0, 100, 1).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert!(exact_enum(&k, &u, 8, 0.1).is_err());
    }

    #[test]
    fn naive_two_step_gaussian() {
        let g = SceneryModel::gaussian(1.0).unwrap();
        let est = tail_naive(&srw(1), &g, 2, 1.0, 100_000, 99).unwrap();
        let exact = normal_tail(2f64.sqrt());
        assert!((est.estimate - exact).abs() < 3.0 * est.std_error);
    }

    #[test]
    fn conditional_gaussian_is_deterministic_at_n_two() {
        let g = SceneryModel::gaussian(1.0).unwrap();
        let est = tail_cond_gaussian(&srw(1), &g, 2, 1.0, 50, 4).unwrap();
        assert!((est.estimate - 0.078_649_603_525_142_57).abs() < 1e-15);
        assert!(est.relative_std_error.abs() < 1e-12);
        let w = SceneryModel::weibull_tail(1.0, 2.0).unwrap();
        assert!(matches!(tail_cond_gaussian(&srw(1), &w, 2, 1.0, 5, 4), Err(Error::NotGaussian)));
    }

    #[test]
    fn estimators_agree_on_small_instances() {
        let g = SceneryModel::gaussian(1.0).unwrap();
        for (d, n, b, reps) in [(1, 8, 0.5, 20_000), (1, 16, 0.3, 20_000), (2, 16, 0.4, 20_000), (2, 64, 0.2, 20_000), (3, 32, 0.3, 20_000)] {
            let k = srw(d);
            let naive = tail_naive(&k, &g, n, b, reps, 1000).unwrap();
            let cond = tail_cond_gaussian(&k, &g, n, b, reps, 2000).unwrap();
            let se = (naive.std_error.powi(2) + cond.std_error.powi(2)).sqrt();
            assert!((naive.estimate - cond.estimate).abs() < 3.0 * se, "d={d} n={n}: {naive:?} {cond:?}");
        }
    }

    #[test]
    fn monotone_in_level_with_common_seeds() {
        let g = SceneryModel::gaussian(1.0).unwrap();
        let k = srw(2);
        let mut prev_naive = 1.0;
        let mut prev_cond = 1.0;
        for b in [0.0, 0.1, 0.2, 0.4, 0.8] {
            let naive = tail_naive(&k, &g, 32, b, 2000, 5).unwrap().estimate;
            let cond = tail_cond_gaussian(&k, &g, 32, b, 2000, 5).unwrap().estimate;
            assert!(naive <= prev_naive && cond <= prev_cond);
            prev_naive = naive;
            prev_cond = cond;
        }
    }

    #[test]
    fn log_mean_accumulator_merges_associatively() {
        let xs: Vec<f64> = (0..100).map(|i| -((i * 37 % 101) as f64) * 3.0).collect();
        let mut all = LogMeanAccumulator::default();
        for &x in &xs {
            all.push(x);
        }
        let mut left = LogMeanAccumulator::default();
        let mut right = LogMeanAccumulator::default();
        for &x in &xs[..40] {
            left.push(x);
        }
        for &x in &xs[40..] {
            right.push(x);
        }
        left.merge(&right);
        assert!((left.log_mean() - all.log_mean()).abs() < 1e-12);
        assert!((left.relative_std_error() - all.relative_std_error()).abs() < 1e-9);
        assert!((all.log_mean() - crate::math::log_mean_exp(&xs)).abs() < 1e-12);
    }

    #[test]
    fn regimes() {
        let v = ScaleRegime::VeryLarge { d: 1, q: 2.0, coefficient: 1.0, exponent: 0.25 };
        for n in [16u64, 1000, 1 << 20] {
            let a = v.alpha(n);
            let lhs = a.powi(3) * v.b(n).powi(2);
            assert!((lhs / n as f64 - 1.0).abs() < 1e-12);
            assert!(v.check(n).is_ok());
        }
        let bad = ScaleRegime::VeryLarge { d: 1, q: 2.0, coefficient: 1.0, exponent: 0.75 };
        assert!(bad.check(1000).is_err());
        let s = ScaleRegime::SmallDeviation { theta: 0.75 };
        assert!(s.check(1 << 16).is_ok());
        assert_eq!(s.closed_form_prediction(), Some(-core::f64::consts::FRAC_PI_4));
        assert!(ScaleRegime::SmallDeviation { theta: 1.2 }.check(1 << 16).is_err());
        let rows = rate_table(&s, &[1 << 8, 1 << 9, 1 << 10], None, |n, b| {
            tail_cond_gaussian(&srw(2), &SceneryModel::gaussian(1.0).unwrap(), n, b, 50, 1)
        })
        .unwrap();
        assert!(rows.iter().all(|r| r.prediction == Some(-core::f64::consts::FRAC_PI_4)));
        assert!(rate_table(&s, &[1 << 8], None, |_, _| unreachable!()).is_err());
        let v_rows = rate_table(&v, &[16, 32, 64], Some(-1.3), |n, b| {
            Ok(NaiveAccumulator { hits: 1, total: 10 }.finish(n, b))
        })
        .unwrap();
        assert!(v_rows.iter().all(|r| r.prediction == Some(-1.3)));
    }
}
