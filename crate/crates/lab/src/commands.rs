//! The seven experiments. Each is split into a `plan` step that builds and
//! validates every input, and an `execute` step that does the work, so a
//! request that is going to fail does so before anything is written.

use std::path::PathBuf;

use rwrs_core::kernel::StepKernel;
use rwrs_core::local_times::walk_local_times;
use rwrs_core::rng::replicate_seed;
use rwrs_core::rwrs::{exact_enum, replicate_cond_gaussian_log, rate_table, LogMeanAccumulator, NaiveAccumulator, RateRow};
use rwrs_core::scenery::SceneryModel;
use rwrs_core::spectral::{principal_eigenvalue_continuum, transfer_cumulant, PotentialProblem};
use rwrs_core::stats::Welford;
use rwrs_core::varsolve::{
    box_convergence_study, solve_chi, solve_k_dq, solve_k_h, trial_sequence_chi_zero, BoxMode, OptimizerSettings, RateProblem,
    Solution,
};
use rwrs_core::{Boundary, Covariance, Grid, ScaleRegime, TailEstimate};
use serde_json::{json, Value};

use crate::config::{
    BoundaryMode, Command, ExperimentConfig, Level, PotentialKind, RegimeName, SolveMode, TailMethodName,
};
use crate::error::{config_error, Result};
use crate::output::{num, opt, PlotTable};
use crate::runner::reduce_blocks;

/// What an experiment produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub result: Value,
    pub plot: PlotTable,
    /// Extra CSV files requested by the configuration.
    pub extra: Vec<(PathBuf, PlotTable)>,
    pub converged: bool,
}

/// Walk, scenery and seeds shared by the Monte Carlo commands.
#[derive(Clone, Debug)]
pub struct Sampler {
    kernel: StepKernel,
    model: SceneryModel,
    seed: u64,
    scenery_seed: Option<u64>,
    workers: usize,
}

impl Sampler {
    fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let kernel = cfg.kernel.as_ref().ok_or_else(|| config_error("a kernel is required"))?.build()?;
        let scenery = cfg.scenery.clone().unwrap_or_default();
        Ok(Sampler {
            kernel,
            model: scenery.build()?,
            seed: cfg.seed.unwrap_or(0),
            scenery_seed: scenery.seed,
            workers: cfg.workers.unwrap_or(1),
        })
    }

    /// `(Λ_n, range, Z_n)` of replicate `i`.
    fn replicate(&self, n: u64, i: u64) -> Result<(u64, usize, f64)> {
        let walk_seed = replicate_seed(self.seed, i);
        let scenery_seed = replicate_seed(self.scenery_seed.unwrap_or(self.seed), i);
        let field = walk_local_times(&self.kernel, n, walk_seed)?;
        let mut z = 0.0;
        for site in field.sorted_sites() {
            z += self.model.value_at(scenery_seed, site) * field.count(site) as f64;
        }
        Ok((field.self_intersection(), field.range(), z))
    }

    fn tail(&self, method: TailMethodName, n: u64, b: f64, replicates: u64) -> Result<TailEstimate> {
        match method {
            TailMethodName::Naive => {
                let acc = reduce_blocks(
                    replicates,
                    self.workers,
                    NaiveAccumulator::default(),
                    |s, e| {
                        let mut acc = NaiveAccumulator::default();
                        for i in s..e {
                            acc.push(self.replicate(n, i)?.2 / n as f64 > b);
                        }
                        Ok(acc)
                    },
                    |a, p| a.merge(p),
                )?;
                Ok(acc.finish(n, b))
            }
            TailMethodName::CondGaussian => {
                let sigma = self.gaussian_sigma()?;
                let acc = reduce_blocks(
                    replicates,
                    self.workers,
                    LogMeanAccumulator::default(),
                    |s, e| {
                        let mut acc = LogMeanAccumulator::default();
                        for i in s..e {
                            acc.push(replicate_cond_gaussian_log(&self.kernel, sigma, n, b, replicate_seed(self.seed, i))?);
                        }
                        Ok(acc)
                    },
                    |a, p| a.merge(p),
                )?;
                Ok(acc.finish(n, b))
            }
            TailMethodName::ExactEnum => {
                let p = exact_enum(&self.kernel, &self.model, n, b)?;
                Ok(TailEstimate {
                    method: rwrs_core::TailMethod::ExactEnum,
                    n,
                    b,
                    estimate: p,
                    log_estimate: p.ln(),
                    std_error: 0.0,
                    relative_std_error: 0.0,
                    replicates: 0,
                    rate_normalized: None,
                })
            }
        }
    }

    fn gaussian_sigma(&self) -> Result<f64> {
        self.model
            .gaussian_sigma()
            .ok_or_else(|| config_error("the cond-gaussian method needs a centered gaussian scenery"))
    }

    fn check_method(&self, method: TailMethodName, replicates: u64) -> Result<()> {
        if method == TailMethodName::CondGaussian {
            self.gaussian_sigma()?;
        }
        if method != TailMethodName::ExactEnum && replicates == 0 {
            return Err(config_error("replicates must be positive"));
        }
        Ok(())
    }
}

fn tail_json(e: &TailEstimate, prediction: Option<f64>) -> Value {
    json!({
        "method": e.method.name(),
        "n": e.n,
        "b": e.b,
        "estimate": e.estimate,
        "log_estimate": e.log_estimate,
        "stderr": e.std_error,
        "relative_stderr": e.relative_std_error,
        "replicates": e.replicates,
        "rate_normalized": e.rate_normalized,
        "prediction": prediction,
    })
}

fn finite(name: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(config_error(format!("`{name}` must be finite")))
    }
}

fn positive(name: &str, x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(config_error(format!("`{name}` must be positive")))
    }
}

/// A validated experiment, ready to run.
pub enum Plan {
    Simulate { sampler: Sampler, n: Vec<u64>, replicates: u64 },
    Tail { sampler: Sampler, method: TailMethodName, n: u64, level: Level, regime: ScaleRegime, replicates: u64 },
    RateTable { sampler: Sampler, method: TailMethodName, regime: ScaleRegime, n: Vec<u64>, replicates: u64, prediction: Option<f64> },
    Solve { problem: RateProblem, mode: SolveMode, d_coef: f64, q: f64, u: f64, scenery: Option<SceneryModel>, export: Option<PathBuf> },
    Spectral { kernel: StepKernel, potential: PotentialKind, amplitude: f64, radius: f64, alphas: Vec<u32>, times: Vec<u64>, m: usize, boundary: Boundary },
    Trial { d: usize, p: f64, n: Vec<u64> },
    BoxStudy { covariance: Covariance, mode: SolveMode, d_coef: f64, q: f64, u: f64, scenery: Option<SceneryModel>, h: f64, radii: Vec<f64>, deltas: Vec<f64>, optimizer: OptimizerSettings },
}

fn optimizer(seed: u64, restarts: usize, max_iterations: usize) -> Result<OptimizerSettings> {
    if restarts == 0 || max_iterations == 0 {
        return Err(config_error("restarts and max-iterations must be positive"));
    }
    Ok(OptimizerSettings { restarts, max_iterations, seed, ..OptimizerSettings::default() })
}

fn scenery_for(cfg: &ExperimentConfig, mode: SolveMode) -> Result<Option<SceneryModel>> {
    if mode != SolveMode::KH {
        return Ok(None);
    }
    Ok(Some(cfg.scenery.clone().unwrap_or_default().build()?))
}

/// Validates a resolved configuration and builds every input.
pub fn plan(cfg: &ExperimentConfig) -> Result<Plan> {
    let command = cfg.command.ok_or_else(|| config_error("no command"))?;
    let seed = cfg.seed.unwrap_or(0);
    let missing = |what: &str| config_error(format!("missing `{what}`"));
    match command {
        Command::Simulate => {
            let s = cfg.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
            let sampler = Sampler::from_config(cfg)?;
            let n = s.n.clone().ok_or_else(|| missing("n"))?;
            let replicates = s.replicates.ok_or_else(|| missing("replicates"))?;
            if n.is_empty() || n.contains(&0) || replicates < 2 {
                return Err(config_error("simulate needs positive n values and at least two replicates"));
            }
            Ok(Plan::Simulate { sampler, n, replicates })
        }
        Command::Tail => {
            let s = cfg.tail.as_ref().ok_or_else(|| missing("tail"))?;
            let sampler = Sampler::from_config(cfg)?;
            let method = s.method.ok_or_else(|| missing("method"))?;
            let n = s.n.ok_or_else(|| missing("n"))?;
            let level = s.b.ok_or_else(|| missing("b"))?;
            let replicates = s.replicates.ok_or_else(|| missing("replicates"))?;
            sampler.check_method(method, replicates)?;
            if n < 1 {
                return Err(config_error("n must be positive"));
            }
            let d = sampler.kernel.dim();
            let regime = match level {
                Level::AutoSmallDev(theta) => {
                    if d != 2 {
                        return Err(config_error("auto-smalldev levels are defined for two-dimensional walks"));
                    }
                    ScaleRegime::SmallDeviation { theta }
                }
                Level::Fixed(b) => ScaleRegime::Large { d, u: finite("b", b)? },
            };
            Ok(Plan::Tail { sampler, method, n, level, regime, replicates })
        }
        Command::RateTable => {
            let s = cfg.rate_table.as_ref().ok_or_else(|| missing("rate-table"))?;
            let sampler = Sampler::from_config(cfg)?;
            let method = s.method.ok_or_else(|| missing("method"))?;
            let replicates = s.replicates.ok_or_else(|| missing("replicates"))?;
            sampler.check_method(method, replicates)?;
            let d = sampler.kernel.dim();
            let regime = match s.regime.ok_or_else(|| missing("regime"))? {
                RegimeName::SmallDev => {
                    if d != 2 {
                        return Err(config_error("the small-deviation regime needs a two-dimensional walk"));
                    }
                    ScaleRegime::SmallDeviation { theta: s.theta.ok_or_else(|| missing("theta"))? }
                }
                RegimeName::Large => ScaleRegime::Large { d, u: positive("u", s.u.ok_or_else(|| missing("u"))?)? },
                RegimeName::VeryLarge => ScaleRegime::VeryLarge {
                    d,
                    q: s.q.ok_or_else(|| missing("q"))?,
                    coefficient: positive("coefficient", s.coefficient.ok_or_else(|| missing("coefficient"))?)?,
                    exponent: positive("exponent", s.exponent.ok_or_else(|| missing("exponent"))?)?,
                },
            };
            let n = s.n.clone().ok_or_else(|| missing("n"))?;
            if n.len() < 3 || n.windows(2).any(|w| w[0] >= w[1]) {
                return Err(config_error("rate-table needs at least three strictly increasing n values"));
            }
            for &k in &n {
                regime.check(k)?;
            }
            if let Some(p) = s.prediction {
                finite("prediction", p)?;
            }
            Ok(Plan::RateTable { sampler, method, regime, n, replicates, prediction: s.prediction })
        }
        Command::Solve => {
            let s = cfg.solve.as_ref().ok_or_else(|| missing("solve"))?;
            let mode = s.mode.ok_or_else(|| missing("mode"))?;
            let covariance = cfg.covariance(s.d)?;
            let boundary: Boundary = s.boundary.unwrap_or(BoundaryMode::Dirichlet).into();
            let radius = positive("R", s.radius.ok_or_else(|| missing("R"))?)?;
            let m = s.m.ok_or_else(|| missing("m"))?;
            if let Some(delta) = s.delta {
                positive("delta", delta)?;
            }
            let opt = optimizer(seed, s.restarts.unwrap_or(5), s.max_iterations.unwrap_or(50_000))?;
            let problem = RateProblem::new(covariance, radius, m, boundary)?.with_delta(s.delta).with_optimizer(opt);
            let d_coef = positive("D", s.d_coef.unwrap_or(0.5))?;
            let q = s.q.unwrap_or(2.0);
            if !(q > 1.0 && q.is_finite()) {
                return Err(config_error("q must exceed 1"));
            }
            let u = positive("u", s.u.unwrap_or(1.0))?;
            Ok(Plan::Solve { problem, mode, d_coef, q, u, scenery: scenery_for(cfg, mode)?, export: s.export_minimizer.clone() })
        }
        Command::SpectralCheck => {
            let s = cfg.spectral.as_ref().ok_or_else(|| missing("spectral"))?;
            let kernel = cfg.kernel.as_ref().ok_or_else(|| missing("kernel"))?.build()?;
            let alphas = s.alphas.clone().ok_or_else(|| missing("alphas"))?;
            let times = s.times.clone().ok_or_else(|| missing("T"))?;
            if alphas.is_empty() || times.is_empty() || alphas.contains(&0) || times.contains(&0) {
                return Err(config_error("alphas and T must be non-empty lists of positive integers"));
            }
            let m = s.m.ok_or_else(|| missing("m"))?;
            if m < 16 {
                return Err(config_error("m must be at least 16"));
            }
            Ok(Plan::Spectral {
                kernel,
                potential: s.potential.ok_or_else(|| missing("potential"))?,
                amplitude: finite("amplitude", s.amplitude.ok_or_else(|| missing("amplitude"))?)?,
                radius: positive("R", s.radius.ok_or_else(|| missing("R"))?)?,
                alphas,
                times,
                m,
                boundary: s.boundary.unwrap_or(BoundaryMode::Dirichlet).into(),
            })
        }
        Command::TrialSequence => {
            let s = cfg.trial.as_ref().ok_or_else(|| missing("trial"))?;
            let n = s.n.clone().ok_or_else(|| missing("n"))?;
            if n.is_empty() || n.contains(&0) {
                return Err(config_error("n must be a non-empty list of positive integers"));
            }
            Ok(Plan::Trial { d: s.d.ok_or_else(|| missing("d"))?, p: s.p.ok_or_else(|| missing("p"))?, n })
        }
        Command::BoxStudy => {
            let s = cfg.box_study.as_ref().ok_or_else(|| missing("box-study"))?;
            let mode = s.mode.ok_or_else(|| missing("mode"))?;
            let radii = s.radii.clone().ok_or_else(|| missing("R"))?;
            let deltas = s.delta.clone().ok_or_else(|| missing("delta"))?;
            if radii.is_empty() || deltas.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
                return Err(config_error("R must be a non-empty ascending list and delta non-empty"));
            }
            for &r in &radii {
                positive("R", r)?;
            }
            for &dl in &deltas {
                positive("delta", dl)?;
            }
            Ok(Plan::BoxStudy {
                covariance: cfg.covariance(s.d)?,
                mode,
                d_coef: positive("D", s.d_coef.unwrap_or(0.5))?,
                q: s.q.unwrap_or(2.0),
                u: positive("u", s.u.unwrap_or(1.0))?,
                scenery: scenery_for(cfg, mode)?,
                h: positive("h", s.h.ok_or_else(|| missing("h"))?)?,
                radii,
                deltas,
                optimizer: optimizer(seed, s.restarts.unwrap_or(5), 50_000)?,
            })
        }
    }
}

fn potential_fn(kind: PotentialKind, amplitude: f64, radius: f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| match kind {
        PotentialKind::Constant => amplitude,
        PotentialKind::GaussianWell => amplitude * (-x.iter().map(|v| v * v).sum::<f64>()).exp(),
        PotentialKind::CosineBump => {
            amplitude * x.iter().map(|v| (std::f64::consts::PI * v / (2.0 * radius)).cos()).product::<f64>()
        }
    }
}

fn solution_json(s: &Solution) -> Value {
    json!({
        "value": s.value,
        "converged": s.converged,
        "iterations": s.iterations,
        "restart_values": s.restart_values,
        "gamma": s.gamma,
        "infinite": s.infinite,
        "mollifier_under_resolved": s.mollifier_under_resolved,
        "max_normalization_error": s.max_normalization_error,
    })
}

fn minimizer_table(s: &Solution) -> PlotTable {
    let grid: &Grid = &s.psi.grid;
    let d = grid.dim();
    let mut cols: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    cols.push("psi".into());
    let mut t = PlotTable { columns: cols, rows: Vec::new() };
    for (i, v) in s.psi.values.iter().enumerate() {
        let c = grid.center(i);
        let mut row: Vec<String> = c[..d].iter().map(|x| num(*x)).collect();
        row.push(num(*v));
        t.push(row);
    }
    t
}

fn rate_row_json(r: &RateRow) -> Value {
    json!({
        "n": r.n,
        "b": r.b,
        "alpha": r.alpha,
        "estimate": r.estimate.estimate,
        "log_estimate": r.estimate.log_estimate,
        "stderr": r.estimate.std_error,
        "rate_normalized": r.rate_normalized,
        "rate_stderr": r.rate_std_error,
        "prediction": r.prediction,
    })
}

fn boundary_name(b: Boundary) -> &'static str {
    match b {
        Boundary::Dirichlet => "dirichlet",
        Boundary::Periodic => "periodic",
    }
}

/// Runs a validated plan.
pub fn execute(plan: &Plan) -> Result<Outcome> {
    match plan {
        Plan::Simulate { sampler, n, replicates } => {
            let mut plot = PlotTable::new(&["n", "statistic", "value", "stderr"]);
            let mut rows = Vec::new();
            for &k in n {
                let stats = reduce_blocks(
                    *replicates,
                    sampler.workers,
                    [Welford::new(); 3],
                    |s, e| {
                        let mut w = [Welford::new(); 3];
                        for i in s..e {
                            let (lambda, range, z) = sampler.replicate(k, i)?;
                            w[0].push(lambda as f64);
                            w[1].push(range as f64);
                            w[2].push(z / k as f64);
                        }
                        Ok(w)
                    },
                    |a, p| {
                        for j in 0..3 {
                            a[j].merge(&p[j]);
                        }
                    },
                )?;
                let names = ["self_intersection", "range", "z_over_n"];
                for (name, w) in names.iter().zip(&stats) {
                    plot.push(vec![num(k as f64), name.to_string(), num(w.mean()), num(w.std_error())]);
                }
                let nlogn = k as f64 * (k as f64).ln().max(1.0);
                rows.push(json!({
                    "n": k,
                    "self_intersection_mean": stats[0].mean(),
                    "self_intersection_stderr": stats[0].std_error(),
                    "self_intersection_over_n_log_n": stats[0].mean() / nlogn,
                    "range_mean": stats[1].mean(),
                    "z_over_n_mean": stats[2].mean(),
                    "z_over_n_variance": stats[2].variance(),
                }));
            }
            Ok(Outcome { result: json!({ "replicates": replicates, "rows": rows }), plot, extra: Vec::new(), converged: true })
        }
        Plan::Tail { sampler, method, n, level, regime, replicates } => {
            let b = level.at(*n);
            let est = sampler.tail(*method, *n, b, *replicates)?.with_rate(regime);
            let prediction = regime.closed_form_prediction();
            let mut plot = PlotTable::new(&["n", "rate_normalized", "prediction", "stderr"]);
            plot.push(vec![
                num(*n as f64),
                opt(est.rate_normalized),
                opt(prediction),
                num(est.relative_std_error / regime.speed(*n)),
            ]);
            let mut result = tail_json(&est, prediction);
            result["regime"] = json!(regime.name());
            Ok(Outcome { result, plot, extra: Vec::new(), converged: true })
        }
        Plan::RateTable { sampler, method, regime, n, replicates, prediction } => {
            let rows = rate_table(regime, n, *prediction, |k, b| {
                sampler.tail(*method, k, b, *replicates).map_err(|e| match e {
                    crate::error::LabError::Core(c) => c,
                    other => rwrs_core::Error::InvalidArgument(other.to_string()),
                })
            })?;
            let mut plot = PlotTable::new(&["n", "rate_normalized", "prediction", "stderr"]);
            for r in &rows {
                plot.push(vec![num(r.n as f64), num(r.rate_normalized), opt(r.prediction), num(r.rate_std_error)]);
            }
            let result = json!({
                "regime": regime.name(),
                "method": rows.first().map(|r| r.estimate.method.name()),
                "rows": rows.iter().map(rate_row_json).collect::<Vec<_>>(),
            });
            Ok(Outcome { result, plot, extra: Vec::new(), converged: true })
        }
        Plan::Solve { problem, mode, d_coef, q, u, scenery, export } => {
            let mut plot = PlotTable::new(&["quantity", "value"]);
            let (result, sol) = match mode {
                SolveMode::KDq => {
                    let s = solve_k_dq(problem, *d_coef, *q)?;
                    (json!({ "mode": "K_Dq", "D": d_coef, "q": q, "solution": solution_json(&s) }), s)
                }
                SolveMode::KH => {
                    let model = scenery.as_ref().ok_or_else(|| config_error("K_H needs a scenery"))?;
                    let s = solve_k_h(problem, model, *u)?;
                    (json!({ "mode": "K_H", "u": u, "scenery": model.family(), "solution": solution_json(&s) }), s)
                }
                SolveMode::Chi => {
                    let c = solve_chi(problem, *q, *d_coef)?;
                    let converged = c.route_a.converged && c.k_solution.converged;
                    let mut s = c.route_a.clone();
                    s.converged = converged;
                    plot.push(vec!["chi_route_b".into(), num(c.route_b)]);
                    plot.push(vec!["relative_gap".into(), num(c.relative_gap)]);
                    plot.push(vec!["kappa".into(), num(c.kappa)]);
                    let r = json!({
                        "mode": "chi",
                        "q": q,
                        "D": d_coef,
                        "chi_route_a": c.route_a.value,
                        "chi_route_b": c.route_b,
                        "relative_gap": c.relative_gap,
                        "kappa": c.kappa,
                        "route_a": solution_json(&c.route_a),
                        "k_solution": solution_json(&c.k_solution),
                    });
                    (r, s)
                }
            };
            plot.rows.insert(0, vec!["value".into(), num(sol.value)]);
            let mut extra = Vec::new();
            if let Some(path) = export {
                extra.push((path.clone(), minimizer_table(&sol)));
            }
            Ok(Outcome { result, plot, extra, converged: sol.converged })
        }
        Plan::Spectral { kernel, potential, amplitude, radius, alphas, times, m, boundary } => {
            let f = potential_fn(*potential, *amplitude, *radius);
            let grid = Grid::new(kernel.dim(), *radius, *m, *boundary)?;
            let problem = PotentialProblem::from_fn(grid, kernel.covariance().clone(), &f)?;
            let continuum = principal_eigenvalue_continuum(&problem)?;
            let mut plot = PlotTable::new(&["alpha", "n", "value", "lattice_eig", "continuum_eig"]);
            let mut rows = Vec::new();
            for &alpha in alphas {
                for &t in times {
                    let n = t * u64::from(alpha) * u64::from(alpha);
                    let tc = transfer_cumulant(kernel, &f, *radius, alpha, n, *boundary)?;
                    plot.push(vec![
                        num(f64::from(alpha)),
                        num(n as f64),
                        num(tc.value),
                        num(tc.lattice_limit),
                        num(continuum.value),
                    ]);
                    rows.push(json!({
                        "alpha": alpha,
                        "T": t,
                        "n": n,
                        "value": tc.value,
                        "lattice_eig": tc.lattice_limit,
                        "states": tc.states,
                        "relative_error": (tc.value - continuum.value).abs() / continuum.value.abs().max(f64::MIN_POSITIVE),
                    }));
                }
            }
            let result = json!({
                "boundary": boundary_name(*boundary),
                "continuum_eig": continuum.value,
                "continuum_converged": continuum.converged,
                "continuum_residual": continuum.residual,
                "rows": rows,
            });
            Ok(Outcome { result, plot, extra: Vec::new(), converged: continuum.converged })
        }
        Plan::Trial { d, p, n } => {
            let mut plot = PlotTable::new(&["n", "quantity", "closed_form", "quadrature", "limit"]);
            let mut rows = Vec::new();
            for &k in n {
                let t = trial_sequence_chi_zero(*d, *p, k)?;
                plot.push(vec![num(k as f64), "l2_sq".into(), num(t.l2_sq), num(t.quadrature[0]), num(t.limits[0])]);
                plot.push(vec![num(k as f64), "l2p_pow".into(), num(t.l2p_pow), num(t.quadrature[1]), num(t.limits[1])]);
                plot.push(vec![num(k as f64), "half_grad_sq".into(), num(t.half_grad_sq), num(t.quadrature[2]), num(0.0)]);
                rows.push(json!({
                    "n": t.n,
                    "d_n": t.d_n,
                    "a_n": t.a_n,
                    "gamma_n": t.gamma_n,
                    "l2_sq": t.l2_sq,
                    "l2p_pow": t.l2p_pow,
                    "half_grad_sq": t.half_grad_sq,
                    "quadrature": t.quadrature,
                    "limits": t.limits,
                    "chi_ratio": t.chi_ratio,
                }));
            }
            Ok(Outcome { result: json!({ "d": d, "p": p, "rows": rows }), plot, extra: Vec::new(), converged: true })
        }
        Plan::BoxStudy { covariance, mode, d_coef, q, u, scenery, h, radii, deltas, optimizer } => {
            let box_mode = match mode {
                SolveMode::KDq => BoxMode::KDq { d_coef: *d_coef, q: *q },
                SolveMode::KH => BoxMode::KH {
                    cumulant: scenery.as_ref().ok_or_else(|| config_error("K_H needs a scenery"))?,
                    u: *u,
                },
                SolveMode::Chi => return Err(config_error("box-study supports K_Dq and K_H")),
            };
            let study = box_convergence_study(covariance, box_mode, *h, radii, deltas, optimizer)?;
            let mut plot = PlotTable::new(&["R", "delta", "bc", "value"]);
            let mut rows = Vec::new();
            for r in &study.rows {
                plot.push(vec![num(r.radius), opt(r.delta), boundary_name(r.boundary).into(), num(r.value)]);
                rows.push(json!({
                    "R": r.radius,
                    "delta": r.delta,
                    "bc": boundary_name(r.boundary),
                    "value": r.value,
                    "converged": r.converged,
                }));
            }
            let converged = study.rows.iter().all(|r| r.converged);
            let result = json!({
                "rows": rows,
                "sandwich_holds": study.sandwich_holds,
                "dirichlet_monotone": study.dirichlet_monotone,
            });
            Ok(Outcome { result, plot, extra: Vec::new(), converged })
        }
    }
}
