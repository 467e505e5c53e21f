//! Experiment configuration: a TOML file whose fields can be overridden by
//! command-line flags. Precedence is flag, then file, then built-in default.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use rwrs_core::kernel::StepKernel;
use rwrs_core::scenery::SceneryModel;
use rwrs_core::{Boundary, Covariance};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{config_error, LabError, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Tail,
    RateTable,
    Solve,
    SpectralCheck,
    TrialSequence,
    BoxStudy,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Tail => "tail",
            Command::RateTable => "rate-table",
            Command::Solve => "solve",
            Command::SpectralCheck => "spectral-check",
            Command::TrialSequence => "trial-sequence",
            Command::BoxStudy => "box-study",
        }
    }
}

/// Deviation level `b`: a fixed number or `auto-smalldev:θ`, meaning `b_n = n^{-1/2} (log n)^θ`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Level {
    Fixed(f64),
    AutoSmallDev(f64),
}

impl Level {
    pub fn at(self, n: u64) -> f64 {
        match self {
            Level::Fixed(b) => b,
            Level::AutoSmallDev(theta) => {
                let nf = n as f64;
                nf.powf(-0.5) * nf.ln().powf(theta)
            }
        }
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(theta) = s.strip_prefix("auto-smalldev:") {
            let theta: f64 = theta.parse().map_err(|_| format!("bad exponent in `{s}`"))?;
            if !(theta > 0.5 && theta < 1.0) {
                return Err(format!("small-deviation exponent must lie in (0.5, 1), got {theta}"));
            }
            return Ok(Level::AutoSmallDev(theta));
        }
        s.parse().map(Level::Fixed).map_err(|_| format!("`{s}` is neither a number nor auto-smalldev:θ"))
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Fixed(b) => write!(f, "{b}"),
            Level::AutoSmallDev(theta) => write!(f, "auto-smalldev:{theta}"),
        }
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Level::Fixed(b) => s.serialize_f64(*b),
            Level::AutoSmallDev(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(b) => Ok(Level::Fixed(b)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    Dirichlet,
    Periodic,
}

impl From<BoundaryMode> for Boundary {
    fn from(b: BoundaryMode) -> Boundary {
        match b {
            BoundaryMode::Dirichlet => Boundary::Dirichlet,
            BoundaryMode::Periodic => Boundary::Periodic,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TailMethodName {
    Naive,
    CondGaussian,
    ExactEnum,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum SolveMode {
    #[serde(rename = "K_Dq")]
    #[value(name = "K_Dq")]
    KDq,
    #[serde(rename = "K_H")]
    #[value(name = "K_H")]
    KH,
    #[serde(rename = "chi")]
    #[value(name = "chi")]
    Chi,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeName {
    SmallDev,
    Large,
    VeryLarge,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `f ≡ amplitude`.
    Constant,
    /// `amplitude · exp(-|x|²)`.
    GaussianWell,
    /// `amplitude · Π cos(π x_i / (2R))`.
    CosineBump,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEntry {
    pub offset: Vec<i32>,
    pub prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct KernelConfig {
    /// `srw-1d`, `srw-2d`, … for the simple random walk.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<StepEntry>>,
}

impl KernelConfig {
    pub fn build(&self) -> Result<StepKernel> {
        match (&self.builtin, &self.steps) {
            (Some(name), None) => {
                let d = name
                    .strip_prefix("srw-")
                    .and_then(|r| r.strip_suffix('d'))
                    .and_then(|r| r.parse::<usize>().ok())
                    .ok_or_else(|| config_error(format!("unknown builtin kernel `{name}`")))?;
                Ok(StepKernel::simple(d)?)
            }
            (None, Some(steps)) => {
                let dim = steps.first().map(|s| s.offset.len()).ok_or_else(|| config_error("kernel.steps is empty"))?;
                let support: Vec<(Vec<i32>, f64)> = steps.iter().map(|s| (s.offset.clone(), s.prob)).collect();
                Ok(StepKernel::new(dim, &support)?)
            }
            _ => Err(config_error("kernel needs exactly one of `builtin` and `steps`")),
        }
    }

    pub fn simple(d: usize) -> Self {
        KernelConfig { builtin: Some(format!("srw-{d}d")), steps: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SceneryConfig {
    /// `gaussian`, `weibull-tail`, `shifted-gaussian` or `bounded-uniform`.
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Seed of the scenery stream; defaults to the walk seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SceneryConfig {
    fn default() -> Self {
        SceneryConfig { family: "gaussian".into(), params: BTreeMap::from([("sigma".into(), 1.0)]), seed: None }
    }
}

impl SceneryConfig {
    pub fn build(&self) -> Result<SceneryModel> {
        let allowed: &[&str] = match self.family.as_str() {
            "gaussian" => &["sigma"],
            "weibull-tail" => &["D", "q"],
            "shifted-gaussian" => &["sigma", "shift"],
            "bounded-uniform" => &["a", "b"],
            other => return Err(config_error(format!("unknown scenery family `{other}`"))),
        };
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(config_error(format!("scenery family `{}` has no parameter `{k}`", self.family)));
        }
        let get = |k: &str| self.params.get(k).copied().ok_or_else(|| config_error(format!("scenery parameter `{k}` is required")));
        Ok(match self.family.as_str() {
            "gaussian" => SceneryModel::gaussian(get("sigma")?)?,
            "weibull-tail" => SceneryModel::weibull_tail(get("D")?, get("q")?)?,
            "shifted-gaussian" => SceneryModel::shifted(SceneryModel::gaussian(get("sigma")?)?, get("shift")?)?,
            _ => SceneryModel::bounded_uniform(get("a")?, get("b")?)?,
        })
    }
}

/// Fills unset fields of `self` from `other`'s set fields (flags win).
macro_rules! overlay {
    ($target:expr, $flags:expr; $($field:ident),* $(,)?) => {
        $( if $flags.$field.is_some() { $target.$field = $flags.$field.clone(); } )*
    };
}

/// Fills unset fields with defaults.
macro_rules! defaults {
    ($target:expr; $($field:ident = $value:expr),* $(,)?) => {
        $( if $target.$field.is_none() { $target.$field = Some($value); } )*
    };
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateConfig {
    /// Dimension of the simple random walk (ignored when a kernel is configured).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Walk lengths.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TailConfig {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<TailMethodName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    /// A number or `auto-smalldev:θ`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Level>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RateTableConfig {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regime: Option<RegimeName>,
    /// Exponent of the small-deviation level.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Fixed level of the large-deviation regime.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    /// Tail exponent, coefficient and growth exponent of the very-large regime.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<TailMethodName>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<u64>,
    /// Predicted limit of the rate-normalized values, when not known in closed form.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SolveMode>,
    /// Dimension with `Γ = I` (ignored when a kernel is configured; its covariance is used).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long = "D")]
    #[serde(rename = "D", skip_serializing_if = "Option::is_none")]
    pub d_coef: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    #[arg(long = "R")]
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[arg(long = "max-iterations")]
    #[serde(rename = "max-iterations", skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    /// Write the minimizer as CSV to this path.
    #[arg(long = "export-minimizer")]
    #[serde(rename = "export-minimizer", skip_serializing_if = "Option::is_none")]
    pub export_minimizer: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[arg(long = "R")]
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<u32>>,
    /// Macroscopic times `T`, so that `n = T α²`.
    #[arg(long = "T", value_delimiter = ',')]
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<u64>>,
    /// Cells per axis of the continuum discretization.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryMode>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct BoxStudyConfig {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SolveMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long = "D")]
    #[serde(rename = "D", skip_serializing_if = "Option::is_none")]
    pub d_coef: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    /// Mesh width shared by all boxes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[arg(long = "R", value_delimiter = ',')]
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// JSON results path; standard output when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Long-format CSV of the plot data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenery: Option<SceneryConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_table: Option<RateTableConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral: Option<SpectralConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial: Option<TrialConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_study: Option<BoxStudyConfig>,
}

/// Flags of one subcommand, in the same shape as the matching config section.
#[derive(Clone, Debug, PartialEq)]
pub enum CommandFlags {
    Simulate(SimulateConfig),
    Tail(TailConfig),
    RateTable(RateTableConfig),
    Solve(SolveConfig),
    SpectralCheck(SpectralConfig),
    TrialSequence(TrialConfig),
    BoxStudy(BoxStudyConfig),
}

impl CommandFlags {
    pub fn command(&self) -> Command {
        match self {
            CommandFlags::Simulate(_) => Command::Simulate,
            CommandFlags::Tail(_) => Command::Tail,
            CommandFlags::RateTable(_) => Command::RateTable,
            CommandFlags::Solve(_) => Command::Solve,
            CommandFlags::SpectralCheck(_) => Command::SpectralCheck,
            CommandFlags::TrialSequence(_) => Command::TrialSequence,
            CommandFlags::BoxStudy(_) => Command::BoxStudy,
        }
    }
}

/// Top-level flags shared by all subcommands.
#[derive(Clone, Debug, Default, PartialEq, Args)]
pub struct GlobalFlags {
    /// TOML experiment file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub plot: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| LabError::Parse { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Applies command-line overrides.
    pub fn apply_flags(&mut self, global: &GlobalFlags, flags: Option<&CommandFlags>) -> Result<()> {
        overlay!(self, global; seed, workers, output, plot);
        let Some(flags) = flags else { return Ok(()) };
        if let Some(cmd) = self.command.filter(|c| *c != flags.command()) {
            return Err(config_error(format!(
                "the config file runs `{}` but the command line asks for `{}`",
                cmd.name(),
                flags.command().name()
            )));
        }
        self.command = Some(flags.command());
        match flags {
            CommandFlags::Simulate(f) => {
                let s = self.simulate.get_or_insert_with(Default::default);
                overlay!(s, f; d, n, replicates);
            }
            CommandFlags::Tail(f) => {
                let s = self.tail.get_or_insert_with(Default::default);
                overlay!(s, f; d, method, n, b, replicates);
            }
            CommandFlags::RateTable(f) => {
                let s = self.rate_table.get_or_insert_with(Default::default);
                overlay!(s, f; d, regime, theta, u, q, coefficient, exponent, n, method, replicates, prediction);
            }
            CommandFlags::Solve(f) => {
                let s = self.solve.get_or_insert_with(Default::default);
                overlay!(s, f; mode, d, d_coef, q, u, radius, m, boundary, delta, restarts, max_iterations, export_minimizer);
            }
            CommandFlags::SpectralCheck(f) => {
                let s = self.spectral.get_or_insert_with(Default::default);
                overlay!(s, f; d, potential, amplitude, radius, alphas, times, m, boundary);
            }
            CommandFlags::TrialSequence(f) => {
                let s = self.trial.get_or_insert_with(Default::default);
                overlay!(s, f; d, p, n);
            }
            CommandFlags::BoxStudy(f) => {
                let s = self.box_study.get_or_insert_with(Default::default);
                overlay!(s, f; mode, d, d_coef, q, u, h, radii, delta, restarts);
            }
        }
        Ok(())
    }

    /// Fills defaults for the selected command so the result is fully explicit.
    pub fn resolve(mut self) -> Result<Self> {
        let command = self.command.ok_or_else(|| config_error("no command given (use a subcommand or `command = ...`)"))?;
        defaults!(self; seed = 0, workers = 1);
        if self.workers == Some(0) {
            return Err(config_error("workers must be at least 1"));
        }
        let walk_dim = |d: Option<usize>| d.unwrap_or(1);
        match command {
            Command::Simulate => {
                let s = self.simulate.get_or_insert_with(Default::default);
                defaults!(s; n = vec![1024], replicates = 1000);
                let d = walk_dim(s.d);
                self.kernel.get_or_insert_with(|| KernelConfig::simple(d));
                self.scenery.get_or_insert_with(Default::default);
            }
            Command::Tail => {
                let s = self.tail.get_or_insert_with(Default::default);
                defaults!(s; method = TailMethodName::CondGaussian, replicates = 10_000);
                if s.n.is_none() || s.b.is_none() {
                    return Err(config_error("tail needs `n` and `b`"));
                }
                let d = walk_dim(s.d);
                self.kernel.get_or_insert_with(|| KernelConfig::simple(d));
                self.scenery.get_or_insert_with(Default::default);
            }
            Command::RateTable => {
                let s = self.rate_table.get_or_insert_with(Default::default);
                defaults!(s; method = TailMethodName::CondGaussian, replicates = 10_000);
                if s.regime.is_none() || s.n.is_none() {
                    return Err(config_error("rate-table needs `regime` and `n`"));
                }
                if s.regime == Some(RegimeName::SmallDev) {
                    defaults!(s; d = 2, theta = 0.75);
                }
                let d = walk_dim(s.d);
                self.kernel.get_or_insert_with(|| KernelConfig::simple(d));
                self.scenery.get_or_insert_with(Default::default);
            }
            Command::Solve => {
                let s = self.solve.get_or_insert_with(Default::default);
                defaults!(s; d_coef = 0.5, q = 2.0, u = 1.0, radius = 8.0, m = 512,
                    boundary = BoundaryMode::Dirichlet, restarts = 5, max_iterations = 50_000);
                if s.mode.is_none() {
                    return Err(config_error("solve needs `mode` (K_Dq, K_H or chi)"));
                }
                if self.kernel.is_none() {
                    defaults!(s; d = 1);
                }
                if s.mode == Some(SolveMode::KH) {
                    self.scenery.get_or_insert_with(Default::default);
                }
            }
            Command::SpectralCheck => {
                let s = self.spectral.get_or_insert_with(Default::default);
                defaults!(s; potential = PotentialKind::GaussianWell, amplitude = 2.0, radius = 4.0,
                    alphas = vec![4, 8, 16], times = vec![4, 16, 64], m = 512, boundary = BoundaryMode::Dirichlet);
                let d = walk_dim(s.d);
                self.kernel.get_or_insert_with(|| KernelConfig::simple(d));
            }
            Command::TrialSequence => {
                let s = self.trial.get_or_insert_with(Default::default);
                defaults!(s; d = 5, p = 2.0, n = vec![10, 100, 1000]);
            }
            Command::BoxStudy => {
                let s = self.box_study.get_or_insert_with(Default::default);
                defaults!(s; mode = SolveMode::KDq, d_coef = 0.5, q = 2.0, u = 1.0, h = 0.0625,
                    radii = vec![4.0, 8.0, 16.0], delta = vec![0.25, 0.5], restarts = 5);
                if s.mode == Some(SolveMode::Chi) {
                    return Err(config_error("box-study supports K_Dq and K_H"));
                }
                if self.kernel.is_none() {
                    defaults!(s; d = 1);
                }
                if s.mode == Some(SolveMode::KH) {
                    self.scenery.get_or_insert_with(Default::default);
                }
            }
        }
        Ok(self)
    }

    /// Covariance for the variational commands: the kernel's when one is configured, else `I_d`.
    pub fn covariance(&self, d: Option<usize>) -> Result<Covariance> {
        match (&self.kernel, d) {
            (Some(k), None) => Ok(k.build()?.covariance().clone()),
            (Some(_), Some(_)) => Err(config_error("give either a kernel or `d`, not both")),
            (None, Some(d)) if (1..=4).contains(&d) => Ok(Covariance::identity(d)),
            (None, _) => Err(config_error("dimension must be between 1 and 4")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_parsing() {
        assert_eq!("0.25".parse::<Level>().unwrap(), Level::Fixed(0.25));
        assert_eq!("auto-smalldev:0.75".parse::<Level>().unwrap(), Level::AutoSmallDev(0.75));
        assert!("auto-smalldev:1.5".parse::<Level>().is_err());
        assert!("nope".parse::<Level>().is_err());
        let b = Level::AutoSmallDev(0.75).at(65536);
        assert!((b - 65536f64.powf(-0.5) * 65536f64.ln().powf(0.75)).abs() < 1e-15);
    }

    #[test]
    fn unknown_keys_rejected() {
        let p = Path::new("x.toml");
        assert!(ExperimentConfig::from_toml("command = \"solve\"\nbogus = 1\n", p).is_err());
        assert!(ExperimentConfig::from_toml("[solve]\nmode = \"K_Dq\"\nR = 4\nextra = 2\n", p).is_err());
        let ok = ExperimentConfig::from_toml("[solve]\nmode = \"K_Dq\"\nR = 4\nD = 0.5\n", p).unwrap();
        assert_eq!(ok.solve.unwrap().radius, Some(4.0));
    }

    #[test]
    fn flags_override_file() {
        let p = Path::new("x.toml");
        let mut cfg = ExperimentConfig::from_toml("seed = 3\n[tail]\nn = 100\nb = \"auto-smalldev:0.75\"\nreplicates = 5\n", p).unwrap();
        let flags = CommandFlags::Tail(TailConfig { replicates: Some(9), ..Default::default() });
        cfg.apply_flags(&GlobalFlags { seed: Some(4), ..Default::default() }, Some(&flags)).unwrap();
        let cfg = cfg.resolve().unwrap();
        assert_eq!(cfg.seed, Some(4));
        let tail = cfg.tail.unwrap();
        assert_eq!(tail.replicates, Some(9));
        assert_eq!(tail.n, Some(100));
        assert_eq!(tail.b, Some(Level::AutoSmallDev(0.75)));
    }

    #[test]
    fn scenery_and_kernel_validation() {
        let mut s = SceneryConfig { family: "gaussian".into(), params: BTreeMap::from([("sigma".into(), -1.0)]), seed: None };
        assert!(s.build().is_err());
        s.params = BTreeMap::from([("mu".into(), 1.0)]);
        assert!(s.build().is_err());
        assert!(KernelConfig { builtin: Some("srw-2d".into()), steps: None }.build().is_ok());
        assert!(KernelConfig { builtin: Some("lazy".into()), steps: None }.build().is_err());
        let steps = vec![StepEntry { offset: vec![1], prob: 0.5 }, StepEntry { offset: vec![-1], prob: 0.4 }];
        assert!(KernelConfig { builtin: None, steps: Some(steps) }.build().is_err());
    }
}
