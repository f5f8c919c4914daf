//! Error metrics, mode fields for plotting, and multi-variant comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dmd::{
    dmd_projected_with, dmd_tdc, spectrum, DmdModel, ProjectedOptions, RankPolicy, SpectrumEntry,
};
use crate::error::{DmdError, Result};
use crate::numerics::Real;
use crate::problems::{generate_double_gyre, generate_signal, DoubleGyreParams, SignalParams};
use crate::projections::{
    achlioptas_operator, gaussian_operator, krylov_operator, sampling_operator, OperatorRecord,
    ProjectionOperator,
};
use crate::snapshots::{load, train_test_split, GridMeta, SnapshotMatrix};

/// Denominator floor of the relative error.
pub const ERROR_FLOOR: f64 = 1e-12;

/// Per-snapshot relative error over a full time window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub rel_error: Vec<f64>,
    /// Entries before this index belong to the training window.
    pub n_train: usize,
}

impl ErrorSeries {
    fn mean(v: &[f64]) -> Option<f64> {
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn train(&self) -> &[f64] {
        &self.rel_error[..self.n_train.min(self.rel_error.len())]
    }

    pub fn test(&self) -> &[f64] {
        &self.rel_error[self.n_train.min(self.rel_error.len())..]
    }

    pub fn train_mean(&self) -> Option<f64> {
        Self::mean(self.train())
    }

    pub fn test_mean(&self) -> Option<f64> {
        Self::mean(self.test())
    }

    pub fn train_max(&self) -> Option<f64> {
        self.train().iter().copied().reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,rel_error\n");
        for (t, e) in self.times.iter().zip(&self.rel_error) {
            out.push_str(&format!("{t},{e}\n"));
        }
        out
    }
}

/// `e_k = |x_k - x_pred(t_k)| / max(|x_k|, ERROR_FLOOR)` for every column of `x_true`.
pub fn relative_error_series<T: Real>(
    model: &DmdModel<T>,
    x_true: &SnapshotMatrix<T>,
    n_train: usize,
) -> Result<ErrorSeries> {
    if model.base_m != x_true.m() {
        return Err(DmdError::Shape {
            expected: format!("{} rows", model.base_m),
            got: format!("{} rows", x_true.m()),
        });
    }
    let (dm, dx) = (model.dt.as_f64(), x_true.dt().as_f64());
    if (dm - dx).abs() > 1e-12 * dm.abs().max(dx.abs()) {
        return Err(DmdError::Consistency(format!(
            "model dt {dm} differs from data dt {dx}"
        )));
    }
    let mut times = Vec::with_capacity(x_true.n());
    let mut rel_error = Vec::with_capacity(x_true.n());
    for k in 0..x_true.n() {
        let t = x_true.time(k);
        let pred = model.predict_at(t - model.t0);
        let truth = x_true.data().column(k);
        let num = (pred - truth).norm().as_f64();
        let den = truth.norm().as_f64().max(ERROR_FLOOR);
        times.push(t.as_f64());
        rel_error.push(num / den);
    }
    Ok(ErrorSeries {
        times,
        rel_error,
        n_train,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldPart {
    Real,
    Imag,
    Abs,
}

impl FromStr for FieldPart {
    type Err = DmdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(FieldPart::Real),
            "imag" => Ok(FieldPart::Imag),
            "abs" => Ok(FieldPart::Abs),
            _ => Err(DmdError::param(
                "part",
                format!("expected real, imag or abs, got {s:?}"),
            )),
        }
    }
}

/// Mode `k` restricted to the current-time block and reshaped to `ny x nx`.
pub fn mode_field<T: Real>(
    model: &DmdModel<T>,
    k: usize,
    grid: &GridMeta,
    part: FieldPart,
) -> Result<DMatrix<f64>> {
    if k >= model.rank() {
        return Err(DmdError::IndexOutOfRange {
            index: k,
            limit: model.rank(),
        });
    }
    if grid.len() != model.base_m {
        return Err(DmdError::Shape {
            expected: format!("grid with {} points", model.base_m),
            got: format!("{}x{} = {}", grid.nx, grid.ny, grid.len()),
        });
    }
    let col = model.modes.column(k);
    Ok(DMatrix::from_fn(grid.ny, grid.nx, |j, i| {
        let z = col[grid.index(i, j)];
        match part {
            FieldPart::Real => z.re.as_f64(),
            FieldPart::Imag => z.im.as_f64(),
            FieldPart::Abs => z.re.as_f64().hypot(z.im.as_f64()),
        }
    }))
}

/// Which data set an experiment runs on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Problem {
    DoubleGyre(DoubleGyreParams),
    #[serde(rename = "signal-2d")]
    Signal2d(SignalParams),
    File {
        path: PathBuf,
    },
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::DoubleGyre(_) => "double-gyre",
            Problem::Signal2d(_) => "signal-2d",
            Problem::File { .. } => "file",
        }
    }

    /// Default signal parameters start one step after zero, where every
    /// snapshot would otherwise begin at the zero vector.
    pub fn signal_default() -> Problem {
        let p = SignalParams::default();
        Problem::Signal2d(SignalParams { t0: p.dt, ..p })
    }

    pub fn generate<T: Real>(&self, seed: u64) -> Result<SnapshotMatrix<T>> {
        match self {
            Problem::DoubleGyre(p) => generate_double_gyre(p),
            Problem::Signal2d(p) => generate_signal(p, sub_seed(seed, "noise")),
            Problem::File { path } => load(path),
        }
    }
}

impl FromStr for Problem {
    type Err = DmdError;

    /// `double-gyre`, `signal-2d` or `file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double-gyre" => Ok(Problem::DoubleGyre(DoubleGyreParams::default())),
            "signal-2d" => Ok(Problem::signal_default()),
            _ => match s.strip_prefix("file:") {
                Some(path) if !path.is_empty() => Ok(Problem::File { path: path.into() }),
                _ => Err(DmdError::param(
                    "problem",
                    format!("expected double-gyre, signal-2d or file:<path>, got {s:?}"),
                )),
            },
        }
    }
}

/// Variant names accepted by the comparison runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    /// Unreduced time-delay fit.
    Classic,
    Sampling,
    Gaussian,
    Achlioptas,
    Krylov,
}

impl VariantName {
    pub const ALL: [VariantName; 5] = [
        VariantName::Classic,
        VariantName::Sampling,
        VariantName::Gaussian,
        VariantName::Achlioptas,
        VariantName::Krylov,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VariantName::Classic => "classic",
            VariantName::Sampling => "sampling",
            VariantName::Gaussian => "gaussian",
            VariantName::Achlioptas => "achlioptas",
            VariantName::Krylov => "krylov",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = DmdError;

    fn from_str(s: &str) -> Result<Self> {
        VariantName::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim())
            .ok_or_else(|| {
                DmdError::param(
                    "variants",
                    format!("unknown variant {s:?} (expected classic, sampling, gaussian, achlioptas, krylov)"),
                )
            })
    }
}

/// One requested variant. `measurements` is the number of sketch rows; for
/// Krylov that is `steps + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: VariantName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<u32>,
}

impl VariantSpec {
    pub fn new(name: VariantName) -> Self {
        VariantSpec {
            name,
            measurements: None,
            sparsity: None,
        }
    }
}

/// Full description of a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub q: usize,
    pub n_train: usize,
    pub rank: RankPolicy,
    pub variants: Vec<VariantSpec>,
    pub seed: u64,
    #[serde(default)]
    pub project_before_augment: bool,
    /// Abort on the first failing variant instead of recording the error.
    #[serde(default)]
    pub strict: bool,
}

pub const DEFAULT_Q: usize = 2;
pub const DEFAULT_SEED: u64 = 0;

impl ExperimentConfig {
    /// Defaults for a problem: the 20-mode, 174-sample double-gyre setup, the
    /// 64-sample signal setup, or rank `tol:1e-10` with an 80% split for files.
    pub fn for_problem(problem: Problem) -> Self {
        let (n_train, rank) = match &problem {
            Problem::DoubleGyre(_) => (174, RankPolicy::Fixed(20)),
            Problem::Signal2d(_) => (64, RankPolicy::default()),
            Problem::File { .. } => (0, RankPolicy::default()),
        };
        ExperimentConfig {
            problem,
            q: DEFAULT_Q,
            n_train,
            rank,
            variants: VariantName::ALL.into_iter().map(VariantSpec::new).collect(),
            seed: DEFAULT_SEED,
            project_before_augment: false,
            strict: false,
        }
    }

    pub fn double_gyre() -> Self {
        Self::for_problem(Problem::DoubleGyre(DoubleGyreParams::default()))
    }

    pub fn signal() -> Self {
        Self::for_problem(Problem::signal_default())
    }

    pub fn with_variants(mut self, names: &[VariantName]) -> Self {
        self.variants = names.iter().copied().map(VariantSpec::new).collect();
        self
    }

    /// Measurement count and Achlioptas sparsity actually used for `spec`.
    pub fn resolve(&self, spec: &VariantSpec, m: usize) -> (usize, Option<u32>) {
        let sparsity = match spec.name {
            VariantName::Achlioptas => Some(spec.sparsity.unwrap_or(3)),
            _ => None,
        };
        let a = spec
            .measurements
            .unwrap_or_else(|| default_measurements(&self.problem, spec.name, m));
        (a, sparsity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(DmdError::param(
                "variants",
                "at least one variant is required",
            ));
        }
        if self.q == 0 {
            return Err(DmdError::param("q", "delay depth must be >= 1"));
        }
        self.rank.validate()?;
        for v in &self.variants {
            if let Some(s) = v.sparsity {
                if s != 1 && s != 3 {
                    return Err(DmdError::param(
                        "sparsity",
                        format!("must be 1 or 3, got {s}"),
                    ));
                }
            }
            if v.measurements == Some(0) {
                return Err(DmdError::param(
                    "measurements",
                    format!("{} needs at least one", v.name),
                ));
            }
        }
        match &self.problem {
            Problem::DoubleGyre(p) => p.validate(),
            Problem::Signal2d(p) => p.validate(),
            Problem::File { .. } => Ok(()),
        }
    }
}

/// Sketch rows used when a variant does not set its own count.
pub fn default_measurements(problem: &Problem, name: VariantName, m: usize) -> usize {
    match (problem, name) {
        (_, VariantName::Classic) => m,
        (Problem::DoubleGyre(_), VariantName::Gaussian) => 200,
        (Problem::DoubleGyre(_), _) => 100,
        (Problem::Signal2d(_), VariantName::Sampling) => 100,
        (Problem::Signal2d(_), _) => 50,
        // Files: one percent of the state, at least ten rows.
        (Problem::File { .. }, _) => (m / 100).max(10).min(m),
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(name: &str) -> u64 {
    name.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named component: `splitmix64(master ^ fnv1a(name))`.
///
/// Each component depends only on the master seed and its own name, so
/// adding or removing variants leaves the others' random streams alone.
pub fn sub_seed(master: u64, component: &str) -> u64 {
    splitmix64(master ^ fnv1a(component))
}

/// One spectrum line as written to reports and CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub re_mu: f64,
    pub im_mu: f64,
    pub re_omega: f64,
    pub im_omega: f64,
    pub amp: f64,
    pub circle: crate::dmd::Circle,
}

impl<T: Real> From<&SpectrumEntry<T>> for SpectrumRow {
    fn from(e: &SpectrumEntry<T>) -> Self {
        SpectrumRow {
            re_mu: e.mu.re.as_f64(),
            im_mu: e.mu.im.as_f64(),
            re_omega: e.omega.re.as_f64(),
            im_omega: e.omega.im.as_f64(),
            amp: e.amp_abs.as_f64(),
            circle: e.circle,
        }
    }
}

pub fn spectrum_csv(rows: &[SpectrumRow]) -> String {
    let mut out = String::from("re_mu,im_mu,re_omega,im_omega,amp,circle\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.re_mu, r.im_mu, r.re_omega, r.im_omega, r.amp, r.circle
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: VariantName,
    pub measurements: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub spectrum: Vec<SpectrumRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<ErrorSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram_deviation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorRecord>,
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub problem: String,
    pub config: ExperimentConfig,
    /// Master seed and every derived component seed.
    pub seeds: BTreeMap<String, u64>,
    pub variants: Vec<VariantReport>,
}

impl ExperimentReport {
    pub fn variant(&self, name: VariantName) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.variant == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &VariantReport> {
        self.variants.iter().filter(|v| v.error.is_some())
    }

    /// Copy with every wall time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> ExperimentReport {
        let mut r = self.clone();
        for v in &mut r.variants {
            v.wall_time = 0.0;
        }
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A finished comparison: the report plus everything needed to inspect it further.
#[derive(Debug, Clone)]
pub struct Comparison<T: Real> {
    pub report: ExperimentReport,
    /// Parallel to `report.variants`; `None` where the fit failed.
    pub models: Vec<Option<DmdModel<T>>>,
    pub data: SnapshotMatrix<T>,
}

impl<T: Real> Comparison<T> {
    pub fn model(&self, name: VariantName) -> Option<&DmdModel<T>> {
        let i = self
            .report
            .variants
            .iter()
            .position(|v| v.variant == name)?;
        self.models[i].as_ref()
    }
}

fn build_operator<T: Real>(
    name: VariantName,
    dim: usize,
    a: usize,
    s: Option<u32>,
    seed: u64,
) -> Result<ProjectionOperator<T>> {
    match name {
        VariantName::Classic => unreachable!("classic has no operator"),
        VariantName::Sampling => sampling_operator(dim, a, seed),
        VariantName::Gaussian => gaussian_operator(dim, a, seed),
        VariantName::Achlioptas => achlioptas_operator(dim, a, s.unwrap_or(3), seed),
        VariantName::Krylov => {
            if a < 2 {
                return Err(DmdError::param(
                    "measurements",
                    "krylov needs at least 2 rows",
                ));
            }
            krylov_operator(dim, a - 1, seed)
        }
    }
}

/// Generates the data once, fits each variant on the training window and
/// evaluates it on the full window. Variants run one after another.
pub fn run_comparison<T: Real>(config: &ExperimentConfig) -> Result<Comparison<T>> {
    config.validate()?;
    let data: SnapshotMatrix<T> = config.problem.generate(config.seed)?;
    run_comparison_on(config, data)
}

/// As [`run_comparison`] on already loaded data.
pub fn run_comparison_on<T: Real>(
    config: &ExperimentConfig,
    data: SnapshotMatrix<T>,
) -> Result<Comparison<T>> {
    config.validate()?;
    let n_train = match config.n_train {
        0 => ((data.n() * 4) / 5).max(2),
        n => n,
    };
    let (train, _) = train_test_split(&data, n_train)?;
    let m = data.m();
    let dim = if config.project_before_augment {
        m
    } else {
        config.q * m
    };

    let mut seeds = BTreeMap::new();
    seeds.insert("master".to_string(), config.seed);
    if matches!(config.problem, Problem::Signal2d(_)) {
        seeds.insert("noise".to_string(), sub_seed(config.seed, "noise"));
    }

    let mut variants = Vec::with_capacity(config.variants.len());
    let mut models = Vec::with_capacity(config.variants.len());
    for spec in &config.variants {
        let (a, s) = config.resolve(spec, m);
        let seed = sub_seed(config.seed, spec.name.as_str());
        if spec.name != VariantName::Classic {
            seeds.insert(spec.name.to_string(), seed);
        }
        let start = Instant::now();
        let mut operator = None;
        let fitted = (|| {
            if spec.name == VariantName::Classic {
                return dmd_tdc(&train, config.q, config.rank);
            }
            let r = build_operator::<T>(spec.name, dim, a, s, seed)?;
            operator = Some(r.record());
            let opts = ProjectedOptions {
                project_before_augment: config.project_before_augment,
            };
            dmd_projected_with(&train, config.q, &r, config.rank, opts)
        })();
        let wall_time = start.elapsed().as_secs_f64();

        let mut report = VariantReport {
            variant: spec.name,
            measurements: a,
            rank: None,
            spectrum: Vec::new(),
            errors: None,
            gram_deviation: operator.as_ref().map(|o| o.gram_deviation),
            operator,
            wall_time,
            error: None,
        };
        let evaluated = fitted.and_then(|model| {
            let errors = relative_error_series(&model, &data, n_train)?;
            Ok((model, errors))
        });
        match evaluated {
            Ok((model, errors)) => {
                info!("{}: rank {} in {:.3} s", spec.name, model.rank(), wall_time);
                report.rank = Some(model.rank());
                report.spectrum = spectrum(&model).iter().map(SpectrumRow::from).collect();
                report.errors = Some(errors);
                models.push(Some(model));
            }
            Err(e) => {
                if config.strict {
                    return Err(DmdError::VariantFailed {
                        variant: spec.name.to_string(),
                        source: Box::new(e),
                    });
                }
                warn!("{} failed: {e}", spec.name);
                report.error = Some(e.to_string());
                models.push(None);
            }
        }
        variants.push(report);
    }

    Ok(Comparison {
        report: ExperimentReport {
            problem: config.problem.name().to_string(),
            config: config.clone(),
            seeds,
            variants,
        },
        models,
        data,
    })
}

/// Writes `report.json`, `errors_<variant>.csv` and `spectrum_<variant>.csv` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DmdError::io(dir, e))?;
    let write = |name: String, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| DmdError::io(&path, e))
    };
    write("report.json".into(), report.to_json()?)?;
    for v in &report.variants {
        if let Some(errors) = &v.errors {
            write(format!("errors_{}.csv", v.variant), errors.to_csv())?;
            write(
                format!("spectrum_{}.csv", v.variant),
                spectrum_csv(&v.spectrum),
            )?;
        }
    }
    Ok(())
}

/// Every amplitude-significant eigenvalue of `reference` (|b| at least
/// `amp_fraction` of the largest) has a counterpart in `other` within `tol`.
/// Returns the worst such distance.
pub fn spectrum_overlap(
    reference: &[SpectrumRow],
    other: &[SpectrumRow],
    amp_fraction: f64,
) -> f64 {
    let max_amp = reference.iter().map(|r| r.amp).fold(0.0, f64::max);
    reference
        .iter()
        .filter(|r| r.amp >= amp_fraction * max_amp)
        .map(|r| {
            other
                .iter()
                .map(|o| (o.re_mu - r.re_mu).hypot(o.im_mu - r.im_mu))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

/// Frequencies `|Im omega| / 2 pi` of eigenvalues with `|b|` at least
/// `amp_fraction` of the largest, deduplicated across conjugate pairs.
pub fn dominant_frequencies(rows: &[SpectrumRow], amp_fraction: f64) -> Vec<f64> {
    let max_amp = rows.iter().map(|r| r.amp).fold(0.0, f64::max);
    let mut out: Vec<f64> = rows
        .iter()
        .filter(|r| r.amp >= amp_fraction * max_amp && r.im_omega > 0.0)
        .map(|r| r.im_omega / std::f64::consts::TAU)
        .collect();
    out.sort_by(|a, b| a.partial_cmp(b).expect("finite frequencies"));
    out
}
