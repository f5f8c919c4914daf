//! Command-line front end: `generate`, `run` and `spectrum`.
//!
//! Settings resolve as flags > `--config` file > per-problem defaults.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Deserialize;

use crate::analysis::{
    mode_field, run_comparison, sub_seed, write_report, Comparison, ExperimentConfig, FieldPart,
    Problem, VariantName, VariantSpec,
};
use crate::dmd::{write_modes_csv, ModelRecord, RankPolicy};
use crate::error::{DmdError, Result};
use crate::problems::{generate_double_gyre, generate_signal};
use crate::snapshots::{save, GridMeta, SnapshotMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VARIANT_FAILED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_IO: i32 = 74;
/// Any other failure (e.g. a numerical error outside a comparison run).
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "delaydmd",
    version,
    about = "Time-delay DMD with measurement reduction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a snapshot data set (`<out>.csv` plus `<out>.meta.json`).
    Generate(GenerateArgs),
    /// Fit the requested variants and write the report and per-variant files.
    Run(RunArgs),
    /// Print the spectrum stored in a `model_<variant>.json` file.
    Spectrum(SpectrumArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// `double-gyre` or `signal-2d`.
    #[arg(long)]
    pub problem: String,
    #[arg(long, env = "DELAYDMD_SEED")]
    pub seed: Option<u64>,
    /// Output stem; defaults to the problem name.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// `double-gyre`, `signal-2d` or `file:<path>`.
    #[arg(long)]
    pub problem: Option<String>,
    /// JSON file with any of the run settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "DELAYDMD_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    /// `fixed:R` or `tol:T`.
    #[arg(long)]
    pub rank: Option<String>,
    /// Comma-separated subset of classic,sampling,gaussian,achlioptas,krylov.
    #[arg(long)]
    pub variants: Option<String>,
    /// Sketch rows per variant, `<variant>=<a>`; repeatable or comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub measurements: Vec<String>,
    /// Achlioptas sparsity, 1 or 3.
    #[arg(long)]
    pub sparsity: Option<u32>,
    /// Mode indices to write as grid fields, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub emit_modes: Option<Vec<usize>>,
    /// Also write the full complex mode matrices as `modes_<variant>.csv`.
    #[arg(long)]
    pub save_modes: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 2 as soon as any variant fails.
    #[arg(long)]
    pub strict: bool,
    /// Apply the measurement operator to raw snapshots before delay embedding.
    #[arg(long)]
    pub project_before_augment: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    pub model: PathBuf,
}

/// Problem parameter overrides.
#[derive(Debug, Args, Default, Clone)]
pub struct Overrides {
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    /// Signal only.
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub f1: Option<f64>,
    #[arg(long)]
    pub f2: Option<f64>,
    /// Signal noise amplitude.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Double-gyre amplitude A.
    #[arg(long)]
    pub amp: Option<f64>,
    /// Double-gyre forcing frequency in rad/s.
    #[arg(long)]
    pub omega: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, problem: &mut Problem) -> Result<()> {
        fn regrid(g: &mut GridMeta, nx: Option<usize>, ny: Option<usize>) {
            g.nx = nx.unwrap_or(g.nx);
            g.ny = ny.unwrap_or(g.ny);
        }
        let reject = |name: &'static str, problem: &str| {
            Err(DmdError::param(
                name,
                format!("does not apply to {problem}"),
            ))
        };
        match problem {
            Problem::DoubleGyre(p) => {
                for (name, set) in [
                    ("t_final", self.t_final.is_some()),
                    ("f1", self.f1.is_some()),
                    ("f2", self.f2.is_some()),
                    ("noise", self.noise.is_some()),
                ] {
                    if set {
                        return reject(name, "double-gyre");
                    }
                }
                p.nt = self.nt.unwrap_or(p.nt);
                p.dt = self.dt.unwrap_or(p.dt);
                p.t0 = self.t0.unwrap_or(p.t0);
                p.amp = self.amp.unwrap_or(p.amp);
                p.omega = self.omega.unwrap_or(p.omega);
                p.eps = self.eps.unwrap_or(p.eps);
                regrid(&mut p.grid, self.nx, self.ny);
                p.validate()
            }
            Problem::Signal2d(p) => {
                for (name, set) in [
                    ("amp", self.amp.is_some()),
                    ("omega", self.omega.is_some()),
                    ("eps", self.eps.is_some()),
                ] {
                    if set {
                        return reject(name, "signal-2d");
                    }
                }
                if self.nt.is_some() {
                    p.nt = self.nt;
                }
                p.dt = self.dt.unwrap_or(p.dt);
                p.t0 = self.t0.unwrap_or(p.t0);
                p.t_final = self.t_final.unwrap_or(p.t_final);
                p.f1 = self.f1.unwrap_or(p.f1);
                p.f2 = self.f2.unwrap_or(p.f2);
                p.noise_amp = self.noise.unwrap_or(p.noise_amp);
                regrid(&mut p.grid, self.nx, self.ny);
                p.validate()
            }
            Problem::File { .. } => {
                let any = self.nt.is_some()
                    || self.dt.is_some()
                    || self.t0.is_some()
                    || self.nx.is_some()
                    || self.ny.is_some()
                    || self.t_final.is_some()
                    || self.f1.is_some()
                    || self.f2.is_some()
                    || self.noise.is_some()
                    || self.amp.is_some()
                    || self.omega.is_some()
                    || self.eps.is_some();
                if any {
                    return reject("overrides", "file data");
                }
                Ok(())
            }
        }
    }
}

/// Contents of a `--config` file; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<Problem>,
    pub q: Option<usize>,
    pub n_train: Option<usize>,
    /// `fixed:R` or `tol:T`.
    pub rank: Option<String>,
    pub variants: Option<Vec<VariantSpec>>,
    pub seed: Option<u64>,
    pub project_before_augment: Option<bool>,
    pub strict: Option<bool>,
    pub emit_modes: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DmdError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DmdError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            field: "config".into(),
            message: e.to_string(),
        })
    }
}

/// Fully resolved `run` settings.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub experiment: ExperimentConfig,
    pub out: PathBuf,
    pub emit_modes: Vec<usize>,
    pub save_modes: bool,
}

fn parse_variants(s: &str) -> Result<Vec<VariantName>> {
    let names: Vec<VariantName> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if names.is_empty() {
        return Err(DmdError::param(
            "variants",
            "at least one variant is required",
        ));
    }
    Ok(names)
}

fn parse_measurement(s: &str) -> Result<(VariantName, usize)> {
    let bad = || {
        DmdError::param(
            "measurements",
            format!("expected <variant>=<count>, got {s:?}"),
        )
    };
    let (name, count) = s.split_once('=').ok_or_else(bad)?;
    Ok((name.parse()?, count.trim().parse().map_err(|_| bad())?))
}

impl RunArgs {
    pub fn plan(&self) -> Result<RunPlan> {
        let file = match &self.config {
            Some(path) => ConfigFile::load(path)?,
            None => ConfigFile::default(),
        };
        let mut problem = match (&self.problem, file.problem) {
            (Some(p), _) => p.parse()?,
            (None, Some(p)) => p,
            (None, None) => {
                return Err(DmdError::param(
                    "problem",
                    "pass --problem or set it in --config",
                ))
            }
        };
        self.overrides.apply(&mut problem)?;

        let mut c = ExperimentConfig::for_problem(problem);
        if let Some(q) = file.q {
            c.q = q;
        }
        if let Some(n) = file.n_train {
            c.n_train = n;
        }
        if let Some(r) = &file.rank {
            c.rank = r.parse()?;
        }
        if let Some(v) = file.variants {
            c.variants = v;
        }
        if let Some(s) = file.seed {
            c.seed = s;
        }
        if let Some(b) = file.project_before_augment {
            c.project_before_augment = b;
        }
        if let Some(b) = file.strict {
            c.strict = b;
        }

        if let Some(q) = self.q {
            c.q = q;
        }
        if let Some(n) = self.n_train {
            c.n_train = n;
        }
        if let Some(r) = &self.rank {
            c.rank = r.parse::<RankPolicy>()?;
        }
        if let Some(v) = &self.variants {
            c.variants = parse_variants(v)?
                .into_iter()
                .map(VariantSpec::new)
                .collect();
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        c.project_before_augment |= self.project_before_augment;
        c.strict |= self.strict;
        for m in &self.measurements {
            let (name, a) = parse_measurement(m)?;
            let spec = c
                .variants
                .iter_mut()
                .find(|v| v.name == name)
                .ok_or_else(|| {
                    DmdError::param("measurements", format!("variant {name} is not selected"))
                })?;
            spec.measurements = Some(a);
        }
        if let Some(s) = self.sparsity {
            for v in c
                .variants
                .iter_mut()
                .filter(|v| v.name == VariantName::Achlioptas)
            {
                v.sparsity = Some(s);
            }
        }
        c.validate()?;

        Ok(RunPlan {
            out: self
                .out
                .clone()
                .or(file.out)
                .unwrap_or_else(|| PathBuf::from(format!("out-{}", c.problem.name()))),
            emit_modes: self
                .emit_modes
                .clone()
                .or(file.emit_modes)
                .unwrap_or_default(),
            save_modes: self.save_modes,
            experiment: c,
        })
    }
}

/// Exit status for an error.
pub fn exit_code(e: &DmdError) -> i32 {
    match e {
        DmdError::VariantFailed { .. } => EXIT_VARIANT_FAILED,
        DmdError::Io { .. } | DmdError::Parse { .. } | DmdError::Json(_) => EXIT_IO,
        DmdError::InvalidParameter { .. }
        | DmdError::InvalidGrid(_)
        | DmdError::SamplingRate { .. }
        | DmdError::InvalidDelay { .. }
        | DmdError::InvalidSplit { .. }
        | DmdError::InvalidCount { .. } => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<PathBuf> {
    let mut problem: Problem = args.problem.parse()?;
    args.overrides.apply(&mut problem)?;
    let seed = args.seed.unwrap_or(crate::analysis::DEFAULT_SEED);
    let data: SnapshotMatrix<f64> = match &problem {
        Problem::DoubleGyre(p) => generate_double_gyre(p)?,
        Problem::Signal2d(p) => generate_signal(p, sub_seed(seed, "noise"))?,
        Problem::File { .. } => {
            return Err(DmdError::param(
                "problem",
                "generate needs double-gyre or signal-2d",
            ));
        }
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(problem.name()));
    save(&data, &out)?;
    info!(
        "wrote {}x{} snapshots to {}",
        data.m(),
        data.n(),
        out.display()
    );
    Ok(out)
}

/// Runs the comparison and writes all artifacts. Returns the exit status.
pub fn cmd_run(plan: &RunPlan) -> Result<i32> {
    let cmp = run_comparison::<f64>(&plan.experiment)?;
    write_artifacts(&cmp, plan)?;
    print!("{}", summary(&cmp));
    let failed = cmp.report.failures().count();
    Ok(if failed > 0 && plan.experiment.strict {
        EXIT_VARIANT_FAILED
    } else {
        EXIT_OK
    })
}

fn write_artifacts(cmp: &Comparison<f64>, plan: &RunPlan) -> Result<()> {
    let dir = &plan.out;
    write_report(&cmp.report, dir)?;
    let write = |name: String, body: String| {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| DmdError::io(&path, e))
    };
    if !plan.emit_modes.is_empty() && cmp.data.grid().is_none() {
        return Err(DmdError::InvalidGrid(
            "--emit-modes needs data with grid metadata".into(),
        ));
    }
    for (report, model) in cmp.report.variants.iter().zip(&cmp.models) {
        let Some(model) = model else { continue };
        let name = report.variant;
        write(
            format!("model_{name}.json"),
            serde_json::to_string_pretty(&model.to_record())?,
        )?;
        if plan.save_modes {
            write_modes_csv(model, &dir.join(format!("modes_{name}.csv")))?;
        }
        if let Some(grid) = cmp.data.grid() {
            for &k in &plan.emit_modes {
                if k >= model.rank() {
                    log::warn!(
                        "{name}: mode {k} requested but the model has rank {}",
                        model.rank()
                    );
                    continue;
                }
                for (part, tag) in [
                    (FieldPart::Real, "real"),
                    (FieldPart::Imag, "imag"),
                    (FieldPart::Abs, "abs"),
                ] {
                    let field = mode_field(model, k, grid, part)?;
                    write(format!("mode_{name}_{k}_{tag}.csv"), matrix_csv(&field))?;
                }
            }
        }
    }
    Ok(())
}

fn matrix_csv(m: &nalgebra::DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn summary(cmp: &Comparison<f64>) -> String {
    let mut out = format!(
        "problem {} (seed {})\n",
        cmp.report.problem, cmp.report.config.seed
    );
    for v in &cmp.report.variants {
        match (&v.error, &v.errors) {
            (Some(e), _) => writeln!(out, "{:<11} a={:<6} FAILED: {e}", v.variant, v.measurements),
            (None, Some(errs)) => writeln!(
                out,
                "{:<11} a={:<6} rank={:<3} test-error={:.3e} time={:.3}s",
                v.variant,
                v.measurements,
                v.rank.unwrap_or(0),
                errs.test_mean().unwrap_or(f64::NAN),
                v.wall_time
            ),
            (None, None) => Ok(()),
        }
        .expect("writing to String");
    }
    out
}

/// One line per eigenvalue: `re_mu im_mu re_omega im_omega |b| circle`.
pub fn format_spectrum(record: &ModelRecord) -> String {
    let mut out = String::from("re_mu im_mu re_omega im_omega amp circle\n");
    for e in record.spectrum() {
        writeln!(
            out,
            "{:+.12e} {:+.12e} {:+.12e} {:+.12e} {:.12e} {}",
            e.mu.re, e.mu.im, e.omega.re, e.omega.im, e.amp_abs, e.circle
        )
        .expect("writing to String");
    }
    out
}

pub fn cmd_spectrum(args: &SpectrumArgs) -> Result<String> {
    let path = &args.model;
    let text = std::fs::read_to_string(path).map_err(|e| DmdError::io(path, e))?;
    let record: ModelRecord = serde_json::from_str(&text).map_err(|e| DmdError::Parse {
        path: path.clone(),
        line: e.line(),
        field: "model".into(),
        message: e.to_string(),
    })?;
    Ok(format_spectrum(&record))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a).map(|p| {
            println!("wrote {}", p.display());
            EXIT_OK
        }),
        Command::Run(a) => a.plan().and_then(|plan| cmd_run(&plan)),
        Command::Spectrum(a) => cmd_spectrum(a).map(|s| {
            print!("{s}");
            EXIT_OK
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
