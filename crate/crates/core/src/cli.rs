//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on numerical
//! failures (including a study whose exclusions exceed the allowed share).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{invalid, Result};
use crate::estimate::{full_mle, joint_only_mle, two_step_ifm, MarginMode, Method};
use crate::exec::Execution;
use crate::godambe::{estimate_abm, godambe_report, AbmMethod, GodambeReport, QuadratureSpec};
use crate::model::ModelParams;
use crate::observation::{truncate, TruncatedDataset};
use crate::simulate::{simulate_path, JumpStream, SimulationConfig};
use crate::study::{figure_report, run_study, write_rows_csv, StudyConfig, StudyFile};

#[derive(Debug, Parser)]
#[command(name = "levy-ifm", version, about = "Simulation and estimation for bivariate stable Clayton subordinators")]
pub struct Cli {
    /// Seed of every random stream.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,

    /// Output format; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    pub output: Option<Format>,

    /// Parameters as `c=..,alpha=..,delta=..` (or c1, c2, alpha1, alpha2).
    #[arg(long, global = true)]
    pub params: Option<String>,

    #[arg(long, global = true)]
    pub c: Option<f64>,

    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    #[arg(long, global = true)]
    pub delta: Option<f64>,

    /// Run on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a jump path.
    Simulate(SimulateArgs),
    /// Truncate a simulated path at ε.
    Truncate(TruncateArgs),
    /// Fit a truncated dataset.
    Estimate(EstimateArgs),
    /// Sandwich covariance of the two-step estimator.
    Godambe(GodambeArgs),
    /// Monte Carlo comparison of the estimators.
    Study(StudyArgs),
    /// Histogram data from a saved study.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Intensity of the simulated first-component jumps.
    #[arg(long, default_value_t = 1000.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Also simulate jumps whose first coordinate is below the cutoff.
    #[arg(long)]
    pub symmetrize: bool,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TruncateArgs {
    /// Simulated path (JSON).
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    /// Horizon; defaults to the path's.
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    TwoStep,
    JointOnly,
    Full,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::TwoStep => Method::TwoStep,
            MethodArg::JointOnly => Method::JointOnly,
            MethodArg::Full => Method::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MarginArg {
    Pooled,
    Separate,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum, default_value = "two-step")]
    pub method: MethodArg,
    /// Truncated dataset (JSON).
    #[arg(long, short)]
    pub input: PathBuf,
    /// Margin handling of the two-step method.
    #[arg(long, value_enum, default_value = "pooled")]
    pub margins: MarginArg,
    /// Start the 3-D fits at the global parameters instead of the two-step estimate.
    #[arg(long)]
    pub start_at_params: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AbmArg {
    Quadrature,
    MonteCarlo,
}

#[derive(Debug, Args)]
pub struct GodambeArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "quadrature")]
    pub method: AbmArg,
    /// Monte Carlo pairs.
    #[arg(long, default_value_t = 1_000_000)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// `table1` or `figure1`; explicit flags override it.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodArg>>,
    /// Use the literal one-sided simulation protocol.
    #[arg(long)]
    pub no_symmetrize: bool,
    /// Save the full study (configuration, rows, per-replicate estimates) as JSON.
    #[arg(long)]
    pub save: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Study saved with `study --save`.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Defaults to the smallest ε of the study.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    /// Directory for one TSV per method and parameter.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Parses `argv` and runs the command; returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execution(cli: &Cli) -> Execution {
    if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

/// Resolves `--params` and the individual flags; defaults to c=1, α=0.5, δ=2.
pub fn resolve_params(cli: &Cli) -> Result<ModelParams> {
    let mut c1 = 1.0;
    let mut c2 = 1.0;
    let mut a1 = 0.5;
    let mut a2 = 0.5;
    let mut delta = 2.0;
    let mut theta = None;
    if let Some(spec) = &cli.params {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value in --params, got {part:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("not a number in --params: {part:?}")))?;
            match k.trim() {
                "c" => (c1, c2) = (v, v),
                "alpha" => (a1, a2) = (v, v),
                "delta" => delta = v,
                "theta" => theta = Some(v),
                "c1" => c1 = v,
                "c2" => c2 = v,
                "alpha1" => a1 = v,
                "alpha2" => a2 = v,
                other => return Err(invalid(format!("unknown parameter {other:?} in --params"))),
            }
        }
    }
    if let Some(th) = theta {
        if a1 != a2 {
            return Err(invalid("theta needs a common alpha; give delta instead"));
        }
        delta = th / a1;
    }
    if let Some(c) = cli.c {
        (c1, c2) = (c, c);
    }
    if let Some(a) = cli.alpha {
        (a1, a2) = (a, a);
    }
    if let Some(d) = cli.delta {
        delta = d;
    }
    ModelParams::new(c1, c2, a1, a2, delta)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))
}

/// Writes to `--out` when given, otherwise to stdout.
fn emit(path: Option<&PathBuf>, out: &mut dyn Write, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            f(&mut w)?;
            w.flush()?;
            Ok(())
        }
        None => f(out),
    }
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let exec = execution(cli);
    match &cli.command {
        Command::Simulate(a) => {
            let params = resolve_params(cli)?;
            let cfg = SimulationConfig::new(a.tau, a.t, cli.seed)?.symmetrized(a.symmetrize);
            let path = simulate_path(&params, &cfg)?;
            emit(a.out.as_ref(), out, |w| match cli.output {
                Some(Format::Csv) => path.write_csv(w),
                _ => {
                    path.write_json(&mut *w)?;
                    writeln!(w)?;
                    Ok(())
                }
            })?;
            Ok(0)
        }
        Command::Truncate(a) => {
            let stream = JumpStream::read_json(open(&a.input)?)?;
            let t = a.t.unwrap_or(stream.t);
            let ds = truncate(&stream, a.epsilon, t)?;
            emit(a.out.as_ref(), out, |w| match cli.output {
                Some(Format::Csv) => write_dataset_csv(&ds, w),
                _ => {
                    ds.write_json(&mut *w)?;
                    writeln!(w)?;
                    Ok(())
                }
            })?;
            Ok(0)
        }
        Command::Estimate(a) => {
            let ds = TruncatedDataset::read_json(open(&a.input)?)?;
            let start = if a.start_at_params { Some(resolve_params(cli)?) } else { None };
            let result = match Method::from(a.method) {
                Method::TwoStep => two_step_ifm(
                    &ds,
                    match a.margins {
                        MarginArg::Pooled => MarginMode::Pooled,
                        MarginArg::Separate => MarginMode::Separate,
                    },
                )?,
                Method::JointOnly => joint_only_mle(&ds, start.as_ref())?,
                Method::Full => full_mle(&ds, start.as_ref())?,
            };
            match cli.output {
                Some(Format::Csv) => {
                    writeln!(out, "method,log_c,alpha,theta,delta,converged,score_norm,iterations")?;
                    let eta = result.eta().map(|e| e.map(|v| v.to_string()));
                    let [lc, al, th] = eta.unwrap_or_default();
                    writeln!(
                        out,
                        "{},{lc},{al},{th},{},{},{},{}",
                        result.method,
                        result.delta(),
                        result.diagnostics.converged,
                        result.diagnostics.score_norm,
                        result.diagnostics.iterations
                    )?;
                }
                _ => writeln!(out, "{}", serde_json::to_string_pretty(&result)?)?,
            }
            if !result.diagnostics.converged {
                writeln!(err, "warning: the optimizer did not converge")?;
            }
            Ok(0)
        }
        Command::Godambe(a) => {
            let params = resolve_params(cli)?;
            let method = match a.method {
                AbmArg::Quadrature => AbmMethod::Quadrature(QuadratureSpec::default()),
                AbmArg::MonteCarlo => AbmMethod::MonteCarlo {
                    count: a.count,
                    seed: cli.seed,
                },
            };
            let report = godambe_report(&params, a.epsilon, method, exec)?;
            match cli.output {
                Some(Format::Json) => writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?,
                Some(Format::Csv) => write_godambe_csv(&report, out)?,
                None => write!(out, "{report}")?,
            }
            Ok(0)
        }
        Command::Study(a) => {
            let cfg = study_config(cli, a)?;
            let outcome = run_study(&cfg, exec)?;
            match cli.output {
                Some(Format::Json) => writeln!(out, "{}", serde_json::to_string_pretty(&outcome.rows)?)?,
                _ => write_rows_csv(&outcome.rows, &mut *out)?,
            }
            for e in outcome.exclusions.iter().filter(|e| e.excluded > 0) {
                writeln!(
                    err,
                    "excluded {}/{} replicates for {} at epsilon {:e}",
                    e.excluded, e.total, e.method, e.epsilon
                )?;
            }
            let failed = outcome.failed;
            if let Some(p) = &a.save {
                let file = StudyFile { config: cfg, outcome };
                let mut w = create(p)?;
                serde_json::to_writer(&mut w, &file)?;
                w.flush()?;
            }
            if failed {
                writeln!(err, "error: more than 5% of the replicates were excluded")?;
                return Ok(2);
            }
            Ok(0)
        }
        Command::Report(a) => {
            let file: StudyFile = serde_json::from_reader(open(&a.input)?)?;
            let eps = a
                .epsilon
                .or_else(|| file.config.epsilons.iter().copied().reduce(f64::min))
                .ok_or_else(|| invalid("the study has no epsilon"))?;
            if !file.config.epsilons.contains(&eps) {
                return Err(invalid(format!("epsilon {eps} is not part of the study")));
            }
            let k = estimate_abm(&file.config.params, AbmMethod::Quadrature(QuadratureSpec::default()), exec)?;
            let g = GodambeReport::assemble(
                &file.config.params,
                eps,
                AbmMethod::Quadrature(QuadratureSpec::default()),
                &k,
            )?;
            let hists = figure_report(&file.outcome, &file.config, eps, a.bins, &g.g_inv.rows)?;
            if let Some(dir) = &a.out_dir {
                std::fs::create_dir_all(dir)?;
                for h in &hists {
                    let name = format!("{}_{}.tsv", h.method.label(), h.param);
                    let mut w = create(&dir.join(name))?;
                    h.write_tsv(&mut w)?;
                    w.flush()?;
                }
            }
            match cli.output {
                Some(Format::Json) => writeln!(out, "{}", serde_json::to_string_pretty(&hists)?)?,
                _ => {
                    writeln!(out, "method,param,count,sample_mean,sample_sd,theoretical_sd,overlay,ks_distance")?;
                    for h in &hists {
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{},{}",
                            h.method,
                            h.param,
                            h.count,
                            h.sample_mean,
                            h.sample_sd,
                            h.theoretical_sd.map(|v| v.to_string()).unwrap_or_default(),
                            serde_json::to_value(h.overlay)?.as_str().unwrap_or_default(),
                            h.ks_distance
                        )?;
                    }
                }
            }
            Ok(0)
        }
    }
}

fn study_config(cli: &Cli, a: &StudyArgs) -> Result<StudyConfig> {
    let mut cfg = match &a.preset {
        Some(p) => StudyConfig::preset(p, cli.seed)?,
        None => StudyConfig::table1(cli.seed),
    };
    if cli.params.is_some() || cli.c.is_some() || cli.alpha.is_some() || cli.delta.is_some() {
        cfg.params = resolve_params(cli)?;
    }
    if let Some(v) = a.tau {
        cfg.tau = v;
    }
    if let Some(v) = a.t {
        cfg.t = v;
    }
    if let Some(v) = &a.epsilons {
        cfg.epsilons = v.clone();
    }
    if let Some(v) = a.replicates {
        cfg.replicates = v;
    }
    if let Some(v) = &a.methods {
        cfg.methods = v.iter().map(|&m| m.into()).collect();
    }
    if a.no_symmetrize {
        cfg.symmetrize = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_dataset_csv(ds: &TruncatedDataset, w: &mut dyn Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kind", "x", "y"])?;
    for &(x, y) in &ds.joint {
        out.write_record(["joint", &x.to_string(), &y.to_string()])?;
    }
    for &x in &ds.singles1 {
        out.write_record(["single1", &x.to_string(), ""])?;
    }
    for &y in &ds.singles2 {
        out.write_record(["single2", "", &y.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

fn write_godambe_csv(r: &GodambeReport, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "matrix,row,col,value")?;
    for (name, m) in [
        ("D", &r.d_matrix),
        ("D_inv", &r.d_inv),
        ("M", &r.m_matrix),
        ("G", &r.g),
        ("G_inv", &r.g_inv),
        ("G_inv_scaled", &r.g_inv_scaled),
        ("V", &r.v),
    ] {
        for (i, row) in m.rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                writeln!(out, "{name},{},{},{v}", m.labels[i], m.labels[j])?;
            }
        }
    }
    writeln!(out, "corr_n1_n2,,,{}", r.corr_n1_n2)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("levy-ifm").chain(args.iter().copied());
        let code = run(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_and_usage_errors() {
        assert_eq!(call(&["--help"]).0, 0);
        assert_eq!(call(&["godambe", "--bogus"]).0, 1);
        assert_eq!(call(&[]).0, 1);
    }

    #[test]
    fn params_resolution() {
        let cli = Cli::try_parse_from(["x", "--params", "c=2,alpha=0.4,delta=3", "--delta", "1.5", "godambe"]).unwrap();
        let p = resolve_params(&cli).unwrap();
        assert_eq!((p.c1(), p.alpha1(), p.delta()), (2.0, 0.4, 1.5));
        let cli = Cli::try_parse_from(["x", "--params", "c=oops", "godambe"]).unwrap();
        assert!(resolve_params(&cli).is_err());
        let cli = Cli::try_parse_from(["x", "--alpha", "1.5", "godambe"]).unwrap();
        assert!(resolve_params(&cli).is_err());
    }

    #[test]
    fn godambe_prints_table() {
        let (code, out, _) = call(&["godambe", "--c", "1", "--alpha", "0.5", "--delta", "2"]);
        assert_eq!(code, 0);
        assert!(out.contains("Corr(N1, N2)"));
        assert!(out.contains("V ="));
    }

    #[test]
    fn validation_error_exit_code() {
        let (code, _, err) = call(&["study", "--epsilons", "1e-9", "--replicates", "1"]);
        assert_eq!(code, 1, "{err}");
    }
}
