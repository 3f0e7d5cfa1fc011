//! The `reversal` command line.
//!
//! [`run`] parses arguments and executes a command in-process, returning
//! what would be written to stdout/stderr and the exit code: 0 on success,
//! 2 for input or validation errors, 3 when the data are degenerate.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use reversal_core::analysis::{analyze_regression, analyze_table, Conditioning, TableInput};
use reversal_core::misspec::BatteryConfig;
use reversal_core::parameterization::{
    check_reversal_conditions, derive_full_params, derive_simple_params, JointMoments,
};
use reversal_core::regression::{Dataset, OrderingKind, OrderingVariable};
use reversal_core::simulate::{
    example3_generator, generate, mc_error_rate, DgpKind, DgpSpec, McTest, MonteCarloResult,
};
use reversal_core::stats::Series;
use reversal_core::verdict::{format_num, format_p, render, Format, Report};
use reversal_core::Error;

#[derive(Debug, Parser)]
#[command(name = "reversal", version, about = "Detect and classify association reversals")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Significance level of every test.
    #[arg(long, global = true, default_value_t = 0.05)]
    pub alpha: f64,
    /// Degree of the trend polynomial used for detrending.
    #[arg(long, global = true, default_value_t = 3)]
    pub trend_degree: usize,
    /// Number of lags used for dememorizing and the independence test.
    #[arg(long, global = true, default_value_t = 2)]
    pub lags: usize,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub output: OutputFormat,
    /// Seed for all random draws; a fresh one is generated and reported if absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Add a generation timestamp to text output.
    #[arg(long, global = true)]
    pub timestamp: bool,
    /// Worker threads for Monte Carlo commands.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Marginal vs conditional regression association from a CSV file.
    AnalyzeRegression(RegressionArgs),
    /// Aggregate vs stratified association from 2×2 tables in JSON.
    AnalyzeTable {
        #[arg(long)]
        json: PathBuf,
    },
    /// Generate data or estimate error rates by simulation.
    #[command(subcommand)]
    Simulate(SimCommand),
    /// Evaluate the sign-reversal conditions for a correlation triple.
    ReverseConditions {
        #[arg(allow_negative_numbers = true)]
        rho12: f64,
        #[arg(allow_negative_numbers = true)]
        rho13: f64,
        #[arg(allow_negative_numbers = true)]
        rho23: f64,
    },
}

#[derive(Debug, Args)]
pub struct RegressionArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub response: String,
    /// Comma-separated; the first is the regressor of interest, the rest
    /// are conditioned on.
    #[arg(long, value_delimiter = ',', required = true)]
    pub regressors: Vec<String>,
    /// Ordering column as `name[:time|binary|categorical|numeric]`.
    #[arg(long)]
    pub ordering: Vec<String>,
    /// Condition on the declared group ordering with separate fits.
    #[arg(long)]
    pub by_group: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OutArg {
    /// CSV destination; written to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// IID Bernoulli draws.
    Bernoulli {
        #[arg(long)]
        theta: f64,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Two groups whose pooled slope reverses the within-group slopes.
    Example3 {
        /// Observations per group.
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Two independent trending, autocorrelated series.
    Trending {
        #[arg(long, default_value_t = 46)]
        n: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Jointly Normal `y, x1, x2` with unit variances.
    Niid {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
        r12: f64,
        #[arg(long, default_value_t = 0.7, allow_negative_numbers = true)]
        r13: f64,
        #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
        r23: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Actual rejection rate of a nominal-size test under a true null.
    McSize {
        #[arg(long, value_enum, default_value_t = McDgp::Trending)]
        dgp: McDgp,
        #[arg(long, value_enum, default_value_t = McTestKind::Naive)]
        test: McTestKind,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 46)]
        n: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum McDgp {
    Trending,
    Niid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum McTestKind {
    /// Correlation t-test on the raw series.
    Naive,
    /// Correlation t-test after detrending and dememorizing.
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
    pub exit: i32,
}

fn exit_code(e: &Error) -> i32 {
    if e.is_degenerate() {
        3
    } else {
        2
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Output
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    // clap only treats `-0.8`, not `-.8`, as a negative number.
    let args = args.into_iter().map(|a| {
        let a: std::ffi::OsString = a.into();
        match a.to_str() {
            Some(s) if s.starts_with("-.") && s[2..].starts_with(|c: char| c.is_ascii_digit()) => {
                format!("-0.{}", &s[2..]).into()
            }
            _ => a,
        }
    });
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let exit = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            return if exit == 0 {
                Output { stdout: text, stderr: String::new(), exit }
            } else {
                Output { stdout: String::new(), stderr: text, exit }
            };
        }
    };
    let pool = match cli.global.threads {
        Some(0) => return Output { stderr: "error: --threads must be positive\n".into(), exit: 2, ..Default::default() },
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => return Output { stderr: format!("error: {e}\n"), exit: 2, ..Default::default() },
    };
    let mut out = Output::default();
    match pool.install(|| execute(&cli, &mut out)) {
        Ok(()) => out,
        Err(e) => {
            out.stderr.push_str(&format!("error: {e}\n"));
            out.exit = exit_code(&e);
            out
        }
    }
}

fn battery_config(g: &GlobalOpts) -> reversal_core::Result<BatteryConfig> {
    let cfg = BatteryConfig {
        alpha: g.alpha,
        trend_degree: g.trend_degree,
        lag_count: g.lags,
        orderings_to_test: Vec::new(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn emit(g: &GlobalOpts, report: &Report, out: &mut Output) {
    match g.output {
        OutputFormat::Json => out.stdout.push_str(&render(report, Format::Json)),
        OutputFormat::Text => {
            if g.timestamp {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
                out.stdout.push_str(&format!("Generated at unix time {secs}\n"));
            }
            out.stdout.push_str(&render(report, Format::Text));
        }
    }
}

fn execute(cli: &Cli, out: &mut Output) -> reversal_core::Result<()> {
    let g = &cli.global;
    let cfg = battery_config(g)?;
    match &cli.command {
        Command::AnalyzeRegression(args) => {
            let report = cmd_analyze_regression(args, cfg)?;
            emit(g, &report, out);
        }
        Command::AnalyzeTable { json } => {
            let report = cmd_analyze_table(json, g.alpha)?;
            emit(g, &report, out);
        }
        Command::Simulate(sim) => {
            let seed = match g.seed {
                Some(s) => s,
                None => {
                    let s = fresh_seed();
                    out.stderr.push_str(&format!("seed: {s}\n"));
                    s
                }
            };
            cmd_simulate(sim, seed, &cfg, g, out)?;
        }
        Command::ReverseConditions { rho12, rho13, rho23 } => {
            let report = cmd_reverse_conditions(*rho12, *rho13, *rho23)?;
            emit(g, &report, out);
        }
    }
    Ok(())
}

fn fresh_seed() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    (nanos as u64) ^ ((nanos >> 64) as u64) ^ (std::process::id() as u64).rotate_left(32)
}

fn read_to_string(path: &Path) -> reversal_core::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))
}

/// Reads a comma-separated file with a header row; every cell must be a
/// number.
pub fn read_csv(path: &Path) -> reversal_core::Result<Vec<(String, Vec<f64>)>> {
    let text = read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> reversal_core::Result<Vec<(String, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::InvalidDataset(format!("CSV header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut columns: Vec<(String, Vec<f64>)> = headers.into_iter().map(|h| (h, Vec::new())).collect();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::InvalidDataset(format!("CSV row {}: {e}", i + 2)))?;
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::InvalidDataset(format!("blank cell in row {}, column `{}`", i + 2, columns[j].0)));
            }
            let v: f64 = cell.parse().map_err(|_| {
                Error::InvalidDataset(format!("row {}, column `{}`: `{cell}` is not a number", i + 2, columns[j].0))
            })?;
            columns[j].1.push(v);
        }
    }
    Ok(columns)
}

fn parse_ordering(decl: &str, columns: &[(String, Vec<f64>)]) -> reversal_core::Result<OrderingVariable> {
    let (name, kind) = match decl.split_once(':') {
        Some((n, k)) => (n, Some(k.parse::<OrderingKind>()?)),
        None => (decl, None),
    };
    let values = columns
        .iter()
        .find(|(h, _)| h == name)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
    let kind = kind.unwrap_or_else(|| {
        if values.iter().all(|&v| v == 0.0 || v == 1.0) {
            OrderingKind::BinaryGroup
        } else if values.windows(2).all(|w| w[1] > w[0]) {
            OrderingKind::Time
        } else {
            OrderingKind::Categorical
        }
    });
    OrderingVariable::new(name, kind, values)
}

pub fn cmd_analyze_regression(args: &RegressionArgs, mut cfg: BatteryConfig) -> reversal_core::Result<Report> {
    let columns = read_csv(&args.csv)?;
    let orderings = args.ordering.iter().map(|d| parse_ordering(d, &columns)).collect::<Result<Vec<_>, _>>()?;
    cfg.orderings_to_test = orderings
        .iter()
        .filter(|o| matches!(o.kind(), OrderingKind::BinaryGroup | OrderingKind::Categorical))
        .map(|o| o.name().to_string())
        .collect();
    let series = columns.into_iter().map(|(h, v)| Series::new(h, v)).collect::<Result<Vec<_>, _>>()?;
    let data = Dataset::new(series, orderings)?;

    let (x, rest) = args.regressors.split_first().ok_or_else(|| Error::InvalidSpec("no regressors".into()))?;
    let conditioning = if !rest.is_empty() {
        if args.by_group {
            return Err(Error::InvalidSpec("--by-group takes a single regressor".into()));
        }
        Conditioning::Regressors(rest.to_vec())
    } else if args.by_group {
        let group = cfg
            .orderings_to_test
            .first()
            .ok_or_else(|| Error::InvalidSpec("--by-group needs a binary or categorical --ordering".into()))?;
        Conditioning::ByGroup(group.clone())
    } else if data.time_ordering().is_some() {
        Conditioning::TimeCorrected
    } else {
        return Err(Error::InvalidSpec(
            "nothing to condition on: give a second regressor, --by-group, or a time ordering".into(),
        ));
    };
    Ok(analyze_regression(&data, &args.response, x, &conditioning, &cfg)?.report())
}

pub fn cmd_analyze_table(path: &Path, alpha: f64) -> reversal_core::Result<Report> {
    let tables = TableInput::from_json(&read_to_string(path)?)?.into_tables()?;
    Ok(analyze_table(&tables, alpha)?.report())
}

fn dataset_csv(data: &Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = data.columns().iter().map(|c| c.label()).collect();
    header.extend(data.orderings().iter().map(|o| o.name()));
    w.write_record(&header).expect("in-memory write");
    for r in 0..data.n() {
        let row: Vec<String> = data
            .columns()
            .iter()
            .map(|c| c.values()[r])
            .chain(data.orderings().iter().map(|o| o.values()[r]))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

fn write_dataset(
    data: &Dataset,
    target: &OutArg,
    mut report: Report,
    g: &GlobalOpts,
    out: &mut Output,
) -> reversal_core::Result<()> {
    let csv = dataset_csv(data);
    match &target.out {
        Some(path) => {
            std::fs::write(path, csv).map_err(|e| Error::InvalidDataset(format!("{}: {e}", path.display())))?;
            report.narrative.push(format!("Wrote {} rows to {}.", data.n(), path.display()));
            emit(g, &report, out);
        }
        None => {
            out.stdout.push_str(&csv);
            out.stderr.push_str(&render(&report, Format::Text));
        }
    }
    Ok(())
}

fn column_means(data: &Dataset) -> Vec<String> {
    data.columns()
        .iter()
        .map(|c| format!("mean of {} = {}", c.label(), format_num(reversal_core::stats::mean(c.values()), 3)))
        .collect()
}

fn cmd_simulate(
    sim: &SimCommand,
    seed: u64,
    cfg: &BatteryConfig,
    g: &GlobalOpts,
    out: &mut Output,
) -> reversal_core::Result<()> {
    match sim {
        SimCommand::Bernoulli { theta, n, out: target } => {
            let spec = DgpSpec { kind: DgpKind::BernoulliIid { theta: *theta, n: *n }, seed };
            let data = generate(&spec)?;
            let mut narrative = vec![format!("Bernoulli IID draws, theta = {theta}, n = {n}, seed = {seed}.")];
            narrative.extend(column_means(&data));
            let report = Report::empty(narrative, json!({ "dgp": spec }));
            write_dataset(&data, target, report, g, out)
        }
        SimCommand::Example3 { n, out: target } => {
            let e = example3_generator(*n, seed)?;
            let narrative = vec![
                format!("Two-group design with {n} observations per group, seed = {seed}."),
                format!("Pattern found on draw {} (negative pooled slope, positive group slopes).", e.attempts),
            ];
            let report = Report::empty(
                narrative,
                json!({ "dgp": DgpSpec { kind: DgpKind::example3(*n), seed }, "attempts": e.attempts }),
            );
            write_dataset(&e.data, target, report, g, out)
        }
        SimCommand::Trending { n, out: target } => {
            let spec = DgpSpec { kind: DgpKind::trending_default(*n), seed };
            let data = generate(&spec)?;
            let narrative = vec![format!("Independent trending AR(1) series, n = {n}, seed = {seed}.")];
            write_dataset(&data, target, Report::empty(narrative, json!({ "dgp": spec })), g, out)
        }
        SimCommand::Niid { n, r12, r13, r23, out: target } => {
            let joint = JointMoments::from_correlations(*r12, *r13, *r23)?;
            let spec = DgpSpec { kind: DgpKind::NiidRegression { joint, n: *n }, seed };
            let data = generate(&spec)?;
            let narrative = vec![format!(
                "Jointly Normal y, x1, x2 with correlations {}, {}, {}; n = {n}, seed = {seed}.",
                format_num(*r12, 3),
                format_num(*r13, 3),
                format_num(*r23, 3)
            )];
            write_dataset(&data, target, Report::empty(narrative, json!({ "dgp": spec })), g, out)
        }
        SimCommand::McSize { dgp, test, reps, n } => {
            let (kind, x, y) = match dgp {
                McDgp::Trending => (DgpKind::trending_default(*n), "x", "y"),
                McDgp::Niid => (DgpKind::niid_null(*n), "x1", "y"),
            };
            let spec = DgpSpec { kind, seed };
            let mc_test = match test {
                McTestKind::Naive => McTest::NaiveCorrelation { x: x.into(), y: y.into() },
                McTestKind::Corrected => McTest::CorrectedCorrelation { x: x.into(), y: y.into(), cfg: cfg.clone() },
            };
            let r: MonteCarloResult = mc_error_rate(&spec, &mc_test, cfg.alpha, *reps)?;
            let narrative = vec![format!(
                "Actual rejection rate {} (MC se {}) of a nominal {} test over {} replications, seed = {seed}.",
                format_num(r.rejection_rate, 2),
                format_num(r.mc_se, 4),
                format_p(r.nominal_alpha),
                r.replications
            )];
            let report = Report::empty(narrative, json!({ "dgp": spec, "test": mc_test, "result": r }));
            emit(g, &report, out);
            Ok(())
        }
    }
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn cmd_reverse_conditions(rho12: f64, rho13: f64, rho23: f64) -> reversal_core::Result<Report> {
    let c = check_reversal_conditions(rho12, rho13, rho23)?;
    let mut narrative = vec![
        format!(
            "Correlations rho12 = {}, rho13 = {}, rho23 = {}.",
            format_num(rho12, 3),
            format_num(rho13, 3),
            format_num(rho23, 3)
        ),
        format!("  (i) rho13*rho23 has the sign of rho12: {}", yes(c.same_sign)),
        format!("  (ii) rho13*rho23 exceeds rho12 in that direction: {}", yes(c.product_exceeds)),
        format!("  (iii) correlation determinant {} > 0: {}", format_num(c.corr_det, 3), yes(c.det_positive)),
        format!("Reversal predicted: {}", yes(c.reversal_predicted)),
    ];
    let params = match JointMoments::from_correlations(rho12, rho13, rho23) {
        Ok(m) => {
            let full = derive_full_params(&m)?;
            let simple = derive_simple_params(&m)?;
            narrative.push(format!(
                "Unit variances: beta1 = {}, beta2 = {}, sigma_u^2 = {}; alpha1 = {}, sigma_eps^2 = {}.",
                format_num(full.beta1, 3),
                format_num(full.beta2, 3),
                format_num(full.sigma_u2, 3),
                format_num(simple.alpha1, 3),
                format_num(simple.sigma_eps2, 3)
            ));
            json!({ "full": full, "simple": simple })
        }
        Err(e) => {
            narrative.push(format!("No joint distribution has these correlations: {e}."));
            serde_json::Value::Null
        }
    };
    Ok(Report::empty(narrative, json!({ "conditions": c, "params": params })))
}
