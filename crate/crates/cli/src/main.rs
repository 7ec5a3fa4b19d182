//! `mlta` command-line front end.
//!
//! Exit codes: 0 on success, 1 on data or validation errors (including bad
//! arguments), 2 when every random start of a fit failed.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mlta::data::AbCoding;
use mlta::diagnostics::{write_matrix_csv, DEFAULT_SSPR_THRESHOLDS};
use mlta::inference::Criterion;
use mlta::*;

#[derive(Parser)]
#[command(name = "mlta", version, about = "Mixtures of latent trait analyzers for binary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a table of yes/no/undecided labels into two binary variables per column.
    Encode(EncodeArgs),
    /// Fit one model from several random starts and write its report.
    Fit(FitArgs),
    /// Fit a grid of models and tabulate the selection criteria.
    Select(SelectArgs),
    /// Goodness of fit and interpretation summaries for a saved report.
    Diagnose(DiagnoseArgs),
    /// Draw data from a parameter file.
    Simulate(SimulateArgs),
    /// Delete-one jackknife standard errors for a saved report.
    Jackknife(JackknifeArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Binary response file.
    #[arg(long)]
    input: PathBuf,
    /// Input is comma-separated 0/1 rows (the default).
    #[arg(long, conflicts_with = "pattern")]
    dense: bool,
    /// Input is `pattern,count` lines.
    #[arg(long)]
    pattern: bool,
}

impl InputArgs {
    fn load(&self) -> Result<BinaryDataMatrix> {
        let format = if self.pattern {
            DataFormat::PatternCsv
        } else {
            DataFormat::DenseCsv
        };
        load_matrix(BufReader::new(File::open(&self.input)?), format)
    }
}

#[derive(Args)]
struct ControlArgs {
    /// Aitken tolerance.
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    /// Random starts per model.
    #[arg(long, default_value_t = 10)]
    starts: usize,
    /// Seed of the first start; later starts add their index.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gauss–Hermite points per dimension for the final log-likelihood.
    #[arg(long, default_value_t = 5)]
    quadrature: usize,
    /// Variational sweeps per outer iteration.
    #[arg(long, default_value_t = 1)]
    inner_sweeps: usize,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
}

impl ControlArgs {
    fn control(&self) -> FitControl {
        FitControl {
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            n_starts: self.starts,
            final_quadrature_q: self.quadrature,
            inner_sweeps: self.inner_sweeps,
        }
    }
}

#[derive(Args)]
struct EncodeArgs {
    /// CSV with a header row of column names.
    #[arg(long)]
    input: PathBuf,
    /// Columns to leave out, such as class labels.
    #[arg(long, value_delimiter = ',')]
    drop: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "y")]
    yes: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "n")]
    no: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "?")]
    undecided: Vec<String>,
    /// Write `pattern,count` lines instead of dense rows.
    #[arg(long)]
    pattern: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long = "G")]
    groups: usize,
    #[arg(long = "D")]
    dim: usize,
    /// Share the slopes across groups.
    #[arg(long)]
    common_slopes: bool,
    #[command(flatten)]
    control: ControlArgs,
    /// Attach chi-square, SSPR, median probabilities, standardized slopes and lifts.
    #[arg(long)]
    diagnostics: bool,
    /// Report path (JSON); standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Group counts: `3`, `1,2,4` or the inclusive range `1..5`.
    #[arg(long = "G", value_parser = parse_counts)]
    groups: Counts,
    /// Trait dimensions, in the same forms as `--G`.
    #[arg(long = "D", value_parser = parse_counts)]
    dims: Counts,
    #[arg(long, value_delimiter = ',', default_value = "free,common", value_parser = parse_mode)]
    modes: Vec<SlopeMode>,
    #[command(flatten)]
    control: ControlArgs,
    /// Long-format grid CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full grid result as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Wide BIC and BIC* tables (rows G, columns D and mode) written as
    /// `<prefix>_bic.csv` and `<prefix>_bic_star.csv`.
    #[arg(long)]
    tables: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Fit report or parameter file (JSON).
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 5)]
    quadrature: usize,
    /// SSPR truncation levels.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SSPR_THRESHOLDS.to_vec())]
    thresholds: Vec<u64>,
    /// Directory for one lift CSV per group.
    #[arg(long)]
    lift_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Fit report or parameter file (JSON).
    #[arg(long)]
    params: PathBuf,
    /// Replaces the mixing proportions of the parameter file.
    #[arg(long, value_delimiter = ',')]
    eta: Option<Vec<f64>>,
    #[arg(long = "N")]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Write `pattern,count` lines instead of dense rows.
    #[arg(long)]
    pattern: bool,
    /// CSV of the true group of every row, numbered from 0.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct JackknifeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Fit report or parameter file (JSON) for the full data.
    #[arg(long)]
    report: PathBuf,
    /// Iteration cap of each delete-one refit.
    #[arg(long, default_value_t = 20)]
    max_iter: usize,
    /// Refit every `stride`-th row only.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Counts(Vec<usize>);

fn parse_counts(s: &str) -> std::result::Result<Counts, String> {
    let bad = || format!("expected a count, a list like 1,2,4 or a range like 1..5, got {s:?}");
    let number = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let values = if let Some((lo, hi)) = s.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let (lo, hi) = (number(lo)?, number(hi)?);
        if lo > hi {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        s.split(',').map(number).collect::<std::result::Result<Vec<_>, _>>()?
    };
    Ok(Counts(values))
}

fn parse_mode(s: &str) -> std::result::Result<SlopeMode, String> {
    match s.trim() {
        "free" => Ok(SlopeMode::Free),
        "common" => Ok(SlopeMode::Common),
        other => Err(format!("unknown slope mode {other:?}; use free or common")),
    }
}

fn writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_json<T: serde::Serialize>(path: &Option<PathBuf>, value: &T) -> Result<()> {
    let mut out = writer(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn read_parameters(path: &Path) -> Result<MltaParameters> {
    let json: ParametersJson = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    json.to_parameters()
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(MltaError::Argument("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| MltaError::Argument(e.to_string()))?;
    }
    Ok(())
}

fn as_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

fn encode(args: &EncodeArgs) -> Result<()> {
    let table = CategoricalTable::from_csv(BufReader::new(File::open(&args.input)?))?;
    let drop: Vec<&str> = args.drop.iter().map(String::as_str).collect();
    let table = table.without_columns(&drop)?;
    let scheme = AbCoding::new(&as_refs(&args.yes), &as_refs(&args.no), &as_refs(&args.undecided));
    let data = encode_categorical(&table, &scheme)?;
    let format = if args.pattern {
        DataFormat::PatternCsv
    } else {
        DataFormat::DenseCsv
    };
    let mut out = writer(&args.out)?;
    data.write(&mut out, format)?;
    out.flush()?;
    eprintln!("encoded {} rows into {} binary variables", data.n_rows(), data.n_vars());
    Ok(())
}

fn fit(args: &FitArgs) -> Result<()> {
    set_threads(args.control.threads)?;
    let data = args.input.load()?;
    let mode = if args.common_slopes {
        SlopeMode::Common
    } else {
        SlopeMode::Free
    };
    let spec = ModelSpec::new(args.groups, args.dim, mode);
    let result = multi_start_fit(&data, &spec, &args.control.control())?;
    let mut report = result.best.report;
    if args.diagnostics {
        let diag = FitDiagnostics::compute(
            &data,
            &result.best.params,
            args.control.quadrature,
            &DEFAULT_SSPR_THRESHOLDS,
        )?;
        report.diagnostics = Some(diag);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{spec}: loglik {:.2}, BIC {:.2}, BIC* {:.2} (best of {} starts)",
        report.loglik_gh, report.bic, report.bic_star, args.control.starts
    );
    write_json(&args.out, &report)
}

fn select(args: &SelectArgs) -> Result<()> {
    set_threads(args.control.threads)?;
    let data = args.input.load()?;
    let grid = grid_search(
        &data,
        &args.groups.0,
        &args.dims.0,
        &args.modes,
        &args.control.control(),
    )?;
    let mut out = writer(&args.out)?;
    grid.write_csv(&mut out)?;
    out.flush()?;
    if let Some(path) = &args.json {
        write_json(&Some(path.clone()), &grid)?;
    }
    if let Some(prefix) = &args.tables {
        for (suffix, criterion) in [("bic", Criterion::Bic), ("bic_star", Criterion::BicStar)] {
            let path = PathBuf::from(format!("{}_{suffix}.csv", prefix.display()));
            grid.write_table_csv(BufWriter::new(File::create(path)?), criterion)?;
        }
    }
    for row in grid.rows.iter().filter(|r| r.loglik.is_none()) {
        eprintln!("warning: {} failed: {}", row.spec, row.warnings.join("; "));
    }
    match (grid.best_by_bic, grid.best_by_bic_star) {
        (Some(a), Some(b)) => eprintln!("best by BIC: {a}; best by BIC*: {b}"),
        _ => eprintln!("warning: no converged model in the grid"),
    }
    Ok(())
}

fn diagnose(args: &DiagnoseArgs) -> Result<()> {
    let data = args.input.load()?;
    let params = read_parameters(&args.report)?;
    let diag = FitDiagnostics::compute(&data, &params, args.quadrature, &args.thresholds)?;
    if let Some(dir) = &args.lift_dir {
        std::fs::create_dir_all(dir)?;
        let names = data.names_or_default();
        for (g, lift) in diag.lift.iter().enumerate() {
            let file = File::create(dir.join(format!("lift_group{}.csv", g + 1)))?;
            write_matrix_csv(BufWriter::new(file), &names, lift)?;
        }
    }
    write_json(&args.out, &diag)
}

fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let mut params = read_parameters(&args.params)?;
    if let Some(eta) = &args.eta {
        if eta.len() != params.n_groups() {
            return Err(MltaError::Argument(format!(
                "--eta has {} entries but the parameters have {} groups",
                eta.len(),
                params.n_groups()
            )));
        }
        params.eta = eta.clone();
        params.validate()?;
    }
    let sim = simulate(&params, args.n, args.seed)?;
    let format = if args.pattern {
        DataFormat::PatternCsv
    } else {
        DataFormat::DenseCsv
    };
    let mut out = writer(&args.out)?;
    sim.data.write(&mut out, format)?;
    out.flush()?;
    if let Some(path) = &args.truth {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "group")?;
        for g in &sim.z {
            writeln!(w, "{g}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn jackknife(args: &JackknifeArgs) -> Result<()> {
    set_threads(args.threads)?;
    let data = args.input.load()?;
    let params = read_parameters(&args.report)?;
    let ctrl = FitControl {
        tol: args.tol,
        seed: args.seed,
        ..FitControl::default()
    };
    let options = JackknifeOptions {
        max_iter: args.max_iter,
        stride: args.stride,
    };
    let report = jackknife_se(&data, &params, &ctrl, &options)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&args.out, &report)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Encode(a) => encode(a),
        Command::Fit(a) => fit(a),
        Command::Select(a) => select(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Jackknife(a) => jackknife(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                MltaError::AllStartsFailed { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
