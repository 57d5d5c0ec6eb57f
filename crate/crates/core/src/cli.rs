//! Command-line front end.
//!
//! Subcommands: `estimate` (fit the structured covariance to a CSV panel),
//! `test-mean` (LM/Wald mean-vector tests), `test-linear` (fixed-q linear
//! restriction test), and `simulate` (Monte Carlo studies from a config
//! file). Exit codes: 0 success, 1 I/O failure, 2 validation failure,
//! 3 numeric failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::estimator::{
    fit, sample_covariance, sample_covariance_known_mean, DataMatrix,
};
use crate::inference::{lm_test, wald_test, linear_restriction_test, LinearRestriction};
use crate::simulation::{run_study_with_workers, StudyConfig};
use crate::tensorlin::FactorShape;

#[derive(Parser)]
#[command(
    name = "kroncov",
    version,
    about = "Kronecker-product covariance estimation, mean-vector tests, and Monte Carlo studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum StatChoice {
    Lm,
    Wald,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the structured covariance estimator to a CSV data file
    Estimate {
        /// CSV file, T rows by n columns, optional header row
        #[arg(long)]
        data: PathBuf,
        /// Factor shape, e.g. "2x5x2"; the product must equal n
        #[arg(long)]
        shape: String,
        /// Fit around a known mean read from this file instead of the
        /// sample mean
        #[arg(long, conflicts_with = "mu0_zero")]
        mu0: Option<PathBuf>,
        /// Fit around a known zero mean
        #[arg(long)]
        mu0_zero: bool,
        /// Write the estimate JSON here (defaults to standard output)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// LM and Wald tests of a hypothesized mean vector
    TestMean {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        shape: String,
        /// File holding the hypothesized mean (one value per line or CSV)
        #[arg(long, conflicts_with = "mu0_zero")]
        mu0: Option<PathBuf>,
        /// Test against a zero mean
        #[arg(long)]
        mu0_zero: bool,
        #[arg(long, value_enum, default_value_t = StatChoice::Both)]
        stat: StatChoice,
        /// One-sided test level
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Wald test of linear restrictions R mu = r
    TestLinear {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        shape: String,
        /// CSV with q rows and n+1 columns: the restriction matrix R with
        /// the right-hand side r appended as the last column
        #[arg(long)]
        restrictions: PathBuf,
    },
    /// Run a Monte Carlo study from a TOML or JSON config file
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Write the report CSV here (defaults to standard output)
        #[arg(long)]
        out_csv: Option<PathBuf>,
        /// Also write the full report as JSON
        #[arg(long)]
        out_json: Option<PathBuf>,
        /// Worker thread count (default: one per CPU); does not affect the
        /// results
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 1,
        Error::InvalidInput(_) | Error::Config(_) => 2,
        Error::Numeric(_) | Error::Resource(_) => 3,
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Estimate {
            data,
            shape,
            mu0,
            mu0_zero,
            out,
        } => cmd_estimate(&data, &shape, mu0.as_deref(), mu0_zero, out.as_deref()),
        Command::TestMean {
            data,
            shape,
            mu0,
            mu0_zero,
            stat,
            alpha,
        } => cmd_test_mean(&data, &shape, mu0.as_deref(), mu0_zero, stat, alpha),
        Command::TestLinear {
            data,
            shape,
            restrictions,
        } => cmd_test_linear(&data, &shape, &restrictions),
        Command::Simulate {
            config,
            out_csv,
            out_json,
            workers,
        } => cmd_simulate(&config, out_csv.as_deref(), out_json.as_deref(), workers),
    }
}

/// Reads a CSV matrix. A first row whose fields do not all parse as numbers
/// is treated as a header. Decimal points only; scientific notation accepted.
fn read_csv_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(e) => {
                if lineno == 0 && rows.is_empty() {
                    continue; // header row
                }
                return Err(Error::InvalidInput(format!(
                    "{}: line {}: {e}",
                    path.display(),
                    lineno + 1
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no numeric rows",
            path.display()
        )));
    }
    Ok(rows)
}

fn read_data(path: &Path) -> Result<DataMatrix> {
    DataMatrix::from_rows(read_csv_matrix(path)?)
}

/// Reads a vector file: one value per line, or comma-separated.
fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        for field in line.split(',') {
            let field = field.trim();
            if field.is_empty() {
                continue;
            }
            out.push(field.parse::<f64>().map_err(|e| {
                Error::InvalidInput(format!("{}: line {}: {e}", path.display(), lineno + 1))
            })?);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no numeric values",
            path.display()
        )));
    }
    Ok(out)
}

fn parse_shape_for(shape: &str, n: usize) -> Result<FactorShape> {
    let shape = FactorShape::parse(shape)?;
    if shape.total() != n {
        return Err(Error::InvalidInput(format!(
            "shape {shape} has product {}, but the data has {n} columns",
            shape.total()
        )));
    }
    Ok(shape)
}

fn resolve_mu0(mu0: Option<&Path>, mu0_zero: bool, n: usize) -> Result<Option<Vec<f64>>> {
    match (mu0, mu0_zero) {
        (Some(path), _) => {
            let v = read_vector(path)?;
            if v.len() != n {
                return Err(Error::InvalidInput(format!(
                    "mu0 has {} entries, data has {n} columns",
                    v.len()
                )));
            }
            Ok(Some(v))
        }
        (None, true) => Ok(Some(vec![0.0; n])),
        (None, false) => Ok(None),
    }
}

fn cmd_estimate(
    data_path: &Path,
    shape_spec: &str,
    mu0: Option<&Path>,
    mu0_zero: bool,
    out: Option<&Path>,
) -> Result<()> {
    let data = read_data(data_path)?;
    let shape = parse_shape_for(shape_spec, data.dim())?;
    let m = match resolve_mu0(mu0, mu0_zero, data.dim())? {
        Some(mu) => sample_covariance_known_mean(&data, &mu)?,
        None => sample_covariance(&data)?,
    };
    let est = fit(&m, &shape)?;
    println!("sigma2 = {}", est.sigma2());
    let traces: Vec<String> = est
        .factors()
        .iter()
        .map(|f| format!("{}", f.trace()))
        .collect();
    println!("factor traces = [{}]", traces.join(", "));
    let json = serde_json::to_string_pretty(&est).map_err(|e| Error::Numeric(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_test_mean(
    data_path: &Path,
    shape_spec: &str,
    mu0: Option<&Path>,
    mu0_zero: bool,
    stat: StatChoice,
    alpha: f64,
) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let data = read_data(data_path)?;
    let shape = parse_shape_for(shape_spec, data.dim())?;
    let mu0 = resolve_mu0(mu0, mu0_zero, data.dim())?.ok_or_else(|| {
        Error::InvalidInput("test-mean requires --mu0 <file> or --mu0-zero".into())
    })?;

    let mut out = serde_json::Map::new();
    if stat != StatChoice::Wald {
        let res = lm_test(&data, &mu0, &shape)?.with_level(alpha);
        out.insert(
            "lm".into(),
            serde_json::to_value(res).map_err(|e| Error::Numeric(e.to_string()))?,
        );
    }
    if stat != StatChoice::Lm {
        let res = wald_test(&data, &mu0, &shape)?.with_level(alpha);
        out.insert(
            "wald".into(),
            serde_json::to_value(res).map_err(|e| Error::Numeric(e.to_string()))?,
        );
    }
    let json = serde_json::to_string_pretty(&serde_json::Value::Object(out))
        .map_err(|e| Error::Numeric(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn cmd_test_linear(data_path: &Path, shape_spec: &str, restrictions: &Path) -> Result<()> {
    let data = read_data(data_path)?;
    let shape = parse_shape_for(shape_spec, data.dim())?;
    let n = data.dim();

    let rows = read_csv_matrix(restrictions)?;
    let q = rows.len();
    let mut r = ndarray::Array2::<f64>::zeros((q, n));
    let mut rhs = Vec::with_capacity(q);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n + 1 {
            return Err(Error::InvalidInput(format!(
                "{}: row {} has {} fields, expected n+1 = {}",
                restrictions.display(),
                i + 1,
                row.len(),
                n + 1
            )));
        }
        for j in 0..n {
            r[[i, j]] = row[j];
        }
        rhs.push(row[n]);
    }
    let restr = LinearRestriction::new(r, rhs)?;
    let res = linear_restriction_test(&data, &restr, &shape)?;
    let json = serde_json::to_string_pretty(&res).map_err(|e| Error::Numeric(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn cmd_simulate(
    config_path: &Path,
    out_csv: Option<&Path>,
    out_json: Option<&Path>,
    workers: Option<usize>,
) -> Result<()> {
    let config = StudyConfig::load(config_path)?;
    let report = run_study_with_workers(&config, workers)?;
    let csv = report.to_csv();
    match out_csv {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = out_json {
        std::fs::write(path, report.to_json()?)?;
    }
    Ok(())
}
