use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;
use ssfinsler::construct::ConstructConfig;
use ssfinsler::oracle::FdConfig;
use ssfinsler::report::{self, timed, Report, Tolerances};
use ssfinsler::{Error, MetricSpec};

const EXIT_USAGE: u8 = 1;
const EXIT_DOMAIN: u8 = 2;
const EXIT_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "ssfinsler", version, about = "Spherically symmetric Finsler metrics: evaluation, curvature verdicts and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// F, g, g⁻¹, P, Q and the spray at one point
    Eval {
        #[command(flatten)]
        spec: SpecArg,
        /// Base point, comma separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x: Vec<f64>,
        /// Direction, comma separated
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        y: Vec<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Berwald, Landsberg, constant flag curvature and Einstein verdicts over seeded frames
    Classify {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Threshold for all curvature verdicts
        #[arg(long)]
        tol: Option<f64>,
        #[command(flatten)]
        out: Output,
    },
    /// Flag curvature of the catalog examples, every branch
    VerifyExamples {
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long, default_value_t = 1e-7)]
        tol: f64,
        #[command(flatten)]
        out: Output,
    },
    /// Run the construction pipeline from a JSON config
    Construct {
        /// Config file or inline JSON
        #[arg(long, visible_alias = "spec")]
        config: String,
        #[command(flatten)]
        out: Output,
    },
    /// Compare closed-form spray and curvature with finite differences
    OracleCompare {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Base finite-difference step
        #[arg(long)]
        h: Option<f64>,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Args)]
struct SpecArg {
    /// Spec file, inline JSON, or a catalog id with optional branch (`example_6_2:-`)
    #[arg(long)]
    spec: String,
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of frames; defaults to 50 for verify-examples, 10 for oracle-compare, 20 otherwise
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 3)]
    dim: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct Output {
    /// Write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format for standard output
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn read_json(arg: &str) -> Result<Value, Error> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(arg).map_err(|e| Error::Spec(format!("cannot read `{arg}`: {e}")))?
    };
    Ok(serde_json::from_str(&text)?)
}

fn parse_spec(arg: &str) -> Result<MetricSpec, Error> {
    let looks_like_id = !arg.is_empty()
        && !std::path::Path::new(arg).exists()
        && arg.chars().all(|c| c.is_ascii_alphanumeric() || "_:+-".contains(c));
    if looks_like_id {
        let (id, branch) = match arg.split_once(':') {
            Some((id, b)) => (id, Some(b)),
            None => (arg, None),
        };
        let mut v = serde_json::json!({"kind": "catalog", "id": id});
        if let Some(b) = branch {
            v["branch"] = Value::String(b.to_string());
        }
        return MetricSpec::from_json(&v);
    }
    MetricSpec::from_json(&read_json(arg)?)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Domain { .. }
        | Error::Quadrature { .. }
        | Error::ZeroVector
        | Error::Boundary { .. }
        | Error::Inconsistent { .. }
        | Error::Degenerate(_) => EXIT_DOMAIN,
        Error::Construct { .. } => EXIT_FAILED,
        _ => EXIT_USAGE,
    }
}

fn emit(rep: &Report, out: &Output) -> Result<(), Error> {
    if let Some(path) = &out.out {
        std::fs::write(path, rep.to_json() + "\n")
            .map_err(|e| Error::Spec(format!("cannot write `{}`: {e}", path.display())))?;
    }
    let text = match out.format {
        Format::Json => rep.to_json() + "\n",
        Format::Text => rep.to_text(),
    };
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Spec(format!("cannot write to stdout: {e}"))),
        _ => Ok(()),
    }
}

fn run(cmd: Command) -> Result<(Report, Output), Error> {
    Ok(match cmd {
        Command::Eval { spec, x, y, out } => {
            let spec = parse_spec(&spec.spec)?;
            (timed(|| report::eval(&spec, &x, &y))?, out)
        }
        Command::Classify { spec, sampling, tol, out } => {
            let spec = parse_spec(&spec.spec)?;
            let tol = tol.map(Tolerances::uniform).unwrap_or_default();
            let count = sampling.count.unwrap_or(20);
            (
                timed(|| report::classify(&spec, sampling.dim, count, sampling.seed, tol))?,
                out,
            )
        }
        Command::VerifyExamples { sampling, tol, out } => {
            let count = sampling.count.unwrap_or(50);
            (
                timed(|| report::verify_examples(sampling.dim, count, sampling.seed, tol))?,
                out,
            )
        }
        Command::Construct { config, out } => {
            let cfg = ConstructConfig::from_json(&read_json(&config)?)?;
            (timed(|| report::construct(&cfg))?, out)
        }
        Command::OracleCompare { spec, sampling, h, out } => {
            let spec = parse_spec(&spec.spec)?;
            let mut fd = FdConfig::default();
            if let Some(h) = h {
                fd.h = h;
            }
            let count = sampling.count.unwrap_or(10);
            (
                timed(|| report::oracle_compare(&spec, sampling.dim, count, sampling.seed, &fd, Tolerances::default()))?,
                out,
            )
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command).and_then(|(rep, out)| emit(&rep, &out).map(|_| rep)) {
        Ok(rep) if rep.passed => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
