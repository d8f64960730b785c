//! Command-line front end: reads a matrix, runs the portrait or Jordan
//! analysis, and writes JSON results, an optional SVG and a run manifest.

pub mod matrix_io;
pub mod report;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eigsal::geometry::Rect;
use eigsal::jordan::{analyze_jordan, JordanConfig, JordanError, Policy};
use eigsal::numkernel::{companion_matrix, synth_jordan, JordanBlockSpec, NumError};
use eigsal::portrait::{analyze_portrait, PortraitConfig, PortraitError, PortraitStatus};
use num_complex::Complex64;
use thiserror::Error;

use matrix_io::{parse_matrix, write_matrix, MatrixFormat, MatrixIoError};
use report::{Command, JordanResult, JordanStudy, Outputs, PortraitResult, RunManifest, StudyRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Matrix(#[from] MatrixIoError),
    #[error(transparent)]
    Portrait(#[from] PortraitError),
    #[error(transparent)]
    Jordan(#[from] JordanError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{path}: {source}")]
    Write { path: String, source: std::io::Error },
}

#[derive(Debug, Parser)]
#[command(name = "eigsal", version, about = "Merge analysis of spectral portraits and Jordan structure detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Merge tree of pseudospectral level curves.
    Portrait(PortraitArgs),
    /// Jordan block size from perturbed eigenvalue clouds.
    Jordan(JordanArgs),
    /// Write a fixture matrix.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct Io {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: MatrixFormat,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Run manifest path; defaults to `<json>.manifest.json` when `--json`
    /// is given.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PortraitArgs {
    #[command(flatten)]
    pub io: Io,
    /// Decades `1e-1..1e-8` or an explicit list `0.1,0.03,0.01`.
    #[arg(long, default_value = "1e-1..1e-8", value_parser = parse_levels)]
    pub levels: Levels,
    /// Base grid spacing; defaults to half the smallest eigenvalue gap,
    /// at most 0.5.
    #[arg(long)]
    pub resolution: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    /// Largest tolerated angular gap, radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_4)]
    pub theta_max: f64,
    #[arg(long, default_value_t = 0.8)]
    pub match_min: f64,
    #[arg(long, default_value_t = 8)]
    pub max_refinements: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    #[value(alias = "1")]
    Same,
    #[value(alias = "2")]
    Higher,
    #[value(alias = "3", alias = "same-unless")]
    SameUnlessHallucinating,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Same => Policy::SameLevel,
            PolicyArg::Higher => Policy::HigherLevel,
            PolicyArg::SameUnlessHallucinating => Policy::SameUnlessHallucinating,
        }
    }
}

#[derive(Debug, Args)]
pub struct JordanArgs {
    #[command(flatten)]
    pub io: Io,
    /// `re_min,re_max,im_min,im_max`.
    #[arg(long, value_parser = parse_region, allow_hyphen_values = true)]
    pub region: Rect,
    /// Inclusive range `40:50` or a list `40,45,50`.
    #[arg(long, default_value = "40:50", value_parser = parse_deltas)]
    pub deltas: Deltas,
    #[arg(long, value_enum, default_value = "same")]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 6)]
    pub round_size: usize,
    #[arg(long, default_value_t = 8)]
    pub rho_max: usize,
    #[arg(long, default_value_t = 10)]
    pub max_rounds: usize,
    #[arg(long)]
    pub seed: u64,
    /// Run seeds `seed .. seed+N` and report every run.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// Companion matrix of `prod (x - r)^m`.
    Companion {
        /// `root:multiplicity` list; roots may be complex (`1+2i:1`).
        #[arg(long, value_parser = parse_roots, allow_hyphen_values = true)]
        roots: Roots,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        format: MatrixFormat,
    },
    /// `B J B^-1` for a Jordan matrix `J` and a random basis `B`.
    Jordan {
        /// `eigenvalue:size` list, e.g. `-1:1,-2:1,7:3,7:3`.
        #[arg(long, value_parser = parse_roots, allow_hyphen_values = true)]
        blocks: Roots,
        #[arg(long, default_value_t = 0)]
        basis_seed: u64,
        /// Bound on the condition number of `B`.
        #[arg(long, default_value_t = 10.0)]
        cap: f64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        format: MatrixFormat,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Levels(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq)]
pub struct Deltas(pub Vec<u32>);

#[derive(Clone, Debug, PartialEq)]
pub struct Roots(pub Vec<(Complex64, usize)>);

pub fn parse_levels(s: &str) -> Result<Levels, String> {
    let levels: Vec<f64> = if let Some((a, b)) = s.split_once("..") {
        let exp = |t: &str| -> Result<i32, String> {
            let v: f64 = t.trim().parse().map_err(|_| format!("not a number: '{t}'"))?;
            let e = v.log10();
            if !(v > 0.0) || (e - e.round()).abs() > 1e-9 {
                return Err(format!("range ends must be powers of ten, got '{t}'"));
            }
            Ok(e.round() as i32)
        };
        let (hi, lo) = (exp(a)?.max(exp(b)?), exp(a)?.min(exp(b)?));
        (lo..=hi).rev().map(|k| 10f64.powi(k)).collect()
    } else {
        let mut v = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: '{t}'")))
            .collect::<Result<Vec<_>, _>>()?;
        v.sort_by(|a, b| b.total_cmp(a));
        v
    };
    if levels.windows(2).any(|w| w[0] == w[1]) {
        return Err("levels must be distinct".into());
    }
    Ok(Levels(levels))
}

pub fn parse_deltas(s: &str) -> Result<Deltas, String> {
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| format!("not a positive integer: '{t}'"));
    let d = if let Some((a, b)) = s.split_once(':') {
        let (a, b) = (num(a)?, num(b)?);
        (a.min(b)..=a.max(b)).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    Ok(Deltas(d))
}

pub fn parse_region(s: &str) -> Result<Rect, String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: '{t}'")))
        .collect::<Result<Vec<_>, _>>()?;
    match v[..] {
        [a, b, c, d] if a < b && c < d => Ok(Rect::new(a, b, c, d)),
        [_, _, _, _] => Err("region needs re_min < re_max and im_min < im_max".into()),
        _ => Err("region must be re_min,re_max,im_min,im_max".into()),
    }
}

pub fn parse_roots(s: &str) -> Result<Roots, String> {
    s.split(',')
        .map(|item| {
            let (z, m) = item.rsplit_once(':').ok_or_else(|| format!("expected value:count, got '{item}'"))?;
            let z = Complex64::from_str(z.trim()).map_err(|_| format!("not a number: '{z}'"))?;
            let m: usize = m.trim().parse().map_err(|_| format!("not a count: '{m}'"))?;
            Ok((z, m))
        })
        .collect::<Result<Vec<_>, String>>()
        .map(Roots)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    report::write_text(path, text).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn manifest_path(io: &Io) -> Option<PathBuf> {
    io.manifest.clone().or_else(|| {
        io.json.as_ref().map(|j| {
            let mut s = j.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    })
}

fn display(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn manifest(io: &Io, command: Command, config: serde_json::Value, seed: Option<u64>, repeat: usize, started: u128) -> RunManifest {
    RunManifest {
        command,
        input: io.input.display().to_string(),
        format: format!("{:?}", io.format).to_lowercase(),
        config,
        seed,
        repeat,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: Outputs {
            json: display(&io.json),
            svg: display(&io.svg),
        },
        started_unix_ms: started,
        finished_unix_ms: report::now_ms(),
    }
}

/// Writes the JSON document, the optional SVG and the manifest, all at
/// the end of the run.
fn finish(io: &Io, json: &str, svg: Option<String>, m: &RunManifest) -> Result<(), CliError> {
    match &io.json {
        Some(path) => write(path, json)?,
        None => print!("{json}"),
    }
    if let (Some(path), Some(svg)) = (&io.svg, svg) {
        write(path, &svg)?;
    }
    if let Some(path) = manifest_path(io) {
        write(&path, &report::to_json(m))?;
    }
    Ok(())
}

pub fn run_portrait(args: &PortraitArgs) -> Result<i32, CliError> {
    let started = report::now_ms();
    let a = parse_matrix(&args.io.input, args.io.format)?;
    let config = PortraitConfig {
        levels: args.levels.0.clone(),
        initial_resolution: args.resolution,
        margin: args.margin,
        theta_max: args.theta_max,
        match_min: args.match_min,
        max_refinements: args.max_refinements,
    };
    let run = analyze_portrait(&a, &config)?;
    let result = PortraitResult::new(&run, &config);
    let svg = args.io.svg.as_ref().map(|_| svg::portrait_svg(&run, &config.levels));
    let snapshot = serde_json::to_value(&config).expect("config serialises");
    let m = manifest(&args.io, Command::Portrait, snapshot, None, 1, started);
    finish(&args.io, &report::to_json(&result), svg, &m)?;
    Ok(match run.status {
        PortraitStatus::Confident => EXIT_OK,
        PortraitStatus::BudgetExhausted => EXIT_PARTIAL,
    })
}

pub fn run_jordan(args: &JordanArgs) -> Result<i32, CliError> {
    let started = report::now_ms();
    let a = parse_matrix(&args.io.input, args.io.format)?;
    let mut config = JordanConfig::new(args.region, args.deltas.0.clone(), args.seed);
    config.policy = args.policy.into();
    config.tolerance = args.tolerance;
    config.round_size = args.round_size;
    config.rho_max = args.rho_max;
    config.max_rounds = args.max_rounds;
    let snapshot = serde_json::to_value(&config).expect("config serialises");

    let (json, svg, partial) = if args.repeat <= 1 {
        let run = analyze_jordan(&a, &config)?;
        let result = JordanResult::new(&run, &config);
        let svg = args.io.svg.as_ref().map(|_| svg::jordan_svg(&run));
        (report::to_json(&result), svg, result.low_confidence)
    } else {
        let mut runs = Vec::with_capacity(args.repeat);
        let mut first_svg = None;
        for k in 0..args.repeat as u64 {
            let seed = args.seed.wrapping_add(k);
            let cfg = JordanConfig { rng_seed: seed, ..config.clone() };
            let run = analyze_jordan(&a, &cfg)?;
            if k == 0 && args.io.svg.is_some() {
                first_svg = Some(svg::jordan_svg(&run));
            }
            runs.push(StudyRun {
                seed,
                result: JordanResult::new(&run, &cfg),
            });
        }
        let study = JordanStudy::new(runs);
        let partial = study.low_confidence_runs > 0;
        (report::to_json(&study), first_svg, partial)
    };
    let m = manifest(&args.io, Command::Jordan, snapshot, Some(args.seed), args.repeat.max(1), started);
    finish(&args.io, &json, svg, &m)?;
    Ok(if partial { EXIT_PARTIAL } else { EXIT_OK })
}

pub fn run_synth(args: &SynthArgs) -> Result<i32, CliError> {
    match &args.kind {
        SynthKind::Companion { roots, output, format } => {
            let m = companion_matrix(&roots.0)?;
            write_matrix(output, &m, *format)?;
        }
        SynthKind::Jordan {
            blocks,
            basis_seed,
            cap,
            output,
            format,
        } => {
            let specs: Vec<JordanBlockSpec> = blocks.0.iter().map(|&(z, rho)| JordanBlockSpec::new(z, rho)).collect();
            let m = synth_jordan(&specs, *basis_seed, *cap)?;
            write_matrix(output, &m, *format)?;
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` and runs the command, returning the process exit code.
/// Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Cmd::Portrait(a) => run_portrait(a),
        Cmd::Jordan(a) => run_jordan(a),
        Cmd::Synth(a) => run_synth(a),
    };
    outcome.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    })
}
