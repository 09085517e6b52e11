//! `gdcv run <config>` and `gdcv accept <suite>`.
//!
//! Exit codes: 0 success, 1 acceptance failure, 2 configuration error or
//! unknown suite, 3 numerical failure.

mod config;
mod experiments;
mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use gdcv::acceptance::{run_suite, AcceptanceOptions, Suite};

use crate::config::ExperimentConfig;
use crate::manifest::Manifest;

const EXIT_ACCEPTANCE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gdcv",
    version,
    about = "Risk estimation experiments for early-stopped gradient descent"
)]
struct Cli {
    /// Output directory. Overrides GDCV_OUT and the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds, replacing the configured list.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for the data-parallel kernels.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run an acceptance suite: oracle-equality, mp-moments, limits,
    /// coverage, gf-equivalence or benchmark.
    Accept { suite: String },
}

/// Process environment and output streams for one invocation.
struct Io<'a> {
    env_out: Option<PathBuf>,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Io<'_> {
    fn output_dir(&self, flag: Option<PathBuf>, configured: Option<&Path>) -> PathBuf {
        flag.or_else(|| self.env_out.clone())
            .or_else(|| configured.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("gdcv-out"))
    }

    fn fail(&mut self, code: u8, message: impl std::fmt::Display) -> u8 {
        let _ = writeln!(self.stderr, "error: {message}");
        code
    }
}

fn run(io: &mut Io, cli: &Cli, path: &Path) -> u8 {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => return io.fail(EXIT_CONFIG, format!("cannot read {}: {e}", path.display())),
    };
    let text = match String::from_utf8(bytes.clone()) {
        Ok(t) => t,
        Err(_) => return io.fail(EXIT_CONFIG, "config is not UTF-8"),
    };
    let mut config = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return io.fail(EXIT_CONFIG, e),
    };
    if let Some(seeds) = &cli.seeds {
        if seeds.is_empty() {
            return io.fail(EXIT_CONFIG, "empty --seeds list");
        }
        config.seeds = seeds.clone();
    }
    let out = io.output_dir(cli.out.clone(), Some(&config.output_dir));
    let start = Instant::now();
    let result = with_threads(cli.threads, || experiments::run(&config, &out));
    let artifacts = match result {
        Ok(a) => a,
        Err(e) => return io.fail(experiments::exit_code(&e), e),
    };
    let mut manifest =
        Manifest::new("run", config.seeds.clone(), cli.threads).with_config(path, &bytes);
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    manifest.files = artifacts.files.iter().map(|f| file_name(f)).collect();
    manifest.timings = artifacts.timings;
    manifest.diagnostics = artifacts.diagnostics;
    if let Err(e) = manifest.write(&out) {
        return io.fail(EXIT_CONFIG, format!("cannot write manifest: {e}"));
    }
    for f in &artifacts.files {
        let _ = writeln!(io.stdout, "{}", f.display());
    }
    0
}

fn accept(io: &mut Io, cli: &Cli, name: &str) -> u8 {
    let suite: Suite = match name.parse() {
        Ok(s) => s,
        Err(e) => return io.fail(EXIT_CONFIG, e),
    };
    let mut options = AcceptanceOptions::default();
    if let Some(seeds) = &cli.seeds {
        if seeds.is_empty() {
            return io.fail(EXIT_CONFIG, "empty --seeds list");
        }
        options.seeds = seeds.clone();
    }
    let start = Instant::now();
    let outcomes = match with_threads(cli.threads, || run_suite(suite, &options)) {
        Ok(o) => o,
        Err(e) => return io.fail(experiments::exit_code(&e).max(EXIT_NUMERICAL), e),
    };
    for o in &outcomes {
        let _ = writeln!(io.stdout, "{}", o.summary_line());
        for note in &o.notes {
            let _ = writeln!(io.stdout, "    {note}");
        }
    }
    let out = io.output_dir(cli.out.clone(), None);
    let mut manifest = Manifest::new(
        format!("accept {suite}"),
        options.seeds.clone(),
        cli.threads,
    );
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    manifest.acceptance = serde_json::to_value(&outcomes).ok();
    let written = std::fs::create_dir_all(&out).and_then(|_| manifest.write(&out));
    if let Err(e) = written {
        return io.fail(EXIT_CONFIG, format!("cannot write manifest: {e}"));
    }
    if outcomes.iter().all(|o| o.passed) {
        0
    } else {
        EXIT_ACCEPTANCE
    }
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(t) => gdcv::par::with_threads(t, f),
        None => f(),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses `args` (including the program name) and runs the command.
fn execute<I, T>(args: I, io: &mut Io) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(io.stderr, "{rendered}");
                EXIT_CONFIG
            } else {
                let _ = write!(io.stdout, "{rendered}");
                0
            };
        }
    };
    match &cli.command {
        Command::Run { config } => run(io, &cli, config),
        Command::Accept { suite } => accept(io, &cli, suite),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (stdout, stderr) = (std::io::stdout(), std::io::stderr());
    let mut io = Io {
        env_out: std::env::var_os("GDCV_OUT").map(PathBuf::from),
        stdout: &mut stdout.lock(),
        stderr: &mut stderr.lock(),
    };
    ExitCode::from(execute(std::env::args_os(), &mut io))
}
