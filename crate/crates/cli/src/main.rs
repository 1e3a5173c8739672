use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hsv_greeks::runner::{self, Row};
use hsv_greeks::{dump, engine, Error, OutputFormat, RunConfig};

const WORKERS_ENV: &str = "HSV_GREEKS_WORKERS";

#[derive(Parser)]
#[command(name = "hsv-greeks", version, about = "Monte Carlo Greeks under hybrid stochastic volatility")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discounted price.
    Price(Common),
    /// Malliavin and finite-difference Greeks at `sim.paths`.
    Greeks {
        #[command(flatten)]
        common: Common,
        /// Write the per-path accumulators to a binary dump.
        #[arg(long, value_name = "PATH")]
        dump_paths: Option<PathBuf>,
        /// Recompute the Malliavin rows from a dump instead of simulating.
        #[arg(long, value_name = "PATH", conflicts_with = "dump_paths")]
        replay: Option<PathBuf>,
    },
    /// Every estimator at every sweep size.
    Converge(Common),
    /// Malliavin against finite differences with agreement flags.
    Compare(Common),
    /// Print the effective configuration.
    DumpConfig(Common),
}

#[derive(Args)]
struct Common {
    /// Config file; the built-in reference configuration when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Path count; for `converge` and `compare` it replaces the sweep.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    /// Write 0 in the wall-time column.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    JsonLines,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalBlowup { .. } | Error::EmptyInput => 3,
        Error::Io(_) | Error::Decode(_) => 1,
        _ => 2,
    }
}

impl Common {
    fn load(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                RunConfig::parse(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.sim.seed = s;
        }
        if let Some(n) = self.paths {
            cfg.sim.n_paths = n;
            cfg.sweep = vec![n];
        }
        if let Some(n) = self.steps {
            cfg.sim.n_steps = n;
        }
        if let Some(p) = &self.out {
            cfg.output.path = Some(p.clone());
        }
        match self.format {
            Some(Format::Csv) => cfg.output.format = OutputFormat::Csv,
            Some(Format::JsonLines) => cfg.output.format = OutputFormat::JsonLines,
            None => {}
        }
        if self.no_timing {
            cfg.output.timing = false;
        }
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            cfg.sim.workers =
                v.trim().parse().map_err(|_| Error::Config { key: WORKERS_ENV.into(), reason: format!("`{v}` is not a count") })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<(), Error>) -> Result<(), Error> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(file);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn emit(cfg: &RunConfig, rows: &[Row]) -> Result<(), Error> {
    with_output(cfg.output.path.as_deref(), |w| runner::write_rows(w, rows, cfg.output.format))
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Price(c) => {
            let cfg = c.load()?;
            emit(&cfg, &runner::price(&cfg)?)
        }
        Command::Greeks { common, dump_paths, replay } => {
            let cfg = common.load()?;
            let rows = match replay {
                Some(p) => {
                    let bytes = std::fs::read(&p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
                    runner::run_from_accumulators(&cfg, dump::decode(&bytes)?)?
                }
                None => {
                    if let Some(p) = dump_paths {
                        let paths = engine::simulate_paths(&cfg.build_model()?, &cfg.init, &cfg.sim)?;
                        with_output(Some(&p), |w| dump::write_accumulators(w, &paths.paths))?;
                    }
                    runner::run(&cfg)?
                }
            };
            emit(&cfg, &rows)
        }
        Command::Converge(c) => {
            let cfg = c.load()?;
            emit(&cfg, &runner::converge(&cfg)?)
        }
        Command::Compare(c) => {
            let cfg = c.load()?;
            let table = runner::compare(&cfg)?;
            for t in table.iter().filter(|t| !t.all_agree()) {
                log::warn!("{} at {} paths: finite differences disagree with malliavin", t.greek, t.n_paths);
            }
            with_output(cfg.output.path.as_deref(), |w| runner::write_comparisons(w, &table, cfg.output.format))
        }
        Command::DumpConfig(mut c) => {
            // --out names the dump file, not the output of the dumped config
            let target = c.out.take();
            let cfg = c.load()?;
            with_output(target.as_deref(), |w| Ok(w.write_all(cfg.dump().as_bytes())?))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
