use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use delta_core::cr::{export_p_table, optimal_p_static};
use delta_core::experiment::{parse_sweep_file, preset, run_sweeps, tune_baselines, write_rows, RunOptions, SweepSpec, PRESETS};
use delta_core::sim::DEFAULT_SLOTS;
use delta_core::smm::{default_psi_max, optimize_k, pi_zw_table, write_pi_table, build_model};
use delta_core::{Error, ModelVariant, Result};

#[derive(Parser)]
#[command(name = "delta", version, about = "Simulate DELTA and its benchmarks, tune baselines, evaluate the analytical models")]
struct Cli {
    /// Base seed for every episode.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Slots per episode.
    #[arg(long, global = true, default_value_t = DEFAULT_SLOTS)]
    slots: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run sweeps and write one CSV row per protocol and axis value.
    Sweep {
        #[command(flatten)]
        source: Source,
        /// Output CSV.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Tune the ZW-family baselines for every point of the sweeps.
    Tune {
        #[command(flatten)]
        source: Source,
        /// Output table of tuned probabilities.
        #[arg(long, default_value = "tuned.csv")]
        out: PathBuf,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Tabulate the semi-Markov model's π(ZW) over a range of budgets.
    Analyze {
        #[command(flatten)]
        system: System,
        #[arg(long, value_enum, default_value_t = VariantArg::Both)]
        variant: VariantArg,
        #[arg(long, default_value_t = 10)]
        k_min: u32,
        #[arg(long, default_value_t = 150)]
        k_max: u32,
        #[arg(long, default_value_t = 5)]
        k_step: u32,
        /// AoII truncation (defaults to 8N).
        #[arg(long)]
        psi_max: Option<u32>,
        /// Also report whether the model looks unstable at the best budget.
        #[arg(long)]
        check_stability: bool,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the optimal collision-resolution probabilities p*.
    OptimizeP {
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Loads ρ = Nλ to tabulate.
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        rho: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        /// Output file (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Built-in figure reproduction.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// TOML file with one [[sweep]] table per sweep.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CacheArgs {
    /// File keeping tuned baseline probabilities between runs.
    #[arg(long, default_value = "delta-tune-cache.csv")]
    tune_cache: PathBuf,
    /// Neither read nor write the tuning cache.
    #[arg(long)]
    no_cache: bool,
    /// Ignore cached entries, tune again and overwrite them.
    #[arg(long)]
    retune: bool,
}

#[derive(Args)]
struct System {
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Pessimistic,
    Optimistic,
    Both,
}

impl VariantArg {
    fn variants(self) -> Vec<ModelVariant> {
        match self {
            VariantArg::Pessimistic => vec![ModelVariant::Pessimistic],
            VariantArg::Optimistic => vec![ModelVariant::Optimistic],
            VariantArg::Both => vec![ModelVariant::Pessimistic, ModelVariant::Optimistic],
        }
    }
}

fn load_specs(source: &Source, seed: u64, slots: u64) -> Result<Vec<SweepSpec>> {
    match (&source.preset, &source.config) {
        (Some(name), _) => preset(name, seed, slots),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            parse_sweep_file(&text, seed, slots)
        }
        (None, None) => Err(Error::Config("give --preset or --config".into())),
    }
}

fn run_options(cache: &CacheArgs) -> RunOptions {
    RunOptions {
        tune_cache: (!cache.no_cache).then(|| cache.tune_cache.clone()),
        retune: cache.retune,
        tune_budget: None,
    }
}

fn io_error(path: &Path, source: io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Sweep { source, out, cache } => {
            let specs = load_specs(source, cli.seed, cli.slots)?;
            let rows = run_sweeps(&specs, &run_options(cache))?;
            write_rows(out, &specs[0].thresholds, &rows)?;
            log::info!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Tune { source, out, cache } => {
            let specs = load_specs(source, cli.seed, cli.slots)?;
            let table = tune_baselines(&specs, &run_options(cache))?;
            table.write_table(out)?;
            log::info!("wrote {} tuned entries to {}", table.len(), out.display());
        }
        Command::Analyze { system, variant, k_min, k_max, k_step, psi_max, check_stability, out } => {
            if *k_step == 0 || k_min > k_max || *k_min < 2 {
                return Err(Error::Config("need 2 <= k-min <= k-max and k-step > 0".into()));
            }
            let lambda = system.rho / system.n as f64;
            let psi_max = psi_max.unwrap_or_else(|| default_psi_max(system.n));
            let ks: Vec<u32> = (*k_min..=*k_max).step_by(*k_step as usize).collect();
            let path = out.as_deref();
            let mut w = output(path)?;
            for v in variant.variants() {
                let rows = pi_zw_table(system.n, lambda, system.epsilon, psi_max, v, &ks)?;
                write_pi_table(&mut w, v, &rows).map_err(|e| io_error(path.unwrap_or(Path::new("-")), e))?;
                let (k, pi) = optimize_k(system.n, lambda, system.epsilon, psi_max, v, ks.iter().copied())?;
                log::info!("{} model: K* = {k} with π(ZW) = {pi:.6}", v.name());
                if *check_stability {
                    let unstable = build_model(system.n, lambda, system.epsilon, k as f64, psi_max, v)?.is_unstable()?;
                    eprintln!("{} model at K*={k}: {}", v.name(), if unstable { "unstable" } else { "stable" });
                }
            }
            w.flush().map_err(|e| io_error(path.unwrap_or(Path::new("-")), e))?;
        }
        Command::OptimizeP { n, rho, epsilon, out } => {
            if *n == 0 {
                return Err(Error::Config("n must be positive".into()));
            }
            for r in rho {
                optimal_p_static(*n, r / *n as f64, *epsilon);
            }
            let path = out.as_deref();
            let mut w = output(path)?;
            export_p_table(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(path.unwrap_or(Path::new("-")), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
            eprintln!("error: cannot start {workers} workers: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
