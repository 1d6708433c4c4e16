use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use abcem::config::{parse_config, serialize_config};
use abcem::engine::run_simulation_with;
use abcem::exec::ExecPolicy;
use abcem::io::{aggregate_path, read_csv, run_csv_path, write_aggregate, write_csv};
use abcem::montecarlo::{run_config, run_monte_carlo_with};
use abcem::presets::{preset_names, preset_text};
use abcem::stats::{log_returns, ReturnSeries, StatsReport};
use abcem::{Error, Result, SimulationConfig};

#[derive(Parser)]
#[command(
    name = "abcem",
    version,
    about = "Agent-based computational economic market simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its time series.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run a Monte-Carlo batch: per-run CSVs plus aggregate statistics.
    Batch {
        #[command(flatten)]
        common: Common,
        /// Number of runs; defaults to the config's monte_carlo_runs.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Stylized-fact statistics of a recorded CSV.
    Analyze {
        csv: PathBuf,
        #[arg(long, default_value = "price", value_parser = ["price", "log_price"])]
        column: String,
        #[arg(long, default_value_t = 20)]
        max_lag: usize,
        /// Number of QQ quantiles.
        #[arg(long, default_value_t = 100)]
        qq: usize,
        /// Write the QQ pairs to this CSV file.
        #[arg(long)]
        qq_out: Option<PathBuf>,
    },
    /// List or print the bundled parameter sets.
    Presets {
        #[arg(long, conflicts_with = "emit")]
        list: bool,
        #[arg(long, value_name = "NAME")]
        emit: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Config file or bundled preset name.
    #[arg(long)]
    config: String,
    #[arg(long, env = "ABCEM_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the number of agents.
    #[arg(long)]
    agents: Option<usize>,
    /// Override the number of time steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl Common {
    fn load(&self) -> Result<(String, SimulationConfig)> {
        let path = Path::new(&self.config);
        let (stem, text) = if path.is_file() {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.into(),
                source: e,
            })?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (stem, text)
        } else {
            (self.config.clone(), preset_text(&self.config)?.to_string())
        };
        let mut config = parse_config(&text)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(n) = self.agents {
            config.num_agents = n;
        }
        if let Some(k) = self.steps {
            config.num_steps = k;
        }
        config.validate()?;
        Ok((stem, config))
    }

    fn policy(&self) -> ExecPolicy {
        if self.jobs == 1 {
            ExecPolicy::Sequential
        } else {
            ExecPolicy::default()
        }
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        #[cfg(feature = "parallel")]
        if self.jobs > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.jobs)
                .build()
                .map_err(|e| Error::ConfigMismatch(format!("thread pool: {e}")))?;
            return pool.install(f);
        }
        f()
    }
}

fn run(common: &Common) -> Result<()> {
    let (stem, config) = common.load()?;
    let record = common.in_pool(|| run_simulation_with(&config, common.policy()))?;
    let path = run_csv_path(&common.out, &stem, 0);
    write_csv(&record, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn batch(common: &Common, runs: Option<usize>) -> Result<()> {
    let (stem, config) = common.load()?;
    let runs = runs.unwrap_or(config.monte_carlo_runs);
    let out = &common.out;
    let write =
        |i: usize, rec: &abcem::TimeSeriesRecord| write_csv(rec, run_csv_path(out, &stem, i));
    let report = common.in_pool(|| run_monte_carlo_with(&config, runs, common.policy(), &write))?;
    let agg = aggregate_path(out, &stem);
    write_aggregate(&report, &agg)?;
    let m = &report.mean;
    println!("runs                 {runs}");
    println!("seed of run 0        {}", run_config(&config, 0).seed);
    println!("mean excess kurtosis {}", m.excess_kurtosis);
    println!("mean hill            {}", m.hill);
    println!("mean acf raw         {}", m.mean_acf_raw());
    println!("mean acf abs         {}", m.mean_acf_abs());
    for (k, v) in &report.mean_metrics {
        println!("mean {k:<16}{v}");
    }
    println!("{}", agg.display());
    Ok(())
}

fn analyze(
    csv: &Path,
    column: &str,
    max_lag: usize,
    qq: usize,
    qq_out: Option<&Path>,
) -> Result<()> {
    let (columns, rows) = read_csv(csv)?;
    let i = columns
        .iter()
        .position(|c| c == column)
        .ok_or_else(|| Error::ConfigMismatch(format!("{}: no column `{column}`", csv.display())))?;
    let values: Vec<f64> = rows.iter().map(|r| r[i]).collect();
    let series = if column == "log_price" {
        ReturnSeries::from_log_prices(&values)?
    } else {
        log_returns(&values)?
    };
    let report = StatsReport::compute(&series, max_lag, qq)?;
    println!("n                {}", report.n);
    println!("excess_kurtosis  {}", report.excess_kurtosis);
    println!("hill             {}", report.hill);
    println!("mean_acf_raw     {}", report.mean_acf_raw());
    println!("mean_acf_abs     {}", report.mean_acf_abs());
    println!("lag,acf_raw,acf_abs");
    for (l, (a, b)) in report.acf_raw.iter().zip(&report.acf_abs).enumerate() {
        println!("{},{a},{b}", l + 1);
    }
    if let Some(path) = qq_out {
        let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
        w.write_record(["normal", "sample"])?;
        for (x, y) in &report.qq_pairs {
            w.write_record([abcem::io::format_f64(*x), abcem::io::format_f64(*y)])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.into(),
            source: e,
        })?;
    }
    Ok(())
}

fn presets(list: bool, emit: Option<&str>) -> Result<()> {
    match emit {
        Some(name) => {
            let text = preset_text(name)?;
            // canonical form, identical to what the parser reads back
            print!("{}", serialize_config(&parse_config(text)?)?);
        }
        None => {
            let _ = list;
            for name in preset_names() {
                println!("{name}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common } => run(common),
        Command::Batch { common, runs } => batch(common, *runs),
        Command::Analyze {
            csv,
            column,
            max_lag,
            qq,
            qq_out,
        } => analyze(csv, column, *max_lag, *qq, qq_out.as_deref()),
        Command::Presets { list, emit } => presets(*list, emit.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(1)
        }
    }
}
