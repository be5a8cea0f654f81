use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sdde_core::experiment::{output_root, write_ledger, LibraryConfig};
use sdde_core::{
    benchmark_matrix, run, simulate_ensemble, sweep, Approach, BenchmarkModel, DiffusionMode, Error, EstimatorMethod,
    ExperimentConfig, Ledger, MatrixAxes, QueryMode, SweepParam, TrajectoryMeta,
};

#[derive(Parser)]
#[command(name = "sddeid", version, about = "Sparse identification of stochastic delay differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate ground-truth paths of a benchmark model.
    Simulate(SimulateArgs),
    /// Run one identification experiment.
    Identify(IdentifyArgs),
    /// Run approaches x methods x diffusion modes.
    Benchmark(BenchmarkArgs),
    /// Vary eps or M and emit plot data.
    Sweep(SweepArgs),
    /// Print the candidate libraries of a configuration.
    Library(LibraryArgs),
}

/// Config file plus flag overrides.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML experiment config; defaults to logistic B1 with KM.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    approach: Option<Approach>,
    #[arg(long)]
    drift_method: Option<EstimatorMethod>,
    #[arg(long)]
    diffusion_method: Option<EstimatorMethod>,
    /// Ensemble size (B1, B2) or synthetic paths per state (A).
    #[arg(short = 'm', long)]
    paths: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    lambda_f: Option<f64>,
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    fine_dt: Option<f64>,
    /// Use only path 0 as B1 query points.
    #[arg(long)]
    reference_queries: bool,
    /// Output directory below $SDDEID_OUTPUT.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    write_estimates: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, value_delimiter = ',')]
    approaches: Option<Vec<Approach>>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<EstimatorMethod>>,
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<DiffusionMode>>,
    /// Repeat the matrix for each seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// `eps` or `M`.
    #[arg(long)]
    param: SweepParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Sweep each of these approaches in turn.
    #[arg(long, value_delimiter = ',')]
    approaches: Option<Vec<Approach>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct LibraryArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
}

impl ConfigArgs {
    fn build(&self) -> sdde_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::logistic_default(0),
        };
        if let Some(m) = &self.model {
            cfg.model = BenchmarkModel::by_name(m)?;
            cfg.library = LibraryConfig::default();
        }
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set!(
            seed => cfg.seed,
            approach => cfg.approach,
            drift_method => cfg.drift_method,
            diffusion_method => cfg.diffusion_method,
            paths => cfg.paths,
            eps => cfg.eps,
            lambda_f => cfg.lambda_f,
            lambda_g => cfg.lambda_g,
            dt => cfg.grid.dt,
            t_end => cfg.grid.t_end,
        );
        if self.fine_dt.is_some() {
            cfg.grid.fine_dt = self.fine_dt;
        }
        if self.output.is_some() {
            cfg.output = self.output.clone();
        }
        if self.reference_queries {
            cfg.b1_queries = QueryMode::Reference;
        }
        cfg.write_estimates |= self.write_estimates;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_simulate(args: &SimulateArgs) -> sdde_core::Result<ExperimentConfig> {
    let cfg = args.cfg.build()?;
    let spec = cfg.model.spec()?;
    let grid = cfg.time_grid()?;
    let plan = cfg.noise_plan(grid.dt())?;
    let paths = simulate_ensemble(&spec, &grid, &plan, cfg.paths)?;
    let dir = output_root().join(cfg.output.clone().unwrap_or_else(|| PathBuf::from("simulate")));
    fs::create_dir_all(&dir)?;
    for (k, traj) in paths.iter().enumerate() {
        traj.write_csv(BufWriter::new(fs::File::create(dir.join(format!("path_{k:04}.csv")))?))?;
        TrajectoryMeta {
            model: cfg.model.name().to_string(),
            n: spec.dim(),
            tau: spec.tau(),
            dt: grid.dt(),
            seed: cfg.seed,
            path: k,
        }
        .write(&dir.join(format!("path_{k:04}.toml")))?;
    }
    println!("wrote {} paths of {} samples to {}", paths.len(), grid.steps(), dir.display());
    Ok(cfg)
}

fn cmd_identify(args: &IdentifyArgs) -> sdde_core::Result<ExperimentConfig> {
    let cfg = args.cfg.build()?;
    let out = run(&cfg).map_err(|e| with_echo(e, &cfg))?;
    let mut stdout = io::stdout().lock();
    out.fit.write_report(&mut stdout)?;
    writeln!(stdout)?;
    Ledger::new(vec![out.result]).write_csv(&mut stdout)?;
    if let Some(dir) = out.dir {
        writeln!(stdout, "artifacts in {}", dir.display())?;
    }
    Ok(cfg)
}

fn seeds_of(cfg: &ExperimentConfig, seeds: &Option<Vec<u64>>) -> Vec<u64> {
    seeds.clone().unwrap_or_else(|| vec![cfg.seed])
}

fn finish(cfg: &ExperimentConfig, ledger: &Ledger, param: Option<SweepParam>) -> sdde_core::Result<()> {
    print!("{}", ledger.render_table());
    if let Some(dir) = write_ledger(cfg, ledger, param)? {
        println!("ledger in {}", dir.display());
    }
    let failed = ledger.rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed; see the status column", ledger.len());
    }
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> sdde_core::Result<ExperimentConfig> {
    let cfg = args.cfg.build()?;
    let full = MatrixAxes::full();
    let axes = MatrixAxes {
        approaches: args.approaches.clone().unwrap_or(full.approaches),
        methods: args.methods.clone().unwrap_or(full.methods),
        modes: args.modes.clone().unwrap_or(full.modes),
    };
    let mut ledger = Ledger::default();
    for seed in seeds_of(&cfg, &args.seeds) {
        let mut c = cfg.clone();
        c.seed = seed;
        c.output = cfg.output.as_ref().map(|o| o.join(format!("seed{seed}")));
        ledger.extend(benchmark_matrix(&c, &axes).map_err(|e| with_echo(e, &c))?);
    }
    finish(&cfg, &ledger, None)?;
    Ok(cfg)
}

fn cmd_sweep(args: &SweepArgs) -> sdde_core::Result<ExperimentConfig> {
    let cfg = args.cfg.build()?;
    let approaches = args.approaches.clone().unwrap_or_else(|| vec![cfg.approach]);
    let mut ledger = Ledger::default();
    for seed in seeds_of(&cfg, &args.seeds) {
        for &a in &approaches {
            let mut c = cfg.clone();
            c.seed = seed;
            c.approach = a;
            c.output = cfg.output.as_ref().map(|o| o.join(format!("{a}-seed{seed}")));
            ledger.extend(sweep(&c, args.param, &args.values).map_err(|e| with_echo(e, &c))?);
        }
    }
    finish(&cfg, &ledger, Some(args.param))?;
    Ok(cfg)
}

fn cmd_library(args: &LibraryArgs) -> sdde_core::Result<ExperimentConfig> {
    let cfg = args.cfg.build()?;
    let (f, g) = cfg.library.build(&cfg.model)?;
    let mut out = io::stdout().lock();
    writeln!(out, "# drift")?;
    f.write_description(&mut out)?;
    writeln!(out, "# diffusion")?;
    g.write_description(&mut out)?;
    Ok(cfg)
}

fn with_echo(e: Error, cfg: &ExperimentConfig) -> Error {
    log::error!("failing config: {}", cfg.label());
    e
}

fn echo_config(path: Option<&Path>) {
    if let Some(p) = path {
        eprintln!("config: {}", p.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (result, cfg_args) = match &cli.command {
        Command::Simulate(a) => (cmd_simulate(a), &a.cfg),
        Command::Identify(a) => (cmd_identify(a), &a.cfg),
        Command::Benchmark(a) => (cmd_benchmark(a), &a.cfg),
        Command::Sweep(a) => (cmd_sweep(a), &a.cfg),
        Command::Library(a) => (cmd_library(a), &a.cfg),
    };
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            echo_config(cfg_args.config.as_deref());
            if let Ok(cfg) = cfg_args.build() {
                if let Ok(text) = cfg.to_toml() {
                    eprintln!("{text}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
