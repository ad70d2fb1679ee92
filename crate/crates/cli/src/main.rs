//! Command-line front end: generate workload traces, replay them under one
//! strategy, or compare a strategy grid on the same trace.

mod output;
mod spec;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use edmm_sim::{replay, CostParams, StrategyConfig, StrategyMode, Trace};
use output::{Format, Row};

#[derive(Parser)]
#[command(
    name = "edmm-sim",
    about = "Trace-driven simulator for SGX2 enclave dynamic memory management strategies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload trace.
    Gen(GenArgs),
    /// Replay one trace under one strategy and print its metrics.
    Run(RunArgs),
    /// Replay one trace under several strategies and tabulate the results.
    Compare(CompareArgs),
}

#[derive(Args)]
struct GenArgs {
    #[command(subcommand)]
    generator: Generator,
}

#[derive(Args)]
struct GenCommon {
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the pool size recorded in the trace header (pages, or bytes
    /// with a K/M/G suffix).
    #[arg(long, value_parser = spec::parse_size_pages)]
    pool: Option<usize>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Generator {
    /// Allocate/touch/free churn across a sliding window of live regions.
    Churn {
        #[command(flatten)]
        common: GenCommon,
        /// Number of region generations to allocate.
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        /// Region size (pages, or bytes with a K/M/G suffix).
        #[arg(long = "tree-pages", value_parser = spec::parse_size_pages, default_value = "512")]
        tree_pages: usize,
        /// Regions kept live at a time.
        #[arg(long = "live-sets", default_value_t = 4)]
        live_sets: usize,
    },
    /// Steady working set with small per-request churn.
    Server {
        #[command(flatten)]
        common: GenCommon,
        /// Number of requests.
        #[arg(long, default_value_t = 10000)]
        requests: usize,
        /// Working-set size (pages, or bytes with a K/M/G suffix).
        #[arg(long = "working-set", value_parser = spec::parse_size_pages, default_value = "64M")]
        working_set: usize,
    },
    /// Few large mappings, sequentially touched up to a fraction, freed at
    /// the end.
    Linear {
        #[command(flatten)]
        common: GenCommon,
        /// Total mapped size (pages, or bytes with a K/M/G suffix).
        #[arg(long, value_parser = spec::parse_size_pages, default_value = "64M")]
        total: usize,
        /// Fraction of each mapping that is touched, in (0, 1].
        #[arg(long, value_parser = spec::parse_fraction, default_value = "1.0")]
        touch: f64,
    },
}

#[derive(Args)]
struct TraceSource {
    /// Trace file to replay.
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    trace: Option<PathBuf>,
    /// Inline generator spec, e.g. `churn:seed=7,iters=200,tree=2M,live=4`.
    #[arg(long)]
    gen: Option<String>,
}

impl TraceSource {
    fn load(&self) -> Result<Trace> {
        if let Some(path) = &self.trace {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read trace {}", path.display()))?;
            Trace::parse(&text).with_context(|| format!("cannot parse {}", path.display()))
        } else if let Some(spec) = &self.gen {
            spec::parse_generator(spec)
        } else {
            bail!("either --trace or --gen is required");
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Static,
    Edmm,
    EdmmDemand,
}

#[derive(Args)]
struct StrategyFlags {
    /// Base allocation design.
    #[arg(long, value_enum, default_value = "static")]
    mode: ModeArg,
    /// Pool pages fully allocated at launch (pages, or bytes with a K/M/G
    /// suffix).
    #[arg(long, value_parser = spec::parse_size_pages, default_value = "0")]
    pre: usize,
    /// Map each mmap'ed run with one kernel round trip.
    #[arg(long)]
    batch: bool,
    /// Pages mapped per demand fault; implies demand allocation.
    #[arg(long = "demand-n")]
    demand_n: Option<usize>,
    /// Lazy-free threshold as a percentage of the pool; 0 disables it.
    #[arg(long, value_parser = spec::parse_percent, default_value = "0")]
    lf: f64,
}

impl StrategyFlags {
    fn config(&self) -> Result<StrategyConfig> {
        let mode = match (self.mode, self.demand_n) {
            (ModeArg::Static, Some(_)) => {
                bail!("--demand-n selects demand allocation and conflicts with --mode static")
            }
            (ModeArg::Static, None) => StrategyMode::Static,
            (ModeArg::Edmm, None) => StrategyMode::Edmm,
            // Asking for a demand granularity implies demand allocation.
            (ModeArg::Edmm, Some(_)) | (ModeArg::EdmmDemand, _) => StrategyMode::EdmmDemand,
        };
        if self.batch && mode != StrategyMode::Edmm {
            bail!("--batch applies to plain edmm");
        }
        let config = StrategyConfig::new(mode)
            .with_prealloc(self.pre)
            .with_batch(self.batch)
            .with_demand_pages(self.demand_n.unwrap_or(1))
            .with_lazy_free(self.lf);
        Ok(config)
    }
}

#[derive(Args)]
struct CommonRunArgs {
    /// Pages measured at load for the runtime and application binaries
    /// (pages, or bytes with a K/M/G suffix).
    #[arg(long, value_parser = spec::parse_size_pages, default_value = "0")]
    binary: usize,
    /// Enclave threads receiving a TLB-shootdown IPI per removal.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Cost-parameter file (`name = microseconds` per line).
    #[arg(long)]
    costs: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

impl CommonRunArgs {
    fn cost_params(&self) -> Result<CostParams> {
        match &self.costs {
            None => Ok(CostParams::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read costs {}", path.display()))?;
                CostParams::parse(&text)
                    .with_context(|| format!("cannot parse {}", path.display()))
            }
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Table,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Format {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Table => Format::Table,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: TraceSource,
    #[command(flatten)]
    strategy: StrategyFlags,
    #[command(flatten)]
    common: CommonRunArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: TraceSource,
    /// Comma-separated strategy labels, e.g.
    /// `static,edmm,edmm+pre=64M+batch+lf=15`.
    #[arg(long, value_delimiter = ',', required = true)]
    strategies: Vec<String>,
    /// Baseline strategy for the delta columns; the first one when omitted.
    #[arg(long)]
    baseline: Option<String>,
    #[command(flatten)]
    common: CommonRunArgs,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    use edmm_sim::generators;
    let (mut trace, common) = match args.generator {
        Generator::Churn { common, iters, tree_pages, live_sets } => {
            if iters == 0 || tree_pages == 0 || live_sets == 0 {
                bail!("churn parameters must be at least 1");
            }
            (generators::gen_churn(common.seed, iters, tree_pages, live_sets), common)
        }
        Generator::Server { common, requests, working_set } => {
            if requests == 0 || working_set == 0 {
                bail!("server parameters must be at least 1");
            }
            (generators::gen_server(common.seed, requests, working_set), common)
        }
        Generator::Linear { common, total, touch } => {
            if total == 0 {
                bail!("linear total must be at least 1 page");
            }
            (generators::gen_linear(common.seed, total, touch), common)
        }
    };
    if let Some(pool) = common.pool {
        if pool < trace.pool_size {
            bail!("--pool {} is below the generator's requirement of {} pages", pool, trace.pool_size);
        }
        trace.pool_size = pool;
    }
    let text = trace.serialize();
    match &common.out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let trace = args.source.load()?;
    let params = args.common.cost_params()?;
    let config = args
        .strategy
        .config()?
        .with_binary(args.common.binary)
        .with_threads(args.common.threads);
    let outcome = replay(&trace, &config, &params)?;
    let rows = [Row::new(&config, outcome)];
    print!("{}", output::render(&rows, None, args.common.format.into()));
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    if args.strategies.len() < 2 {
        bail!("compare needs at least 2 strategies");
    }
    let trace = args.source.load()?;
    let params = args.common.cost_params()?;
    let configs: Vec<StrategyConfig> = args
        .strategies
        .iter()
        .map(|s| {
            Ok(spec::parse_strategy(s)?
                .with_binary(args.common.binary)
                .with_threads(args.common.threads))
        })
        .collect::<Result<_>>()?;
    let baseline = match &args.baseline {
        None => 0,
        Some(name) => args
            .strategies
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| anyhow::anyhow!("baseline {name:?} is not in --strategies"))?,
    };

    // Cells are independent simulations; evaluate them concurrently and
    // assemble in grid order.
    let outcomes: Vec<Result<edmm_sim::RunOutcome, edmm_sim::Error>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = configs
                .iter()
                .map(|config| {
                    let trace = &trace;
                    let params = &params;
                    scope.spawn(move || replay(trace, config, params))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("replay panicked")).collect()
        });

    let mut rows = Vec::with_capacity(configs.len());
    for (config, outcome) in configs.iter().zip(outcomes) {
        let outcome = outcome
            .with_context(|| format!("replay failed for strategy {}", config.label()))?;
        rows.push(Row::new(config, outcome));
    }
    print!("{}", output::render(&rows, Some(baseline), args.common.format.into()));
    Ok(())
}
