//! Command-line driver: run experiments, print baseline tables, emit tidy
//! plot CSVs, summarize saved results, and run the verification battery.
//!
//! Exit codes: 0 success, 1 configuration error, 2 selftest failure.

use clap::{Args, Parser, Subcommand};
use echomod_core::channel::SnrDb;
use echomod_core::checkpoint::save_model;
use echomod_core::classic::{
    baseline_ber_curve, calibration_snrs, BaselineCurve, ClassicScheme, TABLE_BER_TARGETS,
};
use echomod_core::error::Error;
use echomod_core::runner::{
    plot_data_ber_curve, plot_data_convergence, read_records, write_results, ExperimentConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "echomod",
    about = "Two-agent modulation learning over AWGN: GP, LP, ESP and EPP protocols"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file and/or command-line flags.
    Run(RunArgs),
    /// Print (and cache) a classic baseline round-trip BER table.
    Baseline(BaselineArgs),
    /// Emit tidy CSVs (BER percentiles or convergence curve) from results.
    PlotData(PlotDataArgs),
    /// Print the summary table row for saved results.
    Summarize(SummarizeArgs),
    /// Run gradient checks and the invariant suite.
    Selftest,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for records.csv and summary.csv
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for trials (default: all cores, capped by
    /// ECHOMOD_MAX_PARALLEL)
    #[arg(long)]
    parallel: Option<usize>,
    /// gp | lp | esp | epp
    #[arg(long)]
    protocol: Option<String>,
    /// Two preset names, comma separated (e.g. neural-fast,classic)
    #[arg(long)]
    agents: Option<String>,
    /// Bits per symbol (2, 3 or 4)
    #[arg(long)]
    bps: Option<u8>,
    /// Save the final trained models of trial 0 under this directory
    #[arg(long)]
    save_models: Option<PathBuf>,
    /// Warm-start every trial's agents from checkpoints in this directory
    #[arg(long)]
    load_models: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    /// qpsk | 8psk | 16qam
    #[arg(long)]
    scheme: String,
    /// "table1" or a comma-separated dB list
    #[arg(long, default_value = "table1")]
    snr_grid: String,
    /// Cache directory for computed curves
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct PlotDataArgs {
    /// Directory containing records.csv
    #[arg(long)]
    results: PathBuf,
    /// ber-curve | convergence
    #[arg(long)]
    kind: String,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Directory containing records.csv
    #[arg(long)]
    results: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidArgument(_) | Error::UnsupportedConfiguration(_) => {
                    ExitCode::from(1)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

fn parallelism(requested: Option<usize>) -> Option<usize> {
    let cap = std::env::var("ECHOMOD_MAX_PARALLEL")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    match (requested, cap) {
        (Some(r), Some(c)) => Some(r.min(c).max(1)),
        (Some(r), None) => Some(r.max(1)),
        (None, Some(c)) => Some(c.max(1)),
        (None, None) => None,
    }
}

fn dispatch(cli: Cli) -> echomod_core::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Baseline(args) => baseline(args),
        Command::PlotData(args) => plot_data(args),
        Command::Summarize(args) => summarize(args),
        Command::Selftest => selftest(),
    }
}

fn run(args: RunArgs) -> echomod_core::Result<ExitCode> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            ExperimentConfig::from_toml(&text)?
        }
        None => {
            let (protocol, agents, bps) = match (&args.protocol, &args.agents, args.bps) {
                (Some(p), Some(a), Some(b)) => (p.clone(), a.clone(), b),
                _ => {
                    return Err(Error::config(
                        "without --config, all of --protocol, --agents and --bps are required"
                            .to_string(),
                    ))
                }
            };
            let (a1, a2) = agents.split_once(',').ok_or_else(|| {
                Error::config("--agents wants two comma-separated presets".to_string())
            })?;
            ExperimentConfig::new(&protocol, bps, a1.trim(), a2.trim())
        }
    };
    if let Some(p) = &args.protocol {
        config.protocol = p.clone();
    }
    if let Some(a) = &args.agents {
        let (a1, a2) = a.split_once(',').ok_or_else(|| {
            Error::config("--agents wants two comma-separated presets".to_string())
        })?;
        config.agent1.preset = a1.trim().to_string();
        config.agent2.preset = a2.trim().to_string();
    }
    if let Some(b) = args.bps {
        config.bits_per_symbol = b;
    }
    if let Some(t) = args.trials {
        config.num_trials = Some(t);
    }
    if let Some(s) = args.seed {
        config.base_seed = Some(s);
    }
    let resolved = config.resolve()?;
    eprintln!(
        "running {} {} vs {} at {} bits/symbol, {} trials x {} iterations",
        resolved.protocol.as_str(),
        resolved.agent1.preset,
        resolved.agent2.preset,
        resolved.bits_per_symbol,
        resolved.num_trials,
        resolved.max_iterations
    );
    let results = echomod_core::runner::run_experiment_opts(
        &resolved,
        parallelism(args.parallel),
        args.load_models.as_deref(),
    )?;
    write_results(&results, &args.out)?;
    let s = &results.summary;
    println!(
        "symbols_to_90pct_converged: {}",
        s.symbols_to_90pct.map(|v| v.to_string()).unwrap_or_else(|| "never".to_string())
    );
    println!("median_symbols_to_3db: {}", s.median_symbols_to_3db);
    println!("final_converged_fraction: {}", s.final_converged_fraction);
    println!("results written to {}", args.out.display());

    if let Some(dir) = &args.save_models {
        save_trial0_models(&resolved, dir)?;
        println!("trial-0 models saved to {}", dir.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn save_trial0_models(
    config: &echomod_core::runner::ResolvedConfig,
    dir: &std::path::Path,
) -> echomod_core::Result<()> {
    // retrain trial 0 deterministically to recover its final agents
    use echomod_core::presets::build_agent;
    use echomod_core::protocols::{checkpoint_schedule, train, TrainSetup};
    use echomod_core::runner::{trial_rng, Stream};
    let bits = config.bits();
    let mut init_rng = trial_rng(config.base_seed, 0, Stream::AgentInit);
    let a1 = build_agent(&config.agent1, bits, &mut init_rng)?;
    let a2 = build_agent(&config.agent2, bits, &mut init_rng)?;
    let baseline =
        echomod_core::classic::default_baseline(&ClassicScheme::for_bits(bits));
    let setup = TrainSetup {
        protocol: config.protocol,
        train_snr: SnrDb(config.train_snr_db),
        preamble_len: config.preamble_length,
        max_iterations: config.max_iterations,
        checkpoints: checkpoint_schedule(config.max_iterations, config.num_checkpoints),
        test_snrs: config.test_snr_grid.iter().map(|&s| SnrDb(s)).collect(),
        db_off_snr: SnrDb(config.db_off_snr),
        eval_words_per_snr: config.eval_words_per_snr,
    };
    let train_rng = trial_rng(config.base_seed, 0, Stream::Train);
    let eval_rng = trial_rng(config.base_seed, 0, Stream::Eval);
    let (_, agents) = train([a1, a2], &setup, baseline, train_rng, eval_rng)?;
    for (i, agent) in agents.iter().enumerate() {
        if let Some(m) = agent.modulator.model() {
            save_model(m, &dir.join(format!("agent{}_mod.emk", i + 1)))?;
        }
        if let Some(m) = agent.demodulator.model() {
            save_model(m, &dir.join(format!("agent{}_demod.emk", i + 1)))?;
        }
    }
    Ok(())
}

fn baseline(args: BaselineArgs) -> echomod_core::Result<ExitCode> {
    let scheme = ClassicScheme::by_name(&args.scheme)?;
    let grid: Vec<f64> = if args.snr_grid == "table1" {
        let mut g = calibration_snrs(scheme.name)?.to_vec();
        g.reverse();
        g
    } else {
        let parsed: Result<Vec<f64>, _> =
            args.snr_grid.split(',').map(|s| s.trim().parse::<f64>()).collect();
        parsed.map_err(|e| Error::config(format!("bad --snr-grid: {e}")))?
    };
    let curve = match &args.cache {
        Some(dir) if args.snr_grid != "table1" => {
            // explicit grids are computed fresh; only default curves cache
            let _ = dir;
            baseline_ber_curve(&scheme, &grid)?
        }
        Some(dir) => BaselineCurve::load_or_compute(&scheme, dir)?,
        None => baseline_ber_curve(&scheme, &grid)?,
    };
    println!("scheme,snr_db,ber,n_bits,n_errors");
    for p in &curve.points {
        if args.snr_grid == "table1" && !grid.iter().any(|&g| (g - p.snr_db).abs() < 1e-9) {
            continue;
        }
        println!("{},{},{:e},{},{}", curve.scheme, p.snr_db, p.ber, p.n_bits, p.n_errors);
    }
    if args.snr_grid == "table1" {
        eprintln!("nominal targets: {:?}", TABLE_BER_TARGETS);
    }
    Ok(ExitCode::SUCCESS)
}

fn plot_data(args: PlotDataArgs) -> echomod_core::Result<ExitCode> {
    let rows = read_records(&args.results.join("records.csv"))?;
    match args.kind.as_str() {
        "ber-curve" => print!("{}", plot_data_ber_curve(&rows)),
        "convergence" => print!("{}", plot_data_convergence(&rows)),
        other => return Err(Error::config(format!("unknown plot kind '{other}'"))),
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(args: SummarizeArgs) -> echomod_core::Result<ExitCode> {
    let rows = read_records(&args.results.join("records.csv"))?;
    print!("{}", plot_data_convergence(&rows));
    // the smallest symbols count with fraction >= 0.9
    let csv = plot_data_convergence(&rows);
    let hit = csv
        .lines()
        .skip(1)
        .filter_map(|l| {
            let (s, f) = l.split_once(',')?;
            Some((s.parse::<u64>().ok()?, f.parse::<f64>().ok()?))
        })
        .find(|&(_, f)| f >= 0.9);
    match hit {
        Some((symbols, _)) => println!("symbols_to_90pct_converged,{symbols}"),
        None => println!("symbols_to_90pct_converged,never"),
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest() -> echomod_core::Result<ExitCode> {
    let results = echomod_core::selftest::run_all();
    let mut all_ok = true;
    for c in &results {
        println!("{}: {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all_ok &= c.passed;
    }
    if all_ok {
        println!("selftest: all {} checks passed", results.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("selftest: FAILURES present");
        Ok(ExitCode::from(2))
    }
}
