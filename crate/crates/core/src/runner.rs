//! Experiment configuration, multi-seed orchestration, and result
//! persistence.
//!
//! Config files are TOML with a flat experiment section and one table per
//! agent; hyperparameter keys use the experiment-table names verbatim.
//! Unknown keys are rejected. Results persist as comma-separated text with
//! the full resolved config embedded as '#' comment lines, so any figure is
//! regenerable from the file alone.

use crate::channel::SnrDb;
use crate::classic::{calibration_snr_for_ber, calibration_snrs, ClassicScheme};
use crate::error::{Error, Result};
use crate::evaluation::{
    ber_percentiles, convergence_fraction, median_symbols_to_threshold, symbols_to_fraction,
    TrainingRecord,
};
use crate::presets::{build_agent, resolve_preset, AgentPreset};
use crate::protocols::{checkpoint_schedule, train, ProtocolKind, TrainSetup};
use crate::words::BitsPerSymbol;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Per-trial generator streams derived from (base seed, trial index), so
/// trials are independent and reproducible regardless of scheduling.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    AgentInit = 0,
    Train = 1,
    Eval = 2,
}

pub fn trial_rng(base_seed: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(trial * 8 + stream as u64);
    rng
}

/// Raw agent section of a config file: a preset name plus optional
/// hyperparameter overrides (experiment-table field names).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub preset: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degree_polynomial: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepsize_mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepsize_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepsize_cross_entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restrict_energy: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_center: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cross_entropy_weight: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activation_fn_hidden: Option<String>,
}

impl AgentConfig {
    pub fn preset_only(name: &str) -> Self {
        AgentConfig {
            preset: name.to_string(),
            hidden_layers: None,
            degree_polynomial: None,
            stepsize_mu: None,
            stepsize_sigma: None,
            stepsize_cross_entropy: None,
            initial_std: None,
            min_std: None,
            max_std: None,
            max_amplitude: None,
            restrict_energy: None,
            lambda_prob: None,
            lambda_l1: None,
            lambda_center: None,
            cross_entropy_weight: None,
            optimizer: None,
            activation_fn_hidden: None,
        }
    }

    fn apply(&self, mut p: AgentPreset) -> AgentPreset {
        if let Some(v) = &self.hidden_layers {
            p.hidden_layers = v.clone();
        }
        if let Some(v) = self.degree_polynomial {
            p.degree_polynomial = v;
        }
        if let Some(v) = self.stepsize_mu {
            p.stepsize_mu = v;
        }
        if let Some(v) = self.stepsize_sigma {
            p.stepsize_sigma = v;
        }
        if let Some(v) = self.stepsize_cross_entropy {
            p.stepsize_cross_entropy = v;
        }
        if let Some(v) = self.initial_std {
            p.initial_std = v;
        }
        if let Some(v) = self.min_std {
            p.min_std = v;
        }
        if let Some(v) = self.max_std {
            p.max_std = v;
        }
        if let Some(v) = self.max_amplitude {
            p.max_amplitude = v;
        }
        if let Some(v) = self.restrict_energy {
            p.restrict_energy = v;
        }
        if let Some(v) = self.lambda_prob {
            p.lambda_prob = v;
        }
        if let Some(v) = self.lambda_l1 {
            p.lambda_l1 = v;
        }
        if let Some(v) = self.lambda_center {
            p.lambda_center = v;
        }
        if let Some(v) = self.cross_entropy_weight {
            p.cross_entropy_weight = v;
        }
        if let Some(v) = &self.optimizer {
            p.optimizer = v.clone();
        }
        if let Some(v) = &self.activation_fn_hidden {
            p.activation_fn_hidden = v.clone();
        }
        p
    }
}

/// A complete experiment description as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: String,
    pub bits_per_symbol: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preamble_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_trials: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_snr_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_checkpoints: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_words_per_snr: Option<usize>,
    pub agent1: AgentConfig,
    pub agent2: AgentConfig,
}

impl ExperimentConfig {
    pub fn new(protocol: &str, bits: u8, agent1: &str, agent2: &str) -> Self {
        ExperimentConfig {
            protocol: protocol.to_string(),
            bits_per_symbol: bits,
            train_snr_db: None,
            preamble_length: None,
            max_iterations: None,
            num_trials: None,
            base_seed: None,
            test_snr_grid: None,
            num_checkpoints: None,
            eval_words_per_snr: None,
            agent1: AgentConfig::preset_only(agent1),
            agent2: AgentConfig::preset_only(agent2),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validates and fills every default, expanding agent presets.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let protocol = ProtocolKind::parse(&self.protocol)?;
        let bits = BitsPerSymbol::new(self.bits_per_symbol)
            .map_err(|e| Error::config(e.to_string()))?;
        if self.bits_per_symbol == 1 {
            return Err(Error::config(
                "experiments run at 2..4 bits/symbol (1 is for unit tests only)".to_string(),
            ));
        }
        let scheme = ClassicScheme::for_bits(bits);
        let train_snr_db = match self.train_snr_db {
            Some(v) => v,
            None => calibration_snr_for_ber(scheme.name, 1e-2)?,
        };
        let test_snr_grid = match &self.test_snr_grid {
            Some(g) if g.is_empty() => {
                return Err(Error::config("test_snr_grid must be non-empty".to_string()))
            }
            Some(g) => g.clone(),
            None => calibration_snrs(scheme.name)?.to_vec(),
        };
        let db_off_snr = calibration_snr_for_ber(scheme.name, 1e-2)?;
        if !test_snr_grid.iter().any(|&s| (s - db_off_snr).abs() < 1e-9) {
            return Err(Error::config(format!(
                "test_snr_grid must include the 1%-BER test SNR {db_off_snr} dB"
            )));
        }
        let max_iterations = match self.max_iterations {
            Some(v) if v >= 1 => v,
            Some(v) => return Err(Error::config(format!("max_iterations must be >= 1, got {v}"))),
            None => protocol.default_max_iterations(bits).ok_or_else(|| {
                Error::config(format!(
                    "no default iteration budget for {} at {} bits/symbol; set max_iterations",
                    protocol.as_str(),
                    bits.bits()
                ))
            })?,
        };
        let num_trials = self.num_trials.unwrap_or(50);
        if num_trials == 0 {
            return Err(Error::config("num_trials must be >= 1".to_string()));
        }
        let preamble_length = self.preamble_length.unwrap_or(256);
        if preamble_length == 0 {
            return Err(Error::config("preamble_length must be >= 1".to_string()));
        }
        let agent1 = self.agent1.apply(resolve_preset(&self.agent1.preset, bits, protocol)?);
        let agent2 = self.agent2.apply(resolve_preset(&self.agent2.preset, bits, protocol)?);
        if protocol == ProtocolKind::Gp
            && agent1.kind == "classic"
            && agent2.kind == "classic"
        {
            return Err(Error::unsupported(
                "gradient passing between two classic agents has no gradient path".to_string(),
            ));
        }
        Ok(ResolvedConfig {
            protocol,
            bits_per_symbol: self.bits_per_symbol,
            train_snr_db,
            preamble_length,
            max_iterations,
            num_trials,
            base_seed: self.base_seed.unwrap_or(0),
            test_snr_grid,
            num_checkpoints: self.num_checkpoints.unwrap_or(30),
            eval_words_per_snr: self.eval_words_per_snr.unwrap_or(10_000),
            db_off_snr,
            scheme: scheme.name.to_string(),
            agent1,
            agent2,
        })
    }
}

/// A validated config with every default applied and presets expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub protocol: ProtocolKind,
    pub bits_per_symbol: u8,
    pub train_snr_db: f64,
    pub preamble_length: usize,
    pub max_iterations: u64,
    pub num_trials: usize,
    pub base_seed: u64,
    pub test_snr_grid: Vec<f64>,
    pub num_checkpoints: usize,
    pub eval_words_per_snr: usize,
    pub db_off_snr: f64,
    pub scheme: String,
    pub agent1: AgentPreset,
    pub agent2: AgentPreset,
}

impl ResolvedConfig {
    pub fn bits(&self) -> BitsPerSymbol {
        BitsPerSymbol::new(self.bits_per_symbol).expect("validated")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved config serializes")
    }
}

/// One trial's records plus the end-of-training half-trip word maps
/// (agent1 -> agent2 and agent2 -> agent1, noiseless decisions).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: u64,
    pub records: Vec<TrainingRecord>,
    pub half_trip_map_12: Vec<u16>,
    pub half_trip_map_21: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub symbols_to_90pct: Option<u64>,
    pub median_symbols_to_3db: f64,
    pub final_converged_fraction: f64,
    pub convergence_curve: Vec<(u64, f64)>,
    pub ber_percentiles: Vec<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub config: ResolvedConfig,
    pub trials: Vec<TrialResult>,
    pub summary: ExperimentSummary,
}

/// Runs `config.num_trials` independent trials, trial i seeded by
/// (base_seed, i). Results are deterministic for a given config and
/// independent of the parallelism degree.
pub fn run_experiment(config: &ResolvedConfig, parallelism: Option<usize>) -> Result<ResultSet> {
    run_experiment_opts(config, parallelism, None)
}

/// As [`run_experiment`], optionally warm-starting every trial's agents from
/// model checkpoints (`agent{1,2}_{mod,demod}.emk` under `warm_start`).
pub fn run_experiment_opts(
    config: &ResolvedConfig,
    parallelism: Option<usize>,
    warm_start: Option<&Path>,
) -> Result<ResultSet> {
    let baseline = crate::classic::default_baseline(&ClassicScheme::for_bits(config.bits()));
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

    let run_trial = |trial: u64| -> Result<TrialResult> {
        let mut init_rng = trial_rng(config.base_seed, trial, Stream::AgentInit);
        let bits = config.bits();
        let mut a1 = build_agent(&config.agent1, bits, &mut init_rng)?;
        let mut a2 = build_agent(&config.agent2, bits, &mut init_rng)?;
        if let Some(dir) = warm_start {
            for (i, agent) in [&mut a1, &mut a2].into_iter().enumerate() {
                let mod_path = dir.join(format!("agent{}_mod.emk", i + 1));
                if mod_path.exists() {
                    agent.modulator.set_model(crate::checkpoint::load_model(&mod_path)?)?;
                }
                let dem_path = dir.join(format!("agent{}_demod.emk", i + 1));
                if dem_path.exists() {
                    agent.demodulator.set_model(crate::checkpoint::load_model(&dem_path)?)?;
                }
            }
        }
        let train_rng = trial_rng(config.base_seed, trial, Stream::Train);
        let eval_rng = trial_rng(config.base_seed, trial, Stream::Eval);
        let (records, agents) = train([a1, a2], &setup, baseline, train_rng, eval_rng)?;
        let map12 = crate::evaluation::half_trip_word_map(&agents[0], &agents[1]);
        let map21 = crate::evaluation::half_trip_word_map(&agents[1], &agents[0]);
        Ok(TrialResult {
            trial,
            records,
            half_trip_map_12: map12.iter().map(|w| w.value()).collect(),
            half_trip_map_21: map21.iter().map(|w| w.value()).collect(),
        })
    };

    let trial_ids: Vec<u64> = (0..config.num_trials as u64).collect();
    let trials: Result<Vec<TrialResult>> = if let Some(threads) = parallelism {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| trial_ids.par_iter().map(|&t| run_trial(t)).collect())
    } else {
        trial_ids.par_iter().map(|&t| run_trial(t)).collect()
    };
    let mut trials = trials?;
    trials.sort_by_key(|t| t.trial);

    let summary = summarize(config, &trials)?;
    Ok(ResultSet { config: config.clone(), trials, summary })
}

/// Table-style summary: the smallest checkpoint symbol count at which at
/// least 90% of trials are within 3 dB of optimal, plus medians and curves.
pub fn summarize(_config: &ResolvedConfig, trials: &[TrialResult]) -> Result<ExperimentSummary> {
    let record_sets: Vec<Vec<TrainingRecord>> =
        trials.iter().map(|t| t.records.clone()).collect();
    let curve = convergence_fraction(&record_sets, 3.0)?;
    let symbols_to_90pct = symbols_to_fraction(&curve, 0.9);
    let median = median_symbols_to_threshold(&record_sets, 3.0);
    let final_frac = curve.last().map(|&(_, f)| f).unwrap_or(0.0);
    let pct = ber_percentiles(&record_sets)?;
    Ok(ExperimentSummary {
        symbols_to_90pct,
        median_symbols_to_3db: median,
        final_converged_fraction: final_frac,
        convergence_curve: curve,
        ber_percentiles: pct,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

pub const RECORDS_HEADER: &str =
    "trial,checkpoint,iteration,symbols_transmitted,snr_db,ber,n_bits,n_errors,db_off_optimal";
pub const SUMMARY_HEADER: &str = "protocol,agent1,agent2,bits_per_symbol,train_snr_db,num_trials,\
     preamble_length,max_iterations,symbols_to_90pct_converged,median_symbols_to_3db,\
     final_converged_fraction";

fn config_comment_block(config: &ResolvedConfig) -> String {
    let mut out = String::new();
    for line in config.to_toml().lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Writes records.csv and summary.csv under `dir`.
pub fn write_results(results: &ResultSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let comments = config_comment_block(&results.config);

    let mut f = std::fs::File::create(dir.join("records.csv"))?;
    write!(f, "{comments}")?;
    writeln!(f, "{RECORDS_HEADER}")?;
    for t in &results.trials {
        for (ck, r) in t.records.iter().enumerate() {
            for m in &r.per_snr {
                writeln!(
                    f,
                    "{},{},{},{},{},{:e},{},{},{}",
                    t.trial,
                    ck,
                    r.iteration,
                    r.symbols_transmitted,
                    m.snr_db,
                    m.ber(),
                    m.n_bits,
                    m.n_errors,
                    r.db_off_optimal,
                )?;
            }
        }
    }

    let mut f = std::fs::File::create(dir.join("summary.csv"))?;
    write!(f, "{comments}")?;
    writeln!(f, "{SUMMARY_HEADER}")?;
    let s = &results.summary;
    writeln!(
        f,
        "{},{},{},{},{},{},{},{},{},{},{}",
        results.config.protocol.as_str(),
        results.config.agent1.preset,
        results.config.agent2.preset,
        results.config.bits_per_symbol,
        results.config.train_snr_db,
        results.config.num_trials,
        results.config.preamble_length,
        results.config.max_iterations,
        s.symbols_to_90pct.map(|v| v.to_string()).unwrap_or_else(|| "never".to_string()),
        s.median_symbols_to_3db,
        s.final_converged_fraction,
    )?;
    Ok(())
}

/// Rows parsed back from records.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub trial: u64,
    pub checkpoint: usize,
    pub iteration: u64,
    pub symbols_transmitted: u64,
    pub snr_db: f64,
    pub ber: f64,
    pub n_bits: u64,
    pub n_errors: u64,
    pub db_off_optimal: f64,
}

pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != RECORDS_HEADER {
                return Err(Error::config(format!("unexpected records header: {line}")));
            }
            saw_header = true;
            continue;
        }
        let q: Vec<&str> = line.split(',').collect();
        if q.len() != 9 {
            return Err(Error::config(format!("bad records row: {line}")));
        }
        let pf = |s: &str| {
            s.parse::<f64>().map_err(|e| Error::config(format!("bad float '{s}': {e}")))
        };
        let pu = |s: &str| {
            s.parse::<u64>().map_err(|e| Error::config(format!("bad int '{s}': {e}")))
        };
        rows.push(RecordRow {
            trial: pu(q[0])?,
            checkpoint: pu(q[1])? as usize,
            iteration: pu(q[2])?,
            symbols_transmitted: pu(q[3])?,
            snr_db: pf(q[4])?,
            ber: pf(q[5])?,
            n_bits: pu(q[6])?,
            n_errors: pu(q[7])?,
            db_off_optimal: pf(q[8])?,
        });
    }
    if !saw_header {
        return Err(Error::config(format!("no header found in {}", path.display())));
    }
    Ok(rows)
}

/// Tidy per-SNR BER percentile CSV (snr_db,p10,p50,p90) from saved records.
pub fn plot_data_ber_curve(rows: &[RecordRow]) -> String {
    use std::collections::BTreeMap;
    let last_ckpt = rows.iter().map(|r| r.checkpoint).max().unwrap_or(0);
    let mut by_snr: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.checkpoint == last_ckpt) {
        by_snr.entry((r.snr_db * 1000.0).round() as i64).or_default().push(r.ber);
    }
    let mut out = String::from("snr_db,p10,p50,p90\n");
    for (snr_m, bers) in by_snr {
        let p10 = crate::evaluation::percentile(&bers, 10.0);
        let p50 = crate::evaluation::percentile(&bers, 50.0);
        let p90 = crate::evaluation::percentile(&bers, 90.0);
        out.push_str(&format!("{},{p10:e},{p50:e},{p90:e}\n", snr_m as f64 / 1000.0));
    }
    out
}

/// Tidy convergence-fraction CSV (symbols,fraction) from saved records.
pub fn plot_data_convergence(rows: &[RecordRow]) -> String {
    use std::collections::BTreeMap;
    // db_off_optimal repeats across the per-SNR rows of one checkpoint
    let mut by_ckpt: BTreeMap<(u64, usize), (u64, bool)> = BTreeMap::new();
    for r in rows {
        by_ckpt
            .entry((r.trial, r.checkpoint))
            .or_insert((r.symbols_transmitted, r.db_off_optimal <= 3.0));
    }
    let mut per_symbols: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (&(_, _), &(sym, ok)) in &by_ckpt {
        let e = per_symbols.entry(sym).or_insert((0, 0));
        e.0 += 1;
        if ok {
            e.1 += 1;
        }
    }
    let mut out = String::from("symbols,fraction\n");
    for (sym, (n, k)) in per_symbols {
        out.push_str(&format!("{sym},{}\n", k as f64 / n as f64));
    }
    out
}
