//! Round-trip BER measurement, the dB-off-optimal metric, and
//! trial-population statistics.

use crate::agents::Agent;
use crate::channel::{AwgnChannel, SnrDb};
use crate::classic::BaselineCurve;
use crate::error::{Error, Result};
use crate::words::{bit_errors, random_preamble, BitsPerSymbol};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerMeasurement {
    pub snr_db: f64,
    pub n_bits: u64,
    pub n_errors: u64,
}

impl BerMeasurement {
    pub fn ber(&self) -> f64 {
        self.n_errors as f64 / self.n_bits as f64
    }
}

/// Per-checkpoint snapshot of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub iteration: u64,
    pub symbols_transmitted: u64,
    pub per_snr: Vec<BerMeasurement>,
    /// dB-off-optimal at the 1%-BER test SNR; +inf when not converged.
    pub db_off_optimal: f64,
}

/// One round-trip pass: agent1 modulates (means), channel, agent2 decides and
/// re-modulates (means), channel, agent1 decides; errors counted against the
/// original words. Both channel uses draw independent noise.
pub fn round_trip_ber<R: Rng>(
    agent1: &Agent,
    agent2: &Agent,
    snr: SnrDb,
    n_words: usize,
    rng: &mut R,
) -> BerMeasurement {
    let bits = agent1.modulator.bits;
    debug_assert_eq!(bits, agent2.modulator.bits);
    let ch = AwgnChannel::from_snr(snr);
    let p = random_preamble(rng, n_words, bits).expect("n_words > 0");
    let (n_bits, n_errors) = round_trip_errors(agent1, agent2, &ch, p.words(), bits, rng);
    BerMeasurement { snr_db: snr.0, n_bits, n_errors }
}

fn round_trip_errors<R: Rng>(
    agent1: &Agent,
    agent2: &Agent,
    ch: &AwgnChannel,
    words: &[crate::words::SymbolWord],
    bits: BitsPerSymbol,
    rng: &mut R,
) -> (u64, u64) {
    let s1 = agent1.modulator.modulate_eval(words);
    let y1 = ch.transmit(&s1, rng);
    let mid = agent2.demodulator.decide(&y1);
    let s2 = agent2.modulator.modulate_eval(&mid);
    let y2 = ch.transmit(&s2, rng);
    let out = agent1.demodulator.decide(&y2);
    let errs = bit_errors(words, &out, bits).expect("equal lengths");
    ((words.len() as u64) * bits.bits() as u64, errs.total)
}

/// Adaptive-budget measurement: keeps drawing words until at least
/// `min_errors` errors are observed or `max_bits` bits are spent.
pub fn round_trip_ber_adaptive<R: Rng>(
    agent1: &Agent,
    agent2: &Agent,
    snr: SnrDb,
    min_errors: u64,
    max_bits: u64,
    rng: &mut R,
) -> BerMeasurement {
    let bits = agent1.modulator.bits;
    let ch = AwgnChannel::from_snr(snr);
    let mut n_bits = 0u64;
    let mut n_errors = 0u64;
    const CHUNK: usize = 8192;
    while n_errors < min_errors && n_bits < max_bits {
        let p = random_preamble(rng, CHUNK, bits).unwrap();
        let (b, e) = round_trip_errors(agent1, agent2, &ch, p.words(), bits, rng);
        n_bits += b;
        n_errors += e;
    }
    BerMeasurement { snr_db: snr.0, n_bits, n_errors }
}

/// Extra SNR the baseline would need to match the measured BER:
/// test_snr - snr_at_which_baseline_achieves(measured.ber).
///
/// A zero-error measurement is clamped to ber = 1/(2 n_bits) before the
/// log-space inversion. Returns +inf ("not converged") when the measured BER
/// is at or above the baseline BER at the lowest tabulated SNR.
pub fn db_off_optimal(measured: &BerMeasurement, test_snr: SnrDb, baseline: &BaselineCurve) -> f64 {
    let ber = if measured.n_errors == 0 {
        1.0 / (2.0 * measured.n_bits as f64)
    } else {
        measured.ber()
    };
    match baseline.snr_at_ber(ber) {
        Some(snr) => test_snr.0 - snr,
        None => f64::INFINITY,
    }
}

/// Fraction of trials whose record at each checkpoint is within
/// `threshold_db` of optimal. A trial counts at a checkpoint by its
/// measurement at that checkpoint only (no latching).
pub fn convergence_fraction(
    trials: &[Vec<TrainingRecord>],
    threshold_db: f64,
) -> Result<Vec<(u64, f64)>> {
    if trials.is_empty() {
        return Err(Error::invalid("convergence_fraction needs at least one trial"));
    }
    let n_ckpt = trials[0].len();
    if trials.iter().any(|t| t.len() != n_ckpt) {
        return Err(Error::invalid("trials have differing checkpoint counts"));
    }
    Ok((0..n_ckpt)
        .map(|k| {
            let sym = trials[0][k].symbols_transmitted;
            let frac = trials.iter().filter(|t| t[k].db_off_optimal <= threshold_db).count()
                as f64
                / trials.len() as f64;
            (sym, frac)
        })
        .collect())
}

/// First checkpoint symbol count at which a single trial is within
/// `threshold_db`, or None if it never is.
pub fn first_crossing_symbols(records: &[TrainingRecord], threshold_db: f64) -> Option<u64> {
    records
        .iter()
        .find(|r| r.db_off_optimal <= threshold_db)
        .map(|r| r.symbols_transmitted)
}

/// Smallest checkpoint symbol count with fraction >= `target`, or None.
pub fn symbols_to_fraction(curve: &[(u64, f64)], target: f64) -> Option<u64> {
    curve.iter().find(|&&(_, f)| f >= target).map(|&(s, _)| s)
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Median across trials of the first-crossing symbol count; non-converged
/// trials count as +inf.
pub fn median_symbols_to_threshold(trials: &[Vec<TrainingRecord>], threshold_db: f64) -> f64 {
    let xs: Vec<f64> = trials
        .iter()
        .map(|t| {
            first_crossing_symbols(t, threshold_db).map(|s| s as f64).unwrap_or(f64::INFINITY)
        })
        .collect();
    percentile(&xs, 50.0)
}

/// Per-SNR (p10, p50, p90) of final-checkpoint BER across trials.
pub fn ber_percentiles(trials: &[Vec<TrainingRecord>]) -> Result<Vec<(f64, f64, f64, f64)>> {
    if trials.is_empty() || trials.iter().any(|t| t.is_empty()) {
        return Err(Error::invalid("ber_percentiles needs non-empty trials"));
    }
    let n_snr = trials[0].last().unwrap().per_snr.len();
    let mut out = Vec::with_capacity(n_snr);
    for k in 0..n_snr {
        let snr = trials[0].last().unwrap().per_snr[k].snr_db;
        let bers: Vec<f64> =
            trials.iter().map(|t| t.last().unwrap().per_snr[k].ber()).collect();
        out.push((
            snr,
            percentile(&bers, 10.0),
            percentile(&bers, 50.0),
            percentile(&bers, 90.0),
        ));
    }
    Ok(out)
}

/// The noiseless word map w -> D_b(M_a(w)). For a converged echo pair this
/// may be a non-identity permutation; only the round trip is guaranteed.
pub fn half_trip_word_map(a: &Agent, b: &Agent) -> Vec<crate::words::SymbolWord> {
    let bits = a.modulator.bits;
    let words: Vec<crate::words::SymbolWord> =
        (0..bits.alphabet_size() as u16).map(crate::words::SymbolWord).collect();
    let tx = a.modulator.modulate_eval(&words);
    b.demodulator.decide(&tx)
}
