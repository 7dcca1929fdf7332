//! Fixed Gray-coded schemes (BPSK, QPSK, 8PSK, 16QAM), the shipped SNR/BER
//! calibration table, and the baseline round-trip BER curve used by the
//! dB-off-optimal metric.

use crate::channel::{sigma_from_snr, SnrDb};
use crate::error::{Error, Result};
use crate::words::{BitsPerSymbol, IqSymbol, SymbolWord};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::Write;
use std::path::Path;

/// A fixed constellation with Gray labeling and unit average power.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicScheme {
    pub name: &'static str,
    pub bits: BitsPerSymbol,
    points: Vec<IqSymbol>,
}

impl ClassicScheme {
    pub fn bpsk() -> Self {
        ClassicScheme {
            name: "bpsk",
            bits: BitsPerSymbol::new(1).unwrap(),
            points: vec![IqSymbol::new(1.0, 0.0), IqSymbol::new(-1.0, 0.0)],
        }
    }

    /// Gray over quadrants: high bit selects the I sign, low bit the Q sign.
    pub fn qpsk() -> Self {
        let c = FRAC_1_SQRT_2;
        let point = |w: u16| {
            let i = if w & 0b10 == 0 { c } else { -c };
            let q = if w & 0b01 == 0 { c } else { -c };
            IqSymbol::new(i, q)
        };
        ClassicScheme {
            name: "qpsk",
            bits: BitsPerSymbol::new(2).unwrap(),
            points: (0..4).map(point).collect(),
        }
    }

    /// Gray around the circle: position k carries label k ^ (k >> 1).
    pub fn psk8() -> Self {
        let mut points = vec![IqSymbol::new(0.0, 0.0); 8];
        for k in 0..8u16 {
            let label = (k ^ (k >> 1)) as usize;
            let theta = 2.0 * PI * k as f64 / 8.0;
            points[label] = IqSymbol::new(theta.cos(), theta.sin());
        }
        ClassicScheme {
            name: "8psk",
            bits: BitsPerSymbol::new(3).unwrap(),
            points,
        }
    }

    /// Per-axis Gray on a 4x4 grid, unit average power (levels +-1, +-3 scaled
    /// by 1/sqrt(10)). High bit pair selects the I level, low pair the Q level.
    pub fn qam16() -> Self {
        let d = 1.0 / 10f64.sqrt();
        // Gray-labeled 4-PAM: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
        let level = |g: u16| match g {
            0b00 => -3.0 * d,
            0b01 => -d,
            0b11 => d,
            _ => 3.0 * d,
        };
        let points = (0..16u16)
            .map(|w| IqSymbol::new(level((w >> 2) & 0b11), level(w & 0b11)))
            .collect();
        ClassicScheme {
            name: "16qam",
            bits: BitsPerSymbol::new(4).unwrap(),
            points,
        }
    }

    /// The reference scheme for a modulation order: BPSK, QPSK, 8PSK, 16QAM.
    pub fn for_bits(b: BitsPerSymbol) -> Self {
        match b.bits() {
            1 => Self::bpsk(),
            2 => Self::qpsk(),
            3 => Self::psk8(),
            _ => Self::qam16(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "bpsk" => Ok(Self::bpsk()),
            "qpsk" => Ok(Self::qpsk()),
            "8psk" => Ok(Self::psk8()),
            "16qam" => Ok(Self::qam16()),
            other => Err(Error::config(format!("unknown scheme '{other}'"))),
        }
    }

    pub fn points(&self) -> &[IqSymbol] {
        &self.points
    }

    pub fn point(&self, w: SymbolWord) -> IqSymbol {
        self.points[w.value() as usize]
    }
}

/// Table lookup modulation. Errors on out-of-range words.
pub fn modulate_classic(scheme: &ClassicScheme, words: &[SymbolWord]) -> Result<Vec<IqSymbol>> {
    let m = scheme.bits.alphabet_size();
    words
        .iter()
        .map(|w| {
            if (w.value() as usize) < m {
                Ok(scheme.points[w.value() as usize])
            } else {
                Err(Error::invalid(format!(
                    "word {} out of range for {}",
                    w.value(),
                    scheme.name
                )))
            }
        })
        .collect()
}

/// Nearest-neighbor decision for one received sample. Exact ties go to the
/// lowest word value.
pub fn decide_nearest(scheme: &ClassicScheme, r: IqSymbol) -> SymbolWord {
    let mut best = 0usize;
    let mut best_d = r.distance_sq(scheme.points[0]);
    for (w, &p) in scheme.points.iter().enumerate().skip(1) {
        let d = r.distance_sq(p);
        if d < best_d {
            best = w;
            best_d = d;
        }
    }
    SymbolWord(best as u16)
}

/// Hard nearest-neighbor demodulation.
pub fn demodulate_classic(scheme: &ClassicScheme, received: &[IqSymbol]) -> Vec<SymbolWord> {
    received.iter().map(|&r| decide_nearest(scheme, r)).collect()
}

/// Softmax of the negative squared distances; differentiable in the received
/// sample, with argmax equal to the hard nearest-neighbor decision.
pub fn demodulate_classic_soft(scheme: &ClassicScheme, received: &[IqSymbol]) -> Vec<Vec<f64>> {
    received
        .iter()
        .map(|&r| {
            let neg_d2: Vec<f64> = scheme.points.iter().map(|&p| -r.distance_sq(p)).collect();
            softmax(&neg_d2)
        })
        .collect()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// SNR (dB) columns at which each scheme's round-trip BER hits
/// 0.001%, 0.01%, 0.1%, 1% and 10%, as shipped calibration constants.
pub const TABLE_BER_TARGETS: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

pub fn calibration_snrs(scheme_name: &str) -> Result<[f64; 5]> {
    match scheme_name {
        "qpsk" => Ok([13.0, 12.0, 10.4, 8.4, 4.2]),
        "8psk" => Ok([18.2, 17.0, 15.4, 13.2, 8.4]),
        "16qam" => Ok([20.0, 18.8, 17.2, 15.0, 10.4]),
        other => Err(Error::config(format!("no calibration table for '{other}'"))),
    }
}

/// The SNR at which the scheme's baseline reaches a tabulated round-trip BER.
pub fn calibration_snr_for_ber(scheme_name: &str, ber: f64) -> Result<f64> {
    let snrs = calibration_snrs(scheme_name)?;
    TABLE_BER_TARGETS
        .iter()
        .position(|&t| (t - ber).abs() < 1e-12)
        .map(|i| snrs[i])
        .ok_or_else(|| Error::config(format!("{ber} is not a tabulated BER target")))
}

/// Closed-form round-trip BER where available (BPSK, QPSK, 16QAM).
/// 8PSK Gray bit error has no simple exact form; use Monte Carlo there.
pub fn closed_form_round_trip_ber(scheme_name: &str, snr: SnrDb) -> Option<f64> {
    let snr_lin = 10f64.powf(snr.0 / 10.0);
    let half = match scheme_name {
        "bpsk" => q_func((2.0 * snr_lin).sqrt()),
        "qpsk" => q_func(snr_lin.sqrt()),
        "16qam" => {
            let a = (snr_lin / 5.0).sqrt();
            (3.0 * q_func(a) + 2.0 * q_func(3.0 * a) - q_func(5.0 * a)) / 4.0
        }
        _ => return None,
    };
    Some(2.0 * half * (1.0 - half))
}

/// Gaussian tail probability Q(x).
pub fn q_func(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// One measured or computed point of the baseline curve. Closed-form rows
/// carry n_bits = n_errors = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePoint {
    pub snr_db: f64,
    pub ber: f64,
    pub n_bits: u64,
    pub n_errors: u64,
}

/// Round-trip BER of classic-vs-classic agents over an SNR grid, with the
/// monotone log-space inversion used by dB-off-optimal.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCurve {
    pub scheme: String,
    pub points: Vec<BaselinePoint>,
}

/// Default grid for dB-off interpolation: 0 to 22 dB in 0.25 dB steps.
pub fn default_baseline_grid() -> Vec<f64> {
    (0..=88).map(|i| i as f64 * 0.25).collect()
}

/// Monte-Carlo round-trip BER of the scheme against itself at one SNR.
/// Runs until both `min_errors` errors and `min_bits` bits are reached,
/// capped at `max_bits` bits.
pub fn mc_round_trip_ber(
    scheme: &ClassicScheme,
    snr: SnrDb,
    min_errors: u64,
    min_bits: u64,
    max_bits: u64,
    rng: &mut ChaCha8Rng,
) -> BaselinePoint {
    let sigma = sigma_from_snr(snr);
    let b = scheme.bits.bits() as u64;
    let m = scheme.bits.alphabet_size() as u16;
    let mut n_bits = 0u64;
    let mut n_errors = 0u64;
    const CHUNK: usize = 4096;
    while (n_errors < min_errors || n_bits < min_bits) && n_bits < max_bits {
        for _ in 0..CHUNK {
            let w = SymbolWord(rng.random_range(0..m));
            let mut s = scheme.point(w);
            let nr: f64 = rng.sample(StandardNormal);
            let ni: f64 = rng.sample(StandardNormal);
            s = IqSymbol::new(s.re + sigma * nr, s.im + sigma * ni);
            let mid = decide_nearest(scheme, s);
            let mut e = scheme.point(mid);
            let nr: f64 = rng.sample(StandardNormal);
            let ni: f64 = rng.sample(StandardNormal);
            e = IqSymbol::new(e.re + sigma * nr, e.im + sigma * ni);
            let out = decide_nearest(scheme, e);
            n_errors += (w.0 ^ out.0).count_ones() as u64;
            n_bits += b;
        }
    }
    BaselinePoint { snr_db: snr.0, ber: n_errors as f64 / n_bits as f64, n_bits, n_errors }
}

/// Computes the baseline round-trip BER curve: closed form where available,
/// Monte Carlo (>= 1e7 bits or >= 100 errors) otherwise. The grid must be
/// strictly increasing.
pub fn baseline_ber_curve(scheme: &ClassicScheme, snr_grid: &[f64]) -> Result<BaselineCurve> {
    if snr_grid.is_empty() {
        return Err(Error::invalid("empty SNR grid"));
    }
    if snr_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("SNR grid must be strictly increasing"));
    }
    let points: Vec<BaselinePoint> = if closed_form_round_trip_ber(scheme.name, SnrDb(0.0)).is_some()
    {
        snr_grid
            .iter()
            .map(|&snr| BaselinePoint {
                snr_db: snr,
                ber: closed_form_round_trip_ber(scheme.name, SnrDb(snr)).unwrap(),
                n_bits: 0,
                n_errors: 0,
            })
            .collect()
    } else {
        snr_grid
            .par_iter()
            .map(|&snr| {
                // deterministic per-point stream, independent of grid layout
                let mut rng = ChaCha8Rng::seed_from_u64(0x8B5E_1000);
                rng.set_stream((snr * 1000.0).round() as u64);
                mc_round_trip_ber(scheme, SnrDb(snr), 100, 0, 10_000_000, &mut rng)
            })
            .collect()
    };
    Ok(BaselineCurve { scheme: scheme.name.to_string(), points })
}

impl BaselineCurve {
    /// BER at the lowest tabulated SNR (the curve's worst point).
    pub fn max_ber(&self) -> f64 {
        self.points.first().map(|p| p.ber).unwrap_or(1.0)
    }

    /// Inverts the curve: the SNR at which the baseline achieves `ber`.
    /// Monotone linear interpolation in (snr_db, log10 ber) space; linear
    /// extrapolation below the lowest tabulated BER. Returns None when `ber`
    /// is at or above the BER at the lowest tabulated SNR.
    pub fn snr_at_ber(&self, ber: f64) -> Option<f64> {
        // Enforce monotone non-increasing BER (Monte-Carlo noise can wiggle)
        // and drop exact zeros, which cannot be placed in log space.
        let mut xs: Vec<(f64, f64)> = Vec::with_capacity(self.points.len());
        let mut last = f64::INFINITY;
        for p in &self.points {
            if p.ber <= 0.0 {
                continue;
            }
            let b = p.ber.min(last);
            last = b;
            xs.push((p.snr_db, b.log10()));
        }
        if xs.len() < 2 {
            return None;
        }
        let lb = ber.log10();
        if lb >= xs[0].1 {
            return None;
        }
        if lb <= xs.last().unwrap().1 {
            // extrapolate from the last strictly-decreasing segment
            let (x1, y1) = *xs.last().unwrap();
            let (x0, y0) = xs[..xs.len() - 1]
                .iter()
                .rev()
                .find(|&&(_, y)| y > y1)
                .copied()
                .unwrap_or(xs[xs.len() - 2]);
            if y1 >= y0 {
                return Some(x1);
            }
            return Some(x1 + (x1 - x0) * (lb - y1) / (y1 - y0));
        }
        // find bracketing segment: y decreasing in index
        for w in xs.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            if lb <= y0 && lb >= y1 {
                if y1 == y0 {
                    return Some(x0);
                }
                return Some(x0 + (x1 - x0) * (lb - y0) / (y1 - y0));
            }
        }
        None
    }

    pub const CACHE_HEADER: &'static str = "scheme,snr_db,ber,n_bits,n_errors";

    /// Writes the curve as comma-separated text with a documented header row.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "{}", Self::CACHE_HEADER)?;
        for p in &self.points {
            writeln!(f, "{},{},{:e},{},{}", self.scheme, p.snr_db, p.ber, p.n_bits, p.n_errors)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BaselineCurve> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        if header != Self::CACHE_HEADER {
            return Err(Error::config(format!("bad baseline cache header in {}", path.display())));
        }
        let mut scheme = String::new();
        let mut points = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::config(format!("bad baseline cache row: {line}")));
            }
            scheme = fields[0].to_string();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::config(format!("bad number '{s}' in cache: {e}")))
            };
            points.push(BaselinePoint {
                snr_db: parse(fields[1])?,
                ber: parse(fields[2])?,
                n_bits: fields[3]
                    .parse()
                    .map_err(|e| Error::config(format!("bad n_bits: {e}")))?,
                n_errors: fields[4]
                    .parse()
                    .map_err(|e| Error::config(format!("bad n_errors: {e}")))?,
            });
        }
        Ok(BaselineCurve { scheme, points })
    }

    /// Loads the curve from `cache_dir` if present, otherwise computes it on
    /// the default grid and caches it.
    pub fn load_or_compute(scheme: &ClassicScheme, cache_dir: &Path) -> Result<BaselineCurve> {
        let path = cache_dir.join(format!("baseline_{}.csv", scheme.name));
        if path.exists() {
            let curve = Self::load(&path)?;
            if curve.scheme == scheme.name && !curve.points.is_empty() {
                return Ok(curve);
            }
        }
        let curve = baseline_ber_curve(scheme, &default_baseline_grid())?;
        curve.save(&path)?;
        Ok(curve)
    }
}

use std::sync::OnceLock;

static BASELINES: [OnceLock<BaselineCurve>; 3] =
    [OnceLock::new(), OnceLock::new(), OnceLock::new()];

/// Process-wide baseline curve on the default grid (computed once per scheme).
pub fn default_baseline(scheme: &ClassicScheme) -> &'static BaselineCurve {
    let slot = match scheme.name {
        "qpsk" => &BASELINES[0],
        "8psk" => &BASELINES[1],
        "16qam" => &BASELINES[2],
        other => panic!("no default baseline for scheme '{other}'"),
    };
    slot.get_or_init(|| baseline_ber_curve(scheme, &default_baseline_grid()).unwrap())
}
