//! Unit-gain AWGN channel and the SNR convention.
//!
//! SNR is Es/N0 with N0 = 2*sigma^2 and unit average symbol energy, the only
//! simple convention consistent with the shipped SNR/BER calibration table
//! across all three classic schemes.

use crate::words::IqSymbol;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Signal-to-noise ratio in decibels (Es/N0 with Es normalized to 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrDb(pub f64);

/// Per-component noise standard deviation for a given SNR:
/// sigma = sqrt(1 / (2 * 10^(snr/10))).
pub fn sigma_from_snr(snr: SnrDb) -> f64 {
    (1.0 / (2.0 * 10f64.powf(snr.0 / 10.0))).sqrt()
}

/// Memoryless AWGN channel: independent Gaussian(0, sigma^2) per component.
#[derive(Debug, Clone, Copy)]
pub struct AwgnChannel {
    pub sigma: f64,
}

impl AwgnChannel {
    pub fn from_snr(snr: SnrDb) -> Self {
        AwgnChannel { sigma: sigma_from_snr(snr) }
    }

    pub fn noiseless() -> Self {
        AwgnChannel { sigma: 0.0 }
    }

    pub fn transmit<R: Rng>(&self, symbols: &[IqSymbol], rng: &mut R) -> Vec<IqSymbol> {
        symbols.iter().map(|&s| self.transmit_one(s, rng)).collect()
    }

    pub fn transmit_one<R: Rng>(&self, s: IqSymbol, rng: &mut R) -> IqSymbol {
        let nr: f64 = rng.sample(StandardNormal);
        let ni: f64 = rng.sample(StandardNormal);
        IqSymbol::new(s.re + self.sigma * nr, s.im + self.sigma * ni)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_formula() {
        assert_relative_eq!(sigma_from_snr(SnrDb(0.0)), (0.5f64).sqrt(), epsilon = 1e-12);
        assert!(sigma_from_snr(SnrDb(200.0)) < 1e-10);
    }

    #[test]
    fn zero_noise_is_identity() {
        let ch = AwgnChannel::noiseless();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = vec![IqSymbol::new(0.3, -0.7), IqSymbol::new(-1.0, 0.0)];
        let ys = ch.transmit(&xs, &mut rng);
        assert_eq!(xs, ys);
    }

    #[test]
    fn fixed_seed_reproducible() {
        let ch = AwgnChannel { sigma: 0.5 };
        let xs = vec![IqSymbol::new(0.0, 0.0); 32];
        let a = ch.transmit(&xs, &mut ChaCha8Rng::seed_from_u64(11));
        let b = ch.transmit(&xs, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    // Law-of-large-numbers oracle: mean power, zero mean, and per-component
    // variance at N = 1e6.
    #[test]
    fn noise_statistics() {
        let sigma = 0.5;
        let ch = AwgnChannel { sigma };
        let n = 1_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xs = vec![IqSymbol::new(0.0, 0.0); n];
        let ys = ch.transmit(&xs, &mut rng);

        let mean_power: f64 = ys.iter().map(|y| y.norm_sq()).sum::<f64>() / n as f64;
        assert_relative_eq!(mean_power, 2.0 * sigma * sigma, max_relative = 0.01);

        let mean_re: f64 = ys.iter().map(|y| y.re).sum::<f64>() / n as f64;
        let mean_im: f64 = ys.iter().map(|y| y.im).sum::<f64>() / n as f64;
        let bound = 5.0 * sigma / (n as f64).sqrt();
        assert!(mean_re.abs() < bound, "mean_re = {mean_re}");
        assert!(mean_im.abs() < bound, "mean_im = {mean_im}");

        let var_re: f64 =
            ys.iter().map(|y| (y.re - mean_re) * (y.re - mean_re)).sum::<f64>() / n as f64;
        let var_im: f64 =
            ys.iter().map(|y| (y.im - mean_im) * (y.im - mean_im)).sum::<f64>() / n as f64;
        assert_relative_eq!(var_re, sigma * sigma, max_relative = 0.01);
        assert_relative_eq!(var_im, sigma * sigma, max_relative = 0.01);
    }
}
