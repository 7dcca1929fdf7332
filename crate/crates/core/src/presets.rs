//! Named agent hyperparameter bundles, copied from the experiment tables,
//! and agent construction.
//!
//! Echo-family presets (`neural-fast`, `neural-slow`, `poly-fast`,
//! `poly-slow`) apply to LP/ESP/EPP. Gradient passing was tuned separately,
//! so a GP experiment resolves `neural-*`/`poly-*` to the GP tables instead.
//! `neural-snr` is the variant used by the training-SNR sweeps. The 8PSK and
//! 16QAM neural bundles (one per order) resolve from `neural-fast` at those
//! modulation orders.

use crate::agents::{
    Agent, AgentKind, Demodulator, DemodulatorHp, Model, Modulator, ModulatorHp,
};
use crate::classic::ClassicScheme;
use crate::error::{Error, Result};
use crate::mlp::init_mlp;
use crate::poly::{init_poly, PolyFeatures};
use crate::protocols::ProtocolKind;
use crate::words::BitsPerSymbol;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Fully resolved hyperparameters for one agent. Field names mirror the
/// configuration keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPreset {
    pub preset: String,
    pub kind: String,
    pub hidden_layers: Vec<usize>,
    /// Demodulator polynomial degree; the modulator always uses the unique
    /// maximal multilinear expansion of its bit inputs.
    pub degree_polynomial: u8,
    pub stepsize_mu: f64,
    pub stepsize_sigma: f64,
    pub stepsize_cross_entropy: f64,
    pub initial_std: f64,
    pub min_std: f64,
    pub max_std: f64,
    pub max_amplitude: f64,
    pub restrict_energy: u8,
    pub lambda_prob: f64,
    pub lambda_l1: f64,
    pub lambda_center: f64,
    pub cross_entropy_weight: f64,
    pub optimizer: String,
    pub activation_fn_hidden: String,
}

impl AgentPreset {
    fn base(preset: &str, kind: AgentKind) -> Self {
        AgentPreset {
            preset: preset.to_string(),
            kind: kind.as_str().to_string(),
            hidden_layers: vec![],
            degree_polynomial: 1,
            stepsize_mu: 0.0,
            stepsize_sigma: 0.0,
            stepsize_cross_entropy: 0.0,
            initial_std: 0.0,
            min_std: 0.0,
            max_std: 0.0,
            max_amplitude: 1.0,
            restrict_energy: 1,
            lambda_prob: 0.0,
            lambda_l1: 0.0,
            lambda_center: 0.0,
            cross_entropy_weight: 1.0,
            optimizer: "Adam".to_string(),
            activation_fn_hidden: "tanh".to_string(),
        }
    }

    pub fn agent_kind(&self) -> Result<AgentKind> {
        match self.kind.as_str() {
            "classic" => Ok(AgentKind::Classic),
            "neural" => Ok(AgentKind::Neural),
            "poly" => Ok(AgentKind::Poly),
            other => Err(Error::config(format!("unknown agent kind '{other}'"))),
        }
    }
}

/// Resolves a preset name for a protocol and modulation order.
pub fn resolve_preset(
    name: &str,
    bits: BitsPerSymbol,
    protocol: ProtocolKind,
) -> Result<AgentPreset> {
    let b = bits.bits();
    match (name, protocol) {
        ("classic", _) => Ok(AgentPreset::base("classic", AgentKind::Classic)),

        (n @ ("neural-fast" | "neural-slow"), ProtocolKind::Gp) => {
            if b != 2 {
                return Err(Error::config(format!(
                    "GP neural hyperparameters are defined for 2 bits/symbol, got {b}"
                )));
            }
            let mut p = AgentPreset::base(n, AgentKind::Neural);
            p.hidden_layers = vec![50];
            p.stepsize_mu = 3e-2;
            p.stepsize_cross_entropy = 3e-2;
            Ok(p)
        }
        (n @ ("poly-fast" | "poly-slow"), ProtocolKind::Gp) => {
            if b != 2 {
                return Err(Error::config(format!(
                    "GP poly hyperparameters are defined for 2 bits/symbol, got {b}"
                )));
            }
            let mut p = AgentPreset::base(n, AgentKind::Poly);
            p.degree_polynomial = 1;
            p.stepsize_mu = 1e-1;
            p.stepsize_cross_entropy = 1e-1;
            p.lambda_l1 = 1e-3;
            Ok(p)
        }

        ("neural-fast", _) => {
            let mut p = AgentPreset::base("neural-fast", AgentKind::Neural);
            p.lambda_prob = 1e-10;
            p.max_std = 1.0;
            match b {
                2 => {
                    p.hidden_layers = vec![50];
                    p.min_std = 1e-1;
                    p.initial_std = 3e-1;
                    p.stepsize_mu = 8e-3;
                    p.stepsize_sigma = 1e-4;
                    p.stepsize_cross_entropy = 5e-3;
                }
                3 => {
                    p.hidden_layers = vec![100];
                    p.min_std = 1e-2;
                    p.initial_std = 2e-1;
                    p.stepsize_mu = 8e-3;
                    p.stepsize_sigma = 4e-3;
                    p.stepsize_cross_entropy = 1e-2;
                }
                4 => {
                    p.hidden_layers = vec![200];
                    p.min_std = 1e-2;
                    p.initial_std = 1e-1;
                    p.stepsize_mu = 7e-4;
                    p.stepsize_sigma = 5e-4;
                    p.stepsize_cross_entropy = 1e-3;
                }
                _ => {
                    return Err(Error::config(format!(
                        "no neural hyperparameters for {b} bits/symbol"
                    )))
                }
            }
            Ok(p)
        }
        ("neural-slow", _) => {
            if b != 2 {
                return Err(Error::config(
                    "neural-slow is defined for 2 bits/symbol".to_string(),
                ));
            }
            let mut p = AgentPreset::base("neural-slow", AgentKind::Neural);
            p.hidden_layers = vec![50];
            p.lambda_prob = 1e-10;
            p.max_std = 1.0;
            p.min_std = 1e-1;
            p.initial_std = 3e-1;
            p.stepsize_mu = 6e-4;
            p.stepsize_sigma = 1e-4;
            p.stepsize_cross_entropy = 1e-3;
            Ok(p)
        }
        ("neural-snr", _) => {
            if b != 2 {
                return Err(Error::config(
                    "neural-snr is defined for 2 bits/symbol".to_string(),
                ));
            }
            let mut p = AgentPreset::base("neural-snr", AgentKind::Neural);
            p.hidden_layers = vec![50];
            p.lambda_prob = 1e-10;
            p.max_std = 1.0;
            p.min_std = 1e-1;
            p.initial_std = 3e-1;
            p.stepsize_mu = 1e-3;
            p.stepsize_sigma = 1e-4;
            p.stepsize_cross_entropy = 1e-3;
            Ok(p)
        }
        (n @ ("poly-fast" | "poly-slow"), _) => {
            if b != 2 {
                return Err(Error::config(format!(
                    "{n} is defined for 2 bits/symbol"
                )));
            }
            let mut p = AgentPreset::base(n, AgentKind::Poly);
            p.degree_polynomial = 1;
            p.max_std = 2.0;
            p.min_std = 2e-1;
            p.initial_std = 1.0;
            p.lambda_l1 = 1e-3;
            p.stepsize_cross_entropy = 1e-2;
            if n == "poly-fast" {
                p.stepsize_mu = 4e-2;
                p.stepsize_sigma = 4e-3;
            } else {
                p.stepsize_mu = 3e-2;
                p.stepsize_sigma = 3e-3;
            }
            Ok(p)
        }
        (other, _) => Err(Error::config(format!("unknown preset '{other}'"))),
    }
}

pub fn known_presets() -> &'static [&'static str] {
    &["classic", "neural-fast", "neural-slow", "neural-snr", "poly-fast", "poly-slow"]
}

/// Builds an agent from a resolved preset. Modulator parameters are drawn
/// before demodulator parameters from the given generator.
pub fn build_agent<R: Rng>(preset: &AgentPreset, bits: BitsPerSymbol, rng: &mut R) -> Result<Agent> {
    if preset.optimizer != "Adam" {
        return Err(Error::config(format!("unsupported optimizer '{}'", preset.optimizer)));
    }
    if preset.activation_fn_hidden != "tanh" {
        return Err(Error::config(format!(
            "unsupported activation '{}'",
            preset.activation_fn_hidden
        )));
    }
    let kind = preset.agent_kind()?;
    let mod_hp = ModulatorHp {
        stepsize_mu: preset.stepsize_mu,
        stepsize_sigma: preset.stepsize_sigma,
        initial_std: preset.initial_std,
        min_std: preset.min_std,
        max_std: preset.max_std,
        max_amplitude: preset.max_amplitude,
        restrict_energy: preset.restrict_energy != 0,
        lambda_center: preset.lambda_center,
    };
    let demod_hp = DemodulatorHp {
        stepsize_cross_entropy: preset.stepsize_cross_entropy,
        cross_entropy_weight: preset.cross_entropy_weight,
        lambda_prob: preset.lambda_prob,
        lambda_l1: match kind {
            AgentKind::Poly => preset.lambda_l1,
            _ => 0.0,
        },
    };
    let agent = match kind {
        AgentKind::Classic => {
            let scheme = ClassicScheme::for_bits(bits);
            Agent {
                modulator: Modulator::classic(scheme.clone()),
                demodulator: Demodulator::classic(scheme),
                kind,
                preset: preset.preset.clone(),
            }
        }
        AgentKind::Neural => {
            let mut mod_widths = vec![bits.bits() as usize];
            mod_widths.extend(&preset.hidden_layers);
            mod_widths.push(2);
            let mut dem_widths = vec![2usize];
            dem_widths.extend(&preset.hidden_layers);
            dem_widths.push(bits.alphabet_size());
            let mod_model = Model::Neural(init_mlp(&mod_widths, rng));
            let dem_model = Model::Neural(init_mlp(&dem_widths, rng));
            Agent {
                modulator: Modulator::learned(bits, mod_model, mod_hp),
                demodulator: Demodulator::learned(bits, dem_model, demod_hp),
                kind,
                preset: preset.preset.clone(),
            }
        }
        AgentKind::Poly => {
            let mod_model =
                Model::Poly(init_poly(PolyFeatures::max_bits(bits.bits()), 2, rng));
            let dem_model = Model::Poly(init_poly(
                PolyFeatures::Iq { degree: preset.degree_polynomial },
                bits.alphabet_size(),
                rng,
            ));
            Agent {
                modulator: Modulator::learned(bits, mod_model, mod_hp),
                demodulator: Demodulator::learned(bits, dem_model, demod_hp),
                kind,
                preset: preset.preset.clone(),
            }
        }
    };
    Ok(agent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn echo_and_gp_presets_differ() {
        let b = BitsPerSymbol::new(2).unwrap();
        let echo = resolve_preset("neural-fast", b, ProtocolKind::Epp).unwrap();
        let gp = resolve_preset("neural-fast", b, ProtocolKind::Gp).unwrap();
        assert_eq!(echo.stepsize_mu, 8e-3);
        assert_eq!(gp.stepsize_mu, 3e-2);
        assert_eq!(echo.lambda_prob, 1e-10);
        assert_eq!(gp.lambda_prob, 0.0);
    }

    #[test]
    fn neural_l1_is_absent() {
        let b = BitsPerSymbol::new(2).unwrap();
        for proto in [ProtocolKind::Epp, ProtocolKind::Gp] {
            let p = resolve_preset("neural-fast", b, proto).unwrap();
            assert_eq!(p.lambda_l1, 0.0);
        }
        let p = resolve_preset("poly-fast", b, ProtocolKind::Epp).unwrap();
        assert_eq!(p.lambda_l1, 1e-3);
    }

    #[test]
    fn per_order_neural_bundles() {
        let p3 = resolve_preset("neural-fast", BitsPerSymbol::new(3).unwrap(), ProtocolKind::Epp)
            .unwrap();
        assert_eq!(p3.hidden_layers, vec![100]);
        assert_eq!(p3.stepsize_sigma, 4e-3);
        let p4 = resolve_preset("neural-fast", BitsPerSymbol::new(4).unwrap(), ProtocolKind::Epp)
            .unwrap();
        assert_eq!(p4.hidden_layers, vec![200]);
        assert_eq!(p4.stepsize_mu, 7e-4);
    }

    #[test]
    fn unknown_preset_rejected() {
        let b = BitsPerSymbol::new(2).unwrap();
        assert!(resolve_preset("neural-medium", b, ProtocolKind::Epp).is_err());
    }

    #[test]
    fn build_agents_deterministic() {
        let b = BitsPerSymbol::new(2).unwrap();
        let preset = resolve_preset("poly-fast", b, ProtocolKind::Epp).unwrap();
        let a1 = build_agent(&preset, b, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let a2 = build_agent(&preset, b, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a1.param_snapshot(), a2.param_snapshot());
        assert_eq!(a1.modulator.sigma, 1.0); // poly initial_std
    }
}
