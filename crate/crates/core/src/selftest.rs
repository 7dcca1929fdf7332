//! Built-in verification: finite-difference gradient checks on every
//! analytic backward pass, and the training-loop invariant suite. Exposed
//! through the `selftest` command.

use crate::agents::Agent;
use crate::channel::{AwgnChannel, SnrDb};
use crate::classic::ClassicScheme;
use crate::grad_check::{central_diff, max_rel_err};
use crate::presets::{build_agent, resolve_preset};
use crate::protocols::{step, ProtocolKind, TrainerState};
use crate::runner::{run_experiment, trial_rng, ExperimentConfig, Stream};
use crate::words::{BitsPerSymbol, IqSymbol, SymbolWord};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), passed, detail }
}

const GRAD_TOL: f64 = 1e-4;

/// Inflates the output layer of a learned modulator so the energy constraint
/// activates, without saturating the hidden tanh units.
fn scale_output(a: &mut Agent, k: f64) {
    use crate::agents::Model;
    match a.modulator.model_mut() {
        Some(Model::Neural(net)) => {
            let widths = net.widths().to_vec();
            let n = net.params().len();
            let l = widths.len();
            let tail = widths[l - 2] * widths[l - 1] + widths[l - 1];
            for p in &mut net.params_mut()[n - tail..] {
                *p *= k;
            }
        }
        Some(Model::Poly(m)) => {
            for p in m.params_mut() {
                *p *= k;
            }
        }
        None => {}
    }
}

fn agent(preset: &str, bits: u8, protocol: ProtocolKind, seed: u64) -> Agent {
    let b = BitsPerSymbol::new(bits).unwrap();
    let p = resolve_preset(preset, b, protocol).unwrap();
    build_agent(&p, b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Finite-difference checks for every gradient path: policy loss (theta and
/// sigma, with the energy constraint active and a centering term),
/// cross-entropy (neural and poly-with-L1), and the end-to-end GP path
/// through a fixed noise realization, for both learned and classic
/// demodulators.
pub fn gradient_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E1F);

    // -- policy loss through the active constraint and centering term
    for (label, preset) in [("neural", "neural-fast"), ("poly", "poly-fast")] {
        let mut a = agent(preset, 2, ProtocolKind::Epp, 11);
        scale_output(&mut a, 12.0); // push mean power above the cap
        a.modulator.hp.lambda_center = 0.5;
        let words: Vec<SymbolWord> = (0..8u16).map(|i| SymbolWord(i % 4)).collect();
        let sent = a.modulator.modulate_train(&words, &mut rng);
        let rewards: Vec<f64> = (0..8).map(|i| -((i % 3) as f64)).collect();

        let (analytic, d_sigma) =
            a.modulator.policy_gradients(&sent, &words, &rewards).unwrap();
        let params0 = a.modulator.model().unwrap().params().to_vec();
        let hp = a.modulator.hp.clone();
        let sigma0 = a.modulator.sigma;
        let bits = a.modulator.bits;
        let make_probe = |params: &[f64], sigma: f64| {
            let mut probe = agent(preset, 2, ProtocolKind::Epp, 11);
            probe.modulator.hp = hp.clone();
            probe.modulator.sigma = sigma;
            probe.modulator.model_mut().unwrap().params_mut().copy_from_slice(params);
            debug_assert_eq!(probe.modulator.bits, bits);
            probe
        };
        let numeric = central_diff(
            &mut |p: &[f64]| make_probe(p, sigma0).modulator.policy_loss(&sent, &words, &rewards),
            &params0,
            1e-6,
        );
        let err = max_rel_err(&analytic, &numeric);
        out.push(check(
            &format!("policy-gradient-theta-{label}"),
            err < GRAD_TOL,
            format!("max rel err {err:.2e} (constraint active, centering on)"),
        ));

        let h = 1e-6;
        let lp = make_probe(&params0, sigma0 + h).modulator.policy_loss(&sent, &words, &rewards);
        let lm = make_probe(&params0, sigma0 - h).modulator.policy_loss(&sent, &words, &rewards);
        let numeric_sigma = (lp - lm) / (2.0 * h);
        let err = max_rel_err(&[d_sigma], &[numeric_sigma]);
        out.push(check(
            &format!("policy-gradient-sigma-{label}"),
            err < GRAD_TOL,
            format!("max rel err {err:.2e}"),
        ));
    }

    // -- cross-entropy gradients (neural plain, poly with L1)
    for (label, preset) in [("neural", "neural-fast"), ("poly-l1", "poly-fast")] {
        let a = agent(preset, 2, ProtocolKind::Epp, 13);
        let received: Vec<IqSymbol> = (0..6)
            .map(|_| IqSymbol::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let targets: Vec<SymbolWord> = (0..6u16).map(|i| SymbolWord(i % 4)).collect();

        let analytic = demod_param_gradients(&a, &received, &targets);
        let params0 = a.demodulator.model().unwrap().params().to_vec();
        let hp = a.demodulator.hp.clone();
        let numeric = central_diff(
            &mut |p: &[f64]| {
                let mut probe = agent(preset, 2, ProtocolKind::Epp, 13);
                probe.demodulator.hp = hp.clone();
                probe.demodulator.model_mut().unwrap().params_mut().copy_from_slice(p);
                probe.demodulator.ce_loss(&received, &targets)
            },
            &params0,
            1e-6,
        );
        let err = max_rel_err(&analytic, &numeric);
        out.push(check(
            &format!("cross-entropy-gradient-{label}"),
            err < GRAD_TOL,
            format!("max rel err {err:.2e}"),
        ));
    }

    // -- GP end-to-end: modulator means -> fixed noise -> demod CE loss,
    //    gradient with respect to the modulator parameters
    for (label, demod_preset) in [("learned-demod", "neural-fast"), ("classic-demod", "classic")] {
        let mut speaker = agent("neural-fast", 2, ProtocolKind::Gp, 17);
        scale_output(&mut speaker, 12.0); // active constraint on the GP path too
        let echoer = agent(demod_preset, 2, ProtocolKind::Gp, 18);
        let words: Vec<SymbolWord> = (0..8u16).map(|i| SymbolWord(i % 4)).collect();
        let noise: Vec<IqSymbol> = (0..8)
            .map(|_| IqSymbol::new(0.27 * rng.random_range(-2.0..2.0), 0.27 * rng.random_range(-2.0..2.0)))
            .collect();

        let loss_for = |params: &[f64]| {
            let mut probe = agent("neural-fast", 2, ProtocolKind::Gp, 17);
            probe.modulator.model_mut().unwrap().params_mut().copy_from_slice(params);
            let means = probe.modulator.modulate_eval(&words);
            let received: Vec<IqSymbol> = means
                .iter()
                .zip(&noise)
                .map(|(m, n)| IqSymbol::new(m.re + n.re, m.im + n.im))
                .collect();
            echoer.demodulator.ce_loss(&received, &words)
        };

        let means = speaker.modulator.modulate_eval(&words);
        let received: Vec<IqSymbol> = means
            .iter()
            .zip(&noise)
            .map(|(m, n)| IqSymbol::new(m.re + n.re, m.im + n.im))
            .collect();
        let d_input = echoer.demodulator.input_gradients(&received, &words).unwrap();
        let analytic = speaker.modulator.gp_gradients(&words, &d_input).unwrap();
        let params0 = speaker.modulator.model().unwrap().params().to_vec();
        let numeric = central_diff(&mut |p: &[f64]| loss_for(p), &params0, 1e-6);
        let err = max_rel_err(&analytic, &numeric);
        out.push(check(
            &format!("gp-end-to-end-gradient-{label}"),
            err < GRAD_TOL,
            format!("max rel err {err:.2e}"),
        ));
    }

    out
}

fn demod_param_gradients(a: &Agent, received: &[IqSymbol], targets: &[SymbolWord]) -> Vec<f64> {
    // recover dL/dphi by diffing one Adam-free probe: recompute via the
    // public pieces (logits -> softmax -> dz -> backward) mirrored here
    let k = a.demodulator.bits.alphabet_size();
    let model = a.demodulator.model().unwrap();
    let x: Vec<f64> = received.iter().flat_map(|r| [r.re, r.im]).collect();
    let (logits, cache) = model.forward(&x, received.len()).unwrap();
    let mut dz = Vec::with_capacity(logits.len());
    for (row, t) in logits.chunks(k).zip(targets) {
        let q = crate::classic::softmax(row);
        let ti = t.value() as usize;
        let f = q[ti] / (q[ti] + a.demodulator.hp.lambda_prob);
        for (j, &qj) in q.iter().enumerate() {
            let delta = if j == ti { 1.0 } else { 0.0 };
            dz.push(a.demodulator.hp.cross_entropy_weight * f * (qj - delta));
        }
    }
    let (mut grads, _) = model.backward(&cache, &dz).unwrap();
    if a.demodulator.hp.lambda_l1 > 0.0 {
        for (g, &w) in grads.iter_mut().zip(model.params()) {
            *g += a.demodulator.hp.lambda_l1 * if w == 0.0 { 0.0 } else { w.signum() };
        }
    }
    grads
}

/// Training-loop invariants over one full EPP run plus per-protocol checks:
/// energy cap, sigma clamping, role alternation, update isolation, and
/// determinism under fixed seed and varying parallelism.
pub fn invariant_checks(epp_iterations: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();

    // -- one EPP run, checking the energy cap and sigma clamp at every step
    let a1 = agent("neural-fast", 2, ProtocolKind::Epp, 21);
    let a2 = agent("neural-fast", 2, ProtocolKind::Epp, 22);
    let mut st = TrainerState::new(
        [a1, a2],
        256,
        SnrDb(8.4),
        trial_rng(21, 0, Stream::Train),
    );
    let mut power_ok = true;
    let mut sigma_ok = true;
    let mut alternation_ok = true;
    let mut worst_power: f64 = 0.0;
    let mut last_speaker = 1usize;
    for _ in 0..epp_iterations {
        if st.speaker == last_speaker {
            alternation_ok = false;
        }
        last_speaker = st.speaker;
        step(&mut st, ProtocolKind::Epp).unwrap();
        for ag in &st.agents {
            let p = ag.modulator.mean_constellation_power();
            let cap = ag.modulator.hp.max_amplitude * ag.modulator.hp.max_amplitude;
            worst_power = worst_power.max(p - cap);
            if p > cap + 1e-9 {
                power_ok = false;
            }
            if ag.modulator.sigma < ag.modulator.hp.min_std - 1e-12
                || ag.modulator.sigma > ag.modulator.hp.max_std + 1e-12
            {
                sigma_ok = false;
            }
        }
    }
    out.push(check(
        "energy-constraint-every-step",
        power_ok,
        format!("max power excess over cap {worst_power:.2e} across {epp_iterations} iterations"),
    ));
    out.push(check("sigma-clamped-every-step", sigma_ok, "min_std <= sigma <= max_std".into()));
    out.push(check("role-alternation", alternation_ok, "speaker alternates every iteration".into()));

    // -- update isolation for each protocol (one step each)
    let mut isolation_ok = true;
    let mut isolation_detail = String::new();
    for kind in [ProtocolKind::Epp, ProtocolKind::Esp, ProtocolKind::Lp, ProtocolKind::Gp] {
        let mut st = TrainerState::new(
            [agent("neural-fast", 2, kind, 31), agent("neural-fast", 2, kind, 32)],
            64,
            SnrDb(8.4),
            trial_rng(33, 0, Stream::Train),
        );
        let before: Vec<Vec<f64>> = vec![
            st.agents[0].modulator.param_snapshot(),
            st.agents[0].demodulator.param_snapshot(),
            st.agents[1].modulator.param_snapshot(),
            st.agents[1].demodulator.param_snapshot(),
        ];
        step(&mut st, kind).unwrap();
        let changed = [
            st.agents[0].modulator.param_snapshot() != before[0],
            st.agents[0].demodulator.param_snapshot() != before[1],
            st.agents[1].modulator.param_snapshot() != before[2],
            st.agents[1].demodulator.param_snapshot() != before[3],
        ];
        let want = match kind {
            ProtocolKind::Epp => [true, true, false, false],
            _ => [true, false, false, true],
        };
        if changed != want {
            isolation_ok = false;
            isolation_detail
                .push_str(&format!("{kind:?}: changed {changed:?}, expected {want:?}; "));
        }
    }
    out.push(check(
        "update-isolation-per-protocol",
        isolation_ok,
        if isolation_detail.is_empty() { "speaker/echoer component deltas as specified".into() } else { isolation_detail },
    ));

    // -- determinism: same config twice, and parallelism 1 vs 2
    let mut cfg = ExperimentConfig::new("epp", 2, "neural-fast", "neural-fast");
    cfg.num_trials = Some(3);
    cfg.max_iterations = Some(12);
    cfg.num_checkpoints = Some(5);
    cfg.eval_words_per_snr = Some(400);
    cfg.preamble_length = Some(64);
    cfg.base_seed = Some(5150);
    let resolved = cfg.resolve().unwrap();
    let r1 = run_experiment(&resolved, Some(1)).unwrap();
    let r2 = run_experiment(&resolved, Some(2)).unwrap();
    let r3 = run_experiment(&resolved, Some(1)).unwrap();
    out.push(check(
        "determinism-fixed-seed",
        r1 == r3,
        "identical result sets across repeated runs".into(),
    ));
    out.push(check(
        "determinism-parallelism-invariant",
        r1 == r2,
        "identical result sets at parallelism 1 and 2".into(),
    ));

    // -- noiseless classic pair is exact under every echo data path
    let mut exact_ok = true;
    for kind in [ProtocolKind::Epp, ProtocolKind::Esp, ProtocolKind::Lp] {
        let mut st = TrainerState::new(
            [agent("classic", 2, kind, 1), agent("classic", 2, kind, 2)],
            128,
            SnrDb(200.0),
            trial_rng(7, 0, Stream::Train),
        );
        for _ in 0..3 {
            step(&mut st, kind).unwrap();
        }
        let mut eval_rng = trial_rng(7, 0, Stream::Eval);
        let m = crate::evaluation::round_trip_ber(
            &st.agents[0],
            &st.agents[1],
            SnrDb(200.0),
            2000,
            &mut eval_rng,
        );
        if m.n_errors != 0 {
            exact_ok = false;
        }
    }
    // GP rejects the fully fixed pair instead of running it
    let mut st = TrainerState::new(
        [agent("classic", 2, ProtocolKind::Gp, 1), agent("classic", 2, ProtocolKind::Gp, 2)],
        128,
        SnrDb(200.0),
        trial_rng(7, 0, Stream::Train),
    );
    let gp_rejects = step(&mut st, ProtocolKind::Gp).is_err();
    out.push(check(
        "noiseless-classic-round-trip-exact",
        exact_ok && gp_rejects,
        "EPP/ESP/LP exact at sigma=0; GP rejects the no-gradient pairing".into(),
    ));

    out
}

/// Classic-scheme startup validation: the shipped calibration SNRs are
/// consistent with the baseline oracle to within the documented tolerances
/// at the 1%-BER column (the training operating point).
pub fn calibration_spot_checks() -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (scheme, snr) in [("qpsk", 8.4), ("8psk", 13.2), ("16qam", 15.0)] {
        let s = ClassicScheme::by_name(scheme).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xCA11B);
        let point = crate::classic::mc_round_trip_ber(&s, SnrDb(snr), 2000, 1_000_000, 10_000_000, &mut rng);
        let rel = (point.ber - 1e-2).abs() / 1e-2;
        out.push(check(
            &format!("calibration-1pct-{scheme}"),
            rel < 0.20,
            format!("round-trip BER {:.4e} at {snr} dB (rel dev {rel:.3} from 1%)", point.ber),
        ));
    }
    out
}

/// The whole selftest battery.
pub fn run_all() -> Vec<CheckResult> {
    let mut out = gradient_checks();
    out.extend(invariant_checks(50));
    out.extend(calibration_spot_checks());
    // channel statistics spot check
    let ch = AwgnChannel { sigma: 0.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    let n = 200_000;
    let ys = ch.transmit(&vec![IqSymbol::new(0.0, 0.0); n], &mut rng);
    let mean_power: f64 = ys.iter().map(|y| y.norm_sq()).sum::<f64>() / n as f64;
    let rel = (mean_power - 0.5).abs() / 0.5;
    out.push(check(
        "awgn-noise-power",
        rel < 0.02,
        format!("mean |noise|^2 = {mean_power:.4} vs 2 sigma^2 = 0.5"),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_checks_pass() {
        for c in gradient_checks() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn invariant_checks_pass() {
        for c in invariant_checks(20) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
