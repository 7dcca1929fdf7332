//! Training-loop integration: checkpoint schedules, symbol accounting, and
//! the degenerate supervised case.

use echomod_core::channel::SnrDb;
use echomod_core::classic::{default_baseline, ClassicScheme};
use echomod_core::evaluation::first_crossing_symbols;
use echomod_core::presets::{build_agent, resolve_preset};
use echomod_core::protocols::{
    checkpoint_schedule, step, train, ProtocolKind, TrainSetup, TrainerState,
};
use echomod_core::runner::{trial_rng, ExperimentConfig, Stream};
use echomod_core::words::{BitsPerSymbol, SymbolWord};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn agent(preset: &str, protocol: ProtocolKind, seed: u64) -> echomod_core::agents::Agent {
    let b = BitsPerSymbol::new(2).unwrap();
    build_agent(&resolve_preset(preset, b, protocol).unwrap(), b, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
}

// GP QPSK runs 100 iterations of 256 symbols by default: the final symbols
// counter reads 25600 and the checkpoints are strictly increasing and
// roughly log-spaced.
#[test]
fn gp_default_budget_symbol_accounting() {
    let cfg = ExperimentConfig::new("gp", 2, "neural-fast", "neural-fast");
    let resolved = cfg.resolve().unwrap();
    assert_eq!(resolved.max_iterations, 100);
    assert_eq!(resolved.preamble_length, 256);

    let setup = TrainSetup {
        protocol: ProtocolKind::Gp,
        train_snr: SnrDb(resolved.train_snr_db),
        preamble_len: 256,
        max_iterations: 100,
        checkpoints: checkpoint_schedule(100, 30),
        test_snrs: vec![SnrDb(8.4)],
        db_off_snr: SnrDb(8.4),
        eval_words_per_snr: 200,
    };
    let baseline = default_baseline(&ClassicScheme::qpsk());
    let (records, _) = train(
        [agent("neural-fast", ProtocolKind::Gp, 1), agent("neural-fast", ProtocolKind::Gp, 2)],
        &setup,
        baseline,
        trial_rng(1, 0, Stream::Train),
        trial_rng(1, 0, Stream::Eval),
    )
    .unwrap();
    assert_eq!(records.last().unwrap().symbols_transmitted, 25_600);
    assert!(records.windows(2).all(|w| {
        w[1].symbols_transmitted > w[0].symbols_transmitted
    }));

    // EPP QPSK default budget is 3000 iterations.
    let cfg = ExperimentConfig::new("epp", 2, "neural-fast", "neural-fast");
    assert_eq!(cfg.resolve().unwrap().max_iterations, 3000);
}

// Degenerate noiseless ESP with a classic speaker: the learning echoer's
// demodulator sees exact constellation points with true labels and reaches
// 100% training accuracy.
#[test]
fn esp_degenerate_supervised_convergence() {
    let classic = agent("classic", ProtocolKind::Esp, 1);
    let learner = agent("neural-fast", ProtocolKind::Esp, 2);
    let mut st = TrainerState::new(
        [classic, learner],
        256,
        SnrDb(200.0),
        trial_rng(11, 0, Stream::Train),
    );
    for _ in 0..400 {
        step(&mut st, ProtocolKind::Esp).unwrap();
    }
    let scheme = ClassicScheme::qpsk();
    let words: Vec<SymbolWord> = (0..4u16).map(SymbolWord).collect();
    let tx = scheme.points().to_vec();
    let _ = words;
    let decided = st.agents[1].demodulator.decide(&tx);
    for (i, w) in decided.iter().enumerate() {
        assert_eq!(w.value() as usize, i, "echoer demod failed on classic point {i}");
    }
}

// A strong centering penalty pulls the trained constellation's center to
// the origin.
#[test]
fn centering_loss_shrinks_constellation_center() {
    let b = BitsPerSymbol::new(2).unwrap();
    let mut preset = resolve_preset("neural-fast", b, ProtocolKind::Epp).unwrap();
    preset.lambda_center = 125.0;
    let a1 = build_agent(&preset, b, &mut ChaCha8Rng::seed_from_u64(61)).unwrap();
    let a2 = build_agent(&preset, b, &mut ChaCha8Rng::seed_from_u64(62)).unwrap();
    let mut st = TrainerState::new([a1, a2], 256, SnrDb(8.4), trial_rng(61, 0, Stream::Train));
    for _ in 0..800 {
        step(&mut st, ProtocolKind::Epp).unwrap();
    }
    for a in &st.agents {
        let c = a.modulator.constellation_center();
        assert!(
            c.norm_sq().sqrt() < 0.1,
            "constellation center {:?} should sit near the origin",
            c
        );
    }
}

// A short noisy EPP run produces finite records with the documented shape
// and a first crossing once converged (smoke-level sanity of the full loop).
#[test]
fn epp_short_run_record_shape() {
    let setup = TrainSetup {
        protocol: ProtocolKind::Epp,
        train_snr: SnrDb(8.4),
        preamble_len: 256,
        max_iterations: 400,
        checkpoints: checkpoint_schedule(400, 14),
        test_snrs: vec![SnrDb(13.0), SnrDb(8.4)],
        db_off_snr: SnrDb(8.4),
        eval_words_per_snr: 2000,
    };
    let baseline = default_baseline(&ClassicScheme::qpsk());
    let (records, agents) = train(
        [agent("neural-fast", ProtocolKind::Epp, 5), agent("neural-fast", ProtocolKind::Epp, 6)],
        &setup,
        baseline,
        trial_rng(5, 0, Stream::Train),
        trial_rng(5, 0, Stream::Eval),
    )
    .unwrap();
    assert_eq!(records.len(), checkpoint_schedule(400, 14).len());
    for r in &records {
        assert_eq!(r.per_snr.len(), 2);
        assert!(r.per_snr.iter().all(|m| m.n_bits > 0));
    }
    // energy constraint still holds on the trained modulators
    for a in &agents {
        assert!(a.modulator.mean_constellation_power() <= 1.0 + 1e-9);
    }
    // the tail of the convergence distribution sits near 300 iterations
    assert!(first_crossing_symbols(&records, 3.0).is_some());
}
