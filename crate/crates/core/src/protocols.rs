//! The four training protocols as single-round-trip step functions, plus the
//! alternating training loop with log-spaced evaluation checkpoints.

use crate::agents::Agent;
use crate::channel::{AwgnChannel, SnrDb};
use crate::classic::BaselineCurve;
use crate::error::{Error, Result};
use crate::evaluation::{db_off_optimal, round_trip_ber, TrainingRecord};
use crate::words::{bit_errors, random_preamble, BitsPerSymbol};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolKind {
    /// Gradient passing: half-trip, cross-entropy gradients shared out of band.
    Gp,
    /// Loss passing: half-trip, per-word bit losses shared out of band.
    Lp,
    /// Echo with shared preamble: round-trip feedback, supervised echoer demod.
    Esp,
    /// Echo with private preamble: round-trip feedback only.
    Epp,
}

impl ProtocolKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gp" => Ok(ProtocolKind::Gp),
            "lp" => Ok(ProtocolKind::Lp),
            "esp" => Ok(ProtocolKind::Esp),
            "epp" => Ok(ProtocolKind::Epp),
            other => Err(Error::config(format!("unknown protocol '{other}'"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::Gp => "gp",
            ProtocolKind::Lp => "lp",
            ProtocolKind::Esp => "esp",
            ProtocolKind::Epp => "epp",
        }
    }

    /// Default iteration budgets per modulation order (experiment settings
    /// table). None where the source experiments define no setting.
    pub fn default_max_iterations(self, bits: BitsPerSymbol) -> Option<u64> {
        match (self, bits.bits()) {
            (ProtocolKind::Gp, 2) => Some(100),
            (ProtocolKind::Lp, 2) => Some(600),
            (ProtocolKind::Esp, 2) => Some(2500),
            (ProtocolKind::Esp, 3) => Some(6000),
            (ProtocolKind::Esp, 4) => Some(8000),
            (ProtocolKind::Epp, 2) => Some(3000),
            (ProtocolKind::Epp, 3) => Some(10_000),
            (ProtocolKind::Epp, 4) => Some(20_000),
            _ => None,
        }
    }
}

/// One trial's sequential training state. The speaker alternates every
/// iteration; the symbols counter adds one preamble length per iteration.
pub struct TrainerState {
    pub agents: [Agent; 2],
    pub speaker: usize,
    pub iteration: u64,
    pub symbols_transmitted: u64,
    pub preamble_len: usize,
    pub channel: AwgnChannel,
    pub rng: ChaCha8Rng,
}

impl TrainerState {
    pub fn new(
        agents: [Agent; 2],
        preamble_len: usize,
        train_snr: SnrDb,
        rng: ChaCha8Rng,
    ) -> Self {
        TrainerState {
            agents,
            speaker: 0,
            iteration: 0,
            symbols_transmitted: 0,
            preamble_len,
            channel: AwgnChannel::from_snr(train_snr),
            rng,
        }
    }

    pub fn bits(&self) -> BitsPerSymbol {
        self.agents[0].modulator.bits
    }

    fn split(&mut self) -> (&mut Agent, &mut Agent) {
        let (a, b) = self.agents.split_at_mut(1);
        if self.speaker == 0 {
            (&mut a[0], &mut b[0])
        } else {
            (&mut b[0], &mut a[0])
        }
    }

    fn finish_iteration(&mut self) {
        self.speaker = 1 - self.speaker;
        self.iteration += 1;
        self.symbols_transmitted += self.preamble_len as u64;
    }
}

/// Echo with private preamble: the preamble is known only to the speaker.
/// After the round trip, the speaker's modulator takes a policy update with
/// rewards -bit_errors(p, p_echoed) and the speaker's demodulator trains on
/// the echoed symbols with the original words as labels. The echoer is not
/// updated.
pub fn step_epp(state: &mut TrainerState) -> Result<()> {
    let bits = state.bits();
    let n = state.preamble_len;
    let p = random_preamble(&mut state.rng, n, bits)?;
    let ch = state.channel;
    let mut rng = state.rng.clone();
    let (speaker, echoer) = state.split();

    let s = speaker.modulator.modulate_train(p.words(), &mut rng);
    let s_hat = ch.transmit(&s, &mut rng);
    let p_hat = echoer.demodulator.decide(&s_hat);
    let echo_tx = echoer.modulator.modulate_train(&p_hat, &mut rng);
    let s_tilde = ch.transmit(&echo_tx, &mut rng);
    let p_tilde = speaker.demodulator.decide(&s_tilde);

    let errs = bit_errors(p.words(), &p_tilde, bits)?;
    let rewards: Vec<f64> = errs.per_word.iter().map(|&e| -(e as f64)).collect();
    speaker.modulator.policy_update(&s, p.words(), &rewards)?;
    speaker.demodulator.update(&s_tilde, p.words())?;

    state.rng = rng;
    state.finish_iteration();
    Ok(())
}

/// Echo with shared preamble: the echoer's demodulator trains on the first
/// half-trip with the true words; the speaker's modulator takes the policy
/// update from the round-trip bit errors. The speaker's demodulator is not
/// updated.
pub fn step_esp(state: &mut TrainerState) -> Result<()> {
    let bits = state.bits();
    let n = state.preamble_len;
    let p = random_preamble(&mut state.rng, n, bits)?;
    let ch = state.channel;
    let mut rng = state.rng.clone();
    let (speaker, echoer) = state.split();

    let s = speaker.modulator.modulate_train(p.words(), &mut rng);
    let s_hat = ch.transmit(&s, &mut rng);
    let p_hat = echoer.demodulator.decide(&s_hat);
    echoer.demodulator.update(&s_hat, p.words())?;
    let echo_tx = echoer.modulator.modulate_train(&p_hat, &mut rng);
    let s_tilde = ch.transmit(&echo_tx, &mut rng);
    let p_tilde = speaker.demodulator.decide(&s_tilde);

    let errs = bit_errors(p.words(), &p_tilde, bits)?;
    let rewards: Vec<f64> = errs.per_word.iter().map(|&e| -(e as f64)).collect();
    speaker.modulator.policy_update(&s, p.words(), &rewards)?;

    state.rng = rng;
    state.finish_iteration();
    Ok(())
}

/// Loss passing: half-trip only. The echoer's demodulator trains on the true
/// words; the per-word bit losses are handed back out of band and drive the
/// speaker's policy update.
pub fn step_lp(state: &mut TrainerState) -> Result<()> {
    let bits = state.bits();
    let n = state.preamble_len;
    let p = random_preamble(&mut state.rng, n, bits)?;
    let ch = state.channel;
    let mut rng = state.rng.clone();
    let (speaker, echoer) = state.split();

    let s = speaker.modulator.modulate_train(p.words(), &mut rng);
    let s_hat = ch.transmit(&s, &mut rng);
    let p_hat = echoer.demodulator.decide(&s_hat);
    echoer.demodulator.update(&s_hat, p.words())?;

    let losses = bit_errors(&p_hat, p.words(), bits)?;
    let rewards: Vec<f64> = losses.per_word.iter().map(|&e| -(e as f64)).collect();
    speaker.modulator.policy_update(&s, p.words(), &rewards)?;

    state.rng = rng;
    state.finish_iteration();
    Ok(())
}

/// Gradient passing: half-trip. The speaker emits means directly (no
/// sampling); the echoer's cross-entropy gradient propagates back through the
/// channel (identity jacobian) and the energy constraint into the speaker's
/// modulator.
pub fn step_gp(state: &mut TrainerState) -> Result<()> {
    let bits = state.bits();
    let n = state.preamble_len;
    {
        let speaker_ix = state.speaker;
        let speaker = &state.agents[speaker_ix];
        let echoer = &state.agents[1 - speaker_ix];
        if speaker.modulator.is_fixed() && echoer.demodulator.is_fixed() {
            return Err(Error::unsupported(
                "gradient passing with a fixed modulator and fixed demodulator has no gradient path"
                    .to_string(),
            ));
        }
    }
    let p = random_preamble(&mut state.rng, n, bits)?;
    let ch = state.channel;
    let mut rng = state.rng.clone();
    let (speaker, echoer) = state.split();

    let s = speaker.modulator.modulate_eval(p.words());
    let s_hat = ch.transmit(&s, &mut rng);
    let d_input = echoer.demodulator.update_with_input_grads(&s_hat, p.words())?;
    speaker.modulator.gp_update(p.words(), &d_input)?;

    state.rng = rng;
    state.finish_iteration();
    Ok(())
}

pub fn step(state: &mut TrainerState, kind: ProtocolKind) -> Result<()> {
    match kind {
        ProtocolKind::Gp => step_gp(state),
        ProtocolKind::Lp => step_lp(state),
        ProtocolKind::Esp => step_esp(state),
        ProtocolKind::Epp => step_epp(state),
    }
}

/// Approximately log-spaced checkpoint iterations in [1, max_iter],
/// deduplicated, strictly increasing, always ending at max_iter.
pub fn checkpoint_schedule(max_iter: u64, n: usize) -> Vec<u64> {
    assert!(max_iter >= 1);
    let n = n.max(1);
    let mut out: Vec<u64> = Vec::with_capacity(n);
    let log_max = (max_iter as f64).ln();
    for k in 0..n {
        let f = if n == 1 { 1.0 } else { k as f64 / (n - 1) as f64 };
        let it = (f * log_max).exp().round() as u64;
        let it = it.clamp(1, max_iter);
        if out.last() != Some(&it) {
            out.push(it);
        }
    }
    if out.last() != Some(&max_iter) {
        out.push(max_iter);
    }
    out
}

/// Everything `train` needs besides the agents and generators.
pub struct TrainSetup {
    pub protocol: ProtocolKind,
    pub train_snr: SnrDb,
    pub preamble_len: usize,
    pub max_iterations: u64,
    pub checkpoints: Vec<u64>,
    pub test_snrs: Vec<SnrDb>,
    /// The grid SNR where dB-off-optimal is computed (the 1%-BER column).
    pub db_off_snr: SnrDb,
    pub eval_words_per_snr: usize,
}

/// Runs the alternating training loop, pausing at the checkpoints to measure
/// round-trip BER over the test grid (evaluation symbols are not counted and
/// use the separate evaluation generator). Returns the checkpoint records and
/// the trained agents.
pub fn train(
    agents: [Agent; 2],
    setup: &TrainSetup,
    baseline: &BaselineCurve,
    train_rng: ChaCha8Rng,
    mut eval_rng: ChaCha8Rng,
) -> Result<(Vec<TrainingRecord>, [Agent; 2])> {
    let mut state = TrainerState::new(agents, setup.preamble_len, setup.train_snr, train_rng);
    let mut records = Vec::with_capacity(setup.checkpoints.len());
    let mut next_ckpt = 0usize;
    for it in 1..=setup.max_iterations {
        step(&mut state, setup.protocol)?;
        debug_assert_eq!(state.iteration, it);
        if next_ckpt < setup.checkpoints.len() && setup.checkpoints[next_ckpt] == it {
            next_ckpt += 1;
            records.push(evaluate_checkpoint(&state, setup, baseline, &mut eval_rng));
        }
    }
    Ok((records, state.agents))
}

fn evaluate_checkpoint(
    state: &TrainerState,
    setup: &TrainSetup,
    baseline: &BaselineCurve,
    eval_rng: &mut ChaCha8Rng,
) -> TrainingRecord {
    let mut per_snr = Vec::with_capacity(setup.test_snrs.len());
    let mut db_off = f64::INFINITY;
    for &snr in &setup.test_snrs {
        let m = round_trip_ber(
            &state.agents[0],
            &state.agents[1],
            snr,
            setup.eval_words_per_snr,
            eval_rng,
        );
        if (snr.0 - setup.db_off_snr.0).abs() < 1e-9 {
            db_off = db_off_optimal(&m, snr, baseline);
        }
        per_snr.push(m);
    }
    TrainingRecord {
        iteration: state.iteration,
        symbols_transmitted: state.symbols_transmitted,
        per_snr,
        db_off_optimal: db_off,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{build_agent, resolve_preset};
    use rand::SeedableRng;

    fn agent(preset: &str, bits: u8, protocol: ProtocolKind, seed: u64) -> Agent {
        let b = BitsPerSymbol::new(bits).unwrap();
        let p = resolve_preset(preset, b, protocol).unwrap();
        build_agent(&p, b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn noiseless_state(a: Agent, b: Agent) -> TrainerState {
        TrainerState::new([a, b], 64, SnrDb(200.0), ChaCha8Rng::seed_from_u64(9))
    }

    #[test]
    fn classic_pair_is_stable_under_echo_protocols() {
        for kind in [ProtocolKind::Epp, ProtocolKind::Esp, ProtocolKind::Lp] {
            let mut st = noiseless_state(
                agent("classic", 2, kind, 1),
                agent("classic", 2, kind, 2),
            );
            let before: Vec<f64> =
                st.agents.iter().flat_map(|a| a.param_snapshot()).collect();
            for _ in 0..4 {
                step(&mut st, kind).unwrap();
            }
            let after: Vec<f64> = st.agents.iter().flat_map(|a| a.param_snapshot()).collect();
            assert_eq!(before, after, "{kind:?} mutated a fixed pair");
            assert_eq!(st.iteration, 4);
            assert_eq!(st.symbols_transmitted, 4 * 64);
        }
    }

    #[test]
    fn gp_rejects_pair_without_gradient_path() {
        let mut st = noiseless_state(
            agent("classic", 2, ProtocolKind::Gp, 1),
            agent("classic", 2, ProtocolKind::Gp, 2),
        );
        assert!(matches!(
            step(&mut st, ProtocolKind::Gp),
            Err(Error::UnsupportedConfiguration(_))
        ));
    }

    #[test]
    fn gp_runs_with_classic_demodulator() {
        let mut st = noiseless_state(
            agent("neural-fast", 2, ProtocolKind::Gp, 1),
            agent("classic", 2, ProtocolKind::Gp, 2),
        );
        let before = st.agents[0].modulator.param_snapshot();
        step(&mut st, ProtocolKind::Gp).unwrap();
        assert_ne!(st.agents[0].modulator.param_snapshot(), before);
        // classic echoer untouched by construction (no parameters)
        assert!(st.agents[1].is_fixed());
    }

    #[test]
    fn role_alternation() {
        let mut st = noiseless_state(
            agent("neural-fast", 2, ProtocolKind::Epp, 1),
            agent("neural-fast", 2, ProtocolKind::Epp, 2),
        );
        let mut speakers = Vec::new();
        for _ in 0..4 {
            speakers.push(st.speaker);
            step(&mut st, ProtocolKind::Epp).unwrap();
        }
        assert_eq!(speakers, vec![0, 1, 0, 1]);
    }

    // Update isolation: exactly the protocol-specified components change.
    #[test]
    fn update_isolation_per_protocol() {
        for kind in [ProtocolKind::Epp, ProtocolKind::Esp, ProtocolKind::Lp, ProtocolKind::Gp] {
            let mut st = TrainerState::new(
                [
                    agent("neural-fast", 2, kind, 1),
                    agent("neural-fast", 2, kind, 2),
                ],
                64,
                SnrDb(8.4),
                ChaCha8Rng::seed_from_u64(5),
            );
            let sp_mod = st.agents[0].modulator.param_snapshot();
            let sp_dem = st.agents[0].demodulator.param_snapshot();
            let ec_mod = st.agents[1].modulator.param_snapshot();
            let ec_dem = st.agents[1].demodulator.param_snapshot();
            step(&mut st, kind).unwrap();

            let sp_mod_changed = st.agents[0].modulator.param_snapshot() != sp_mod;
            let sp_dem_changed = st.agents[0].demodulator.param_snapshot() != sp_dem;
            let ec_mod_changed = st.agents[1].modulator.param_snapshot() != ec_mod;
            let ec_dem_changed = st.agents[1].demodulator.param_snapshot() != ec_dem;

            assert!(sp_mod_changed, "{kind:?}: speaker modulator must update");
            assert!(!ec_mod_changed, "{kind:?}: echoer modulator must not update");
            match kind {
                ProtocolKind::Epp => {
                    assert!(sp_dem_changed, "EPP updates the speaker's demodulator");
                    assert!(!ec_dem_changed, "EPP must not update the echoer");
                }
                ProtocolKind::Esp | ProtocolKind::Lp | ProtocolKind::Gp => {
                    assert!(!sp_dem_changed, "{kind:?}: speaker demodulator must not update");
                    assert!(ec_dem_changed, "{kind:?}: echoer demodulator must update");
                }
            }
        }
    }

    #[test]
    fn checkpoint_schedule_shape() {
        let s = checkpoint_schedule(100, 30);
        assert_eq!(*s.first().unwrap(), 1);
        assert_eq!(*s.last().unwrap(), 100);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert!(s.len() <= 30);

        let s = checkpoint_schedule(3000, 30);
        assert_eq!(*s.last().unwrap(), 3000);
        // roughly log-spaced: ratios between consecutive tail entries stay
        // within a band around 3000^(1/29)
        let tail: Vec<f64> = s[s.len() - 5..].iter().map(|&x| x as f64).collect();
        for w in tail.windows(2) {
            let r = w[1] / w[0];
            assert!(r > 1.05 && r < 2.0, "ratio {r}");
        }
    }

    #[test]
    fn default_iteration_budgets() {
        let b2 = BitsPerSymbol::new(2).unwrap();
        let b3 = BitsPerSymbol::new(3).unwrap();
        assert_eq!(ProtocolKind::Gp.default_max_iterations(b2), Some(100));
        assert_eq!(ProtocolKind::Epp.default_max_iterations(b2), Some(3000));
        assert_eq!(ProtocolKind::Epp.default_max_iterations(b3), Some(10_000));
        assert_eq!(ProtocolKind::Gp.default_max_iterations(b3), None);
    }

    #[test]
    fn symbols_counter_counts_preamble_once_per_iteration() {
        let mut st = noiseless_state(
            agent("neural-fast", 2, ProtocolKind::Esp, 3),
            agent("neural-fast", 2, ProtocolKind::Esp, 4),
        );
        for _ in 0..10 {
            step(&mut st, ProtocolKind::Esp).unwrap();
        }
        assert_eq!(st.symbols_transmitted, 10 * 64);
    }
}
