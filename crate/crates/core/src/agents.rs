//! Learning modulator (Gaussian policy over constellation means, hard energy
//! constraint, optional centering loss) and learning demodulator (logit
//! classifier), plus fixed classic agents behind the same interface.

use crate::adam::AdamState;
use crate::classic::{decide_nearest, softmax, ClassicScheme};
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::poly::PolyModel;
use crate::words::{bit_features, BitsPerSymbol, IqSymbol, SymbolWord};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Classic,
    Neural,
    Poly,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Classic => "classic",
            AgentKind::Neural => "neural",
            AgentKind::Poly => "poly",
        }
    }
}

/// A trainable function approximator (network or polynomial model).
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Neural(Mlp),
    Poly(PolyModel),
}

pub enum ModelCache {
    Neural(crate::mlp::MlpCache),
    Poly(crate::poly::PolyCache),
}

impl Model {
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, ModelCache)> {
        match self {
            Model::Neural(m) => {
                let (out, c) = m.forward(x, batch)?;
                Ok((out, ModelCache::Neural(c)))
            }
            Model::Poly(m) => {
                let (out, c) = m.forward(x, batch)?;
                Ok((out, ModelCache::Poly(c)))
            }
        }
    }

    /// Returns (parameter gradients, input gradients).
    pub fn backward(&self, cache: &ModelCache, d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match (self, cache) {
            (Model::Neural(m), ModelCache::Neural(c)) => {
                let g = m.backward(c, d_out)?;
                Ok((g.params, g.input))
            }
            (Model::Poly(m), ModelCache::Poly(c)) => {
                let g = m.backward(c, d_out)?;
                Ok((g.params, g.input))
            }
            _ => Err(Error::invalid("model/cache kind mismatch".to_string())),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Model::Neural(m) => m.params(),
            Model::Poly(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Neural(m) => m.params_mut(),
            Model::Poly(m) => m.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }
}

// ---------------------------------------------------------------------------
// Modulator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum ModBackend {
    Learned(Model),
    Classic(ClassicScheme),
}

/// Modulator-side hyperparameters (names mirror the experiment tables).
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatorHp {
    pub stepsize_mu: f64,
    pub stepsize_sigma: f64,
    pub initial_std: f64,
    pub min_std: f64,
    pub max_std: f64,
    pub max_amplitude: f64,
    pub restrict_energy: bool,
    pub lambda_center: f64,
}

pub struct Modulator {
    pub bits: BitsPerSymbol,
    backend: ModBackend,
    pub hp: ModulatorHp,
    /// Exploration scale of the Gaussian policy; one shared scalar.
    pub sigma: f64,
    adam_theta: AdamState,
    adam_sigma: AdamState,
    /// Bit features of all 2^b words, row-major, cached at construction.
    word_features: Vec<f64>,
}

/// Constellation forward state used by the update paths.
struct ConstellationState {
    raw: Vec<IqSymbol>,
    scale: f64,
    mean_power: f64,
    cache: Option<ModelCache>,
}

impl Modulator {
    pub fn learned(bits: BitsPerSymbol, model: Model, hp: ModulatorHp) -> Self {
        let n_params = model.num_params();
        let word_features: Vec<f64> = (0..bits.alphabet_size() as u16)
            .flat_map(|w| bit_features(SymbolWord(w), bits))
            .collect();
        let sigma = hp.initial_std.clamp(hp.min_std, hp.max_std);
        Modulator {
            bits,
            backend: ModBackend::Learned(model),
            hp,
            sigma,
            adam_theta: AdamState::new(n_params),
            adam_sigma: AdamState::new(1),
            word_features,
        }
    }

    pub fn classic(scheme: ClassicScheme) -> Self {
        let bits = scheme.bits;
        Modulator {
            bits,
            backend: ModBackend::Classic(scheme),
            hp: ModulatorHp {
                stepsize_mu: 0.0,
                stepsize_sigma: 0.0,
                initial_std: 0.0,
                min_std: 0.0,
                max_std: 0.0,
                max_amplitude: 1.0,
                restrict_energy: true,
                lambda_center: 0.0,
            },
            sigma: 0.0,
            adam_theta: AdamState::new(0),
            adam_sigma: AdamState::new(1),
            word_features: Vec::new(),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.backend, ModBackend::Classic(_))
    }

    pub fn model(&self) -> Option<&Model> {
        match &self.backend {
            ModBackend::Learned(m) => Some(m),
            ModBackend::Classic(_) => None,
        }
    }

    pub fn model_mut(&mut self) -> Option<&mut Model> {
        match &mut self.backend {
            ModBackend::Learned(m) => Some(m),
            ModBackend::Classic(_) => None,
        }
    }

    /// Replaces the approximator (shape-checked) and resets the optimizer.
    pub fn set_model(&mut self, model: Model) -> Result<()> {
        match &self.backend {
            ModBackend::Classic(_) => {
                Err(Error::invalid("fixed modulators have no model".to_string()))
            }
            ModBackend::Learned(old) => {
                if old.num_params() != model.num_params() {
                    return Err(Error::invalid(format!(
                        "model shape mismatch: {} vs {} parameters",
                        old.num_params(),
                        model.num_params()
                    )));
                }
                self.adam_theta = AdamState::new(model.num_params());
                self.backend = ModBackend::Learned(model);
                Ok(())
            }
        }
    }

    fn constellation_state(&self) -> ConstellationState {
        match &self.backend {
            ModBackend::Classic(s) => ConstellationState {
                raw: s.points().to_vec(),
                scale: 1.0,
                mean_power: 1.0,
                cache: None,
            },
            ModBackend::Learned(m) => {
                let w = self.bits.alphabet_size();
                let (out, cache) = m
                    .forward(&self.word_features, w)
                    .expect("constellation forward on cached features");
                let raw: Vec<IqSymbol> =
                    (0..w).map(|i| IqSymbol::new(out[2 * i], out[2 * i + 1])).collect();
                let mean_power = raw.iter().map(|p| p.norm_sq()).sum::<f64>() / w as f64;
                let a2 = self.hp.max_amplitude * self.hp.max_amplitude;
                let scale = if self.hp.restrict_energy && mean_power > a2 {
                    self.hp.max_amplitude / mean_power.sqrt()
                } else {
                    1.0
                };
                ConstellationState { raw, scale, mean_power, cache: Some(cache) }
            }
        }
    }

    /// Mean output point per word, after the energy constraint.
    pub fn constellation(&self) -> Vec<IqSymbol> {
        let st = self.constellation_state();
        st.raw.iter().map(|&p| p.scale(st.scale)).collect()
    }

    pub fn mean_constellation_power(&self) -> f64 {
        let c = self.constellation();
        c.iter().map(|p| p.norm_sq()).sum::<f64>() / c.len() as f64
    }

    /// Deterministic modulation with the Gaussian-policy means.
    pub fn modulate_eval(&self, words: &[SymbolWord]) -> Vec<IqSymbol> {
        let constellation = self.constellation();
        words.iter().map(|w| constellation[w.value() as usize]).collect()
    }

    /// Stochastic modulation: s = mu + sigma * (g_re, g_im). Fixed agents do
    /// not explore and return their means.
    pub fn modulate_train<R: Rng>(&self, words: &[SymbolWord], rng: &mut R) -> Vec<IqSymbol> {
        let means = self.modulate_eval(words);
        if self.is_fixed() {
            return means;
        }
        means
            .into_iter()
            .map(|m| {
                let gr: f64 = rng.sample(StandardNormal);
                let gi: f64 = rng.sample(StandardNormal);
                IqSymbol::new(m.re + self.sigma * gr, m.im + self.sigma * gi)
            })
            .collect()
    }

    /// Backpropagates per-word mean gradients through the energy-constraint
    /// scaling and the approximator, returning d(loss)/d(model params).
    /// `per_word_grads` indexes dL/d(mu_w) by word value.
    fn mean_gradients(&self, st: &ConstellationState, per_word_grads: &[(f64, f64)]) -> Vec<f64> {
        let w = self.bits.alphabet_size();
        let model = match &self.backend {
            ModBackend::Learned(m) => m,
            ModBackend::Classic(_) => return Vec::new(),
        };
        // mu_v = c(m) * m_v with c = A / sqrt(mean power) when active:
        // dL/dm_v = c * G_v - A / (W * P^1.5) * T * m_v,  T = sum_v <G_v, m_v>
        let mut d_raw = vec![0.0; 2 * w];
        let active = st.scale < 1.0;
        let coupling = if active {
            let t: f64 = (0..w)
                .map(|v| {
                    per_word_grads[v].0 * st.raw[v].re + per_word_grads[v].1 * st.raw[v].im
                })
                .sum();
            -self.hp.max_amplitude / (w as f64 * st.mean_power.powf(1.5)) * t
        } else {
            0.0
        };
        for v in 0..w {
            d_raw[2 * v] = st.scale * per_word_grads[v].0 + coupling * st.raw[v].re;
            d_raw[2 * v + 1] = st.scale * per_word_grads[v].1 + coupling * st.raw[v].im;
        }
        let (grads, _) = model
            .backward(st.cache.as_ref().expect("learned cache"), &d_raw)
            .expect("constellation backward");
        grads
    }

    fn apply_mean_gradients(&mut self, grads: &[f64]) {
        let stepsize = self.hp.stepsize_mu;
        let model = match &mut self.backend {
            ModBackend::Learned(m) => m,
            ModBackend::Classic(_) => return,
        };
        self.adam_theta.step(model.params_mut(), grads, stepsize).expect("adam theta");
    }

    /// Adds the centering-loss gradient lambda * ||mean_w mu_w||^2 to the
    /// per-word buckets (on post-constraint means).
    fn add_centering_gradients(
        &self,
        st: &ConstellationState,
        per_word_grads: &mut [(f64, f64)],
    ) {
        if self.hp.lambda_center == 0.0 {
            return;
        }
        let w = self.bits.alphabet_size();
        let mut cx = 0.0;
        let mut cy = 0.0;
        for p in &st.raw {
            cx += p.re * st.scale;
            cy += p.im * st.scale;
        }
        cx /= w as f64;
        cy /= w as f64;
        let k = 2.0 * self.hp.lambda_center / w as f64;
        for g in per_word_grads.iter_mut() {
            g.0 += k * cx;
            g.1 += k * cy;
        }
    }

    /// Squared distance of the constellation center from the origin (the
    /// quantity the centering loss penalizes).
    pub fn constellation_center(&self) -> IqSymbol {
        let c = self.constellation();
        let n = c.len() as f64;
        IqSymbol::new(
            c.iter().map(|p| p.re).sum::<f64>() / n,
            c.iter().map(|p| p.im).sum::<f64>() / n,
        )
    }

    /// Analytic gradients of the policy loss (plus the centering term) with
    /// respect to model parameters and sigma, through the constraint scaling.
    pub fn policy_gradients(
        &self,
        sent: &[IqSymbol],
        words: &[SymbolWord],
        rewards: &[f64],
    ) -> Result<(Vec<f64>, f64)> {
        if sent.len() != words.len() || rewards.len() != words.len() {
            return Err(Error::invalid(format!(
                "policy gradient shape mismatch: {} symbols, {} words, {} rewards",
                sent.len(),
                words.len(),
                rewards.len()
            )));
        }
        let st = self.constellation_state();
        let w = self.bits.alphabet_size();
        let sig2 = self.sigma * self.sigma;

        // l_pg = sum_i r_i * |s_i - mu_i|^2 / (2 sigma^2)
        // dl/dmu_i = r_i (mu_i - s_i) / sigma^2
        // dl/dsigma = -sum_i r_i |s_i - mu_i|^2 / sigma^3
        let mut per_word = vec![(0.0, 0.0); w];
        let mut d_sigma = 0.0;
        for ((&s, word), &r) in sent.iter().zip(words).zip(rewards) {
            let v = word.value() as usize;
            let mu = st.raw[v].scale(st.scale);
            let dx = mu.re - s.re;
            let dy = mu.im - s.im;
            per_word[v].0 += r * dx / sig2;
            per_word[v].1 += r * dy / sig2;
            d_sigma -= r * (dx * dx + dy * dy) / (sig2 * self.sigma);
        }
        self.add_centering_gradients(&st, &mut per_word);
        Ok((self.mean_gradients(&st, &per_word), d_sigma))
    }

    /// Policy-gradient update from sampled symbols and per-word rewards
    /// (rewards are the negated bit errors). No-op for fixed agents.
    pub fn policy_update(
        &mut self,
        sent: &[IqSymbol],
        words: &[SymbolWord],
        rewards: &[f64],
    ) -> Result<()> {
        if self.is_fixed() {
            return Ok(());
        }
        let (theta_grads, d_sigma) = self.policy_gradients(sent, words, rewards)?;
        self.apply_mean_gradients(&theta_grads);
        let mut sigma = [self.sigma];
        self.adam_sigma.step(&mut sigma, &[d_sigma], self.hp.stepsize_sigma)?;
        self.sigma = sigma[0].clamp(self.hp.min_std, self.hp.max_std);
        Ok(())
    }

    /// Gradients of a loss whose per-sample dL/ds is given (the gradient
    /// handed over in GP), propagated back through the channel (identity
    /// jacobian), the constraint scaling, and the approximator.
    pub fn gp_gradients(&self, words: &[SymbolWord], d_means: &[(f64, f64)]) -> Result<Vec<f64>> {
        if words.len() != d_means.len() {
            return Err(Error::invalid("gp gradient shape mismatch".to_string()));
        }
        let st = self.constellation_state();
        let w = self.bits.alphabet_size();
        let mut per_word = vec![(0.0, 0.0); w];
        for (word, &(gx, gy)) in words.iter().zip(d_means) {
            let v = word.value() as usize;
            per_word[v].0 += gx;
            per_word[v].1 += gy;
        }
        self.add_centering_gradients(&st, &mut per_word);
        Ok(self.mean_gradients(&st, &per_word))
    }

    /// Supervised update used by gradient passing. No-op for fixed agents.
    pub fn gp_update(&mut self, words: &[SymbolWord], d_means: &[(f64, f64)]) -> Result<()> {
        if self.is_fixed() {
            return Ok(());
        }
        let grads = self.gp_gradients(words, d_means)?;
        self.apply_mean_gradients(&grads);
        Ok(())
    }

    /// Policy-gradient loss value (used by gradient verification).
    pub fn policy_loss(
        &self,
        sent: &[IqSymbol],
        words: &[SymbolWord],
        rewards: &[f64],
    ) -> f64 {
        let constellation = self.constellation();
        let sig2 = self.sigma * self.sigma;
        let mut l = 0.0;
        for ((&s, word), &r) in sent.iter().zip(words).zip(rewards) {
            let mu = constellation[word.value() as usize];
            l += r * s.distance_sq(mu) / (2.0 * sig2);
        }
        let center = self.constellation_center();
        l + self.hp.lambda_center * center.norm_sq()
    }

    pub fn param_snapshot(&self) -> Vec<f64> {
        let mut v = match &self.backend {
            ModBackend::Learned(m) => m.params().to_vec(),
            ModBackend::Classic(_) => Vec::new(),
        };
        v.push(self.sigma);
        v
    }
}

// ---------------------------------------------------------------------------
// Demodulator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum DemodBackend {
    Learned(Model),
    Classic(ClassicScheme),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemodulatorHp {
    pub stepsize_cross_entropy: f64,
    pub cross_entropy_weight: f64,
    pub lambda_prob: f64,
    pub lambda_l1: f64,
}

pub struct Demodulator {
    pub bits: BitsPerSymbol,
    backend: DemodBackend,
    pub hp: DemodulatorHp,
    adam_phi: AdamState,
}

impl Demodulator {
    pub fn learned(bits: BitsPerSymbol, model: Model, hp: DemodulatorHp) -> Self {
        let n = model.num_params();
        Demodulator { bits, backend: DemodBackend::Learned(model), hp, adam_phi: AdamState::new(n) }
    }

    pub fn classic(scheme: ClassicScheme) -> Self {
        let bits = scheme.bits;
        Demodulator {
            bits,
            backend: DemodBackend::Classic(scheme),
            hp: DemodulatorHp {
                stepsize_cross_entropy: 0.0,
                cross_entropy_weight: 1.0,
                lambda_prob: 0.0,
                lambda_l1: 0.0,
            },
            adam_phi: AdamState::new(0),
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.backend, DemodBackend::Classic(_))
    }

    pub fn model(&self) -> Option<&Model> {
        match &self.backend {
            DemodBackend::Learned(m) => Some(m),
            DemodBackend::Classic(_) => None,
        }
    }

    pub fn model_mut(&mut self) -> Option<&mut Model> {
        match &mut self.backend {
            DemodBackend::Learned(m) => Some(m),
            DemodBackend::Classic(_) => None,
        }
    }

    /// Replaces the approximator (shape-checked) and resets the optimizer.
    pub fn set_model(&mut self, model: Model) -> Result<()> {
        match &self.backend {
            DemodBackend::Classic(_) => {
                Err(Error::invalid("fixed demodulators have no model".to_string()))
            }
            DemodBackend::Learned(old) => {
                if old.num_params() != model.num_params() {
                    return Err(Error::invalid(format!(
                        "model shape mismatch: {} vs {} parameters",
                        old.num_params(),
                        model.num_params()
                    )));
                }
                self.adam_phi = AdamState::new(model.num_params());
                self.backend = DemodBackend::Learned(model);
                Ok(())
            }
        }
    }

    fn forward_logits(&self, received: &[IqSymbol]) -> (Vec<f64>, Option<ModelCache>) {
        let k = self.bits.alphabet_size();
        match &self.backend {
            DemodBackend::Classic(s) => {
                let mut logits = Vec::with_capacity(received.len() * k);
                for &r in received {
                    for p in s.points() {
                        logits.push(-r.distance_sq(*p));
                    }
                }
                (logits, None)
            }
            DemodBackend::Learned(m) => {
                let x: Vec<f64> = received.iter().flat_map(|r| [r.re, r.im]).collect();
                let (out, cache) = m.forward(&x, received.len()).expect("demod forward");
                (out, Some(cache))
            }
        }
    }

    /// Per-symbol logits over the 2^b words (classic agents expose the
    /// negative squared distances, so argmax matches nearest-neighbor).
    pub fn logits(&self, received: &[IqSymbol]) -> Vec<f64> {
        self.forward_logits(received).0
    }

    /// Argmax decision per symbol; ties go to the lowest word.
    pub fn decide(&self, received: &[IqSymbol]) -> Vec<SymbolWord> {
        match &self.backend {
            DemodBackend::Classic(s) => {
                received.iter().map(|&r| decide_nearest(s, r)).collect()
            }
            DemodBackend::Learned(_) => {
                let k = self.bits.alphabet_size();
                let logits = self.logits(received);
                logits
                    .chunks(k)
                    .map(|row| {
                        let mut best = 0usize;
                        for (j, &z) in row.iter().enumerate().skip(1) {
                            if z > row[best] {
                                best = j;
                            }
                        }
                        SymbolWord(best as u16)
                    })
                    .collect()
            }
        }
    }

    /// Softmax class probabilities per symbol.
    pub fn soft(&self, received: &[IqSymbol]) -> Vec<Vec<f64>> {
        let k = self.bits.alphabet_size();
        self.logits(received).chunks(k).map(softmax).collect()
    }

    /// Cross-entropy loss (with the numerical-stability floor and the L1
    /// penalty when configured). Used by gradient verification.
    pub fn ce_loss(&self, received: &[IqSymbol], targets: &[SymbolWord]) -> f64 {
        let k = self.bits.alphabet_size();
        let logits = self.logits(received);
        let mut l = 0.0;
        for (row, t) in logits.chunks(k).zip(targets) {
            let q = softmax(row);
            l -= (q[t.value() as usize] + self.hp.lambda_prob).ln();
        }
        l *= self.hp.cross_entropy_weight;
        if self.hp.lambda_l1 > 0.0 {
            if let Some(m) = self.model() {
                l += self.hp.lambda_l1 * m.params().iter().map(|w| w.abs()).sum::<f64>();
            }
        }
        l
    }

    /// dL/d(logits) per row for the cross-entropy loss above.
    fn logit_gradients(&self, logits: &[f64], targets: &[SymbolWord]) -> Vec<f64> {
        let k = self.bits.alphabet_size();
        let mut dz = Vec::with_capacity(logits.len());
        for (row, t) in logits.chunks(k).zip(targets) {
            let q = softmax(row);
            let ti = t.value() as usize;
            let f = q[ti] / (q[ti] + self.hp.lambda_prob);
            for (j, &qj) in q.iter().enumerate() {
                let delta = if j == ti { 1.0 } else { 0.0 };
                dz.push(self.hp.cross_entropy_weight * f * (qj - delta));
            }
        }
        dz
    }

    /// One supervised update with cross-entropy loss. No-op for fixed agents.
    pub fn update(&mut self, received: &[IqSymbol], targets: &[SymbolWord]) -> Result<()> {
        self.update_impl(received, targets, false).map(|_| ())
    }

    /// Update that also returns dL/d(received) per symbol, evaluated at the
    /// pre-update parameters (the gradient handed across in GP).
    pub fn update_with_input_grads(
        &mut self,
        received: &[IqSymbol],
        targets: &[SymbolWord],
    ) -> Result<Vec<(f64, f64)>> {
        self.update_impl(received, targets, true).map(|g| g.expect("input grads requested"))
    }

    /// dL/d(received) without updating parameters.
    pub fn input_gradients(
        &self,
        received: &[IqSymbol],
        targets: &[SymbolWord],
    ) -> Result<Vec<(f64, f64)>> {
        if received.len() != targets.len() {
            return Err(Error::invalid("input_gradients length mismatch".to_string()));
        }
        let (logits, cache) = self.forward_logits(received);
        let dz = self.logit_gradients(&logits, targets);
        self.input_grads_from_dz(received, &dz, cache.as_ref())
    }

    fn input_grads_from_dz(
        &self,
        received: &[IqSymbol],
        dz: &[f64],
        cache: Option<&ModelCache>,
    ) -> Result<Vec<(f64, f64)>> {
        let k = self.bits.alphabet_size();
        match &self.backend {
            DemodBackend::Classic(s) => {
                // z_w = -|r - c_w|^2  =>  dz_w/dr = 2 (c_w - r)
                Ok(received
                    .iter()
                    .zip(dz.chunks(k))
                    .map(|(&r, row)| {
                        let mut gx = 0.0;
                        let mut gy = 0.0;
                        for (w, &d) in row.iter().enumerate() {
                            let c = s.points()[w];
                            gx += d * 2.0 * (c.re - r.re);
                            gy += d * 2.0 * (c.im - r.im);
                        }
                        (gx, gy)
                    })
                    .collect())
            }
            DemodBackend::Learned(m) => {
                let (_, input) = m.backward(cache.expect("cache"), dz)?;
                Ok(input.chunks(2).map(|p| (p[0], p[1])).collect())
            }
        }
    }

    fn update_impl(
        &mut self,
        received: &[IqSymbol],
        targets: &[SymbolWord],
        want_input_grads: bool,
    ) -> Result<Option<Vec<(f64, f64)>>> {
        if received.len() != targets.len() {
            return Err(Error::invalid(format!(
                "demod_update length mismatch: {} symbols, {} targets",
                received.len(),
                targets.len()
            )));
        }
        if self.is_fixed() {
            return if want_input_grads {
                Ok(Some(self.input_gradients(received, targets)?))
            } else {
                Ok(None)
            };
        }
        let (logits, cache) = self.forward_logits(received);
        let dz = self.logit_gradients(&logits, targets);
        let input_grads = if want_input_grads {
            Some(self.input_grads_from_dz(received, &dz, cache.as_ref())?)
        } else {
            None
        };
        let model = match &self.backend {
            DemodBackend::Learned(m) => m,
            DemodBackend::Classic(_) => unreachable!(),
        };
        let (mut grads, _) = model.backward(cache.as_ref().unwrap(), &dz)?;
        if self.hp.lambda_l1 > 0.0 {
            for (g, &w) in grads.iter_mut().zip(model.params()) {
                *g += self.hp.lambda_l1 * w.signum() * if w == 0.0 { 0.0 } else { 1.0 };
            }
        }
        let stepsize = self.hp.stepsize_cross_entropy;
        let model = match &mut self.backend {
            DemodBackend::Learned(m) => m,
            DemodBackend::Classic(_) => unreachable!(),
        };
        self.adam_phi.step(model.params_mut(), &grads, stepsize)?;
        Ok(input_grads)
    }

    pub fn param_snapshot(&self) -> Vec<f64> {
        match &self.backend {
            DemodBackend::Learned(m) => m.params().to_vec(),
            DemodBackend::Classic(_) => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Agent
// ---------------------------------------------------------------------------

pub struct Agent {
    pub modulator: Modulator,
    pub demodulator: Demodulator,
    pub kind: AgentKind,
    pub preset: String,
}

impl Agent {
    pub fn is_fixed(&self) -> bool {
        self.modulator.is_fixed() && self.demodulator.is_fixed()
    }

    /// Flat view of all trainable parameters (for update-isolation checks).
    pub fn param_snapshot(&self) -> Vec<f64> {
        let mut v = self.modulator.param_snapshot();
        v.extend(self.demodulator.param_snapshot());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{central_diff, max_rel_err};
    use crate::mlp::init_mlp;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_mod(rng: &mut ChaCha8Rng) -> Modulator {
        let bits = BitsPerSymbol::new(2).unwrap();
        let model = Model::Neural(init_mlp(&[2, 6, 2], rng));
        Modulator::learned(
            bits,
            model,
            ModulatorHp {
                stepsize_mu: 8e-3,
                stepsize_sigma: 1e-4,
                initial_std: 0.3,
                min_std: 0.1,
                max_std: 1.0,
                max_amplitude: 1.0,
                restrict_energy: true,
                lambda_center: 0.0,
            },
        )
    }

    fn scale_output_layer(m: &mut Modulator, k: f64) {
        if let Some(Model::Neural(net)) = m.model_mut() {
            let n = net.params().len();
            let tail = 6 * 2 + 2; // W2 and b2 of the [2, 6, 2] net
            for p in &mut net.params_mut()[n - tail..] {
                *p *= k;
            }
        }
    }

    fn small_demod(rng: &mut ChaCha8Rng) -> Demodulator {
        let bits = BitsPerSymbol::new(2).unwrap();
        let model = Model::Neural(init_mlp(&[2, 6, 4], rng));
        Demodulator::learned(
            bits,
            model,
            DemodulatorHp {
                stepsize_cross_entropy: 5e-3,
                cross_entropy_weight: 1.0,
                lambda_prob: 1e-10,
                lambda_l1: 0.0,
            },
        )
    }

    #[test]
    fn constraint_scales_to_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = small_mod(&mut rng);
        // Inflate the output layer until the raw constellation exceeds the
        // cap, then check the constrained power sits exactly at it.
        scale_output_layer(&mut m, 40.0);
        let raw_power = {
            let st = m.constellation_state();
            st.mean_power
        };
        assert!(raw_power > 1.0);
        assert_relative_eq!(m.mean_constellation_power(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn constraint_inactive_below_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = small_mod(&mut rng);
        let st = m.constellation_state();
        assert!(st.mean_power < 1.0);
        assert_eq!(st.scale, 1.0);
        // constellation equals raw means exactly
        let c = m.constellation();
        for (a, b) in c.iter().zip(&st.raw) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn eval_is_pure_and_matches_constellation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = small_mod(&mut rng);
        let words: Vec<SymbolWord> = (0..4u16).map(SymbolWord).collect();
        let a = m.modulate_eval(&words);
        let b = m.modulate_eval(&words);
        assert_eq!(a, b);
        assert_eq!(a, m.constellation());
        assert!(m.mean_constellation_power() <= 1.0 + 1e-9);
    }

    #[test]
    fn train_sampling_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = small_mod(&mut rng);
        let n = 1_000_000usize;
        let words = vec![SymbolWord(1); n];
        let mu = m.modulate_eval(&[SymbolWord(1)])[0];
        let sent = m.modulate_train(&words, &mut rng);
        let mean_re: f64 = sent.iter().map(|s| s.re - mu.re).sum::<f64>() / n as f64;
        let var_re: f64 =
            sent.iter().map(|s| (s.re - mu.re - mean_re).powi(2)).sum::<f64>() / n as f64;
        let var_im: f64 = {
            let mean_im: f64 = sent.iter().map(|s| s.im - mu.im).sum::<f64>() / n as f64;
            sent.iter().map(|s| (s.im - mu.im - mean_im).powi(2)).sum::<f64>() / n as f64
        };
        assert_relative_eq!(var_re.sqrt(), m.sigma, max_relative = 0.01);
        assert_relative_eq!(var_im.sqrt(), m.sigma, max_relative = 0.01);
    }

    #[test]
    fn zero_sigma_sampling_returns_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut m = small_mod(&mut rng);
        m.hp.min_std = 0.0;
        m.sigma = 0.0;
        let words = vec![SymbolWord(0), SymbolWord(3), SymbolWord(1)];
        let s = m.modulate_train(&words, &mut rng);
        assert_eq!(s, m.modulate_eval(&words));
    }

    #[test]
    fn train_sampling_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = small_mod(&mut rng);
        let words = vec![SymbolWord(0), SymbolWord(3)];
        let a = m.modulate_train(&words, &mut ChaCha8Rng::seed_from_u64(9));
        let b = m.modulate_train(&words, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_rewards_leave_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut m = small_mod(&mut rng);
        let words = vec![SymbolWord(0), SymbolWord(1)];
        let sent = m.modulate_train(&words, &mut rng);
        let before = m.param_snapshot();
        m.policy_update(&sent, &words, &[0.0, 0.0]).unwrap();
        assert_eq!(m.param_snapshot(), before);
    }

    // Sign oracle: one word, sample pushed to the right of the mean,
    // reward -1. Minimizing l_pg moves the mean away from the sample.
    #[test]
    fn policy_gradient_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = small_mod(&mut rng);
        let word = [SymbolWord(2)];
        let mu = m.modulate_eval(&word)[0];
        let s = [IqSymbol::new(mu.re + 0.5, mu.im)];
        m.policy_update(&s, &word, &[-1.0]).unwrap();
        let mu_after = m.modulate_eval(&word)[0];
        assert!(mu_after.re < mu.re, "mean should move away from the bad sample");
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // active constraint to exercise the scaling backward; only the
        // output layer is inflated so the hidden tanh stays unsaturated
        let mut m = small_mod(&mut rng);
        scale_output_layer(&mut m, 12.0);
        m.hp.lambda_center = 0.7;
        assert!(m.constellation_state().scale < 1.0);

        let words: Vec<SymbolWord> = [0u16, 1, 2, 3, 1, 2].map(SymbolWord).to_vec();
        let sent = m.modulate_train(&words, &mut rng);
        let rewards = [-1.0, 0.0, -2.0, -1.0, 0.0, -1.0];

        let (analytic, d_sigma_analytic) = m.policy_gradients(&sent, &words, &rewards).unwrap();
        let params0 = m.model().unwrap().params().to_vec();
        let numeric = central_diff(
            &mut |p: &[f64]| {
                let mut probe_rng = ChaCha8Rng::seed_from_u64(0);
                let mut probe = small_mod(&mut probe_rng);
                // rebuild with same hp but probed params
                probe.hp = m.hp.clone();
                probe.sigma = m.sigma;
                probe.model_mut().unwrap().params_mut().copy_from_slice(p);
                probe.policy_loss(&sent, &words, &rewards)
            },
            &params0,
            1e-6,
        );
        assert!(
            max_rel_err(&analytic, &numeric) < 1e-4,
            "rel err {}",
            max_rel_err(&analytic, &numeric)
        );

        // sigma gradient against finite differences
        let h = 1e-6;
        let loss_at_sigma = |sig: f64| {
            let mut probe_rng = ChaCha8Rng::seed_from_u64(0);
            let mut probe = small_mod(&mut probe_rng);
            probe.hp = m.hp.clone();
            probe.model_mut().unwrap().params_mut().copy_from_slice(&params0);
            probe.sigma = sig;
            probe.policy_loss(&sent, &words, &rewards)
        };
        let d_sigma_numeric = (loss_at_sigma(m.sigma + h) - loss_at_sigma(m.sigma - h)) / (2.0 * h);
        assert_relative_eq!(d_sigma_analytic, d_sigma_numeric, max_relative = 1e-4);
    }

    #[test]
    fn sigma_stays_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = small_mod(&mut rng);
        m.hp.stepsize_sigma = 0.5; // force big sigma steps
        let words = vec![SymbolWord(0); 16];
        for _ in 0..50 {
            let sent = m.modulate_train(&words, &mut rng);
            let rewards = vec![-2.0; 16];
            m.policy_update(&sent, &words, &rewards).unwrap();
            assert!(m.sigma >= m.hp.min_std - 1e-15);
            assert!(m.sigma <= m.hp.max_std + 1e-15);
        }
    }

    #[test]
    fn demod_decide_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = small_demod(&mut rng);
        // argmax semantics on raw logit rows
        let row = [3.0, 1.0, 0.0, -2.0];
        let best = row.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert_eq!(best, 0);
        // shift invariance and tie-to-lowest via the public decide()
        let r = [IqSymbol::new(0.37, -0.81)];
        let w1 = d.decide(&r);
        let logits = d.logits(&r);
        let shifted: Vec<f64> = logits.iter().map(|z| z + 100.0).collect();
        let best_shifted = shifted
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(w1[0].value() as usize, best_shifted);
    }

    #[test]
    fn demod_tie_breaks_lowest() {
        // classic backend with an exactly centered sample ties all words
        let d = Demodulator::classic(ClassicScheme::qpsk());
        assert_eq!(d.decide(&[IqSymbol::new(0.0, 0.0)]), vec![SymbolWord(0)]);
    }

    #[test]
    fn demod_update_lengths_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut d = small_demod(&mut rng);
        assert!(d.update(&[IqSymbol::new(0.0, 0.0)], &[]).is_err());
    }

    // Convergence oracle: four well-separated clusters become perfectly
    // classified after 500 updates.
    #[test]
    fn demod_learns_separable_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut d = small_demod(&mut rng);
        let centers = ClassicScheme::qpsk();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..128 {
            let w = SymbolWord((i % 4) as u16);
            let c = centers.point(w);
            let jitter = 0.02 * ((i as f64 * 0.77).sin());
            xs.push(IqSymbol::new(c.re + jitter, c.im - jitter));
            ys.push(w);
        }
        for _ in 0..500 {
            d.update(&xs, &ys).unwrap();
        }
        let decided = d.decide(&xs);
        assert_eq!(decided, ys);
    }

    #[test]
    fn demod_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // poly demod with L1 to cover the penalty path
        let bits = BitsPerSymbol::new(2).unwrap();
        let model = Model::Poly(crate::poly::init_poly(
            crate::poly::PolyFeatures::Iq { degree: 2 },
            4,
            &mut rng,
        ));
        let d = Demodulator::learned(
            bits,
            model,
            DemodulatorHp {
                stepsize_cross_entropy: 1e-2,
                cross_entropy_weight: 0.8,
                lambda_prob: 1e-10,
                lambda_l1: 1e-3,
            },
        );
        let received = vec![
            IqSymbol::new(0.4, 0.6),
            IqSymbol::new(-0.7, 0.1),
            IqSymbol::new(0.2, -0.9),
        ];
        let targets = vec![SymbolWord(0), SymbolWord(3), SymbolWord(1)];

        let (logits, cache) = d.forward_logits(&received);
        let dz = d.logit_gradients(&logits, &targets);
        let (mut analytic, _) = d.model().unwrap().backward(cache.as_ref().unwrap(), &dz).unwrap();
        for (g, &w) in analytic.iter_mut().zip(d.model().unwrap().params()) {
            *g += d.hp.lambda_l1 * if w == 0.0 { 0.0 } else { w.signum() };
        }

        let params0 = d.model().unwrap().params().to_vec();
        let mut probe_model = d.model().unwrap().clone();
        let numeric = central_diff(
            &mut |p: &[f64]| {
                probe_model.params_mut().copy_from_slice(p);
                let probe = Demodulator::learned(bits, probe_model.clone(), d.hp.clone());
                probe.ce_loss(&received, &targets)
            },
            &params0,
            1e-6,
        );
        assert!(
            max_rel_err(&analytic, &numeric) < 1e-4,
            "rel err {}",
            max_rel_err(&analytic, &numeric)
        );
    }

    #[test]
    fn classic_agents_are_read_only() {
        let scheme = ClassicScheme::qpsk();
        let mut m = Modulator::classic(scheme.clone());
        let mut d = Demodulator::classic(scheme);
        let words = vec![SymbolWord(0), SymbolWord(1)];
        let sent = m.modulate_train(&words, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(sent, m.modulate_eval(&words)); // no exploration
        m.policy_update(&sent, &words, &[-1.0, -1.0]).unwrap(); // no-op, must not error
        d.update(&sent, &words).unwrap();
        assert!(m.param_snapshot().len() == 1); // just sigma
    }

    #[test]
    fn classic_soft_input_gradients_match_fd() {
        let d = Demodulator::classic(ClassicScheme::qpsk());
        let received = vec![IqSymbol::new(0.3, -0.2), IqSymbol::new(-0.9, 0.8)];
        let targets = vec![SymbolWord(1), SymbolWord(2)];
        let analytic = d.input_gradients(&received, &targets).unwrap();
        let flat: Vec<f64> = received.iter().flat_map(|r| [r.re, r.im]).collect();
        let numeric = central_diff(
            &mut |x: &[f64]| {
                let rs: Vec<IqSymbol> =
                    x.chunks(2).map(|p| IqSymbol::new(p[0], p[1])).collect();
                d.ce_loss(&rs, &targets)
            },
            &flat,
            1e-6,
        );
        let analytic_flat: Vec<f64> = analytic.iter().flat_map(|&(a, b)| [a, b]).collect();
        assert!(max_rel_err(&analytic_flat, &numeric) < 1e-4);
    }
}
