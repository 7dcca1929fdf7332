//! Fully connected network with tanh hidden activations and identity output,
//! with hand-derived forward/backward passes.
//!
//! Parameter layout is flat: for each layer, the weight matrix (out x in,
//! row-major) followed by the bias vector. Serialized checkpoints use this
//! order with little-endian f64.

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Cached per-layer outputs from a forward pass, consumed by `backward`.
#[derive(Debug)]
pub struct MlpCache {
    batch: usize,
    /// activations[0] is the input batch; activations[l] the output of layer l.
    activations: Vec<Vec<f64>>,
}

#[derive(Debug)]
pub struct MlpGrads {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

fn layer_param_count(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

/// Weights uniform in [-1/sqrt(n_in), 1/sqrt(n_in)] per layer; biases 0.01.
pub fn init_mlp<R: Rng>(widths: &[usize], rng: &mut R) -> Mlp {
    assert!(widths.len() >= 2, "need input and output widths");
    let mut params = Vec::new();
    for l in 0..widths.len() - 1 {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let bound = 1.0 / (n_in as f64).sqrt();
        for _ in 0..n_in * n_out {
            params.push(rng.random_range(-bound..=bound));
        }
        params.extend(std::iter::repeat_n(0.01, n_out));
    }
    Mlp { widths: widths.to_vec(), params }
}

impl Mlp {
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| layer_param_count(self.widths[l], self.widths[l + 1])).sum()
    }

    /// Forward pass over a row-major batch (`batch` rows of `input_width`).
    /// Returns the output batch and the cache for `backward`.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != batch * self.input_width() {
            return Err(Error::invalid(format!(
                "mlp input shape mismatch: {} values for batch {} x width {}",
                x.len(),
                batch,
                self.input_width()
            )));
        }
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(x.to_vec());
        let mut cur = x.to_vec();
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut next = vec![0.0; batch * n_out];
            for r in 0..batch {
                let xin = &cur[r * n_in..(r + 1) * n_in];
                let out = &mut next[r * n_out..(r + 1) * n_out];
                for (j, o) in out.iter_mut().enumerate() {
                    let row = &w[j * n_in..(j + 1) * n_in];
                    let mut acc = b[j];
                    for (wi, xi) in row.iter().zip(xin) {
                        acc += wi * xi;
                    }
                    *o = acc;
                }
            }
            if l + 1 < self.num_layers() {
                for v in next.iter_mut() {
                    *v = v.tanh();
                }
            }
            activations.push(next.clone());
            cur = next;
        }
        let out = activations.last().unwrap().clone();
        Ok((out, MlpCache { batch, activations }))
    }

    /// Backward pass: gradient of a scalar loss w.r.t. parameters and input,
    /// given d(loss)/d(output) for the cached batch.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64]) -> Result<MlpGrads> {
        let batch = cache.batch;
        if d_out.len() != batch * self.output_width() {
            return Err(Error::invalid("mlp backward shape mismatch".to_string()));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = d_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.layer_offset(l);
            let w = &self.params[off..off + n_in * n_out];
            let x = &cache.activations[l];
            // tanh derivative applies to hidden layers (all but the last)
            if l + 1 < self.num_layers() {
                let h = &cache.activations[l + 1];
                for (d, &hv) in delta.iter_mut().zip(h) {
                    *d *= 1.0 - hv * hv;
                }
            }
            let (gw, gb) = grads[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut d_in = vec![0.0; batch * n_in];
            for r in 0..batch {
                let drow = &delta[r * n_out..(r + 1) * n_out];
                let xrow = &x[r * n_in..(r + 1) * n_in];
                let din_row = &mut d_in[r * n_in..(r + 1) * n_in];
                for (j, &dj) in drow.iter().enumerate() {
                    gb[j] += dj;
                    let grow = &mut gw[j * n_in..(j + 1) * n_in];
                    let wrow = &w[j * n_in..(j + 1) * n_in];
                    for i in 0..n_in {
                        grow[i] += dj * xrow[i];
                        din_row[i] += dj * wrow[i];
                    }
                }
            }
            delta = d_in;
        }
        Ok(MlpGrads { params: grads, input: delta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{central_diff, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_bounds_and_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = init_mlp(&[50, 50, 2], &mut rng);
        let bound = 1.0 / 50f64.sqrt();
        // first layer weights within [-1/sqrt(50), 1/sqrt(50)]
        for &w in &m.params()[0..50 * 50] {
            assert!(w.abs() <= bound + 1e-12);
        }
        // biases exactly 0.01
        for &b in &m.params()[50 * 50..50 * 50 + 50] {
            assert_eq!(b, 0.01);
        }
        // determinism
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        let m2 = init_mlp(&[50, 50, 2], &mut rng2);
        assert_eq!(m, m2);
    }

    #[test]
    fn zero_hidden_weights_give_bias_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = init_mlp(&[2, 8, 3], &mut rng);
        // zero W2, keep b2 = 0.01: output must be exactly 0.01 per unit
        let off2 = 2 * 8 + 8;
        for w in &mut m.params_mut()[off2..off2 + 8 * 3] {
            *w = 0.0;
        }
        let (out, _) = m.forward(&[0.3, -0.9], 1).unwrap();
        for &o in &out {
            assert_eq!(o, 0.01);
        }
    }

    #[test]
    fn linear_in_output_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = init_mlp(&[2, 4, 1], &mut rng);
        let x = [0.5, 1.0];
        let (y1, _) = m.forward(&x, 1).unwrap();
        let off2 = 2 * 4 + 4;
        let b2 = *m.params().last().unwrap();
        for w in &mut m.params_mut()[off2..off2 + 4] {
            *w *= 2.0;
        }
        let (y2, _) = m.forward(&x, 1).unwrap();
        // doubling W2 doubles (output - bias)
        assert!((y2[0] - b2 - 2.0 * (y1[0] - b2)).abs() < 1e-12);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = init_mlp(&[3, 6, 2], &mut rng);
        let x = [0.1, 0.2, 0.3, -1.0, 0.0, 1.0];
        let (a, _) = m.forward(&x, 2).unwrap();
        let (b, _) = m.forward(&x, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = init_mlp(&[3, 4, 2], &mut rng);
        assert!(m.forward(&[1.0, 2.0], 1).is_err());
    }

    // Finite-difference oracle over parameters and inputs, on a small random
    // instance, through a scalar loss sum(out^2)/2.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = init_mlp(&[3, 5, 2], &mut rng);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let batch = 4;

        let loss = |model: &Mlp, input: &[f64]| -> f64 {
            let (out, _) = model.forward(input, batch).unwrap();
            out.iter().map(|o| o * o).sum::<f64>() / 2.0
        };

        let (out, cache) = m.forward(&x, batch).unwrap();
        let grads = m.backward(&cache, &out).unwrap();

        let mut probe = m.clone();
        let numeric = central_diff(
            &mut |p: &[f64]| {
                probe.params_mut().copy_from_slice(p);
                loss(&probe, &x)
            },
            m.params(),
            1e-6,
        );
        assert!(max_rel_err(&grads.params, &numeric) < 1e-4);

        let numeric_in = central_diff(
            &mut |xi: &[f64]| loss(&m, xi),
            &x,
            1e-6,
        );
        assert!(max_rel_err(&grads.input, &numeric_in) < 1e-4);
    }
}
