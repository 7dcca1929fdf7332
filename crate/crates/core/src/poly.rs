//! Polynomial feature expansions and the bias-free linear model over them.
//!
//! Both expansions carry an explicit constant term so bias-free weights can
//! still represent an offset. Orderings are fixed:
//! - bit features: graded lexicographic over distinct-bit products
//!   (b=2 max degree: [1, b1, b2, b1*b2]);
//! - IQ features: constant, then powers of Re, powers of Im, then cross
//!   terms by total degree with descending Re power
//!   (d=2: [1, Re, Re^2, Im, Im^2, Re*Im]).

use crate::error::{Error, Result};
use crate::words::IqSymbol;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolyFeatures {
    /// Products of distinct bits up to `degree` (plus the constant term).
    /// Bits are 0/1 valued, so repeated factors are redundant and omitted.
    Bits { bits: u8, degree: u8 },
    /// Monomials Re^i * Im^j with 1 <= i+j <= degree, plus the constant term.
    Iq { degree: u8 },
}

impl PolyFeatures {
    pub fn max_bits(bits: u8) -> Self {
        PolyFeatures::Bits { bits, degree: bits }
    }

    pub fn count(&self) -> usize {
        match *self {
            PolyFeatures::Bits { bits, degree } => {
                (0..=degree.min(bits)).map(|k| n_choose_k(bits as usize, k as usize)).sum()
            }
            PolyFeatures::Iq { degree } => {
                let d = degree as usize;
                // 1 + d (Re powers) + d (Im powers) + cross terms
                1 + 2 * d + (2..=d).map(|t| t - 1).sum::<usize>()
            }
        }
    }

    pub fn input_width(&self) -> usize {
        match *self {
            PolyFeatures::Bits { bits, .. } => bits as usize,
            PolyFeatures::Iq { .. } => 2,
        }
    }

    /// Index subsets for the bit expansion, in graded lexicographic order.
    fn bit_subsets(bits: u8, degree: u8) -> Vec<Vec<usize>> {
        let mut subsets: Vec<Vec<usize>> = vec![vec![]];
        for k in 1..=degree.min(bits) as usize {
            let mut stack = vec![(Vec::new(), 0usize)];
            while let Some((cur, start)) = stack.pop() {
                if cur.len() == k {
                    subsets.push(cur);
                    continue;
                }
                // reverse order keeps the DFS emitting lexicographically
                for i in (start..bits as usize).rev() {
                    let mut next = cur.clone();
                    next.push(i);
                    stack.push((next, i + 1));
                }
            }
        }
        subsets
    }

    pub fn eval_bits(&self, bit_values: &[f64]) -> Vec<f64> {
        let (bits, degree) = match *self {
            PolyFeatures::Bits { bits, degree } => (bits, degree),
            _ => panic!("eval_bits on IQ features"),
        };
        assert_eq!(bit_values.len(), bits as usize);
        Self::bit_subsets(bits, degree)
            .iter()
            .map(|s| s.iter().map(|&i| bit_values[i]).product::<f64>())
            .collect()
    }

    /// (i, j) exponent list for the IQ expansion, matching the ordering above.
    fn iq_monomials(degree: u8) -> Vec<(u32, u32)> {
        let d = degree as u32;
        let mut terms = vec![(0, 0)];
        terms.extend((1..=d).map(|k| (k, 0)));
        terms.extend((1..=d).map(|k| (0, k)));
        for t in 2..=d {
            for i in (1..t).rev() {
                terms.push((i, t - i));
            }
        }
        terms
    }

    pub fn eval_iq(&self, s: IqSymbol) -> Vec<f64> {
        let degree = match *self {
            PolyFeatures::Iq { degree } => degree,
            _ => panic!("eval_iq on bit features"),
        };
        Self::iq_monomials(degree)
            .iter()
            .map(|&(i, j)| s.re.powi(i as i32) * s.im.powi(j as i32))
            .collect()
    }

    /// d(feature)/d(re, im) for each IQ feature.
    pub fn iq_feature_jacobian(&self, s: IqSymbol) -> Vec<(f64, f64)> {
        let degree = match *self {
            PolyFeatures::Iq { degree } => degree,
            _ => panic!("iq_feature_jacobian on bit features"),
        };
        Self::iq_monomials(degree)
            .iter()
            .map(|&(i, j)| {
                let dre = if i == 0 {
                    0.0
                } else {
                    i as f64 * s.re.powi(i as i32 - 1) * s.im.powi(j as i32)
                };
                let dim = if j == 0 {
                    0.0
                } else {
                    j as f64 * s.re.powi(i as i32) * s.im.powi(j as i32 - 1)
                };
                (dre, dim)
            })
            .collect()
    }
}

fn n_choose_k(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Linear map from a polynomial feature vector to `out_width` outputs,
/// without biases. Weight layout: W[out][feature], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyModel {
    pub features: PolyFeatures,
    out_width: usize,
    weights: Vec<f64>,
}

#[derive(Debug)]
pub struct PolyCache {
    batch: usize,
    feats: Vec<f64>,
    /// raw inputs, kept for the input-side jacobian of IQ features
    inputs: Vec<f64>,
}

#[derive(Debug)]
pub struct PolyGrads {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Weights uniform in [-1/sqrt(n_features), 1/sqrt(n_features)]; no biases.
pub fn init_poly<R: Rng>(features: PolyFeatures, out_width: usize, rng: &mut R) -> PolyModel {
    let n = features.count();
    let bound = 1.0 / (n as f64).sqrt();
    let weights = (0..n * out_width).map(|_| rng.random_range(-bound..=bound)).collect();
    PolyModel { features, out_width, weights }
}

impl PolyModel {
    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn params(&self) -> &[f64] {
        &self.weights
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    pub fn forward(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, PolyCache)> {
        let in_w = self.features.input_width();
        if x.len() != batch * in_w {
            return Err(Error::invalid("poly input shape mismatch".to_string()));
        }
        let nf = self.features.count();
        let mut feats = Vec::with_capacity(batch * nf);
        for r in 0..batch {
            let row = &x[r * in_w..(r + 1) * in_w];
            let f = match self.features {
                PolyFeatures::Bits { .. } => self.features.eval_bits(row),
                PolyFeatures::Iq { .. } => self.features.eval_iq(IqSymbol::new(row[0], row[1])),
            };
            feats.extend(f);
        }
        let mut out = vec![0.0; batch * self.out_width];
        for r in 0..batch {
            let frow = &feats[r * nf..(r + 1) * nf];
            let orow = &mut out[r * self.out_width..(r + 1) * self.out_width];
            for (j, o) in orow.iter_mut().enumerate() {
                let wrow = &self.weights[j * nf..(j + 1) * nf];
                *o = wrow.iter().zip(frow).map(|(w, f)| w * f).sum();
            }
        }
        Ok((out, PolyCache { batch, feats, inputs: x.to_vec() }))
    }

    pub fn backward(&self, cache: &PolyCache, d_out: &[f64]) -> Result<PolyGrads> {
        let nf = self.features.count();
        let batch = cache.batch;
        if d_out.len() != batch * self.out_width {
            return Err(Error::invalid("poly backward shape mismatch".to_string()));
        }
        let mut grads = vec![0.0; self.weights.len()];
        let in_w = self.features.input_width();
        let mut d_input = vec![0.0; batch * in_w];
        for r in 0..batch {
            let frow = &cache.feats[r * nf..(r + 1) * nf];
            let drow = &d_out[r * self.out_width..(r + 1) * self.out_width];
            for (j, &dj) in drow.iter().enumerate() {
                let grow = &mut grads[j * nf..(j + 1) * nf];
                for i in 0..nf {
                    grow[i] += dj * frow[i];
                }
            }
            if let PolyFeatures::Iq { .. } = self.features {
                let s = IqSymbol::new(cache.inputs[r * 2], cache.inputs[r * 2 + 1]);
                let jac = self.features.iq_feature_jacobian(s);
                let din = &mut d_input[r * 2..(r + 1) * 2];
                for (j, &dj) in drow.iter().enumerate() {
                    let wrow = &self.weights[j * nf..(j + 1) * nf];
                    for i in 0..nf {
                        din[0] += dj * wrow[i] * jac[i].0;
                        din[1] += dj * wrow[i] * jac[i].1;
                    }
                }
            }
        }
        Ok(PolyGrads { params: grads, input: d_input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad_check::{central_diff, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bit_features_ordering() {
        let f = PolyFeatures::max_bits(2);
        assert_eq!(f.eval_bits(&[1.0, 0.0]), vec![1.0, 1.0, 0.0, 0.0]);
        assert_eq!(f.eval_bits(&[0.0, 0.0]), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.count(), 4);
        assert_eq!(PolyFeatures::max_bits(4).count(), 16);
    }

    #[test]
    fn bit_subsets_graded_lex() {
        let f = PolyFeatures::max_bits(3);
        // [1, b1, b2, b3, b1b2, b1b3, b2b3, b1b2b3]
        let v = f.eval_bits(&[1.0, 1.0, 0.0]);
        assert_eq!(v, vec![1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn iq_features_ordering() {
        let f = PolyFeatures::Iq { degree: 2 };
        // s = 1 + 2j -> [1, Re, Re^2, Im, Im^2, Re*Im]
        assert_eq!(
            f.eval_iq(IqSymbol::new(1.0, 2.0)),
            vec![1.0, 1.0, 1.0, 2.0, 4.0, 2.0]
        );
        assert_eq!(f.count(), 6);

        let f1 = PolyFeatures::Iq { degree: 1 };
        assert_eq!(f1.eval_iq(IqSymbol::new(0.5, -0.25)), vec![1.0, 0.5, -0.25]);
        assert_eq!(f1.count(), 3);
    }

    #[test]
    fn init_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = init_poly(PolyFeatures::max_bits(2), 2, &mut rng);
        let bound = 1.0 / 2.0; // 4 features
        assert!(m.params().iter().all(|w| w.abs() <= bound + 1e-12));
        assert_eq!(m.num_params(), 8);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for features in [PolyFeatures::max_bits(3), PolyFeatures::Iq { degree: 3 }] {
            let m = init_poly(features, 4, &mut rng);
            let in_w = features.input_width();
            let batch = 3;
            let x: Vec<f64> = (0..batch * in_w).map(|i| ((i as f64) * 0.9).cos()).collect();

            let loss = |model: &PolyModel, input: &[f64]| {
                let (out, _) = model.forward(input, batch).unwrap();
                out.iter().enumerate().map(|(i, o)| o * o * (1.0 + 0.1 * i as f64)).sum::<f64>()
            };

            let (out, cache) = m.forward(&x, batch).unwrap();
            let d_out: Vec<f64> =
                out.iter().enumerate().map(|(i, o)| 2.0 * o * (1.0 + 0.1 * i as f64)).collect();
            let grads = m.backward(&cache, &d_out).unwrap();

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

            if matches!(features, PolyFeatures::Iq { .. }) {
                let numeric_in = central_diff(&mut |xi: &[f64]| loss(&m, xi), &x, 1e-6);
                assert!(max_rel_err(&grads.input, &numeric_in) < 1e-4);
            }
        }
    }
}
