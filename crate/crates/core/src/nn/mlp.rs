//! Three-layer tanh MLP with hand-written backprop.
//!
//! Parameters live in one flat `Vec<f64>` laid out as
//! `W1 | b1 | W2 | b2 | W3 | b3`, with row-major weights (`W[i][j]` maps input
//! `j` to unit `i`). The flat layout is what Adam and the checkpoint container
//! operate on.

use crate::error::{Error, Result};
use crate::nn::rng::Rng;

pub const HIDDEN1: usize = 64;
pub const HIDDEN2: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    widths: [usize; 4],
    pub data: Vec<f64>,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub input: Vec<f64>,
    pub hidden1: Vec<f64>,
    pub hidden2: Vec<f64>,
    pub output: Vec<f64>,
}

fn param_count(w: &[usize; 4]) -> usize {
    w[1] * w[0] + w[1] + w[2] * w[1] + w[2] + w[3] * w[2] + w[3]
}

impl MlpParams {
    /// All-zero parameters with widths `input -> 64 -> 32 -> output`.
    pub fn zeros(input: usize, output: usize) -> Self {
        Self::zeros_with_widths([input, HIDDEN1, HIDDEN2, output])
    }

    pub fn zeros_with_widths(widths: [usize; 4]) -> Self {
        Self {
            widths,
            data: vec![0.0; param_count(&widths)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(input, output);
        for layer in 0..3 {
            let (fan_in, fan_out) = (p.widths[layer], p.widths[layer + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let (start, len) = p.weight_range(layer);
            for w in &mut p.data[start..start + len] {
                *w = rng.range(-limit, limit);
            }
        }
        p
    }

    pub fn from_flat(widths: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected = param_count(&widths);
        if data.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(Self { widths, data })
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        self.widths[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (offset, length) of layer `l`'s weight matrix.
    fn weight_range(&self, l: usize) -> (usize, usize) {
        let w = &self.widths;
        let mut off = 0;
        for k in 0..l {
            off += w[k + 1] * w[k] + w[k + 1];
        }
        (off, w[l + 1] * w[l])
    }

    fn bias_range(&self, l: usize) -> (usize, usize) {
        let (off, len) = self.weight_range(l);
        (off + len, self.widths[l + 1])
    }

    fn dense(&self, l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (wo, _) = self.weight_range(l);
        let (bo, n) = self.bias_range(l);
        let m = self.widths[l];
        out.clear();
        for i in 0..n {
            let row = &self.data[wo + i * m..wo + (i + 1) * m];
            let mut s = self.data[bo + i];
            for (w, xv) in row.iter().zip(x) {
                s += w * xv;
            }
            out.push(s);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<MlpCache> {
        if x.len() != self.widths[0] {
            return Err(Error::Shape {
                expected: self.widths[0],
                actual: x.len(),
            });
        }
        let mut h1 = Vec::with_capacity(self.widths[1]);
        self.dense(0, x, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = Vec::with_capacity(self.widths[2]);
        self.dense(1, &h1, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut out = Vec::with_capacity(self.widths[3]);
        self.dense(2, &h2, &mut out);
        Ok(MlpCache {
            input: x.to_vec(),
            hidden1: h1,
            hidden2: h2,
            output: out,
        })
    }

    /// Output only.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// Accumulate `d loss / d params` into `grads` given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
        if d_out.len() != self.widths[3] {
            return Err(Error::Shape {
                expected: self.widths[3],
                actual: d_out.len(),
            });
        }
        if grads.len() != self.data.len() {
            return Err(Error::Shape {
                expected: self.data.len(),
                actual: grads.len(),
            });
        }
        let d_h2 = self.backward_dense(2, &cache.hidden2, d_out, grads);
        let d_z2: Vec<f64> = d_h2
            .iter()
            .zip(&cache.hidden2)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let d_h1 = self.backward_dense(1, &cache.hidden1, &d_z2, grads);
        let d_z1: Vec<f64> = d_h1
            .iter()
            .zip(&cache.hidden1)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        self.backward_dense(0, &cache.input, &d_z1, grads);
        Ok(())
    }

    /// Gradient of layer `l` given upstream `d_z`; returns d/d(layer input).
    fn backward_dense(&self, l: usize, input: &[f64], d_z: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let (wo, _) = self.weight_range(l);
        let (bo, n) = self.bias_range(l);
        let m = self.widths[l];
        let mut d_in = vec![0.0; m];
        for i in 0..n {
            let g = d_z[i];
            grads[bo + i] += g;
            if g == 0.0 {
                continue;
            }
            let row = wo + i * m;
            for j in 0..m {
                grads[row + j] += g * input[j];
                d_in[j] += g * self.data[row + j];
            }
        }
        d_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_zero_output() {
        let p = MlpParams::zeros(5, 3);
        let out = p.predict(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn tanh_saturates() {
        let mut p = MlpParams::zeros_with_widths([1, 2, 2, 1]);
        // W1 = [1000, 1000], everything else zero.
        p.data[0] = 1000.0;
        p.data[1] = 1000.0;
        let c = p.forward(&[1.0]).unwrap();
        assert!(c.hidden1.iter().all(|h| (h - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_wrong_input_width() {
        let p = MlpParams::zeros(4, 1);
        assert!(matches!(p.forward(&[0.0; 3]), Err(Error::Shape { .. })));
    }

    #[test]
    fn matches_plain_matrix_evaluation() {
        let mut rng = Rng::new(11);
        let widths = [6, 5, 4, 3];
        let mut p = MlpParams::zeros_with_widths(widths);
        for v in &mut p.data {
            *v = rng.normal() * 0.5;
        }
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();

        // Reference: slice params into explicit nested matrices.
        let mut off = 0;
        let mut act = x.clone();
        for l in 0..3 {
            let (m, n) = (widths[l], widths[l + 1]);
            let w: Vec<Vec<f64>> = (0..n)
                .map(|i| p.data[off + i * m..off + (i + 1) * m].to_vec())
                .collect();
            off += n * m;
            let b = p.data[off..off + n].to_vec();
            off += n;
            let z: Vec<f64> = (0..n)
                .map(|i| b[i] + (0..m).map(|j| w[i][j] * act[j]).sum::<f64>())
                .collect();
            act = if l < 2 { z.iter().map(|v| v.tanh()).collect() } else { z };
        }
        let got = p.predict(&x).unwrap();
        for (a, b) in got.iter().zip(&act) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
