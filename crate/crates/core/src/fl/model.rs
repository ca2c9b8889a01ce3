//! Fully connected ReLU network with a softmax cross-entropy head.
//!
//! Parameters live in one flat vector, layer by layer, each layer as its
//! weight matrix (`fan_in x fan_out`, row-major, so the weights leaving one
//! input are contiguous) followed by its bias.

use std::ops::Range;

use rand::Rng;

use crate::fl::dataset::Dataset;
use crate::seed;
use crate::{Error, Result};

/// Layer widths of LeNet-300-100 on 28x28 inputs.
pub const LENET_300_100: [usize; 4] = [784, 300, 100, 10];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// Start of each layer's weights; its bias follows at
    /// `offset + fan_in * fan_out`.
    offsets: Vec<usize>,
    params: usize,
}

impl Mlp {
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::domain(format!("invalid layer widths {sizes:?}")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut at = 0;
        for w in sizes.windows(2) {
            offsets.push(at);
            at += w[0] * w[1] + w[1];
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            offsets,
            params: at,
        })
    }

    pub fn lenet_300_100() -> Self {
        Self::new(&LENET_300_100).expect("static widths are valid")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.params
    }

    /// Index ranges of every weight matrix and bias vector, in layout order.
    pub fn tensor_ranges(&self) -> Vec<Range<usize>> {
        let mut out = Vec::with_capacity(2 * self.offsets.len());
        for l in 0..self.offsets.len() {
            let (_, fan_out, w, b) = self.layer(l);
            out.push(w..b);
            out.push(b..b + fan_out);
        }
        out
    }

    fn layer(&self, l: usize) -> (usize, usize, usize, usize) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let w = self.offsets[l];
        (fan_in, fan_out, w, w + fan_in * fan_out)
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init(&self, seed_value: u64) -> Vec<f64> {
        let mut rng = seed::keyed_rng(seed::derive(seed_value, "model-init"), &[]);
        let mut theta = vec![0.0; self.params];
        for l in 0..self.offsets.len() {
            let (fan_in, fan_out, w, _) = self.layer(l);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut theta[w..w + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        theta
    }

    /// Activations of every layer: the input, the rectified hidden layers and
    /// the output logits.
    fn forward_all(&self, theta: &[f64], x: &[f32]) -> Vec<Vec<f64>> {
        let layers = self.offsets.len();
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.iter().map(|&v| v as f64).collect::<Vec<f64>>());
        for l in 0..layers {
            let (_, fan_out, w, b) = self.layer(l);
            let input = &acts[l];
            let mut out = theta[b..b + fan_out].to_vec();
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let row = &theta[w + i * fan_out..w + (i + 1) * fan_out];
                for (o, &wij) in out.iter_mut().zip(row) {
                    *o += a * wij;
                }
            }
            if l + 1 < layers {
                for o in &mut out {
                    *o = o.max(0.0);
                }
            }
            acts.push(out);
        }
        acts
    }

    pub fn logits(&self, theta: &[f64], x: &[f32]) -> Vec<f64> {
        self.forward_all(theta, x).pop().unwrap()
    }

    /// Arg-max class, lowest index on ties.
    pub fn predict(&self, theta: &[f64], x: &[f32]) -> usize {
        let z = self.logits(theta, x);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    /// Cross-entropy of one sample; adds `scale` times its gradient into
    /// `grad`.
    pub fn accumulate_gradient(&self, theta: &[f64], x: &[f32], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let acts = self.forward_all(theta, x);
        let logits = acts.last().unwrap();
        let (loss, mut delta) = softmax_cross_entropy(logits, label);
        for l in (0..self.offsets.len()).rev() {
            let (fan_in, fan_out, w, b) = self.layer(l);
            let input = &acts[l];
            for (g, d) in grad[b..b + fan_out].iter_mut().zip(&delta) {
                *g += scale * d;
            }
            let mut back = if l > 0 { vec![0.0; fan_in] } else { Vec::new() };
            for (i, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    // Also the rectifier's flat side for hidden inputs.
                    continue;
                }
                let row = w + i * fan_out;
                for (g, d) in grad[row..row + fan_out].iter_mut().zip(&delta) {
                    *g += scale * a * d;
                }
                if l > 0 {
                    back[i] = theta[row..row + fan_out]
                        .iter()
                        .zip(&delta)
                        .map(|(wij, d)| wij * d)
                        .sum();
                }
            }
            delta = back;
        }
        loss
    }

    /// Mean loss over `indices`, with its gradient written to `grad`.
    pub fn batch_gradient(&self, theta: &[f64], data: &Dataset, indices: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / indices.len() as f64;
        let mut loss = 0.0;
        for &i in indices {
            loss += self.accumulate_gradient(theta, data.sample(i), data.label(i), scale, grad);
        }
        loss * scale
    }

    /// Mean cross-entropy over `indices`.
    pub fn loss(&self, theta: &[f64], data: &Dataset, indices: &[usize]) -> f64 {
        let total: f64 = indices
            .iter()
            .map(|&i| softmax_cross_entropy(&self.logits(theta, data.sample(i)), data.label(i)).0)
            .sum();
        total / indices.len() as f64
    }
}

/// Loss and its gradient with respect to the logits.
fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    let loss = sum.ln() + max - logits[label];
    let mut grad: Vec<f64> = exp.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}
