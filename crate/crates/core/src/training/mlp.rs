//! Compact multilayer perceptron baseline.
//!
//! Units work on normalized activities: the inputs enter as `phi(x)`, each
//! layer computes `a = clamp(c + W a_prev, 0, 1)`, and the last layer's
//! activity is scaled back to millivolts. With weights multiplied by
//! `e_hi - e_lo` this is the constant-input fixed point of a vanilla RNN.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{optimize, Dataset, LossCurve, TrainConfig};
use crate::dynamics::{phi, DEFAULT_E_HI, DEFAULT_E_LO};
use crate::error::{Result, SnsError};
use crate::subnet::ArithOp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// Layer widths, inputs first.
    pub sizes: Vec<usize>,
    /// `weights[l][i][j]` maps unit `j` of layer `l` to unit `i` of layer `l + 1`.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub e_lo: f64,
    pub e_hi: f64,
}

/// Baseline widths: one hidden layer of two units for multiplication, a
/// single output unit otherwise.
pub fn baseline_sizes(op: ArithOp) -> Vec<usize> {
    match op {
        ArithOp::Mul => vec![2, 2, 1],
        _ => vec![2, 1],
    }
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "need at least two nonempty layers");
        MlpParams {
            sizes: sizes.to_vec(),
            weights: sizes.windows(2).map(|w| vec![vec![0.0; w[0]]; w[1]]).collect(),
            biases: sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            e_lo: DEFAULT_E_LO,
            e_hi: DEFAULT_E_HI,
        }
    }

    /// Weights uniform in `[0, 1]` and zero biases (the subnetwork
    /// initialization in normalized units).
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(sizes);
        for x in p.weights.iter_mut().flatten().flatten() {
            *x = rng.gen_range(0.0..1.0);
        }
        p
    }

    /// Alternating layer values: input activities, then pre-activation and
    /// activity of each layer.
    fn forward(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut xs = vec![input.iter().map(|&u| phi(u, self.e_lo, self.e_hi)).collect::<Vec<f64>>()];
        for (w, c) in self.weights.iter().zip(&self.biases) {
            let x = xs.last().unwrap();
            let u: Vec<f64> = w
                .iter()
                .zip(c)
                .map(|(row, ci)| ci + row.iter().zip(x).map(|(wij, xj)| wij * xj).sum::<f64>())
                .collect();
            let out = u.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            xs.push(u);
            xs.push(out);
        }
        xs
    }

    /// Output (mV) for inputs in mV.
    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        let span = self.e_hi - self.e_lo;
        self.forward(input).pop().unwrap().iter().map(|a| self.e_lo + span * a).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, c) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().flatten());
            out.extend(c);
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut k = 0;
        for (w, c) in self.weights.iter_mut().zip(&mut self.biases) {
            for x in w.iter_mut().flatten().chain(c.iter_mut()) {
                *x = flat[k];
                k += 1;
            }
        }
        assert_eq!(k, flat.len(), "flat MLP vector has the wrong length");
    }

    /// Loss of one constant-input example and its flat gradient, accumulated
    /// into `grad`.
    fn example_grad(&self, input: &[f64], labels: &[f64], warmup: usize, grad: &mut [f64]) -> f64 {
        let xs = self.forward(input);
        let span = self.e_hi - self.e_lo;
        let out = self.e_lo + span * xs.last().unwrap()[0];
        let tail = &labels[warmup..];
        let count = tail.len() as f64;
        let loss = tail.iter().map(|y| (out - y) * (out - y)).sum::<f64>() / count;
        let d_out = 2.0 * tail.iter().map(|y| out - y).sum::<f64>() / count;

        // offsets of each layer's block in the flat vector
        let mut offsets = Vec::with_capacity(self.weights.len());
        let mut k = 0;
        for w in &self.weights {
            offsets.push(k);
            k += w.len() * w[0].len() + w.len();
        }
        let mut d_x = vec![d_out * span];
        for l in (0..self.weights.len()).rev() {
            let (x_in, u) = (&xs[2 * l], &xs[2 * l + 1]);
            let w = &self.weights[l];
            let d_u: Vec<f64> = d_x
                .iter()
                .zip(u)
                .map(|(d, &ui)| if ui > 0.0 && ui < 1.0 { *d } else { 0.0 })
                .collect();
            let cols = x_in.len();
            let off = offsets[l];
            for i in 0..w.len() {
                for j in 0..cols {
                    grad[off + i * cols + j] += d_u[i] * x_in[j];
                }
                grad[off + w.len() * cols + i] += d_u[i];
            }
            d_x = (0..cols)
                .map(|j| (0..w.len()).map(|i| w[i][j] * d_u[i]).sum())
                .collect();
        }
        loss
    }

    /// Batch-mean loss and gradient in the layout of [`MlpParams::flatten`].
    pub fn loss_and_grad(&self, dataset: &Dataset, idx: &[usize], warmup: usize) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.flatten().len()];
        let mut loss = 0.0;
        for &k in idx {
            let ex = &dataset.examples[k];
            loss += self.example_grad(&ex.features, &ex.labels, warmup, &mut g);
        }
        let inv = 1.0 / idx.len() as f64;
        g.iter_mut().for_each(|x| *x *= inv);
        (loss * inv, g)
    }

    pub fn dataset_loss(&self, dataset: &Dataset, warmup: usize) -> f64 {
        let total: f64 = dataset
            .examples
            .iter()
            .map(|ex| {
                let out = self.eval(&ex.features)[0];
                let tail = &ex.labels[warmup..];
                tail.iter().map(|y| (out - y) * (out - y)).sum::<f64>() / tail.len() as f64
            })
            .sum();
        total / dataset.examples.len() as f64
    }
}

/// Output of a two-input, one-output MLP.
pub fn mlp_eval(p: &MlpParams, a: f64, b: f64) -> f64 {
    p.eval(&[a, b])[0]
}

/// Train with the same minibatch Adam loop and loss as the SNS.
pub fn mlp_train(init: &MlpParams, dataset: &Dataset, config: &TrainConfig) -> Result<(MlpParams, LossCurve)> {
    if init.sizes[0] != 2 || *init.sizes.last().unwrap() != 1 {
        return Err(SnsError::InvalidParameter("baseline MLP must map 2 inputs to 1 output".into()));
    }
    if dataset.examples.iter().any(|ex| ex.len() <= config.warmup) {
        return Err(SnsError::InvalidParameter("warmup must be shorter than every example".into()));
    }
    let with = |theta: &[f64]| {
        let mut p = init.clone();
        p.unflatten(theta);
        p
    };
    let grad = |theta: &[f64], idx: &[usize]| Ok(with(theta).loss_and_grad(dataset, idx, config.warmup).1);
    let loss = |theta: &[f64]| Ok(with(theta).dataset_loss(dataset, config.warmup));
    let (theta, curve) = optimize(init.flatten(), dataset.examples.len(), config, grad, loss, |_| {})?;
    Ok((with(&theta), curve))
}
