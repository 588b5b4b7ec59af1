use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{DEFAULT_E_HI, DEFAULT_E_LO};
use crate::error::{Result, SnsError};
use crate::subnet::{ideal_op, ArithOp};

/// One training sequence: constant presynaptic potentials and a label series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// Potential (mV) held on each clamped neuron for the whole sequence, in
    /// the network's `clamped` order.
    pub features: Vec<f64>,
    /// Target output (mV) at each step.
    pub labels: Vec<f64>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Expand the constant features into a `T`-row input series.
    pub fn series(&self) -> Vec<Vec<f64>> {
        vec![self.features.clone(); self.labels.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub op: ArithOp,
    pub examples: Vec<Example>,
    pub t_len: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Draw `n` input pairs uniformly from `[0, 20]^2` mV and label every step
/// with `ideal_op(op, a, b)`.
pub fn gen_dataset(op: ArithOp, n: usize, t_len: usize, dt: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || t_len == 0 {
        return Err(SnsError::InvalidParameter(format!(
            "dataset needs at least one example of length >= 1 (got n={n}, T={t_len})"
        )));
    }
    if !(dt > 0.0) {
        return Err(SnsError::InvalidParameter(format!("dt must be positive (got {dt})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|_| {
            let a = rng.gen_range(DEFAULT_E_LO..=DEFAULT_E_HI);
            let b = rng.gen_range(DEFAULT_E_LO..=DEFAULT_E_HI);
            Example {
                features: vec![a, b],
                labels: vec![ideal_op(op, a, b); t_len],
            }
        })
        .collect();
    Ok(Dataset { op, examples, t_len, dt, seed })
}
