//! Supervised training of SNS parameters by backpropagation through time,
//! plus the compact MLP baseline.

mod adam;
mod bptt;
mod dataset;
mod mlp;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, adam_update, project_params, AdamConfig, AdamState};
pub use bptt::{
    batch_loss, bptt_grad, finite_diff_checked, finite_diff_grad, flatten_params, forward_loss, gradcheck, learnable_params,
    loss_and_grad, mse_loss, predict, random_network, relative_error, unflatten_params, GradcheckOptions,
    GradcheckReport, Gradients, LossSpec, ParamRef,
};
pub use dataset::{gen_dataset, Dataset, Example};
pub use mlp::{baseline_sizes, mlp_eval, mlp_train, MlpParams};

use crate::dynamics::NetworkParams;
use crate::error::{Result, SnsError};
use crate::subnet::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
}

/// Optimizer, loss and dataset settings for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: LossKind,
    /// Defaults to the topology's output neuron.
    pub output_neuron: Option<usize>,
    /// Leading steps excluded from the loss.
    pub warmup: usize,
    pub seed: u64,
    pub examples: usize,
    pub seq_len: usize,
    pub dt: f64,
    /// Points per axis of the evaluation contour.
    pub grid_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss: LossKind::Mse,
            output_neuron: None,
            warmup: 0,
            seed: 0,
            examples: 1000,
            seq_len: 50,
            dt: 0.1,
            grid_n: 21,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SnsError::InvalidParameter(m));
        if self.epochs == 0 || self.batch_size == 0 || self.examples == 0 || self.seq_len == 0 {
            return bad("epochs, batch_size, examples and seq_len must be at least 1".into());
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!("Adam betas must lie in (0, 1) (got {}, {})", self.beta1, self.beta2));
        }
        if !(self.learning_rate > 0.0) || !(self.eps > 0.0) || !(self.dt > 0.0) {
            return bad("learning_rate, eps and dt must be positive".into());
        }
        if self.warmup >= self.seq_len {
            return bad(format!("warmup {} must be shorter than seq_len {}", self.warmup, self.seq_len));
        }
        if self.grid_n < 2 {
            return bad("grid_n must be at least 2".into());
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SnsError::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| SnsError::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-epoch training MSE (mV^2) over the whole dataset and epoch wall time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub mse: Vec<f64>,
    pub seconds: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    epoch: usize,
    mse: f64,
    seconds: f64,
}

impl LossCurve {
    pub fn len(&self) -> usize {
        self.mse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mse.is_empty()
    }

    /// Lowest MSE reached, i.e. the loss of the returned parameters.
    pub fn best(&self) -> f64 {
        self.mse.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn best_so_far(&self) -> Vec<f64> {
        self.mse
            .iter()
            .scan(f64::INFINITY, |m, &x| {
                *m = m.min(x);
                Some(*m)
            })
            .collect()
    }

    /// First epoch (1-based) whose MSE is below `threshold`.
    pub fn epochs_to_reach(&self, threshold: f64) -> Option<usize> {
        self.mse.iter().position(|&x| x < threshold).map(|k| k + 1)
    }

    /// Write `epoch,mse,seconds` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| SnsError::csv(path, e))?;
        for (k, (&mse, &seconds)) in self.mse.iter().zip(&self.seconds).enumerate() {
            w.serialize(CurveRow { epoch: k + 1, mse, seconds }).map_err(|e| SnsError::csv(path, e))?;
        }
        if self.is_empty() {
            w.write_record(["epoch", "mse", "seconds"]).map_err(|e| SnsError::csv(path, e))?;
        }
        w.flush().map_err(|e| SnsError::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| SnsError::csv(path, e))?;
        let mut curve = LossCurve::default();
        for row in r.deserialize() {
            let row: CurveRow = row.map_err(|e| SnsError::csv(path, e))?;
            curve.mse.push(row.mse);
            curve.seconds.push(row.seconds);
        }
        Ok(curve)
    }
}

/// Minibatch Adam over a flat parameter vector. `grad` returns the batch
/// gradient for a list of example indices, `loss` the full-dataset loss, and
/// `project` restores constraints after each update. Returns the best
/// parameters seen at an epoch boundary.
pub(crate) fn optimize(
    theta: Vec<f64>,
    n_examples: usize,
    config: &TrainConfig,
    grad: impl Fn(&[f64], &[usize]) -> Result<Vec<f64>>,
    loss: impl Fn(&[f64]) -> Result<f64>,
    project: impl Fn(&mut [f64]),
) -> Result<(Vec<f64>, LossCurve)> {
    config.validate()?;
    let adam = config.adam();
    let mut theta = theta;
    let mut state = AdamState::new(theta.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n_examples).collect();
    let mut best = (f64::INFINITY, theta.clone());
    let mut curve = LossCurve::default();
    for epoch in 1..=config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let g = grad(&theta, chunk).map_err(|e| diverged(e, epoch))?;
            adam_update(&mut state, &mut theta, &g, &adam);
            project(&mut theta);
        }
        let l = loss(&theta).map_err(|e| diverged(e, epoch))?;
        if !l.is_finite() || theta.iter().any(|x| !x.is_finite()) {
            return Err(SnsError::TrainingDiverged { epoch });
        }
        if l < best.0 {
            best = (l, theta.clone());
        }
        curve.mse.push(l);
        curve.seconds.push(start.elapsed().as_secs_f64());
    }
    Ok((best.1, curve))
}

fn diverged(e: SnsError, epoch: usize) -> SnsError {
    match e {
        SnsError::NumericalFault { .. } => SnsError::TrainingDiverged { epoch },
        other => other,
    }
}

/// Train the learnable entries of `topology` on `dataset`.
///
/// Returns the parameters with the lowest full-dataset loss seen after any
/// epoch, and the loss curve.
pub fn train(topology: &Topology, dataset: &Dataset, config: &TrainConfig) -> Result<(NetworkParams, LossCurve)> {
    let mut base = topology.init.clone();
    base.dt = dataset.dt;
    let spec = LossSpec { output: config.output_neuron.unwrap_or(topology.output), warmup: config.warmup };
    if dataset.examples.iter().any(|ex| ex.len() <= spec.warmup) {
        return Err(SnsError::InvalidParameter("warmup must be shorter than every example".into()));
    }
    let learnable = learnable_flags(topology);
    let examples = &dataset.examples;
    let with = |theta: &[f64]| {
        let mut p = base.clone();
        unflatten_params(&mut p, theta);
        p
    };
    let grad = |theta: &[f64], idx: &[usize]| {
        let batch: Vec<Example> = idx.iter().map(|&k| examples[k].clone()).collect();
        let mut g = bptt_grad(&with(theta), &batch, spec)?.flatten();
        for (x, &keep) in g.iter_mut().zip(&learnable) {
            if !keep {
                *x = 0.0;
            }
        }
        Ok(g)
    };
    let loss = |theta: &[f64]| batch_loss(&with(theta), examples, spec);
    let project = |theta: &mut [f64]| {
        let mut p = with(theta);
        project_params(&mut p);
        topology.project(&mut p);
        theta.copy_from_slice(&flatten_params(&p));
    };
    let (theta, curve) = optimize(flatten_params(&base), examples.len(), config, grad, loss, project)?;
    Ok((with(&theta), curve))
}

/// Which flat parameters the topology allows to change.
fn learnable_flags(t: &Topology) -> Vec<bool> {
    let free: Vec<bool> = (0..t.n).map(|i| !t.init.is_clamped(i)).collect();
    let mut out = Vec::with_capacity(2 * t.n * (t.n + 1));
    out.extend(&free);
    out.extend(&free);
    out.extend(t.w_mask.iter().flatten());
    out.extend(t.v_mask.iter().flatten());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subnet::{build_topology, ArithOp};

    fn quick(op: ArithOp, epochs: usize) -> (NetworkParams, LossCurve) {
        let data = gen_dataset(op, 64, 10, 0.1, 1).unwrap();
        let cfg = TrainConfig { epochs, examples: 64, seq_len: 10, ..Default::default() };
        train(&build_topology(op, 1), &data, &cfg).unwrap()
    }

    #[test]
    fn config_defaults() {
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.adam(), AdamConfig::default());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
        let bad = TrainConfig { beta1: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { epochs: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_reduces_loss_and_keeps_invariants() {
        let (p, curve) = quick(ArithOp::Div, 15);
        assert_eq!(curve.len(), 15);
        assert!(curve.best() < curve.mse[0]);
        assert!(p.validate().is_ok());
        let t = build_topology(ArithOp::Div, 1);
        for i in 0..3 {
            for j in 0..3 {
                if !t.w_mask[i][j] {
                    assert_eq!(p.w[i][j], 0.0);
                }
                if !t.v_mask[i][j] {
                    assert_eq!(p.v[i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (p1, c1) = quick(ArithOp::Mul, 5);
        let (p2, c2) = quick(ArithOp::Mul, 5);
        assert_eq!(p1, p2);
        assert_eq!(c1.mse, c2.mse);
    }

    #[test]
    fn curve_helpers() {
        let c = LossCurve { mse: vec![3.0, 1.0, 2.0, 0.005], seconds: vec![0.0; 4] };
        assert_eq!(c.best_so_far(), vec![3.0, 1.0, 1.0, 0.005]);
        assert_eq!(c.epochs_to_reach(0.01), Some(4));
        assert_eq!(c.epochs_to_reach(1e-9), None);
        assert_eq!(c.best(), 0.005);
    }

    #[test]
    fn curve_csv_round_trip() {
        let c = LossCurve { mse: vec![0.1, 1.0 / 3.0], seconds: vec![0.25, 0.5] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        c.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,mse,seconds\n1,"));
        assert_eq!(LossCurve::read_csv(&path).unwrap(), c);
    }
}
