//! Reverse-mode gradients through the unrolled SNS recurrence and a
//! finite-difference oracle built on [`simulate`].
//!
//! Writing `s = 1 + V p` and `a = b + W p`, one step is
//! `h = (tau h_prev + dt a) / D` with `D = tau + dt s`, which gives the local
//! derivatives used below:
//!
//! ```text
//! dh/dh_prev = tau / D      dh/da = dt / D
//! dh/ds      = -dt h / D    dh/dtau = (h_prev - h) / D
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::Example;
use crate::dynamics::{phi_prime, simulate, NetworkParams};
use crate::error::{Result, SnsError};

/// Which neuron is read out and how many leading steps the loss ignores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub output: usize,
    pub warmup: usize,
}

/// Mean squared error over steps `warmup..T`.
///
/// # Panics
///
/// If the lengths differ or `warmup >= T`.
pub fn mse_loss(pred: &[f64], label: &[f64], warmup: usize) -> f64 {
    assert_eq!(pred.len(), label.len(), "prediction and label lengths differ");
    assert!(warmup < pred.len(), "warmup must be shorter than the sequence");
    let sq: f64 = pred[warmup..]
        .iter()
        .zip(&label[warmup..])
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    sq / (pred.len() - warmup) as f64
}

/// Gradients with the shapes of the learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tau: Vec<f64>,
    pub b: Vec<f64>,
    pub w: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients {
            tau: vec![0.0; n],
            b: vec![0.0; n],
            w: vec![vec![0.0; n]; n],
            v: vec![vec![0.0; n]; n],
        }
    }

    pub fn n(&self) -> usize {
        self.tau.len()
    }

    pub fn get(&self, r: ParamRef) -> f64 {
        match r {
            ParamRef::Tau(i) => self.tau[i],
            ParamRef::B(i) => self.b[i],
            ParamRef::W(i, j) => self.w[i][j],
            ParamRef::V(i, j) => self.v[i][j],
        }
    }

    pub fn set(&mut self, r: ParamRef, x: f64) {
        match r {
            ParamRef::Tau(i) => self.tau[i] = x,
            ParamRef::B(i) => self.b[i] = x,
            ParamRef::W(i, j) => self.w[i][j] = x,
            ParamRef::V(i, j) => self.v[i][j] = x,
        }
    }

    fn add_assign(&mut self, o: &Gradients) {
        let add = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.tau, &o.tau);
        add(&mut self.b, &o.b);
        for (a, b) in self.w.iter_mut().zip(&o.w) {
            add(a, b);
        }
        for (a, b) in self.v.iter_mut().zip(&o.v) {
            add(a, b);
        }
    }

    fn scale(&mut self, k: f64) {
        self.tau.iter_mut().chain(self.b.iter_mut()).for_each(|x| *x *= k);
        self.w.iter_mut().chain(self.v.iter_mut()).flatten().for_each(|x| *x *= k);
    }

    /// Flat layout shared with [`flatten_params`]: `tau, b, W, V`, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.n() * (self.n() + 1));
        out.extend(&self.tau);
        out.extend(&self.b);
        out.extend(self.w.iter().flatten());
        out.extend(self.v.iter().flatten());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Learnable parameters in the flat order of [`flatten_params`].
pub fn flatten_params(p: &NetworkParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * p.n * (p.n + 1));
    out.extend(&p.tau);
    out.extend(&p.b);
    out.extend(p.w.iter().flatten());
    out.extend(p.v.iter().flatten());
    out
}

/// Inverse of [`flatten_params`].
pub fn unflatten_params(p: &mut NetworkParams, flat: &[f64]) {
    let n = p.n;
    assert_eq!(flat.len(), 2 * n * (n + 1), "flat parameter vector has the wrong length");
    p.tau.copy_from_slice(&flat[..n]);
    p.b.copy_from_slice(&flat[n..2 * n]);
    let (w, v) = flat[2 * n..].split_at(n * n);
    for i in 0..n {
        p.w[i].copy_from_slice(&w[i * n..(i + 1) * n]);
        p.v[i].copy_from_slice(&v[i * n..(i + 1) * n]);
    }
}

/// Address of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRef {
    Tau(usize),
    B(usize),
    W(usize, usize),
    V(usize, usize),
}

impl ParamRef {
    pub fn get(self, p: &NetworkParams) -> f64 {
        match self {
            ParamRef::Tau(i) => p.tau[i],
            ParamRef::B(i) => p.b[i],
            ParamRef::W(i, j) => p.w[i][j],
            ParamRef::V(i, j) => p.v[i][j],
        }
    }

    pub fn set(self, p: &mut NetworkParams, x: f64) {
        match self {
            ParamRef::Tau(i) => p.tau[i] = x,
            ParamRef::B(i) => p.b[i] = x,
            ParamRef::W(i, j) => p.w[i][j] = x,
            ParamRef::V(i, j) => p.v[i][j] = x,
        }
    }
}

/// Every parameter that can influence the loss: `tau` and `b` of free
/// neurons and the masked `W`/`V` entries of their rows.
pub fn learnable_params(p: &NetworkParams) -> Vec<ParamRef> {
    let free: Vec<usize> = (0..p.n).filter(|&i| !p.is_clamped(i)).collect();
    let mut out: Vec<ParamRef> = free.iter().map(|&i| ParamRef::Tau(i)).collect();
    out.extend(free.iter().map(|&i| ParamRef::B(i)));
    for &i in &free {
        out.extend((0..p.n).filter(|&j| p.mask[i][j]).map(|j| ParamRef::W(i, j)));
    }
    for &i in &free {
        out.extend((0..p.n).filter(|&j| p.mask[i][j]).map(|j| ParamRef::V(i, j)));
    }
    out
}

fn check_example(params: &NetworkParams, ex: &Example, spec: LossSpec) -> Result<()> {
    if ex.features.len() != params.clamped.len() {
        return Err(SnsError::InvalidParameter(format!(
            "example has {} features but {} neurons are clamped",
            ex.features.len(),
            params.clamped.len()
        )));
    }
    if spec.output >= params.n || params.is_clamped(spec.output) {
        return Err(SnsError::InvalidParameter(format!(
            "output neuron {} must be a free neuron of the network",
            spec.output
        )));
    }
    if spec.warmup >= ex.len() {
        return Err(SnsError::InvalidParameter(format!(
            "warmup {} must be shorter than the sequence ({})",
            spec.warmup,
            ex.len()
        )));
    }
    Ok(())
}

/// Readout series of the output neuron, computed with [`simulate`] from rest.
pub fn predict(params: &NetworkParams, ex: &Example, output: usize) -> Result<Vec<f64>> {
    let traj = simulate(params, &ex.series(), &vec![0.0; params.n])?;
    Ok(traj.iter().map(|h| params.readout(h[output])).collect())
}

/// Batch-mean loss, evaluated with [`simulate`] (independent of the BPTT tape).
pub fn forward_loss(params: &NetworkParams, batch: &[Example], spec: LossSpec) -> Result<f64> {
    if batch.is_empty() {
        return Err(SnsError::InvalidParameter("empty batch".into()));
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|ex| {
            check_example(params, ex, spec)?;
            Ok(mse_loss(&predict(params, ex, spec.output)?, &ex.labels, spec.warmup))
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Forward pass of one example, row-major `T x n` buffers.
struct Tape {
    n: usize,
    /// Previous state with the stimulus written over clamped entries.
    prev: Vec<f64>,
    act: Vec<f64>,
    shunt: Vec<f64>,
    h: Vec<f64>,
}

impl Tape {
    fn row<'a>(&self, v: &'a [f64], t: usize) -> &'a [f64] {
        &v[t * self.n..(t + 1) * self.n]
    }
}

/// Advance `h` one step in place, writing the activations and shunts used.
/// Same arithmetic as `step`, so results are bit-identical to `simulate`.
#[inline]
fn advance(params: &NetworkParams, features: &[f64], h: &mut [f64], act: &mut [f64], shunt: &mut [f64], prev: &mut [f64]) {
    let n = params.n;
    for (&c, &u) in params.clamped.iter().zip(features) {
        h[c] = u;
    }
    prev.copy_from_slice(h);
    for j in 0..n {
        act[j] = params.phi(prev[j]);
    }
    for i in 0..n {
        let mut drive = params.b[i];
        let mut s = 1.0;
        for j in 0..n {
            drive += params.w[i][j] * act[j];
            s += params.v[i][j] * act[j];
        }
        let tau_hat = params.tau[i] / s;
        let z = params.dt / (tau_hat + params.dt);
        h[i] = (1.0 - z) * prev[i] + z * (drive / s);
        shunt[i] = s;
    }
    for &c in &params.clamped {
        h[c] = prev[c];
    }
}

fn check_finite(h: &[f64], t: usize) -> Result<()> {
    match h.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(SnsError::NumericalFault { neuron: i, step: Some(t) }),
        None => Ok(()),
    }
}

fn record(params: &NetworkParams, ex: &Example) -> Result<Tape> {
    let n = params.n;
    let len = n * ex.len();
    let mut tape = Tape { n, prev: vec![0.0; len], act: vec![0.0; len], shunt: vec![0.0; len], h: vec![0.0; len] };
    let mut h = vec![0.0; n];
    for t in 0..ex.len() {
        let r = t * n..(t + 1) * n;
        advance(params, &ex.features, &mut h, &mut tape.act[r.clone()], &mut tape.shunt[r.clone()], &mut tape.prev[r.clone()]);
        check_finite(&h, t)?;
        tape.h[r].copy_from_slice(&h);
    }
    Ok(tape)
}

/// Loss of one example without keeping the trajectory.
fn rollout_loss(params: &NetworkParams, ex: &Example, spec: LossSpec) -> Result<f64> {
    let n = params.n;
    let (mut h, mut act, mut shunt, mut prev) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut sq = 0.0;
    for t in 0..ex.len() {
        advance(params, &ex.features, &mut h, &mut act, &mut shunt, &mut prev);
        check_finite(&h, t)?;
        if t >= spec.warmup {
            let e = params.readout(h[spec.output]) - ex.labels[t];
            sq += e * e;
        }
    }
    Ok(sq / (ex.len() - spec.warmup) as f64)
}

/// Batch-mean loss from an allocation-light rollout; agrees with
/// [`forward_loss`] up to summation order.
pub fn batch_loss(params: &NetworkParams, batch: &[Example], spec: LossSpec) -> Result<f64> {
    if batch.is_empty() {
        return Err(SnsError::InvalidParameter("empty batch".into()));
    }
    let losses: Vec<f64> = batch
        .par_iter()
        .map(|ex| {
            check_example(params, ex, spec)?;
            rollout_loss(params, ex, spec)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

fn example_grad(params: &NetworkParams, ex: &Example, spec: LossSpec) -> Result<(f64, Gradients)> {
    check_example(params, ex, spec)?;
    let tape = record(params, ex)?;
    let n = params.n;
    let t_len = ex.len();
    let (lo, hi, dt) = (params.e_lo, params.e_hi, params.dt);
    let scale = 2.0 / (t_len - spec.warmup) as f64;
    let pred: Vec<f64> = (0..t_len).map(|t| params.readout(tape.h[t * n + spec.output])).collect();
    let loss = mse_loss(&pred, &ex.labels, spec.warmup);

    let mut g = Gradients::zeros(n);
    let mut delta = vec![0.0; n];
    let mut ga = vec![0.0; n];
    let mut gs = vec![0.0; n];
    let mut carry = vec![0.0; n];
    for t in (0..t_len).rev() {
        let (prev, act, shunt, h) = (tape.row(&tape.prev, t), tape.row(&tape.act, t), tape.row(&tape.shunt, t), tape.row(&tape.h, t));
        let u = h[spec.output];
        if t >= spec.warmup && u > lo && u < hi {
            delta[spec.output] += scale * (u - ex.labels[t]);
        }
        for &c in &params.clamped {
            delta[c] = 0.0;
        }
        for i in 0..n {
            let d = params.tau[i] + dt * shunt[i];
            ga[i] = delta[i] * dt / d;
            gs[i] = -delta[i] * dt * h[i] / d;
            carry[i] = delta[i] * params.tau[i] / d;
            if delta[i] == 0.0 {
                continue;
            }
            g.tau[i] += delta[i] * (prev[i] - h[i]) / d;
            g.b[i] += ga[i];
            for j in 0..n {
                if params.mask[i][j] {
                    g.w[i][j] += ga[i] * act[j];
                    g.v[i][j] += gs[i] * act[j];
                }
            }
        }
        for j in 0..n {
            let mut gp = 0.0;
            for i in 0..n {
                gp += params.w[i][j] * ga[i] + params.v[i][j] * gs[i];
            }
            delta[j] = carry[j] + gp * phi_prime(prev[j], lo, hi);
        }
    }
    Ok((loss, g))
}

/// Batch-mean loss and its exact gradient through the unrolled recurrence.
///
/// Per-example work runs in parallel; partial gradients are summed in batch
/// order so the result does not depend on scheduling.
pub fn loss_and_grad(params: &NetworkParams, batch: &[Example], spec: LossSpec) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(SnsError::InvalidParameter("empty batch".into()));
    }
    let parts: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|ex| example_grad(params, ex, spec))
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros(params.n);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    let k = 1.0 / batch.len() as f64;
    total.scale(k);
    Ok((loss * k, total))
}

/// Gradient of the batch-mean MSE with respect to `tau`, `b`, `W` and `V`.
pub fn bptt_grad(params: &NetworkParams, batch: &[Example], spec: LossSpec) -> Result<Gradients> {
    loss_and_grad(params, batch, spec).map(|(_, g)| g)
}

/// Central differences of [`forward_loss`], one learnable parameter at a time.
pub fn finite_diff_grad(params: &NetworkParams, batch: &[Example], spec: LossSpec, eps: f64) -> Result<Gradients> {
    finite_diff_checked(params, batch, spec, eps).map(|(g, _)| g)
}

/// Like [`finite_diff_grad`], also returning the parameters whose
/// perturbation moved some potential across an activation kink.
pub fn finite_diff_checked(
    params: &NetworkParams,
    batch: &[Example],
    spec: LossSpec,
    eps: f64,
) -> Result<(Gradients, Vec<ParamRef>)> {
    if !(eps > 0.0) {
        return Err(SnsError::InvalidParameter(format!("eps must be positive (got {eps})")));
    }
    let base = regions(params, batch)?;
    let mut g = Gradients::zeros(params.n);
    let mut kinked = Vec::new();
    for r in learnable_params(params) {
        let x = r.get(params);
        let mut q = params.clone();
        r.set(&mut q, x + eps);
        let up = forward_loss(&q, batch, spec)?;
        let up_regions = regions(&q, batch)?;
        r.set(&mut q, x - eps);
        let down = forward_loss(&q, batch, spec)?;
        let down_regions = regions(&q, batch)?;
        g.set(r, (up - down) / (2.0 * eps));
        if up_regions != base || down_regions != base {
            kinked.push(r);
        }
    }
    Ok((g, kinked))
}

/// Where each potential of each trajectory sits relative to the kinks.
fn regions(params: &NetworkParams, batch: &[Example]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for ex in batch {
        for h in simulate(params, &ex.series(), &vec![0.0; params.n])? {
            out.extend(h.iter().map(|&u| {
                if u < params.e_lo {
                    0
                } else if u == params.e_lo {
                    1
                } else if u < params.e_hi {
                    2
                } else if u == params.e_hi {
                    3
                } else {
                    4
                }
            }));
        }
    }
    Ok(out)
}

/// Relative disagreement between two gradient entries. Entries below `floor`
/// in magnitude are compared absolutely against `floor`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub nets: usize,
    pub neurons: usize,
    pub t_len: usize,
    pub batch: usize,
    pub eps: f64,
    pub floor: f64,
    /// Test hook: perturb the analytic gradient before comparing.
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            nets: 100,
            neurons: 4,
            t_len: 10,
            batch: 4,
            eps: 1e-5,
            floor: 1e-4,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub nets: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

impl GradcheckReport {
    pub fn skipped_fraction(&self) -> f64 {
        let total = self.checked + self.skipped;
        if total == 0 {
            0.0
        } else {
            self.skipped as f64 / total as f64
        }
    }
}

/// A random network with up to two clamped inputs and a dense mask on the
/// free rows; the last neuron is the output.
pub fn random_network(rng: &mut impl Rng, n: usize, dt: f64) -> NetworkParams {
    let mut p = NetworkParams::new(n, dt, 0.0, 20.0);
    p.clamped = (0..n.saturating_sub(1).min(2)).collect();
    for i in 0..n {
        if p.is_clamped(i) {
            continue;
        }
        p.tau[i] = rng.gen_range(0.01..0.5);
        p.b[i] = rng.gen_range(-5.0..15.0);
        for j in 0..n {
            p.connect(i, j, rng.gen_range(-20.0..20.0), rng.gen_range(0.0..5.0));
        }
    }
    p
}

/// Compare [`bptt_grad`] with central differences on `opts.nets` random
/// networks, skipping kink-crossing perturbations.
pub fn gradcheck(seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if opts.neurons == 0 || opts.t_len == 0 || opts.batch == 0 {
        return Err(SnsError::InvalidParameter("gradcheck needs neurons, T and batch >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport { nets: opts.nets, checked: 0, skipped: 0, max_rel_err: 0.0 };
    for _ in 0..opts.nets {
        let params = random_network(&mut rng, opts.neurons, 0.1);
        let batch: Vec<Example> = (0..opts.batch)
            .map(|_| Example {
                features: (0..params.clamped.len()).map(|_| rng.gen_range(0.0..20.0)).collect(),
                labels: (0..opts.t_len).map(|_| rng.gen_range(0.0..20.0)).collect(),
            })
            .collect();
        let spec = LossSpec { output: opts.neurons - 1, warmup: 0 };
        let mut analytic = bptt_grad(&params, &batch, spec)?;
        if opts.corrupt {
            for r in learnable_params(&params) {
                analytic.set(r, analytic.get(r) * 1.01 + 1e-2);
            }
        }
        let (numeric, kinked) = finite_diff_checked(&params, &batch, spec, opts.eps)?;
        for r in learnable_params(&params) {
            if kinked.contains(&r) {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let e = relative_error(analytic.get(r), numeric.get(r), opts.floor);
            report.max_rel_err = report.max_rel_err.max(e);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leak(tau: f64, b: f64) -> NetworkParams {
        let mut p = NetworkParams::new(1, 0.1, 0.0, 20.0);
        p.tau = vec![tau];
        p.b = vec![b];
        p
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0], 0), 0.0);
        assert_eq!(mse_loss(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0], 0), 1.0);
        assert_eq!(mse_loss(&[0.0, 2.0], &[2.0, 0.0], 0), 4.0);
        assert_eq!(mse_loss(&[9.0, 2.0], &[0.0, 0.0], 1), 4.0);
    }

    #[test]
    fn leak_bias_gradient_matches_geometric_series() {
        let (tau, b, t_len) = (0.3, 6.0, 12);
        let p = leak(tau, b);
        let labels: Vec<f64> = (0..t_len).map(|t| 0.5 * t as f64).collect();
        let ex = Example { features: vec![], labels: labels.clone() };
        let g = bptt_grad(&p, &[ex], LossSpec { output: 0, warmup: 0 }).unwrap();
        // h_t = b (1 - r^t) with r = 1 - z
        let r = 1.0 - 0.1 / (tau + 0.1);
        let expected: f64 = (1..=t_len)
            .map(|t| {
                let s = 1.0 - r.powi(t as i32);
                2.0 * (b * s - labels[t - 1]) * s
            })
            .sum::<f64>()
            / t_len as f64;
        assert!((g.b[0] - expected).abs() < 1e-12, "{} vs {expected}", g.b[0]);
    }

    #[test]
    fn self_labelled_batch_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_network(&mut rng, 4, 0.1);
        let batch: Vec<Example> = (0..3)
            .map(|k| {
                let mut ex = Example { features: vec![4.0 * k as f64, 7.0], labels: vec![0.0; 10] };
                ex.labels = predict(&p, &ex, 3).unwrap();
                ex
            })
            .collect();
        let (loss, g) = loss_and_grad(&p, &batch, LossSpec { output: 3, warmup: 0 }).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn tape_matches_simulate_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_network(&mut rng, 5, 0.1);
        let ex = Example { features: vec![3.0, 17.0], labels: vec![0.0; 20] };
        let tape = record(&p, &ex).unwrap();
        let sim = simulate(&p, &ex.series(), &[0.0; 5]).unwrap();
        assert_eq!(tape.h, sim.concat());
        let spec = LossSpec { output: 4, warmup: 2 };
        let batch = [ex];
        assert!((batch_loss(&p, &batch, spec).unwrap() - forward_loss(&p, &batch, spec).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn analytic_matches_numeric() {
        let report = gradcheck(1, &GradcheckOptions { nets: 5, ..Default::default() }).unwrap();
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
        assert!(report.checked > 0);
    }

    #[test]
    fn corruption_is_detected() {
        let opts = GradcheckOptions { nets: 2, corrupt: true, ..Default::default() };
        assert!(gradcheck(1, &opts).unwrap().max_rel_err > 1e-4);
    }

    #[test]
    fn masked_entries_get_no_numeric_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = random_network(&mut rng, 4, 0.1);
        p.w[3][2] = 0.0;
        p.v[3][2] = 0.0;
        p.mask[3][2] = false;
        let batch = [Example { features: vec![5.0, 9.0], labels: vec![3.0; 6] }];
        let spec = LossSpec { output: 3, warmup: 0 };
        let g = finite_diff_grad(&p, &batch, spec, 1e-5).unwrap();
        assert_eq!(g.w[3][2], 0.0);
        assert_eq!(g.v[3][2], 0.0);
        let a = bptt_grad(&p, &batch, spec).unwrap();
        assert_eq!(a.w[3][2], 0.0);
        // clamped rows never receive gradient
        assert!(a.w[0].iter().chain(&a.v[1]).all(|&x| x == 0.0));
        assert_eq!((a.tau[0], a.b[1]), (0.0, 0.0));
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_network(&mut rng, 3, 0.1);
        let mut q = NetworkParams::new(3, 0.1, 0.0, 20.0);
        q.mask = p.mask.clone();
        unflatten_params(&mut q, &flatten_params(&p));
        assert_eq!(flatten_params(&q), flatten_params(&p));
        assert_eq!(q.w, p.w);
    }

    #[test]
    fn bad_specs_rejected() {
        let p = leak(0.1, 1.0);
        let ex = Example { features: vec![], labels: vec![0.0; 3] };
        assert!(bptt_grad(&p, std::slice::from_ref(&ex), LossSpec { output: 1, warmup: 0 }).is_err());
        assert!(bptt_grad(&p, std::slice::from_ref(&ex), LossSpec { output: 0, warmup: 3 }).is_err());
        assert!(bptt_grad(&p, &[], LossSpec { output: 0, warmup: 0 }).is_err());
        assert!(finite_diff_grad(&p, &[ex], LossSpec { output: 0, warmup: 0 }, 0.0).is_err());
    }
}
