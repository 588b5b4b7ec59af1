//! Forward dynamics of the discretized synthetic nervous system (SNS).
//!
//! A network of `n` non-spiking neurons is described by the reduced parameter
//! set in [`NetworkParams`]. One semi-implicit Euler step maps the membrane
//! potentials `h[t-1]` to `h[t]`:
//!
//! ```text
//! p      = phi(h[t-1])                 (clamped entries replaced by their stimulus)
//! tau^   = tau / (1 + V p)
//! z      = dt / (tau^ + dt)
//! h^     = (b + W p) / (1 + V p)
//! h[t]   = (1 - z) * h[t-1] + z * h^
//! ```
//!
//! With `V = 0` the update is a CTRNN ([`ctrnn_step`]); additionally setting
//! `tau = 0` gives a vanilla RNN ([`vanilla_step`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnsError};

/// Typical activation thresholds (mV).
pub const DEFAULT_E_LO: f64 = 0.0;
pub const DEFAULT_E_HI: f64 = 20.0;

/// Externally supplied potentials for clamped neurons, as `(index, mV)` pairs.
pub type Stimulus = [(usize, f64)];

/// Piecewise-linear activation mapping a potential to an activity in `[0, 1]`.
pub fn activation(u: f64, e_lo: f64, e_hi: f64) -> Result<f64> {
    if !(e_lo < e_hi) {
        return Err(SnsError::InvalidParameter(format!(
            "activation thresholds must satisfy e_lo < e_hi (got {e_lo}, {e_hi})"
        )));
    }
    Ok(phi(u, e_lo, e_hi))
}

#[inline]
pub(crate) fn phi(u: f64, e_lo: f64, e_hi: f64) -> f64 {
    (u.clamp(e_lo, e_hi) - e_lo) / (e_hi - e_lo)
}

/// Derivative of the activation; zero at and outside the kinks.
#[inline]
pub(crate) fn phi_prime(u: f64, e_lo: f64, e_hi: f64) -> f64 {
    if u > e_lo && u < e_hi {
        1.0 / (e_hi - e_lo)
    } else {
        0.0
    }
}

/// Reduced SNS parameters.
///
/// `w[i][j]` and `v[i][j]` describe the synapse from neuron `j` onto neuron `i`.
/// Entries of `w` and `v` where `mask[i][j]` is false are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub n: usize,
    pub dt: f64,
    pub e_lo: f64,
    pub e_hi: f64,
    pub tau: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
    pub clamped: Vec<usize>,
}

impl NetworkParams {
    /// A network with no synapses, zero bias and zero time constants.
    pub fn new(n: usize, dt: f64, e_lo: f64, e_hi: f64) -> Self {
        NetworkParams {
            n,
            dt,
            e_lo,
            e_hi,
            tau: vec![0.0; n],
            b: vec![0.0; n],
            w: vec![vec![0.0; n]; n],
            v: vec![vec![0.0; n]; n],
            mask: vec![vec![false; n]; n],
            clamped: Vec::new(),
        }
    }

    /// Set a synapse `pre -> post`, marking it in the mask.
    pub fn connect(&mut self, post: usize, pre: usize, w: f64, v: f64) {
        self.w[post][pre] = w;
        self.v[post][pre] = v;
        self.mask[post][pre] = true;
    }

    pub fn is_clamped(&self, i: usize) -> bool {
        self.clamped.contains(&i)
    }

    #[inline]
    pub fn phi(&self, u: f64) -> f64 {
        phi(u, self.e_lo, self.e_hi)
    }

    /// Activity expressed back in millivolts: the potential clipped to `[e_lo, e_hi]`.
    #[inline]
    pub fn readout(&self, u: f64) -> f64 {
        u.clamp(self.e_lo, self.e_hi)
    }

    /// Check shapes and the sign/threshold invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        let bad = |msg: String| Err(SnsError::InvalidParameter(msg));
        if self.tau.len() != n || self.b.len() != n {
            return bad(format!("tau and b must have length {n}"));
        }
        for (name, m) in [("W", &self.w), ("V", &self.v)] {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return bad(format!("{name} must be {n}x{n}"));
            }
        }
        if self.mask.len() != n || self.mask.iter().any(|r| r.len() != n) {
            return bad(format!("mask must be {n}x{n}"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive (got {})", self.dt));
        }
        if !(self.e_lo < self.e_hi) {
            return bad(format!(
                "activation thresholds must satisfy e_lo < e_hi (got {}, {})",
                self.e_lo, self.e_hi
            ));
        }
        if let Some(i) = self.tau.iter().position(|t| !(*t >= 0.0) || !t.is_finite()) {
            return bad(format!("tau[{i}] must be finite and nonnegative"));
        }
        if let Some(i) = self.b.iter().position(|x| !x.is_finite()) {
            return bad(format!("b[{i}] must be finite"));
        }
        for i in 0..n {
            for j in 0..n {
                let (w, v) = (self.w[i][j], self.v[i][j]);
                if !w.is_finite() || !v.is_finite() {
                    return bad(format!("W/V[{i}][{j}] must be finite"));
                }
                if v < 0.0 {
                    return bad(format!("V[{i}][{j}] = {v} is negative"));
                }
                if !self.mask[i][j] && (w != 0.0 || v != 0.0) {
                    return bad(format!("W/V[{i}][{j}] is nonzero outside the mask"));
                }
            }
        }
        if let Some(&c) = self.clamped.iter().find(|&&c| c >= n) {
            return bad(format!("clamped index {c} out of range"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| SnsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SnsError::io(path, e))?;
        let p = Self::from_json(&text).map_err(|e| SnsError::json(path, e))?;
        p.validate()?;
        Ok(p)
    }
}

/// One neuron of the conductance-based model, in biophysical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiophysicalNeuron {
    /// Membrane capacitance (nF).
    pub c_m: f64,
    /// Membrane (leak) conductance (uS).
    pub g_m: f64,
    /// Resting potential (mV).
    pub e_r: f64,
    /// Injected bias current (nA).
    pub i_bias: f64,
    pub synapses: Vec<Synapse>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: usize,
    /// Maximal conductance (uS).
    pub g: f64,
    /// Reversal potential (mV).
    pub e_rev: f64,
}

/// Reduce biophysical neurons to [`NetworkParams`].
///
/// The resting potential is folded into the bias: `b = E_r + I / g_m`.
pub fn from_biophysical(
    neurons: &[BiophysicalNeuron],
    dt: f64,
    e_lo: f64,
    e_hi: f64,
) -> Result<NetworkParams> {
    let n = neurons.len();
    let mut p = NetworkParams::new(n, dt, e_lo, e_hi);
    for (i, nr) in neurons.iter().enumerate() {
        if !(nr.c_m > 0.0) || !(nr.g_m > 0.0) {
            return Err(SnsError::InvalidParameter(format!(
                "neuron {i}: c_m and g_m must be positive (got {}, {})",
                nr.c_m, nr.g_m
            )));
        }
        // nF / uS = ms
        p.tau[i] = nr.c_m / nr.g_m * 1e-3;
        p.b[i] = nr.e_r + nr.i_bias / nr.g_m;
        for s in &nr.synapses {
            if s.pre >= n {
                return Err(SnsError::InvalidParameter(format!(
                    "neuron {i}: presynaptic index {} out of range",
                    s.pre
                )));
            }
            if !(s.g >= 0.0) {
                return Err(SnsError::InvalidParameter(format!(
                    "neuron {i}: synaptic conductance must be nonnegative (got {})",
                    s.g
                )));
            }
            p.w[i][s.pre] += s.g * s.e_rev / nr.g_m;
            p.v[i][s.pre] += s.g / nr.g_m;
            p.mask[i][s.pre] = true;
        }
    }
    p.validate()?;
    Ok(p)
}

/// Membrane potentials at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub h: Vec<f64>,
    pub t: usize,
}

impl NeuronState {
    pub fn zeros(n: usize) -> Self {
        NeuronState { h: vec![0.0; n], t: 0 }
    }

    pub fn from_potentials(h: Vec<f64>) -> Self {
        NeuronState { h, t: 0 }
    }
}

/// Intermediate quantities of one SNS step, per neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDetail {
    pub tau_hat: Vec<f64>,
    pub z: Vec<f64>,
    pub h_hat: Vec<f64>,
}

fn check_stimulus(params: &NetworkParams, inputs: &Stimulus) -> Result<()> {
    for &(i, u) in inputs {
        if !params.is_clamped(i) {
            return Err(SnsError::InvalidParameter(format!(
                "neuron {i} receives a stimulus but is not clamped"
            )));
        }
        if !u.is_finite() {
            return Err(SnsError::NumericalFault { neuron: i, step: None });
        }
    }
    Ok(())
}

/// Previous potentials with the stimulus written over clamped entries.
fn clamp_prev(state: &NeuronState, inputs: &Stimulus) -> Vec<f64> {
    let mut h = state.h.clone();
    for &(i, u) in inputs {
        h[i] = u;
    }
    h
}

fn finish(params: &NetworkParams, prev: &[f64], mut h: Vec<f64>, inputs: &Stimulus, t: usize) -> Result<NeuronState> {
    // clamped neurons follow their stimulus; without one they hold their value
    for &c in &params.clamped {
        h[c] = prev[c];
    }
    for &(i, u) in inputs {
        h[i] = u;
    }
    if let Some(i) = h.iter().position(|x| !x.is_finite()) {
        return Err(SnsError::NumericalFault { neuron: i, step: None });
    }
    Ok(NeuronState { h, t: t + 1 })
}

/// One SNS step, also returning the effective time constants and gates.
pub fn step_detailed(
    params: &NetworkParams,
    state: &NeuronState,
    inputs: &Stimulus,
) -> Result<(NeuronState, StepDetail)> {
    check_stimulus(params, inputs)?;
    let prev = clamp_prev(state, inputs);
    let act: Vec<f64> = prev.iter().map(|&u| params.phi(u)).collect();
    let n = params.n;
    let mut detail = StepDetail {
        tau_hat: vec![0.0; n],
        z: vec![0.0; n],
        h_hat: vec![0.0; n],
    };
    let mut h = vec![0.0; n];
    for i in 0..n {
        let (wr, vr) = (&params.w[i], &params.v[i]);
        let mut drive = params.b[i];
        let mut shunt = 1.0;
        for j in 0..n {
            drive += wr[j] * act[j];
            shunt += vr[j] * act[j];
        }
        let tau_hat = params.tau[i] / shunt;
        let z = params.dt / (tau_hat + params.dt);
        let h_hat = drive / shunt;
        h[i] = (1.0 - z) * prev[i] + z * h_hat;
        detail.tau_hat[i] = tau_hat;
        detail.z[i] = z;
        detail.h_hat[i] = h_hat;
    }
    Ok((finish(params, &prev, h, inputs, state.t)?, detail))
}

/// One semi-implicit Euler step of the SNS.
pub fn step(params: &NetworkParams, state: &NeuronState, inputs: &Stimulus) -> Result<NeuronState> {
    step_detailed(params, state, inputs).map(|(s, _)| s)
}

/// CTRNN step: the SNS update with the shunting matrix ignored.
pub fn ctrnn_step(params: &NetworkParams, state: &NeuronState, inputs: &Stimulus) -> Result<NeuronState> {
    check_stimulus(params, inputs)?;
    let prev = clamp_prev(state, inputs);
    let act: Vec<f64> = prev.iter().map(|&u| params.phi(u)).collect();
    let h = (0..params.n)
        .map(|i| {
            let h_hat = params.b[i] + dot(&params.w[i], &act);
            let (tau, dt) = (params.tau[i], params.dt);
            tau / (tau + dt) * prev[i] + dt / (tau + dt) * h_hat
        })
        .collect();
    finish(params, &prev, h, inputs, state.t)
}

/// Vanilla RNN step: `h = b + W phi(h)`.
pub fn vanilla_step(params: &NetworkParams, state: &NeuronState, inputs: &Stimulus) -> Result<NeuronState> {
    check_stimulus(params, inputs)?;
    let prev = clamp_prev(state, inputs);
    let act: Vec<f64> = prev.iter().map(|&u| params.phi(u)).collect();
    let h = (0..params.n)
        .map(|i| params.b[i] + dot(&params.w[i], &act))
        .collect();
    finish(params, &prev, h, inputs, state.t)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stimulus_row(params: &NetworkParams, row: &[f64]) -> Result<Vec<(usize, f64)>> {
    if row.len() != params.clamped.len() {
        return Err(SnsError::InvalidParameter(format!(
            "input row has {} entries but {} neurons are clamped",
            row.len(),
            params.clamped.len()
        )));
    }
    Ok(params.clamped.iter().copied().zip(row.iter().copied()).collect())
}

/// Run the network over an input series (`T` rows, one value per clamped
/// neuron, in `params.clamped` order). Row `t` of the result is the state
/// after `t + 1` steps.
pub fn simulate(params: &NetworkParams, input_series: &[Vec<f64>], h0: &[f64]) -> Result<Vec<Vec<f64>>> {
    if input_series.is_empty() {
        return Err(SnsError::InvalidParameter("input series must have at least one row".into()));
    }
    if h0.len() != params.n {
        return Err(SnsError::InvalidParameter(format!(
            "initial state has length {} but the network has {} neurons",
            h0.len(),
            params.n
        )));
    }
    let mut state = NeuronState::from_potentials(h0.to_vec());
    let mut out = Vec::with_capacity(input_series.len());
    for (t, row) in input_series.iter().enumerate() {
        let stim = stimulus_row(params, row)?;
        state = step(params, &state, &stim).map_err(|e| e.at_step(t))?;
        out.push(state.h.clone());
    }
    Ok(out)
}

/// Iterate [`step`] under a constant stimulus from the zero state until the
/// largest per-step change drops below `tol`.
pub fn steady_state(
    params: &NetworkParams,
    inputs: &Stimulus,
    tol: f64,
    max_iter: usize,
) -> Result<(NeuronState, usize)> {
    steady_state_from(params, NeuronState::zeros(params.n), inputs, tol, max_iter)
}

/// [`steady_state`] starting from an arbitrary state.
pub fn steady_state_from(
    params: &NetworkParams,
    mut state: NeuronState,
    inputs: &Stimulus,
    tol: f64,
    max_iter: usize,
) -> Result<(NeuronState, usize)> {
    if !(tol > 0.0) {
        return Err(SnsError::InvalidParameter(format!("tolerance must be positive (got {tol})")));
    }
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = step(params, &state, inputs).map_err(|e| e.at_step(it - 1))?;
        residual = next
            .h
            .iter()
            .zip(&state.h)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        state = next;
        if residual < tol {
            return Ok((state, it));
        }
    }
    Err(SnsError::NonConvergence {
        iterations: max_iter,
        residual,
    })
}
