//! Hierarchical pick-and-place controller assembled as a single SNS.
//!
//! Layers, each one synapse deep:
//!
//! 1. clamped sensors: gripper, object and target positions (mV) and force;
//! 2. rectified position differences built from subtraction subnetworks;
//! 3. threshold detectors (steep transmission with a negative bias);
//! 4. a set/reset latch marking the carry-to-target phase, and eight command
//!    neurons, each an AND over its excitatory inputs vetoed by any inhibitory one;
//! 5. OR interneurons Obj, Tar, dz and open;
//! 6. position relays, shunted by the opposite interneuron;
//! 7. motor neurons summing the relays with addition subnetworks.
//!
//! Command conditions (F force, C latch, NR not at the hover pose above the
//! object, OFz/OHz/TFxyz/THz distance detectors):
//!
//! | # | name            | condition             | drives          |
//! |---|-----------------|-----------------------|-----------------|
//! | 1 | MoveAboveObject | !F !C NR              | Obj dz open     |
//! | 2 | DescendToObject | !F !C !NR OFz         | Obj open        |
//! | 3 | GraspObject     | !F !C !NR !OFz        | Obj             |
//! | 4 | LiftObject      | F !C !OHz             | Obj dz          |
//! | 5 | MoveToTarget    | F !C OHz              | Tar dz          |
//! | 6 | LowerToTarget   | F C TFxyz             | Tar             |
//! | 7 | ReleaseObject   | F C !TFxyz            | Tar open        |
//! | 8 | Retract         | !F C                  | Tar dz open     |
//!
//! The latch sets on F with the gripper at the hover pose above the target
//! and resets once the released gripper is `th2` above the target.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step, steady_state_from, NetworkParams, NeuronState, DEFAULT_E_HI, DEFAULT_E_LO};
use crate::error::{Result, SnsError};
use crate::subnet::{exact_params, ArithOp};

const AXES: [char; 3] = ['x', 'y', 'z'];

/// Affine map from meters to millivolts, `mV = offset + gain * m`, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceScale {
    pub offset_mv: [f64; 3],
    /// mV per meter, shared by all axes so distances can be summed.
    pub gain: f64,
}

impl Default for WorkspaceScale {
    fn default() -> Self {
        // x, y in [-0.1, 0.4] m and z in [-0.4, 0.1] m span [0, 20] mV
        WorkspaceScale { offset_mv: [4.0, 4.0, 16.0], gain: 40.0 }
    }
}

impl WorkspaceScale {
    pub fn to_mv(&self, axis: usize, m: f64) -> f64 {
        self.offset_mv[axis] + self.gain * m
    }

    pub fn to_m(&self, axis: usize, mv: f64) -> f64 {
        (mv - self.offset_mv[axis]) / self.gain
    }

    /// Positions (m) that encode into `[0, 20]` mV.
    pub fn bounds(&self, axis: usize) -> (f64, f64) {
        (self.to_m(axis, DEFAULT_E_LO), self.to_m(axis, DEFAULT_E_HI))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Near threshold (m).
    pub th1: f64,
    /// Far threshold (m): lift height that counts as clear of the start.
    pub th2: f64,
    /// Force threshold (mV on the force input).
    pub th_f: f64,
    /// Lift / hover height (m).
    pub lift_dz: f64,
    /// Grasper angles (deg).
    pub open_angle: f64,
    pub closed_angle: f64,
    pub workspace: WorkspaceScale,
    /// Controller timestep (s).
    pub dt_ctrl: f64,
    /// Slope of the threshold detectors (mV of output per mV of input).
    pub detector_gain: f64,
    /// Shunting conductance of the relay modulation synapses.
    pub modulation_gain: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            th1: 0.010,
            th2: 0.040,
            th_f: 10.0,
            lift_dz: 0.060,
            open_angle: 60.0,
            closed_angle: 0.0,
            workspace: WorkspaceScale::default(),
            dt_ctrl: 0.016,
            detector_gain: 2000.0,
            modulation_gain: 1000.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SnsError::InvalidParameter(m));
        if !(self.th1 > 0.0 && self.th1 < self.th2) {
            return bad(format!("thresholds must satisfy 0 < th1 < th2 (got {}, {})", self.th1, self.th2));
        }
        if !(self.lift_dz > self.th2) {
            return bad(format!("lift_dz ({}) must exceed th2 ({}) or lifting never completes", self.lift_dz, self.th2));
        }
        if !(self.open_angle > self.closed_angle) {
            return bad(format!(
                "open_angle ({}) must exceed closed_angle ({})",
                self.open_angle, self.closed_angle
            ));
        }
        if !(self.th_f > DEFAULT_E_LO && self.th_f < DEFAULT_E_HI) {
            return bad(format!("th_f must lie inside (0, 20) mV (got {})", self.th_f));
        }
        if !(self.workspace.gain > 0.0) || !(self.dt_ctrl > 0.0) {
            return bad("workspace gain and dt_ctrl must be positive".into());
        }
        if !(self.detector_gain > 0.0) || !(self.modulation_gain >= 0.0) {
            return bad("detector_gain must be positive and modulation_gain nonnegative".into());
        }
        Ok(())
    }

    fn mv(&self, meters: f64) -> f64 {
        self.workspace.gain * meters
    }
}

/// What the controller observes each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub gripper: [f64; 3],
    pub object: [f64; 3],
    pub target: [f64; 3],
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorCommand {
    pub xyz: [f64; 3],
    /// Grasper angle (deg).
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubtaskId {
    MoveAboveObject,
    DescendToObject,
    GraspObject,
    LiftObject,
    MoveToTarget,
    LowerToTarget,
    ReleaseObject,
    Retract,
    /// Not a command neuron: the return to the origin after the object input
    /// is rewritten.
    ReturnedHome,
}

impl SubtaskId {
    pub const COMMANDS: [SubtaskId; 8] = [
        SubtaskId::MoveAboveObject,
        SubtaskId::DescendToObject,
        SubtaskId::GraspObject,
        SubtaskId::LiftObject,
        SubtaskId::MoveToTarget,
        SubtaskId::LowerToTarget,
        SubtaskId::ReleaseObject,
        SubtaskId::Retract,
    ];

    /// Phase number, 1 through 9.
    pub fn number(self) -> u8 {
        match self {
            SubtaskId::ReturnedHome => 9,
            other => Self::COMMANDS.iter().position(|&c| c == other).unwrap() as u8 + 1,
        }
    }

    pub fn from_number(k: u8) -> Option<SubtaskId> {
        match k {
            1..=8 => Some(Self::COMMANDS[k as usize - 1]),
            9 => Some(SubtaskId::ReturnedHome),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SubtaskId::MoveAboveObject => "MoveAboveObject",
            SubtaskId::DescendToObject => "DescendToObject",
            SubtaskId::GraspObject => "GraspObject",
            SubtaskId::LiftObject => "LiftObject",
            SubtaskId::MoveToTarget => "MoveToTarget",
            SubtaskId::LowerToTarget => "LowerToTarget",
            SubtaskId::ReleaseObject => "ReleaseObject",
            SubtaskId::Retract => "Retract",
            SubtaskId::ReturnedHome => "ReturnedHome",
        }
    }
}

impl fmt::Display for SubtaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The most active command neuron if its activity exceeds 0.5; ties go to
/// the lowest index.
pub fn dominant_subtask(activities: &[f64; 8]) -> Option<SubtaskId> {
    let mut best: Option<usize> = None;
    for (k, &a) in activities.iter().enumerate() {
        if a > 0.5 && best.is_none_or(|b| a > activities[b]) {
            best = Some(k);
        }
    }
    best.map(|k| SubtaskId::COMMANDS[k])
}

/// Weights of the two-input arithmetic subnetworks the controller is built
/// from: `(w_first, w_second, bias)` of the output neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArithmeticKit {
    pub add: [f64; 3],
    pub sub: [f64; 3],
}

impl ArithmeticKit {
    /// Hand-set weights: `add = (20, 20, 0)`, `sub = (20, -20, 0)`.
    pub fn exact() -> Self {
        Self::from_params(&exact_params(ArithOp::Add), &exact_params(ArithOp::Sub)).unwrap()
    }

    /// Take the weights from trained three-neuron add and sub networks.
    pub fn from_params(add: &NetworkParams, sub: &NetworkParams) -> Result<Self> {
        let grab = |p: &NetworkParams, name: &str| -> Result<[f64; 3]> {
            if p.n != 3 || p.clamped != [0, 1] {
                return Err(SnsError::InvalidParameter(format!(
                    "{name} network must have two clamped inputs and one output"
                )));
            }
            if p.v[2].iter().any(|&v| v != 0.0) {
                return Err(SnsError::InvalidParameter(format!("{name} network must not use shunting synapses")));
            }
            Ok([p.w[2][0], p.w[2][1], p.b[2]])
        };
        Ok(ArithmeticKit { add: grab(add, "add")?, sub: grab(sub, "sub")? })
    }
}

impl Default for ArithmeticKit {
    fn default() -> Self {
        Self::exact()
    }
}

/// Index and name of every controller neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerIndex {
    pub names: Vec<String>,
    pub gripper: [usize; 3],
    pub object: [usize; 3],
    pub target: [usize; 3],
    pub force: usize,
    pub commands: [usize; 8],
    pub latch: usize,
    pub obj: usize,
    pub tar: usize,
    pub dz: usize,
    pub open: usize,
    pub object_relays: [usize; 3],
    pub target_relays: [usize; 3],
    pub motor: [usize; 3],
    pub lc: usize,
    pub rc: usize,
}

impl ControllerIndex {
    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Default)]
struct Builder {
    names: Vec<String>,
    b: Vec<f64>,
    syn: Vec<(usize, usize, f64, f64)>,
    clamped: Vec<usize>,
}

impl Builder {
    fn neuron(&mut self, name: impl Into<String>, bias: f64) -> usize {
        self.names.push(name.into());
        self.b.push(bias);
        self.names.len() - 1
    }

    fn input(&mut self, name: impl Into<String>) -> usize {
        let i = self.neuron(name, 0.0);
        self.clamped.push(i);
        i
    }

    fn w(&mut self, post: usize, pre: usize, w: f64) {
        self.syn.push((post, pre, w, 0.0));
    }

    fn shunt(&mut self, post: usize, pre: usize, v: f64) {
        self.syn.push((post, pre, 0.0, v));
    }

    /// `relu(a - b + offset)` (mV) through a subtraction subnetwork.
    fn difference(&mut self, name: String, a: usize, b: usize, offset: f64, kit: &ArithmeticKit) -> usize {
        let i = self.neuron(name, kit.sub[2] + offset);
        self.w(i, a, kit.sub[0]);
        self.w(i, b, kit.sub[1]);
        i
    }

    /// Fires when the summed input potentials exceed `threshold` mV.
    fn detector(&mut self, name: &str, inputs: &[usize], threshold: f64, gain: f64) -> usize {
        let i = self.neuron(name, -gain * threshold);
        for &j in inputs {
            self.w(i, j, gain * DEFAULT_E_HI);
        }
        i
    }

    /// AND over `exc`, vetoed by any of `inh`.
    fn and(&mut self, name: &str, exc: &[usize], inh: &[usize]) -> usize {
        let i = self.neuron(name, DEFAULT_E_HI * (1.0 - exc.len() as f64));
        for &j in exc {
            self.w(i, j, DEFAULT_E_HI);
        }
        for &j in inh {
            self.w(i, j, -2.0 * DEFAULT_E_HI);
        }
        i
    }

    fn or(&mut self, name: &str, inputs: &[usize]) -> usize {
        let i = self.neuron(name, 0.0);
        for &j in inputs {
            self.w(i, j, 2.0 * DEFAULT_E_HI);
        }
        i
    }

    fn finish(self, dt: f64) -> NetworkParams {
        let mut p = NetworkParams::new(self.names.len(), dt, DEFAULT_E_LO, DEFAULT_E_HI);
        p.b = self.b;
        for (post, pre, w, v) in self.syn {
            p.w[post][pre] += w;
            p.v[post][pre] += v;
            p.mask[post][pre] = true;
        }
        p.clamped = self.clamped;
        p
    }
}

/// Assemble the controller network.
pub fn build_controller(config: &ControllerConfig, kit: &ArithmeticKit) -> Result<(NetworkParams, ControllerIndex)> {
    config.validate()?;
    let mut nb = Builder::default();
    let g = AXES.map(|a| nb.input(format!("gripper_{a}")));
    let o = AXES.map(|a| nb.input(format!("object_{a}")));
    let t = AXES.map(|a| nb.input(format!("target_{a}")));
    let force = nb.input("force");

    let h = config.mv(config.lift_dz);
    let pair = |nb: &mut Builder, tag: &str, a: usize, b: usize, axis: char| {
        let pos = nb.difference(format!("d{axis}_{tag}+"), a, b, 0.0, kit);
        let neg = nb.difference(format!("d{axis}_{tag}-"), b, a, 0.0, kit);
        [pos, neg]
    };
    let d_o: Vec<[usize; 2]> = (0..3).map(|k| pair(&mut nb, "O", o[k], g[k], AXES[k])).collect();
    let d_t: Vec<[usize; 2]> = (0..3).map(|k| pair(&mut nb, "T", t[k], g[k], AXES[k])).collect();
    // height of the gripper above the hover pose over the object
    let hov_o = nb.difference("hover_O-".into(), g[2], o[2], -h, kit);
    let hov_t = [
        nb.difference("hover_T+".into(), t[2], g[2], h, kit),
        nb.difference("hover_T-".into(), g[2], t[2], -h, kit),
    ];

    let (gain, th1, th2) = (config.detector_gain, config.mv(config.th1), config.mv(config.th2));
    let nr = nb.detector("NR", &[d_o[0][0], d_o[0][1], d_o[1][0], d_o[1][1], hov_o], th1, gain);
    let of_z = nb.detector("OF_z", &d_o[2], th1, gain);
    let oh_z = nb.detector("OH_z", &[d_o[2][1]], th2, gain);
    let tf_xy = nb.detector("TF_xy", &[d_t[0][0], d_t[0][1], d_t[1][0], d_t[1][1]], th1, gain);
    let tf_xyz = nb.detector(
        "TF_xyz",
        &[d_t[0][0], d_t[0][1], d_t[1][0], d_t[1][1], d_t[2][0], d_t[2][1]],
        th1,
        gain,
    );
    let th_z = nb.detector("TH_z", &[d_t[2][1]], th2, gain);
    let thov = nb.detector("THov", &hov_t, th1, gain);
    // relayed once so the force detector sits at the same depth as the others
    let force_relay = nb.neuron("force_relay", 0.0);
    nb.w(force_relay, force, DEFAULT_E_HI);
    let f = nb.detector("F", &[force_relay], config.th_f, gain);

    let set = nb.and("SetC", &[f], &[tf_xy, thov]);
    let reset = nb.and("ResetC", &[th_z], &[f]);
    let c = nb.neuron("C", -0.5 * DEFAULT_E_HI);
    nb.w(c, c, 1.5 * DEFAULT_E_HI);
    nb.w(c, set, 1.5 * DEFAULT_E_HI);
    nb.w(c, reset, -3.0 * DEFAULT_E_HI);

    let cmd = [
        nb.and("Subtask_1", &[nr], &[f, c]),
        nb.and("Subtask_2", &[of_z], &[f, c, nr]),
        nb.and("Subtask_3", &[], &[f, c, nr, of_z]),
        nb.and("Subtask_4", &[f], &[c, oh_z]),
        nb.and("Subtask_5", &[f, oh_z], &[c]),
        nb.and("Subtask_6", &[f, c, tf_xyz], &[]),
        nb.and("Subtask_7", &[f, c], &[tf_xyz]),
        nb.and("Subtask_8", &[c], &[f]),
    ];
    let obj = nb.or("Obj", &[cmd[0], cmd[1], cmd[2], cmd[3]]);
    let tar = nb.or("Tar", &[cmd[4], cmd[5], cmd[6], cmd[7]]);
    let dz = nb.or("dz", &[cmd[0], cmd[3], cmd[4], cmd[7]]);
    let open = nb.or("alpha_open", &[cmd[0], cmd[1], cmd[6], cmd[7]]);

    let v = config.modulation_gain;
    let relay = |nb: &mut Builder, name: String, input: usize, inhibitor: usize| {
        let i = nb.neuron(name, 0.0);
        nb.w(i, input, DEFAULT_E_HI);
        nb.shunt(i, inhibitor, v);
        i
    };
    let object_relays: [usize; 3] = std::array::from_fn(|k| relay(&mut nb, format!("{}_O_hat", AXES[k]), o[k], tar));
    let target_relays: [usize; 3] = std::array::from_fn(|k| relay(&mut nb, format!("{}_T_hat", AXES[k]), t[k], obj));
    let motor: [usize; 3] = std::array::from_fn(|k| {
        let m = nb.neuron(format!("{}_cmd", AXES[k]), kit.add[2]);
        nb.w(m, object_relays[k], kit.add[0]);
        nb.w(m, target_relays[k], kit.add[1]);
        m
    });
    nb.w(motor[2], dz, h);
    let lc = nb.neuron("lc_cmd", 0.0);
    nb.w(lc, open, DEFAULT_E_HI);
    let rc = nb.neuron("rc_cmd", 0.0);
    nb.w(rc, open, DEFAULT_E_HI);

    let index = ControllerIndex {
        names: nb.names.clone(),
        gripper: g,
        object: o,
        target: t,
        force,
        commands: cmd,
        latch: c,
        obj,
        tar,
        dz,
        open,
        object_relays,
        target_relays,
        motor,
        lc,
        rc,
    };
    let params = nb.finish(config.dt_ctrl);
    params.validate()?;
    Ok((params, index))
}

/// Clamp values (mV) for the sensor neurons, in the network's `clamped` order.
pub fn encode_sensors(frame: &SensorFrame, config: &ControllerConfig) -> Result<Vec<f64>> {
    let ws = &config.workspace;
    let mut out = Vec::with_capacity(10);
    for pos in [&frame.gripper, &frame.object, &frame.target] {
        for (k, &m) in pos.iter().enumerate() {
            let (lo, hi) = ws.bounds(k);
            if !(m >= lo - 1e-12 && m <= hi + 1e-12) {
                return Err(SnsError::OutOfWorkspace { axis: AXES[k], value: m, lo, hi });
            }
            out.push(ws.to_mv(k, m).clamp(DEFAULT_E_LO, DEFAULT_E_HI));
        }
    }
    out.push(if frame.force { DEFAULT_E_HI } else { DEFAULT_E_LO });
    Ok(out)
}

/// One controller update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOutput {
    pub command: MotorCommand,
    pub activities: [f64; 8],
    pub dominant: Option<SubtaskId>,
}

/// Saved form of an assembled controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerFile {
    pub params: NetworkParams,
    pub index: ControllerIndex,
}

/// The assembled network together with its running state.
#[derive(Debug, Clone)]
pub struct Controller {
    pub params: NetworkParams,
    pub index: ControllerIndex,
    pub config: ControllerConfig,
    pub state: NeuronState,
}

impl Controller {
    pub fn new(config: ControllerConfig, kit: &ArithmeticKit) -> Result<Self> {
        let (params, index) = build_controller(&config, kit)?;
        let state = NeuronState::zeros(params.n);
        Ok(Controller { params, index, config, state })
    }

    fn stimulus(&self, frame: &SensorFrame) -> Result<Vec<(usize, f64)>> {
        let values = encode_sensors(frame, &self.config)?;
        Ok(self.params.clamped.iter().copied().zip(values).collect())
    }

    /// Run the network to equilibrium on a fixed frame without reporting.
    pub fn settle(&mut self, frame: &SensorFrame) -> Result<usize> {
        let stim = self.stimulus(frame)?;
        let (s, iters) = steady_state_from(&self.params, self.state.clone(), &stim, 1e-9, 10_000)?;
        self.state = NeuronState::from_potentials(s.h);
        Ok(iters)
    }

    /// One network step on `frame`, decoded into a motor command.
    pub fn step(&mut self, frame: &SensorFrame) -> Result<ControlOutput> {
        let stim = self.stimulus(frame)?;
        self.state = step(&self.params, &self.state, &stim)?;
        Ok(self.output())
    }

    /// Decode the current state.
    pub fn output(&self) -> ControlOutput {
        let p = &self.params;
        let h = &self.state.h;
        let ws = &self.config.workspace;
        let xyz = std::array::from_fn(|k| ws.to_m(k, p.readout(h[self.index.motor[k]])));
        let (open, closed) = (self.config.open_angle, self.config.closed_angle);
        let angle = closed + (open - closed) * p.phi(h[self.index.lc]);
        let activities = self.index.commands.map(|i| p.phi(h[i]));
        ControlOutput {
            command: MotorCommand { xyz, angle },
            activities,
            dominant: dominant_subtask(&activities),
        }
    }

    pub fn activity(&self, neuron: usize) -> f64 {
        self.params.phi(self.state.h[neuron])
    }

    pub fn to_file(&self) -> ControllerFile {
        ControllerFile { params: self.params.clone(), index: self.index.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OBJECT: [f64; 3] = [0.0, 0.0, -0.305];
    const TARGET: [f64; 3] = [0.15, 0.15, -0.310];

    fn frame(gripper: [f64; 3], force: bool) -> SensorFrame {
        SensorFrame { gripper, object: OBJECT, target: TARGET, force }
    }

    fn settled(f: &SensorFrame) -> Controller {
        let mut c = Controller::new(ControllerConfig::default(), &ArithmeticKit::exact()).unwrap();
        c.settle(f).unwrap();
        c
    }

    #[test]
    fn dominant_rules() {
        let mut a = [0.1; 8];
        a[0] = 0.9;
        assert_eq!(dominant_subtask(&a), Some(SubtaskId::MoveAboveObject));
        assert_eq!(dominant_subtask(&[0.4; 8]), None);
        let mut t = [0.0; 8];
        t[2] = 0.8;
        t[5] = 0.8;
        assert_eq!(dominant_subtask(&t), Some(SubtaskId::GraspObject));
    }

    #[test]
    fn subtask_numbers() {
        for k in 1..=9 {
            assert_eq!(SubtaskId::from_number(k).unwrap().number(), k);
        }
        assert_eq!(SubtaskId::from_number(0), None);
        assert_eq!(SubtaskId::LiftObject.number(), 4);
    }

    #[test]
    fn encoding() {
        let cfg = ControllerConfig::default();
        let at_object = SensorFrame { gripper: OBJECT, object: OBJECT, target: TARGET, force: true };
        let mv = encode_sensors(&at_object, &cfg).unwrap();
        assert_eq!(&mv[0..3], &mv[3..6]);
        assert_eq!(mv[9], 20.0);
        let home = encode_sensors(&frame([0.0; 3], false), &cfg).unwrap();
        assert_eq!(home[9], 0.0);
        // z = -0.305 m sits 0.095 m above the bottom of the workspace
        assert!((home[5] - 40.0 * 0.095).abs() < 1e-12);
        assert!((cfg.workspace.to_m(2, home[5]) + 0.305).abs() < 1e-12);
        let far = frame([0.0, 0.0, 0.5], false);
        assert!(matches!(encode_sensors(&far, &cfg), Err(SnsError::OutOfWorkspace { axis: 'z', .. })));
    }

    #[test]
    fn config_checks() {
        let bad = ControllerConfig { th1: 0.05, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ControllerConfig { open_angle: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ControllerConfig { lift_dz: 0.03, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(ControllerConfig::default().validate().is_ok());
    }

    #[test]
    fn sizes_and_names() {
        let (p, idx) = build_controller(&ControllerConfig::default(), &ArithmeticKit::exact()).unwrap();
        assert_eq!(p.n, idx.names.len());
        assert_eq!(p.clamped.len(), 10);
        assert_eq!(idx.find("Subtask_4"), Some(idx.commands[3]));
        assert_eq!(idx.find("Obj"), Some(idx.obj));
        assert!(p.tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn start_pose_moves_above_object() {
        let c = settled(&frame([0.0; 3], false));
        let out = c.output();
        assert_eq!(out.dominant, Some(SubtaskId::MoveAboveObject));
        // hover pose: object xy, lift height above the object
        assert!(out.command.xyz[0].abs() < 1e-3 && out.command.xyz[1].abs() < 1e-3);
        assert!((out.command.xyz[2] - (-0.305 + 0.06)).abs() < 1e-3);
        assert_eq!(out.command.angle, 60.0);
    }

    #[test]
    fn far_in_xy_heads_for_object_xy() {
        let c = settled(&frame([0.3, 0.2, -0.1], false));
        let out = c.output();
        assert_eq!(out.dominant, Some(SubtaskId::MoveAboveObject));
        assert!(out.command.xyz[0] < 0.3 && out.command.xyz[1] < 0.2);
    }

    #[test]
    fn grasped_object_is_lifted() {
        let c = settled(&frame([0.0, 0.0, -0.300], true));
        let out = c.output();
        assert_eq!(out.dominant, Some(SubtaskId::LiftObject));
        assert!(c.activity(c.index.obj) > 0.9);
        assert!(c.activity(c.index.dz) > 0.9);
        assert!(out.command.xyz[2] > -0.300);
        assert_eq!(out.command.angle, 0.0);
    }

    #[test]
    fn release_at_target_opens() {
        let mut c = Controller::new(ControllerConfig::default(), &ArithmeticKit::exact()).unwrap();
        c.state.h[c.index.latch] = 20.0;
        c.settle(&frame(TARGET, true)).unwrap();
        let out = c.output();
        assert_eq!(out.dominant, Some(SubtaskId::ReleaseObject));
        assert!(c.activity(c.index.tar) > 0.9);
        assert_eq!(out.command.angle, 60.0);
    }

    #[test]
    fn and_and_or_neurons() {
        let (p, idx) = build_controller(&ControllerConfig::default(), &ArithmeticKit::exact()).unwrap();
        let input = |h: &[f64], i: usize| -> f64 {
            let u = p.b[i] + (0..p.n).map(|j| p.w[i][j] * p.phi(h[j])).sum::<f64>();
            p.phi(u)
        };
        // Subtask_5: F and OH_z excitatory, C inhibitory
        let s5 = idx.commands[4];
        let f = idx.find("F").unwrap();
        let oh = idx.find("OH_z").unwrap();
        let mut h = vec![0.0; p.n];
        h[f] = 20.0;
        h[oh] = 20.0;
        assert!(input(&h, s5) > 0.9);
        h[idx.latch] = 20.0;
        assert!(input(&h, s5) < 0.1);
        let mut h = vec![0.0; p.n];
        h[idx.commands[6]] = 20.0;
        assert!(input(&h, idx.tar) > 0.9);
        assert!(input(&h, idx.open) > 0.9);
        assert!(input(&h, idx.obj) < 0.1);
    }

    #[test]
    fn obj_suppresses_target_relays() {
        let c = settled(&frame([0.0, 0.0, -0.2], false));
        assert!(c.activity(c.index.obj) > 0.9);
        for k in 0..3 {
            let clamp = encode_sensors(&frame([0.0; 3], false), &c.config).unwrap()[6 + k];
            assert!(c.state.h[c.index.target_relays[k]] < 0.05 * clamp);
        }
    }
}
