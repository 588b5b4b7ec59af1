//! Kinematic three-axis gantry with a two-finger grasper, and the closed-loop
//! episode runner.
//!
//! Each axis follows a trapezoidal velocity profile toward its setpoint:
//! the speed ramps at `a_max`, cruises at the axis limit and brakes along
//! `v = sqrt(2 a d)` (solved for the end of each step), snapping onto the setpoint once it is within one step.
//! The grasper angle slews at a fixed rate. Grasping is geometric: the object
//! attaches when the closed grasper is within the capture radius of its
//! center and stays rigidly attached until the grasper opens past the
//! release angle.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::{Controller, MotorCommand, SensorFrame, SubtaskId};
use crate::error::{Result, SnsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Simulation step (s).
    pub dt: f64,
    pub workspace_lo: [f64; 3],
    pub workspace_hi: [f64; 3],
    /// Per-axis speed limits (m/s); the z entry applies when descending.
    pub v_max: [f64; 3],
    /// Speed limit when ascending (m/s).
    pub v_max_z_up: f64,
    pub a_max: [f64; 3],
    /// Grasper slew rate (deg/s).
    pub grasper_rate: f64,
    pub capture_radius: f64,
    /// The grasper holds the object at or below this angle (deg).
    pub grasp_angle: f64,
    /// An attached object is released above this angle (deg).
    pub release_angle: f64,
    /// Object box size (m) and mass (kg); descriptive only.
    pub object_size: [f64; 3],
    pub object_mass: f64,
    pub gripper_start: [f64; 3],
    pub angle_start: f64,
    pub object_start: [f64; 3],
    pub target: [f64; 3],
    /// Success tolerance (m) for the object at the target and the gripper at home.
    pub success_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.016,
            workspace_lo: [-0.1, -0.1, -0.4],
            workspace_hi: [0.4, 0.4, 0.1],
            v_max: [0.15, 0.10, 0.04],
            v_max_z_up: 0.02,
            a_max: [1.0, 1.0, 1.0],
            grasper_rate: 60.0,
            capture_radius: 0.015,
            grasp_angle: 15.0,
            release_angle: 40.0,
            object_size: [0.039, 0.039, 0.0345],
            object_mass: 0.0197,
            gripper_start: [0.0, 0.0, 0.0],
            angle_start: 60.0,
            object_start: [0.0, 0.0, -0.305],
            target: [0.15, 0.15, -0.310],
            success_tol: 0.005,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SnsError::InvalidParameter(m));
        if !(self.dt > 0.0) {
            return bad(format!("sim dt must be positive (got {})", self.dt));
        }
        for k in 0..3 {
            if !(self.workspace_lo[k] < self.workspace_hi[k]) {
                return bad(format!("empty workspace on axis {k}"));
            }
            if !(self.v_max[k] > 0.0 && self.a_max[k] > 0.0) {
                return bad(format!("speed and acceleration limits must be positive on axis {k}"));
            }
        }
        if !(self.v_max_z_up > 0.0 && self.grasper_rate > 0.0 && self.capture_radius > 0.0) {
            return bad("v_max_z_up, grasper_rate and capture_radius must be positive".into());
        }
        if !(self.grasp_angle < self.release_angle) {
            return bad(format!(
                "grasp_angle ({}) must be below release_angle ({})",
                self.grasp_angle, self.release_angle
            ));
        }
        for (name, p) in [("gripper_start", &self.gripper_start), ("object_start", &self.object_start), ("target", &self.target)] {
            if (0..3).any(|k| p[k] < self.workspace_lo[k] || p[k] > self.workspace_hi[k]) {
                return bad(format!("{name} {p:?} lies outside the workspace"));
            }
        }
        Ok(())
    }

    fn speed_limit(&self, axis: usize, direction: f64) -> f64 {
        if axis == 2 && direction > 0.0 {
            self.v_max_z_up
        } else {
            self.v_max[axis]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GantryState {
    pub t: f64,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    /// Grasper angle (deg).
    pub angle: f64,
    pub object: [f64; 3],
    pub attached: bool,
    /// Object position relative to the gripper while attached.
    pub offset: [f64; 3],
    /// Contact sensor: attached, or closed around the object.
    pub force: bool,
    /// Set when the last setpoint had to be clamped into the workspace.
    pub clamped: bool,
}

impl GantryState {
    pub fn initial(config: &SimConfig) -> Self {
        let mut s = GantryState {
            t: 0.0,
            pos: config.gripper_start,
            vel: [0.0; 3],
            angle: config.angle_start,
            object: config.object_start,
            attached: false,
            offset: [0.0; 3],
            force: false,
            clamped: false,
        };
        contact_and_grasp(&mut s, config);
        s
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

/// Update attachment and the contact signal for the current pose.
pub fn contact_and_grasp(s: &mut GantryState, config: &SimConfig) {
    if s.attached && s.angle > config.release_angle {
        s.attached = false;
    }
    let touching = distance(&s.pos, &s.object) <= config.capture_radius && s.angle <= config.grasp_angle;
    if !s.attached && touching {
        s.attached = true;
        s.offset = std::array::from_fn(|k| s.object[k] - s.pos[k]);
    }
    s.force = s.attached || touching;
}

/// Advance one axis by `dt` toward `goal`; returns the new position and velocity.
fn axis_step(p: f64, v: f64, goal: f64, v_lim: impl Fn(f64) -> f64, a: f64, dt: f64) -> (f64, f64) {
    let d = goal - p;
    if d == 0.0 && v == 0.0 {
        return (p, v);
    }
    // fastest end-of-step speed that can still stop exactly on the goal
    let dir = d.signum();
    let rem = (d.abs() - 0.5 * v * dir * dt).max(0.0);
    let brake = a * ((0.25 * dt * dt + 2.0 * rem / a).sqrt() - 0.5 * dt);
    let v_des = dir * v_lim(d).min(brake);
    let dv = (v_des - v).clamp(-a * dt, a * dt);
    let v_new = (v + dv).clamp(-v_lim(-1.0), v_lim(1.0));
    let travel = 0.5 * (v + v_new) * dt;
    if d != 0.0 && travel.signum() == d.signum() && travel.abs() >= d.abs() {
        return (goal, 0.0);
    }
    (p + travel, v_new)
}

/// Advance the gantry by one simulation step toward `command`.
pub fn sim_step(state: &GantryState, command: &MotorCommand, config: &SimConfig) -> GantryState {
    let mut s = state.clone();
    s.clamped = false;
    for k in 0..3 {
        let goal = command.xyz[k].clamp(config.workspace_lo[k], config.workspace_hi[k]);
        s.clamped |= goal != command.xyz[k];
        let lim = |dir: f64| config.speed_limit(k, dir);
        let (p, v) = axis_step(s.pos[k], s.vel[k], goal, lim, config.a_max[k], config.dt);
        s.pos[k] = p;
        s.vel[k] = v;
    }
    let max_turn = config.grasper_rate * config.dt;
    s.angle += (command.angle - s.angle).clamp(-max_turn, max_turn);
    if s.attached {
        s.object = std::array::from_fn(|k| s.pos[k] + s.offset[k]);
    }
    contact_and_grasp(&mut s, config);
    if s.attached {
        s.object = std::array::from_fn(|k| s.pos[k] + s.offset[k]);
    }
    s.t = state.t + config.dt;
    s
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    /// Report no contact to the controller regardless of the plant.
    pub force_fault: bool,
    /// Simulated time limit (s).
    pub max_time: Option<f64>,
}

/// One closed-loop step: what the controller saw and commanded, and the
/// plant state after the command was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub sensors: SensorFrame,
    pub command: MotorCommand,
    pub activities: [f64; 8],
    /// Phase label: the dominant command (1-8), 9 once the object input has
    /// been sent home, 0 when no command dominates.
    pub subtask: u8,
    pub state: GantryState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub success: bool,
    pub steps: usize,
    /// Simulated duration (s).
    pub duration: f64,
    pub object_error: f64,
    pub gripper_error: f64,
    /// Phase labels with consecutive repeats and zeros removed.
    pub subtasks: Vec<u8>,
    /// Largest phase reached before the return home.
    pub max_subtask: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub steps: Vec<TraceStep>,
    pub summary: EpisodeSummary,
}

/// Collapse consecutive duplicates and drop unlabelled steps.
pub fn collapse_subtasks(labels: impl IntoIterator<Item = u8>) -> Vec<u8> {
    let mut out: Vec<u8> = Vec::new();
    for l in labels {
        if l != 0 && out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

/// Bookkeeping shared by the direct and protocol-driven episode loops.
pub(crate) struct EpisodeTracker {
    pub object_input: [f64; 3],
    pub home: [f64; 3],
    seen_retract: bool,
    pub returning: bool,
    pub steps: Vec<TraceStep>,
}

impl EpisodeTracker {
    pub fn new(config: &SimConfig) -> Self {
        EpisodeTracker {
            object_input: config.object_start,
            home: config.gripper_start,
            seen_retract: false,
            returning: false,
            steps: Vec::new(),
        }
    }

    pub fn frame(&self, gripper: [f64; 3], force: bool, config: &SimConfig) -> SensorFrame {
        SensorFrame { gripper, object: self.object_input, target: config.target, force }
    }

    /// Label the step and rewrite the object input once the retract phase ends.
    pub fn record(&mut self, sensors: SensorFrame, out: &crate::controller::ControlOutput, state: GantryState) {
        if !self.returning && self.seen_retract && out.dominant.is_some_and(|d| d != SubtaskId::Retract) {
            self.returning = true;
            self.object_input = self.home;
        }
        let label = if self.returning {
            SubtaskId::ReturnedHome.number()
        } else {
            out.dominant.map_or(0, |d| d.number())
        };
        self.steps.push(TraceStep {
            step: self.steps.len(),
            sensors,
            command: out.command,
            activities: out.activities,
            subtask: label,
            state,
        });
        if out.dominant == Some(SubtaskId::Retract) {
            self.seen_retract = true;
        }
    }

    pub fn success(&self, state: &GantryState, config: &SimConfig) -> bool {
        self.returning
            && !state.attached
            && state.vel == [0.0; 3]
            && distance(&state.object, &config.target) <= config.success_tol
            && distance(&state.pos, &self.home) <= config.success_tol
    }

    pub fn finish(self, success: bool, config: &SimConfig, initial: &GantryState) -> EpisodeTrace {
        let last = self.steps.last().map_or(initial, |s| &s.state);
        let labels: Vec<u8> = self.steps.iter().map(|s| s.subtask).collect();
        let summary = EpisodeSummary {
            success,
            steps: self.steps.len(),
            duration: last.t,
            object_error: distance(&last.object, &config.target),
            gripper_error: distance(&last.pos, &self.home),
            max_subtask: labels.iter().copied().filter(|&l| l < 9).max().unwrap_or(0),
            subtasks: collapse_subtasks(labels),
        };
        EpisodeTrace { steps: self.steps, summary }
    }
}

/// Number of simulation steps per controller step.
pub(crate) fn substeps(dt_ctrl: f64, config: &SimConfig) -> Result<usize> {
    let ratio = dt_ctrl / config.dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
        return Err(SnsError::InvalidParameter(format!(
            "controller step {dt_ctrl} s is not a whole number of sim steps of {} s",
            config.dt
        )));
    }
    Ok(k as usize)
}

/// Run the controller against the simulator until success or the time limit.
///
/// The controller is settled on the initial frame first. After the retract
/// phase hands over to another command, the object input is rewritten to the
/// gripper's start position, which drives the gripper home.
pub fn run_episode(controller: &mut Controller, config: &SimConfig, options: &EpisodeOptions) -> Result<EpisodeTrace> {
    config.validate()?;
    let sub = substeps(controller.config.dt_ctrl, config)?;
    let max_time = options.max_time.unwrap_or(120.0);
    let initial = GantryState::initial(config);
    let mut state = initial.clone();
    let mut tracker = EpisodeTracker::new(config);
    let sense = |s: &GantryState| s.force && !options.force_fault;

    controller
        .settle(&tracker.frame(state.pos, sense(&state), config))
        .map_err(|e| SnsError::Episode { step: 0, source: Box::new(e) })?;
    let mut success = false;
    let mut k = 0;
    while state.t < max_time - 1e-9 {
        let frame = tracker.frame(state.pos, sense(&state), config);
        let out = controller
            .step(&frame)
            .map_err(|e| SnsError::Episode { step: k, source: Box::new(e) })?;
        for _ in 0..sub {
            state = sim_step(&state, &out.command, config);
        }
        tracker.record(frame, &out, state.clone());
        k += 1;
        if tracker.success(&state, config) {
            success = true;
            break;
        }
    }
    Ok(tracker.finish(success, config, &initial))
}

/// One row of the CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta: f64,
    pub obj_x: f64,
    pub obj_y: f64,
    pub obj_z: f64,
    pub force: u8,
    pub subtask: u8,
}

impl From<&TraceStep> for TraceRow {
    fn from(s: &TraceStep) -> Self {
        let g = &s.state;
        TraceRow {
            t: g.t,
            x: g.pos[0],
            y: g.pos[1],
            z: g.pos[2],
            theta: g.angle,
            obj_x: g.object[0],
            obj_y: g.object[1],
            obj_z: g.object[2],
            force: g.force as u8,
            subtask: s.subtask,
        }
    }
}

impl EpisodeTrace {
    pub fn rows(&self) -> Vec<TraceRow> {
        self.steps.iter().map(TraceRow::from).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| SnsError::csv(path, e))?;
        for row in self.rows() {
            w.serialize(row).map_err(|e| SnsError::csv(path, e))?;
        }
        w.flush().map_err(|e| SnsError::io(path, e))
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| SnsError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for s in &self.steps {
            serde_json::to_writer(&mut w, s).map_err(|e| SnsError::json(path, e))?;
            w.write_all(b"\n").map_err(|e| SnsError::io(path, e))?;
        }
        w.flush().map_err(|e| SnsError::io(path, e))
    }
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| SnsError::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| SnsError::csv(path, e))).collect()
}

pub fn read_trace_jsonl(path: impl AsRef<Path>) -> Result<Vec<TraceStep>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SnsError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| SnsError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| SnsError::json(path, e))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{ArithmeticKit, ControllerConfig};

    fn hold(state: &GantryState) -> MotorCommand {
        MotorCommand { xyz: state.pos, angle: state.angle }
    }

    #[test]
    fn command_at_rest_changes_nothing() {
        let cfg = SimConfig::default();
        let s0 = GantryState::initial(&cfg);
        let s1 = sim_step(&s0, &hold(&s0), &cfg);
        assert_eq!(s1.pos, s0.pos);
        assert_eq!(s1.vel, [0.0; 3]);
        assert_eq!(s1.angle, s0.angle);
        assert_eq!(s1.t, cfg.dt);
    }

    #[test]
    fn trapezoid_duration() {
        // 0.15 m along y: 0.1 s ramp, 1.4 s cruise, 0.1 s brake
        let cfg = SimConfig::default();
        let mut s = GantryState::initial(&cfg);
        let cmd = MotorCommand { xyz: [0.0, 0.15, 0.0], angle: s.angle };
        let mut steps = 0;
        while s.pos[1] != 0.15 {
            s = sim_step(&s, &cmd, &cfg);
            steps += 1;
            assert!(steps < 1000);
        }
        let t = steps as f64 * cfg.dt;
        assert!((t - 1.6).abs() <= cfg.dt + 1e-9, "arrival after {t} s");
    }

    #[test]
    fn ascending_is_slower() {
        let cfg = SimConfig::default();
        let mut s = GantryState::initial(&cfg);
        let up = MotorCommand { xyz: [0.0, 0.0, 0.1], angle: 60.0 };
        for _ in 0..200 {
            let next = sim_step(&s, &up, &cfg);
            assert!((next.pos[2] - s.pos[2]).abs() <= cfg.v_max_z_up * cfg.dt + 1e-12);
            s = next;
        }
        assert!(s.pos[2] > 0.05);
    }

    #[test]
    fn out_of_workspace_setpoints_are_clamped() {
        let cfg = SimConfig::default();
        let s = GantryState::initial(&cfg);
        let s1 = sim_step(&s, &MotorCommand { xyz: [1.0, 0.0, 0.0], angle: 60.0 }, &cfg);
        assert!(s1.clamped);
        let mut t = s1;
        for _ in 0..2000 {
            t = sim_step(&t, &MotorCommand { xyz: [1.0, 0.0, 0.0], angle: 60.0 }, &cfg);
        }
        assert_eq!(t.pos[0], cfg.workspace_hi[0]);
    }

    #[test]
    fn grasp_carry_release() {
        let cfg = SimConfig::default();
        let mut s = GantryState::initial(&cfg);
        s.pos = [0.0, 0.0, -0.3];
        s.angle = 0.0;
        contact_and_grasp(&mut s, &cfg);
        assert!(s.attached && s.force);
        let offset = s.offset;
        for _ in 0..100 {
            s = sim_step(&s, &MotorCommand { xyz: [0.1, 0.05, -0.2], angle: 0.0 }, &cfg);
            for k in 0..3 {
                assert!((s.object[k] - s.pos[k] - offset[k]).abs() <= 1e-12);
            }
        }
        let open = MotorCommand { xyz: [0.1, 0.05, -0.1], angle: 60.0 };
        while s.attached {
            s = sim_step(&s, &open, &cfg);
        }
        assert!(s.angle > cfg.release_angle && !s.force);
        let drop = s.object;
        for _ in 0..100 {
            s = sim_step(&s, &open, &cfg);
        }
        assert_eq!(s.object, drop);
    }

    #[test]
    fn collapse() {
        assert_eq!(collapse_subtasks([1, 1, 0, 2, 2, 3, 0, 3, 9]), vec![1, 2, 3, 9]);
    }

    fn episode(cfg: &SimConfig, options: &EpisodeOptions) -> EpisodeTrace {
        let mut c = Controller::new(ControllerConfig::default(), &ArithmeticKit::exact()).unwrap();
        run_episode(&mut c, cfg, options).unwrap()
    }

    #[test]
    fn default_episode_succeeds() {
        let cfg = SimConfig::default();
        let trace = episode(&cfg, &EpisodeOptions::default());
        let s = &trace.summary;
        assert!(s.success, "{s:?}");
        assert_eq!(s.subtasks, vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert!(s.object_error <= 0.005 && s.gripper_error <= 0.005);
        assert!(s.duration < 60.0);
    }

    #[test]
    fn force_fault_stalls_at_grasp() {
        let cfg = SimConfig::default();
        let opts = EpisodeOptions { force_fault: true, max_time: Some(20.0) };
        let trace = episode(&cfg, &opts);
        assert!(!trace.summary.success);
        assert_eq!(trace.summary.max_subtask, 3);
    }
}
