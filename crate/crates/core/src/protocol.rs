//! Line-based G-code style device protocol and an in-process loopback device.
//!
//! Host to device:
//!
//! ```text
//! G0 X150.000 Y150.000 Z-310.000 F6000   buffered move (mm, mm/min)
//! M280 S30.0                             grasper angle (deg)
//! M114                                   position and contact query
//! G4 P16                                 dwell (ms); the device keeps running
//! ```
//!
//! Device to host: `ok`, `busy` (move buffer full, move dropped),
//! `X:.. Y:.. Z:.. A:..`, `CONTACT:0|1` and `error:<reason>`.

use std::collections::VecDeque;
use std::fmt;

use crate::controller::{Controller, MotorCommand};
use crate::error::{Result, SnsError};
use crate::gantry::{sim_step, substeps, EpisodeOptions, EpisodeTrace, EpisodeTracker, GantryState, SimConfig};

/// Default feed rate (mm/min) written on move lines.
pub const DEFAULT_FEED: f64 = 6000.0;
/// Moves the device accepts before answering `busy`.
pub const MOVE_BUFFER: usize = 10;

/// A host-to-device line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviceLine {
    /// Positions in mm, feed in mm/min.
    Move { x: f64, y: f64, z: f64, feed: f64 },
    Grasper { angle: f64 },
    Query,
    Dwell { ms: u64 },
}

/// A device-to-host line.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    /// Positions in mm, angle in degrees.
    Position { x: f64, y: f64, z: f64, a: f64 },
    Contact(bool),
    Ok,
    Busy,
    Error(String),
}

impl fmt::Display for DeviceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceLine::Move { x, y, z, feed } => write!(f, "G0 X{x:.3} Y{y:.3} Z{z:.3} F{feed:.0}"),
            DeviceLine::Grasper { angle } => write!(f, "M280 S{angle:.1}"),
            DeviceLine::Query => f.write_str("M114"),
            DeviceLine::Dwell { ms } => write!(f, "G4 P{ms}"),
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Report::Position { x, y, z, a } => write!(f, "X:{x:.3} Y:{y:.3} Z:{z:.3} A:{a:.1}"),
            Report::Contact(c) => write!(f, "CONTACT:{}", *c as u8),
            Report::Ok => f.write_str("ok"),
            Report::Busy => f.write_str("busy"),
            Report::Error(reason) => write!(f, "error:{reason}"),
        }
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SnsError::Encode(format!("{what} is not finite ({v})")))
    }
}

/// Move line for a target in meters.
pub fn encode_move(xyz: [f64; 3], feed: f64) -> Result<String> {
    let [x, y, z] = [0, 1, 2].map(|k| xyz[k] * 1000.0);
    for (v, axis) in [(x, "x"), (y, "y"), (z, "z")] {
        finite(v, axis)?;
    }
    if !(finite(feed, "feed")? > 0.0) {
        return Err(SnsError::Encode(format!("feed must be positive (got {feed})")));
    }
    Ok(DeviceLine::Move { x, y, z, feed }.to_string())
}

pub fn encode_grasper(angle: f64) -> Result<String> {
    Ok(DeviceLine::Grasper { angle: finite(angle, "angle")? }.to_string())
}

pub fn encode_query() -> String {
    DeviceLine::Query.to_string()
}

pub fn encode_dwell(ms: u64) -> String {
    DeviceLine::Dwell { ms }.to_string()
}

/// Splits a line into whitespace-separated words with their byte offsets.
fn words(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split(' ')
        .scan(0usize, |pos, w| {
            let start = *pos;
            *pos += w.len() + 1;
            Some((start, w))
        })
        .filter(|(_, w)| !w.is_empty())
}

fn number(word: &str, offset: usize) -> Result<f64> {
    word.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| SnsError::Parse { offset, reason: format!("bad number `{word}`") })
}

/// Parse `letter<number>` fields into `out`, in the order given by `letters`.
fn fields<const N: usize>(rest: &[(usize, &str)], letters: [&str; N]) -> Result<[f64; N]> {
    let mut out = [f64::NAN; N];
    for &(offset, w) in rest {
        let slot = letters.iter().position(|l| w.starts_with(l));
        let Some(k) = slot else {
            return Err(SnsError::Parse { offset, reason: format!("unexpected field `{w}`") });
        };
        if !out[k].is_nan() {
            return Err(SnsError::Parse { offset, reason: format!("duplicate field `{}`", letters[k]) });
        }
        let l = letters[k].len();
        out[k] = number(&w[l..], offset + l)?;
    }
    if let Some(k) = out.iter().position(|v| v.is_nan()) {
        let end = rest.last().map_or(0, |(o, w)| o + w.len());
        return Err(SnsError::Parse { offset: end, reason: format!("missing field `{}`", letters[k]) });
    }
    Ok(out)
}

impl DeviceLine {
    pub fn parse(line: &str) -> Result<Self> {
        let ws: Vec<(usize, &str)> = words(line.trim_end()).collect();
        let Some(&(off, cmd)) = ws.first() else {
            return Err(SnsError::Parse { offset: 0, reason: "empty line".into() });
        };
        let rest = &ws[1..];
        match cmd {
            "G0" | "G1" => {
                let [x, y, z, feed] = fields(rest, ["X", "Y", "Z", "F"])?;
                Ok(DeviceLine::Move { x, y, z, feed })
            }
            "M280" => {
                let [angle] = fields(rest, ["S"])?;
                Ok(DeviceLine::Grasper { angle })
            }
            "M114" if rest.is_empty() => Ok(DeviceLine::Query),
            "G4" => {
                let [ms] = fields(rest, ["P"])?;
                if ms < 0.0 || ms.fract() != 0.0 {
                    return Err(SnsError::Parse { offset: rest[0].0 + 1, reason: format!("bad dwell `{ms}`") });
                }
                Ok(DeviceLine::Dwell { ms: ms as u64 })
            }
            _ => Err(SnsError::Parse { offset: off, reason: format!("unknown command `{}`", line.trim()) }),
        }
    }
}

/// Parse one device-to-host line.
pub fn parse_report(line: &str) -> Result<Report> {
    let line = line.trim_end();
    match line {
        "ok" => return Ok(Report::Ok),
        "busy" => return Ok(Report::Busy),
        _ => {}
    }
    if let Some(reason) = line.strip_prefix("error:") {
        return Ok(Report::Error(reason.to_string()));
    }
    if let Some(flag) = line.strip_prefix("CONTACT:") {
        return match flag {
            "0" => Ok(Report::Contact(false)),
            "1" => Ok(Report::Contact(true)),
            _ => Err(SnsError::Parse { offset: 8, reason: format!("bad contact flag `{flag}`") }),
        };
    }
    let ws: Vec<(usize, &str)> = words(line).collect();
    if ws.is_empty() || !ws[0].1.starts_with("X:") {
        return Err(SnsError::Parse { offset: 0, reason: format!("unrecognized report `{line}`") });
    }
    let [x, y, z, a] = fields(&ws, ["X:", "Y:", "Z:", "A:"])?;
    Ok(Report::Position { x, y, z, a })
}

/// Anything that exchanges protocol lines with a device.
pub trait Transport {
    /// Send one line and collect the device's replies.
    fn send(&mut self, line: &str) -> Result<Vec<String>>;
}

/// In-process device running the gantry simulator.
///
/// Simulated time advances only in whole simulator steps: during dwells and
/// during the configured per-line latency. Each step takes the next buffered
/// move, if any, as the axis setpoint.
#[derive(Debug, Clone)]
pub struct LoopbackDevice {
    pub config: SimConfig,
    pub state: GantryState,
    queue: VecDeque<[f64; 3]>,
    setpoint: [f64; 3],
    angle_setpoint: f64,
    latency_us: u64,
    dt_us: u64,
    debt_us: u64,
    /// Every line exchanged, prefixed `> ` (host) or `< ` (device).
    pub transcript: Vec<String>,
    pub record_transcript: bool,
}

impl LoopbackDevice {
    pub fn new(config: SimConfig, latency_ms: f64) -> Result<Self> {
        config.validate()?;
        if !(latency_ms >= 0.0 && latency_ms.is_finite()) {
            return Err(SnsError::InvalidParameter(format!("latency must be nonnegative (got {latency_ms} ms)")));
        }
        let state = GantryState::initial(&config);
        Ok(LoopbackDevice {
            setpoint: state.pos,
            angle_setpoint: state.angle,
            queue: VecDeque::new(),
            latency_us: (latency_ms * 1000.0).round() as u64,
            dt_us: (config.dt * 1e6).round() as u64,
            debt_us: 0,
            transcript: Vec::new(),
            record_transcript: false,
            state,
            config,
        })
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    fn tick(&mut self) {
        if let Some(next) = self.queue.pop_front() {
            self.setpoint = next;
        }
        let cmd = MotorCommand { xyz: self.setpoint, angle: self.angle_setpoint };
        self.state = sim_step(&self.state, &cmd, &self.config);
    }

    /// Let `us` microseconds of simulated time pass.
    fn advance(&mut self, us: u64) {
        self.debt_us += us;
        while self.debt_us >= self.dt_us {
            self.debt_us -= self.dt_us;
            self.tick();
        }
    }

    fn handle(&mut self, line: &str) -> Vec<Report> {
        match DeviceLine::parse(line) {
            Ok(DeviceLine::Move { x, y, z, .. }) => {
                if self.queue.len() >= MOVE_BUFFER {
                    vec![Report::Busy]
                } else {
                    self.queue.push_back([x / 1000.0, y / 1000.0, z / 1000.0]);
                    vec![Report::Ok]
                }
            }
            Ok(DeviceLine::Grasper { angle }) => {
                self.angle_setpoint = angle;
                vec![Report::Ok]
            }
            Ok(DeviceLine::Query) => {
                let p = self.state.pos;
                vec![
                    Report::Position { x: p[0] * 1000.0, y: p[1] * 1000.0, z: p[2] * 1000.0, a: self.state.angle },
                    Report::Contact(self.state.force),
                    Report::Ok,
                ]
            }
            Ok(DeviceLine::Dwell { ms }) => {
                self.advance(ms * 1000);
                vec![Report::Ok]
            }
            Err(e) => vec![Report::Error(e.to_string())],
        }
    }
}

impl Transport for LoopbackDevice {
    fn send(&mut self, line: &str) -> Result<Vec<String>> {
        self.advance(self.latency_us);
        let replies: Vec<String> = self.handle(line).iter().map(Report::to_string).collect();
        if self.record_transcript {
            self.transcript.push(format!("> {line}"));
            self.transcript.extend(replies.iter().map(|r| format!("< {r}")));
        }
        Ok(replies)
    }
}

fn expect_ok(replies: &[String], line: &str) -> Result<Vec<Report>> {
    let reports = replies.iter().map(|r| parse_report(r)).collect::<Result<Vec<_>>>()?;
    match reports.last() {
        Some(Report::Ok) | Some(Report::Busy) => Ok(reports),
        Some(Report::Error(e)) => Err(SnsError::InvalidParameter(format!("device rejected `{line}`: {e}"))),
        _ => Err(SnsError::Parse { offset: 0, reason: format!("no acknowledgement for `{line}`") }),
    }
}

/// Query the gripper position (m) and contact flag.
pub fn query_pose(dev: &mut impl Transport) -> Result<([f64; 3], bool)> {
    let line = encode_query();
    let reports = expect_ok(&dev.send(&line)?, &line)?;
    let mut pos = None;
    let mut contact = None;
    for r in reports {
        match r {
            Report::Position { x, y, z, .. } => pos = Some([x / 1000.0, y / 1000.0, z / 1000.0]),
            Report::Contact(c) => contact = Some(c),
            _ => {}
        }
    }
    match (pos, contact) {
        (Some(p), Some(c)) => Ok((p, c)),
        _ => Err(SnsError::Parse { offset: 0, reason: "incomplete position report".into() }),
    }
}

/// Send a move, waiting one dwell of `retry_ms` between attempts while the
/// device is busy.
pub fn send_move(dev: &mut impl Transport, xyz: [f64; 3], retry_ms: u64) -> Result<usize> {
    let line = encode_move(xyz, DEFAULT_FEED)?;
    for attempt in 0..1000 {
        let reports = expect_ok(&dev.send(&line)?, &line)?;
        if reports.last() == Some(&Report::Ok) {
            return Ok(attempt);
        }
        dev.send(&encode_dwell(retry_ms))?;
    }
    Err(SnsError::InvalidParameter("device stayed busy".into()))
}

/// Closed-loop episode with the controller talking to a loopback device.
///
/// Each control step sends `M114`, a move, a grasper command and a dwell of
/// one controller period, so with zero latency it reproduces
/// [`crate::gantry::run_episode`] up to the protocol's 1 um resolution.
pub fn run_protocol_episode(
    controller: &mut Controller,
    device: &mut LoopbackDevice,
    options: &EpisodeOptions,
) -> Result<EpisodeTrace> {
    let config = device.config.clone();
    substeps(controller.config.dt_ctrl, &config)?;
    let period_ms = (controller.config.dt_ctrl * 1000.0).round() as u64;
    let max_time = options.max_time.unwrap_or(120.0);
    let initial = device.state.clone();
    let mut tracker = EpisodeTracker::new(&config);
    let wrap = |k: usize| move |e: SnsError| SnsError::Episode { step: k, source: Box::new(e) };

    let (pos, contact) = query_pose(device).map_err(wrap(0))?;
    controller
        .settle(&tracker.frame(pos, contact && !options.force_fault, &config))
        .map_err(wrap(0))?;
    let mut success = false;
    let mut k = 0;
    while device.state.t < max_time - 1e-9 {
        let (pos, contact) = query_pose(device).map_err(wrap(k))?;
        let frame = tracker.frame(pos, contact && !options.force_fault, &config);
        let out = controller.step(&frame).map_err(wrap(k))?;
        send_move(device, out.command.xyz, period_ms).map_err(wrap(k))?;
        let line = encode_grasper(out.command.angle).map_err(wrap(k))?;
        expect_ok(&device.send(&line)?, &line).map_err(wrap(k))?;
        device.send(&encode_dwell(period_ms))?;
        tracker.record(frame, &out, device.state.clone());
        k += 1;
        if tracker.success(&device.state, &config) {
            success = true;
            break;
        }
    }
    Ok(tracker.finish(success, &config, &initial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{ArithmeticKit, ControllerConfig};
    use crate::gantry::run_episode;

    #[test]
    fn encodings() {
        assert_eq!(encode_move([0.15, 0.15, -0.31], 6000.0).unwrap(), "G0 X150.000 Y150.000 Z-310.000 F6000");
        assert_eq!(encode_grasper(30.0).unwrap(), "M280 S30.0");
        assert_eq!(encode_query(), "M114");
        assert_eq!(encode_dwell(16), "G4 P16");
        assert!(encode_move([f64::NAN, 0.0, 0.0], 6000.0).is_err());
        assert!(encode_move([0.0; 3], 0.0).is_err());
    }

    #[test]
    fn parse_canonical_lines() {
        for line in ["G0 X150.000 Y150.000 Z-310.000 F6000", "M280 S30.0", "M114", "G4 P16"] {
            assert_eq!(DeviceLine::parse(line).unwrap().to_string(), line);
        }
        let r = parse_report("X:150.000 Y:0.000 Z:-305.000 A:60.0").unwrap();
        assert_eq!(r, Report::Position { x: 150.0, y: 0.0, z: -305.0, a: 60.0 });
        assert_eq!(parse_report("CONTACT:1").unwrap(), Report::Contact(true));
        assert_eq!(parse_report("busy").unwrap(), Report::Busy);
    }

    #[test]
    fn malformed_lines_report_offsets() {
        let err = |r: Result<Report>| match r {
            Err(SnsError::Parse { offset, .. }) => offset,
            other => panic!("expected parse error, got {other:?}"),
        };
        assert_eq!(err(parse_report("X:1.0 Y:abc Z:0 A:0")), 8);
        assert_eq!(err(parse_report("CONTACT:2")), 8);
        assert_eq!(err(parse_report("hello")), 0);
        assert!(matches!(DeviceLine::parse("G0 X1 Y2 F3"), Err(SnsError::Parse { .. })));
        assert!(matches!(DeviceLine::parse("M999"), Err(SnsError::Parse { offset: 0, .. })));
    }

    #[test]
    fn device_answers_errors() {
        let mut dev = LoopbackDevice::new(SimConfig::default(), 0.0).unwrap();
        let r = dev.send("G0 X1").unwrap();
        assert!(r[0].starts_with("error:"));
    }

    #[test]
    fn full_buffer_is_busy() {
        let mut dev = LoopbackDevice::new(SimConfig::default(), 0.0).unwrap();
        let line = encode_move([0.1, 0.1, 0.0], DEFAULT_FEED).unwrap();
        for _ in 0..MOVE_BUFFER {
            assert_eq!(dev.send(&line).unwrap(), vec!["ok"]);
        }
        assert_eq!(dev.send(&line).unwrap(), vec!["busy"]);
        dev.send(&encode_dwell(16)).unwrap();
        assert_eq!(dev.queued(), MOVE_BUFFER - 1);
        assert_eq!(dev.send(&line).unwrap(), vec!["ok"]);
    }

    #[test]
    fn latency_advances_the_clock() {
        let mut dev = LoopbackDevice::new(SimConfig::default(), 80.0).unwrap();
        dev.send(&encode_query()).unwrap();
        assert!((dev.state.t - 0.08).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_episode() {
        let sim = SimConfig::default();
        let opts = EpisodeOptions::default();
        let mut c = Controller::new(ControllerConfig::default(), &ArithmeticKit::exact()).unwrap();
        let direct = run_episode(&mut c, &sim, &opts).unwrap();
        let mut c = Controller::new(ControllerConfig::default(), &ArithmeticKit::exact()).unwrap();
        let mut dev = LoopbackDevice::new(sim, 0.0).unwrap();
        let via = run_protocol_episode(&mut c, &mut dev, &opts).unwrap();
        assert!(via.summary.success);
        assert_eq!(via.summary.subtasks, direct.summary.subtasks);
        let (a, b) = (&direct.steps.last().unwrap().state, &via.steps.last().unwrap().state);
        assert!(crate::gantry::distance(&a.object, &b.object) <= 1e-6);
        assert!(crate::gantry::distance(&a.pos, &b.pos) <= 1e-6);
    }
}
