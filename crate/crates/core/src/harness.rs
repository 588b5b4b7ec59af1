//! The operations behind the `sns` binary. Each writes its outputs under an
//! output directory with fixed file names and a `manifest.json`, and reports
//! whether the run met its criterion.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical or
//! acceptance failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::controller::{ArithmeticKit, Controller, ControllerConfig};
use crate::error::{Result, SnsError};
use crate::gantry::{run_episode, EpisodeOptions, EpisodeTrace, SimConfig};
use crate::protocol::{run_protocol_episode, LoopbackDevice};
use crate::subnet::{build_topology, eval_contour, ArithOp, Contour, SubnetFile};
use crate::training::{
    baseline_sizes, gen_dataset, gradcheck, mlp_eval, mlp_train, train, GradcheckOptions, MlpParams, TrainConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Training MSE (mV^2) a run must reach to count as converged.
pub const CONVERGED_MSE: f64 = 0.01;

/// Exit code for an error: configuration and I/O problems are 1, numerical
/// trouble is 2.
pub fn exit_code(err: &SnsError) -> i32 {
    match err {
        SnsError::NumericalFault { .. }
        | SnsError::NonConvergence { .. }
        | SnsError::TrainingDiverged { .. }
        | SnsError::Episode { .. } => EXIT_FAILURE,
        _ => EXIT_CONFIG,
    }
}

/// Largest acceptable contour error (mV) for a trained subnetwork.
pub fn grid_tolerance(op: ArithOp) -> f64 {
    match op {
        ArithOp::Add | ArithOp::Sub => 0.5,
        ArithOp::Div | ArithOp::Mul => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub version: String,
    pub started: String,
    pub finished: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

pub fn version() -> String {
    format!("sns-v{}", env!("CARGO_PKG_VERSION"))
}

impl RunManifest {
    fn begin(subcommand: &str, config: Option<&Path>, seed: Option<u64>, out_dir: &Path) -> Self {
        RunManifest {
            subcommand: subcommand.into(),
            config: config.map(Path::to_path_buf),
            seed,
            out_dir: out_dir.to_path_buf(),
            version: version(),
            started: now(),
            finished: String::new(),
        }
    }

    fn finish(mut self) -> Result<()> {
        self.finished = now();
        write_json(&self.out_dir.join("manifest.json"), &self)
    }
}

/// Result of a subcommand that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub summary: Value,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_FAILURE
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SnsError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| SnsError::io(path, e))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SnsError::io(dir, e))
}

fn mlp_contour(p: &MlpParams, grid_n: usize) -> Contour {
    let axis: Vec<f64> = (0..grid_n)
        .map(|k| p.e_lo + (p.e_hi - p.e_lo) * k as f64 / (grid_n - 1) as f64)
        .collect();
    let values = axis.iter().map(|&a| axis.iter().map(|&b| mlp_eval(p, a, b)).collect()).collect();
    Contour { axis, values }
}

/// Train one arithmetic subnetwork, optionally alongside the MLP baseline.
///
/// Writes `params.json`, `loss.csv`, `contour.csv`, `summary.json` and, with
/// the baseline, `mlp_params.json` and `mlp_loss.csv`. Passes when the
/// contour error is within [`grid_tolerance`].
pub fn cmd_train(op: ArithOp, config_path: &Path, out: &Path, baseline: bool) -> Result<Outcome> {
    let config = TrainConfig::load(config_path)?;
    let manifest = RunManifest::begin("train", Some(config_path), Some(config.seed), out);
    let dataset = gen_dataset(op, config.examples, config.seq_len, config.dt, config.seed)?;
    let topology = build_topology(op, config.seed);
    let clock = Instant::now();
    let (params, curve) = train(&topology, &dataset, &config)?;
    let sns_seconds = clock.elapsed().as_secs_f64();
    let output = config.output_neuron.unwrap_or(topology.output);
    let contour = eval_contour(&params, output, config.grid_n)?;
    let grid_error = contour.max_abs_error(op);

    make_dir(out)?;
    SubnetFile { topology: topology.header(), params }.save(out.join("params.json"))?;
    curve.write_csv(out.join("loss.csv"))?;
    contour.write_csv(op, out.join("contour.csv"))?;

    let mut summary = json!({
        "op": op.name(),
        "final_mse": curve.best(),
        "epochs_to_converge": curve.epochs_to_reach(CONVERGED_MSE),
        "grid_max_abs_error": grid_error,
        "grid_tolerance": grid_tolerance(op),
        "train_seconds": sns_seconds,
    });
    if baseline {
        let init = MlpParams::init(&baseline_sizes(op), config.seed);
        let (mlp, mlp_curve) = mlp_train(&init, &dataset, &config)?;
        write_json(&out.join("mlp_params.json"), &mlp)?;
        mlp_curve.write_csv(out.join("mlp_loss.csv"))?;
        summary["mlp"] = json!({
            "sizes": mlp.sizes,
            "final_mse": mlp_curve.best(),
            "epochs_to_converge": mlp_curve.epochs_to_reach(CONVERGED_MSE),
            "grid_max_abs_error": mlp_contour(&mlp, config.grid_n).max_abs_error(op),
            "mse_ratio_mlp_over_sns": mlp_curve.best() / curve.best(),
        });
    }
    let passed = grid_error <= grid_tolerance(op);
    summary["passed"] = json!(passed);
    write_json(&out.join("summary.json"), &summary)?;
    manifest.finish()?;
    Ok(Outcome { passed, summary })
}

/// Run the gradient check; passes when the largest relative error is at
/// most `1e-4` and under 5% of the perturbations were skipped at kinks.
pub fn cmd_gradcheck(seed: u64, options: &GradcheckOptions, out: Option<&Path>) -> Result<Outcome> {
    let manifest = out.map(|o| RunManifest::begin("gradcheck", None, Some(seed), o));
    let report = gradcheck(seed, options)?;
    let passed = report.max_rel_err <= 1e-4 && report.skipped_fraction() < 0.05;
    let summary = json!({
        "seed": seed,
        "nets": report.nets,
        "checked": report.checked,
        "skipped": report.skipped,
        "max_rel_err": report.max_rel_err,
        "passed": passed,
    });
    if let (Some(out), Some(manifest)) = (out, manifest) {
        make_dir(out)?;
        write_json(&out.join("summary.json"), &summary)?;
        manifest.finish()?;
    }
    Ok(Outcome { passed, summary })
}

/// Trained subnetworks to build the controller from, instead of the exact
/// weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubnetPaths {
    pub add: PathBuf,
    pub sub: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PickPlaceConfig {
    pub controller: ControllerConfig,
    pub sim: SimConfig,
    /// Simulated time limit (s).
    pub max_time: f64,
    /// Report no contact to the controller (fault injection).
    pub force_fault: bool,
    pub subnets: Option<SubnetPaths>,
}

impl Default for PickPlaceConfig {
    fn default() -> Self {
        PickPlaceConfig {
            controller: ControllerConfig::default(),
            sim: SimConfig::default(),
            max_time: 120.0,
            force_fault: false,
            subnets: None,
        }
    }
}

impl PickPlaceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SnsError::io(path, e))?;
        let cfg: PickPlaceConfig = serde_json::from_str(&text).map_err(|e| SnsError::json(path, e))?;
        cfg.controller.validate()?;
        cfg.sim.validate()?;
        if !(cfg.max_time > 0.0) {
            return Err(SnsError::InvalidParameter(format!("max_time must be positive (got {})", cfg.max_time)));
        }
        Ok(cfg)
    }

    /// Subnetwork weights named by the config, resolving paths against `base`.
    pub fn kit(&self, base: &Path) -> Result<ArithmeticKit> {
        match &self.subnets {
            None => Ok(ArithmeticKit::exact()),
            Some(paths) => {
                let add = SubnetFile::load(base.join(&paths.add))?.params;
                let sub = SubnetFile::load(base.join(&paths.sub))?.params;
                ArithmeticKit::from_params(&add, &sub)
            }
        }
    }
}

/// Run one episode as configured, directly or through the loopback device.
pub fn run_pickplace(config: &PickPlaceConfig, kit: &ArithmeticKit, via_protocol: bool, latency_ms: f64) -> Result<EpisodeTrace> {
    let mut controller = Controller::new(config.controller.clone(), kit)?;
    let options = EpisodeOptions { force_fault: config.force_fault, max_time: Some(config.max_time) };
    if via_protocol || latency_ms > 0.0 {
        let mut device = LoopbackDevice::new(config.sim.clone(), latency_ms)?;
        run_protocol_episode(&mut controller, &mut device, &options)
    } else {
        run_episode(&mut controller, &config.sim, &options)
    }
}

/// Run the pick-and-place episode and write `trace.csv`, `trace.jsonl` and
/// `summary.json`. A nonzero latency implies the protocol path.
pub fn cmd_pickplace(config_path: Option<&Path>, out: &Path, via_protocol: bool, latency_ms: f64) -> Result<Outcome> {
    let config = match config_path {
        Some(p) => PickPlaceConfig::load(p)?,
        None => PickPlaceConfig::default(),
    };
    let base = config_path.and_then(Path::parent).unwrap_or(Path::new("."));
    let kit = config.kit(base)?;
    let manifest = RunManifest::begin("pickplace", config_path, None, out);
    let clock = Instant::now();
    let trace = run_pickplace(&config, &kit, via_protocol, latency_ms)?;
    let wall = clock.elapsed().as_secs_f64();

    make_dir(out)?;
    trace.write_csv(out.join("trace.csv"))?;
    trace.write_jsonl(out.join("trace.jsonl"))?;
    let s = &trace.summary;
    let summary = json!({
        "success": s.success,
        "steps": s.steps,
        "duration": s.duration,
        "object_error": s.object_error,
        "gripper_error": s.gripper_error,
        "subtasks": s.subtasks,
        "via_protocol": via_protocol || latency_ms > 0.0,
        "latency_ms": latency_ms,
        "wall_seconds": wall,
    });
    write_json(&out.join("summary.json"), &summary)?;
    manifest.finish()?;
    Ok(Outcome { passed: s.success, summary })
}

/// Evaluate a saved subnetwork over a 21 x 21 grid and write `a,b,sns,ideal`
/// rows to `out`.
pub fn cmd_contour(params_path: &Path, out: &Path) -> Result<Outcome> {
    let file = SubnetFile::load(params_path)?;
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let manifest = RunManifest::begin("contour", Some(params_path), Some(file.topology.init_seed), dir);
    let op = file.topology.name;
    let contour = eval_contour(&file.params, file.topology.output, 21)?;
    make_dir(dir)?;
    contour.write_csv(op, out)?;
    let error = contour.max_abs_error(op);
    manifest.finish()?;
    Ok(Outcome {
        passed: true,
        summary: json!({ "op": op.name(), "grid_max_abs_error": error }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subnet::exact_params;

    #[test]
    fn error_codes() {
        assert_eq!(exit_code(&SnsError::InvalidParameter("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&SnsError::UnknownOp("pow".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&SnsError::TrainingDiverged { epoch: 3 }), EXIT_FAILURE);
    }

    #[test]
    fn missing_config_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let err = cmd_train(ArithOp::Add, &dir.path().join("nope.json"), &out, false).unwrap_err();
        assert_eq!(exit_code(&err), EXIT_CONFIG);
        assert!(!out.exists());
    }

    #[test]
    fn contour_of_exact_division() {
        let dir = tempfile::tempdir().unwrap();
        let params_path = dir.path().join("div.json");
        let topology = build_topology(ArithOp::Div, 0);
        SubnetFile { topology: topology.header(), params: exact_params(ArithOp::Div) }
            .save(&params_path)
            .unwrap();
        let out = dir.path().join("grid.csv");
        let o = cmd_contour(&params_path, &out).unwrap();
        assert!(o.summary["grid_max_abs_error"].as_f64().unwrap() <= 1e-6);
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("a,b,sns,ideal\n"));
        assert_eq!(text.lines().count(), 1 + 21 * 21);
        assert!(dir.path().join("manifest.json").exists());
        let missing = cmd_contour(&dir.path().join("absent.json"), &out).unwrap_err();
        assert_eq!(exit_code(&missing), EXIT_CONFIG);
    }

    #[test]
    fn gradcheck_outcomes() {
        let opts = GradcheckOptions { nets: 5, ..Default::default() };
        assert!(cmd_gradcheck(1, &opts, None).unwrap().passed);
        let leak = GradcheckOptions { nets: 3, neurons: 1, ..Default::default() };
        assert!(cmd_gradcheck(2, &leak, None).unwrap().passed);
        let bad = GradcheckOptions { nets: 3, corrupt: true, ..Default::default() };
        assert_eq!(cmd_gradcheck(1, &bad, None).unwrap().exit_code(), EXIT_FAILURE);
    }

    #[test]
    fn pickplace_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let o = cmd_pickplace(None, dir.path(), false, 0.0).unwrap();
        assert!(o.passed);
        for f in ["trace.csv", "trace.jsonl", "summary.json", "manifest.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(o.summary["subtasks"], json!([1, 2, 3, 4, 5, 6, 7, 8, 9]));
    }
}
