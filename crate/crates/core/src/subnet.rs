//! Arithmetic functional subnetworks: topologies, ideal targets and contour
//! evaluation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{steady_state, NetworkParams, DEFAULT_E_HI, DEFAULT_E_LO};
use crate::error::{Result, SnsError};

/// Default network timestep for subnetwork training (s).
pub const DEFAULT_DT: f64 = 0.1;
/// Initial time constant of every non-clamped subnetwork neuron (s).
pub const INITIAL_TAU: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArithOp {
    Add,
    Sub,
    Div,
    Mul,
}

impl ArithOp {
    pub const ALL: [ArithOp; 4] = [ArithOp::Add, ArithOp::Sub, ArithOp::Div, ArithOp::Mul];

    pub fn name(self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Div => "div",
            ArithOp::Mul => "mul",
        }
    }
}

impl fmt::Display for ArithOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArithOp {
    type Err = SnsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(ArithOp::Add),
            "sub" => Ok(ArithOp::Sub),
            "div" => Ok(ArithOp::Div),
            "mul" => Ok(ArithOp::Mul),
            other => Err(SnsError::UnknownOp(other.to_string())),
        }
    }
}

/// Target value (mV) of each operation for presynaptic potentials in `[0, 20]` mV.
///
/// * add: `clip(a + b, 0, 20)`
/// * sub: `clip(a - b, 0, 20)` (activities are nonnegative)
/// * div: `a / (1 + b)`
/// * mul: `a * b / 20`
pub fn ideal_op(op: ArithOp, a: f64, b: f64) -> f64 {
    match op {
        ArithOp::Add => (a + b).clamp(DEFAULT_E_LO, DEFAULT_E_HI),
        ArithOp::Sub => (a - b).clamp(DEFAULT_E_LO, DEFAULT_E_HI),
        ArithOp::Div => a / (1.0 + b),
        ArithOp::Mul => a * b / DEFAULT_E_HI,
    }
}

/// Sign constraint on a learnable `W` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    #[default]
    Free,
    Nonneg,
    Nonpos,
}

impl Sign {
    fn project(self, x: f64) -> f64 {
        match self {
            Sign::Free => x,
            Sign::Nonneg => x.max(0.0),
            Sign::Nonpos => x.min(0.0),
        }
    }
}

/// How the learnable entries of a topology are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitPolicy {
    /// Random magnitudes; the multiplication interneuron synapse starts inhibitory.
    #[default]
    Standard,
    /// Every `W` entry gets a uniformly random sign.
    RandomSign,
}

/// Sparse wiring of an arithmetic subnetwork and its initial parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub op: ArithOp,
    pub n: usize,
    pub inputs: [usize; 2],
    pub output: usize,
    pub interneurons: Vec<usize>,
    /// Learnable `W` entries.
    pub w_mask: Vec<Vec<bool>>,
    /// Learnable `V` entries.
    pub v_mask: Vec<Vec<bool>>,
    pub w_sign: Vec<Vec<Sign>>,
    pub init: NetworkParams,
    pub init_seed: u64,
}

impl Topology {
    /// Union of the `W` and `V` masks: which synapses exist.
    pub fn mask(&self) -> Vec<Vec<bool>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.w_mask[i][j] || self.v_mask[i][j]).collect())
            .collect()
    }

    /// Number of learnable synaptic parameters (entries of `W` and `V`).
    pub fn learnable_synaptic(&self) -> usize {
        let count = |m: &Vec<Vec<bool>>| m.iter().flatten().filter(|&&x| x).count();
        count(&self.w_mask) + count(&self.v_mask)
    }

    /// Feedforward depth from the inputs to the output, in synapses.
    pub fn depth(&self) -> usize {
        1 + self.interneurons.len().min(1)
    }

    /// Zero out non-learnable entries and enforce sign constraints.
    pub fn project(&self, p: &mut NetworkParams) {
        for i in 0..self.n {
            for j in 0..self.n {
                p.w[i][j] = if self.w_mask[i][j] { self.w_sign[i][j].project(p.w[i][j]) } else { 0.0 };
                p.v[i][j] = if self.v_mask[i][j] { p.v[i][j].max(0.0) } else { 0.0 };
            }
            p.tau[i] = p.tau[i].max(0.0);
        }
    }

    pub fn header(&self) -> TopologyHeader {
        TopologyHeader {
            name: self.op,
            inputs: self.inputs,
            output: self.output,
            interneurons: self.interneurons.clone(),
            init_seed: self.init_seed,
        }
    }
}

/// Build the wiring for `op` with the standard initialization.
pub fn build_topology(op: ArithOp, seed: u64) -> Topology {
    build_topology_with(op, seed, InitPolicy::Standard)
}

pub fn build_topology_with(op: ArithOp, seed: u64, policy: InitPolicy) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, interneurons) = match op {
        ArithOp::Mul => (4, vec![2]),
        _ => (3, vec![]),
    };
    let output = n - 1;
    let inputs = [0, 1];
    let mut w_mask = vec![vec![false; n]; n];
    let mut v_mask = vec![vec![false; n]; n];
    let w_sign = vec![vec![Sign::Free; n]; n];
    let mut p = NetworkParams::new(n, DEFAULT_DT, DEFAULT_E_LO, DEFAULT_E_HI);
    p.clamped = inputs.to_vec();

    let excit = |rng: &mut ChaCha8Rng| -> f64 {
        let mag = rng.gen_range(0.0..DEFAULT_E_HI);
        match policy {
            InitPolicy::Standard => mag,
            InitPolicy::RandomSign => {
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            }
        }
    };
    let conductance = |rng: &mut ChaCha8Rng| rng.gen_range(0.0..DEFAULT_E_HI);

    match op {
        ArithOp::Add | ArithOp::Sub => {
            for &inp in &inputs {
                w_mask[output][inp] = true;
                p.w[output][inp] = excit(&mut rng);
            }
        }
        ArithOp::Div => {
            w_mask[output][0] = true;
            v_mask[output][1] = true;
            p.w[output][0] = excit(&mut rng);
            p.v[output][1] = conductance(&mut rng);
        }
        ArithOp::Mul => {
            let inter = interneurons[0];
            w_mask[output][0] = true;
            w_mask[inter][1] = true;
            v_mask[inter][1] = true;
            v_mask[output][inter] = true;
            p.w[output][0] = excit(&mut rng);
            p.w[inter][1] = match policy {
                InitPolicy::Standard => -rng.gen_range(0.0..DEFAULT_E_HI),
                InitPolicy::RandomSign => excit(&mut rng),
            };
            p.v[inter][1] = conductance(&mut rng);
            p.v[output][inter] = conductance(&mut rng);
            // tonically active so the inhibitory input has something to suppress
            p.b[inter] = DEFAULT_E_HI;
        }
    }
    for i in 0..n {
        if !p.is_clamped(i) {
            p.tau[i] = INITIAL_TAU;
        }
        for j in 0..n {
            p.mask[i][j] = w_mask[i][j] || v_mask[i][j];
        }
    }
    Topology {
        op,
        n,
        inputs,
        output,
        interneurons,
        w_mask,
        v_mask,
        w_sign,
        init: p,
        init_seed: seed,
    }
}

/// Exact shunting-division network: `U_post = U_pre1 / (1 + U_pre2)`.
pub fn exact_division_params() -> NetworkParams {
    let mut p = NetworkParams::new(3, DEFAULT_DT, DEFAULT_E_LO, DEFAULT_E_HI);
    p.connect(2, 0, 20.0, 0.0);
    p.connect(2, 1, 0.0, 20.0);
    p.clamped = vec![0, 1];
    p
}

/// Hand-set parameters realizing `op` exactly (add, sub, div) or to within
/// about 0.2 mV (mul), in the same wiring as [`build_topology`].
pub fn exact_params(op: ArithOp) -> NetworkParams {
    let mut p = build_topology(op, 0).init;
    for row in p.w.iter_mut().chain(p.v.iter_mut()) {
        row.iter_mut().for_each(|x| *x = 0.0);
    }
    p.tau.iter_mut().for_each(|t| *t = 0.0);
    p.b.iter_mut().for_each(|b| *b = 0.0);
    match op {
        ArithOp::Add => {
            p.w[2][0] = 20.0;
            p.w[2][1] = 20.0;
        }
        ArithOp::Sub => {
            p.w[2][0] = 20.0;
            p.w[2][1] = -20.0;
        }
        ArithOp::Div => return exact_division_params(),
        ArithOp::Mul => {
            // inter = 20 (1 - y) / (1 + 100 y), out = 20 x / (1 + 100 phi(inter))
            p.b[2] = 20.0;
            p.w[2][1] = -20.0;
            p.v[2][1] = 100.0;
            p.w[3][0] = 20.0;
            p.v[3][2] = 100.0;
        }
    }
    p
}

/// Polarity of a trained synapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynapseKind {
    Excitatory,
    Inhibitory,
    Shunting,
}

/// Classify every existing synapse `pre -> post` by the sign of its `W`
/// entry and the presence of a `V` entry.
pub fn classify_synapses(p: &NetworkParams) -> Vec<(usize, usize, SynapseKind)> {
    let mut out = Vec::new();
    for i in 0..p.n {
        for j in 0..p.n {
            if !p.mask[i][j] {
                continue;
            }
            let (w, v) = (p.w[i][j], p.v[i][j]);
            let kind = if w > 0.0 {
                SynapseKind::Excitatory
            } else if w < 0.0 {
                SynapseKind::Inhibitory
            } else if v > 0.0 {
                SynapseKind::Shunting
            } else {
                continue;
            };
            out.push((j, i, kind));
        }
    }
    out
}

/// Steady-state output surface over a uniform grid of presynaptic potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    /// Grid coordinates (mV), shared by both axes.
    pub axis: Vec<f64>,
    /// `values[i][k]` is the output for `a = axis[i]`, `b = axis[k]`.
    pub values: Vec<Vec<f64>>,
}

pub const CONTOUR_TOL: f64 = 1e-10;
pub const CONTOUR_MAX_ITER: usize = 100_000;

/// Evaluate the steady-state output (as activity in mV) of `output` for each
/// `(a, b)` on a `grid_n x grid_n` grid over `[e_lo, e_hi]^2`. The first two
/// clamped neurons receive `a` and `b`.
pub fn eval_contour(params: &NetworkParams, output: usize, grid_n: usize) -> Result<Contour> {
    if grid_n < 2 {
        return Err(SnsError::InvalidParameter(format!("grid must have at least 2 points per axis (got {grid_n})")));
    }
    if params.clamped.len() < 2 {
        return Err(SnsError::InvalidParameter("contour evaluation needs two clamped inputs".into()));
    }
    let (lo, hi) = (params.e_lo, params.e_hi);
    let axis: Vec<f64> = (0..grid_n)
        .map(|k| lo + (hi - lo) * k as f64 / (grid_n - 1) as f64)
        .collect();
    let (ia, ib) = (params.clamped[0], params.clamped[1]);
    let mut values = vec![vec![0.0; grid_n]; grid_n];
    for (i, &a) in axis.iter().enumerate() {
        for (k, &b) in axis.iter().enumerate() {
            let (s, _) = steady_state(params, &[(ia, a), (ib, b)], CONTOUR_TOL, CONTOUR_MAX_ITER).map_err(|e| {
                match e {
                    SnsError::NonConvergence { iterations, residual } => SnsError::InvalidParameter(format!(
                        "no steady state at (a={a}, b={b}) after {iterations} iterations (residual {residual:e})"
                    )),
                    other => other,
                }
            })?;
            values[i][k] = params.readout(s.h[output]);
        }
    }
    Ok(Contour { axis, values })
}

impl Contour {
    /// Largest absolute deviation from `ideal_op(op, a, b)` over the grid.
    pub fn max_abs_error(&self, op: ArithOp) -> f64 {
        self.max_abs_error_by(|a, b| ideal_op(op, a, b))
    }

    pub fn max_abs_error_by(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut worst = 0.0f64;
        for (i, &a) in self.axis.iter().enumerate() {
            for (k, &b) in self.axis.iter().enumerate() {
                worst = worst.max((self.values[i][k] - f(a, b)).abs());
            }
        }
        worst
    }

    /// Write `a,b,sns,ideal` rows.
    pub fn write_csv(&self, op: ArithOp, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| SnsError::csv(path, e))?;
        w.write_record(["a", "b", "sns", "ideal"]).map_err(|e| SnsError::csv(path, e))?;
        for (i, &a) in self.axis.iter().enumerate() {
            for (k, &b) in self.axis.iter().enumerate() {
                let rec = [a, b, self.values[i][k], ideal_op(op, a, b)].map(|x| x.to_string());
                w.write_record(&rec).map_err(|e| SnsError::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| SnsError::io(path, e))
    }
}

/// Identifying block stored alongside subnetwork parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyHeader {
    pub name: ArithOp,
    pub inputs: [usize; 2],
    pub output: usize,
    #[serde(default)]
    pub interneurons: Vec<usize>,
    #[serde(default)]
    pub init_seed: u64,
}

/// A subnetwork on disk: the parameter document plus a `"topology"` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubnetFile {
    pub topology: TopologyHeader,
    #[serde(flatten)]
    pub params: NetworkParams,
}

impl SubnetFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("subnet serialize");
        std::fs::write(path, text).map_err(|e| SnsError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SnsError::io(path, e))?;
        let f: SubnetFile = serde_json::from_str(&text).map_err(|e| SnsError::json(path, e))?;
        f.params.validate()?;
        if f.topology.output >= f.params.n {
            return Err(SnsError::InvalidParameter(format!(
                "output index {} out of range",
                f.topology.output
            )));
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_values() {
        assert_eq!(ideal_op(ArithOp::Add, 7.0, 5.0), 12.0);
        assert_eq!(ideal_op(ArithOp::Add, 20.0, 20.0), 20.0);
        assert_eq!(ideal_op(ArithOp::Sub, 5.0, 9.0), 0.0);
        assert_eq!(ideal_op(ArithOp::Div, 10.0, 4.0), 2.0);
        assert_eq!(ideal_op(ArithOp::Mul, 20.0, 20.0), 20.0);
    }

    #[test]
    fn op_names_parse() {
        for op in ArithOp::ALL {
            assert_eq!(op.name().parse::<ArithOp>().unwrap(), op);
        }
        assert!(matches!("pow".parse::<ArithOp>(), Err(SnsError::UnknownOp(_))));
    }

    #[test]
    fn division_has_two_learnable_entries() {
        let t = build_topology(ArithOp::Div, 3);
        assert_eq!(t.learnable_synaptic(), 2);
        assert_eq!(t.mask().iter().flatten().filter(|&&m| m).count(), 2);
        assert!(t.w_mask[2][0] && t.v_mask[2][1]);
    }

    #[test]
    fn multiplication_starts_inhibitory() {
        for seed in 0..20 {
            let t = build_topology(ArithOp::Mul, seed);
            assert_eq!(t.n, 4);
            assert!(t.init.w[2][1] < 0.0);
            assert_eq!(t.depth(), 2);
        }
    }

    #[test]
    fn topology_shapes() {
        for op in [ArithOp::Add, ArithOp::Sub, ArithOp::Div] {
            let t = build_topology(op, 1);
            assert_eq!(t.n, 3);
            assert_eq!(t.init.clamped, vec![0, 1]);
            assert_eq!(t.init.tau, vec![0.0, 0.0, INITIAL_TAU]);
            assert_eq!(t.init.b, vec![0.0; 3]);
            assert!(t.init.validate().is_ok());
        }
        let add = build_topology(ArithOp::Add, 1);
        assert!(add.v_mask.iter().flatten().all(|&m| !m));
        let sub = build_topology(ArithOp::Sub, 1);
        assert!(sub.v_mask.iter().flatten().all(|&m| !m));
    }

    #[test]
    fn equal_seeds_give_equal_topologies() {
        for op in ArithOp::ALL {
            assert_eq!(build_topology(op, 42), build_topology(op, 42));
        }
        assert_ne!(build_topology(ArithOp::Add, 1), build_topology(ArithOp::Add, 2));
    }

    #[test]
    fn projection_respects_masks_and_signs() {
        let mut t = build_topology(ArithOp::Sub, 0);
        t.w_sign[2][1] = Sign::Nonpos;
        let mut p = t.init.clone();
        p.w[2][1] = 3.0;
        p.v[2][0] = 4.0;
        p.tau[2] = -1.0;
        t.project(&mut p);
        assert_eq!(p.w[2][1], 0.0);
        assert_eq!(p.v[2][0], 0.0);
        assert_eq!(p.tau[2], 0.0);
    }

    #[test]
    fn exact_division_contour() {
        let c = eval_contour(&exact_division_params(), 2, 5).unwrap();
        assert!(c.max_abs_error(ArithOp::Div) < 1e-6);
        assert_eq!(c.axis, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
    }

    #[test]
    fn exact_params_reproduce_targets() {
        for op in ArithOp::ALL {
            let p = exact_params(op);
            let out = p.n - 1;
            let err = eval_contour(&p, out, 11).unwrap().max_abs_error(op);
            let tol = if op == ArithOp::Mul { 0.25 } else { 1e-9 };
            assert!(err < tol, "{op}: {err}");
        }
    }

    #[test]
    fn exact_multiplier_corner() {
        // the hand-built multiplier's steady state at (20, 20)
        let p = exact_params(ArithOp::Mul);
        let c = eval_contour(&p, 3, 2).unwrap();
        assert!((c.values[1][1] - 20.0).abs() < 1e-9);
        assert!(c.values[0][1].abs() < 1e-9);
    }

    #[test]
    fn subtraction_ideal_plateau() {
        let mut c = eval_contour(&exact_params(ArithOp::Sub), 2, 5).unwrap();
        for (i, &a) in c.axis.clone().iter().enumerate() {
            for (k, &b) in c.axis.clone().iter().enumerate() {
                if b >= a {
                    assert_eq!(ideal_op(ArithOp::Sub, a, b), 0.0);
                    assert!(c.values[i][k].abs() < 1e-12);
                }
            }
        }
        c.values[0][0] = 1.0;
        assert_eq!(c.max_abs_error(ArithOp::Sub), 1.0);
    }

    #[test]
    fn grid_too_small() {
        assert!(eval_contour(&exact_division_params(), 2, 1).is_err());
    }

    #[test]
    fn synapse_classes() {
        let kinds = classify_synapses(&exact_params(ArithOp::Mul));
        assert!(kinds.contains(&(0, 3, SynapseKind::Excitatory)));
        assert!(kinds.contains(&(1, 2, SynapseKind::Inhibitory)));
        assert!(kinds.contains(&(2, 3, SynapseKind::Shunting)));
    }

    #[test]
    fn subnet_file_round_trip() {
        let t = build_topology(ArithOp::Mul, 9);
        let f = SubnetFile { topology: t.header(), params: t.init.clone() };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        f.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"topology\""));
        assert!(text.contains("\"W\""));
        assert_eq!(SubnetFile::load(&path).unwrap(), f);
        // the bare parameter document can be read back from the same file
        assert_eq!(NetworkParams::from_json(&text).unwrap(), t.init);
    }
}
