//! Synthetic nervous system (SNS) toolkit.
//!
//! * [`dynamics`]: discretized conductance-based neuron dynamics, plus the
//!   CTRNN and vanilla-RNN special cases.
//! * [`training`]: BPTT gradients, a finite-difference oracle, Adam, the
//!   training loop and a small MLP baseline.
//! * [`subnet`]: arithmetic subnetwork topologies and contour evaluation.
//! * [`controller`]: the layered pick-and-place controller network.
//! * [`gantry`]: kinematic gantry simulator and the closed-loop episode runner.
//! * [`protocol`]: line-based device protocol and a loopback device.
//! * [`harness`]: the operations behind the `sns` command-line tool.

// NaN must fail validation, hence `!(x > 0.0)` style checks
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod gantry;
pub mod harness;
pub mod protocol;
pub mod subnet;
pub mod training;

pub use dynamics::{
    activation, ctrnn_step, from_biophysical, simulate, steady_state, step, vanilla_step,
    BiophysicalNeuron, NetworkParams, NeuronState, Synapse,
};
pub use error::{Result, SnsError};
pub use subnet::{build_topology, eval_contour, ideal_op, ArithOp, Topology};
pub use training::{train, Dataset, LossCurve, TrainConfig};
