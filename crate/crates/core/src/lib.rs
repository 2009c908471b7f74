//! Adaptive multi-grid reinforcement learning for robust well control.
//!
//! The crate couples a single-phase Darcy-flow simulator with a PPO
//! trainer whose environment can run on coarsened grids. A policy always
//! sees fine-grid observations and emits fine-grid actions; the
//! environment restricts actions and prolongs states across the grid
//! hierarchy, so the same parameters transfer unchanged from coarse to
//! fine fidelity.
//!
//! Module map:
//!
//! - [`grid`]: Cartesian grids, scalar fields, restriction and prolongation.
//! - [`simulator`]: pressure solve, Darcy velocities, upwind tracer transport.
//! - [`environment`]: the control MDP over the simulator, at any fidelity.
//! - [`uncertainty`]: permeability distributions and sample-library clustering.
//! - [`rl_ppo`]: actor-critic network, GAE, clipped-surrogate updates.
//! - [`scheduler`]: convergence detection and the multi-fidelity training loop.
//! - [`baseline_de`]: differential-evolution reference optimizer.
//! - [`experiment`]: config-driven runner used by the `mgrl` binary.
//!
//! Runnable walkthroughs for each capability live in `examples/`.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline_de;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod rl_ppo;
pub mod scheduler;
pub mod simulator;
pub mod uncertainty;

mod linalg;
pub(crate) mod seeding;

pub use error::{Error, Result};
