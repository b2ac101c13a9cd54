//! Dependent-task offloading for multi-user, multi-edge computing.
//!
//! * [`model`]: task graphs, platforms, plans
//! * [`gen`]: random layered DAG generator and datasets
//! * [`timing`]: EAT-based plan evaluation and step rewards
//! * [`sched`]: Local / Remote / Round-Robin / Random / HEFT / Optimal planners
//! * [`env`]: MDP environment behind a newline-delimited JSON protocol
//! * [`bench`]: experiment grids, CSV output, summaries and transcript replay

pub mod bench;
pub mod env;
pub mod gen;
pub mod model;
pub mod scalar;
pub mod sched;
pub mod timing;

pub use model::{Action, Location, MergedDag, Plan};
pub use scalar::Scalar;

pub type Platform = model::Platform<f64>;
pub type Platform32 = model::Platform<f32>;
pub type SimState = timing::SimState<f64>;
pub type SimState32 = timing::SimState<f32>;
pub type EvalResult = timing::EvalResult<f64>;
pub type EvalResult32 = timing::EvalResult<f32>;
