//! Simulation and training toolkit for an SOT-MRAM in-memory analog
//! computing (IMAC) co-processor.
//!
//! The crate is organised bottom-up:
//!
//! * [`device`] evaluates the MTJ resistance model; every conductance used
//!   elsewhere comes from here.
//! * [`circuits`] models the differential synapse, the row amplifier and
//!   the sigmoidal neuron.
//! * [`crossbar`] simulates a single n×m subarray.
//! * [`network`] chains subarrays into a multi-layer IMAC network, and
//!   handles the netlist and parameter file formats.
//! * [`training`] holds the teacher-student binarized trainer and the
//!   two-step CNN flow.
//! * [`pipeline`] simulates the CPU-IMAC buffer protocol, the ADC and the
//!   end-to-end mixed-precision inference.
//! * [`perf`] is the analytical latency/energy model.
//! * [`selftest`] runs the simulator against the references in [`oracle`].
//! * [`data`], [`config`] and [`rng`] are the supporting plumbing used by
//!   the command-line front end.

pub mod binary;
pub mod circuits;
pub mod config;
pub mod crossbar;
pub mod data;
pub mod device;
pub mod error;
pub mod network;
pub mod oracle;
pub mod perf;
pub mod pipeline;
pub mod rng;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};
