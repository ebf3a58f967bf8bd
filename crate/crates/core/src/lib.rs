//! Cycle-level simulator of a reconfigurable digital compute-in-memory
//! spiking neural network core, with a bit-exact integer reference model.

pub mod arch;
pub mod cim;
pub mod datapath;
pub mod fixed;
pub mod golden;
pub mod io;
pub mod mapper;
pub mod metrics;
pub mod pipeline;
pub mod tensor;
pub mod workload;
