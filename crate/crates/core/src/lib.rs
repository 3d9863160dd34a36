//! Ambulance stationing under uncertain demand: grid geometry, call
//! ingestion, demand models, stochastic and robust optimisation, a
//! discrete-event simulator, calibration and tract-level regression.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod calibrate;
pub mod cli;
pub mod demand;
pub mod dispatchflow;
pub mod geogrid;
pub mod ingest;
pub mod robust;
pub mod search;
pub mod simcore;
pub mod stats;
pub mod stochastic;
pub mod synth;
