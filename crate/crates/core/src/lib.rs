//! Carves differential unit tests out of recorded executions.

pub mod assess;
pub mod codec;
pub mod collector;
pub mod exec;
pub mod instrument;
pub mod model;
pub mod mutation;
pub mod pstream;
pub mod runtime;
pub mod store;
pub mod synth;
pub mod workload;
