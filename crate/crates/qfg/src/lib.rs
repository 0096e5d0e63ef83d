//! File formats, parallel sampling and the `qfg` command-line front end on
//! top of [`qfg_core`].

pub mod cli;
pub mod json;
pub mod model_io;
pub mod sampling;

pub use model_io::{load_model, parse_model, serialize_model, ModelDocument, ModelIoError, ModelKind};
pub use sampling::sample_trajectories_parallel;
