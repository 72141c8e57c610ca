//! L2 adaptive computation over sequential layer stacks: per-token detection
//! and skipping of unactivated layers ("voids"), trace recording, and the
//! usage and norm analyses built on those traces.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod executor;
pub mod halting;
pub mod model;
pub mod rng;
pub mod suites;
pub mod tensor;
pub mod trace;
pub mod weights;

pub use error::{LacError, Result};
pub use executor::{run_stack, ExecutionOutcome, FnStack, LayerStack};
pub use halting::{HaltPolicy, ProgressHistory, SkipMode, ThresholdFormula};
pub use model::{build_model, Model, ModelConfig};
pub use tensor::{l2_norm, NormGranularity, Tensor};
pub use trace::{Phase, TraceRecord};
