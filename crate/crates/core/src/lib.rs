pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod injection;
pub mod metrics;
pub mod pipeline;
pub mod sampler;
pub mod schedule;
pub mod synthdata;
pub mod tensor;
pub mod vten;

pub use error::{MvocError, Result};
