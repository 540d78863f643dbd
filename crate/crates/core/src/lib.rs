pub mod bounds;
pub mod entropy;
pub mod error;
pub mod gls;
pub mod mc;
pub mod mdt;
pub mod moments;
pub mod quad;
pub mod rng;
pub mod slowly_varying;

pub use error::{Error, Result};
pub use mdt::{sample, MdtParams, SampleBatch};
pub use slowly_varying::SlowlyVarying;
