pub mod error;
pub mod eval;
pub mod io;
pub mod kv;
pub mod labels;
pub mod losses;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
