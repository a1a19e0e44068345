pub mod diffcore;
pub mod error;

pub use error::{Error, Result};
pub mod data;
pub mod eval;
pub mod nets;
pub mod objectives;
pub mod train;
pub mod warp;
pub mod xform;
