pub mod api;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod filter;
pub mod model;
pub mod nnet;
pub mod pipeline;
pub mod session;
pub mod synth;

pub use error::{Error, Result};
