//! Speech recognition with architecture search over CTC-trained networks.

pub mod audio;
pub mod corpus;
pub mod ctc;
pub mod decoder;
pub mod error;
pub mod lm;
pub mod nas;
pub mod nn;
pub mod seed;

pub use error::{Error, Result};
