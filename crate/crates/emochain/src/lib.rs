//! Diffeomorphic F0 contour registration and a chained
//! encoder-decoder-predictor network for emotion conversion of speech
//! features.

pub mod chain;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod nn;
pub mod registration;
pub mod seed;

pub use error::{Error, Result};
