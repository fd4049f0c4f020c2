//! Transformer encoder whose self-attention is restricted by a jointly
//! induced dependency graph and constituency tree, with the discrete parsing
//! algorithms, the differentiable parent distribution, masked language model
//! training and the unsupervised parsing evaluation harness.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod depdist;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod params;
pub mod parser_net;
pub mod structures;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
