//! Joint generative search and recommendation at desk scale.
//!
//! The crate covers the whole experimental pipeline: simulated datasets
//! ([`simgen`]), instance construction ([`corpus`]), a small generative
//! retriever ([`retriever`]), decoding ([`decode`]), evaluation
//! ([`evalkit`]), dataset statistics ([`stats`]), the hypothesis experiments
//! and prediction analyses ([`hypolab`]) and file formats ([`io`]).

pub mod corpus;
pub mod decode;
pub mod error;
pub mod evalkit;
pub mod hypolab;
pub mod io;
pub mod retriever;
pub mod simgen;
pub mod stats;

pub use error::{Error, Result};
