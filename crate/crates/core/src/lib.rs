//! Retrieve, rerank and read pipeline for knowledge-intensive visual
//! question answering over precomputed embeddings.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiments;
pub mod io;
pub mod optim;
pub mod reader;
pub mod reranker;
pub mod retrieval;
pub mod supervision;

pub use error::{Error, Result};
