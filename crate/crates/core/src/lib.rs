//! Toy-scale neural machine translation with three interchangeable
//! alignment engines:
//!
//! * a Bahdanau (additive) attention encoder–decoder LSTM,
//! * a fixed Gaussian positional mask whose width comes from a k-Borda
//!   analysis of the trained attention,
//! * the same mask plus a bonus for words found by a Q-learning agent that
//!   walks an embedding similarity graph.
//!
//! The crate also carries the election analysis (Borda tallies and windowed
//! satisfaction), Gaussian fitting of attention rows, BLEU scoring, a latency
//! harness, and the `kborda` command line front end.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod election;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod gaussmask;
pub mod infer;
pub mod opcount;
pub mod qagent;
pub mod seq2seq;
pub mod toy;

pub use error::{Error, Result};
