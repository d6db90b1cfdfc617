//! Graph classification with learned node orderings.
//!
//! Pipeline:
//!
//! 1. [`embed`]: pretrain node-label embeddings by predicting each node's
//!    label from its distance-weighted neighborhood.
//! 2. [`walk`]: map every graph to a sequence of soft one-hot node vectors
//!    with a parameterized Gumbel-Softmax random walk.
//! 3. [`rnn`]: encode the sequence with an LSTM whose gates also see the
//!    current node's neighborhood, sum the hidden states and classify.
//!
//! Everything is trained through the small reverse-mode engine in
//! [`autodiff`]; [`harness`] runs cross-validation and ablations and
//! [`cli`] exposes it all on the command line.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod embed;
pub mod error;
pub mod graph;
pub mod harness;
pub mod init;
pub mod rnn;
pub mod walk;

pub use config::{EmbeddingMode, RunConfig};
pub use error::{Error, Result};
pub use graph::{parse_tu_dataset, stratified_folds, Dataset, FoldSplit, Graph};
