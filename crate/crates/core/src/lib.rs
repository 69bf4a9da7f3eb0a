//! Label-consistency analysis and relative-similarity contrastive learning on
//! labeled graphs.
//!
//! * [`graph`]: labeled graphs and exact hop neighborhoods
//! * [`labelstats`]: empirical label consistency per hop
//! * [`markov`]: label transition matrices, spectra and random-walk decay
//! * [`sbm`]: seeded stochastic block model generation
//! * [`tensor`]: dense math with reverse-mode gradients and Adam
//! * [`encoder`], [`loss`], [`train`]: the contrastive model and its training
//! * [`eval`]: probe accuracy, clustering NMI, Sim@5 and hop similarities
//! * [`io`]: plain-text file formats

pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod labelstats;
pub mod loss;
pub mod markov;
pub mod sbm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{build_graph, hop_sets, HopSets, LabeledGraph, UnreachablePolicy};
pub use tensor::Matrix;
