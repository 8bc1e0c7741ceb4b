//! Soft hypergraph neural network block.
//!
//! Each sample's vertices are softly assigned to a small set of learned,
//! sample-adapted hyperedge prototypes; features flow vertex → hyperedge →
//! vertex through that continuous participation matrix. The crate also
//! carries the sparse hyperedge selection with its load-balancing
//! statistic, classical hypergraph and self-attention baselines, a
//! finite-difference gradient checker, a synthetic training task, and a
//! scaling benchmark.

pub mod baselines;
pub mod bench;
pub mod cli;
pub mod error;
pub mod gradcheck;
pub mod message;
pub mod reference;
pub mod ses;
pub mod softhg;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use message::{
    softhgnn_backward, softhgnn_forward, softhgnn_forward_ses, BlockGrads, BlockOutput,
};
pub use ses::{SeSConfig, SeSState};
pub use softhg::{Activation, BlockConfig, NormMode, Participation, SoftHGParams};
pub use tensor::Matrix;
