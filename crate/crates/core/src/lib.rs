//! Tensor-network electronic structure: block-sparse symmetric tensors, DMRG,
//! embedding-based local bases and cluster DMRG over fragment product states.

pub mod analysis;
pub mod bips;
pub mod embed;
pub mod fcioracle;
pub mod hamio;
pub mod mpsmpo;
pub mod spin;
pub mod symtensor;

pub use hamio::{HamError, Integrals, MpoChain};
pub use mpsmpo::{Mps, MpsError};
pub use symtensor::{BlockTensor, Direction, Index, QNum, TensorError};
