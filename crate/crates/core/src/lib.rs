//! Permutation-equivariant and permutation-invariant networks built from
//! reductive Reynolds operators.
//!
//! The symmetric group `S_n` acts on tensors in `R^{n^l x a}` by permuting every
//! tensor index at once. Averaging a function over the whole group (a Reynolds
//! operator) makes it equivariant but costs `n!` evaluations. This crate
//! implements the reduced construction: the output of an equivariant map is
//! assembled from one component function per basis tableau, each averaged
//! over a design set `H_D` of size `n!/(n-D)!` instead of the full group.
//!
//! Module map:
//!
//! - [`group`]: permutations, the tensor action, cyclic factors and design sets.
//! - [`tableau`]: Young diagrams, basis tableaux, the tuple/tableau bijection and
//!   label normalization.
//! - [`tensor`]: dense tensors, basis scatter, orbit sums, zero padding, corner
//!   components.
//! - [`reynolds`]: brute-force and design-restricted Reynolds operators used as
//!   oracles, plus the invariant-polynomial generator scaffolding.
//! - [`nn`]: multilayer perceptrons, reverse-mode gradients, Adam, losses.
//! - [`model`]: equivariant / invariant Reynolds networks, reduced variants and
//!   the fully connected baseline.
//! - [`data`]: the synthetic matrix tasks and their binary file format.
//! - [`checkpoint`]: text checkpoints for trained models.
//! - [`train`]: the mini-batch training loop and evaluation.
//!
//! Index conventions: every public contract is 1-based (`[n] = {1..n}`), tensors
//! are stored row-major with the channel index last.

pub mod checkpoint;
pub mod data;
mod error;
pub mod group;
pub mod model;
pub mod nn;
pub mod reynolds;
pub mod rng;
pub mod tableau;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use group::{DesignHD, Permutation};
pub use tableau::{BasisTableau, ExtendedTableau, YoungDiagram};
pub use tensor::DenseTensor;
