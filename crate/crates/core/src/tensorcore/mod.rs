//! Numeric foundations: scalar trait, dense tensors, seeded RNG, the MIV1
//! tensor container, finite-difference gradient checking and exact
//! nearest-neighbour search.

mod gradcheck;
pub mod kdtree;
mod miv;
pub mod nearest;
mod rng;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, grad_check_piecewise, GradCheckError, GradReport};
pub use miv::{decode, encode, load_tensors, save_tensors, FormatError, MAGIC, MAX_NAME_LEN};
pub use kdtree::KdTree;
pub use nearest::BucketGrid;
pub use rng::Rng;
pub use scalar::*;
pub use tensor::Tensor;
