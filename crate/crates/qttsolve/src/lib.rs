//! Quantized tensor-train solver for heterogeneous elliptic PDEs
//! -div(a grad u) = div g on the periodic unit cube in dimensions 2 and 3.
//!
//! The solver works on the gradient unknown: the equation is rewritten as a
//! penalized quadratic minimization in Fourier space using the Helmholtz-Leray
//! projector, assembled as a medium-rank MPO (circular convolution with the
//! coefficient symbol plus a penalty times the projector symbol), and solved
//! with a one-site ALS sweep. The primal solution is recovered through the
//! Green multiplier. Everything stays in compressed quantized tensor-train
//! form end to end.

pub mod als;
pub mod bench;
pub mod dense;
pub mod driver;
pub mod estimators;
pub mod layout;
pub mod qft;
pub mod ops;
pub mod scalar;
pub mod symbols;
pub mod tci;
pub mod tt;

pub use scalar::Scalar;
pub use tt::{Mpo, TensorTrain, TruncInfo, TtError};
