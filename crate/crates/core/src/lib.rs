//! Adaptive preconditioned stochastic gradient descent.
//!
//! A preconditioner space ([`space`]) fixes the family of operators `H_k`;
//! [`precond`] turns the gradient history into `H_k = η (δI + Π(S_k))^{-1/2}`;
//! [`optimizer`] runs the plain, accelerated, and clipped loops on the convex
//! problems of [`testbed`]; [`verifier`] holds the dense oracles and bound
//! checks used by the tests and the bench CLI.

pub mod error;
pub mod optimizer;
pub mod precond;
pub mod rng;
pub mod space;
pub mod testbed;
pub mod verifier;

pub use error::{Error, Result};
pub use optimizer::{run, Algorithm, RunConfig, RunTrace};
pub use precond::PrecondState;
pub use space::{Payload, Point, Space, SpaceElement, SpaceKind};
pub use testbed::{make_holder, make_noise, make_quadratic, ProblemSpec};
