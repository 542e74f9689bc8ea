//! Quasipotential computation for planar SDEs `dx = b(x) dt + √ε dW`.
//!
//! The core solver is a label-setting march that carries value and gradient
//! (a *jet*) at every mesh point and updates them through cubic MAP segments
//! with Hermite-interpolated bases. Around it sit first-order baselines,
//! WKB prefactor and escape-time post-processing, and a transition path
//! theory module used to cross-check escape times.

pub mod error;
pub mod field;
pub mod grid;
pub mod fit;
pub mod hyperdual;
pub mod io;
pub mod linalg;
pub mod march;
pub mod minimize;
pub mod post;
pub mod sparse;
pub mod stencil;
pub mod tpt;

pub use error::{Error, Result};
pub use field::{DriftField, FieldSpec, MaierSteinField, RotationalField};
pub use grid::{GridSpec, Jet};
