//! Kolmogorov high-order deep networks for high-frequency function fitting
//! and PDE solving.
//!
//! The crate builds three model families on a shared dense-layer engine:
//! plain PINNs, HOrderDNNs (a tensor-product Lagrange basis in front of a
//! dense stack) and K-HOrderDNNs (a per-coordinate inner network on a
//! univariate basis feeding an outer network). Models, optimizers and
//! derivative propagation are generic over [`Scalar`] (`f32` or `f64`).
//!
//! * [`basis`]: GLL nodes and Lagrange bases with analytic derivatives.
//! * [`diffengine`]: dense layers, forward-mode Laplacians and reverse-mode gradients.
//! * [`models`]: the three families, parameter counts and checkpoints.
//! * [`problems`]: benchmark targets, domains and point sampling.
//! * [`training`]: Adam, loss balancing and the training loop.
//! * [`diagnostics`]: relative errors, spectra, slices and rate fits.
//! * [`theory`]: clipped polynomials, outer interpolants and rate studies.

pub mod basis;
pub mod diagnostics;
pub mod diffengine;
pub mod error;
pub mod models;
pub mod problems;
pub mod scalar;
pub mod theory;
pub mod training;

pub use diffengine::Activation;
pub use error::{Error, Result};
pub use models::{Architecture, Model, ModelParams, ModelSpec};
pub use problems::{Problem, ProblemOptions};
pub use scalar::Scalar;
pub use training::{train, TrainConfig, TrainError, TrainOutcome};

pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type Params64 = ModelParams<f64>;
pub type Params32 = ModelParams<f32>;
