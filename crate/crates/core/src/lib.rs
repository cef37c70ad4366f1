//! Desk-scale laboratory for preference sampling in KL-regularized alignment.
//!
//! Everything runs on fully enumerable toy language models: a tabular
//! autoregressive softmax policy over a small vocabulary with bounded
//! response length. Because the response space is finite, every quantity
//! that is an expectation in the large-scale setting (losses, gradients,
//! partition functions, pair densities, KL divergences) has an exact
//! enumeration here, which is what makes the verification harnesses in
//! [`verify`] possible.
//!
//! Module map:
//! - [`lm`] — token spaces, tabular policies, exact joint distributions.
//! - [`reward`] — oracle rewards, the implicit policy reward, Bradley-Terry
//!   preference labeling.
//! - [`sampling`] — response-pair generation strategies and their exact pair
//!   densities, plus partition functions, per-prompt weights and cost
//!   metering.
//! - [`dpo`] — empirical and population losses, analytic gradients, and the
//!   iterative/online training loops.
//! - [`objective`] — the oracle objective J, its gradient and Hessian, and
//!   the asymptotic covariance matrices.
//! - [`verify`] — gradient-alignment, density-ratio, and estimator-asymptotics
//!   harnesses with hard numeric assertions.
//! - [`instance`] — seeded construction of complete toy instances.
//! - [`rng`] — counter-based random streams shared by all of the above.

pub mod dpo;
mod error;
pub mod instance;
pub mod lm;
pub mod math;
pub mod objective;
pub mod reward;
pub mod rng;
pub mod sampling;
pub mod verify;

pub use error::{Error, Result};
