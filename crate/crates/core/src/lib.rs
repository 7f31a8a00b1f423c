//! Distributionally robust statistical verification of black-box systems.
//!
//! A black-box performance function is learned by an imprecise neural
//! network (an ensemble whose pointwise min and max bracket the target)
//! through uncertainty-guided active learning. Branch-and-bound then
//! certifies a worst-case lower bound on the ensemble's lower envelope over
//! the explored region, which holds in expectation for every input
//! distribution in an alpha-contaminated mixture-of-uniforms family. A split
//! conformal baseline is provided for comparison.

pub mod conformal;
pub mod domain;
pub mod envs;
pub mod error;
pub mod explore;
pub mod guarantee;
pub mod inn;
pub mod net;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod verify;

pub use domain::InputBox;
pub use error::{Error, Result};
pub use inn::{ImpreciseNet, LabeledSample};
pub use net::Network;
