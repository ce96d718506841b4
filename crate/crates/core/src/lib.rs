//! Multi-agent value factorization with energy-based surprise minimization.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: dense layers with hand-written backprop, RMSProp, gradient checking
//!   and a binary checkpoint format.
//! - [`env`]: the `SpuriousCapture` cooperative gridworld with storm episodes.
//! - [`agent`]: the shared per-agent utility network and ε-greedy action selection.
//! - [`mixer`]: QMIX (monotonic, hypernetwork-conditioned), VDN and IQL heads.
//! - [`surprise`]: deviation features, the surprise mixer, the log-sum-exp energy
//!   operator and the energy ratio.
//! - [`learner`]: replay, target banks, the TD objective and the training loop.

pub mod agent;
pub mod env;
pub mod error;
pub mod learner;
pub mod mixer;
pub mod nn;
pub mod surprise;

pub use error::{Error, Result};
