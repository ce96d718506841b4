//! Minimal parameterized-function core: dense layers with hand-written
//! backprop, RMSProp, a finite-difference gradient checker and checkpoints.

pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod optim;
pub mod param;

pub use dense::{Activation, Dense, DenseSpec, Mlp, MlpTape};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use optim::{OptimizerConfig, RmsProp};
pub use param::{Param, ParamId, ParamSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG stream for one component, derived from a run seed.
///
/// Each network and each stochastic process draws from its own stream so that
/// adding a component never perturbs the draws of another.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
