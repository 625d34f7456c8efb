//! Minimal neural primitives with exact analytic gradients, all verifiable
//! against central finite differences at 64-bit precision.

pub mod act;
pub mod attention;
pub mod dropout;
pub mod encoder;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod param;

pub use attention::{softmax_rows, AttentionConfig, MultiHeadAttention};
pub use encoder::{positional_encoding, EncoderConfig, TransformerEncoder};
pub use gradcheck::finite_difference_check;
pub use linear::Linear;
pub use norm::LayerNorm;
pub use param::{param_count, param_names, zero_grads, Parameter, Parameterized};

use rand_chacha::ChaCha20Rng;

/// Forward-pass mode: eval is deterministic; training threads an explicit
/// RNG through every dropout site so runs stay reproducible.
pub enum RunMode<'a> {
    Eval,
    Train(&'a mut ChaCha20Rng),
}

impl<'a> RunMode<'a> {
    pub fn is_train(&self) -> bool {
        matches!(self, RunMode::Train(_))
    }

    /// Reborrows so one mode value can feed several sequential calls.
    pub fn reborrow(&mut self) -> RunMode<'_> {
        match self {
            RunMode::Eval => RunMode::Eval,
            RunMode::Train(rng) => RunMode::Train(rng),
        }
    }
}
