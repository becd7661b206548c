use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::Result;

/// Dropout policy for one forward pass: active with its own seeded stream
/// in training, the identity in evaluation.
pub struct Dropout {
    rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn eval() -> Self {
        Dropout {
            rate: 0.0,
            rng: None,
        }
    }

    pub fn train(rate: f64, rng: ChaCha8Rng) -> Self {
        Dropout {
            rate,
            rng: Some(rng),
        }
    }

    pub fn train_seeded(rate: f64, seed: u64) -> Self {
        Self::train(rate, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        match &mut self.rng {
            Some(rng) => tape.dropout(x, self.rate, true, rng),
            None => Ok(x),
        }
    }
}
