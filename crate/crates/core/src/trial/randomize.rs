use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Arm;
use crate::sdat::Form;

pub const DEFAULT_BLOCK_SIZE: usize = 6;

/// Permuted-block randomizer. Block `b` is a shuffle of an equal number of
/// each arm drawn from ChaCha8 stream `b` of the trial seed, so the arm of
/// the i-th randomized participant depends only on (seed, i).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRandomizer {
    pub seed: u64,
    pub block_size: usize,
}

impl BlockRandomizer {
    pub fn new(seed: u64, block_size: usize) -> Option<Self> {
        (block_size > 0 && block_size.is_multiple_of(Arm::ALL.len())).then_some(Self { seed, block_size })
    }

    pub fn block(&self, index: u64) -> Vec<Arm> {
        let per_arm = self.block_size / Arm::ALL.len();
        let mut arms: Vec<Arm> = Arm::ALL.iter().flat_map(|a| std::iter::repeat_n(*a, per_arm)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        arms.shuffle(&mut rng);
        arms
    }

    /// Arm of the `i`-th participant randomized (0-based).
    pub fn arm_at(&self, i: u64) -> Arm {
        let size = self.block_size as u64;
        self.block(i / size)[(i % size) as usize]
    }

    pub fn sequence(&self, n: u64) -> Vec<Arm> {
        let size = self.block_size as u64;
        (0..n.div_ceil(size)).flat_map(|b| self.block(b)).take(n as usize).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormPolicy {
    /// (A, B) and (B, A) alternate within each arm.
    #[default]
    Counterbalanced,
    /// Everyone takes A before and B after.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormOrder {
    pub pre: Form,
    pub post: Form,
}

impl FormOrder {
    /// The follow-up test reuses the pre-test form.
    pub fn followup(&self) -> Form {
        self.pre
    }

    /// Order for the `k`-th participant (0-based) assigned within an arm.
    pub fn for_position(policy: FormPolicy, k: u64) -> Self {
        match policy {
            FormPolicy::Counterbalanced if k % 2 == 1 => FormOrder { pre: Form::B, post: Form::A },
            _ => FormOrder { pre: Form::A, post: Form::B },
        }
    }
}
