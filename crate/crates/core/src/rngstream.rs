//! Derived RNG streams. Every consumer of randomness gets its own ChaCha
//! stream keyed by (seed, purpose), so toggling one component (e.g. the
//! momentum wrapper) can never shift the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Purpose tags. Batch shuffling reserves a block per (task, epoch) pair so
// runs differing only in momentum flags see identical data order.
pub const INIT: u64 = 1;
pub const METHOD: u64 = 2;
pub const PRETRAIN_BASE: u64 = 0x1000;
pub const SHUFFLE_BASE: u64 = 0x2000;
pub const CONSOLIDATE_BASE: u64 = 0x4000;
pub const JOINT_BASE: u64 = 0x5000;

// Dataset-side tags (keyed by the dataset/split seed, not the run seed).
pub const SYNTH_MEANS: u64 = 0x10;
pub const SYNTH_TRAIN_BASE: u64 = 0x100_000;
pub const SYNTH_TEST_BASE: u64 = 0x200_000;
pub const SPLIT_CLASS_ORDER: u64 = 0x11;
pub const SPLIT_VAL_BASE: u64 = 0x300_000;

const EPOCHS_PER_TASK_BLOCK: u64 = 0x100;

/// RNG for one (seed, purpose) pair.
pub fn derive(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

/// Stream tag for shuffling task `task`'s training data in epoch `epoch`.
pub fn shuffle_stream(task: usize, epoch: usize) -> u64 {
    SHUFFLE_BASE + (task as u64) * EPOCHS_PER_TASK_BLOCK + epoch as u64
}
