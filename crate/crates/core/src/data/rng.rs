use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose of a random stream. Each label maps to a disjoint ChaCha stream
/// under the same seed, so draws for one purpose never perturb another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    Split,
    Unlabeled,
    Noise,
    Init,
    Pool,
}

impl StreamLabel {
    fn id(self) -> u64 {
        match self {
            StreamLabel::Split => 1,
            StreamLabel::Unlabeled => 2,
            StreamLabel::Noise => 3,
            StreamLabel::Init => 4,
            StreamLabel::Pool => 5,
        }
    }
}

/// Seeded, labelled random stream.
///
/// `(seed, label)` fully determines the draw sequence. [`RngStream::fork`]
/// derives further independent sub-streams (one per evaluated user, one per
/// training phase, ...) without consuming draws from the parent.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: StreamLabel,
    index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        Self::with_index(seed, label, 0)
    }

    fn with_index(seed: u64, label: StreamLabel, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // top byte: label, remaining bits: fork index
        rng.set_stream((label.id() << 56) | (index & ((1 << 56) - 1)));
        RngStream {
            seed,
            label,
            index,
            rng,
        }
    }

    /// Independent sub-stream number `index` of this stream's `(seed, label)`.
    pub fn fork(&self, index: u64) -> RngStream {
        Self::with_index(self.seed, self.label, index + 1)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    pub fn fork_index(&self) -> u64 {
        self.index
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
