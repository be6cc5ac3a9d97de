//! Named random streams derived from one master seed.
//!
//! Every randomized component draws from its own ChaCha stream so that, for
//! example, the gradient noise can be re-run without disturbing batch
//! sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// The independent random streams used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    FeatureMap,
    KmeansInit,
    KmeansNoise,
    SgdSampling,
    SgdNoise,
    Chains,
    Generation,
    ModelInit,
    Selection,
    Workload,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::FeatureMap => 1,
            Stream::KmeansInit => 2,
            Stream::KmeansNoise => 3,
            Stream::SgdSampling => 4,
            Stream::SgdNoise => 5,
            Stream::Chains => 6,
            Stream::Generation => 7,
            Stream::ModelInit => 8,
            Stream::Selection => 9,
            Stream::Workload => 10,
        }
    }
}

/// Master seed that fans out into named child streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// A fresh generator positioned at the start of `stream`.
    pub fn rng(&self, stream: Stream) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master);
        rng.set_stream(stream.id());
        rng
    }

    /// A 64-bit seed for `stream`, for components that persist their seed
    /// (such as the feature map).
    pub fn seed(&self, stream: Stream) -> u64 {
        use rand::RngCore;
        self.rng(stream).next_u64()
    }
}
