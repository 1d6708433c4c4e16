//! Deterministic random streams.
//!
//! Every consumer of randomness draws from its own [`RngStream`], keyed by the
//! master seed of the run and a [`StreamId`] naming the component and the agent
//! (or zero for population-wide draws). The key is derived from the seed, the
//! stream id selects one of ChaCha's 2^64 independent keystreams, so two ids
//! never share generator state and output does not depend on the order in
//! which streams are created or on how many worker threads exist.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Largest agent index representable in a [`StreamId`].
pub const MAX_STREAM_INDEX: u64 = (1 << 40) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    CrossInit,
    CrossPrice,
    LlsHistory,
    LlsDividend,
    LlsNoise,
    FwDemand,
    /// Free slot for tests and downstream tools.
    User(u16),
}

impl Component {
    fn tag(self) -> u64 {
        match self {
            Component::CrossInit => 1,
            Component::CrossPrice => 2,
            Component::LlsHistory => 3,
            Component::LlsDividend => 4,
            Component::LlsNoise => 5,
            Component::FwDemand => 6,
            Component::User(n) => 0x1_0000 + n as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub component: Component,
    pub index: u64,
}

impl StreamId {
    pub fn new(component: Component, index: u64) -> Self {
        assert!(
            index <= MAX_STREAM_INDEX,
            "stream index {index} out of range"
        );
        StreamId { component, index }
    }

    fn word(self) -> u64 {
        (self.component.tag() << 40) | self.index
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of Monte-Carlo repetition `run`. Run 0 reuses the master seed so a
/// single `run` invocation and the first repetition of a batch coincide.
pub fn run_seed(master: u64, run: usize) -> u64 {
    if run == 0 {
        return master;
    }
    let mut s = master ^ 0xA076_1D64_78BD_642F;
    let a = splitmix64(&mut s);
    let mut t = a ^ (run as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB);
    splitmix64(&mut t)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    id: StreamId,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut s = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(id.word());
        RngStream { id, inner }
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, low: f64, high: f64) -> f64 {
        low + self.uniform() * (high - low)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn sign(&mut self) -> i8 {
        if self.inner.random::<bool>() {
            1
        } else {
            -1
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Source of the per-step shocks consumed by the market dynamics.
///
/// Production runs use [`RngStream`]; [`ZeroNoise`] switches every shock off
/// so deterministic skeletons of the models can be traced exactly.
pub trait NoiseSource: Send {
    fn standard_normal(&mut self) -> f64;
    /// Uniform on `[0, 1)`.
    fn uniform(&mut self) -> f64;
}

impl NoiseSource for RngStream {
    fn standard_normal(&mut self) -> f64 {
        RngStream::standard_normal(self)
    }

    fn uniform(&mut self) -> f64 {
        RngStream::uniform(self)
    }
}

/// Degenerate generator: every normal draw is 0, every uniform draw is 1/2.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }

    fn uniform(&mut self) -> f64 {
        0.5
    }
}
