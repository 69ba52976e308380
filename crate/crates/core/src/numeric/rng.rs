use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic random source keyed by a seed and a named stream.
///
/// Streams with different labels are independent, so augmentation,
/// clustering and initialization never share draws.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: String,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(fnv1a64(stream.as_bytes()));
        Self {
            seed,
            stream: stream.to_string(),
            inner,
        }
    }

    /// A fresh stream labelled `<self.stream>/<label>` under the same seed.
    pub fn derive(&self, label: &str) -> Self {
        Self::new(self.seed, &format!("{}/{}", self.stream, label))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }
}

impl RngCore for SeededRng {
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

pub(crate) fn fnv1a64(data: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    data.iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}
