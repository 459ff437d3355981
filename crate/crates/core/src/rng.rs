//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream derived from the run
//! seed and a task key, so results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// One component of a substream key.
#[derive(Debug, Clone, Copy)]
pub enum KeyPart<'a> {
    Str(&'a str),
    Int(i64),
}

impl<'a> From<&'a str> for KeyPart<'a> {
    fn from(s: &'a str) -> Self {
        KeyPart::Str(s)
    }
}

impl<'a> From<&'a String> for KeyPart<'a> {
    fn from(s: &'a String) -> Self {
        KeyPart::Str(s.as_str())
    }
}

macro_rules! int_key {
    ($($t:ty),*) => {$(
        impl From<$t> for KeyPart<'_> {
            fn from(v: $t) -> Self {
                KeyPart::Int(v as i64)
            }
        }
    )*};
}
int_key!(u8, u16, u32, u64, usize, i32, i64);

/// Stream seeded from `seed` and the ordered key parts.
pub fn substream(seed: u64, parts: &[KeyPart<'_>]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        match part {
            KeyPart::Str(s) => {
                hasher.update([0u8]);
                hasher.update((s.len() as u64).to_le_bytes());
                hasher.update(s.as_bytes());
            }
            KeyPart::Int(v) => {
                hasher.update([1u8]);
                hasher.update(v.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(bytes)
}

/// `substream(seed, &[key!(a, b, ...)])` shorthand.
#[macro_export]
macro_rules! stream {
    ($seed:expr $(, $part:expr)* $(,)?) => {
        $crate::rng::substream($seed, &[$($crate::rng::KeyPart::from($part)),*])
    };
}

/// 1-based ranks of `values`, ties broken uniformly at random.
pub fn random_ranks<R: rand::Rng + ?Sized>(values: &[f64], rng: &mut R) -> Vec<usize> {
    let keys: Vec<u64> = (0..values.len()).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .total_cmp(&values[b])
            .then_with(|| keys[a].cmp(&keys[b]))
    });
    let mut ranks = vec![0; values.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = pos + 1;
    }
    ranks
}
