//! Self-contained deterministic PRNG, splittable by seed and stream id.
//!
//! One run seed fans out into independent streams (shuffling, dropout masks,
//! edge pruning, negative sampling, initialization) via [`stream_seed`], so
//! adding a consumer never shifts the draws seen by another. Generation is
//! xoshiro256** seeded through splitmix64; identical on every platform.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    mix(*state)
}

/// Derives the seed for a named stream from the run seed and a path of ids
/// (stream constant, then epoch, batch index, and so on as needed).
/// Distinct paths give statistically independent streams.
pub fn stream_seed(root: u64, path: &[u64]) -> u64 {
    let mut acc = mix(root.wrapping_add(GOLDEN));
    for &id in path {
        acc = mix(acc.wrapping_add(GOLDEN).wrapping_add(id.wrapping_mul(GOLDEN)));
    }
    acc
}

/// Stream ids used across the crate. Keeping them in one place avoids
/// accidental reuse of the same stream for two purposes.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const PRUNE: u64 = 4;
    pub const NEGATIVE: u64 = 5;
    pub const SYNTH: u64 = 6;
}

/// xoshiro256** generator.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let mut s = [0u64; 4];
        for slot in &mut s {
            *slot = splitmix64(&mut sm);
        }
        // xoshiro's state must never be all zero; unreachable from splitmix64
        // in practice, guarded anyway.
        if s == [0; 4] {
            s[0] = GOLDEN;
        }
        Rng { s }
    }

    /// Seeds a generator for the stream identified by `path` under `root`.
    pub fn for_stream(root: u64, path: &[u64]) -> Self {
        Rng::new(stream_seed(root, path))
    }

    #[cfg(test)]
    fn from_state(s: [u64; 4]) -> Self {
        Rng { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform on [0, 1), 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval (0, 1): the half-step offset keeps both
    /// endpoints unreachable.
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound), unbiased via rejection.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        // reject the low region that would wrap unevenly: 2^64 mod bound values
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            slice.swap(i, j);
        }
    }
}
