//! Counter-based, keyed random numbers.
//!
//! Every random draw in the crate is a pure function of a 64-bit key and a
//! counter, so results do not depend on evaluation order or thread count.
//! Keys are derived from a master seed by folding in identifiers with
//! [`derive_key`].

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the UTF-8 bytes, finalized with [`mix64`].
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(h)
}

/// Folds a sequence of words into one key.
pub fn derive_key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| mix64(acc ^ mix64(p.wrapping_add(GOLDEN))))
}

/// The `index`-th 64-bit output of the stream named by `key`.
#[inline]
pub fn counter_u64(key: u64, index: u64) -> u64 {
    mix64(mix64(key ^ index.wrapping_mul(GOLDEN)).wrapping_add(index))
}

/// Uniform in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn counter_uniform(key: u64, index: u64) -> f64 {
    (counter_u64(key, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential view over a keyed counter stream.
#[derive(Debug, Clone)]
pub struct KeyedRng {
    key: u64,
    counter: u64,
    spare_normal: Option<f64>,
}

impl KeyedRng {
    pub fn new(key: u64) -> Self {
        KeyedRng { key, counter: 0, spare_normal: None }
    }

    pub fn from_parts(parts: &[u64]) -> Self {
        Self::new(derive_key(parts))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = counter_u64(self.key, self.counter);
        self.counter += 1;
        v
    }

    pub fn uniform(&mut self) -> f64 {
        let v = counter_uniform(self.key, self.counter);
        self.counter += 1;
        v
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
