//! Counter-based deterministic random streams.
//!
//! Sampling throughout the crate is partitioned into independent substreams
//! keyed by structural labels — e.g. one substream per (group, identity,
//! image) triple — so that parallel evaluation order can never change the
//! values drawn. A [`Stream`] is a SplitMix64 generator; substreams are
//! derived by mixing a label into the parent state rather than by drawing
//! from it, which keeps sibling substreams independent of how much the
//! parent has been consumed.
//!
//! Not cryptographic; statistical quality is adequate for Monte-Carlo use.

/// SplitMix64 finalizer: a bijective avalanche mix on 64 bits.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// FNV-1a over a byte string, used to turn stage names into labels.
#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A deterministic random stream with cheap labeled substream derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    state: u64,
}

impl Stream {
    /// Root stream for a master seed.
    pub fn root(seed: u64) -> Self {
        Stream { state: mix(seed ^ GAMMA) }
    }

    /// Derives an independent substream for an integer label.
    ///
    /// Derivation depends only on the current state and the label, never on
    /// how many values this stream has produced, so `s.substream(0)` and
    /// `s.substream(1)` are stable regardless of interleaving.
    pub fn substream(&self, label: u64) -> Self {
        Stream { state: mix(self.state ^ mix(label.wrapping_add(GAMMA))) }
    }

    /// Derives an independent substream for a named stage.
    pub fn substream_named(&self, name: &str) -> Self {
        self.substream(fnv1a(name.as_bytes()))
    }

    /// Collapses the stream to a 64-bit seed (for APIs that take a seed).
    pub fn to_seed(&self) -> u64 {
        mix(self.state)
    }

    /// Next raw 64-bit value.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform double in the half-open interval [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in the open-closed interval (0, 1]; safe for `ln`.
    fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// One standard normal draw via the Box-Muller transform.
    ///
    /// Draws two uniforms and discards the second output so that the number
    /// of raw values consumed per normal is fixed (two), keeping substream
    /// layouts independent of call patterns.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Vector of `n` standard normal draws.
    pub fn standard_normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    /// Unbiased uniform integer in [0, n) via rejection on the top bits.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Draws `k` distinct indices from [0, n), in draw order, via a partial
    /// Fisher-Yates shuffle. Requires `k <= n`.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from a pool of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// Uniform point on the unit sphere in R^d.
    pub fn unit_vector(&mut self, d: usize) -> Vec<f64> {
        loop {
            let v = self.standard_normal_vec(d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}
