//! Splittable counter-based pseudo-random generator.
//!
//! Every stochastic component in the crate draws from an explicitly seeded
//! [`Rng`]. Streams are derived by key, not by draw order, so changing how
//! many numbers one consumer pulls never perturbs another consumer:
//! each (sample, view, stage) combination gets its own independent stream
//! via [`Rng::derive`].

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 stream. Cheap to copy; deterministic across platforms.
#[derive(Clone, Copy, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: mix(seed.wrapping_add(GAMMA)) }
    }

    /// Derive an independent stream keyed by `path`. The derived stream is a
    /// pure function of (self, path); it does not advance `self`.
    pub fn derive(&self, path: &[u64]) -> Rng {
        let mut s = self.state;
        for &p in path {
            s = mix(s ^ mix(p.wrapping_add(GAMMA)));
        }
        Rng { state: s }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in 0..n. Panics if n == 0.
    pub fn range_usize(&mut self, n: usize) -> usize {
        assert!(n > 0, "range_usize on empty range");
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller (spare discarded for stream stability).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.range_usize(i + 1);
            xs.swap(i, j);
        }
    }
}
