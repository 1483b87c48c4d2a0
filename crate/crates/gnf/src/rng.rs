//! Counter-based deterministic RNG (splitmix64). The state is a pure function
//! of (seed, draw index), so streams are reproducible across platforms and can
//! be split into independent child streams without coordination.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    ctr: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, ctr: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = mix(self.seed.wrapping_add(GOLDEN.wrapping_mul(self.ctr.wrapping_add(1))));
        self.ctr += 1;
        out
    }

    /// Independent child stream. Children drawn at different points of the
    /// parent stream have unrelated seeds.
    pub fn split(&mut self) -> Rng {
        Rng::new(mix(self.next_u64() ^ GOLDEN))
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller. Draws two uniforms per sample; no
    /// cached second value, so the stream position stays a simple counter.
    pub fn normal(&mut self) -> f64 {
        // (0, 1] so the log is finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / 9_007_199_254_740_992.0);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in [0, n). Fixed-point multiply keeps bias below 2^-64.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}
