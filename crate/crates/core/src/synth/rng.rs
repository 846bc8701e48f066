//! Small, fully specified PRNG so synthetic streams can be reproduced
//! bit-for-bit in any language.
//!
//! * Seeding: the state is `splitmix64(seed)`, replaced by
//!   `0x9E3779B97F4A7C15` if that yields zero.
//! * Step (xorshift64*): `x ^= x >> 12; x ^= x << 25; x ^= x >> 27;`
//!   output `x * 0x2545F4914F6CDD1D` (wrapping).
//! * `next_f64`: `(next_u64 >> 11) * 2^-53`, in [0, 1).
//! * `below(n)`: high 64 bits of `next_u64 * n` (128-bit product).
//! * `noise`: one draw split into four 16-bit lanes `l_k`;
//!   `sqrt(3) * (Σ (l_k + 0.5) / 65536 - 2)`, an Irwin-Hall approximation of
//!   a unit normal with exact zero mean and unit variance up to lane
//!   quantization.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let state = splitmix64(seed);
        Self { state: if state == 0 { GOLDEN } else { state } }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform integer in `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below((hi - lo + 1) as u64) as usize
    }

    #[inline]
    pub fn noise(&mut self) -> f64 {
        const SQRT3: f64 = 1.732_050_807_568_877_2;
        let x = self.next_u64();
        let lanes = (x & 0xFFFF) + ((x >> 16) & 0xFFFF) + ((x >> 32) & 0xFFFF) + (x >> 48);
        SQRT3 * ((lanes as f64 + 2.0) / 65536.0 - 2.0)
    }
}
