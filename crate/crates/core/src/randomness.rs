//! Shared, lazily materialized randomness.
//!
//! Every random quantity used by the samplers is a pure function of a
//! 128-bit master seed and a structured label. The label is a path of
//! `(tag, index)` components followed by a final `(tag, index)` draw label,
//! serialized into a keyed SipHash-2-4 (128-bit output). Drawing a value the
//! first time it is needed and drawing everything up front therefore give
//! bit-identical results, which is what lets two sample calls on different
//! inputs observe the same initialization randomness.
//!
//! Label schema used across the crate:
//!
//! | label                | meaning                                   |
//! |----------------------|-------------------------------------------|
//! | `("theta", code)`    | threshold of tree node with code `code`   |
//! | `("theta_root", 0)`  | root rounding threshold                   |
//! | `("clock", i)`       | exponential clock of coordinate `i`       |
//! | `("Rb", b)`          | hash target of bucket `b`                 |
//! | `("Ci", i)`          | hash target of coordinate `i`             |
//! | `("bucket_of", i)`   | bucket of coordinate `i`                  |
//! | `("sigma", 0)`       | small/large threshold offset              |
//! | `("tau", 0)`         | heavy-bucket threshold offset             |
//!
//! Path components `("level", l)` and `("role", id)` separate recursion
//! levels and the sampler instances inside one level.

use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use siphasher::sip128::{Hasher128, SipHasher24};

use crate::error::{Error, Result};

const PATH_MARKER: u8 = 0x01;
const LABEL_MARKER: u8 = 0x02;

/// Tag attached to the role path component of each sampler instance.
pub const ROLE: &str = "role";
/// Role id of the simplex (k = 1) sampler inside a composed level.
pub const ROLE_SIMPLEX: u64 = 1;
/// Role id of the tree sampler over the hashed image inside a composed level.
pub const ROLE_TREE: u64 = 3;

/// A 128-bit opaque master seed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MasterSeed(pub u128);

impl MasterSeed {
    pub const ZERO: MasterSeed = MasterSeed(0);

    /// Parses exactly 32 hexadecimal characters.
    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 32 {
            return Err(Error::InvalidArgument(format!(
                "seed must be 32 hex characters, got {}",
                s.len()
            )));
        }
        u128::from_str_radix(s, 16)
            .map(MasterSeed)
            .map_err(|e| Error::InvalidArgument(format!("bad seed {s:?}: {e}")))
    }

    pub fn to_hex(self) -> String {
        format!("{:032x}", self.0)
    }

    fn keys(self) -> (u64, u64) {
        (self.0 as u64, (self.0 >> 64) as u64)
    }
}

impl fmt::Display for MasterSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for MasterSeed {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MasterSeed::from_hex(s)
    }
}

/// A master seed together with a hierarchical label path.
///
/// The SipHash state after absorbing the path is kept so that per-draw work
/// is only the final label. Cloning is cheap apart from the path vector.
#[derive(Clone)]
pub struct SeedContext {
    seed: MasterSeed,
    path: Vec<(String, u64)>,
    state: SipHasher24,
}

impl fmt::Debug for SeedContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeedContext")
            .field("seed", &self.seed)
            .field("path", &self.path)
            .finish()
    }
}

impl PartialEq for SeedContext {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed && self.path == other.path
    }
}

impl Eq for SeedContext {}

fn write_tag(h: &mut SipHasher24, tag: &str) {
    let bytes = tag.as_bytes();
    debug_assert!(bytes.len() < 256);
    h.write(&[bytes.len() as u8]);
    h.write(bytes);
}

impl SeedContext {
    pub fn new(seed: MasterSeed) -> Self {
        let (k0, k1) = seed.keys();
        SeedContext {
            seed,
            path: Vec::new(),
            state: SipHasher24::new_with_keys(k0, k1),
        }
    }

    pub fn seed(&self) -> MasterSeed {
        self.seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Extends the path by one `(tag, index)` component.
    pub fn child(&self, tag: &str, index: u64) -> SeedContext {
        let mut state = self.state;
        state.write(&[PATH_MARKER]);
        write_tag(&mut state, tag);
        state.write(&index.to_le_bytes());
        let mut path = self.path.clone();
        path.push((tag.to_owned(), index));
        SeedContext {
            seed: self.seed,
            path,
            state,
        }
    }

    fn raw(&self, tag: &str, index: u128, attempt: u32) -> u128 {
        let mut h = self.state;
        h.write(&[LABEL_MARKER]);
        write_tag(&mut h, tag);
        h.write(&index.to_le_bytes());
        h.write(&attempt.to_le_bytes());
        h.finish128().as_u128()
    }

    /// 128 pseudo-random bits for a label.
    pub fn bits128(&self, tag: &str, index: u128) -> u128 {
        self.raw(tag, index, 0)
    }

    pub fn bits64(&self, tag: &str, index: u128) -> u64 {
        (self.raw(tag, index, 0) >> 64) as u64
    }

    /// Uniform value in `[0, 1)` with 53-bit resolution.
    pub fn uniform01(&self, tag: &str, index: u128) -> f64 {
        (self.bits64(tag, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Exp(1) draw by inversion, `-ln(1 - u)`.
    pub fn exp1(&self, tag: &str, index: u128) -> f64 {
        exp_from_uniform(self.uniform01(tag, index))
    }

    /// Uniform integer in `[1, m]`.
    pub fn uniform_int(&self, tag: &str, index: u128, m: u64) -> Result<u64> {
        self.uniform_int_wide(tag, index, m as u128).map(|v| v as u64)
    }

    /// Uniform integer in `[1, m]` for ranges up to `2^128 - 1`.
    ///
    /// Lemire's multiply-shift with rejection on 128-bit words; exactly
    /// unbiased given uniform input bits.
    pub fn uniform_int_wide(&self, tag: &str, index: u128, m: u128) -> Result<u128> {
        if m == 0 {
            return Err(Error::InvalidArgument("uniform_int range must be >= 1".into()));
        }
        let mut attempt = 0u32;
        let mut threshold: Option<u128> = None;
        loop {
            let r = self.raw(tag, index, attempt);
            let (hi, lo) = mul_wide(r, m);
            if lo >= m {
                return Ok(hi + 1);
            }
            let t = *threshold.get_or_insert_with(|| m.wrapping_neg() % m);
            if lo >= t {
                return Ok(hi + 1);
            }
            attempt += 1;
        }
    }

    /// Derives an independent master seed, e.g. one per experiment trial.
    pub fn derive_seed(&self, tag: &str, index: u128) -> MasterSeed {
        MasterSeed(self.bits128(tag, index))
    }
}

pub(crate) fn exp_from_uniform(u: f64) -> f64 {
    -(-u).ln_1p()
}

/// Full 256-bit product of two 128-bit words as `(high, low)`.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (a_hi, a_lo) = (a >> 64, a & MASK);
    let (b_hi, b_lo) = (b >> 64, b & MASK);
    let ll = a_lo * b_lo;
    let lh = a_lo * b_hi;
    let hl = a_hi * b_lo;
    let hh = a_hi * b_hi;
    let mid = (ll >> 64) + (lh & MASK) + (hl & MASK);
    let lo = (ll & MASK) | (mid << 64);
    let hi = hh + (lh >> 64) + (hl >> 64) + (mid >> 64);
    (hi, lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> SeedContext {
        SeedContext::new(MasterSeed(0x0123_4567_89ab_cdef_0011_2233_4455_6677))
    }

    #[test]
    fn deterministic_draws() {
        let a = ctx();
        let b = ctx();
        assert_eq!(a.uniform01("x", 7), b.uniform01("x", 7));
        assert_eq!(a.bits128("x", 7), b.bits128("x", 7));
        assert_eq!(a.uniform_int("x", 7, 6).unwrap(), b.uniform_int("x", 7, 6).unwrap());
        let c = a.child("level", 2);
        let d = b.child("level", 2);
        assert_eq!(c, d);
        assert_eq!(c.exp1("clock", 3), d.exp1("clock", 3));
        assert_ne!(a.bits128("clock", 3), c.bits128("clock", 3));
    }

    #[test]
    fn path_and_label_are_not_confusable() {
        // ("ab", 1) as a path must not collide with tag boundaries shifted.
        let a = ctx().child("ab", 1).bits128("c", 2);
        let b = ctx().child("a", 1).bits128("bc", 2);
        assert_ne!(a, b);
        let c = ctx().bits128("ab", 1);
        let d = ctx().child("ab", 1).bits128("ab", 1);
        assert_ne!(c, d);
    }

    #[test]
    fn seed_hex_roundtrip() {
        let s = MasterSeed(0xdead_beef_u128 << 70 | 42);
        assert_eq!(MasterSeed::from_hex(&s.to_hex()).unwrap(), s);
        assert_eq!(MasterSeed::from_hex(&"0".repeat(32)).unwrap(), MasterSeed::ZERO);
        assert!(MasterSeed::from_hex("abc").is_err());
        assert!(MasterSeed::from_hex(&"g".repeat(32)).is_err());
    }

    #[test]
    fn exp_at_zero_is_zero() {
        assert_eq!(exp_from_uniform(0.0), 0.0);
    }

    #[test]
    fn uniform01_mean() {
        let c = ctx();
        let n = 1_000_000u128;
        let mean = (0..n).map(|i| c.uniform01("u", i)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() <= 0.003, "mean {mean}");
        for i in 0..1000 {
            let u = c.uniform01("u", i);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn distinct_tags_do_not_collide() {
        let c = ctx();
        let collisions = (0..10_000u128)
            .filter(|&i| c.uniform01("alpha", i) == c.uniform01("beta", i))
            .count();
        assert_eq!(collisions, 0);
    }

    #[test]
    fn bit_frequencies_are_balanced() {
        let c = ctx();
        let n = 20_000u128;
        let mut counts = [0u32; 128];
        for i in 0..n {
            let r = c.bits128("bits", i);
            for (b, slot) in counts.iter_mut().enumerate() {
                *slot += ((r >> b) & 1) as u32;
            }
        }
        // 5 sigma per bit: sqrt(n/4) ~ 70.7
        for (b, &k) in counts.iter().enumerate() {
            let dev = (k as f64 - n as f64 / 2.0).abs();
            assert!(dev < 5.0 * 70.8, "bit {b}: {k}");
        }
    }

    #[test]
    fn exp1_moments() {
        let c = ctx();
        let n = 1_000_000u128;
        let mut sum = 0.0;
        let mut above = 0u32;
        for i in 0..n {
            let e = c.exp1("clock", i);
            assert!(e >= 0.0);
            sum += e;
            above += (e > 1.0) as u32;
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() <= 0.01, "mean {mean}");
        let surv = above as f64 / n as f64;
        assert!((surv - (-1.0f64).exp()).abs() <= 0.005, "survival {surv}");
    }

    #[test]
    fn uniform_int_singleton_and_zero() {
        let c = ctx();
        for i in 0..100 {
            assert_eq!(c.uniform_int("r", i, 1).unwrap(), 1);
        }
        assert!(c.uniform_int("r", 0, 0).is_err());
        assert!(c.uniform_int_wide("r", 0, 0).is_err());
    }

    #[test]
    fn uniform_int_die_frequencies() {
        let c = ctx();
        let mut counts = [0u32; 6];
        for i in 0..600_000u128 {
            let v = c.uniform_int("die", i, 6).unwrap();
            assert!((1..=6).contains(&v));
            counts[(v - 1) as usize] += 1;
        }
        for &k in &counts {
            assert!((k as i64 - 100_000).abs() <= 1200, "{counts:?}");
        }
    }

    #[test]
    fn uniform_int_wide_stays_in_range() {
        let c = ctx();
        let big = (1u128 << 120) + 12345;
        for i in 0..2000 {
            let v = c.uniform_int_wide("h", i, big).unwrap();
            assert!(v >= 1 && v <= big);
        }
        let full = u128::MAX;
        for i in 0..100 {
            assert!(c.uniform_int_wide("h", i, full).unwrap() >= 1);
        }
        // top half vs bottom half balance for a non power of two range
        let m = 3u128 << 100;
        let upper = (0..20_000u128)
            .filter(|&i| c.uniform_int_wide("h2", i, m).unwrap() > m / 2)
            .count();
        assert!((upper as i64 - 10_000).abs() < 5 * 71);
    }

    #[test]
    fn mul_wide_matches_small_products() {
        assert_eq!(mul_wide(3, 5), (0, 15));
        assert_eq!(mul_wide(u128::MAX, 2), (1, u128::MAX - 1));
        let (hi, lo) = mul_wide(1u128 << 127, 1u128 << 3);
        assert_eq!((hi, lo), (4, 0));
        assert_eq!(mul_wide(u128::MAX, u128::MAX), (u128::MAX - 1, 1));
    }
}
