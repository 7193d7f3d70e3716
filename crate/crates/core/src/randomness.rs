//! Keyed Brownian increments.
//!
//! Every Brownian motion of the scheme is named by a [`MultiIndex`]. The pair
//! `(seed, index)` is hashed to 128 bits which key a Philox4x32-10 counter
//! generator; the Gaussian at stream position `p = rank · d + coordinate` is
//! the inverse normal CDF of the 64-bit word at counter `p`. Any increment can
//! therefore be produced in O(1) without touching the rest of the stream,
//! and results never depend on thread count or evaluation order.
//!
//! The increment over `(t_{j−1}, t_j]` uses the Gaussians of rank `j − 1`, so
//! querying a prefix of a time grid reproduces the same path.

use std::fmt;
use std::hash::{Hash, Hasher};

use siphasher::sip128::{Hasher128, SipHasher13};

use crate::error::{domain, Result};

/// Label sequence naming one Brownian motion. The empty sequence is the root.
#[derive(Clone)]
pub struct MultiIndex {
    labels: Vec<i64>,
    // hash state after absorbing `labels`, so extensions cost O(extension)
    state: SipHasher13,
}

impl MultiIndex {
    pub fn root() -> Self {
        Self {
            labels: Vec::new(),
            state: SipHasher13::new_with_keys(0x6d6c_705f_6272_6f77, 0x6e69_616e_5f6b_6579),
        }
    }

    pub fn from_labels(labels: &[i64]) -> Self {
        Self::root().extend(labels)
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    /// The index `(self, extension…)`.
    pub fn extend(&self, extension: &[i64]) -> Self {
        let mut state = self.state;
        let mut labels = Vec::with_capacity(self.labels.len() + extension.len());
        labels.extend_from_slice(&self.labels);
        labels.extend_from_slice(extension);
        for &l in extension {
            state.write_i64(l);
        }
        Self { labels, state }
    }

    /// 128-bit digest of `(seed, labels)`. Labels are absorbed as fixed-width
    /// words and the length is absorbed last, which makes the encoding
    /// injective.
    pub fn digest(&self, seed: u64) -> u128 {
        let mut state = self.state;
        state.write_u64(self.labels.len() as u64);
        state.write_u64(seed);
        state.finish128().as_u128()
    }
}

impl Default for MultiIndex {
    fn default() -> Self {
        Self::root()
    }
}

impl PartialEq for MultiIndex {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels
    }
}

impl Eq for MultiIndex {}

impl Hash for MultiIndex {
    fn hash<H: Hasher>(&self, h: &mut H) {
        self.labels.hash(h);
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("MultiIndex").field(&self.labels).finish()
    }
}

/// Concatenation `(parent, extension)`.
///
/// Distinct `(parent, extension)` pairs give distinct indices whenever the
/// extensions compared have the same length, which is how the estimator uses
/// it: every level appends either two or three labels in fixed positions.
pub fn derive_key(parent: &MultiIndex, extension: &[i64]) -> MultiIndex {
    parent.extend(extension)
}

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}

/// Inverse of the standard normal CDF (Wichura, AS 241, PPND16), accurate to
/// about 1e-16 relative on `(0, 1)`.
///
/// Coefficients are quoted with the published digits.
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        1.331_416_678_917_843_774_5e2,
        1.971_590_950_306_551_442_7e3,
        1.373_169_376_550_946_112_5e4,
        4.592_195_393_154_987_145_7e4,
        6.726_577_092_700_870_085_3e4,
        3.343_057_558_358_812_810_5e4,
        2.509_080_928_730_122_672_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_125_2e1,
        6.871_870_074_920_579_083e2,
        5.394_196_021_424_751_107_7e3,
        2.121_379_430_158_659_586_7e4,
        3.930_789_580_009_271_061e4,
        2.872_908_573_572_194_267_4e4,
        5.226_495_278_852_854_561e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        2.417_807_251_774_506_117_7e-1,
        2.272_384_498_926_918_458_33e-2,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        6.897_673_349_851_000_045_5e-1,
        1.481_039_764_274_800_745_9e-1,
        1.519_866_656_361_645_719_66e-2,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        2.965_605_718_285_048_912_3e-1,
        2.653_218_952_657_612_309_3e-2,
        1.242_660_947_388_078_438_6e-3,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_376_9e-1,
        1.369_298_809_227_358_053_1e-1,
        1.487_536_129_085_061_485_25e-2,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normals of one named Brownian motion, addressable by position.
#[derive(Debug, Clone, Copy)]
pub struct GaussianStream {
    key: [u32; 2],
    tag: [u32; 2],
}

impl GaussianStream {
    pub fn new(seed: u64, index: &MultiIndex) -> Self {
        let h = index.digest(seed);
        Self {
            key: [h as u32, (h >> 32) as u32],
            tag: [(h >> 64) as u32, (h >> 96) as u32],
        }
    }

    #[inline]
    fn block(&self, block: u64) -> [u32; 4] {
        philox4x32_10(
            [block as u32, (block >> 32) as u32, self.tag[0], self.tag[1]],
            self.key,
        )
    }

    #[inline]
    fn to_gaussian(hi: u32, lo: u32) -> f64 {
        let bits = ((hi as u64) << 32) | lo as u64;
        // midpoint of one of 2^53 cells in (0, 1)
        let u = ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
        inverse_normal_cdf(u)
    }

    /// The standard normal at `position`.
    pub fn gaussian(&self, position: u64) -> f64 {
        let b = self.block(position / 2);
        if position.is_multiple_of(2) {
            Self::to_gaussian(b[1], b[0])
        } else {
            Self::to_gaussian(b[3], b[2])
        }
    }

    /// Fills `out` with the normals at positions `start, start + 1, …`.
    pub fn fill(&self, start: u64, out: &mut [f64]) {
        let mut pos = start;
        let mut i = 0;
        while i < out.len() {
            let b = self.block(pos / 2);
            if pos.is_multiple_of(2) {
                out[i] = Self::to_gaussian(b[1], b[0]);
                i += 1;
                pos += 1;
                if i == out.len() {
                    break;
                }
            }
            out[i] = Self::to_gaussian(b[3], b[2]);
            i += 1;
            pos += 1;
        }
    }

    /// Writes the increments `W_{t_j} − W_{t_{j−1}}` (with `t_0 = s`) of the
    /// `dim`-dimensional motion into `out`, row-major by time. Inputs are not
    /// validated.
    pub fn increments_into(&self, dim: usize, s: f64, times: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), dim * times.len());
        self.fill(0, out);
        let mut prev = s;
        for (row, &t) in out.chunks_exact_mut(dim).zip(times) {
            let scale = (t - prev).sqrt();
            row.iter_mut().for_each(|z| *z *= scale);
            prev = t;
        }
    }
}

/// Increments of one Brownian path on a sorted time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathIncrements {
    dim: usize,
    start: f64,
    times: Vec<f64>,
    increments: Vec<f64>,
}

impl PathIncrements {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `W_{t_j} − W_{t_{j−1}}` for the 0-based rank `j`.
    pub fn increment(&self, j: usize) -> &[f64] {
        &self.increments[j * self.dim..(j + 1) * self.dim]
    }

    /// `W_{t_j} − W_s`.
    pub fn displacement(&self, j: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for r in 0..=j {
            acc.iter_mut()
                .zip(self.increment(r))
                .for_each(|(a, b)| *a += b);
        }
        acc
    }
}

/// Samples the Brownian motion named `(seed, key)` at `times`, relative to
/// its value at `s`.
pub fn sample_path(
    seed: u64,
    key: &MultiIndex,
    dim: usize,
    s: f64,
    times: &[f64],
) -> Result<PathIncrements> {
    if dim == 0 {
        return Err(domain("dimension must be at least 1"));
    }
    if !s.is_finite() {
        return Err(domain("start time must be finite"));
    }
    let mut prev = s;
    for &t in times {
        if !t.is_finite() || t <= prev {
            return Err(domain(format!(
                "times must be finite, strictly increasing and after s = {s}; got {times:?}"
            )));
        }
        prev = t;
    }
    let mut increments = vec![0.0; dim * times.len()];
    GaussianStream::new(seed, key).increments_into(dim, s, times, &mut increments);
    Ok(PathIncrements {
        dim,
        start: s,
        times: times.to_vec(),
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32_10([0; 4], [0; 2]),
            [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]
        );
        assert_eq!(
            philox4x32_10([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xa409_3822, 0x299f_31d0]
            ),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn derive_key_examples() {
        let root = MultiIndex::root();
        let a = derive_key(&root, &[0, -3]);
        assert_eq!(a.labels(), &[0, -3]);
        let b = derive_key(&a, &[2, 5, 1]);
        assert_eq!(b.labels(), &[0, -3, 2, 5, 1]);
        assert_eq!(b, MultiIndex::from_labels(&[0, -3, 2, 5, 1]));
        assert_eq!(
            b.digest(9),
            MultiIndex::from_labels(&[0, -3, 2, 5, 1]).digest(9)
        );
    }

    #[test]
    fn digest_separates_seed_and_length() {
        let a = MultiIndex::from_labels(&[0]);
        let b = MultiIndex::from_labels(&[0, 0]);
        assert_ne!(a.digest(1), b.digest(1));
        assert_ne!(MultiIndex::root().digest(1), a.digest(1));
        assert_ne!(a.digest(1), a.digest(2));
    }

    #[test]
    fn fill_matches_pointwise_access() {
        let s = GaussianStream::new(3, &MultiIndex::from_labels(&[1, 2]));
        for start in 0..4 {
            let mut buf = vec![0.0; 7];
            s.fill(start, &mut buf);
            for (i, v) in buf.iter().enumerate() {
                assert_eq!(*v, s.gaussian(start + i as u64));
            }
        }
    }

    #[test]
    fn sample_path_is_deterministic_and_prefix_consistent() {
        let key = MultiIndex::from_labels(&[4, -1, 7]);
        let times = [0.3, 0.5, 0.9, 1.0];
        let a = sample_path(11, &key, 3, 0.1, &times).unwrap();
        let b = sample_path(11, &key, 3, 0.1, &times).unwrap();
        assert_eq!(a, b);
        let prefix = sample_path(11, &key, 3, 0.1, &times[..2]).unwrap();
        for j in 0..2 {
            assert_eq!(prefix.increment(j), a.increment(j));
            assert_eq!(prefix.displacement(j), a.displacement(j));
        }
    }

    #[test]
    fn sample_path_rejects_bad_grids() {
        let key = MultiIndex::root();
        assert!(sample_path(0, &key, 1, 0.5, &[0.5]).is_err());
        assert!(sample_path(0, &key, 1, 0.0, &[0.5, 0.4]).is_err());
        assert!(sample_path(0, &key, 1, 0.0, &[f64::NAN]).is_err());
        assert!(sample_path(0, &key, 0, 0.0, &[1.0]).is_err());
        assert!(sample_path(0, &key, 2, 0.0, &[])
            .unwrap()
            .times()
            .is_empty());
    }

    #[test]
    fn inverse_cdf_symmetry_and_center() {
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        for p in [1e-8, 0.01, 0.2, 0.4] {
            assert!(
                (inverse_normal_cdf(p) + inverse_normal_cdf(1.0 - p)).abs()
                    < 1e-9 * inverse_normal_cdf(p).abs().max(1.0)
            );
        }
        assert!((inverse_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
    }
}
