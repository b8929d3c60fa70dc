//! Counter-based random streams.
//!
//! Every Gaussian draw is a pure function of `(seed, stream, mode, step)`, so
//! trajectories can run in any order or on any thread and still reproduce bit
//! for bit. The bijection underneath is Philox4x32-10.

use num_complex::Complex64;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

#[inline]
fn philox_round(c: [u32; 4], k: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
    let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
    [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0]
}

/// Philox4x32 with 10 rounds.
pub fn philox4x32(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(PHILOX_W0);
            k[1] = k[1].wrapping_add(PHILOX_W1);
        }
        c = philox_round(c, k);
    }
    c
}

#[inline]
fn unit_open(x: u64) -> f64 {
    // (0, 1]: never zero, safe under ln
    ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn box_muller(a: u64, b: u64) -> (f64, f64) {
    let r = (-2.0 * unit_open(a).ln()).sqrt();
    let theta = std::f64::consts::TAU * unit_open(b);
    (r * theta.cos(), r * theta.sin())
}

#[inline]
fn words_to_u64(w: [u32; 4]) -> (u64, u64) {
    (
        (w[0] as u64) | ((w[1] as u64) << 32),
        (w[2] as u64) | ((w[3] as u64) << 32),
    )
}

/// Identifies one independent random stream: a global seed and a trajectory id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u32,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u32) -> Self {
        Self { seed, stream }
    }

    fn key(&self) -> [u32; 2] {
        [self.seed as u32, (self.seed >> 32) as u32]
    }

    /// Raw 128 random bits for counter `(mode, step)`.
    pub fn bits(&self, mode: u32, step: u64) -> [u32; 4] {
        philox4x32(
            [mode, step as u32, (step >> 32) as u32, self.stream],
            self.key(),
        )
    }

    /// Two independent standard normals for counter `(mode, step)`.
    pub fn normal_pair(&self, mode: u32, step: u64) -> (f64, f64) {
        let (a, b) = words_to_u64(self.bits(mode, step));
        box_muller(a, b)
    }

    /// Circular complex Gaussian with `E|z|^2 = 1` and `E z^2 = 0`.
    pub fn complex_normal(&self, mode: u32, step: u64) -> Complex64 {
        let (x, y) = self.normal_pair(mode, step);
        Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2
    }

    /// A sequential generator living in its own domain of this stream.
    ///
    /// `domain` separates unrelated consumers (initial data, test fields, ...)
    /// from the noise counters, which use the mode index directly.
    pub fn sequential(&self, domain: u32) -> CounterRng {
        CounterRng {
            key: *self,
            domain,
            counter: 0,
            spare: None,
        }
    }
}

/// Sequential view over a counter-based stream.
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: StreamKey,
    domain: u32,
    counter: u64,
    spare: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u32, domain: u32) -> Self {
        StreamKey::new(seed, stream).sequential(domain)
    }

    fn next_block(&mut self) -> (u64, u64) {
        // domain sits above every mode index used by the noise
        let w = self.key.bits(0x8000_0000 | self.domain, self.counter);
        self.counter += 1;
        words_to_u64(w)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.next_block().0
    }

    /// Uniform on (0, 1].
    pub fn next_f64(&mut self) -> f64 {
        unit_open(self.next_u64())
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = self.next_block();
        let (x, y) = box_muller(a, b);
        self.spare = Some(y);
        x
    }

    pub fn next_complex_normal(&mut self) -> Complex64 {
        let x = self.next_normal();
        let y = self.next_normal();
        Complex64::new(x, y) * std::f64::consts::FRAC_1_SQRT_2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Known-answer vectors published with the Random123 reference library.
    #[test]
    fn philox_known_answers() {
        assert_eq!(
            philox4x32([0, 0, 0, 0], [0, 0]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn draws_are_pure_functions_of_counters() {
        let k = StreamKey::new(42, 3);
        assert_eq!(k.normal_pair(7, 11), k.normal_pair(7, 11));
        assert_ne!(k.normal_pair(7, 11), k.normal_pair(7, 12));
        assert_ne!(k.normal_pair(7, 11), StreamKey::new(42, 4).normal_pair(7, 11));
    }

    #[test]
    fn complex_normal_moments() {
        let k = StreamKey::new(9, 0);
        let n = 200_000;
        let (mut m2, mut mzz) = (0.0, Complex64::new(0.0, 0.0));
        for i in 0..n {
            let z = k.complex_normal(i, 0);
            m2 += z.norm_sqr();
            mzz += z * z;
        }
        let m2 = m2 / n as f64;
        let mzz = mzz / n as f64;
        assert!((m2 - 1.0).abs() < 0.01, "E|z|^2 = {m2}");
        assert!(mzz.norm() < 0.01, "E z^2 = {mzz}");
    }

    #[test]
    fn sequential_normals_are_standard() {
        let mut r = CounterRng::new(1, 0, 5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| r.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.015);
        assert!((var - 1.0).abs() < 0.02);
    }
}
