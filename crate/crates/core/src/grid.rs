use crate::error::{Error, Result};

/// Upper bound on collocation points per physical array (per component).
pub const MAX_COLLOCATION_POINTS: usize = 1 << 26;

/// Periodic square lattice of Fourier modes on the torus.
///
/// Modes are stored in FFT order: index `i` along an axis carries the
/// wavenumber `i` for `i <= n/2` and `i - n` otherwise, so the retained lattice
/// is `{-n/2+1, ..., n/2}^2`. The Laplacian acts on mode `k` as multiplication
/// by `-|k|^2` and `d/dx_j` as multiplication by `i k_j`; physical space is
/// `[0, 2*pi)^2` with normalised measure.
///
/// Modes with a component equal to `n/2` have no conjugate partner on the
/// lattice and are kept at zero by every operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    n: usize,
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "n must be even and >= 4, got {n}"
            )));
        }
        if n * n > MAX_COLLOCATION_POINTS {
            return Err(Error::Resource(format!("lattice {n}x{n} too large")));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest retained wavenumber magnitude per axis (Nyquist excluded).
    pub fn kmax(&self) -> i64 {
        self.n as i64 / 2 - 1
    }

    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    #[inline]
    pub fn k(&self, idx: usize) -> (i64, i64) {
        (self.wavenumber(idx / self.n), self.wavenumber(idx % self.n))
    }

    #[inline]
    pub fn k_sq(&self, idx: usize) -> f64 {
        let (a, b) = self.k(idx);
        (a * a + b * b) as f64
    }

    /// Symbol of the Laplacian on mode `idx`.
    #[inline]
    pub fn laplacian_symbol(&self, idx: usize) -> f64 {
        -self.k_sq(idx)
    }

    pub fn index_of(&self, k1: i64, k2: i64) -> Option<usize> {
        let half = self.n as i64 / 2;
        if k1 <= -half || k1 > half || k2 <= -half || k2 > half {
            return None;
        }
        let wrap = |k: i64| k.rem_euclid(self.n as i64) as usize;
        Some(wrap(k1) * self.n + wrap(k2))
    }

    #[inline]
    pub fn is_nyquist(&self, idx: usize) -> bool {
        let half = self.n / 2;
        idx / self.n == half || idx % self.n == half
    }

    /// Index of `-k` (only meaningful off the Nyquist lines).
    #[inline]
    pub fn neg_index(&self, idx: usize) -> usize {
        let (i, j) = (idx / self.n, idx % self.n);
        ((self.n - i) % self.n) * self.n + (self.n - j) % self.n
    }

    /// Representatives of the `k ~ -k` classes: `k1 > 0`, or `k1 = 0, k2 > 0`.
    #[inline]
    pub fn in_upper_half(k: (i64, i64)) -> bool {
        k.0 > 0 || (k.0 == 0 && k.1 > 0)
    }

    /// Upper-half, non-Nyquist modes of the lattice.
    pub fn half_modes(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.is_nyquist(i) && Self::in_upper_half(self.k(i)))
            .collect()
    }

    /// Number of dyadic blocks needed: the largest `j` with a lattice point in
    /// the support of block `j`.
    pub fn max_radius(&self) -> f64 {
        let m = self.kmax() as f64;
        (2.0 * m * m).sqrt()
    }
}

/// Grid-independent label of a wavenumber, so that noise drawn for mode `k`
/// is identical whatever lattice carries it.
#[inline]
pub fn mode_label(k: (i64, i64)) -> u32 {
    let zig = |v: i64| -> u32 { ((v << 1) ^ (v >> 63)) as u32 };
    (zig(k.0) << 16) | (zig(k.1) & 0xFFFF)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(TorusGrid::new(3).is_err());
        assert!(TorusGrid::new(2).is_err());
        assert!(TorusGrid::new(7).is_err());
        assert!(TorusGrid::new(8).is_ok());
    }

    #[test]
    fn index_roundtrip() {
        let g = TorusGrid::new(8).unwrap();
        for idx in 0..g.len() {
            let (a, b) = g.k(idx);
            assert_eq!(g.index_of(a, b), Some(idx));
            if !g.is_nyquist(idx) {
                assert_eq!(g.k(g.neg_index(idx)), (-a, -b));
            }
        }
        assert_eq!(g.index_of(-4, 0), None);
        assert_eq!(g.k(g.index_of(4, 0).unwrap()), (4, 0));
    }

    #[test]
    fn half_modes_partition_nonzero_lattice() {
        let g = TorusGrid::new(10).unwrap();
        let half = g.half_modes();
        // (n-1)^2 - 1 non-Nyquist nonzero modes, half of them
        assert_eq!(half.len(), (9 * 9 - 1) / 2);
    }

    #[test]
    fn mode_labels_unique() {
        let mut seen = std::collections::HashSet::new();
        for a in -300..=300 {
            for b in -300..=300 {
                assert!(seen.insert(mode_label((a, b))));
            }
        }
    }
}
