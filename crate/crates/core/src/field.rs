//! Fourier-space vector and tensor fields on the torus and the differential
//! operators acting on them.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{contract, Error, Result};
use crate::fft::{coeffs_to_samples, collocation_side, samples_to_coeffs};
use crate::grid::TorusGrid;
use crate::rng::CounterRng;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Relative tolerance used when checking the divergence-free property.
pub const DIV_FREE_TOL: f64 = 1e-10;

/// How products of fields are truncated back onto the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DealiasRule {
    /// Inputs and output restricted to `|k_i| <= n/3`.
    TwoThirds,
    /// Exact product, truncated to the lattice.
    None,
}

impl DealiasRule {
    fn cutoff(self, grid: TorusGrid) -> i64 {
        match self {
            DealiasRule::TwoThirds => grid.n() as i64 / 3,
            DealiasRule::None => grid.kmax(),
        }
    }
}

/// Unit direction `k_perp / |k|` with `k_perp = (k2, -k1)`.
#[inline]
pub fn perp_unit(k: (i64, i64)) -> [f64; 2] {
    let r = ((k.0 * k.0 + k.1 * k.1) as f64).sqrt();
    [k.1 as f64 / r, -k.0 as f64 / r]
}

/// Real samples of one or more scalar components on an `m x m` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalField {
    m: usize,
    comps: Vec<Vec<f64>>,
}

impl PhysicalField {
    pub fn zeros(m: usize, ncomp: usize) -> Self {
        Self {
            m,
            comps: vec![vec![0.0; m * m]; ncomp],
        }
    }

    pub fn from_components(m: usize, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.iter().any(|c| c.len() != m * m) {
            return Err(contract("component length does not match grid"));
        }
        Ok(Self { m, comps })
    }

    pub fn side(&self) -> usize {
        self.m
    }

    pub fn ncomp(&self) -> usize {
        self.comps.len()
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        &self.comps[c]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.comps[c]
    }

    /// Pointwise magnitude. Three-component fields are read as symmetric
    /// tensors `(T11, T12, T22)` and measured in Frobenius norm.
    #[inline]
    fn magnitude_sq(&self, i: usize) -> f64 {
        match self.comps.len() {
            3 => {
                let (a, b, c) = (self.comps[0][i], self.comps[1][i], self.comps[2][i]);
                a * a + 2.0 * b * b + c * c
            }
            _ => self.comps.iter().map(|c| c[i] * c[i]).sum(),
        }
    }

    /// `L^p` norm with respect to the normalised measure; `p = inf` gives the
    /// maximum over collocation points.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let len = self.m * self.m;
        if p.is_infinite() {
            return (0..len)
                .map(|i| self.magnitude_sq(i))
                .fold(0.0, f64::max)
                .sqrt();
        }
        let s: f64 = (0..len).map(|i| self.magnitude_sq(i).powf(p / 2.0)).sum();
        (s / len as f64).powf(1.0 / p)
    }

    /// Symmetrised outer product `a (x)_s b` of two vector samples.
    pub fn sym_outer(a: &PhysicalField, b: &PhysicalField) -> Result<PhysicalField> {
        let mut out = PhysicalField::zeros(a.m, 3);
        out.add_sym_outer(a, b, 1.0)?;
        Ok(out)
    }

    /// `self += s * (a (x)_s b)` for a tensor-valued `self`.
    pub fn add_sym_outer(&mut self, a: &PhysicalField, b: &PhysicalField, s: f64) -> Result<()> {
        if a.m != self.m || b.m != self.m || a.ncomp() != 2 || b.ncomp() != 2 || self.ncomp() != 3 {
            return Err(contract("sym_outer needs two vector samples on the same grid"));
        }
        let (a0, a1) = (&a.comps[0], &a.comps[1]);
        let (b0, b1) = (&b.comps[0], &b.comps[1]);
        let [t0, t1, t2] = &mut self.comps[..] else {
            unreachable!()
        };
        for i in 0..self.m * self.m {
            t0[i] += s * a0[i] * b0[i];
            t1[i] += s * 0.5 * (a0[i] * b1[i] + a1[i] * b0[i]);
            t2[i] += s * a1[i] * b1[i];
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &PhysicalField) {
        for (x, y) in self.comps.iter_mut().zip(&other.comps) {
            for (p, q) in x.iter_mut().zip(y) {
                *p += q;
            }
        }
    }
}

/// Real divergence-capable vector field on the torus stored by its Fourier
/// coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    grid: TorusGrid,
    c: [Vec<Complex64>; 2],
    mean_free: bool,
    div_free: bool,
}

impl SpectralField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            c: [vec![ZERO; grid.len()], vec![ZERO; grid.len()]],
            mean_free: true,
            div_free: true,
        }
    }

    /// Builds a field from raw coefficients in lattice (FFT) order. Nyquist
    /// modes are dropped; the flags are inferred from the data.
    pub fn from_coeffs(grid: TorusGrid, c0: Vec<Complex64>, c1: Vec<Complex64>) -> Result<Self> {
        if c0.len() != grid.len() || c1.len() != grid.len() {
            return Err(contract("coefficient arrays do not match grid"));
        }
        let mut f = Self {
            grid,
            c: [c0, c1],
            mean_free: false,
            div_free: false,
        };
        f.clear_nyquist();
        f.refresh_flags();
        Ok(f)
    }

    /// The real field `c e_k + conj(c e_k)` (coefficient `c k_perp/|k|` at `k`
    /// and its conjugate at `-k`).
    pub fn mode(grid: TorusGrid, k: (i64, i64), c: Complex64) -> Result<Self> {
        let idx = grid
            .index_of(k.0, k.1)
            .filter(|&i| !grid.is_nyquist(i))
            .ok_or_else(|| contract(format!("mode {k:?} not on lattice")))?;
        let mut f = Self::zeros(grid);
        if k == (0, 0) {
            return Ok(f);
        }
        let e = perp_unit(k);
        let neg = grid.neg_index(idx);
        for d in 0..2 {
            f.c[d][idx] += c * e[d];
            f.c[d][neg] += c.conj() * e[d];
        }
        Ok(f)
    }

    /// Random real, mean-free, divergence-free field with
    /// `E|coeff(k)|^2 = amplitude(|k|)^2`.
    pub fn random(grid: TorusGrid, rng: &mut CounterRng, amplitude: impl Fn(f64) -> f64) -> Self {
        let mut f = Self::zeros(grid);
        for idx in grid.half_modes() {
            let k = grid.k(idx);
            let a = amplitude(grid.k_sq(idx).sqrt());
            let z = rng.next_complex_normal() * a;
            if a == 0.0 {
                continue;
            }
            let e = perp_unit(k);
            let neg = grid.neg_index(idx);
            for d in 0..2 {
                f.c[d][idx] = z * e[d];
                f.c[d][neg] = z.conj() * e[d];
            }
        }
        f
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn comp(&self, d: usize) -> &[Complex64] {
        &self.c[d]
    }

    pub fn coeff(&self, idx: usize) -> [Complex64; 2] {
        [self.c[0][idx], self.c[1][idx]]
    }

    pub fn is_mean_free(&self) -> bool {
        self.mean_free
    }

    pub fn is_div_free(&self) -> bool {
        self.div_free
    }

    pub(crate) fn set_coeff(&mut self, idx: usize, v: [Complex64; 2]) {
        self.c[0][idx] = v[0];
        self.c[1][idx] = v[1];
    }

    fn clear_nyquist(&mut self) {
        for idx in 0..self.grid.len() {
            if self.grid.is_nyquist(idx) {
                self.c[0][idx] = ZERO;
                self.c[1][idx] = ZERO;
            }
        }
    }

    /// Recomputes the mean-free and divergence-free flags from the data.
    pub fn refresh_flags(&mut self) {
        let norm = self.l2_norm();
        let mean = (self.c[0][0].norm_sqr() + self.c[1][0].norm_sqr()).sqrt();
        self.mean_free = mean <= 1e-13 * norm;
        if self.mean_free {
            self.c[0][0] = ZERO;
            self.c[1][0] = ZERO;
        }
        let scale = self.l2_norm() * self.grid.max_radius().max(1.0);
        self.div_free = self.mean_free && self.divergence_residual() <= DIV_FREE_TOL * scale.max(f64::MIN_POSITIVE);
    }

    /// `max_k |k . coeff(k)|`.
    pub fn divergence_residual(&self) -> f64 {
        (0..self.grid.len())
            .map(|idx| {
                let (a, b) = self.grid.k(idx);
                (self.c[0][idx] * a as f64 + self.c[1][idx] * b as f64).norm()
            })
            .fold(0.0, f64::max)
    }

    /// `max_k |coeff(-k) - conj(coeff(k))|`.
    pub fn reality_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for idx in 0..self.grid.len() {
            if self.grid.is_nyquist(idx) {
                continue;
            }
            let neg = self.grid.neg_index(idx);
            for d in 0..2 {
                r = r.max((self.c[d][neg] - self.c[d][idx].conj()).norm());
            }
        }
        r
    }

    /// Replaces each coefficient pair by its Hermitian average, making the
    /// field exactly real.
    pub fn enforce_reality(&mut self) {
        for idx in 0..self.grid.len() {
            if self.grid.is_nyquist(idx) {
                continue;
            }
            let neg = self.grid.neg_index(idx);
            if neg < idx {
                continue;
            }
            for d in 0..2 {
                let z = 0.5 * (self.c[d][idx] + self.c[d][neg].conj());
                self.c[d][idx] = z;
                self.c[d][neg] = z.conj();
            }
        }
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.c
            .iter()
            .flat_map(|v| v.iter())
            .map(|z| z.norm_sqr())
            .sum()
    }

    /// `L^2` norm (normalised measure, so Plancherel holds without factors).
    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    /// `||grad f||_{L^2}^2 = sum |k|^2 |coeff(k)|^2`.
    pub fn grad_norm_sq(&self) -> f64 {
        (0..self.grid.len())
            .map(|idx| self.grid.k_sq(idx) * (self.c[0][idx].norm_sqr() + self.c[1][idx].norm_sqr()))
            .sum()
    }

    /// Enstrophy-type quantity `sum |k|^2 |coeff|^2` weighted once more:
    /// `||Delta f||^2`, used for the vorticity balance of 2D flows.
    pub fn laplace_norm_sq(&self) -> f64 {
        (0..self.grid.len())
            .map(|idx| {
                let q = self.grid.k_sq(idx);
                q * q * (self.c[0][idx].norm_sqr() + self.c[1][idx].norm_sqr())
            })
            .sum()
    }

    /// Real `L^2` inner product.
    pub fn inner(&self, other: &SpectralField) -> f64 {
        let mut s = 0.0;
        for d in 0..2 {
            for (a, b) in self.c[d].iter().zip(&other.c[d]) {
                s += (a.conj() * b).re;
            }
        }
        s
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.c
            .iter()
            .flat_map(|v| v.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.c
            .iter()
            .flat_map(|v| v.iter())
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    fn check_grid(&self, other: &SpectralField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.grid.n(),
                right: other.grid.n(),
            });
        }
        Ok(())
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &SpectralField) -> Result<SpectralField> {
        self.check_grid(other)?;
        let mut out = self.clone();
        out.add_scaled(s, other);
        out.mean_free = self.mean_free && other.mean_free;
        out.div_free = self.div_free && other.div_free;
        Ok(out)
    }

    pub(crate) fn add_scaled(&mut self, s: f64, other: &SpectralField) {
        for d in 0..2 {
            for (a, b) in self.c[d].iter_mut().zip(&other.c[d]) {
                *a += b * s;
            }
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, s: f64) -> SpectralField {
        let mut out = self.clone();
        for v in out.c.iter_mut() {
            for z in v.iter_mut() {
                *z *= s;
            }
        }
        out
    }

    /// Modewise multiplication by a real radial-or-not symbol `m(idx)`.
    pub fn multiplier(&self, m: impl Fn(usize) -> f64) -> SpectralField {
        let mut out = self.clone();
        for idx in 0..self.grid.len() {
            let w = m(idx);
            out.c[0][idx] *= w;
            out.c[1][idx] *= w;
        }
        out
    }

    /// Zeroes every mode with `|k|_inf > cut`.
    pub fn truncate_box(&self, cut: i64) -> SpectralField {
        let g = self.grid;
        self.multiplier(|idx| {
            let (a, b) = g.k(idx);
            if a.abs().max(b.abs()) > cut {
                0.0
            } else {
                1.0
            }
        })
    }

    /// Heat semigroup `e^{t Delta}`: modewise factor `e^{-t|k|^2}`.
    pub fn heat(&self, t: f64) -> Result<SpectralField> {
        if !(t >= 0.0) {
            return Err(contract(format!("heat flow needs t >= 0, got {t}")));
        }
        let g = self.grid;
        Ok(self.multiplier(|idx| (-t * g.k_sq(idx)).exp()))
    }

    /// Leray projection `(I - k k^T/|k|^2)` per mode; the mean is discarded.
    pub fn leray_project(&self) -> SpectralField {
        let g = self.grid;
        let mut out = SpectralField::zeros(g);
        for idx in 1..g.len() {
            let (a, b) = g.k(idx);
            let (a, b) = (a as f64, b as f64);
            let q = a * a + b * b;
            let (u, v) = (self.c[0][idx], self.c[1][idx]);
            let dot = (u * a + v * b) / q;
            out.c[0][idx] = u - dot * a;
            out.c[1][idx] = v - dot * b;
        }
        out
    }

    /// Samples on an `(oversample n)^2` grid, one component per slot.
    pub fn to_physical(&self, oversample: usize) -> Result<PhysicalField> {
        let m = collocation_side(self.grid, oversample)?;
        Ok(self.to_physical_side(m))
    }

    pub(crate) fn to_physical_side(&self, m: usize) -> PhysicalField {
        let (a, b) = coeffs_to_samples(self.grid, &self.c[0], Some(&self.c[1]), m);
        PhysicalField { m, comps: vec![a, b] }
    }

    /// Coefficients of sampled data, truncated to `grid`.
    pub fn from_physical(grid: TorusGrid, p: &PhysicalField) -> Result<SpectralField> {
        if p.ncomp() != 2 {
            return Err(contract("vector samples need two components"));
        }
        if p.m < grid.n() {
            return Err(contract("collocation grid coarser than lattice"));
        }
        let (a, b) = samples_to_coeffs(grid, p.m, &p.comps[0], Some(&p.comps[1]));
        let mut f = SpectralField {
            grid,
            c: [a, b],
            mean_free: false,
            div_free: false,
        };
        f.refresh_flags();
        Ok(f)
    }

    /// Writes the binary snapshot format.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.grid.n();
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(n as u32).to_le_bytes())?;
        let flags = (self.mean_free as u8) | ((self.div_free as u8) << 1);
        w.write_all(&[flags])?;
        let mut buf = Vec::with_capacity(16 * n * n);
        for d in 0..2 {
            buf.clear();
            for idx in snapshot_order(self.grid) {
                let z = self.c[d][idx];
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads the binary snapshot format.
    pub fn read_snapshot<R: Read>(mut r: R) -> Result<SpectralField> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad snapshot magic".into()));
        }
        let mut b2 = [0u8; 2];
        read_exact(&mut r, &mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let mut b4 = [0u8; 4];
        read_exact(&mut r, &mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let grid = TorusGrid::new(n).map_err(|e| Error::Format(e.to_string()))?;
        let mut b1 = [0u8; 1];
        read_exact(&mut r, &mut b1)?;
        if b1[0] > 3 {
            return Err(Error::Format(format!("unknown snapshot flags {:#x}", b1[0])));
        }
        let mut f = SpectralField::zeros(grid);
        let mut raw = vec![0u8; 16 * n * n];
        for d in 0..2 {
            read_exact(&mut r, &mut raw)?;
            for (slot, idx) in snapshot_order(grid).enumerate() {
                let re = f64::from_le_bytes(raw[16 * slot..16 * slot + 8].try_into().unwrap());
                let im = f64::from_le_bytes(raw[16 * slot + 8..16 * slot + 16].try_into().unwrap());
                if !re.is_finite() || !im.is_finite() {
                    return Err(Error::Format("non-finite coefficient in snapshot".into()));
                }
                f.c[d][idx] = Complex64::new(re, im);
            }
        }
        f.clear_nyquist();
        f.mean_free = b1[0] & 1 != 0;
        f.div_free = b1[0] & 2 != 0;
        Ok(f)
    }
}

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"SNS2";
pub const SNAPSHOT_VERSION: u16 = 1;

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated snapshot".into()),
        _ => Error::Io(e),
    })
}

/// Lattice indices in snapshot order: `k1` outer, `k2` inner, each running
/// from `-n/2+1` to `n/2`.
fn snapshot_order(grid: TorusGrid) -> impl Iterator<Item = usize> {
    let h = grid.n() as i64 / 2;
    (-h + 1..=h).flat_map(move |a| (-h + 1..=h).map(move |b| grid.index_of(a, b).unwrap()))
}

/// Real symmetric 2x2 tensor field stored as `(T11, T12, T22)` coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    grid: TorusGrid,
    c: [Vec<Complex64>; 3],
}

impl TensorField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            c: [vec![ZERO; grid.len()], vec![ZERO; grid.len()], vec![ZERO; grid.len()]],
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Coefficients of entry `(i, j)`; symmetric by storage.
    pub fn entry(&self, i: usize, j: usize) -> &[Complex64] {
        match (i, j) {
            (0, 0) => &self.c[0],
            (1, 1) => &self.c[2],
            _ => &self.c[1],
        }
    }

    /// Mode-0 coefficient, i.e. the spatial mean, as a matrix.
    pub fn mean(&self) -> [[f64; 2]; 2] {
        let (a, b, c) = (self.c[0][0].re, self.c[1][0].re, self.c[2][0].re);
        [[a, b], [b, c]]
    }

    pub(crate) fn sub_mean(&mut self, m: [[f64; 2]; 2]) {
        self.c[0][0] -= m[0][0];
        self.c[1][0] -= m[0][1];
        self.c[2][0] -= m[1][1];
    }

    pub fn l2_norm_sq(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.c[0][i].norm_sqr() + 2.0 * self.c[1][i].norm_sqr() + self.c[2][i].norm_sqr())
            .sum()
    }

    /// Frobenius `L^2` norm.
    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn add(&self, other: &TensorField) -> Result<TensorField> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &TensorField) -> Result<TensorField> {
        self.axpy(-1.0, other)
    }

    pub fn axpy(&self, s: f64, other: &TensorField) -> Result<TensorField> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.grid.n(),
                right: other.grid.n(),
            });
        }
        let mut out = self.clone();
        for d in 0..3 {
            for (a, b) in out.c[d].iter_mut().zip(&other.c[d]) {
                *a += b * s;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> TensorField {
        let mut out = self.clone();
        for v in out.c.iter_mut() {
            for z in v.iter_mut() {
                *z *= s;
            }
        }
        out
    }

    pub fn multiplier(&self, m: impl Fn(usize) -> f64) -> TensorField {
        let mut out = self.clone();
        for idx in 0..self.grid.len() {
            let w = m(idx);
            for d in 0..3 {
                out.c[d][idx] *= w;
            }
        }
        out
    }

    /// `(div T)_j = sum_i d_i T_ij`.
    pub fn divergence(&self) -> SpectralField {
        let g = self.grid;
        let mut out = SpectralField::zeros(g);
        for idx in 0..g.len() {
            let (a, b) = g.k(idx);
            let (a, b) = (a as f64, b as f64);
            let (t11, t12, t22) = (self.c[0][idx], self.c[1][idx], self.c[2][idx]);
            out.c[0][idx] = I * (t11 * a + t12 * b);
            out.c[1][idx] = I * (t12 * a + t22 * b);
        }
        out.clear_nyquist();
        out.refresh_flags();
        out
    }

    /// Coefficients of sampled tensor data, truncated to `grid`.
    pub fn from_physical(grid: TorusGrid, p: &PhysicalField) -> Result<TensorField> {
        if p.ncomp() != 3 {
            return Err(contract("tensor samples need three components"));
        }
        if p.m < grid.n() {
            return Err(contract("collocation grid coarser than lattice"));
        }
        let (a, b) = samples_to_coeffs(grid, p.m, &p.comps[0], Some(&p.comps[1]));
        let (c, _) = samples_to_coeffs(grid, p.m, &p.comps[2], None);
        Ok(TensorField { grid, c: [a, b, c] })
    }

    pub fn to_physical(&self, oversample: usize) -> Result<PhysicalField> {
        let m = collocation_side(self.grid, oversample)?;
        Ok(self.to_physical_side(m))
    }

    pub(crate) fn to_physical_side(&self, m: usize) -> PhysicalField {
        let (a, b) = coeffs_to_samples(self.grid, &self.c[0], Some(&self.c[1]), m);
        let (c, _) = coeffs_to_samples(self.grid, &self.c[2], None, m);
        PhysicalField { m, comps: vec![a, b, c] }
    }
}

/// Side of the product grid: twice the lattice, enough to hold every product
/// of two lattice fields without aliasing.
#[inline]
pub fn product_side(grid: TorusGrid) -> usize {
    2 * grid.n()
}

/// Symmetrised product `u (x)_s v`, computed exactly on a padded grid and
/// truncated according to `rule`.
pub fn sym_tensor(u: &SpectralField, v: &SpectralField, rule: DealiasRule) -> Result<TensorField> {
    u.check_grid(v)?;
    let g = u.grid;
    let m = product_side(g);
    let cut = rule.cutoff(g);
    let (pu, pv);
    let (up, vp) = if rule == DealiasRule::TwoThirds {
        pu = u.truncate_box(cut);
        pv = v.truncate_box(cut);
        (&pu, &pv)
    } else {
        (u, v)
    };
    let a = up.to_physical_side(m);
    let b = if std::ptr::eq(u, v) { a.clone() } else { vp.to_physical_side(m) };
    let t = PhysicalField::sym_outer(&a, &b)?;
    let out = TensorField::from_physical(g, &t)?;
    Ok(if rule == DealiasRule::TwoThirds {
        out.multiplier(|idx| {
            let (x, y) = g.k(idx);
            if x.abs().max(y.abs()) > cut {
                0.0
            } else {
                1.0
            }
        })
    } else {
        out
    })
}

/// `(grad_sym u)_ij = (d_i u_j + d_j u_i) / 2`.
pub fn grad_sym(u: &SpectralField) -> TensorField {
    let g = u.grid;
    let mut out = TensorField::zeros(g);
    for idx in 0..g.len() {
        let (a, b) = g.k(idx);
        let (a, b) = (a as f64, b as f64);
        let (u0, u1) = (u.c[0][idx], u.c[1][idx]);
        out.c[0][idx] = I * a * u0;
        out.c[1][idx] = I * 0.5 * (a * u1 + b * u0);
        out.c[2][idx] = I * b * u1;
    }
    out
}

/// `P div(u (x) u)` for a divergence-free `u`.
pub fn nonlinear_term(u: &SpectralField, rule: DealiasRule) -> Result<SpectralField> {
    if !u.div_free {
        let scale = u.l2_norm() * u.grid.max_radius();
        if u.divergence_residual() > DIV_FREE_TOL * scale.max(f64::MIN_POSITIVE) || u.c[0][0] != ZERO || u.c[1][0] != ZERO {
            return Err(contract("nonlinear_term requires a divergence-free, mean-free field"));
        }
    }
    Ok(sym_tensor(u, u, rule)?.divergence().leray_project())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_field(n: usize, seed: u64) -> SpectralField {
        let g = TorusGrid::new(n).unwrap();
        let mut r = CounterRng::new(seed, 0, 1);
        SpectralField::random(g, &mut r, |k| 1.0 / (1.0 + k * k))
    }

    #[test]
    fn roundtrip_physical() {
        for oversample in [1, 2, 3] {
            let f = rand_field(16, 4);
            let p = f.to_physical(oversample).unwrap();
            let h = SpectralField::from_physical(f.grid(), &p).unwrap();
            let err = h.sub(&f).unwrap().l2_norm() / f.l2_norm();
            assert!(err < 1e-12, "{err}");
            assert!(h.is_div_free() && h.is_mean_free());
        }
    }

    #[test]
    fn single_mode_follows_basis() {
        let g = TorusGrid::new(8).unwrap();
        // c e_k + c.c. with c = 1/2 and k = (1,0): k_perp = (0,-1)
        let f = SpectralField::mode(g, (1, 0), Complex64::new(0.5, 0.0)).unwrap();
        let p = f.to_physical(1).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                let x = std::f64::consts::TAU * a as f64 / 8.0;
                assert!(p.comp(0)[a * 8 + b].abs() < 1e-14);
                assert!((p.comp(1)[a * 8 + b] + x.cos()).abs() < 1e-14);
            }
        }
        assert!((f.l2_norm_sq() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn leray_explicit_matrix() {
        let g = TorusGrid::new(8).unwrap();
        let idx = g.index_of(1, 0).unwrap();
        let neg = g.neg_index(idx);
        let one = Complex64::new(1.0, 0.0);
        let mut c0 = vec![ZERO; g.len()];
        let mut c1 = vec![ZERO; g.len()];
        c0[idx] = one;
        c0[neg] = one;
        let f = SpectralField::from_coeffs(g, c0.clone(), c1.clone()).unwrap();
        assert_eq!(f.leray_project().l2_norm(), 0.0);
        c0[idx] = ZERO;
        c0[neg] = ZERO;
        c1[idx] = one;
        c1[neg] = one;
        let f = SpectralField::from_coeffs(g, c0, c1).unwrap();
        assert_eq!(f.leray_project(), f);
    }

    #[test]
    fn single_mode_self_interaction_vanishes() {
        let g = TorusGrid::new(16).unwrap();
        let f = SpectralField::mode(g, (2, 3), Complex64::new(0.3, -0.7)).unwrap();
        for rule in [DealiasRule::None, DealiasRule::TwoThirds] {
            let nl = nonlinear_term(&f, rule).unwrap();
            assert!(nl.l2_norm() < 1e-13);
        }
    }

    #[test]
    fn nonlinear_rejects_compressible_input() {
        let g = TorusGrid::new(8).unwrap();
        let idx = g.index_of(1, 0).unwrap();
        let mut c0 = vec![ZERO; g.len()];
        c0[idx] = Complex64::new(1.0, 0.0);
        c0[g.neg_index(idx)] = Complex64::new(1.0, 0.0);
        let f = SpectralField::from_coeffs(g, c0, vec![ZERO; g.len()]).unwrap();
        assert!(matches!(nonlinear_term(&f, DealiasRule::None), Err(Error::Contract(_))));
    }

    #[test]
    fn divergence_of_constant_tensor() {
        let g = TorusGrid::new(8).unwrap();
        let mut t = TensorField::zeros(g);
        t.c[0][0] = Complex64::new(2.0, 0.0);
        t.c[1][0] = Complex64::new(-1.0, 0.0);
        assert_eq!(t.divergence().l2_norm(), 0.0);
    }

    #[test]
    fn snapshot_roundtrip_and_corruption() {
        let f = rand_field(8, 2);
        let mut buf = Vec::new();
        f.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 4 + 1 + 2 * 16 * 64);
        let h = SpectralField::read_snapshot(&buf[..]).unwrap();
        assert_eq!(h, f);
        assert!(SpectralField::read_snapshot(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(SpectralField::read_snapshot(&bad[..]).is_err());
        let mut odd = buf.clone();
        odd[6..10].copy_from_slice(&7u32.to_le_bytes());
        assert!(SpectralField::read_snapshot(&odd[..]).is_err());
    }

    #[test]
    fn snapshot_layout_starts_at_most_negative_mode() {
        let g = TorusGrid::new(4).unwrap();
        // first slot is k = (-1,-1), second (-1,0)
        let f = SpectralField::mode(g, (1, 1), Complex64::new(1.0, 0.0)).unwrap();
        let mut buf = Vec::new();
        f.write_snapshot(&mut buf).unwrap();
        let re = f64::from_le_bytes(buf[11..19].try_into().unwrap());
        assert!((re - f.coeff(g.index_of(-1, -1).unwrap())[0].re).abs() < 1e-15);
        assert!(re != 0.0);
    }
}
