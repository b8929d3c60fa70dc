//! Additive noise, the stochastic convolution and its Wick square.
//!
//! A real divergence-free field is stored through one complex amplitude `s_k`
//! per representative `k` of the classes `{k, -k}`: the coefficient at `k` is
//! `s_k k_perp/|k|` and at `-k` it is `conj(s_k) k_perp/|k|`. The noise drives
//! `ds_k = -|k|^2 s_k dt + phi_k dB_k` with circular complex Brownian motions
//! `E|B_k(t)|^2 = t`, which in law is the same as driving the coefficients
//! with `phi_k e_k dB_k`.

use num_complex::Complex64;

use crate::error::{contract, Result};
use crate::field::{perp_unit, sym_tensor, DealiasRule, SpectralField, TensorField};
use crate::grid::{mode_label, TorusGrid};
use crate::lp::{chi, log2_plus};
use crate::rng::StreamKey;

/// Step index reserved for sampling the stochastic convolution directly at a
/// fixed time, so those draws never coincide with path increments.
pub const DIRECT_SAMPLE_STEP: u64 = u64::MAX;

/// `(1 - e^{-2 q h}) / (2 q)`, the variance accumulated by a unit-intensity
/// Ornstein–Uhlenbeck mode with rate `q` over time `h`.
#[inline]
pub fn ou_variance(q: f64, h: f64) -> f64 {
    if q == 0.0 {
        h
    } else {
        -(-2.0 * q * h).exp_m1() / (2.0 * q)
    }
}

/// Which part of `xi = xi_1 + xi_2` a quantity refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePart {
    /// Modes with `|k| > R`.
    Xi1,
    /// Modes with `0 < |k| <= R`.
    Xi2,
    Full,
}

/// Noise coefficients `phi_k` together with the split radius and the bound
/// `alpha_0` on the rough part.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpectrum {
    grid: TorusGrid,
    phi: Vec<Complex64>,
    alpha0: f64,
    split_radius: f64,
}

impl NoiseSpectrum {
    /// Builds a spectrum from its values on the representatives; the other
    /// half is filled in by conjugation. `alpha0 = None` takes the smallest
    /// admissible bound.
    pub fn from_fn(
        grid: TorusGrid,
        f: impl Fn((i64, i64)) -> Complex64,
        alpha0: Option<f64>,
        split_radius: f64,
    ) -> Result<Self> {
        let mut phi = vec![Complex64::new(0.0, 0.0); grid.len()];
        for idx in grid.half_modes() {
            let z = f(grid.k(idx));
            phi[idx] = z;
            phi[grid.neg_index(idx)] = z.conj();
        }
        Self::new(grid, phi, alpha0, split_radius)
    }

    pub fn new(grid: TorusGrid, phi: Vec<Complex64>, alpha0: Option<f64>, split_radius: f64) -> Result<Self> {
        if phi.len() != grid.len() {
            return Err(contract("phi does not match grid"));
        }
        if !(split_radius >= 0.0) {
            return Err(contract("split radius must be non-negative"));
        }
        let mut phi = phi;
        phi[0] = Complex64::new(0.0, 0.0);
        for idx in 0..grid.len() {
            if grid.is_nyquist(idx) {
                phi[idx] = Complex64::new(0.0, 0.0);
            }
        }
        for idx in grid.half_modes() {
            let d = (phi[grid.neg_index(idx)] - phi[idx].conj()).norm();
            if d > 1e-12 * phi[idx].norm().max(1.0) {
                return Err(contract(format!("phi not conjugate-symmetric at {:?}", grid.k(idx))));
            }
        }
        let r2 = split_radius * split_radius;
        let sup = (0..grid.len())
            .filter(|&i| grid.k_sq(i) > r2)
            .map(|i| phi[i].norm())
            .fold(0.0, f64::max);
        let alpha0 = match alpha0 {
            Some(a) if a + 1e-15 < sup => {
                return Err(contract(format!("alpha0 = {a} below sup |phi_k| = {sup} on xi_1")));
            }
            Some(a) if a > 0.0 => a,
            Some(a) => return Err(contract(format!("alpha0 must be positive, got {a}"))),
            None => sup,
        };
        Ok(Self {
            grid,
            phi,
            alpha0,
            split_radius,
        })
    }

    /// `phi_k = c` on every retained mode.
    pub fn constant(grid: TorusGrid, c: f64, split_radius: f64) -> Result<Self> {
        Self::from_fn(grid, |_| Complex64::new(c, 0.0), Some(c.abs().max(f64::MIN_POSITIVE)), split_radius)
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn split_radius(&self) -> f64 {
        self.split_radius
    }

    pub fn phi(&self, idx: usize) -> Complex64 {
        self.phi[idx]
    }

    pub fn phi_sq(&self, idx: usize) -> f64 {
        self.phi[idx].norm_sqr()
    }

    pub fn is_xi2(&self, idx: usize) -> bool {
        let q = self.grid.k_sq(idx);
        q > 0.0 && q <= self.split_radius * self.split_radius
    }

    /// 1 if mode `idx` belongs to `part`, else 0.
    pub fn part_weight(&self, part: NoisePart, idx: usize) -> f64 {
        if idx == 0 || self.grid.is_nyquist(idx) {
            return 0.0;
        }
        let xi2 = self.is_xi2(idx);
        match part {
            NoisePart::Full => 1.0,
            NoisePart::Xi1 if !xi2 => 1.0,
            NoisePart::Xi2 if xi2 => 1.0,
            _ => 0.0,
        }
    }

    /// Every coefficient multiplied by `s` (and `alpha0` by `|s|`).
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            phi: self.phi.iter().map(|z| z * s).collect(),
            alpha0: self.alpha0 * s.abs().max(f64::MIN_POSITIVE),
            split_radius: self.split_radius,
        }
    }

    /// Same coefficients viewed on another lattice (modes missing from this
    /// one get `phi = 0`).
    pub fn on_grid(&self, grid: TorusGrid, f_outside: impl Fn((i64, i64)) -> Complex64) -> Result<Self> {
        Self::from_fn(
            grid,
            |k| match self.grid.index_of(k.0, k.1) {
                Some(i) if !self.grid.is_nyquist(i) => self.phi[i],
                _ => f_outside(k),
            },
            Some(self.alpha0),
            self.split_radius,
        )
    }

    /// Stationary variance `|phi_k|^2 / (2|k|^2)` of mode `idx`.
    pub fn stationary_variance(&self, idx: usize) -> f64 {
        let q = self.grid.k_sq(idx);
        if q == 0.0 {
            0.0
        } else {
            self.phi_sq(idx) / (2.0 * q)
        }
    }
}

/// Spatial truncation applied before squaring the stochastic convolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    /// Smooth cutoff `L_N`.
    LowPass(f64),
    /// Sharp cutoff `|k|_inf <= N`.
    Sharp(i64),
    None,
}

impl Truncation {
    pub fn symbol(&self, grid: TorusGrid, idx: usize) -> f64 {
        match *self {
            Truncation::LowPass(n) => {
                let j0 = log2_plus(n).ceil() as i32;
                chi(grid.k_sq(idx).sqrt() / 2f64.powi(j0))
            }
            Truncation::Sharp(n) => {
                let (a, b) = grid.k(idx);
                if a.abs().max(b.abs()) <= n {
                    1.0
                } else {
                    0.0
                }
            }
            Truncation::None => 1.0,
        }
    }

    pub fn apply(&self, f: &SpectralField) -> SpectralField {
        match self {
            Truncation::None => f.clone(),
            _ => {
                let g = f.grid();
                f.multiplier(|idx| self.symbol(g, idx))
            }
        }
    }
}

/// `E X_N(x) (x) X_N(x)` for the stochastic convolution of `part` started
/// from zero, at time `t`.
pub fn wick_constant(spectrum: &NoiseSpectrum, part: NoisePart, t: f64, trunc: Truncation) -> Result<[[f64; 2]; 2]> {
    if !(t >= 0.0) {
        return Err(contract("wick_constant needs t >= 0"));
    }
    let g = spectrum.grid();
    let mut m = [[0.0; 2]; 2];
    for idx in 1..g.len() {
        let w = spectrum.part_weight(part, idx);
        if w == 0.0 {
            continue;
        }
        let s = trunc.symbol(g, idx);
        let v = s * s * spectrum.phi_sq(idx) * ou_variance(g.k_sq(idx), t);
        if v == 0.0 {
            continue;
        }
        let e = perp_unit(g.k(idx));
        for a in 0..2 {
            for b in 0..2 {
                m[a][b] += v * e[a] * e[b];
            }
        }
    }
    Ok(m)
}

/// `:X_N^{(x)2}: = X_N (x) X_N - E X_N (x) X_N` for `x` the (possibly shifted)
/// stochastic convolution of `part` at time `t`.
pub fn wick_square(
    x: &SpectralField,
    spectrum: &NoiseSpectrum,
    part: NoisePart,
    t: f64,
    trunc: Truncation,
) -> Result<TensorField> {
    let xn = trunc.apply(x);
    let mut sq = sym_tensor(&xn, &xn, DealiasRule::None)?;
    sq.sub_mean(wick_constant(spectrum, part, t, trunc)?);
    Ok(sq)
}

/// Generator of exact Ornstein–Uhlenbeck increments for one trajectory.
///
/// Draws are keyed by `(seed, stream, mode label, base step)`. A step of
/// `m` base steps composes the `m` base increments, so refining the step
/// keeps the same Brownian path.
#[derive(Clone, Debug)]
pub struct NoiseSource {
    spectrum: NoiseSpectrum,
    key: StreamKey,
    base_h: f64,
    modes: Vec<ModeData>,
}

#[derive(Clone, Debug)]
struct ModeData {
    idx: usize,
    neg: usize,
    label: u32,
    q: f64,
    amp: f64,
    dir: [f64; 2],
}

impl NoiseSource {
    pub fn new(spectrum: NoiseSpectrum, key: StreamKey, base_h: f64) -> Result<Self> {
        if !(base_h > 0.0) {
            return Err(contract(format!("time step must be positive, got {base_h}")));
        }
        let g = spectrum.grid();
        let modes = g
            .half_modes()
            .into_iter()
            .filter(|&idx| spectrum.phi_sq(idx) > 0.0)
            .map(|idx| {
                let q = g.k_sq(idx);
                ModeData {
                    idx,
                    neg: g.neg_index(idx),
                    label: mode_label(g.k(idx)),
                    q,
                    amp: spectrum.phi(idx).norm() * ou_variance(q, base_h).sqrt(),
                    dir: perp_unit(g.k(idx)),
                }
            })
            .collect();
        Ok(Self {
            spectrum,
            key,
            base_h,
            modes,
        })
    }

    pub fn spectrum(&self) -> &NoiseSpectrum {
        &self.spectrum
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn base_h(&self) -> f64 {
        self.base_h
    }

    /// Increment of the full-noise OU process over base steps
    /// `[start, start + m)`: per mode `sum_i e^{-|k|^2 (m-1-i) h} sigma z_{start+i}`.
    pub fn increment(&self, start: u64, m: u64) -> SpectralField {
        let mut f = SpectralField::zeros(self.spectrum.grid());
        for md in &self.modes {
            let decay = (-md.q * self.base_h).exp();
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..m {
                s = s * decay + self.key.complex_normal(md.label, start + i) * md.amp;
            }
            f.set_coeff(md.idx, [s * md.dir[0], s * md.dir[1]]);
            f.set_coeff(md.neg, [s.conj() * md.dir[0], s.conj() * md.dir[1]]);
        }
        f
    }

    /// Exact sample of the stochastic convolution of `part` started from zero
    /// at time `t`, independent of every path increment.
    pub fn sample_at(&self, t: f64, part: NoisePart) -> SpectralField {
        sample_stochastic_convolution(&self.spectrum, self.key, t, part)
    }
}

/// Exact sample of `X[t]` driven by `part`, using draw slot
/// [`DIRECT_SAMPLE_STEP`] of `key`.
pub fn sample_stochastic_convolution(spectrum: &NoiseSpectrum, key: StreamKey, t: f64, part: NoisePart) -> SpectralField {
    let g = spectrum.grid();
    let mut f = SpectralField::zeros(g);
    for idx in g.half_modes() {
        let w = spectrum.part_weight(part, idx) * spectrum.phi_sq(idx);
        if w == 0.0 {
            continue;
        }
        let k = g.k(idx);
        let s = key.complex_normal(mode_label(k), DIRECT_SAMPLE_STEP) * (w * ou_variance(g.k_sq(idx), t)).sqrt();
        let e = perp_unit(k);
        f.set_coeff(idx, [s * e[0], s * e[1]]);
        f.set_coeff(g.neg_index(idx), [s.conj() * e[0], s.conj() * e[1]]);
    }
    f
}

/// The stochastic convolution `X` together with the heat flow of an initial
/// rough part, representing `X~ = X + e^{t Delta} u_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticConvolution {
    pub x: SpectralField,
    pub rough: Option<SpectralField>,
    pub t: f64,
    pub part: NoisePart,
}

impl StochasticConvolution {
    pub fn new(grid: TorusGrid, rough: Option<SpectralField>, part: NoisePart) -> Self {
        Self {
            x: SpectralField::zeros(grid),
            rough,
            t: 0.0,
            part,
        }
    }

    /// `X~ = X + e^{t Delta} u_r`.
    pub fn x_tilde(&self) -> SpectralField {
        match &self.rough {
            Some(r) => {
                let mut out = self.x.clone();
                out.add_scaled(1.0, &r.heat(self.t).expect("t >= 0"));
                out
            }
            None => self.x.clone(),
        }
    }

    /// Exact OU transition over `h` given the full-noise increment `eta` of
    /// that interval; only the modes of `self.part` are driven.
    pub fn ou_step(&mut self, h: f64, eta: &SpectralField, spectrum: &NoiseSpectrum) -> Result<()> {
        if !(h > 0.0) {
            return Err(contract(format!("time step must be positive, got {h}")));
        }
        let mut next = self.x.heat(h)?;
        let part = self.part;
        next.add_scaled(1.0, &eta.multiplier(|idx| spectrum.part_weight(part, idx)));
        self.x = next;
        self.t += h;
        Ok(())
    }
}

/// `ou_step` driven straight from a noise source: advances `s` by
/// `m` base steps starting at base step `start`.
pub fn ou_step(s: &mut StochasticConvolution, src: &NoiseSource, start: u64, m: u64) -> Result<()> {
    let eta = src.increment(start, m);
    s.ou_step(src.base_h() * m as f64, &eta, src.spectrum())
}
