//! Time integration of the decomposition `u = X~ + Y + w`,
//! `w = -L_lambda X~ + w^H + w^L`, of the direct splitting `u = v + X`, and
//! of a sharp Galerkin truncation of the full equation.
//!
//! Every additive noise is integrated by its exact Ornstein–Uhlenbeck
//! transition and all pipelines draw from the same [`NoiseSource`], so runs
//! with the same seed and stream see the same Brownian path.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};
use crate::field::{product_side, DealiasRule, PhysicalField, SpectralField, TensorField};
use crate::lp::DyadicSystem;
use crate::noise::{ou_variance, wick_constant, NoisePart, NoiseSource, NoiseSpectrum, StochasticConvolution, Truncation};
use crate::paraproduct::{accumulate_lo, accumulate_res, BlockSamples};
use crate::rng::StreamKey;

/// Norm above which a field is declared to have blown up.
pub const BLOWUP_NORM: f64 = 1e100;

/// `phi_1(z) = (e^z - 1) / z`.
#[inline]
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + 0.5 * z
    } else {
        z.exp_m1() / z
    }
}

/// First-order exponential schemes for `du = (Delta u + F) dt`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `u <- e^{h Delta} (u + h F)`.
    Lawson,
    /// `u <- e^{h Delta} u + h phi_1(h Delta) F`.
    Etd1,
    /// Nonlinear flow by classical RK4, then the exact linear step
    /// (Galerkin only).
    SplitRk4,
}

fn exp_step(f: &SpectralField, forcing: &SpectralField, h: f64, scheme: Scheme) -> SpectralField {
    let g = f.grid();
    match scheme {
        Scheme::Etd1 => {
            let mut out = f.heat(h).expect("h > 0");
            out.add_scaled(1.0, &forcing.multiplier(|idx| h * phi1(-h * g.k_sq(idx))));
            out
        }
        _ => {
            let mut a = f.clone();
            a.add_scaled(h, forcing);
            a.heat(h).expect("h > 0")
        }
    }
}

fn check_finite(f: &SpectralField, t: f64, name: &'static str) -> Result<()> {
    let norm = f.l2_norm();
    if !f.is_finite() || !(norm < BLOWUP_NORM) {
        return Err(Error::BlowUp {
            t,
            field: name,
            detail: format!("L2 norm {norm:e}"),
        });
    }
    Ok(())
}

/// `-P div T`.
fn minus_p_div(t: &TensorField) -> SpectralField {
    t.divergence().leray_project().scale(-1.0)
}

/// `<grad f, T> = <f, -div T>`.
pub fn pair_grad(f: &SpectralField, t: &TensorField) -> f64 {
    -f.inner(&t.divergence())
}

/// Shared inputs of one integrator.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub dyadic: &'a DyadicSystem,
    pub noise: &'a NoiseSource,
    /// Step size in units of the noise base step.
    pub m: u64,
}

impl<'a> StepContext<'a> {
    pub fn new(dyadic: &'a DyadicSystem, noise: &'a NoiseSource, m: u64) -> Result<Self> {
        if m == 0 {
            return Err(contract("step multiple must be at least 1"));
        }
        if dyadic.grid() != noise.spectrum().grid() {
            return Err(Error::GridMismatch {
                left: dyadic.grid().n(),
                right: noise.spectrum().grid().n(),
            });
        }
        Ok(Self { dyadic, noise, m })
    }

    pub fn h(&self) -> f64 {
        self.noise.base_h() * self.m as f64
    }
}

/// Initial data `u = u_s + u_r` with a smooth part and a small rough part.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialSplit {
    pub u_s: SpectralField,
    pub u_r: SpectralField,
    /// Declared bound on `||u_r||_{C^{-kappa}}`.
    pub alpha: f64,
}

impl InitialSplit {
    /// Checks the declared bound on the rough part.
    pub fn new(u_s: SpectralField, u_r: SpectralField, alpha: f64, dyadic: &DyadicSystem, kappa: f64) -> Result<Self> {
        if u_s.grid() != u_r.grid() {
            return Err(Error::GridMismatch {
                left: u_s.grid().n(),
                right: u_r.grid().n(),
            });
        }
        let r = dyadic.holder_norm(&u_r, -kappa)?;
        if r > alpha {
            return Err(contract(format!(
                "rough part has C^-kappa norm {r} above its bound {alpha}"
            )));
        }
        Ok(Self { u_s, u_r, alpha })
    }

    pub fn u(&self) -> SpectralField {
        self.u_s.add(&self.u_r).expect("same grid")
    }
}

/// `K = lambda_+ v ||w||_{L^12}^100 / lambda_+^99`, clamped to the grid
/// Nyquist frequency. Returns `(K, saturated)`.
pub fn frequency_scale(w: &SpectralField, lambda_plus: f64) -> Result<(f64, bool)> {
    let l12 = w.to_physical(2)?.lp_norm(12.0);
    let nyquist = w.grid().n() as f64 / 2.0;
    if l12 == 0.0 {
        return Ok((lambda_plus, false));
    }
    let log_k = lambda_plus.ln() + 100.0 * (l12.ln() - lambda_plus.ln());
    if log_k > nyquist.ln() {
        Ok((lambda_plus.max(nyquist), true))
    } else {
        Ok((lambda_plus.max(log_k.exp()), false))
    }
}

/// State of the decomposition at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct AnsatzState {
    pub t: f64,
    /// Noise base steps consumed so far.
    pub step: u64,
    /// `X~`: stochastic convolution of `xi_1` plus the heat flow of `u_r`.
    pub x: StochasticConvolution,
    pub y: SpectralField,
    pub w_h: SpectralField,
    pub w_l: SpectralField,
    pub lambda: f64,
    pub k: f64,
    pub k_saturated: bool,
    /// Remainder `R` from the last forcing evaluation.
    pub r_term: SpectralField,
}

impl AnsatzState {
    /// `lambda = ||u_s||`, `Y = 0`, `w^H = 0`, `w^L = u_s + L_lambda u_r`.
    pub fn new(split: &InitialSplit, dyadic: &DyadicSystem) -> Self {
        let g = split.u_s.grid();
        let lambda = split.u_s.l2_norm();
        let w_l = split.u_s.add(&dyadic.low(&split.u_r, lambda)).expect("same grid");
        Self {
            t: 0.0,
            step: 0,
            x: StochasticConvolution::new(g, Some(split.u_r.clone()), NoisePart::Xi1),
            y: SpectralField::zeros(g),
            w_h: SpectralField::zeros(g),
            w_l,
            lambda,
            k: lambda.max(1.0),
            k_saturated: false,
            r_term: SpectralField::zeros(g),
        }
    }

    pub fn lambda_plus(&self) -> f64 {
        self.lambda.max(1.0)
    }

    pub fn x_tilde(&self) -> SpectralField {
        self.x.x_tilde()
    }

    /// `w = -L_lambda X~ + w^H + w^L`.
    pub fn w(&self, dyadic: &DyadicSystem) -> SpectralField {
        let mut w = self.w_h.add(&self.w_l).expect("same grid");
        w.add_scaled(-1.0, &dyadic.low(&self.x_tilde(), self.lambda));
        w
    }

    /// `u = X~ + Y + w`.
    pub fn u(&self, dyadic: &DyadicSystem) -> SpectralField {
        let mut u = self.w(dyadic);
        u.add_scaled(1.0, &self.x_tilde());
        u.add_scaled(1.0, &self.y);
        u
    }
}

/// Right-hand sides of the decomposition at one state.
#[derive(Clone, Debug)]
pub struct AnsatzForcing {
    /// `-P div(2 Y (x)_s X~ + :X~^2:)`
    pub f_y: SpectralField,
    /// `-2 P div(w ⩿ H_K X~)`
    pub f_h: SpectralField,
    /// Full right-hand side of `w^L` without the linear and noise terms.
    pub f_l: SpectralField,
    /// `R = -P div((w^H)^2 + 2 w ⩾̸ H_lambda X~ + 2 w (x)_s Y + Y^2 - (L_lambda X~)^2)`
    pub r: SpectralField,
    /// `2 w ⩿ P_{lambda,K} X~`
    pub t_band: TensorField,
    /// `2 w^L (x)_s w^H`
    pub t_cross: TensorField,
}

/// One energy-balance record for `1/2 ||w^L||^2` over a step.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LedgerRow {
    pub t: f64,
    /// `-h ||grad w^L||^2`
    pub dissipation: f64,
    /// `h <w^L, R>`
    pub remainder: f64,
    /// `h <grad w^L, 2 w ⩿ P_{lambda,K} X~>`
    pub band_pairing: f64,
    /// `h <grad w^L, 2 w^L (x)_s w^H>`
    pub cross_pairing: f64,
    /// `<e^{h Delta}(w^L + h F), eta>`: the Ito integral increment
    pub martingale: f64,
    /// `1/2 ||eta||^2`: realised quadratic variation
    pub quadratic_variation: f64,
    /// `E 1/2 ||eta||^2` for this step
    pub ito_expected: f64,
    /// `1/2 ||w^L_{n+1}||^2 - 1/2 ||w^L_n||^2`
    pub realized: f64,
    pub residual: f64,
}

impl LedgerRow {
    pub fn entries_sum(&self) -> f64 {
        self.dissipation + self.remainder + self.band_pairing + self.cross_pairing + self.martingale + self.quadratic_variation
    }
}

/// Integrator of the decomposition.
pub struct Ansatz<'a> {
    pub ctx: StepContext<'a>,
}

impl<'a> Ansatz<'a> {
    pub fn new(ctx: StepContext<'a>) -> Self {
        Self { ctx }
    }

    /// Re-evaluates `K` from the current `w`.
    pub fn update_scale(&self, s: &mut AnsatzState) -> Result<()> {
        let (k, sat) = frequency_scale(&s.w(self.ctx.dyadic), s.lambda_plus())?;
        s.k = k;
        s.k_saturated = sat;
        Ok(())
    }

    /// Evaluates every forcing term at the current state (using `s.k`).
    pub fn forcing(&self, s: &AnsatzState) -> Result<AnsatzForcing> {
        let d = self.ctx.dyadic;
        let g = d.grid();
        let m = product_side(g);
        let xt = s.x_tilde();
        let w = s.w(d);
        let lx = d.low(&xt, s.lambda);
        let bs_w = BlockSamples::new(d, &w);
        let bs_hk = BlockSamples::new(d, &d.high(&xt, s.k));
        let bs_pb = BlockSamples::new(d, &d.band(&xt, s.lambda, s.k));
        let bs_hl = bs_pb.sum(&bs_hk);

        let p_x = xt.to_physical_side(m);
        let p_y = s.y.to_physical_side(m);
        let p_wl = s.w_l.to_physical_side(m);
        let p_wh = s.w_h.to_physical_side(m);
        let p_lx = lx.to_physical_side(m);
        let p_w = bs_w.total();

        let mut t_y = PhysicalField::zeros(m, 3);
        t_y.add_sym_outer(&p_y, &p_x, 2.0)?;
        t_y.add_sym_outer(&p_x, &p_x, 1.0)?;
        let mut t_y = TensorField::from_physical(g, &t_y)?;
        t_y.sub_mean(wick_constant(self.ctx.noise.spectrum(), NoisePart::Xi1, s.x.t, Truncation::None)?);

        let mut t_h = PhysicalField::zeros(m, 3);
        accumulate_lo(&mut t_h, &bs_w, &bs_hk, 2.0)?;
        let t_h = TensorField::from_physical(g, &t_h)?;

        let mut t_band = PhysicalField::zeros(m, 3);
        accumulate_lo(&mut t_band, &bs_w, &bs_pb, 2.0)?;
        let t_band = TensorField::from_physical(g, &t_band)?;

        let mut t_cross = PhysicalField::zeros(m, 3);
        t_cross.add_sym_outer(&p_wl, &p_wh, 2.0)?;
        let t_cross = TensorField::from_physical(g, &t_cross)?;

        let mut t_nl = PhysicalField::zeros(m, 3);
        t_nl.add_sym_outer(&p_wl, &p_wl, 1.0)?;
        let t_nl = TensorField::from_physical(g, &t_nl)?;

        let mut t_r = PhysicalField::zeros(m, 3);
        t_r.add_sym_outer(&p_wh, &p_wh, 1.0)?;
        // w ⩾̸ H X = (H X) ⩿ w + w ⊙ H X
        accumulate_lo(&mut t_r, &bs_hl, &bs_w, 2.0)?;
        accumulate_res(&mut t_r, &bs_w, &bs_hl, 2.0)?;
        t_r.add_sym_outer(p_w, &p_y, 2.0)?;
        t_r.add_sym_outer(&p_y, &p_y, 1.0)?;
        t_r.add_sym_outer(&p_lx, &p_lx, -1.0)?;
        let t_r = TensorField::from_physical(g, &t_r)?;

        let r = minus_p_div(&t_r);
        let mut f_l = minus_p_div(&t_nl.add(&t_band)?.add(&t_cross)?);
        f_l.add_scaled(1.0, &r);
        Ok(AnsatzForcing {
            f_y: minus_p_div(&t_y),
            f_h: minus_p_div(&t_h),
            f_l,
            r,
            t_band,
            t_cross,
        })
    }

    /// Advances every component by one step; returns the energy ledger row
    /// when `ledger` is set.
    pub fn step(&self, s: &mut AnsatzState, ledger: bool) -> Result<Option<LedgerRow>> {
        let h = self.ctx.h();
        let spectrum = self.ctx.noise.spectrum();
        let d = self.ctx.dyadic;
        self.update_scale(s)?;
        let f = self.forcing(s)?;
        let eta = self.ctx.noise.increment(s.step, self.ctx.m);
        let lambda = s.lambda;
        let noise_l = eta.multiplier(|idx| wl_noise_weight(d, spectrum, lambda, idx));

        let y = exp_step(&s.y, &f.f_y, h, Scheme::Lawson);
        let w_h = exp_step(&s.w_h, &f.f_h, h, Scheme::Lawson);
        let mut pre = s.w_l.clone();
        pre.add_scaled(h, &f.f_l);
        let drift = pre.heat(h)?;
        let mut w_l = drift.clone();
        w_l.add_scaled(1.0, &noise_l);

        let row = ledger.then(|| {
            let mut row = LedgerRow {
                t: s.t,
                dissipation: -h * s.w_l.grad_norm_sq(),
                remainder: h * s.w_l.inner(&f.r),
                band_pairing: h * pair_grad(&s.w_l, &f.t_band),
                cross_pairing: h * pair_grad(&s.w_l, &f.t_cross),
                martingale: drift.inner(&noise_l),
                quadratic_variation: 0.5 * noise_l.l2_norm_sq(),
                ito_expected: expected_quadratic_variation(d, spectrum, lambda, h),
                realized: 0.5 * (w_l.l2_norm_sq() - s.w_l.l2_norm_sq()),
                residual: 0.0,
            };
            row.residual = row.realized - row.entries_sum();
            row
        });

        s.x.ou_step(h, &eta, spectrum)?;
        s.y = y;
        s.w_h = w_h;
        s.w_l = w_l;
        s.r_term = f.r;
        s.t += h;
        s.step += self.ctx.m;
        check_finite(&s.y, s.t, "Y")?;
        check_finite(&s.w_h, s.t, "w^H")?;
        check_finite(&s.w_l, s.t, "w^L")?;
        Ok(row)
    }
}

/// Weight of mode `idx` in `L_lambda xi_1 + xi_2`.
pub fn wl_noise_weight(d: &DyadicSystem, sp: &NoiseSpectrum, lambda: f64, idx: usize) -> f64 {
    sp.part_weight(NoisePart::Xi1, idx) * (1.0 - d.high_symbol(lambda, idx)) + sp.part_weight(NoisePart::Xi2, idx)
}

/// `E 1/2 ||eta_L||^2` over one step of length `h`.
pub fn expected_quadratic_variation(d: &DyadicSystem, sp: &NoiseSpectrum, lambda: f64, h: f64) -> f64 {
    let g = d.grid();
    0.5 * (1..g.len())
        .map(|idx| {
            let w = wl_noise_weight(d, sp, lambda, idx);
            w * w * sp.phi_sq(idx) * ou_variance(g.k_sq(idx), h)
        })
        .sum::<f64>()
}

/// State of the direct splitting `u = v + X`.
#[derive(Clone, Debug, PartialEq)]
pub struct DpdState {
    pub t: f64,
    pub step: u64,
    /// Stochastic convolution of `xi_1` from zero.
    pub x: StochasticConvolution,
    pub v: SpectralField,
}

impl DpdState {
    /// `v(0) = u_s + u_r`.
    pub fn new(split: &InitialSplit) -> Self {
        Self::from_u(split.u())
    }

    pub fn from_u(u: SpectralField) -> Self {
        Self {
            t: 0.0,
            step: 0,
            x: StochasticConvolution::new(u.grid(), None, NoisePart::Xi1),
            v: u,
        }
    }

    pub fn u(&self) -> SpectralField {
        self.v.add(&self.x.x).expect("same grid")
    }
}

/// Integrator of `dv = (Delta v - P div(v^2 + 2 v (x)_s X + :X^2:)) dt + xi_2`.
pub struct Dpd<'a> {
    pub ctx: StepContext<'a>,
    pub scheme: Scheme,
}

impl<'a> Dpd<'a> {
    pub fn new(ctx: StepContext<'a>) -> Self {
        Self { ctx, scheme: Scheme::Etd1 }
    }

    pub fn forcing(&self, s: &DpdState) -> Result<SpectralField> {
        let g = s.v.grid();
        let m = product_side(g);
        let pv = s.v.to_physical_side(m);
        let px = s.x.x.to_physical_side(m);
        let mut t = PhysicalField::zeros(m, 3);
        t.add_sym_outer(&pv, &pv, 1.0)?;
        t.add_sym_outer(&pv, &px, 2.0)?;
        t.add_sym_outer(&px, &px, 1.0)?;
        let mut t = TensorField::from_physical(g, &t)?;
        t.sub_mean(wick_constant(self.ctx.noise.spectrum(), NoisePart::Xi1, s.x.t, Truncation::None)?);
        Ok(minus_p_div(&t))
    }

    pub fn step(&self, s: &mut DpdState) -> Result<()> {
        let h = self.ctx.h();
        let spectrum = self.ctx.noise.spectrum();
        let f = self.forcing(s)?;
        let eta = self.ctx.noise.increment(s.step, self.ctx.m);
        let mut v = exp_step(&s.v, &f, h, self.scheme);
        v.add_scaled(1.0, &eta.multiplier(|idx| spectrum.part_weight(NoisePart::Xi2, idx)));
        s.x.ou_step(h, &eta, spectrum)?;
        s.v = v;
        s.t += h;
        s.step += self.ctx.m;
        check_finite(&s.v, s.t, "v")
    }
}

/// Switches and truncation of the Galerkin reference solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GalerkinConfig {
    /// Retained modes: `|k|_inf <= sharp_n`.
    pub sharp_n: i64,
    pub scheme: Scheme,
    pub nonlinear: bool,
    pub viscous: bool,
    pub noisy: bool,
}

impl GalerkinConfig {
    pub fn new(sharp_n: i64) -> Self {
        Self {
            sharp_n,
            scheme: Scheme::Etd1,
            nonlinear: true,
            viscous: true,
            noisy: true,
        }
    }
}

/// State of the Galerkin reference solver.
#[derive(Clone, Debug, PartialEq)]
pub struct GalerkinState {
    pub t: f64,
    pub step: u64,
    pub u: SpectralField,
}

impl GalerkinState {
    pub fn new(u: SpectralField, sharp_n: i64) -> Self {
        Self {
            t: 0.0,
            step: 0,
            u: u.truncate_box(sharp_n),
        }
    }
}

/// Sharp Galerkin truncation of `du = (Delta u - P div(u (x) u)) dt + xi`.
pub struct Galerkin<'a> {
    pub noise: &'a NoiseSource,
    pub m: u64,
    pub cfg: GalerkinConfig,
}

impl<'a> Galerkin<'a> {
    pub fn new(noise: &'a NoiseSource, m: u64, cfg: GalerkinConfig) -> Result<Self> {
        if m == 0 {
            return Err(contract("step multiple must be at least 1"));
        }
        if cfg.sharp_n < 1 || cfg.sharp_n > noise.spectrum().grid().kmax() {
            return Err(contract(format!("sharp truncation {} outside lattice", cfg.sharp_n)));
        }
        Ok(Self { noise, m, cfg })
    }

    pub fn h(&self) -> f64 {
        self.noise.base_h() * self.m as f64
    }

    /// `-P div(u (x) u)` truncated to the retained box.
    pub fn nonlinearity(&self, u: &SpectralField) -> Result<SpectralField> {
        let g = u.grid();
        let m = product_side(g);
        let p = u.to_physical_side(m);
        let t = TensorField::from_physical(g, &PhysicalField::sym_outer(&p, &p)?)?;
        Ok(minus_p_div(&t).truncate_box(self.cfg.sharp_n))
    }

    fn rk4(&self, u: &SpectralField, h: f64) -> Result<SpectralField> {
        let k1 = self.nonlinearity(u)?;
        let k2 = self.nonlinearity(&u.axpy(0.5 * h, &k1)?)?;
        let k3 = self.nonlinearity(&u.axpy(0.5 * h, &k2)?)?;
        let k4 = self.nonlinearity(&u.axpy(h, &k3)?)?;
        let mut out = u.clone();
        out.add_scaled(h / 6.0, &k1);
        out.add_scaled(h / 3.0, &k2);
        out.add_scaled(h / 3.0, &k3);
        out.add_scaled(h / 6.0, &k4);
        Ok(out)
    }

    pub fn step(&self, s: &mut GalerkinState) -> Result<()> {
        let h = self.h();
        let cfg = self.cfg;
        let mut u = match (cfg.nonlinear, cfg.scheme) {
            (true, Scheme::SplitRk4) => {
                let a = self.rk4(&s.u, h)?;
                if cfg.viscous {
                    a.heat(h)?
                } else {
                    a
                }
            }
            (nl, scheme) => {
                let f = if nl {
                    self.nonlinearity(&s.u)?
                } else {
                    SpectralField::zeros(s.u.grid())
                };
                if cfg.viscous {
                    exp_step(&s.u, &f, h, scheme)
                } else {
                    s.u.axpy(h, &f)?
                }
            }
        };
        if cfg.noisy {
            let eta = self.noise.increment(s.step, self.m);
            let eta = if cfg.viscous {
                eta
            } else {
                // without dissipation the increment is a plain Brownian step
                let g = eta.grid();
                eta.multiplier(|idx| {
                    let q = g.k_sq(idx);
                    (h / ou_variance(q, h)).sqrt()
                })
            };
            u.add_scaled(1.0, &eta.truncate_box(cfg.sharp_n));
        }
        s.u = u;
        s.t += h;
        s.step += self.m;
        check_finite(&s.u, s.t, "u")
    }
}

/// Any pipeline state that can be checkpointed.
#[derive(Clone, Debug, PartialEq)]
pub enum PipelineState {
    Ansatz(AnsatzState),
    Dpd(DpdState),
    Galerkin(GalerkinState),
}

/// Run-level data stored next to the fields in a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub key: StreamKey,
    pub base_h: f64,
    pub m: u64,
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNSC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Writes a checkpoint: header, field snapshots, then a SHA-256 digest of
/// everything before it.
pub fn write_checkpoint<W: Write>(mut w: W, state: &PipelineState, meta: &CheckpointMeta) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let (kind, t, step, lambda, k, sat) = match state {
        PipelineState::Ansatz(s) => (0u8, s.t, s.step, s.lambda, s.k, s.k_saturated),
        PipelineState::Dpd(s) => (1u8, s.t, s.step, 0.0, 0.0, false),
        PipelineState::Galerkin(s) => (2u8, s.t, s.step, 0.0, 0.0, false),
    };
    buf.push(kind);
    buf.push(sat as u8);
    for v in [t, lambda, k, meta.base_h] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&step.to_le_bytes());
    buf.extend_from_slice(&meta.m.to_le_bytes());
    buf.extend_from_slice(&meta.key.seed.to_le_bytes());
    buf.extend_from_slice(&meta.key.stream.to_le_bytes());
    let fields: Vec<&SpectralField> = match state {
        PipelineState::Ansatz(s) => {
            let mut v = vec![&s.x.x];
            if let Some(r) = &s.x.rough {
                v.push(r);
            }
            v.extend([&s.y, &s.w_h, &s.w_l, &s.r_term]);
            v
        }
        PipelineState::Dpd(s) => vec![&s.x.x, &s.v],
        PipelineState::Galerkin(s) => vec![&s.u],
    };
    let has_rough = matches!(state, PipelineState::Ansatz(s) if s.x.rough.is_some());
    buf.push(has_rough as u8);
    buf.extend_from_slice(&(fields.len() as u32).to_le_bytes());
    for f in fields {
        f.write_snapshot(&mut buf)?;
    }
    let digest = Sha256::digest(&buf);
    w.write_all(&buf)?;
    w.write_all(&digest)?;
    Ok(())
}

struct Cursor<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn field(&mut self) -> Result<SpectralField> {
        let mut r = &self.buf[self.pos..];
        let before = r.len();
        let f = SpectralField::read_snapshot(&mut r)?;
        self.pos += before - r.len();
        Ok(f)
    }
}

/// Reads a checkpoint written by [`write_checkpoint`]; any corruption is a
/// [`Error::Format`].
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(PipelineState, CheckpointMeta)> {
    let mut all = Vec::new();
    r.read_to_end(&mut all)?;
    if all.len() < 32 + 4 {
        return Err(Error::Format("checkpoint too short".into()));
    }
    let (body, digest) = all.split_at(all.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checkpoint checksum mismatch".into()));
    }
    let mut c = Cursor { buf: body, pos: 0 };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = c.u8()?;
    let sat = c.u8()? != 0;
    let (t, lambda, k, base_h) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?);
    let step = c.u64()?;
    let m = c.u64()?;
    let seed = c.u64()?;
    let stream = c.u32()?;
    let has_rough = c.u8()? != 0;
    let nfields = c.u32()? as usize;
    let expected = match kind {
        0 => 5 + has_rough as usize,
        1 => 2,
        2 => 1,
        _ => return Err(Error::Format(format!("unknown checkpoint kind {kind}"))),
    };
    if nfields != expected {
        return Err(Error::Format(format!("expected {expected} fields, found {nfields}")));
    }
    let mut fields = Vec::with_capacity(nfields);
    for _ in 0..nfields {
        fields.push(c.field()?);
    }
    if c.pos != body.len() {
        return Err(Error::Format("trailing bytes in checkpoint".into()));
    }
    let grid = fields[0].grid();
    if fields.iter().any(|f| f.grid() != grid) {
        return Err(Error::Format("fields on different grids".into()));
    }
    let mut it = fields.into_iter();
    let state = match kind {
        0 => {
            let x = it.next().unwrap();
            let rough = if has_rough { it.next() } else { None };
            PipelineState::Ansatz(AnsatzState {
                t,
                step,
                x: StochasticConvolution {
                    x,
                    rough,
                    t,
                    part: NoisePart::Xi1,
                },
                y: it.next().unwrap(),
                w_h: it.next().unwrap(),
                w_l: it.next().unwrap(),
                lambda,
                k,
                k_saturated: sat,
                r_term: it.next().unwrap(),
            })
        }
        1 => {
            let x = it.next().unwrap();
            PipelineState::Dpd(DpdState {
                t,
                step,
                x: StochasticConvolution {
                    x,
                    rough: None,
                    t,
                    part: NoisePart::Xi1,
                },
                v: it.next().unwrap(),
            })
        }
        _ => PipelineState::Galerkin(GalerkinState {
            t,
            step,
            u: it.next().unwrap(),
        }),
    };
    Ok((
        state,
        CheckpointMeta {
            key: StreamKey::new(seed, stream),
            base_h,
            m,
        },
    ))
}

/// Product rule used by every pipeline in this module.
pub const PIPELINE_RULE: DealiasRule = DealiasRule::None;
