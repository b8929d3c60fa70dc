//! Browser demo: a live Galerkin vorticity field, Littlewood–Paley block
//! images and the Bony split of a product.

use num_complex::Complex64;
use sns_core::fft::coeffs_to_samples;
use sns_core::noise::{NoiseSource, NoiseSpectrum};
use sns_core::paraproduct::bony_parts;
use sns_core::rng::{CounterRng, StreamKey};
use sns_core::solver::{Galerkin, GalerkinConfig, GalerkinState, Scheme};
use sns_core::{sym_tensor, DealiasRule, DyadicSystem, Error, Result, SpectralField, TorusGrid};
use wasm_bindgen::prelude::*;

fn js_err(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Vorticity `i (k1 u2 - k2 u1)` sampled on the `n x n` grid.
pub fn vorticity(u: &SpectralField) -> Vec<f64> {
    let g = u.grid();
    let w: Vec<Complex64> = (0..g.len())
        .map(|idx| {
            let (k1, k2) = g.k(idx);
            let [a, b] = u.coeff(idx);
            Complex64::new(0.0, 1.0) * (b * k1 as f64 - a * k2 as f64)
        })
        .collect();
    coeffs_to_samples(g, &w, None, g.n()).0
}

/// Diverging blue-white-red colour map, symmetric about zero. RGBA bytes,
/// row-major.
pub fn colorize(v: &[f64]) -> Vec<u8> {
    let s = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut out = Vec::with_capacity(4 * v.len());
    for &x in v {
        let t = (x / s).clamp(-1.0, 1.0);
        let (r, g, b) = if t >= 0.0 {
            (1.0, 1.0 - t, 1.0 - t)
        } else {
            (1.0 + t, 1.0 + t, 1.0)
        };
        out.extend_from_slice(&[(255.0 * r) as u8, (255.0 * g) as u8, (255.0 * b) as u8, 255]);
    }
    out
}

fn random_field(g: TorusGrid, seed: u64, stream: u32) -> SpectralField {
    let mut r = CounterRng::new(seed, stream, 3);
    SpectralField::random(g, &mut r, |k| 1.0 / (1.0 + k))
}

/// A stochastically forced sharp-Galerkin run that can be stepped from
/// JavaScript.
#[wasm_bindgen]
pub struct Simulation {
    source: NoiseSource,
    cfg: GalerkinConfig,
    state: GalerkinState,
}

#[wasm_bindgen]
impl Simulation {
    /// `n` even, noise `phi_k = amplitude` on every mode, time step `h`.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, amplitude: f64, h: f64, seed: u64) -> std::result::Result<Simulation, JsError> {
        Self::create(n, amplitude, h, seed).map_err(js_err)
    }

    pub fn advance(&mut self, steps: u32) -> std::result::Result<(), JsError> {
        self.run(steps).map_err(js_err)
    }

    pub fn time(&self) -> f64 {
        self.state.t
    }

    pub fn energy(&self) -> f64 {
        0.5 * self.state.u.l2_norm_sq()
    }

    pub fn size(&self) -> usize {
        self.state.u.grid().n()
    }

    /// RGBA image of the vorticity.
    pub fn vorticity_rgba(&self) -> Vec<u8> {
        colorize(&vorticity(&self.state.u))
    }
}

impl Simulation {
    pub fn create(n: usize, amplitude: f64, h: f64, seed: u64) -> Result<Simulation> {
        let g = TorusGrid::new(n)?;
        let sp = NoiseSpectrum::constant(g, amplitude, 0.0)?;
        let source = NoiseSource::new(sp, StreamKey::new(seed, 0), h)?;
        let mut cfg = GalerkinConfig::new(g.kmax());
        cfg.scheme = Scheme::SplitRk4;
        let u0 = random_field(g, seed, 1).truncate_box(g.kmax());
        Ok(Simulation {
            source,
            cfg,
            state: GalerkinState::new(u0, g.kmax()),
        })
    }

    pub fn run(&mut self, steps: u32) -> Result<()> {
        let gal = Galerkin::new(&self.source, 1, self.cfg)?;
        for _ in 0..steps {
            gal.step(&mut self.state)?;
        }
        Ok(())
    }

    pub fn field(&self) -> &SpectralField {
        &self.state.u
    }
}

/// Vorticity samples of `Delta_j f` for a random field `f`.
pub fn lp_block_vorticity(n: usize, j: i32, seed: u64) -> Result<Vec<f64>> {
    let g = TorusGrid::new(n)?;
    let d = DyadicSystem::new(g);
    if !d.block_range().contains(&j) {
        return Err(Error::Contract(format!("block {j} outside {:?}", d.block_range())));
    }
    Ok(vorticity(&d.block(&random_field(g, seed, 0), j)))
}

/// RGBA image of [`lp_block_vorticity`].
#[wasm_bindgen]
pub fn lp_block_rgba(n: usize, j: i32, seed: u64) -> std::result::Result<Vec<u8>, JsError> {
    lp_block_vorticity(n, j, seed).map(|v| colorize(&v)).map_err(js_err)
}

/// Number of dyadic blocks on an `n` grid, counting `Delta_{-1}`.
#[wasm_bindgen]
pub fn block_count(n: usize) -> std::result::Result<usize, JsError> {
    let g = TorusGrid::new(n).map_err(js_err)?;
    Ok(DyadicSystem::new(g).block_range().count())
}

/// `L^2` norms of `f ⩿ g`, `f ⊙ g`, `f ⩾ g`, `f (x)_s g` and of the
/// completeness residual, for two random fields.
pub fn bony_norms(n: usize, seed: u64) -> Result<Vec<f64>> {
    let g = TorusGrid::new(n)?;
    let d = DyadicSystem::new(g);
    let f = random_field(g, seed, 0);
    let h = random_field(g, seed, 1);
    let p = bony_parts(&d, &f, &h)?;
    let full = sym_tensor(&f, &h, DealiasRule::None)?;
    let resid = p.lo.add(&p.res)?.add(&p.hi)?.sub(&full)?;
    Ok(vec![p.lo.l2_norm(), p.res.l2_norm(), p.hi.l2_norm(), full.l2_norm(), resid.l2_norm()])
}

#[wasm_bindgen]
pub fn bony_split_norms(n: usize, seed: u64) -> std::result::Result<Vec<f64>, JsError> {
    bony_norms(n, seed).map_err(js_err)
}
