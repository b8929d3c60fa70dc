//! Two-dimensional transforms between lattice coefficients and collocation
//! samples. Plans are cached per thread.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{TorusGrid, MAX_COLLOCATION_POINTS};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(m: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        let mut p = p.borrow_mut();
        let (planner, cache) = &mut *p;
        cache
            .entry((m, inverse))
            .or_insert_with(|| {
                let dir = if inverse {
                    FftDirection::Inverse
                } else {
                    FftDirection::Forward
                };
                planner.plan_fft(m, dir)
            })
            .clone()
    })
}

fn transpose(buf: &mut [Complex64], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            buf.swap(i * m + j, j * m + i);
        }
    }
}

/// Unnormalised 2D DFT of an `m x m` row-major array, in place.
/// `inverse` selects the `e^{+i}` kernel.
pub fn fft2(buf: &mut [Complex64], m: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), m * m);
    let f = plan(m, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); f.get_inplace_scratch_len()];
    f.process_with_scratch(buf, &mut scratch);
    transpose(buf, m);
    f.process_with_scratch(buf, &mut scratch);
    transpose(buf, m);
}

/// Side length of the collocation grid for a given oversampling factor.
pub fn collocation_side(grid: TorusGrid, oversample: usize) -> Result<usize> {
    if oversample == 0 {
        return Err(Error::Contract("oversample must be >= 1".into()));
    }
    let m = grid
        .n()
        .checked_mul(oversample)
        .ok_or_else(|| Error::Resource("collocation grid overflows".into()))?;
    if m.checked_mul(m).map_or(true, |p| p > MAX_COLLOCATION_POINTS) {
        return Err(Error::Resource(format!(
            "collocation grid {m}x{m} exceeds budget of {MAX_COLLOCATION_POINTS} points"
        )));
    }
    Ok(m)
}

#[inline]
fn wrap(k: i64, m: usize) -> usize {
    k.rem_euclid(m as i64) as usize
}

/// Samples of two real fields given by lattice coefficients, on an `m x m`
/// grid with `m >= n`. Passing `None` for `b` yields zeros in the second slot.
pub fn coeffs_to_samples(
    grid: TorusGrid,
    a: &[Complex64],
    b: Option<&[Complex64]>,
    m: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n();
    let i = Complex64::new(0.0, 1.0);
    let mut buf = vec![Complex64::new(0.0, 0.0); m * m];
    for idx in 0..grid.len() {
        if grid.is_nyquist(idx) {
            continue;
        }
        let mut z = a[idx];
        if let Some(b) = b {
            z += i * b[idx];
        }
        if z.re == 0.0 && z.im == 0.0 {
            continue;
        }
        let (k1, k2) = (grid.wavenumber(idx / n), grid.wavenumber(idx % n));
        buf[wrap(k1, m) * m + wrap(k2, m)] = z;
    }
    fft2(&mut buf, m, true);
    let re = buf.iter().map(|z| z.re).collect();
    let im = if b.is_some() {
        buf.iter().map(|z| z.im).collect()
    } else {
        vec![0.0; m * m]
    };
    (re, im)
}

/// Lattice coefficients of two real sampled fields, truncated to `grid`.
/// Nyquist lines of the lattice are left at zero.
pub fn samples_to_coeffs(
    grid: TorusGrid,
    m: usize,
    a: &[f64],
    b: Option<&[f64]>,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut buf: Vec<Complex64> = match b {
        Some(b) => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| Complex64::new(x, y))
            .collect(),
        None => a.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
    };
    fft2(&mut buf, m, false);
    let scale = 1.0 / (m * m) as f64;
    let n = grid.n();
    let zero = Complex64::new(0.0, 0.0);
    let mut ca = vec![zero; grid.len()];
    let mut cb = vec![zero; grid.len()];
    for idx in 0..grid.len() {
        if grid.is_nyquist(idx) {
            continue;
        }
        let (k1, k2) = (grid.wavenumber(idx / n), grid.wavenumber(idx % n));
        let z = buf[wrap(k1, m) * m + wrap(k2, m)] * scale;
        if b.is_some() {
            let zn = buf[wrap(-k1, m) * m + wrap(-k2, m)].conj() * scale;
            ca[idx] = (z + zn) * 0.5;
            cb[idx] = (z - zn) * Complex64::new(0.0, -0.5);
        } else {
            ca[idx] = z;
        }
    }
    (ca, cb)
}
