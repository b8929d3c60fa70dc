//! Littlewood–Paley blocks, Besov norms and frequency projections.

use crate::error::{contract, Result};
use crate::fft::collocation_side;
use crate::field::{PhysicalField, SpectralField, TensorField};
use crate::grid::TorusGrid;

/// Oversampling used for every `L^p` quadrature in this module.
pub const NORM_OVERSAMPLE: usize = 2;

const CHI_INNER: f64 = 0.75;
const CHI_OUTER: f64 = 4.0 / 3.0;

fn psi(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// Smooth step: 0 for `x <= 0`, 1 for `x >= 1`.
fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        let a = psi(x);
        a / (a + psi(1.0 - x))
    }
}

/// Radial cutoff: 1 on `[0, 3/4]`, 0 on `[4/3, inf)`, smooth in between.
pub fn chi(r: f64) -> f64 {
    1.0 - smooth_step((r - CHI_INNER) / (CHI_OUTER - CHI_INNER))
}

/// Annular profile `rho(r) = chi(r/2) - chi(r)`, supported in `[3/4, 8/3]`.
pub fn rho(r: f64) -> f64 {
    chi(r / 2.0) - chi(r)
}

/// `log_2^+ (x) = max(log_2 x, 0)`.
pub fn log2_plus(x: f64) -> f64 {
    if x <= 1.0 {
        0.0
    } else {
        x.log2()
    }
}

/// Fields that can be localised in frequency and sampled in space.
pub trait ModalField: Clone {
    fn lattice(&self) -> TorusGrid;
    fn apply_symbol(&self, m: &dyn Fn(usize) -> f64) -> Self;
    fn samples(&self, side: usize) -> PhysicalField;
    fn l2_sq(&self) -> f64;
}

impl ModalField for SpectralField {
    fn lattice(&self) -> TorusGrid {
        self.grid()
    }
    fn apply_symbol(&self, m: &dyn Fn(usize) -> f64) -> Self {
        self.multiplier(m)
    }
    fn samples(&self, side: usize) -> PhysicalField {
        self.to_physical_side(side)
    }
    fn l2_sq(&self) -> f64 {
        self.l2_norm_sq()
    }
}

impl ModalField for TensorField {
    fn lattice(&self) -> TorusGrid {
        self.grid()
    }
    fn apply_symbol(&self, m: &dyn Fn(usize) -> f64) -> Self {
        self.multiplier(m)
    }
    fn samples(&self, side: usize) -> PhysicalField {
        self.to_physical_side(side)
    }
    fn l2_sq(&self) -> f64 {
        self.l2_norm_sq()
    }
}

/// Regularity and integrability indices of a Besov space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BesovIndex {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
}

impl BesovIndex {
    pub fn new(alpha: f64, p: f64, q: f64) -> Self {
        Self { alpha, p, q }
    }

    /// `C^alpha = B^alpha_{inf,inf}`.
    pub fn holder(alpha: f64) -> Self {
        Self::new(alpha, f64::INFINITY, f64::INFINITY)
    }

    /// `H^alpha = B^alpha_{2,2}`.
    pub fn sobolev(alpha: f64) -> Self {
        Self::new(alpha, 2.0, 2.0)
    }

    fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) || !(self.q >= 1.0) {
            return Err(contract(format!(
                "Besov indices need p, q >= 1 (got p = {}, q = {})",
                self.p, self.q
            )));
        }
        Ok(())
    }
}

/// Which frequency projection to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// `H_lambda`: blocks `j >= ceil(log_2^+ lambda)`.
    High,
    /// `L_lambda = I - H_lambda`.
    Low,
    /// `P_{lambda,K} = 1_{lambda <= K} (H_lambda - H_K)`.
    Band,
}

/// Dyadic partition of unity sampled on a lattice.
#[derive(Clone, Debug)]
pub struct DyadicSystem {
    grid: TorusGrid,
    j_max: i32,
    radius: Vec<f64>,
    // weights[j + 1][idx]
    weights: Vec<Vec<f64>>,
}

impl DyadicSystem {
    pub fn new(grid: TorusGrid) -> Self {
        let radius: Vec<f64> = (0..grid.len()).map(|i| grid.k_sq(i).sqrt()).collect();
        let r_max = grid.max_radius();
        // smallest J with chi(r / 2^{J+1}) = 1 on the lattice
        let mut j_max = 0;
        while r_max > CHI_INNER * 2f64.powi(j_max + 1) {
            j_max += 1;
        }
        let mut weights = Vec::with_capacity(j_max as usize + 2);
        weights.push(radius.iter().map(|&r| chi(r)).collect());
        for j in 0..=j_max {
            let s = 2f64.powi(j);
            weights.push(
                radius
                    .iter()
                    .map(|&r| {
                        if j == j_max {
                            // the outer cutoff equals one exactly here
                            1.0 - chi(r / s)
                        } else {
                            chi(r / (2.0 * s)) - chi(r / s)
                        }
                    })
                    .collect(),
            );
        }
        Self {
            grid,
            j_max,
            radius,
            weights,
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    /// Largest block index with a lattice point in its support.
    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn block_range(&self) -> std::ops::RangeInclusive<i32> {
        -1..=self.j_max
    }

    /// Weight of block `j` (`chi` for `j = -1`) at lattice index `idx`.
    pub fn weight(&self, j: i32, idx: usize) -> f64 {
        if j < -1 || j > self.j_max {
            0.0
        } else {
            self.weights[(j + 1) as usize][idx]
        }
    }

    pub fn radius(&self, idx: usize) -> f64 {
        self.radius[idx]
    }

    /// `max_k |chi(k) + sum_j rho_j(k) - 1|`.
    pub fn partition_residual(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| (self.weights.iter().map(|w| w[i]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check<F: ModalField>(&self, f: &F) -> Result<()> {
        if f.lattice() != self.grid {
            return Err(crate::error::Error::GridMismatch {
                left: f.lattice().n(),
                right: self.grid.n(),
            });
        }
        Ok(())
    }

    /// `Delta_j f`; blocks outside `[-1, j_max]` are zero.
    pub fn block<F: ModalField>(&self, f: &F, j: i32) -> F {
        f.apply_symbol(&|idx| self.weight(j, idx))
    }

    /// `Delta_{ceil(j)} f` for a real index.
    pub fn block_real<F: ModalField>(&self, f: &F, j: f64) -> F {
        self.block(f, j.ceil() as i32)
    }

    /// All blocks `j = -1 ..= j_max`.
    pub fn blocks<F: ModalField>(&self, f: &F) -> Vec<F> {
        self.block_range().map(|j| self.block(f, j)).collect()
    }

    /// `||Delta_j f||_{L^p}` for `j = -1 ..= j_max` (vector index `j + 1`).
    pub fn block_lp_norms<F: ModalField>(&self, f: &F, p: f64) -> Result<Vec<f64>> {
        Ok(self
            .block_lp_norms_multi(f, &[p])?
            .into_iter()
            .map(|v| v[0])
            .collect())
    }

    /// Block norms for several exponents at once: `out[j + 1][i]` is the
    /// `L^{ps[i]}` norm of block `j`.
    pub fn block_lp_norms_multi<F: ModalField>(&self, f: &F, ps: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(f)?;
        if ps.iter().any(|&p| !(p >= 1.0)) {
            return Err(contract("L^p needs p >= 1"));
        }
        let m = collocation_side(self.grid, NORM_OVERSAMPLE)?;
        Ok(self
            .block_range()
            .map(|j| {
                let b = self.block(f, j);
                if b.l2_sq() == 0.0 {
                    return vec![0.0; ps.len()];
                }
                let s = b.samples(m);
                ps.iter().map(|&p| s.lp_norm(p)).collect()
            })
            .collect())
    }

    /// Besov norm from precomputed block norms (`norms[j + 1]`).
    pub fn besov_from_blocks(norms: &[f64], alpha: f64, q: f64) -> f64 {
        let terms = norms
            .iter()
            .enumerate()
            .map(|(i, &v)| 2f64.powf((i as f64 - 1.0) * alpha) * v);
        if q.is_infinite() {
            terms.fold(0.0, f64::max)
        } else {
            terms.map(|t| t.powf(q)).sum::<f64>().powf(1.0 / q)
        }
    }

    /// `||f||_{B^alpha_{p,q}}`.
    pub fn besov_norm<F: ModalField>(&self, f: &F, idx: BesovIndex) -> Result<f64> {
        idx.validate()?;
        let norms = self.block_lp_norms(f, idx.p)?;
        Ok(Self::besov_from_blocks(&norms, idx.alpha, idx.q))
    }

    /// `||f||_{C^alpha}`.
    pub fn holder_norm<F: ModalField>(&self, f: &F, alpha: f64) -> Result<f64> {
        self.besov_norm(f, BesovIndex::holder(alpha))
    }

    /// First block index retained by `H_lambda`.
    pub fn high_start(lambda: f64) -> i32 {
        log2_plus(lambda).ceil() as i32
    }

    /// Symbol of `H_lambda` at `idx`: `1 - chi(|k| / 2^{j0})`.
    pub fn high_symbol(&self, lambda: f64, idx: usize) -> f64 {
        let j0 = Self::high_start(lambda);
        if j0 > self.j_max {
            return 0.0;
        }
        1.0 - chi(self.radius[idx] / 2f64.powi(j0))
    }

    /// Symbol of the chosen projection at `idx`.
    pub fn projection_symbol(&self, which: Projection, lambda: f64, k: f64, idx: usize) -> f64 {
        match which {
            Projection::High => self.high_symbol(lambda, idx),
            Projection::Low => 1.0 - self.high_symbol(lambda, idx),
            Projection::Band => {
                if lambda <= k {
                    self.high_symbol(lambda, idx) - self.high_symbol(k, idx)
                } else {
                    0.0
                }
            }
        }
    }

    /// `H_lambda f`, `L_lambda f` or `P_{lambda,K} f`.
    pub fn freq_project<F: ModalField>(&self, f: &F, which: Projection, lambda: f64, k: f64) -> Result<F> {
        self.check(f)?;
        if !(lambda > 0.0) {
            return Err(contract(format!("projection scale must be positive, got {lambda}")));
        }
        Ok(f.apply_symbol(&|idx| self.projection_symbol(which, lambda, k, idx)))
    }

    pub fn high<F: ModalField>(&self, f: &F, lambda: f64) -> F {
        f.apply_symbol(&|idx| self.high_symbol(lambda, idx))
    }

    pub fn low<F: ModalField>(&self, f: &F, lambda: f64) -> F {
        f.apply_symbol(&|idx| 1.0 - self.high_symbol(lambda, idx))
    }

    pub fn band<F: ModalField>(&self, f: &F, lambda: f64, k: f64) -> F {
        f.apply_symbol(&|idx| self.projection_symbol(Projection::Band, lambda, k, idx))
    }

    /// `||H_M f||_{B^{alpha - eps}_{p,1}}`.
    pub fn high_freq_decay<F: ModalField>(&self, f: &F, m: f64, alpha: f64, eps: f64, p: f64) -> Result<f64> {
        if !(m >= 1.0) || !(eps > 0.0) {
            return Err(contract("high_freq_decay needs M >= 1 and eps > 0"));
        }
        self.besov_norm(&self.high(f, m), BesovIndex::new(alpha - eps, p, 1.0))
    }
}

/// `e^{t Delta} f`.
pub fn heat_semigroup(f: &SpectralField, t: f64) -> Result<SpectralField> {
    f.heat(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use num_complex::Complex64;

    #[test]
    fn profile_supports() {
        assert_eq!(chi(0.0), 1.0);
        assert_eq!(chi(0.75), 1.0);
        assert_eq!(chi(4.0 / 3.0), 0.0);
        assert_eq!(rho(0.74), 0.0);
        assert_eq!(rho(8.0 / 3.0 + 1e-12), 0.0);
        assert!(rho(1.5) > 0.99);
    }

    #[test]
    fn radius_three_sits_in_blocks_one_and_two() {
        let d = DyadicSystem::new(TorusGrid::new(16).unwrap());
        let idx = d.grid().index_of(3, 0).unwrap();
        let live: Vec<i32> = d.block_range().filter(|&j| d.weight(j, idx) != 0.0).collect();
        assert_eq!(live, vec![1]);
        assert_eq!(d.weight(1, idx) + d.weight(2, idx), 1.0);
    }

    #[test]
    fn partition_exact() {
        for n in [4, 8, 30, 64, 128] {
            let d = DyadicSystem::new(TorusGrid::new(n).unwrap());
            assert!(d.partition_residual() <= 1e-15, "n = {n}");
        }
    }

    #[test]
    fn blocks_reconstruct() {
        let g = TorusGrid::new(32).unwrap();
        let d = DyadicSystem::new(g);
        let f = SpectralField::random(g, &mut CounterRng::new(3, 0, 0), |_| 1.0);
        let mut s = SpectralField::zeros(g);
        for b in d.blocks(&f) {
            s = s.add(&b).unwrap();
        }
        assert!(s.sub(&f).unwrap().l2_norm() <= 1e-13 * f.l2_norm());
    }

    #[test]
    fn unimodular_mode_besov_norm() {
        let g = TorusGrid::new(32).unwrap();
        let d = DyadicSystem::new(g);
        // |k| = 6 lies where rho_2 = 1
        let k = (6, 0);
        let idx = g.index_of(6, 0).unwrap();
        assert_eq!(d.weight(2, idx), 1.0);
        let c = Complex64::new(0.5, 0.0);
        let f = SpectralField::mode(g, k, c).unwrap();
        // c e_k + c.c. has sup norm 2|c| and L^2 norm sqrt(2)|c|
        let v = d.besov_norm(&f, BesovIndex::holder(0.5)).unwrap();
        assert!((v - 2.0 * c.norm() * 2.0).abs() < 1e-12);
        let v = d.besov_norm(&f, BesovIndex::new(0.5, 2.0, 3.0)).unwrap();
        assert!((v - 2f64.sqrt() * c.norm() * 2.0).abs() < 1e-12);
    }

    #[test]
    fn bad_indices_rejected() {
        let g = TorusGrid::new(8).unwrap();
        let d = DyadicSystem::new(g);
        let f = SpectralField::zeros(g);
        assert!(d.besov_norm(&f, BesovIndex::new(0.0, 0.5, 1.0)).is_err());
        assert!(d.besov_norm(&f, BesovIndex::new(0.0, 1.0, 0.9)).is_err());
        assert_eq!(d.besov_norm(&f, BesovIndex::holder(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn projections_split() {
        let g = TorusGrid::new(64).unwrap();
        let d = DyadicSystem::new(g);
        let f = SpectralField::random(g, &mut CounterRng::new(5, 0, 0), |_| 1.0);
        let h = d.high(&f, 4.0);
        let l = d.low(&f, 4.0);
        assert!(h.add(&l).unwrap().sub(&f).unwrap().l2_norm() < 1e-14 * f.l2_norm());
        let p = d.freq_project(&f, Projection::Band, 4.0, 32.0).unwrap();
        let diff = d.high(&f, 4.0).sub(&d.high(&f, 32.0)).unwrap();
        assert!(p.sub(&diff).unwrap().l2_norm() < 1e-14 * f.l2_norm());
        let p0 = d.freq_project(&f, Projection::Band, 8.0, 4.0).unwrap();
        assert_eq!(p0.l2_norm(), 0.0);
        let h1 = d.high(&f, 0.5);
        let direct = f.sub(&d.block(&f, -1)).unwrap();
        assert!(h1.sub(&direct).unwrap().l2_norm() < 1e-14 * f.l2_norm());
    }
}
