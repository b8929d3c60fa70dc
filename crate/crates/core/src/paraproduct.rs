//! Bony decomposition of the symmetrised product.
//!
//! `f ⩿ g = sum_j S_{j-2} f (x)_s Delta_j g` with `S_{j-2} = sum_{i <= j-2} Delta_i`,
//! `f ⩾ g = g ⩿ f`, and `f ⊙ g = sum_{|i-j| <= 1} Delta_i f (x)_s Delta_j g`.
//! Block products are accumulated in physical space on the padded product
//! grid, so the three pieces add up to `f (x)_s g` to rounding.

use crate::error::{Error, Result};
use crate::field::{product_side, sym_tensor, DealiasRule, PhysicalField, SpectralField, TensorField};
use crate::lp::DyadicSystem;

/// The three Bony pieces of `f (x)_s g`.
#[derive(Clone, Debug)]
pub struct BonyParts {
    /// `f ⩿ g`
    pub lo: TensorField,
    /// `f ⊙ g`
    pub res: TensorField,
    /// `f ⩾ g`
    pub hi: TensorField,
}

fn check(d: &DyadicSystem, f: &SpectralField, g: &SpectralField) -> Result<()> {
    for h in [f, g] {
        if h.grid() != d.grid() {
            return Err(Error::GridMismatch {
                left: h.grid().n(),
                right: d.grid().n(),
            });
        }
    }
    Ok(())
}

/// Samples of every block of a field on the product grid, with the running
/// sums `S_j f`. Linear in the field, so pieces may be added.
#[derive(Clone, Debug)]
pub struct BlockSamples {
    // None marks an empty block
    blocks: Vec<Option<PhysicalField>>,
    sums: Vec<PhysicalField>,
}

impl BlockSamples {
    pub fn new(d: &DyadicSystem, f: &SpectralField) -> Self {
        let m = product_side(d.grid());
        let blocks: Vec<Option<PhysicalField>> = d
            .block_range()
            .map(|j| {
                let b = d.block(f, j);
                (b.l2_norm_sq() > 0.0).then(|| b.to_physical_side(m))
            })
            .collect();
        let mut acc = PhysicalField::zeros(m, 2);
        let sums = blocks
            .iter()
            .map(|b| {
                if let Some(b) = b {
                    acc.add_assign(b);
                }
                acc.clone()
            })
            .collect();
        Self { blocks, sums }
    }

    /// Samples of the blocks of `f + g`.
    pub fn sum(&self, other: &BlockSamples) -> BlockSamples {
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => {
                    let mut c = a.clone();
                    c.add_assign(b);
                    Some(c)
                }
                (Some(a), None) => Some(a.clone()),
                (None, b) => b.clone(),
            })
            .collect();
        let sums = self
            .sums
            .iter()
            .zip(&other.sums)
            .map(|(a, b)| {
                let mut c = a.clone();
                c.add_assign(b);
                c
            })
            .collect();
        BlockSamples { blocks, sums }
    }

    /// Samples of the whole field.
    pub fn total(&self) -> &PhysicalField {
        self.sums.last().expect("at least one block")
    }
}

/// `t += s (f ⩿ g)` on the product grid.
pub fn accumulate_lo(t: &mut PhysicalField, f: &BlockSamples, g: &BlockSamples, s: f64) -> Result<()> {
    for j in 1..g.blocks.len() as i32 - 1 {
        if let Some(bg) = &g.blocks[(j + 1) as usize] {
            // S_{j-2} sits at index j - 1
            t.add_sym_outer(&f.sums[(j - 1) as usize], bg, s)?;
        }
    }
    Ok(())
}

/// `t += s (f ⊙ g)` on the product grid.
pub fn accumulate_res(t: &mut PhysicalField, f: &BlockSamples, g: &BlockSamples, s: f64) -> Result<()> {
    let nb = f.blocks.len();
    let m = t.side();
    for i in 0..nb {
        let Some(bf) = &f.blocks[i] else { continue };
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(nb - 1);
        let mut near = PhysicalField::zeros(m, 2);
        let mut any = false;
        for bg in g.blocks[lo..=hi].iter().flatten() {
            near.add_assign(bg);
            any = true;
        }
        if any {
            t.add_sym_outer(bf, &near, s)?;
        }
    }
    Ok(())
}

fn lo_from(d: &DyadicSystem, f: &BlockSamples, g: &BlockSamples) -> Result<TensorField> {
    let mut t = PhysicalField::zeros(product_side(d.grid()), 3);
    accumulate_lo(&mut t, f, g, 1.0)?;
    TensorField::from_physical(d.grid(), &t)
}

fn res_from(d: &DyadicSystem, f: &BlockSamples, g: &BlockSamples) -> Result<TensorField> {
    let mut t = PhysicalField::zeros(product_side(d.grid()), 3);
    accumulate_res(&mut t, f, g, 1.0)?;
    TensorField::from_physical(d.grid(), &t)
}

/// `f ⩿ g`.
pub fn para_lo(d: &DyadicSystem, f: &SpectralField, g: &SpectralField) -> Result<TensorField> {
    check(d, f, g)?;
    lo_from(d, &BlockSamples::new(d, f), &BlockSamples::new(d, g))
}

/// `f ⩾ g := g ⩿ f`.
pub fn para_hi(d: &DyadicSystem, f: &SpectralField, g: &SpectralField) -> Result<TensorField> {
    para_lo(d, g, f)
}

/// `f ⊙ g`.
pub fn resonant(d: &DyadicSystem, f: &SpectralField, g: &SpectralField) -> Result<TensorField> {
    check(d, f, g)?;
    res_from(d, &BlockSamples::new(d, f), &BlockSamples::new(d, g))
}

/// `f ⩾̸ g := f ⩾ g + f ⊙ g`.
pub fn para_hi_res(d: &DyadicSystem, f: &SpectralField, g: &SpectralField) -> Result<TensorField> {
    let p = bony_parts(d, f, g)?;
    p.hi.add(&p.res)
}

/// `f ⩿̸ g := f ⩿ g + f ⊙ g`.
pub fn para_lo_res(d: &DyadicSystem, f: &SpectralField, g: &SpectralField) -> Result<TensorField> {
    let p = bony_parts(d, f, g)?;
    p.lo.add(&p.res)
}

/// All three pieces from a single set of block transforms.
pub fn bony_parts(d: &DyadicSystem, f: &SpectralField, g: &SpectralField) -> Result<BonyParts> {
    check(d, f, g)?;
    let bf = BlockSamples::new(d, f);
    let bg = BlockSamples::new(d, g);
    Ok(BonyParts {
        lo: lo_from(d, &bf, &bg)?,
        res: res_from(d, &bf, &bg)?,
        hi: lo_from(d, &bg, &bf)?,
    })
}

/// `||f ⩿ g + f ⊙ g + f ⩾ g - f (x)_s g||_{L^2}`.
pub fn bony_complete(d: &DyadicSystem, f: &SpectralField, g: &SpectralField) -> Result<f64> {
    let p = bony_parts(d, f, g)?;
    let full = sym_tensor(f, g, DealiasRule::None)?;
    Ok(p.lo.add(&p.res)?.add(&p.hi)?.sub(&full)?.l2_norm())
}

/// Reference double sum over an arbitrary set of block pairs, each product
/// formed separately. Slow; used to validate the fast paths.
pub fn block_pair_sum(
    d: &DyadicSystem,
    f: &SpectralField,
    g: &SpectralField,
    keep: impl Fn(i32, i32) -> bool,
) -> Result<TensorField> {
    check(d, f, g)?;
    let mut out = TensorField::zeros(d.grid());
    for i in d.block_range() {
        let fi = d.block(f, i);
        for j in d.block_range() {
            if keep(i, j) {
                let t = sym_tensor(&fi, &d.block(g, j), DealiasRule::None)?;
                out = out.add(&t)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use crate::rng::CounterRng;
    use num_complex::Complex64;

    fn pair(n: usize, seed: u64) -> (DyadicSystem, SpectralField, SpectralField) {
        let g = TorusGrid::new(n).unwrap();
        let mut r = CounterRng::new(seed, 0, 0);
        let f = SpectralField::random(g, &mut r, |_| 1.0);
        let h = SpectralField::random(g, &mut r, |k| 1.0 / (1.0 + k));
        (DyadicSystem::new(g), f, h)
    }

    #[test]
    fn fast_paths_match_double_sum() {
        let (d, f, g) = pair(16, 1);
        let lo = para_lo(&d, &f, &g).unwrap();
        let lo_ref = block_pair_sum(&d, &f, &g, |i, j| i <= j - 2).unwrap();
        assert!(lo.sub(&lo_ref).unwrap().l2_norm() < 1e-12 * f.l2_norm() * g.l2_norm());
        let res = resonant(&d, &f, &g).unwrap();
        let res_ref = block_pair_sum(&d, &f, &g, |i, j| (i - j).abs() <= 1).unwrap();
        assert!(res.sub(&res_ref).unwrap().l2_norm() < 1e-12 * f.l2_norm() * g.l2_norm());
    }

    #[test]
    fn completeness() {
        let (d, f, g) = pair(32, 2);
        let r = bony_complete(&d, &f, &g).unwrap();
        assert!(r <= 1e-11 * f.l2_norm() * g.l2_norm(), "{r}");
    }

    #[test]
    fn constant_low_factor() {
        // |k| = 1 lives in blocks -1 and 0, |k| = 12 only in block 3
        let g = TorusGrid::new(32).unwrap();
        let d = DyadicSystem::new(g);
        let f = SpectralField::mode(g, (0, 1), Complex64::new(0.7, 0.1)).unwrap();
        let h = SpectralField::mode(g, (12, 0), Complex64::new(0.2, -0.4)).unwrap();
        let lo = para_lo(&d, &f, &h).unwrap();
        let full = sym_tensor(&f, &h, DealiasRule::None).unwrap();
        assert!(lo.sub(&full).unwrap().l2_norm() < 1e-13);
        assert!(para_lo(&d, &h, &f).unwrap().l2_norm() < 1e-13);
    }

    #[test]
    fn resonant_symmetric_and_separated_blocks_vanish() {
        let (d, f, g) = pair(32, 3);
        let a = resonant(&d, &f, &g).unwrap();
        let b = resonant(&d, &g, &f).unwrap();
        assert!(a.sub(&b).unwrap().l2_norm() < 1e-14 * a.l2_norm());
        let grid = d.grid();
        let x = SpectralField::mode(grid, (1, 0), Complex64::new(1.0, 0.0)).unwrap();
        let y = SpectralField::mode(grid, (12, 0), Complex64::new(1.0, 0.0)).unwrap();
        assert_eq!(resonant(&d, &x, &y).unwrap().l2_norm(), 0.0);
    }

    #[test]
    fn zero_argument() {
        let (d, f, _) = pair(16, 4);
        let z = SpectralField::zeros(d.grid());
        assert_eq!(para_lo(&d, &f, &z).unwrap().l2_norm(), 0.0);
        assert_eq!(para_lo(&d, &z, &f).unwrap().l2_norm(), 0.0);
    }
}
