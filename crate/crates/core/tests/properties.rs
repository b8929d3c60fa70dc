use num_complex::Complex64;
use proptest::prelude::*;
use sns_core::lp::{BesovIndex, DyadicSystem};
use sns_core::noise::{ou_step, NoisePart, NoiseSource, NoiseSpectrum, StochasticConvolution};
use sns_core::paraproduct::bony_complete;
use sns_core::rng::{CounterRng, StreamKey};
use sns_core::solver::{frequency_scale, read_checkpoint, write_checkpoint, CheckpointMeta, GalerkinState, PipelineState};
use sns_core::stats::{quantile, spearman};
use sns_core::{SpectralField, TorusGrid};

fn grid() -> impl Strategy<Value = TorusGrid> {
    prop::sample::select(vec![8usize, 16, 32]).prop_map(|n| TorusGrid::new(n).unwrap())
}

fn field(g: TorusGrid, seed: u64, decay: f64) -> SpectralField {
    let mut r = CounterRng::new(seed, 0, 1);
    SpectralField::random(g, &mut r, |k| (1.0 + k).powf(-decay))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn leray_is_idempotent_and_preserves_solenoidal_fields(g in grid(), seed in any::<u64>()) {
        let f = field(g, seed, 1.0);
        prop_assert!(f.leray_project().sub(&f).unwrap().l2_norm() <= 1e-13 * f.l2_norm());
        let mut r = CounterRng::new(seed, 1, 1);
        let c: Vec<Vec<Complex64>> = (0..2).map(|_| (0..g.len()).map(|_| r.next_complex_normal()).collect()).collect();
        let mut rough = SpectralField::from_coeffs(g, c[0].clone(), c[1].clone()).unwrap();
        rough.enforce_reality();
        let p = rough.leray_project();
        prop_assert!(p.divergence_residual() <= 1e-12 * p.l2_norm());
        prop_assert!(p.leray_project().sub(&p).unwrap().l2_norm() <= 1e-13 * p.l2_norm());
        prop_assert!(p.l2_norm() <= rough.l2_norm());
    }

    #[test]
    fn heat_is_a_semigroup(g in grid(), seed in any::<u64>(), s in 0.0f64..0.5, t in 0.0f64..0.5) {
        let f = field(g, seed, 0.5);
        let a = f.heat(s).unwrap().heat(t).unwrap();
        let b = f.heat(s + t).unwrap();
        prop_assert!(a.sub(&b).unwrap().l2_norm() <= 1e-14 * f.l2_norm());
        prop_assert!(b.l2_norm() <= f.l2_norm());
    }

    #[test]
    fn blocks_sum_to_the_field(g in grid(), seed in any::<u64>()) {
        let d = DyadicSystem::new(g);
        let f = field(g, seed, 0.0);
        let sum = d.blocks(&f).into_iter().fold(SpectralField::zeros(g), |a, b| a.add(&b).unwrap());
        prop_assert!(sum.sub(&f).unwrap().l2_norm() <= 1e-13 * f.l2_norm());
    }

    #[test]
    fn besov_norms_are_monotone_in_regularity(g in grid(), seed in any::<u64>(), a in -1.0f64..1.0) {
        let d = DyadicSystem::new(g);
        let f = field(g, seed, 1.0);
        let lo = d.besov_norm(&f, BesovIndex::new(a, 2.0, f64::INFINITY)).unwrap();
        let hi = d.besov_norm(&f, BesovIndex::new(a + 0.5, 2.0, f64::INFINITY)).unwrap();
        // 2^{j a} weights with Delta_{-1} at weight 2^{-a}
        prop_assert!(lo <= hi * 2f64.powf(0.5) * (1.0 + 1e-12));
    }

    #[test]
    fn bony_pieces_sum_to_the_product(g in grid(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let d = DyadicSystem::new(g);
        let f = field(g, s1, 1.0);
        let h = field(g, s2.wrapping_add(1), 0.5);
        prop_assert!(bony_complete(&d, &f, &h).unwrap() <= 1e-12 * f.l2_norm() * h.l2_norm());
    }

    #[test]
    fn coarse_noise_steps_compose_base_steps(seed in any::<u64>(), h in 1e-4f64..1e-1) {
        let g = TorusGrid::new(16).unwrap();
        let sp = NoiseSpectrum::constant(g, 0.3, 2.0).unwrap();
        let src = NoiseSource::new(sp, StreamKey::new(seed, 3), h).unwrap();
        let mut a = StochasticConvolution::new(g, None, NoisePart::Full);
        a.x = field(g, seed, 1.0);
        let mut b = a.clone();
        ou_step(&mut a, &src, 0, 2).unwrap();
        ou_step(&mut b, &src, 0, 1).unwrap();
        ou_step(&mut b, &src, 1, 1).unwrap();
        prop_assert!(a.x.sub(&b.x).unwrap().l2_norm() <= 1e-13 * a.x.l2_norm());
    }

    #[test]
    fn frequency_scale_is_at_least_lambda_plus(g in grid(), seed in any::<u64>(), amp in 1e-3f64..1e3, lp in 1.0f64..50.0) {
        let w = field(g, seed, 1.0).scale(amp);
        let (k, saturated) = frequency_scale(&w, lp).unwrap();
        prop_assert!(k >= lp);
        prop_assert!(k <= lp.max(g.n() as f64 / 2.0) * (1.0 + 1e-12));
        prop_assert!(!saturated || k >= g.n() as f64 / 2.0 * (1.0 - 1e-12));
    }

    #[test]
    fn checkpoints_round_trip(g in grid(), seed in any::<u64>(), t in 0.0f64..10.0, step in any::<u32>()) {
        let st = GalerkinState { t, step: step as u64, u: field(g, seed, 1.0) };
        let meta = CheckpointMeta { key: StreamKey::new(seed, 1), base_h: 1e-3, m: 2 };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &PipelineState::Galerkin(st.clone()), &meta).unwrap();
        let (back, m2) = read_checkpoint(&buf[..]).unwrap();
        prop_assert_eq!(back, PipelineState::Galerkin(st));
        prop_assert_eq!(m2, meta);
    }
}

proptest! {
    #[test]
    fn spearman_is_bounded_and_rank_invariant(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let r = spearman(&x, &y);
        prop_assume!(r.is_finite());
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        let x3: Vec<f64> = x.iter().map(|a| a.powi(3)).collect();
        prop_assert!((spearman(&x3, &y) - r).abs() < 1e-12);
    }

    #[test]
    fn quantiles_are_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..50), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile(&v, lo) <= quantile(&v, hi));
    }
}
