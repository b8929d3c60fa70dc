use num_complex::Complex64;
use sns_core::{SpectralField, TorusGrid};
use sns_web::{bony_norms, colorize, lp_block_vorticity, vorticity, Simulation};

#[test]
fn vorticity_of_a_shear_mode() {
    // a single mode k = (1, 0) is a shear flow u = (0, u2(x1)), so the
    // vorticity is d u2 / d x1
    let g = TorusGrid::new(16).unwrap();
    let u = SpectralField::mode(g, (1, 0), Complex64::new(0.3, 0.7)).unwrap();
    let w = vorticity(&u);
    let p = u.to_physical(1).unwrap();
    let n = g.n();
    let dx = 2.0 * std::f64::consts::PI / n as f64;
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(p.comp(0).iter().all(|v| v.abs() < 1e-14));
    for i in 0..n {
        let next = p.comp(1)[((i + 1) % n) * n];
        let prev = p.comp(1)[((i + n - 1) % n) * n];
        let fd = (next - prev) / (2.0 * dx);
        // central differences are second order on one mode
        assert!((w[i * n] - fd).abs() < 0.05 * scale, "i = {i}");
        assert!((w[i * n + 5] - w[i * n]).abs() < 1e-14);
    }
}

#[test]
fn colour_map_is_symmetric() {
    let px = colorize(&[-2.0, 0.0, 2.0]);
    assert_eq!(&px[0..4], &[0, 0, 255, 255]);
    assert_eq!(&px[4..8], &[255, 255, 255, 255]);
    assert_eq!(&px[8..12], &[255, 0, 0, 255]);
    assert_eq!(colorize(&[0.0; 4]).len(), 16);
}

#[test]
fn simulation_is_deterministic() {
    let mut a = Simulation::create(16, 1.0, 1e-3, 3).unwrap();
    let mut b = Simulation::create(16, 1.0, 1e-3, 3).unwrap();
    a.run(20).unwrap();
    b.run(10).unwrap();
    b.run(10).unwrap();
    assert_eq!(a.field(), b.field());
    assert!((a.time() - 0.02).abs() < 1e-12);
    assert_eq!(a.vorticity_rgba().len(), 4 * 16 * 16);
    assert!(Simulation::create(15, 1.0, 1e-3, 3).is_err());
}

#[test]
fn blocks_and_bony_split() {
    let b1 = lp_block_vorticity(32, 1, 5).unwrap();
    let b3 = lp_block_vorticity(32, 3, 5).unwrap();
    assert_eq!(b1.len(), 32 * 32);
    assert_ne!(b1, b3);
    assert!(lp_block_vorticity(32, 40, 5).is_err());
    let v = bony_norms(32, 1).unwrap();
    assert_eq!(v.len(), 5);
    assert!(v[4] <= 1e-12 * v[3]);
    assert!(v[..3].iter().all(|&x| x > 0.0));
}
