use lapk_core::fourier::fft3;
use lapk_core::grid::{coords_of, Volume};
use lapk_core::sampling::{
    apply_mask, calibration_region, dc_index, gen_center_mask, gen_vdpd_mask, vdpd_radius, MaskKind, SamplingMask,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn vdpd_r8_calibrated_and_spaced() {
    let dims = [64, 64, 64];
    let m = gen_vdpd_mask(dims, 8.0, 7).unwrap();
    let r = m.r_actual();
    assert!((7.6..=8.4).contains(&r), "R_actual = {r}");
    assert!(m.kept()[dc_index(dims)]);

    // brute-force audit: the nearest kept neighbour of 1000 random kept
    // samples outside the core is never closer than the local exclusion radius
    let r0 = m.vdpd_r0();
    assert!(r0 > 0.0);
    let core = calibration_region(dims);
    let outer: Vec<[f64; 3]> = (0..m.kept().len())
        .filter(|&i| m.kept()[i] && !core[i])
        .map(|i| {
            let c = coords_of(dims, i);
            [c[0] as f64 - 32.0, c[1] as f64 - 32.0, c[2] as f64 - 32.0]
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let a = outer[rng.random_range(0..outer.len())];
        let mut nearest = (f64::INFINITY, a);
        for b in &outer {
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            if d > 0.0 && d < nearest.0 {
                nearest = (d, *b);
            }
        }
        let need = vdpd_radius(dims, r0, a).max(vdpd_radius(dims, r0, nearest.1));
        assert!(nearest.0 >= need, "{a:?}: {} < {need}", nearest.0);
    }
    let again = gen_vdpd_mask(dims, 8.0, 7).unwrap();
    assert_eq!(m, again);
}

#[test]
fn center_r30_membership() {
    let dims = [64, 64, 64];
    let m = gen_center_mask(dims, 30.0).unwrap();
    let frac = m.kept_count() as f64 / m.kept().len() as f64;
    assert!(frac >= 1.0 / 31.5 && frac <= 1.0 / 28.5, "{frac}");
    // the kept set is exactly a sublevel set of the normalised radius
    let rho = |i: usize| {
        let c = coords_of(dims, i);
        (0..3).map(|a| ((c[a] as f64 - 32.0) / 32.0).powi(2)).sum::<f64>()
    };
    let max_in = (0..m.kept().len()).filter(|&i| m.kept()[i]).map(rho).fold(0.0, f64::max);
    let min_out = (0..m.kept().len()).filter(|&i| !m.kept()[i]).map(rho).fold(f64::INFINITY, f64::min);
    assert!(max_in < min_out);
}

#[test]
fn center_axis_ratio_follows_grid() {
    let dims = [64, 64, 32];
    let m = gen_center_mask(dims, 8.0).unwrap();
    let mut ext = [0.0f64; 3];
    for i in 0..m.kept().len() {
        if m.kept()[i] {
            let c = coords_of(dims, i);
            for a in 0..3 {
                ext[a] = ext[a].max((c[a] as f64 - (dims[a] / 2) as f64).abs());
            }
        }
    }
    assert!((ext[0] - ext[1]).abs() <= 1.0);
    assert!((ext[0] / 2.0 - ext[2]).abs() <= 1.0, "{ext:?}");
}

#[test]
fn calibration_across_rates_and_grids() {
    for dims in [[64, 64, 64], [96, 96, 48]] {
        for r in [2.0, 4.0, 8.0, 15.0, 30.0] {
            for kind in [MaskKind::Vdpd, MaskKind::Center] {
                let m = lapk_core::sampling::gen_mask(kind, dims, r, 11).unwrap();
                let err = (m.r_actual() - r).abs() / r;
                assert!(err <= 0.05, "{kind} {dims:?} R={r}: {}", m.r_actual());
            }
        }
    }
}

#[test]
fn apply_mask_properties() {
    let dims = [16, 16, 16];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = Volume::from_fn(dims, |_, _, _| rng.random::<f64>());
    let k = fft3(&v).unwrap();
    assert_eq!(apply_mask(&k, &SamplingMask::full(dims)).unwrap(), k);

    let m = gen_vdpd_mask(dims, 4.0, 5).unwrap();
    let once = apply_mask(&k, &m).unwrap();
    assert_eq!(apply_mask(&once, &m).unwrap(), once);
    assert!(once.energy() <= k.energy());
    for i in 0..k.len() {
        if m.kept()[i] {
            assert_eq!(once.data()[i], k.data()[i]);
        } else {
            assert_eq!(once.data()[i], Complex64::new(0.0, 0.0));
        }
    }

    let c = fft3(&Volume::filled(dims, 2.0)).unwrap();
    let mut dc_only = vec![false; c.len()];
    dc_only[dc_index(dims)] = true;
    let m = SamplingMask::from_parts(dims, dc_only, MaskKind::Center, 4096.0, 0).unwrap();
    let masked = apply_mask(&c, &m).unwrap();
    for (a, b) in masked.data().iter().zip(c.data()) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn mask_dims_mismatch() {
    let k = fft3(&Volume::zeros([8, 8, 8])).unwrap();
    assert!(apply_mask(&k, &SamplingMask::full([8, 8, 4])).is_err());
}
