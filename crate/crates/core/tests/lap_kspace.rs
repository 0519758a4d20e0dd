use lapk_core::filter_basis::{flow_from_filter, FilterBasis};
use lapk_core::fourier::{apply_phase_ramp, fft3, fft3_complex, k_axis};
use lapk_core::grid::{CVolume, FlowField, Grid, Volume};
use lapk_core::lap_image::{solve_local_filter, PatchMode};
use lapk_core::lap_kspace::*;
use lapk_core::metrics::{epe, Roi};
use lapk_core::sampling::{apply_mask, gen_center_mask, gen_mask, gen_vdpd_mask, MaskKind, SamplingMask};
use lapk_core::smoothing::gaussian_smooth;
use lapk_core::synthesis::{fourier_shift, gen_phantom, gen_smooth_flow, make_pair};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn constant_image_gives_window_spectrum() {
    let d = [24, 20, 22];
    let k = fft3(&Volume::filled(d, 2.0)).unwrap();
    let t = Taper::hann(9).unwrap();
    let p = taper_and_regrid(&k, [3, 17, 0], &t).unwrap();
    let kap = k_axis(9);
    let mut err = 0.0f64;
    for z in 0..9 {
        for y in 0..9 {
            for x in 0..9 {
                // window transform written out by hand
                let tr = |w: f64| -> f64 {
                    (-4i32..=4)
                        .map(|y| (std::f64::consts::PI * y as f64 / 10.0).cos().powi(2) * (w * y as f64).cos())
                        .sum()
                };
                let want = 2.0 / 27.0 * tr(kap[x]) * tr(kap[y]) * tr(kap[z]);
                err = err.max((p.data.at(x, y, z) - Complex64::new(want, 0.0)).norm());
            }
        }
    }
    let peak = 2.0 / 27.0 * t.peak().powi(3);
    assert!(err < 1e-3 * peak, "{err} vs peak {peak}");
}

#[test]
fn integer_offset_matches_windowed_crop() {
    // periodic image: moving the centre equals rolling the image
    let d = [32, 32, 32];
    let img = gen_phantom(d, 4).unwrap();
    let k = fft3(&img).unwrap();
    let t = Taper::hann(17).unwrap();
    let a = taper_and_regrid(&k, [10, 12, 14], &t).unwrap();
    let rolled =
        fft3(&Volume::from_fn(d, |x, y, z| *img.at_wrapped(x as isize + 3, y as isize - 2, z as isize + 5))).unwrap();
    let b = taper_and_regrid(&rolled, [7, 14, 9], &t).unwrap();
    assert!(relative_energy_difference(&a, &b) < 1e-3);
    let oracle = taper_and_regrid_reference(&k, [10, 12, 14], &t).unwrap();
    assert!(relative_energy_difference(&a, &oracle) < 1e-3);
}

#[test]
fn patch_mask_follows_parent_footprint() {
    let d = [48, 48, 48];
    let m = gen_vdpd_mask(d, 8.0, 2).unwrap();
    let k = apply_mask(&fft3(&gen_phantom(d, 1).unwrap()).unwrap(), &m).unwrap();
    let t = Taper::hann(17).unwrap();
    let p = taper_and_regrid_masked(&k, &m, [20, 20, 20], &t).unwrap();
    // nearest parent sample of every patch frequency
    let near = |i: usize| ((i as f64 - 8.0) * 48.0 / 17.0).round() as isize + 24;
    let mut i = 0;
    for z in 0..17 {
        for y in 0..17 {
            for x in 0..17 {
                let j = near(x) as usize + 48 * (near(y) as usize + 48 * near(z) as usize);
                assert_eq!(p.mask[i], m.kept()[j]);
                i += 1;
            }
        }
    }
    assert!(p.mask.iter().any(|&b| !b) && p.mask.iter().any(|&b| b));
}

fn window_pair(seed: u64) -> (Volume, Volume) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = [16, 16, 1];
    let a = Volume::from_fn(d, |_, _, _| rng.random::<f64>());
    let b = Volume::from_fn(d, |_, _, _| rng.random::<f64>());
    (a, b)
}

#[test]
fn planar_parseval_agrees_with_image_solve() {
    let basis = FilterBasis::planar(9, 3).unwrap();
    for seed in 0..5 {
        let (f, m) = window_pair(seed);
        let ci = solve_local_filter(&f, &m, &basis, 1e-9, PatchMode::Circular).unwrap();
        let pf = KPatch::from_image([8, 8, 0], &f.to_complex()).unwrap();
        let pm = KPatch::from_image([8, 8, 0], &m.to_complex()).unwrap();
        let ck = solve_kspace_filter(&pf, &pm, &basis, 1e-9).unwrap();
        let diff: f64 = ci.coeffs().iter().zip(ck.coeffs()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = ci.coeffs().iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff <= 1e-6 * norm, "{:?} vs {:?}", ci.coeffs(), ck.coeffs());
    }
}

#[test]
fn masked_translation_recovered_by_filter() {
    // Zero-mean texture: flat anatomy inside a window tapers into a static
    // spectrum that drags per-patch estimates toward zero.
    let d = [64, 64, 64];
    let img = texture(d, 1);
    let u = [1.2, -0.7, 0.5];
    let moved = fourier_shift(&img, u).unwrap();
    let mask = gen_vdpd_mask(d, 8.0, 3).unwrap();
    let t = Taper::hann(33).unwrap();
    let basis = FilterBasis::new(9, 3).unwrap();
    let vf = apply_mask(&fft3(&moved).unwrap(), &mask).unwrap();
    let vm = apply_mask(&fft3(&img).unwrap(), &mask).unwrap();
    for c in [[32, 32, 32], [24, 40, 30]] {
        let pf = taper_and_regrid_masked(&vf, &mask, c, &t).unwrap();
        let pm = taper_and_regrid_masked(&vm, &mask, c, &t).unwrap();
        let est = flow_from_filter(&solve_kspace_filter(&pf, &pm, &basis, 1e-6).unwrap()).unwrap();
        for a in 0..3 {
            assert!((est[a] - u[a]).abs() < 0.3, "{est:?} at {c:?}");
        }
    }
}

fn texture(d: [usize; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Volume::from_fn(d, |_, _, _| rng.random::<f64>() - 0.5);
    gaussian_smooth(&noise, 1.5)
}

fn patch_of_phantom(seed: u64) -> KPatch {
    let d = [48, 48, 48];
    let k = fft3(&gen_phantom(d, seed).unwrap()).unwrap();
    taper_and_regrid(&k, [24, 24, 24], &Taper::hann(33).unwrap()).unwrap()
}

#[test]
fn phase_slope_identity_and_masked_ramp() {
    let m = patch_of_phantom(2);
    let e = estimate_translation_phase_slope(&m, &m).unwrap();
    assert!(e.u.iter().all(|v| v.abs() < 1e-8) && e.reliable);

    let u = [1.5, -0.5, 0.0];
    let f = m.shifted(u).unwrap();
    let e = estimate_translation_phase_slope(&f, &m).unwrap();
    assert!((0..3).all(|a| (e.u[a] - u[a]).abs() < 1e-6), "{:?}", e.u);

    let cm = gen_center_mask([33, 33, 33], 15.0).unwrap();
    let fm = f.clone().with_mask(cm.kept().to_vec()).unwrap();
    let mm = m.clone().with_mask(cm.kept().to_vec()).unwrap();
    let e = estimate_translation_phase_slope(&fm, &mm).unwrap();
    assert!((0..3).all(|a| (e.u[a] - u[a]).abs() < 0.1), "{:?}", e.u);
}

#[test]
fn phase_slope_exact_on_sparse_spanning_set() {
    let m = patch_of_phantom(3);
    let u = [-2.2, 0.8, 2.9];
    let f = m.shifted(u).unwrap();
    // DC plus four low frequencies spanning all three axes
    let mut keep = vec![false; 33 * 33 * 33];
    let idx = |x: usize, y: usize, z: usize| x + 33 * (y + 33 * z);
    for (x, y, z) in [(16, 16, 16), (17, 16, 16), (16, 17, 16), (16, 16, 17), (17, 17, 17)] {
        keep[idx(x, y, z)] = true;
    }
    let e = estimate_translation_phase_slope(&f.with_mask(keep.clone()).unwrap(), &m.with_mask(keep).unwrap()).unwrap();
    assert!((0..3).all(|a| (e.u[a] - u[a]).abs() < 1e-6), "{:?}", e.u);
}

#[test]
fn unwrap_failure_is_flagged() {
    // unrelated patches: the phase is not linear in k
    let a = patch_of_phantom(4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noisy = Grid::from_fn(a.dims(), |x, y, z| {
        *a.data.at(x, y, z) * Complex64::from_polar(1.0, rng.random_range(-3.0..3.0))
    });
    let b = KPatch::new(a.center, noisy);
    let e = estimate_translation_phase_slope(&b, &a).unwrap();
    assert!(!e.reliable);
}

#[test]
fn merge_recovers_consistent_slicing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let u: [f64; 3] = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
        assert_eq!(merge_orthogonal_runs((u[0], u[1]), (u[1], u[2])), u);
    }
}

#[test]
fn zero_motion_gives_zero_field() {
    let d = [40, 40, 40];
    let k = fft3(&gen_phantom(d, 5).unwrap()).unwrap();
    let cfg = KspaceConfig { stride: 4, ..KspaceConfig::default() };
    for kind in [MaskKind::Vdpd, MaskKind::Center] {
        for r in [1.0, 8.0, 15.0, 30.0] {
            let m = if r == 1.0 { SamplingMask::full(d) } else { gen_mask(kind, d, r, 1).unwrap() };
            let v = apply_mask(&k, &m).unwrap();
            let f = kspace_flow_field(&v, &v, &m, &m, &cfg).unwrap();
            assert!(f.max_norm() < 1e-12, "{kind} R{r}");
        }
    }
    let ps = KspaceConfig { stride: 8, ..KspaceConfig::phase_slope() };
    let m = SamplingMask::full(d);
    assert_eq!(kspace_flow_field(&k, &k, &m, &m, &ps).unwrap().max_norm(), 0.0);
}

#[test]
fn smooth_flow_fully_sampled_and_graceful_degradation() {
    let d = [64, 64, 64];
    let phantom = gen_phantom(d, 11).unwrap();
    let gt = gen_smooth_flow(d, 5.0, 12).unwrap();
    let roi = Roi::observable(&gt, 2);
    let cfg = KspaceConfig::default();
    let run = |m: &SamplingMask| {
        let (vf, vm, _) = make_pair(&phantom, &gt, m, m).unwrap();
        epe(&kspace_flow_field(&vf, &vm, m, m, &cfg).unwrap(), &gt, &roi).unwrap().mean
    };
    let full = run(&SamplingMask::full(d));
    assert!(full < 1.0, "fully sampled EPE {full}");
    let r8 = run(&gen_center_mask(d, 8.0).unwrap());
    let r30 = run(&gen_center_mask(d, 30.0).unwrap());
    assert!(r30.is_finite() && r30 <= 2.0 * r8, "R8 {r8} R30 {r30}");
}

#[test]
fn phase_slope_field_tracks_translation() {
    let d = [40, 40, 40];
    let img = gen_phantom(d, 6).unwrap();
    let u = [1.5, -1.0, 0.5];
    let vf = fft3(&fourier_shift(&img, u).unwrap()).unwrap();
    let vm = fft3(&img).unwrap();
    let m = SamplingMask::full(d);
    let cfg =
        KspaceConfig { stride: 8, stages: vec![KStage { taper_w: 17, basis_w: 9 }; 3], ..KspaceConfig::phase_slope() };
    let f = kspace_flow_field(&vf, &vm, &m, &m, &cfg).unwrap();
    let gt = FlowField::constant(d, u);
    let e = epe(&f, &gt, &Roi::interior(d, 8)).unwrap().mean;
    assert!(e < 0.3, "EPE {e}");
}

#[test]
fn shape_and_parameter_errors() {
    let k: CVolume = Grid::filled([8, 8, 8], Complex64::new(1.0, 0.0));
    assert!(taper_and_regrid(&k, [8, 0, 0], &Taper::hann(5).unwrap()).is_err());
    let other = Grid::filled([8, 8, 9], Complex64::new(1.0, 0.0));
    let m = SamplingMask::full([8, 8, 8]);
    assert!(kspace_flow_field(&k, &other, &m, &m, &KspaceConfig::default()).is_err());
    let bad = KspaceConfig { stages: vec![], ..KspaceConfig::default() };
    assert!(kspace_flow_field(&k, &k, &m, &m, &bad).is_err());
    let _ = fft3_complex(&k).unwrap();
    let _ = apply_phase_ramp(&k, [0.0; 3]).unwrap();
}
