use std::f64::consts::PI;

use hexpdc::analysis::{fit_gamma, SeriesPoint};
use hexpdc::coupled_modes::{
    beam_splitter_decomposition, bogoliubov_defect, closed_form_eigenvalues, eigenvalue_landscape,
    four_mode_eigenvalues, four_mode_matrix, four_mode_singular_values, propagator_exact, two_mode_gamma,
};
use hexpdc::fft::{Fft3, FftWork};
use hexpdc::grid::GridSpec;
use hexpdc::medium::{CrystalSpec, DispersionModel, GainParameters, KzMode};
use hexpdc::num_complex::Complex64;
use hexpdc::qpm::BranchLabel;
use proptest::prelude::*;

fn gains(gbar: f64, ra: f64, ph: f64) -> GainParameters {
    GainParameters::from_ratio(gbar, Complex64::from_polar(ra, ph))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gbar_is_quadrature_sum(gbar in 1e-5f64..1.0, ra in 0.0f64..1.0, ph in 0.0..2.0 * PI) {
        let g = gains(gbar, ra, ph);
        let s = g.g1.norm_sqr() + g.g2.norm_sqr();
        prop_assert!((s - gbar * gbar).abs() <= 1e-14 * gbar * gbar);
    }

    #[test]
    fn eigenvalues_pair_with_singular_values(ra in 0.0f64..1.0, ph in 0.0..2.0 * PI) {
        let g = gains(1.0, ra, ph);
        let (a, b) = four_mode_eigenvalues(&g).unwrap();
        let (sa, sb) = four_mode_singular_values(&g);
        prop_assert!((a - sa).abs() < 1e-10 && (b - sb).abs() < 1e-10);
        prop_assert!(a >= b && b >= 0.0);
    }

    #[test]
    fn closed_form_matches_real_ratio(r in -1.0f64..1.0) {
        let g = GainParameters::from_ratio(1.0, Complex64::new(r, 0.0));
        let (a, b) = four_mode_singular_values(&g);
        let (ca, cb) = closed_form_eigenvalues(1.0, r);
        prop_assert!((a - ca).abs() < 1e-12 && (b - cb).abs() < 1e-12);
    }

    #[test]
    fn landscape_bounded(ra in 0.0f64..1.0, ph in 0.0..2.0 * PI) {
        let p = eigenvalue_landscape(&[ra], &[ph])[0];
        prop_assert!(p.lambda_plus <= 3.0 / 2f64.sqrt() + 1e-12);
        prop_assert!(p.lambda_plus >= 1.0 / 2f64.sqrt() - 1e-12);
    }

    #[test]
    fn beam_splitter_decouples(r in -1.0f64..1.0) {
        let g = GainParameters::from_ratio(1.0, Complex64::new(r, 0.0));
        let bs = beam_splitter_decomposition(&g).unwrap();
        let m = bs.transformed(&four_mode_matrix(&g, 0.0));
        // (delta, sigma) must not mix: entries coupling index 0 to 3 and 1 to 2
        let off = m[(0, 3)].norm() + m[(1, 2)].norm() + m[(3, 0)].norm() + m[(2, 1)].norm();
        prop_assert!(off < 1e-12, "off-block {off}");
    }

    #[test]
    fn propagator_is_bogoliubov(ra in 0.0f64..1.0, ph in 0.0..2.0 * PI, d in -2.0f64..2.0, z in 0.0f64..3.0) {
        let sys = four_mode_matrix(&gains(1.0, ra, ph), d);
        let u = propagator_exact(&sys, z);
        prop_assert!(bogoliubov_defect(&u) < 1e-9 * (1.0 + u.norm_squared()));
    }

    #[test]
    fn central_gain_monotone_in_real_ratio(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let ga = two_mode_gamma(BranchLabel::Sigma0, &GainParameters::from_ratio(1.0, Complex64::new(lo, 0.0))).unwrap();
        let gb = two_mode_gamma(BranchLabel::Sigma0, &GainParameters::from_ratio(1.0, Complex64::new(hi, 0.0))).unwrap();
        prop_assert!(ga.norm() <= gb.norm() + 1e-12);
    }

    #[test]
    fn index_exceeds_one(l in 0.4f64..1.6, t in 30.0f64..200.0) {
        let n = DispersionModel::slt_extraordinary().refractive_index(l, t).unwrap();
        prop_assert!(n > 1.0 && n < 3.0);
    }

    #[test]
    fn kz_never_exceeds_k(qx in -2.0f64..2.0, qy in -2.0f64..2.0, w in -300.0f64..300.0) {
        let c = CrystalSpec::slt_default();
        let k = c.wavenumber(hexpdc::grid::Carrier::Signal, w).unwrap();
        for mode in [KzMode::Exact, KzMode::Paraxial] {
            if let Ok(kz) = c.wavevector_z(hexpdc::grid::Carrier::Signal, w, qx, qy, mode) {
                prop_assert!(kz <= k);
            }
        }
    }

    #[test]
    fn partner_is_involution(nx in 2usize..12, ny in 1usize..6, nt in 1usize..6, rho in -20i64..20, seed in 0usize..10_000) {
        let g = GridSpec { nx, ny, nt, lx_um: 1.0, ly_um: 1.0, t_window_ps: 1.0, dz_um: 1.0 };
        let idx = seed % g.len();
        prop_assert_eq!(g.partner_index(g.partner_index(idx, rho), rho), idx);
    }

    #[test]
    fn fft_preserves_norm(nx in 1usize..9, ny in 1usize..9, nt in 1usize..9, seed in any::<u64>()) {
        let f = Fft3::new(nx, ny, nt);
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut v: Vec<Complex64> = (0..nx * ny * nt).map(|_| Complex64::new(next(), next())).collect();
        let e0: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        let orig = v.clone();
        let mut w = FftWork::default();
        f.forward(&mut v, &mut w);
        let e1: f64 = v.iter().map(|c| c.norm_sqr()).sum();
        prop_assert!((e1 - e0).abs() <= 1e-12 * e0.max(1e-300));
        f.inverse(&mut v, &mut w);
        for (a, b) in v.iter().zip(&orig) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn synthetic_fit_recovers_gamma(gamma in 0.5f64..2.5) {
        let gbar = 4e-4;
        let s: Vec<SeriesPoint> = (0..=20)
            .map(|i| {
                let z = 500.0 * i as f64;
                SeriesPoint { z_um: z, photons: (gamma * gbar * z).sinh().powi(2), stderr: 0.0 }
            })
            .collect();
        let f = fit_gamma(&s, gbar, (1.5, f64::INFINITY)).unwrap();
        prop_assert!((f.nonlinear.unwrap().gamma - gamma).abs() < 1e-6);
        prop_assert!(f.gamma_hat >= gamma - 1e-9);
    }
}
