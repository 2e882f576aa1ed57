//! Acceptance gate: one PASS/FAIL line per criterion. Full simulations take
//! over an hour on one core; `HEXPDC_ACCEPTANCE_QUICK=1` cuts trajectory
//! counts by 8 for a smoke run (numbers then are noisy).

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::time::Instant;

use hexpdc::analysis::{analyze_run, RunAnalysis};
use hexpdc::config::{ConfigFile, ProfileKind, RunConfig};
use hexpdc::coupled_modes::{
    beam_splitter_decomposition, eigenvalue_landscape, four_mode_eigenvalues, four_mode_matrix,
    integrate_four_mode, propagator_expm,
};
use hexpdc::fft::{Fft3, FftWork};
use hexpdc::grid::Carrier;
use hexpdc::medium::{solve_poling_period, CrystalSpec, DegeneracyCondition, GainParameters, KzMode};
use hexpdc::num_complex::Complex64;
use hexpdc::propagation::{initialize_wigner, propagate, EnsembleResult, LinearStep};
use hexpdc::qpm::{exact_branch, paraxial_ring, BranchLabel, QpmContext, QpmSampling, RingApproximation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PHI: f64 = 1.618_033_988_749_895;

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, n: usize, ok: bool, what: &str) {
        if !ok {
            self.failed += 1;
        }
        println!("criterion {n:>2} {} {what}", if ok { "PASS" } else { "FAIL" });
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    (x / target - 1.0).abs() <= rel
}

fn quick() -> bool {
    std::env::var("HEXPDC_ACCEPTANCE_QUICK").is_ok_and(|v| v != "0")
}

fn trajectories(n: usize) -> usize {
    if quick() {
        (n / 8).max(2)
    } else {
        n
    }
}

struct Run {
    rc: RunConfig,
    result: EnsembleResult,
    analysis: RunAnalysis,
    seconds: f64,
}

impl Run {
    fn gamma(&self, branch: &str) -> f64 {
        self.analysis
            .branch(branch)
            .and_then(|b| b.fit.as_ref())
            .map_or(f64::NAN, |f| f.gamma_hat)
    }

    /// Branch photon number at the snapshot closest to `gz`.
    fn photons_at(&self, branch: &str, gz: f64) -> f64 {
        let Some(b) = self.analysis.branch(branch) else { return f64::NAN };
        b.series
            .iter()
            .min_by(|a, c| {
                (a.z_um * self.rc.gbar - gz)
                    .abs()
                    .total_cmp(&(c.z_um * self.rc.gbar - gz).abs())
            })
            .map_or(f64::NAN, |p| p.photons)
    }
}

fn simulate(label: &str, file: &ConfigFile) -> Run {
    let t0 = Instant::now();
    let rc = RunConfig::from_file(file, None).expect("valid config");
    let sim = rc.simulation().expect("simulation setup");
    let result = propagate(&sim).expect("propagation");
    let ctx = rc.qpm_context().expect("qpm context");
    let analysis = analyze_run(label, &result, &ctx, rc.gbar, rc.mask, rc.fit_window).expect("analysis");
    let seconds = t0.elapsed().as_secs_f64();
    eprintln!(
        "  [{label}] {} trajectories, {seconds:.0} s, depletion {:.2e}, Manley-Rowe drift {:.2e}",
        result.n_trajectories, result.depletion_fraction, result.manley_rowe_drift
    );
    Run {
        rc,
        result,
        analysis,
        seconds,
    }
}

fn plane_wave(r: f64, phase: f64, n: usize) -> ConfigFile {
    let mut f = ConfigFile::example(0.4, r, phase);
    f.simulation.trajectories = Some(trajectories(n));
    f.simulation.seed = Some(20_240_101);
    f
}

/// Waists, length and gain scaled together so that gbar L, walk-off over
/// waist and ring width over pump spectral width match a 500 x 200 um beam
/// in a 10 mm crystal at 0.4 /mm.
fn scaled_gaussian(r: f64, n: usize) -> ConfigFile {
    let mut f = ConfigFile::example(2.0, r, 0.0);
    f.crystal.length_mm = 2.0;
    f.pump.profile = ProfileKind::Gaussian;
    f.pump.waist_x_um = Some(100.0);
    f.pump.waist_y_um = Some(40.0);
    f.simulation.dz_um = Some(5.0);
    f.simulation.trajectories = Some(trajectories(n));
    f.simulation.seed = Some(20_240_102);
    f
}

fn criterion_1(g: &mut Gate) {
    let cases = [
        (0.0, PHI, 1.0 / PHI),
        (1.0, 3.0 * FRAC_1_SQRT_2, FRAC_1_SQRT_2),
        (-1.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    ];
    let mut worst: f64 = 0.0;
    for (r, a, b) in cases {
        let gains = GainParameters::from_ratio(1.0, Complex64::new(r, 0.0));
        let (lp, lm) = four_mode_eigenvalues(&gains).expect("eigenvalues");
        worst = worst.max((lp / a - 1.0).abs()).max((lm / b - 1.0).abs());
    }
    g.report(1, worst <= 1e-12, &format!("eigenvalue closed forms, worst relative error {worst:.1e}"));
}

fn criterion_2(g: &mut Gate) {
    let n = 101;
    let ra: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let ph: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / (n - 1) as f64).collect();
    let land = eigenvalue_landscape(&ra, &ph);
    let max = land.iter().max_by(|a, b| a.lambda_plus.total_cmp(&b.lambda_plus)).unwrap();
    let min = land.iter().min_by(|a, b| a.lambda_plus.total_cmp(&b.lambda_plus)).unwrap();
    let ok = (max.lambda_plus - 3.0 * FRAC_1_SQRT_2).abs() <= 1e-6
        && (min.lambda_plus - FRAC_1_SQRT_2).abs() <= 1e-6
        && (max.r_abs - 1.0).abs() < 1e-12
        && (max.phase.rem_euclid(2.0 * PI)).min(2.0 * PI - max.phase.rem_euclid(2.0 * PI)) < 1e-9
        && (min.r_abs - 1.0).abs() < 1e-12
        && (min.phase - PI).abs() < 1e-9;
    g.report(
        2,
        ok,
        &format!(
            "landscape max {:.8} at ({}, {:.4}), min {:.8} at ({}, {:.4})",
            max.lambda_plus, max.r_abs, max.phase, min.lambda_plus, min.r_abs, min.phase
        ),
    );
}

fn criterion_3(g: &mut Gate) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r: f64 = rng.random_range(-1.0..=1.0);
        let gains = GainParameters::from_ratio(1.0, Complex64::new(r, 0.0));
        let bs = beam_splitter_decomposition(&gains).expect("real ratio");
        let m = bs.transformed(&four_mode_matrix(&gains, 0.0));
        let off = (m[(0, 3)].norm_sqr() + m[(3, 0)].norm_sqr() + m[(1, 2)].norm_sqr() + m[(2, 1)].norm_sqr()).sqrt();
        worst = worst.max(off);
    }
    let bs0 = beam_splitter_decomposition(&GainParameters::from_ratio(1.0, Complex64::new(0.0, 0.0))).unwrap();
    let tan_err = (bs0.theta.tan() - PHI).abs();
    g.report(
        3,
        worst < 1e-12 && tan_err < 1e-12,
        &format!("beam-splitter off-block norm {worst:.1e} over 100 cases, |tan(theta) - phi| at r=0 {tan_err:.1e}"),
    );
}

fn criterion_4(g: &mut Gate) {
    let ratios = [
        Complex64::new(0.0, 0.0),
        Complex64::new(1.0, 0.0),
        Complex64::new(-1.0, 0.0),
        Complex64::from_polar(0.6, 1.1),
    ];
    let mut worst: f64 = 0.0;
    for r in ratios {
        let sys = four_mode_matrix(&GainParameters::from_ratio(1.0, r), 0.0);
        for i in 0..=40 {
            let z = 0.1 * i as f64;
            let ode = integrate_four_mode(&sys, z, 1e-13).expect("integration");
            let ex = propagator_expm(&sys, z).expect("expm");
            worst = worst.max((ode - ex).norm() / ex.norm());
        }
    }
    g.report(4, worst <= 1e-9, &format!("four-mode ODE vs matrix exponential, worst relative error {worst:.1e}"));
}

fn criterion_5(g: &mut Gate) {
    let mut crystal = CrystalSpec::slt_default();
    let period = solve_poling_period(&crystal, DegeneracyCondition::Paraxial).expect("period");
    crystal.poling_period_um = solve_poling_period(&crystal, DegeneracyCondition::Exact).expect("period");
    let ctx = QpmContext::resonant(crystal.clone(), KzMode::Exact).expect("context");
    let gx = ctx.gx();
    let cell = gx / 16.0;
    let sampling = |omegas: Vec<f64>| QpmSampling {
        omegas,
        n_angles: 256,
        cell,
        tolerance: 1e-10,
    };
    let s0 = exact_branch(&ctx, BranchLabel::Sigma0, &sampling(vec![0.0])).expect("sigma0");
    let radius = s0.ring_radius(0.0).map_or(f64::NAN, |(_, r)| r);
    let ring_ok = within(radius, gx, 0.01);

    let mut vertex_ok = true;
    let mut vertex_txt = String::new();
    for (label, x) in [(BranchLabel::Sigma11, gx), (BranchLabel::Sigma22, -gx)] {
        let b = exact_branch(&ctx, label, &sampling(vec![0.0])).expect("side branch");
        let (ax, ay) = b.apex().map_or((f64::NAN, f64::NAN), |(ax, ay, _)| (ax, ay));
        vertex_ok &= (ax - x).abs() <= cell && ay.abs() <= cell;
        vertex_txt += &format!(" {} apex ({:+.3}, {:+.3}) G_x", label.name(), ax / gx, ay / gx);
    }

    let omegas: Vec<f64> = (-10..=10).map(|i| 2.0 * PI * 0.5 * i as f64).collect();
    let mut worst = [(0.0f64, 0.0f64); 2];
    for label in [BranchLabel::Sigma0, BranchLabel::Sigma11, BranchLabel::Sigma22] {
        let b = exact_branch(&ctx, label, &sampling(omegas.clone())).expect("branch");
        for &w in &omegas {
            let exact = b.samples.iter().any(|s| s.omega == w).then(|| b.ring_radius(w)).flatten();
            for (k, approx) in [RingApproximation::Paraxial, RingApproximation::Taylor].into_iter().enumerate() {
                let para = paraxial_ring(&ctx, label, w, approx).expect("paraxial ring");
                let dev = match (exact, para) {
                    (Some((cx, r)), Some(p)) => (cx - p.center_x).abs().max((r - p.radius).abs()),
                    (None, None) => 0.0,
                    (None, Some(p)) => p.radius,
                    (Some((_, r)), None) => r,
                };
                if dev > worst[k].0 {
                    worst[k] = (dev, w);
                }
            }
        }
    }
    let best = worst[0].0.min(worst[1].0);
    let para_ok = best <= 0.01 * gx;
    let period_ok = (period - 7.782).abs() <= 0.001;
    g.report(
        5,
        ring_ok && vertex_ok && para_ok && period_ok,
        &format!(
            "Sigma0 ring radius {:.4} G_x;{vertex_txt}; paraxial vs exact within 5 THz: {:.2e} G_x (full k, worst at {:+.1} THz), {:.2e} G_x (Taylor, worst at {:+.1} THz); poling period {period:.4} um (target 7.782 +- 0.001)",
            radius / gx,
            worst[0].0 / gx,
            worst[0].1 / (2.0 * PI),
            worst[1].0 / gx,
            worst[1].1 / (2.0 * PI)
        ),
    );
}

fn main() {
    let mut g = Gate { failed: 0 };
    if quick() {
        println!("quick mode: trajectory counts divided by 8");
    }
    criterion_1(&mut g);
    criterion_2(&mut g);
    criterion_3(&mut g);
    criterion_4(&mut g);
    criterion_5(&mut g);

    let single = simulate("r=0", &plane_wave(0.0, 0.0, 64));
    let dual = simulate("r=1", &plane_wave(1.0, 0.0, 64));
    let (s0a, s0b) = (single.gamma("sigma0"), dual.gamma("sigma0"));
    let (hsa, hsb) = (single.gamma("hotspots"), dual.gamma("hotspots"));
    let ok6 = within(s0a, 1.0, 0.05)
        && within(s0b, SQRT_2, 0.05)
        && within(hsa, PHI, 0.07)
        && within(hsb, 3.0 * FRAC_1_SQRT_2, 0.07);
    g.report(
        6,
        ok6,
        &format!(
            "Sigma0 gamma {s0a:.4} (r=0), {s0b:.4} (r=1); hot spots {hsa:.4} (r=0), {hsb:.4} (r=1); {} trajectories, {:.0} s and {:.0} s per run",
            dual.result.n_trajectories, single.seconds, dual.seconds
        ),
    );

    let anti = simulate("r=-1", &plane_wave(1.0, PI, 32));
    let frac = anti.photons_at("sigma0", 2.8) / dual.photons_at("sigma0", 2.8);
    let (g11, g22) = (anti.gamma("sigma11"), anti.gamma("sigma22"));
    g.report(
        7,
        frac <= 0.05 && within(g11, FRAC_1_SQRT_2, 0.07) && within(g22, FRAC_1_SQRT_2, 0.07),
        &format!("Sigma0 photons at gbar z = 2.8: {:.2e} of the r=1 value; Sigma11 gamma {g11:.4}, Sigma22 gamma {g22:.4}", frac),
    );

    let frozen = |r: f64| {
        let mut f = plane_wave(r, 0.0, 16);
        f.simulation.frozen_pump = true;
        f
    };
    let fa = simulate("frozen r=0", &frozen(0.0));
    let fb = simulate("frozen r=1", &frozen(1.0));
    let ratio = fb.photons_at("sigma0", 4.0) / fa.photons_at("sigma0", 4.0);
    let target = (4.0 * SQRT_2).sinh().powi(2) / 4f64.sinh().powi(2);
    g.report(
        8,
        within(ratio, target, 0.15),
        &format!("frozen-pump Sigma0 photon ratio at gbar z = 4: {ratio:.2} (two-mode {target:.2})"),
    );

    let drift = [&single, &dual, &anti].iter().map(|r| r.result.manley_rowe_drift).fold(0.0, f64::max);
    let norm_err = linear_norm_error(&dual.rc);
    let coarse = {
        let mut f = plane_wave(1.0, 0.0, 8);
        f.simulation.seed = Some(99);
        f
    };
    let mut fine = coarse.clone();
    fine.simulation.dz_um = Some(12.5);
    let (c, f) = (simulate("dz 25", &coarse), simulate("dz 12.5", &fine));
    let mut halving: f64 = 0.0;
    for b in ["sigma0", "hotspots"] {
        halving = halving.max((f.photons_at(b, 4.0) / c.photons_at(b, 4.0) - 1.0).abs());
    }
    g.report(
        9,
        drift < 1e-3 && norm_err < 1e-12 && halving < 0.01,
        &format!("Manley-Rowe drift {drift:.1e}; linear-step norm error {norm_err:.1e}; step halving changes N by {:.2}%", 100.0 * halving),
    );

    let ga = simulate("gaussian r=0", &scaled_gaussian(0.0, 8));
    let gb = simulate("gaussian r=1", &scaled_gaussian(1.0, 8));
    let r0 = gb.gamma("sigma0") / ga.gamma("sigma0");
    let rh = gb.gamma("hotspots") / ga.gamma("hotspots");
    g.report(
        10,
        (1.25..=1.45).contains(&r0) && (1.15..=1.35).contains(&rh),
        &format!(
            "Gaussian pumps: Sigma0 gamma ratio {r0:.3} ({:.3}/{:.3}, window 1.25-1.45), hot-spot ratio {rh:.3} ({:.3}/{:.3}, window 1.15-1.35)",
            gb.gamma("sigma0"),
            ga.gamma("sigma0"),
            gb.gamma("hotspots"),
            ga.gamma("hotspots")
        ),
    );

    println!("{} of 10 criteria passed", 10 - g.failed);
    if g.failed > 0 {
        std::process::exit(1);
    }
}

/// Relative norm change of a vacuum field after 100 linear steps and an
/// FFT round trip per step.
fn linear_norm_error(rc: &RunConfig) -> f64 {
    let sim = rc.simulation().expect("simulation setup");
    let grid = *sim.grid();
    let step = LinearStep::new(&rc.crystal, &grid, Carrier::Signal, grid.dz_um, Some(sim.active())).unwrap();
    let fft = Fft3::new(grid.nx, grid.ny, grid.nt);
    let mut work = FftWork::default();
    let mut f = initialize_wigner(&grid, 1, 0);
    for (v, &a) in f.data.iter_mut().zip(sim.active()) {
        if !a {
            *v = Complex64::default();
        }
    }
    let n0: f64 = f.data.iter().map(|v| v.norm_sqr()).sum();
    for _ in 0..100 {
        step.apply(&mut f);
        f.to_direct(&fft, &mut work);
        f.to_spectral(&fft, &mut work);
    }
    let n1: f64 = f.data.iter().map(|v| v.norm_sqr()).sum();
    (n1 / n0 - 1.0).abs()
}
