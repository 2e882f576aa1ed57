//! Stochastic split-step propagation of the coupled signal/pump envelopes.
//!
//! Each step is half a linear step in the spectral domain, a nonlinear step in
//! the direct domain, and another half linear step. Envelopes are carried in
//! the signal group-velocity frame with the carrier wavenumbers removed; the
//! residual carrier mismatch `2k_s - k_p + G_z` appears only in the nonlinear
//! step.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::{Fft3, FftWork};
use crate::grid::{Carrier, Domain, GridError, GridSpec, SpectralField};
use crate::medium::{build_pump, kz_exact, CrystalSpec, MediumError, PumpConfig};

type C = Complex64;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("field diverged at z = {z_um} um (max |a| = {max_abs:e}) in trajectory {trajectory}")]
    Divergence {
        z_um: f64,
        max_abs: f64,
        trajectory: u64,
    },
}

/// Largest allowed nonlinear phase `|kappa m a_p| dz` per step.
pub const MAX_PHASE_PER_STEP: f64 = 0.05;
/// Required spectral extent along x in units of `G_x`.
pub const MIN_QMAX_OVER_GX: f64 = 2.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub grid: GridSpec,
    pub trajectories: usize,
    pub seed: u64,
    pub snapshots_z_um: Vec<f64>,
    /// Hold the pump fixed (no depletion); it still propagates linearly.
    #[serde(default)]
    pub frozen_pump: bool,
    /// Two-thirds rule along x on the signal spectrum.
    #[serde(default = "default_true")]
    pub dealias: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SetupDiagnostics {
    pub n_steps: usize,
    pub dz_um: f64,
    pub active_modes: usize,
    pub evanescent_signal: usize,
    pub evanescent_pump: usize,
    pub max_phase_per_step: f64,
    pub carrier_mismatch_per_um: f64,
    pub warnings: Vec<String>,
}

/// Diagonal half-step multipliers `exp(i (k_z - k_ref) dz / 2)`; masked or
/// evanescent modes carry a zero multiplier.
#[derive(Clone, Debug)]
pub struct LinearStep {
    pub multipliers: Vec<C>,
    pub evanescent: usize,
}

impl LinearStep {
    /// `k_ref(Omega) = k_carrier + k'_s Omega` for both carriers, so both
    /// fields share the signal group-velocity frame.
    pub fn new(
        crystal: &CrystalSpec,
        grid: &GridSpec,
        carrier: Carrier,
        dz: f64,
        mask: Option<&[bool]>,
    ) -> Result<Self, MediumError> {
        let k0 = crystal.wavenumber(carrier, 0.0)?;
        let k1s = crystal.taylor(Carrier::Signal)?.k1;
        let qx = grid.qx_axis();
        let qy = grid.qy_axis();
        let om = grid.omega_axis();
        let kw: Vec<f64> = om
            .iter()
            .map(|&w| crystal.wavenumber(carrier, w))
            .collect::<Result<_, _>>()?;
        let mut multipliers = vec![C::default(); grid.len()];
        let mut evanescent = 0;
        for ix in 0..grid.nx {
            for iy in 0..grid.ny {
                let q2 = qx[ix] * qx[ix] + qy[iy] * qy[iy];
                for it in 0..grid.nt {
                    let idx = grid.index(ix, iy, it);
                    if mask.is_some_and(|m| !m[idx]) {
                        continue;
                    }
                    match kz_exact(kw[it], q2) {
                        Ok(kz) => {
                            let phase = (kz - k0 - k1s * om[it]) * 0.5 * dz;
                            multipliers[idx] = C::from_polar(1.0, phase);
                        }
                        Err(_) => evanescent += 1,
                    }
                }
            }
        }
        Ok(Self {
            multipliers,
            evanescent,
        })
    }

    pub fn apply(&self, field: &mut SpectralField) {
        assert_eq!(field.domain, Domain::Spectral, "linear step needs a spectral field");
        linear_half_step(&mut field.data, &self.multipliers);
    }
}

pub fn linear_half_step(data: &mut [C], multipliers: &[C]) {
    for (a, m) in data.iter_mut().zip(multipliers) {
        *a *= m;
    }
}

/// Direct-space coupling: `c(x) = kappa * 2 cos(G_x x)` per x row, and the
/// residual carrier mismatch.
#[derive(Clone, Debug)]
pub struct NonlinearCoupling {
    pub row: Vec<f64>,
    pub row_len: usize,
    pub delta0: f64,
}

impl NonlinearCoupling {
    pub fn new(crystal: &CrystalSpec, grid: &GridSpec, chi: f64) -> Result<Self, MediumError> {
        let kappa = chi / grid.dv().sqrt();
        let gx = crystal.gx();
        let row = grid
            .x_coords()
            .iter()
            .map(|&x| 2.0 * kappa * (gx * x).cos())
            .collect();
        let delta0 = 2.0 * crystal.wavenumber(Carrier::Signal, 0.0)?
            - crystal.wavenumber(Carrier::Pump, 0.0)?
            + crystal.gz();
        Ok(Self {
            row,
            row_len: grid.ny * grid.nt,
            delta0,
        })
    }
}

/// One explicit-midpoint step of
/// `ds/dz = c p s* e^{-i D0 z}`, `dp/dz = -(c/2) s^2 e^{+i D0 z}`
/// with the phase taken at the step midpoint `z_mid`. With `frozen` the pump
/// is left untouched.
pub fn nonlinear_step(
    signal: &mut [C],
    pump: &mut [C],
    coupling: &NonlinearCoupling,
    z_mid: f64,
    dz: f64,
    frozen: bool,
) {
    let ph = C::from_polar(1.0, -coupling.delta0 * z_mid);
    let phc = ph.conj();
    let n = coupling.row_len;
    for ((s_row, p_row), &c) in signal
        .chunks_exact_mut(n)
        .zip(pump.chunks_exact_mut(n))
        .zip(&coupling.row)
    {
        let a = c * dz;
        let cs = ph * a;
        let cp = phc * (-0.5 * a);
        if frozen {
            for (s, p) in s_row.iter_mut().zip(p_row.iter()) {
                let s0 = *s;
                let sh = s0 + 0.5 * cs * p * s0.conj();
                *s = s0 + cs * p * sh.conj();
            }
        } else {
            for (s, p) in s_row.iter_mut().zip(p_row.iter_mut()) {
                let (s0, p0) = (*s, *p);
                let sh = s0 + 0.5 * cs * p0 * s0.conj();
                let phh = p0 + 0.5 * cp * s0 * s0;
                *s = s0 + cs * phh * sh.conj();
                *p = p0 + cp * sh * sh;
            }
        }
    }
}

/// Vacuum input in the symmetric (Wigner) ordering: independent complex
/// Gaussians with `<|a|^2> = 1/2` per spectral mode.
pub fn initialize_wigner(grid: &GridSpec, seed: u64, trajectory: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trajectory);
    let mut f = SpectralField::zeros(*grid, Domain::Spectral, Carrier::Signal);
    for v in f.data.iter_mut() {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        *v = C::new(0.5 * a, 0.5 * b);
    }
    f
}

/// Two-thirds rule along x only: the plane-wave pump carries no y or t
/// structure, so the quadratic products only spread along x. The y and t
/// Nyquist bins are dropped too: there `-q_y` and `-Omega` alias onto the
/// mode itself, which phase-matches spurious self-pairs.
pub fn dealias_mask(grid: &GridSpec, enabled: bool) -> Vec<bool> {
    let keep = (grid.nx / 3) as i64;
    let nyq = |i: usize, n: usize| n % 2 == 0 && i == n / 2;
    let mut m = vec![true; grid.len()];
    if enabled {
        for (idx, v) in m.iter_mut().enumerate() {
            let (ix, iy, it) = grid.unravel(idx);
            *v = grid.qx_bin(ix).abs() <= keep && !nyq(iy, grid.ny) && !nyq(it, grid.nt);
        }
    }
    m
}

/// Prepared simulation: validated inputs and all per-run tables.
#[derive(Debug)]
pub struct Simulation {
    pub crystal: CrystalSpec,
    pub pump: PumpConfig,
    pub chi: f64,
    pub config: SimulationConfig,
    pub diagnostics: SetupDiagnostics,
    fft: Fft3,
    dz: f64,
    snapshot_steps: Vec<usize>,
    active: Vec<bool>,
    lin_signal: LinearStep,
    lin_pump: LinearStep,
    coupling: NonlinearCoupling,
    pump0: Vec<C>,
    pump0_direct: Vec<C>,
    /// Set when every pump mode shares one longitudinal phase rate, so the
    /// frozen pump can be advanced by a scalar phase.
    pump_rate: Option<f64>,
}

impl Simulation {
    pub fn new(
        crystal: CrystalSpec,
        pump: PumpConfig,
        chi: f64,
        config: SimulationConfig,
    ) -> Result<Self, PropagationError> {
        let grid = config.grid;
        grid.validate()?;
        if config.trajectories == 0 {
            return Err(PropagationError::Config("need at least one trajectory".into()));
        }
        if !(chi >= 0.0 && chi.is_finite()) {
            return Err(PropagationError::Config(format!("invalid coupling {chi}")));
        }
        let mut warnings = Vec::new();
        let mut crystal = crystal;
        let qmax = PI / grid.dx();
        if qmax < MIN_QMAX_OVER_GX * crystal.gx() {
            return Err(PropagationError::Config(format!(
                "x spectral extent {qmax:.4}/um is below {MIN_QMAX_OVER_GX} G_x"
            )));
        }
        // spectral band vs Sellmeier window
        let w_max = 0.5 * grid.domega() * grid.nt as f64;
        let ws = crystal.carrier_omega(Carrier::Signal);
        let band = [ws - w_max, ws + w_max];
        let t = crystal.temperature_c;
        let outside = band.iter().any(|&w| {
            let l = 2.0 * PI * crate::medium::C_UM_PER_PS / w;
            !crystal.dispersion.in_window(l, t)
        });
        if outside && !crystal.extrapolate {
            let msg = format!(
                "signal band {:.3}-{:.3} rad/ps leaves the dispersion window; extrapolating",
                band[0], band[1]
            );
            log::warn!("{msg}");
            warnings.push(msg);
            crystal.extrapolate = true;
        }

        let length = crystal.length_um;
        let n_steps = (length / grid.dz_um - 1e-9).ceil().max(1.0) as usize;
        let dz = length / n_steps as f64;
        let mut snapshot_steps = Vec::new();
        for &z in &config.snapshots_z_um {
            if !(0.0..=length * (1.0 + 1e-12)).contains(&z) {
                return Err(PropagationError::Config(format!(
                    "snapshot z = {z} um outside [0, {length}]"
                )));
            }
            snapshot_steps.push((z / dz).round() as usize);
        }

        let active = dealias_mask(&grid, config.dealias);
        let lin_signal = LinearStep::new(&crystal, &grid, Carrier::Signal, dz, Some(&active))?;
        let lin_pump = LinearStep::new(&crystal, &grid, Carrier::Pump, dz, None)?;
        let coupling = NonlinearCoupling::new(&crystal, &grid, chi)?;

        let fft = Fft3::new(grid.nx, grid.ny, grid.nt);
        let mut work = FftWork::default();
        let pump_field = build_pump(&pump, &grid)?;
        let pump0_direct = pump_field.data.clone();
        let mut pump0 = pump_field.data;
        fft.forward(&mut pump0, &mut work);

        let max_p = pump0_direct.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let max_c = coupling.row.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let max_phase = max_c * max_p * dz;
        if max_phase > MAX_PHASE_PER_STEP {
            return Err(PropagationError::Config(format!(
                "nonlinear phase per step {max_phase:.3} rad exceeds {MAX_PHASE_PER_STEP}; reduce dz"
            )));
        }

        let peak = pump0.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut rate: Option<f64> = None;
        let mut uniform = true;
        for (a, m) in pump0.iter().zip(&lin_pump.multipliers) {
            if a.norm() > 1e-12 * peak {
                let r = 2.0 * m.arg() / dz;
                match rate {
                    None => rate = Some(r),
                    Some(r0) if (r - r0).abs() > 1e-12 * (1.0 + r0.abs()) => uniform = false,
                    _ => {}
                }
            }
        }
        let pump_rate = if uniform { rate } else { None };

        let diagnostics = SetupDiagnostics {
            n_steps,
            dz_um: dz,
            active_modes: active.iter().filter(|&&a| a).count(),
            evanescent_signal: lin_signal.evanescent,
            evanescent_pump: lin_pump.evanescent,
            max_phase_per_step: max_phase,
            carrier_mismatch_per_um: coupling.delta0,
            warnings,
        };
        Ok(Self {
            crystal,
            pump,
            chi,
            config,
            diagnostics,
            fft,
            dz,
            snapshot_steps,
            active,
            lin_signal,
            lin_pump,
            coupling,
            pump0,
            pump0_direct,
            pump_rate,
        })
    }

    pub fn diagnostics(&self) -> &SetupDiagnostics {
        &self.diagnostics
    }

    pub fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    pub fn dz(&self) -> f64 {
        self.dz
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn snapshot_z(&self) -> Vec<f64> {
        self.snapshot_steps.iter().map(|&s| s as f64 * self.dz).collect()
    }

    /// Runs one trajectory from Wigner vacuum into `acc`.
    pub fn run_trajectory(&self, trajectory: u64, acc: &mut Accumulator) -> Result<(), PropagationError> {
        let mut signal = initialize_wigner(self.grid(), self.config.seed, trajectory);
        for (v, &a) in signal.data.iter_mut().zip(&self.active) {
            if !a {
                *v = C::default();
            }
        }
        self.run_from(signal, trajectory, acc)
    }

    /// Propagates a given spectral signal (e.g. a classical seed).
    pub fn run_from(
        &self,
        mut signal: SpectralField,
        trajectory: u64,
        acc: &mut Accumulator,
    ) -> Result<(), PropagationError> {
        let grid = *self.grid();
        let frozen = self.config.frozen_pump;
        let fast = frozen && self.pump_rate.is_some();
        let mut work = FftWork::default();
        let mut pump = SpectralField {
            grid,
            domain: Domain::Spectral,
            carrier: Carrier::Pump,
            data: self.pump0.clone(),
        };
        let vac = 0.5 * self.diagnostics.active_modes as f64;
        let record = |step: usize, s: &SpectralField, pe: f64, acc: &mut Accumulator| {
            let se = s.energy();
            acc.add_step(step, se - vac, pe, se + 2.0 * pe);
            for (k, &st) in self.snapshot_steps.iter().enumerate() {
                if st == step {
                    acc.add_snapshot(k, &s.data);
                }
            }
            se
        };
        let pump_energy0 = pump.energy();
        record(0, &signal, pump_energy0, acc);
        let n_steps = self.diagnostics.n_steps;
        for step in 0..n_steps {
            let z0 = step as f64 * self.dz;
            self.lin_signal.apply(&mut signal);
            signal.to_direct(&self.fft, &mut work);
            if fast {
                let ph = C::from_polar(1.0, self.pump_rate.unwrap_or(0.0) * (z0 + 0.5 * self.dz));
                for (p, p0) in pump.data.iter_mut().zip(&self.pump0_direct) {
                    *p = p0 * ph;
                }
                pump.domain = Domain::Direct;
            } else {
                self.lin_pump.apply(&mut pump);
                pump.to_direct(&self.fft, &mut work);
            }
            nonlinear_step(
                &mut signal.data,
                &mut pump.data,
                &self.coupling,
                z0 + 0.5 * self.dz,
                self.dz,
                frozen,
            );
            signal.to_spectral(&self.fft, &mut work);
            self.lin_signal.apply(&mut signal);
            let pe = if fast {
                pump_energy0
            } else {
                pump.to_spectral(&self.fft, &mut work);
                self.lin_pump.apply(&mut pump);
                pump.energy()
            };
            let se = record(step + 1, &signal, pe, acc);
            if !se.is_finite() || !pe.is_finite() {
                let max_abs = signal
                    .data
                    .iter()
                    .map(|v| v.norm())
                    .filter(|v| v.is_finite())
                    .fold(0.0, f64::max);
                return Err(PropagationError::Divergence {
                    z_um: z0 + self.dz,
                    max_abs: if se.is_finite() { max_abs } else { f64::INFINITY },
                    trajectory,
                });
            }
        }
        acc.trajectories += 1;
        Ok(())
    }
}

/// Per-block running sums; merged in a fixed order so results do not depend
/// on the worker count.
#[derive(Clone, Debug)]
pub struct Accumulator {
    pub trajectories: usize,
    pub sum_n: Vec<Vec<f64>>,
    pub sum_n2: Vec<Vec<f64>>,
    pub signal_photons: Vec<f64>,
    pub pump_energy: Vec<f64>,
    pub manley_rowe: Vec<f64>,
    /// Largest per-trajectory relative Manley-Rowe excursion.
    pub max_mr_drift: f64,
    mr0: f64,
}

impl Accumulator {
    pub fn new(n_snapshots: usize, n_modes: usize, n_steps: usize) -> Self {
        Self {
            trajectories: 0,
            sum_n: vec![vec![0.0; n_modes]; n_snapshots],
            sum_n2: vec![vec![0.0; n_modes]; n_snapshots],
            signal_photons: vec![0.0; n_steps + 1],
            pump_energy: vec![0.0; n_steps + 1],
            manley_rowe: vec![0.0; n_steps + 1],
            max_mr_drift: 0.0,
            mr0: 0.0,
        }
    }

    fn add_step(&mut self, step: usize, signal_photons: f64, pump_energy: f64, mr: f64) {
        self.signal_photons[step] += signal_photons;
        self.pump_energy[step] += pump_energy;
        self.manley_rowe[step] += mr;
        if step == 0 {
            self.mr0 = mr;
        } else if self.mr0 > 0.0 {
            self.max_mr_drift = self.max_mr_drift.max((mr - self.mr0).abs() / self.mr0);
        }
    }

    fn add_snapshot(&mut self, k: usize, data: &[C]) {
        for ((s1, s2), v) in self.sum_n[k].iter_mut().zip(self.sum_n2[k].iter_mut()).zip(data) {
            let n = v.norm_sqr();
            *s1 += n;
            *s2 += n * n;
        }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        self.trajectories += other.trajectories;
        for (a, b) in self.sum_n.iter_mut().zip(&other.sum_n) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.sum_n2.iter_mut().zip(&other.sum_n2) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in [
            (&mut self.signal_photons, &other.signal_photons),
            (&mut self.pump_energy, &other.pump_energy),
            (&mut self.manley_rowe, &other.manley_rowe),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.max_mr_drift = self.max_mr_drift.max(other.max_mr_drift);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub z_um: f64,
    pub pump_energy: f64,
    pub signal_photons: f64,
    pub manley_rowe: f64,
}

/// Ensemble averages over all trajectories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub grid: GridSpec,
    pub n_trajectories: usize,
    pub seed: u64,
    pub snapshot_z_um: Vec<f64>,
    /// `<|a|^2>` per mode, one array per snapshot.
    pub mean_occupation: Vec<Vec<f64>>,
    /// `<|a|^4>` per mode, one array per snapshot.
    pub second_moment: Vec<Vec<f64>>,
    pub active: Vec<bool>,
    pub steps: Vec<StepRecord>,
    pub depletion_fraction: f64,
    /// Largest relative excursion of `N_s + 2 N_p` seen in any trajectory.
    pub manley_rowe_drift: f64,
    pub diagnostics: SetupDiagnostics,
}

/// Number of fixed trajectory blocks; each is accumulated sequentially.
const BLOCKS: usize = 8;

pub fn propagate(sim: &Simulation) -> Result<EnsembleResult, PropagationError> {
    let n = sim.config.trajectories;
    let grid = *sim.grid();
    let n_snap = sim.snapshot_steps.len();
    let n_steps = sim.diagnostics.n_steps;
    let blocks = n.min(BLOCKS);
    let ranges: Vec<(u64, u64)> = (0..blocks)
        .map(|b| ((b * n / blocks) as u64, ((b + 1) * n / blocks) as u64))
        .collect();
    let wave = rayon::current_num_threads().max(1);
    let mut total = Accumulator::new(n_snap, grid.len(), n_steps);
    for chunk in ranges.chunks(wave) {
        let parts: Vec<Result<Accumulator, PropagationError>> = chunk
            .par_iter()
            .map(|&(lo, hi)| {
                let mut acc = Accumulator::new(n_snap, grid.len(), n_steps);
                for t in lo..hi {
                    sim.run_trajectory(t, &mut acc)?;
                }
                Ok(acc)
            })
            .collect();
        for p in parts {
            total.merge(&p?);
        }
    }
    Ok(finish(sim, total))
}

fn finish(sim: &Simulation, acc: Accumulator) -> EnsembleResult {
    let n = acc.trajectories as f64;
    let scale = |v: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        v.into_iter()
            .map(|a| a.into_iter().map(|x| x / n).collect())
            .collect()
    };
    let steps: Vec<StepRecord> = (0..acc.pump_energy.len())
        .map(|i| StepRecord {
            z_um: i as f64 * sim.dz,
            pump_energy: acc.pump_energy[i] / n,
            signal_photons: acc.signal_photons[i] / n,
            manley_rowe: acc.manley_rowe[i] / n,
        })
        .collect();
    let e0 = steps.first().map_or(0.0, |s| s.pump_energy);
    let e1 = steps.last().map_or(0.0, |s| s.pump_energy);
    EnsembleResult {
        grid: *sim.grid(),
        n_trajectories: acc.trajectories,
        seed: sim.config.seed,
        snapshot_z_um: sim.snapshot_z(),
        mean_occupation: scale(acc.sum_n),
        second_moment: scale(acc.sum_n2),
        active: sim.active.clone(),
        steps,
        depletion_fraction: if e0 > 0.0 { 1.0 - e1 / e0 } else { 0.0 },
        manley_rowe_drift: acc.max_mr_drift,
        diagnostics: sim.diagnostics.clone(),
    }
}

impl EnsembleResult {
    /// `<|a|^2> - 1/2` on active modes, zero elsewhere.
    pub fn photon_spectrum(&self, snapshot: usize) -> Vec<f64> {
        self.mean_occupation[snapshot]
            .iter()
            .zip(&self.active)
            .map(|(&m, &a)| if a { m - 0.5 } else { 0.0 })
            .collect()
    }

    /// Standard error of the per-mode photon number.
    pub fn standard_error(&self, snapshot: usize) -> Vec<f64> {
        let n = self.n_trajectories as f64;
        self.mean_occupation[snapshot]
            .iter()
            .zip(&self.second_moment[snapshot])
            .map(|(&m1, &m2)| {
                if self.n_trajectories < 2 {
                    return f64::INFINITY;
                }
                ((m2 - m1 * m1).max(0.0) * n / (n - 1.0) / n).sqrt()
            })
            .collect()
    }

    /// `(q_x, wavelength in um, photons)` on the `q_y = 0` plane, one row
    /// per grid mode.
    pub fn section_qy0(&self, snapshot: usize, crystal: &CrystalSpec) -> Vec<(f64, f64, f64)> {
        let g = &self.grid;
        let spec = self.photon_spectrum(snapshot);
        let qx = g.qx_axis();
        let om = g.omega_axis();
        let ws = crystal.carrier_omega(Carrier::Signal);
        let mut rows = Vec::with_capacity(g.nx * g.nt);
        for ix in 0..g.nx {
            for it in 0..g.nt {
                let lambda = 2.0 * PI * crate::medium::C_UM_PER_PS / (ws + om[it]);
                rows.push((qx[ix], lambda, spec[g.index(ix, 0, it)]));
            }
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        rows
    }

    /// Largest relative excursion of the ensemble-mean invariant.
    pub fn manley_rowe_mean_drift(&self) -> f64 {
        let i0 = self.steps[0].manley_rowe;
        self.steps
            .iter()
            .map(|s| (s.manley_rowe - i0).abs() / i0)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::PumpProfile;

    fn small_grid() -> GridSpec {
        GridSpec {
            nx: 32,
            ny: 8,
            nt: 8,
            lx_um: 32.0 * 1.6,
            ly_um: 60.0,
            t_window_ps: 0.5,
            dz_um: 50.0,
        }
    }

    #[test]
    fn wigner_is_reproducible() {
        let g = small_grid();
        let a = initialize_wigner(&g, 7, 3);
        let b = initialize_wigner(&g, 7, 3);
        let c = initialize_wigner(&g, 7, 4);
        assert_eq!(a.data, b.data);
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn linear_step_is_unitary() {
        let c = CrystalSpec::slt_default();
        let g = small_grid();
        let lin = LinearStep::new(&c, &g, Carrier::Signal, 25.0, None).unwrap();
        let mut f = initialize_wigner(&g, 1, 0);
        let e0 = f.energy();
        for _ in 0..100 {
            lin.apply(&mut f);
        }
        assert!((f.energy() - e0).abs() < 1e-12 * e0);
        assert_eq!(lin.evanescent, 0);
        // carrier mode picks up no phase in its own frame
        assert!((lin.multipliers[0] - C::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_coupling_is_identity_and_step_conserves_invariant() {
        let c = CrystalSpec::slt_default();
        let g = small_grid();
        let zero = NonlinearCoupling {
            row: vec![0.0; g.nx],
            row_len: g.ny * g.nt,
            delta0: 0.3,
        };
        let mut s = initialize_wigner(&g, 1, 0).data;
        let s0 = s.clone();
        let mut p = vec![C::new(3.0, 1.0); g.len()];
        nonlinear_step(&mut s, &mut p, &zero, 10.0, 25.0, false);
        assert_eq!(s, s0);

        // realistic regime: strong pump, ~0.01 rad of nonlinear phase per step
        let mut p = vec![C::new(800.0, 600.0); g.len()];
        let cpl = NonlinearCoupling::new(&c, &g, 1e-7).unwrap();
        let inv = |s: &[C], p: &[C]| {
            s.iter().map(|v| v.norm_sqr()).sum::<f64>() + 2.0 * p.iter().map(|v| v.norm_sqr()).sum::<f64>()
        };
        let i0 = inv(&s, &p);
        nonlinear_step(&mut s, &mut p, &cpl, 10.0, 25.0, false);
        assert!((inv(&s, &p) - i0).abs() < 1e-8 * i0);
    }

    #[test]
    fn setup_rejects_coarse_x_band() {
        let c = CrystalSpec::slt_default();
        let mut g = small_grid();
        g.lx_um = 32.0 * 5.0;
        let pump = PumpConfig::new(C::new(1.0, 0.0), C::default(), 0.0, PumpProfile::PlaneWave);
        let cfg = SimulationConfig {
            grid: g,
            trajectories: 1,
            seed: 0,
            snapshots_z_um: vec![],
            frozen_pump: false,
            dealias: true,
        };
        assert!(matches!(
            Simulation::new(c, pump, 1e-8, cfg),
            Err(PropagationError::Config(_))
        ));
    }
}
