//! Crystal dispersion, hexagonal poling geometry, and the dual-beam pump.
//!
//! Units: micrometres, picoseconds, rad/ps, 1/um. Pump amplitudes are photon
//! flux densities in 1/(um ps^1/2); couplings `g = chi * alpha` are in 1/um.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Carrier, Domain, GridSpec, SpectralField};

/// Speed of light in um/ps.
pub const C_UM_PER_PS: f64 = 299.792_458;
const C_SI: f64 = 299_792_458.0;
const HBAR_SI: f64 = 1.054_571_817e-34;
const EPS0_SI: f64 = 8.854_187_812_8e-12;

const DEFAULT_SELLMEIER: &str = include_str!("../data/slt_extraordinary.toml");

#[derive(Debug, Error, PartialEq)]
pub enum MediumError {
    #[error("wavelength {lambda_um} um / temperature {temperature_c} C outside the dispersion model window")]
    OutsideWindow { lambda_um: f64, temperature_c: f64 },
    #[error("Sellmeier expression has no real index at {lambda_um} um")]
    Pole { lambda_um: f64 },
    #[error("transverse wavevector {q} exceeds k = {k}; mode is evanescent")]
    Evanescent { q: f64, k: f64 },
    #[error("no poling period found in [{lo}, {hi}] um")]
    NoPolingPeriod { lo: f64, hi: f64 },
    #[error("pump has no amplitude in either beam")]
    NoPump,
    #[error("pump fringe period {period_um} um is resolved by only {samples:.2} grid cells (need 8)")]
    UnresolvedFringe { period_um: f64, samples: f64 },
    #[error("plane-wave pump wavevector {q0p} is not a multiple of the grid spacing {dqx}")]
    IncommensuratePump { q0p: f64, dqx: f64 },
    #[error("invalid parameter: {0}")]
    Invalid(String),
}

/// Five-term temperature-dependent Sellmeier coefficients; see the data file
/// for the functional form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionModel {
    pub name: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub b_t: f64,
    pub c_t: f64,
    pub lambda_min_um: f64,
    pub lambda_max_um: f64,
    pub temperature_min_c: f64,
    pub temperature_max_c: f64,
}

impl DispersionModel {
    /// The bundled stoichiometric LiTaO3 extraordinary-index set.
    pub fn slt_extraordinary() -> Self {
        toml::from_str(DEFAULT_SELLMEIER).expect("bundled Sellmeier data parses")
    }

    pub fn in_window(&self, lambda_um: f64, temperature_c: f64) -> bool {
        (self.lambda_min_um..=self.lambda_max_um).contains(&lambda_um)
            && (self.temperature_min_c..=self.temperature_max_c).contains(&temperature_c)
    }

    pub fn refractive_index(&self, lambda_um: f64, temperature_c: f64) -> Result<f64, MediumError> {
        if !self.in_window(lambda_um, temperature_c) {
            return Err(MediumError::OutsideWindow {
                lambda_um,
                temperature_c,
            });
        }
        self.refractive_index_unchecked(lambda_um, temperature_c)
    }

    /// Same expression without the validity-window check.
    pub fn refractive_index_unchecked(
        &self,
        lambda_um: f64,
        temperature_c: f64,
    ) -> Result<f64, MediumError> {
        let tk2 = (temperature_c + 273.15).powi(2);
        let l2 = lambda_um * lambda_um;
        let pole = self.c + self.c_t * tk2;
        let n2 = self.a
            + (self.b + self.b_t * tk2) / (l2 - pole * pole)
            + self.d * l2
            + self.e / (l2 - self.f * self.f)
            + self.g / (l2 - self.h * self.h);
        if n2.is_finite() && n2 > 1.0 {
            Ok(n2.sqrt())
        } else {
            Err(MediumError::Pole { lambda_um })
        }
    }
}

/// How the longitudinal wavevector is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KzMode {
    /// `sqrt(k(Omega)^2 - q^2)`.
    Exact,
    /// `k(Omega) - q^2 / 2k(Omega)`.
    Paraxial,
    /// Paraxial with `k(Omega)` expanded to second order about the carrier.
    ParaxialTaylor,
}

/// Which degeneracy relation fixes the poling period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneracyCondition {
    /// `2k_s - k_pz + G_z - G_x^2/k_s = 0` (paraxial signal, exact pump).
    Paraxial,
    /// `2 sqrt(k_s^2 - G_x^2) - k_pz + G_z = 0`.
    Exact,
}

/// A signal or idler mode: transverse wavevector and detuning from the
/// carrier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mode {
    pub qx: f64,
    pub qy: f64,
    pub omega: f64,
}

impl Mode {
    pub fn new(qx: f64, qy: f64, omega: f64) -> Self {
        Self { qx, qy, omega }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrystalSpec {
    pub dispersion: DispersionModel,
    pub poling_period_um: f64,
    pub length_um: f64,
    pub temperature_c: f64,
    pub d_eff_pm_per_v: f64,
    /// Fourier weight of the first hexagonal harmonic relative to `d_eff`.
    pub d01_over_deff: f64,
    pub pump_wavelength_um: f64,
    /// Evaluate the Sellmeier expression outside its validity window.
    #[serde(default)]
    pub extrapolate: bool,
}

/// `(k, dk/dOmega, d2k/dOmega2)` at a carrier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispersionTaylor {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
}

impl CrystalSpec {
    /// Default SLT crystal at 85 C with the period solved from the paraxial
    /// degeneracy condition.
    pub fn slt_default() -> Self {
        let mut c = Self {
            dispersion: DispersionModel::slt_extraordinary(),
            poling_period_um: 1.0,
            length_um: 10_000.0,
            temperature_c: 85.0,
            d_eff_pm_per_v: 13.8,
            d01_over_deff: 0.32,
            pump_wavelength_um: 0.532,
            extrapolate: false,
        };
        c.poling_period_um = solve_poling_period(&c, DegeneracyCondition::Paraxial)
            .expect("default crystal has a degenerate period");
        c
    }

    pub fn gx(&self) -> f64 {
        2.0 * PI / (3f64.sqrt() * self.poling_period_um)
    }

    pub fn gz(&self) -> f64 {
        2.0 * PI / self.poling_period_um
    }

    /// The two first-order reciprocal vectors `(+-G_x, G_z)` as `(x, z)`.
    pub fn reciprocal_vectors(&self) -> [(f64, f64); 2] {
        [(self.gx(), self.gz()), (-self.gx(), self.gz())]
    }

    pub fn carrier_omega(&self, carrier: Carrier) -> f64 {
        let wp = 2.0 * PI * C_UM_PER_PS / self.pump_wavelength_um;
        match carrier {
            Carrier::Pump => wp,
            Carrier::Signal => 0.5 * wp,
        }
    }

    pub fn index_at(&self, lambda_um: f64) -> Result<f64, MediumError> {
        if self.extrapolate {
            self.dispersion
                .refractive_index_unchecked(lambda_um, self.temperature_c)
        } else {
            self.dispersion
                .refractive_index(lambda_um, self.temperature_c)
        }
    }

    /// `k = (omega_carrier + Omega) n / c` in 1/um.
    pub fn wavenumber(&self, carrier: Carrier, omega: f64) -> Result<f64, MediumError> {
        let w = self.carrier_omega(carrier) + omega;
        if w <= 0.0 {
            return Err(MediumError::Invalid(format!("non-positive frequency {w}")));
        }
        let lambda = 2.0 * PI * C_UM_PER_PS / w;
        Ok(w * self.index_at(lambda)? / C_UM_PER_PS)
    }

    pub fn taylor(&self, carrier: Carrier) -> Result<DispersionTaylor, MediumError> {
        let h = 2.0;
        let k0 = self.wavenumber(carrier, 0.0)?;
        let kp = self.wavenumber(carrier, h)?;
        let km = self.wavenumber(carrier, -h)?;
        let kp2 = self.wavenumber(carrier, 2.0 * h)?;
        let km2 = self.wavenumber(carrier, -2.0 * h)?;
        Ok(DispersionTaylor {
            k0,
            k1: (8.0 * (kp - km) - (kp2 - km2)) / (12.0 * h),
            k2: (16.0 * (kp + km) - (kp2 + km2) - 30.0 * k0) / (12.0 * h * h),
        })
    }

    pub fn wavevector_z(
        &self,
        carrier: Carrier,
        omega: f64,
        qx: f64,
        qy: f64,
        mode: KzMode,
    ) -> Result<f64, MediumError> {
        let q2 = qx * qx + qy * qy;
        match mode {
            KzMode::Exact => {
                let k = self.wavenumber(carrier, omega)?;
                kz_exact(k, q2)
            }
            KzMode::Paraxial => {
                let k = self.wavenumber(carrier, omega)?;
                Ok(k - q2 / (2.0 * k))
            }
            KzMode::ParaxialTaylor => {
                let t = self.taylor(carrier)?;
                Ok(t.k0 + t.k1 * omega + 0.5 * t.k2 * omega * omega - q2 / (2.0 * t.k0))
            }
        }
    }

    /// `D = k_sz(w_s) + k_sz(w_i) - k_pz(w_p) + G_z`, where the pump mode has
    /// transverse wavevector `pump_q` and detuning `Omega_s + Omega_i`.
    pub fn phase_mismatch(
        &self,
        signal: Mode,
        idler: Mode,
        pump_q: (f64, f64),
        mode: KzMode,
    ) -> Result<f64, MediumError> {
        let ks = self.wavevector_z(Carrier::Signal, signal.omega, signal.qx, signal.qy, mode)?;
        let ki = self.wavevector_z(Carrier::Signal, idler.omega, idler.qx, idler.qy, mode)?;
        let kp = self.wavevector_z(
            Carrier::Pump,
            signal.omega + idler.omega,
            pump_q.0,
            pump_q.1,
            mode,
        )?;
        Ok(ks + ki - kp + self.gz())
    }

    /// Nonlinear coupling `chi` in ps^1/2: `g [1/um] = chi * alpha`.
    pub fn coupling_constant(&self) -> Result<f64, MediumError> {
        let d01 = self.d01_over_deff * self.d_eff_pm_per_v * 1e-12;
        let wp = 2.0 * PI * C_SI / (self.pump_wavelength_um * 1e-6);
        let ws = 0.5 * wp;
        let np = self.index_at(self.pump_wavelength_um)?;
        let ns = self.index_at(2.0 * self.pump_wavelength_um)?;
        let chi_si =
            d01 * (HBAR_SI * wp * ws * ws / (8.0 * EPS0_SI * C_SI.powi(3) * np * ns * ns)).sqrt();
        Ok(chi_si * 1e6)
    }
}

pub(crate) fn kz_exact(k: f64, q2: f64) -> Result<f64, MediumError> {
    let s = k * k - q2;
    if s < 0.0 {
        Err(MediumError::Evanescent { q: q2.sqrt(), k })
    } else {
        Ok(s.sqrt())
    }
}

/// Period of the hexagonal lattice that makes the non-collinear degenerate
/// process at `q = +-G_x` phase matched. The crystal's own period is ignored.
pub fn solve_poling_period(
    crystal: &CrystalSpec,
    condition: DegeneracyCondition,
) -> Result<f64, MediumError> {
    let ks = crystal.wavenumber(Carrier::Signal, 0.0)?;
    let kp = crystal.wavenumber(Carrier::Pump, 0.0)?;
    let residual = |period: f64| {
        let gz = 2.0 * PI / period;
        let gx = gz / 3f64.sqrt();
        let kpz = (kp * kp - gx * gx).sqrt();
        match condition {
            DegeneracyCondition::Paraxial => 2.0 * ks - kpz + gz - gx * gx / ks,
            DegeneracyCondition::Exact => 2.0 * (ks * ks - gx * gx).sqrt() - kpz + gz,
        }
    };
    let (lo, hi) = (2.0, 50.0);
    bisect(residual, lo, hi, 1e-13).ok_or(MediumError::NoPolingPeriod { lo, hi })
}

/// Plain bisection on a sign change; returns `None` when `f(a)` and `f(b)`
/// share a sign.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if !(fa.is_finite() && fb.is_finite()) || fa * fb > 0.0 {
        return None;
    }
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a).abs() < xtol * (1.0 + m.abs()) {
            return Some(m);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PumpProfile {
    PlaneWave,
    /// Amplitude `exp(-x^2/w_x^2 - y^2/w_y^2)` centred in the window.
    Gaussian { waist_x_um: f64, waist_y_um: f64 },
}

/// Dual-beam pump `alpha_1 e^{i q0p x} + alpha_2 e^{-i q0p x}`.
///
/// Beam 1 always carries the larger amplitude. When the caller's amplitudes
/// are the other way round they are swapped and `mirrored` records that the
/// x axis was flipped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PumpConfig {
    pub alpha1: Complex64,
    pub alpha2: Complex64,
    pub q0p: f64,
    pub profile: PumpProfile,
    pub mirrored: bool,
}

impl PumpConfig {
    pub fn new(alpha1: Complex64, alpha2: Complex64, q0p: f64, profile: PumpProfile) -> Self {
        let mirrored = alpha2.norm() > alpha1.norm();
        let (alpha1, alpha2) = if mirrored {
            (alpha2, alpha1)
        } else {
            (alpha1, alpha2)
        };
        Self {
            alpha1,
            alpha2,
            q0p,
            profile,
            mirrored,
        }
    }

    /// Amplitudes giving total gain `gbar` (1/um) and ratio `r = g2/g1`, with
    /// `g1` real and positive.
    pub fn from_gain(
        chi: f64,
        gbar: f64,
        r: Complex64,
        q0p: f64,
        profile: PumpProfile,
    ) -> Result<Self, MediumError> {
        if !(chi > 0.0 && gbar > 0.0 && r.is_finite()) {
            return Err(MediumError::Invalid(format!(
                "need chi > 0, gbar > 0 and finite r (chi={chi}, gbar={gbar}, r={r})"
            )));
        }
        let g1 = gbar / (1.0 + r.norm_sqr()).sqrt();
        let g2 = r * g1;
        Ok(Self::new(
            Complex64::new(g1 / chi, 0.0),
            g2 / chi,
            q0p,
            profile,
        ))
    }

    /// Convenience: the grating-resonant pump `q0p = G_x`.
    pub fn resonant(crystal: &CrystalSpec, chi: f64, gbar: f64, r: Complex64) -> Result<Self, MediumError> {
        Self::from_gain(chi, gbar, r, crystal.gx(), PumpProfile::PlaneWave)
    }
}

/// Coupling strengths for one pump setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainParameters {
    pub g1: Complex64,
    pub g2: Complex64,
    pub gbar: f64,
    pub r: Complex64,
}

impl GainParameters {
    /// Direct construction from `gbar` and `r` (`g1` real positive).
    pub fn from_ratio(gbar: f64, r: Complex64) -> Self {
        let g1 = gbar / (1.0 + r.norm_sqr()).sqrt();
        Self {
            g1: Complex64::new(g1, 0.0),
            g2: r * g1,
            gbar,
            r,
        }
    }
}

pub fn gain_parameters(config: &PumpConfig, chi: f64) -> Result<GainParameters, MediumError> {
    if config.alpha1.norm() == 0.0 {
        return Err(MediumError::NoPump);
    }
    let g1 = config.alpha1 * chi;
    let g2 = config.alpha2 * chi;
    Ok(GainParameters {
        g1,
        g2,
        gbar: (g1.norm_sqr() + g2.norm_sqr()).sqrt(),
        r: g2 / g1,
    })
}

/// Samples the pump on the grid in the direct domain, in photons-per-cell
/// amplitude units (`alpha * sqrt(dV)`).
pub fn build_pump(config: &PumpConfig, grid: &GridSpec) -> Result<SpectralField, MediumError> {
    grid.validate()
        .map_err(|e| MediumError::Invalid(e.to_string()))?;
    if config.alpha1.norm() == 0.0 {
        return Err(MediumError::NoPump);
    }
    if config.q0p != 0.0 {
        let period = 2.0 * PI / config.q0p.abs();
        let samples = period / grid.dx();
        if samples < 8.0 - 1e-9 {
            return Err(MediumError::UnresolvedFringe {
                period_um: period,
                samples,
            });
        }
    }
    if matches!(config.profile, PumpProfile::PlaneWave) && grid.qx_cells(config.q0p).is_none() {
        return Err(MediumError::IncommensuratePump {
            q0p: config.q0p,
            dqx: grid.dqx(),
        });
    }
    let sq = grid.dv().sqrt();
    let xs = grid.x_coords();
    let ys = grid.y_coords();
    let mut field = SpectralField::zeros(*grid, Domain::Direct, Carrier::Pump);
    for (ix, &x) in xs.iter().enumerate() {
        let fringe = config.alpha1 * Complex64::from_polar(1.0, config.q0p * x)
            + config.alpha2 * Complex64::from_polar(1.0, -config.q0p * x);
        for (iy, &y) in ys.iter().enumerate() {
            let env = match config.profile {
                PumpProfile::PlaneWave => 1.0,
                PumpProfile::Gaussian {
                    waist_x_um,
                    waist_y_um,
                } => (-(x / waist_x_um).powi(2) - (y / waist_y_um).powi(2)).exp(),
            };
            let v = fringe * (env * sq);
            let base = grid.index(ix, iy, 0);
            field.data[base..base + grid.nt].fill(v);
        }
    }
    Ok(field)
}
