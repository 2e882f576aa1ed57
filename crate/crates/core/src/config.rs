//! Run configuration: one TOML format shared by every subcommand.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{MaskParams, DEFAULT_WINDOW};
use crate::grid::GridSpec;
use crate::medium::{
    solve_poling_period, CrystalSpec, DegeneracyCondition, DispersionModel, KzMode, MediumError,
    PumpConfig, PumpProfile,
};
use crate::propagation::{PropagationError, Simulation, SimulationConfig};
use crate::qpm::{QpmContext, QpmError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn field(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(format!("unknown preset `{s}` (expected desk or paper)")),
        }
    }
}

/// A number, or a keyword such as `"degenerate"` / `"resonant"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NumberOr {
    Number(f64),
    Keyword(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SellmeierSpec {
    /// Name of a shipped data set.
    Builtin(String),
    Table(DispersionModel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrystalFile {
    pub poling_period_um: NumberOr,
    #[serde(default)]
    pub degeneracy: Option<DegeneracyCondition>,
    pub length_mm: f64,
    #[serde(rename = "temperature_C")]
    pub temperature_c: f64,
    #[serde(default = "default_deff", rename = "d_eff_pm_per_V")]
    pub d_eff_pm_per_v: f64,
    #[serde(default = "default_d01")]
    pub d01_over_deff: f64,
    #[serde(default = "default_pump_wl")]
    pub pump_wavelength_um: f64,
    #[serde(default)]
    pub extrapolate: bool,
    pub sellmeier: SellmeierSpec,
}

fn default_deff() -> f64 {
    13.8
}
fn default_d01() -> f64 {
    0.32
}
fn default_pump_wl() -> f64 {
    0.532
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    PlaneWave,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudesFile {
    /// `[re, im]` in sqrt(photons / um^3).
    pub alpha1: [f64; 2],
    pub alpha2: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpFile {
    #[serde(default)]
    pub gbar_per_mm: Option<f64>,
    #[serde(default)]
    pub ratio_r_abs: Option<f64>,
    #[serde(default)]
    pub ratio_r_phase_rad: Option<f64>,
    #[serde(default)]
    pub amplitudes: Option<AmplitudesFile>,
    /// `"resonant"` or a value in 1/um.
    #[serde(default)]
    pub q0p_um_inv: Option<NumberOr>,
    #[serde(default)]
    pub q0p_over_gx: Option<f64>,
    #[serde(default = "default_profile")]
    pub profile: ProfileKind,
    #[serde(default)]
    pub waist_x_um: Option<f64>,
    #[serde(default)]
    pub waist_y_um: Option<f64>,
}

fn default_profile() -> ProfileKind {
    ProfileKind::PlaneWave
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    #[serde(default)]
    pub preset: Option<Preset>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub nt: Option<usize>,
    #[serde(rename = "Lx_um")]
    pub lx_um: Option<f64>,
    #[serde(rename = "Ly_um")]
    pub ly_um: Option<f64>,
    #[serde(rename = "T_ps")]
    pub t_ps: Option<f64>,
    pub dz_um: Option<f64>,
    pub trajectories: Option<usize>,
    pub seed: Option<u64>,
    pub snapshots_z_mm: Option<Vec<f64>>,
    #[serde(default)]
    pub frozen_pump: bool,
    #[serde(default)]
    pub dealias: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpmFile {
    #[serde(default = "default_kz")]
    pub kz_mode: KzMode,
    #[serde(default = "default_n_omega")]
    pub n_omega: usize,
    #[serde(default = "default_n_angles")]
    pub n_angles: usize,
    /// Largest `|Omega|` sampled, rad/ps; defaults to the simulation band.
    #[serde(default)]
    pub omega_max: Option<f64>,
}

fn default_kz() -> KzMode {
    KzMode::Exact
}
fn default_n_omega() -> usize {
    128
}
fn default_n_angles() -> usize {
    256
}

impl Default for QpmFile {
    fn default() -> Self {
        Self {
            kz_mode: default_kz(),
            n_omega: default_n_omega(),
            n_angles: default_n_angles(),
            omega_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisFile {
    #[serde(default = "default_fit_min")]
    pub fit_min_gz: f64,
    #[serde(default)]
    pub fit_max_gz: Option<f64>,
    #[serde(default = "default_tol")]
    pub mismatch_tolerance_over_gbar: f64,
    #[serde(default = "default_hw")]
    pub hot_spot_half_width: usize,
}

fn default_fit_min() -> f64 {
    DEFAULT_WINDOW.0
}
fn default_tol() -> f64 {
    0.2
}
fn default_hw() -> usize {
    5
}

impl Default for AnalysisFile {
    fn default() -> Self {
        Self {
            fit_min_gz: default_fit_min(),
            fit_max_gz: None,
            mismatch_tolerance_over_gbar: default_tol(),
            hot_spot_half_width: default_hw(),
        }
    }
}

/// The file as written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub crystal: CrystalFile,
    pub pump: PumpFile,
    #[serde(default)]
    pub simulation: SimulationFile,
    #[serde(default)]
    pub qpm: QpmFile,
    #[serde(default)]
    pub analysis: AnalysisFile,
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Default resonant SLT configuration.
    pub fn example(gbar_per_mm: f64, r: f64, phase: f64) -> Self {
        Self {
            crystal: CrystalFile {
                poling_period_um: NumberOr::Keyword("degenerate".into()),
                degeneracy: None,
                length_mm: 10.0,
                temperature_c: 85.0,
                d_eff_pm_per_v: default_deff(),
                d01_over_deff: default_d01(),
                pump_wavelength_um: default_pump_wl(),
                extrapolate: false,
                sellmeier: SellmeierSpec::Builtin("slt-extraordinary".into()),
            },
            pump: PumpFile {
                gbar_per_mm: Some(gbar_per_mm),
                ratio_r_abs: Some(r),
                ratio_r_phase_rad: Some(phase),
                amplitudes: None,
                q0p_um_inv: Some(NumberOr::Keyword("resonant".into())),
                q0p_over_gx: None,
                profile: ProfileKind::PlaneWave,
                waist_x_um: None,
                waist_y_um: None,
            },
            simulation: SimulationFile::default(),
            qpm: QpmFile::default(),
            analysis: AnalysisFile::default(),
        }
    }
}

/// Desk and paper grids. Both resolve the pump fringe `2 pi / G_x` with
/// eight samples (`q_max = 4 G_x`) and cover `|Omega| <= 377` rad/ps; the
/// paper grid is four times finer in `q` and `Omega`.
pub fn preset_grid(preset: Preset, gx: f64, profile: ProfileKind) -> GridSpec {
    let (n, nyt, cells_per_gx) = match preset {
        Preset::Desk => (128, 64, 16.0),
        Preset::Paper => (512, 256, 64.0),
    };
    let fringe = 2.0 * PI / gx;
    let xmul = if profile == ProfileKind::Gaussian { 2 } else { 1 };
    let omega_max = 2.0 * PI * 60.0;
    GridSpec {
        nx: n * xmul,
        ny: nyt,
        nt: nyt,
        lx_um: cells_per_gx * fringe * xmul as f64,
        ly_um: cells_per_gx * fringe,
        t_window_ps: nyt as f64 * PI / omega_max,
        dz_um: 25.0,
    }
}

/// Default Gaussian waists for a preset: paper aspect ratio (5:2), with the
/// window spanning more than four waists in each direction.
pub fn preset_waists(preset: Preset) -> (f64, f64) {
    match preset {
        Preset::Desk => (100.0, 40.0),
        Preset::Paper => (400.0, 160.0),
    }
}

pub fn preset_trajectories(preset: Preset) -> usize {
    match preset {
        Preset::Desk => 64,
        Preset::Paper => 64,
    }
}

/// A fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub crystal: CrystalSpec,
    pub chi: f64,
    pub gbar: f64,
    pub r: Complex64,
    #[serde(skip)]
    pub pump: PumpConfig,
    pub q0p: f64,
    pub profile: PumpProfile,
    pub simulation: SimulationConfig,
    pub kz_mode: KzMode,
    pub qpm_n_omega: usize,
    pub qpm_n_angles: usize,
    pub qpm_omega_max: f64,
    pub mask: MaskParams,
    pub fit_window: (f64, f64),
}

impl RunConfig {
    pub fn from_file(file: &ConfigFile, preset_override: Option<Preset>) -> Result<Self, ConfigError> {
        let c = &file.crystal;
        let dispersion = match &c.sellmeier {
            SellmeierSpec::Builtin(name) if name == "slt-extraordinary" => DispersionModel::slt_extraordinary(),
            SellmeierSpec::Builtin(name) => {
                return Err(field("crystal.sellmeier", format!("unknown data set `{name}`")))
            }
            SellmeierSpec::Table(t) => t.clone(),
        };
        if !(c.length_mm > 0.0) {
            return Err(field("crystal.length_mm", "must be positive"));
        }
        let mut crystal = CrystalSpec {
            dispersion,
            poling_period_um: 1.0,
            length_um: c.length_mm * 1e3,
            temperature_c: c.temperature_c,
            d_eff_pm_per_v: c.d_eff_pm_per_v,
            d01_over_deff: c.d01_over_deff,
            pump_wavelength_um: c.pump_wavelength_um,
            extrapolate: c.extrapolate,
        };
        crystal.poling_period_um = match &c.poling_period_um {
            NumberOr::Number(v) if *v > 0.0 => *v,
            NumberOr::Number(_) => return Err(field("crystal.poling_period_um", "must be positive")),
            NumberOr::Keyword(k) if k == "degenerate" => {
                solve_poling_period(&crystal, c.degeneracy.unwrap_or(DegeneracyCondition::Exact))?
            }
            NumberOr::Keyword(k) => {
                return Err(field(
                    "crystal.poling_period_um",
                    format!("expected a number or \"degenerate\", got \"{k}\""),
                ))
            }
        };
        let chi = crystal.coupling_constant()?;
        let gx = crystal.gx();

        let p = &file.pump;
        let q0p = match (&p.q0p_um_inv, p.q0p_over_gx) {
            (Some(_), Some(_)) => {
                return Err(field("pump.q0p_um_inv", "give q0p_um_inv or q0p_over_gx, not both"))
            }
            (None, None) => gx,
            (None, Some(f)) => f * gx,
            (Some(NumberOr::Number(v)), None) => *v,
            (Some(NumberOr::Keyword(k)), None) if k == "resonant" => gx,
            (Some(NumberOr::Keyword(k)), None) => {
                return Err(field(
                    "pump.q0p_um_inv",
                    format!("expected a number or \"resonant\", got \"{k}\""),
                ))
            }
        };
        if !(q0p > 0.0) {
            return Err(field("pump.q0p_um_inv", "must be positive"));
        }

        let s = &file.simulation;
        let preset = preset_override.or(s.preset).unwrap_or(Preset::Desk);
        let (dwx, dwy) = preset_waists(preset);
        let profile = match p.profile {
            ProfileKind::PlaneWave => PumpProfile::PlaneWave,
            ProfileKind::Gaussian => PumpProfile::Gaussian {
                waist_x_um: p.waist_x_um.unwrap_or(dwx),
                waist_y_um: p.waist_y_um.unwrap_or(dwy),
            },
        };

        let (pump, gbar, r) = match (&p.amplitudes, p.gbar_per_mm) {
            (Some(_), Some(_)) => {
                return Err(field("pump.gbar_per_mm", "give gbar_per_mm or amplitudes, not both"))
            }
            (None, None) => return Err(field("pump", "one of gbar_per_mm or amplitudes is required")),
            (None, Some(g)) => {
                if !(g > 0.0) {
                    return Err(field("pump.gbar_per_mm", "must be positive"));
                }
                let ra = p.ratio_r_abs.unwrap_or(0.0);
                if !(0.0..=1.0).contains(&ra) {
                    return Err(field("pump.ratio_r_abs", "must lie in [0, 1]"));
                }
                let r = Complex64::from_polar(ra, p.ratio_r_phase_rad.unwrap_or(0.0));
                let gbar = g * 1e-3;
                (PumpConfig::from_gain(chi, gbar, r, q0p, profile)?, gbar, r)
            }
            (Some(a), None) => {
                if p.ratio_r_abs.is_some() || p.ratio_r_phase_rad.is_some() {
                    return Err(field("pump.ratio_r_abs", "ratio is implied by amplitudes"));
                }
                let pc = PumpConfig::new(
                    Complex64::new(a.alpha1[0], a.alpha1[1]),
                    Complex64::new(a.alpha2[0], a.alpha2[1]),
                    q0p,
                    profile,
                );
                let g = crate::medium::gain_parameters(&pc, chi)?;
                (pc, g.gbar, g.r)
            }
        };

        let mut grid = preset_grid(preset, gx, p.profile);
        macro_rules! over {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        over!(grid.nx, s.nx);
        over!(grid.ny, s.ny);
        over!(grid.nt, s.nt);
        over!(grid.lx_um, s.lx_um);
        over!(grid.ly_um, s.ly_um);
        over!(grid.t_window_ps, s.t_ps);
        over!(grid.dz_um, s.dz_um);
        grid.validate()
            .map_err(|e| field("simulation", e.to_string()))?;
        if let PumpProfile::Gaussian { waist_x_um, waist_y_um } = profile {
            if !(waist_x_um > 0.0 && waist_y_um > 0.0) {
                return Err(field("pump.waist_x_um", "waists must be positive"));
            }
            if grid.lx_um < 4.0 * waist_x_um || grid.ly_um < 4.0 * waist_y_um {
                return Err(field(
                    "pump.waist_x_um",
                    format!(
                        "window {:.1}x{:.1} um must span four waists ({}x{} um)",
                        grid.lx_um, grid.ly_um, waist_x_um, waist_y_um
                    ),
                ));
            }
        }
        let snapshots_z_um = match &s.snapshots_z_mm {
            Some(v) => {
                if v.iter().any(|&z| !(0.0..=c.length_mm).contains(&z)) {
                    return Err(field("simulation.snapshots_z_mm", "values must lie in [0, length_mm]"));
                }
                v.iter().map(|z| z * 1e3).collect()
            }
            None => (0..=20).map(|i| crystal.length_um * i as f64 / 20.0).collect(),
        };
        let simulation = SimulationConfig {
            grid,
            trajectories: s.trajectories.unwrap_or(preset_trajectories(preset)),
            seed: s.seed.unwrap_or(1),
            snapshots_z_um,
            frozen_pump: s.frozen_pump,
            dealias: s.dealias.unwrap_or(true),
        };
        if simulation.trajectories == 0 {
            return Err(field("simulation.trajectories", "must be at least 1"));
        }

        let a = &file.analysis;
        let q = &file.qpm;
        Ok(Self {
            preset,
            crystal,
            chi,
            gbar,
            r,
            pump,
            q0p,
            profile,
            qpm_omega_max: q.omega_max.unwrap_or(PI / grid.dt()),
            qpm_n_omega: q.n_omega,
            qpm_n_angles: q.n_angles,
            kz_mode: q.kz_mode,
            simulation,
            mask: MaskParams {
                mismatch_tolerance: a.mismatch_tolerance_over_gbar * gbar,
                hot_spot_half_width: a.hot_spot_half_width,
            },
            fit_window: (a.fit_min_gz, a.fit_max_gz.unwrap_or(f64::INFINITY)),
        })
    }

    pub fn qpm_context(&self) -> Result<QpmContext, QpmError> {
        QpmContext::new(self.crystal.clone(), self.q0p, self.kz_mode)
    }

    pub fn simulation(&self) -> Result<Simulation, PropagationError> {
        Simulation::new(self.crystal.clone(), self.pump, self.chi, self.simulation.clone())
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_round_trips() {
        let f = ConfigFile::example(0.4, 1.0, 0.0);
        let back = ConfigFile::parse(&f.to_toml(), "mem").unwrap();
        assert_eq!(f, back);
        let rc = RunConfig::from_file(&back, None).unwrap();
        assert!((rc.gbar - 4e-4).abs() < 1e-15);
        assert_eq!(rc.simulation.grid.nx, 128);
        assert!((rc.simulation.grid.dqx() - rc.crystal.gx() / 16.0).abs() < 1e-12);
    }

    #[test]
    fn missing_sellmeier_is_named() {
        let text = ConfigFile::example(0.4, 0.0, 0.0)
            .to_toml()
            .lines()
            .filter(|l| !l.starts_with("sellmeier"))
            .collect::<Vec<_>>()
            .join("\n");
        let e = ConfigFile::parse(&text, "x.toml").unwrap_err().to_string();
        assert!(e.contains("sellmeier"), "{e}");
    }

    #[test]
    fn gaussian_preset_doubles_x() {
        let mut f = ConfigFile::example(0.4, 0.0, 0.0);
        f.pump.profile = ProfileKind::Gaussian;
        let rc = RunConfig::from_file(&f, Some(Preset::Paper)).unwrap();
        assert_eq!((rc.simulation.grid.nx, rc.simulation.grid.ny), (1024, 256));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_file(&ConfigFile::example(0.4, 0.0, 0.0), None).unwrap();
        let b = RunConfig::from_file(&ConfigFile::example(0.4, 1.0, 0.0), None).unwrap();
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
