//! Simulation grid and the field container shared by the pump builder and the
//! propagator.
//!
//! Storage is row-major `(x, y, t)` with `t` fastest. Spectral axes use FFT
//! ordering. Fields carry `exp(i(q.r - Omega t))`, so the detuning attached to
//! FFT bin `k` along `t` is `-2 pi fftfreq(k) / T`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::{Fft3, FftWork};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid size {axis}={n} is not a power of two")]
    NotPowerOfTwo { axis: &'static str, n: usize },
    #[error("grid extent {axis} must be positive and finite, got {value}")]
    BadExtent { axis: &'static str, value: f64 },
}

/// Transverse extent in micrometres, time window in picoseconds, step in
/// micrometres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub lx_um: f64,
    pub ly_um: f64,
    pub t_window_ps: f64,
    pub dz_um: f64,
}

fn fftfreq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        for (axis, n) in [("nx", self.nx), ("ny", self.ny), ("nt", self.nt)] {
            if n == 0 || !n.is_power_of_two() {
                return Err(GridError::NotPowerOfTwo { axis, n });
            }
        }
        for (axis, value) in [
            ("lx_um", self.lx_um),
            ("ly_um", self.ly_um),
            ("t_window_ps", self.t_window_ps),
            ("dz_um", self.dz_um),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GridError::BadExtent { axis, value });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dx(&self) -> f64 {
        self.lx_um / self.nx as f64
    }
    pub fn dy(&self) -> f64 {
        self.ly_um / self.ny as f64
    }
    pub fn dt(&self) -> f64 {
        self.t_window_ps / self.nt as f64
    }
    pub fn dqx(&self) -> f64 {
        2.0 * PI / self.lx_um
    }
    pub fn dqy(&self) -> f64 {
        2.0 * PI / self.ly_um
    }
    pub fn domega(&self) -> f64 {
        2.0 * PI / self.t_window_ps
    }

    /// Cell volume in um^2 ps; `|a|^2 = |A|^2 dV` converts flux density to
    /// photons per cell.
    pub fn dv(&self) -> f64 {
        self.dx() * self.dy() * self.dt()
    }

    pub fn x_coords(&self) -> Vec<f64> {
        centered(self.nx, self.dx())
    }
    pub fn y_coords(&self) -> Vec<f64> {
        centered(self.ny, self.dy())
    }
    pub fn t_coords(&self) -> Vec<f64> {
        centered(self.nt, self.dt())
    }

    pub fn qx_axis(&self) -> Vec<f64> {
        (0..self.nx).map(|k| fftfreq(k, self.nx) * self.dqx()).collect()
    }
    pub fn qy_axis(&self) -> Vec<f64> {
        (0..self.ny).map(|k| fftfreq(k, self.ny) * self.dqy()).collect()
    }
    pub fn omega_axis(&self) -> Vec<f64> {
        (0..self.nt)
            .map(|k| -fftfreq(k, self.nt) * self.domega())
            .collect()
    }

    /// Signed FFT bin number along x.
    pub fn qx_bin(&self, ix: usize) -> i64 {
        fftfreq(ix, self.nx) as i64
    }
    pub fn qy_bin(&self, iy: usize) -> i64 {
        fftfreq(iy, self.ny) as i64
    }
    pub fn t_bin(&self, it: usize) -> i64 {
        fftfreq(it, self.nt) as i64
    }

    pub fn index(&self, ix: usize, iy: usize, it: usize) -> usize {
        (ix * self.ny + iy) * self.nt + it
    }

    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let it = idx % self.nt;
        let iy = (idx / self.nt) % self.ny;
        (idx / (self.nt * self.ny), iy, it)
    }

    /// Bin count `q / dqx` when `q` sits on the x lattice.
    pub fn qx_cells(&self, q: f64) -> Option<i64> {
        let c = q / self.dqx();
        let r = c.round();
        ((c - r).abs() < 1e-6).then_some(r as i64)
    }

    /// Index of the idler `(rho - q, -q_y, -Omega)` for the signal at `idx`,
    /// with the x resultant given in bins. Wraps periodically.
    pub fn partner_index(&self, idx: usize, rho_cells: i64) -> usize {
        let (ix, iy, it) = self.unravel(idx);
        let wrap = |v: i64, n: usize| v.rem_euclid(n as i64) as usize;
        let jx = wrap(rho_cells - self.qx_bin(ix), self.nx);
        let jy = wrap(-self.qy_bin(iy), self.ny);
        let jt = wrap(-self.t_bin(it), self.nt);
        self.index(jx, jy, jt)
    }
}

fn centered(n: usize, d: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 - (n / 2) as f64) * d).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Direct,
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Carrier {
    Signal,
    Pump,
}

/// Complex amplitude on the grid, in photons-per-cell units (`|a|^2` is an
/// occupation in the spectral domain).
#[derive(Clone, Debug)]
pub struct SpectralField {
    pub grid: GridSpec,
    pub domain: Domain,
    pub carrier: Carrier,
    pub data: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: GridSpec, domain: Domain, carrier: Carrier) -> Self {
        Self {
            grid,
            domain,
            carrier,
            data: vec![Complex64::default(); grid.len()],
        }
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn to_spectral(&mut self, fft: &Fft3, work: &mut FftWork) {
        if self.domain == Domain::Direct {
            fft.forward(&mut self.data, work);
            self.domain = Domain::Spectral;
        }
    }

    pub fn to_direct(&mut self, fft: &Fft3, work: &mut FftWork) {
        if self.domain == Domain::Spectral {
            fft.inverse(&mut self.data, work);
            self.domain = Domain::Direct;
        }
    }
}
