//! Phase-matching geometry of the down-conversion branches.
//!
//! A branch pairs a signal mode `w = (q, Omega)` with the idler
//! `(rho e_x - q, -Omega)`, where the resultant `rho` collects the pump
//! transverse wavevector and the grating vector `+-G_x`. Its
//! phase-matching surface is `D_rho(q, Omega) = 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Carrier;
use crate::medium::{bisect, kz_exact, CrystalSpec, KzMode, MediumError};

#[derive(Debug, Error, PartialEq)]
pub enum QpmError {
    #[error(transparent)]
    Medium(#[from] MediumError),
    #[error("branch {0:?} only exists at resonance q0p = G_x")]
    NotResonant(BranchLabel),
    #[error("|Omega| = {omega} exceeds the Taylor validity window {window}")]
    OutsideWindow { omega: f64, window: f64 },
    #[error("branches {0:?} and {1:?} have the same resultant; no shared line")]
    SameResultant(BranchLabel, BranchLabel),
    #[error("invalid sampling: {0}")]
    Sampling(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BranchLabel {
    /// Merged central branch at resonance (pump 1 with -G_x, pump 2 with +G_x).
    Sigma0,
    Sigma11,
    Sigma12,
    Sigma21,
    Sigma22,
}

impl BranchLabel {
    pub const ALL: [BranchLabel; 5] = [
        BranchLabel::Sigma0,
        BranchLabel::Sigma11,
        BranchLabel::Sigma12,
        BranchLabel::Sigma21,
        BranchLabel::Sigma22,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BranchLabel::Sigma0 => "sigma0",
            BranchLabel::Sigma11 => "sigma11",
            BranchLabel::Sigma12 => "sigma12",
            BranchLabel::Sigma21 => "sigma21",
            BranchLabel::Sigma22 => "sigma22",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name() == s.to_ascii_lowercase())
    }
}

/// Crystal plus pump direction: everything needed to evaluate mismatches.
#[derive(Clone, Debug)]
pub struct QpmContext {
    pub crystal: CrystalSpec,
    pub q0p: f64,
    pub kz_mode: KzMode,
    kpz: f64,
}

/// Relative tolerance for treating the pump as grating-resonant.
pub const RESONANCE_RTOL: f64 = 1e-9;

impl QpmContext {
    pub fn new(crystal: CrystalSpec, q0p: f64, kz_mode: KzMode) -> Result<Self, QpmError> {
        let kpz = crystal.wavevector_z(Carrier::Pump, 0.0, q0p, 0.0, kz_mode)?;
        Ok(Self {
            crystal,
            q0p,
            kz_mode,
            kpz,
        })
    }

    pub fn resonant(crystal: CrystalSpec, kz_mode: KzMode) -> Result<Self, QpmError> {
        let q = crystal.gx();
        Self::new(crystal, q, kz_mode)
    }

    pub fn gx(&self) -> f64 {
        self.crystal.gx()
    }

    pub fn is_resonant(&self) -> bool {
        (self.q0p - self.gx()).abs() <= RESONANCE_RTOL * self.gx()
    }

    /// Branches present for this pump: three at resonance, four otherwise.
    pub fn branches(&self) -> Vec<BranchLabel> {
        if self.is_resonant() {
            vec![BranchLabel::Sigma0, BranchLabel::Sigma11, BranchLabel::Sigma22]
        } else {
            vec![
                BranchLabel::Sigma11,
                BranchLabel::Sigma12,
                BranchLabel::Sigma21,
                BranchLabel::Sigma22,
            ]
        }
    }

    pub fn resultant(&self, label: BranchLabel) -> Result<f64, QpmError> {
        let (q, g) = (self.q0p, self.gx());
        Ok(match label {
            BranchLabel::Sigma0 => {
                if !self.is_resonant() {
                    return Err(QpmError::NotResonant(label));
                }
                0.0
            }
            BranchLabel::Sigma11 => q + g,
            BranchLabel::Sigma12 => q - g,
            BranchLabel::Sigma21 => g - q,
            BranchLabel::Sigma22 => -(q + g),
        })
    }

    /// Constant part `-k_pz + G_z` shared by every branch.
    pub fn pump_offset(&self) -> f64 {
        self.crystal.gz() - self.kpz
    }

    fn kz_signal(&self, k: f64, q2: f64) -> Result<f64, MediumError> {
        match self.kz_mode {
            KzMode::Exact => kz_exact(k, q2),
            KzMode::Paraxial | KzMode::ParaxialTaylor => Ok(k - q2 / (2.0 * k)),
        }
    }

    /// `D_rho` for signal `(qx, qy, Omega)`.
    pub fn mismatch(&self, rho: f64, qx: f64, qy: f64, omega: f64) -> Result<f64, QpmError> {
        let (k1, k2) = self.signal_k_pair(omega)?;
        self.mismatch_with(k1, k2, rho, qx, qy)
    }

    /// `(k(Omega), k(-Omega))` on the signal carrier.
    pub fn signal_k_pair(&self, omega: f64) -> Result<(f64, f64), QpmError> {
        if self.kz_mode == KzMode::ParaxialTaylor {
            let t = self.crystal.taylor(Carrier::Signal)?;
            let f = |w: f64| t.k0 + t.k1 * w + 0.5 * t.k2 * w * w;
            return Ok((f(omega), f(-omega)));
        }
        Ok((
            self.crystal.wavenumber(Carrier::Signal, omega)?,
            self.crystal.wavenumber(Carrier::Signal, -omega)?,
        ))
    }

    pub(crate) fn mismatch_with(
        &self,
        k1: f64,
        k2: f64,
        rho: f64,
        qx: f64,
        qy: f64,
    ) -> Result<f64, QpmError> {
        let qy2 = qy * qy;
        let s = self.kz_signal(k1, qx * qx + qy2)?;
        let i = self.kz_signal(k2, (rho - qx).powi(2) + qy2)?;
        Ok(s + i + self.pump_offset())
    }

    /// Mismatch of every branch for one signal mode.
    pub fn branch_mismatches(
        &self,
        qx: f64,
        qy: f64,
        omega: f64,
    ) -> Result<Vec<(BranchLabel, f64)>, QpmError> {
        self.branches()
            .into_iter()
            .map(|l| Ok((l, self.mismatch(self.resultant(l)?, qx, qy, omega)?)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpmSample {
    pub omega: f64,
    pub qx: f64,
    pub qy: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpmBranch {
    pub label: BranchLabel,
    pub resultant: f64,
    pub samples: Vec<QpmSample>,
    /// Cone apex, set when the ring at some sampled detuning is narrower than
    /// one grid cell.
    pub vertex: Option<QpmSample>,
}

impl QpmBranch {
    /// Apex estimate: the explicit vertex, or the centre of the smallest ring.
    pub fn apex(&self) -> Option<(f64, f64, f64)> {
        if let Some(v) = self.vertex {
            return Some((v.qx, v.qy, v.omega));
        }
        let mut by_omega: std::collections::BTreeMap<i64, Vec<&QpmSample>> = Default::default();
        for s in &self.samples {
            by_omega.entry((s.omega * 1e9) as i64).or_default().push(s);
        }
        by_omega
            .values()
            .map(|ring| {
                let n = ring.len() as f64;
                let cx = ring.iter().map(|s| s.qx).sum::<f64>() / n;
                let cy = ring.iter().map(|s| s.qy).sum::<f64>() / n;
                let r = ring
                    .iter()
                    .map(|s| ((s.qx - cx).powi(2) + (s.qy - cy).powi(2)).sqrt())
                    .fold(0.0, f64::max);
                (r, cx, cy, ring[0].omega)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, x, y, w)| (x, y, w))
    }

    /// Mean radius of the ring sampled at the detuning closest to `omega`.
    pub fn ring_radius(&self, omega: f64) -> Option<(f64, f64)> {
        let w = self
            .samples
            .iter()
            .map(|s| s.omega)
            .min_by(|a, b| (a - omega).abs().total_cmp(&(b - omega).abs()))?;
        let ring: Vec<_> = self.samples.iter().filter(|s| s.omega == w).collect();
        let n = ring.len() as f64;
        let cx = ring.iter().map(|s| s.qx).sum::<f64>() / n;
        let cy = ring.iter().map(|s| s.qy).sum::<f64>() / n;
        let r = ring
            .iter()
            .map(|s| ((s.qx - cx).powi(2) + (s.qy - cy).powi(2)).sqrt())
            .sum::<f64>()
            / n;
        Some((cx, r))
    }
}

/// Sampling controls for the exact branch solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpmSampling {
    pub omegas: Vec<f64>,
    pub n_angles: usize,
    /// Grid cell in 1/um: rings narrower than this are reported as a vertex.
    pub cell: f64,
    /// Root tolerance on |D| in 1/um.
    pub tolerance: f64,
}

impl QpmSampling {
    pub fn uniform(omega_max: f64, n_omega: usize, n_angles: usize, cell: f64) -> Self {
        let omegas = if n_omega <= 1 {
            vec![0.0]
        } else {
            (0..n_omega)
                .map(|i| -omega_max + 2.0 * omega_max * i as f64 / (n_omega - 1) as f64)
                .collect()
        };
        Self {
            omegas,
            n_angles,
            cell,
            tolerance: 1e-9,
        }
    }
}

/// Solves `D_rho = 0` along rays from the paraxial ring centre at each
/// sampled detuning. `D` is concave in `q`, so each ray crosses once.
pub fn exact_branch(
    ctx: &QpmContext,
    label: BranchLabel,
    sampling: &QpmSampling,
) -> Result<QpmBranch, QpmError> {
    if sampling.n_angles == 0 || !(sampling.tolerance > 0.0) {
        return Err(QpmError::Sampling("need n_angles > 0 and tolerance > 0".into()));
    }
    let rho = ctx.resultant(label)?;
    let mut samples = Vec::new();
    let mut vertex: Option<QpmSample> = None;
    for &omega in &sampling.omegas {
        let (k1, k2) = ctx.signal_k_pair(omega)?;
        let cx = rho * k1 / (k1 + k2);
        let dc = ctx.mismatch_with(k1, k2, rho, cx, 0.0)?;
        if dc.abs() <= sampling.tolerance {
            let v = QpmSample {
                omega,
                qx: cx,
                qy: 0.0,
                residual: dc,
            };
            samples.push(v);
            vertex = pick_vertex(vertex, v);
            continue;
        }
        if dc < 0.0 {
            continue;
        }
        let kmax = k1.min(k2);
        for j in 0..sampling.n_angles {
            let th = 2.0 * std::f64::consts::PI * j as f64 / sampling.n_angles as f64;
            let (c, s) = (th.cos(), th.sin());
            // evanescent points count as "outside" the ring
            let d = |r: f64| ctx.mismatch_with(k1, k2, rho, cx + r * c, r * s).unwrap_or(-1.0);
            let mut hi = 1e-3;
            while d(hi) > 0.0 {
                hi *= 2.0;
                if hi > 2.0 * kmax {
                    return Err(QpmError::Sampling("ring did not close".into()));
                }
            }
            let r = bisect(d, 0.0, hi, 1e-15).expect("bracketed");
            let res = d(r);
            samples.push(QpmSample {
                omega,
                qx: cx + r * c,
                qy: r * s,
                residual: res,
            });
        }
        // a ring thinner than a cell is reported through its centre
        let r_est = samples
            .iter()
            .rev()
            .take(sampling.n_angles)
            .map(|p| ((p.qx - cx).powi(2) + p.qy.powi(2)).sqrt())
            .fold(0.0, f64::max);
        if r_est < sampling.cell {
            vertex = pick_vertex(
                vertex,
                QpmSample {
                    omega,
                    qx: cx,
                    qy: 0.0,
                    residual: dc,
                },
            );
        }
    }
    Ok(QpmBranch {
        label,
        resultant: rho,
        samples,
        vertex,
    })
}

fn pick_vertex(cur: Option<QpmSample>, new: QpmSample) -> Option<QpmSample> {
    match cur {
        Some(c) if c.residual.abs() <= new.residual.abs() => Some(c),
        _ => Some(new),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RingApproximation {
    /// Paraxial `k_z` with the full Sellmeier `k(+-Omega)`.
    Paraxial,
    /// Paraxial with `k(Omega)` truncated at second order.
    Taylor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub omega: f64,
    pub center_x: f64,
    pub radius: f64,
}

/// Closed-form paraxial ring; `None` when the branch has no real modes at this
/// detuning.
pub fn paraxial_ring(
    ctx: &QpmContext,
    label: BranchLabel,
    omega: f64,
    approx: RingApproximation,
) -> Result<Option<Ring>, QpmError> {
    let rho = ctx.resultant(label)?;
    let (center_x, d0, scale) = match approx {
        RingApproximation::Paraxial => {
            let k1 = ctx.crystal.wavenumber(Carrier::Signal, omega)?;
            let k2 = ctx.crystal.wavenumber(Carrier::Signal, -omega)?;
            let d0 = k1 + k2 + ctx.pump_offset() - rho * rho / (2.0 * (k1 + k2));
            (rho * k1 / (k1 + k2), d0, 2.0 * k1 * k2 / (k1 + k2))
        }
        RingApproximation::Taylor => {
            let window = paraxial_window(ctx, label)?;
            if omega.abs() > window {
                return Err(QpmError::OutsideWindow { omega, window });
            }
            let t = ctx.crystal.taylor(Carrier::Signal)?;
            let d0 = 2.0 * t.k0 + ctx.pump_offset() - rho * rho / (4.0 * t.k0)
                + t.k2 * omega * omega;
            (0.5 * rho, d0, t.k0)
        }
    };
    if d0 < 0.0 {
        return Ok(None);
    }
    Ok(Some(Ring {
        omega,
        center_x,
        radius: (scale * d0).sqrt(),
    }))
}

/// Largest |Omega| for which dropping the beyond-quadratic terms of
/// `k(Omega) + k(-Omega)` changes the ring offset `D0` by less than 5% of its
/// quadratic part.
pub fn paraxial_window(ctx: &QpmContext, label: BranchLabel) -> Result<f64, QpmError> {
    let _ = ctx.resultant(label)?;
    let t = ctx.crystal.taylor(Carrier::Signal)?;
    let step = 0.5;
    let mut omega = step;
    loop {
        let sum = ctx.crystal.wavenumber(Carrier::Signal, omega)
            .and_then(|a| Ok(a + ctx.crystal.wavenumber(Carrier::Signal, -omega)?));
        let Ok(sum) = sum else {
            return Ok(omega - step);
        };
        let quad = t.k2 * omega * omega;
        let err = (sum - 2.0 * t.k0 - quad).abs();
        if err > 0.05 * quad.abs() || omega > 1e4 {
            return Ok(omega - step);
        }
        omega += step;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedModeLine {
    pub pair: (BranchLabel, BranchLabel),
    pub qx: f64,
    /// `(Omega, q_y >= 0, residual)`; the line is mirror-symmetric in `q_y`.
    pub points: Vec<(f64, f64, f64)>,
}

/// Modes lying on two branches at once. They sit at `q_x = (rho_a + rho_b)/2`,
/// where both idlers are mirror images and the two mismatches coincide.
pub fn shared_modes(
    ctx: &QpmContext,
    pair: (BranchLabel, BranchLabel),
    omegas: &[f64],
) -> Result<SharedModeLine, QpmError> {
    let ra = ctx.resultant(pair.0)?;
    let rb = ctx.resultant(pair.1)?;
    if (ra - rb).abs() < 1e-12 {
        return Err(QpmError::SameResultant(pair.0, pair.1));
    }
    let qx = 0.5 * (ra + rb);
    let mut points = Vec::new();
    for &omega in omegas {
        let (k1, k2) = ctx.signal_k_pair(omega)?;
        let d = |qy: f64| ctx.mismatch_with(k1, k2, ra, qx, qy).unwrap_or(-1.0);
        if d(0.0) < 0.0 {
            continue;
        }
        let mut hi = 1e-3;
        while d(hi) > 0.0 {
            hi *= 2.0;
            if hi > 2.0 * k1.min(k2) {
                return Err(QpmError::Sampling("shared line did not close".into()));
            }
        }
        let qy = bisect(d, 0.0, hi, 1e-15).expect("bracketed");
        points.push((omega, qy, d(qy)));
    }
    Ok(SharedModeLine { pair, qx, points })
}

/// All adjacent-branch intersections for the context's pump.
pub fn all_shared_lines(ctx: &QpmContext, omegas: &[f64]) -> Result<Vec<SharedModeLine>, QpmError> {
    let pairs: Vec<(BranchLabel, BranchLabel)> = if ctx.is_resonant() {
        vec![
            (BranchLabel::Sigma0, BranchLabel::Sigma11),
            (BranchLabel::Sigma0, BranchLabel::Sigma22),
        ]
    } else {
        vec![
            (BranchLabel::Sigma12, BranchLabel::Sigma11),
            (BranchLabel::Sigma21, BranchLabel::Sigma22),
            (BranchLabel::Sigma12, BranchLabel::Sigma22),
            (BranchLabel::Sigma21, BranchLabel::Sigma11),
        ]
    };
    pairs
        .into_iter()
        .map(|p| shared_modes(ctx, p, omegas))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{solve_poling_period, DegeneracyCondition};

    fn ctx() -> QpmContext {
        let mut c = CrystalSpec::slt_default();
        c.poling_period_um = solve_poling_period(&c, DegeneracyCondition::Exact).unwrap();
        QpmContext::resonant(c, KzMode::Exact).unwrap()
    }

    #[test]
    fn resultants() {
        let c = ctx();
        let g = c.gx();
        assert_eq!(c.resultant(BranchLabel::Sigma0).unwrap(), 0.0);
        assert!((c.resultant(BranchLabel::Sigma11).unwrap() - 2.0 * g).abs() < 1e-15);
        let off = QpmContext::new(c.crystal.clone(), 1.2 * g, KzMode::Exact).unwrap();
        assert_eq!(
            off.resultant(BranchLabel::Sigma0),
            Err(QpmError::NotResonant(BranchLabel::Sigma0))
        );
        assert_eq!(off.branches().len(), 4);
    }

    #[test]
    fn sigma0_ring_at_degeneracy_has_radius_gx() {
        let c = ctx();
        let s = QpmSampling::uniform(0.0, 1, 64, 0.02);
        let b = exact_branch(&c, BranchLabel::Sigma0, &s).unwrap();
        assert_eq!(b.samples.len(), 64);
        for p in &b.samples {
            let r = p.qx.hypot(p.qy);
            assert!((r / c.gx() - 1.0).abs() < 1e-3, "{r}");
            assert!(p.residual.abs() < 1e-9);
        }
    }

    #[test]
    fn sigma11_vertex_is_explicit() {
        let c = ctx();
        let s = QpmSampling::uniform(0.0, 1, 32, 0.02);
        let b = exact_branch(&c, BranchLabel::Sigma11, &s).unwrap();
        let v = b.vertex.expect("vertex");
        assert!((v.qx - c.gx()).abs() < 1e-12);
        assert_eq!(b.samples.len(), 1);
    }

    #[test]
    fn shared_line_mismatches_coincide() {
        let c = ctx();
        let omegas = [-50.0, -10.0, 0.0, 10.0, 50.0];
        let line = shared_modes(&c, (BranchLabel::Sigma0, BranchLabel::Sigma11), &omegas).unwrap();
        assert!((line.qx - c.gx()).abs() < 1e-15);
        assert!(!line.points.is_empty());
        for &(w, qy, _) in &line.points {
            let d0 = c.mismatch(0.0, line.qx, qy, w).unwrap();
            let d1 = c.mismatch(2.0 * c.gx(), line.qx, qy, w).unwrap();
            assert!(d0.abs() < 1e-9 && (d0 - d1).abs() < 1e-12);
        }
    }

    #[test]
    fn taylor_ring_outside_window_is_rejected() {
        let c = ctx();
        let w = paraxial_window(&c, BranchLabel::Sigma0).unwrap();
        assert!(w > 10.0);
        assert!(matches!(
            paraxial_ring(&c, BranchLabel::Sigma0, 2.0 * w, RingApproximation::Taylor),
            Err(QpmError::OutsideWindow { .. })
        ));
    }
}
