//! Reduced coupled-mode models: isolated two-mode squeezers on each branch
//! and the four-mode system at the hot spots `q_x = +-G_x`.
//!
//! Four-mode ordering is `(b_s, c_s, b_i^dag, c_i^dag)`: `b` lives on the
//! pump-1 side branch, `c` on the central branch.

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::medium::GainParameters;
use crate::qpm::BranchLabel;

type C = Complex64;

#[derive(Debug, Error, PartialEq)]
pub enum CoupledModeError {
    #[error("branch {0:?} has no two-mode gain at resonance")]
    UnknownBranch(BranchLabel),
    #[error("decomposition needs a real gain ratio, got r = {0}")]
    ComplexRatio(C),
    #[error("closed-form propagator needs zero mismatch")]
    NonzeroMismatch,
    #[error("integration failed at z = {z}: {reason}")]
    Integration { z: f64, reason: String },
    #[error("eigenvalue solver did not converge")]
    Eigen,
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoModeProcess {
    pub label: BranchLabel,
    pub gamma: C,
    pub gbar: f64,
    pub mismatch: f64,
}

/// Relative gain `gamma` of an isolated branch at resonance.
pub fn two_mode_gamma(label: BranchLabel, gains: &GainParameters) -> Result<C, CoupledModeError> {
    if !(gains.gbar > 0.0) {
        return Err(CoupledModeError::Invalid("gbar must be positive".into()));
    }
    match label {
        BranchLabel::Sigma0 => Ok((gains.g1 + gains.g2) / gains.gbar),
        BranchLabel::Sigma11 => Ok(gains.g1 / gains.gbar),
        BranchLabel::Sigma22 => Ok(gains.g2 / gains.gbar),
        other => Err(CoupledModeError::UnknownBranch(other)),
    }
}

/// `sinh^2(|gamma| gbar z)` photons per mode from vacuum.
pub fn two_mode_photon_number(gamma: C, gbar: f64, z: f64) -> f64 {
    assert!(z >= 0.0, "propagation distance must be non-negative");
    (gamma.norm() * gbar * z).sinh().powi(2)
}

/// Same, with a residual mismatch `D`: gain `sqrt(|g|^2 - D^2/4)`.
pub fn two_mode_photon_number_mismatched(g_abs: f64, mismatch: f64, z: f64) -> f64 {
    assert!(z >= 0.0, "propagation distance must be non-negative");
    let s2 = g_abs * g_abs - 0.25 * mismatch * mismatch;
    if s2 > 0.0 {
        let s = s2.sqrt();
        (g_abs / s * (s * z).sinh()).powi(2)
    } else if s2 < 0.0 {
        let s = (-s2).sqrt();
        (g_abs / s * (s * z).sin()).powi(2)
    } else {
        (g_abs * z).powi(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourModeSystem {
    pub gains: GainParameters,
    /// Signal-to-idler coupling block.
    pub k: Matrix2<C>,
    pub matrix: Matrix4<C>,
    /// Residual mismatch shared by the hot-spot processes (1/um).
    pub mismatch: f64,
}

pub fn four_mode_matrix(gains: &GainParameters, mismatch: f64) -> FourModeSystem {
    let (g1, g2) = (gains.g1, gains.g2);
    let k = Matrix2::new(g1, g1 + g2, g1 + g2, g2);
    let kc = k.map(|v| v.conj());
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(&k);
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(&kc);
    FourModeSystem {
        gains: *gains,
        k,
        matrix: m,
        mismatch,
    }
}

/// `(Lambda_+, Lambda_-)` from a Schur decomposition of the 4x4 matrix. The
/// spectrum is `+-Lambda_+, +-Lambda_-`.
pub fn four_mode_eigenvalues(gains: &GainParameters) -> Result<(f64, f64), CoupledModeError> {
    let sys = four_mode_matrix(gains, 0.0);
    let ev = sys
        .matrix
        .schur()
        .eigenvalues()
        .ok_or(CoupledModeError::Eigen)?;
    let mut re: Vec<f64> = ev.iter().map(|v| v.re).collect();
    re.sort_by(f64::total_cmp);
    Ok((re[3], re[2].max(0.0)))
}

/// Same pair from the singular values of the coupling block.
pub fn four_mode_singular_values(gains: &GainParameters) -> (f64, f64) {
    let sys = four_mode_matrix(gains, 0.0);
    let s = sys.k.singular_values();
    (s[0].max(s[1]), s[0].min(s[1]))
}

/// Closed forms for real `r`.
pub fn closed_form_eigenvalues(gbar: f64, r: f64) -> (f64, f64) {
    let pre = gbar / (1.0 + r * r).sqrt();
    let root = 0.5 * (5.0 * (1.0 + r * r) + 6.0 * r).sqrt();
    let mid = 0.5 * (1.0 + r);
    let a = pre * (mid + root).abs();
    let b = pre * (mid - root).abs();
    (a.max(b), a.min(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub r_abs: f64,
    pub phase: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

/// Eigenvalues in units of gbar over a grid of `r = |r| e^{i phase}`.
pub fn eigenvalue_landscape(r_abs: &[f64], phases: &[f64]) -> Vec<LandscapePoint> {
    let mut out = Vec::with_capacity(r_abs.len() * phases.len());
    for &a in r_abs {
        for &p in phases {
            let gains = GainParameters::from_ratio(1.0, C::from_polar(a, p));
            let (lp, lm) = four_mode_singular_values(&gains);
            out.push(LandscapePoint {
                r_abs: a,
                phase: p,
                lambda_plus: lp,
                lambda_minus: lm,
            });
        }
    }
    out
}

/// Rotation to the decoupled pair `delta = cos b - sin c`,
/// `sigma = sin b + cos c`, each a two-mode squeezer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamSplitter {
    pub theta: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

impl BeamSplitter {
    /// Maps `(b, c)` to `(delta, sigma)`.
    pub fn rotation(&self) -> Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        Matrix2::new(c, -s, s, c)
    }

    /// The four-mode matrix expressed in `(delta, sigma, delta_i^dag,
    /// sigma_i^dag)`.
    pub fn transformed(&self, system: &FourModeSystem) -> Matrix4<C> {
        let r = self.rotation().map(|v| C::new(v, 0.0));
        let mut t = Matrix4::zeros();
        t.fixed_view_mut::<2, 2>(0, 0).copy_from(&r);
        t.fixed_view_mut::<2, 2>(2, 2).copy_from(&r);
        t * system.matrix * t.transpose()
    }
}

pub fn beam_splitter_decomposition(gains: &GainParameters) -> Result<BeamSplitter, CoupledModeError> {
    let r = gains.r;
    if r.im.abs() > 1e-12 * r.norm().max(1.0) || gains.g1.im.abs() > 1e-12 * gains.g1.norm() {
        return Err(CoupledModeError::ComplexRatio(r));
    }
    let r = r.re;
    let s = (5.0 * (1.0 + r * r) + 6.0 * r).sqrt();
    let cos = (0.5 - (1.0 - r) / (2.0 * s)).max(0.0).sqrt();
    let sin = (0.5 + (1.0 - r) / (2.0 * s)).max(0.0).sqrt();
    let pre = gains.gbar / (1.0 + r * r).sqrt();
    Ok(BeamSplitter {
        theta: sin.atan2(cos),
        lambda_plus: pre * (0.5 * (1.0 + r) + 0.5 * s).abs(),
        lambda_minus: pre * (0.5 * (1.0 + r) - 0.5 * s).abs(),
    })
}

/// Exact propagator over `[0, z]`, using the rotating frame in which the
/// generator is constant.
pub fn propagator_exact(system: &FourModeSystem, z: f64) -> Matrix4<C> {
    let h = C::new(0.0, 0.5 * system.mismatch);
    let mut g = system.matrix;
    g[(0, 0)] += h;
    g[(1, 1)] += h;
    g[(2, 2)] -= h;
    g[(3, 3)] -= h;
    let u = (g * C::new(z, 0.0)).exp();
    let ph = C::from_polar(1.0, -0.5 * system.mismatch * z);
    let p = Matrix4::from_diagonal(&Vector4::new(ph, ph, ph.conj(), ph.conj()));
    p * u
}

/// `exp(M z)` for the phase-matched system.
pub fn propagator_expm(system: &FourModeSystem, z: f64) -> Result<Matrix4<C>, CoupledModeError> {
    if system.mismatch != 0.0 {
        return Err(CoupledModeError::NonzeroMismatch);
    }
    Ok((system.matrix * C::new(z, 0.0)).exp())
}

fn generator(k: &Matrix2<C>, mismatch: f64, z: f64) -> Matrix4<C> {
    let ph = C::from_polar(1.0, -mismatch * z);
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(&(k * ph));
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(&(k.map(|v| v.conj()) * ph.conj()));
    m
}

/// Fundamental matrix from adaptive Dormand-Prince 5(4) in the lab frame,
/// with relative and absolute tolerance `tolerance`.
pub fn integrate_four_mode(
    system: &FourModeSystem,
    z: f64,
    tolerance: f64,
) -> Result<Matrix4<C>, CoupledModeError> {
    if !(z >= 0.0 && tolerance > 0.0) {
        return Err(CoupledModeError::Invalid(format!(
            "need z >= 0 and tolerance > 0 (z={z}, tol={tolerance})"
        )));
    }
    let (k, d) = (system.k, system.mismatch);
    dopri5(|s, u| generator(&k, d, s) * u, 0.0, z, Matrix4::identity(), tolerance)
        .map_err(|(at, reason)| CoupledModeError::Integration { z: at, reason })
}

/// Dormand-Prince 5(4), local extrapolation, elementary step-size control.
fn dopri5(
    f: impl Fn(f64, &Matrix4<C>) -> Matrix4<C>,
    z0: f64,
    z1: f64,
    y0: Matrix4<C>,
    tol: f64,
) -> Result<Matrix4<C>, (f64, String)> {
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const CN: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    // difference between 5th- and 4th-order weights
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let span = z1 - z0;
    if span == 0.0 {
        return Ok(y0);
    }
    let mut z = z0;
    let mut y = y0;
    let mut h = (span * 1e-3).max(1e-12 * span.abs());
    let mut k = [Matrix4::<C>::zeros(); 7];
    k[0] = f(z, &y);
    let mut steps = 0usize;
    while z < z1 {
        if steps > 10_000_000 {
            return Err((z, "too many steps".into()));
        }
        steps += 1;
        if z + h > z1 {
            h = z1 - z;
        }
        for s in 1..7 {
            let mut acc = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s - 1][j];
                if a != 0.0 {
                    acc += kj * C::new(h * a, 0.0);
                }
            }
            k[s] = f(z + CN[s] * h, &acc);
        }
        // stage 6 input is the 5th-order solution (FSAL)
        let mut y5 = y;
        for (j, kj) in k.iter().enumerate().take(6) {
            let a = A[5][j];
            if a != 0.0 {
                y5 += kj * C::new(h * a, 0.0);
            }
        }
        let mut err = 0.0f64;
        for i in 0..16 {
            let mut e = C::default();
            for (s, ks) in k.iter().enumerate() {
                e += ks[i] * (h * E[s]);
            }
            let sc = tol + tol * y[i].norm().max(y5[i].norm());
            err = err.max(e.norm() / sc);
        }
        if !err.is_finite() {
            return Err((z, "non-finite error estimate".into()));
        }
        if err <= 1.0 {
            z += h;
            y = y5;
            k[0] = k[6];
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
        if h < 1e-14 * span.abs() {
            return Err((z, "step size underflow".into()));
        }
    }
    Ok(y)
}

/// Amplitudes `(b_s, c_s, b_i^dag, c_i^dag)` after propagation.
pub fn evolve_amplitudes(propagator: &Matrix4<C>, initial: &Vector4<C>) -> Vector4<C> {
    propagator * initial
}

/// Photon numbers grown from vacuum: `[N(b_s), N(c_s), N(b_i), N(c_i)]`.
pub fn vacuum_photon_numbers(u: &Matrix4<C>) -> [f64; 4] {
    let row = |i: usize, cols: [usize; 2]| cols.iter().map(|&j| u[(i, j)].norm_sqr()).sum::<f64>();
    [row(0, [2, 3]), row(1, [2, 3]), row(2, [0, 1]), row(3, [0, 1])]
}

/// Largest deviation of `U eta U^dag` from `eta = diag(1,1,-1,-1)`.
pub fn bogoliubov_defect(u: &Matrix4<C>) -> f64 {
    let one = C::new(1.0, 0.0);
    let eta = Matrix4::from_diagonal(&Vector4::new(one, one, -one, -one));
    let d = u * eta * u.adjoint() - eta;
    d.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PHI: f64 = 1.618_033_988_749_895;

    #[test]
    fn gamma_table() {
        let g = GainParameters::from_ratio(1.0, C::new(1.0, 0.0));
        assert!((two_mode_gamma(BranchLabel::Sigma0, &g).unwrap().norm() - 2f64.sqrt()).abs() < 1e-15);
        assert!((two_mode_gamma(BranchLabel::Sigma11, &g).unwrap().norm() - 0.5f64.sqrt()).abs() < 1e-15);
        let g = GainParameters::from_ratio(1.0, C::new(-1.0, 0.0));
        assert!(two_mode_gamma(BranchLabel::Sigma0, &g).unwrap().norm() < 1e-15);
        assert!(matches!(
            two_mode_gamma(BranchLabel::Sigma12, &g),
            Err(CoupledModeError::UnknownBranch(_))
        ));
    }

    #[test]
    fn single_beam_is_golden() {
        let g = GainParameters::from_ratio(1.0, C::new(0.0, 0.0));
        let (lp, lm) = four_mode_eigenvalues(&g).unwrap();
        assert!((lp - PHI).abs() < 1e-12);
        assert!((lm - 1.0 / PHI).abs() < 1e-12);
        let bs = beam_splitter_decomposition(&g).unwrap();
        assert!((bs.theta.tan() - PHI).abs() < 1e-12);
    }

    #[test]
    fn mismatched_two_mode_limits() {
        let n0 = two_mode_photon_number(C::new(1.0, 0.0), 0.5, 3.0);
        assert!((two_mode_photon_number_mismatched(0.5, 0.0, 3.0) - n0).abs() < 1e-12 * n0);
        assert!(two_mode_photon_number_mismatched(0.5, 10.0, 3.0) < 0.01);
    }

    #[test]
    fn exact_propagator_is_symplectic_with_mismatch() {
        let g = GainParameters::from_ratio(0.3, C::from_polar(0.7, 1.1));
        let sys = four_mode_matrix(&g, 0.2);
        let u = propagator_exact(&sys, 5.0);
        assert!(bogoliubov_defect(&u) < 1e-10 * u.norm().powi(2));
        let v = integrate_four_mode(&sys, 5.0, 1e-12).unwrap();
        assert!((u - v).norm() < 1e-9 * u.norm());
    }

    #[test]
    fn integrator_handles_time_dependent_rotation() {
        // y0' = cos z y1, y1' = -cos z y0  =>  rotation by sin z
        let f = |z: f64, y: &Matrix4<C>| {
            let mut m = Matrix4::zeros();
            m[(0, 1)] = C::new(z.cos(), 0.0);
            m[(1, 0)] = C::new(-z.cos(), 0.0);
            m * y
        };
        let u = dopri5(f, 0.0, 5.0, Matrix4::identity(), 1e-11).unwrap();
        assert!((u[(0, 0)].re - 5f64.sin().cos()).abs() < 1e-9);
        assert!((u[(1, 0)].re + 5f64.sin().sin()).abs() < 1e-9);
    }

    #[test]
    fn complex_ratio_is_rejected() {
        let g = GainParameters::from_ratio(1.0, C::new(0.5, 0.5));
        assert!(matches!(
            beam_splitter_decomposition(&g),
            Err(CoupledModeError::ComplexRatio(_))
        ));
    }
}
