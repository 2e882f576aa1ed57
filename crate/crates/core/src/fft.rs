//! Unitary 3D FFT over (x, y, t) arrays stored row-major with t fastest.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned forward/inverse transforms for one grid shape.
///
/// Both directions are scaled by `1/sqrt(N)` so Parseval holds exactly and
/// `|a|^2` keeps its meaning as a mode occupation in either domain.
#[derive(Clone)]
pub struct Fft3 {
    shape: [usize; 3],
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
    scale: f64,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("shape", &self.shape).finish()
    }
}

/// Reusable buffers so the inner stepping loop does not allocate.
#[derive(Debug, Default)]
pub struct FftWork {
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft3 {
    pub fn new(nx: usize, ny: usize, nt: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = [
            planner.plan_fft_forward(nx),
            planner.plan_fft_forward(ny),
            planner.plan_fft_forward(nt),
        ];
        let inv = [
            planner.plan_fft_inverse(nx),
            planner.plan_fft_inverse(ny),
            planner.plan_fft_inverse(nt),
        ];
        Self {
            shape: [nx, ny, nt],
            fwd,
            inv,
            scale: 1.0 / ((nx * ny * nt) as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64], work: &mut FftWork) {
        self.run(data, work, &self.fwd);
    }

    pub fn inverse(&self, data: &mut [Complex64], work: &mut FftWork) {
        self.run(data, work, &self.inv);
    }

    fn run(&self, data: &mut [Complex64], work: &mut FftWork, plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [nx, ny, nt] = self.shape;
        assert_eq!(data.len(), nx * ny * nt, "array does not match FFT shape");
        let need = plans
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        if work.scratch.len() < need {
            work.scratch.resize(need, Complex64::default());
        }
        if work.buf.len() < data.len() {
            work.buf.resize(data.len(), Complex64::default());
        }
        let scratch = &mut work.scratch[..need];
        let buf = &mut work.buf[..data.len()];

        // t: contiguous rows
        if nt > 1 {
            plans[2].process_with_scratch(data, scratch);
        }
        // y: per x-slab, transpose (ny, nt) -> (nt, ny)
        if ny > 1 {
            let slab = ny * nt;
            for (d, b) in data.chunks_exact_mut(slab).zip(buf.chunks_exact_mut(slab)) {
                transpose::transpose(d, b, nt, ny);
                plans[1].process_with_scratch(b, scratch);
                transpose::transpose(b, d, ny, nt);
            }
        }
        // x: whole array as (nx, ny*nt)
        if nx > 1 {
            let w = ny * nt;
            transpose::transpose(data, buf, w, nx);
            plans[0].process_with_scratch(buf, scratch);
            transpose::transpose(buf, data, nx, w);
        }
        let s = self.scale;
        for v in data.iter_mut() {
            *v *= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(data: &[Complex64], shape: [usize; 3]) -> Vec<Complex64> {
        let [nx, ny, nt] = shape;
        let n = (nx * ny * nt) as f64;
        let mut out = vec![Complex64::default(); data.len()];
        for kx in 0..nx {
            for ky in 0..ny {
                for kt in 0..nt {
                    let mut acc = Complex64::default();
                    for x in 0..nx {
                        for y in 0..ny {
                            for t in 0..nt {
                                let ph = -2.0
                                    * std::f64::consts::PI
                                    * ((kx * x) as f64 / nx as f64
                                        + (ky * y) as f64 / ny as f64
                                        + (kt * t) as f64 / nt as f64);
                                acc += data[(x * ny + y) * nt + t] * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    out[(kx * ny + ky) * nt + kt] = acc / n.sqrt();
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_and_round_trips() {
        let shape = [4, 8, 2];
        let data: Vec<Complex64> = (0..64)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
            .collect();
        let fft = Fft3::new(shape[0], shape[1], shape[2]);
        let mut work = FftWork::default();
        let mut a = data.clone();
        fft.forward(&mut a, &mut work);
        let b = naive_dft(&data, shape);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).norm() < 1e-12);
        }
        fft.inverse(&mut a, &mut work);
        for (u, v) in a.iter().zip(&data) {
            assert!((u - v).norm() < 1e-13);
        }
    }

    #[test]
    fn parseval() {
        let fft = Fft3::new(8, 4, 16);
        let mut work = FftWork::default();
        let mut a: Vec<Complex64> = (0..fft.len())
            .map(|i| Complex64::new((i as f64).sqrt(), -(i as f64 * 0.1).sin()))
            .collect();
        let e0: f64 = a.iter().map(|v| v.norm_sqr()).sum();
        fft.forward(&mut a, &mut work);
        let e1: f64 = a.iter().map(|v| v.norm_sqr()).sum();
        assert!((e0 - e1).abs() < 1e-10 * e0);
    }
}
