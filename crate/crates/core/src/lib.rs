//! Simulation of parametric down-conversion in a hexagonally poled crystal
//! pumped by two tilted beams.

pub mod analysis;
pub mod config;
pub mod coupled_modes;
pub mod fft;
pub mod grid;
pub mod io;
pub mod medium;
pub mod propagation;
pub mod qpm;
pub use num_complex;
