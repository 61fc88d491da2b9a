//! Fast Fourier spectral solver for the space-homogeneous Boltzmann equation
//! and a trainable separable spectral collision operator.

pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod fft;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod optim;
pub mod presets;
pub mod special;
pub mod specnet;
pub mod spectral;
pub mod train;
pub mod validation;

pub use error::{Error, Result};
pub use grid::{ModeIndex, VelocityGrid, BOX_RATIO, LAMBDA};
pub use kernel::{
    build_separable_quadrature, g_hat_closed_form, g_hat_closed_form_2d, g_hat_closed_form_3d, g_hat_integral,
    q_direct, q_direct_with, q_fast, q_separable_direct, KernelSpec, QuadratureRule, SeparableKernel,
};
pub use num_complex::Complex64;
pub use spectral::{analyze, spectral_convolve, synthesize, synthesize_complex, SpectralField};
