//! Benchmark fixtures.

use specnet_core::presets::InitialCondition;
use specnet_core::specnet::SpecNetParams;
use specnet_core::{
    analyze, build_separable_quadrature, KernelSpec, QuadratureRule, SeparableKernel, SpectralField, VelocityGrid,
};

/// Inputs for timing both operators at one resolution.
pub struct Fixture {
    pub f: SpectralField,
    pub kernel: SeparableKernel,
    pub params: SpecNetParams,
}

/// 2D Maxwell molecules on `[-T, T)^2` with `S = 3`, an off-center Gaussian
/// input and random `N_trun = 8`, `M = 2` parameters.
pub fn fixture(n: usize) -> specnet_core::Result<Fixture> {
    let grid = VelocityGrid::new(2, n, 3.0)?;
    let ic = InitialCondition::Mixture { centers: vec![vec![0.5, 0.0]], widths: vec![1.0] };
    let f = analyze(&ic.values(&grid)?, &grid)?;
    let kernel = build_separable_quadrature(&KernelSpec::maxwellian_2d(), &grid, &QuadratureRule::default_for(&grid))?;
    let params = SpecNetParams::random(2, 8, 2, 0)?;
    Ok(Fixture { f, kernel, params })
}
