//! Named experiment setups: kernel, grid, quadrature, time stepping and
//! initial condition.

use serde::{Deserialize, Serialize};

use crate::dataset::normalize_mass;
use crate::dynamics::{bkw_exact, maxwellian, SolveOptions};
use crate::error::{contract, Result};
use crate::grid::VelocityGrid;
use crate::kernel::{build_separable_quadrature, KernelSpec, QuadratureRule, SeparableKernel};
use crate::spectral::{analyze, SpectralField};

pub const PRESET_NAMES: [&str; 5] = ["bkw", "hard-sphere-2d", "inelastic-1", "inelastic-2", "maxwellian-3d"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// BKW solution at `t = 0`.
    Bkw { sigma: f64 },
    /// Equal-weight sum of normalized Gaussians, rescaled to unit discrete mass.
    Mixture { centers: Vec<Vec<f64>>, widths: Vec<f64> },
}

impl InitialCondition {
    pub fn values(&self, grid: &VelocityGrid) -> Result<Vec<f64>> {
        match self {
            InitialCondition::Bkw { sigma } => {
                if grid.dim() != 2 {
                    return Err(contract("the BKW initial condition is two-dimensional"));
                }
                Ok(grid.sample(|v| bkw_exact(0.0, v, *sigma)))
            }
            InitialCondition::Mixture { centers, widths } => {
                if centers.is_empty() || centers.len() != widths.len() {
                    return Err(contract("mixture needs one width per center"));
                }
                if centers.iter().any(|c| c.len() != grid.dim()) {
                    return Err(contract("mixture centers and grid dimensions differ"));
                }
                let vals = grid.sample(|v| centers.iter().zip(widths).map(|(c, s)| maxwellian(1.0, c, s * s, v)).sum());
                normalize_mass(&vals, grid)
            }
        }
    }
}

/// Angular quadrature size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AngularRule {
    Circle { n_sigma: usize },
    Sphere { n_polar: usize, n_azimuth: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub kernel: KernelSpec,
    pub n: usize,
    pub support: f64,
    /// Radial nodes; `None` means `N_r = N`.
    pub n_r: Option<usize>,
    pub angular: AngularRule,
    pub dt: f64,
    pub t_final: f64,
    pub initial: InitialCondition,
}

fn mixture(centers: &[&[f64]], widths: &[f64]) -> InitialCondition {
    InitialCondition::Mixture { centers: centers.iter().map(|c| c.to_vec()).collect(), widths: widths.to_vec() }
}

impl Preset {
    /// Look up a preset by name.
    pub fn named(name: &str) -> Result<Self> {
        let circle16 = AngularRule::Circle { n_sigma: 16 };
        let circle32 = AngularRule::Circle { n_sigma: 32 };
        let p = match name {
            "bkw" => Preset {
                name: name.into(),
                kernel: KernelSpec::maxwellian_2d(),
                n: 64,
                support: 4.0,
                n_r: None,
                angular: circle16,
                dt: 0.01,
                t_final: 5.0,
                initial: InitialCondition::Bkw { sigma: 1.0 },
            },
            "hard-sphere-2d" => Preset {
                name: name.into(),
                kernel: KernelSpec::with_default_constant(2, 1.0, 1.0)?,
                n: 64,
                support: 3.5,
                n_r: None,
                angular: circle16,
                dt: 0.01,
                t_final: 2.0,
                initial: mixture(&[&[0.0, -1.2], &[0.0, 1.2]], &[1.0, 1.0]),
            },
            "inelastic-1" => Preset {
                name: name.into(),
                kernel: KernelSpec::with_default_constant(2, 0.0, 0.5)?,
                n: 32,
                support: 3.0,
                n_r: None,
                angular: circle32,
                dt: 0.01,
                t_final: 3.0,
                initial: mixture(&[&[0.0, -0.7]], &[1.2]),
            },
            "inelastic-2" => Preset {
                name: name.into(),
                kernel: KernelSpec::with_default_constant(2, 0.0, 0.5)?,
                n: 32,
                support: 2.75,
                n_r: None,
                angular: circle32,
                dt: 0.01,
                t_final: 3.0,
                initial: mixture(&[&[0.0, -1.5], &[0.0, 0.8]], &[0.7, 1.0]),
            },
            "maxwellian-3d" => Preset {
                name: name.into(),
                kernel: KernelSpec::with_default_constant(3, 0.0, 1.0)?,
                n: 16,
                support: 2.5,
                n_r: None,
                angular: AngularRule::Sphere { n_polar: 8, n_azimuth: 16 },
                dt: 0.01,
                t_final: 5.0,
                initial: mixture(&[&[0.0, 0.0, 0.0]], &[1.0]),
            },
            other => {
                return Err(contract(format!("unknown preset '{other}'; expected one of {}", PRESET_NAMES.join(", "))))
            }
        };
        Ok(p)
    }

    pub fn grid(&self) -> Result<VelocityGrid> {
        VelocityGrid::new(self.kernel.dim, self.n, self.support)
    }

    pub fn rule(&self) -> Result<QuadratureRule> {
        let grid = self.grid()?;
        let n_r = self.n_r.unwrap_or(self.n);
        match self.angular {
            AngularRule::Circle { n_sigma } => QuadratureRule::circle(&grid, n_r, n_sigma),
            AngularRule::Sphere { n_polar, n_azimuth } => QuadratureRule::sphere(&grid, n_r, n_polar, n_azimuth),
        }
    }

    pub fn build_kernel(&self) -> Result<SeparableKernel> {
        build_separable_quadrature(&self.kernel, &self.grid()?, &self.rule()?)
    }

    pub fn initial_field(&self) -> Result<SpectralField> {
        let grid = self.grid()?;
        analyze(&self.initial.values(&grid)?, &grid)
    }

    pub fn solve_options(&self) -> Result<SolveOptions> {
        Ok(SolveOptions::new(self.dt, self.t_final, &self.grid()?))
    }
}
