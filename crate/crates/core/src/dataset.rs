//! Training corpus: Gaussians, two-Gaussian mixtures and polynomially perturbed
//! Gaussians, each normalized to unit mass, with targets from the fast
//! spectral operator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::grid::VelocityGrid;
use crate::kernel::{q_fast, KernelSpec, SeparableKernel};
use crate::spectral::{analyze, SpectralField};

/// Redraw a perturbed sample whose minimum falls below this fraction of its maximum.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-6;

const MAX_REDRAWS: usize = 1000;

// keeps the split stream apart from the sample streams
const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Gaussian,
    TwoGaussian,
    Perturbed,
}

/// Parameters of one drawn input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub kind: SampleKind,
    /// One center per Gaussian, each in `[-1, 1]^d`.
    pub centers: Vec<Vec<f64>>,
    /// One width per Gaussian, each in `[0.8, 1.2]`.
    pub widths: Vec<f64>,
    /// Coefficients of `g` on the monomials `1, v_i, v_i v_j (i <= j)`, each in `[0, 1]`.
    pub poly: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

impl SampleSpec {
    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, |c| c.len())
    }

    /// Unnormalized density at `v`.
    pub fn density(&self, v: &[f64]) -> f64 {
        let d = v.len() as i32;
        let mut f = 0.0;
        for (c, &s) in self.centers.iter().zip(&self.widths) {
            let r2: f64 = v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            f += (2.0 * std::f64::consts::PI * s * s).powf(-0.5 * d as f64) * (-r2 / (2.0 * s * s)).exp();
        }
        if self.kind == SampleKind::Perturbed {
            f *= 1.0 + poly_value(&self.poly, v);
        }
        f
    }
}

/// Number of monomials of degree at most two in `d` variables.
pub fn poly_terms(dim: usize) -> usize {
    1 + dim + dim * (dim + 1) / 2
}

fn poly_value(coef: &[f64], v: &[f64]) -> f64 {
    let mut it = coef.iter();
    let mut g = *it.next().unwrap_or(&0.0);
    for x in v {
        g += it.next().unwrap_or(&0.0) * x;
    }
    for i in 0..v.len() {
        for j in i..v.len() {
            g += it.next().unwrap_or(&0.0) * v[i] * v[j];
        }
    }
    g
}

/// Per-index random stream, independent of generation order.
pub fn index_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn draw_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> (Vec<f64>, f64) {
    let c = (0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    (c, rng.gen_range(0.8..=1.2))
}

/// Draw the parameters of sample `index`.
pub fn draw_spec(kind: SampleKind, dim: usize, seed: u64, index: u64) -> SampleSpec {
    let mut rng = index_rng(seed, index);
    let count = if kind == SampleKind::TwoGaussian { 2 } else { 1 };
    let (centers, widths) = (0..count).map(|_| draw_gaussian(&mut rng, dim)).unzip();
    let poly = if kind == SampleKind::Perturbed {
        (0..poly_terms(dim)).map(|_| rng.gen_range(0.0..=1.0)).collect()
    } else {
        Vec::new()
    };
    SampleSpec { kind, centers, widths, poly, seed, index }
}

/// Scale node values to unit mass.
pub fn normalize_mass(values: &[f64], grid: &VelocityGrid) -> Result<Vec<f64>> {
    if values.len() != grid.len() {
        return Err(contract("node array has the wrong length"));
    }
    let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Degenerate(format!("mass {mass} is not positive")));
    }
    Ok(values.iter().map(|v| v / mass).collect())
}

/// Node values of a sample, or `None` if it dips below the negativity tolerance.
pub fn sample_values(spec: &SampleSpec, grid: &VelocityGrid) -> Result<Option<Vec<f64>>> {
    let vals = grid.sample(|v| spec.density(v));
    let max = vals.iter().cloned().fold(f64::MIN, f64::max);
    let min = vals.iter().cloned().fold(f64::MAX, f64::min);
    if min < -NEGATIVITY_TOLERANCE * max {
        return Ok(None);
    }
    normalize_mass(&vals, grid).map(Some)
}

/// One training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub spec: SampleSpec,
    pub values: Vec<f64>,
    pub f: SpectralField,
    pub q_target: SpectralField,
}

/// Sample counts per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub gaussian: usize,
    pub two_gaussian: usize,
    pub perturbed: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.gaussian + self.two_gaussian + self.perturbed
    }

    fn kind_of(&self, index: usize) -> SampleKind {
        if index < self.gaussian {
            SampleKind::Gaussian
        } else if index < self.gaussian + self.two_gaussian {
            SampleKind::TwoGaussian
        } else {
            SampleKind::Perturbed
        }
    }
}

/// Build one sample. Redraws of a rejected perturbed sample continue on the
/// same index stream, offset by `total * attempt`.
pub fn make_sample(kind: SampleKind, index: u64, total: u64, seed: u64, kernel: &SeparableKernel) -> Result<Sample> {
    let grid = *kernel.grid();
    for attempt in 0..MAX_REDRAWS as u64 {
        let spec = draw_spec(kind, grid.dim(), seed, index + attempt * total.max(1));
        if let Some(values) = sample_values(&spec, &grid)? {
            let f = analyze(&values, &grid)?;
            let q_target = q_fast(&f, kernel)?;
            return Ok(Sample { spec: SampleSpec { index, ..spec }, values, f, q_target });
        }
    }
    Err(Error::Degenerate(format!("sample {index} rejected {MAX_REDRAWS} times")))
}

/// Generate the corpus in index order; deterministic for a given seed.
pub fn generate_corpus(counts: Counts, kernel: &SeparableKernel, seed: u64) -> Result<Vec<Sample>> {
    if counts.total() == 0 {
        return Err(contract("corpus must contain at least one sample"));
    }
    let total = counts.total() as u64;
    (0..counts.total()).into_par_iter().map(|i| make_sample(counts.kind_of(i), i as u64, total, seed, kernel)).collect()
}

/// Grid and kernel provenance of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub grid: VelocityGrid,
    pub kernel: KernelSpec,
    pub n_r: usize,
    pub n_sigma: usize,
    pub counts: Counts,
    pub seed: u64,
}

/// Whether sample `index` belongs to the validation split.
pub fn is_validation(seed: u64, index: u64, fraction: f64) -> bool {
    let mut rng = index_rng(seed ^ SPLIT_SALT, index);
    rng.gen::<f64>() < fraction
}
