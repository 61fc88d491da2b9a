//! Versioned JSON files for kernels, checkpoints, corpora and field dumps.
//! Complex arrays are stored as interleaved `re, im` pairs. Floats are written
//! with shortest round-trip formatting, so reading a file back is bit-exact.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{CorpusInfo, Sample, SampleSpec};
use crate::error::{Error, Result};
use crate::grid::VelocityGrid;
use crate::kernel::{KernelSpec, QuadratureRule, SeparableKernel};
use crate::optim::OptimizerState;
use crate::specnet::SpecNetParams;
use crate::spectral::{analyze, SpectralField};

pub const FORMAT_VERSION: u32 = 1;

pub fn interleave(z: &[Complex64]) -> Vec<f64> {
    z.iter().flat_map(|c| [c.re, c.im]).collect()
}

pub fn deinterleave(x: &[f64]) -> Result<Vec<Complex64>> {
    if !x.len().is_multiple_of(2) {
        return Err(Error::Format("interleaved array has odd length".into()));
    }
    Ok(x.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, serde_json::to_string(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn check_version(kind: &str, found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Format(format!("{kind} format version {found}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

/// Serialized [`SeparableKernel`]. `gamma_radial` holds one real array per
/// radius; the full `gamma_t` is that array times the angular weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    pub format_version: u32,
    pub dim: usize,
    pub n: usize,
    pub support: f64,
    pub alpha: f64,
    pub c: f64,
    pub e: f64,
    pub n_r: usize,
    pub n_sigma: usize,
    pub m_total: usize,
    pub rule: QuadratureRule,
    pub gamma_radial: Vec<Vec<f64>>,
    pub loss_beta: Vec<f64>,
}

impl KernelFile {
    pub fn from_kernel(k: &SeparableKernel) -> Self {
        let g = k.grid();
        let s = k.spec();
        Self {
            format_version: FORMAT_VERSION,
            dim: s.dim,
            n: g.n(),
            support: g.support(),
            alpha: s.alpha,
            c: s.c,
            e: s.e,
            n_r: k.rule().n_r(),
            n_sigma: k.rule().n_sigma(),
            m_total: k.num_terms(),
            rule: k.rule().clone(),
            gamma_radial: k.gamma_radial().to_vec(),
            loss_beta: interleave(k.loss_beta()),
        }
    }

    pub fn into_kernel(self) -> Result<SeparableKernel> {
        check_version("kernel", self.format_version)?;
        let spec = KernelSpec::new(self.dim, self.alpha, self.c, self.e)?;
        let grid = VelocityGrid::new(self.dim, self.n, self.support)?;
        if self.rule.n_r() != self.n_r || self.rule.n_sigma() != self.n_sigma {
            return Err(Error::Format("header and quadrature rule disagree".into()));
        }
        if self.m_total != self.n_r * self.n_sigma + 1 {
            return Err(Error::Format(format!("M_total {} does not match the rule", self.m_total)));
        }
        let loss = deinterleave(&self.loss_beta)?;
        SeparableKernel::from_parts(spec, grid, self.rule, self.gamma_radial, loss)
    }
}

pub fn save_kernel(path: &Path, k: &SeparableKernel) -> Result<()> {
    write_json(path, &KernelFile::from_kernel(k))
}

pub fn load_kernel(path: &Path) -> Result<SeparableKernel> {
    read_json::<KernelFile>(path)?.into_kernel()
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub dim: usize,
    pub n_trun: usize,
    pub rank: usize,
    pub real_param_count: usize,
    /// Kernel that produced the training targets.
    pub kernel: Option<KernelSpec>,
    /// Grid the model was trained on.
    pub train_grid: Option<VelocityGrid>,
    pub optimizer: OptimizerState,
    /// Next epoch to run.
    pub epoch: usize,
    /// Written as `null` when not yet evaluated.
    #[serde(deserialize_with = "nan_if_null")]
    pub loss: f64,
    pub seed: u64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        params: &SpecNetParams,
        optimizer: &OptimizerState,
        epoch: usize,
        loss: f64,
        seed: u64,
        kernel: Option<KernelSpec>,
        train_grid: Option<VelocityGrid>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            dim: params.dim,
            n_trun: params.n_trun,
            rank: params.rank,
            real_param_count: params.real_param_count(),
            kernel,
            train_grid,
            optimizer: optimizer.clone(),
            epoch,
            loss,
            seed,
            alpha: interleave(&params.alpha),
            beta: interleave(&params.beta),
            gamma: interleave(&params.gamma),
        }
    }

    /// Parameters, after checking the stored count against `6 M (2 N_trun)^d`.
    pub fn params(&self) -> Result<SpecNetParams> {
        check_version("checkpoint", self.format_version)?;
        let params = SpecNetParams {
            dim: self.dim,
            n_trun: self.n_trun,
            rank: self.rank,
            alpha: deinterleave(&self.alpha)?,
            beta: deinterleave(&self.beta)?,
            gamma: deinterleave(&self.gamma)?,
        };
        params.validate().map_err(|e| Error::Format(format!("checkpoint parameters: {e}")))?;
        if params.real_param_count() != self.real_param_count {
            return Err(Error::Format(format!(
                "checkpoint declares {} real parameters, arrays hold {}",
                self.real_param_count,
                params.real_param_count()
            )));
        }
        if self.optimizer.m.len() != self.real_param_count || self.optimizer.v.len() != self.real_param_count {
            return Err(Error::Format("optimizer moments do not match the parameter count".into()));
        }
        Ok(params)
    }
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_json(path, ck)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = read_json(path)?;
    ck.params()?;
    Ok(ck)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub spec: SampleSpec,
    pub values: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub format_version: u32,
    pub info: CorpusInfo,
    pub samples: Vec<SampleRecord>,
}

impl CorpusFile {
    pub fn new(info: CorpusInfo, samples: &[Sample]) -> Self {
        let samples = samples
            .iter()
            .map(|s| SampleRecord {
                spec: s.spec.clone(),
                values: s.values.clone(),
                target: interleave(s.q_target.coeffs()),
            })
            .collect();
        Self { format_version: FORMAT_VERSION, info, samples }
    }

    /// Rebuild the samples; spectra are recomputed from the node values.
    pub fn samples(&self) -> Result<Vec<Sample>> {
        check_version("corpus", self.format_version)?;
        let grid = self.info.grid;
        self.samples
            .iter()
            .map(|r| {
                let f = analyze(&r.values, &grid)?;
                let q_target = SpectralField::new(grid, deinterleave(&r.target)?)?;
                Ok(Sample { spec: r.spec.clone(), values: r.values.clone(), f, q_target })
            })
            .collect()
    }
}

pub fn save_corpus(path: &Path, info: CorpusInfo, samples: &[Sample]) -> Result<()> {
    write_json(path, &CorpusFile::new(info, samples))
}

pub fn load_corpus(path: &Path) -> Result<(CorpusInfo, Vec<Sample>)> {
    let file: CorpusFile = read_json(path)?;
    let samples = file.samples()?;
    Ok((file.info, samples))
}

/// One spectral snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFile {
    pub format_version: u32,
    pub grid: VelocityGrid,
    pub t: f64,
    pub coeffs: Vec<f64>,
}

impl FieldFile {
    pub fn new(field: &SpectralField, t: f64) -> Self {
        Self { format_version: FORMAT_VERSION, grid: *field.grid(), t, coeffs: interleave(field.coeffs()) }
    }

    pub fn field(&self) -> Result<SpectralField> {
        check_version("field", self.format_version)?;
        SpectralField::new(self.grid, deinterleave(&self.coeffs)?)
    }
}
