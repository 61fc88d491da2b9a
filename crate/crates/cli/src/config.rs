//! Resolved run settings. Precedence: command-line flags, then the config
//! file, then the built-in defaults below.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use specnet_core::kernel::{default_constant, KernelSpec, QuadratureRule};
use specnet_core::train::LossMode;
use specnet_core::VelocityGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
    pub support: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { d: 2, n: 32, support: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub alpha: f64,
    /// `None` selects `1/(2 pi)` in 2D and `1/(4 pi)` in 3D.
    pub c: Option<f64>,
    pub e: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { alpha: 0.0, c: None, e: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// `None` means `N_r = N`.
    pub n_r: Option<usize>,
    /// Circle points in 2D, azimuthal points in 3D.
    pub n_sigma: usize,
    /// Polar points, 3D only.
    pub n_polar: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { n_r: None, n_sigma: 16, n_polar: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Gaussian, two-Gaussian and perturbed sample counts.
    pub counts: [usize; 3],
    pub corpus: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { counts: [1000, 1000, 1000], corpus: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpecNetConfig {
    pub n_trun: usize,
    pub m: usize,
    pub lr: f64,
    pub epochs: usize,
    pub tol: f64,
    pub batch: Option<usize>,
    pub loss_mode: LossMode,
    pub val_fraction: f64,
    pub validation_every: usize,
    pub checkpoint_every: usize,
    pub resume: Option<PathBuf>,
}

impl Default for SpecNetConfig {
    fn default() -> Self {
        Self {
            n_trun: 8,
            m: 2,
            lr: 1e-2,
            epochs: 200_000,
            tol: 1e-2,
            batch: None,
            loss_mode: LossMode::Pooled,
            val_fraction: 0.2,
            validation_every: 100,
            checkpoint_every: 1000,
            resume: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    Fast,
    Direct,
    Specnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceChoice {
    Fast,
    Direct,
    Specnet,
    /// Closed-form BKW solution; BKW preset only.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub preset: String,
    /// Overrides of the preset; `None` keeps the preset value.
    pub n: Option<usize>,
    pub support: Option<f64>,
    pub alpha: Option<f64>,
    pub e: Option<f64>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub operator: OperatorChoice,
    pub reference: Option<ReferenceChoice>,
    pub checkpoint: Option<PathBuf>,
    /// Write the spectrum every this many recorded steps.
    pub dump_every: Option<usize>,
    /// Tolerance of the closed-form kernel table used by the direct operator.
    pub direct_tol: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            preset: "bkw".into(),
            n: None,
            support: None,
            alpha: None,
            e: None,
            dt: None,
            t_final: None,
            operator: OperatorChoice::Fast,
            reference: None,
            checkpoint: None,
            dump_every: None,
            direct_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateConfig {
    pub suite: String,
    pub checkpoint: Option<PathBuf>,
    /// Grids of the refinement and resolution suites.
    pub ns: Vec<usize>,
    pub shells: Vec<i64>,
    pub ray: (i64, i64),
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            suite: "oracle".into(),
            checkpoint: None,
            ns: vec![16, 32, 64, 128],
            shells: vec![4, 8, 16, 32],
            ray: (8, 64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    pub reps: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { ns: vec![16, 32, 64, 128, 256], reps: 5, checkpoint: None }
    }
}

/// Every setting of every subcommand. Unused sections are echoed anyway so
/// a manifest is complete on its own.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub run_id: String,
    pub out_dir: PathBuf,
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub quadrature: QuadratureConfig,
    pub data: DataConfig,
    pub specnet: SpecNetConfig,
    pub simulate: SimulateConfig,
    pub validate: ValidateConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self { run_id: "run".into(), out_dir: PathBuf::from("out"), ..Self::default() }
    }

    /// Defaults overlaid with the sections present in a JSON file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let mut base = serde_json::to_value(Self::defaults())?;
        merge(&mut base, value.take());
        serde_json::from_value(base).with_context(|| format!("config {} has invalid fields", path.display()))
    }

    pub fn grid(&self) -> Result<VelocityGrid> {
        Ok(VelocityGrid::new(self.grid.d, self.grid.n, self.grid.support)?)
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let c = self.kernel.c.unwrap_or_else(|| default_constant(self.grid.d));
        Ok(KernelSpec::new(self.grid.d, self.kernel.alpha, c, self.kernel.e)?)
    }

    pub fn rule(&self, grid: &VelocityGrid) -> Result<QuadratureRule> {
        let n_r = self.quadrature.n_r.unwrap_or(grid.n());
        Ok(match grid.dim() {
            2 => QuadratureRule::circle(grid, n_r, self.quadrature.n_sigma)?,
            _ => QuadratureRule::sphere(grid, n_r, self.quadrature.n_polar, self.quadrature.n_sigma)?,
        })
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn parse_counts(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("expected three comma-separated counts, got '{s}'");
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().with_context(|| format!("invalid count '{p}'"))?;
    }
    Ok(out)
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',').map(|p| p.trim().parse::<T>().map_err(|_| anyhow::anyhow!("invalid list entry '{p}'"))).collect()
}

/// What a command records next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn path(out_dir: &Path, command: &str, run_id: &str) -> PathBuf {
        out_dir.join(format!("{command}_{run_id}.manifest.json"))
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = Self::path(&self.config.out_dir, &self.command, &self.config.run_id);
        specnet_core::io::write_json(&path, self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(specnet_core::io::read_json(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_only_given_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"grid": {"n": 64}, "specnet": {"m": 5}}"#).unwrap();
        let c = RunConfig::from_file(&path).unwrap();
        assert_eq!(c.grid.n, 64);
        assert_eq!(c.grid.support, 3.0);
        assert_eq!(c.specnet.m, 5);
        assert_eq!(c.specnet.n_trun, 8);
        assert_eq!(c.run_id, "run");
    }

    #[test]
    fn unknown_types_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"grid": {"n": "many"}}"#).unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }

    #[test]
    fn count_and_list_parsing() {
        assert_eq!(parse_counts("10, 0,3").unwrap(), [10, 0, 3]);
        assert!(parse_counts("1,2").is_err());
        assert_eq!(parse_list::<usize>("16,32").unwrap(), vec![16, 32]);
        assert!(parse_list::<usize>("16,x").is_err());
    }
}
