//! Full-batch (or minibatch) Adam training of [`SpecNetParams`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{index_rng, is_validation, Sample};
use crate::error::{contract, Error, Result};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::specnet::{residual_gradients, Gradients, SpecNetParams};

/// How per-sample errors combine into the batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `mean_s ||Q^nn_s - Q_s|| / ||Q_s||`. Near-equilibrium samples have
    /// targets at truncation-noise level and dominate this average.
    PerSample,
    /// `sum_s ||Q^nn_s - Q_s|| / sum_s ||Q_s||`.
    #[default]
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub tol: f64,
    pub seed: u64,
    /// `None` for full batch.
    pub batch_size: Option<usize>,
    pub loss_mode: LossMode,
    pub validation_every: usize,
    pub divergence: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50_000,
            adam: AdamConfig::default(),
            tol: 1e-2,
            seed: 0,
            batch_size: None,
            loss_mode: LossMode::Pooled,
            validation_every: 100,
            divergence: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    Budget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Loss curves and stopping reason. Wall times are kept apart so that two
/// runs with the same seed compare equal on everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub stop: StopReason,
    #[serde(default)]
    pub wall_seconds: Vec<f64>,
}

impl TrainReport {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_loss)
    }

    pub fn last_val_loss(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_loss)
    }

    /// Losses and stop reason, without timings.
    pub fn same_curves(&self, other: &TrainReport) -> bool {
        self.records == other.records && self.stop == other.stop
    }
}

/// Batch loss and its real-view gradient. Samples are processed in parallel
/// and reduced in index order.
pub fn batch_loss_and_gradients(
    samples: &[&Sample],
    params: &SpecNetParams,
    mode: LossMode,
) -> Result<(f64, Gradients)> {
    if samples.is_empty() {
        return Err(contract("empty batch"));
    }
    let norms: Vec<f64> = samples.iter().map(|s| s.q_target.coeff_norm_sqr().sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::Degenerate(format!("sample {} has a zero target", samples[i].spec.index)));
    }
    let pooled: f64 = norms.iter().sum();
    let n = samples.len() as f64;
    let parts: Vec<(f64, Gradients)> = samples
        .par_iter()
        .zip(&norms)
        .map(|(s, &qn)| {
            let denom = match mode {
                LossMode::PerSample => qn * n,
                LossMode::Pooled => pooled,
            };
            residual_gradients(&s.f, &s.q_target, params, denom).map(|(r, g)| (r / denom, g))
        })
        .collect::<Result<_>>()?;
    let mut total = Gradients::zeros_like(params);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// Batch loss only.
pub fn batch_loss(samples: &[&Sample], params: &SpecNetParams, mode: LossMode) -> Result<f64> {
    let (l, _) = batch_loss_and_gradients(samples, params, mode)?;
    Ok(l)
}

/// Split into (train, validation) by a pure function of `(seed, index)`.
pub fn split(samples: &[Sample], seed: u64, fraction: f64) -> (Vec<&Sample>, Vec<&Sample>) {
    samples.iter().partition(|s| !is_validation(seed, s.spec.index, fraction))
}

/// Hook called after every optimizer step with `(epoch, params, state, loss)`.
pub type EpochHook<'a> = dyn FnMut(usize, &SpecNetParams, &OptimizerState, f64) -> Result<()> + 'a;

/// Train from `start_epoch` until the training loss reaches `config.tol` or
/// the epoch budget runs out. The loss is evaluated before each step, so a
/// model that already fits stops at its first epoch without updating.
pub fn train(
    train_set: &[&Sample],
    val_set: &[&Sample],
    params: &mut SpecNetParams,
    state: &mut OptimizerState,
    config: &TrainConfig,
    start_epoch: usize,
    hook: &mut EpochHook<'_>,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(contract("training set is empty"));
    }
    let grid = *train_set[0].f.grid();
    if train_set.iter().chain(val_set).any(|s| !s.f.grid().same_shape(&grid)) {
        return Err(Error::GridMismatch("samples live on different grids".into()));
    }
    let mut report = TrainReport { records: Vec::new(), stop: StopReason::Budget, wall_seconds: Vec::new() };
    let clock = Instant::now();
    for epoch in start_epoch..config.epochs {
        let (loss, grads) = match config.batch_size {
            None => batch_loss_and_gradients(train_set, params, config.loss_mode)?,
            Some(bs) => minibatch_epoch(train_set, params, state, config, epoch, bs)?,
        };
        if !loss.is_finite() || loss > config.divergence {
            return Err(Error::Diverged { epoch, loss });
        }
        let val_loss = if !val_set.is_empty() && (epoch % config.validation_every.max(1) == 0) {
            Some(batch_loss(val_set, params, config.loss_mode)?)
        } else {
            None
        };
        report.records.push(EpochRecord { epoch, train_loss: loss, val_loss });
        report.wall_seconds.push(clock.elapsed().as_secs_f64());
        if loss <= config.tol {
            report.stop = StopReason::Tolerance;
            if let Some(last) = report.records.last_mut() {
                if last.val_loss.is_none() && !val_set.is_empty() {
                    last.val_loss = Some(batch_loss(val_set, params, config.loss_mode)?);
                }
            }
            return Ok(report);
        }
        if config.batch_size.is_none() {
            adam_step(params, &grads, state)?;
        }
        hook(epoch, params, state, loss)?;
    }
    Ok(report)
}

/// One pass over shuffled minibatches; returns the mean batch loss. The
/// optimizer steps once per batch.
fn minibatch_epoch(
    train_set: &[&Sample],
    params: &mut SpecNetParams,
    state: &mut OptimizerState,
    config: &TrainConfig,
    epoch: usize,
    batch_size: usize,
) -> Result<(f64, Gradients)> {
    if batch_size == 0 {
        return Err(contract("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut index_rng(config.seed, epoch as u64));
    let mut total = 0.0;
    let mut batches = 0;
    let mut last = Gradients::zeros_like(params);
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| train_set[i]).collect();
        let (l, g) = batch_loss_and_gradients(&batch, params, config.loss_mode)?;
        adam_step(params, &g, state)?;
        total += l;
        batches += 1;
        last = g;
    }
    Ok((total / batches as f64, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_corpus, Counts};
    use crate::grid::VelocityGrid;
    use crate::kernel::{build_separable_quadrature, KernelSpec, QuadratureRule};
    use crate::specnet::forward;

    fn corpus() -> Vec<Sample> {
        let g = VelocityGrid::new(2, 16, 3.0).unwrap();
        let spec = KernelSpec::maxwellian_2d();
        let k = build_separable_quadrature(&spec, &g, &QuadratureRule::default_for(&g)).unwrap();
        generate_corpus(Counts { gaussian: 0, two_gaussian: 3, perturbed: 3 }, &k, 2).unwrap()
    }

    #[test]
    fn exact_fit_stops_at_first_epoch() {
        let mut c = corpus();
        let mut p = SpecNetParams::random(2, 4, 2, 1).unwrap();
        c[0].q_target = forward(&c[0].f, &p).unwrap();
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
        let r = train(&[&c[0]], &[], &mut p, &mut st, &cfg, 0, &mut |_, _, _, _| Ok(())).unwrap();
        assert_eq!(r.stop, StopReason::Tolerance);
        assert_eq!(r.records.len(), 1);
        assert!(r.records[0].train_loss <= 1e-2);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn deterministic_and_resumable() {
        let c = corpus();
        let refs: Vec<&Sample> = c.iter().collect();
        let cfg = TrainConfig { epochs: 20, tol: 0.0, ..TrainConfig::default() };
        let run = |epochs: usize| {
            let mut p = SpecNetParams::random(2, 4, 2, 7).unwrap();
            let mut st = OptimizerState::new(&p, cfg.adam);
            let c2 = TrainConfig { epochs, ..cfg };
            let r = train(&refs, &[], &mut p, &mut st, &c2, 0, &mut |_, _, _, _| Ok(())).unwrap();
            (p, st, r)
        };
        let (_, _, a) = run(20);
        let (_, _, b) = run(20);
        assert!(a.same_curves(&b));

        let (mut p, mut st, _) = run(10);
        let resumed = train(&refs, &[], &mut p, &mut st, &cfg, 10, &mut |_, _, _, _| Ok(())).unwrap();
        assert_eq!(resumed.records[0], a.records[10]);
    }

    #[test]
    fn loss_modes_agree_on_one_sample() {
        let c = corpus();
        let p = SpecNetParams::random(2, 4, 2, 3).unwrap();
        let a = batch_loss(&[&c[1]], &p, LossMode::PerSample).unwrap();
        let b = batch_loss(&[&c[1]], &p, LossMode::Pooled).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn split_is_stable() {
        let c = corpus();
        let (t1, v1) = split(&c, 4, 0.3);
        let (t2, v2) = split(&c, 4, 0.3);
        assert_eq!(t1.len() + v1.len(), c.len());
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
    }
}
