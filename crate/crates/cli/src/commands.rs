use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use specnet_core::dataset::{draw_spec, generate_corpus, sample_values, CorpusInfo, Counts, SampleKind, SampleSpec};
use specnet_core::dynamics::{
    bkw_exact, moments, solve_with, CollisionOperator, DirectOperator, FastOperator, SolveOptions, SpecNetOperator,
    Trajectory,
};
use specnet_core::io::{load_checkpoint, load_corpus, save_checkpoint, save_corpus, write_json, Checkpoint, FieldFile};
use specnet_core::optim::{AdamConfig, OptimizerState};
use specnet_core::presets::{InitialCondition, Preset};
use specnet_core::specnet::SpecNetParams;
use specnet_core::train::{split, train, StopReason, TrainConfig};
use specnet_core::validation::{
    bench_scaling, bench_timings, check_consistency_refinement, check_kernel_decay, check_oracle_equivalence,
    check_parameter_perturbation, check_resolution_invariance, reports_csv, timings_csv, OracleConfig,
    RefinementInputs, ValidationReport,
};
use specnet_core::{build_separable_quadrature, synthesize, KernelSpec, QuadratureRule, SpectralField, VelocityGrid};

use crate::config::{OperatorChoice, ReferenceChoice, RunConfig};

pub const SUITES: [&str; 7] = ["oracle", "decay", "perturbation", "refinement", "resolution", "bench", "all"];

/// How a command finished when it did not error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Training used its epoch budget without reaching the tolerance.
    BudgetExhausted,
    /// At least one validation case failed.
    ValidationFailed,
}

pub struct Done {
    pub outcome: Outcome,
    pub outputs: Vec<PathBuf>,
}

fn done(outputs: Vec<PathBuf>) -> Done {
    Done { outcome: Outcome::Success, outputs }
}

fn corpus_path(cfg: &RunConfig) -> PathBuf {
    cfg.data.corpus.clone().unwrap_or_else(|| cfg.out_dir.join("corpus.json"))
}

pub fn gen_data(cfg: &RunConfig) -> Result<Done> {
    let grid = cfg.grid()?;
    let spec = cfg.kernel()?;
    let rule = cfg.rule(&grid)?;
    let [gaussian, two_gaussian, perturbed] = cfg.data.counts;
    let counts = Counts { gaussian, two_gaussian, perturbed };
    let kernel = build_separable_quadrature(&spec, &grid, &rule)?;
    let samples = generate_corpus(counts, &kernel, cfg.seed)?;
    let mut worst = [0.0f64; 3];
    for (i, s) in samples.iter().enumerate() {
        let kind = usize::from(i >= gaussian) + usize::from(i >= gaussian + two_gaussian);
        let m = moments(&s.values, &grid)?;
        worst[kind] = worst[kind].max((m.rho - 1.0).abs());
    }
    eprintln!(
        "generated {} samples; max mass deviation per kind: gaussian {:.2e}, two_gaussian {:.2e}, perturbed {:.2e}",
        samples.len(),
        worst[0],
        worst[1],
        worst[2]
    );
    let info = CorpusInfo { grid, kernel: spec, n_r: rule.n_r(), n_sigma: rule.n_sigma(), counts, seed: cfg.seed };
    let path = corpus_path(cfg);
    save_corpus(&path, info, &samples)?;
    Ok(done(vec![path]))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Done> {
    let path = corpus_path(cfg);
    let (info, samples) = load_corpus(&path).with_context(|| format!("loading corpus {}", path.display()))?;
    let sc = &cfg.specnet;
    let (mut params, mut state, start) = match &sc.resume {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            (ck.params()?, ck.optimizer, ck.epoch)
        }
        None => {
            let params = SpecNetParams::random(info.grid.dim(), sc.n_trun, sc.m, cfg.seed)?;
            let state = OptimizerState::new(&params, AdamConfig::with_lr(sc.lr));
            (params, state, 0)
        }
    };
    if params.dim != info.grid.dim() {
        bail!("checkpoint is {}-dimensional but the corpus is {}-dimensional", params.dim, info.grid.dim());
    }
    eprintln!("model: N_trun {}, M {}, {} real parameters", params.n_trun, params.rank, params.real_param_count());
    let (tr, va) = split(&samples, cfg.seed, sc.val_fraction);
    let tc = TrainConfig {
        epochs: sc.epochs,
        adam: state.config,
        tol: sc.tol,
        seed: cfg.seed,
        batch_size: sc.batch,
        loss_mode: sc.loss_mode,
        validation_every: sc.validation_every,
        ..TrainConfig::default()
    };
    let ck_path = cfg.out_dir.join("checkpoint.json");
    let every = sc.checkpoint_every.max(1);
    let seed = cfg.seed;
    let mut hook = |epoch: usize, p: &SpecNetParams, s: &OptimizerState, loss: f64| {
        if (epoch + 1).is_multiple_of(every) {
            let ck = Checkpoint::new(p, s, epoch + 1, loss, seed, Some(info.kernel), Some(info.grid));
            save_checkpoint(&ck_path, &ck)?;
        }
        Ok(())
    };
    let report = train(&tr, &va, &mut params, &mut state, &tc, start, &mut hook)?;
    let last = report.final_train_loss().unwrap_or(f64::NAN);
    // a tolerance stop evaluates its last epoch without stepping
    let stepped = usize::from(report.stop == StopReason::Budget);
    let next = report.records.last().map_or(start, |r| r.epoch + stepped);
    save_checkpoint(
        &ck_path,
        &Checkpoint::new(&params, &state, next, last, cfg.seed, Some(info.kernel), Some(info.grid)),
    )?;
    let mut csv = String::from("epoch,train_loss,val_loss,wall_seconds\n");
    for (r, w) in report.records.iter().zip(&report.wall_seconds) {
        let val = r.val_loss.map_or(String::new(), |v| v.to_string());
        csv.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, val, w));
    }
    let csv_path = cfg.out_dir.join("train_loss.csv");
    std::fs::write(&csv_path, csv)?;
    let report_path = cfg.out_dir.join("train_report.json");
    write_json(&report_path, &report)?;
    eprintln!("stopped: {:?}, train loss {last:.4e}, validation {:?}", report.stop, report.last_val_loss());
    let outcome = match report.stop {
        StopReason::Tolerance => Outcome::Success,
        StopReason::Budget => Outcome::BudgetExhausted,
    };
    Ok(Done { outcome, outputs: vec![ck_path, csv_path, report_path] })
}

fn load_params(path: &Option<PathBuf>, what: &str) -> Result<(SpecNetParams, Checkpoint)> {
    let Some(p) = path else { bail!("{what} needs --checkpoint") };
    let ck = load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
    Ok((ck.params()?, ck))
}

fn resolve_preset(cfg: &RunConfig) -> Result<Preset> {
    let sim = &cfg.simulate;
    let mut p = Preset::named(&sim.preset)?;
    if let Some(n) = sim.n {
        p.n = n;
    }
    if let Some(s) = sim.support {
        p.support = s;
    }
    if let Some(a) = sim.alpha {
        p.kernel.alpha = a;
    }
    if let Some(e) = sim.e {
        p.kernel.e = e;
    }
    if let Some(dt) = sim.dt {
        p.dt = dt;
    }
    if let Some(t) = sim.t_final {
        p.t_final = t;
    }
    p.kernel = KernelSpec::new(p.kernel.dim, p.kernel.alpha, p.kernel.c, p.kernel.e)?;
    Ok(p)
}

fn build_operator(choice: OperatorChoice, p: &Preset, cfg: &RunConfig) -> Result<Box<dyn CollisionOperator>> {
    let grid = p.grid()?;
    Ok(match choice {
        OperatorChoice::Fast => Box::new(FastOperator::new(p.build_kernel()?)),
        OperatorChoice::Direct => Box::new(DirectOperator::new(&p.kernel, &grid, cfg.simulate.direct_tol)),
        OperatorChoice::Specnet => {
            let (params, _) = load_params(&cfg.simulate.checkpoint, "the specnet operator")?;
            Box::new(SpecNetOperator::new(params, &grid)?)
        }
    })
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

pub fn simulate(cfg: &RunConfig) -> Result<Done> {
    let p = resolve_preset(cfg)?;
    let grid = p.grid()?;
    let op = build_operator(cfg.simulate.operator, &p, cfg)?;
    let opts = SolveOptions::new(p.dt, p.t_final, &grid);
    let f0 = p.initial_field()?;

    // reference values at every recorded step
    let reference: Option<Vec<Vec<f64>>> = match cfg.simulate.reference {
        None => None,
        Some(ReferenceChoice::Exact) => {
            let InitialCondition::Bkw { sigma } = p.initial else {
                bail!("the exact reference exists only for the BKW initial condition");
            };
            let steps = opts.steps();
            let cadence = opts.cadence.max(1);
            let vals = (0..=steps)
                .filter(|n| n % cadence == 0 || *n == steps)
                .map(|n| grid.sample(|v| bkw_exact(n as f64 * opts.dt, v, sigma)))
                .collect();
            Some(vals)
        }
        Some(r) => {
            let choice = match r {
                ReferenceChoice::Fast => OperatorChoice::Fast,
                ReferenceChoice::Direct => OperatorChoice::Direct,
                _ => OperatorChoice::Specnet,
            };
            let rop = build_operator(choice, &p, cfg)?;
            let mut vals = Vec::new();
            let mut failure = None;
            solve_with(&f0, rop.as_ref(), &opts, |_, _, f| match synthesize(f) {
                Ok(v) => vals.push(v),
                Err(e) => failure = failure.take().or(Some(e)),
            })
            .map_err(|f| f.error)
            .context("reference trajectory failed")?;
            if let Some(e) = failure {
                return Err(e.into());
            }
            Some(vals)
        }
    };

    let mut errors = Vec::new();
    let mut dumps = Vec::new();
    let mut io_failure: Option<anyhow::Error> = None;
    let mut recorded = 0usize;
    let dump_every = cfg.simulate.dump_every;
    let out_dir = cfg.out_dir.clone();
    let run_id = cfg.run_id.clone();
    let result = solve_with(&f0, op.as_ref(), &opts, |n, t, f: &SpectralField| {
        if let Some(r) = &reference {
            match synthesize(f) {
                Ok(v) => errors.push(r.get(recorded).map_or(f64::NAN, |x| relative_l2(&v, x))),
                Err(e) => io_failure = io_failure.take().or(Some(e.into())),
            }
        }
        if dump_every.is_some_and(|k| recorded.is_multiple_of(k.max(1))) {
            let path = out_dir.join(format!("{run_id}_{n}.json"));
            match write_json(&path, &FieldFile::new(f, t)) {
                Ok(()) => dumps.push(path),
                Err(e) => io_failure = io_failure.take().or(Some(e.into())),
            }
        }
        recorded += 1;
    });
    let csv_path = cfg.out_dir.join(format!("{}.csv", cfg.run_id));
    let (traj, failure): (Trajectory, Option<specnet_core::Error>) = match result {
        Ok(t) => (t, None),
        Err(f) => (f.partial, Some(f.error)),
    };
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(&csv_path, traj.to_csv(reference.as_ref().map(|_| errors.as_slice())))?;
    if let Some(e) = failure {
        return Err(anyhow::Error::new(e).context(format!("partial trajectory written to {}", csv_path.display())));
    }
    if let Some(e) = io_failure {
        return Err(e);
    }
    if let Some(last) = errors.last() {
        eprintln!("final relative L2 error vs reference: {last:.4e}");
    }
    let mut outputs = vec![csv_path];
    outputs.extend(dumps);
    Ok(done(outputs))
}

/// Fresh draws past any generated corpus index, cycling through the kinds,
/// keeping only those admissible on every grid.
fn held_out_specs(dim: usize, seed: u64, support: f64, ns: &[usize], count: usize) -> Result<Vec<SampleSpec>> {
    let kinds = [SampleKind::Gaussian, SampleKind::TwoGaussian, SampleKind::Perturbed];
    let grids: Vec<VelocityGrid> = ns.iter().map(|&n| VelocityGrid::new(dim, n, support)).collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for i in 0..100 * count as u64 {
        if out.len() == count {
            break;
        }
        let s = draw_spec(kinds[out.len() % 3], dim, seed, 1 << 40 | i);
        let mut ok = true;
        for g in &grids {
            ok &= sample_values(&s, g)?.is_some();
        }
        if ok {
            out.push(s);
        }
    }
    Ok(out)
}

fn run_suite(name: &str, cfg: &RunConfig) -> Result<Vec<ValidationReport>> {
    let v = &cfg.validate;
    let spec = cfg.kernel()?;
    Ok(match name {
        "oracle" => {
            let grid = VelocityGrid::new(cfg.grid.d, 8, cfg.grid.support)?;
            let base = OracleConfig::default_2d()?;
            let convention_n = if cfg.grid.d == 2 { 32 } else { 16 };
            let oc = OracleConfig {
                grid,
                spec,
                rule: QuadratureRule::default_for(&grid),
                seed: cfg.seed,
                convention_n,
                ..base
            };
            vec![check_oracle_equivalence(&oc)?]
        }
        "decay" => vec![check_kernel_decay(&spec, &cfg.grid()?, &v.shells, v.ray)?],
        "perturbation" => {
            let grid = VelocityGrid::new(cfg.grid.d, 8, cfg.grid.support)?;
            let rule = cfg.rule(&grid)?;
            vec![check_parameter_perturbation(&grid, &spec, &rule, 1e-6, cfg.seed)?]
        }
        "refinement" => {
            let (params, ck) = load_params(&v.checkpoint, "the refinement suite")?;
            let control = SpecNetParams::random(params.dim, params.n_trun, params.rank, cfg.seed.wrapping_add(1))?;
            let support = ck.train_grid.map_or(cfg.grid.support, |g| g.support());
            let centers = if params.dim == 2 {
                vec![vec![0.0, -1.0], vec![0.3, 0.9]]
            } else {
                vec![vec![0.0, 0.0, -1.0], vec![0.3, 0.0, 0.9]]
            };
            let inputs = RefinementInputs {
                params: &params,
                control: &control,
                spec: ck.kernel.unwrap_or(spec),
                support,
                ns: v.ns.clone(),
                train_loss: ck.loss,
                initial: InitialCondition::Mixture { centers, widths: vec![0.8, 1.0] },
            };
            vec![check_consistency_refinement(&inputs)?]
        }
        "resolution" => {
            let (params, ck) = load_params(&v.checkpoint, "the resolution suite")?;
            let support = ck.train_grid.map_or(cfg.grid.support, |g| g.support());
            let ns: Vec<usize> = v.ns.iter().copied().filter(|&n| n >= 2 * params.n_trun).collect();
            let samples = held_out_specs(params.dim, cfg.seed, support, &ns, 10)?;
            vec![check_resolution_invariance(&params, &ck.kernel.unwrap_or(spec), support, &ns, &samples)?.0]
        }
        "bench" => {
            let params = bench_params(cfg, &cfg.bench.checkpoint)?;
            vec![bench_scaling(&params, &spec, cfg.grid.support, &cfg.bench.ns, cfg.bench.reps)?.0]
        }
        "all" => {
            let mut out = Vec::new();
            for s in ["oracle", "decay", "perturbation"] {
                out.extend(run_suite(s, cfg)?);
            }
            if v.checkpoint.is_some() {
                for s in ["refinement", "resolution"] {
                    out.extend(run_suite(s, cfg)?);
                }
            }
            out
        }
        other => bail!("unknown suite '{other}'; expected one of {}", SUITES.join(", ")),
    })
}

pub fn validate(cfg: &RunConfig) -> Result<Done> {
    let reports = run_suite(&cfg.validate.suite, cfg)?;
    for r in &reports {
        for c in &r.cases {
            eprintln!("{} {}: {} value {:.4e}", r.suite, c.name, if c.pass { "pass" } else { "FAIL" }, c.value);
        }
    }
    let csv_path = cfg.out_dir.join("validation.csv");
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(&csv_path, reports_csv(&reports))?;
    let json_path = cfg.out_dir.join("validation.json");
    write_json(&json_path, &reports)?;
    let outcome =
        if reports.iter().all(ValidationReport::passed) { Outcome::Success } else { Outcome::ValidationFailed };
    Ok(Done { outcome, outputs: vec![csv_path, json_path] })
}

fn bench_params(cfg: &RunConfig, checkpoint: &Option<PathBuf>) -> Result<SpecNetParams> {
    // timings do not depend on parameter values
    match checkpoint {
        Some(_) => Ok(load_params(checkpoint, "bench")?.0),
        None => Ok(SpecNetParams::random(cfg.grid.d, cfg.specnet.n_trun, cfg.specnet.m, cfg.seed)?),
    }
}

pub fn bench(cfg: &RunConfig) -> Result<Done> {
    let params = bench_params(cfg, &cfg.bench.checkpoint)?;
    let ns: Vec<usize> = cfg.bench.ns.iter().copied().filter(|&n| n >= 2 * params.n_trun).collect();
    if ns.is_empty() {
        bail!("no benchmark resolution holds the band 2 N_trun = {}", 2 * params.n_trun);
    }
    let timings = bench_timings(&params, &cfg.kernel()?, cfg.grid.support, &ns, cfg.bench.reps)?;
    let csv_path = cfg.out_dir.join("bench.csv");
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(&csv_path, timings_csv(&timings))?;
    let json_path = cfg.out_dir.join("bench.json");
    write_json(&json_path, &timings)?;
    Ok(done(vec![csv_path, json_path]))
}
