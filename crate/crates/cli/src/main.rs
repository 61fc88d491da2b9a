mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use specnet_core::train::LossMode;

use commands::{Done, Outcome, SUITES};
use config::{parse_counts, parse_list, Manifest, OperatorChoice, ReferenceChoice, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "specnet", version, about = "Fast spectral Boltzmann solver and learned spectral collision operator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON file overriding the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Rerun the command recorded in a manifest with its full configuration.
    #[arg(long, global = true)]
    from_manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct GridFlags {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Velocity support radius S.
    #[arg(long)]
    support: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Kernel constant C.
    #[arg(long)]
    c: Option<f64>,
    /// Restitution coefficient.
    #[arg(long)]
    e: Option<f64>,
    #[arg(long)]
    n_r: Option<usize>,
    #[arg(long)]
    n_sigma: Option<usize>,
    #[arg(long)]
    n_polar: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a training corpus of (f, Q(f,f)) pairs.
    GenData {
        #[command(flatten)]
        grid: GridFlags,
        /// Gaussian, two-Gaussian and perturbed counts, e.g. 1000,1000,1000.
        #[arg(long)]
        counts: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit SpecNet parameters to a corpus.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n_trun: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, value_enum)]
        loss_mode: Option<LossModeArg>,
        #[arg(long)]
        val_fraction: Option<f64>,
        #[arg(long)]
        validation_every: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Integrate the homogeneous equation from a preset.
    Simulate {
        /// bkw, hard-sphere-2d, inelastic-1, inelastic-2 or maxwellian-3d.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        support: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        e: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long, value_enum)]
        operator: Option<OperatorChoice>,
        #[arg(long, value_enum)]
        reference: Option<ReferenceChoice>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dump the spectrum every this many recorded steps.
        #[arg(long)]
        dump_every: Option<usize>,
    },
    /// Run a validation suite.
    Validate {
        #[command(flatten)]
        grid: GridFlags,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(SUITES))]
        suite: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Grids of the refinement and resolution suites, e.g. 16,32,64.
        #[arg(long)]
        ns: Option<String>,
        /// Shell radii of the decay suite, e.g. 4,8,16,32.
        #[arg(long)]
        shells: Option<String>,
    },
    /// Time the fast spectral operator against the SpecNet forward.
    Bench {
        #[command(flatten)]
        grid: GridFlags,
        #[arg(long)]
        ns: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        n_trun: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum LossModeArg {
    Pooled,
    PerSample,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Simulate { .. } => "simulate",
            Command::Validate { .. } => "validate",
            Command::Bench { .. } => "bench",
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_grid(cfg: &mut RunConfig, g: GridFlags) {
    set(&mut cfg.grid.d, g.d);
    set(&mut cfg.grid.n, g.n);
    set(&mut cfg.grid.support, g.support);
    set(&mut cfg.kernel.alpha, g.alpha);
    set(&mut cfg.kernel.e, g.e);
    if g.c.is_some() {
        cfg.kernel.c = g.c;
    }
    if g.n_r.is_some() {
        cfg.quadrature.n_r = g.n_r;
    }
    set(&mut cfg.quadrature.n_sigma, g.n_sigma);
    set(&mut cfg.quadrature.n_polar, g.n_polar);
}

fn apply_command(cfg: &mut RunConfig, cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { grid, counts, output } => {
            apply_grid(cfg, grid);
            if let Some(c) = counts {
                cfg.data.counts = parse_counts(&c)?;
            }
            if output.is_some() {
                cfg.data.corpus = output;
            }
        }
        Command::Train {
            corpus,
            d,
            n_trun,
            m,
            lr,
            epochs,
            tol,
            batch,
            loss_mode,
            val_fraction,
            validation_every,
            checkpoint_every,
            resume,
        } => {
            if corpus.is_some() {
                cfg.data.corpus = corpus;
            }
            set(&mut cfg.grid.d, d);
            let s = &mut cfg.specnet;
            set(&mut s.n_trun, n_trun);
            set(&mut s.m, m);
            set(&mut s.lr, lr);
            set(&mut s.epochs, epochs);
            set(&mut s.tol, tol);
            if batch.is_some() {
                s.batch = batch;
            }
            if let Some(l) = loss_mode {
                s.loss_mode = match l {
                    LossModeArg::Pooled => LossMode::Pooled,
                    LossModeArg::PerSample => LossMode::PerSample,
                };
            }
            set(&mut s.val_fraction, val_fraction);
            set(&mut s.validation_every, validation_every);
            set(&mut s.checkpoint_every, checkpoint_every);
            if resume.is_some() {
                s.resume = resume;
            }
        }
        Command::Simulate {
            preset,
            n,
            support,
            alpha,
            e,
            dt,
            t_final,
            operator,
            reference,
            checkpoint,
            dump_every,
        } => {
            let s = &mut cfg.simulate;
            set(&mut s.preset, preset);
            for (slot, v) in [
                (&mut s.support, support),
                (&mut s.alpha, alpha),
                (&mut s.e, e),
                (&mut s.dt, dt),
                (&mut s.t_final, t_final),
            ] {
                if v.is_some() {
                    *slot = v;
                }
            }
            if n.is_some() {
                s.n = n;
            }
            set(&mut s.operator, operator);
            if reference.is_some() {
                s.reference = reference;
            }
            if checkpoint.is_some() {
                s.checkpoint = checkpoint;
            }
            if dump_every.is_some() {
                s.dump_every = dump_every;
            }
        }
        Command::Validate { grid, suite, checkpoint, ns, shells } => {
            apply_grid(cfg, grid);
            let v = &mut cfg.validate;
            set(&mut v.suite, suite);
            if checkpoint.is_some() {
                v.checkpoint = checkpoint;
            }
            if let Some(ns) = ns {
                v.ns = parse_list(&ns)?;
            }
            if let Some(s) = shells {
                v.shells = parse_list(&s)?;
            }
        }
        Command::Bench { grid, ns, reps, checkpoint, n_trun, m } => {
            apply_grid(cfg, grid);
            set(&mut cfg.specnet.n_trun, n_trun);
            set(&mut cfg.specnet.m, m);
            let b = &mut cfg.bench;
            if let Some(ns) = ns {
                b.ns = parse_list(&ns)?;
            }
            set(&mut b.reps, reps);
            if checkpoint.is_some() {
                b.checkpoint = checkpoint;
            }
        }
    }
    Ok(())
}

/// Resolved configuration and the command to run.
fn resolve(cli: Cli) -> Result<(String, RunConfig)> {
    let g = cli.global;
    let (name, mut cfg) = match (&g.from_manifest, cli.command) {
        (Some(path), cmd) => {
            let m = Manifest::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
            if let Some(c) = &cmd {
                if c.name() != m.command {
                    bail!("manifest records '{}', not '{}'", m.command, c.name());
                }
            }
            (m.command, m.config)
        }
        (None, None) => bail!("no subcommand given; see --help"),
        (None, Some(cmd)) => {
            let mut cfg = match &g.config {
                Some(p) => RunConfig::from_file(p)?,
                None => RunConfig::defaults(),
            };
            let name = cmd.name().to_string();
            apply_command(&mut cfg, cmd)?;
            (name, cfg)
        }
    };
    set(&mut cfg.seed, g.seed);
    set(&mut cfg.out_dir, g.out_dir);
    set(&mut cfg.run_id, g.run_id);
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    if !SUITES.contains(&cfg.validate.suite.as_str()) {
        bail!("unknown suite '{}'; expected one of {}", cfg.validate.suite, SUITES.join(", "));
    }
    Ok((name, cfg))
}

fn dispatch(name: &str, cfg: &RunConfig) -> Result<Done> {
    match name {
        "gen-data" => commands::gen_data(cfg),
        "train" => commands::train_cmd(cfg),
        "simulate" => commands::simulate(cfg),
        "validate" => commands::validate(cfg),
        "bench" => commands::bench(cfg),
        other => bail!("unknown command '{other}'"),
    }
}

/// 2 for numerical failures, 1 for everything else.
fn error_code(err: &anyhow::Error) -> u8 {
    use specnet_core::Error as E;
    let numerical = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<E>(),
            Some(E::NonFinite(_) | E::Diverged { .. } | E::Degenerate(_) | E::OracleFailure { .. })
        )
    });
    if numerical {
        2
    } else {
        1
    }
}

fn run(name: &str, cfg: &RunConfig) -> Result<Outcome> {
    let threads = cfg.threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring the thread pool")?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    eprintln!("specnet {name}, resolved configuration:\n{}", serde_json::to_string_pretty(cfg)?);
    let done = dispatch(name, cfg)?;
    let manifest = Manifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        outputs: done.outputs,
    };
    let path = manifest.write()?;
    for o in &manifest.outputs {
        eprintln!("wrote {}", o.display());
    }
    eprintln!("wrote {}", path.display());
    Ok(done.outcome)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let (name, cfg) = match resolve(cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    match run(&name, &cfg) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::BudgetExhausted) => {
            eprintln!("epoch budget exhausted before reaching the tolerance");
            ExitCode::from(3)
        }
        Ok(Outcome::ValidationFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}
