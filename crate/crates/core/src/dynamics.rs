//! Time integration of `df/dt = Q(f,f)` in spectral space, moment diagnostics
//! and the closed-form BKW and Maxwellian states.

use std::f64::consts::PI;
use std::sync::Mutex;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::grid::VelocityGrid;
use crate::kernel::{q_direct_with, q_fast, KernelSpec, KernelTable, SeparableKernel};
use crate::specnet::{forward, SpecNetParams};
use crate::spectral::{analyze, check_same_grid, synthesize_complex, SpectralField};

/// Floor applied inside the logarithm of the entropy.
pub const ENTROPY_FLOOR: f64 = 1e-14;

/// A collision operator acting on spectra of one grid.
pub trait CollisionOperator: Send + Sync {
    fn grid(&self) -> &VelocityGrid;
    fn apply(&self, f: &SpectralField) -> Result<SpectralField>;
    fn name(&self) -> &str;
}

/// Quadrature-built separable kernel evaluated with FFT convolutions.
pub struct FastOperator {
    kernel: SeparableKernel,
}

impl FastOperator {
    pub fn new(kernel: SeparableKernel) -> Self {
        Self { kernel }
    }

    pub fn kernel(&self) -> &SeparableKernel {
        &self.kernel
    }
}

impl CollisionOperator for FastOperator {
    fn grid(&self) -> &VelocityGrid {
        self.kernel.grid()
    }

    fn apply(&self, f: &SpectralField) -> Result<SpectralField> {
        q_fast(f, &self.kernel)
    }

    fn name(&self) -> &str {
        "fast"
    }
}

/// Galerkin double sum with memoized closed-form kernel modes.
pub struct DirectOperator {
    grid: VelocityGrid,
    table: Mutex<KernelTable>,
}

impl DirectOperator {
    pub fn new(spec: &KernelSpec, grid: &VelocityGrid, tol: f64) -> Self {
        Self { grid: *grid, table: Mutex::new(KernelTable::new(spec, grid, tol)) }
    }
}

impl CollisionOperator for DirectOperator {
    fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    fn apply(&self, f: &SpectralField) -> Result<SpectralField> {
        check_same_grid(f.grid(), &self.grid)?;
        let table = self.table.lock().map_err(|_| contract("kernel table lock poisoned"))?;
        let table = std::cell::RefCell::new(table);
        q_direct_with(
            f,
            |l, m| table.borrow_mut().get(l, m).map(|v| Complex64::new(v, 0.0)),
            |m| table.borrow_mut().loss(m).map(|v| Complex64::new(v, 0.0)),
        )
    }

    fn name(&self) -> &str {
        "direct"
    }
}

/// Learned operator on a given grid.
pub struct SpecNetOperator {
    grid: VelocityGrid,
    params: SpecNetParams,
}

impl SpecNetOperator {
    pub fn new(params: SpecNetParams, grid: &VelocityGrid) -> Result<Self> {
        if grid.dim() != params.dim || grid.n() < 2 * params.n_trun {
            return Err(contract(format!(
                "grid N = {} (d = {}) cannot host N_trun = {} (d = {})",
                grid.n(),
                grid.dim(),
                params.n_trun,
                params.dim
            )));
        }
        Ok(Self { grid: *grid, params })
    }

    pub fn params(&self) -> &SpecNetParams {
        &self.params
    }
}

impl CollisionOperator for SpecNetOperator {
    fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    fn apply(&self, f: &SpectralField) -> Result<SpectralField> {
        forward(f, &self.params)
    }

    fn name(&self) -> &str {
        "specnet"
    }
}

/// Right-hand side projected onto real fields.
pub fn rhs(f: &SpectralField, op: &dyn CollisionOperator) -> Result<SpectralField> {
    let mut q = op.apply(f)?;
    q.symmetrize();
    if !q.is_finite() {
        return Err(Error::NonFinite("collision operator output".into()));
    }
    Ok(q)
}

fn finite(f: SpectralField) -> Result<SpectralField> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(Error::NonFinite("state after time step".into()))
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(contract(format!("time step must be positive, got {dt}")))
    }
}

/// Forward Euler step.
pub fn step_euler(f: &SpectralField, op: &dyn CollisionOperator, dt: f64) -> Result<SpectralField> {
    check_dt(dt)?;
    let q = rhs(f, op)?;
    let mut out = f.clone();
    out.axpy(dt, &q)?;
    finite(out)
}

/// Shu-Osher strong-stability-preserving third-order Runge-Kutta step.
pub fn step_rk3(f: &SpectralField, op: &dyn CollisionOperator, dt: f64) -> Result<SpectralField> {
    check_dt(dt)?;
    let mut u1 = f.clone();
    u1.axpy(dt, &rhs(f, op)?)?;
    let mut u2 = u1.clone();
    u2.axpy(dt, &rhs(&u1, op)?)?;
    u2.scale(0.25);
    u2.axpy(0.75, f)?;
    let mut u3 = u2.clone();
    u3.axpy(dt, &rhs(&u2, op)?)?;
    u3.scale(2.0 / 3.0);
    u3.axpy(1.0 / 3.0, f)?;
    finite(u3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    #[default]
    Rk3,
}

/// Mass, mean velocity, temperature, kinetic energy and entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub rho: f64,
    pub u: Vec<f64>,
    pub temp: f64,
    pub ke: f64,
    pub entropy: f64,
}

impl Moments {
    pub fn is_admissible(&self) -> bool {
        self.rho > 0.0 && self.temp >= 0.0
    }

    /// Momentum `rho u`.
    pub fn momentum(&self) -> Vec<f64> {
        self.u.iter().map(|x| x * self.rho).collect()
    }
}

/// Moments of node values by the periodic trapezoid rule.
pub fn moments(values: &[f64], grid: &VelocityGrid) -> Result<Moments> {
    if values.len() != grid.len() {
        return Err(contract("node array has the wrong length"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moments of a non-finite state".into()));
    }
    let d = grid.dim();
    let w = grid.cell_volume();
    let mut rho = 0.0;
    let mut mom = [0.0; 3];
    let mut e2 = 0.0;
    let mut ent = 0.0;
    for (i, &f) in values.iter().enumerate() {
        let v = grid.node(i);
        rho += f;
        for a in 0..d {
            mom[a] += f * v[a];
        }
        e2 += f * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        ent += f * f.max(ENTROPY_FLOOR).ln();
    }
    rho *= w;
    e2 *= w;
    let u: Vec<f64> = mom[..d].iter().map(|m| m * w / rho).collect();
    let u2: f64 = u.iter().map(|x| x * x).sum();
    let temp = (e2 - rho * u2) / (d as f64 * rho);
    Ok(Moments { rho, u, temp, ke: e2, entropy: ent * w })
}

/// Moments of a spectral state (its real part in physical space).
pub fn field_moments(f: &SpectralField) -> Result<Moments> {
    let vals: Vec<f64> = synthesize_complex(f).into_iter().map(|c| c.re).collect();
    moments(&vals, f.grid())
}

/// `rho (2 pi T)^{-d/2} exp(-|v-u|^2 / (2T))`.
pub fn maxwellian(rho: f64, u: &[f64], temp: f64, v: &[f64]) -> f64 {
    let d = v.len() as f64;
    let r2: f64 = v.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
    rho * (2.0 * PI * temp).powf(-0.5 * d) * (-r2 / (2.0 * temp)).exp()
}

/// Node values of the Maxwellian with the given moments.
pub fn maxwellian_of(m: &Moments, grid: &VelocityGrid) -> Result<Vec<f64>> {
    if !(m.temp > 0.0) {
        return Err(contract(format!("Maxwellian needs a positive temperature, got {}", m.temp)));
    }
    if m.u.len() != grid.dim() {
        return Err(contract("mean velocity and grid dimensions differ"));
    }
    Ok(grid.sample(|v| maxwellian(m.rho, &m.u, m.temp, v)))
}

/// BKW shape factor `K(t) = 1 - exp(-t/8) / 2`.
pub fn bkw_shape(t: f64) -> f64 {
    1.0 - 0.5 * (-t / 8.0).exp()
}

/// Unit-mass BKW solution for 2D Maxwell molecules with `C = 1/(2 pi)`:
/// `f = exp(-|v|^2/(2 K s^2)) (2K - 1 + (1-K)/(2K) |v|^2/s^2) / (2 pi s^2 K^2)`.
pub fn bkw_exact(t: f64, v: &[f64], sigma: f64) -> f64 {
    let k = bkw_shape(t);
    let r2 = v.iter().map(|x| x * x).sum::<f64>() / (sigma * sigma);
    (-r2 / (2.0 * k)).exp() * (2.0 * k - 1.0 + (1.0 - k) / (2.0 * k) * r2) / (2.0 * PI * sigma * sigma * k * k)
}

/// `d/dt` of [`bkw_exact`].
pub fn bkw_time_derivative(t: f64, v: &[f64], sigma: f64) -> f64 {
    let k = bkw_shape(t);
    let dk = (-t / 8.0).exp() / 16.0;
    let r2 = v.iter().map(|x| x * x).sum::<f64>() / (sigma * sigma);
    let pre = 1.0 / (2.0 * PI * sigma * sigma * k * k);
    let e = (-r2 / (2.0 * k)).exp();
    let p = 2.0 * k - 1.0 + (1.0 - k) / (2.0 * k) * r2;
    let dp = 2.0 - r2 / (2.0 * k * k);
    let df = pre * e * (p * (-2.0 / k + r2 / (2.0 * k * k)) + dp);
    dk * df
}

/// Spectrum of the BKW solution at time `t`.
pub fn bkw_field(grid: &VelocityGrid, t: f64, sigma: f64) -> Result<SpectralField> {
    if grid.dim() != 2 {
        return Err(contract("the BKW solution is two-dimensional"));
    }
    analyze(&grid.sample(|v| bkw_exact(t, v, sigma)), grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub dt: f64,
    pub t_final: f64,
    pub scheme: Scheme,
    /// Record moments every `cadence` steps (and at the final step).
    pub cadence: usize,
    /// Keep the spectra at recorded steps.
    pub keep_states: bool,
}

impl SolveOptions {
    /// Every step for `N <= 64`, every tenth step above.
    pub fn new(dt: f64, t_final: f64, grid: &VelocityGrid) -> Self {
        let cadence = if grid.n() <= 64 { 1 } else { 10 };
        Self { dt, t_final, scheme: Scheme::Rk3, cadence, keep_states: false }
    }

    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Recorded time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub operator: String,
    pub dt: f64,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub moments: Vec<Moments>,
    pub states: Vec<SpectralField>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&SpectralField> {
        self.states.last()
    }

    /// CSV with `t, rho, u_1..u_d, ke, entropy` and an optional error column.
    pub fn to_csv(&self, errors: Option<&[f64]>) -> String {
        let d = self.moments.first().map_or(0, |m| m.u.len());
        let mut out = String::from("t,rho");
        for a in 1..=d {
            out.push_str(&format!(",u{a}"));
        }
        out.push_str(",ke,entropy");
        if errors.is_some() {
            out.push_str(",err_vs_reference");
        }
        out.push('\n');
        for (i, (t, m)) in self.times.iter().zip(&self.moments).enumerate() {
            out.push_str(&format!("{t},{}", m.rho));
            for x in &m.u {
                out.push_str(&format!(",{x}"));
            }
            out.push_str(&format!(",{},{}", m.ke, m.entropy));
            if let Some(e) = errors {
                out.push_str(&format!(",{}", e.get(i).copied().unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }
}

/// A solve that stopped early, with everything recorded up to the failure.
#[derive(Debug)]
pub struct SolveFailure {
    pub partial: Trajectory,
    pub error: Error,
}

impl From<SolveFailure> for Error {
    fn from(f: SolveFailure) -> Self {
        f.error
    }
}

/// Integrate from `f0` to `t_final`, calling `observe(step, t, state)` at
/// every recorded step.
pub fn solve_with<F>(
    f0: &SpectralField,
    op: &dyn CollisionOperator,
    opts: &SolveOptions,
    mut observe: F,
) -> std::result::Result<Trajectory, SolveFailure>
where
    F: FnMut(usize, f64, &SpectralField),
{
    let mut traj = Trajectory {
        operator: op.name().to_string(),
        dt: opts.dt,
        steps: Vec::new(),
        times: Vec::new(),
        moments: Vec::new(),
        states: Vec::new(),
    };
    let fail = |traj: Trajectory, error: Error| SolveFailure { partial: traj, error };
    if let Err(e) = check_dt(opts.dt).and_then(|_| {
        if opts.t_final > 0.0 {
            check_same_grid(f0.grid(), op.grid())
        } else {
            Err(contract("final time must be positive"))
        }
    }) {
        return Err(fail(traj, e));
    }
    let steps = opts.steps();
    let cadence = opts.cadence.max(1);
    let mut f = f0.clone();
    let mut record = |traj: &mut Trajectory, n: usize, f: &SpectralField| -> Result<()> {
        let t = n as f64 * opts.dt;
        traj.steps.push(n);
        traj.times.push(t);
        traj.moments.push(field_moments(f)?);
        if opts.keep_states {
            traj.states.push(f.clone());
        }
        observe(n, t, f);
        Ok(())
    };
    if let Err(e) = record(&mut traj, 0, &f) {
        return Err(fail(traj, e));
    }
    for n in 1..=steps {
        let next = match opts.scheme {
            Scheme::Euler => step_euler(&f, op, opts.dt),
            Scheme::Rk3 => step_rk3(&f, op, opts.dt),
        };
        f = match next {
            Ok(x) => x,
            Err(e) => return Err(fail(traj, e)),
        };
        if n % cadence == 0 || n == steps {
            if let Err(e) = record(&mut traj, n, &f) {
                return Err(fail(traj, e));
            }
        }
    }
    if !opts.keep_states {
        traj.states.push(f);
    }
    Ok(traj)
}

/// [`solve_with`] without an observer.
pub fn solve(
    f0: &SpectralField,
    op: &dyn CollisionOperator,
    opts: &SolveOptions,
) -> std::result::Result<Trajectory, SolveFailure> {
    solve_with(f0, op, opts, |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_separable_quadrature, QuadratureRule};

    struct Zero(VelocityGrid);

    impl CollisionOperator for Zero {
        fn grid(&self) -> &VelocityGrid {
            &self.0
        }
        fn apply(&self, f: &SpectralField) -> Result<SpectralField> {
            Ok(SpectralField::zeros(*f.grid()))
        }
        fn name(&self) -> &str {
            "zero"
        }
    }

    /// `Q(f) = q` for a fixed field `q`.
    struct Frozen(SpectralField);

    impl CollisionOperator for Frozen {
        fn grid(&self) -> &VelocityGrid {
            self.0.grid()
        }
        fn apply(&self, _: &SpectralField) -> Result<SpectralField> {
            Ok(self.0.clone())
        }
        fn name(&self) -> &str {
            "frozen"
        }
    }

    /// Linear decay `Q(f) = -f`.
    struct Decay(VelocityGrid);

    impl CollisionOperator for Decay {
        fn grid(&self) -> &VelocityGrid {
            &self.0
        }
        fn apply(&self, f: &SpectralField) -> Result<SpectralField> {
            Ok(f.scaled(-1.0))
        }
        fn name(&self) -> &str {
            "decay"
        }
    }

    fn grid(n: usize) -> VelocityGrid {
        VelocityGrid::new(2, n, 4.0).unwrap()
    }

    #[test]
    fn zero_operator_is_identity() {
        let g = grid(16);
        let f = bkw_field(&g, 0.0, 1.0).unwrap();
        assert_eq!(step_euler(&f, &Zero(g), 0.1).unwrap(), f);
        assert!(step_rk3(&f, &Zero(g), 0.1).unwrap().l2_distance(&f).unwrap() <= 1e-15 * f.l2_norm());
        assert!(step_rk3(&f, &Zero(g), 0.0).is_err());
    }

    #[test]
    fn euler_is_linear_in_dt_for_frozen_rhs() {
        let g = grid(16);
        let f = bkw_field(&g, 0.0, 1.0).unwrap();
        let op = Frozen(bkw_field(&g, 1.0, 1.0).unwrap());
        let mut a = step_euler(&f, &op, 0.02).unwrap();
        a.axpy(-1.0, &f).unwrap();
        let mut b = step_euler(&f, &op, 0.01).unwrap();
        b.axpy(-1.0, &f).unwrap();
        b.scale(2.0);
        assert!(a.l2_distance(&b).unwrap() <= 1e-12 * a.l2_norm());
    }

    #[test]
    fn rk3_order_on_linear_decay() {
        let g = grid(8);
        let f = bkw_field(&g, 0.0, 1.0).unwrap();
        let op = Decay(g);
        let err = |dt: f64| {
            let opts = SolveOptions { dt, t_final: 1.0, scheme: Scheme::Rk3, cadence: 1000, keep_states: false };
            let tr = solve(&f, &op, &opts).unwrap();
            tr.last_state().unwrap().l2_distance(&f.scaled((-1.0f64).exp())).unwrap()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 8.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn unit_maxwellian_moments() {
        let g = grid(64);
        let vals = g.sample(|v| maxwellian(1.0, &[0.0, 0.0], 1.0, v));
        let m = moments(&vals, &g).unwrap();
        assert!((m.rho - 1.0).abs() < 1e-6);
        assert!(m.u.iter().all(|x| x.abs() < 1e-6));
        assert!((m.temp - 1.0).abs() < 1e-6);
        assert!((m.ke - 2.0).abs() < 1e-6);
    }

    #[test]
    fn translated_maxwellian_shifts_mean() {
        let g = grid(64);
        let a = [0.3, -0.45];
        let vals = g.sample(|v| maxwellian(1.0, &a, 1.0, v));
        let m = moments(&vals, &g).unwrap();
        assert!((m.u[0] - a[0]).abs() < 1e-9 && (m.u[1] - a[1]).abs() < 1e-9);
    }

    #[test]
    fn maxwellian_of_round_trip_and_scaling() {
        let g = grid(64);
        let m = Moments { rho: 1.3, u: vec![0.2, -0.1], temp: 0.9, ke: 0.0, entropy: 0.0 };
        let back = moments(&maxwellian_of(&m, &g).unwrap(), &g).unwrap();
        assert!((back.rho - m.rho).abs() < 1e-6 && (back.temp - m.temp).abs() < 1e-6);
        let m2 = Moments { rho: 2.6, ..m.clone() };
        let a = maxwellian_of(&m, &g).unwrap();
        let b = maxwellian_of(&m2, &g).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (2.0 * x - y).abs() <= 1e-15 * y.abs().max(1e-300)));
        let bad = Moments { temp: 0.0, ..m };
        assert!(maxwellian_of(&bad, &g).is_err());
    }

    #[test]
    fn bkw_limits_and_mass() {
        // t = 0: K = 1/2 so the constant term vanishes
        assert!((bkw_shape(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(bkw_exact(0.0, &[0.0, 0.0], 1.0), 0.0);
        // t -> infinity: Maxwellian with temperature sigma^2
        let v = [0.7, -0.4];
        let far = bkw_exact(1e4, &v, 1.3);
        assert!((far - maxwellian(1.0, &[0.0, 0.0], 1.69, &v)).abs() < 1e-12);
        let g = grid(64);
        for sigma in [1.0, 0.8] {
            let m = moments(&g.sample(|v| bkw_exact(0.0, v, sigma)), &g).unwrap();
            assert!((m.rho - 1.0).abs() < 1e-10, "sigma {sigma}: mass {}", m.rho);
        }
    }

    #[test]
    fn bkw_derivative_matches_difference_quotient() {
        let v = [0.9, 1.4];
        for t in [0.0, 0.7, 3.0] {
            let h = 1e-5;
            let fd = (bkw_exact(t + h, &v, 1.0) - bkw_exact((t - h).max(0.0), &v, 1.0)) / (t + h - (t - h).max(0.0));
            let an = bkw_time_derivative(t, &v, 1.0);
            assert!((fd - an).abs() < 1e-8, "{t}: {fd} vs {an}");
        }
    }

    #[test]
    fn fast_operator_matches_bkw_derivative() {
        let g = grid(32);
        let k = build_separable_quadrature(&KernelSpec::maxwellian_2d(), &g, &QuadratureRule::default_for(&g)).unwrap();
        let op = FastOperator::new(k);
        let f = bkw_field(&g, 0.0, 1.0).unwrap();
        let d = analyze(&g.sample(|v| bkw_time_derivative(0.0, v, 1.0)), &g).unwrap();
        let q = rhs(&f, &op).unwrap();
        assert!(q.relative_error(&d).unwrap() < 1e-2);
    }

    #[test]
    fn failure_keeps_partial_trajectory() {
        struct Blow(VelocityGrid);
        impl CollisionOperator for Blow {
            fn grid(&self) -> &VelocityGrid {
                &self.0
            }
            fn apply(&self, f: &SpectralField) -> Result<SpectralField> {
                let mut q = f.clone();
                q.coeffs_mut()[0] = Complex64::new(f64::INFINITY, 0.0);
                Ok(q)
            }
            fn name(&self) -> &str {
                "blow"
            }
        }
        let g = grid(8);
        let f = bkw_field(&g, 0.0, 1.0).unwrap();
        let opts = SolveOptions::new(0.1, 1.0, &g);
        let err = solve(&f, &Blow(g), &opts).unwrap_err();
        assert_eq!(err.partial.len(), 1);
        assert!(matches!(err.error, Error::NonFinite(_)));
    }
}
