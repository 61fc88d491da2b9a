//! Spectral collision kernel for variable-hard-sphere interactions.
//!
//! With `u = (1+e)/2 l - (3-e)/2 m` the kernel modes are
//!
//! ```text
//! G(l,m) = \int_0^{2S} C r^{alpha+d-1} [\int_{S^{d-1}} e^{ i pi/(2T) r sigma.u} dsigma]
//!                                      [\int_{S^{d-1}} e^{-i pi/(2T) r (1+e)/2 omega.(l+m)} domega] dr
//! ```
//!
//! and `Q_k = sum_{l+m=k} (G(l,m) - G(m,m)) f_l f_m`. The separable form
//! replaces the `r` and `sigma` integrals by quadrature, which turns every
//! term into an FFT convolution.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::fft::with_fft;
use crate::grid::{signed_freq, ModeIndex, VelocityGrid, LAMBDA};
use crate::special::{bessel_j0, gauss_legendre, sinc};
use crate::spectral::{check_same_grid, spectral_convolve, SpectralField};

/// Largest `N^d` accepted by the `O(N^{2d})` evaluators.
pub const DIRECT_LIMIT: usize = 4096;

/// Variable-hard-sphere kernel `B = C |v - v_*|^alpha` with restitution `e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    pub alpha: f64,
    pub c: f64,
    pub e: f64,
}

impl KernelSpec {
    pub fn new(dim: usize, alpha: f64, c: f64, e: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(contract(format!("kernel dimension must be 2 or 3, got {dim}")));
        }
        if !(alpha > -1.0) || !alpha.is_finite() {
            return Err(contract(format!("VHS exponent must exceed -1, got {alpha}")));
        }
        if !(0.0..=1.0).contains(&e) {
            return Err(contract(format!("restitution coefficient must lie in [0,1], got {e}")));
        }
        if !c.is_finite() {
            return Err(contract("kernel constant must be finite"));
        }
        Ok(Self { dim, alpha, c, e })
    }

    /// Kernel with the default constant: `1/(2 pi)` in 2D, `1/(4 pi)` in 3D.
    pub fn with_default_constant(dim: usize, alpha: f64, e: f64) -> Result<Self> {
        Self::new(dim, alpha, default_constant(dim), e)
    }

    /// Elastic Maxwell molecules in 2D.
    pub fn maxwellian_2d() -> Self {
        Self { dim: 2, alpha: 0.0, c: default_constant(2), e: 1.0 }
    }

    pub fn is_elastic(&self) -> bool {
        self.e == 1.0
    }

    /// `(1+e)/2`, the weight of `l` in the phase of `alpha_t`.
    pub fn gain_weight(&self) -> f64 {
        0.5 * (1.0 + self.e)
    }

    /// `(3-e)/2`, the weight of `m` in the phase of `beta_t`.
    pub fn loss_weight(&self) -> f64 {
        0.5 * (3.0 - self.e)
    }

    /// The same kernel with `e = 1`. Its diagonal `G(m,m)` is the loss term
    /// for every `e`.
    pub fn elastic(&self) -> Self {
        Self { e: 1.0, ..*self }
    }
}

/// Kernel constant under which the 2D BKW relaxation follows `1 - e^{-t/8}/2`.
pub fn default_constant(dim: usize) -> f64 {
    if dim == 2 {
        1.0 / (2.0 * PI)
    } else {
        1.0 / (4.0 * PI)
    }
}

/// Area of the unit sphere `S^{d-1}`.
pub fn sphere_area(dim: usize) -> f64 {
    if dim == 2 {
        2.0 * PI
    } else {
        4.0 * PI
    }
}

/// `\int_{S^{d-1}} e^{i z sigma.n} dsigma` for a unit vector `n`.
fn sphere_transform(dim: usize, z: f64) -> f64 {
    if dim == 2 {
        2.0 * PI * bessel_j0(z)
    } else {
        4.0 * PI * sinc(z)
    }
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// `u = (1+e)/2 l - (3-e)/2 m` and `l + m` as real vectors.
fn phase_vectors(l: &ModeIndex, m: &ModeIndex, spec: &KernelSpec) -> ([f64; 3], [f64; 3]) {
    let lf = l.as_f64();
    let mf = m.as_f64();
    let (g, h) = (spec.gain_weight(), spec.loss_weight());
    let u = [g * lf[0] - h * mf[0], g * lf[1] - h * mf[1], g * lf[2] - h * mf[2]];
    let s = [lf[0] + mf[0], lf[1] + mf[1], lf[2] + mf[2]];
    (u, s)
}

/// Nodes and weights on the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereRule {
    pub nodes: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// `n` equispaced angles on the circle.
    pub fn circle(n: usize) -> Self {
        let w = 2.0 * PI / n as f64;
        let nodes = (0..n)
            .map(|b| {
                let th = 2.0 * PI * b as f64 / n as f64;
                [th.cos(), th.sin(), 0.0]
            })
            .collect();
        Self { nodes, weights: vec![w; n] }
    }

    /// Gauss-Legendre in the polar cosine times equispaced azimuth.
    pub fn product(n_polar: usize, n_azimuth: usize) -> Self {
        let (mu, wmu) = gauss_legendre(n_polar, -1.0, 1.0);
        let dphi = 2.0 * PI / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
        let mut weights = Vec::with_capacity(n_polar * n_azimuth);
        for (c, wc) in mu.iter().zip(&wmu) {
            let s = (1.0 - c * c).max(0.0).sqrt();
            for p in 0..n_azimuth {
                let phi = dphi * p as f64;
                nodes.push([s * phi.cos(), s * phi.sin(), *c]);
                weights.push(wc * dphi);
            }
        }
        Self { nodes, weights }
    }

    /// Refinement ladder used by the nested oracle: level `j` doubles the resolution.
    fn for_level(dim: usize, level: usize) -> Self {
        let base = 16usize << level;
        if dim == 2 {
            Self::circle(base)
        } else {
            Self::product(base / 2, base)
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `\int e^{i z sigma.dir} dsigma` by quadrature.
    fn integrate_phase(&self, z: f64, dir: &[f64; 3]) -> Complex64 {
        self.nodes.iter().zip(&self.weights).map(|(s, w)| Complex64::from_polar(*w, z * dot(s, dir))).sum()
    }
}

/// Exact kernel mode `G(l,m)` by nested quadrature: Gauss-Legendre in `r`,
/// direct angular rules on both spheres, all refined by doubling until two
/// successive estimates differ by at most `tol`.
///
/// This path never touches `J0` or `sinc` and serves as the oracle for every
/// other kernel construction.
pub fn g_hat_integral(
    l: &ModeIndex,
    m: &ModeIndex,
    spec: &KernelSpec,
    grid: &VelocityGrid,
    tol: f64,
) -> Result<Complex64> {
    if !(tol > 0.0) {
        return Err(contract("oracle tolerance must be positive"));
    }
    if l.dim() != spec.dim || m.dim() != spec.dim || grid.dim() != spec.dim {
        return Err(contract("mode, kernel and grid dimensions differ"));
    }
    let dim = spec.dim;
    let t = grid.half_length();
    let rmax = grid.expanded_support();
    let (u, s) = phase_vectors(l, m, spec);
    let (nu, ns) = (norm(&u), norm(&s));
    let udir = if nu > 0.0 { [u[0] / nu, u[1] / nu, u[2] / nu] } else { [1.0, 0.0, 0.0] };
    let sdir = if ns > 0.0 { [s[0] / ns, s[1] / ns, s[2] / ns] } else { [1.0, 0.0, 0.0] };
    let k_sigma = PI / (2.0 * t) * nu;
    let k_omega = -PI / (2.0 * t) * spec.gain_weight() * ns;

    let max_level = if dim == 2 { 6 } else { 4 };
    let mut prev: Option<Complex64> = None;
    let mut change = f64::INFINITY;
    for level in 0..=max_level {
        let sphere = SphereRule::for_level(dim, level);
        let n_r = 16usize << level;
        let (rs, ws) = gauss_legendre(n_r, 0.0, rmax);
        let est: Complex64 = rs
            .iter()
            .zip(&ws)
            .map(|(&r, &w)| {
                let radial = spec.c * r.powf(spec.alpha + dim as f64 - 1.0) * w;
                let a = sphere.integrate_phase(k_sigma * r, &udir);
                let b = sphere.integrate_phase(k_omega * r, &sdir);
                a * b * radial
            })
            .sum();
        if let Some(p) = prev {
            change = (est - p).norm();
            if change <= tol {
                return Ok(est);
            }
        }
        prev = Some(est);
    }
    let est = prev.unwrap_or_default();
    Err(Error::OracleFailure { estimate_re: est.re, estimate_im: est.im, change })
}

/// `eta` and `xi` of the closed-form radial integrals.
pub fn eta_xi(l: &ModeIndex, m: &ModeIndex, spec: &KernelSpec) -> (f64, f64) {
    let (u, s) = phase_vectors(l, m, spec);
    (norm(&u) * LAMBDA * PI, spec.gain_weight() * norm(&s) * LAMBDA * PI)
}

/// `\int_0^1 x^{p} K(eta x) K(xi x) dx` with an `n`-point Gauss-Legendre rule.
fn radial_closed_form(dim: usize, alpha: f64, eta: f64, xi: f64, n: usize) -> f64 {
    let (xs, ws) = gauss_legendre(n, 0.0, 1.0);
    radial_closed_form_rule(dim, alpha, eta, xi, &xs, &ws)
}

fn radial_closed_form_rule(dim: usize, alpha: f64, eta: f64, xi: f64, xs: &[f64], ws: &[f64]) -> f64 {
    let p = alpha + dim as f64 - 1.0;
    xs.iter()
        .zip(ws)
        .map(|(&x, &w)| {
            let radial = w * x.powf(p);
            if dim == 2 {
                radial * bessel_j0(eta * x) * bessel_j0(xi * x)
            } else {
                radial * sinc(eta * x) * sinc(xi * x)
            }
        })
        .sum()
}

fn closed_form_prefactor(spec: &KernelSpec, grid: &VelocityGrid) -> f64 {
    let scale = 2.0 * LAMBDA * grid.half_length();
    let area = sphere_area(spec.dim);
    spec.c * area * area * scale.powf(spec.alpha + spec.dim as f64)
}

/// `G(l,m) = C (2 pi)^2 (2 lambda T)^{2+alpha} \int_0^1 x^{1+alpha} J0(eta x) J0(xi x) dx`.
pub fn g_hat_closed_form_2d(
    l: &ModeIndex,
    m: &ModeIndex,
    spec: &KernelSpec,
    grid: &VelocityGrid,
    quad_pts: usize,
) -> Result<Complex64> {
    if spec.dim != 2 || grid.dim() != 2 {
        return Err(contract("two-dimensional closed form called with d != 2"));
    }
    let (eta, xi) = eta_xi(l, m, spec);
    let v = closed_form_prefactor(spec, grid) * radial_closed_form(2, spec.alpha, eta, xi, quad_pts);
    Ok(Complex64::new(v, 0.0))
}

/// `G(l,m) = C (4 pi)^2 (2 lambda T)^{3+alpha} \int_0^1 x^{2+alpha} sinc(eta x) sinc(xi x) dx`.
///
/// The polar Jacobian contributes `x^2`, so the DC value is
/// `C (4 pi)^2 (2 lambda T)^{3+alpha} / (3 + alpha)`.
pub fn g_hat_closed_form_3d(
    l: &ModeIndex,
    m: &ModeIndex,
    spec: &KernelSpec,
    grid: &VelocityGrid,
    quad_pts: usize,
) -> Result<Complex64> {
    if spec.dim != 3 || grid.dim() != 3 {
        return Err(contract("three-dimensional closed form called with d != 3"));
    }
    let (eta, xi) = eta_xi(l, m, spec);
    let v = closed_form_prefactor(spec, grid) * radial_closed_form(3, spec.alpha, eta, xi, quad_pts);
    Ok(Complex64::new(v, 0.0))
}

/// Closed-form kernel mode as a function of `(eta, xi)` with a fixed
/// `n`-point rule. Useful when sweeping many modes with equal invariants.
pub fn g_hat_radial(spec: &KernelSpec, grid: &VelocityGrid, eta: f64, xi: f64, n: usize) -> f64 {
    closed_form_prefactor(spec, grid) * radial_closed_form(spec.dim, spec.alpha, eta, xi, n)
}

/// Same as [`g_hat_radial`] with caller-supplied Gauss-Legendre nodes and
/// weights on `[0, 1]`.
pub fn g_hat_radial_rule(spec: &KernelSpec, grid: &VelocityGrid, eta: f64, xi: f64, xs: &[f64], ws: &[f64]) -> f64 {
    closed_form_prefactor(spec, grid) * radial_closed_form_rule(spec.dim, spec.alpha, eta, xi, xs, ws)
}

/// Rule order that resolves the oscillation of the closed-form integrand.
pub fn radial_rule_order(eta: f64, xi: f64) -> usize {
    (((eta + xi) / 2.0).ceil() as usize + 24).max(32)
}

/// Closed-form kernel mode with the Gauss-Legendre order doubled until the
/// value changes by at most `tol`.
pub fn g_hat_closed_form(
    l: &ModeIndex,
    m: &ModeIndex,
    spec: &KernelSpec,
    grid: &VelocityGrid,
    tol: f64,
) -> Result<Complex64> {
    let (eta, xi) = eta_xi(l, m, spec);
    Ok(Complex64::new(closed_form_adaptive(spec, grid, eta, xi, tol)?, 0.0))
}

fn closed_form_adaptive(spec: &KernelSpec, grid: &VelocityGrid, eta: f64, xi: f64, tol: f64) -> Result<f64> {
    let pre = closed_form_prefactor(spec, grid);
    // the integrand oscillates on the scale 1/(eta + xi)
    let mut n = 16usize.max(((eta + xi) / 2.0) as usize + 8);
    let mut prev = pre * radial_closed_form(spec.dim, spec.alpha, eta, xi, n);
    for _ in 0..8 {
        n *= 2;
        let est = pre * radial_closed_form(spec.dim, spec.alpha, eta, xi, n);
        let change = (est - prev).abs();
        if change <= tol {
            return Ok(est);
        }
        prev = est;
    }
    Err(Error::OracleFailure { estimate_re: prev, estimate_im: 0.0, change: f64::NAN })
}

/// Memoized closed-form kernel values. `G` depends on `(l, m)` only through
/// `|l|^2`, `l.m` and `|m|^2`.
pub struct KernelTable {
    spec: KernelSpec,
    grid: VelocityGrid,
    tol: f64,
    cache: HashMap<(i64, i64, i64), f64>,
    loss_cache: HashMap<i64, f64>,
}

impl KernelTable {
    pub fn new(spec: &KernelSpec, grid: &VelocityGrid, tol: f64) -> Self {
        Self { spec: *spec, grid: *grid, tol, cache: HashMap::new(), loss_cache: HashMap::new() }
    }

    /// Loss weight `G_{e=1}(m,m)`.
    pub fn loss(&mut self, m: &ModeIndex) -> Result<f64> {
        let mm: i64 = m.components().iter().map(|x| x * x).sum();
        if let Some(v) = self.loss_cache.get(&mm) {
            return Ok(*v);
        }
        let elastic = self.spec.elastic();
        let (eta, xi) = eta_xi(m, m, &elastic);
        let v = closed_form_adaptive(&elastic, &self.grid, eta, xi, self.tol)?;
        self.loss_cache.insert(mm, v);
        Ok(v)
    }

    pub fn get(&mut self, l: &ModeIndex, m: &ModeIndex) -> Result<f64> {
        let lc = l.components();
        let mc = m.components();
        let ll: i64 = lc.iter().map(|x| x * x).sum();
        let mm: i64 = mc.iter().map(|x| x * x).sum();
        let lm: i64 = lc.iter().zip(mc).map(|(a, b)| a * b).sum();
        if let Some(v) = self.cache.get(&(ll, lm, mm)) {
            return Ok(*v);
        }
        let (eta, xi) = eta_xi(l, m, &self.spec);
        let v = closed_form_adaptive(&self.spec, &self.grid, eta, xi, self.tol)?;
        self.cache.insert((ll, lm, mm), v);
        Ok(v)
    }
}

/// Radial and angular quadrature for the separable decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub r_nodes: Vec<f64>,
    pub r_weights: Vec<f64>,
    pub sphere: SphereRule,
}

impl QuadratureRule {
    /// `n_r` Gauss-Legendre nodes on `[0, 2S]` and `n_sigma` equispaced angles.
    pub fn circle(grid: &VelocityGrid, n_r: usize, n_sigma: usize) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(contract("circle rule needs a 2D grid"));
        }
        if n_r == 0 || n_sigma == 0 {
            return Err(contract("quadrature needs at least one node per direction"));
        }
        let (r_nodes, r_weights) = gauss_legendre(n_r, 0.0, grid.expanded_support());
        Ok(Self { r_nodes, r_weights, sphere: SphereRule::circle(n_sigma) })
    }

    /// `n_r` Gauss-Legendre radii and a `n_polar x n_azimuth` product sphere rule.
    pub fn sphere(grid: &VelocityGrid, n_r: usize, n_polar: usize, n_azimuth: usize) -> Result<Self> {
        if grid.dim() != 3 {
            return Err(contract("sphere rule needs a 3D grid"));
        }
        if n_r == 0 || n_polar == 0 || n_azimuth == 0 {
            return Err(contract("quadrature needs at least one node per direction"));
        }
        let (r_nodes, r_weights) = gauss_legendre(n_r, 0.0, grid.expanded_support());
        Ok(Self { r_nodes, r_weights, sphere: SphereRule::product(n_polar, n_azimuth) })
    }

    /// `N_r = N` radii; 16 angles in 2D, 8 x 16 in 3D.
    pub fn default_for(grid: &VelocityGrid) -> Self {
        let n = grid.n();
        if grid.dim() == 2 {
            Self::circle(grid, n, 16).expect("valid 2D rule")
        } else {
            Self::sphere(grid, n, 8, 16).expect("valid 3D rule")
        }
    }

    pub fn n_r(&self) -> usize {
        self.r_nodes.len()
    }

    pub fn n_sigma(&self) -> usize {
        self.sphere.len()
    }
}

/// `F(k; r) * r^{d-1}`: the omega-integral of the kernel at radius `r`,
/// with the polar Jacobian folded in.
pub fn radial_factor(k_norm: f64, r: f64, spec: &KernelSpec, grid: &VelocityGrid) -> f64 {
    let z = PI / (2.0 * grid.half_length()) * r * spec.gain_weight() * k_norm;
    spec.c * r.powf(spec.alpha + spec.dim as f64 - 1.0) * sphere_transform(spec.dim, z)
}

/// Per-axis phase factors `exp(i coef * k_j)` for `j` in FFT order. The
/// Nyquist slot carries the mean of its two aliases `+-N/2`, `cos(coef N/2)`,
/// so that phase-weighted real fields stay real.
fn axis_phases(coef: f64, n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|j| {
            if j == n / 2 {
                Complex64::new((coef * (n / 2) as f64).cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, coef * signed_freq(j, n) as f64)
            }
        })
        .collect()
}

/// Separable approximation `G^fast(l,m) = sum_t gamma_t(l+m) alpha_t(l) beta_t(m)`
/// built from a [`QuadratureRule`], plus the folded loss term.
///
/// Terms `t = a * N_sigma + b` correspond to radius `r_a` and direction
/// `sigma_b`; the final term `t = N_r N_sigma` is the loss fold with
/// `alpha = gamma = 1` and `beta(m) = -G^fast_{e=1}(m,m)`. For `e < 1` the
/// loss integrand does not depend on `e`, and taking the inelastic diagonal
/// instead would break mass conservation. The quadrature terms are
/// stored factored: `gamma` per radius (it does not depend on `sigma` for VHS
/// kernels) and `alpha`, `beta` as per-axis phase tables.
#[derive(Debug, Clone)]
pub struct SeparableKernel {
    spec: KernelSpec,
    grid: VelocityGrid,
    rule: QuadratureRule,
    /// `F(k; r_a) r_a^{d-1} dr_a` over the grid modes, one array per radius.
    gamma_radial: Vec<Vec<f64>>,
    alpha_axes: Vec<Vec<Complex64>>,
    beta_axes: Vec<Vec<Complex64>>,
    loss_beta: Vec<Complex64>,
}

/// Build the separable kernel for `spec` on `grid`.
pub fn build_separable_quadrature(
    spec: &KernelSpec,
    grid: &VelocityGrid,
    rule: &QuadratureRule,
) -> Result<SeparableKernel> {
    if spec.dim != grid.dim() {
        return Err(contract("kernel and grid dimensions differ"));
    }
    let expect_dim = if rule.sphere.nodes.iter().any(|s| s[2] != 0.0) { 3 } else { 2 };
    if expect_dim == 3 && spec.dim == 2 {
        return Err(contract("three-dimensional sphere rule used with a 2D kernel"));
    }
    if spec.dim == 3 && rule.n_sigma() < 2 {
        return Err(contract("3D kernel needs a sphere rule"));
    }
    let len = grid.len();
    let mode_norms: Vec<f64> = (0..len).map(|i| grid.mode(i).l2_norm()).collect();

    let gamma_radial: Vec<Vec<f64>> = rule
        .r_nodes
        .par_iter()
        .zip(&rule.r_weights)
        .map(|(&r, &w)| {
            // F depends on |k| only; memoize over |k|^2
            let mut memo: HashMap<u64, f64> = HashMap::new();
            mode_norms
                .iter()
                .map(|&kn| *memo.entry(kn.to_bits()).or_insert_with(|| w * radial_factor(kn, r, spec, grid)))
                .collect()
        })
        .collect();

    let mut kernel = build_phase_only(spec, grid, rule);
    kernel.gamma_radial = gamma_radial;
    // G_{e=1}(m,m) = sum_a w_a F_{e=1}(2|m|; r_a) sum_b w_b: the phases cancel
    let elastic = spec.elastic();
    let sphere_weight: f64 = rule.sphere.weights.iter().sum();
    kernel.loss_beta = (0..len)
        .into_par_iter()
        .map(|i| {
            let k2 = 2.0 * mode_norms[i];
            let g: f64 =
                rule.r_nodes.iter().zip(&rule.r_weights).map(|(&r, &w)| w * radial_factor(k2, r, &elastic, grid)).sum();
            Complex64::new(-g * sphere_weight, 0.0)
        })
        .collect();
    Ok(kernel)
}

impl SeparableKernel {
    pub(crate) fn from_parts(
        spec: KernelSpec,
        grid: VelocityGrid,
        rule: QuadratureRule,
        gamma_radial: Vec<Vec<f64>>,
        loss_beta: Vec<Complex64>,
    ) -> Result<Self> {
        let mut k = build_phase_only(&spec, &grid, &rule);
        if gamma_radial.len() != rule.n_r() || gamma_radial.iter().any(|g| g.len() != grid.len()) {
            return Err(Error::Format("gamma table has the wrong shape".into()));
        }
        if loss_beta.len() != grid.len() {
            return Err(Error::Format("loss table has the wrong length".into()));
        }
        k.gamma_radial = gamma_radial;
        k.loss_beta = loss_beta;
        Ok(k)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn gamma_radial(&self) -> &[Vec<f64>] {
        &self.gamma_radial
    }

    pub fn loss_beta(&self) -> &[Complex64] {
        &self.loss_beta
    }

    /// Number of quadrature terms `N_r N_sigma`.
    pub fn quadrature_terms(&self) -> usize {
        self.rule.n_r() * self.rule.n_sigma()
    }

    /// Total terms including the loss fold.
    pub fn num_terms(&self) -> usize {
        self.quadrature_terms() + 1
    }

    fn expand_axes(&self, tables: &[Vec<Complex64>]) -> Vec<Complex64> {
        let n = self.grid.n();
        let dim = self.grid.dim();
        (0..self.grid.len())
            .map(|i| {
                let mut rem = i;
                let mut v = Complex64::new(1.0, 0.0);
                for axis in (0..dim).rev() {
                    v *= tables[axis][rem % n];
                    rem /= n;
                }
                v
            })
            .collect()
    }

    fn term_axes(&self, t: usize) -> std::ops::Range<usize> {
        let dim = self.grid.dim();
        t * dim..(t + 1) * dim
    }

    /// `alpha_t` over the grid modes.
    pub fn alpha(&self, t: usize) -> Vec<Complex64> {
        assert!(t < self.num_terms(), "term index out of range");
        if t == self.quadrature_terms() {
            return vec![Complex64::new(1.0, 0.0); self.grid.len()];
        }
        self.expand_axes(&self.alpha_axes[self.term_axes(t)])
    }

    /// `beta_t` over the grid modes.
    pub fn beta(&self, t: usize) -> Vec<Complex64> {
        assert!(t < self.num_terms(), "term index out of range");
        if t == self.quadrature_terms() {
            return self.loss_beta.clone();
        }
        self.expand_axes(&self.beta_axes[self.term_axes(t)])
    }

    /// `gamma_t` over the grid modes.
    pub fn gamma(&self, t: usize) -> Vec<Complex64> {
        assert!(t < self.num_terms(), "term index out of range");
        if t == self.quadrature_terms() {
            return vec![Complex64::new(1.0, 0.0); self.grid.len()];
        }
        let a = t / self.rule.n_sigma();
        let b = t % self.rule.n_sigma();
        let wb = self.rule.sphere.weights[b];
        self.gamma_radial[a].iter().map(|g| Complex64::new(g * wb, 0.0)).collect()
    }

    /// `G^fast(l, m)` for any pair of modes, evaluating `gamma` at `l+m`
    /// directly so the sum need not be in band.
    pub fn g_fast(&self, l: &ModeIndex, m: &ModeIndex) -> Complex64 {
        let spec = &self.spec;
        let base = PI / (2.0 * self.grid.half_length());
        let lf = l.as_f64();
        let mf = m.as_f64();
        let k_norm = (*l + *m).l2_norm();
        let mut acc = Complex64::new(0.0, 0.0);
        for (&r, &wr) in self.rule.r_nodes.iter().zip(&self.rule.r_weights) {
            let f = wr * radial_factor(k_norm, r, spec, &self.grid);
            let mut ang = Complex64::new(0.0, 0.0);
            for (s, &ws) in self.rule.sphere.nodes.iter().zip(&self.rule.sphere.weights) {
                let phase = base * r * (spec.gain_weight() * dot(s, &lf) - spec.loss_weight() * dot(s, &mf));
                ang += Complex64::from_polar(ws, phase);
            }
            acc += ang * f;
        }
        acc
    }
}

fn build_phase_only(spec: &KernelSpec, grid: &VelocityGrid, rule: &QuadratureRule) -> SeparableKernel {
    let base = PI / (2.0 * grid.half_length());
    let n = grid.n();
    let mut alpha_axes = Vec::new();
    let mut beta_axes = Vec::new();
    for &r in &rule.r_nodes {
        for s in &rule.sphere.nodes {
            for &sa in &s[..spec.dim] {
                alpha_axes.push(axis_phases(base * r * sa * spec.gain_weight(), n));
                beta_axes.push(axis_phases(-base * r * sa * spec.loss_weight(), n));
            }
        }
    }
    SeparableKernel {
        spec: *spec,
        grid: *grid,
        rule: rule.clone(),
        gamma_radial: Vec::new(),
        alpha_axes,
        beta_axes,
        loss_beta: Vec::new(),
    }
}

/// Apply per-axis phase tables to `f`, writing `(alpha + i beta) f` into `out`.
fn packed_weighting(
    alpha: &[Vec<Complex64>],
    beta: &[Vec<Complex64>],
    f: &[Complex64],
    n: usize,
    out: &mut [Complex64],
) {
    let i = Complex64::new(0.0, 1.0);
    match alpha.len() {
        2 => {
            for r in 0..n {
                let (a0, b0) = (alpha[0][r], beta[0][r] * i);
                let row = r * n;
                for c in 0..n {
                    out[row + c] = (a0 * alpha[1][c] + b0 * beta[1][c]) * f[row + c];
                }
            }
        }
        3 => {
            for p in 0..n {
                for r in 0..n {
                    let a01 = alpha[0][p] * alpha[1][r];
                    let b01 = beta[0][p] * beta[1][r] * i;
                    let row = (p * n + r) * n;
                    for c in 0..n {
                        out[row + c] = (a01 * alpha[2][c] + b01 * beta[2][c]) * f[row + c];
                    }
                }
            }
        }
        _ => unreachable!("dimension is 2 or 3"),
    }
}

const RADIAL_CHUNK: usize = 8;

/// Fast spectral collision operator
/// `Q_k = sum_t gamma_t(k) ((alpha_t f) * (beta_t f))_k` with FFT convolutions.
///
/// For each `(r_a, sigma_b)` the phase-weighted fields `alpha f` and `beta f`
/// are real in physical space (the phases are conjugate-symmetric), so one
/// complex inverse transform of `(alpha + i beta) f` yields both as its real
/// and imaginary parts. Products are summed over `sigma_b` before a single
/// forward transform per radius. Radii are processed in fixed chunks and
/// reduced in order, so the result does not depend on the thread count.
pub fn q_fast(f: &SpectralField, kernel: &SeparableKernel) -> Result<SpectralField> {
    check_same_grid(f.grid(), &kernel.grid)?;
    let grid = kernel.grid;
    let (dim, n, len) = (grid.dim(), grid.n(), grid.len());
    let n_sigma = kernel.rule.n_sigma();
    let inv = 1.0 / len as f64;

    // packing needs a real input field
    let mut fr = f.clone();
    fr.symmetrize();
    let fc = fr.coeffs();

    let n_r = kernel.rule.n_r();
    let chunks: Vec<Vec<Complex64>> = (0..n_r.div_ceil(RADIAL_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut out = vec![Complex64::new(0.0, 0.0); len];
            let mut work = vec![Complex64::new(0.0, 0.0); len];
            let mut acc = vec![Complex64::new(0.0, 0.0); len];
            with_fft(dim, n, |fft| {
                for a in chunk * RADIAL_CHUNK..((chunk + 1) * RADIAL_CHUNK).min(n_r) {
                    acc.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
                    for b in 0..n_sigma {
                        let t = a * n_sigma + b;
                        let axes = kernel.term_axes(t);
                        packed_weighting(&kernel.alpha_axes[axes.clone()], &kernel.beta_axes[axes], fc, n, &mut work);
                        fft.inverse(&mut work);
                        let wb = kernel.rule.sphere.weights[b];
                        for (s, z) in acc.iter_mut().zip(&work) {
                            s.re += wb * z.re * z.im;
                        }
                    }
                    fft.forward(&mut acc);
                    for ((o, s), g) in out.iter_mut().zip(&acc).zip(&kernel.gamma_radial[a]) {
                        *o += s * (g * inv);
                    }
                }
            });
            out
        })
        .collect();

    let mut q = vec![Complex64::new(0.0, 0.0); len];
    for c in &chunks {
        for (x, y) in q.iter_mut().zip(c) {
            *x += y;
        }
    }
    let weighted: Vec<Complex64> = fc.iter().zip(&kernel.loss_beta).map(|(x, b)| x * b).collect();
    let loss = spectral_convolve(fc, &weighted, &grid)?;
    for (x, y) in q.iter_mut().zip(&loss) {
        *x += y;
    }
    SpectralField::new(grid, q)
}

/// Galerkin double sum `Q_k = sum_{l+m=k} (G(l,m) - L(m)) f_l f_m` over in-band
/// `l`, `m` and `k`, with arbitrary kernel-mode and loss functions. No wraparound.
pub fn q_direct_with<G, L>(f: &SpectralField, mut ghat: G, mut gloss: L) -> Result<SpectralField>
where
    G: FnMut(&ModeIndex, &ModeIndex) -> Result<Complex64>,
    L: FnMut(&ModeIndex) -> Result<Complex64>,
{
    let grid = *f.grid();
    let len = grid.len();
    if len > DIRECT_LIMIT {
        return Err(Error::TooLarge { size: len, limit: DIRECT_LIMIT });
    }
    let coeffs = f.coeffs();
    let modes: Vec<ModeIndex> = (0..len).map(|i| grid.mode(i)).collect();
    let diag: Vec<Complex64> = modes.iter().map(&mut gloss).collect::<Result<_>>()?;
    let mut q = vec![Complex64::new(0.0, 0.0); len];
    for (li, l) in modes.iter().enumerate() {
        if coeffs[li] == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (mi, m) in modes.iter().enumerate() {
            if coeffs[mi] == Complex64::new(0.0, 0.0) {
                continue;
            }
            let k = *l + *m;
            if let Some(ki) = grid.flat(&k) {
                let b = ghat(l, m)? - diag[mi];
                q[ki] += b * coeffs[li] * coeffs[mi];
            }
        }
    }
    SpectralField::new(grid, q)
}

/// Galerkin double sum with exact kernel modes from the closed forms, each
/// converged to `tol`.
pub fn q_direct(f: &SpectralField, spec: &KernelSpec, grid: &VelocityGrid, tol: f64) -> Result<SpectralField> {
    check_same_grid(f.grid(), grid)?;
    if spec.dim != grid.dim() {
        return Err(contract("kernel and grid dimensions differ"));
    }
    if grid.len() > DIRECT_LIMIT {
        return Err(Error::TooLarge { size: grid.len(), limit: DIRECT_LIMIT });
    }
    let table = std::cell::RefCell::new(KernelTable::new(spec, grid, tol));
    q_direct_with(
        f,
        |l, m| table.borrow_mut().get(l, m).map(|v| Complex64::new(v, 0.0)),
        |m| table.borrow_mut().loss(m).map(|v| Complex64::new(v, 0.0)),
    )
}

/// Literal cyclic double sum of a separable kernel:
/// `Q_k = sum_{l+m = k mod N} sum_t gamma_t(k) alpha_t(l) beta_t(m) f_l f_m`.
pub fn q_separable_direct(f: &SpectralField, kernel: &SeparableKernel) -> Result<SpectralField> {
    check_same_grid(f.grid(), &kernel.grid)?;
    let grid = kernel.grid;
    let len = grid.len();
    if len > DIRECT_LIMIT {
        return Err(Error::TooLarge { size: len, limit: DIRECT_LIMIT });
    }
    let mut fr = f.clone();
    fr.symmetrize();
    let fc = fr.coeffs();
    let n = grid.n();
    let mut q = vec![Complex64::new(0.0, 0.0); len];
    for t in 0..kernel.num_terms() {
        let (al, be, ga) = (kernel.alpha(t), kernel.beta(t), kernel.gamma(t));
        for li in 0..len {
            let a = al[li] * fc[li];
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            let l = grid.mode(li);
            for mi in 0..len {
                let b = be[mi] * fc[mi];
                let k = (l + grid.mode(mi)).to_flat_wrapped(n);
                q[k] += ga[k] * a * b;
            }
        }
    }
    SpectralField::new(grid, q)
}
