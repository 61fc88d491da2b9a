//! Learned separable collision operator
//! `Q_k = sum_t gamma_t(k) ((alpha_t f) * (beta_t f))_k` with parameters confined
//! to the band `{-N_trun, ..., N_trun - 1}^d`.
//!
//! Parameters are indexed by centered modes and embedded index-preserving into
//! any grid with `N >= 2 N_trun`, so one parameter set serves every resolution.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::fft::with_fft;
use crate::grid::{ModeIndex, VelocityGrid};
use crate::kernel::SeparableKernel;
use crate::spectral::{check_same_grid, SpectralField};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Trainable parameters `alpha`, `beta`, `gamma`, each `M x (2 N_trun)^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecNetParams {
    pub dim: usize,
    pub n_trun: usize,
    pub rank: usize,
    pub alpha: Vec<Complex64>,
    pub beta: Vec<Complex64>,
    pub gamma: Vec<Complex64>,
}

impl SpecNetParams {
    pub fn zeros(dim: usize, n_trun: usize, rank: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(contract(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n_trun == 0 || rank == 0 {
            return Err(contract("N_trun and the rank must be positive"));
        }
        let len = rank * band_len(dim, n_trun);
        Ok(Self { dim, n_trun, rank, alpha: vec![ZERO; len], beta: vec![ZERO; len], gamma: vec![ZERO; len] })
    }

    /// Real and imaginary parts i.i.d. uniform on `[-s, s]`, `s = (2 N_trun)^{-d/2}`.
    pub fn random(dim: usize, n_trun: usize, rank: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(dim, n_trun, rank)?;
        let s = 1.0 / (band_len(dim, n_trun) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for arr in [&mut p.alpha, &mut p.beta, &mut p.gamma] {
            for c in arr.iter_mut() {
                *c = Complex64::new(rng.gen_range(-s..=s), rng.gen_range(-s..=s));
            }
        }
        Ok(p)
    }

    /// Truncate the terms of a separable kernel to the band.
    pub fn from_kernel(kernel: &SeparableKernel, n_trun: usize) -> Result<Self> {
        let grid = kernel.grid();
        if grid.n() < 2 * n_trun {
            return Err(contract("kernel grid is narrower than the band"));
        }
        let rank = kernel.num_terms();
        let mut p = Self::zeros(grid.dim(), n_trun, rank)?;
        let slots = band_slots(p.dim, n_trun, grid);
        let b = p.band_len();
        for t in 0..rank {
            let (a, be, g) = (kernel.alpha(t), kernel.beta(t), kernel.gamma(t));
            for (i, &s) in slots.iter().enumerate() {
                p.alpha[t * b + i] = a[s];
                p.beta[t * b + i] = be[s];
                p.gamma[t * b + i] = g[s];
            }
        }
        Ok(p)
    }

    /// Modes per term, `(2 N_trun)^d`.
    pub fn band_len(&self) -> usize {
        band_len(self.dim, self.n_trun)
    }

    /// `3 M (2 N_trun)^d` complex entries counted as two reals each.
    pub fn real_param_count(&self) -> usize {
        6 * self.rank * self.band_len()
    }

    /// Centered mode of band slot `i`.
    pub fn band_mode(&self, i: usize) -> ModeIndex {
        ModeIndex::from_flat(i, 2 * self.n_trun, self.dim)
    }

    fn check_grid(&self, grid: &VelocityGrid) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(contract("parameter and grid dimensions differ"));
        }
        if grid.n() < 2 * self.n_trun {
            return Err(contract(format!(
                "grid with N = {} cannot hold the band 2 N_trun = {}",
                grid.n(),
                2 * self.n_trun
            )));
        }
        Ok(())
    }

    /// Check internal shape consistency, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let len = self.rank * self.band_len();
        if [&self.alpha, &self.beta, &self.gamma].iter().any(|a| a.len() != len) {
            return Err(Error::Format(format!(
                "parameter arrays must hold {len} entries for rank {} and N_trun {}",
                self.rank, self.n_trun
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.alpha, &self.beta, &self.gamma].iter().all(|a| a.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }
}

fn band_len(dim: usize, n_trun: usize) -> usize {
    (2 * n_trun).pow(dim as u32)
}

/// Grid slot of every band mode.
fn band_slots(dim: usize, n_trun: usize, grid: &VelocityGrid) -> Vec<usize> {
    (0..band_len(dim, n_trun))
        .map(|i| {
            let k = ModeIndex::from_flat(i, 2 * n_trun, dim);
            grid.flat(&k).expect("band fits in the grid")
        })
        .collect()
}

/// Per-parameter gradients, shaped like [`SpecNetParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub alpha: Vec<Complex64>,
    pub beta: Vec<Complex64>,
    pub gamma: Vec<Complex64>,
}

impl Gradients {
    pub fn zeros_like(p: &SpecNetParams) -> Self {
        let len = p.alpha.len();
        Self { alpha: vec![ZERO; len], beta: vec![ZERO; len], gamma: vec![ZERO; len] }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in [(&mut self.alpha, &other.alpha), (&mut self.beta, &other.beta), (&mut self.gamma, &other.gamma)]
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in [&mut self.alpha, &mut self.beta, &mut self.gamma] {
            for x in a.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.alpha, &self.beta, &self.gamma].iter().all(|a| a.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
    }
}

/// Physical-space fields of one term, kept for the backward pass.
struct TermFields {
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    zeta: Vec<Complex64>,
}

fn evaluate(f: &SpectralField, params: &SpecNetParams, keep: bool) -> Result<(Vec<Complex64>, Vec<TermFields>)> {
    let grid = *f.grid();
    params.check_grid(&grid)?;
    let slots = band_slots(params.dim, params.n_trun, &grid);
    let (dim, n, len) = (grid.dim(), grid.n(), grid.len());
    let bl = params.band_len();
    let inv = 1.0 / len as f64;
    let fc = f.coeffs();
    let mut q = vec![ZERO; len];
    let mut kept = Vec::new();
    with_fft(dim, n, |fft| {
        for t in 0..params.rank {
            let mut a = vec![ZERO; len];
            let mut b = vec![ZERO; len];
            for (i, &s) in slots.iter().enumerate() {
                a[s] = params.alpha[t * bl + i] * fc[s];
                b[s] = params.beta[t * bl + i] * fc[s];
            }
            fft.inverse(&mut a);
            fft.inverse(&mut b);
            let mut prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
            fft.forward(&mut prod);
            for (i, &s) in slots.iter().enumerate() {
                q[s] += params.gamma[t * bl + i] * prod[s] * inv;
            }
            if keep {
                prod.iter_mut().for_each(|x| *x *= inv);
                kept.push(TermFields { a, b, zeta: prod });
            }
        }
    });
    Ok((q, kept))
}

/// Learned collision operator on the grid of `f`.
pub fn forward(f: &SpectralField, params: &SpecNetParams) -> Result<SpectralField> {
    let (q, _) = evaluate(f, params, false)?;
    SpectralField::new(*f.grid(), q)
}

/// Relative `L^2` error `||pred - target|| / ||target||`, computed on spectra.
pub fn loss(pred: &SpectralField, target: &SpectralField) -> Result<f64> {
    check_same_grid(pred.grid(), target.grid())?;
    let denom = target.coeff_norm_sqr().sqrt();
    if denom == 0.0 {
        return Err(Error::Degenerate("target has zero norm".into()));
    }
    let num: f64 = pred.coeffs().iter().zip(target.coeffs()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    Ok(num / denom)
}

/// Residual norm `||Q^nn - Q||` (coefficient norm) and the real-view gradient
/// of `||Q^nn - Q|| / denom` with respect to every parameter.
///
/// For a complex parameter `p = x + i y` the returned value is
/// `dL/dx + i dL/dy = 2 dL/d conj(p)`. With `e = (Q^nn - Q) / (||Q^nn - Q|| denom)`
/// and `zeta_t = (alpha_t f) * (beta_t f)`:
///
/// - `gamma_t(k)`: `e_k conj(zeta_t(k))`
/// - `alpha_t(l)`: `conj(f_l) sum_k conj(gamma_t(k)) e_k conj(b_{k-l})`, `b = beta_t f`
/// - `beta_t(m)`: `conj(f_m) sum_k conj(gamma_t(k)) e_k conj(a_{k-m})`, `a = alpha_t f`
///
/// The two correlations are products in physical space.
pub fn residual_gradients(
    f: &SpectralField,
    target: &SpectralField,
    params: &SpecNetParams,
    denom: f64,
) -> Result<(f64, Gradients)> {
    check_same_grid(f.grid(), target.grid())?;
    let grid = *f.grid();
    let (q, terms) = evaluate(f, params, true)?;
    let resid: Vec<Complex64> = q.iter().zip(target.coeffs()).map(|(a, b)| a - b).collect();
    let rnorm = resid.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut grads = Gradients::zeros_like(params);
    if rnorm == 0.0 {
        return Ok((0.0, grads));
    }
    let w = 1.0 / (rnorm * denom);
    let slots = band_slots(params.dim, params.n_trun, &grid);
    let (dim, n, len) = (grid.dim(), grid.n(), grid.len());
    let bl = params.band_len();
    let inv = 1.0 / len as f64;
    let fc = f.coeffs();
    with_fft(dim, n, |fft| {
        for (t, term) in terms.iter().enumerate() {
            let mut h = vec![ZERO; len];
            for (i, &s) in slots.iter().enumerate() {
                let e = resid[s] * w;
                grads.gamma[t * bl + i] = e * term.zeta[s].conj();
                h[s] = params.gamma[t * bl + i].conj() * e;
            }
            fft.inverse(&mut h);
            let mut ca: Vec<Complex64> = h.iter().zip(&term.b).map(|(x, y)| x * y.conj()).collect();
            let mut cb: Vec<Complex64> = h.iter().zip(&term.a).map(|(x, y)| x * y.conj()).collect();
            fft.forward(&mut ca);
            fft.forward(&mut cb);
            for (i, &s) in slots.iter().enumerate() {
                let fbar = fc[s].conj() * inv;
                grads.alpha[t * bl + i] = fbar * ca[s];
                grads.beta[t * bl + i] = fbar * cb[s];
            }
        }
    });
    Ok((rnorm, grads))
}

/// Loss of one sample and the real-view gradient of that loss.
pub fn gradients(f: &SpectralField, target: &SpectralField, params: &SpecNetParams) -> Result<(f64, Gradients)> {
    let denom = target.coeff_norm_sqr().sqrt();
    if denom == 0.0 {
        return Err(Error::Degenerate("target has zero norm".into()));
    }
    let (r, g) = residual_gradients(f, target, params, denom)?;
    Ok((r / denom, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_separable_quadrature, KernelSpec, QuadratureRule};
    use crate::spectral::{analyze, spectral_convolve};

    fn gaussian(grid: &VelocityGrid, c: f64) -> SpectralField {
        let v = grid.sample(|v| (-(v[0] - c).powi(2) - v[1].powi(2)).exp());
        analyze(&v, grid).unwrap()
    }

    #[test]
    fn parameter_counts() {
        for (nt, m, want) in [(4, 2, 768), (8, 2, 3072), (16, 2, 12288), (8, 5, 7680)] {
            assert_eq!(SpecNetParams::zeros(2, nt, m).unwrap().real_param_count(), want);
        }
    }

    #[test]
    fn zero_params_give_zero() {
        let g = VelocityGrid::new(2, 16, 3.0).unwrap();
        let p = SpecNetParams::zeros(2, 4, 2).unwrap();
        let q = forward(&gaussian(&g, 0.3), &p).unwrap();
        assert!(q.coeffs().iter().all(|c| *c == ZERO));
    }

    #[test]
    fn refuses_narrow_grids() {
        let g = VelocityGrid::new(2, 8, 3.0).unwrap();
        let p = SpecNetParams::zeros(2, 8, 1).unwrap();
        assert!(forward(&gaussian(&g, 0.0), &p).is_err());
    }

    #[test]
    fn dc_only_single_term() {
        let g = VelocityGrid::new(2, 8, 3.0).unwrap();
        let f = gaussian(&g, 0.4);
        let mut p = SpecNetParams::zeros(2, 2, 1).unwrap();
        p.alpha[0] = Complex64::new(1.0, 0.0);
        p.beta[0] = Complex64::new(1.0, 0.0);
        p.gamma.iter_mut().for_each(|x| *x = Complex64::new(1.0, 0.0));
        let q = forward(&f, &p).unwrap();
        let f0 = f.coeffs()[0];
        assert!((q.coeffs()[0] - f0 * f0).norm() < 1e-15);
        assert!(q.coeffs()[1..].iter().all(|c| c.norm() < 1e-15));
    }

    #[test]
    fn loss_values() {
        let g = VelocityGrid::new(2, 8, 3.0).unwrap();
        let t = gaussian(&g, 0.2);
        assert_eq!(loss(&t, &t).unwrap(), 0.0);
        assert!((loss(&SpectralField::zeros(g), &t).unwrap() - 1.0).abs() < 1e-15);
        assert!((loss(&t.scaled(1.1), &t).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(loss(&t, &SpectralField::zeros(g)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn matches_truncated_quadrature_kernel() {
        let g = VelocityGrid::new(2, 8, 3.0).unwrap();
        let spec = KernelSpec::with_default_constant(2, 1.0, 0.5).unwrap();
        let rule = QuadratureRule::circle(&g, 4, 4).unwrap();
        let kernel = build_separable_quadrature(&spec, &g, &rule).unwrap();
        let n_trun = 2;
        let p = SpecNetParams::from_kernel(&kernel, n_trun).unwrap();
        let f = gaussian(&g, 0.5);
        let got = forward(&f, &p).unwrap();

        let inband: Vec<bool> = (0..g.len()).map(|i| g.mode(i).in_band(2 * n_trun)).collect();
        let mut want = vec![ZERO; g.len()];
        for t in 0..kernel.num_terms() {
            let mask = |v: Vec<Complex64>| -> Vec<Complex64> {
                v.into_iter().zip(&inband).map(|(x, &b)| if b { x } else { ZERO }).collect()
            };
            let a: Vec<Complex64> = mask(kernel.alpha(t)).iter().zip(f.coeffs()).map(|(x, y)| x * y).collect();
            let b: Vec<Complex64> = mask(kernel.beta(t)).iter().zip(f.coeffs()).map(|(x, y)| x * y).collect();
            let conv = spectral_convolve(&a, &b, &g).unwrap();
            for ((w, c), gm) in want.iter_mut().zip(&conv).zip(mask(kernel.gamma(t))) {
                *w += gm * c;
            }
        }
        let scale = want.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (x, y) in got.coeffs().iter().zip(&want) {
            assert!((x - y).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn gradients_vanish_at_exact_fit() {
        let g = VelocityGrid::new(2, 8, 3.0).unwrap();
        let p = SpecNetParams::random(2, 2, 2, 3).unwrap();
        let f = gaussian(&g, 0.1);
        let target = forward(&f, &p).unwrap();
        let (l, gr) = gradients(&f, &target, &p).unwrap();
        assert_eq!(l, 0.0);
        for a in [&gr.alpha, &gr.beta, &gr.gamma] {
            assert!(a.iter().all(|c| c.norm() <= 1e-12));
        }
    }

    #[test]
    fn dc_gamma_gradient_by_hand() {
        // M = 1, DC-only alpha and beta: Q_0 = gamma_0 f_0^2, Q_k = 0 otherwise.
        // L = |gamma f0^2 - t0| / |t|, dL/dgamma = (gamma f0^2 - t0) conj(f0^2) / (|r| |t|)
        let g = VelocityGrid::new(2, 8, 3.0).unwrap();
        let f = gaussian(&g, 0.0);
        let mut p = SpecNetParams::zeros(2, 2, 1).unwrap();
        p.alpha[0] = Complex64::new(1.0, 0.0);
        p.beta[0] = Complex64::new(1.0, 0.0);
        p.gamma[0] = Complex64::new(0.3, -0.2);
        let mut target = SpectralField::zeros(g);
        target.coeffs_mut()[0] = Complex64::new(0.01, 0.002);
        let (_, gr) = gradients(&f, &target, &p).unwrap();
        let f0sq = f.coeffs()[0] * f.coeffs()[0];
        let r = p.gamma[0] * f0sq - target.coeffs()[0];
        let want = r * f0sq.conj() / (r.norm() * target.coeffs()[0].norm());
        assert!((gr.gamma[0] - want).norm() <= 1e-12 * want.norm());
    }

    fn entry(q: &mut SpecNetParams, which: usize, idx: usize) -> &mut Complex64 {
        match which {
            0 => &mut q.alpha[idx],
            1 => &mut q.beta[idx],
            _ => &mut q.gamma[idx],
        }
    }

    #[test]
    fn finite_difference_agreement() {
        let g = VelocityGrid::new(2, 8, 3.0).unwrap();
        let p = SpecNetParams::random(2, 2, 2, 17).unwrap();
        let f = gaussian(&g, 0.3);
        let mut target = forward(&f, &SpecNetParams::random(2, 2, 2, 18).unwrap()).unwrap();
        target.coeffs_mut()[3] += Complex64::new(1e-3, 0.0);
        let (_, gr) = gradients(&f, &target, &p).unwrap();
        let l = |q: &SpecNetParams| loss(&forward(&f, q).unwrap(), &target).unwrap();
        let h = 1e-6;
        for which in 0..3 {
            for idx in [0usize, 5, 11, 31] {
                for imag in [false, true] {
                    let step = if imag { Complex64::new(0.0, h) } else { Complex64::new(h, 0.0) };
                    let mut plus = p.clone();
                    let mut minus = p.clone();
                    *entry(&mut plus, which, idx) += step;
                    *entry(&mut minus, which, idx) -= step;
                    let fd = (l(&plus) - l(&minus)) / (2.0 * h);
                    let an = match which {
                        0 => gr.alpha[idx],
                        1 => gr.beta[idx],
                        _ => gr.gamma[idx],
                    };
                    let an = if imag { an.im } else { an.re };
                    assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "{which} {idx} {imag}: {fd} vs {an}");
                }
            }
        }
    }
}
