//! Truncated Fourier series on the periodic velocity box.
//!
//! `f(v) = sum_k c_k exp(i pi/T k.v)` with `c_k = (2T)^-d \int f exp(-i pi/T k.v) dv`,
//! so the DC coefficient of a constant field is the constant itself. At the
//! nodes `v_j = -T + j h` this is a DFT up to the sign `(-1)^{k_1+..+k_d}`.

use num_complex::Complex64;

use crate::error::{contract, Error, Result};
use crate::fft::with_fft;
use crate::grid::{ModeIndex, VelocityGrid};

/// Fourier coefficients of a distribution on a [`VelocityGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: VelocityGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: VelocityGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(contract(format!("expected {} coefficients, got {}", grid.len(), coeffs.len())));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: VelocityGrid) -> Self {
        Self { grid, coeffs: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn get(&self, k: &ModeIndex) -> Complex64 {
        self.grid.flat(k).map(|i| self.coeffs[i]).unwrap_or_else(|| Complex64::new(0.0, 0.0))
    }

    /// Mass `\int f dv = (2T)^d c_0`.
    pub fn mass(&self) -> f64 {
        self.coeffs[0].re * self.grid.box_volume()
    }

    /// Sum of squared coefficient moduli.
    pub fn coeff_norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `L^2(D_T)` norm via Parseval.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.box_volume() * self.coeff_norm_sqr()).sqrt()
    }

    /// `sum_k |c_k|`.
    pub fn l1_coeffs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &SpectralField) -> Result<()> {
        check_same_grid(&self.grid, &other.grid)?;
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * s;
        }
        Ok(())
    }

    /// `||self - other||_{L^2}`.
    pub fn l2_distance(&self, other: &SpectralField) -> Result<f64> {
        check_same_grid(&self.grid, &other.grid)?;
        let s: f64 = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a - b).norm_sqr()).sum();
        Ok((self.grid.box_volume() * s).sqrt())
    }

    /// Relative `L^2` distance `||self - reference|| / ||reference||`.
    pub fn relative_error(&self, reference: &SpectralField) -> Result<f64> {
        let denom = reference.l2_norm();
        if denom == 0.0 {
            return Err(Error::Degenerate("reference field has zero norm".into()));
        }
        Ok(self.l2_distance(reference)? / denom)
    }

    /// Project onto coefficients of a real field: `c_k <- (c_k + conj(c_{-k})) / 2`,
    /// with `-k` taken modulo `N` so the Nyquist slots pair with themselves.
    pub fn symmetrize(&mut self) {
        let n = self.grid.n();
        let mirror: Vec<Complex64> =
            (0..self.coeffs.len()).map(|i| self.coeffs[mirror_slot(i, n, self.grid.dim())].conj()).collect();
        for (c, m) in self.coeffs.iter_mut().zip(mirror) {
            *c = (*c + m) * 0.5;
        }
    }

    /// Largest `|c_k - conj(c_{-k})|` over all slots.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.grid.n();
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[i] - self.coeffs[mirror_slot(i, n, self.grid.dim())].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Restrict or zero-pad to another resolution on the same box, keeping
    /// each mode's meaning.
    pub fn resample(&self, n: usize) -> Result<SpectralField> {
        let target = self.grid.with_n(n)?;
        let mut out = SpectralField::zeros(target);
        for (i, c) in self.coeffs.iter().enumerate() {
            let k = self.grid.mode(i);
            if let Some(j) = target.flat(&k) {
                out.coeffs[j] = *c;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

pub(crate) fn check_same_grid(a: &VelocityGrid, b: &VelocityGrid) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("{a:?} vs {b:?}")))
    }
}

fn mirror_slot(flat: usize, n: usize, dim: usize) -> usize {
    let mut rem = flat;
    let mut out = 0;
    let mut mult = 1;
    for _ in 0..dim {
        let j = rem % n;
        rem /= n;
        out += ((n - j) % n) * mult;
        mult *= n;
    }
    out
}

/// `(-1)^(j_1 + ... + j_d)` for each flat slot.
fn node_sign(flat: usize, n: usize, dim: usize) -> f64 {
    let mut rem = flat;
    let mut parity = 0;
    for _ in 0..dim {
        parity += rem % n;
        rem /= n;
    }
    if parity % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Fourier coefficients of real node values.
pub fn analyze(values: &[f64], grid: &VelocityGrid) -> Result<SpectralField> {
    if values.len() != grid.len() {
        return Err(contract(format!("expected {} node values, got {}", grid.len(), values.len())));
    }
    let buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    analyze_complex(buf, grid)
}

/// Fourier coefficients of complex node values.
pub fn analyze_complex(mut buf: Vec<Complex64>, grid: &VelocityGrid) -> Result<SpectralField> {
    if buf.len() != grid.len() {
        return Err(contract("node array has the wrong length"));
    }
    let (dim, n) = (grid.dim(), grid.n());
    with_fft(dim, n, |p| p.forward(&mut buf));
    let inv = 1.0 / grid.len() as f64;
    for (i, c) in buf.iter_mut().enumerate() {
        *c *= node_sign(i, n, dim) * inv;
    }
    SpectralField::new(*grid, buf)
}

/// Complex node values of a coefficient array.
pub fn synthesize_complex(field: &SpectralField) -> Vec<Complex64> {
    let grid = field.grid();
    let (dim, n) = (grid.dim(), grid.n());
    let mut buf: Vec<Complex64> = field.coeffs().iter().enumerate().map(|(i, c)| c * node_sign(i, n, dim)).collect();
    with_fft(dim, n, |p| p.inverse(&mut buf));
    buf
}

/// Real node values. Fails if the imaginary residue exceeds `1e-10` of the
/// largest magnitude, i.e. if the coefficients are not those of a real field.
pub fn synthesize(field: &SpectralField) -> Result<Vec<f64>> {
    let buf = synthesize_complex(field);
    let max_mag = buf.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let max_im = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if max_im > 1e-10 * max_mag {
        return Err(contract(format!("imaginary residue {max_im:e} exceeds 1e-10 of peak {max_mag:e}")));
    }
    Ok(buf.into_iter().map(|c| c.re).collect())
}

/// Circular convolution `(a*b)_k = sum_{l+m = k mod N} a_l b_m` via
/// inverse transform, pointwise product and forward transform.
pub fn spectral_convolve(a: &[Complex64], b: &[Complex64], grid: &VelocityGrid) -> Result<Vec<Complex64>> {
    let len = grid.len();
    if a.len() != len || b.len() != len {
        return Err(contract(format!("convolution operands must have {len} entries, got {} and {}", a.len(), b.len())));
    }
    let (dim, n) = (grid.dim(), grid.n());
    let mut pa = a.to_vec();
    let mut pb = b.to_vec();
    with_fft(dim, n, |p| {
        p.inverse(&mut pa);
        p.inverse(&mut pb);
        for (x, y) in pa.iter_mut().zip(&pb) {
            *x *= y;
        }
        p.forward(&mut pa);
    });
    let inv = 1.0 / len as f64;
    for x in &mut pa {
        *x *= inv;
    }
    Ok(pa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid2(n: usize) -> VelocityGrid {
        VelocityGrid::new(2, n, 3.0).unwrap()
    }

    #[test]
    fn constant_has_only_dc() {
        let g = grid2(16);
        let f = analyze(&vec![2.5; g.len()], &g).unwrap();
        assert!((f.coeffs()[0] - Complex64::new(2.5, 0.0)).norm() < 1e-14);
        assert!(f.coeffs()[1..].iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn cosine_mode_pair() {
        let g = grid2(16);
        let t = g.half_length();
        let f = analyze(&g.sample(|v| (PI * v[0] / t).cos()), &g).unwrap();
        for (i, c) in f.coeffs().iter().enumerate() {
            let k = g.mode(i);
            let want = if k == ModeIndex::new(&[1, 0]) || k == ModeIndex::new(&[-1, 0]) { 0.5 } else { 0.0 };
            assert!((c - Complex64::new(want, 0.0)).norm() < 1e-13, "{k:?} {c}");
        }
    }

    #[test]
    fn gaussian_parseval_against_trapezoid() {
        let g = grid2(64);
        let vals = g.sample(|v| (-(v[0] * v[0] + v[1] * v[1]) / 2.0).exp());
        let f = analyze(&vals, &g).unwrap();
        // trapezoid on the periodic box is the plain node sum
        let direct: f64 = vals.iter().map(|x| x * x).sum::<f64>() * g.cell_volume();
        let spectral = g.box_volume() * f.coeff_norm_sqr();
        assert!((direct - spectral).abs() / direct < 1e-10);
    }

    #[test]
    fn single_mode_synthesis_matches_direct_exponential() {
        let g = grid2(16);
        let t = g.half_length();
        let mut f = SpectralField::zeros(g);
        let k = ModeIndex::new(&[2, 1]);
        f.coeffs_mut()[g.flat(&k).unwrap()] = Complex64::new(1.0, 0.0);
        f.coeffs_mut()[g.flat(&-k).unwrap()] = Complex64::new(1.0, 0.0);
        let vals = synthesize(&f).unwrap();
        for (i, x) in vals.iter().enumerate() {
            let v = g.node(i);
            let direct = 2.0 * (PI / t * (2.0 * v[0] + v[1])).cos();
            assert!((x - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_and_round_trip() {
        let g = grid2(8);
        let z = synthesize(&SpectralField::zeros(g)).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        let vals: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let back = synthesize(&analyze(&vals, &g).unwrap()).unwrap();
        let peak = vals.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for (a, b) in vals.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-12 * peak);
        }
    }

    #[test]
    fn rejects_size_mismatch() {
        let g = grid2(8);
        assert!(analyze(&[1.0; 10], &g).is_err());
        let a = vec![Complex64::new(0.0, 0.0); 64];
        assert!(spectral_convolve(&a, &a[..63], &g).is_err());
    }

    #[test]
    fn complex_residue_is_rejected() {
        let g = grid2(8);
        let mut f = SpectralField::zeros(g);
        f.coeffs_mut()[1] = Complex64::new(1.0, 0.0);
        assert!(synthesize(&f).is_err());
        f.symmetrize();
        assert!(synthesize(&f).is_ok());
        assert!(f.symmetry_defect() < 1e-15);
    }

    #[test]
    fn dc_delta_is_convolution_identity() {
        let g = grid2(8);
        let mut a = vec![Complex64::new(0.0, 0.0); g.len()];
        a[0] = Complex64::new(1.0, 0.0);
        let b: Vec<Complex64> = (0..g.len()).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect();
        let c = spectral_convolve(&a, &b, &g).unwrap();
        for (x, y) in c.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }
}
