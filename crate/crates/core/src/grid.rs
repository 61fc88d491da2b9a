//! Periodic velocity box and Fourier mode bookkeeping.
//!
//! The box is `[-T, T)^d` with `T = (3 + sqrt 2) / 2 * S`, where `S` bounds the
//! support of the initial data. Modes `k` live in the centered band
//! `{-N/2, ..., N/2 - 1}^d` and are stored in FFT-natural order: along each
//! axis, slot `j` holds mode `j` for `j < N/2` and mode `j - N` otherwise.
//! Flat storage is row-major with the last axis contiguous.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// `lambda = 2 / (3 + sqrt 2)`, so that `lambda * T = S`.
pub const LAMBDA: f64 = 2.0 / (3.0 + std::f64::consts::SQRT_2);

/// Ratio `T / S` of the periodic half box to the support radius.
pub const BOX_RATIO: f64 = (3.0 + std::f64::consts::SQRT_2) / 2.0;

/// Uniform grid on the periodic velocity box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    dim: usize,
    n: usize,
    support: f64,
}

impl VelocityGrid {
    pub fn new(dim: usize, n: usize, support: f64) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(contract(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 2 || !n.is_multiple_of(2) {
            return Err(contract(format!("modes per dimension must be even and >= 2, got {n}")));
        }
        if !(support.is_finite() && support > 0.0) {
            return Err(contract(format!("support radius must be positive, got {support}")));
        }
        Ok(Self { dim, n, support })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points (and modes) per dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Support radius `S` of the initial data.
    pub fn support(&self) -> f64 {
        self.support
    }

    /// Half box length `T`.
    pub fn half_length(&self) -> f64 {
        BOX_RATIO * self.support
    }

    /// Expanded support `R = 2S`, the radius of the relative-velocity ball.
    pub fn expanded_support(&self) -> f64 {
        2.0 * self.support
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length() / self.n as f64
    }

    /// Cell volume `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Volume `(2T)^d` of the box.
    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_length()).powi(self.dim as i32)
    }

    /// Total number of nodes `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Wave number of a unit mode, `pi / T`.
    pub fn wave_number(&self) -> f64 {
        std::f64::consts::PI / self.half_length()
    }

    /// Node coordinate along one axis.
    pub fn coordinate(&self, j: usize) -> f64 {
        -self.half_length() + j as f64 * self.spacing()
    }

    /// Node coordinates along one axis.
    pub fn axis(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.coordinate(j)).collect()
    }

    /// Velocity of the node stored at `flat`.
    pub fn node(&self, flat: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        let mut rem = flat;
        for axis in (0..self.dim).rev() {
            v[axis] = self.coordinate(rem % self.n);
            rem /= self.n;
        }
        v
    }

    /// Evaluate `f` at every node, in flat order.
    pub fn sample<F: Fn(&[f64]) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let v = self.node(i);
                f(&v[..self.dim])
            })
            .collect()
    }

    /// Mode stored at flat index `flat`.
    pub fn mode(&self, flat: usize) -> ModeIndex {
        ModeIndex::from_flat(flat, self.n, self.dim)
    }

    /// Flat slot of mode `k`, or `None` when `k` is outside the band.
    pub fn flat(&self, k: &ModeIndex) -> Option<usize> {
        k.to_flat(self.n)
    }

    /// Same grid with a different resolution.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.dim, n, self.support)
    }

    pub fn same_shape(&self, other: &VelocityGrid) -> bool {
        self.dim == other.dim && self.n == other.n && self.support.to_bits() == other.support.to_bits()
    }
}

/// Integer mode vector in the centered band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeIndex {
    k: [i64; 3],
    dim: usize,
}

impl ModeIndex {
    pub fn new(k: &[i64]) -> Self {
        assert!(k.len() == 2 || k.len() == 3, "mode index must have 2 or 3 components");
        let mut arr = [0; 3];
        arr[..k.len()].copy_from_slice(k);
        Self { k: arr, dim: k.len() }
    }

    pub fn zero(dim: usize) -> Self {
        Self { k: [0; 3], dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[i64] {
        &self.k[..self.dim]
    }

    pub fn as_f64(&self) -> [f64; 3] {
        [self.k[0] as f64, self.k[1] as f64, self.k[2] as f64]
    }

    pub fn sup_norm(&self) -> i64 {
        self.components().iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.components().iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt()
    }

    pub fn l1_parity(&self) -> i64 {
        self.components().iter().sum::<i64>().rem_euclid(2)
    }

    /// Whether the mode lies in `{-N/2, ..., N/2 - 1}^d`.
    pub fn in_band(&self, n: usize) -> bool {
        let half = (n / 2) as i64;
        self.components().iter().all(|&c| c >= -half && c < half)
    }

    /// Flat index for an in-band mode.
    pub fn to_flat(&self, n: usize) -> Option<usize> {
        if !self.in_band(n) {
            return None;
        }
        let ni = n as i64;
        Some(self.components().iter().fold(0usize, |acc, &c| acc * n + c.rem_euclid(ni) as usize))
    }

    /// Flat index after reducing each component modulo `N`.
    pub fn to_flat_wrapped(&self, n: usize) -> usize {
        let ni = n as i64;
        self.components().iter().fold(0usize, |acc, &c| acc * n + c.rem_euclid(ni) as usize)
    }

    pub fn from_flat(flat: usize, n: usize, dim: usize) -> Self {
        let mut k = [0i64; 3];
        let mut rem = flat;
        let half = n / 2;
        for axis in (0..dim).rev() {
            let j = rem % n;
            rem /= n;
            k[axis] = if j < half { j as i64 } else { j as i64 - n as i64 };
        }
        Self { k, dim }
    }
}

impl std::ops::Add for ModeIndex {
    type Output = ModeIndex;
    fn add(self, rhs: ModeIndex) -> ModeIndex {
        let mut k = [0; 3];
        for (i, slot) in k.iter_mut().enumerate() {
            *slot = self.k[i] + rhs.k[i];
        }
        ModeIndex { k, dim: self.dim }
    }
}

impl std::ops::Sub for ModeIndex {
    type Output = ModeIndex;
    fn sub(self, rhs: ModeIndex) -> ModeIndex {
        let mut k = [0; 3];
        for (i, slot) in k.iter_mut().enumerate() {
            *slot = self.k[i] - rhs.k[i];
        }
        ModeIndex { k, dim: self.dim }
    }
}

impl std::ops::Neg for ModeIndex {
    type Output = ModeIndex;
    fn neg(self) -> ModeIndex {
        ModeIndex { k: [-self.k[0], -self.k[1], -self.k[2]], dim: self.dim }
    }
}

/// Signed frequency of FFT slot `j` on an `n`-point axis.
pub(crate) fn signed_freq(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_geometry() {
        let g = VelocityGrid::new(2, 64, 3.0).unwrap();
        let t = (3.0 + 2f64.sqrt()) / 2.0 * 3.0;
        assert!((g.half_length() - t).abs() <= t * f64::EPSILON);
        assert!((LAMBDA * g.half_length() - g.support()).abs() < 1e-14);
        assert_eq!(g.coordinate(0), -g.half_length());
        assert!((g.spacing() - 2.0 * t / 64.0).abs() < 1e-15);
        assert_eq!(g.len(), 4096);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(VelocityGrid::new(1, 8, 1.0).is_err());
        assert!(VelocityGrid::new(2, 7, 1.0).is_err());
        assert!(VelocityGrid::new(2, 8, 0.0).is_err());
    }

    #[test]
    fn flat_round_trip_all_entries() {
        for (dim, n) in [(2usize, 8usize), (3, 6), (2, 16)] {
            let len = n.pow(dim as u32);
            for flat in 0..len {
                let k = ModeIndex::from_flat(flat, n, dim);
                assert!(k.in_band(n));
                assert_eq!(k.to_flat(n), Some(flat));
            }
        }
    }

    #[test]
    fn out_of_band_modes() {
        let k = ModeIndex::new(&[4, 0]);
        assert_eq!(k.to_flat(8), None);
        assert_eq!(ModeIndex::new(&[-4, 0]).to_flat(8), Some(4 * 8));
        assert_eq!(k.to_flat_wrapped(8), 4 * 8);
    }
}
