//! Multi-dimensional complex FFT on `N^d` row-major arrays, backed by `rustfft`.
//!
//! Plans are shared; line buffers and scratch are cached per thread, so each
//! worker owns its own workspace.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

struct Workspace {
    lines: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

/// Unnormalized forward (`exp(-2 pi i jk/N)`) and inverse (`exp(+2 pi i jk/N)`)
/// transforms over every axis of an `N^d` array.
pub struct NdFft {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    work: RefCell<Workspace>,
}

impl NdFft {
    pub fn new(dim: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft(n, FftDirection::Forward);
        let inverse = planner.plan_fft(n, FftDirection::Inverse);
        let len = n.pow(dim as u32);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            dim,
            n,
            forward,
            inverse,
            work: RefCell::new(Workspace {
                lines: vec![Complex64::new(0.0, 0.0); len],
                scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, self.forward.as_ref());
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, self.inverse.as_ref());
    }

    fn transform(&self, data: &mut [Complex64], plan: &dyn Fft<f64>) {
        assert_eq!(data.len(), self.len(), "FFT buffer has the wrong length");
        let n = self.n;
        let mut work = self.work.borrow_mut();
        let Workspace { lines, scratch } = &mut *work;
        // last axis is contiguous
        plan.process_with_scratch(data, scratch);
        let len = data.len();
        for axis in 0..self.dim.saturating_sub(1) {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let block = stride * n;
            // gather lines along `axis` into contiguous rows
            let mut row = 0;
            for outer in (0..len).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    let dst = &mut lines[row * n..(row + 1) * n];
                    for (j, slot) in dst.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    row += 1;
                }
            }
            plan.process_with_scratch(&mut lines[..len], scratch);
            let mut row = 0;
            for outer in (0..len).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    let src = &lines[row * n..(row + 1) * n];
                    for (j, v) in src.iter().enumerate() {
                        data[base + j * stride] = *v;
                    }
                    row += 1;
                }
            }
        }
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, usize), Rc<NdFft>>> = RefCell::new(HashMap::new());
}

/// Run `f` with this thread's cached transform for shape `(dim, n)`.
pub fn with_fft<R>(dim: usize, n: usize, f: impl FnOnce(&NdFft) -> R) -> R {
    let plan =
        PLANS.with(|plans| plans.borrow_mut().entry((dim, n)).or_insert_with(|| Rc::new(NdFft::new(dim, n))).clone());
    f(&plan)
}
