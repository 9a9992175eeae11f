//! Mode-truncated 2D real transforms for the spectral convolution layer,
//! plus their exact adjoints for the backward pass.
//!
//! A field `(ny, nx)` maps to a `(2m, m)` block of low-frequency DFT
//! coefficients: rows `0..m` are `ky = 0..m-1`, rows `m..2m` are
//! `ky = ny-m..ny-1`, columns are `kx = 0..m-1`. The inverse uses the
//! half-spectrum Hermitian extension (irfft semantics: column `kx = 0`
//! contributes once with its imaginary DC part dropped, columns `kx >= 1`
//! contribute twice), scaled by `1/(nx*ny)`. The adjoints are the exact
//! transposes of these real-linear maps; `tests` pin the pairing identity
//! `<F(x), G> = <x, F^T(G)>`.

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::real::Real;

pub struct TransformPlan<R: Real> {
    pub nx: usize,
    pub ny: usize,
    rfft: Arc<dyn RealToComplex<R>>,
    irfft: Arc<dyn ComplexToReal<R>>,
    fft_y_fwd: Arc<dyn Fft<R>>,
    fft_y_inv: Arc<dyn Fft<R>>,
    scratch: RefCell<Scratch<R>>,
}

struct Scratch<R: Real> {
    row_real: Vec<R>,
    row_half: Vec<Complex<R>>,
    col: Vec<Complex<R>>,
    rfft_scratch: Vec<Complex<R>>,
    irfft_scratch: Vec<Complex<R>>,
    fft_scratch: Vec<Complex<R>>,
}

thread_local! {
    static PLAN_CACHE: RefCell<HashMap<(TypeId, usize, usize), Box<dyn Any>>> =
        RefCell::new(HashMap::new());
}

/// Per-thread plan lookup (FFT plans are not shared across threads).
pub fn plan_for<R: Real>(nx: usize, ny: usize) -> Rc<TransformPlan<R>> {
    PLAN_CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        let key = (TypeId::of::<R>(), nx, ny);
        if let Some(b) = cache.get(&key) {
            return b.downcast_ref::<Rc<TransformPlan<R>>>().unwrap().clone();
        }
        let mut rp = RealFftPlanner::<R>::new();
        let mut cp = FftPlanner::<R>::new();
        let rfft = rp.plan_fft_forward(nx);
        let irfft = rp.plan_fft_inverse(nx);
        let fft_y_fwd = cp.plan_fft_forward(ny);
        let fft_y_inv = cp.plan_fft_inverse(ny);
        let scratch = RefCell::new(Scratch {
            row_real: vec![R::zero(); nx],
            row_half: vec![Complex::default(); nx / 2 + 1],
            col: vec![Complex::default(); ny],
            rfft_scratch: vec![Complex::default(); rfft.get_scratch_len()],
            irfft_scratch: vec![Complex::default(); irfft.get_scratch_len()],
            fft_scratch: vec![
                Complex::default();
                fft_y_fwd.get_inplace_scratch_len().max(fft_y_inv.get_inplace_scratch_len())
            ],
        });
        let plan = Rc::new(TransformPlan { nx, ny, rfft, irfft, fft_y_fwd, fft_y_inv, scratch });
        cache.insert(key, Box::new(plan.clone()));
        plan
    })
}

/// DFT row index of block row `p` (`0..2m`).
#[inline]
pub fn block_row_to_ky(p: usize, m: usize, ny: usize) -> usize {
    if p < m {
        p
    } else {
        ny - 2 * m + p
    }
}

impl<R: Real> TransformPlan<R> {
    /// Forward: real field -> retained `(2m, m)` coefficient block
    /// (unnormalized DFT).
    pub fn forward_modes(&self, x: ArrayView2<R>, m: usize, out: &mut ArrayViewMut2<Complex<R>>) {
        let (ny, nx) = (self.ny, self.nx);
        debug_assert_eq!(x.dim(), (ny, nx));
        debug_assert_eq!(out.dim(), (2 * m, m));
        let mut s = self.scratch.borrow_mut();
        let s = &mut *s;
        // rfft each row, keep kx < m
        let mut inter = Array2::<Complex<R>>::zeros((m, ny)); // (kx, y) transposed
        for y in 0..ny {
            for i in 0..nx {
                s.row_real[i] = x[(y, i)];
            }
            self.rfft
                .process_with_scratch(&mut s.row_real, &mut s.row_half, &mut s.rfft_scratch)
                .expect("rfft");
            for q in 0..m {
                inter[(q, y)] = s.row_half[q];
            }
        }
        // complex FFT along y for each retained column, select block rows
        for q in 0..m {
            s.col.copy_from_slice(inter.row(q).as_slice().unwrap());
            self.fft_y_fwd.process_with_scratch(&mut s.col, &mut s.fft_scratch);
            for p in 0..2 * m {
                out[(p, q)] = s.col[block_row_to_ky(p, m, ny)];
            }
        }
    }

    /// Inverse: coefficient block -> real field, `1/(nx*ny)` normalized,
    /// half-spectrum Hermitian extension along x.
    pub fn inverse_modes(&self, z: ArrayView2<Complex<R>>, m: usize, out: &mut ArrayViewMut2<R>) {
        let (ny, nx) = (self.ny, self.nx);
        debug_assert_eq!(out.dim(), (ny, nx));
        let mut s = self.scratch.borrow_mut();
        let s = &mut *s;
        let scale = R::of_f64(1.0 / (nx as f64 * ny as f64));
        // inverse FFT along y per retained column (scatter block rows first)
        let mut inter = Array2::<Complex<R>>::zeros((m, ny));
        for q in 0..m {
            s.col.iter_mut().for_each(|c| *c = Complex::default());
            for p in 0..2 * m {
                s.col[block_row_to_ky(p, m, ny)] = z[(p, q)];
            }
            self.fft_y_inv.process_with_scratch(&mut s.col, &mut s.fft_scratch);
            for y in 0..ny {
                inter[(q, y)] = s.col[y];
            }
        }
        // irfft per row: kx >= m zero, imaginary DC dropped
        for y in 0..ny {
            for q in 0..m {
                s.row_half[q] = inter[(q, y)];
            }
            for q in m..nx / 2 + 1 {
                s.row_half[q] = Complex::default();
            }
            s.row_half[0].im = R::zero();
            self.irfft
                .process_with_scratch(&mut s.row_half, &mut s.row_real, &mut s.irfft_scratch)
                .expect("irfft");
            for i in 0..nx {
                out[(y, i)] = s.row_real[i] * scale;
            }
        }
    }

    /// Adjoint of `forward_modes`: coefficient cotangent -> field cotangent.
    /// Equals the real part of the unnormalized inverse DFT of the scattered
    /// block, realized as irfft with halved `kx >= 1` columns.
    pub fn adjoint_forward_modes(
        &self,
        g: ArrayView2<Complex<R>>,
        m: usize,
        out: &mut ArrayViewMut2<R>,
    ) {
        let (ny, nx) = (self.ny, self.nx);
        let mut s = self.scratch.borrow_mut();
        let s = &mut *s;
        let half = R::of_f64(0.5);
        let mut inter = Array2::<Complex<R>>::zeros((m, ny));
        for q in 0..m {
            s.col.iter_mut().for_each(|c| *c = Complex::default());
            for p in 0..2 * m {
                s.col[block_row_to_ky(p, m, ny)] = g[(p, q)];
            }
            self.fft_y_inv.process_with_scratch(&mut s.col, &mut s.fft_scratch);
            for y in 0..ny {
                inter[(q, y)] = s.col[y];
            }
        }
        for y in 0..ny {
            s.row_half[0] = Complex::new(inter[(0, y)].re, R::zero());
            for q in 1..m {
                s.row_half[q] = inter[(q, y)] * half;
            }
            for q in m..nx / 2 + 1 {
                s.row_half[q] = Complex::default();
            }
            self.irfft
                .process_with_scratch(&mut s.row_half, &mut s.row_real, &mut s.irfft_scratch)
                .expect("irfft");
            for i in 0..nx {
                out[(y, i)] = s.row_real[i];
            }
        }
    }

    /// Adjoint of `inverse_modes`: field cotangent -> coefficient cotangent.
    /// Equals `1/(nx*ny)` times the forward DFT of the field, restricted to
    /// the block, with `kx >= 1` columns doubled and the DC imaginary part
    /// zeroed.
    pub fn adjoint_inverse_modes(
        &self,
        g: ArrayView2<R>,
        m: usize,
        out: &mut ArrayViewMut2<Complex<R>>,
    ) {
        let (ny, nx) = (self.ny, self.nx);
        let mut s = self.scratch.borrow_mut();
        let s = &mut *s;
        let scale = R::of_f64(1.0 / (nx as f64 * ny as f64));
        let two = R::of_f64(2.0);
        let mut inter = Array2::<Complex<R>>::zeros((m, ny));
        for y in 0..ny {
            for i in 0..nx {
                s.row_real[i] = g[(y, i)];
            }
            self.rfft
                .process_with_scratch(&mut s.row_real, &mut s.row_half, &mut s.rfft_scratch)
                .expect("rfft");
            for q in 0..m {
                inter[(q, y)] = s.row_half[q];
            }
        }
        for q in 0..m {
            s.col.copy_from_slice(inter.row(q).as_slice().unwrap());
            self.fft_y_fwd.process_with_scratch(&mut s.col, &mut s.fft_scratch);
            let col_scale = if q == 0 { scale } else { scale * two };
            for p in 0..2 * m {
                let mut v = s.col[block_row_to_ky(p, m, ny)] * col_scale;
                if q == 0 && p == 0 {
                    v.im = R::zero();
                }
                out[(p, q)] = v;
            }
        }
    }
}
