//! Full-grid complex FFT helpers in working precision, used by the physics
//! loss. Plans are cached per thread.

use std::any::{Any, TypeId};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::real::Real;

thread_local! {
    static CACHE: RefCell<HashMap<(TypeId, usize, bool), Box<dyn Any>>> =
        RefCell::new(HashMap::new());
}

fn plan<R: Real>(len: usize, inverse: bool) -> Arc<dyn Fft<R>> {
    CACHE.with(|cache| {
        let mut cache = cache.borrow_mut();
        let key = (TypeId::of::<R>(), len, inverse);
        if let Some(b) = cache.get(&key) {
            return b.downcast_ref::<Arc<dyn Fft<R>>>().unwrap().clone();
        }
        let mut planner = FftPlanner::<R>::new();
        let p = if inverse { planner.plan_fft_inverse(len) } else { planner.plan_fft_forward(len) };
        cache.insert(key, Box::new(p.clone()));
        p
    })
}

fn fft2_inplace<R: Real>(data: &mut Array2<Complex<R>>, inverse: bool) {
    let (ny, nx) = data.dim();
    let row_fft = plan::<R>(nx, inverse);
    for mut row in data.rows_mut() {
        row_fft.process(row.as_slice_mut().expect("row-major"));
    }
    let col_fft = plan::<R>(ny, inverse);
    let mut col = vec![Complex::<R>::default(); ny];
    for x in 0..nx {
        for y in 0..ny {
            col[y] = data[(y, x)];
        }
        col_fft.process(&mut col);
        for y in 0..ny {
            data[(y, x)] = col[y];
        }
    }
}

/// Unnormalized forward DFT of a real field.
pub fn fft2_of_real<R: Real>(field: &ArrayView2<R>) -> Array2<Complex<R>> {
    let mut data = field.mapv(|v| Complex::new(v, R::zero()));
    fft2_inplace(&mut data, false);
    data
}

/// Normalized inverse DFT, real part (consumes the input buffer).
pub fn ifft2_real_part<R: Real>(data: &mut Array2<Complex<R>>) -> Array2<R> {
    let (ny, nx) = data.dim();
    fft2_inplace(data, true);
    let scale = R::of_f64(1.0 / (nx as f64 * ny as f64));
    data.mapv(|z| z.re * scale)
}
