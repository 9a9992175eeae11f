//! Forward pass with a recorded tape, and the exact reverse-mode backward.
//!
//! A call processes one chunk of samples laid out as `(channels, B*N)`
//! matrices so the pointwise stages run as single GEMMs. Batch-level
//! parallelism lives in the training loop, which maps fixed-size chunks and
//! reduces gradients in chunk order; everything here is single-threaded and
//! deterministic.

use ndarray::{s, Array1, Array2, Array4, ArrayView2, Axis};
use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::real::Real;

use super::transform::plan_for;
use super::{Activation, FnoConfig, FnoGrads, FnoParams};

pub struct FnoEngine<'a, R: Real> {
    pub params: &'a FnoParams<R>,
    pub config: &'a FnoConfig,
}

/// Intermediates recorded by `forward` for one chunk. Single use.
pub struct ForwardTape<R: Real> {
    consumed: bool,
    batch: usize,
    x_norm: Array2<R>,
    block_inputs: Vec<Array2<R>>,
    block_spectra: Vec<Array4<Complex<R>>>,
    /// Pre-activation and its cached `gelu_tanh`, absent for the last block.
    block_preact: Vec<Option<(Array2<R>, Array2<R>)>>,
    proj_in: Array2<R>,
    proj_pre: Array2<R>,
    proj_tanh: Array2<R>,
    proj_post: Array2<R>,
}

impl<'a, R: Real> FnoEngine<'a, R> {
    pub fn new(params: &'a FnoParams<R>, config: &'a FnoConfig) -> Self {
        FnoEngine { params, config }
    }

    fn check_input(&self, inputs: &[ArrayView2<R>]) -> Result<(usize, usize)> {
        let n = self.config.grid.points();
        for x in inputs {
            if x.dim() != (self.config.in_channels, n) {
                return Err(CoreError::Shape(format!(
                    "input stack {:?} does not match (in_channels, nx*ny) = ({}, {n})",
                    x.dim(),
                    self.config.in_channels
                )));
            }
        }
        Ok((inputs.len(), n))
    }

    fn activate(&self, pre: &Array2<R>) -> (Array2<R>, Array2<R>) {
        match self.config.activation {
            Activation::Gelu => {
                let t = pre.mapv(|v| v.gelu_tanh());
                let half = R::of_f64(0.5);
                let mut post = pre.clone();
                post.zip_mut_with(&t, |v, &tt| *v = half * *v * (R::one() + tt));
                (post, t)
            }
            Activation::Linear => (pre.clone(), Array2::zeros(pre.dim())),
        }
    }

    fn activate_grad(&self, upstream: &Array2<R>, pre: &Array2<R>, tanh: &Array2<R>) -> Array2<R> {
        match self.config.activation {
            Activation::Gelu => {
                let mut g = upstream.clone();
                ndarray::Zip::from(&mut g).and(pre).and(tanh).for_each(|gv, &x, &t| {
                    *gv = *gv * x.gelu_prime_from_tanh(t);
                });
                g
            }
            Activation::Linear => upstream.clone(),
        }
    }

    /// Spectral convolution of one chunk: transform, mix retained modes,
    /// inverse transform. Returns the per-sample retained spectra for the
    /// tape and the spatial output.
    fn spectral_conv(
        &self,
        h: &Array2<R>,
        block: usize,
        batch: usize,
        n: usize,
    ) -> (Array4<Complex<R>>, Array2<R>) {
        let grid = &self.config.grid;
        let (w, m) = (self.config.width, self.config.modes);
        let plan = plan_for::<R>(grid.nx, grid.ny);
        let mut spectra = Array4::<Complex<R>>::zeros((batch, w, 2 * m, m));
        for b in 0..batch {
            for c in 0..w {
                let field = h
                    .row(c)
                    .slice_move(s![b * n..(b + 1) * n])
                    .into_shape_with_order((grid.ny, grid.nx))
                    .expect("contiguous row slice");
                let mut out = spectra.slice_mut(s![b, c, .., ..]);
                plan.forward_modes(field, m, &mut out);
            }
        }

        let weights = &self.params.blocks[block].spec_w;
        let mut mixed = Array4::<Complex<R>>::zeros((batch, w, 2 * m, m));
        let mut in_vec = vec![Complex::<R>::default(); w];
        let mut out_vec = vec![Complex::<R>::default(); w];
        for b in 0..batch {
            for p in 0..2 * m {
                let q_block = &weights[p / m];
                for q in 0..m {
                    for (ci, slot) in in_vec.iter_mut().enumerate() {
                        *slot = spectra[(b, ci, p, q)];
                    }
                    out_vec.iter_mut().for_each(|v| *v = Complex::default());
                    let wsub = q_block.slice(s![p % m, q, .., ..]);
                    let wslice = wsub.as_slice().expect("mode-major weight block");
                    for ci in 0..w {
                        let x = in_vec[ci];
                        let row = &wslice[ci * w..(ci + 1) * w];
                        for co in 0..w {
                            out_vec[co] = out_vec[co] + row[co] * x;
                        }
                    }
                    for (co, &v) in out_vec.iter().enumerate() {
                        mixed[(b, co, p, q)] = v;
                    }
                }
            }
        }

        let mut y = Array2::<R>::zeros(h.dim());
        for b in 0..batch {
            for c in 0..w {
                let block_view = mixed.slice(s![b, c, .., ..]);
                let mut out = y
                    .row_mut(c)
                    .slice_move(s![b * n..(b + 1) * n])
                    .into_shape_with_order((grid.ny, grid.nx))
                    .expect("contiguous row slice");
                plan.inverse_modes(block_view, m, &mut out);
            }
        }
        (spectra, y)
    }

    /// Adjoint of `spectral_conv`: returns (weight gradients per quadrant,
    /// gradient with respect to the block input).
    fn spectral_conv_backward(
        &self,
        d_out: &Array2<R>,
        spectra: &Array4<Complex<R>>,
        block: usize,
        batch: usize,
        n: usize,
    ) -> ([Array4<Complex<R>>; 2], Array2<R>) {
        let grid = &self.config.grid;
        let (w, m) = (self.config.width, self.config.modes);
        let plan = plan_for::<R>(grid.nx, grid.ny);

        let mut g_y = Array4::<Complex<R>>::zeros((batch, w, 2 * m, m));
        for b in 0..batch {
            for c in 0..w {
                let field = d_out
                    .row(c)
                    .slice_move(s![b * n..(b + 1) * n])
                    .into_shape_with_order((grid.ny, grid.nx))
                    .expect("contiguous row slice");
                let mut out = g_y.slice_mut(s![b, c, .., ..]);
                plan.adjoint_inverse_modes(field, m, &mut out);
            }
        }

        let weights = &self.params.blocks[block].spec_w;
        let mut dw = [
            Array4::<Complex<R>>::zeros((m, m, w, w)),
            Array4::<Complex<R>>::zeros((m, m, w, w)),
        ];
        let mut g_x = Array4::<Complex<R>>::zeros((batch, w, 2 * m, m));
        let mut gy_vec = vec![Complex::<R>::default(); w];
        let mut x_vec = vec![Complex::<R>::default(); w];
        for b in 0..batch {
            for p in 0..2 * m {
                let quad = p / m;
                for q in 0..m {
                    for co in 0..w {
                        gy_vec[co] = g_y[(b, co, p, q)];
                    }
                    for ci in 0..w {
                        x_vec[ci] = spectra[(b, ci, p, q)];
                    }
                    // dW[ci, co] += G_y[co] * conj(X[ci]);
                    // G_x[ci] = sum_co conj(W[ci, co]) * G_y[co]
                    let mut dw_sub = dw[quad].slice_mut(s![p % m, q, .., ..]);
                    let dw_slice = dw_sub.as_slice_mut().expect("mode-major block");
                    let wsub = weights[quad].slice(s![p % m, q, .., ..]);
                    let wslice = wsub.as_slice().expect("mode-major block");
                    for ci in 0..w {
                        let xc = x_vec[ci].conj();
                        let wrow = &wslice[ci * w..(ci + 1) * w];
                        let drow = &mut dw_slice[ci * w..(ci + 1) * w];
                        let mut acc = Complex::<R>::default();
                        for co in 0..w {
                            drow[co] = drow[co] + gy_vec[co] * xc;
                            acc = acc + wrow[co].conj() * gy_vec[co];
                        }
                        g_x[(b, ci, p, q)] = acc;
                    }
                }
            }
        }

        let mut dh = Array2::<R>::zeros(d_out.dim());
        for b in 0..batch {
            for c in 0..w {
                let block_view = g_x.slice(s![b, c, .., ..]);
                let mut out = dh
                    .row_mut(c)
                    .slice_move(s![b * n..(b + 1) * n])
                    .into_shape_with_order((grid.ny, grid.nx))
                    .expect("contiguous row slice");
                plan.adjoint_forward_modes(block_view, m, &mut out);
            }
        }
        (dw, dh)
    }

    fn forward_impl(
        &self,
        inputs: &[ArrayView2<R>],
        with_tape: bool,
    ) -> Result<(Array2<R>, Option<ForwardTape<R>>)> {
        let (batch, n) = self.check_input(inputs)?;
        let p = self.params;
        let cfg = self.config;

        // assemble + normalize
        let mut x = Array2::<R>::zeros((cfg.in_channels, batch * n));
        for (b, stack) in inputs.iter().enumerate() {
            x.slice_mut(s![.., b * n..(b + 1) * n]).assign(stack);
        }
        for (c, mut row) in x.rows_mut().into_iter().enumerate() {
            let mean = p.norm_mean[c];
            let inv = R::one() / p.norm_std[c];
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        let x_norm = x;

        let mut h = p.lift_w.dot(&x_norm);
        add_col_bias(&mut h, &p.lift_b);

        let mut block_inputs = Vec::new();
        let mut block_spectra = Vec::new();
        let mut block_preact = Vec::new();
        for k in 0..cfg.n_blocks {
            let (spectra, spec_out) = self.spectral_conv(&h, k, batch, n);
            let mut pre = spec_out;
            if !cfg.spectral_only {
                pre += &p.blocks[k].point_w.dot(&h);
            }
            add_col_bias(&mut pre, &p.blocks[k].point_b);
            if with_tape {
                block_inputs.push(h);
                block_spectra.push(spectra);
            }
            if k + 1 < cfg.n_blocks {
                let (post, tanh) = self.activate(&pre);
                if with_tape {
                    block_preact.push(Some((pre, tanh)));
                }
                h = post;
            } else {
                if with_tape {
                    block_preact.push(None);
                }
                h = pre;
            }
        }

        let proj_in = h;
        let mut pre = p.proj_w1.dot(&proj_in);
        add_col_bias(&mut pre, &p.proj_b1);
        let (post, tanh) = self.activate(&pre);
        let mut out = p.proj_w2.dot(&post);
        add_col_bias(&mut out, &p.proj_b2);

        let preds = out
            .into_shape_with_order((batch, n))
            .map_err(|e| CoreError::Shape(e.to_string()))?;

        let tape = with_tape.then(|| ForwardTape {
            consumed: false,
            batch,
            x_norm,
            block_inputs,
            block_spectra,
            block_preact,
            proj_in,
            proj_pre: pre,
            proj_tanh: tanh,
            proj_post: post,
        });
        Ok((preds, tape))
    }

    /// Forward with a tape for a later `backward`.
    pub fn forward(&self, inputs: &[ArrayView2<R>]) -> Result<(Array2<R>, ForwardTape<R>)> {
        let (preds, tape) = self.forward_impl(inputs, true)?;
        Ok((preds, tape.unwrap()))
    }

    /// Inference without recording.
    pub fn infer(&self, inputs: &[ArrayView2<R>]) -> Result<Array2<R>> {
        Ok(self.forward_impl(inputs, false)?.0)
    }

    /// Exact reverse-mode gradients for every learnable parameter.
    /// `upstream` is `dL/dprediction`, shape `(batch, nx*ny)`.
    pub fn backward(&self, tape: &mut ForwardTape<R>, upstream: &Array2<R>) -> Result<FnoGrads<R>> {
        if tape.consumed {
            return Err(CoreError::TapeConsumed);
        }
        tape.consumed = true;
        let p = self.params;
        let cfg = self.config;
        let n = cfg.grid.points();
        if upstream.dim() != (tape.batch, n) {
            return Err(CoreError::Shape(format!(
                "upstream gradient {:?} does not match (batch, n) = ({}, {n})",
                upstream.dim(),
                tape.batch
            )));
        }
        let mut grads = p.zeros_like();

        let d_out = upstream
            .to_owned()
            .into_shape_with_order((1, tape.batch * n))
            .map_err(|e| CoreError::Shape(e.to_string()))?;

        // projection head
        grads.proj_w2 = d_out.dot(&tape.proj_post.t());
        grads.proj_b2 = d_out.sum_axis(Axis(1));
        let d_post = p.proj_w2.t().dot(&d_out);
        let d_pre = self.activate_grad(&d_post, &tape.proj_pre, &tape.proj_tanh);
        grads.proj_w1 = d_pre.dot(&tape.proj_in.t());
        grads.proj_b1 = d_pre.sum_axis(Axis(1));
        let mut dh = p.proj_w1.t().dot(&d_pre);

        for k in (0..cfg.n_blocks).rev() {
            let ds = match &tape.block_preact[k] {
                Some((pre, tanh)) => self.activate_grad(&dh, pre, tanh),
                None => dh,
            };
            grads.blocks[k].point_b = ds.sum_axis(Axis(1));
            let mut dh_next = if cfg.spectral_only {
                Array2::zeros(ds.dim())
            } else {
                grads.blocks[k].point_w = ds.dot(&tape.block_inputs[k].t());
                p.blocks[k].point_w.t().dot(&ds)
            };
            let (dw, dh_spec) =
                self.spectral_conv_backward(&ds, &tape.block_spectra[k], k, tape.batch, n);
            grads.blocks[k].spec_w = dw;
            dh_next += &dh_spec;
            dh = dh_next;
        }

        grads.lift_w = dh.dot(&tape.x_norm.t());
        grads.lift_b = dh.sum_axis(Axis(1));
        Ok(grads)
    }
}

fn add_col_bias<R: Real>(m: &mut Array2<R>, bias: &Array1<R>) {
    for (mut row, &b) in m.rows_mut().into_iter().zip(bias.iter()) {
        if b != R::zero() {
            row.mapv_inplace(|v| v + b);
        }
    }
}
