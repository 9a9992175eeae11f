//! The three loss regimes and model-input assembly.
//!
//! Losses are computed per sample and averaged over the batch; gradients are
//! returned as seeds `dL/dprediction` ready for the network backward pass.
//! Reductions accumulate in f64 regardless of the working precision.

use ndarray::{Array2, ArrayView1, ArrayView2};
use num_complex::Complex;

use crate::data::PdeSample;
use crate::error::{CoreError, Result};
use crate::fno::{ChannelLayout, SLOT_K_FIELD, SLOT_SOURCE};
use crate::pde::steady_symbol;
use crate::real::Real;
use crate::spectral::GridSpec;

use super::fft::{fft2_of_real, ifft2_real_part};

/// Assemble the model input stack for one sample under a channel layout.
/// Coefficients broadcast as constant channels; coefficients the sample does
/// not carry are zero.
pub fn assemble_input<R: Real>(
    sample: &PdeSample,
    layout: &ChannelLayout,
    grid: &GridSpec,
) -> Result<Array2<R>> {
    if sample.source.grid != *grid {
        return Err(CoreError::Shape("sample grid does not match model grid".into()));
    }
    let n = grid.points();
    let mut stack = Array2::<R>::zeros((layout.in_channels(), n));
    for (ch, &slot) in layout.slots.iter().enumerate() {
        match slot {
            SLOT_SOURCE => {
                for (dst, src) in stack.row_mut(ch).iter_mut().zip(sample.source.values.iter()) {
                    *dst = R::of_f64(*src);
                }
            }
            SLOT_K_FIELD => {
                let k = sample.coeffs.k_field.as_ref().ok_or_else(|| {
                    CoreError::Shape("layout routes a permeability field the sample lacks".into())
                })?;
                for (dst, src) in stack.row_mut(ch).iter_mut().zip(k.values.iter()) {
                    *dst = R::of_f64(*src);
                }
            }
            coeff_slot => {
                let c = &sample.coeffs;
                let value = match coeff_slot {
                    1 => c.d.map(|d| d[0][0]),
                    2 => c.d.map(|d| d[0][1]),
                    3 => c.d.map(|d| d[1][1]),
                    4 => c.v.map(|v| v[0]),
                    5 => c.v.map(|v| v[1]),
                    6 => c.omega,
                    7 => c.r,
                    other => {
                        return Err(CoreError::Config(format!("unknown channel slot {other}")))
                    }
                }
                .unwrap_or(0.0);
                if value != 0.0 {
                    stack.row_mut(ch).fill(R::of_f64(value));
                }
            }
        }
    }
    Ok(stack)
}

/// Precomputed per-sample pieces of the physics residual operator:
/// the steady symbol and the transformed source.
pub struct PhysicsOp<R: Real> {
    pub symbol: Array2<Complex<R>>,
    pub f_hat: Array2<Complex<R>>,
}

impl<R: Real> PhysicsOp<R> {
    pub fn for_sample(sample: &PdeSample, grid: &GridSpec) -> Result<Self> {
        if !sample.system.is_steady() {
            return Err(CoreError::UnsupportedSystem(format!(
                "physics loss requires a steady system, got {}",
                sample.system.name()
            )));
        }
        let symbol = steady_symbol(sample.system, &sample.coeffs, grid)?
            .mapv(|z| Complex::new(R::of_f64(z.re), R::of_f64(z.im)));
        let f = sample.source.values.mapv(|v| R::of_f64(v));
        let f_hat = fft2_of_real(&f.view());
        Ok(PhysicsOp { symbol, f_hat })
    }
}

/// Per-sample data loss: grid mean of the squared error. Returns the loss and
/// writes the gradient seed scaled by `1/batch_divisor`.
pub fn per_sample_data<R: Real>(
    pred: ArrayView1<R>,
    target: ArrayView1<R>,
    batch_divisor: f64,
    seed_out: &mut [R],
) -> f64 {
    let n = pred.len() as f64;
    let mut acc = 0.0f64;
    let scale = R::of_f64(2.0 / (n * batch_divisor));
    for ((p, t), s) in pred.iter().zip(target.iter()).zip(seed_out.iter_mut()) {
        let d = p.as_f64() - t.as_f64();
        acc += d * d;
        *s = *s + scale * (*p - *t);
    }
    acc / n
}

/// Per-sample physics loss: grid mean of the squared PDE residual of the
/// prediction, evaluated spectrally (Parseval form). The gradient seed is the
/// adjoint (conjugate-symbol) operator applied to the residual.
pub fn per_sample_physics<R: Real>(
    pred: ArrayView1<R>,
    op: &PhysicsOp<R>,
    grid: &GridSpec,
    batch_divisor: f64,
    seed_out: Option<&mut [R]>,
) -> Result<f64> {
    let n = grid.points();
    let field = pred
        .into_shape_with_order((grid.ny, grid.nx))
        .map_err(|e| CoreError::Shape(e.to_string()))?;
    let mut r_hat = fft2_of_real(&field);
    let mut energy = 0.0f64;
    for (r, (&s, &f)) in r_hat.iter_mut().zip(op.symbol.iter().zip(op.f_hat.iter())) {
        *r = s * *r - f;
        energy += r.norm_sqr().as_f64();
    }
    let nf = n as f64;
    let loss = energy / (nf * nf);
    if let Some(seed) = seed_out {
        for (r, &s) in r_hat.iter_mut().zip(op.symbol.iter()) {
            *r = s.conj() * *r;
        }
        let grad = ifft2_real_part(&mut r_hat);
        let scale = R::of_f64(2.0 / (nf * batch_divisor));
        for (dst, g) in seed.iter_mut().zip(grad.iter()) {
            *dst = *dst + scale * *g;
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Data,
    Physics,
    Hybrid,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Data => "data",
            LossMode::Physics => "physics",
            LossMode::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "data" => LossMode::Data,
            "physics" => LossMode::Physics,
            "hybrid" => LossMode::Hybrid,
            _ => return Err(CoreError::Config(format!("unknown loss mode '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    /// Hybrid weight on the data term.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { mode: LossMode::Data, alpha: 0.5 }
    }
}

/// Everything the loss needs about one sample beyond the prediction.
pub struct LossSample<'a, R: Real> {
    pub target: Option<ArrayView1<'a, R>>,
    pub physics: Option<&'a PhysicsOp<R>>,
}

/// Batch loss of one chunk under a loss config. `batch_divisor` is the full
/// batch size (chunks sum to the batch mean). Per-sample masking follows the
/// hybrid rule: a missing solution switches that sample to the pure physics
/// term; `alpha` = 1 with a solution present follows the pure data path
/// bit for bit.
pub fn chunk_loss<R: Real>(
    preds: &Array2<R>,
    samples: &[LossSample<R>],
    cfg: &LossConfig,
    grid: &GridSpec,
    batch_divisor: f64,
    with_seed: bool,
) -> Result<(f64, Option<Array2<R>>)> {
    if preds.nrows() != samples.len() {
        return Err(CoreError::Shape("prediction/sample count mismatch".into()));
    }
    let mut seed = with_seed.then(|| Array2::<R>::zeros(preds.dim()));
    let mut total = 0.0f64;
    for (b, ls) in samples.iter().enumerate() {
        let pred = preds.row(b);
        let mut row_seed = seed.as_mut().map(|s| s.row_mut(b));
        let sample_loss = match cfg.mode {
            LossMode::Data => {
                let target = ls.target.ok_or_else(|| {
                    CoreError::Precondition("data loss requires a solution for every sample".into())
                })?;
                match &mut row_seed {
                    Some(s) => {
                        per_sample_data(pred, target, batch_divisor, s.as_slice_mut().unwrap())
                    }
                    None => {
                        let mut sink = vec![R::zero(); pred.len()];
                        per_sample_data(pred, target, batch_divisor, &mut sink)
                    }
                }
            }
            LossMode::Physics => {
                let op = ls.physics.ok_or_else(|| {
                    CoreError::UnsupportedSystem("physics loss requires a steady sample".into())
                })?;
                per_sample_physics(
                    pred,
                    op,
                    grid,
                    batch_divisor,
                    row_seed.as_mut().map(|s| s.as_slice_mut().unwrap()),
                )?
            }
            LossMode::Hybrid => {
                match (ls.target, ls.physics) {
                    // no solution: physics term alone
                    (None, Some(op)) => per_sample_physics(
                        pred,
                        op,
                        grid,
                        batch_divisor,
                        row_seed.as_mut().map(|s| s.as_slice_mut().unwrap()),
                    )?,
                    (Some(_), Some(op)) if cfg.alpha == 0.0 => per_sample_physics(
                        pred,
                        op,
                        grid,
                        batch_divisor,
                        row_seed.as_mut().map(|s| s.as_slice_mut().unwrap()),
                    )?,
                    (Some(target), physics) => {
                        if cfg.alpha == 1.0 {
                            // bit-identical to the data path
                            match &mut row_seed {
                                Some(s) => per_sample_data(
                                    pred,
                                    target,
                                    batch_divisor,
                                    s.as_slice_mut().unwrap(),
                                ),
                                None => {
                                    let mut sink = vec![R::zero(); pred.len()];
                                    per_sample_data(pred, target, batch_divisor, &mut sink)
                                }
                            }
                        } else {
                            let op = physics.ok_or_else(|| {
                                CoreError::UnsupportedSystem(
                                    "hybrid loss requires steady samples".into(),
                                )
                            })?;
                            let d = match &mut row_seed {
                                Some(s) => per_sample_data(
                                    pred,
                                    target,
                                    batch_divisor / cfg.alpha,
                                    s.as_slice_mut().unwrap(),
                                ),
                                None => {
                                    let mut sink = vec![R::zero(); pred.len()];
                                    per_sample_data(pred, target, batch_divisor / cfg.alpha, &mut sink)
                                }
                            };
                            let p = per_sample_physics(
                                pred,
                                op,
                                grid,
                                batch_divisor / (1.0 - cfg.alpha),
                                row_seed.as_mut().map(|s| s.as_slice_mut().unwrap()),
                            )?;
                            cfg.alpha * d + (1.0 - cfg.alpha) * p
                        }
                    }
                    (None, None) => {
                        return Err(CoreError::Precondition(
                            "hybrid loss sample carries neither a solution nor a residual operator"
                                .into(),
                        ))
                    }
                }
            }
        };
        total += sample_loss;
    }
    Ok((total / batch_divisor, seed))
}
