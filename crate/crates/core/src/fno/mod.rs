//! Desk-scale Fourier Neural Operator with its own reverse-mode
//! differentiation over a recorded tape.

pub mod checkpoint;
pub mod engine;
pub mod transform;

use ndarray::{Array1, Array2, Array4};
use num_complex::Complex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::real::Real;
use crate::spectral::GridSpec;

/// Semantic input slots. Slots 0..=7 are the fixed pre-training layout;
/// slot 8 carries a permeability field for Darcy tasks.
pub const SLOT_SOURCE: u8 = 0;
pub const SLOT_D11: u8 = 1;
pub const SLOT_D12: u8 = 2;
pub const SLOT_D22: u8 = 3;
pub const SLOT_VX: u8 = 4;
pub const SLOT_VY: u8 = 5;
pub const SLOT_OMEGA: u8 = 6;
pub const SLOT_R: u8 = 7;
pub const SLOT_K_FIELD: u8 = 8;

/// Maps each model input channel to a semantic slot. The pre-trained model
/// uses the identity layout over all eight slots; scratch models list only
/// the slots their task needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub slots: Vec<u8>,
}

impl ChannelLayout {
    pub fn pretraining() -> Self {
        ChannelLayout { slots: (0..8).collect() }
    }

    /// Minimal layout for a single downstream system.
    pub fn minimal_for(system: crate::pde::SystemTag) -> Self {
        use crate::pde::SystemTag::*;
        let slots = match system {
            Poisson => vec![SLOT_SOURCE, SLOT_D11, SLOT_D12, SLOT_D22],
            AdvectionDiffusion => vec![SLOT_SOURCE, SLOT_D11, SLOT_D12, SLOT_D22, SLOT_VX, SLOT_VY],
            Helmholtz => vec![SLOT_SOURCE, SLOT_OMEGA],
            ReactionDiffusion => vec![SLOT_SOURCE, SLOT_D11, SLOT_D12, SLOT_D22, SLOT_R],
            ReactionAdvectionDiffusion => {
                vec![SLOT_SOURCE, SLOT_D11, SLOT_D12, SLOT_D22, SLOT_VX, SLOT_VY, SLOT_R]
            }
            Darcy => vec![SLOT_SOURCE, SLOT_K_FIELD],
        };
        ChannelLayout { slots }
    }

    /// Pre-training layout with the permeability field routed into
    /// coefficient channel `channel` (1..=7).
    pub fn pretraining_with_k_at(channel: usize) -> Result<Self> {
        if !(1..=7).contains(&channel) {
            return Err(CoreError::Config(format!("K channel must be in 1..=7, got {channel}")));
        }
        let mut layout = Self::pretraining();
        layout.slots[channel] = SLOT_K_FIELD;
        Ok(layout)
    }

    pub fn in_channels(&self) -> usize {
        self.slots.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    /// Ablation mode: identity activations throughout.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FnoConfig {
    pub in_channels: usize,
    /// Embedding dimension (64 at paper scale, 16 at desk scale).
    pub width: usize,
    /// Retained Fourier modes per axis (32 at paper scale, 8 at desk scale).
    pub modes: usize,
    pub n_blocks: usize,
    pub grid: GridSpec,
    #[serde(default)]
    pub activation: Activation,
    /// Ablation: drop the pointwise bypass path inside each block.
    #[serde(default)]
    pub spectral_only: bool,
}

impl FnoConfig {
    pub fn desk(grid: GridSpec) -> Self {
        FnoConfig {
            in_channels: 8,
            width: 16,
            modes: 8,
            n_blocks: 4,
            grid,
            activation: Activation::Gelu,
            spectral_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || self.modes > self.grid.nx / 2 || self.modes > self.grid.ny / 2 {
            return Err(CoreError::Config(format!(
                "modes {} must be in 1..=min(nx, ny)/2 for grid {}x{}",
                self.modes, self.grid.nx, self.grid.ny
            )));
        }
        if self.width < 4 {
            return Err(CoreError::Config("width must be at least 4".into()));
        }
        if self.in_channels == 0 || self.n_blocks == 0 {
            return Err(CoreError::Config("in_channels and n_blocks must be positive".into()));
        }
        Ok(())
    }

    /// Closed-form learnable parameter count (real scalars; complex weights
    /// count twice).
    pub fn n_params(&self) -> usize {
        let (c, w, m, b) = (self.in_channels, self.width, self.modes, self.n_blocks);
        let lift = c * w + w;
        let per_block = 2 * w * w * m * m * 2 + w * w + w;
        let proj = (w * w + w) + (w + 1);
        lift + b * per_block + proj
    }
}

/// One spectral block: two retained-quadrant weight tensors stored
/// mode-major `(m, m, w_in, w_out)` (quadrant 0 holds `ky = 0..m`, quadrant 1
/// `ky = ny-m..ny`), plus the pointwise bypass.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<R: Real> {
    pub spec_w: [Array4<Complex<R>>; 2],
    pub point_w: Array2<R>,
    pub point_b: Array1<R>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnoParams<R: Real> {
    pub lift_w: Array2<R>,
    pub lift_b: Array1<R>,
    pub blocks: Vec<BlockParams<R>>,
    pub proj_w1: Array2<R>,
    pub proj_b1: Array1<R>,
    pub proj_w2: Array2<R>,
    pub proj_b2: Array1<R>,
    /// Per-input-channel standardization statistics (not learnable).
    pub norm_mean: Array1<R>,
    pub norm_std: Array1<R>,
}

/// Gradients mirror the learnable tensors.
pub type FnoGrads<R> = FnoParams<R>;

/// Xavier-uniform real weights, Gaussian spectral weights with per-component
/// standard deviation `1/width`, zero biases, identity normalization. Draw
/// order is fixed to the declaration order of the tensors.
pub fn init_params<R: Real>(config: &FnoConfig, rng: &mut ChaCha8Rng) -> Result<FnoParams<R>> {
    config.validate()?;
    let (c, w, m) = (config.in_channels, config.width, config.modes);
    fn xavier<R: Real>(
        rng: &mut ChaCha8Rng,
        fan_in: usize,
        fan_out: usize,
        shape: (usize, usize),
    ) -> Array2<R> {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Array2::from_shape_fn(shape, |_| R::of_f64(rng.gen_range(-bound..bound)))
    }
    fn spectral<R: Real>(rng: &mut ChaCha8Rng, w: usize, m: usize) -> Array4<Complex<R>> {
        let std = 1.0 / w as f64;
        Array4::from_shape_fn((m, m, w, w), |_| {
            let re: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * std;
            let im: f64 = rng.sample::<f64, _>(rand_distr::StandardNormal) * std;
            Complex::new(R::of_f64(re), R::of_f64(im))
        })
    }
    let lift_w = xavier(rng, c, w, (w, c));
    let lift_b = Array1::zeros(w);
    let mut blocks = Vec::with_capacity(config.n_blocks);
    for _ in 0..config.n_blocks {
        let q0 = spectral(rng, w, m);
        let q1 = spectral(rng, w, m);
        let point_w = xavier(rng, w, w, (w, w));
        blocks.push(BlockParams { spec_w: [q0, q1], point_w, point_b: Array1::zeros(w) });
    }
    let proj_w1 = xavier(rng, w, w, (w, w));
    let proj_w2 = xavier(rng, w, 1, (1, w));
    Ok(FnoParams {
        lift_w,
        lift_b,
        blocks,
        proj_w1,
        proj_b1: Array1::zeros(w),
        proj_w2,
        proj_b2: Array1::zeros(1),
        norm_mean: Array1::zeros(c),
        norm_std: Array1::from_elem(c, R::one()),
    })
}

impl<R: Real> FnoParams<R> {
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.visit_mut(&mut |v| *v = R::zero());
        // normalization stats are not gradients; keep them out of updates
        out.norm_mean.fill(R::zero());
        out.norm_std.fill(R::zero());
        out
    }

    /// Visit every learnable real component in declaration order (complex
    /// entries contribute re then im). Normalization stats are excluded.
    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut R)) {
        for v in self.lift_w.iter_mut() {
            f(v);
        }
        for v in self.lift_b.iter_mut() {
            f(v);
        }
        for b in &mut self.blocks {
            for q in &mut b.spec_w {
                for c in q.iter_mut() {
                    f(&mut c.re);
                    f(&mut c.im);
                }
            }
            for v in b.point_w.iter_mut() {
                f(v);
            }
            for v in b.point_b.iter_mut() {
                f(v);
            }
        }
        for v in self.proj_w1.iter_mut() {
            f(v);
        }
        for v in self.proj_b1.iter_mut() {
            f(v);
        }
        for v in self.proj_w2.iter_mut() {
            f(v);
        }
        for v in self.proj_b2.iter_mut() {
            f(v);
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(R)) {
        let mut clone = self.clone();
        clone.visit_mut(&mut |v| f(*v));
    }

    pub fn flatten(&self) -> Vec<R> {
        let mut out = Vec::new();
        self.visit(&mut |v| out.push(v));
        out
    }

    pub fn unflatten_from(&mut self, flat: &[R]) -> Result<()> {
        let mut it = flat.iter();
        let mut short = false;
        self.visit_mut(&mut |v| match it.next() {
            Some(x) => *v = *x,
            None => short = true,
        });
        if short || it.next().is_some() {
            return Err(CoreError::Shape("flattened parameter length mismatch".into()));
        }
        Ok(())
    }

    /// Elementwise accumulate `other * scale` into the learnable tensors.
    pub fn axpy(&mut self, scale: R, other: &Self) {
        let o = other.flatten();
        let mut i = 0;
        self.visit_mut(&mut |v| {
            *v = *v + scale * o[i];
            i += 1;
        });
    }

    pub fn cast<T: Real>(&self) -> FnoParams<T> {
        let c = |a: &Array2<R>| a.mapv(|v| T::of_f64(v.as_f64()));
        let c1 = |a: &Array1<R>| a.mapv(|v| T::of_f64(v.as_f64()));
        FnoParams {
            lift_w: c(&self.lift_w),
            lift_b: c1(&self.lift_b),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    spec_w: [
                        b.spec_w[0].mapv(|z| Complex::new(T::of_f64(z.re.as_f64()), T::of_f64(z.im.as_f64()))),
                        b.spec_w[1].mapv(|z| Complex::new(T::of_f64(z.re.as_f64()), T::of_f64(z.im.as_f64()))),
                    ],
                    point_w: c(&b.point_w),
                    point_b: c1(&b.point_b),
                })
                .collect(),
            proj_w1: c(&self.proj_w1),
            proj_b1: c1(&self.proj_b1),
            proj_w2: c(&self.proj_w2),
            proj_b2: c1(&self.proj_b2),
            norm_mean: c1(&self.norm_mean),
            norm_std: c1(&self.norm_std),
        }
    }
}

/// Channel-wise standardization statistics over every grid point of every
/// training input, stored into the parameter set and applied inside forward.
/// Standard deviations are floored at 1e-8.
pub fn fit_normalization<'a, R: Real + 'a>(
    params: &mut FnoParams<R>,
    inputs: impl Iterator<Item = ndarray::ArrayView2<'a, R>>,
) -> Result<()> {
    let c = params.norm_mean.len();
    let mut count = 0u64;
    let mut sum = vec![0.0f64; c];
    let mut sumsq = vec![0.0f64; c];
    for stack in inputs {
        if stack.nrows() != c {
            return Err(CoreError::Shape(format!(
                "input has {} channels, normalization expects {c}",
                stack.nrows()
            )));
        }
        count += stack.ncols() as u64;
        for (ch, row) in stack.rows().into_iter().enumerate() {
            for v in row {
                let x = v.as_f64();
                sum[ch] += x;
                sumsq[ch] += x * x;
            }
        }
    }
    if count == 0 {
        return Err(CoreError::Precondition("normalization requires a nonempty training set".into()));
    }
    for ch in 0..c {
        let mean = sum[ch] / count as f64;
        let var = (sumsq[ch] / count as f64 - mean * mean).max(0.0);
        params.norm_mean[ch] = R::of_f64(mean);
        params.norm_std[ch] = R::of_f64(var.sqrt().max(1e-8));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_for;

    fn cfg() -> FnoConfig {
        FnoConfig {
            in_channels: 8,
            width: 16,
            modes: 8,
            n_blocks: 4,
            grid: GridSpec::square(32).unwrap(),
            activation: Activation::Gelu,
            spectral_only: false,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params::<f32>(&cfg(), &mut rng_for(3)).unwrap();
        let b = init_params::<f32>(&cfg(), &mut rng_for(3)).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        // oracle: the written-out arithmetic for width 16, modes 8, c 8, 4 blocks
        let by_hand = 8 * 16 + 16
            + 4 * (2 * 16 * 16 * 8 * 8 * 2 + 16 * 16 + 16)
            + (16 * 16 + 16 + 16 * 1 + 1);
        assert_eq!(cfg().n_params(), by_hand);
        let p = init_params::<f32>(&cfg(), &mut rng_for(1)).unwrap();
        assert_eq!(p.flatten().len(), by_hand);
    }

    #[test]
    fn spectral_init_statistics() {
        let p = init_params::<f64>(&cfg(), &mut rng_for(7)).unwrap();
        let mut vals = Vec::new();
        for b in &p.blocks {
            for q in &b.spec_w {
                for z in q.iter() {
                    vals.push(z.re);
                    vals.push(z.im);
                }
            }
        }
        assert!(vals.iter().all(|v| v.is_finite()));
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let target = 1.0 / 16.0;
        assert!((std - target).abs() / target < 0.2, "std {std}");
    }

    #[test]
    fn normalization_fit_and_floor() {
        let mut p = init_params::<f64>(
            &FnoConfig { in_channels: 2, ..cfg() },
            &mut rng_for(2),
        )
        .unwrap();
        // channel 0 constant 3.0, channel 1 standardized noise
        let mut rng = rng_for(5);
        use rand::Rng;
        let stacks: Vec<ndarray::Array2<f64>> = (0..64)
            .map(|_| {
                ndarray::Array2::from_shape_fn((2, 256), |(c, _)| {
                    if c == 0 {
                        3.0
                    } else {
                        rng.sample::<f64, _>(rand_distr::StandardNormal)
                    }
                })
            })
            .collect();
        fit_normalization(&mut p, stacks.iter().map(|s| s.view())).unwrap();
        assert_eq!(p.norm_mean[0], 3.0);
        assert_eq!(p.norm_std[0], 1e-8);
        assert!(p.norm_mean[1].abs() < 0.02);
        assert!((p.norm_std[1] - 1.0).abs() < 0.01);
        // affine normalization inverts exactly
        let x = 2.7f64;
        let normed = (x - p.norm_mean[1]) / p.norm_std[1];
        let back = normed * p.norm_std[1] + p.norm_mean[1];
        assert!((back - x).abs() < 1e-6);
    }

    #[test]
    fn layout_helpers() {
        assert_eq!(ChannelLayout::pretraining().in_channels(), 8);
        assert_eq!(ChannelLayout::minimal_for(crate::pde::SystemTag::Helmholtz).slots, vec![0, 6]);
        let with_k = ChannelLayout::pretraining_with_k_at(3).unwrap();
        assert_eq!(with_k.slots[3], SLOT_K_FIELD);
        assert!(ChannelLayout::pretraining_with_k_at(0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.modes = 17;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.width = 2;
        assert!(c.validate().is_err());
    }
}
