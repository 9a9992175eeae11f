use num_complex::Complex;
use num_traits::Float;

/// Scalar abstraction for the network stack: training runs in `f32`,
/// gradient-check ablations in `f64`. Reductions always accumulate in `f64`
/// regardless of the working precision.
pub trait Real:
    Float
    + rustfft::FftNum
    + num_traits::NumAssignOps
    + Default
    + ndarray::ScalarOperand
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `tanh` of the GELU inner polynomial, computed in working precision.
    fn gelu_tanh(self) -> Self {
        let c1 = Self::of_f64(SQRT_2_OVER_PI);
        let c2 = Self::of_f64(0.044_715);
        (c1 * (self + c2 * self * self * self)).tanh()
    }

    /// tanh-approximate GELU.
    fn gelu(self) -> Self {
        let half = Self::of_f64(0.5);
        half * self * (Self::one() + self.gelu_tanh())
    }

    /// Analytic GELU derivative given `t = gelu_tanh(x)` (reuses the forward
    /// pass's tanh so the backward pass stays cheap and exactly consistent).
    fn gelu_prime_from_tanh(self, t: Self) -> Self {
        let half = Self::of_f64(0.5);
        let c1 = Self::of_f64(SQRT_2_OVER_PI);
        let c2x3 = Self::of_f64(3.0 * 0.044_715);
        let sech2 = Self::one() - t * t;
        let inner_prime = c1 * (Self::one() + c2x3 * self * self);
        half * (Self::one() + t) + half * self * sech2 * inner_prime
    }

    /// Analytic derivative of the tanh-approximate GELU.
    fn gelu_prime(self) -> Self {
        self.gelu_prime_from_tanh(self.gelu_tanh())
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

impl Real for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

pub type Cplx<R> = Complex<R>;
