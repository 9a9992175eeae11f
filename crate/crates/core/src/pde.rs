//! The six PDE systems: residual evaluation for the physics loss, exact
//! Fourier-diagonal solves for the periodic steady systems, an exact
//! per-mode exponential integrator for the linear time-dependent systems,
//! and a finite-difference implicit-Euler solver for Dirichlet Darcy flow.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::spectral::{
    check_spd, fft2, ifft2, wavenumbers, wavenumbers_odd, GridSpec, ScalarField2D, SpectralField2D,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SystemTag {
    Poisson,
    AdvectionDiffusion,
    Helmholtz,
    ReactionDiffusion,
    ReactionAdvectionDiffusion,
    Darcy,
}

impl SystemTag {
    pub fn is_steady(self) -> bool {
        matches!(self, SystemTag::Poisson | SystemTag::AdvectionDiffusion | SystemTag::Helmholtz)
    }

    pub fn is_time_dependent(self) -> bool {
        !self.is_steady()
    }

    /// Stable on-disk tag byte.
    pub fn to_u8(self) -> u8 {
        match self {
            SystemTag::Poisson => 0,
            SystemTag::AdvectionDiffusion => 1,
            SystemTag::Helmholtz => 2,
            SystemTag::ReactionDiffusion => 3,
            SystemTag::ReactionAdvectionDiffusion => 4,
            SystemTag::Darcy => 5,
        }
    }

    pub fn from_u8(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => SystemTag::Poisson,
            1 => SystemTag::AdvectionDiffusion,
            2 => SystemTag::Helmholtz,
            3 => SystemTag::ReactionDiffusion,
            4 => SystemTag::ReactionAdvectionDiffusion,
            5 => SystemTag::Darcy,
            _ => return Err(CoreError::Format(format!("unknown system tag {tag}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemTag::Poisson => "poisson",
            SystemTag::AdvectionDiffusion => "advection-diffusion",
            SystemTag::Helmholtz => "helmholtz",
            SystemTag::ReactionDiffusion => "reaction-diffusion",
            SystemTag::ReactionAdvectionDiffusion => "reaction-advection-diffusion",
            SystemTag::Darcy => "darcy",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "poisson" => SystemTag::Poisson,
            "advection-diffusion" => SystemTag::AdvectionDiffusion,
            "helmholtz" => SystemTag::Helmholtz,
            "reaction-diffusion" => SystemTag::ReactionDiffusion,
            "reaction-advection-diffusion" => SystemTag::ReactionAdvectionDiffusion,
            "darcy" => SystemTag::Darcy,
            _ => return Err(CoreError::Config(format!("unknown system '{name}'"))),
        })
    }
}

/// PDE parameters λ. Exactly the fields demanded by the system are present.
#[derive(Debug, Clone, Default)]
pub struct CoefficientSet {
    /// Diffusion tensor `[[D11, D12], [D12, D22]]`.
    pub d: Option<[[f64; 2]; 2]>,
    /// Velocity vector.
    pub v: Option<[f64; 2]>,
    /// Helmholtz wavenumber, > 0.
    pub omega: Option<f64>,
    /// Linear reaction rate.
    pub r: Option<f64>,
    /// Target advection-diffusion ratio the velocity was calibrated to.
    pub psi: Option<f64>,
    /// Permeability field (Darcy only).
    pub k_field: Option<ScalarField2D>,
}

impl CoefficientSet {
    pub fn validate_for(&self, system: SystemTag) -> Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(CoreError::Domain(format!("{} requires {what}", system.name())))
            }
        };
        match system {
            SystemTag::Poisson => need(self.d.is_some(), "a diffusion tensor")?,
            SystemTag::AdvectionDiffusion => {
                need(self.d.is_some(), "a diffusion tensor")?;
                need(self.v.is_some(), "a velocity")?;
            }
            SystemTag::Helmholtz => {
                need(self.omega.is_some(), "omega")?;
                if self.omega.unwrap() <= 0.0 {
                    return Err(CoreError::Domain("omega must be positive".into()));
                }
            }
            SystemTag::ReactionDiffusion => {
                need(self.d.is_some(), "a diffusion tensor")?;
                need(self.r.is_some(), "a reaction rate")?;
            }
            SystemTag::ReactionAdvectionDiffusion => {
                need(self.d.is_some(), "a diffusion tensor")?;
                need(self.v.is_some(), "a velocity")?;
                need(self.r.is_some(), "a reaction rate")?;
            }
            SystemTag::Darcy => need(self.k_field.is_some(), "a permeability field")?,
        }
        if let Some(d) = &self.d {
            check_spd(d)?;
        }
        Ok(())
    }
}

/// Time horizon for the initial value problems. `dt` is only consumed by the
/// Darcy stepper; the periodic systems integrate exactly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TimeSpec {
    pub t_end: f64,
    pub dt: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { t_end: 1.0, dt: 1e-3 }
    }
}

impl TimeSpec {
    pub fn steps(&self) -> Result<usize> {
        if self.dt <= 0.0 {
            return Err(CoreError::Domain("dt must be positive".into()));
        }
        let n = self.t_end / self.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(CoreError::Domain(format!(
                "dt = {} does not divide t_end = {}",
                self.dt, self.t_end
            )));
        }
        Ok(n.round() as usize)
    }
}

/// Fourier symbol `s(k)` of the steady operator: `G(u) = ifft(s * fft(u))`.
///
/// Poisson: `s = D11 kx^2 + 2 D12 kx ky + D22 ky^2` (cross term on the
/// Nyquist-zeroed tables, matching `diffusion_multiplier`).
/// Advection-Diffusion adds `i (v . k)` (odd order, Nyquist zeroed).
/// Helmholtz: `|k|^2 + omega`.
pub fn steady_symbol(
    system: SystemTag,
    coeffs: &CoefficientSet,
    grid: &GridSpec,
) -> Result<Array2<Complex64>> {
    coeffs.validate_for(system)?;
    let (kx, ky) = wavenumbers(grid);
    let (kxo, kyo) = wavenumbers_odd(grid);
    let sym = match system {
        SystemTag::Poisson | SystemTag::AdvectionDiffusion => {
            let d = coeffs.d.unwrap();
            let v = coeffs.v.unwrap_or([0.0, 0.0]);
            let advect = system == SystemTag::AdvectionDiffusion;
            Array2::from_shape_fn((grid.ny, grid.nx), |(j, i)| {
                let quad =
                    d[0][0] * kx[i] * kx[i] + 2.0 * d[0][1] * kxo[i] * kyo[j] + d[1][1] * ky[j] * ky[j];
                let im = if advect { v[0] * kxo[i] + v[1] * kyo[j] } else { 0.0 };
                Complex64::new(quad, im)
            })
        }
        SystemTag::Helmholtz => {
            let omega = coeffs.omega.unwrap();
            Array2::from_shape_fn((grid.ny, grid.nx), |(j, i)| {
                Complex64::new(kx[i] * kx[i] + ky[j] * ky[j] + omega, 0.0)
            })
        }
        _ => {
            return Err(CoreError::UnsupportedSystem(format!(
                "{} is not a steady system",
                system.name()
            )))
        }
    };
    Ok(sym)
}

/// Symbol of the spatial operator of the time-dependent periodic systems,
/// i.e. `du/dt = -s(k) u + f` per mode.
pub fn evolution_symbol(
    system: SystemTag,
    coeffs: &CoefficientSet,
    grid: &GridSpec,
) -> Result<Array2<Complex64>> {
    coeffs.validate_for(system)?;
    let (kx, ky) = wavenumbers(grid);
    let (kxo, kyo) = wavenumbers_odd(grid);
    let d = coeffs.d.unwrap();
    let r = coeffs.r.unwrap();
    let v = match system {
        SystemTag::ReactionDiffusion => [0.0, 0.0],
        SystemTag::ReactionAdvectionDiffusion => coeffs.v.unwrap(),
        _ => {
            return Err(CoreError::UnsupportedSystem(format!(
                "{} is not an exponential-integrator system",
                system.name()
            )))
        }
    };
    Ok(Array2::from_shape_fn((grid.ny, grid.nx), |(j, i)| {
        let quad = d[0][0] * kx[i] * kx[i] + 2.0 * d[0][1] * kxo[i] * kyo[j] + d[1][1] * ky[j] * ky[j];
        Complex64::new(quad + r, v[0] * kxo[i] + v[1] * kyo[j])
    }))
}

/// PDE residual `G(u; λ) - f` for the steady systems, all derivatives spectral.
pub fn residual(
    system: SystemTag,
    u: &ScalarField2D,
    coeffs: &CoefficientSet,
    f: &ScalarField2D,
) -> Result<ScalarField2D> {
    if u.grid != f.grid {
        return Err(CoreError::Shape("u and f grids differ".into()));
    }
    let sym = steady_symbol(system, coeffs, &u.grid)?;
    let mut spec = fft2(u);
    for ((j, i), c) in spec.coeffs.indexed_iter_mut() {
        *c *= sym[(j, i)];
    }
    let gu = ifft2(&spec)?;
    Ok(ScalarField2D { grid: u.grid, values: gu.values - &f.values })
}

/// Subtract the mean so the zero mode of a source is empty.
pub fn mean_project(f: &ScalarField2D) -> ScalarField2D {
    let m = f.mean();
    ScalarField2D { grid: f.grid, values: f.values.mapv(|v| v - m) }
}

/// Exact solve of a steady periodic system by diagonal inversion in Fourier
/// space. For Poisson/Advection-Diffusion the k=0 symbol vanishes: `f` is
/// mean-projected and the solution is the mean-zero representative.
pub fn solve_steady(
    system: SystemTag,
    f: &ScalarField2D,
    coeffs: &CoefficientSet,
) -> Result<ScalarField2D> {
    let grid = f.grid;
    let sym = steady_symbol(system, coeffs, &grid)?;
    let zero_mode_singular = sym[(0, 0)].norm() < 1e-14;
    let mut spec = fft2(f);
    for ((j, i), c) in spec.coeffs.indexed_iter_mut() {
        if j == 0 && i == 0 {
            if zero_mode_singular {
                *c = Complex64::new(0.0, 0.0);
            } else {
                *c /= sym[(0, 0)];
            }
            continue;
        }
        let s = sym[(j, i)];
        if s.norm() < 1e-14 {
            return Err(CoreError::SingularSymbol {
                kx: crate::spectral::mode_index(i, grid.nx),
                ky: crate::spectral::mode_index(j, grid.ny),
                magnitude: s.norm(),
            });
        }
        *c /= s;
    }
    ifft2(&spec)
}

/// Exact per-mode exponential integrator for the linear time-dependent
/// periodic systems: `u_hat(t) = e^{-s t} u0_hat + (1 - e^{-s t})/s f_hat`,
/// with the secular limit `t f_hat` when `|s| < 1e-12`.
pub fn evolve_linear(
    system: SystemTag,
    u0: &ScalarField2D,
    f: &ScalarField2D,
    coeffs: &CoefficientSet,
    time: &TimeSpec,
) -> Result<ScalarField2D> {
    if u0.grid != f.grid {
        return Err(CoreError::Shape("u0 and f grids differ".into()));
    }
    let t = time.t_end;
    if t == 0.0 {
        return Ok(u0.clone());
    }
    let sym = evolution_symbol(system, coeffs, &u0.grid)?;
    let u0_hat = fft2(u0);
    let f_hat = fft2(f);
    let mut out = SpectralField2D::zeros(u0.grid);
    for ((j, i), c) in out.coeffs.indexed_iter_mut() {
        let s = sym[(j, i)];
        let decay = (-s * t).exp();
        let phi = if s.norm() < 1e-12 { Complex64::new(t, 0.0) } else { (1.0 - decay) / s };
        *c = decay * u0_hat.coeffs[(j, i)] + phi * f_hat.coeffs[(j, i)];
    }
    ifft2(&out)
}

/// Discrete flux-form `div(K grad p)` with face-averaged K and homogeneous
/// Dirichlet boundary, acting on the interior of a node-centered grid with
/// spacing `1/(n-1)` per axis.
pub(crate) struct DarcyOperator<'a> {
    k: &'a Array2<f64>,
    nx: usize,
    ny: usize,
    inv_hx2: f64,
    inv_hy2: f64,
}

impl<'a> DarcyOperator<'a> {
    pub(crate) fn new(k: &'a ScalarField2D) -> Result<Self> {
        if k.values.iter().any(|&v| v <= 0.0) {
            return Err(CoreError::Domain("permeability must be strictly positive".into()));
        }
        let grid = k.grid;
        let hx = grid.lx / (grid.nx - 1) as f64;
        let hy = grid.ly / (grid.ny - 1) as f64;
        Ok(DarcyOperator {
            k: &k.values,
            nx: grid.nx,
            ny: grid.ny,
            inv_hx2: 1.0 / (hx * hx),
            inv_hy2: 1.0 / (hy * hy),
        })
    }

    /// `out = div(K grad p)` on interior nodes; `p` is the full grid with
    /// zero boundary entries.
    pub(crate) fn apply(&self, p: &Array2<f64>, out: &mut Array2<f64>) {
        let face = |a: f64, b: f64| 0.5 * (a + b);
        for j in 1..self.ny - 1 {
            for i in 1..self.nx - 1 {
                let kc = self.k[(j, i)];
                let ke = face(kc, self.k[(j, i + 1)]);
                let kw = face(kc, self.k[(j, i - 1)]);
                let kn = face(kc, self.k[(j + 1, i)]);
                let ks = face(kc, self.k[(j - 1, i)]);
                let px = ke * (p[(j, i + 1)] - p[(j, i)]) - kw * (p[(j, i)] - p[(j, i - 1)]);
                let py = kn * (p[(j + 1, i)] - p[(j, i)]) - ks * (p[(j, i)] - p[(j - 1, i)]);
                out[(j, i)] = px * self.inv_hx2 + py * self.inv_hy2;
            }
        }
    }
}

/// Conjugate gradient on interior nodes for `(p - dt*div(K grad p)) = rhs`
/// (`dt = 0` solves `-div(K grad p) = rhs` directly when `identity` is off).
pub(crate) fn darcy_cg(
    op: &DarcyOperator,
    rhs: &Array2<f64>,
    dt: f64,
    identity: bool,
    p: &mut Array2<f64>,
) -> Result<usize> {
    let (ny, nx) = rhs.dim();
    let interior = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        let mut acc = 0.0;
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                acc += a[(j, i)] * b[(j, i)];
            }
        }
        acc
    };
    let apply_m = |x: &Array2<f64>, out: &mut Array2<f64>| {
        op.apply(x, out);
        if identity {
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    out[(j, i)] = x[(j, i)] - dt * out[(j, i)];
                }
            }
        } else {
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    out[(j, i)] = -out[(j, i)];
                }
            }
        }
    };

    let b_norm = interior(rhs, rhs).sqrt();
    p.fill(0.0);
    if b_norm == 0.0 {
        return Ok(0);
    }
    let n_unknowns = (ny - 2) * (nx - 2);
    let max_iters = 10 * n_unknowns;

    let mut r = rhs.clone();
    let mut d = r.clone();
    let mut scratch = Array2::<f64>::zeros((ny, nx));
    let mut rr = interior(&r, &r);
    for iter in 0..max_iters {
        if rr.sqrt() <= 1e-10 * b_norm {
            return Ok(iter);
        }
        apply_m(&d, &mut scratch);
        let dad = interior(&d, &scratch);
        if dad <= 0.0 {
            return Err(CoreError::Solver("CG lost positive definiteness".into()));
        }
        let alpha = rr / dad;
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                p[(j, i)] += alpha * d[(j, i)];
                r[(j, i)] -= alpha * scratch[(j, i)];
            }
        }
        let rr_new = interior(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                d[(j, i)] = r[(j, i)] + beta * d[(j, i)];
            }
        }
    }
    Err(CoreError::Solver(format!(
        "CG did not reach 1e-10 relative residual in {max_iters} iterations"
    )))
}

/// Implicit-Euler integration of `dp/dt = div(K grad p) + f` with homogeneous
/// Dirichlet boundary; returns the pressure at `t_end`.
pub fn solve_darcy(
    u0: &ScalarField2D,
    k: &ScalarField2D,
    f: &ScalarField2D,
    time: &TimeSpec,
) -> Result<ScalarField2D> {
    let grid = u0.grid;
    if k.grid != grid || f.grid != grid {
        return Err(CoreError::Shape("u0, K, f grids differ".into()));
    }
    let (ny, nx) = (grid.ny, grid.nx);
    for i in 0..nx {
        if u0.values[(0, i)] != 0.0 || u0.values[(ny - 1, i)] != 0.0 {
            return Err(CoreError::Precondition("u0 must vanish on the boundary".into()));
        }
    }
    for j in 0..ny {
        if u0.values[(j, 0)] != 0.0 || u0.values[(j, nx - 1)] != 0.0 {
            return Err(CoreError::Precondition("u0 must vanish on the boundary".into()));
        }
    }
    let op = DarcyOperator::new(k)?;
    let steps = time.steps()?;
    let dt = time.dt;
    let mut p = u0.values.clone();
    let mut rhs = Array2::<f64>::zeros((ny, nx));
    let mut next = Array2::<f64>::zeros((ny, nx));
    for _ in 0..steps {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                rhs[(j, i)] = p[(j, i)] + dt * f.values[(j, i)];
            }
        }
        darcy_cg(&op, &rhs, dt, true, &mut next)?;
        std::mem::swap(&mut p, &mut next);
    }
    ScalarField2D::new(grid, p)
}

/// Direct steady Dirichlet solve `-div(K grad p) = f` (generation utility and
/// reference point for the transient solver).
pub fn solve_darcy_steady(k: &ScalarField2D, f: &ScalarField2D) -> Result<ScalarField2D> {
    let op = DarcyOperator::new(k)?;
    let mut p = Array2::<f64>::zeros(f.values.dim());
    darcy_cg(&op, &f.values, 0.0, false, &mut p)?;
    ScalarField2D::new(k.grid, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn eye() -> CoefficientSet {
        CoefficientSet { d: Some([[1.0, 0.0], [0.0, 1.0]]), ..Default::default() }
    }

    #[test]
    fn poisson_manufactured_residual() {
        let grid = GridSpec::square(64).unwrap();
        let u = ScalarField2D::from_fn(grid, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let f = ScalarField2D::new(grid, 8.0 * PI * PI * &u.values).unwrap();
        let r = residual(SystemTag::Poisson, &u, &eye(), &f).unwrap();
        assert!(r.linf() < 1e-9, "max residual {}", r.linf());
    }

    #[test]
    fn helmholtz_manufactured_residual() {
        let grid = GridSpec::square(32).unwrap();
        let coeffs = CoefficientSet { omega: Some(1.0), ..Default::default() };
        let u = ScalarField2D::from_fn(grid, |x, _| (2.0 * PI * x).cos());
        let f = ScalarField2D::new(grid, (4.0 * PI * PI + 1.0) * &u.values).unwrap();
        let r = residual(SystemTag::Helmholtz, &u, &coeffs, &f).unwrap();
        assert!(r.linf() < 1e-9);
    }

    #[test]
    fn advection_orthogonal_to_gradient_vanishes() {
        let grid = GridSpec::square(32).unwrap();
        let coeffs = CoefficientSet {
            d: Some([[1.0, 0.0], [0.0, 1.0]]),
            v: Some([1.0, 0.0]),
            ..Default::default()
        };
        let u = ScalarField2D::from_fn(grid, |_, y| (2.0 * PI * y).sin());
        let f = ScalarField2D::new(grid, 4.0 * PI * PI * &u.values).unwrap();
        let r = residual(SystemTag::AdvectionDiffusion, &u, &coeffs, &f).unwrap();
        assert!(r.linf() < 1e-9);
    }

    #[test]
    fn residual_rejects_time_dependent_systems() {
        let grid = GridSpec::square(8).unwrap();
        let u = ScalarField2D::zeros(grid);
        let coeffs = CoefficientSet { d: Some([[1.0, 0.0], [0.0, 1.0]]), r: Some(0.1), ..Default::default() };
        let err = residual(SystemTag::ReactionDiffusion, &u, &coeffs, &u.clone()).unwrap_err();
        assert!(matches!(err, CoreError::UnsupportedSystem(_)));
    }

    #[test]
    fn poisson_eigenfunction_inversion() {
        let grid = GridSpec::square(64).unwrap();
        let u_exact =
            ScalarField2D::from_fn(grid, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let f = ScalarField2D::new(grid, 8.0 * PI * PI * &u_exact.values).unwrap();
        let u = solve_steady(SystemTag::Poisson, &f, &eye()).unwrap();
        let rel = (&u.values - &u_exact.values).mapv(|v| v * v).sum().sqrt() / u_exact.l2();
        assert!(rel < 1e-10, "rel {rel}");
    }

    #[test]
    fn helmholtz_eigenfunction_inversion() {
        let grid = GridSpec::square(64).unwrap();
        let coeffs = CoefficientSet { omega: Some(5.0), ..Default::default() };
        let u_exact = ScalarField2D::from_fn(grid, |_, y| (2.0 * PI * y).cos());
        let f = ScalarField2D::new(grid, (4.0 * PI * PI + 5.0) * &u_exact.values).unwrap();
        let u = solve_steady(SystemTag::Helmholtz, &f, &coeffs).unwrap();
        let rel = (&u.values - &u_exact.values).mapv(|v| v * v).sum().sqrt() / u_exact.l2();
        assert!(rel < 1e-10);
    }

    #[test]
    fn helmholtz_zero_mode_symbol_is_omega() {
        let grid = GridSpec::square(16).unwrap();
        let coeffs = CoefficientSet { omega: Some(3.5), ..Default::default() };
        let sym = steady_symbol(SystemTag::Helmholtz, &coeffs, &grid).unwrap();
        assert_eq!(sym[(0, 0)], Complex64::new(3.5, 0.0));
    }

    #[test]
    fn solve_then_residual_duality_on_random_source() {
        let grid = GridSpec::square(64).unwrap();
        let mut rng = crate::seeds::rng_for(5);
        use rand::Rng;
        let raw = ScalarField2D::new(
            grid,
            Array2::from_shape_fn((grid.ny, grid.nx), |_| rng.gen_range(-1.0..1.0)),
        )
        .unwrap();
        // smooth the white noise so it resembles a source field
        let mut spec = fft2(&raw);
        for ((j, i), c) in spec.coeffs.indexed_iter_mut() {
            let mx = crate::spectral::mode_index(i, grid.nx) as f64;
            let my = crate::spectral::mode_index(j, grid.ny) as f64;
            *c *= (-(mx * mx + my * my) / 64.0).exp();
        }
        let f = mean_project(&ifft2(&spec).unwrap());
        for (system, coeffs) in [
            (SystemTag::Poisson, CoefficientSet { d: Some([[2.0, 0.3], [0.3, 1.0]]), ..Default::default() }),
            (
                SystemTag::AdvectionDiffusion,
                CoefficientSet {
                    d: Some([[1.5, -0.2], [-0.2, 2.5]]),
                    v: Some([0.7, -1.1]),
                    ..Default::default()
                },
            ),
            (SystemTag::Helmholtz, CoefficientSet { omega: Some(4.0), ..Default::default() }),
        ] {
            let u = solve_steady(system, &f, &coeffs).unwrap();
            let r = residual(system, &u, &coeffs, &f).unwrap();
            assert!(r.linf() < 1e-8, "{}: {}", system.name(), r.linf());
        }
    }

    #[test]
    fn solve_steady_is_linear() {
        let grid = GridSpec::square(32).unwrap();
        let f1 = ScalarField2D::from_fn(grid, |x, y| (2.0 * PI * x).sin() + (4.0 * PI * y).cos());
        let f2 = ScalarField2D::from_fn(grid, |x, y| (2.0 * PI * (x + y)).sin());
        let (a, b) = (0.8, -2.3);
        let combo = ScalarField2D::new(grid, a * &f1.values + b * &f2.values).unwrap();
        let coeffs = eye();
        let lhs = solve_steady(SystemTag::Poisson, &combo, &coeffs).unwrap();
        let u1 = solve_steady(SystemTag::Poisson, &f1, &coeffs).unwrap();
        let u2 = solve_steady(SystemTag::Poisson, &f2, &coeffs).unwrap();
        let diff = (&lhs.values - &(a * &u1.values + b * &u2.values))
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-10 * lhs.linf().max(1.0));
    }

    #[test]
    fn heat_mode_decay() {
        let grid = GridSpec::square(32).unwrap();
        let coeffs = CoefficientSet { d: Some([[1.0, 0.0], [0.0, 1.0]]), r: Some(0.0), ..Default::default() };
        let u0 = ScalarField2D::from_fn(grid, |x, _| (2.0 * PI * x).sin());
        let f = ScalarField2D::zeros(grid);
        let u1 = evolve_linear(SystemTag::ReactionDiffusion, &u0, &f, &coeffs, &TimeSpec::default())
            .unwrap();
        let expect = (-4.0 * PI * PI).exp();
        let err = u1
            .values
            .indexed_iter()
            .map(|((j, i), v)| (v - expect * u0.values[(j, i)]).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn zero_symbol_secular_growth() {
        let grid = GridSpec::square(16).unwrap();
        let coeffs = CoefficientSet { d: Some([[3.0, 0.0], [0.0, 1.0]]), r: Some(0.0), ..Default::default() };
        let u0 = ScalarField2D::zeros(grid);
        let c = 2.75;
        let f = ScalarField2D::constant(grid, c);
        let u1 = evolve_linear(SystemTag::ReactionDiffusion, &u0, &f, &coeffs, &TimeSpec::default())
            .unwrap();
        assert!(u1.values.iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn evolve_t_zero_is_identity_and_positive_r_decays() {
        let grid = GridSpec::square(16).unwrap();
        let coeffs = CoefficientSet { d: Some([[1.0, 0.0], [0.0, 1.0]]), r: Some(0.5), ..Default::default() };
        let u0 = ScalarField2D::from_fn(grid, |x, y| (2.0 * PI * x).cos() + 0.3 * (2.0 * PI * y).sin());
        let f = ScalarField2D::zeros(grid);
        let t0 = TimeSpec { t_end: 0.0, dt: 1e-3 };
        let same = evolve_linear(SystemTag::ReactionDiffusion, &u0, &f, &coeffs, &t0).unwrap();
        assert_eq!(same.values, u0.values);

        let mut norm_prev = u0.l2();
        for &t in &[0.25, 0.5, 1.0] {
            let ut = evolve_linear(
                SystemTag::ReactionDiffusion,
                &u0,
                &f,
                &coeffs,
                &TimeSpec { t_end: t, dt: 1e-3 },
            )
            .unwrap();
            assert!(ut.l2() < norm_prev);
            norm_prev = ut.l2();
        }
    }

    #[test]
    fn darcy_zero_everything_stays_zero() {
        let grid = GridSpec::square(16).unwrap();
        let k = ScalarField2D::constant(grid, 1.0);
        let z = ScalarField2D::zeros(grid);
        let p = solve_darcy(&z, &k, &z, &TimeSpec { t_end: 1.0, dt: 0.1 }).unwrap();
        assert_eq!(p.values.sum(), 0.0);
    }

    #[test]
    fn darcy_boundary_rows_exactly_zero() {
        let grid = GridSpec::square(16).unwrap();
        let k = ScalarField2D::constant(grid, 1.0);
        let u0 = ScalarField2D::from_fn(grid, |x, y| {
            let xr = x * 16.0 / 15.0; // node-centered coordinates
            let yr = y * 16.0 / 15.0;
            (PI * xr).sin() * (PI * yr).sin()
        });
        // force exact zeros on the boundary ring
        let mut u0 = u0;
        for i in 0..16 {
            u0.values[(0, i)] = 0.0;
            u0.values[(15, i)] = 0.0;
            u0.values[(i, 0)] = 0.0;
            u0.values[(i, 15)] = 0.0;
        }
        let f = ScalarField2D::zeros(grid);
        let p = solve_darcy(&u0, &k, &f, &TimeSpec { t_end: 1.0, dt: 0.01 }).unwrap();
        for i in 0..16 {
            assert_eq!(p.values[(0, i)], 0.0);
            assert_eq!(p.values[(15, i)], 0.0);
            assert_eq!(p.values[(i, 0)], 0.0);
            assert_eq!(p.values[(i, 15)], 0.0);
        }
    }

    #[test]
    fn darcy_rejects_nonpositive_k_and_nonzero_boundary() {
        let grid = GridSpec::square(8).unwrap();
        let z = ScalarField2D::zeros(grid);
        let bad_k = ScalarField2D::constant(grid, 0.0);
        assert!(matches!(
            solve_darcy(&z, &bad_k, &z, &TimeSpec { t_end: 1.0, dt: 0.5 }),
            Err(CoreError::Domain(_))
        ));
        let k = ScalarField2D::constant(grid, 1.0);
        let bad_u0 = ScalarField2D::constant(grid, 1.0);
        assert!(matches!(
            solve_darcy(&bad_u0, &k, &z, &TimeSpec { t_end: 1.0, dt: 0.5 }),
            Err(CoreError::Precondition(_))
        ));
    }

    #[test]
    fn timespec_requires_divisible_dt() {
        assert!(TimeSpec { t_end: 1.0, dt: 0.3 }.steps().is_err());
        assert_eq!(TimeSpec { t_end: 1.0, dt: 0.25 }.steps().unwrap(), 4);
    }
}
