//! Periodic 2D grid bookkeeping, FFT contract, wavenumber tables, and the
//! spectral differential operators shared by the solvers and the physics loss.
//!
//! Conventions (pinned here, used everywhere):
//! - forward DFT is unnormalized, the inverse carries `1/(nx*ny)`;
//! - the Nyquist mode index `n/2` carries `+n/2`, and is zeroed for
//!   odd-order derivative multipliers;
//! - radial frequency bins are `round(sqrt(mx^2 + my^2))` over signed
//!   integer mode indices.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Uniform grid over the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    /// Square periodic grid on `[0,1]^2`.
    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 8 || ny < 8 || nx % 2 != 0 || ny % 2 != 0 {
            return Err(CoreError::Domain(format!(
                "grid must be at least 8x8 with even sides, got {nx}x{ny}"
            )));
        }
        Ok(GridSpec { nx, ny, lx: 1.0, ly: 1.0 })
    }

    pub fn points(&self) -> usize {
        self.nx * self.ny
    }

    /// Largest radial frequency bin reachable on this grid (grid corners).
    pub fn max_radial_bin(&self) -> usize {
        let hx = (self.nx / 2) as f64;
        let hy = (self.ny / 2) as f64;
        (hx * hx + hy * hy).sqrt().round() as usize
    }
}

/// Real-valued field sampled on a grid, row-major `(ny, nx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    pub grid: GridSpec,
    pub values: Array2<f64>,
}

impl ScalarField2D {
    pub fn new(grid: GridSpec, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.ny, grid.nx) {
            return Err(CoreError::Shape(format!(
                "field shape {:?} does not match grid ({}, {})",
                values.dim(),
                grid.ny,
                grid.nx
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Domain("field contains non-finite entries".into()));
        }
        Ok(ScalarField2D { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField2D { grid, values: Array2::zeros((grid.ny, grid.nx)) }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        ScalarField2D { grid, values: Array2::from_elem((grid.ny, grid.nx), c) }
    }

    /// Sample `f(x, y)` at the periodic grid points `x = i/nx`, `y = j/ny`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.ny, grid.nx), |(j, i)| {
            f(i as f64 * grid.lx / grid.nx as f64, j as f64 * grid.ly / grid.ny as f64)
        });
        ScalarField2D { grid, values }
    }

    pub fn mean(&self) -> f64 {
        self.values.sum() / self.grid.points() as f64
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Complex DFT coefficients of a field, standard layout `(ky, kx)`.
#[derive(Debug, Clone)]
pub struct SpectralField2D {
    pub grid: GridSpec,
    pub coeffs: Array2<Complex64>,
}

impl SpectralField2D {
    pub fn zeros(grid: GridSpec) -> Self {
        SpectralField2D { grid, coeffs: Array2::zeros((grid.ny, grid.nx)) }
    }
}

/// Inclusive radial integer-wavenumber band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub k_min: usize,
    pub k_max: usize,
}

impl FrequencyBand {
    pub fn new(k_min: usize, k_max: usize, grid: &GridSpec) -> Result<Self> {
        if k_min > k_max || k_max > grid.max_radial_bin() {
            return Err(CoreError::Domain(format!(
                "invalid band [{k_min}, {k_max}] on grid with max radial bin {}",
                grid.max_radial_bin()
            )));
        }
        Ok(FrequencyBand { k_min, k_max })
    }
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        cache
            .entry((len, inverse))
            .or_insert_with(|| {
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

/// In-place 2D transform of a complex buffer, rows then columns.
fn fft2_complex(data: &mut Array2<Complex64>, inverse: bool) {
    let (ny, nx) = data.dim();
    let row_fft = plan(nx, inverse);
    for mut row in data.rows_mut() {
        row_fft.process(row.as_slice_mut().expect("row-major layout"));
    }
    let col_fft = plan(ny, inverse);
    let mut col = vec![Complex64::default(); ny];
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

/// Forward unnormalized DFT of a real field.
pub fn fft2(field: &ScalarField2D) -> SpectralField2D {
    let mut coeffs = field.values.mapv(|v| Complex64::new(v, 0.0));
    fft2_complex(&mut coeffs, false);
    SpectralField2D { grid: field.grid, coeffs }
}

/// Inverse DFT (normalized by `1/(nx*ny)`) back to a real field.
///
/// The imaginary residue of the inverse is truncated when it is below
/// `1e-10` of the field magnitude; larger residues mean the spectrum was not
/// Hermitian-symmetric and are rejected.
pub fn ifft2(spec: &SpectralField2D) -> Result<ScalarField2D> {
    let grid = spec.grid;
    let mut data = spec.coeffs.clone();
    fft2_complex(&mut data, true);
    let scale = 1.0 / grid.points() as f64;
    let mut re_max = 0.0f64;
    let mut im_max = 0.0f64;
    for v in data.iter() {
        re_max = re_max.max(v.re.abs());
        im_max = im_max.max(v.im.abs());
    }
    if im_max * scale > 1e-10 * (re_max * scale).max(f64::EPSILON) {
        return Err(CoreError::Symmetry(format!(
            "imaginary residue {:.3e} exceeds 1e-10 of field magnitude {:.3e}",
            im_max * scale,
            re_max * scale
        )));
    }
    Ok(ScalarField2D { grid, values: data.mapv(|v| v.re * scale) })
}

/// Signed integer mode index for DFT position `idx` on an axis of length `n`.
/// The Nyquist position carries `+n/2`.
pub fn mode_index(idx: usize, n: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

/// Angular wavenumber tables `kx[m] = 2*pi*mode(m)`, analogous `ky`.
pub fn wavenumbers(grid: &GridSpec) -> (Array1<f64>, Array1<f64>) {
    let kx = Array1::from_shape_fn(grid.nx, |i| 2.0 * PI * mode_index(i, grid.nx) as f64);
    let ky = Array1::from_shape_fn(grid.ny, |j| 2.0 * PI * mode_index(j, grid.ny) as f64);
    (kx, ky)
}

/// Wavenumber for odd-order derivative multipliers: Nyquist zeroed so the
/// derivative of a real field stays real.
pub fn wavenumbers_odd(grid: &GridSpec) -> (Array1<f64>, Array1<f64>) {
    let (mut kx, mut ky) = wavenumbers(grid);
    kx[grid.nx / 2] = 0.0;
    ky[grid.ny / 2] = 0.0;
    (kx, ky)
}

/// Spectral partial derivatives `(du/dx, du/dy)` via `i*k` multiplication.
pub fn spectral_gradient(u: &ScalarField2D) -> Result<(ScalarField2D, ScalarField2D)> {
    let spec = fft2(u);
    let (kx, ky) = wavenumbers_odd(&u.grid);
    let mut gx = SpectralField2D::zeros(u.grid);
    let mut gy = SpectralField2D::zeros(u.grid);
    for ((j, i), &c) in spec.coeffs.indexed_iter() {
        gx.coeffs[(j, i)] = c * Complex64::new(0.0, kx[i]);
        gy.coeffs[(j, i)] = c * Complex64::new(0.0, ky[j]);
    }
    Ok((ifft2(&gx)?, ifft2(&gy)?))
}

/// Validate that `d` is a symmetric positive definite 2x2 matrix
/// `[[d11, d12], [d12, d22]]`.
pub fn check_spd(d: &[[f64; 2]; 2]) -> Result<()> {
    let (d11, d12, d21, d22) = (d[0][0], d[0][1], d[1][0], d[1][1]);
    if (d12 - d21).abs() > 1e-12 * (d11.abs() + d22.abs()).max(1.0) {
        return Err(CoreError::Domain(format!("diffusion tensor not symmetric: {d12} vs {d21}")));
    }
    if d11 <= 0.0 || d11 * d22 - d12 * d12 <= 0.0 {
        return Err(CoreError::Domain(
            "diffusion tensor not positive definite".into(),
        ));
    }
    Ok(())
}

/// Fourier multiplier of `div(D grad u)` for constant symmetric `D`:
/// `-(D11 kx^2 + 2 D12 kx ky + D22 ky^2)`. The pure second derivatives keep
/// the Nyquist magnitude `(n/2)^2`; the mixed term is first order per axis,
/// so it uses the Nyquist-zeroed tables (otherwise the multiplier is not
/// even under `k -> -k` on the Nyquist lines and the output turns complex).
pub fn diffusion_multiplier(grid: &GridSpec, d: &[[f64; 2]; 2]) -> Array2<f64> {
    let (kx, ky) = wavenumbers(grid);
    let (kxo, kyo) = wavenumbers_odd(grid);
    Array2::from_shape_fn((grid.ny, grid.nx), |(j, i)| {
        -(d[0][0] * kx[i] * kx[i] + 2.0 * d[0][1] * kxo[i] * kyo[j] + d[1][1] * ky[j] * ky[j])
    })
}

/// `div(D grad u)` evaluated spectrally for constant SPD `D`.
pub fn diffusion_term(u: &ScalarField2D, d: &[[f64; 2]; 2]) -> Result<ScalarField2D> {
    check_spd(d)?;
    let mult = diffusion_multiplier(&u.grid, d);
    let mut spec = fft2(u);
    for ((j, i), c) in spec.coeffs.indexed_iter_mut() {
        *c *= mult[(j, i)];
    }
    ifft2(&spec)
}

/// Boolean mask selecting DFT positions whose rounded radial mode
/// `round(sqrt(mx^2 + my^2))` lies in the band (inclusive).
pub fn radial_band_mask(grid: &GridSpec, band: &FrequencyBand) -> Array2<bool> {
    Array2::from_shape_fn((grid.ny, grid.nx), |(j, i)| {
        let mx = mode_index(i, grid.nx) as f64;
        let my = mode_index(j, grid.ny) as f64;
        let r = (mx * mx + my * my).sqrt().round() as usize;
        r >= band.k_min && r <= band.k_max
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_field(grid: GridSpec, seed: u64) -> ScalarField2D {
        let mut rng = crate::seeds::rng_for(seed);
        let values = Array2::from_shape_fn((grid.ny, grid.nx), |_| rng.gen_range(-1.0..1.0));
        ScalarField2D { grid, values }
    }

    #[test]
    fn fft_constant_field_is_dc_only() {
        let grid = GridSpec::square(8).unwrap();
        let c = 2.5;
        let spec = fft2(&ScalarField2D::constant(grid, c));
        assert!((spec.coeffs[(0, 0)].re - 64.0 * c).abs() < 1e-9);
        assert!(spec.coeffs[(0, 0)].im.abs() < 1e-12);
        let off_dc: f64 =
            spec.coeffs.indexed_iter().filter(|((j, i), _)| *j != 0 || *i != 0).map(|(_, v)| v.norm()).sum();
        assert!(off_dc < 1e-9);
    }

    #[test]
    fn fft_single_cosine_mode() {
        let grid = GridSpec::square(16).unwrap();
        let u = ScalarField2D::from_fn(grid, |x, _| (2.0 * PI * x).cos());
        let spec = fft2(&u);
        assert!((spec.coeffs[(0, 1)].re - 128.0).abs() < 1e-9);
        assert!((spec.coeffs[(0, 15)].re - 128.0).abs() < 1e-9);
        let rest: f64 = spec
            .coeffs
            .indexed_iter()
            .filter(|((j, i), _)| !(*j == 0 && (*i == 1 || *i == 15)))
            .map(|(_, v)| v.norm())
            .sum();
        assert!(rest < 1e-8);
    }

    #[test]
    fn parseval_against_direct_summation() {
        let grid = GridSpec::square(32).unwrap();
        let u = random_field(grid, 7);
        // brute-force oracle: direct grid-space sum
        let grid_energy: f64 = u.values.iter().map(|v| v * v).sum();
        let spec = fft2(&u);
        let spec_energy: f64 =
            spec.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() / grid.points() as f64;
        assert!((grid_energy - spec_energy).abs() <= 1e-10 * grid_energy.abs());
    }

    #[test]
    fn ifft_zero_spectrum_and_dc_only() {
        let grid = GridSpec::square(8).unwrap();
        let zero = ifft2(&SpectralField2D::zeros(grid)).unwrap();
        assert_eq!(zero.values.sum(), 0.0);

        let mut dc = SpectralField2D::zeros(grid);
        dc.coeffs[(0, 0)] = Complex64::new(grid.points() as f64, 0.0);
        let ones = ifft2(&dc).unwrap();
        assert!(ones.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn round_trip_identity() {
        let grid = GridSpec::new(16, 32).unwrap();
        let u = random_field(grid, 3);
        let back = ifft2(&fft2(&u)).unwrap();
        let max_dev = (&back.values - &u.values).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_dev < 1e-12 * u.linf());
    }

    #[test]
    fn non_hermitian_spectrum_rejected() {
        let grid = GridSpec::square(8).unwrap();
        let mut spec = SpectralField2D::zeros(grid);
        spec.coeffs[(0, 1)] = Complex64::new(1.0, 0.0); // mirror (0,7) left zero
        spec.coeffs[(2, 3)] = Complex64::new(0.0, 5.0);
        let err = ifft2(&spec).unwrap_err();
        assert!(matches!(err, CoreError::Symmetry(_)));
    }

    #[test]
    fn wavenumber_layout_and_symmetry() {
        let grid = GridSpec::square(8).unwrap();
        let (kx, _) = wavenumbers(&grid);
        let modes: Vec<f64> = kx.iter().map(|k| k / (2.0 * PI)).collect();
        assert_eq!(modes, vec![0.0, 1.0, 2.0, 3.0, 4.0, -3.0, -2.0, -1.0]);
        for j in 1..4 {
            assert_eq!(kx[j], -kx[8 - j]);
        }
        let grid16 = GridSpec::square(16).unwrap();
        let (kx16, ky16) = wavenumbers(&grid16);
        // index (row 0, col 1): ky = 0, kx = 2*pi
        assert_eq!(ky16[0], 0.0);
        assert!((kx16[1] - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn gradient_of_single_mode() {
        let grid = GridSpec::square(32).unwrap();
        let u = ScalarField2D::from_fn(grid, |x, _| (2.0 * PI * x).sin());
        let (ux, uy) = spectral_gradient(&u).unwrap();
        let exact = ScalarField2D::from_fn(grid, |x, _| 2.0 * PI * (2.0 * PI * x).cos());
        let err = (&ux.values - &exact.values).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10);
        assert!(uy.linf() < 1e-10);

        let c = ScalarField2D::constant(grid, 4.2);
        let (cx, cy) = spectral_gradient(&c).unwrap();
        assert!(cx.linf() < 1e-12 && cy.linf() < 1e-12);
    }

    #[test]
    fn gradient_matches_fd4_for_smooth_band_limited_field() {
        // 4th-order central-difference oracle on a 128 grid.
        let grid = GridSpec::square(128).unwrap();
        let mut rng = crate::seeds::rng_for(11);
        let kcap = grid.nx / 4;
        let kscale = (grid.nx / 32) as f64;
        let mut spec = SpectralField2D::zeros(grid);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let mx = mode_index(i, grid.nx);
                let my = mode_index(j, grid.ny);
                let r2 = (mx * mx + my * my) as f64;
                if r2 > (kcap * kcap) as f64 || (mx == 0 && my == 0) {
                    continue;
                }
                let amp = (-r2 / (2.0 * kscale * kscale)).exp();
                let re: f64 = rng.gen_range(-1.0..1.0);
                let im: f64 = rng.gen_range(-1.0..1.0);
                spec.coeffs[(j, i)] = Complex64::new(re * amp, im * amp);
            }
        }
        // Hermitian-symmetrize so the field is real.
        let sym = spec.coeffs.clone();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let jm = (grid.ny - j) % grid.ny;
                let im_ = (grid.nx - i) % grid.nx;
                spec.coeffs[(j, i)] = 0.5 * (sym[(j, i)] + sym[(jm, im_)].conj());
            }
        }
        let u = ifft2(&spec).unwrap();
        let (ux, _) = spectral_gradient(&u).unwrap();
        let h = 1.0 / grid.nx as f64;
        let n = grid.nx;
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..grid.ny {
            for i in 0..n {
                let f = |d: i64| u.values[(j, ((i as i64 + d).rem_euclid(n as i64)) as usize)];
                let fd = (-f(2) + 8.0 * f(1) - 8.0 * f(-1) + f(-2)) / (12.0 * h);
                num += (ux.values[(j, i)] - fd).powi(2);
                den += fd * fd;
            }
        }
        assert!((num / den).sqrt() < 1e-3, "rel err {}", (num / den).sqrt());
    }

    #[test]
    fn diffusion_term_eigenfunction_and_edge_cases() {
        let grid = GridSpec::square(32).unwrap();
        let u = ScalarField2D::from_fn(grid, |x, y| (2.0 * PI * x).sin() * (2.0 * PI * y).sin());
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        let lap = diffusion_term(&u, &eye).unwrap();
        let expect = -8.0 * PI * PI;
        let err = lap
            .values
            .indexed_iter()
            .map(|((j, i), v)| (v - expect * u.values[(j, i)]).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-9);

        let c = ScalarField2D::constant(grid, 3.0);
        assert!(diffusion_term(&c, &eye).unwrap().linf() < 1e-12);

        let aniso = [[2.0, 0.0], [0.0, 1.0]];
        let ux = ScalarField2D::from_fn(grid, |x, _| (2.0 * PI * x).sin());
        let t = diffusion_term(&ux, &aniso).unwrap();
        let err = t
            .values
            .indexed_iter()
            .map(|((j, i), v)| (v - expect * ux.values[(j, i)]).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn diffusion_term_rejects_non_spd() {
        let grid = GridSpec::square(8).unwrap();
        let u = ScalarField2D::constant(grid, 1.0);
        assert!(diffusion_term(&u, &[[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(diffusion_term(&u, &[[-1.0, 0.0], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn diffusion_term_is_linear() {
        let grid = GridSpec::square(16).unwrap();
        let u = random_field(grid, 21);
        let w = random_field(grid, 22);
        let d = [[2.0, 0.5], [0.5, 1.0]];
        let (a, b) = (1.7, -0.4);
        let combo = ScalarField2D::new(grid, a * &u.values + b * &w.values).unwrap();
        let lhs = diffusion_term(&combo, &d).unwrap();
        let rhs_u = diffusion_term(&u, &d).unwrap();
        let rhs_w = diffusion_term(&w, &d).unwrap();
        let err = lhs
            .values
            .indexed_iter()
            .map(|((j, i), v)| (v - a * rhs_u.values[(j, i)] - b * rhs_w.values[(j, i)]).abs())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-10 * lhs.linf().max(1.0));
    }

    #[test]
    fn band_mask_counts() {
        let grid = GridSpec::square(8).unwrap();
        let dc = radial_band_mask(&grid, &FrequencyBand { k_min: 0, k_max: 0 });
        assert_eq!(dc.iter().filter(|&&b| b).count(), 1);
        assert!(dc[(0, 0)]);

        // enumeration oracle: count modes with round(sqrt(mx^2+my^2)) <= 4
        let band = radial_band_mask(&grid, &FrequencyBand { k_min: 0, k_max: 4 });
        let mut oracle = 0usize;
        for j in 0..8 {
            for i in 0..8 {
                let mx = mode_index(i, 8) as f64;
                let my = mode_index(j, 8) as f64;
                if (mx * mx + my * my).sqrt().round() as usize <= 4 {
                    oracle += 1;
                }
            }
        }
        assert_eq!(band.iter().filter(|&&b| b).count(), oracle);
        // frozen from the enumeration oracle (cross-checked externally)
        assert_eq!(oracle, 59);
        assert!(!band[(4, 4)]); // radius round(sqrt(32)) = 6
    }

    #[test]
    fn band_masks_partition_the_plane() {
        let grid = GridSpec::square(8).unwrap();
        let kmax = grid.max_radial_bin();
        let lo = radial_band_mask(&grid, &FrequencyBand { k_min: 0, k_max: 3 });
        let hi = radial_band_mask(&grid, &FrequencyBand { k_min: 4, k_max: kmax });
        for ((j, i), &a) in lo.indexed_iter() {
            let b = hi[(j, i)];
            assert!(a ^ b, "index ({j},{i}) covered {} times", a as u8 + b as u8);
        }
    }

    #[test]
    fn contiguous_bands_cover_every_index_once() {
        let grid = GridSpec::new(16, 8).unwrap();
        let kmax = grid.max_radial_bin();
        let bands = [(0usize, 2usize), (3, 5), (6, kmax)];
        let mut cover = Array2::<u8>::zeros((grid.ny, grid.nx));
        for (lo, hi) in bands {
            let m = radial_band_mask(&grid, &FrequencyBand { k_min: lo, k_max: hi });
            for ((j, i), &b) in m.indexed_iter() {
                cover[(j, i)] += b as u8;
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }
}
