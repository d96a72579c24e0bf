//! Uniform sampling grids, complex field containers and the transform
//! conventions shared by every other module.
//!
//! Coordinates are centered: sample `j` on an axis of `n` points sits at
//! `(j - n/2) * pitch`, with integer division, so the origin is always a
//! sample. The conjugate frequency axis uses the same indexing with spacing
//! `2π / (n * pitch)` rad/μm.
//!
//! The forward transform is the Riemann sum of the continuous Fourier
//! integral,
//!
//! ```text
//! T(k) = Σ_x t(x) exp(-i k·x) · pitch^d
//! ```
//!
//! and the inverse carries the matching `Δk^d / (2π)^d` weight, so discrete
//! results approach the continuous integrals as the grid is refined. An axis
//! with a single sample is inert: it contributes no weight and no phase, which
//! is how one-dimensional (slit) problems run through the two-dimensional
//! code path.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};

/// Sample counts and physical pitch (μm) of a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    pitch: f64,
}

/// Builds a centered grid of `nx × ny` samples spaced `pitch` μm apart.
pub fn make_grid(nx: usize, ny: usize, pitch: f64) -> Result<GridSpec> {
    GridSpec::new(nx, ny, pitch)
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, pitch: f64) -> Result<Self> {
        if nx == 0 {
            return Err(invalid("n_x", "must be at least 1"));
        }
        if ny == 0 {
            return Err(invalid("n_y", "must be at least 1"));
        }
        if !(pitch.is_finite() && pitch > 0.0) {
            return Err(invalid("pitch", format!("must be positive, got {pitch}")));
        }
        Ok(Self { nx, ny, pitch })
    }

    /// One-dimensional grid (`n_y = 1`).
    pub fn line(n: usize, pitch: f64) -> Result<Self> {
        Self::new(n, 1, pitch)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Total number of samples.
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_1d(&self) -> bool {
        self.ny == 1
    }

    /// Number of axes with more than one sample.
    pub fn active_dims(&self) -> u32 {
        u32::from(self.nx > 1) + u32::from(self.ny > 1)
    }

    /// Row-major flat index (y outer, x inner).
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn center_x(&self) -> usize {
        self.nx / 2
    }

    pub fn center_y(&self) -> usize {
        self.ny / 2
    }

    /// Flat index of the origin sample.
    pub fn center_index(&self) -> usize {
        self.index(self.center_x(), self.center_y())
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        centered(ix, self.nx) * self.pitch
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        centered(iy, self.ny) * self.pitch
    }

    pub fn x_coords(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x_at(i)).collect()
    }

    pub fn y_coords(&self) -> Vec<f64> {
        (0..self.ny).map(|i| self.y_at(i)).collect()
    }

    /// Conjugate frequency spacing along x, rad/μm.
    pub fn dk_x(&self) -> f64 {
        2.0 * PI / (self.nx as f64 * self.pitch)
    }

    pub fn dk_y(&self) -> f64 {
        2.0 * PI / (self.ny as f64 * self.pitch)
    }

    pub fn kx_at(&self, ix: usize) -> f64 {
        centered(ix, self.nx) * self.dk_x()
    }

    pub fn ky_at(&self, iy: usize) -> f64 {
        centered(iy, self.ny) * self.dk_y()
    }

    pub fn kx_coords(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.kx_at(i)).collect()
    }

    pub fn ky_coords(&self) -> Vec<f64> {
        (0..self.ny).map(|i| self.ky_at(i)).collect()
    }

    /// Spatial integration weight of one sample, `pitch^d`.
    pub fn spatial_cell(&self) -> f64 {
        self.pitch.powi(self.active_dims() as i32)
    }

    /// Spectral integration weight of one mode, `Δk^d`.
    pub fn spectral_cell(&self) -> f64 {
        let mut cell = 1.0;
        if self.nx > 1 {
            cell *= self.dk_x();
        }
        if self.ny > 1 {
            cell *= self.dk_y();
        }
        cell
    }

    /// Largest representable frequency magnitude along either active axis.
    pub fn nyquist(&self) -> f64 {
        PI / self.pitch
    }

    /// Physical extent of the periodic window along x (μm).
    pub fn width(&self) -> f64 {
        self.nx as f64 * self.pitch
    }

    pub fn height(&self) -> f64 {
        self.ny as f64 * self.pitch
    }

    /// `|k|²` of every mode in flat order.
    pub fn k_squared(&self) -> Vec<f64> {
        let kx = self.kx_coords();
        let ky = self.ky_coords();
        let mut out = Vec::with_capacity(self.len());
        for y in &ky {
            for x in &kx {
                out.push(x * x + y * y);
            }
        }
        out
    }
}

fn centered(i: usize, n: usize) -> f64 {
    i as f64 - (n / 2) as f64
}

/// Which optical plane a field lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Plane {
    Source,
    Object,
    Focal,
    Reference2f,
    Spectrum,
}

impl Plane {
    /// True for planes sampled in frequency rather than position.
    pub fn is_spectral(self) -> bool {
        matches!(self, Plane::Focal | Plane::Spectrum)
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Source => "source",
            Plane::Object => "object",
            Plane::Focal => "focal",
            Plane::Reference2f => "reference-2f",
            Plane::Spectrum => "spectrum",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Complex samples on a grid, tagged with the plane they belong to.
///
/// Spectral planes (`Focal`, `Spectrum`) are indexed by the conjugate
/// frequencies of `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    samples: Vec<Complex64>,
    plane: Plane,
}

impl ComplexField {
    pub fn new(grid: GridSpec, samples: Vec<Complex64>, plane: Plane) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a {}x{} grid",
                samples.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        if let Some(i) = samples
            .iter()
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            grid,
            samples,
            plane,
        })
    }

    pub fn zeros(grid: GridSpec, plane: Plane) -> Self {
        Self {
            grid,
            samples: vec![Complex64::new(0.0, 0.0); grid.len()],
            plane,
        }
    }

    /// Trusted constructor for internal producers whose output is finite by
    /// construction.
    pub(crate) fn from_parts(grid: GridSpec, samples: Vec<Complex64>, plane: Plane) -> Self {
        debug_assert_eq!(samples.len(), grid.len());
        Self {
            grid,
            samples,
            plane,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    /// Same samples, relabelled as another plane.
    pub fn retag(mut self, plane: Plane) -> Self {
        self.plane = plane;
        self
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.samples.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `Σ |f|² · cell`, with the cell matching the plane's domain.
    pub fn energy(&self) -> f64 {
        let cell = if self.plane.is_spectral() {
            self.grid.spectral_cell() / (2.0 * PI).powi(self.grid.active_dims() as i32)
        } else {
            self.grid.spatial_cell()
        };
        self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * cell
    }
}

/// Cached FFT plans for one grid shape, applying the centered index
/// convention. Transforms here are unscaled; callers apply physical weights.
#[derive(Clone)]
pub struct SpectralPlan {
    grid: GridSpec,
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("grid", &self.grid)
            .finish()
    }
}

impl SpectralPlan {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            fwd_x: planner.plan_fft_forward(grid.nx()),
            inv_x: planner.plan_fft_inverse(grid.nx()),
            fwd_y: planner.plan_fft_forward(grid.ny()),
            inv_y: planner.plan_fft_inverse(grid.ny()),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `F[m] = Σ_j f[j] exp(-2πi (m - c)(j - c) / n)` on every axis.
    pub fn forward(&self, data: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.apply(data, scratch, &self.fwd_x, &self.fwd_y);
    }

    /// `f[j] = Σ_m F[m] exp(+2πi (m - c)(j - c) / n)` on every axis.
    pub fn inverse(&self, data: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        self.apply(data, scratch, &self.inv_x, &self.inv_y);
    }

    fn apply(
        &self,
        data: &mut [Complex64],
        scratch: &mut Vec<Complex64>,
        fx: &Arc<dyn Fft<f64>>,
        fy: &Arc<dyn Fft<f64>>,
    ) {
        let (nx, ny) = (self.grid.nx(), self.grid.ny());
        assert_eq!(data.len(), nx * ny, "buffer does not match plan grid");
        let need = fx
            .get_inplace_scratch_len()
            .max(fy.get_inplace_scratch_len())
            .max(ny);
        if scratch.len() < need {
            scratch.resize(need, Complex64::new(0.0, 0.0));
        }
        if nx > 1 {
            let cx = nx / 2;
            for row in data.chunks_exact_mut(nx) {
                row.rotate_left(cx);
                fx.process_with_scratch(row, &mut scratch[..fx.get_inplace_scratch_len()]);
                row.rotate_right(cx);
            }
        }
        if ny > 1 {
            let cy = ny / 2;
            let mut column = vec![Complex64::new(0.0, 0.0); ny];
            for ix in 0..nx {
                for (iy, v) in column.iter_mut().enumerate() {
                    *v = data[iy * nx + ix];
                }
                column.rotate_left(cy);
                fy.process_with_scratch(&mut column, &mut scratch[..fy.get_inplace_scratch_len()]);
                column.rotate_right(cy);
                for (iy, v) in column.iter().enumerate() {
                    data[iy * nx + ix] = *v;
                }
            }
        }
    }
}

/// Forward transform of a spatial-plane field onto its conjugate grid.
pub fn dft_forward(field: &ComplexField) -> Result<ComplexField> {
    if field.plane().is_spectral() {
        return Err(Error::WrongPlane {
            expected: "spatial",
            found: field.plane(),
        });
    }
    let grid = *field.grid();
    let plan = SpectralPlan::new(grid);
    let mut data = field.samples().to_vec();
    plan.forward(&mut data, &mut Vec::new());
    let cell = grid.spatial_cell();
    data.iter_mut().for_each(|z| *z *= cell);
    Ok(ComplexField::from_parts(grid, data, Plane::Spectrum))
}

/// Inverse of [`dft_forward`]; the result is tagged as the source plane.
pub fn dft_inverse(spectrum: &ComplexField) -> Result<ComplexField> {
    if spectrum.plane() != Plane::Spectrum {
        return Err(Error::WrongPlane {
            expected: "spectrum",
            found: spectrum.plane(),
        });
    }
    let grid = *spectrum.grid();
    let plan = SpectralPlan::new(grid);
    let mut data = spectrum.samples().to_vec();
    plan.inverse(&mut data, &mut Vec::new());
    let weight = grid.spectral_cell() / (2.0 * PI).powi(grid.active_dims() as i32);
    data.iter_mut().for_each(|z| *z *= weight);
    Ok(ComplexField::from_parts(grid, data, Plane::Source))
}

/// Spatial frequency seen at focal-plane position `x_f` behind a lens of
/// focal length `f`: `u = 2π x_f / (λ f)`.
pub fn focal_coordinate_map(lambda: f64, f: f64, x_f: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(invalid("lambda", format!("must be positive, got {lambda}")));
    }
    if !(f.is_finite() && f > 0.0) {
        return Err(invalid("f", format!("must be positive, got {f}")));
    }
    Ok(2.0 * PI * x_f / (lambda * f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Direct double sum of the forward transform, straight from the
    /// coordinate arrays.
    fn brute_forward(grid: &GridSpec, f: &[Complex64]) -> Vec<Complex64> {
        let (xs, ys) = (grid.x_coords(), grid.y_coords());
        let (kxs, kys) = (grid.kx_coords(), grid.ky_coords());
        let cell = grid.spatial_cell();
        let mut out = Vec::with_capacity(grid.len());
        for ky in &kys {
            for kx in &kxs {
                let mut acc = c(0.0, 0.0);
                for (iy, y) in ys.iter().enumerate() {
                    for (ix, x) in xs.iter().enumerate() {
                        let phase = -(kx * x + ky * y);
                        acc += f[grid.index(ix, iy)] * Complex64::cis(phase);
                    }
                }
                out.push(acc * cell);
            }
        }
        out
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den.max(f64::MIN_POSITIVE)).sqrt()
    }

    fn lcg_field(n: usize, seed: u64) -> Vec<Complex64> {
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut next = move || {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        (0..n).map(|_| c(next(), next())).collect()
    }

    #[test]
    fn grid_coordinates_are_centered() {
        let g = make_grid(8, 1, 10.0).unwrap();
        assert_eq!(
            g.x_coords(),
            vec![-40.0, -30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0]
        );
        assert!((g.dk_x() - 0.078_539_816_339_744_83).abs() < 1e-15);
        let single = make_grid(1, 1, 5.0).unwrap();
        assert_eq!(single.x_coords(), vec![0.0]);
        assert_eq!(single.y_coords(), vec![0.0]);
        assert_eq!(single.active_dims(), 0);
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(make_grid(0, 1, 1.0).is_err());
        assert!(make_grid(4, 0, 1.0).is_err());
        assert!(make_grid(4, 1, 0.0).is_err());
        assert!(make_grid(4, 1, -2.0).is_err());
        assert!(make_grid(4, 1, f64::NAN).is_err());
    }

    #[test]
    fn odd_grids_keep_origin_on_a_sample() {
        let g = make_grid(5, 3, 2.0).unwrap();
        assert_eq!(g.x_coords(), vec![-4.0, -2.0, 0.0, 2.0, 4.0]);
        assert_eq!(g.y_coords(), vec![-2.0, 0.0, 2.0]);
        assert_eq!(g.kx_at(g.center_x()), 0.0);
    }

    #[test]
    fn field_rejects_wrong_length_and_nan() {
        let g = GridSpec::line(4, 1.0).unwrap();
        assert!(ComplexField::new(g, vec![c(0.0, 0.0); 3], Plane::Source).is_err());
        let mut s = vec![c(0.0, 0.0); 4];
        s[2] = c(f64::NAN, 0.0);
        assert!(matches!(
            ComplexField::new(g, s, Plane::Source),
            Err(Error::NonFinite(2))
        ));
    }

    #[test]
    fn impulse_transforms_to_flat_pitch() {
        let g = GridSpec::line(16, 10.0).unwrap();
        let mut s = vec![c(0.0, 0.0); 16];
        s[g.center_index()] = c(1.0, 0.0);
        let spec = dft_forward(&ComplexField::new(g, s, Plane::Object).unwrap()).unwrap();
        assert_eq!(spec.plane(), Plane::Spectrum);
        for z in spec.samples() {
            assert!((z - c(10.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_brute_force_16() {
        let g = GridSpec::line(16, 3.5).unwrap();
        let f = lcg_field(16, 7);
        let fast = dft_forward(&ComplexField::new(g, f.clone(), Plane::Source).unwrap()).unwrap();
        assert!(rel_err(fast.samples(), &brute_forward(&g, &f)) < 1e-12);
    }

    #[test]
    fn zero_field_inverts_to_zero() {
        let g = GridSpec::line(32, 1.0).unwrap();
        let z = ComplexField::zeros(g, Plane::Spectrum);
        let back = dft_inverse(&z).unwrap();
        assert!(back.samples().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn single_mode_inverts_to_plane_wave() {
        let g = GridSpec::line(32, 2.0).unwrap();
        let m = g.center_x() + 3;
        let k0 = g.kx_at(m);
        let mut s = vec![c(0.0, 0.0); 32];
        s[m] = c(1.0, 0.0);
        let field = dft_inverse(&ComplexField::new(g, s, Plane::Spectrum).unwrap()).unwrap();
        let scale = g.dk_x() / (2.0 * PI);
        for (x, v) in g.x_coords().iter().zip(field.samples()) {
            let expect = Complex64::cis(k0 * x) * scale;
            assert!((v - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn transforms_check_plane_tags() {
        let g = GridSpec::line(4, 1.0).unwrap();
        assert!(dft_forward(&ComplexField::zeros(g, Plane::Spectrum)).is_err());
        assert!(dft_inverse(&ComplexField::zeros(g, Plane::Source)).is_err());
    }

    #[test]
    fn focal_map_examples() {
        assert_eq!(focal_coordinate_map(0.5, 2.5e5, 0.0).unwrap(), 0.0);
        let u = focal_coordinate_map(0.5, 2.5e5, 1000.0).unwrap();
        assert!((u - 0.050_265_5).abs() < 1e-7);
        let u2 = focal_coordinate_map(0.5, 2.5e5, 2000.0).unwrap();
        assert!((u2 - 2.0 * u).abs() < 1e-15);
        assert!(focal_coordinate_map(0.0, 1.0, 1.0).is_err());
        assert!(focal_coordinate_map(1.0, -1.0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn forward_equals_direct_sum(nx in 1usize..=64, ny in prop::sample::select(vec![1usize, 2, 3, 8]),
                                     pitch in 0.1f64..50.0, seed in any::<u64>()) {
            prop_assume!(nx * ny <= 64);
            let g = GridSpec::new(nx, ny, pitch).unwrap();
            let f = lcg_field(g.len(), seed);
            let fast = dft_forward(&ComplexField::new(g, f.clone(), Plane::Source).unwrap()).unwrap();
            prop_assert!(rel_err(fast.samples(), &brute_forward(&g, &f)) < 1e-10);
        }

        #[test]
        fn parseval_holds(nx in 1usize..=4096, pitch in 0.1f64..50.0, seed in any::<u64>()) {
            let g = GridSpec::line(nx, pitch).unwrap();
            let field = ComplexField::new(g, lcg_field(nx, seed), Plane::Source).unwrap();
            let spec = dft_forward(&field).unwrap();
            let (a, b) = (field.energy(), spec.energy());
            prop_assert!(((a - b) / a).abs() < 1e-10, "{} vs {}", a, b);
        }

        #[test]
        fn parseval_holds_2d(nx in 1usize..=64, ny in 2usize..=64, seed in any::<u64>()) {
            let g = GridSpec::new(nx, ny, 1.7).unwrap();
            let field = ComplexField::new(g, lcg_field(g.len(), seed), Plane::Source).unwrap();
            let spec = dft_forward(&field).unwrap();
            let (a, b) = (field.energy(), spec.energy());
            prop_assert!(((a - b) / a).abs() < 1e-10);
        }

        #[test]
        fn round_trip_is_identity(nx in 1usize..=128, ny in prop::sample::select(vec![1usize, 4, 7]), seed in any::<u64>()) {
            let g = GridSpec::new(nx, ny, 0.8).unwrap();
            let f = lcg_field(g.len(), seed);
            let field = ComplexField::new(g, f.clone(), Plane::Source).unwrap();
            let back = dft_inverse(&dft_forward(&field).unwrap()).unwrap();
            prop_assert!(rel_err(back.samples(), &f) < 1e-12);
        }

        #[test]
        fn coordinates_strictly_increase(n in 1usize..512, pitch in 0.01f64..100.0) {
            let g = GridSpec::line(n, pitch).unwrap();
            for w in g.x_coords().windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(((w[1] - w[0]) - pitch).abs() <= 1e-9 * pitch.max(1.0));
            }
            let dk = g.dk_x();
            for w in g.kx_coords().windows(2) {
                prop_assert!(((w[1] - w[0]) - dk).abs() <= 1e-9 * dk);
            }
        }
    }
}
