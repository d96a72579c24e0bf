//! Deterministic evaluation of the correlation function
//!
//! ```text
//! Γ(u, x) = (I/4) ∫ exp(-2|k|²/σ²) T(u - k) exp(-i k·x) d^d k
//! ```
//!
//! by direct quadrature over frequency, plus the equivalent spatial route
//! (object convolved with a Gaussian spreading function). Nothing here goes
//! through the FFT code path used by the Monte Carlo estimator.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::estimator::DetectorSpec;
use crate::lattice::GridSpec;
use crate::optics::{ArmParams, ObjectMask};

/// Minimum frequency half-span of the quadrature grid, in units of σ.
pub const MIN_SPAN_SIGMAS: f64 = 6.0;
/// Maximum quadrature spacing, in units of σ.
pub const MAX_SPACING_SIGMAS: f64 = 1.0 / 8.0;

/// Parameters of an oracle evaluation.
///
/// The quadrature grid is derived from the mask grid: with `refinement = 1`
/// the nodes are the conjugate frequencies of the mask, which makes the
/// result periodic over the mask window exactly like the discrete estimator.
/// Larger refinements subdivide the spacing and close the interval with
/// trapezoid end weights, approximating the continuous integral instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub sigma: f64,
    pub mode_intensity: f64,
    pub arm: ArmParams,
    pub refinement: usize,
}

impl OracleConfig {
    pub fn new(sigma: f64, mode_intensity: f64, arm: ArmParams) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if !(mode_intensity.is_finite() && mode_intensity > 0.0) {
            return Err(invalid(
                "mode_intensity",
                format!("must be positive, got {mode_intensity}"),
            ));
        }
        Ok(Self {
            sigma,
            mode_intensity,
            arm,
            refinement: 1,
        })
    }

    pub fn with_refinement(mut self, refinement: usize) -> Result<Self> {
        if refinement == 0 {
            return Err(invalid("refinement", "must be at least 1"));
        }
        self.refinement = refinement;
        Ok(self)
    }

    /// `exp(-2|k|²/σ²)`, the squared spectral weight.
    pub fn weight_squared(&self, k2: f64) -> f64 {
        (-2.0 * k2 / (self.sigma * self.sigma)).exp()
    }

    /// Quadrature nodes and weights for `grid`, checked against the
    /// resolution requirements.
    pub fn quadrature(&self, grid: &GridSpec) -> Result<Quadrature> {
        let x = axis_rule(grid.nx(), grid.pitch(), self.refinement);
        let y = axis_rule(grid.ny(), grid.pitch(), self.refinement);
        for (name, rule, n) in [("x", &x, grid.nx()), ("y", &y, grid.ny())] {
            if n == 1 {
                continue;
            }
            let span = PI / grid.pitch();
            if span < MIN_SPAN_SIGMAS * self.sigma {
                return Err(Error::GridMismatch(format!(
                    "quadrature half-span {span:.6} rad/μm along {name} is below {MIN_SPAN_SIGMAS}σ = {:.6}",
                    MIN_SPAN_SIGMAS * self.sigma
                )));
            }
            if rule.spacing > MAX_SPACING_SIGMAS * self.sigma * (1.0 + 1e-12) {
                return Err(Error::GridMismatch(format!(
                    "quadrature spacing {:.6} rad/μm along {name} exceeds σ/8 = {:.6}",
                    rule.spacing,
                    MAX_SPACING_SIGMAS * self.sigma
                )));
            }
        }
        Ok(Quadrature { x, y })
    }
}

/// One-dimensional quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub x: AxisRule,
    pub y: AxisRule,
}

fn axis_rule(n: usize, pitch: f64, refinement: usize) -> AxisRule {
    if n == 1 {
        return AxisRule {
            nodes: vec![0.0],
            weights: vec![1.0],
            spacing: 0.0,
        };
    }
    let dk = 2.0 * PI / (n as f64 * pitch);
    if refinement == 1 {
        let nodes = (0..n).map(|i| (i as f64 - (n / 2) as f64) * dk).collect();
        return AxisRule {
            nodes,
            weights: vec![dk; n],
            spacing: dk,
        };
    }
    let h = dk / refinement as f64;
    let half = (n * refinement) / 2;
    let count = 2 * half + 1;
    let nodes: Vec<f64> = (0..count).map(|i| (i as f64 - half as f64) * h).collect();
    let mut weights = vec![h; count];
    weights[0] *= 0.5;
    weights[count - 1] *= 0.5;
    AxisRule {
        nodes,
        weights,
        spacing: h,
    }
}

/// `M[a][b] = exp(-i q_a · s_b)`, row-major.
fn phase_matrix(q: &[f64], s: &[f64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(q.len() * s.len());
    for qa in q {
        for sb in s {
            out.push(Complex64::cis(-qa * sb));
        }
    }
    out
}

/// Mask spectrum `T(qx, qy) = Σ t(x, y) exp(-i(qx x + qy y)) · cell` on the
/// product of the given frequency lists, row-major with `qy` outer.
pub fn mask_spectrum(mask: &ObjectMask, qx: &[f64], qy: &[f64]) -> Vec<Complex64> {
    let g = mask.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let t = mask.transmission();
    let px = phase_matrix(qx, &g.x_coords());
    let py = phase_matrix(qy, &g.y_coords());
    let cell = g.spatial_cell();
    // Stage 1: along x for every row.
    let mut rows = vec![Complex64::new(0.0, 0.0); ny * qx.len()];
    for iy in 0..ny {
        let row = &t[iy * nx..(iy + 1) * nx];
        if row.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
            continue;
        }
        for (a, out) in rows[iy * qx.len()..(iy + 1) * qx.len()]
            .iter_mut()
            .enumerate()
        {
            let ph = &px[a * nx..(a + 1) * nx];
            *out = row
                .iter()
                .zip(ph)
                .filter(|(v, _)| v.re != 0.0 || v.im != 0.0)
                .map(|(v, p)| v * p)
                .sum();
        }
    }
    // Stage 2: along y.
    let mut out = vec![Complex64::new(0.0, 0.0); qx.len() * qy.len()];
    for (b, qrow) in out.chunks_exact_mut(qx.len()).enumerate() {
        let ph = &py[b * ny..(b + 1) * ny];
        for (a, v) in qrow.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for iy in 0..ny {
                acc += rows[iy * qx.len() + a] * ph[iy];
            }
            *v = acc * cell;
        }
    }
    out
}

/// Evaluates the correlation at focal frequency `(ux, uy)` on every sample
/// of `out_grid`.
fn gamma_at_frequency(
    mask: &ObjectMask,
    cfg: &OracleConfig,
    quad: &Quadrature,
    u: (f64, f64),
    out_grid: &GridSpec,
) -> Vec<Complex64> {
    let (kx, ky) = (&quad.x.nodes, &quad.y.nodes);
    let qx: Vec<f64> = kx.iter().map(|k| u.0 - k).collect();
    let qy: Vec<f64> = ky.iter().map(|k| u.1 - k).collect();
    let spec = mask_spectrum(mask, &qx, &qy);
    let scale = 0.25 * cfg.mode_intensity;
    // Integrand on the quadrature product grid, weights folded in.
    let mut f = spec;
    for (b, row) in f.chunks_exact_mut(kx.len()).enumerate() {
        for (a, v) in row.iter_mut().enumerate() {
            let k2 = kx[a] * kx[a] + ky[b] * ky[b];
            *v *= scale * cfg.weight_squared(k2) * quad.x.weights[a] * quad.y.weights[b];
        }
    }
    // Separable back-transform: Σ_kx then Σ_ky of f · exp(-i k·x).
    let xs = out_grid.x_coords();
    let ys = out_grid.y_coords();
    let ex = phase_matrix(&xs, kx);
    let ey = phase_matrix(&ys, ky);
    let mut partial = vec![Complex64::new(0.0, 0.0); ky.len() * xs.len()];
    for b in 0..ky.len() {
        let row = &f[b * kx.len()..(b + 1) * kx.len()];
        for (j, out) in partial[b * xs.len()..(b + 1) * xs.len()]
            .iter_mut()
            .enumerate()
        {
            let ph = &ex[j * kx.len()..(j + 1) * kx.len()];
            *out = row.iter().zip(ph).map(|(a, p)| a * p).sum();
        }
    }
    let mut out = Vec::with_capacity(out_grid.len());
    for iy in 0..ys.len() {
        let ph = &ey[iy * ky.len()..(iy + 1) * ky.len()];
        for jx in 0..xs.len() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (b, p) in ph.iter().enumerate() {
                acc += partial[b * xs.len() + jx] * p;
            }
            out.push(acc);
        }
    }
    out
}

/// `Γ(u(x_f), x_2f)` on the mask grid. `x_f = (0, 0)` gives the on-axis
/// correlation.
pub fn gamma_exact(
    mask: &ObjectMask,
    cfg: &OracleConfig,
    x_f: (f64, f64),
) -> Result<Vec<Complex64>> {
    gamma_on_grid(mask, cfg, x_f, mask.grid())
}

/// As [`gamma_exact`] on an arbitrary output grid.
pub fn gamma_on_grid(
    mask: &ObjectMask,
    cfg: &OracleConfig,
    x_f: (f64, f64),
    out_grid: &GridSpec,
) -> Result<Vec<Complex64>> {
    if !(x_f.0.is_finite() && x_f.1.is_finite()) {
        return Err(invalid("x_f", "focal position must be finite"));
    }
    let quad = cfg.quadrature(mask.grid())?;
    let u = (cfg.arm.frequency_at(x_f.0), cfg.arm.frequency_at(x_f.1));
    Ok(gamma_at_frequency(mask, cfg, &quad, u, out_grid))
}

/// Correlation at a focal offset together with the on-axis reference it is
/// predicted to factor into.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetCorrelation {
    pub grid: GridSpec,
    /// Focal frequency `(ux, uy)` of the offset.
    pub u: (f64, f64),
    pub gamma: Vec<Complex64>,
    pub on_axis: Vec<Complex64>,
}

impl OffsetCorrelation {
    /// Predicted linear phase slope along x, `-2π x_f / (λ f)`.
    pub fn predicted_slope(&self) -> f64 {
        -self.u.0
    }

    /// `max | |Γ(u)| - |Γ(0)| | / max |Γ(0)|`.
    pub fn modulus_deviation(&self) -> f64 {
        let peak = self.on_axis.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let dev = self
            .gamma
            .iter()
            .zip(&self.on_axis)
            .map(|(a, b)| (a.norm() - b.norm()).abs())
            .fold(0.0, f64::max);
        if peak > 0.0 {
            dev / peak
        } else {
            dev
        }
    }

    /// Least-squares slope of the unwrapped phase of `Γ(u)/Γ(0)` along the
    /// x axis at the central row, using samples with `|x| ≤ half_width`.
    pub fn fitted_slope(&self, half_width: f64) -> Result<f64> {
        let g = self.grid;
        let row = g.center_y();
        let mut xs = Vec::new();
        let mut phases = Vec::new();
        for ix in 0..g.nx() {
            let x = g.x_at(ix);
            if x.abs() > half_width {
                continue;
            }
            let i = g.index(ix, row);
            let r = self.gamma[i] * self.on_axis[i].conj();
            if r.norm() == 0.0 {
                continue;
            }
            xs.push(x);
            phases.push(r.arg());
        }
        if xs.len() < 2 {
            return Err(Error::Degenerate(
                "fewer than two usable phase samples".into(),
            ));
        }
        unwrap_phase(&mut phases);
        Ok(linear_slope(&xs, &phases))
    }
}

fn unwrap_phase(p: &mut [f64]) {
    for i in 1..p.len() {
        let mut d = p[i] - p[i - 1];
        while d > PI {
            p[i] -= 2.0 * PI;
            d -= 2.0 * PI;
        }
        while d < -PI {
            p[i] += 2.0 * PI;
            d += 2.0 * PI;
        }
    }
}

fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Correlation at a focal offset `x_f`, with the on-axis reference.
pub fn gamma_offset(
    mask: &ObjectMask,
    cfg: &OracleConfig,
    x_f: (f64, f64),
) -> Result<OffsetCorrelation> {
    let quad = cfg.quadrature(mask.grid())?;
    let u = (cfg.arm.frequency_at(x_f.0), cfg.arm.frequency_at(x_f.1));
    Ok(OffsetCorrelation {
        grid: *mask.grid(),
        u,
        gamma: gamma_at_frequency(mask, cfg, &quad, u, mask.grid()),
        on_axis: gamma_at_frequency(mask, cfg, &quad, (0.0, 0.0), mask.grid()),
    })
}

/// Field correlation integrated over a bucket aperture on the focal grid
/// (the mask's conjugate grid), each focal sample weighted by its frequency
/// cell.
pub fn bucket_gamma_integral(
    mask: &ObjectMask,
    cfg: &OracleConfig,
    aperture: &DetectorSpec,
) -> Result<Vec<Complex64>> {
    let g = *mask.grid();
    let (xr, yr) = match aperture {
        DetectorSpec::Bucket { x, y } => (x.clone(), y.clone()),
        DetectorSpec::Pixel { ix, iy } => (*ix..ix + 1, *iy..iy + 1),
    };
    aperture.validate(&g)?;
    let quad = cfg.quadrature(&g)?;
    let cell = g.spectral_cell();
    let mut total = vec![Complex64::new(0.0, 0.0); g.len()];
    for iy in yr {
        for ix in xr.clone() {
            let u = (g.kx_at(ix), g.ky_at(iy));
            let part = gamma_at_frequency(mask, cfg, &quad, u, &g);
            for (t, p) in total.iter_mut().zip(part) {
                *t += p * cell;
            }
        }
    }
    Ok(total)
}

/// Object convolved with the spreading function `exp(-σ²|x|²/8)`.
///
/// `shape` holds `Σ_j t_j · cell · exp(-σ²|x - x_j|²/8)` summed over the
/// periodic images of the window, and `prefactor` is the constant that
/// turns it into the correlation: `(I/4)(π/2)^{d/2} σ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionImage {
    pub grid: GridSpec,
    pub prefactor: f64,
    pub shape: Vec<Complex64>,
}

impl ConvolutionImage {
    pub fn scaled(&self) -> Vec<Complex64> {
        self.shape.iter().map(|z| z * self.prefactor).collect()
    }

    /// `|shape|` divided by its maximum.
    pub fn normalized(&self) -> Vec<f64> {
        let m: Vec<f64> = self.shape.iter().map(|z| z.norm()).collect();
        let peak = m.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            m.iter().map(|v| v / peak).collect()
        } else {
            m
        }
    }
}

/// Number of periodic images summed on each side in
/// [`image_psf_convolution`].
const IMAGES: i64 = 2;

fn convolve_axis(
    data: &[Complex64],
    n: usize,
    stride: usize,
    count: usize,
    pitch: f64,
    sigma: f64,
) -> Vec<Complex64> {
    // Kernel indexed by separation in samples, including periodic images.
    let kernel: Vec<f64> = (0..n)
        .map(|d| {
            (-IMAGES..=IMAGES)
                .map(|m| {
                    let s = (d as i64 + m * n as i64) as f64 * pitch;
                    (-sigma * sigma * s * s / 8.0).exp()
                })
                .sum()
        })
        .collect();
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for line in 0..count {
        let base = if stride == 1 { line * n } else { line };
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                let v = data[base + j * stride];
                if v.re == 0.0 && v.im == 0.0 {
                    continue;
                }
                let d = (i as i64 - j as i64).rem_euclid(n as i64) as usize;
                acc += v * kernel[d];
            }
            out[base + i * stride] = acc;
        }
    }
    out
}

/// Spatial route: the object convolved with the Gaussian spreading function
/// of standard deviation `2/σ`, on the mask grid.
pub fn image_psf_convolution(
    mask: &ObjectMask,
    sigma: f64,
    mode_intensity: f64,
) -> Result<ConvolutionImage> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    let g = *mask.grid();
    let mut data: Vec<Complex64> = mask
        .transmission()
        .iter()
        .map(|t| t * g.spatial_cell())
        .collect();
    if g.nx() > 1 {
        data = convolve_axis(&data, g.nx(), 1, g.ny(), g.pitch(), sigma);
    }
    if g.ny() > 1 {
        data = convolve_axis(&data, g.ny(), g.nx(), g.nx(), g.pitch(), sigma);
    }
    let d = g.active_dims() as i32;
    let prefactor = 0.25 * mode_intensity * ((PI / 2.0).sqrt() * sigma).powi(d);
    Ok(ConvolutionImage {
        grid: g,
        prefactor,
        shape: data,
    })
}

/// Peak-normalized point spread function `exp(-σ²|x|²/8)` on `grid`.
pub fn psf_profile(grid: &GridSpec, sigma: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    for y in grid.y_coords() {
        for x in grid.x_coords() {
            out.push((-sigma * sigma * (x * x + y * y) / 8.0).exp());
        }
    }
    out
}

/// Closed-form relative frequency response `exp(-2 k₁²/σ²)` of a grating
/// with period `period` μm.
pub fn frequency_response(period: f64, sigma: f64) -> f64 {
    let k1 = 2.0 * PI / period;
    (-2.0 * k1 * k1 / (sigma * sigma)).exp()
}

/// Relative error `‖a - b‖∞ / ‖b‖∞`.
pub fn relative_max_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let err = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::make_slit_grating;
    use crate::source::sigma_from_coherence_length;
    use proptest::prelude::*;

    fn sigma() -> f64 {
        sigma_from_coherence_length(75.0).unwrap()
    }

    fn cfg() -> OracleConfig {
        OracleConfig::new(sigma(), 1.0, ArmParams::default()).unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec::line(256, 10.0).unwrap()
    }

    fn peak(v: &[Complex64]) -> f64 {
        v.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn open_aperture_is_constant() {
        let g = grid();
        let gamma = gamma_exact(&ObjectMask::open(g), &cfg(), (0.0, 0.0)).unwrap();
        let first = gamma[0];
        assert!(gamma
            .iter()
            .all(|z| (z - first).norm() < 1e-12 * first.norm()));
        // Only the DC node survives: (I/4) · N·p · Δk = (I/4)·2π.
        assert!((first.re - 0.25 * 2.0 * PI).abs() < 1e-12);
        let conv = image_psf_convolution(&ObjectMask::open(g), sigma(), 1.0).unwrap();
        let n = conv.normalized();
        assert!(n.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn point_object_gives_gaussian() {
        let g = grid();
        let gamma = gamma_exact(&ObjectMask::point(g), &cfg(), (0.0, 0.0)).unwrap();
        let p = peak(&gamma);
        let psf = psf_profile(&g, sigma());
        for (z, e) in gamma.iter().zip(&psf) {
            assert!((z.norm() / p - e).abs() < 1e-9);
        }
        let conv = image_psf_convolution(&ObjectMask::point(g), sigma(), 1.0).unwrap();
        for (v, e) in conv.normalized().iter().zip(&psf) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn routes_agree_on_two_slits() {
        let g = grid();
        let mask = make_slit_grating(300.0, 900.0, 2, &g).unwrap();
        let a = gamma_exact(&mask, &cfg(), (0.0, 0.0)).unwrap();
        let b = image_psf_convolution(&mask, sigma(), 1.0).unwrap().scaled();
        assert!(relative_max_error(&a, &b) < 1e-6);
    }

    #[test]
    fn routes_agree_in_2d() {
        let g = GridSpec::new(136, 140, 10.0).unwrap();
        let mask = ObjectMask::from_fn(g, |x, y| {
            if x.abs() < 60.0 && (y - 20.0).abs() < 40.0 {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let a = gamma_exact(&mask, &cfg(), (0.0, 0.0)).unwrap();
        let conv = image_psf_convolution(&mask, sigma(), 1.0).unwrap();
        let err = relative_max_error(&a, &conv.scaled());
        assert!(err < 1e-6, "{err}");
        assert!((conv.prefactor - 0.25 * PI / 2.0 * sigma() * sigma()).abs() < 1e-15);
    }

    #[test]
    fn separated_slits_have_dark_midpoint() {
        let g = GridSpec::line(512, 10.0).unwrap();
        let mask = make_slit_grating(200.0, 1600.0, 2, &g).unwrap();
        let img = image_psf_convolution(&mask, sigma(), 1.0)
            .unwrap()
            .normalized();
        let mid = img[g.center_x()];
        assert!(mid <= 1e-6, "{mid}");
    }

    #[test]
    fn image_is_upright() {
        let g = grid();
        let mask = ObjectMask::from_fn(g, |x, _| if (x - 400.0).abs() < 50.0 { 1.0 } else { 0.0 })
            .unwrap();
        let gamma = gamma_exact(&mask, &cfg(), (0.0, 0.0)).unwrap();
        let (imax, _) = gamma
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap();
        assert!((g.x_at(imax) - 400.0).abs() <= 10.0);
    }

    #[test]
    fn grating_response_matches_closed_form() {
        // 4800 μm window holds whole periods of 1200 μm.
        let g = GridSpec::line(384, 12.5).unwrap();
        let mask = make_slit_grating(300.0, 900.0, 4, &g).unwrap();
        let gamma = gamma_exact(&mask, &cfg(), (0.0, 0.0)).unwrap();
        let k1 = 2.0 * PI / 1200.0;
        let spec = |v: &[Complex64], q: f64| -> Complex64 {
            g.x_coords()
                .iter()
                .zip(v)
                .map(|(x, z)| z * Complex64::cis(-q * x))
                .sum()
        };
        let t = mask.transmission();
        let ratio = (spec(&gamma, k1).norm() / spec(&gamma, 0.0).norm())
            / (spec(t, k1).norm() / spec(t, 0.0).norm());
        let expect = frequency_response(1200.0, sigma());
        assert!((ratio - expect).abs() < 1e-4 * expect);
        assert!((expect - 0.96218).abs() < 1e-5);
    }

    #[test]
    fn quadrature_limits_enforced() {
        let coarse = GridSpec::line(256, 15.0).unwrap();
        assert!(matches!(
            gamma_exact(&ObjectMask::open(coarse), &cfg(), (0.0, 0.0)),
            Err(Error::GridMismatch(_))
        ));
        let short = GridSpec::line(64, 10.0).unwrap();
        assert!(gamma_exact(&ObjectMask::open(short), &cfg(), (0.0, 0.0)).is_err());
        assert!(gamma_exact(
            &ObjectMask::open(short),
            &cfg().with_refinement(3).unwrap(),
            (0.0, 0.0)
        )
        .is_ok());
        assert!(cfg().with_refinement(0).is_err());
        assert!(OracleConfig::new(0.0, 1.0, ArmParams::default()).is_err());
    }

    #[test]
    fn refinement_converges_away_from_edges() {
        let g = grid();
        let mask = make_slit_grating(300.0, 900.0, 2, &g).unwrap();
        let r2 = gamma_exact(&mask, &cfg().with_refinement(2).unwrap(), (0.0, 0.0)).unwrap();
        let r4 = gamma_exact(&mask, &cfg().with_refinement(4).unwrap(), (0.0, 0.0)).unwrap();
        let r1 = gamma_exact(&mask, &cfg(), (0.0, 0.0)).unwrap();
        assert!(relative_max_error(&r4, &r2) <= 1e-8);
        assert!(relative_max_error(&r1, &r2) <= 1e-8);
    }

    #[test]
    fn offset_zero_reduces_to_on_axis() {
        let g = grid();
        let mask = make_slit_grating(300.0, 900.0, 2, &g).unwrap();
        let off = gamma_offset(&mask, &cfg(), (0.0, 0.0)).unwrap();
        assert_eq!(off.gamma, off.on_axis);
        assert_eq!(off.gamma, gamma_exact(&mask, &cfg(), (0.0, 0.0)).unwrap());
    }

    #[test]
    fn small_offset_factorizes() {
        let g = GridSpec::line(512, 10.0).unwrap();
        let c = cfg().with_refinement(2).unwrap();
        let x_f = c.arm.position_of(sigma() * 1e-6);
        let two_slit = make_slit_grating(300.0, 900.0, 2, &g).unwrap();
        let off = gamma_offset(&two_slit, &c, (x_f, 0.0)).unwrap();
        assert!(
            off.modulus_deviation() <= 1e-10,
            "{}",
            off.modulus_deviation()
        );

        let open = gamma_offset(&ObjectMask::open(g), &c, (x_f, 0.0)).unwrap();
        assert!(open.modulus_deviation() <= 1e-10);
        let half = 0.5 * g.width() - 6.0 * 2.0 / sigma();
        let slope = open.fitted_slope(half).unwrap();
        let expect = -2.0 * PI * x_f / (c.arm.lambda() * c.arm.focal_length());
        assert!((slope / expect - 1.0).abs() < 1e-3, "{slope} vs {expect}");
    }

    #[test]
    fn large_offset_breaks_modulus_invariance() {
        let g = grid();
        let c = cfg();
        let x_f = c.arm.position_of(sigma());
        let mask = make_slit_grating(300.0, 900.0, 2, &g).unwrap();
        let off = gamma_offset(&mask, &c, (x_f, 0.0)).unwrap();
        assert!(off.modulus_deviation() > 1e-3);
    }

    #[test]
    fn bucket_single_pixel_matches_on_axis() {
        let g = grid();
        let mask = make_slit_grating(300.0, 900.0, 2, &g).unwrap();
        let c = cfg();
        let b = bucket_gamma_integral(&mask, &c, &DetectorSpec::center_pixel(&g)).unwrap();
        let a = gamma_exact(&mask, &c, (0.0, 0.0)).unwrap();
        let cell = g.spectral_cell();
        for (x, y) in b.iter().zip(&a) {
            assert!((x - y * cell).norm() <= 1e-14 * peak(&a));
        }
    }

    #[test]
    fn symmetric_bucket_is_real_and_concentrates() {
        let g = GridSpec::line(128, 10.0).unwrap();
        let mask = make_slit_grating(100.0, 200.0, 3, &g).unwrap();
        let c = cfg().with_refinement(2).unwrap();
        let center = g.center_x();
        let mut prev = 0.0;
        for half in [2usize, 8, 32] {
            let ap = DetectorSpec::Bucket {
                x: center - half..center + half + 1,
                y: 0..1,
            };
            let b = bucket_gamma_integral(&mask, &c, &ap).unwrap();
            let p = peak(&b);
            let imag = b.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
            assert!(imag <= 1e-10 * p, "half {half}: {imag} vs {p}");
            let mut mags: Vec<f64> = b.iter().map(|z| z.norm()).collect();
            mags.sort_by(f64::total_cmp);
            let ratio = p / mags[mags.len() / 2];
            assert!(ratio > prev, "half {half}: {ratio} ≤ {prev}");
            prev = ratio;
        }
        let empty = DetectorSpec::Bucket { x: 4..4, y: 0..1 };
        assert!(bucket_gamma_integral(&mask, &c, &empty).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn linear_in_mask(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let g = GridSpec::line(256, 10.0).unwrap();
            let f1 = move |x: f64, _: f64| ((x * 0.01 + seed as f64).sin() * 0.5).abs();
            let f2 = move |x: f64, _: f64| ((x * 0.003 - seed as f64).cos() * 0.5).abs();
            let m1 = ObjectMask::from_fn(g, f1).unwrap();
            let m2 = ObjectMask::from_fn(g, f2).unwrap();
            let combo: Vec<Complex64> = m1.transmission().iter().zip(m2.transmission())
                .map(|(x, y)| x * a + y * b).collect();
            // The combination may exceed unit transmission; scale it down.
            let s = combo.iter().map(|z| z.norm()).fold(1.0, f64::max);
            let m = ObjectMask::new(g, combo.iter().map(|z| z / s).collect()).unwrap();
            let c = cfg();
            let g1 = gamma_exact(&m1, &c, (0.0, 0.0)).unwrap();
            let g2 = gamma_exact(&m2, &c, (0.0, 0.0)).unwrap();
            let gm = gamma_exact(&m, &c, (0.0, 0.0)).unwrap();
            let expect: Vec<Complex64> = g1.iter().zip(&g2).map(|(x, y)| (x * a + y * b) / s).collect();
            let scale = peak(&g1).max(peak(&g2));
            for (x, y) in gm.iter().zip(&expect) {
                prop_assert!((x - y).norm() <= 1e-12 * scale);
            }
        }

        #[test]
        fn closed_form_response(period in 150.0f64..3000.0) {
            let r = frequency_response(period, sigma());
            prop_assert!(r > 0.0 && r < 1.0);
            prop_assert!(frequency_response(period * 1.1, sigma()) > r);
        }
    }
}
