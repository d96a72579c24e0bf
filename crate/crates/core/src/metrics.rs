//! Figures of merit for reconstructed images: visibility, SNR, relative
//! frequency response and Gaussian curve fits.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::estimator::{run_ensemble_with, DetectorSpec, EnsembleOptions};
use crate::lattice::GridSpec;
use crate::optics::{make_slit_grating, ArmParams, ObjectMask};
use crate::oracle::{gamma_exact, OracleConfig};
use crate::source::{sigma_from_coherence_length, SourceParams};

/// `(max - min) / (max + min)` over `roi`. Constant images give 0.
pub fn visibility(image: &[f64], roi: &[usize]) -> Result<f64> {
    if roi.is_empty() {
        return Err(invalid("roi", "region of interest is empty"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &i in roi {
        let v = *image
            .get(i)
            .ok_or_else(|| invalid("roi", format!("index {i} outside image of {}", image.len())))?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi == 0.0 && lo == 0.0 {
        return Err(Error::Degenerate("region of interest is all zero".into()));
    }
    if hi == lo {
        return Ok(0.0);
    }
    Ok((hi - lo) / (hi + lo))
}

fn mean_std(image: &[f64], region: &[usize]) -> Result<(f64, f64)> {
    if region.is_empty() {
        return Err(invalid("region", "must not be empty"));
    }
    let vals: Vec<f64> = region
        .iter()
        .map(|&i| {
            image.get(i).copied().ok_or_else(|| {
                invalid(
                    "region",
                    format!("index {i} outside image of {}", image.len()),
                )
            })
        })
        .collect::<Result<_>>()?;
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

/// `(mean_signal - mean_background) / std_background`.
///
/// A background without variance gives `±∞` (or 0 when the means agree);
/// callers can test with [`f64::is_infinite`].
pub fn snr(image: &[f64], signal: &[usize], background: &[usize]) -> Result<f64> {
    if signal.iter().any(|i| background.contains(i)) {
        return Err(invalid("regions", "signal and background overlap"));
    }
    let (ms, _) = mean_std(image, signal)?;
    let (mb, sb) = mean_std(image, background)?;
    let diff = ms - mb;
    if sb == 0.0 {
        return Ok(if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        });
    }
    Ok(diff / sb)
}

/// Open and closed pixels of a binary mask, each eroded by `margin` μm so
/// edge blur does not leak between them. Returns `(open, closed)`.
pub fn mask_regions(mask: &ObjectMask, margin: f64) -> (Vec<usize>, Vec<usize>) {
    let g = mask.grid();
    let r = (margin / g.pitch()).ceil().max(0.0) as i64;
    let open: Vec<bool> = mask.transmission().iter().map(|t| t.norm() > 0.5).collect();
    let (nx, ny) = (g.nx() as i64, g.ny() as i64);
    let ry = if ny > 1 { r } else { 0 };
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let here = open[(iy * nx + ix) as usize];
            let mut uniform = true;
            'scan: for dy in -ry..=ry {
                for dx in -r..=r {
                    let (x, y) = (ix + dx, iy + dy);
                    if x < 0 || y < 0 || x >= nx || y >= ny {
                        continue;
                    }
                    if open[(y * nx + x) as usize] != here {
                        uniform = false;
                        break 'scan;
                    }
                }
            }
            if uniform {
                let i = (iy * nx + ix) as usize;
                if here {
                    inner.push(i);
                } else {
                    outer.push(i);
                }
            }
        }
    }
    (inner, outer)
}

/// Pixels inside the bounding box of the open region, widened by `margin`
/// μm on each active axis.
pub fn bounding_roi(mask: &ObjectMask, margin: f64) -> Vec<usize> {
    let g = mask.grid();
    let open = mask.open_pixels();
    if open.is_empty() {
        return Vec::new();
    }
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for i in &open {
        let (ix, iy) = (i % g.nx(), i / g.nx());
        x0 = x0.min(ix);
        x1 = x1.max(ix);
        y0 = y0.min(iy);
        y1 = y1.max(iy);
    }
    let m = (margin / g.pitch()).round() as usize;
    let (x0, x1) = (x0.saturating_sub(m), (x1 + m).min(g.nx() - 1));
    let (y0, y1) = if g.ny() > 1 {
        (y0.saturating_sub(m), (y1 + m).min(g.ny() - 1))
    } else {
        (0, 0)
    };
    let mut out = Vec::new();
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            out.push(g.index(ix, iy));
        }
    }
    out
}

/// Root mean square of `image` over `region` divided by the image maximum.
pub fn background_to_peak(image: &[f64], region: &[usize]) -> Result<f64> {
    if region.is_empty() {
        return Err(invalid("region", "must not be empty"));
    }
    let peak = image.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Degenerate("image has no positive peak".into()));
    }
    let ms = region.iter().map(|&i| image[i] * image[i]).sum::<f64>() / region.len() as f64;
    Ok(ms.sqrt() / peak)
}

/// Result of [`first_order_response`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderResponse {
    /// `(|Î(k₁)|/|Î(0)|) / (|T̂(k₁)|/|T̂(0)|)`.
    pub rfr: f64,
    /// `|Î(k₁)| / |Î(0)|`.
    pub image_ratio: f64,
    /// `|T̂(k₁)| / |T̂(0)|`.
    pub object_ratio: f64,
}

fn spectrum_at(values: impl Iterator<Item = Complex64>, grid: &GridSpec, q: f64) -> Complex64 {
    let nx = grid.nx();
    values
        .enumerate()
        .map(|(i, v)| v * Complex64::cis(-q * grid.x_at(i % nx)))
        .sum()
}

/// Relative response of the image at the grating's first order along x.
/// The analysis window is the whole grid, which must hold a whole number of
/// periods.
pub fn first_order_response(
    image: &[f64],
    mask: &ObjectMask,
    period: f64,
) -> Result<FirstOrderResponse> {
    let g = mask.grid();
    if image.len() != g.len() {
        return Err(Error::GridMismatch(format!(
            "image has {} samples, mask grid {}",
            image.len(),
            g.len()
        )));
    }
    if !(period.is_finite() && period > 0.0) || g.width() < period * (1.0 - 1e-12) {
        return Err(invalid(
            "period",
            format!("{period} μm does not fit in the {} μm window", g.width()),
        ));
    }
    let cycles = g.width() / period;
    if (cycles - cycles.round()).abs() > 1e-9 * cycles {
        return Err(invalid(
            "period",
            format!("{period} μm does not divide the {} μm window", g.width()),
        ));
    }
    let k1 = 2.0 * PI / period;
    let img = |q| spectrum_at(image.iter().map(|v| Complex64::new(*v, 0.0)), g, q).norm();
    let obj = |q| spectrum_at(mask.transmission().iter().copied(), g, q).norm();
    let (i0, o0) = (img(0.0), obj(0.0));
    if i0 == 0.0 || o0 == 0.0 {
        return Err(Error::Degenerate("zero-order component vanishes".into()));
    }
    let image_ratio = img(k1) / i0;
    let object_ratio = obj(k1) / o0;
    if object_ratio == 0.0 {
        return Err(Error::Degenerate(
            "object has no first-order component".into(),
        ));
    }
    Ok(FirstOrderResponse {
        rfr: image_ratio / object_ratio,
        image_ratio,
        object_ratio,
    })
}

/// One point of a frequency-response curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseRow {
    /// Slit width, μm.
    pub csl: f64,
    /// `l_c / period`.
    pub ffc: f64,
    pub rfr: f64,
    /// Batch standard error of `rfr` (simulated rows only).
    pub rfr_se: Option<f64>,
    /// Response measured on the fluctuation image (simulated rows only).
    pub rfr_fluct: Option<f64>,
}

/// Where response-curve images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Oracle {
        grid: GridSpec,
        arm: ArmParams,
    },
    Estimator {
        grid: GridSpec,
        arm: ArmParams,
        k_max: f64,
        realizations: u64,
        seed: u64,
        options: EnsembleOptions,
    },
}

impl ImageSource {
    fn grid(&self) -> &GridSpec {
        match self {
            Self::Oracle { grid, .. } | Self::Estimator { grid, .. } => grid,
        }
    }
}

/// Number of whole periods of a `(width, gap)` grating that fill the grid
/// window.
pub fn filling_count(width: f64, gap: f64, grid: &GridSpec) -> usize {
    ((grid.width() + 1e-9 * grid.pitch()) / (width + gap)).floor() as usize
}

/// Relative frequency response of each `(width, gap)` grating at coherence
/// length `l_c`, sorted by increasing `ffc`. Each grating repeats across the
/// whole window.
pub fn response_curve(
    gratings: &[(f64, f64)],
    l_c: f64,
    source: &ImageSource,
) -> Result<Vec<ResponseRow>> {
    let sigma = sigma_from_coherence_length(l_c)?;
    let grid = *source.grid();
    let mut rows = Vec::with_capacity(gratings.len());
    for (index, &(width, gap)) in gratings.iter().enumerate() {
        let period = width + gap;
        let count = filling_count(width, gap, &grid);
        if count == 0 {
            return Err(invalid(
                "grating",
                format!("period {period} μm exceeds the {} μm window", grid.width()),
            ));
        }
        let mask = make_slit_grating(width, gap, count, &grid)?;
        let ffc = l_c / period;
        let row = match source {
            ImageSource::Oracle { arm, .. } => {
                let cfg = OracleConfig::new(sigma, 1.0, *arm)?;
                let gamma = gamma_exact(&mask, &cfg, (0.0, 0.0))?;
                let re: Vec<f64> = gamma.iter().map(|z| z.re).collect();
                ResponseRow {
                    csl: width,
                    ffc,
                    rfr: first_order_response(&re, &mask, period)?.rfr,
                    rfr_se: None,
                    rfr_fluct: None,
                }
            }
            ImageSource::Estimator {
                arm,
                k_max,
                realizations,
                seed,
                options,
                ..
            } => {
                let params = SourceParams::new(sigma, 1.0, *k_max)?;
                let det = DetectorSpec::center_pixel(&grid);
                let leg_seed = crate::source::splitmix64(seed ^ index as u64);
                let result = run_ensemble_with(
                    &params,
                    &mask,
                    arm,
                    &det,
                    *realizations,
                    leg_seed,
                    *options,
                )?;
                let re = |g: &[Complex64]| -> Vec<f64> { g.iter().map(|z| z.re).collect() };
                let gamma = result.gamma.as_ref().expect("pixel detector");
                let rfr = first_order_response(&re(gamma), &mask, period)?.rfr;
                let per_batch: Vec<f64> = result
                    .batches
                    .iter()
                    .map(|b| {
                        first_order_response(
                            &re(b.gamma.as_ref().expect("pixel detector")),
                            &mask,
                            period,
                        )
                        .map(|r| r.rfr)
                    })
                    .collect::<Result<_>>()?;
                let b = per_batch.len() as f64;
                let se = if per_batch.len() > 1 {
                    let m = per_batch.iter().sum::<f64>() / b;
                    (per_batch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
                } else {
                    f64::NAN
                };
                let fluct = first_order_response(&result.g_fluct, &mask, period)?.rfr;
                ResponseRow {
                    csl: width,
                    ffc,
                    rfr,
                    rfr_se: Some(se),
                    rfr_fluct: Some(fluct),
                }
            }
        };
        rows.push(row);
    }
    rows.sort_by(|a, b| a.ffc.total_cmp(&b.ffc));
    Ok(rows)
}

/// Least-squares fit of `A exp(-(ffc/w)²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub width: f64,
    pub r_squared: f64,
}

impl GaussianFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (-(x / self.width).powi(2)).exp()
    }
}

/// Fits `rfr ≈ A exp(-(ffc/w)²)` by Levenberg-Marquardt, started from a
/// log-linear fit of the positive rows.
pub fn fit_gaussian(rows: &[ResponseRow]) -> Result<GaussianFit> {
    let x: Vec<f64> = rows.iter().map(|r| r.ffc).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.rfr).collect();
    fit_gaussian_xy(&x, &y)
}

pub fn fit_gaussian_xy(x: &[f64], y: &[f64]) -> Result<GaussianFit> {
    if x.len() < 3 || x.len() != y.len() {
        return Err(invalid(
            "rows",
            format!("need at least 3 points, got {}", x.len()),
        ));
    }
    if x.iter().all(|v| *v == x[0]) {
        return Err(Error::Degenerate("all abscissae are equal".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("rows", "values must be finite"));
    }
    // Start: ln y = ln A - x²/w² on the positive points.
    let pos: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(a, b)| (a * a, b.ln()))
        .collect();
    let ymax = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xspan = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let (mut a, mut b) = (ymax.max(1e-12), 1.0 / (xspan * xspan).max(1e-300));
    if pos.len() >= 2 && pos.iter().any(|p| p.0 != pos[0].0) {
        let n = pos.len() as f64;
        let mx = pos.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pos.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pos.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pos.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        if slope < 0.0 {
            b = -slope;
            a = (my - slope * mx).exp();
        }
    }
    // Parameters (A, b) with model A exp(-b x²), b = 1/w².
    let sse = |a: f64, b: f64| -> f64 {
        x.iter()
            .zip(y)
            .map(|(xi, yi)| (yi - a * (-b * xi * xi).exp()).powi(2))
            .sum()
    };
    let mut lambda = 1e-3;
    let mut cost = sse(a, b);
    for _ in 0..200 {
        let (mut jtj, mut jtr) = ([[0.0f64; 2]; 2], [0.0f64; 2]);
        for (xi, yi) in x.iter().zip(y) {
            let e = (-b * xi * xi).exp();
            let r = yi - a * e;
            let j = [e, -a * xi * xi * e];
            for p in 0..2 {
                jtr[p] += j[p] * r;
                for q in 0..2 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let mut improved = false;
        for _ in 0..30 {
            let m = [
                [jtj[0][0] * (1.0 + lambda), jtj[0][1]],
                [jtj[1][0], jtj[1][1] * (1.0 + lambda)],
            ];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det == 0.0 || !det.is_finite() {
                lambda *= 10.0;
                continue;
            }
            let da = (jtr[0] * m[1][1] - jtr[1] * m[0][1]) / det;
            let db = (m[0][0] * jtr[1] - m[1][0] * jtr[0]) / det;
            let (na, nb) = (a + da, b + db);
            let nc = sse(na, nb);
            if nb > 0.0 && nc.is_finite() && nc <= cost {
                let done = (cost - nc) <= 1e-30 + 1e-15 * cost;
                a = na;
                b = nb;
                cost = nc;
                lambda = (lambda * 0.3).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_squared = if sst > 0.0 { 1.0 - cost / sst } else { 1.0 };
    Ok(GaussianFit {
        amplitude: a,
        width: 1.0 / b.sqrt(),
        r_squared,
    })
}

/// Standard deviation of a peaked profile from a least-squares parabola fit
/// to `ln(value)` over samples above `floor` times the peak.
pub fn fit_profile_std(x: &[f64], values: &[f64], floor: f64) -> Result<f64> {
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::Degenerate("profile has no positive peak".into()));
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > floor * peak)
        .map(|(a, v)| (*a, (v / peak).ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Degenerate(
            "fewer than three samples above the floor".into(),
        ));
    }
    // Normal equations for ln v = c0 + c1 x + c2 x².
    let mut s = [0.0f64; 5];
    let mut t = [0.0f64; 3];
    for (xi, yi) in &pts {
        let mut p = 1.0;
        for (k, sk) in s.iter_mut().enumerate() {
            *sk += p;
            if k < 3 {
                t[k] += p * yi;
            }
            p *= xi;
        }
    }
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let c = solve3(m, t).ok_or_else(|| Error::Degenerate("singular profile fit".into()))?;
    if !(c[2] < 0.0) {
        return Err(Error::Degenerate("profile is not peaked".into()));
    }
    Ok((-1.0 / (2.0 * c[2])).sqrt())
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|a, c| m[*a][col].abs().total_cmp(&m[*c][col].abs()))?;
        if m[piv][col] == 0.0 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            let pivot_row = m[col];
            for (dst, src) in m[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Some(x)
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("profiles", "need two profiles of equal length ≥ 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("constant profile".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// `‖a - b‖₂ / ‖b‖₂`.
pub fn relative_rms(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(invalid("points", "need ≥ 2 positive (x, y) pairs"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values equal".into()));
    }
    Ok(sxy / sxx)
}
