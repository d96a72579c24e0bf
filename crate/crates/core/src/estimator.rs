//! Monte Carlo estimation of the cross-arm correlation and the ghost image.
//!
//! Each realization draws one speckle snapshot, propagates it through both
//! arms and accumulates
//!
//! * `Γ̂(x) = ⟨U_f(p) · conj(V(x))⟩` for a pixel detector at focal index `p`,
//! * `Ĝ(x) = ⟨D · I₂(x)⟩ - ⟨D⟩⟨I₂(x)⟩`, the intensity-fluctuation image, where
//!   `D` is the object-arm detector signal and `I₂ = |V|²`.
//!
//! Realizations are split into contiguous batches (for standard errors) and
//! each batch into fixed-size chunks. Chunks are summed with compensated
//! arithmetic and combined in index order, so the result depends only on
//! the configuration and master seed, not on how chunks were scheduled.

use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::lattice::GridSpec;
use crate::optics::{check_same_grid, object_arm_into, ArmParams, ObjectMask};
use crate::source::{realization_seed, SourceParams, SpeckleSynthesizer};

/// Realizations per scheduling unit.
const CHUNK: u64 = 512;

/// Default number of batches used for standard errors.
pub const DEFAULT_BATCHES: usize = 10;

/// Object-arm detector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DetectorSpec {
    /// Point detector at focal index `(ix, iy)`.
    Pixel { ix: usize, iy: usize },
    /// Integrating detector over a rectangle of focal indices.
    Bucket { x: Range<usize>, y: Range<usize> },
}

impl DetectorSpec {
    /// Pixel detector on the optical axis (`u = 0`).
    pub fn center_pixel(grid: &GridSpec) -> Self {
        Self::Pixel {
            ix: grid.center_x(),
            iy: grid.center_y(),
        }
    }

    /// Bucket covering the whole focal plane.
    pub fn full_bucket(grid: &GridSpec) -> Self {
        Self::Bucket {
            x: 0..grid.nx(),
            y: 0..grid.ny(),
        }
    }

    pub fn is_pixel(&self) -> bool {
        matches!(self, Self::Pixel { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Pixel { .. } => "pixel",
            Self::Bucket { .. } => "bucket",
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        match self {
            Self::Pixel { ix, iy } => {
                if *ix >= grid.nx() || *iy >= grid.ny() {
                    return Err(invalid(
                        "detector.pixel",
                        format!(
                            "({ix}, {iy}) outside {}x{} focal grid",
                            grid.nx(),
                            grid.ny()
                        ),
                    ));
                }
            }
            Self::Bucket { x, y } => {
                if x.is_empty() || y.is_empty() {
                    return Err(invalid("detector.aperture", "bucket aperture is empty"));
                }
                if x.end > grid.nx() || y.end > grid.ny() {
                    return Err(invalid(
                        "detector.aperture",
                        format!(
                            "{x:?} x {y:?} outside {}x{} focal grid",
                            grid.nx(),
                            grid.ny()
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Scheduling and batching knobs. None of them change the estimate beyond
/// the batch split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnsembleOptions {
    pub batches: usize,
    /// `1` runs serially on the calling thread.
    pub threads: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            batches: DEFAULT_BATCHES,
            threads: 1,
        }
    }
}

/// Estimates from one contiguous batch of realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEstimate {
    pub realizations: u64,
    pub gamma: Option<Vec<Complex64>>,
    pub g_fluct: Vec<f64>,
    pub mean_detector: f64,
    pub mean_reference: Vec<f64>,
    pub mean_product: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub grid: GridSpec,
    pub detector: DetectorSpec,
    pub realizations: u64,
    pub seed: u64,
    /// `Γ̂` per reference pixel (pixel detector only), in mode-sum units.
    pub gamma: Option<Vec<Complex64>>,
    /// `⟨D I₂⟩ - ⟨D⟩⟨I₂⟩` per reference pixel.
    pub g_fluct: Vec<f64>,
    pub mean_detector: f64,
    pub mean_reference: Vec<f64>,
    /// `⟨D I₂⟩` per reference pixel.
    pub mean_product: Vec<f64>,
    pub batches: Vec<BatchEstimate>,
}

impl CorrelationResult {
    /// `Γ̂ · Δk^d`: the mode sum rescaled to the spectral integral, directly
    /// comparable with the quadrature oracle.
    pub fn gamma_integral(&self) -> Option<Vec<Complex64>> {
        let cell = self.grid.spectral_cell();
        self.gamma
            .as_ref()
            .map(|g| g.iter().map(|z| z * cell).collect())
    }

    /// Normalized second-order correlation `⟨D I₂⟩ / (⟨D⟩⟨I₂⟩)`.
    pub fn normalized_correlation(&self) -> Vec<f64> {
        normalized(self.mean_detector, &self.mean_reference, &self.mean_product)
    }
}

fn normalized(d: f64, reference: &[f64], product: &[f64]) -> Vec<f64> {
    reference
        .iter()
        .zip(product)
        .map(|(r, p)| {
            let den = d * r;
            if den > 0.0 {
                p / den
            } else {
                0.0
            }
        })
        .collect()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }

    fn merge(&mut self, other: &Compensated) {
        self.add(other.sum);
        self.add(other.comp);
    }
}

#[derive(Debug, Clone)]
struct Sums {
    count: u64,
    cross_re: Vec<Compensated>,
    cross_im: Vec<Compensated>,
    product: Vec<Compensated>,
    reference: Vec<Compensated>,
    detector: Compensated,
}

impl Sums {
    fn new(n: usize, with_cross: bool) -> Self {
        let cross = if with_cross { n } else { 0 };
        Self {
            count: 0,
            cross_re: vec![Compensated::default(); cross],
            cross_im: vec![Compensated::default(); cross],
            product: vec![Compensated::default(); n],
            reference: vec![Compensated::default(); n],
            detector: Compensated::default(),
        }
    }

    fn merge(&mut self, other: &Sums) {
        self.count += other.count;
        for (a, b) in self.cross_re.iter_mut().zip(&other.cross_re) {
            a.merge(b);
        }
        for (a, b) in self.cross_im.iter_mut().zip(&other.cross_im) {
            a.merge(b);
        }
        for (a, b) in self.product.iter_mut().zip(&other.product) {
            a.merge(b);
        }
        for (a, b) in self.reference.iter_mut().zip(&other.reference) {
            a.merge(b);
        }
        self.detector.merge(&other.detector);
    }

    fn finish(&self) -> BatchEstimate {
        let m = self.count as f64;
        let mean_detector = self.detector.value() / m;
        let mean_reference: Vec<f64> = self.reference.iter().map(|s| s.value() / m).collect();
        let mean_product: Vec<f64> = self.product.iter().map(|s| s.value() / m).collect();
        let g_fluct = mean_product
            .iter()
            .zip(&mean_reference)
            .map(|(p, r)| p - mean_detector * r)
            .collect();
        let gamma = if self.cross_re.is_empty() {
            None
        } else {
            Some(
                self.cross_re
                    .iter()
                    .zip(&self.cross_im)
                    .map(|(re, im)| Complex64::new(re.value() / m, im.value() / m))
                    .collect(),
            )
        };
        BatchEstimate {
            realizations: self.count,
            gamma,
            g_fluct,
            mean_detector,
            mean_reference,
            mean_product,
        }
    }
}

/// Per-run state shared by all work units.
struct Engine<'a> {
    synth: SpeckleSynthesizer,
    mask: &'a ObjectMask,
    detector: &'a DetectorSpec,
    /// `t(x) · cell · exp(-i u_p·x)` for pixel detectors: one focal sample is
    /// a single dot product, no FFT needed.
    pixel_kernel: Option<Vec<Complex64>>,
    seed: u64,
}

impl Engine<'_> {
    fn run_chunk(&self, range: Range<u64>) -> Sums {
        let grid = *self.synth.grid();
        let n = grid.len();
        let mut sums = Sums::new(n, self.pixel_kernel.is_some());
        let (mut amps, mut field, mut focal, mut scratch) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::new(),
        );
        for index in range {
            self.synth.realize_into(
                realization_seed(self.seed, index),
                &mut amps,
                &mut field,
                &mut scratch,
            );
            let (signal, focal_sample) = match (&self.pixel_kernel, self.detector) {
                (Some(kernel), _) => {
                    let u: Complex64 = kernel.iter().zip(&field).map(|(k, v)| k * v).sum();
                    (u.norm_sqr(), u)
                }
                (None, DetectorSpec::Bucket { x, y }) => {
                    object_arm_into(
                        self.synth.plan(),
                        self.mask,
                        &field,
                        &mut focal,
                        &mut scratch,
                    );
                    let mut d = 0.0;
                    for iy in y.clone() {
                        let row = &focal[iy * grid.nx()..(iy + 1) * grid.nx()];
                        d += row[x.clone()].iter().map(|z| z.norm_sqr()).sum::<f64>();
                    }
                    (d, Complex64::new(0.0, 0.0))
                }
                (None, DetectorSpec::Pixel { .. }) => {
                    unreachable!("pixel detectors carry a kernel")
                }
            };
            sums.count += 1;
            sums.detector.add(signal);
            for (i, v) in field.iter().enumerate() {
                let intensity = v.norm_sqr();
                sums.reference[i].add(intensity);
                sums.product[i].add(signal * intensity);
            }
            if !sums.cross_re.is_empty() {
                for (i, v) in field.iter().enumerate() {
                    let c = focal_sample * v.conj();
                    sums.cross_re[i].add(c.re);
                    sums.cross_im[i].add(c.im);
                }
            }
        }
        sums
    }
}

fn pixel_kernel(mask: &ObjectMask, ix: usize, iy: usize) -> Vec<Complex64> {
    let g = mask.grid();
    let (ux, uy) = (g.kx_at(ix), g.ky_at(iy));
    let (xs, ys) = (g.x_coords(), g.y_coords());
    let cell = g.spatial_cell();
    let mut out = Vec::with_capacity(g.len());
    for (jy, y) in ys.iter().enumerate() {
        for (jx, x) in xs.iter().enumerate() {
            // Reduce the phase index modulo n so large grids stay exact.
            let px = ((ix as i64 - g.center_x() as i64) * (jx as i64 - g.center_x() as i64))
                .rem_euclid(g.nx() as i64) as f64;
            let py = ((iy as i64 - g.center_y() as i64) * (jy as i64 - g.center_y() as i64))
                .rem_euclid(g.ny() as i64) as f64;
            let phase = -2.0 * std::f64::consts::PI * (px / g.nx() as f64 + py / g.ny() as f64);
            debug_assert!({
                let direct = -(ux * x + uy * y);
                (Complex64::cis(direct) - Complex64::cis(phase)).norm() < 1e-6
            });
            out.push(mask.transmission()[g.index(jx, jy)] * cell * Complex64::cis(phase));
        }
    }
    out
}

/// Runs `realizations` speckle snapshots and accumulates the correlation
/// estimates, serially with [`DEFAULT_BATCHES`] batches.
pub fn run_ensemble(
    source: &SourceParams,
    mask: &ObjectMask,
    arm: &ArmParams,
    detector: &DetectorSpec,
    realizations: u64,
    seed: u64,
) -> Result<CorrelationResult> {
    run_ensemble_with(
        source,
        mask,
        arm,
        detector,
        realizations,
        seed,
        EnsembleOptions::default(),
    )
}

pub fn run_ensemble_with(
    source: &SourceParams,
    mask: &ObjectMask,
    arm: &ArmParams,
    detector: &DetectorSpec,
    realizations: u64,
    seed: u64,
    options: EnsembleOptions,
) -> Result<CorrelationResult> {
    // The lens only relabels focal coordinates; the estimate is indexed by
    // focal sample.
    let _ = arm;
    if realizations < 2 {
        return Err(invalid(
            "realizations",
            format!("M ≥ 2 realizations are required, got {realizations}"),
        ));
    }
    if options.batches == 0 {
        return Err(invalid("batches", "must be at least 1"));
    }
    let grid = *mask.grid();
    detector.validate(&grid)?;
    let synth = SpeckleSynthesizer::new(*source, grid)?;
    check_same_grid(synth.grid(), &grid)?;
    let kernel = match detector {
        DetectorSpec::Pixel { ix, iy } => Some(pixel_kernel(mask, *ix, *iy)),
        DetectorSpec::Bucket { .. } => None,
    };
    let engine = Engine {
        synth,
        mask,
        detector,
        pixel_kernel: kernel,
        seed,
    };

    let batch_count = (options.batches as u64).min(realizations);
    let bounds: Vec<u64> = (0..=batch_count)
        .map(|b| b * realizations / batch_count)
        .collect();
    let units: Vec<(usize, Range<u64>)> = bounds
        .windows(2)
        .enumerate()
        .flat_map(|(b, w)| {
            let (lo, hi) = (w[0], w[1]);
            (lo..hi)
                .step_by(CHUNK as usize)
                .map(move |s| (b, s..(s + CHUNK).min(hi)))
        })
        .collect();

    let chunk_sums: Vec<Sums> = if options.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.threads)
            .build()
            .map_err(|e| Error::Degenerate(format!("thread pool: {e}")))?;
        pool.install(|| {
            units
                .par_iter()
                .map(|(_, r)| engine.run_chunk(r.clone()))
                .collect()
        })
    } else {
        units
            .iter()
            .map(|(_, r)| engine.run_chunk(r.clone()))
            .collect()
    };

    let with_cross = engine.pixel_kernel.is_some();
    let mut batch_sums: Vec<Sums> = (0..batch_count)
        .map(|_| Sums::new(grid.len(), with_cross))
        .collect();
    for ((b, _), s) in units.iter().zip(&chunk_sums) {
        batch_sums[*b].merge(s);
    }
    let mut total = Sums::new(grid.len(), with_cross);
    for s in &batch_sums {
        total.merge(s);
    }
    let overall = total.finish();
    Ok(CorrelationResult {
        grid,
        detector: detector.clone(),
        realizations,
        seed,
        gamma: overall.gamma,
        g_fluct: overall.g_fluct,
        mean_detector: overall.mean_detector,
        mean_reference: overall.mean_reference,
        mean_product: overall.mean_product,
        batches: batch_sums.iter().map(Sums::finish).collect(),
    })
}

/// Images derived from one [`CorrelationResult`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedImage {
    pub grid: GridSpec,
    /// Fluctuation image divided by its maximum. Noise may leave small
    /// negative values; they are kept so background statistics stay unbiased.
    pub fluctuation: Vec<f64>,
    /// `|Γ̂|²` divided by its maximum (pixel detector only).
    pub gamma_squared: Option<Vec<f64>>,
    /// `|Γ̂|` divided by its maximum (pixel detector only).
    pub gamma_modulus: Option<Vec<f64>>,
    /// `⟨D I₂⟩ / (⟨D⟩⟨I₂⟩)`, not rescaled.
    pub normalized_correlation: Vec<f64>,
}

fn peak_normalize(values: &[f64]) -> Option<Vec<f64>> {
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return None;
    }
    Some(values.iter().map(|v| v / peak).collect())
}

/// Peak-normalized ghost images on the reference-arm axis `x_2f`.
///
/// The axis is reported as-is: the reference relay is an identity map, so
/// image position equals object position.
pub fn reconstruct_image(result: &CorrelationResult) -> Result<ReconstructedImage> {
    if result.realizations < 2 {
        return Err(invalid("realizations", "M ≥ 2 realizations are required"));
    }
    let fluctuation = peak_normalize(&result.g_fluct)
        .ok_or_else(|| Error::Degenerate("fluctuation image has no positive values".into()))?;
    let (gamma_squared, gamma_modulus) = match &result.gamma {
        Some(g) => {
            let sq: Vec<f64> = g.iter().map(|z| z.norm_sqr()).collect();
            let md: Vec<f64> = g.iter().map(|z| z.norm()).collect();
            (peak_normalize(&sq), peak_normalize(&md))
        }
        None => (None, None),
    };
    Ok(ReconstructedImage {
        grid: result.grid,
        fluctuation,
        gamma_squared,
        gamma_modulus,
        normalized_correlation: result.normalized_correlation(),
    })
}

/// Outcome of [`gaussian_moment_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    /// `max_x ||Γ̂|² - Ĝ| / SE(x)`.
    pub statistic: f64,
    /// Reference pixel where the maximum occurs.
    pub worst_pixel: usize,
    /// False when there are too few realizations or batches for the batch
    /// standard error to mean much.
    pub reliable: bool,
}

/// Realization count below which [`MomentCheck::reliable`] is false.
pub const MOMENT_CHECK_MIN_REALIZATIONS: u64 = 1000;

/// Compares the two image estimators, `|Γ̂|²` and the fluctuation image,
/// which coincide for circular Gaussian fields. Standard errors come from
/// the spread of the per-batch differences.
pub fn gaussian_moment_check(result: &CorrelationResult) -> Result<MomentCheck> {
    let gamma = result.gamma.as_ref().ok_or_else(|| {
        invalid(
            "detector",
            "moment check needs a pixel-detector result, got bucket",
        )
    })?;
    let b = result.batches.len();
    let per_batch: Vec<Vec<f64>> = result
        .batches
        .iter()
        .map(|batch| {
            let g = batch
                .gamma
                .as_ref()
                .expect("pixel result batches carry gamma");
            g.iter()
                .zip(&batch.g_fluct)
                .map(|(z, f)| z.norm_sqr() - f)
                .collect()
        })
        .collect();
    let mut best = (0.0f64, 0usize);
    for (i, (z, f)) in gamma.iter().zip(&result.g_fluct).enumerate() {
        let diff = z.norm_sqr() - f;
        let se = if b >= 2 {
            let vals: Vec<f64> = per_batch.iter().map(|v| v[i]).collect();
            let mean = vals.iter().sum::<f64>() / b as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
            (var / b as f64).sqrt()
        } else {
            0.0
        };
        let stat = if se > 0.0 {
            diff.abs() / se
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        if stat > best.0 {
            best = (stat, i);
        }
    }
    Ok(MomentCheck {
        statistic: best.0,
        worst_pixel: best.1,
        reliable: result.realizations >= MOMENT_CHECK_MIN_REALIZATIONS && b >= 2,
    })
}
