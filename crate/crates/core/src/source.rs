//! Pseudo-thermal source: a Gaussian angular spectrum whose plane-wave modes
//! carry independent random complex amplitudes.
//!
//! One [`SpeckleDraw`] is one equal-time snapshot of the mode amplitudes.
//! The field at the beam-splitter output is
//!
//! ```text
//! U(x) = ½ Σ_k exp(-|k|²/σ²) A_k exp(i k·x)
//! ```
//!
//! summed over the conjugate modes of the grid, with modes beyond `k_max`
//! removed. Both beam-splitter outputs carry this same field.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::lattice::{ComplexField, GridSpec, Plane, SpectralPlan};

/// Name of the generator behind every draw, recorded in run manifests.
pub const RNG_DESCRIPTION: &str =
    "ChaCha8Rng (rand_chacha 0.9), per-realization seed = splitmix64(master ^ splitmix64(index))";

/// Statistical law of the per-mode amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AmplitudeLaw {
    /// Circular complex Gaussian: Rayleigh modulus, uniform phase.
    #[default]
    CircularGaussian,
    /// Fixed modulus `sqrt(I)` with uniform phase. Not thermal light; used to
    /// show that the Gaussian-moment check can fail.
    ConstantModulus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    sigma: f64,
    mode_intensity: f64,
    k_max: f64,
    law: AmplitudeLaw,
}

impl SourceParams {
    pub fn new(sigma: f64, mode_intensity: f64, k_max: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if !(mode_intensity.is_finite() && mode_intensity > 0.0) {
            return Err(invalid(
                "mode_intensity",
                format!("must be positive, got {mode_intensity}"),
            ));
        }
        if !(k_max >= 3.0 * sigma) {
            return Err(invalid(
                "k_max",
                format!(
                    "{k_max} truncates the spectrum; need at least 3·sigma = {}",
                    3.0 * sigma
                ),
            ));
        }
        Ok(Self {
            sigma,
            mode_intensity,
            k_max,
            law: AmplitudeLaw::CircularGaussian,
        })
    }

    pub fn from_coherence_length(l_c: f64, mode_intensity: f64, k_max: f64) -> Result<Self> {
        Self::new(sigma_from_coherence_length(l_c)?, mode_intensity, k_max)
    }

    pub fn with_amplitude_law(mut self, law: AmplitudeLaw) -> Self {
        self.law = law;
        self
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mode_intensity(&self) -> f64 {
        self.mode_intensity
    }

    pub fn k_max(&self) -> f64 {
        self.k_max
    }

    pub fn amplitude_law(&self) -> AmplitudeLaw {
        self.law
    }

    /// `1/e` half-width of the complex degree of coherence.
    pub fn coherence_length(&self) -> f64 {
        2.0 * SQRT_2 / self.sigma
    }

    /// Field weight `exp(-|k|²/σ²)` of a mode, zero past the cutoff.
    pub fn spectral_weight(&self, k_squared: f64) -> f64 {
        if k_squared > self.k_max * self.k_max {
            0.0
        } else {
            (-k_squared / (self.sigma * self.sigma)).exp()
        }
    }

    /// Ensemble mean of `|U(x)|²` on `grid`: `(I/4) Σ_k w_k²`.
    pub fn mean_intensity(&self, grid: &GridSpec) -> f64 {
        let s: f64 = grid
            .k_squared()
            .into_iter()
            .map(|k2| self.spectral_weight(k2).powi(2))
            .sum();
        0.25 * self.mode_intensity * s
    }

    /// Rejects grids that cannot represent the spectrum out to 3σ.
    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if grid.active_dims() > 0 && grid.nyquist() < 3.0 * self.sigma {
            return Err(Error::GridMismatch(format!(
                "pitch {} μm resolves |k| ≤ {:.4e} rad/μm, below 3σ = {:.4e}",
                grid.pitch(),
                grid.nyquist(),
                3.0 * self.sigma
            )));
        }
        Ok(())
    }
}

/// Spectral width for a coherence length `l_c` (μm), taking `l_c` as the
/// `1/e` point of `exp(-σ² Δx² / 8)`: `σ = 2√2 / l_c`.
pub fn sigma_from_coherence_length(l_c: f64) -> Result<f64> {
    if !(l_c.is_finite() && l_c > 0.0) {
        return Err(invalid(
            "coherence_length",
            format!("must be positive, got {l_c}"),
        ));
    }
    Ok(2.0 * SQRT_2 / l_c)
}

/// Default evanescent cutoff `2π/λ` for wavelength `lambda` (μm).
pub fn default_k_max(lambda: f64) -> f64 {
    2.0 * PI / lambda
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of realization `index` under master seed `master`.
pub fn realization_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// One realization of the mode amplitudes `A_k` on the conjugate grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeckleDraw {
    grid: GridSpec,
    amplitudes: Vec<Complex64>,
    seed: u64,
}

impl SpeckleDraw {
    /// Wraps explicit amplitudes, e.g. a single excited mode.
    pub fn from_amplitudes(grid: GridSpec, amplitudes: Vec<Complex64>, seed: u64) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} amplitudes for {} modes",
                amplitudes.len(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            amplitudes,
            seed,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

pub(crate) fn fill_amplitudes(params: &SourceParams, seed: u64, out: &mut [Complex64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match params.law {
        AmplitudeLaw::CircularGaussian => {
            let s = (0.5 * params.mode_intensity).sqrt();
            for a in out.iter_mut() {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                *a = Complex64::new(re * s, im * s);
            }
        }
        AmplitudeLaw::ConstantModulus => {
            let s = params.mode_intensity.sqrt();
            for a in out.iter_mut() {
                let phase = rng.random::<f64>() * 2.0 * PI;
                *a = Complex64::from_polar(s, phase);
            }
        }
    }
}

pub fn draw_speckle(params: &SourceParams, grid: &GridSpec, seed: u64) -> SpeckleDraw {
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); grid.len()];
    fill_amplitudes(params, seed, &mut amplitudes);
    SpeckleDraw {
        grid: *grid,
        amplitudes,
        seed,
    }
}

/// Reusable synthesis state: cached mode weights and FFT plans for one grid.
#[derive(Debug, Clone)]
pub struct SpeckleSynthesizer {
    params: SourceParams,
    weights: Vec<f64>,
    plan: SpectralPlan,
}

impl SpeckleSynthesizer {
    pub fn new(params: SourceParams, grid: GridSpec) -> Result<Self> {
        params.check_grid(&grid)?;
        let weights = grid
            .k_squared()
            .into_iter()
            .map(|k2| 0.5 * params.spectral_weight(k2))
            .collect();
        Ok(Self {
            params,
            weights,
            plan: SpectralPlan::new(grid),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.plan.grid()
    }

    pub fn params(&self) -> &SourceParams {
        &self.params
    }

    pub(crate) fn plan(&self) -> &SpectralPlan {
        &self.plan
    }

    /// Writes `U(x)` for given amplitudes into `out`.
    pub fn synthesize_into(
        &self,
        amplitudes: &[Complex64],
        out: &mut Vec<Complex64>,
        scratch: &mut Vec<Complex64>,
    ) {
        out.clear();
        out.extend(amplitudes.iter().zip(&self.weights).map(|(a, w)| a * *w));
        self.plan.inverse(out, scratch);
    }

    /// Draws amplitudes for `seed` and writes the resulting source field.
    pub fn realize_into(
        &self,
        seed: u64,
        amplitudes: &mut Vec<Complex64>,
        out: &mut Vec<Complex64>,
        scratch: &mut Vec<Complex64>,
    ) {
        amplitudes.resize(self.grid().len(), Complex64::new(0.0, 0.0));
        fill_amplitudes(&self.params, seed, amplitudes);
        self.synthesize_into(amplitudes, out, scratch);
    }
}

/// Source-plane field of one draw.
pub fn synthesize_source_field(draw: &SpeckleDraw, params: &SourceParams) -> Result<ComplexField> {
    let synth = SpeckleSynthesizer::new(*params, draw.grid)?;
    let mut out = Vec::with_capacity(draw.grid.len());
    synth.synthesize_into(&draw.amplitudes, &mut out, &mut Vec::new());
    ComplexField::new(draw.grid, out, Plane::Source)
}
