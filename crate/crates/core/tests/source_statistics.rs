//! Ensemble statistics of the synthesized pseudo-thermal source.

use std::f64::consts::PI;

use ghost_core::lattice::GridSpec;
use ghost_core::source::{realization_seed, SourceParams, SpeckleSynthesizer};
use num_complex::Complex64;

const L_C: f64 = 75.0;
const PITCH: f64 = 12.5;
const N: usize = 2048;
const DRAWS: u64 = 100_000;

/// `⟨U(x) U*(x + Δ)⟩`, averaged over draws and positions, for lags
/// `0..=max_lag` pixels, normalized to lag zero.
fn autocorrelation(max_lag: usize) -> Vec<f64> {
    let params = SourceParams::from_coherence_length(L_C, 1.0, 2.0 * PI / 0.532).unwrap();
    let grid = GridSpec::line(N, PITCH).unwrap();
    let synth = SpeckleSynthesizer::new(params, grid).unwrap();
    let (mut amps, mut field, mut scratch) = (Vec::new(), Vec::new(), Vec::new());
    let mut acc = vec![Complex64::new(0.0, 0.0); max_lag + 1];
    for i in 0..DRAWS {
        synth.realize_into(realization_seed(3, i), &mut amps, &mut field, &mut scratch);
        for (lag, a) in acc.iter_mut().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for x in 0..N {
                s += field[x] * field[(x + lag) % N].conj();
            }
            *a += s;
        }
    }
    acc.iter().map(|a| a.norm() / acc[0].norm()).collect()
}

#[test]
fn autocorrelation_is_gaussian_with_width_l_c() {
    let sigma = 2.0 * 2f64.sqrt() / L_C;
    let max_lag = (2.0 * L_C / PITCH).round() as usize;
    let measured = autocorrelation(max_lag);
    for (lag, m) in measured.iter().enumerate() {
        let dx = lag as f64 * PITCH;
        let expect = (-sigma * sigma * dx * dx / 8.0).exp();
        let rel = (m / expect - 1.0).abs();
        assert!(
            rel <= 0.05,
            "lag {dx} μm: measured {m}, expected {expect}, rel {rel}"
        );
    }

    // ln|C| is linear in Δ²; the 1/e point is where the fit reaches -1.
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (lag, m) in measured.iter().enumerate().skip(1) {
        let d2 = (lag as f64 * PITCH).powi(2);
        sxy += d2 * m.ln();
        sxx += d2 * d2;
    }
    let slope = sxy / sxx;
    let one_over_e = (-1.0 / slope).sqrt();
    let rel = (one_over_e / L_C - 1.0).abs();
    assert!(rel <= 0.05, "1/e point {one_over_e} μm vs {L_C} μm");
}
