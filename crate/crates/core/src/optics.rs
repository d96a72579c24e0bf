//! Object masks and the two detection arms.
//!
//! The object sits at the beam-splitter output. Its arm is an f-f system: a
//! lens one focal length away maps the transmitted field onto its Fourier
//! transform, so focal-plane position `x_f` samples spatial frequency
//! `u = 2π x_f / (λ f)`. The reference arm is a 2f-2f relay with a delta
//! kernel and reproduces the source field unchanged. Lens pupils are
//! treated as infinite and constant phases are dropped.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::lattice::{focal_coordinate_map, ComplexField, GridSpec, Plane, SpectralPlan};
use crate::pgm::Graymap;

const TRANSMISSION_SLACK: f64 = 1e-12;

/// Complex transmission `t(x, y)` on the object plane, `|t| ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    grid: GridSpec,
    transmission: Vec<Complex64>,
}

impl ObjectMask {
    pub fn new(grid: GridSpec, transmission: Vec<Complex64>) -> Result<Self> {
        if transmission.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} transmission samples for {} grid points",
                transmission.len(),
                grid.len()
            )));
        }
        for (i, t) in transmission.iter().enumerate() {
            if !(t.re.is_finite() && t.im.is_finite()) {
                return Err(Error::NonFinite(i));
            }
            if t.norm() > 1.0 + TRANSMISSION_SLACK {
                return Err(invalid(
                    "transmission",
                    format!("|t| = {} exceeds 1 at pixel {i}", t.norm()),
                ));
            }
        }
        Ok(Self { grid, transmission })
    }

    /// Builds a real mask from a function of position (μm).
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let xs = grid.x_coords();
        let mut t = Vec::with_capacity(grid.len());
        for y in grid.y_coords() {
            for x in &xs {
                t.push(Complex64::new(f(*x, y), 0.0));
            }
        }
        Self::new(grid, t)
    }

    /// Fully transparent mask.
    pub fn open(grid: GridSpec) -> Self {
        Self {
            grid,
            transmission: vec![Complex64::new(1.0, 0.0); grid.len()],
        }
    }

    pub fn opaque(grid: GridSpec) -> Self {
        Self {
            grid,
            transmission: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    /// A single transparent pixel at the origin.
    pub fn point(grid: GridSpec) -> Self {
        let mut m = Self::opaque(grid);
        m.transmission[grid.center_index()] = Complex64::new(1.0, 0.0);
        m
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn transmission(&self) -> &[Complex64] {
        &self.transmission
    }

    pub fn is_binary(&self) -> bool {
        self.transmission
            .iter()
            .all(|t| t.im == 0.0 && (t.re == 0.0 || t.re == 1.0))
    }

    /// Open area `Σ |t|² · cell` (μm or μm²).
    pub fn open_area(&self) -> f64 {
        self.transmission.iter().map(|t| t.norm_sqr()).sum::<f64>() * self.grid.spatial_cell()
    }

    /// `|t|` per pixel.
    pub fn modulus(&self) -> Vec<f64> {
        self.transmission.iter().map(|t| t.norm()).collect()
    }

    /// Indices of pixels with `|t| > 0.5`.
    pub fn open_pixels(&self) -> Vec<usize> {
        self.transmission
            .iter()
            .enumerate()
            .filter(|(_, t)| t.norm() > 0.5)
            .map(|(i, _)| i)
            .collect()
    }
}

/// A centered grating of `count` transparent slits of `width` separated by
/// opaque gaps of `gap` (μm). The period is `width + gap`. Slits run along y.
pub fn make_slit_grating(
    width: f64,
    gap: f64,
    count: usize,
    grid: &GridSpec,
) -> Result<ObjectMask> {
    if !(width.is_finite() && width > 0.0) {
        return Err(invalid("width", format!("must be positive, got {width}")));
    }
    if !(gap.is_finite() && gap > 0.0) {
        return Err(invalid("gap", format!("must be positive, got {gap}")));
    }
    if count == 0 {
        return Err(invalid("count", "must be at least 1"));
    }
    let period = width + gap;
    let extent = count as f64 * width + (count - 1) as f64 * gap;
    let eps = 1e-9 * grid.pitch();
    if extent > grid.width() + eps {
        return Err(invalid(
            "grating",
            format!(
                "extent {extent} μm exceeds the {} μm grid window",
                grid.width()
            ),
        ));
    }
    let start = -0.5 * extent;
    ObjectMask::from_fn(*grid, |x, _| {
        let rel = x - start;
        if rel < -eps {
            return 0.0;
        }
        let slit = ((rel + eps) / period).floor();
        let within = rel - slit * period;
        if slit < count as f64 && within < width - eps {
            1.0
        } else {
            0.0
        }
    })
}

/// `1 - t` for binary masks.
pub fn complement(mask: &ObjectMask) -> Result<ObjectMask> {
    if let Some((index, t)) = mask
        .transmission
        .iter()
        .enumerate()
        .find(|(_, t)| !(t.im == 0.0 && (t.re == 0.0 || t.re == 1.0)))
    {
        return Err(Error::NonBinaryMask {
            index,
            value: t.to_string(),
        });
    }
    Ok(ObjectMask {
        grid: mask.grid,
        transmission: mask
            .transmission
            .iter()
            .map(|t| Complex64::new(1.0 - t.re, 0.0))
            .collect(),
    })
}

/// Wavelength and focal length of the object-arm lens, both in μm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmParams {
    lambda: f64,
    f: f64,
}

impl ArmParams {
    pub const DEFAULT_LAMBDA: f64 = 0.532;
    pub const DEFAULT_FOCAL_LENGTH: f64 = 250_000.0;

    pub fn new(lambda: f64, f: f64) -> Result<Self> {
        focal_coordinate_map(lambda, f, 0.0)?;
        Ok(Self { lambda, f })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn focal_length(&self) -> f64 {
        self.f
    }

    /// Frequency `u` sampled at focal position `x_f`.
    pub fn frequency_at(&self, x_f: f64) -> f64 {
        2.0 * std::f64::consts::PI * x_f / (self.lambda * self.f)
    }

    /// Focal position that samples frequency `u`.
    pub fn position_of(&self, u: f64) -> f64 {
        u * self.lambda * self.f / (2.0 * std::f64::consts::PI)
    }

    /// Focal-plane x positions (μm) of the conjugate samples of `grid`.
    pub fn focal_positions(&self, grid: &GridSpec) -> Vec<f64> {
        grid.kx_coords()
            .into_iter()
            .map(|u| self.position_of(u))
            .collect()
    }
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            lambda: Self::DEFAULT_LAMBDA,
            f: Self::DEFAULT_FOCAL_LENGTH,
        }
    }
}

pub(crate) fn check_same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!(
            "{}x{} @ {} μm vs {}x{} @ {} μm",
            a.nx(),
            a.ny(),
            a.pitch(),
            b.nx(),
            b.ny(),
            b.pitch()
        )));
    }
    Ok(())
}

/// Writes the focal-plane field `Σ_x t(x) U(x) exp(-i u·x) · cell` into `out`.
pub(crate) fn object_arm_into(
    plan: &SpectralPlan,
    mask: &ObjectMask,
    source: &[Complex64],
    out: &mut Vec<Complex64>,
    scratch: &mut Vec<Complex64>,
) {
    let cell = plan.grid().spatial_cell();
    out.clear();
    out.extend(
        source
            .iter()
            .zip(&mask.transmission)
            .map(|(u, t)| u * t * cell),
    );
    plan.forward(out, scratch);
}

/// Field on the object-arm focal plane, indexed by the conjugate grid of
/// the source (see [`ArmParams::focal_positions`] for the physical axis).
pub fn object_arm_field(
    source: &ComplexField,
    mask: &ObjectMask,
    arm: &ArmParams,
) -> Result<ComplexField> {
    let _ = arm;
    if source.plane().is_spectral() {
        return Err(Error::WrongPlane {
            expected: "source",
            found: source.plane(),
        });
    }
    check_same_grid(source.grid(), mask.grid())?;
    let plan = SpectralPlan::new(*source.grid());
    let mut out = Vec::with_capacity(source.samples().len());
    object_arm_into(&plan, mask, source.samples(), &mut out, &mut Vec::new());
    ComplexField::new(*source.grid(), out, Plane::Focal)
}

/// 2f-2f relay: the detector plane sees the source field itself.
pub fn reference_arm_field(source: &ComplexField) -> ComplexField {
    source.clone().retag(Plane::Reference2f)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".grid");
    PathBuf::from(s)
}

/// Writes `|t|` as an 8-bit graymap (255 ↔ 1) plus a `<path>.grid` sidecar
/// holding the pitch.
pub fn render_mask(mask: &ObjectMask, path: &Path) -> Result<()> {
    let g = mask.grid;
    let pixels = mask
        .transmission
        .iter()
        .map(|t| (t.norm() * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Graymap {
        width: g.nx(),
        height: g.ny(),
        maxval: 255,
        pixels,
        comments: vec![format!("pitch_um={}", g.pitch())],
    }
    .write(path)?;
    fs::write(
        sidecar_path(path),
        format!(
            "nx = {}\nny = {}\npitch_um = {}\n",
            g.nx(),
            g.ny(),
            g.pitch()
        ),
    )?;
    Ok(())
}

/// Reads a mask written by [`render_mask`], taking the pitch from the
/// sidecar file.
pub fn load_mask(path: &Path) -> Result<ObjectMask> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side)
        .map_err(|e| Error::MaskFormat(format!("cannot read sidecar {}: {e}", side.display())))?;
    let mut pitch = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "pitch_um" {
                pitch = Some(v.trim().parse::<f64>().map_err(|_| {
                    Error::MaskFormat(format!("bad pitch `{}` in {}", v.trim(), side.display()))
                })?);
            }
        }
    }
    let pitch =
        pitch.ok_or_else(|| Error::MaskFormat(format!("no pitch_um in {}", side.display())))?;
    load_mask_with_pitch(path, pitch)
}

/// Reads an 8-bit graymap as a real mask with `t = value / maxval`.
pub fn load_mask_with_pitch(path: &Path, pitch: f64) -> Result<ObjectMask> {
    let img = Graymap::read(path)?;
    let grid = GridSpec::new(img.width, img.height, pitch)?;
    let scale = f64::from(img.maxval);
    let t = img
        .pixels
        .iter()
        .map(|p| Complex64::new((f64::from(*p) / scale).min(1.0), 0.0))
        .collect();
    ObjectMask::new(grid, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{draw_speckle, synthesize_source_field, SourceParams, SpeckleDraw};
    use proptest::prelude::*;

    fn line(n: usize, pitch: f64) -> GridSpec {
        GridSpec::line(n, pitch).unwrap()
    }

    fn open_runs(mask: &ObjectMask) -> Vec<(f64, f64)> {
        // (left pixel center, right pixel center) of each transparent run
        let xs = mask.grid().x_coords();
        let mut runs = Vec::new();
        let mut start = None;
        for (i, t) in mask.transmission().iter().enumerate() {
            match (t.re > 0.5, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    runs.push((xs[s], xs[i - 1]));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((xs[s], xs[xs.len() - 1]));
        }
        runs
    }

    #[test]
    fn two_slit_object() {
        let m = make_slit_grating(300.0, 900.0, 2, &line(256, 10.0)).unwrap();
        assert!(m.is_binary());
        assert_eq!(open_runs(&m), vec![(-750.0, -460.0), (450.0, 740.0)]);
        assert_eq!(m.open_pixels().len(), 60);
    }

    #[test]
    fn four_and_six_slit_objects() {
        let four = make_slit_grating(150.0, 450.0, 4, &line(512, 12.5)).unwrap();
        let runs = open_runs(&four);
        assert_eq!(runs.len(), 4);
        for w in runs.windows(2) {
            assert!((w[1].0 - w[0].0 - 600.0).abs() < 1e-9);
        }
        assert_eq!(four.open_pixels().len(), 4 * 12);

        let six = make_slit_grating(200.0, 400.0, 6, &line(512, 10.0)).unwrap();
        let runs = open_runs(&six);
        assert_eq!(runs.len(), 6);
        assert!((runs[1].0 - runs[0].0 - 600.0).abs() < 1e-9);
        assert_eq!(six.open_pixels().len(), 6 * 20);
    }

    #[test]
    fn grating_must_fit() {
        let g = line(64, 10.0);
        assert!(make_slit_grating(300.0, 900.0, 2, &g).is_err());
        assert!(make_slit_grating(0.0, 10.0, 2, &g).is_err());
        assert!(make_slit_grating(10.0, 0.0, 2, &g).is_err());
        assert!(make_slit_grating(10.0, 10.0, 0, &g).is_err());
        // exactly filling the window is allowed
        assert!(make_slit_grating(640.0, 10.0, 1, &g).is_ok());
    }

    #[test]
    fn grating_extends_along_y() {
        let g = GridSpec::new(64, 8, 10.0).unwrap();
        let m = make_slit_grating(100.0, 100.0, 2, &g).unwrap();
        for iy in 0..8 {
            for ix in 0..64 {
                assert_eq!(m.transmission()[g.index(ix, iy)], m.transmission()[ix]);
            }
        }
    }

    #[test]
    fn grating_autocorrelation_peaks_at_period() {
        let g = line(512, 10.0);
        let m = make_slit_grating(150.0, 450.0, 4, &g).unwrap();
        let t = m.modulus();
        let lag_corr = |lag: usize| -> f64 { (0..t.len() - lag).map(|i| t[i] * t[i + lag]).sum() };
        let best = (20..100)
            .max_by(|a, b| lag_corr(*a).total_cmp(&lag_corr(*b)))
            .unwrap();
        assert_eq!(best as f64 * 10.0, 600.0);
    }

    #[test]
    fn complement_examples() {
        let g = line(256, 10.0);
        let open = ObjectMask::open(g);
        assert_eq!(complement(&open).unwrap(), ObjectMask::opaque(g));
        let two = make_slit_grating(300.0, 900.0, 2, &g).unwrap();
        let rev = complement(&two).unwrap();
        assert_eq!(rev.open_pixels().len(), 256 - 60);
        assert_eq!(complement(&rev).unwrap(), two);
        let gray = ObjectMask::from_fn(g, |_, _| 0.5).unwrap();
        assert!(matches!(
            complement(&gray),
            Err(Error::NonBinaryMask { .. })
        ));
    }

    #[test]
    fn mask_rejects_gain() {
        let g = line(4, 1.0);
        assert!(ObjectMask::from_fn(g, |_, _| 1.5).is_err());
        assert!(ObjectMask::new(g, vec![Complex64::new(0.0, 1.0); 4]).is_ok());
    }

    fn params() -> SourceParams {
        SourceParams::from_coherence_length(75.0, 1.0, 11.8).unwrap()
    }

    #[test]
    fn open_mask_focuses_a_plane_wave() {
        let g = line(64, 10.0);
        let m = g.center_x() + 3;
        let mut a = vec![Complex64::new(0.0, 0.0); 64];
        a[m] = Complex64::new(1.0, 0.0);
        let src =
            synthesize_source_field(&SpeckleDraw::from_amplitudes(g, a, 0).unwrap(), &params())
                .unwrap();
        let focal = object_arm_field(&src, &ObjectMask::open(g), &ArmParams::default()).unwrap();
        assert_eq!(focal.plane(), Plane::Focal);
        let mags: Vec<f64> = focal.samples().iter().map(|z| z.norm()).collect();
        let peak = mags.iter().cloned().fold(0.0, f64::max);
        for (i, v) in mags.iter().enumerate() {
            if i == m {
                assert!((v - peak).abs() < 1e-12);
            } else {
                assert!(*v < 1e-12 * peak);
            }
        }
    }

    #[test]
    fn zero_source_gives_zero_focal_field() {
        let g = line(32, 10.0);
        let src = ComplexField::zeros(g, Plane::Source);
        let focal = object_arm_field(&src, &ObjectMask::open(g), &ArmParams::default()).unwrap();
        assert!(focal.samples().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn object_arm_checks_grids() {
        let src = ComplexField::zeros(line(32, 10.0), Plane::Source);
        let mask = ObjectMask::open(line(32, 11.0));
        assert!(matches!(
            object_arm_field(&src, &mask, &ArmParams::default()),
            Err(Error::GridMismatch(_))
        ));
        let spec = ComplexField::zeros(line(32, 10.0), Plane::Spectrum);
        assert!(object_arm_field(
            &spec,
            &ObjectMask::open(line(32, 10.0)),
            &ArmParams::default()
        )
        .is_err());
    }

    /// `½ Σ_k w_k A_k T(u - k)` with `T` summed directly over mask pixels.
    fn mode_sum_focal(draw: &SpeckleDraw, p: &SourceParams, mask: &ObjectMask) -> Vec<Complex64> {
        let g = draw.grid();
        let (xs, ys) = (g.x_coords(), g.y_coords());
        let cell = g.spatial_cell();
        let spectrum = |qx: f64, qy: f64| -> Complex64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for (iy, y) in ys.iter().enumerate() {
                for (ix, x) in xs.iter().enumerate() {
                    acc +=
                        mask.transmission()[g.index(ix, iy)] * Complex64::cis(-(qx * x + qy * y));
                }
            }
            acc * cell
        };
        let (kx, ky) = (g.kx_coords(), g.ky_coords());
        let mut out = Vec::new();
        for uy in &ky {
            for ux in &kx {
                let mut acc = Complex64::new(0.0, 0.0);
                for (jy, vy) in ky.iter().enumerate() {
                    for (jx, vx) in kx.iter().enumerate() {
                        let w = p.spectral_weight(vx * vx + vy * vy);
                        acc += draw.amplitudes()[g.index(jx, jy)]
                            * (0.5 * w)
                            * spectrum(ux - vx, uy - vy);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let n: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let d: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (n / d).sqrt()
    }

    #[test]
    fn focal_field_matches_mode_sum_on_8_points() {
        let g = line(8, 10.0);
        let p = SourceParams::new(0.05, 1.0, 11.8).unwrap();
        let draw = draw_speckle(&p, &g, 17);
        let mask =
            ObjectMask::from_fn(g, |x, _| if (-20.0..20.0).contains(&x) { 1.0 } else { 0.3 })
                .unwrap();
        let src = synthesize_source_field(&draw, &p).unwrap();
        let focal = object_arm_field(&src, &mask, &ArmParams::default()).unwrap();
        assert!(rel(focal.samples(), &mode_sum_focal(&draw, &p, &mask)) < 1e-10);
    }

    #[test]
    fn reference_arm_is_identity() {
        let g = line(64, 10.0);
        let p = params();
        let src = synthesize_source_field(&draw_speckle(&p, &g, 4), &p).unwrap();
        let r = reference_arm_field(&src);
        assert_eq!(r.plane(), Plane::Reference2f);
        assert_eq!(r.samples(), src.samples());
        assert_eq!(reference_arm_field(&r), r);
    }

    #[test]
    fn reference_arm_single_mode() {
        let g = line(64, 10.0);
        let p = params();
        let m = g.center_x() - 2;
        let k0 = g.kx_at(m);
        let amp = Complex64::new(0.3, -0.7);
        let mut a = vec![Complex64::new(0.0, 0.0); 64];
        a[m] = amp;
        let src =
            synthesize_source_field(&SpeckleDraw::from_amplitudes(g, a, 0).unwrap(), &p).unwrap();
        let r = reference_arm_field(&src);
        let w = p.spectral_weight(k0 * k0);
        for (x, v) in g.x_coords().iter().zip(r.samples()) {
            assert!((v - amp * Complex64::cis(k0 * x) * (0.5 * w)).norm() < 1e-14);
        }
    }

    #[test]
    fn mask_round_trip_through_graymap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.pgm");
        let g = line(256, 10.0);
        let m = make_slit_grating(300.0, 900.0, 2, &g).unwrap();
        render_mask(&m, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);

        let dark = dir.path().join("dark.pgm");
        render_mask(
            &ObjectMask::opaque(GridSpec::new(4, 3, 2.0).unwrap()),
            &dark,
        )
        .unwrap();
        let back = load_mask(&dark).unwrap();
        assert!(back.transmission().iter().all(|t| t.norm() == 0.0));
        assert_eq!(back.grid().ny(), 3);
    }

    #[test]
    fn graymap_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        fs::write(&path, b"P5\n3 1\n255\n\x00\x80\xff").unwrap();
        let m = load_mask_with_pitch(&path, 1.0).unwrap();
        let t: Vec<f64> = m.transmission().iter().map(|z| z.re).collect();
        assert_eq!(t[0], 0.0);
        assert!((t[1] - 128.0 / 255.0).abs() < 1e-15);
        assert_eq!(t[2], 1.0);
        fs::write(&path, b"P5\n3 3\n255\n\x00").unwrap();
        assert!(load_mask_with_pitch(&path, 1.0).is_err());
        assert!(load_mask(&dir.path().join("missing.pgm")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn focal_field_matches_mode_sum(n in 1usize..=64, seed in any::<u64>(), frac in 0.1f64..0.9) {
            let g = line(n, 10.0);
            let p = SourceParams::new(0.05, 1.0, 11.8).unwrap();
            let draw = draw_speckle(&p, &g, seed);
            let half = frac * g.width() * 0.5;
            let mask = ObjectMask::from_fn(g, |x, _| if x.abs() <= half { 1.0 } else { 0.0 }).unwrap();
            let src = synthesize_source_field(&draw, &p).unwrap();
            let focal = object_arm_field(&src, &mask, &ArmParams::default()).unwrap();
            let oracle = mode_sum_focal(&draw, &p, &mask);
            let norm: f64 = oracle.iter().map(|z| z.norm_sqr()).sum();
            prop_assume!(norm > 0.0);
            prop_assert!(rel(focal.samples(), &oracle) < 1e-10);
        }

        #[test]
        fn transmission_never_amplifies(seed in any::<u64>(), level in 0.0f64..=1.0) {
            let g = line(128, 10.0);
            let p = params();
            let src = synthesize_source_field(&draw_speckle(&p, &g, seed), &p).unwrap();
            let mask = ObjectMask::from_fn(g, |x, _| if x > 0.0 { level } else { 1.0 }).unwrap();
            let before: f64 = src.intensity().iter().sum();
            let after: f64 = src.samples().iter().zip(mask.transmission()).map(|(u, t)| (u * t).norm_sqr()).sum();
            prop_assert!(after <= before * (1.0 + 1e-12));
        }
    }
}
