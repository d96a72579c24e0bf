//! Run configuration and its plain-text `section.key = value` format.
//!
//! Blank lines and lines starting with `#` are ignored, as are keys under
//! `manifest.`, so a run manifest can be fed back in as a config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::estimator::{DetectorSpec, EnsembleOptions};
use crate::lattice::GridSpec;
use crate::optics::{complement, load_mask, make_slit_grating, ArmParams, ObjectMask};
use crate::oracle::OracleConfig;
use crate::source::{default_k_max, sigma_from_coherence_length, SourceParams};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub enum Coherence {
    /// Coherence length, μm.
    Length(f64),
    /// Spectral width σ, rad/μm.
    Sigma(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectSpec {
    Grating { width: f64, gap: f64, count: usize },
    Point,
    Open,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorConfig {
    /// Focal index; the grid center when absent.
    Pixel(Option<(usize, usize)>),
    /// Focal index ranges along x and y; the whole plane when absent.
    Bucket {
        x: Option<(usize, usize)>,
        y: Option<(usize, usize)>,
    },
}

/// Knobs of the three experiment recipes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentParams {
    /// Slit widths of the frequency-response gratings, μm.
    pub widths: Vec<f64>,
    /// Gap as a multiple of the slit width.
    pub gap_ratio: f64,
    /// Slit counts of the visibility gratings.
    pub counts: Vec<usize>,
    pub slit_width: f64,
    pub slit_gap: f64,
    pub seeds: usize,
    /// Erosion margin for SNR regions, μm.
    pub margin: f64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            widths: vec![300.0, 150.0, 100.0, 75.0],
            gap_ratio: 3.0,
            counts: vec![2, 4, 6],
            slit_width: 200.0,
            slit_gap: 400.0,
            seeds: 10,
            margin: 75.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub coherence: Coherence,
    pub mode_intensity: f64,
    pub k_max: Option<f64>,
    pub arm: ArmParams,
    pub object: ObjectSpec,
    pub complement: bool,
    pub detector: DetectorConfig,
    pub realizations: u64,
    pub seed: u64,
    pub threads: usize,
    pub batches: usize,
    pub output_dir: Option<PathBuf>,
    pub experiment: ExperimentParams,
}

impl Default for ExperimentConfig {
    /// Two slits of 300 μm separated by 900 μm, l_c = 75 μm, 256 samples at
    /// 10 μm, pixel detector on axis.
    fn default() -> Self {
        Self {
            grid: GridSpec::line(256, 10.0).expect("valid default grid"),
            coherence: Coherence::Length(75.0),
            mode_intensity: 1.0,
            k_max: None,
            arm: ArmParams::default(),
            object: ObjectSpec::Grating {
                width: 300.0,
                gap: 900.0,
                count: 2,
            },
            complement: false,
            detector: DetectorConfig::Pixel(None),
            realizations: 10_000,
            seed: 1,
            threads: 1,
            batches: crate::estimator::DEFAULT_BATCHES,
            output_dir: None,
            experiment: ExperimentParams::default(),
        }
    }
}

fn cfg_err(line: Option<usize>, field: &str, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse()
        .map_err(|_| cfg_err(Some(line), key, format!("cannot parse `{v}` as a number")))
}

fn parse_list<T: std::str::FromStr>(
    line: usize,
    key: &str,
    v: &str,
) -> Result<Vec<T>, HarnessError> {
    v.split(',')
        .map(|s| parse_num(line, key, s.trim()))
        .collect()
}

fn parse_pair(line: usize, key: &str, v: &str, sep: &str) -> Result<(usize, usize), HarnessError> {
    let (a, b) = v
        .split_once(sep)
        .ok_or_else(|| cfg_err(Some(line), key, format!("expected `a{sep}b`, got `{v}`")))?;
    Ok((
        parse_num(line, key, a.trim())?,
        parse_num(line, key, b.trim())?,
    ))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, HarnessError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(
            Some(line),
            key,
            format!("expected true or false, got `{v}`"),
        )),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| cfg_err(None, "--config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut c = Self::default();
        let (mut n, mut ny, mut pitch) = (c.grid.nx(), c.grid.ny(), c.grid.pitch());
        let mut kind: Option<(usize, String)> = None;
        let (mut width, mut gap, mut count) = (300.0, 900.0, 2usize);
        let mut path: Option<PathBuf> = None;
        let mut det_kind: Option<(usize, String)> = None;
        let (mut pixel, mut ap_x, mut ap_y) = (None, None, None);
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let ln = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(Some(ln), line, "expected `key = value`"))?;
            let (key, v) = (key.trim(), value.trim());
            if key.starts_with("manifest.") {
                continue;
            }
            if !seen.insert(key.to_string()) {
                return Err(cfg_err(Some(ln), key, "duplicate key"));
            }
            match key {
                "grid.n" => n = parse_num(ln, key, v)?,
                "grid.ny" => ny = parse_num(ln, key, v)?,
                "grid.pitch_um" => pitch = parse_num(ln, key, v)?,
                "source.coherence_length_um" => {
                    c.coherence = Coherence::Length(parse_num(ln, key, v)?)
                }
                "source.sigma" => c.coherence = Coherence::Sigma(parse_num(ln, key, v)?),
                "source.mode_intensity" => c.mode_intensity = parse_num(ln, key, v)?,
                "source.k_max" => c.k_max = Some(parse_num(ln, key, v)?),
                "arm.lambda_um" => {
                    c.arm = ArmParams::new(parse_num(ln, key, v)?, c.arm.focal_length())
                        .map_err(|e| cfg_err(Some(ln), key, e.to_string()))?
                }
                "arm.focal_length_um" => {
                    c.arm = ArmParams::new(c.arm.lambda(), parse_num(ln, key, v)?)
                        .map_err(|e| cfg_err(Some(ln), key, e.to_string()))?
                }
                "object.kind" => kind = Some((ln, v.to_string())),
                "object.width_um" => width = parse_num(ln, key, v)?,
                "object.gap_um" => gap = parse_num(ln, key, v)?,
                "object.count" => count = parse_num(ln, key, v)?,
                "object.complement" => c.complement = parse_bool(ln, key, v)?,
                "object.path" => path = Some(PathBuf::from(v)),
                "detector.kind" => det_kind = Some((ln, v.to_string())),
                "detector.pixel" => pixel = Some(parse_pair(ln, key, v, ",")?),
                "detector.aperture" => ap_x = Some(parse_pair(ln, key, v, "..")?),
                "detector.aperture_y" => ap_y = Some(parse_pair(ln, key, v, "..")?),
                "run.realizations" => c.realizations = parse_num(ln, key, v)?,
                "run.seed" => c.seed = parse_num(ln, key, v)?,
                "run.threads" => c.threads = parse_num(ln, key, v)?,
                "run.batches" => c.batches = parse_num(ln, key, v)?,
                "output.dir" => c.output_dir = Some(PathBuf::from(v)),
                "experiment.widths_um" => c.experiment.widths = parse_list(ln, key, v)?,
                "experiment.gap_ratio" => c.experiment.gap_ratio = parse_num(ln, key, v)?,
                "experiment.counts" => c.experiment.counts = parse_list(ln, key, v)?,
                "experiment.slit_width_um" => c.experiment.slit_width = parse_num(ln, key, v)?,
                "experiment.slit_gap_um" => c.experiment.slit_gap = parse_num(ln, key, v)?,
                "experiment.seeds" => c.experiment.seeds = parse_num(ln, key, v)?,
                "experiment.margin_um" => c.experiment.margin = parse_num(ln, key, v)?,
                _ => return Err(cfg_err(Some(ln), key, "unknown key")),
            }
        }
        c.grid = GridSpec::new(n, ny, pitch).map_err(|e| cfg_err(None, "grid", e.to_string()))?;
        c.object = match kind.as_ref().map(|(l, k)| (*l, k.as_str())) {
            None | Some((_, "grating")) => ObjectSpec::Grating { width, gap, count },
            Some((_, "point")) => ObjectSpec::Point,
            Some((_, "open")) => ObjectSpec::Open,
            Some((l, "file")) => ObjectSpec::File(path.clone().ok_or_else(|| {
                cfg_err(Some(l), "object.path", "required when object.kind = file")
            })?),
            Some((l, other)) => {
                return Err(cfg_err(
                    Some(l),
                    "object.kind",
                    format!("unknown kind `{other}` (grating, point, open, file)"),
                ))
            }
        };
        c.detector = match det_kind.as_ref().map(|(l, k)| (*l, k.as_str())) {
            None | Some((_, "pixel")) => DetectorConfig::Pixel(pixel),
            Some((_, "bucket")) => DetectorConfig::Bucket { x: ap_x, y: ap_y },
            Some((l, other)) => {
                return Err(cfg_err(
                    Some(l),
                    "detector.kind",
                    format!("unknown kind `{other}` (pixel, bucket)"),
                ))
            }
        };
        c.validate()?;
        Ok(c)
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.realizations < 2 {
            return Err(cfg_err(
                None,
                "run.realizations",
                format!("M ≥ 2 realizations are required, got {}", self.realizations),
            ));
        }
        if self.batches == 0 {
            return Err(cfg_err(None, "run.batches", "must be at least 1"));
        }
        if self.threads == 0 {
            return Err(cfg_err(None, "run.threads", "must be at least 1"));
        }
        let params = self
            .source_params()
            .map_err(|e| cfg_err(None, "source", e.to_string()))?;
        params
            .check_grid(&self.grid)
            .map_err(|e| cfg_err(None, "grid", e.to_string()))?;
        self.detector_spec()
            .validate(&self.grid)
            .map_err(|e| cfg_err(None, "detector", e.to_string()))?;
        if let ObjectSpec::Grating { width, gap, count } = self.object {
            make_slit_grating(width, gap, count, &self.grid)
                .map_err(|e| cfg_err(None, "object", e.to_string()))?;
        }
        let e = &self.experiment;
        if e.widths.is_empty() || e.counts.is_empty() || e.seeds == 0 {
            return Err(cfg_err(
                None,
                "experiment",
                "widths, counts and seeds must be non-empty",
            ));
        }
        if !(e.gap_ratio > 0.0 && e.margin >= 0.0) {
            return Err(cfg_err(
                None,
                "experiment",
                "gap_ratio must be positive and margin non-negative",
            ));
        }
        Ok(())
    }

    pub fn sigma(&self) -> crate::Result<f64> {
        match self.coherence {
            Coherence::Length(l) => sigma_from_coherence_length(l),
            Coherence::Sigma(s) => Ok(s),
        }
    }

    pub fn coherence_length(&self) -> crate::Result<f64> {
        match self.coherence {
            Coherence::Length(l) => Ok(l),
            Coherence::Sigma(s) => Ok(2.0 * std::f64::consts::SQRT_2 / s),
        }
    }

    pub fn source_params(&self) -> crate::Result<SourceParams> {
        let k_max = self
            .k_max
            .unwrap_or_else(|| default_k_max(self.arm.lambda()));
        SourceParams::new(self.sigma()?, self.mode_intensity, k_max)
    }

    pub fn oracle_config(&self) -> crate::Result<OracleConfig> {
        OracleConfig::new(self.sigma()?, self.mode_intensity, self.arm)
    }

    pub fn detector_spec(&self) -> DetectorSpec {
        match &self.detector {
            DetectorConfig::Pixel(None) => DetectorSpec::center_pixel(&self.grid),
            DetectorConfig::Pixel(Some((ix, iy))) => DetectorSpec::Pixel { ix: *ix, iy: *iy },
            DetectorConfig::Bucket { x, y } => DetectorSpec::Bucket {
                x: x.map_or(0..self.grid.nx(), |(a, b)| a..b),
                y: y.map_or(0..self.grid.ny(), |(a, b)| a..b),
            },
        }
    }

    pub fn ensemble_options(&self) -> EnsembleOptions {
        EnsembleOptions {
            batches: self.batches,
            threads: self.threads,
        }
    }

    /// Builds the configured object, complemented when requested.
    pub fn mask(&self) -> crate::Result<ObjectMask> {
        let base = match &self.object {
            ObjectSpec::Grating { width, gap, count } => {
                make_slit_grating(*width, *gap, *count, &self.grid)?
            }
            ObjectSpec::Point => ObjectMask::point(self.grid),
            ObjectSpec::Open => ObjectMask::open(self.grid),
            ObjectSpec::File(p) => {
                let m = load_mask(p)?;
                if *m.grid() != self.grid {
                    return Err(crate::Error::GridMismatch(format!(
                        "mask file {} is {}x{} @ {} μm, config grid is {}x{} @ {} μm",
                        p.display(),
                        m.grid().nx(),
                        m.grid().ny(),
                        m.grid().pitch(),
                        self.grid.nx(),
                        self.grid.ny(),
                        self.grid.pitch()
                    )));
                }
                m
            }
        };
        if self.complement {
            complement(&base)
        } else {
            Ok(base)
        }
    }

    /// Serializes every setting; [`Self::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("grid.n", self.grid.nx().to_string());
        kv("grid.ny", self.grid.ny().to_string());
        kv("grid.pitch_um", self.grid.pitch().to_string());
        match self.coherence {
            Coherence::Length(l) => kv("source.coherence_length_um", l.to_string()),
            Coherence::Sigma(x) => kv("source.sigma", x.to_string()),
        }
        kv("source.mode_intensity", self.mode_intensity.to_string());
        if let Some(k) = self.k_max {
            kv("source.k_max", k.to_string());
        }
        kv("arm.lambda_um", self.arm.lambda().to_string());
        kv("arm.focal_length_um", self.arm.focal_length().to_string());
        match &self.object {
            ObjectSpec::Grating { width, gap, count } => {
                kv("object.kind", "grating".into());
                kv("object.width_um", width.to_string());
                kv("object.gap_um", gap.to_string());
                kv("object.count", count.to_string());
            }
            ObjectSpec::Point => kv("object.kind", "point".into()),
            ObjectSpec::Open => kv("object.kind", "open".into()),
            ObjectSpec::File(p) => {
                kv("object.kind", "file".into());
                kv("object.path", p.display().to_string());
            }
        }
        kv("object.complement", self.complement.to_string());
        match &self.detector {
            DetectorConfig::Pixel(p) => {
                kv("detector.kind", "pixel".into());
                if let Some((ix, iy)) = p {
                    kv("detector.pixel", format!("{ix},{iy}"));
                }
            }
            DetectorConfig::Bucket { x, y } => {
                kv("detector.kind", "bucket".into());
                if let Some((a, b)) = x {
                    kv("detector.aperture", format!("{a}..{b}"));
                }
                if let Some((a, b)) = y {
                    kv("detector.aperture_y", format!("{a}..{b}"));
                }
            }
        }
        kv("run.realizations", self.realizations.to_string());
        kv("run.seed", self.seed.to_string());
        kv("run.threads", self.threads.to_string());
        kv("run.batches", self.batches.to_string());
        if let Some(d) = &self.output_dir {
            kv("output.dir", d.display().to_string());
        }
        let e = &self.experiment;
        kv("experiment.widths_um", join(&e.widths));
        kv("experiment.gap_ratio", e.gap_ratio.to_string());
        kv("experiment.counts", join(&e.counts));
        kv("experiment.slit_width_um", e.slit_width.to_string());
        kv("experiment.slit_gap_um", e.slit_gap.to_string());
        kv("experiment.seeds", e.seeds.to_string());
        kv("experiment.margin_um", e.margin.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(ExperimentConfig::parse("").unwrap(), c);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let err = ExperimentConfig::parse("grid.n = 256\ngrid.pitch_um = ten\n").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("line 2") && msg.contains("grid.pitch_um"),
            "{msg}"
        );
        let err = ExperimentConfig::parse("run.realizations = 1\n").unwrap_err();
        assert!(err.to_string().contains("M ≥ 2"), "{err}");
        assert!(ExperimentConfig::parse("bogus.key = 1")
            .unwrap_err()
            .to_string()
            .contains("unknown key"));
        assert!(ExperimentConfig::parse("no equals sign").is_err());
        assert!(ExperimentConfig::parse("run.seed = 1\nrun.seed = 2").is_err());
        assert!(ExperimentConfig::parse("object.kind = file").is_err());
        assert!(
            ExperimentConfig::parse("detector.kind = bucket\ndetector.aperture = 0..999").is_err()
        );
        assert!(ExperimentConfig::parse("grid.pitch_um = 40").is_err());
    }

    #[test]
    fn manifest_keys_ignored() {
        let text = "# comment\nmanifest.version = 9\nrun.seed = 5\n";
        assert_eq!(ExperimentConfig::parse(text).unwrap().seed, 5);
    }

    #[test]
    fn variants_round_trip() {
        let text = "grid.n = 128\ngrid.ny = 1\ngrid.pitch_um = 10\nsource.sigma = 0.04\nsource.k_max = 1.5\n\
                    object.kind = point\ndetector.kind = bucket\ndetector.aperture = 10..20\n\
                    output.dir = out/run\nexperiment.counts = 2,4\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.object, ObjectSpec::Point);
        assert_eq!(
            c.detector_spec(),
            DetectorSpec::Bucket { x: 10..20, y: 0..1 }
        );
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }

    proptest! {
        #[test]
        fn floats_round_trip(l in 30.0f64..200.0, lambda in 0.3f64..1.2, seed in any::<u64>(), m in 2u64..1_000_000) {
            let c = ExperimentConfig {
                coherence: Coherence::Length(l),
                arm: ArmParams::new(lambda, 250_000.0).unwrap(),
                seed,
                realizations: m,
                ..Default::default()
            };
            prop_assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
