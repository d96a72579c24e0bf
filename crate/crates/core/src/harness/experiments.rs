//! Run recipes behind the CLI subcommands. Each recipe has a pure part that
//! returns a report and a `write_*` part that emits files.

use std::path::Path;
use std::time::Instant;

use crate::estimator::{
    gaussian_moment_check, reconstruct_image, run_ensemble_with, CorrelationResult, MomentCheck,
    ReconstructedImage, MOMENT_CHECK_MIN_REALIZATIONS,
};
use crate::lattice::GridSpec;
use crate::metrics::{
    background_to_peak, bounding_roi, fit_gaussian, fit_gaussian_xy, mask_regions, response_curve,
    snr, visibility, GaussianFit, ImageSource, ResponseRow,
};
use crate::optics::{complement, make_slit_grating, ObjectMask};
use crate::oracle::{gamma_exact, image_psf_convolution, psf_profile, ConvolutionImage};
use crate::source::realization_seed;

use super::output::{profile_table, sig9, write_heatmap, Manifest, Table};
use super::{DetectorConfig, ExperimentConfig, HarnessError, ObjectSpec};

/// Names accepted by `ghostsim experiment`.
pub const EXPERIMENTS: [&str; 3] = ["freq-response", "visibility", "complement"];

/// Default configuration of a named experiment.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let base = ExperimentConfig::default();
    match name {
        "freq-response" => Some(ExperimentConfig {
            grid: GridSpec::line(384, 12.5).expect("valid grid"),
            realizations: 100_000,
            ..base
        }),
        "visibility" => Some(ExperimentConfig {
            grid: GridSpec::line(512, 10.0).expect("valid grid"),
            detector: DetectorConfig::Bucket { x: None, y: None },
            realizations: 50_000,
            ..base
        }),
        "complement" => Some(ExperimentConfig {
            grid: GridSpec::line(512, 10.0).expect("valid grid"),
            detector: DetectorConfig::Bucket { x: None, y: None },
            realizations: 50_000,
            ..base
        }),
        _ => None,
    }
}

pub struct Simulation {
    pub mask: ObjectMask,
    pub result: CorrelationResult,
    pub image: ReconstructedImage,
    pub moment_check: Option<MomentCheck>,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation, HarnessError> {
    let mask = cfg.mask()?;
    let result = run_ensemble_with(
        &cfg.source_params()?,
        &mask,
        &cfg.arm,
        &cfg.detector_spec(),
        cfg.realizations,
        cfg.seed,
        cfg.ensemble_options(),
    )?;
    let image = reconstruct_image(&result)?;
    let moment_check = if result.gamma.is_some() {
        Some(gaussian_moment_check(&result)?)
    } else {
        None
    };
    Ok(Simulation {
        mask,
        result,
        image,
        moment_check,
    })
}

pub fn write_simulation(cfg: &ExperimentConfig, dir: &Path) -> Result<Simulation, HarnessError> {
    let start = Instant::now();
    let sim = simulate(cfg)?;
    let g = sim.result.grid;
    profile_table(&g, &[("value", &sim.image.fluctuation)]).write(&dir.join("profile.csv"))?;
    let mut cols: Vec<(&str, Vec<f64>)> = vec![
        ("fluctuation", sim.result.g_fluct.clone()),
        ("g2", sim.image.normalized_correlation.clone()),
        ("mean_reference", sim.result.mean_reference.clone()),
    ];
    if let Some(gi) = sim.result.gamma_integral() {
        cols.push(("gamma_re", gi.iter().map(|z| z.re).collect()));
        cols.push(("gamma_im", gi.iter().map(|z| z.im).collect()));
    }
    let refs: Vec<(&str, &[f64])> = cols.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    profile_table(&g, &refs).write(&dir.join("correlation.csv"))?;
    let (lo, hi) = write_heatmap(&dir.join("heatmap.pgm"), &g, &sim.image.fluctuation)?;
    let mut m = Manifest::new("simulate", cfg);
    m.add("manifest.heatmap_min", sig9(lo));
    m.add("manifest.heatmap_max", sig9(hi));
    m.add("manifest.mean_detector", sig9(sim.result.mean_detector));
    if let Some(mc) = sim.moment_check {
        m.add("manifest.moment_check", sig9(mc.statistic));
        if !mc.reliable {
            m.add(
                "manifest.warning",
                format!("moment check unreliable below M = {MOMENT_CHECK_MIN_REALIZATIONS}"),
            );
        }
    }
    m.add(
        "manifest.wall_time_s",
        format!("{:.3}", start.elapsed().as_secs_f64()),
    );
    m.write(&dir.join("manifest.txt"))?;
    Ok(sim)
}

pub struct OracleRun {
    pub mask: ObjectMask,
    pub gamma: Vec<num_complex::Complex64>,
    /// `|Γ|²` divided by its maximum.
    pub image: Vec<f64>,
    pub convolution: ConvolutionImage,
    pub psf: Vec<f64>,
}

pub fn oracle(cfg: &ExperimentConfig) -> Result<OracleRun, HarnessError> {
    let mask = cfg.mask()?;
    let ocfg = cfg.oracle_config()?;
    let gamma = gamma_exact(&mask, &ocfg, (0.0, 0.0))?;
    let sq: Vec<f64> = gamma.iter().map(|z| z.norm_sqr()).collect();
    let peak = sq.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(
            crate::Error::Degenerate("oracle image is zero (opaque object?)".into()).into(),
        );
    }
    let image = sq.iter().map(|v| v / peak).collect();
    let convolution = image_psf_convolution(&mask, ocfg.sigma, ocfg.mode_intensity)?;
    let psf = psf_profile(mask.grid(), ocfg.sigma);
    Ok(OracleRun {
        mask,
        gamma,
        image,
        convolution,
        psf,
    })
}

pub fn write_oracle(cfg: &ExperimentConfig, dir: &Path) -> Result<OracleRun, HarnessError> {
    let start = Instant::now();
    let run = oracle(cfg)?;
    let g = *run.mask.grid();
    profile_table(&g, &[("value", &run.image)]).write(&dir.join("profile.csv"))?;
    let re: Vec<f64> = run.gamma.iter().map(|z| z.re).collect();
    let im: Vec<f64> = run.gamma.iter().map(|z| z.im).collect();
    let conv = run.convolution.normalized();
    profile_table(
        &g,
        &[("gamma_re", &re), ("gamma_im", &im), ("convolution", &conv)],
    )
    .write(&dir.join("correlation.csv"))?;
    profile_table(&g, &[("value", &run.psf)]).write(&dir.join("psf.csv"))?;
    let (lo, hi) = write_heatmap(&dir.join("heatmap.pgm"), &g, &run.image)?;
    let mut m = Manifest::new("oracle", cfg);
    m.add("manifest.heatmap_min", sig9(lo));
    m.add("manifest.heatmap_max", sig9(hi));
    m.add("manifest.prefactor", sig9(run.convolution.prefactor));
    m.add("manifest.psf_std_um", sig9(2.0 / cfg.sigma()?));
    m.add(
        "manifest.wall_time_s",
        format!("{:.3}", start.elapsed().as_secs_f64()),
    );
    m.write(&dir.join("manifest.txt"))?;
    Ok(run)
}

/// A row of the measured reference table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub csl: f64,
    pub ffc: f64,
    pub rfr: f64,
}

/// Measured relative frequency response shipped with the crate.
pub fn reference_table() -> Vec<ReferenceRow> {
    include_str!("../../data/table1_reference.csv")
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("csl"))
        .filter_map(|l| {
            let f: Vec<f64> = l
                .split(',')
                .map(|s| s.trim().parse().ok())
                .collect::<Option<_>>()?;
            Some(ReferenceRow {
                csl: f[0],
                ffc: f[1],
                rfr: f[2],
            })
        })
        .collect()
}

pub struct FreqResponseReport {
    pub oracle: Vec<ResponseRow>,
    pub simulated: Vec<ResponseRow>,
    pub reference: Vec<ReferenceRow>,
    pub oracle_fit: GaussianFit,
    pub simulated_fit: Option<GaussianFit>,
    pub reference_fit: Option<GaussianFit>,
}

pub fn freq_response(cfg: &ExperimentConfig) -> Result<FreqResponseReport, HarnessError> {
    let e = &cfg.experiment;
    let gratings: Vec<(f64, f64)> = e.widths.iter().map(|w| (*w, w * e.gap_ratio)).collect();
    let l_c = cfg.coherence_length()?;
    let oracle = response_curve(
        &gratings,
        l_c,
        &ImageSource::Oracle {
            grid: cfg.grid,
            arm: cfg.arm,
        },
    )?;
    let params = cfg.source_params()?;
    let simulated = response_curve(
        &gratings,
        l_c,
        &ImageSource::Estimator {
            grid: cfg.grid,
            arm: cfg.arm,
            k_max: params.k_max(),
            realizations: cfg.realizations,
            seed: cfg.seed,
            options: cfg.ensemble_options(),
        },
    )?;
    let reference = reference_table();
    let oracle_fit = fit_gaussian(&oracle)?;
    let simulated_fit = fit_gaussian(&simulated).ok();
    let rx: Vec<f64> = reference.iter().map(|r| r.ffc).collect();
    let ry: Vec<f64> = reference.iter().map(|r| r.rfr).collect();
    let reference_fit = fit_gaussian_xy(&rx, &ry).ok();
    Ok(FreqResponseReport {
        oracle,
        simulated,
        reference,
        oracle_fit,
        simulated_fit,
        reference_fit,
    })
}

pub fn write_freq_response(
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<FreqResponseReport, HarnessError> {
    let start = Instant::now();
    let r = freq_response(cfg)?;
    let mut t = Table::new(&[
        "csl_um",
        "ffc",
        "rfr_oracle",
        "rfr_simulated",
        "rfr_paper_reference",
        "rfr_simulated_se",
        "rfr_fluct_simulated",
    ]);
    for (o, s) in r.oracle.iter().zip(&r.simulated) {
        let measured = r
            .reference
            .iter()
            .find(|p| p.csl == o.csl)
            .map_or(String::new(), |p| sig9(p.rfr));
        t.push(vec![
            sig9(o.csl),
            sig9(o.ffc),
            sig9(o.rfr),
            sig9(s.rfr),
            measured,
            s.rfr_se.map_or(String::new(), sig9),
            s.rfr_fluct.map_or(String::new(), sig9),
        ]);
    }
    t.write(&dir.join("response.csv"))?;
    let mut fit = Table::new(&[
        "ffc",
        "rfr_fit_oracle",
        "rfr_fit_simulated",
        "rfr_fit_paper_reference",
    ]);
    for i in 0..=60 {
        let x = 0.005 * i as f64;
        let opt = |f: &Option<GaussianFit>| f.map_or(String::new(), |f| sig9(f.eval(x)));
        fit.push(vec![
            sig9(x),
            sig9(r.oracle_fit.eval(x)),
            opt(&r.simulated_fit),
            opt(&r.reference_fit),
        ]);
    }
    fit.write(&dir.join("fit.csv"))?;
    let mut m = Manifest::new("experiment freq-response", cfg);
    let fit_line = |f: &GaussianFit| {
        format!(
            "A={} w={} r2={}",
            sig9(f.amplitude),
            sig9(f.width),
            sig9(f.r_squared)
        )
    };
    m.add("manifest.fit_oracle", fit_line(&r.oracle_fit));
    if let Some(f) = &r.simulated_fit {
        m.add("manifest.fit_simulated", fit_line(f));
    }
    if let Some(f) = &r.reference_fit {
        m.add("manifest.fit_paper_reference", fit_line(f));
    }
    m.add(
        "manifest.wall_time_s",
        format!("{:.3}", start.elapsed().as_secs_f64()),
    );
    m.write(&dir.join("manifest.txt"))?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedVisibility {
    pub seed: u64,
    /// One value per slit count, computed on the normalized correlation.
    pub visibility: Vec<f64>,
    /// Background-to-peak ratio of the fluctuation image per slit count.
    pub background: Vec<f64>,
}

impl SeedVisibility {
    pub fn strictly_decreasing(&self) -> bool {
        self.visibility.windows(2).all(|w| w[0] > w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityReport {
    pub counts: Vec<usize>,
    pub seeds: Vec<SeedVisibility>,
}

impl VisibilityReport {
    pub fn ordered_seeds(&self) -> usize {
        self.seeds
            .iter()
            .filter(|s| s.strictly_decreasing())
            .count()
    }

    /// Median background-to-peak ratio per slit count.
    pub fn median_background(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|j| {
                let mut v: Vec<f64> = self.seeds.iter().map(|s| s.background[j]).collect();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                if n % 2 == 1 {
                    v[n / 2]
                } else {
                    0.5 * (v[n / 2 - 1] + v[n / 2])
                }
            })
            .collect()
    }

    pub fn verdict(&self) -> String {
        let chain = self
            .counts
            .iter()
            .map(|c| format!("V({c})"))
            .collect::<Vec<_>>()
            .join(" > ");
        format!(
            "{chain}: {}/{} seeds",
            self.ordered_seeds(),
            self.seeds.len()
        )
    }
}

pub fn visibility_experiment(cfg: &ExperimentConfig) -> Result<VisibilityReport, HarnessError> {
    let e = &cfg.experiment;
    let params = cfg.source_params()?;
    let det = cfg.detector_spec();
    let period = e.slit_width + e.slit_gap;
    let masks: Vec<ObjectMask> = e
        .counts
        .iter()
        .map(|c| make_slit_grating(e.slit_width, e.slit_gap, *c, &cfg.grid))
        .collect::<crate::Result<_>>()?;
    let mut seeds = Vec::with_capacity(e.seeds);
    for s in 0..e.seeds {
        let seed = realization_seed(cfg.seed, s as u64);
        let mut vis = Vec::new();
        let mut bg = Vec::new();
        for mask in &masks {
            let res = run_ensemble_with(
                &params,
                mask,
                &cfg.arm,
                &det,
                cfg.realizations,
                seed,
                cfg.ensemble_options(),
            )?;
            let img = reconstruct_image(&res)?;
            let roi = bounding_roi(mask, period);
            vis.push(visibility(&img.normalized_correlation, &roi)?);
            let inside: std::collections::HashSet<usize> = roi.into_iter().collect();
            let outside: Vec<usize> = (0..cfg.grid.len())
                .filter(|i| !inside.contains(i))
                .collect();
            bg.push(background_to_peak(&img.fluctuation, &outside)?);
        }
        seeds.push(SeedVisibility {
            seed,
            visibility: vis,
            background: bg,
        });
    }
    Ok(VisibilityReport {
        counts: e.counts.clone(),
        seeds,
    })
}

pub fn write_visibility(
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<VisibilityReport, HarnessError> {
    let start = Instant::now();
    let r = visibility_experiment(cfg)?;
    let mut header = vec!["seed".to_string()];
    header.extend(r.counts.iter().map(|c| format!("visibility_{c}")));
    header.extend(r.counts.iter().map(|c| format!("background_to_peak_{c}")));
    header.push("ordered".into());
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for s in &r.seeds {
        let mut row = vec![s.seed.to_string()];
        row.extend(s.visibility.iter().map(|v| sig9(*v)));
        row.extend(s.background.iter().map(|v| sig9(*v)));
        row.push(s.strictly_decreasing().to_string());
        t.push(row);
    }
    t.write(&dir.join("visibility.csv"))?;
    let mut m = Manifest::new("experiment visibility", cfg);
    m.add("manifest.verdict", r.verdict());
    m.add(
        "manifest.median_background_to_peak",
        r.median_background()
            .iter()
            .map(|v| sig9(*v))
            .collect::<Vec<_>>()
            .join(","),
    );
    m.add(
        "manifest.wall_time_s",
        format!("{:.3}", start.elapsed().as_secs_f64()),
    );
    m.write(&dir.join("manifest.txt"))?;
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplementReport {
    pub snr_object: f64,
    pub snr_complement: f64,
    pub object_regions: (usize, usize),
    pub complement_regions: (usize, usize),
}

impl ComplementReport {
    pub fn ratio(&self) -> f64 {
        self.snr_object / self.snr_complement
    }
}

fn snr_of(
    cfg: &ExperimentConfig,
    mask: &ObjectMask,
) -> Result<(f64, (usize, usize)), HarnessError> {
    let res = run_ensemble_with(
        &cfg.source_params()?,
        mask,
        &cfg.arm,
        &cfg.detector_spec(),
        cfg.realizations,
        cfg.seed,
        cfg.ensemble_options(),
    )?;
    let img = reconstruct_image(&res)?;
    let (sig, bg) = mask_regions(mask, cfg.experiment.margin);
    Ok((snr(&img.fluctuation, &sig, &bg)?, (sig.len(), bg.len())))
}

pub fn complement_experiment(cfg: &ExperimentConfig) -> Result<ComplementReport, HarnessError> {
    let object = match &cfg.object {
        ObjectSpec::Grating { .. } | ObjectSpec::File(_) => {
            let plain = ExperimentConfig {
                complement: false,
                ..cfg.clone()
            };
            plain.mask()?
        }
        _ => {
            return Err(HarnessError::Config {
                line: None,
                field: "object.kind".into(),
                message: "complement needs a grating or file object".into(),
            })
        }
    };
    let inverse = complement(&object)?;
    let (snr_object, object_regions) = snr_of(cfg, &object)?;
    let (snr_complement, complement_regions) = snr_of(cfg, &inverse)?;
    Ok(ComplementReport {
        snr_object,
        snr_complement,
        object_regions,
        complement_regions,
    })
}

pub fn write_complement(
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<ComplementReport, HarnessError> {
    let start = Instant::now();
    let r = complement_experiment(cfg)?;
    let mut t = Table::new(&["object", "snr", "signal_pixels", "background_pixels"]);
    t.push(vec![
        "object".into(),
        sig9(r.snr_object),
        r.object_regions.0.to_string(),
        r.object_regions.1.to_string(),
    ]);
    t.push(vec![
        "complement".into(),
        sig9(r.snr_complement),
        r.complement_regions.0.to_string(),
        r.complement_regions.1.to_string(),
    ]);
    t.write(&dir.join("snr.csv"))?;
    let mut m = Manifest::new("experiment complement", cfg);
    m.add("manifest.snr_ratio", sig9(r.ratio()));
    m.add(
        "manifest.wall_time_s",
        format!("{:.3}", start.elapsed().as_secs_f64()),
    );
    m.write(&dir.join("manifest.txt"))?;
    Ok(r)
}
