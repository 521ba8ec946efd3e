//! Scenario file schema and validation.
//!
//! Scenarios are JSON documents; every length is given in the same absolute
//! units as `psf.w` and is converted to waist units before any computation.
//! Validation failures carry the offending field path and map to exit code 2.

use std::path::Path;

use serde::Deserialize;

use modesep::{CrosstalkSpec, DarkCountSpec, SceneConfig};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub psf: PsfSection,
    pub sources: SourcesSection,
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub montecarlo: Option<MonteCarloSection>,
    #[serde(default)]
    pub output: Option<OutputSection>,
    #[serde(default)]
    pub direct_imaging: Option<DirectImagingSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsfSection {
    pub w: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcesSection {
    #[serde(rename = "N")]
    pub n: f64,
    pub kappa: f64,
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub d_scan: Option<GridSection>,
    pub theta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub basis: String,
    #[serde(rename = "Q", default)]
    pub q: Option<u32>,
    #[serde(default)]
    pub pitch: Option<f64>,
    #[serde(default)]
    pub extent: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub misalignment: Option<MisalignmentSection>,
    #[serde(default)]
    pub crosstalk: Option<CrosstalkSection>,
    #[serde(default)]
    pub dark: Option<DarkSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisalignmentSection {
    pub d_s: f64,
    pub theta_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosstalkSection {
    pub mean_power: f64,
    pub seed: u64,
    pub ensemble: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarkSection {
    pub sigma: SigmaValue,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SigmaValue {
    Uniform(f64),
    PerMode(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub mu: u64,
    pub repetitions: u32,
    pub seed: u64,
    #[serde(default)]
    pub window: Option<WindowSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub format: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectImagingSection {
    #[serde(default)]
    pub pitch: Option<f64>,
    #[serde(default)]
    pub extent: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: String,
    pub from: f64,
    pub to: f64,
    pub points: usize,
    #[serde(default)]
    pub log: bool,
    #[serde(default)]
    pub brightnesses: Option<Vec<f64>>,
    #[serde(default)]
    pub window: Option<WindowSection>,
    #[serde(default)]
    pub scan_points: Option<usize>,
}

/// Measurement basis after validation, lengths in waist units.
#[derive(Debug, Clone, PartialEq)]
pub enum Basis {
    Hg { q: u32 },
    Pixels { pitch: f64, extent: f64 },
}

/// Noise-strength axis of a crossing diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Misalignment,
    CrosstalkPower,
    DarkSigma,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::Misalignment => "d_s",
            SweepVariable::CrosstalkPower => "mean_power",
            SweepVariable::DarkSigma => "sigma",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSettings {
    pub variable: SweepVariable,
    /// Sweep values (waist units for `d_s`, dimensionless otherwise).
    pub values: Vec<f64>,
    /// Received-photon numbers `Nκ` of the compared scenes.
    pub brightnesses: Vec<f64>,
    /// Separation window searched for crossings (waist units).
    pub window: (f64, f64),
    pub scan_points: usize,
}

#[derive(Debug, Clone)]
pub struct MonteCarloSettings {
    pub mu: u64,
    pub repetitions: u32,
    pub seed: u64,
    /// Optional estimation window (waist units).
    pub window: Option<(f64, f64)>,
}

/// A fully validated scenario, lengths converted to waist units.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub w: f64,
    /// Scene at the reference separation (`sources.d`, or the scan start).
    pub scene: SceneConfig,
    /// Scan separations; a single entry when only `sources.d` was given.
    pub d_values: Vec<f64>,
    pub basis: Basis,
    pub direct_imaging: Option<(f64, f64)>,
    pub montecarlo: Option<MonteCarloSettings>,
    pub sweep: Option<SweepSettings>,
    pub output_path: Option<String>,
    pub output_format: Option<String>,
}

fn require_finite(value: f64, field: &str) -> Result<f64, CliError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CliError::validation(format!("{field}: must be finite")))
    }
}

fn require_positive(value: f64, field: &str) -> Result<f64, CliError> {
    require_finite(value, field)?;
    if value > 0.0 {
        Ok(value)
    } else {
        Err(CliError::validation(format!("{field}: must be > 0")))
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::validation(format!("scenario {}: {e}", path.display())))?;
        let parsed: ScenarioFile = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::validation(format!("scenario {}: {e}", path.display())))?;
        Ok((parsed, bytes))
    }

    /// Validates the document and converts all lengths to waist units.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let w = require_positive(self.psf.w, "psf.w")?;

        if self.sources.n < 0.0 || !self.sources.n.is_finite() {
            return Err(CliError::validation("sources.N: must be ≥ 0"));
        }
        if !(self.sources.kappa > 0.0 && self.sources.kappa <= 1.0) {
            return Err(CliError::validation("sources.kappa: must lie in (0, 1]"));
        }
        require_finite(self.sources.theta, "sources.theta")?;

        let d_values: Vec<f64> = match (&self.sources.d, &self.sources.d_scan) {
            (_, Some(grid)) => {
                if grid.points == 0 {
                    return Err(CliError::validation("sources.d_scan.points: must be ≥ 1"));
                }
                let from = require_finite(grid.from, "sources.d_scan.from")? / w;
                let to = require_finite(grid.to, "sources.d_scan.to")? / w;
                if from < 0.0 || to < from {
                    return Err(CliError::validation(
                        "sources.d_scan: requires 0 ≤ from ≤ to",
                    ));
                }
                if grid.points == 1 {
                    vec![from]
                } else {
                    (0..grid.points)
                        .map(|i| from + (to - from) * i as f64 / (grid.points - 1) as f64)
                        .collect()
                }
            }
            (Some(d), None) => {
                let d = require_finite(*d, "sources.d")? / w;
                if d < 0.0 {
                    return Err(CliError::validation("sources.d: must be ≥ 0"));
                }
                vec![d]
            }
            (None, None) => {
                return Err(CliError::validation(
                    "sources: either d or d_scan is required",
                ))
            }
        };

        let basis = match self.measurement.basis.as_str() {
            "hg" => {
                let q = self.measurement.q.ok_or_else(|| {
                    CliError::validation("measurement.Q: required for the hg basis")
                })?;
                Basis::Hg { q }
            }
            "pixels" => {
                let pitch = require_positive(
                    self.measurement.pitch.ok_or_else(|| {
                        CliError::validation("measurement.pitch: required for the pixels basis")
                    })?,
                    "measurement.pitch",
                )? / w;
                let extent = require_positive(
                    self.measurement.extent.ok_or_else(|| {
                        CliError::validation("measurement.extent: required for the pixels basis")
                    })?,
                    "measurement.extent",
                )? / w;
                Basis::Pixels { pitch, extent }
            }
            other => {
                return Err(CliError::validation(format!(
                    "measurement.basis: unknown basis `{other}` (expected \"hg\" or \"pixels\")"
                )))
            }
        };

        let q = match basis {
            Basis::Hg { q } => q,
            // the HG cutoff is irrelevant for pixel scans; keep the scene valid
            Basis::Pixels { .. } => 0,
        };
        let mut scene = SceneConfig::ideal(
            d_values[0],
            self.sources.theta,
            self.sources.n,
            self.sources.kappa,
            q,
        );

        if let Some(mis) = &self.noise.misalignment {
            let d_s = require_finite(mis.d_s, "noise.misalignment.d_s")? / w;
            if d_s < 0.0 {
                return Err(CliError::validation("noise.misalignment.d_s: must be ≥ 0"));
            }
            require_finite(mis.theta_s, "noise.misalignment.theta_s")?;
            scene = scene.with_misalignment(d_s, mis.theta_s);
        }
        if let Some(xt) = &self.noise.crosstalk {
            if !matches!(basis, Basis::Hg { .. }) {
                return Err(CliError::validation(
                    "noise.crosstalk: only supported for the hg basis",
                ));
            }
            scene = scene.with_crosstalk(CrosstalkSpec {
                mean_offdiag_power: require_finite(xt.mean_power, "noise.crosstalk.mean_power")?,
                seed: xt.seed,
                ensemble_size: xt.ensemble,
            });
        }
        if let Some(dark) = &self.noise.dark {
            let spec = match &dark.sigma {
                SigmaValue::Uniform(s) => DarkCountSpec::uniform(*s),
                SigmaValue::PerMode(v) => DarkCountSpec::PerMode(v.clone()),
            };
            scene = scene.with_dark(spec);
        }
        scene
            .validate()
            .map_err(|e| CliError::validation(format!("scenario: {e}")))?;

        let direct_imaging = match &self.direct_imaging {
            Some(di) => {
                let pitch = require_positive(
                    di.pitch.unwrap_or(modesep::direct::DEFAULT_PITCH * w),
                    "direct_imaging.pitch",
                )? / w;
                let extent = di
                    .extent
                    .map(|e| require_positive(e, "direct_imaging.extent").map(|v| v / w))
                    .transpose()?;
                let d_max = d_values.last().copied().unwrap_or(0.0);
                Some((
                    pitch,
                    extent.unwrap_or(modesep::direct::DEFAULT_EXTENT_MARGIN + 0.5 * d_max),
                ))
            }
            None => None,
        };

        let montecarlo = match &self.montecarlo {
            Some(mc) => {
                if mc.mu == 0 {
                    return Err(CliError::validation("montecarlo.mu: must be ≥ 1"));
                }
                if mc.repetitions == 0 {
                    return Err(CliError::validation("montecarlo.repetitions: must be ≥ 1"));
                }
                let window = match &mc.window {
                    Some(win) => {
                        let from = require_finite(win.from, "montecarlo.window.from")? / w;
                        let to = require_finite(win.to, "montecarlo.window.to")? / w;
                        if from >= to {
                            return Err(CliError::validation(
                                "montecarlo.window: requires from < to",
                            ));
                        }
                        Some((from, to))
                    }
                    None => None,
                };
                Some(MonteCarloSettings {
                    mu: mc.mu,
                    repetitions: mc.repetitions,
                    seed: mc.seed,
                    window,
                })
            }
            None => None,
        };

        let sweep = match &self.sweep {
            Some(sw) => {
                let variable = match sw.variable.as_str() {
                    "d_s" => SweepVariable::Misalignment,
                    "mean_power" => SweepVariable::CrosstalkPower,
                    "sigma" => SweepVariable::DarkSigma,
                    other => {
                        return Err(CliError::validation(format!(
                            "sweep.variable: unknown variable `{other}` \
                             (expected \"d_s\", \"mean_power\" or \"sigma\")"
                        )))
                    }
                };
                if sw.points == 0 {
                    return Err(CliError::validation("sweep.points: must be ≥ 1"));
                }
                let scale = if variable == SweepVariable::Misalignment {
                    w
                } else {
                    1.0
                };
                let from = require_finite(sw.from, "sweep.from")? / scale;
                let to = require_finite(sw.to, "sweep.to")? / scale;
                if from < 0.0 || to < from {
                    return Err(CliError::validation("sweep: requires 0 ≤ from ≤ to"));
                }
                if sw.log && from <= 0.0 {
                    return Err(CliError::validation("sweep: log spacing requires from > 0"));
                }
                let values: Vec<f64> = if sw.points == 1 {
                    vec![from]
                } else if sw.log {
                    let (la, lb) = (from.ln(), to.ln());
                    (0..sw.points)
                        .map(|i| (la + (lb - la) * i as f64 / (sw.points - 1) as f64).exp())
                        .collect()
                } else {
                    (0..sw.points)
                        .map(|i| from + (to - from) * i as f64 / (sw.points - 1) as f64)
                        .collect()
                };
                let brightnesses = sw
                    .brightnesses
                    .clone()
                    .unwrap_or_else(|| vec![1.5, 5.0, 10.0]);
                if brightnesses.is_empty() {
                    return Err(CliError::validation(
                        "sweep.brightnesses: must be non-empty",
                    ));
                }
                let window = match &sw.window {
                    Some(win) => {
                        let from = require_positive(win.from, "sweep.window.from")? / w;
                        let to = require_positive(win.to, "sweep.window.to")? / w;
                        if from >= to {
                            return Err(CliError::validation("sweep.window: requires from < to"));
                        }
                        (from, to)
                    }
                    None => (0.02, 2.0),
                };
                Some(SweepSettings {
                    variable,
                    values,
                    brightnesses,
                    window,
                    scan_points: sw.scan_points.unwrap_or(48),
                })
            }
            None => None,
        };

        let (output_path, output_format) = match &self.output {
            Some(out) => {
                if let Some(fmt) = &out.format {
                    if fmt != "csv" && fmt != "json" {
                        return Err(CliError::validation(format!(
                            "output.format: unknown format `{fmt}`"
                        )));
                    }
                }
                (out.path.clone(), out.format.clone())
            }
            None => (None, None),
        };

        Ok(Resolved {
            w,
            scene,
            d_values,
            basis,
            direct_imaging,
            montecarlo,
            sweep,
            output_path,
            output_format,
        })
    }
}
