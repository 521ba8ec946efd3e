//! The four subcommands: sensitivity scans, coefficient tables, crossing
//! diagrams and Monte-Carlo estimation runs.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use modesep::direct::{crossing_point, direct_imaging_sensitivity, PixelBasis};
use modesep::moments::{
    factored_moments, moment_data, sensitivity, sensitivity_factored, sensitivity_low_brightness,
};
use modesep::montecarlo::{run_experiment, EstimationRun};
use modesep::noise::{ensemble_coefficients, CrosstalkSampler};
use modesep::{calibration_curve, couplings, photometry, Error, SceneConfig};

use crate::output::{fmt, fmt_opt, to_json, Meta};
use crate::scenario::{Basis, Resolved, SweepVariable};
use crate::CliError;

fn lift(e: Error) -> CliError {
    match e {
        Error::Config(_)
        | Error::NonUnitaryCrosstalk { .. }
        | Error::InfeasibleCrosstalkPower { .. } => CliError::validation(e.to_string()),
        _ => CliError::numerical(e.to_string()),
    }
}

/// Sensitivity of one scene with its deterministic noise (misalignment and
/// dark counts); `None` with a degenerate flag when the solve is singular.
fn deterministic_point(scene: &SceneConfig) -> Result<(Option<f64>, Option<f64>, bool), CliError> {
    let table = couplings(scene, None).map_err(lift)?;
    let phot = photometry(scene);
    let md = moment_data(&table, &phot, scene.dark.as_ref()).map_err(lift)?;
    let low = sensitivity_low_brightness(&md);
    match sensitivity(&md) {
        Ok(s) => Ok((Some(s.m), Some(low), false)),
        Err(Error::DegenerateScenario { .. }) => Ok((None, Some(low), true)),
        Err(e) => Err(lift(e)),
    }
}

/// Ensemble mean/std/failed-count over pre-drawn crosstalk matrices.
fn ensemble_point(
    scene: &SceneConfig,
    matrices: &[DMatrix<Complex64>],
) -> Result<(Option<f64>, Option<f64>, usize), CliError> {
    let phot = photometry(scene);
    let mut values = Vec::with_capacity(matrices.len());
    let mut failed = 0usize;
    for c in matrices {
        let table = couplings(scene, Some(c)).map_err(lift)?;
        let md = moment_data(&table, &phot, scene.dark.as_ref()).map_err(lift)?;
        match sensitivity(&md) {
            Ok(s) => values.push(s.m),
            Err(Error::DegenerateScenario { .. }) => failed += 1,
            Err(e) => return Err(lift(e)),
        }
    }
    if values.is_empty() {
        return Ok((None, None, failed));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((Some(mean), Some(std), failed))
}

#[derive(Debug, Serialize)]
struct ScanRow {
    d_w: f64,
    d_2w: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_low_brightness: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_di: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    m_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed_draws: Option<usize>,
    status: &'static str,
}

#[derive(Serialize)]
struct ScanDoc<'a> {
    meta: &'a Meta,
    rows: Vec<ScanRow>,
}

pub const SCAN_COLUMNS: &str = "d_w,d_2w,M,M_low_brightness,M_di,M_mean,M_std,failed_draws,status";

pub fn sensitivity_scan(
    resolved: &Resolved,
    meta: &Meta,
    format: &str,
) -> Result<String, CliError> {
    let w2 = resolved.w * resolved.w;
    let scene = &resolved.scene;

    // shared expensive state: the crosstalk ensemble and the pixel grid
    let matrices = match &scene.crosstalk {
        Some(spec) => {
            let sampler = CrosstalkSampler::new(scene.mode_count(), spec).map_err(lift)?;
            Some(sampler.ensemble(spec.ensemble_size))
        }
        None => None,
    };
    let di_basis = match &resolved.direct_imaging {
        Some((pitch, extent)) => Some(PixelBasis::new(*pitch, *extent).map_err(lift)?),
        None => None,
    };
    let pixel_basis = match &resolved.basis {
        Basis::Pixels { pitch, extent } => Some(PixelBasis::new(*pitch, *extent).map_err(lift)?),
        Basis::Hg { .. } => None,
    };

    let rows: Vec<Result<ScanRow, CliError>> = resolved
        .d_values
        .par_iter()
        .map(|&d| {
            let at_d = scene.at_separation(d);
            let mut row = ScanRow {
                d_w: d,
                d_2w: 0.5 * d,
                m: None,
                m_low_brightness: None,
                m_di: None,
                m_mean: None,
                m_std: None,
                failed_draws: None,
                status: "ok",
            };
            match &pixel_basis {
                Some(basis) => {
                    // pixel-basis scan: misalignment and dark counts enter the
                    // factored pipeline directly
                    let table = modesep::direct::pixel_couplings(&at_d, basis).map_err(lift)?;
                    let phot = photometry(&at_d);
                    let dark_means = match &at_d.dark {
                        Some(spec) => {
                            Some(spec.mean_counts(phot.n_kappa, table.len()).map_err(lift)?)
                        }
                        None => None,
                    };
                    let fm2 = factored_moments(&table, &phot, dark_means.as_ref()).map_err(lift)?;
                    row.m = Some(sensitivity_factored(&fm2) / w2);
                    let low: f64 = (0..fm2.n_prime.len())
                        .filter(|&i| fm2.n_prime[i] > 0.0)
                        .map(|i| fm2.d_vec[i] * fm2.d_vec[i] / fm2.n_prime[i])
                        .sum();
                    row.m_low_brightness = Some(low / w2);
                }
                None => {
                    let mut clean = at_d.clone();
                    clean.crosstalk = None;
                    let (m, low, degenerate) = deterministic_point(&clean)?;
                    row.m = m.map(|v| v / w2);
                    row.m_low_brightness = low.map(|v| v / w2);
                    if degenerate {
                        row.status = "degenerate";
                    }
                    if let Some(set) = &matrices {
                        let (mean, std, failed) = ensemble_point(&at_d, set)?;
                        row.m_mean = mean.map(|v| v / w2);
                        row.m_std = std.map(|v| v / w2);
                        row.failed_draws = Some(failed);
                        if mean.is_none() {
                            row.status = "degenerate";
                        }
                    }
                    if let Some(basis) = &di_basis {
                        row.m_di =
                            Some(direct_imaging_sensitivity(&at_d, basis).map_err(lift)? / w2);
                    }
                }
            }
            Ok(row)
        })
        .collect();
    let rows: Vec<ScanRow> = rows.into_iter().collect::<Result<_, _>>()?;

    if format == "json" {
        return to_json(&ScanDoc { meta, rows });
    }
    let mut out = meta.csv_header();
    out.push_str(SCAN_COLUMNS);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt(r.d_w),
            fmt(r.d_2w),
            fmt_opt(r.m),
            fmt_opt(r.m_low_brightness),
            fmt_opt(r.m_di),
            fmt_opt(r.m_mean),
            fmt_opt(r.m_std),
            r.failed_draws.map(|f| f.to_string()).unwrap_or_default(),
            r.status
        ));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct CoeffRow {
    d_w: f64,
    noise: &'static str,
    n: u32,
    m: u32,
    coeff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    coeff_std: Option<f64>,
}

#[derive(Serialize)]
struct CoeffDoc<'a> {
    meta: &'a Meta,
    rows: Vec<CoeffRow>,
}

pub const COEFF_COLUMNS: &str = "d_w,noise,n,m,coeff,coeff_std";

pub fn coefficients(resolved: &Resolved, meta: &Meta, format: &str) -> Result<String, CliError> {
    let scene = &resolved.scene;
    if !matches!(resolved.basis, Basis::Hg { .. }) {
        return Err(CliError::validation(
            "measurement.basis: coefficients require the hg basis",
        ));
    }
    let basis = scene.basis().map_err(lift)?;
    let mut rows = Vec::new();

    let coeffs_of = |cfg: &SceneConfig| -> Result<Vec<f64>, CliError> {
        let table = couplings(cfg, None).map_err(lift)?;
        let md = moment_data(&table, &photometry(cfg), cfg.dark.as_ref()).map_err(lift)?;
        Ok(sensitivity(&md)
            .map_err(lift)?
            .coefficients
            .iter()
            .copied()
            .collect())
    };

    for &d in &resolved.d_values {
        let at_d = scene.at_separation(d);

        let ideal = SceneConfig::ideal(d, at_d.theta, at_d.n_photons, at_d.kappa, at_d.q);
        let v = coeffs_of(&ideal)?;
        for (i, k) in basis.iter().enumerate() {
            rows.push(CoeffRow {
                d_w: d,
                noise: "ideal",
                n: k.n(),
                m: k.m(),
                coeff: v[i],
                coeff_std: None,
            });
        }
        if at_d.misalignment.d_s > 0.0 {
            let cfg = ideal
                .clone()
                .with_misalignment(at_d.misalignment.d_s, at_d.misalignment.theta_s);
            let v = coeffs_of(&cfg)?;
            for (i, k) in basis.iter().enumerate() {
                rows.push(CoeffRow {
                    d_w: d,
                    noise: "misalignment",
                    n: k.n(),
                    m: k.m(),
                    coeff: v[i],
                    coeff_std: None,
                });
            }
        }
        if let Some(spec) = at_d.crosstalk {
            let cfg = ideal.clone().with_crosstalk(spec);
            let stats = ensemble_coefficients(&cfg).map_err(lift)?;
            for (i, k) in basis.iter().enumerate() {
                rows.push(CoeffRow {
                    d_w: d,
                    noise: "crosstalk",
                    n: k.n(),
                    m: k.m(),
                    coeff: stats.mean[i],
                    coeff_std: Some(stats.std[i]),
                });
            }
        }
        if let Some(dark) = &at_d.dark {
            let cfg = ideal.clone().with_dark(dark.clone());
            let v = coeffs_of(&cfg)?;
            for (i, k) in basis.iter().enumerate() {
                rows.push(CoeffRow {
                    d_w: d,
                    noise: "dark",
                    n: k.n(),
                    m: k.m(),
                    coeff: v[i],
                    coeff_std: None,
                });
            }
        }
    }

    if format == "json" {
        return to_json(&CoeffDoc { meta, rows });
    }
    let mut out = meta.csv_header();
    out.push_str(COEFF_COLUMNS);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt(r.d_w),
            r.noise,
            r.n,
            r.m,
            fmt(r.coeff),
            fmt_opt(r.coeff_std)
        ));
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct CrossingRow {
    sweep_variable: &'static str,
    sweep_value: f64,
    n_kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_star_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d_star_2w: Option<f64>,
    n_crossings: usize,
    crossings_w: Vec<f64>,
}

#[derive(Serialize)]
struct CrossingDoc<'a> {
    meta: &'a Meta,
    rows: Vec<CrossingRow>,
}

pub const CROSSING_COLUMNS: &str =
    "sweep_variable,sweep_value,n_kappa,d_star_w,d_star_2w,n_crossings,crossings_w";

pub fn crossing_diagram(
    resolved: &Resolved,
    meta: &Meta,
    format: &str,
) -> Result<String, CliError> {
    let sweep = resolved
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::validation("sweep: required for crossing-diagram"))?;
    if !matches!(resolved.basis, Basis::Hg { .. }) {
        return Err(CliError::validation(
            "measurement.basis: crossing-diagram compares the hg basis against pixels",
        ));
    }
    if sweep.variable == SweepVariable::CrosstalkPower && resolved.scene.crosstalk.is_none() {
        return Err(CliError::validation(
            "noise.crosstalk: required when sweeping mean_power (provides seed and ensemble)",
        ));
    }

    let (di_pitch, di_extent) = resolved.direct_imaging.unwrap_or((
        modesep::direct::DEFAULT_PITCH,
        modesep::direct::DEFAULT_EXTENT_MARGIN + 0.5 * sweep.window.1,
    ));
    let basis = PixelBasis::new(di_pitch, di_extent).map_err(lift)?;

    let cells: Vec<(f64, f64)> = sweep
        .values
        .iter()
        .flat_map(|&v| sweep.brightnesses.iter().map(move |&b| (v, b)))
        .collect();
    let rows: Vec<Result<CrossingRow, CliError>> = cells
        .par_iter()
        .map(|&(value, n_kappa)| {
            let mut cfg = resolved.scene.clone();
            cfg.n_photons = n_kappa / cfg.kappa;
            match sweep.variable {
                SweepVariable::Misalignment => {
                    // default offset direction matches the reference geometry
                    let theta_s = if cfg.misalignment.d_s > 0.0 {
                        cfg.misalignment.theta_s
                    } else {
                        std::f64::consts::FRAC_PI_4
                    };
                    cfg = cfg.with_misalignment(value, theta_s);
                }
                SweepVariable::CrosstalkPower => {
                    let mut spec = cfg.crosstalk.unwrap();
                    spec.mean_offdiag_power = value;
                    cfg.crosstalk = Some(spec);
                }
                SweepVariable::DarkSigma => {
                    cfg = cfg.with_dark(modesep::DarkCountSpec::uniform(value));
                }
            }
            let search =
                crossing_point(&cfg, &basis, sweep.window, sweep.scan_points).map_err(lift)?;
            Ok(CrossingRow {
                sweep_variable: sweep.variable.name(),
                sweep_value: value,
                n_kappa,
                d_star_w: search.first,
                d_star_2w: search.first.map(|d| 0.5 * d),
                n_crossings: search.all.len(),
                crossings_w: search.all,
            })
        })
        .collect();
    let rows: Vec<CrossingRow> = rows.into_iter().collect::<Result<_, _>>()?;

    if format == "json" {
        return to_json(&CrossingDoc { meta, rows });
    }
    let mut out = meta.csv_header();
    out.push_str(CROSSING_COLUMNS);
    out.push('\n');
    for r in rows {
        let crossings = r
            .crossings_w
            .iter()
            .map(|&c| fmt(c))
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.sweep_variable,
            fmt(r.sweep_value),
            fmt(r.n_kappa),
            fmt_opt(r.d_star_w),
            fmt_opt(r.d_star_2w),
            r.n_crossings,
            crossings
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct SimulateDoc<'a> {
    meta: &'a Meta,
    run: EstimationRun,
}

pub fn simulate(resolved: &Resolved, meta: &Meta, format: &str) -> Result<String, CliError> {
    if format != "json" {
        return Err(CliError::validation(
            "output.format: simulate emits json only",
        ));
    }
    let mc = resolved
        .montecarlo
        .as_ref()
        .ok_or_else(|| CliError::validation("montecarlo: required for simulate"))?;
    if resolved.d_values.len() != 1 {
        return Err(CliError::validation(
            "sources.d: simulate needs a single separation, not a scan",
        ));
    }
    if !matches!(resolved.basis, Basis::Hg { .. }) {
        return Err(CliError::validation(
            "measurement.basis: simulate requires the hg basis",
        ));
    }
    let scene = resolved.scene.at_separation(resolved.d_values[0]);
    if scene.d >= 4.0 {
        return Err(CliError::validation(
            "sources.d: simulate calibrates over [0, 4w]; d must be below 4w",
        ));
    }

    let crosstalk = match &scene.crosstalk {
        Some(spec) => {
            // the experiment and its calibration share ensemble draw 0
            Some(
                CrosstalkSampler::new(scene.mode_count(), spec)
                    .map_err(lift)?
                    .draw(0),
            )
        }
        None => None,
    };
    let table = couplings(&scene, crosstalk.as_ref()).map_err(lift)?;
    let md = moment_data(&table, &photometry(&scene), scene.dark.as_ref()).map_err(lift)?;
    let m = sensitivity(&md).map_err(lift)?.coefficients;

    let grid: Vec<f64> = (0..400).map(|i| 4.0 * i as f64 / 399.0).collect();
    let curve = calibration_curve(&scene, crosstalk.as_ref(), &m, &grid).map_err(lift)?;
    let run = run_experiment(
        &scene,
        crosstalk.as_ref(),
        &m,
        &curve,
        mc.window,
        mc.mu,
        mc.repetitions,
        mc.seed,
    )
    .map_err(lift)?;
    to_json(&SimulateDoc { meta, run })
}
