//! Photon-counting Monte Carlo and the method-of-moments estimator.
//!
//! A shot of the two-source thermal state is sampled in two stages: the two
//! source amplitudes are independent circular complex Gaussians with
//! mean-square `Nκ`, the mode-k field amplitude is their image through the
//! coupling table, and ideal detection turns the resulting intensity into a
//! Poisson count. This construction reproduces the analytic mean vector and
//! covariance matrix of the moments engine exactly, for any coupling
//! pattern; the test suite checks that equivalence at the moment level
//! rather than assuming it. Dark counts add an independent Bose-Einstein
//! (geometric) integer per mode and shot.
//!
//! The estimator inverts the sample mean of `X = m·counts` through a
//! calibration curve; within a strictly monotone window the inversion is a
//! monotone-cubic interpolation refined by bisection.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{couplings, photometry, OverlapTable, SceneConfig};
use crate::moments::{moment_data, sensitivity, CalibrationCurve};

/// Photon counts of a single shot across the measurement modes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountRecord {
    pub counts: Vec<u64>,
    pub shot: u64,
}

/// Reusable sampler for photon-counting shots of one scene.
#[derive(Debug, Clone)]
pub struct ShotSampler {
    f_plus: Vec<Complex64>,
    f_minus: Vec<Complex64>,
    /// Std of each real quadrature of a source amplitude, `√(Nκ/2)`.
    amp_std: f64,
    /// Per-mode dark generators, present only for modes with `N_k^dc > 0`.
    dark: Vec<Option<Geometric>>,
}

impl ShotSampler {
    /// Builds a sampler from a coupling table, the scene brightness and
    /// optional per-mode dark-count means.
    pub fn new(
        table: &OverlapTable,
        n_kappa: f64,
        dark_means: Option<&DVector<f64>>,
    ) -> Result<Self> {
        let k = table.len();
        if let Some(dc) = dark_means {
            if dc.len() != k {
                return Err(Error::config(
                    "dark-count vector length does not match basis",
                ));
            }
        }
        let dark = (0..k)
            .map(|i| {
                let mean = dark_means.map_or(0.0, |v| v[i]);
                if mean > 0.0 {
                    // Bose-Einstein counts = geometric number of failures with
                    // success probability 1/(1 + mean)
                    Some(Geometric::new(1.0 / (1.0 + mean)).expect("valid geometric parameter"))
                } else {
                    None
                }
            })
            .collect();
        Ok(ShotSampler {
            f_plus: table.f_plus.iter().copied().collect(),
            f_minus: table.f_minus.iter().copied().collect(),
            amp_std: (n_kappa.max(0.0) / 2.0).sqrt(),
            dark,
        })
    }

    /// Builds the sampler of a scene (crosstalk matrix passed explicitly).
    pub fn for_scene(scene: &SceneConfig, crosstalk: Option<&DMatrix<Complex64>>) -> Result<Self> {
        let table = couplings(scene, crosstalk)?;
        let phot = photometry(scene);
        let dark_means = match &scene.dark {
            Some(spec) => Some(spec.mean_counts(phot.n_kappa, table.len())?),
            None => None,
        };
        ShotSampler::new(&table, phot.n_kappa, dark_means.as_ref())
    }

    pub fn mode_count(&self) -> usize {
        self.f_plus.len()
    }

    /// Draws one shot into `out`.
    pub fn sample_into(&self, rng: &mut impl Rng, out: &mut [u64]) {
        debug_assert_eq!(out.len(), self.f_plus.len());
        let quadrature = |rng: &mut dyn rand::RngCore| -> f64 {
            let g: f64 = StandardNormal.sample(rng);
            g * self.amp_std
        };
        let a1 = Complex64::new(quadrature(rng), quadrature(rng));
        let a2 = Complex64::new(quadrature(rng), quadrature(rng));
        for (i, slot) in out.iter_mut().enumerate() {
            let amplitude = a1 * self.f_plus[i] + a2 * self.f_minus[i];
            let intensity = amplitude.norm_sqr();
            let mut n = if intensity > 0.0 {
                Poisson::new(intensity)
                    .expect("positive intensity")
                    .sample(rng) as u64
            } else {
                0
            };
            if let Some(g) = &self.dark[i] {
                n += g.sample(rng);
            }
            *slot = n;
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, shot: u64) -> CountRecord {
        let mut counts = vec![0u64; self.mode_count()];
        self.sample_into(rng, &mut counts);
        CountRecord { counts, shot }
    }
}

/// One photon-counting shot of a scene. Convenience wrapper; building a
/// [`ShotSampler`] once is much faster when many shots are needed.
pub fn sample_shot(
    scene: &SceneConfig,
    table: &OverlapTable,
    rng: &mut impl Rng,
) -> Result<CountRecord> {
    let phot = photometry(scene);
    let dark_means = match &scene.dark {
        Some(spec) => Some(spec.mean_counts(phot.n_kappa, table.len())?),
        None => None,
    };
    let sampler = ShotSampler::new(table, phot.n_kappa, dark_means.as_ref())?;
    Ok(sampler.sample(rng, 0))
}

/// Strictly monotone restriction of a calibration curve, interpolated with a
/// shape-preserving (Fritsch-Carlson) cubic.
#[derive(Debug, Clone)]
pub struct MonotoneCurve {
    d: Vec<f64>,
    x: Vec<f64>,
    slopes: Vec<f64>,
    increasing: bool,
}

impl MonotoneCurve {
    /// Restricts `curve` to `window` and validates strict monotonicity there.
    pub fn from_calibration(curve: &CalibrationCurve, window: (f64, f64)) -> Result<Self> {
        let (lo, hi) = window;
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidCalibration(format!(
                "estimation window [{lo}, {hi}] is empty"
            )));
        }
        let idx: Vec<usize> = (0..curve.d_grid.len())
            .filter(|&i| curve.d_grid[i] >= lo && curve.d_grid[i] <= hi)
            .collect();
        if idx.len() < 2 {
            return Err(Error::InvalidCalibration(format!(
                "estimation window [{lo}, {hi}] holds {} grid points; need at least 2",
                idx.len()
            )));
        }
        let d: Vec<f64> = idx.iter().map(|&i| curve.d_grid[i]).collect();
        let x: Vec<f64> = idx.iter().map(|&i| curve.x_mean[i]).collect();
        let increasing = x[1] > x[0];
        for w in x.windows(2) {
            let ok = if increasing { w[1] > w[0] } else { w[1] < w[0] };
            if !ok {
                return Err(Error::InvalidCalibration(format!(
                    "calibration curve is not strictly monotone on [{lo}, {hi}]"
                )));
            }
        }
        let slopes = pchip_slopes(&d, &x);
        Ok(MonotoneCurve {
            d,
            x,
            slopes,
            increasing,
        })
    }

    /// The maximal strictly monotone window of `curve` containing `d_center`.
    pub fn around(curve: &CalibrationCurve, d_center: f64) -> Result<Self> {
        let grid = &curve.d_grid;
        let x = &curve.x_mean;
        if grid.len() < 2 {
            return Err(Error::InvalidCalibration(
                "calibration grid needs at least 2 points".into(),
            ));
        }
        let mut i0 = grid
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - d_center)
                    .abs()
                    .partial_cmp(&(b.1 - d_center).abs())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        if i0 + 1 == grid.len() {
            i0 -= 1;
        }
        let step = x[i0 + 1] - x[i0];
        if step == 0.0 {
            return Err(Error::InvalidCalibration(format!(
                "calibration curve is flat at d = {d_center}"
            )));
        }
        let rising = step > 0.0;
        let keeps = |a: f64, b: f64| if rising { b > a } else { b < a };
        let mut lo = i0;
        while lo > 0 && keeps(x[lo - 1], x[lo]) {
            lo -= 1;
        }
        let mut hi = i0 + 1;
        while hi + 1 < grid.len() && keeps(x[hi], x[hi + 1]) {
            hi += 1;
        }
        MonotoneCurve::from_calibration(curve, (grid[lo], grid[hi]))
    }

    pub fn d_range(&self) -> (f64, f64) {
        (self.d[0], *self.d.last().unwrap())
    }

    /// Interpolated `⟨X⟩(d)`.
    pub fn eval(&self, d: f64) -> f64 {
        let n = self.d.len();
        let d = d.clamp(self.d[0], self.d[n - 1]);
        let seg = match self.d.binary_search_by(|v| v.partial_cmp(&d).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let h = self.d[seg + 1] - self.d[seg];
        let t = (d - self.d[seg]) / h;
        let (x0, x1) = (self.x[seg], self.x[seg + 1]);
        let (s0, s1) = (self.slopes[seg], self.slopes[seg + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        x0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + h * s0 * (t3 - 2.0 * t2 + t)
            + x1 * (-2.0 * t3 + 3.0 * t2)
            + h * s1 * (t3 - t2)
    }
}

/// Fritsch-Carlson slopes: the interpolant preserves monotonicity of the data.
fn pchip_slopes(d: &[f64], x: &[f64]) -> Vec<f64> {
    let n = d.len();
    let h: Vec<f64> = (0..n - 1).map(|i| d[i + 1] - d[i]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (x[i + 1] - x[i]) / h[i]).collect();
    let mut m = vec![0.0; n];
    if n == 2 {
        m[0] = delta[0];
        m[1] = delta[0];
        return m;
    }
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] <= 0.0 {
            m[i] = 0.0;
        } else {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    // one-sided endpoint slopes, clamped to preserve shape
    let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
        let mut s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if s * d0 <= 0.0 {
            s = 0.0;
        } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
            s = 3.0 * d0;
        }
        s
    };
    m[0] = end(h[0], h[1], delta[0], delta[1]);
    m[n - 1] = end(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    m
}

/// Result of inverting a sample mean through a calibration curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Inversion {
    /// Estimated separation.
    pub d: f64,
    /// True when the sample mean fell outside the curve range and the
    /// estimate was clamped to the nearest endpoint.
    pub saturated: bool,
}

/// Separation estimate: the `d` at which the calibration curve equals the
/// sample mean `x_bar`, to within `1e-6` in `d`. Out-of-range means clamp to
/// the nearest endpoint and flag saturation.
pub fn invert_calibration(curve: &MonotoneCurve, x_bar: f64) -> Inversion {
    let (d_lo, d_hi) = curve.d_range();
    let (x_lo, x_hi) = (curve.eval(d_lo), curve.eval(d_hi));
    let (x_min, x_max) = if curve.increasing {
        (x_lo, x_hi)
    } else {
        (x_hi, x_lo)
    };
    if x_bar < x_min {
        return Inversion {
            d: if curve.increasing { d_lo } else { d_hi },
            saturated: true,
        };
    }
    if x_bar > x_max {
        return Inversion {
            d: if curve.increasing { d_hi } else { d_lo },
            saturated: true,
        };
    }
    let mut lo = d_lo;
    let mut hi = d_hi;
    // bisection on a monotone interpolant
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let above = curve.eval(mid) >= x_bar;
        if above == curve.increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Inversion {
        d: 0.5 * (lo + hi),
        saturated: false,
    }
}

/// Record of a Monte-Carlo estimation experiment.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationRun {
    /// Shots averaged into each estimate.
    pub mu: u64,
    /// Number of independent estimates.
    pub repetitions: u32,
    /// True separation of the simulated scene.
    pub d_true: f64,
    /// The individual estimates.
    pub d_tilde: Vec<f64>,
    /// Mean of the estimates.
    pub mean_d_tilde: f64,
    /// Sample variance of the estimates.
    pub empirical_var: f64,
    /// `1/(μM)` of the scene.
    pub predicted_var: f64,
    /// Mean over repetitions of the per-run sample mean of `X`.
    pub sample_mean_x: f64,
    pub seed: u64,
    /// Estimates clamped at the calibration range.
    pub saturation_count: u32,
    /// Set when more than 1% of repetitions saturated.
    pub saturation_warning: bool,
}

/// Runs `repetitions` independent method-of-moments estimates, each from the
/// sample mean of `μ` shots of `X = m·counts`, inverted through a strictly
/// monotone window of `curve`: the given `window` when supplied, otherwise
/// the maximal monotone window around the true separation.
///
/// The per-repetition RNG streams derive from `(seed, repetition)`, so runs
/// reproduce bit-identically for a fixed seed regardless of thread count.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    scene: &SceneConfig,
    crosstalk: Option<&DMatrix<Complex64>>,
    m: &DVector<f64>,
    curve: &CalibrationCurve,
    window: Option<(f64, f64)>,
    mu: u64,
    repetitions: u32,
    seed: u64,
) -> Result<EstimationRun> {
    if mu == 0 || repetitions == 0 {
        return Err(Error::config("mu and repetitions must be ≥ 1"));
    }
    if curve.scene.at_separation(scene.d) != *scene {
        return Err(Error::InvalidCalibration(
            "calibration curve was built for a different scene".into(),
        ));
    }
    if curve.m_ref.len() != m.len()
        || curve
            .m_ref
            .iter()
            .zip(m.iter())
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::InvalidCalibration(
            "calibration curve was built for different coefficients".into(),
        ));
    }
    let sampler = ShotSampler::for_scene(scene, crosstalk)?;
    let monotone = match window {
        Some(win) => MonotoneCurve::from_calibration(curve, win)?,
        None => MonotoneCurve::around(curve, scene.d)?,
    };

    let table = couplings(scene, crosstalk)?;
    let phot = photometry(scene);
    let md = moment_data(&table, &phot, scene.dark.as_ref())?;
    let m_sens = sensitivity(&md)?.m;
    let predicted_var = if m_sens > 0.0 {
        1.0 / (mu as f64 * m_sens)
    } else {
        f64::INFINITY
    };

    let weights: Vec<f64> = m.iter().copied().collect();
    let results: Vec<(f64, f64, bool)> = (0..repetitions as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep + 1);
            let mut counts = vec![0u64; sampler.mode_count()];
            let mut sum_x = 0.0;
            for _ in 0..mu {
                sampler.sample_into(&mut rng, &mut counts);
                let x: f64 = counts
                    .iter()
                    .zip(&weights)
                    .map(|(&c, &w)| w * c as f64)
                    .sum();
                sum_x += x;
            }
            let x_bar = sum_x / mu as f64;
            let inv = invert_calibration(&monotone, x_bar);
            (x_bar, inv.d, inv.saturated)
        })
        .collect();

    let n = repetitions as f64;
    let d_tilde: Vec<f64> = results.iter().map(|r| r.1).collect();
    let mean_d_tilde = d_tilde.iter().sum::<f64>() / n;
    let empirical_var = if repetitions > 1 {
        d_tilde
            .iter()
            .map(|d| (d - mean_d_tilde) * (d - mean_d_tilde))
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    let sample_mean_x = results.iter().map(|r| r.0).sum::<f64>() / n;
    let saturation_count = results.iter().filter(|r| r.2).count() as u32;
    Ok(EstimationRun {
        mu,
        repetitions,
        d_true: scene.d,
        d_tilde,
        mean_d_tilde,
        empirical_var,
        predicted_var,
        sample_mean_x,
        seed,
        saturation_count,
        saturation_warning: saturation_count as f64 > 0.01 * n,
    })
}
