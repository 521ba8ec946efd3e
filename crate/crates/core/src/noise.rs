//! Noise models: weak unitary crosstalk ensembles and detector dark counts.
//!
//! Crosstalk matrices are drawn as `c = exp(iεH)` with `H` a random complex
//! Hermitian matrix (independent standard-normal entries, symmetrized). The
//! single knob `ε` is calibrated once per `(K, target)` by bisection on a
//! pilot ensemble so the ensemble-average off-diagonal power
//! `⟨Σ_{i≠j}|c_ij|²/K(K-1)⟩` matches the requested value. Draws are
//! deterministic functions of `(seed, draw index)`, so ensembles reproduce
//! bit-identically regardless of scheduling.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{couplings, photometry, SceneConfig};
use crate::moments::{moment_data, sensitivity};

/// Stream-id offset separating pilot draws from production draws.
const PILOT_STREAM_BASE: u64 = 1 << 40;
/// Pilot ensemble size used for the ε calibration.
const PILOT_DRAWS: usize = 200;

/// Ensemble settings for weak unitary crosstalk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrosstalkSpec {
    /// Target ensemble-average off-diagonal power `⟨|c_ij|²⟩`.
    pub mean_offdiag_power: f64,
    /// Seed of the matrix ensemble.
    pub seed: u64,
    /// Number of matrices in ensemble statistics.
    pub ensemble_size: usize,
}

impl CrosstalkSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !self.mean_offdiag_power.is_finite() || self.mean_offdiag_power < 0.0 {
            return Err(Error::config("crosstalk power must be finite and ≥ 0"));
        }
        if k > 1 && self.mean_offdiag_power >= 1.0 / k as f64 {
            return Err(Error::InfeasibleCrosstalkPower {
                target: self.mean_offdiag_power,
                k,
            });
        }
        if self.ensemble_size == 0 {
            return Err(Error::config("crosstalk ensemble size must be ≥ 1"));
        }
        Ok(())
    }
}

/// Per-mode dark-count strength `σ_k = N_k^dc / 2Nκ`, uniform or explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DarkCountSpec {
    Uniform(f64),
    PerMode(Vec<f64>),
}

impl DarkCountSpec {
    pub fn uniform(sigma: f64) -> Self {
        DarkCountSpec::Uniform(sigma)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |s: &f64| !s.is_finite() || *s < 0.0;
        match self {
            DarkCountSpec::Uniform(s) => {
                if bad(s) {
                    return Err(Error::config("dark-count strength must be finite and ≥ 0"));
                }
            }
            DarkCountSpec::PerMode(v) => {
                if v.len() != k {
                    return Err(Error::config(format!(
                        "dark-count vector has {} entries, basis has {k}",
                        v.len()
                    )));
                }
                if v.iter().any(bad) {
                    return Err(Error::config("dark-count strengths must be finite and ≥ 0"));
                }
            }
        }
        Ok(())
    }

    /// Mean dark counts per mode, `N_k^dc = 2Nκ σ_k`.
    pub fn mean_counts(&self, n_kappa: f64, k: usize) -> Result<DVector<f64>> {
        self.validate(k)?;
        Ok(match self {
            DarkCountSpec::Uniform(s) => DVector::from_element(k, 2.0 * n_kappa * s),
            DarkCountSpec::PerMode(v) => {
                DVector::from_iterator(k, v.iter().map(|s| 2.0 * n_kappa * s))
            }
        })
    }
}

/// Average off-diagonal power `Σ_{i≠j} |c_ij|² / K(K-1)` of a square matrix.
pub fn measured_offdiag_power(c: &DMatrix<Complex64>) -> f64 {
    let k = c.nrows();
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                total += c[(i, j)].norm_sqr();
            }
        }
    }
    total / (k * (k - 1)) as f64
}

/// Random Hermitian matrix with independent standard-normal entries,
/// symmetrized: `H = (A + A†)/2`.
fn random_hermitian(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<Complex64> {
    let a = DMatrix::from_fn(k, k, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    (&a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Eigendecomposition of a Hermitian matrix, reused across ε values.
struct HermitianFactors {
    eigenvalues: DVector<f64>,
    vectors: DMatrix<Complex64>,
}

impl HermitianFactors {
    fn new(h: DMatrix<Complex64>) -> Self {
        let eig = nalgebra::SymmetricEigen::new(h);
        HermitianFactors {
            eigenvalues: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// `exp(iεH) = V diag(e^{iελ}) V†`, unitary by construction.
    fn unitary(&self, eps: f64) -> DMatrix<Complex64> {
        let k = self.eigenvalues.len();
        let mut scaled = self.vectors.clone();
        for j in 0..k {
            let phase = Complex64::from_polar(1.0, eps * self.eigenvalues[j]);
            for i in 0..k {
                scaled[(i, j)] *= phase;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// Deterministic generator of weak crosstalk unitaries with a calibrated
/// ensemble-average off-diagonal power.
#[derive(Debug, Clone)]
pub struct CrosstalkSampler {
    k: usize,
    seed: u64,
    eps: f64,
}

impl CrosstalkSampler {
    /// Calibrates `ε` for dimension `k` against the spec's target power.
    pub fn new(k: usize, spec: &CrosstalkSpec) -> Result<Self> {
        spec.validate(k)?;
        let target = spec.mean_offdiag_power;
        if target == 0.0 || k < 2 {
            return Ok(CrosstalkSampler {
                k,
                seed: spec.seed,
                eps: 0.0,
            });
        }

        // pilot ensemble on salted streams, eigendecomposed once
        let pilots: Vec<HermitianFactors> = (0..PILOT_DRAWS)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(PILOT_STREAM_BASE + i as u64);
                HermitianFactors::new(random_hermitian(k, &mut rng))
            })
            .collect();
        let pilot_power = |eps: f64| -> f64 {
            pilots
                .iter()
                .map(|p| measured_offdiag_power(&p.unitary(eps)))
                .sum::<f64>()
                / PILOT_DRAWS as f64
        };

        let mut hi = 1e-3;
        while pilot_power(hi) < target {
            hi *= 2.0;
            if hi > 64.0 {
                return Err(Error::CrosstalkCalibration {
                    target,
                    achieved: pilot_power(64.0),
                });
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let p = pilot_power(mid);
            if (p - target).abs() <= 2e-3 * target {
                lo = mid;
                hi = mid;
                break;
            }
            if p < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let eps = 0.5 * (lo + hi);
        let achieved = pilot_power(eps);
        if (achieved - target).abs() > 1e-2 * target {
            return Err(Error::CrosstalkCalibration { target, achieved });
        }
        Ok(CrosstalkSampler {
            k,
            seed: spec.seed,
            eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// Calibrated generator strength.
    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    /// Draws the crosstalk unitary for one ensemble index; bit-identical for
    /// identical `(seed, index)`.
    pub fn draw(&self, index: u64) -> DMatrix<Complex64> {
        if self.eps == 0.0 {
            return DMatrix::identity(self.k, self.k);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        HermitianFactors::new(random_hermitian(self.k, &mut rng)).unitary(self.eps)
    }

    /// The first `n` matrices of the ensemble.
    pub fn ensemble(&self, n: usize) -> Vec<DMatrix<Complex64>> {
        (0..n as u64).map(|i| self.draw(i)).collect()
    }
}

/// One-off draw of a crosstalk unitary (calibrates, then draws).
///
/// For repeated draws build a [`CrosstalkSampler`] once; the calibration is
/// the expensive part.
pub fn sample_crosstalk(k: usize, spec: &CrosstalkSpec, index: u64) -> Result<DMatrix<Complex64>> {
    Ok(CrosstalkSampler::new(k, spec)?.draw(index))
}

/// Mean and spread of the sensitivity over a crosstalk ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleStats {
    pub d_grid: Vec<f64>,
    /// Ensemble mean of `M` at each separation.
    pub mean: Vec<f64>,
    /// Sample standard deviation of `M` at each separation.
    pub std: Vec<f64>,
    /// Number of draws requested per separation.
    pub n_samples: usize,
    /// Draws excluded at each separation because the scenario was degenerate.
    pub failed: Vec<usize>,
}

/// Sensitivity statistics over the scene's crosstalk ensemble on a grid of
/// separations. Scenes without a crosstalk spec are treated as a one-draw
/// ensemble of the identity.
///
/// Degenerate draws are excluded and counted; other errors abort.
pub fn ensemble_sensitivity(scene: &SceneConfig, d_grid: &[f64]) -> Result<EnsembleStats> {
    scene.validate()?;
    let spec = scene.crosstalk.unwrap_or(CrosstalkSpec {
        mean_offdiag_power: 0.0,
        seed: 0,
        ensemble_size: 1,
    });
    let sampler = CrosstalkSampler::new(scene.mode_count(), &spec)?;
    let matrices = sampler.ensemble(spec.ensemble_size);

    let rows: Vec<Result<(f64, f64, usize)>> = d_grid
        .par_iter()
        .map(|&d| {
            let cfg = scene.at_separation(d);
            let mut values = Vec::with_capacity(matrices.len());
            let mut failed = 0usize;
            for c in &matrices {
                let table = couplings(&cfg, Some(c))?;
                let phot = photometry(&cfg);
                let md = moment_data(&table, &phot, cfg.dark.as_ref())?;
                match sensitivity(&md) {
                    Ok(s) => values.push(s.m),
                    Err(Error::DegenerateScenario { .. }) => failed += 1,
                    Err(e) => return Err(e),
                }
            }
            if values.is_empty() {
                return Err(Error::config(format!(
                    "all {failed} crosstalk draws degenerate at d = {d}"
                )));
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = if values.len() > 1 {
                values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            Ok((mean, var.sqrt(), failed))
        })
        .collect();

    let mut mean = Vec::with_capacity(d_grid.len());
    let mut std = Vec::with_capacity(d_grid.len());
    let mut failed = Vec::with_capacity(d_grid.len());
    for row in rows {
        let (m, s, f) = row?;
        mean.push(m);
        std.push(s);
        failed.push(f);
    }
    Ok(EnsembleStats {
        d_grid: d_grid.to_vec(),
        mean,
        std,
        n_samples: spec.ensemble_size,
        failed,
    })
}

/// Componentwise mean and spread of the optimal coefficients over the
/// scene's crosstalk ensemble, sign-aligned to the crosstalk-free vector.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n_samples: usize,
    pub failed: usize,
}

pub fn ensemble_coefficients(scene: &SceneConfig) -> Result<CoefficientStats> {
    scene.validate()?;
    let spec = scene.crosstalk.unwrap_or(CrosstalkSpec {
        mean_offdiag_power: 0.0,
        seed: 0,
        ensemble_size: 1,
    });
    let sampler = CrosstalkSampler::new(scene.mode_count(), &spec)?;

    let reference = {
        let table = couplings(scene, None)?;
        let phot = photometry(scene);
        let md = moment_data(&table, &phot, scene.dark.as_ref())?;
        sensitivity(&md)?.coefficients
    };

    let k = scene.mode_count();
    let mut sum = DVector::<f64>::zeros(k);
    let mut sum_sq = DVector::<f64>::zeros(k);
    let mut kept = 0usize;
    let mut failed = 0usize;
    for i in 0..spec.ensemble_size as u64 {
        let c = sampler.draw(i);
        let table = couplings(scene, Some(&c))?;
        let phot = photometry(scene);
        let md = moment_data(&table, &phot, scene.dark.as_ref())?;
        match sensitivity(&md) {
            Ok(s) => {
                let mut v = s.coefficients;
                if v.dot(&reference) < 0.0 {
                    v = -v;
                }
                sum += &v;
                sum_sq += v.component_mul(&v);
                kept += 1;
            }
            Err(Error::DegenerateScenario { .. }) => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if kept == 0 {
        return Err(Error::config("all crosstalk draws degenerate"));
    }
    let n = kept as f64;
    let mean = &sum / n;
    let std = DVector::from_fn(k, |i, _| {
        if kept > 1 {
            ((sum_sq[i] - n * mean[i] * mean[i]).max(0.0) / (n - 1.0)).sqrt()
        } else {
            0.0
        }
    });
    Ok(CoefficientStats {
        mean: mean.iter().copied().collect(),
        std: std.iter().copied().collect(),
        n_samples: spec.ensemble_size,
        failed,
    })
}
