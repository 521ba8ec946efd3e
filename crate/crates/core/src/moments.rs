//! Second-moment machinery: covariance matrix, derivative vector, optimized
//! sensitivity and optimal linear-combination coefficients.
//!
//! For a thermal two-source scene the photon-count statistics of the
//! measurement modes are fixed by the first-order coherence
//! `G_kl = Nκ (f₊ₖ* f₊ₗ + f₋ₖ* f₋ₗ)`:
//!
//! * mean counts `N_k = G_kk`,
//! * covariance `Γ_kl = |G_kl|² + δ_kl N_k`.
//!
//! For real coupling tables the `|G|²` term expands to the familiar
//! `(Nκ)²(g₊g₊ᵀ + g₋g₋ᵀ + 2hhᵀ)` rank-three structure with `g± = f±²`,
//! `h = f₊f₋`; the expanded form is used by the brute-force oracle in the
//! tests and by the factored large-K path below.
//!
//! Dark counts add `N_k^dc` to the means and `N_k^dc (2N_k^dc + 1)` to the
//! covariance diagonal and leave the derivative vector untouched.
//!
//! The optimized sensitivity is `M = Dᵀ Γ⁻¹ D`, attained by the coefficient
//! vector `m ∝ Γ⁻¹D`. The solve uses a symmetrically scaled Cholesky
//! factorization restricted to live modes (`N'_k > 0`); modes with no
//! photons are excluded and get `m_k = 0`. A condition estimate of the
//! scaled covariance is surfaced, and estimates beyond `1e12` are reported
//! as degenerate scenarios rather than silently inverted.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{couplings, photometry, OverlapTable, SceneConfig, SourcePhotometry};
use crate::noise::DarkCountSpec;

/// Hard cap on the dense covariance dimension; 8 K² bytes of storage means
/// this bound keeps a single matrix under ~0.5 GiB. Larger bases (fine pixel
/// grids) must use the factored path, which never materializes Γ.
pub const MAX_DENSE_MODES: usize = 8192;

/// Condition estimate beyond which a scenario is reported as degenerate.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Mean counts, covariance and separation derivative of one scene.
#[derive(Debug, Clone)]
pub struct MomentData {
    /// Mean photon numbers `N'_k`, dark counts included.
    pub n_prime: DVector<f64>,
    /// Covariance matrix `Γ'`, dark counts included.
    pub gamma: DMatrix<f64>,
    /// Derivative vector `D_k = ∂N_k/∂d` (dark counts drop out).
    pub d_vec: DVector<f64>,
    /// Indices of modes with `N'_k > 0`.
    pub live: Vec<usize>,
}

/// Covariance `Γ'` and mean vector `N'` of the mode counts.
///
/// `dark_means` are the per-mode dark-count means `N_k^dc`; pass `None` for
/// ideal detectors. Use [`DarkCountSpec::mean_counts`] to derive them from a
/// relative noise strength.
pub fn covariance(
    table: &OverlapTable,
    phot: &SourcePhotometry,
    dark_means: Option<&DVector<f64>>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let k = table.len();
    if k > MAX_DENSE_MODES {
        return Err(Error::config(format!(
            "dense covariance for K = {k} exceeds the {MAX_DENSE_MODES}-mode bound; \
             use the factored path"
        )));
    }
    if let Some(dc) = dark_means {
        if dc.len() != k {
            return Err(Error::config(
                "dark-count vector length does not match basis",
            ));
        }
        if dc.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::config("dark-count means must be finite and ≥ 0"));
        }
    }
    let nk = phot.n_kappa;
    let mut gamma = DMatrix::<f64>::zeros(k, k);
    let mut n_prime = DVector::<f64>::zeros(k);
    for i in 0..k {
        let ni = nk * (table.f_plus[i].norm_sqr() + table.f_minus[i].norm_sqr());
        n_prime[i] = ni;
        for j in 0..=i {
            let g = nk
                * (table.f_plus[i].conj() * table.f_plus[j]
                    + table.f_minus[i].conj() * table.f_minus[j]);
            let v = g.norm_sqr();
            gamma[(i, j)] = v;
            gamma[(j, i)] = v;
        }
        gamma[(i, i)] += ni;
    }
    if let Some(dc) = dark_means {
        for i in 0..k {
            n_prime[i] += dc[i];
            gamma[(i, i)] += dc[i] * (2.0 * dc[i] + 1.0);
        }
    }
    Ok((gamma, n_prime))
}

/// Derivative vector `D_k = 2Nκ Re(f₊ₖ* ∂f₊ₖ + f₋ₖ* ∂f₋ₖ)`.
pub fn derivative_vector(table: &OverlapTable, phot: &SourcePhotometry) -> DVector<f64> {
    let k = table.len();
    DVector::from_iterator(
        k,
        (0..k).map(|i| {
            2.0 * phot.n_kappa
                * (table.f_plus[i].conj() * table.df_plus[i]
                    + table.f_minus[i].conj() * table.df_minus[i])
                    .re
        }),
    )
}

/// Assembles the full [`MomentData`] of a scene, deriving dark-count means
/// from the spec (`N_k^dc = 2Nκ σ_k`).
pub fn moment_data(
    table: &OverlapTable,
    phot: &SourcePhotometry,
    dark: Option<&DarkCountSpec>,
) -> Result<MomentData> {
    let dark_means = match dark {
        Some(spec) => Some(spec.mean_counts(phot.n_kappa, table.len())?),
        None => None,
    };
    let (gamma, n_prime) = covariance(table, phot, dark_means.as_ref())?;
    let d_vec = derivative_vector(table, phot);
    let live = (0..table.len()).filter(|&i| n_prime[i] > 0.0).collect();
    Ok(MomentData {
        n_prime,
        gamma,
        d_vec,
        live,
    })
}

/// Result of the sensitivity optimization.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    /// Optimized sensitivity `M = Dᵀ Γ⁻¹ D` (units 1/w²).
    pub m: f64,
    /// Optimal coefficients, scaled so the largest-magnitude entry is +1;
    /// dark modes carry exact zeros.
    pub coefficients: DVector<f64>,
    /// Condition estimate of the scaled covariance on live modes.
    pub condition: f64,
}

/// Power iteration for the largest eigenvalue of a symmetric matrix.
fn largest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 1e-3 * (i as f64 + 1.0));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..40 {
        let w = a * &v;
        lambda = w.norm();
        if lambda == 0.0 {
            return 0.0;
        }
        v = w / lambda;
    }
    lambda
}

/// Inverse power iteration via an existing Cholesky factorization; returns
/// the smallest-eigenvalue estimate and its eigenvector.
fn smallest_eigenvalue(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    n: usize,
) -> (f64, DVector<f64>) {
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 1e-3 * (i as f64 + 1.0));
    v /= v.norm();
    let mut lambda = f64::INFINITY;
    for _ in 0..40 {
        let w = chol.solve(&v);
        let norm = w.norm();
        if !norm.is_finite() || norm == 0.0 {
            return (0.0, v);
        }
        lambda = 1.0 / norm;
        v = w / norm;
    }
    (lambda, v)
}

/// Optimized sensitivity and optimal coefficients of one scene.
///
/// Solves `Γ' y = D` on the live modes with a symmetrically scaled Cholesky
/// factorization (no explicit inverse). Scenarios whose scaled covariance has
/// a condition estimate above [`CONDITION_LIMIT`] produce
/// [`Error::DegenerateScenario`] naming the dominant modes.
pub fn sensitivity(md: &MomentData) -> Result<Sensitivity> {
    let k = md.n_prime.len();
    let live = &md.live;
    let zeros = || Sensitivity {
        m: 0.0,
        coefficients: DVector::zeros(k),
        condition: 1.0,
    };
    if live.is_empty() {
        return Ok(zeros());
    }
    let nl = live.len();
    let d_live = DVector::from_iterator(nl, live.iter().map(|&i| md.d_vec[i]));
    if d_live.iter().all(|&x| x == 0.0) {
        return Ok(zeros());
    }

    // symmetric Jacobi scaling keeps the solve accurate even when mode
    // populations span many orders of magnitude near d → 0
    let scale = DVector::from_iterator(nl, live.iter().map(|&i| 1.0 / md.gamma[(i, i)].sqrt()));
    let mut scaled = DMatrix::<f64>::zeros(nl, nl);
    for a in 0..nl {
        for b in 0..nl {
            scaled[(a, b)] = md.gamma[(live[a], live[b])] * scale[a] * scale[b];
        }
    }

    let lambda_max = largest_eigenvalue(&scaled);
    let chol = match nalgebra::Cholesky::new(scaled.clone()) {
        Some(c) => c,
        None => {
            // not numerically SPD; regularize only to extract a diagnostic direction
            let mut ridged = scaled.clone();
            for a in 0..nl {
                ridged[(a, a)] += 1e-10;
            }
            let modes = match nalgebra::Cholesky::new(ridged) {
                Some(c) => dominant_modes(&smallest_eigenvalue(&c, nl).1, live),
                None => live.clone(),
            };
            return Err(Error::DegenerateScenario {
                condition: f64::INFINITY,
                modes,
            });
        }
    };
    let (lambda_min, v_min) = smallest_eigenvalue(&chol, nl);
    let condition = if lambda_min > 0.0 {
        lambda_max / lambda_min
    } else {
        f64::INFINITY
    };
    if condition > CONDITION_LIMIT {
        return Err(Error::DegenerateScenario {
            condition,
            modes: dominant_modes(&v_min, live),
        });
    }

    let rhs = DVector::from_fn(nl, |a, _| d_live[a] * scale[a]);
    let y_scaled = chol.solve(&rhs);
    let y = DVector::from_fn(nl, |a, _| y_scaled[a] * scale[a]);
    let m_value = d_live.dot(&y).max(0.0);

    let mut coeffs = DVector::<f64>::zeros(k);
    for (a, &i) in live.iter().enumerate() {
        coeffs[i] = y[a];
    }
    let mut peak = 0usize;
    for i in 0..k {
        if coeffs[i].abs() > coeffs[peak].abs() {
            peak = i;
        }
    }
    if coeffs[peak] != 0.0 {
        let eta = 1.0 / coeffs[peak];
        coeffs *= eta;
    }
    Ok(Sensitivity {
        m: m_value,
        coefficients: coeffs,
        condition,
    })
}

/// The three flat mode indices with the largest weight in a direction vector.
fn dominant_modes(v: &DVector<f64>, live: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().partial_cmp(&v[a].abs()).unwrap());
    order.iter().take(3).map(|&a| live[a]).collect()
}

/// Low-brightness (diagonal) sensitivity `Σ_k D_k² / N'_k` over live modes.
pub fn sensitivity_low_brightness(md: &MomentData) -> f64 {
    md.live
        .iter()
        .map(|&i| md.d_vec[i] * md.d_vec[i] / md.n_prime[i])
        .sum()
}

/// Faint-source quantum bound `2Nκ/w²`.
pub fn qfi_faint(n_photons: f64, kappa: f64, waist: f64) -> f64 {
    2.0 * n_photons * kappa / (waist * waist)
}

/// Sensitivity summary of one scene.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    /// Optimized sensitivity `M` (units 1/w²).
    pub m: f64,
    /// Optimal coefficients (max-norm normalized).
    pub coefficients: Vec<f64>,
    /// Diagonal (low-brightness) approximation of `M`.
    pub m_low_brightness: f64,
    /// Faint-source quantum bound `2Nκ/w²`.
    pub qfi_faint: f64,
    /// Number of live modes entering the solve.
    pub k_used: usize,
    /// Condition estimate of the scaled covariance.
    pub condition: f64,
}

/// Full sensitivity report of a scene.
pub fn sensitivity_report(md: &MomentData, phot: &SourcePhotometry) -> Result<SensitivityReport> {
    let s = sensitivity(md)?;
    Ok(SensitivityReport {
        m: s.m,
        coefficients: s.coefficients.iter().copied().collect(),
        m_low_brightness: sensitivity_low_brightness(md),
        qfi_faint: 2.0 * phot.n_kappa,
        k_used: md.live.len(),
        condition: s.condition,
    })
}

/// Expected value of the observable `X = m · N'` as a function of separation.
#[derive(Debug, Clone)]
pub struct CalibrationCurve {
    /// Strictly increasing separations.
    pub d_grid: Vec<f64>,
    /// `⟨X⟩(d)` on the grid, all configured noise active.
    pub x_mean: Vec<f64>,
    /// Coefficient vector the curve was computed with.
    pub m_ref: DVector<f64>,
    /// Scene the curve belongs to (separation field is ignored).
    pub scene: SceneConfig,
}

/// Builds the calibration curve `⟨X⟩(d) = Σ_k m_k N'_k(d)` for a fixed
/// coefficient vector, sweeping the scene separation over `d_grid`.
///
/// The crosstalk matrix, when the scene has one, must be passed explicitly so
/// the curve and any subsequent experiment share the exact same draw.
pub fn calibration_curve(
    scene: &SceneConfig,
    crosstalk: Option<&DMatrix<Complex64>>,
    m_ref: &DVector<f64>,
    d_grid: &[f64],
) -> Result<CalibrationCurve> {
    if d_grid.is_empty() {
        return Err(Error::config("calibration grid is empty"));
    }
    if d_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(
            "calibration grid must be strictly increasing",
        ));
    }
    if m_ref.len() != scene.mode_count() {
        return Err(Error::config(
            "coefficient vector length does not match basis",
        ));
    }
    let mut x_mean = Vec::with_capacity(d_grid.len());
    for &d in d_grid {
        let cfg = scene.at_separation(d);
        let table = couplings(&cfg, crosstalk)?;
        let phot = photometry(&cfg);
        let md = moment_data(&table, &phot, cfg.dark.as_ref())?;
        x_mean.push(m_ref.dot(&md.n_prime));
    }
    Ok(CalibrationCurve {
        d_grid: d_grid.to_vec(),
        x_mean,
        m_ref: m_ref.clone(),
        scene: scene.clone(),
    })
}

/// Diagonal-plus-low-rank representation of the covariance of a real
/// coupling table: `Γ' = diag(γ) + Σ_i u_i u_iᵀ` with the three factors
/// `Nκ g₊`, `Nκ g₋`, `√2 Nκ h` and the diagonal `γ_k = N_k + N_k^dc(2N_k^dc+1)`.
///
/// This path never materializes Γ and solves the same system as
/// [`sensitivity`] exactly (Woodbury identity), which makes fine pixel grids
/// with tens of thousands of modes cheap. Only real tables qualify.
#[derive(Debug, Clone)]
pub struct FactoredMoments {
    /// Mean photon numbers `N'_k`, dark counts included.
    pub n_prime: DVector<f64>,
    /// Diagonal part of `Γ'` (shot noise plus dark-count variance).
    pub gamma_diag: DVector<f64>,
    pub d_vec: DVector<f64>,
    /// The three rank-one factors.
    pub factors: [DVector<f64>; 3],
}

/// Builds the factored representation; fails on complex tables.
pub fn factored_moments(
    table: &OverlapTable,
    phot: &SourcePhotometry,
    dark_means: Option<&DVector<f64>>,
) -> Result<FactoredMoments> {
    if !table.is_real() {
        return Err(Error::config(
            "factored moments require a real coupling table (no complex crosstalk)",
        ));
    }
    let k = table.len();
    if let Some(dc) = dark_means {
        if dc.len() != k {
            return Err(Error::config(
                "dark-count vector length does not match basis",
            ));
        }
        if dc.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(Error::config("dark-count means must be finite and ≥ 0"));
        }
    }
    let nk = phot.n_kappa;
    let mut n_prime = DVector::zeros(k);
    let mut gamma_diag = DVector::zeros(k);
    let mut g_plus = DVector::zeros(k);
    let mut g_minus = DVector::zeros(k);
    let mut h = DVector::zeros(k);
    for i in 0..k {
        let fp = table.f_plus[i].re;
        let fm = table.f_minus[i].re;
        g_plus[i] = nk * fp * fp;
        g_minus[i] = nk * fm * fm;
        h[i] = std::f64::consts::SQRT_2 * nk * fp * fm;
        let n_i = g_plus[i] + g_minus[i];
        let dc = dark_means.map_or(0.0, |v| v[i]);
        n_prime[i] = n_i + dc;
        gamma_diag[i] = n_i + dc * (2.0 * dc + 1.0);
    }
    let d_vec = derivative_vector(table, phot);
    Ok(FactoredMoments {
        n_prime,
        gamma_diag,
        d_vec,
        factors: [g_plus, g_minus, h],
    })
}

/// Sensitivity `M = Dᵀ Γ⁻¹ D` evaluated through the Woodbury identity on the
/// factored representation, pruning zero-population entries.
pub fn sensitivity_factored(fm: &FactoredMoments) -> f64 {
    let k = fm.n_prime.len();
    // Γ = W⁻¹ + U Uᵀ on live entries, W = diag(1/γ)
    let mut dwd = 0.0;
    let mut t = Vector3::zeros();
    let mut s = Matrix3::identity();
    for i in 0..k {
        if fm.n_prime[i] <= 0.0 {
            continue;
        }
        let w = 1.0 / fm.gamma_diag[i];
        let d = fm.d_vec[i];
        let u = Vector3::new(fm.factors[0][i], fm.factors[1][i], fm.factors[2][i]);
        dwd += d * w * d;
        t += u * (w * d);
        s += u * u.transpose() * w;
    }
    let sol = s
        .lu()
        .solve(&t)
        .expect("3x3 Woodbury core is positive definite");
    (dwd - t.dot(&sol)).max(0.0)
}
