//! Scene description for two thermal point sources and assembly of the
//! effective coupling amplitudes of both source images into the measurement
//! modes.
//!
//! Sources sit at `±r₀` with `r₀ = (d cos θ, d sin θ)/2`. A misalignment of
//! the measurement basis by `r_s` shifts both image displacements, and a
//! unitary crosstalk matrix mixes the ideal couplings; both effects enter
//! only through the coupling table produced by [`couplings`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{beta, beta_grad_d, hg_basis, Displacement, ImageSign, ModeIndex};
use crate::noise::{CrosstalkSpec, DarkCountSpec};

/// Lateral offset of the measurement basis relative to the source centroid,
/// in polar form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Misalignment {
    /// Offset magnitude (units of w).
    pub d_s: f64,
    /// Offset direction (radians).
    pub theta_s: f64,
}

impl Misalignment {
    pub const NONE: Misalignment = Misalignment {
        d_s: 0.0,
        theta_s: 0.0,
    };

    pub fn shift(&self) -> Displacement {
        Displacement::polar(self.d_s, self.theta_s)
    }
}

/// Full physical scenario: geometry, brightness, measured basis and noise.
///
/// All lengths are in units of the PSF waist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Source separation (the estimand), `d ≥ 0`.
    pub d: f64,
    /// Orientation of the source pair (radians).
    pub theta: f64,
    /// Mean photon number per source.
    pub n_photons: f64,
    /// Transmissivity of the imaging system, `0 < κ ≤ 1`.
    pub kappa: f64,
    /// Hermite-Gaussian cutoff; the basis holds `K = (Q+1)²` modes.
    pub q: u32,
    /// Misalignment of the demultiplexer.
    pub misalignment: Misalignment,
    /// Crosstalk ensemble settings, if crosstalk is modeled.
    pub crosstalk: Option<CrosstalkSpec>,
    /// Dark-count settings, if detector noise is modeled.
    pub dark: Option<DarkCountSpec>,
}

impl SceneConfig {
    /// An ideal (noise-free) scene.
    pub fn ideal(d: f64, theta: f64, n_photons: f64, kappa: f64, q: u32) -> Self {
        SceneConfig {
            d,
            theta,
            n_photons,
            kappa,
            q,
            misalignment: Misalignment::NONE,
            crosstalk: None,
            dark: None,
        }
    }

    pub fn with_misalignment(mut self, d_s: f64, theta_s: f64) -> Self {
        self.misalignment = Misalignment { d_s, theta_s };
        self
    }

    pub fn with_crosstalk(mut self, spec: CrosstalkSpec) -> Self {
        self.crosstalk = Some(spec);
        self
    }

    pub fn with_dark(mut self, dark: DarkCountSpec) -> Self {
        self.dark = Some(dark);
        self
    }

    /// Same scene at a different separation.
    pub fn at_separation(&self, d: f64) -> Self {
        let mut c = self.clone();
        c.d = d;
        c
    }

    /// Number of measurement modes `K = (Q+1)²`.
    pub fn mode_count(&self) -> usize {
        ((self.q + 1) * (self.q + 1)) as usize
    }

    /// Mean received photon number per source, `Nκ`.
    pub fn n_kappa(&self) -> f64 {
        self.n_photons * self.kappa
    }

    pub fn basis(&self) -> Result<Vec<ModeIndex>> {
        hg_basis(self.q)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.d.is_finite() || self.d < 0.0 {
            return Err(Error::config(format!(
                "separation d = {} must be ≥ 0",
                self.d
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::config("orientation theta must be finite"));
        }
        if !self.n_photons.is_finite() || self.n_photons < 0.0 {
            return Err(Error::config(format!(
                "mean photon number N = {} must be ≥ 0",
                self.n_photons
            )));
        }
        if !self.kappa.is_finite() || self.kappa <= 0.0 || self.kappa > 1.0 {
            return Err(Error::config(format!(
                "transmissivity kappa = {} must lie in (0, 1]",
                self.kappa
            )));
        }
        hg_basis(self.q)?;
        if !self.misalignment.d_s.is_finite()
            || self.misalignment.d_s < 0.0
            || !self.misalignment.theta_s.is_finite()
        {
            return Err(Error::config("misalignment must be finite with d_s ≥ 0"));
        }
        if let Some(spec) = &self.crosstalk {
            spec.validate(self.mode_count())?;
        }
        if let Some(dark) = &self.dark {
            dark.validate(self.mode_count())?;
        }
        Ok(())
    }
}

/// Photon-number bookkeeping of the symmetric/antisymmetric image modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourcePhotometry {
    /// Overlap of the two source images, `δ = e^{-d²/2}`.
    pub delta: f64,
    /// Effective coupling of the symmetric mode, `κ(1 + δ)`.
    pub kappa_plus: f64,
    /// Effective coupling of the antisymmetric mode, `κ(1 - δ)`.
    pub kappa_minus: f64,
    /// Mean photon number of the symmetric mode, `N κ₊`.
    pub n_plus: f64,
    /// Mean photon number of the antisymmetric mode, `N κ₋`.
    pub n_minus: f64,
    /// Mean received photons per source, `Nκ`.
    pub n_kappa: f64,
}

/// Overlap between the images of the two sources.
///
/// The closed form `e^{-d²/2}` is certified against the quadrature oracle in
/// the test suite; this function evaluates the certified form.
pub fn overlap_delta(d: f64) -> f64 {
    (-0.5 * d * d).exp()
}

/// Photometry of a scene: `κ± = κ(1 ± δ)`, `N± = N κ±`.
pub fn photometry(config: &SceneConfig) -> SourcePhotometry {
    let delta = overlap_delta(config.d);
    let kappa_plus = config.kappa * (1.0 + delta);
    let kappa_minus = config.kappa * (1.0 - delta);
    SourcePhotometry {
        delta,
        kappa_plus,
        kappa_minus,
        n_plus: config.n_photons * kappa_plus,
        n_minus: config.n_photons * kappa_minus,
        n_kappa: config.n_kappa(),
    }
}

/// Effective coupling amplitudes of the two source images into every
/// measurement mode, together with their separation derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapTable {
    pub f_plus: DVector<Complex64>,
    pub f_minus: DVector<Complex64>,
    pub df_plus: DVector<Complex64>,
    pub df_minus: DVector<Complex64>,
}

impl OverlapTable {
    pub fn len(&self) -> usize {
        self.f_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_plus.len() == 0
    }

    /// True when every entry is purely real (no crosstalk, or a real matrix).
    pub fn is_real(&self) -> bool {
        let re = |v: &DVector<Complex64>| v.iter().all(|z| z.im == 0.0);
        re(&self.f_plus) && re(&self.f_minus) && re(&self.df_plus) && re(&self.df_minus)
    }

    /// From real coupling vectors.
    pub fn from_real(
        f_plus: Vec<f64>,
        f_minus: Vec<f64>,
        df_plus: Vec<f64>,
        df_minus: Vec<f64>,
    ) -> Self {
        let lift = |v: Vec<f64>| {
            DVector::from_iterator(v.len(), v.into_iter().map(|x| Complex64::new(x, 0.0)))
        };
        OverlapTable {
            f_plus: lift(f_plus),
            f_minus: lift(f_minus),
            df_plus: lift(df_plus),
            df_minus: lift(df_minus),
        }
    }
}

/// Largest entry of `|c†c - I|`; zero for exactly unitary matrices.
pub(crate) fn unitarity_defect(c: &DMatrix<Complex64>) -> f64 {
    let k = c.nrows();
    let gram = c.adjoint() * c;
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - Complex64::new(want, 0.0)).norm());
        }
    }
    worst
}

/// Assembles the coupling table of a scene.
///
/// With `crosstalk = None` this is the ideal HG table
/// `f±ₖ = β_k(±r₀ - r_s)`; a crosstalk matrix `c` maps it to `c f±`.
/// The matrix must be unitary to within `1e-10` and match the basis size.
pub fn couplings(
    config: &SceneConfig,
    crosstalk: Option<&DMatrix<Complex64>>,
) -> Result<OverlapTable> {
    config.validate()?;
    let basis = config.basis()?;
    let k = basis.len();
    let r_s = config.misalignment.shift();
    let r0 = Displacement::polar(0.5 * config.d, config.theta);

    let mut f_plus = Vec::with_capacity(k);
    let mut f_minus = Vec::with_capacity(k);
    let mut df_plus = Vec::with_capacity(k);
    let mut df_minus = Vec::with_capacity(k);
    for &mode in &basis {
        f_plus.push(beta(mode, r0 - r_s));
        f_minus.push(beta(mode, -r0 - r_s));
        df_plus.push(beta_grad_d(
            mode,
            ImageSign::Plus,
            config.d,
            config.theta,
            r_s,
        ));
        df_minus.push(beta_grad_d(
            mode,
            ImageSign::Minus,
            config.d,
            config.theta,
            r_s,
        ));
    }
    let mut table = OverlapTable::from_real(f_plus, f_minus, df_plus, df_minus);

    if let Some(c) = crosstalk {
        if c.nrows() != k || c.ncols() != k {
            return Err(Error::config(format!(
                "crosstalk matrix is {}x{}, expected {k}x{k}",
                c.nrows(),
                c.ncols()
            )));
        }
        let defect = unitarity_defect(c);
        if defect > 1e-10 {
            return Err(Error::NonUnitaryCrosstalk { defect });
        }
        table = OverlapTable {
            f_plus: c * table.f_plus,
            f_minus: c * table.f_minus,
            df_plus: c * table.df_plus,
            df_minus: c * table.df_minus,
        };
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{quad_overlap, DisplacedMode};
    use approx::assert_abs_diff_eq;

    fn scene(d: f64) -> SceneConfig {
        SceneConfig::ideal(d, 0.0, 1.5, 1.0, 2)
    }

    #[test]
    fn delta_at_zero_separation_is_one() {
        assert_eq!(overlap_delta(0.0), 1.0);
    }

    #[test]
    fn delta_matches_oracle_at_one_waist() {
        let d = 1.0;
        // images sit at ±d/2
        let a = DisplacedMode::psf_at((0.5 * d, 0.0));
        let b = DisplacedMode::psf_at((-0.5 * d, 0.0));
        let oracle = quad_overlap(&a, &b).unwrap();
        assert_abs_diff_eq!(overlap_delta(d), oracle, epsilon = 1e-8);
        assert_abs_diff_eq!(overlap_delta(d), 0.606_530_659_712_633_4, epsilon = 1e-15);
    }

    #[test]
    fn delta_decays_hard_at_large_separation() {
        assert!(overlap_delta(10.0) < 1e-20);
    }

    #[test]
    fn photometry_splits_equally_without_overlap() {
        // far-separated sources: δ ≈ 0
        let mut cfg = scene(60.0);
        cfg.kappa = 0.8;
        cfg.n_photons = 2.0;
        let p = photometry(&cfg);
        assert_abs_diff_eq!(p.n_plus, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p.n_minus, 1.6, epsilon = 1e-12);
    }

    #[test]
    fn photometry_darkens_antisymmetric_mode_at_zero_separation() {
        let mut cfg = scene(0.0);
        cfg.kappa = 0.5;
        cfg.n_photons = 2.0;
        let p = photometry(&cfg);
        assert_eq!(p.n_plus, 2.0);
        assert_eq!(p.n_minus, 0.0);
    }

    #[test]
    fn photometry_frozen_values_at_one_waist() {
        let cfg = scene(1.0);
        let p = photometry(&cfg);
        assert_abs_diff_eq!(p.n_plus, 2.409_795_989_568_95, epsilon = 1e-12);
        assert_abs_diff_eq!(p.n_minus, 0.590_204_010_431_05, epsilon = 1e-12);
    }

    #[test]
    fn couplings_symmetric_at_zero_separation() {
        let table = couplings(&scene(0.0), None).unwrap();
        for i in 0..table.len() {
            assert_eq!(table.f_plus[i], table.f_minus[i]);
            assert_abs_diff_eq!(table.df_plus[i].re, -table.df_minus[i].re, epsilon = 1e-15);
        }
    }

    #[test]
    fn couplings_fundamental_matches_frozen_overlap() {
        let cfg = scene(1.0);
        let table = couplings(&cfg, None).unwrap();
        // e^{-1/8}
        assert_abs_diff_eq!(table.f_plus[0].re, 0.882_496_902_584_595_4, epsilon = 1e-15);
        assert_abs_diff_eq!(
            table.f_minus[0].re,
            0.882_496_902_584_595_4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn couplings_reject_non_unitary_matrix() {
        let cfg = scene(0.5);
        let k = cfg.mode_count();
        let mut c = DMatrix::<Complex64>::identity(k, k);
        c[(0, 0)] = Complex64::new(0.9, 0.0);
        match couplings(&cfg, Some(&c)) {
            Err(Error::NonUnitaryCrosstalk { defect }) => assert!(defect > 1e-2),
            other => panic!("expected non-unitary error, got {other:?}"),
        }
    }

    #[test]
    fn couplings_norm_invariant_under_unitary_mixing() {
        use crate::noise::{CrosstalkSampler, CrosstalkSpec};
        let cfg = scene(0.7);
        let spec = CrosstalkSpec {
            mean_offdiag_power: 0.002,
            seed: 11,
            ensemble_size: 1,
        };
        let sampler = CrosstalkSampler::new(cfg.mode_count(), &spec).unwrap();
        let c = sampler.draw(0);
        let ideal = couplings(&cfg, None).unwrap();
        let mixed = couplings(&cfg, Some(&c)).unwrap();
        let norm = |t: &OverlapTable| {
            t.f_plus.iter().map(|z| z.norm_sqr()).sum::<f64>()
                + t.f_minus.iter().map(|z| z.norm_sqr()).sum::<f64>()
        };
        assert_abs_diff_eq!(norm(&ideal), norm(&mixed), epsilon = 1e-12);
    }

    #[test]
    fn misaligned_table_reduces_to_aligned_at_zero_offset() {
        let cfg = scene(0.8).with_misalignment(0.0, 1.2);
        let aligned = couplings(&scene(0.8), None).unwrap();
        let shifted = couplings(&cfg, None).unwrap();
        assert_eq!(aligned, shifted);
    }

    #[test]
    fn rotating_by_pi_swaps_the_two_images() {
        let mut cfg = scene(0.9).with_misalignment(0.05, 0.4);
        cfg.theta = 0.3;
        let table = couplings(&cfg, None).unwrap();
        let mut rotated_cfg = cfg.clone();
        rotated_cfg.theta = cfg.theta + std::f64::consts::PI;
        let rotated = couplings(&rotated_cfg, None).unwrap();
        for i in 0..table.len() {
            assert_abs_diff_eq!(rotated.f_plus[i].re, table.f_minus[i].re, epsilon = 1e-14);
            assert_abs_diff_eq!(rotated.f_minus[i].re, table.f_plus[i].re, epsilon = 1e-14);
            assert_abs_diff_eq!(rotated.df_plus[i].re, table.df_minus[i].re, epsilon = 1e-14);
            assert_abs_diff_eq!(rotated.df_minus[i].re, table.df_plus[i].re, epsilon = 1e-14);
        }
    }

    #[test]
    fn coupling_power_obeys_the_bessel_bound() {
        for &(d, q, ds) in &[
            (0.0, 1u32, 0.0),
            (0.7, 2, 0.0),
            (1.5, 3, 0.08),
            (3.0, 4, 0.3),
        ] {
            let cfg = scene(d).with_misalignment(ds, 0.9);
            let mut cfg = cfg;
            cfg.q = q;
            let table = couplings(&cfg, None).unwrap();
            let power = |v: &nalgebra::DVector<num_complex::Complex64>| {
                v.iter().map(|z| z.norm_sqr()).sum::<f64>()
            };
            assert!(power(&table.f_plus) <= 1.0 + 1e-12);
            assert!(power(&table.f_minus) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn couplings_are_continuous_in_the_misalignment() {
        let base = couplings(&scene(0.8), None).unwrap();
        for &eps in &[1e-3, 1e-6, 1e-9] {
            let shifted = couplings(&scene(0.8).with_misalignment(eps, 0.7), None).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..base.len() {
                worst = worst.max((shifted.f_plus[i] - base.f_plus[i]).norm());
                worst = worst.max((shifted.f_minus[i] - base.f_minus[i]).norm());
            }
            // β and its gradients are O(1) on this geometry
            assert!(worst <= 10.0 * eps, "jump {worst:.3e} for offset {eps:.1e}");
        }
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        let mut cfg = scene(0.5);
        cfg.kappa = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = scene(0.5);
        cfg.d = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = scene(0.5);
        cfg.n_photons = f64::NAN;
        assert!(cfg.validate().is_err());
    }
}
