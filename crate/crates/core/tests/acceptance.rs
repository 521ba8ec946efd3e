//! Acceptance suite: one test per release gate, each printing a PASS line
//! (run with `cargo test --test acceptance -- --nocapture` to see them).
//!
//! Gates 4 and 5 carry sub-assertions that are split into their own tests so
//! the independently verifiable parts stay visible; see the test names.

use modesep::moments::{moment_data, sensitivity, sensitivity_low_brightness};
use modesep::montecarlo::{run_experiment, MonotoneCurve, ShotSampler};
use modesep::noise::{ensemble_sensitivity, CrosstalkSampler};
use modesep::quad::{quad_overlap, DisplacedMode};
use modesep::{
    beta, calibration_curve, couplings, overlap_delta, photometry, qfi_faint, sample_crosstalk,
    CrosstalkSpec, DarkCountSpec, Displacement, ModeIndex, SceneConfig,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const THETA: f64 = std::f64::consts::FRAC_PI_4;
/// Reference noise strengths: misalignment d_s/2w = 0.01, mean crosstalk
/// power 0.0017 over 500 matrices, dark-count strength 0.001.
const MIS_DS: f64 = 0.02;
const XT_POWER: f64 = 0.0017;
const XT_ENSEMBLE: usize = 500;
const DARK_SIGMA: f64 = 0.001;

fn ideal(d: f64, n_kappa: f64, q: u32) -> SceneConfig {
    SceneConfig::ideal(d, THETA, n_kappa, 1.0, q)
}

fn xt_spec(seed: u64) -> CrosstalkSpec {
    CrosstalkSpec {
        mean_offdiag_power: XT_POWER,
        seed,
        ensemble_size: XT_ENSEMBLE,
    }
}

fn sensitivity_of(cfg: &SceneConfig, c: Option<&DMatrix<Complex64>>) -> f64 {
    let table = couplings(cfg, c).unwrap();
    let md = moment_data(&table, &photometry(cfg), cfg.dark.as_ref()).unwrap();
    sensitivity(&md).unwrap().m
}

fn coefficients_of(cfg: &SceneConfig) -> DVector<f64> {
    let table = couplings(cfg, None).unwrap();
    let md = moment_data(&table, &photometry(cfg), cfg.dark.as_ref()).unwrap();
    sensitivity(&md).unwrap().coefficients
}

#[test]
fn acceptance_01_overlap_certification() {
    // δ(d) against the quadrature oracle
    let mut worst_delta: f64 = 0.0;
    for &d in &[0.0, 0.1, 0.5, 1.0, 2.0, 3.0] {
        let a = DisplacedMode::psf_at((0.5 * d, 0.0));
        let b = DisplacedMode::psf_at((-0.5 * d, 0.0));
        let oracle = quad_overlap(&a, &b).unwrap();
        worst_delta = worst_delta.max((overlap_delta(d) - oracle).abs());
    }
    assert!(worst_delta < 1e-8, "δ deviation {worst_delta:.3e}");

    // β_k(b) against the oracle over the full certification grid
    let mut cases = Vec::new();
    for n in 0..=4u32 {
        for m in 0..=4u32 {
            for &r in &[0.0, 0.1, 0.5, 1.0, 2.0] {
                for &phi in &[0.0, THETA, std::f64::consts::FRAC_PI_2] {
                    cases.push((n, m, r, phi));
                }
            }
        }
    }
    let worst_beta = cases
        .par_iter()
        .map(|&(n, m, r, phi)| {
            let k = ModeIndex::new(n, m).unwrap();
            let b = Displacement::polar(r, phi);
            let mode = DisplacedMode {
                k,
                center: (0.0, 0.0),
            };
            let displaced = DisplacedMode::psf_at((b.x, b.y));
            (beta(k, b) - quad_overlap(&mode, &displaced).unwrap()).abs()
        })
        .reduce(|| 0.0, f64::max);
    assert!(worst_beta < 1e-8, "β deviation {worst_beta:.3e}");

    // orthonormality of the measurement basis up to n, m ≤ 6
    let mut pairs = Vec::new();
    for a in 0..49u32 {
        for b in a..49u32 {
            pairs.push((a, b));
        }
    }
    let worst_ortho = pairs
        .par_iter()
        .map(|&(a, b)| {
            let ka = ModeIndex::new(a / 7, a % 7).unwrap();
            let kb = ModeIndex::new(b / 7, b % 7).unwrap();
            let want = if ka == kb { 1.0 } else { 0.0 };
            let ma = DisplacedMode {
                k: ka,
                center: (0.0, 0.0),
            };
            let mb = DisplacedMode {
                k: kb,
                center: (0.0, 0.0),
            };
            (quad_overlap(&ma, &mb).unwrap() - want).abs()
        })
        .reduce(|| 0.0, f64::max);
    assert!(
        worst_ortho < 1e-8,
        "orthonormality deviation {worst_ortho:.3e}"
    );

    println!(
        "acceptance 1 (overlap certification): PASS — max deviation δ {worst_delta:.2e}, \
         β {worst_beta:.2e} over {} cases, orthonormality {worst_ortho:.2e}",
        cases.len()
    );
}

#[test]
fn acceptance_02_faint_qfi_saturation() {
    let n_kappa = 1e-3;
    let bound = qfi_faint(n_kappa, 1.0, 1.0);
    let mut worst = f64::INFINITY;
    for i in 0..=38 {
        let d = 0.05 + 0.025 * i as f64;
        let ratio = sensitivity_of(&ideal(d, n_kappa, 5), None) / bound;
        assert!(
            (0.99..=1.0 + 1e-9).contains(&ratio),
            "M/(2Nκ) = {ratio} at d = {d}"
        );
        worst = worst.min(ratio);
    }
    println!(
        "acceptance 2 (faint QFI saturation): PASS — min M/(2Nκ) = {worst:.5} on d ∈ [0.05, 1]w"
    );
}

#[test]
fn acceptance_03_low_brightness_consistency() {
    let xt = sample_crosstalk(9, &xt_spec(404), 0).unwrap();
    let mut worst: f64 = 0.0;
    for &n_kappa in &[1e-3, 1e-4] {
        for i in 0..=19 {
            let d = 0.1 + 0.1 * i as f64;
            for noise in 0..4 {
                let mut cfg = ideal(d, n_kappa, 2);
                let mut c = None;
                match noise {
                    1 => cfg = cfg.with_misalignment(MIS_DS, THETA),
                    2 => cfg = cfg.with_dark(DarkCountSpec::uniform(DARK_SIGMA)),
                    3 => c = Some(&xt),
                    _ => {}
                }
                let table = couplings(&cfg, c).unwrap();
                let md = moment_data(&table, &photometry(&cfg), cfg.dark.as_ref()).unwrap();
                let full = sensitivity(&md).unwrap().m;
                let diagonal = sensitivity_low_brightness(&md);
                let rel = (full - diagonal).abs() / full;
                assert!(
                    rel < 1e-2,
                    "relative gap {rel:.3e} at d={d}, Nκ={n_kappa}, noise case {noise}"
                );
                worst = worst.max(rel);
            }
        }
    }
    println!(
        "acceptance 3 (diagonal-form consistency): PASS — worst |M - Σ D²/N'|/M = {worst:.2e}"
    );
}

/// The three single-noise sensitivity curves at the reference parameters.
/// Returns (d grid, M values) per noise case.
fn noise_curves() -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let grid: Vec<f64> = std::iter::once(1e-3)
        .chain((1..=80).map(|i| 0.025 * i as f64))
        .collect();
    let mut out = Vec::new();

    let mis: Vec<f64> = grid
        .par_iter()
        .map(|&d| sensitivity_of(&ideal(d, 1.5, 2).with_misalignment(MIS_DS, THETA), None))
        .collect();
    out.push(("misalignment", grid.clone(), mis));

    let scene = ideal(0.5, 1.5, 2).with_crosstalk(xt_spec(2024));
    let stats = ensemble_sensitivity(&scene, &grid).unwrap();
    assert!(stats.failed.iter().all(|&f| f == 0));
    out.push(("crosstalk", grid.clone(), stats.mean));

    let dark: Vec<f64> = grid
        .par_iter()
        .map(|&d| {
            sensitivity_of(
                &ideal(d, 1.5, 2).with_dark(DarkCountSpec::uniform(DARK_SIGMA)),
                None,
            )
        })
        .collect();
    out.push(("dark counts", grid, dark));
    out
}

#[test]
fn acceptance_04_noise_kills_small_separations() {
    let mut summary = String::new();
    for (name, grid, m) in noise_curves() {
        assert!((grid[0] - 1e-3).abs() < 1e-12);
        let peak = m.iter().cloned().fold(0.0, f64::max);
        let ratio = m[0] / peak;
        assert!(
            ratio < 0.01,
            "{name}: M(1e-3 w) = {:.3e} is {ratio:.3e} of the peak {peak:.3e}",
            m[0]
        );
        summary.push_str(&format!("{name} M(0)/peak {ratio:.1e}; "));
    }
    println!("acceptance 4a (noise limits d → 0): PASS — {summary}");
}

#[test]
fn acceptance_04_single_interior_maximum() {
    // strict shape gate: exactly one interior local maximum on (0, 2w);
    // a relative prominence guard of 1e-6 only filters floating-point ties
    let mut failures = Vec::new();
    for (name, grid, m) in noise_curves() {
        let peak = m.iter().cloned().fold(0.0, f64::max);
        let tol = 1e-6 * peak;
        let mut maxima = Vec::new();
        for i in 1..m.len() - 1 {
            if m[i] > m[i - 1] + tol && m[i] > m[i + 1] + tol {
                maxima.push((grid[i], m[i]));
            }
        }
        if maxima.len() != 1 {
            failures.push(format!("{name}: interior maxima at {maxima:?}"));
        }
    }
    assert!(
        failures.is_empty(),
        "single-interior-maximum gate failed:\n  {}\n\
         The secondary maximum near d ≈ 1.7w is a real feature of the Q = 2 \
         truncated basis at Nκ = 1.5: the full-basis sensitivity recovers \
         toward 2Nκ/w² at large d while truncation pulls it down, leaving a \
         shallow (≈5% above the local dip) interior bump in every noisy curve.",
        failures.join("\n  ")
    );
    println!("acceptance 4b (single interior maximum): PASS");
}

#[test]
fn acceptance_05_coefficient_structure() {
    let d = 0.05;
    // exact degeneracy of m_{i,k-i} along diagonals at θ = π/4
    let m_ideal = coefficients_of(&ideal(d, 1.5, 2));
    let basis = ideal(d, 1.5, 2).basis().unwrap();
    let mut worst_gap: f64 = 0.0;
    for order in 1..=2u32 {
        let group: Vec<f64> = basis
            .iter()
            .enumerate()
            .filter(|(_, k)| k.total_order() == order)
            .map(|(i, _)| m_ideal[i])
            .collect();
        for pair in group.windows(2) {
            worst_gap = worst_gap.max((pair[1] - pair[0]).abs());
        }
    }
    assert!(worst_gap < 1e-9, "degeneracy gap {worst_gap:.3e}");

    // dark counts deplete the total-order-2 coefficients by at least 5x
    let m_dark = coefficients_of(&ideal(d, 1.5, 2).with_dark(DarkCountSpec::uniform(DARK_SIGMA)));
    let mut worst_depletion = f64::INFINITY;
    for (i, k) in basis.iter().enumerate() {
        if k.total_order() == 2 {
            let factor = m_ideal[i].abs() / m_dark[i].abs();
            worst_depletion = worst_depletion.min(factor);
        }
    }
    assert!(
        worst_depletion >= 5.0,
        "order-2 depletion factor {worst_depletion:.2}"
    );
    println!(
        "acceptance 5a (coefficient structure): PASS — degeneracy gap {worst_gap:.1e}, \
         order-2 depletion ≥ {worst_depletion:.0}x under σ = 0.001"
    );
}

#[test]
fn acceptance_05_fundamental_coefficient_vanishes() {
    // gate as stated: |m₀₀| < 1e-6 at d = 0.05w in the ideal aligned case
    let m = coefficients_of(&ideal(0.05, 1.5, 2));
    let m00 = m[0].abs();
    assert!(
        m00 < 1e-6,
        "|m₀₀| = {m00:.3e} at d = 0.05w (Q = 2, Nκ = 1.5, max-norm coefficients).\n\
         The exact finite-basis optimum keeps a small fundamental-mode weight: \
         m₀₀ ≈ -0.016 d² at these parameters, vanishing only in the d → 0 or \
         K → ∞ limits (measured scaling ≈ 1/Q at fixed d). The 1e-6 gate would \
         require d ≲ 0.008w.",
    );
    println!("acceptance 5b (fundamental coefficient): PASS — |m₀₀| = {m00:.2e}");
}

#[test]
fn acceptance_06_monte_carlo_moment_fidelity() {
    let shots = 1_000_000usize;
    let batch = 10_000usize;
    let n_batches = shots / batch;
    let xt = sample_crosstalk(4, &xt_spec(606), 0).unwrap();

    let configs: Vec<(&str, SceneConfig, Option<&DMatrix<Complex64>>)> = vec![
        ("ideal", ideal(0.5, 1.5, 1), None),
        (
            "misaligned",
            ideal(0.5, 1.5, 1).with_misalignment(MIS_DS, THETA),
            None,
        ),
        ("crosstalk", ideal(0.5, 1.5, 1), Some(&xt)),
        (
            "dark",
            ideal(0.5, 1.5, 1).with_dark(DarkCountSpec::uniform(DARK_SIGMA)),
            None,
        ),
    ];

    let mut report = String::new();
    for (name, cfg, c) in configs {
        let table = couplings(&cfg, c).unwrap();
        let phot = photometry(&cfg);
        let md = moment_data(&table, &phot, cfg.dark.as_ref()).unwrap();
        let sampler = ShotSampler::for_scene(&cfg, c).unwrap();
        let k = table.len();

        // batch means: per-batch mean vector and covariance matrix, gated by
        // the spread over batches
        let batches: Vec<(Vec<f64>, Vec<f64>)> = (0..n_batches as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(42 + b);
                rng.set_stream(7);
                let mut counts = vec![0u64; k];
                let mut mean = vec![0.0; k];
                let mut prod = vec![0.0; k * k];
                for _ in 0..batch {
                    sampler.sample_into(&mut rng, &mut counts);
                    for i in 0..k {
                        mean[i] += counts[i] as f64;
                        for j in 0..k {
                            prod[i * k + j] += (counts[i] * counts[j]) as f64;
                        }
                    }
                }
                for v in mean.iter_mut() {
                    *v /= batch as f64;
                }
                let mut cov = vec![0.0; k * k];
                for i in 0..k {
                    for j in 0..k {
                        cov[i * k + j] = prod[i * k + j] / batch as f64 - mean[i] * mean[j];
                    }
                }
                (mean, cov)
            })
            .collect();

        let nb = n_batches as f64;
        let mut worst_sigma: f64 = 0.0;
        for i in 0..k {
            let vals: Vec<f64> = batches.iter().map(|b| b.0[i]).collect();
            let mean = vals.iter().sum::<f64>() / nb;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            let se = (var / nb).sqrt();
            let pull = (mean - md.n_prime[i]).abs() / se;
            assert!(
                pull < 5.0,
                "{name}: mean of mode {i} off by {pull:.2} se ({mean} vs {})",
                md.n_prime[i]
            );
            worst_sigma = worst_sigma.max(pull);
        }
        for i in 0..k {
            for j in 0..k {
                let vals: Vec<f64> = batches.iter().map(|b| b.1[i * k + j]).collect();
                let mean = vals.iter().sum::<f64>() / nb;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nb - 1.0);
                let se = (var / nb).sqrt();
                let pull = (mean - md.gamma[(i, j)]).abs() / se;
                assert!(
                    pull < 5.0,
                    "{name}: covariance entry ({i},{j}) off by {pull:.2} se ({mean} vs {})",
                    md.gamma[(i, j)]
                );
                worst_sigma = worst_sigma.max(pull);
            }
        }
        report.push_str(&format!("{name} worst pull {worst_sigma:.2}σ; "));
    }
    println!("acceptance 6 (Monte-Carlo moment fidelity): PASS — {report}");
}

#[test]
fn acceptance_07_cramer_rao_saturation() {
    let mu = 100_000u64;
    let reps = 200u32;
    let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.01).collect();
    let mut report = String::new();
    for &n_kappa in &[0.01, 1.5] {
        for &d in &[0.3, 0.5, 1.0] {
            let cfg = ideal(d, n_kappa, 2);
            let table = couplings(&cfg, None).unwrap();
            let md = moment_data(&table, &photometry(&cfg), None).unwrap();
            let m = sensitivity(&md).unwrap().coefficients;
            let curve = calibration_curve(&cfg, None, &m, &grid).unwrap();
            let run = run_experiment(&cfg, None, &m, &curve, None, mu, reps, 20_250_810).unwrap();
            let ratio = run.empirical_var / run.predicted_var;
            assert!(
                (0.85..=1.15).contains(&ratio),
                "variance ratio {ratio:.3} at d={d}, Nκ={n_kappa} \
                 (empirical {:.3e}, predicted {:.3e})",
                run.empirical_var,
                run.predicted_var
            );
            assert_eq!(run.saturation_count, 0, "saturated inversions at d={d}");
            report.push_str(&format!("(d={d}, Nκ={n_kappa}): {ratio:.2}; "));
        }
    }
    println!("acceptance 7 (Cramér-Rao saturation): PASS — variance/prediction {report}");
}

#[test]
fn acceptance_08_direct_imaging_baseline() {
    use modesep::direct::{crossing_point, direct_imaging_sensitivity, PixelBasis};

    // grid convergence under pitch halving
    let cfg = ideal(0.5, 1.5, 2);
    let coarse = direct_imaging_sensitivity(&cfg, &PixelBasis::new(0.125, 5.25).unwrap()).unwrap();
    let fine = direct_imaging_sensitivity(&cfg, &PixelBasis::new(0.0625, 5.25).unwrap()).unwrap();
    let drift = (coarse - fine).abs() / fine;
    assert!(drift < 0.01, "pitch-halving drift {drift:.3e}");

    // combined-noise demultiplexer vs ideal direct imaging
    let noisy = |n_kappa: f64| {
        ideal(0.5, n_kappa, 2)
            .with_misalignment(MIS_DS, THETA)
            .with_dark(DarkCountSpec::uniform(DARK_SIGMA))
            .with_crosstalk(xt_spec(808))
    };
    let basis = PixelBasis::default_for(2.0).unwrap();
    let search = crossing_point(&noisy(1.5), &basis, (0.02, 2.0), 48).unwrap();
    let d_star = search.first.expect("a crossing must exist at Nκ = 1.5");
    assert!(d_star > 0.02 && d_star < 2.0);

    // demultiplexing dominates at small separations
    let scene = noisy(1.5);
    let demux_grid = [0.05, 0.1, 0.15, 0.2];
    let stats = ensemble_sensitivity(&scene, &demux_grid).unwrap();
    for (i, &d) in demux_grid.iter().enumerate() {
        let di = direct_imaging_sensitivity(&scene.at_separation(d), &basis).unwrap();
        assert!(
            stats.mean[i] > di,
            "demux {} vs direct imaging {di} at d = {d}",
            stats.mean[i]
        );
    }

    // the crossing moves inward with brightness
    let mut previous = f64::INFINITY;
    let mut stars = Vec::new();
    for &n_kappa in &[1.5, 5.0, 10.0] {
        let s = crossing_point(&noisy(n_kappa), &basis, (0.02, 2.0), 48).unwrap();
        let star = s.first.expect("crossing exists at every tested brightness");
        assert!(
            star <= previous + 1e-4,
            "d* increased from {previous} to {star} at Nκ = {n_kappa}"
        );
        stars.push((n_kappa, star));
        previous = star;
    }
    println!(
        "acceptance 8 (direct imaging baseline): PASS — pitch drift {drift:.1e}, \
         crossings {stars:?}"
    );
}

#[test]
fn acceptance_09_determinism_across_thread_counts() {
    let scene = ideal(0.4, 1.5, 2)
        .with_misalignment(MIS_DS, THETA)
        .with_dark(DarkCountSpec::uniform(DARK_SIGMA))
        .with_crosstalk(CrosstalkSpec {
            mean_offdiag_power: XT_POWER,
            seed: 909,
            ensemble_size: 50,
        });
    let grid: Vec<f64> = (1..=12).map(|i| 0.15 * i as f64).collect();

    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let stats = ensemble_sensitivity(&scene, &grid).unwrap();
                let cfg = ideal(0.5, 1.5, 1);
                let table = couplings(&cfg, None).unwrap();
                let md = moment_data(&table, &photometry(&cfg), None).unwrap();
                let m = sensitivity(&md).unwrap().coefficients;
                let cal_grid: Vec<f64> = (0..=300).map(|i| i as f64 * 0.01).collect();
                let curve = calibration_curve(&cfg, None, &m, &cal_grid).unwrap();
                let run = run_experiment(&cfg, None, &m, &curve, None, 2_000, 32, 5).unwrap();
                (stats, run)
            })
    };
    let (stats_1, run_1) = in_pool(1);
    let (stats_8, run_8) = in_pool(8);

    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&stats_1.mean), bits(&stats_8.mean));
    assert_eq!(bits(&stats_1.std), bits(&stats_8.std));
    assert_eq!(bits(&run_1.d_tilde), bits(&run_8.d_tilde));
    assert_eq!(run_1.empirical_var.to_bits(), run_8.empirical_var.to_bits());
    println!("acceptance 9 (determinism): PASS — bit-identical results on 1 and 8 threads");
}

/// Crosstalk sampler calibration is itself deterministic and hits its target;
/// exercised here because criterion 4 and 8 depend on the ensemble.
#[test]
fn acceptance_support_crosstalk_power() {
    let sampler = CrosstalkSampler::new(9, &xt_spec(2024)).unwrap();
    let mean: f64 = (0..XT_ENSEMBLE as u64)
        .map(|i| modesep::measured_offdiag_power(&sampler.draw(i)))
        .sum::<f64>()
        / XT_ENSEMBLE as f64;
    assert!(
        (mean - XT_POWER).abs() < 0.1 * XT_POWER,
        "ensemble power {mean:.5e}"
    );
    println!("acceptance support (crosstalk power): PASS — ⟨|c_ij|²⟩ = {mean:.5e}");
}

/// The moment-fidelity gate needs the estimator pipeline end to end once with
/// noise active; kept separate from criterion 7 so its runtime stays visible.
#[test]
fn acceptance_support_noisy_estimation_run() {
    let cfg = ideal(0.5, 1.5, 1).with_dark(DarkCountSpec::uniform(DARK_SIGMA));
    let table = couplings(&cfg, None).unwrap();
    let md = moment_data(&table, &photometry(&cfg), cfg.dark.as_ref()).unwrap();
    let m = sensitivity(&md).unwrap().coefficients;
    let grid: Vec<f64> = (0..=400).map(|i| i as f64 * 0.01).collect();
    let curve = calibration_curve(&cfg, None, &m, &grid).unwrap();
    let run = run_experiment(&cfg, None, &m, &curve, None, 20_000, 100, 77).unwrap();
    let ratio = run.empirical_var / run.predicted_var;
    assert!(
        (0.7..=1.3).contains(&ratio),
        "noisy-run variance ratio {ratio}"
    );
    let _ = MonotoneCurve::around(&curve, 0.5).unwrap();
    println!("acceptance support (noisy estimation): PASS — variance ratio {ratio:.2}");
}
