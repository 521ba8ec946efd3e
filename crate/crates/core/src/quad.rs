//! Adaptive Gauss-Kronrod quadrature used as an independent oracle for all
//! closed-form overlap integrals.
//!
//! The integrands handled here are Gaussians times polynomials, so a (7,15)
//! rule with interval bisection converges quickly. Two-dimensional overlaps
//! are computed as nested one-dimensional integrals over a square that
//! contains the requested disc; the integrands decay like `exp(-2 r²)`, so
//! the difference between disc and square is far below the accuracy target.

use crate::error::{Error, Result};
use crate::modes::{hg_eval, ModeIndex};

/// Nodes of the 15-point Kronrod rule on [-1, 1] (positive half).
const XGK: [f64; 8] = [
    0.991_455_371_120_813,
    0.949_107_912_342_759,
    0.864_864_423_359_769,
    0.741_531_185_599_394,
    0.586_087_235_467_691,
    0.405_845_151_377_397,
    0.207_784_955_007_898,
    0.0,
];

/// Weights of the 15-point Kronrod rule.
const WGK: [f64; 8] = [
    0.022_935_322_010_529,
    0.063_092_092_629_979,
    0.104_790_010_322_250,
    0.140_653_259_715_525,
    0.169_004_726_639_267,
    0.190_350_578_064_785,
    0.204_432_940_075_298,
    0.209_482_141_084_728,
];

/// Weights of the embedded 7-point Gauss rule (nodes XGK[1], XGK[3], XGK[5], XGK[7]).
const WG: [f64; 4] = [
    0.129_484_966_168_870,
    0.279_705_391_489_277,
    0.381_830_050_505_119,
    0.417_959_183_673_469,
];

/// One (7,15) panel: returns the Kronrod value and |K15 - G7| as error estimate.
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for j in 0..8 {
        let fsum = if j == 7 {
            f(mid)
        } else {
            let dx = half * XGK[j];
            f(mid - dx) + f(mid + dx)
        };
        kronrod += WGK[j] * fsum;
        // odd Kronrod indices (and the centre, j = 7) are the embedded Gauss nodes
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    let k = kronrod * half;
    let g = gauss * half;
    (k, (k - g).abs())
}

struct Budget {
    panels_left: u32,
    worst_err: f64,
}

fn adapt(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    tol: f64,
    depth: u32,
    budget: &mut Budget,
) -> f64 {
    let (value, err) = gk15(f, a, b);
    if err <= tol || depth >= 60 {
        if err > tol {
            budget.worst_err = budget.worst_err.max(err);
        }
        return value;
    }
    if budget.panels_left == 0 {
        budget.worst_err = budget.worst_err.max(err);
        return value;
    }
    budget.panels_left -= 1;
    let mid = 0.5 * (a + b);
    adapt(f, a, mid, 0.5 * tol, depth + 1, budget) + adapt(f, mid, b, 0.5 * tol, depth + 1, budget)
}

/// Adaptive integral of `f` over `[a, b]` with absolute tolerance `tol`.
pub fn integrate_1d(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let mut budget = Budget {
        panels_left: 100_000,
        worst_err: 0.0,
    };
    let value = adapt(&f, a, b, tol, 0, &mut budget);
    if budget.worst_err > tol {
        return Err(Error::QuadratureNoConvergence {
            achieved: budget.worst_err,
            requested: tol,
        });
    }
    Ok(value)
}

/// Adaptive integral of `f(x, y)` over the square `[-half, half]²`.
///
/// The requested tolerance bounds the total absolute error; the inner
/// (x) integrals are resolved tightly enough that their accumulated error
/// stays below half of it.
pub fn integrate_2d(f: impl Fn(f64, f64) -> f64, half_width: f64, tol: f64) -> Result<f64> {
    let inner_tol = 0.5 * tol / (2.0 * half_width);
    let failed = std::cell::Cell::new(None::<Error>);
    let outer = integrate_1d(
        |y| match integrate_1d(|x| f(x, y), -half_width, half_width, inner_tol) {
            Ok(v) => v,
            Err(e) => {
                failed.set(Some(e));
                0.0
            }
        },
        -half_width,
        half_width,
        0.5 * tol,
    )?;
    match failed.take() {
        Some(e) => Err(e),
        None => Ok(outer),
    }
}

/// A Hermite-Gaussian mode displaced in the image plane: evaluates
/// `u_k(r - center)`. The PSF itself is `k = (0, 0)`.
#[derive(Debug, Clone, Copy)]
pub struct DisplacedMode {
    pub k: ModeIndex,
    pub center: (f64, f64),
}

impl DisplacedMode {
    pub fn psf_at(center: (f64, f64)) -> Self {
        DisplacedMode {
            k: ModeIndex::fundamental(),
            center,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        hg_eval(self.k, x - self.center.0, y - self.center.1)
    }
}

/// Overlap `∫ f_a f_b d²r` of two displaced modes by adaptive 2D quadrature,
/// accurate to an absolute error of 1e-10. This is the oracle against which
/// every closed-form overlap in the crate is certified.
pub fn quad_overlap(fa: &DisplacedMode, fb: &DisplacedMode) -> Result<f64> {
    let reach = |m: &DisplacedMode| (m.center.0.powi(2) + m.center.1.powi(2)).sqrt();
    let half_width = 8.0 + reach(fa).max(reach(fb));
    integrate_2d(|x, y| fa.eval(x, y) * fb.eval(x, y), half_width, 1e-10)
}
