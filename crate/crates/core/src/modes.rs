//! Gaussian PSF, Hermite-Gaussian measurement basis and displaced-mode
//! overlap integrals.
//!
//! The PSF is `u₀(r) = √(2/π) exp(-|r|²)` with the waist fixed to one; the
//! HG basis is the matched orthonormal family with `u₀₀ = u₀`. Overlaps of a
//! basis mode with a displaced PSF factorize into 1D integrals with the
//! closed form `β_n(b) = bⁿ e^{-b²/2} / √(n!)`. The closed form is not taken
//! on faith: the test suite certifies it against the adaptive quadrature
//! oracle in [`crate::quad`] before anything downstream relies on it.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Highest 1D Hermite order accepted anywhere in the crate. The evaluation
/// recurrences stay well inside `f64` range up to this order; nothing in the
/// intended parameter regime needs more than order ~10.
pub const MAX_ORDER: u32 = 60;

/// Index `(n, m)` of a 2D Hermite-Gaussian mode (x order, y order).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    n: u32,
    m: u32,
}

impl ModeIndex {
    /// Builds a mode index, rejecting orders beyond [`MAX_ORDER`].
    pub fn new(n: u32, m: u32) -> Result<Self> {
        if n > MAX_ORDER || m > MAX_ORDER {
            return Err(Error::config(format!(
                "mode order ({n}, {m}) exceeds the supported maximum {MAX_ORDER}"
            )));
        }
        Ok(ModeIndex { n, m })
    }

    /// The fundamental mode `(0, 0)`, identical to the PSF.
    pub fn fundamental() -> Self {
        ModeIndex { n: 0, m: 0 }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    /// Total order `n + m`.
    pub fn total_order(&self) -> u32 {
        self.n + self.m
    }
}

impl std::fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.n, self.m)
    }
}

/// All `(Q+1)²` mode indices with `n, m ≤ Q`, in row-major order.
pub fn hg_basis(q: u32) -> Result<Vec<ModeIndex>> {
    if q > MAX_ORDER {
        return Err(Error::config(format!(
            "basis cutoff Q = {q} exceeds the supported maximum {MAX_ORDER}"
        )));
    }
    let mut out = Vec::with_capacity(((q + 1) * (q + 1)) as usize);
    for n in 0..=q {
        for m in 0..=q {
            out.push(ModeIndex { n, m });
        }
    }
    Ok(out)
}

/// A transverse displacement in the image plane, in units of the waist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub x: f64,
    pub y: f64,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Displacement { x, y }
    }

    /// Polar construction `(r cos φ, r sin φ)`.
    pub fn polar(r: f64, phi: f64) -> Self {
        Displacement {
            x: r * phi.cos(),
            y: r * phi.sin(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl std::ops::Neg for Displacement {
    type Output = Displacement;
    fn neg(self) -> Displacement {
        Displacement {
            x: -self.x,
            y: -self.y,
        }
    }
}

impl std::ops::Sub for Displacement {
    type Output = Displacement;
    fn sub(self, rhs: Displacement) -> Displacement {
        Displacement {
            x: self.x - rhs.x,
            y: self.y - rhs.y,
        }
    }
}

/// Which of the two source images (`+r₀` or `-r₀`) a coupling refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageSign {
    Plus,
    Minus,
}

impl ImageSign {
    pub fn factor(self) -> f64 {
        match self {
            ImageSign::Plus => 1.0,
            ImageSign::Minus => -1.0,
        }
    }
}

/// Gaussian PSF amplitude `√(2/π) e^{-(x²+y²)}`, L²-normalized.
pub fn psf_eval(x: f64, y: f64) -> f64 {
    (2.0 / std::f64::consts::PI).sqrt() * (-(x * x + y * y)).exp()
}

/// Normalized 1D Hermite-Gaussian recurrence, `∫ h_n h_m dx = δ_nm`,
/// with `h₀(x) = (2/π)^{1/4} e^{-x²}` matched to the PSF waist.
fn hg_1d(n: u32, x: f64) -> f64 {
    // work with t = √2 x where the physicists' normalized recurrence applies
    let t = std::f64::consts::SQRT_2 * x;
    let mut prev = 0.0;
    let mut cur = 2f64.powf(0.25) * std::f64::consts::PI.powf(-0.25) * (-0.5 * t * t).exp();
    for j in 1..=n {
        let next = t * (2.0 / j as f64).sqrt() * cur - ((j as f64 - 1.0) / j as f64).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// 2D Hermite-Gaussian mode amplitude `u_{n,m}(x, y) = h_n(x) h_m(y)`.
///
/// The sign convention is a positive leading Hermite coefficient;
/// `hg_eval((0,0), r)` equals [`psf_eval`].
pub fn hg_eval(k: ModeIndex, x: f64, y: f64) -> f64 {
    hg_1d(k.n, x) * hg_1d(k.m, y)
}

/// 1D displaced overlap `∫ h_n(x) h₀(x - b) dx = bⁿ e^{-b²/2} / √(n!)`,
/// evaluated with incremental products so large orders neither overflow nor
/// lose the `b = 0` cases.
pub fn beta_1d(n: u32, b: f64) -> f64 {
    let mut v = (-0.5 * b * b).exp();
    for j in 1..=n {
        v *= b / (j as f64).sqrt();
    }
    v
}

/// Derivative of [`beta_1d`] with respect to the displacement `b`.
pub fn beta_1d_deriv(n: u32, b: f64) -> f64 {
    let e = (-0.5 * b * b).exp();
    if n == 0 {
        return -b * e;
    }
    // b^{n-1} / √(n!) without intermediate overflow
    let mut p = 1.0;
    for j in 1..n {
        p *= b / (j as f64).sqrt();
    }
    p /= (n as f64).sqrt();
    p * (n as f64 - b * b) * e
}

/// Overlap of mode `k` with the PSF displaced by `b`:
/// `β_k(b) = ∫ u_k(r) u₀(r - b) d²r`, factorized over the two axes.
pub fn beta(k: ModeIndex, b: Displacement) -> f64 {
    beta_1d(k.n, b.x) * beta_1d(k.m, b.y)
}

/// Derivative of `β_k(s·r₀ - r_s)` with respect to the separation `d`,
/// where `r₀ = (d cos θ, d sin θ)/2` and `s = ±1` selects the source image.
pub fn beta_grad_d(k: ModeIndex, sign: ImageSign, d: f64, theta: f64, r_s: Displacement) -> f64 {
    let s = sign.factor();
    let b = Displacement {
        x: s * 0.5 * d * theta.cos() - r_s.x,
        y: s * 0.5 * d * theta.sin() - r_s.y,
    };
    let dbx = s * 0.5 * theta.cos();
    let dby = s * 0.5 * theta.sin();
    beta_1d_deriv(k.n, b.x) * dbx * beta_1d(k.m, b.y)
        + beta_1d(k.n, b.x) * beta_1d_deriv(k.m, b.y) * dby
}
