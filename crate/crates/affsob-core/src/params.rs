//! Problem parameters and the closed-form scalar coefficients: the sphere
//! eigenvalues Λ_k, the gap γ_s, the Funk–Hecke coefficients β_ℓ and their
//! ratios ρ_ℓ, and the even-sector margin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_jacobi;
use crate::special::{gamma, gamma_ratio, gegenbauer_normalized, pochhammer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub n: usize,
    pub s: f64,
    /// Critical exponent 2n/(n−2s).
    pub q: f64,
    /// Polar exponent n/(2s).
    pub r: f64,
    pub a: f64,
    pub gamma_s: f64,
}

impl Params {
    pub fn new(n: usize, s: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParams(format!("n = {n} must be at least 2")));
        }
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidParams(format!("s = {s} must lie in (0, 1)")));
        }
        let nf = n as f64;
        let a = nf / 2.0;
        Ok(Self {
            n,
            s,
            q: 2.0 * nf / (nf - 2.0 * s),
            r: nf / (2.0 * s),
            a,
            gamma_s: 2.0 * s / (a + s + 1.0),
        })
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    /// Decay exponent n − 2s of the bubble.
    pub fn decay(&self) -> f64 {
        self.nf() - 2.0 * self.s
    }
}

/// |S^d| = 2π^{(d+1)/2}/Γ((d+1)/2).
pub fn sphere_area(d: usize) -> f64 {
    let h = (d as f64 + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / gamma(h)
}

/// |B_1| in R^n.
pub fn ball_volume(n: usize) -> f64 {
    sphere_area(n - 1) / n as f64
}

/// Λ_k = Γ(k+a+s)/Γ(k+a−s).
pub fn lambda_k(p: &Params, k: usize) -> f64 {
    let kf = k as f64;
    gamma_ratio(kf + p.a + p.s, kf + p.a - p.s)
}

/// γ_s = 2s/(a+s+1).
pub fn gamma_gap(p: &Params) -> f64 {
    p.gamma_s
}

/// Quadrature value of β_ℓ = ⟨|ξ·θ|^{2s} Y_ℓ(θ)⟩ / Y_ℓ(ξ).
///
/// The integral over t = ξ·θ is split at 0 and mapped by u = t², which turns
/// |t|^{2s}(1−t²)^{(n−3)/2} into the Jacobi weight u^{s−1/2}(1−u)^{(n−3)/2}.
/// For even ℓ the remaining factor is a polynomial in u, so the Gauss–Jacobi
/// rule is exact once it has more than ℓ/4 nodes.
pub fn beta_funk_hecke_numeric(p: &Params, ell: usize) -> Result<f64> {
    let lam = (p.nf() - 2.0) / 2.0;
    let alpha = p.s - 0.5;
    let beta = lam - 0.5;
    let pref = sphere_area(p.n - 2) / sphere_area(p.n - 1);
    // returns the estimate and the sum of absolute terms, which sets the
    // rounding floor for the convergence test
    let estimate = |m: usize| -> (f64, f64) {
        let rule = gauss_jacobi(m, beta, alpha);
        // u = (1+x)/2 on [0,1]; the Jacobi weight picks up 2^{−α−β−1}
        let scale = pref * 0.5 * 2f64.powf(-alpha - beta - 1.0);
        let mut sum = 0.0;
        let mut abs = 0.0;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let t = (0.5 * (1.0 + x)).sqrt();
            let term = w * (gegenbauer_normalized(ell, lam, t) + gegenbauer_normalized(ell, lam, -t));
            sum += term;
            abs += term.abs();
        }
        (scale * sum, scale * abs)
    };
    let mut m = ell / 4 + 4;
    let (mut prev, _) = estimate(m);
    while m <= 256 {
        m *= 2;
        let (next, floor) = estimate(m);
        if (next - prev).abs() <= 1e-13 * floor {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureNonConvergence { prev, last: estimate(m).0 })
}

/// ρ_ℓ = β_ℓ/β_0 in closed form.
pub fn rho_closed_form(p: &Params, ell: usize) -> f64 {
    if ell == 0 {
        return 1.0;
    }
    if ell % 2 == 1 {
        return 0.0;
    }
    let m = ell / 2;
    let sign = if (m + 1).is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * p.s * pochhammer(1.0 - p.s, m - 1) / pochhammer(p.a + p.s, m)
}

/// (η_4, η_4 − γ_s): the even-sector lower bound for ℓ ≥ 4 and its margin
/// over the gap.
pub fn eta4_margin(p: &Params) -> (f64, f64) {
    let (a, s) = (p.a, p.s);
    let eta4 = 1.0 - lambda_k(p, 1) / lambda_k(p, 4)
        - 2.0 * s * (1.0 - s).powi(2) / ((a + s) * (a + s + 1.0).powi(2));
    (eta4, eta4 - p.gamma_s)
}
