//! Special functions used by the closed-form coefficients and the sector
//! profiles: log-Gamma ratios, Pochhammer symbols, Gegenbauer polynomials,
//! the Gauss hypergeometric series and the modified Bessel function K_ν.

use statrs::function::gamma::ln_gamma;

pub use statrs::function::gamma::{gamma, ln_gamma as lgamma};

/// Γ(x)/Γ(y) for positive arguments, through log-Gamma.
pub fn gamma_ratio(x: f64, y: f64) -> f64 {
    (ln_gamma(x) - ln_gamma(y)).exp()
}

/// 1/Γ(x), zero at the poles.
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x.fract() == 0.0 {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

/// Rising factorial (x)_k.
pub fn pochhammer(x: f64, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (x + j as f64))
}

/// C_ℓ^λ(t) by the three-term recurrence.
pub fn gegenbauer(ell: usize, lam: f64, t: f64) -> f64 {
    if ell == 0 {
        return 1.0;
    }
    let mut c0 = 1.0;
    let mut c1 = 2.0 * lam * t;
    for l in 2..=ell {
        let lf = l as f64;
        let c2 = (2.0 * t * ((lf - 1.0) + lam) * c1 - ((lf - 2.0) + 2.0 * lam) * c0) / lf;
        c0 = c1;
        c1 = c2;
    }
    c1
}

/// C_ℓ^λ(t)/C_ℓ^λ(1). At λ = 0 this is the Chebyshev limit T_ℓ(t).
pub fn gegenbauer_normalized(ell: usize, lam: f64, t: f64) -> f64 {
    if lam.abs() < 1e-14 {
        return chebyshev_t(ell, t);
    }
    gegenbauer(ell, lam, t) / gegenbauer(ell, lam, 1.0)
}

pub fn chebyshev_t(ell: usize, t: f64) -> f64 {
    if ell == 0 {
        return 1.0;
    }
    let (mut t0, mut t1) = (1.0, t);
    for _ in 2..=ell {
        let t2 = 2.0 * t * t1 - t0;
        t0 = t1;
        t1 = t2;
    }
    t1
}

fn hyp2f1_series(a: f64, b: f64, c: f64, w: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..2000 {
        let kf = k as f64;
        term *= (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * w;
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() && k > 2 {
            break;
        }
    }
    sum
}

/// ₂F₁(a, b; c; w) for 0 ≤ w < 1 with c − a − b not an integer.
pub fn hyp2f1(a: f64, b: f64, c: f64, w: f64) -> f64 {
    hyp2f1_split(a, b, c, w, 1.0 - w)
}

/// ₂F₁ with the complement v = 1 − w supplied separately, so arguments very
/// close to 1 keep full relative precision in v.
///
/// Above w = 1/2 the series is re-expanded around w = 1, which keeps the
/// cost bounded as the sector profiles approach r = ∞.
pub fn hyp2f1_split(a: f64, b: f64, c: f64, w: f64, v: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&w) && v > 0.0);
    if w <= 0.5 {
        return hyp2f1_series(a, b, c, w);
    }
    let d = c - a - b;
    let g1 = gamma(c) * gamma(d) * rgamma(c - a) * rgamma(c - b);
    let g2 = gamma(c) * gamma(-d) * rgamma(a) * rgamma(b);
    let mut out = if g1 != 0.0 { g1 * hyp2f1_series(a, b, 1.0 - d, v) } else { 0.0 };
    if g2 != 0.0 {
        out += g2 * v.powf(d) * hyp2f1_series(c - a, c - b, 1.0 + d, v);
    }
    out
}

/// e^x K_ν(x) from K_ν(x) = ∫_0^∞ exp(−x cosh t) cosh(νt) dt.
pub fn bessel_k_scaled(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0);
    let tmax = (1.0 + 46.0 / x).acosh();
    let panels = ((tmax / 0.25).ceil() as usize).max(8);
    let rule = crate::quadrature::gauss_legendre(16);
    let hw = tmax / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * hw;
        for (&u, &wt) in rule.nodes.iter().zip(&rule.weights) {
            let t = mid + 0.5 * hw * u;
            sum += wt * 0.5 * hw * (-x * (t.cosh() - 1.0)).exp() * (nu * t).cosh();
        }
    }
    sum
}

pub fn bessel_k(nu: f64, x: f64) -> f64 {
    bessel_k_scaled(nu, x) * (-x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pochhammer_cases() {
        assert_eq!(pochhammer(3.7, 0), 1.0);
        assert_eq!(pochhammer(1.0, 4), 24.0);
        assert_relative_eq!(pochhammer(0.5, 2), 0.75);
    }

    #[test]
    fn gegenbauer_recurrence() {
        assert_relative_eq!(gegenbauer(2, 1.0, 1.0), 3.0, epsilon = 1e-15);
        for &t in &[0.3, -0.7, 0.95] {
            assert_relative_eq!(gegenbauer(2, 1.0, t), 4.0 * t * t - 1.0, epsilon = 1e-14);
            assert_relative_eq!(gegenbauer(3, 0.8, -t), -gegenbauer(3, 0.8, t), epsilon = 1e-14);
            assert_eq!(gegenbauer(0, 2.5, t), 1.0);
            // Legendre case λ = 1/2
            assert_relative_eq!(
                gegenbauer(3, 0.5, t),
                0.5 * (5.0 * t * t * t - 3.0 * t),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn normalized_gegenbauer_has_chebyshev_limit() {
        for &t in &[0.1, 0.5, -0.8] {
            let a = gegenbauer_normalized(5, 1e-9, t);
            let b = chebyshev_t(5, t);
            assert!((a - b).abs() < 1e-8, "{a} {b}");
            assert_relative_eq!(chebyshev_t(4, t), (4.0 * t.acos()).cos(), epsilon = 1e-13);
        }
    }

    #[test]
    fn hyp2f1_known_values() {
        // ₂F₁(a,b;b;w) = (1−w)^{−a}
        for &w in &[0.2, 0.55, 0.8, 0.99] {
            let a = -0.3;
            let b = 1.7;
            assert_relative_eq!(hyp2f1(a, b, b, w), (1.0 - w).powf(-a), max_relative = 1e-12);
        }
        // Gauss sum at w → 1
        let (a, b, c) = (0.25, 1.5, 2.25);
        let gauss = gamma(c) * gamma(c - a - b) / (gamma(c - a) * gamma(c - b));
        assert_relative_eq!(hyp2f1(a, b, c, 1.0 - 1e-12), gauss, max_relative = 1e-6);
        // continuity across the switch point
        let lo = hyp2f1(0.7, 1.9, 3.1, 0.5);
        let hi = hyp2f1(0.7, 1.9, 3.1, 0.5 + 1e-12);
        assert_relative_eq!(lo, hi, max_relative = 1e-10);
    }

    #[test]
    fn bessel_k_half_order() {
        // K_{1/2}(x) = sqrt(π/(2x)) e^{−x}
        for &x in &[0.01, 0.3, 1.0, 4.0, 25.0] {
            let exact = (std::f64::consts::PI / (2.0 * x)).sqrt();
            assert_relative_eq!(bessel_k_scaled(0.5, x), exact, max_relative = 1e-12);
        }
    }

    #[test]
    fn bessel_k_small_argument() {
        // K_ν(x) ~ Γ(ν)/2 (2/x)^ν as x → 0
        let nu = 0.3;
        let x: f64 = 1e-4;
        let lead = gamma(nu) / 2.0 * (2.0 / x).powf(nu);
        assert_relative_eq!(bessel_k(nu, x), lead, max_relative = 1e-2);
    }
}
