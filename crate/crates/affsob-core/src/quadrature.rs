//! Gauss rules, half-line radial integration and product quadrature on
//! S^1 and S^2.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::lgamma;

#[derive(Debug, Clone, PartialEq)]
pub struct Rule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub domain: (f64, f64),
}

impl Rule1D {
    /// The same rule affinely mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Rule1D {
        let (lo, hi) = self.domain;
        let scale = (b - a) / (hi - lo);
        Rule1D {
            nodes: self.nodes.iter().map(|&x| a + (x - lo) * scale).collect(),
            weights: self.weights.iter().map(|&w| w * scale).collect(),
            domain: (a, b),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss–Legendre rule on [−1, 1] by Newton iteration on P_m.
pub fn gauss_legendre(order: usize) -> Rule1D {
    assert!(order >= 1);
    let m = order;
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    Rule1D { nodes, weights, domain: (-1.0, 1.0) }
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if m == 0 {
        return (1.0, 0.0);
    }
    let mf = m as f64;
    (p1, mf * (x * p1 - p0) / (x * x - 1.0))
}

/// Gauss–Jacobi rule for the weight (1−x)^α (1+x)^β on [−1, 1], by the
/// Golub–Welsch eigenvalue method.
pub fn gauss_jacobi(order: usize, alpha: f64, beta: f64) -> Rule1D {
    assert!(order >= 1 && alpha > -1.0 && beta > -1.0);
    let m = order;
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        let kf = k as f64;
        let diag = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        jac[(k, k)] = diag;
        if k + 1 < m {
            let j = kf + 1.0;
            let t = 2.0 * j + ab;
            // at j = 1 the factor (j+α+β)/(t−1) is 1 and is cancelled by hand
            let b = if k == 0 {
                4.0 * (1.0 + alpha) * (1.0 + beta) / (t * t * (t + 1.0))
            } else {
                4.0 * j * (j + alpha) * (j + beta) * (j + ab) / (t * t * (t + 1.0) * (t - 1.0))
            };
            let off = b.sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let mu0 = (ab + 1.0) * std::f64::consts::LN_2 + lgamma(alpha + 1.0) + lgamma(beta + 1.0)
        - lgamma(ab + 2.0);
    let mu0 = mu0.exp();
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    Rule1D {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
        domain: (-1.0, 1.0),
    }
}

#[derive(Debug, Clone)]
pub struct HalflineOpts {
    pub order: usize,
    /// Interior panel boundaries; the last one starts the mapped tail.
    pub splits: Vec<f64>,
    pub tol: f64,
    pub max_doublings: usize,
}

impl Default for HalflineOpts {
    fn default() -> Self {
        Self { order: 16, splits: vec![1.0, 10.0], tol: 1e-12, max_doublings: 6 }
    }
}

/// Fixed composite rule on (0, ∞).
///
/// The first panel is graded geometrically towards r = 0, the tail r ≥ c is
/// mapped by r = c/(1−u) and graded geometrically towards u = 1, so
/// fractional powers at either end are resolved. Every panel is split into
/// `pieces` equal parts carrying an `order`-point Gauss–Legendre rule.
pub fn halfline_rule(opts: &HalflineOpts, pieces: usize) -> Rule1D {
    let base = gauss_legendre(opts.order);
    let mut panels: Vec<(f64, f64)> = Vec::new();
    let first = opts.splits.first().copied().unwrap_or(1.0);
    let depth = 64;
    let mut lo = first * 0.5f64.powi(depth);
    panels.push((0.0, lo));
    for j in (0..depth).rev() {
        let hi = first * 0.5f64.powi(j);
        panels.push((lo, hi));
        lo = hi;
    }
    for w in opts.splits.windows(2) {
        panels.push((w[0], w[1]));
    }
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for &(a, b) in &panels {
        let h = (b - a) / pieces as f64;
        for k in 0..pieces {
            let x0 = a + k as f64 * h;
            let r = base.mapped(x0, x0 + h);
            nodes.extend_from_slice(&r.nodes);
            weights.extend_from_slice(&r.weights);
        }
    }
    let c = opts.splits.last().copied().unwrap_or(1.0);
    // tail in u ∈ [0, 1): panels [1−2^{−j}, 1−2^{−j−1}]
    for j in 0..45 {
        let (a, b) = (1.0 - 0.5f64.powi(j), 1.0 - 0.5f64.powi(j + 1));
        let h = (b - a) / pieces as f64;
        for k in 0..pieces {
            let u0 = a + k as f64 * h;
            let r = base.mapped(u0, u0 + h);
            for (&u, &w) in r.nodes.iter().zip(&r.weights) {
                let v = 1.0 - u;
                nodes.push(c / v);
                weights.push(w * c / (v * v));
            }
        }
    }
    Rule1D { nodes, weights, domain: (0.0, f64::INFINITY) }
}

/// ∫_0^∞ f(r) dr on `halfline_rule`, doubling the pieces per panel until two
/// estimates agree.
pub fn integrate_halfline(f: impl Fn(f64) -> f64, opts: &HalflineOpts) -> Result<f64> {
    let mut pieces = 1;
    let mut prev = halfline_rule(opts, pieces).integrate(&f);
    for _ in 0..opts.max_doublings {
        pieces *= 2;
        let next = halfline_rule(opts, pieces).integrate(&f);
        if (next - prev).abs() <= opts.tol * next.abs().max(1.0) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::QuadratureNonConvergence { prev, last: halfline_rule(opts, pieces * 2).integrate(&f) })
}

/// Product quadrature for the normalized measure on S^{n−1}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereGrid {
    pub n: usize,
    pub resolution: usize,
    /// Unit vectors, padded with zeros to three components when n = 2.
    pub directions: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    /// Polar nodes cos θ_i (n = 3 only); directions are stored polar-major.
    pub polar: Vec<f64>,
    pub azimuths: usize,
}

impl SphereGrid {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// n = 2: `resolution` equally spaced angles. n = 3: `resolution` polar
/// nodes in cos θ (half per hemisphere) times 2·`resolution` uniform azimuths.
pub fn sphere_grid(n: usize, resolution: usize) -> Result<SphereGrid> {
    if resolution < 4 {
        return Err(Error::InvalidParams(format!("sphere resolution {resolution} < 4")));
    }
    match n {
        2 => {
            let m = resolution;
            let directions = (0..m)
                .map(|j| {
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    [phi.cos(), phi.sin(), 0.0]
                })
                .collect();
            Ok(SphereGrid {
                n,
                resolution,
                directions,
                weights: vec![1.0 / m as f64; m],
                polar: Vec::new(),
                azimuths: m,
            })
        }
        3 => {
            // Gauss–Legendre on each hemisphere separately, so integrands
            // with a kink on the equator of the polar axis stay exact
            let south = gauss_legendre(resolution / 2).mapped(-1.0, 0.0);
            let north = gauss_legendre(resolution - resolution / 2).mapped(0.0, 1.0);
            let polar: Vec<f64> = south.nodes.iter().chain(&north.nodes).copied().collect();
            let pw: Vec<f64> = south.weights.iter().chain(&north.weights).copied().collect();
            let naz = 2 * resolution;
            let mut directions = Vec::with_capacity(resolution * naz);
            let mut weights = Vec::with_capacity(resolution * naz);
            for (&ct, &w) in polar.iter().zip(&pw) {
                let st = (1.0 - ct * ct).max(0.0).sqrt();
                for j in 0..naz {
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / naz as f64;
                    directions.push([st * phi.cos(), st * phi.sin(), ct]);
                    weights.push(w / (2.0 * naz as f64));
                }
            }
            Ok(SphereGrid { n, resolution, directions, weights, polar, azimuths: naz })
        }
        _ => Err(Error::UnsupportedDimension(n)),
    }
}

/// ⟨F⟩ over the grid for values F listed in grid order (compensated sum).
pub fn sphere_average(grid: &SphereGrid, values: &[f64]) -> f64 {
    debug_assert_eq!(values.len(), grid.weights.len());
    neumaier_sum(grid.weights.iter().zip(values).map(|(w, v)| w * v))
}

pub fn neumaier_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
