//! Nearest-point problem on the affine extremal cone in the local chart
//! a = (c, y, λ, B), T_a = T_{(1+λ)(I+B), y}.
//!
//! The residual F(a) = [T_a u − (1+c)U]² is quadratic in c, so c is profiled
//! out: F = [T_a u]² − P(a)²/[U]² with P(a) = ⟨T_a u, U⟩ and c* = P/[U]² − 1.
//! [T_a u]² comes from the covariance A_ξ(T_A u) = (det A)^{−2s/n} A_{Aξ}(u)
//! with A_ξ(u) interpolated on the sphere; P(a) = κ∫T_a u U^{q−1} uses polar
//! quadrature for the anchor μU and the grid for w.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine_geom::transformed_table;
use crate::energy_grid::{deficit_aff_anchored, AnchoredField, Calibration, DirectionalEnergy, PairingSupport};
use crate::error::{Error, Result};
use crate::params::{sphere_area, Params};
use crate::quadrature::{gauss_legendre, sphere_average, sphere_grid, SphereGrid};

/// Residual assigned outside the chart.
const OUTSIDE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub c: f64,
    pub y: Vec<f64>,
    pub lambda: f64,
    /// Symmetric and trace-free.
    pub b: Vec<Vec<f64>>,
}

impl ChartPoint {
    pub fn zero(n: usize) -> Self {
        Self { c: 0.0, y: vec![0.0; n], lambda: 0.0, b: vec![vec![0.0; n]; n] }
    }

    /// Number of free B entries.
    pub fn stretch_dim(n: usize) -> usize {
        n * (n + 1) / 2 - 1
    }

    /// Coordinates (y, λ, B-entries); B entries are the diagonal except the
    /// last, then the upper triangle row by row.
    fn from_coords(n: usize, c: f64, x: &[f64], affine: bool) -> Self {
        let y = x[..n].to_vec();
        let lambda = x[n];
        let mut b = vec![vec![0.0; n]; n];
        if affine {
            let e = &x[n + 1..];
            let mut trace = 0.0;
            for i in 0..n - 1 {
                b[i][i] = e[i];
                trace += e[i];
            }
            b[n - 1][n - 1] = -trace;
            let mut k = n - 1;
            for i in 0..n {
                for j in i + 1..n {
                    b[i][j] = e[k];
                    b[j][i] = e[k];
                    k += 1;
                }
            }
        }
        Self { c, y, lambda, b }
    }

    fn coords(&self, affine: bool) -> Vec<f64> {
        let n = self.y.len();
        let mut x = self.y.clone();
        x.push(self.lambda);
        if affine {
            for i in 0..n - 1 {
                x.push(self.b[i][i]);
            }
            for i in 0..n {
                for j in i + 1..n {
                    x.push(self.b[i][j]);
                }
            }
        }
        x
    }

    /// (1+λ)(I+B).
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.y.len();
        DMatrix::from_fn(n, n, |i, j| (1.0 + self.lambda) * (if i == j { 1.0 } else { 0.0 } + self.b[i][j]))
    }

    /// Euclidean norm of (c, y, λ, B) with B in Frobenius norm.
    pub fn norm(&self) -> f64 {
        let b2: f64 = self.b.iter().flatten().map(|v| v * v).sum();
        (self.c * self.c + self.y.iter().map(|v| v * v).sum::<f64>() + self.lambda * self.lambda + b2).sqrt()
    }

    pub fn is_valid(&self) -> bool {
        let b_norm = self.b.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        self.lambda.abs() < 0.5 && b_norm < 0.5 && self.matrix().determinant() > 0.0
    }
}

/// Even-in-ξ interpolant of sphere-grid values: trigonometric for n = 2,
/// real spherical harmonics of even degree ≤ `SH_DEGREE` for n = 3.
#[derive(Debug, Clone)]
pub enum SphereInterp {
    Circle { cos: Vec<f64>, sin: Vec<f64> },
    Sphere { coeffs: Vec<f64> },
}

pub const SH_DEGREE: usize = 12;

/// Fully normalized associated Legendre values P̄_l^m(t), m ≤ l ≤ lmax, with
/// ⟨(P̄_l^m cos mφ)²⟩ = 1 on S² (geodesy normalization). Indexed [l][m].
fn legendre_table(lmax: usize, t: f64) -> Vec<Vec<f64>> {
    let st = (1.0 - t * t).max(0.0).sqrt();
    let mut p = vec![vec![0.0; lmax + 1]; lmax + 1];
    p[0][0] = 1.0;
    for m in 1..=lmax {
        let f = if m == 1 { 3f64.sqrt() } else { ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() };
        p[m][m] = f * st * p[m - 1][m - 1];
    }
    for m in 0..lmax {
        p[m + 1][m] = ((2 * m + 3) as f64).sqrt() * t * p[m][m];
        for l in m + 2..=lmax {
            let (lf, mf) = (l as f64, m as f64);
            let a = ((2.0 * lf - 1.0) * (2.0 * lf + 1.0) / ((lf - mf) * (lf + mf))).sqrt();
            let b = ((2.0 * lf + 1.0) * (lf + mf - 1.0) * (lf - mf - 1.0) / ((lf - mf) * (lf + mf) * (2.0 * lf - 3.0))).sqrt();
            p[l][m] = a * t * p[l - 1][m] - b * p[l - 2][m];
        }
    }
    p
}

/// Real harmonics of even degree ≤ lmax at a unit vector, orthonormal for
/// the normalized surface measure.
fn even_harmonics(lmax: usize, x: &[f64; 3]) -> Vec<f64> {
    let p = legendre_table(lmax, x[2].clamp(-1.0, 1.0));
    let phi = x[1].atan2(x[0]);
    let mut out = Vec::new();
    for l in (0..=lmax).step_by(2) {
        out.push(p[l][0]);
        for m in 1..=l {
            let (s, c) = (m as f64 * phi).sin_cos();
            out.push(p[l][m] * c);
            out.push(p[l][m] * s);
        }
    }
    out
}

impl SphereInterp {
    pub fn fit(grid: &SphereGrid, values: &[f64]) -> Result<Self> {
        match grid.n {
            2 => {
                let m = values.len();
                let half = m / 2;
                let mut cos = vec![0.0; half + 1];
                let mut sin = vec![0.0; half + 1];
                for (j, v) in values.iter().enumerate() {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
                    for k in 0..=half {
                        let (s, c) = (k as f64 * th).sin_cos();
                        cos[k] += v * c / m as f64;
                        sin[k] += v * s / m as f64;
                    }
                }
                Ok(SphereInterp::Circle { cos, sin })
            }
            3 => {
                if 2 * SH_DEGREE + 1 > 2 * grid.resolution - 1 || grid.azimuths <= 2 * SH_DEGREE {
                    return Err(Error::InvalidParams(format!(
                        "sphere resolution {} too coarse for degree {SH_DEGREE} projection",
                        grid.resolution
                    )));
                }
                let mut coeffs = vec![0.0; even_harmonics(SH_DEGREE, &[0.0, 0.0, 1.0]).len()];
                for ((d, w), v) in grid.directions.iter().zip(&grid.weights).zip(values) {
                    for (c, y) in coeffs.iter_mut().zip(even_harmonics(SH_DEGREE, d)) {
                        *c += w * v * y;
                    }
                }
                Ok(SphereInterp::Sphere { coeffs })
            }
            n => Err(Error::UnsupportedDimension(n)),
        }
    }

    /// Value at a unit vector.
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        match self {
            SphereInterp::Circle { cos, sin } => {
                let half = cos.len() - 1;
                let th = x[1].atan2(x[0]);
                let mut acc = cos[0];
                for k in 1..half {
                    let (s, c) = (k as f64 * th).sin_cos();
                    acc += 2.0 * (cos[k] * c + sin[k] * s);
                }
                acc + cos[half] * (half as f64 * th).cos()
            }
            SphereInterp::Sphere { coeffs } => {
                coeffs.iter().zip(even_harmonics(SH_DEGREE, x)).map(|(c, y)| c * y).sum()
            }
        }
    }
}

/// Everything the chart residual of one field needs, precomputed.
pub struct ModulationProblem<'a> {
    pub cal: &'a Calibration,
    pub energy: DirectionalEnergy,
    interp: SphereInterp,
    support: PairingSupport,
    /// Polar nodes x_k and weights for ∫U(Ax+y)U^{q−1}(x)dx.
    polar_points: Vec<[f64; 3]>,
    polar_weights: Vec<f64>,
    polar_norm: f64,
}

fn polar_rule(p: &Params) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    let n = p.n;
    let dirs = sphere_grid(n, if n == 2 { 32 } else { 12 })?;
    let gl = gauss_legendre(16);
    let mut rad: Vec<(f64, f64)> = Vec::new();
    let edges = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    for w in edges.windows(2) {
        let r = gl.mapped(w[0], w[1]);
        rad.extend(r.nodes.iter().copied().zip(r.weights.iter().copied()));
    }
    // tail r = c/(1−v)
    let c = *edges.last().unwrap();
    for (a, b) in [(0.0, 0.5), (0.5, 0.9), (0.9, 1.0)] {
        let r = gl.mapped(a, b);
        for (&v, &w) in r.nodes.iter().zip(&r.weights) {
            rad.push((c / (1.0 - v), w * c / (1.0 - v).powi(2)));
        }
    }
    let e = -(p.nf() + 2.0 * p.s) / 2.0;
    let area = sphere_area(n - 1);
    let mut pts = Vec::new();
    let mut wts = Vec::new();
    for &(r, wr) in &rad {
        let radial = wr * r.powi(n as i32 - 1) * (1.0 + r * r).powf(e) * area;
        for (d, wd) in dirs.directions.iter().zip(&dirs.weights) {
            pts.push([r * d[0], r * d[1], r * d[2]]);
            wts.push(radial * wd);
        }
    }
    Ok((pts, wts))
}

impl<'a> ModulationProblem<'a> {
    pub fn new(u: &AnchoredField, cal: &'a Calibration) -> Result<Self> {
        let energy = DirectionalEnergy::anchored(u, cal)?;
        let interp = SphereInterp::fit(&cal.sphere, &energy.table.values)?;
        let (polar_points, polar_weights) = polar_rule(&cal.p)?;
        let mut prob = Self {
            cal,
            energy,
            interp,
            support: PairingSupport::new(&u.w),
            polar_points,
            polar_weights,
            polar_norm: 1.0,
        };
        prob.polar_norm = prob.bubble_overlap(&DMatrix::identity(cal.p.n, cal.p.n), &[0.0; 3]);
        Ok(prob)
    }

    fn p(&self) -> &Params {
        &self.cal.p
    }

    /// ∫U(Ax+y)U^{q−1}(x)dx by polar quadrature.
    fn bubble_overlap(&self, a: &DMatrix<f64>, y: &[f64]) -> f64 {
        let n = self.p().n;
        let e = -self.p().decay() / 2.0;
        self.polar_points
            .iter()
            .zip(&self.polar_weights)
            .map(|(x, w)| {
                let mut r2 = 0.0;
                for i in 0..n {
                    let v = y[i] + (0..n).map(|j| a[(i, j)] * x[j]).sum::<f64>();
                    r2 += v * v;
                }
                w * (1.0 + r2).powf(e)
            })
            .sum()
    }

    /// [T_{A,y}u]² = ⟨(det A)^{−2s/n}|Aξ|^{2s}Ã(Aξ/|Aξ|)⟩.
    pub fn seminorm_sq_transformed(&self, a: &DMatrix<f64>) -> f64 {
        let p = self.p();
        let n = p.n;
        let scale = a.determinant().powf(-2.0 * p.s / p.nf());
        let vals: Vec<f64> = self
            .cal
            .sphere
            .directions
            .iter()
            .map(|d| {
                let mut x = [0.0; 3];
                for i in 0..n {
                    x[i] = (0..n).map(|j| a[(i, j)] * d[j]).sum();
                }
                let len = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                let unit = [x[0] / len, x[1] / len, x[2] / len];
                len.powf(2.0 * p.s) * self.interp.eval(&unit)
            })
            .collect();
        scale * sphere_average(&self.cal.sphere, &vals)
    }

    /// P = ⟨T_{A,y}u, U⟩ in Ḣ^s.
    pub fn pairing(&self, a: &DMatrix<f64>, y: &[f64]) -> f64 {
        let p = self.p();
        let n = p.n;
        let det = a.determinant();
        let ex = p.decay() / (2.0 * p.nf());
        let inv = a.clone().try_inverse().expect("chart matrix is invertible");
        let mut m_inv = [[0.0; 3]; 3];
        for i in 0..n {
            for j in 0..n {
                m_inv[i][j] = inv[(i, j)];
            }
        }
        let mut y3 = [0.0; 3];
        y3[..n].copy_from_slice(&y[..n]);
        let anchor = self.energy.mu * self.cal.u_seminorm_sq * self.bubble_overlap(a, y) / self.polar_norm;
        let rest = self.cal.bubble_pairing(&self.support, &m_inv, &y3) / det;
        det.powf(ex) * (anchor + rest)
    }

    /// (F with c profiled out, c*).
    pub fn profiled(&self, pt: &ChartPoint) -> (f64, f64) {
        if !pt.is_valid() {
            return (OUTSIDE, 0.0);
        }
        let a = pt.matrix();
        let t = self.seminorm_sq_transformed(&a);
        let pr = self.pairing(&a, &pt.y);
        let u2 = self.cal.u_seminorm_sq;
        (t - pr * pr / u2, pr / u2 - 1.0)
    }

    /// F(a) = [T_a u − (1+c)U]² at the given c.
    pub fn residual(&self, pt: &ChartPoint) -> f64 {
        if !pt.is_valid() {
            return OUTSIDE;
        }
        let a = pt.matrix();
        let t = self.seminorm_sq_transformed(&a);
        let pr = self.pairing(&a, &pt.y);
        let k = 1.0 + pt.c;
        t - 2.0 * k * pr + k * k * self.cal.u_seminorm_sq
    }

    /// Profiled F with [T_a u]² from direct lattice sums (no interpolation).
    pub fn profiled_exact(&self, pt: &ChartPoint) -> Result<f64> {
        let a = pt.matrix();
        let t = sphere_average(&self.cal.sphere, &transformed_table(&self.energy, &a, self.cal)?);
        let pr = self.pairing(&a, &pt.y);
        Ok(t - pr * pr / self.cal.u_seminorm_sq)
    }
}

struct ChartCost<'p, 'a> {
    prob: &'p ModulationProblem<'a>,
    affine: bool,
}

impl CostFunction for ChartCost<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        let pt = ChartPoint::from_coords(self.prob.p().n, 0.0, x, self.affine);
        Ok(self.prob.profiled(&pt).0)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModulationOpts {
    pub starts: usize,
    pub seed: u64,
    /// Half-width of the box of random starts.
    pub spread: f64,
    pub max_iters: u64,
    pub sd_tol: f64,
}

impl Default for ModulationOpts {
    fn default() -> Self {
        Self { starts: 5, seed: 7, spread: 0.02, max_iters: 4000, sd_tol: 1e-15 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModulationResult {
    pub point: ChartPoint,
    /// √F(a*).
    pub d: f64,
    pub f: f64,
    /// F(a*) with [T_a u]² from lattice sums at Aξ.
    pub f_exact: f64,
    /// Central-difference gradient norm of F at a*.
    pub grad_norm: f64,
    /// Gradient below 1e−3·D·[U] + 1e−9.
    pub first_order_ok: bool,
    pub best_of: Vec<f64>,
}

fn nelder_mead(cost: ChartCost<'_, '_>, x0: Vec<f64>, side: f64, opts: &ModulationOpts) -> Result<(Vec<f64>, f64)> {
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut v = x0.clone();
        v[i] += side;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(opts.sd_tol)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let res = Executor::new(cost, solver)
        .configure(|s| s.max_iters(opts.max_iters))
        .run()
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let st = res.state();
    let best = st.best_param.clone().ok_or(Error::NonConvergence("simplex search", opts.max_iters as usize))?;
    Ok((best, st.best_cost))
}

fn minimize(prob: &ModulationProblem<'_>, affine: bool, opts: &ModulationOpts) -> Result<ModulationResult> {
    let n = prob.p().n;
    let dim = n + 1 + if affine { ChartPoint::stretch_dim(n) } else { 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let starts: Vec<Vec<f64>> = (0..opts.starts.max(1))
        .map(|i| {
            if i == 0 {
                vec![0.0; dim]
            } else {
                (0..dim).map(|_| rng.random_range(-opts.spread..opts.spread)).collect()
            }
        })
        .collect();
    let runs: Vec<Result<(Vec<f64>, f64)>> = starts
        .into_par_iter()
        .map(|x0| {
            let (x1, _) = nelder_mead(ChartCost { prob, affine }, x0, opts.spread, opts)?;
            // restart from the best vertex with a small simplex
            nelder_mead(ChartCost { prob, affine }, x1, 1e-3, opts)
        })
        .collect();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut best_of = Vec::new();
    for r in runs {
        let (x, f) = r?;
        best_of.push(f);
        if best.as_ref().is_none_or(|b| f < b.1) {
            best = Some((x, f));
        }
    }
    let (x, _) = best.expect("at least one start");
    let (f, c) = prob.profiled(&ChartPoint::from_coords(n, 0.0, &x, affine));
    let point = ChartPoint::from_coords(n, c, &x, affine);
    let h = 1e-4;
    let grad_norm = (0..dim)
        .map(|i| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fp = prob.profiled(&ChartPoint::from_coords(n, 0.0, &xp, affine)).0;
            let fm = prob.profiled(&ChartPoint::from_coords(n, 0.0, &xm, affine)).0;
            ((fp - fm) / (2.0 * h)).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let d = f.max(0.0).sqrt();
    let f_exact = prob.profiled_exact(&point)?;
    let first_order_ok = grad_norm <= 1e-3 * d * prob.cal.u_seminorm_sq.sqrt() + 1e-9;
    debug_assert_eq!(point.coords(affine).len(), dim);
    Ok(ModulationResult { point, d, f, f_exact, grad_norm, first_order_ok, best_of })
}

/// Chart residual at an explicit chart point.
pub fn chart_residual(a: &ChartPoint, u: &AnchoredField, cal: &Calibration) -> Result<f64> {
    Ok(ModulationProblem::new(u, cal)?.residual(a))
}

/// D_aff over the full chart (c, y, λ, B).
pub fn d_aff_local(u: &AnchoredField, cal: &Calibration, opts: &ModulationOpts) -> Result<ModulationResult> {
    minimize(&ModulationProblem::new(u, cal)?, true, opts)
}

/// The same minimization with B = 0.
pub fn d_frac_local(u: &AnchoredField, cal: &Calibration, opts: &ModulationOpts) -> Result<ModulationResult> {
    minimize(&ModulationProblem::new(u, cal)?, false, opts)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoSided {
    pub deficit: f64,
    pub d: f64,
    /// δ_aff/D².
    pub ratio: f64,
    /// δ_aff ≤ (1 + upper_slack)·D².
    pub upper_ok: bool,
    /// δ_aff/D² ≥ floor.
    pub lower_ok: bool,
    pub modulation: ModulationResult,
}

pub fn two_sided_check(
    u: &AnchoredField,
    cal: &Calibration,
    opts: &ModulationOpts,
    upper_slack: f64,
    floor: f64,
) -> Result<TwoSided> {
    let deficit = deficit_aff_anchored(u, cal)?.deficit_aff;
    let modulation = d_aff_local(u, cal, opts)?;
    let d2 = modulation.d * modulation.d;
    let ratio = deficit / d2;
    Ok(TwoSided {
        deficit,
        d: modulation.d,
        ratio,
        upper_ok: deficit <= (1.0 + upper_slack) * d2 + 1e-14,
        lower_ok: ratio >= floor,
        modulation,
    })
}
