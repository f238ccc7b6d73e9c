//! Affine transforms of grid fields, convex hulls of the star bodies K_u,
//! inscribed John-type ellipsoids and the normalization map that rounds K_u.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy_grid::{phi_mean, Calibration, DirectionalEnergy};
use crate::error::{Error, Result};
use crate::fields::GridField;
use crate::params::{ball_volume, Params};
use crate::quadrature::sphere_average;

/// Out-of-box slack for resampling, as a fraction of L. Source points in the
/// slack read zero.
pub const DEFAULT_MARGIN: f64 = 0.5;

/// Keys cubic convolution kernel (a = −1/2).
fn keys(x: f64) -> f64 {
    let t = x.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Cubic interpolation of the samples at y, zero outside the grid.
pub fn interpolate(u: &GridField, y: &[f64]) -> f64 {
    let n = u.n;
    let h = u.spacing();
    let m = u.points as i64;
    let mut base = [0i64; 3];
    let mut w = [[0.0; 4]; 3];
    for d in 0..n {
        let t = (y[d] + u.half_width) / h;
        let i0 = t.floor();
        let f = t - i0;
        base[d] = i0 as i64 - 1;
        w[d] = [keys(f + 1.0), keys(f), keys(1.0 - f), keys(2.0 - f)];
    }
    let stencil = 4usize.pow(n as u32);
    let mut acc = 0.0;
    'outer: for s in 0..stencil {
        let mut idx = 0usize;
        let mut wt = 1.0;
        let mut rest = s;
        for d in 0..n {
            let k = base[d] + (rest % 4) as i64;
            if k < 0 || k >= m {
                continue 'outer;
            }
            wt *= w[d][rest % 4];
            idx = idx * u.points + k as usize;
            rest /= 4;
        }
        acc += wt * u.samples[idx];
    }
    acc
}

fn check_matrix(a: &DMatrix<f64>, n: usize) -> Result<f64> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::InvalidParams(format!("matrix is {}x{}, expected {n}x{n}", a.nrows(), a.ncols())));
    }
    let det = a.determinant();
    if !(det > 0.0) {
        return Err(Error::InvalidParams(format!("det A = {det} must be positive")));
    }
    Ok(det)
}

/// (T_{A,x0}u)(x) = (det A)^{(n−2s)/(2n)} u(Ax + x0) with the default margin.
pub fn transform_field(u: &GridField, a: &DMatrix<f64>, x0: &[f64], p: &Params) -> Result<GridField> {
    transform_field_with(u, a, x0, p, DEFAULT_MARGIN)
}

/// As `transform_field`; fails when a source point lies outside
/// [−L(1+margin), L(1+margin)]^n.
pub fn transform_field_with(u: &GridField, a: &DMatrix<f64>, x0: &[f64], p: &Params, margin: f64) -> Result<GridField> {
    let n = u.n;
    let det = check_matrix(a, n)?;
    let factor = det.powf(p.decay() / (2.0 * p.nf()));
    let lim = u.half_width * (1.0 + margin);
    let mut out = GridField::zeros(n, u.half_width, u.points, &format!("T[{}]", u.name))?;
    let excess = out
        .samples
        .par_iter_mut()
        .enumerate()
        .map(|(i, v)| {
            let x = u.point(i);
            let mut y = [0.0; 3];
            let mut worst: f64 = 0.0;
            for r in 0..n {
                y[r] = x0[r] + (0..n).map(|c| a[(r, c)] * x[c]).sum::<f64>();
                worst = worst.max(y[r].abs() - lim);
            }
            *v = factor * interpolate(u, &y[..n]);
            worst
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    if excess > 0.0 {
        return Err(Error::OutOfBox { excess, margin });
    }
    Ok(out)
}

/// Factor C with conv(K_u) ⊂ C·K_u: 1 if 2s ≥ 1, else (n+1)^{1/(2s)−1}.
pub fn hull_constant(p: &Params) -> f64 {
    if 2.0 * p.s >= 1.0 {
        1.0
    } else {
        (p.nf() + 1.0).powf(1.0 / (2.0 * p.s) - 1.0)
    }
}

/// E = {x : x·Mx ≤ 1}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub shape: Vec<Vec<f64>>,
    pub volume: f64,
}

impl Ellipsoid {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        let asym = (m - m.transpose()).abs().max();
        if asym > 1e-12 * m.abs().max() {
            return Err(Error::Degenerate(format!("shape matrix asymmetric by {asym:e}")));
        }
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        if eig.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Degenerate(format!("shape matrix eigenvalues {eig:?}")));
        }
        let shape = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
        Ok(Self { shape, volume: ball_volume(n) / m.determinant().sqrt() })
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.shape.len();
        DMatrix::from_fn(n, n, |i, j| self.shape[i][j])
    }

    /// √(x·Mx).
    pub fn gauge(&self, x: &[f64]) -> f64 {
        let n = self.shape.len();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += x[i] * self.shape[i][j] * x[j];
            }
        }
        q.sqrt()
    }

    /// Semi-axis lengths, ascending.
    pub fn semi_axes(&self) -> Vec<f64> {
        let mut ax: Vec<f64> =
            SymmetricEigen::new(self.matrix()).eigenvalues.iter().map(|e| 1.0 / e.sqrt()).collect();
        ax.sort_by(f64::total_cmp);
        ax
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InscribedEllipsoid {
    /// {x·Q^{−1}x ≤ 1}; contained in conv(±samples) for any weights.
    pub inner: Ellipsoid,
    /// Inner ellipsoid scaled to touch the farthest sample; the minimum
    /// volume enclosing ellipsoid up to the iteration tolerance.
    pub enclosing: Ellipsoid,
    /// max_i x_i·Q^{−1}x_i / n, which is 1 at the optimum.
    pub optimality: f64,
    pub iterations: usize,
}

/// Centered Khachiyan iteration with away steps on the symmetric body
/// conv(±samples).
pub fn inscribed_ellipsoid(points: &[Vec<f64>], tol: f64, max_iter: usize) -> Result<InscribedEllipsoid> {
    let m = points.len();
    let n = points.first().map_or(0, |p| p.len());
    if n == 0 || m < 2 * n {
        return Err(Error::Degenerate(format!("{m} samples in dimension {n}")));
    }
    let pts: Vec<DVector<f64>> = points.iter().map(|p| DVector::from_column_slice(p)).collect();
    let nf = n as f64;
    let mut u = vec![1.0 / m as f64; m];
    let second = |u: &[f64]| {
        let mut q = DMatrix::zeros(n, n);
        for (w, p) in u.iter().zip(&pts) {
            q += *w * p * p.transpose();
        }
        q
    };
    let q0 = second(&u);
    let eig = SymmetricEigen::new(q0.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-12 * hi) {
        return Err(Error::Degenerate(format!("samples do not span R^{n} (eigenvalues {lo:e}, {hi:e})")));
    }
    let mut q = q0;
    for it in 0..max_iter {
        let qi = q.clone().try_inverse().ok_or_else(|| Error::Degenerate("singular moment matrix".into()))?;
        let g: Vec<f64> = pts.iter().map(|p| (p.transpose() * &qi * p)[(0, 0)]).collect();
        let (j, gmax) = g.iter().copied().enumerate().fold((0, f64::MIN), |b, (i, v)| if v > b.1 { (i, v) } else { b });
        let (k, gmin) = g
            .iter()
            .copied()
            .enumerate()
            .filter(|(i, _)| u[*i] > 0.0)
            .fold((0, f64::MAX), |b, (i, v)| if v < b.1 { (i, v) } else { b });
        if gmax <= nf * (1.0 + tol) {
            let inner = Ellipsoid::new(&symmetrize(&qi))?;
            let enclosing = Ellipsoid::new(&symmetrize(&(qi / gmax)))?;
            return Ok(InscribedEllipsoid { inner, enclosing, optimality: gmax / nf, iterations: it });
        }
        if gmax - nf >= nf - gmin {
            let step = (gmax - nf) / (nf * (gmax - 1.0));
            u.iter_mut().for_each(|w| *w *= 1.0 - step);
            u[j] += step;
        } else {
            let beta = ((nf - gmin) / (nf * (gmin - 1.0))).min(u[k] / (1.0 - u[k]));
            u.iter_mut().for_each(|w| *w *= 1.0 + beta);
            u[k] -= beta;
            u[k] = u[k].max(0.0);
        }
        q = second(&u);
    }
    Err(Error::NonConvergence("ellipsoid iteration", max_iter))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// M^{−1/2} scaled to determinant one.
fn rounding_map(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let det: f64 = eig.eigenvalues.iter().product();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| e.powf(-0.5) * det.powf(1.0 / (2.0 * n as f64))));
    symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

/// A_ξ(T_{A,x0}u) = (det A)^{−2s/n} A_{Aξ}(u) on the calibration directions.
pub fn transformed_table(energy: &DirectionalEnergy, a: &DMatrix<f64>, cal: &Calibration) -> Result<Vec<f64>> {
    let n = cal.p.n;
    let det = check_matrix(a, n)?;
    let dirs: Vec<[f64; 3]> = cal
        .sphere
        .directions
        .iter()
        .map(|d| {
            let mut x = [0.0; 3];
            for r in 0..n {
                x[r] = (0..n).map(|c| a[(r, c)] * d[c]).sum();
            }
            x
        })
        .collect();
    let scale = det.powf(-2.0 * cal.p.s / cal.p.nf());
    Ok(energy.at(&dirs, cal).into_iter().map(|v| scale * v).collect())
}

fn spread(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (hi - lo) / mean
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalization {
    /// Rows of A (det A = 1); S = T_{A,0}.
    pub a: Vec<Vec<f64>>,
    pub ellipsoid: InscribedEllipsoid,
    /// [Su]² and e_aff(u).
    pub su_seminorm_sq: f64,
    pub e_aff: f64,
    /// [Su]²/e_aff(u).
    pub bound_ratio: f64,
    /// (max − min)/mean of the gauge of u and of Su on the sphere grid.
    pub gauge_spread_before: f64,
    pub gauge_spread_after: f64,
}

impl Normalization {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.a.len();
        DMatrix::from_fn(n, n, |i, j| self.a[i][j])
    }
}

/// Rounds K_u by the inscribed ellipsoid of conv(K_u)/C. [Su]² is evaluated
/// through the covariance A_ξ(T_A u) = A_{Aξ}(u), not by resampling.
pub fn normalize_energy(energy: &DirectionalEnergy, cal: &Calibration) -> Result<Normalization> {
    let p = &cal.p;
    let n = p.n;
    let values = &energy.table.values;
    let e_aff = phi_mean(values, &cal.sphere, p)?;
    let inv2s = 1.0 / (2.0 * p.s);
    let gauge: Vec<f64> = values.iter().map(|v| v.powf(inv2s)).collect();
    let c = hull_constant(p);
    let points: Vec<Vec<f64>> =
        cal.sphere.directions.iter().zip(&gauge).map(|(d, g)| d[..n].iter().map(|x| x / (g * c)).collect()).collect();
    // near-round bodies converge slowly; 1e-6 on g_max/n is far below grid error
    let ellipsoid = inscribed_ellipsoid(&points, 1e-6, 1_000_000)?;
    let a = rounding_map(&ellipsoid.inner.matrix());
    let after = transformed_table(energy, &a, cal)?;
    let su_seminorm_sq = sphere_average(&cal.sphere, &after);
    let gauge_after: Vec<f64> = after.iter().map(|v| v.powf(inv2s)).collect();
    Ok(Normalization {
        a: (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect(),
        ellipsoid,
        su_seminorm_sq,
        e_aff,
        bound_ratio: su_seminorm_sq / e_aff,
        gauge_spread_before: spread(&gauge),
        gauge_spread_after: spread(&gauge_after),
    })
}

/// `normalize_energy` for a raw grid field, with Su resampled for export
/// (source points outside the box read zero).
pub fn normalize(u: &GridField, cal: &Calibration) -> Result<(Normalization, GridField)> {
    let norm = normalize_energy(&DirectionalEnergy::raw(u, cal)?, cal)?;
    let su = transform_field_with(u, &norm.matrix(), &[0.0; 3], &cal.p, f64::INFINITY)?;
    Ok((norm, su))
}
