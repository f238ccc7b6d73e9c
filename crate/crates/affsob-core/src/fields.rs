//! Radial profiles, sector fields f(r)Y(ω), their lifts to S^n in the
//! Gegenbauer basis, and Cartesian grid samples.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{sphere_area, Params};
use crate::quadrature::gauss_legendre;
use crate::special::{gegenbauer, lgamma};

pub type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct RadialProfile {
    pub name: String,
    /// |f(r)| ≲ r^{−decay} as r → ∞.
    pub decay: f64,
    f: ProfileFn,
}

impl RadialProfile {
    pub fn new(name: impl Into<String>, decay: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), decay, f: Arc::new(f) }
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.f)(r)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.f.clone();
        Self::new(format!("{c}*{}", self.name), self.decay, move |r| c * f(r))
    }

    /// self + c·other.
    pub fn plus(&self, c: f64, other: &RadialProfile) -> Self {
        let (f, g) = (self.f.clone(), other.f.clone());
        Self::new(
            format!("{}+{c}*{}", self.name, other.name),
            self.decay.min(other.decay),
            move |r| f(r) + c * g(r),
        )
    }
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialProfile").field("name", &self.name).field("decay", &self.decay).finish()
    }
}

/// Sectoral harmonic N·Re((ω_1 + iω_2)^ℓ) (or Im when `sine`), normalized so
/// that ⟨Y²⟩ = 1 on S^{n−1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Harmonic {
    pub ell: usize,
    pub sine: bool,
}

impl Harmonic {
    pub fn new(ell: usize) -> Self {
        Self { ell, sine: false }
    }

    /// N with N^{−2} = ℓ!/(2 (n/2)_ℓ) for ℓ ≥ 1.
    pub fn norm(&self, n: usize) -> f64 {
        if self.ell == 0 {
            return 1.0;
        }
        let l = self.ell as f64;
        let a = n as f64 / 2.0;
        let log_inv = lgamma(l + 1.0) - std::f64::consts::LN_2 - (lgamma(a + l) - lgamma(a));
        (-0.5 * log_inv).exp()
    }

    /// Value at a unit vector (only the first two components enter).
    pub fn eval(&self, n: usize, w: &[f64]) -> f64 {
        if self.ell == 0 {
            return 1.0;
        }
        let (mut re, mut im) = (1.0, 0.0);
        for _ in 0..self.ell {
            let t = re * w[0] - im * w[1];
            im = re * w[1] + im * w[0];
            re = t;
        }
        self.norm(n) * if self.sine { im } else { re }
    }

    /// ⟨|Y|^q⟩ on S^{n−1}: |ω_1+iω_2|² is Beta(1, (n−2)/2) distributed and
    /// the azimuth is uniform.
    pub fn abs_moment(&self, n: usize, q: f64) -> f64 {
        if self.ell == 0 {
            return 1.0;
        }
        let l = self.ell as f64;
        let a = n as f64 / 2.0;
        let radial = if n == 2 {
            1.0
        } else {
            (lgamma(1.0 + l * q / 2.0) + lgamma(a) - lgamma(a + l * q / 2.0)).exp()
        };
        let angular = (lgamma((q + 1.0) / 2.0) - lgamma(q / 2.0 + 1.0)).exp() / std::f64::consts::PI.sqrt();
        self.norm(n).powf(q) * radial * angular
    }
}

#[derive(Debug, Clone)]
pub struct SectorField {
    pub profile: RadialProfile,
    pub harmonic: Harmonic,
}

impl SectorField {
    pub fn new(profile: RadialProfile, harmonic: Harmonic) -> Self {
        Self { profile, harmonic }
    }

    pub fn radial(profile: RadialProfile) -> Self {
        Self { profile, harmonic: Harmonic::new(0) }
    }

    pub fn ell(&self) -> usize {
        self.harmonic.ell
    }

    /// f(|x|)·Y(x/|x|), with the limit at the origin.
    pub fn eval_point(&self, n: usize, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            return if self.ell() == 0 { self.profile.eval(0.0) } else { 0.0 };
        }
        let w: Vec<f64> = x.iter().map(|v| v / r).collect();
        self.profile.eval(r) * self.harmonic.eval(n, &w)
    }
}

/// (n−2s)/2, the conformal weight of the lift to S^n.
fn lift_exponent(p: &Params) -> f64 {
    p.decay() / 2.0
}

pub fn bubble_u(p: &Params) -> RadialProfile {
    let e = -lift_exponent(p);
    RadialProfile::new("U", p.decay(), move |r| (1.0 + r * r).powf(e))
}

/// U′(r) = −(n−2s) r (1+r²)^{−(n−2s)/2−1}.
pub fn bubble_du(p: &Params) -> RadialProfile {
    let d = p.decay();
    let e = -d / 2.0 - 1.0;
    RadialProfile::new("dU", d + 1.0, move |r| -d * r * (1.0 + r * r).powf(e))
}

/// Kernel generators: U and Z_0 (ℓ = 0), ∂_1U (ℓ = 1), x·B∇U (ℓ = 2).
pub fn kernel_fields(p: &Params) -> Vec<SectorField> {
    let d = p.decay();
    let e = -d / 2.0;
    let z0 = RadialProfile::new("Z0", d, move |r| {
        let t = r * r;
        d / 2.0 * (1.0 - t) / (1.0 + t) * (1.0 + t).powf(e)
    });
    vec![
        SectorField::radial(bubble_u(p)),
        SectorField::radial(z0),
        SectorField::new(bubble_du(p), Harmonic::new(1)),
        SectorField::new(affine_profile(p), Harmonic::new(2)),
    ]
}

/// z(r) = −(n−2s) r²/(1+r²) U(r), the radial part of x·B∇U.
pub fn affine_profile(p: &Params) -> RadialProfile {
    let d = p.decay();
    let e = -d / 2.0;
    RadialProfile::new("z", d, move |r| {
        let t = r * r;
        -d * t / (1.0 + t) * (1.0 + t).powf(e)
    })
}

/// ρ(r) = (2/(1+r²))^{(n−2s)/2} (cos²θ − 1/(n+1)), cos θ = (1−r²)/(1+r²).
pub fn degree_two_test_field(p: &Params) -> RadialProfile {
    let e = lift_exponent(p);
    let inv = 1.0 / (p.nf() + 1.0);
    RadialProfile::new("rho", p.decay(), move |r| {
        let t = r * r;
        let c = (1.0 - t) / (1.0 + t);
        (2.0 / (1.0 + t)).powf(e) * (c * c - inv)
    })
}

/// Orthonormal basis Ψ_{k,ℓ} (k = ℓ..=K) of the ℓ-sector on S^n, in the polar
/// angle θ measured from the pole that corresponds to r = 0.
///
/// The raw functions sin^ℓθ C_{k−ℓ}^{ℓ+(n−1)/2}(cos θ) are orthonormalized by
/// Cholesky factorization of their quadrature Gram matrix under
/// ⟨f, g⟩ = |S^{n−1}| ∫_0^π f g sin^{n−1}θ dθ.
#[derive(Debug, Clone)]
pub struct SphereBasis {
    pub n: usize,
    pub ell: usize,
    pub kmax: usize,
    pub theta: Vec<f64>,
    /// Quadrature weights including |S^{n−1}| sin^{n−1}θ.
    pub weights: Vec<f64>,
    /// values[(i, j)] = Ψ_{ℓ+j}(θ_i).
    pub values: DMatrix<f64>,
    raw_scale: Vec<f64>,
    /// Ψ = T · (scaled raw functions), T lower triangular.
    tmat: DMatrix<f64>,
}

impl SphereBasis {
    pub fn new(n: usize, ell: usize, kmax: usize) -> Result<Self> {
        if kmax < ell {
            return Err(Error::InvalidParams(format!("K_max {kmax} below sector degree {ell}")));
        }
        let m = kmax - ell + 1;
        let nodes = (4 * kmax + 120).max(200);
        let rule = gauss_legendre(nodes).mapped(0.0, std::f64::consts::PI);
        let area = sphere_area(n - 1);
        let weights: Vec<f64> = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| w * area * t.sin().powi(n as i32 - 1))
            .collect();
        let lam = ell as f64 + (n as f64 - 1.0) / 2.0;
        let raw = |j: usize, t: f64| t.sin().powi(ell as i32) * gegenbauer(j, lam, t.cos());
        let mut raw_vals = DMatrix::<f64>::zeros(nodes, m);
        for (i, &t) in rule.nodes.iter().enumerate() {
            for j in 0..m {
                raw_vals[(i, j)] = raw(j, t);
            }
        }
        let mut raw_scale = vec![0.0; m];
        for j in 0..m {
            let nrm: f64 = (0..nodes).map(|i| weights[i] * raw_vals[(i, j)].powi(2)).sum();
            raw_scale[j] = 1.0 / nrm.sqrt();
            for i in 0..nodes {
                raw_vals[(i, j)] *= raw_scale[j];
            }
        }
        let mut gram = DMatrix::<f64>::zeros(m, m);
        for a in 0..m {
            for b in 0..=a {
                let g: f64 = (0..nodes).map(|i| weights[i] * raw_vals[(i, a)] * raw_vals[(i, b)]).sum();
                gram[(a, b)] = g;
                gram[(b, a)] = g;
            }
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Degenerate("sector Gram matrix not positive definite".into()))?;
        let tmat = chol.l().try_inverse().ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
        let values = &raw_vals * tmat.transpose();
        Ok(Self { n, ell, kmax, theta: rule.nodes, weights, values, raw_scale, tmat })
    }

    pub fn modes(&self) -> usize {
        self.kmax - self.ell + 1
    }

    /// Ψ_{ℓ+j}(θ) at an arbitrary angle.
    pub fn eval_modes(&self, theta: f64) -> Vec<f64> {
        let m = self.modes();
        let lam = self.ell as f64 + (self.n as f64 - 1.0) / 2.0;
        let sl = theta.sin().powi(self.ell as i32);
        let c = theta.cos();
        let raw: Vec<f64> = (0..m).map(|j| sl * gegenbauer(j, lam, c) * self.raw_scale[j]).collect();
        (0..m).map(|a| (0..=a).map(|b| self.tmat[(a, b)] * raw[b]).sum()).collect()
    }

    pub fn synthesize(&self, coeffs: &[f64], theta: f64) -> f64 {
        self.eval_modes(theta).iter().zip(coeffs).map(|(v, c)| v * c).sum()
    }

    /// Coefficients of g from its values at the quadrature nodes.
    pub fn project(&self, g: &[f64]) -> Vec<f64> {
        (0..self.modes())
            .map(|j| (0..self.theta.len()).map(|i| self.weights[i] * g[i] * self.values[(i, j)]).sum())
            .collect()
    }

    pub fn norm_sq(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.weights).map(|(v, w)| w * v * v).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereCoeffs {
    pub ell: usize,
    /// a_k for k = ℓ..=K_max.
    pub coeffs: Vec<f64>,
    /// ‖g‖²_{L²(S^n)} from direct quadrature of the lift.
    pub norm_sq: f64,
}

impl SphereCoeffs {
    pub fn kmax(&self) -> usize {
        self.ell + self.coeffs.len() - 1
    }

    /// a_k, zero outside the stored range.
    pub fn get(&self, k: usize) -> f64 {
        if k < self.ell {
            0.0
        } else {
            self.coeffs.get(k - self.ell).copied().unwrap_or(0.0)
        }
    }

    /// Relative Parseval defect (‖g‖² − Σa_k²)/‖g‖².
    pub fn truncation_loss(&self) -> f64 {
        let kept: f64 = self.coeffs.iter().map(|a| a * a).sum();
        if self.norm_sq == 0.0 {
            0.0
        } else {
            (self.norm_sq - kept) / self.norm_sq
        }
    }

    /// Coefficients of a single mode.
    pub fn mode(ell: usize, kmax: usize, k: usize) -> Self {
        let mut coeffs = vec![0.0; kmax - ell + 1];
        coeffs[k - ell] = 1.0;
        Self { ell, coeffs, norm_sq: 1.0 }
    }
}

/// g(θ) = ((1+r²)/2)^{(n−2s)/2} f(r) at r = tan(θ/2).
pub fn lift(p: &Params, f: &RadialProfile, theta: f64) -> f64 {
    let r = (theta / 2.0).tan();
    ((1.0 + r * r) / 2.0).powf(lift_exponent(p)) * f.eval(r)
}

/// Inverse of `lift`: the profile whose lift is Σ a_k Ψ_k.
pub fn profile_from_coeffs(p: &Params, basis: Arc<SphereBasis>, coeffs: Vec<f64>, name: &str) -> RadialProfile {
    let e = lift_exponent(p);
    RadialProfile::new(name, p.decay(), move |r| {
        let theta = 2.0 * r.atan();
        ((1.0 + r * r) / 2.0).powf(-e) * basis.synthesize(&coeffs, theta)
    })
}

pub fn sector_to_sphere_coeffs_with(p: &Params, f: &RadialProfile, basis: &SphereBasis, tol: f64) -> Result<SphereCoeffs> {
    let g: Vec<f64> = basis.theta.iter().map(|&t| lift(p, f, t)).collect();
    let out = SphereCoeffs { ell: basis.ell, coeffs: basis.project(&g), norm_sq: basis.norm_sq(&g) };
    let loss = out.truncation_loss();
    if loss > tol {
        return Err(Error::TruncationLoss { loss, tol, kmax: basis.kmax });
    }
    Ok(out)
}

pub fn sector_to_sphere_coeffs(f: &SectorField, p: &Params, kmax: usize, tol: f64) -> Result<SphereCoeffs> {
    let basis = SphereBasis::new(p.n, f.ell(), kmax)?;
    sector_to_sphere_coeffs_with(p, &f.profile, &basis, tol)
}

/// Header written next to the raw sample file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridHeader {
    pub n: usize,
    #[serde(rename = "L")]
    pub half_width: f64,
    #[serde(rename = "N")]
    pub points: usize,
    pub name: String,
}

/// Samples on the periodic grid x_i = −L + i·2L/N, i = 0..N−1 per axis,
/// stored row-major with the last axis fastest.
#[derive(Debug, Clone)]
pub struct GridField {
    pub n: usize,
    pub half_width: f64,
    pub points: usize,
    pub samples: Vec<f64>,
    pub name: String,
}

impl GridField {
    pub fn zeros(n: usize, half_width: f64, points: usize, name: &str) -> Result<Self> {
        check_grid(n, points)?;
        Ok(Self { n, half_width, points, samples: vec![0.0; points.pow(n as u32)], name: name.into() })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.n as i32)
    }

    /// Multi-index of a flat index.
    pub fn unflatten(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for d in (0..self.n).rev() {
            out[d] = idx % self.points;
            idx /= self.points;
        }
        out
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let m = self.unflatten(idx);
        let mut x = [0.0; 3];
        for d in 0..self.n {
            x[d] = self.coord(m[d]);
        }
        x
    }

    /// self + c·other.
    pub fn axpy(&self, c: f64, other: &GridField) -> GridField {
        let mut out = self.clone();
        for (a, b) in out.samples.iter_mut().zip(&other.samples) {
            *a += c * b;
        }
        out.name = format!("{}+{c}*{}", self.name, other.name);
        out
    }

    pub fn scaled(&self, c: f64) -> GridField {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Largest |u| over samples with some coordinate index 0 or N−1.
    pub fn boundary_max(&self) -> f64 {
        let last = self.points - 1;
        (0..self.samples.len())
            .filter(|&i| self.unflatten(i)[..self.n].iter().any(|&k| k == 0 || k == last))
            .map(|i| self.samples[i].abs())
            .fold(0.0, f64::max)
    }

    pub fn check_boundary(&self, threshold: f64) -> Result<()> {
        let value = self.boundary_max();
        if value > threshold {
            return Err(Error::BoundaryTruncation { value, threshold });
        }
        Ok(())
    }

    pub fn header(&self) -> GridHeader {
        GridHeader { n: self.n, half_width: self.half_width, points: self.points, name: self.name.clone() }
    }

    /// Writes `<stem>.bin` (little-endian f64) and `<stem>.json`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.samples.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(stem.with_extension("bin"), bytes)?;
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&self.header())?)?;
        Ok(())
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let header: GridHeader = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        check_grid(header.n, header.points)?;
        let bytes = std::fs::read(stem.with_extension("bin"))?;
        let expected = header.points.pow(header.n as u32);
        if bytes.len() != 8 * expected {
            return Err(Error::InvalidParams(format!(
                "sample file holds {} bytes, header implies {}",
                bytes.len(),
                8 * expected
            )));
        }
        let samples = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { n: header.n, half_width: header.half_width, points: header.points, samples, name: header.name })
    }
}

fn check_grid(n: usize, points: usize) -> Result<()> {
    if n != 2 && n != 3 {
        return Err(Error::UnsupportedDimension(n));
    }
    if points < 4 || !points.is_multiple_of(2) {
        return Err(Error::InvalidParams(format!("grid points per axis must be even and ≥ 4, got {points}")));
    }
    Ok(())
}

/// Samples an arbitrary function of x on the grid.
pub fn sample_on_grid(
    n: usize,
    half_width: f64,
    points: usize,
    name: &str,
    f: impl Fn(&[f64]) -> f64 + Sync,
) -> Result<GridField> {
    let mut g = GridField::zeros(n, half_width, points, name)?;
    let slab = points.pow(n as u32 - 1);
    let proto = g.clone();
    g.samples.par_chunks_mut(slab).enumerate().for_each(|(i0, chunk)| {
        for (j, v) in chunk.iter_mut().enumerate() {
            let x = proto.point(i0 * slab + j);
            *v = f(&x[..n]);
        }
    });
    Ok(g)
}

pub fn realize_on_grid(f: &SectorField, p: &Params, half_width: f64, points: usize) -> Result<GridField> {
    let n = p.n;
    sample_on_grid(n, half_width, points, &f.profile.name, |x| f.eval_point(n, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{sphere_average, sphere_grid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(n: usize, s: f64) -> Params {
        Params::new(n, s).unwrap()
    }

    #[test]
    fn bubble_values() {
        let u = bubble_u(&p(2, 0.5));
        assert_eq!(u.eval(0.0), 1.0);
        assert_relative_eq!(u.eval(1.0), 0.5f64.sqrt(), epsilon = 1e-15);
        let u3 = bubble_u(&p(3, 0.5));
        assert_relative_eq!(u3.eval(2.0), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn kernel_profile_values() {
        let q = p(2, 0.5);
        let k = kernel_fields(&q);
        assert_relative_eq!(k[1].profile.eval(0.0), 0.5, epsilon = 1e-15);
        assert!(k[1].profile.eval(1.0).abs() < 1e-15);
        assert_relative_eq!(k[3].profile.eval(1.0), -(0.5f64.sqrt()) / 2.0, epsilon = 1e-15);
        // Z_0 = (n−2s)/2·U + rU′
        let u = bubble_u(&q);
        let du = bubble_du(&q);
        for &r in &[0.3, 2.0, 7.0] {
            assert_relative_eq!(k[1].profile.eval(r), 0.5 * u.eval(r) + r * du.eval(r), epsilon = 1e-14);
        }
    }

    #[test]
    fn rho_values_and_sign_change() {
        for n in [2, 3, 5] {
            let q = p(n, 0.5);
            let rho = degree_two_test_field(&q);
            let nf = n as f64;
            assert_relative_eq!(rho.eval(1.0), -1.0 / (nf + 1.0), epsilon = 1e-14);
            assert_relative_eq!(rho.eval(0.0), 2f64.powf(q.decay() / 2.0) * nf / (nf + 1.0), epsilon = 1e-14);
            // root of (1−t)/(1+t) = 1/√(n+1) with t = r²
            let c = 1.0 / (nf + 1.0).sqrt();
            let root = ((1.0 - c) / (1.0 + c)).sqrt();
            assert!(rho.eval(root).abs() < 1e-14);
        }
        assert_relative_eq!(degree_two_test_field(&p(2, 0.5)).eval(0.0), 0.9428090415820634, epsilon = 1e-12);
    }

    #[test]
    fn harmonic_normalization_on_grids() {
        for n in [2, 3] {
            let g = sphere_grid(n, 32).unwrap();
            for ell in 0..6 {
                for sine in [false, true] {
                    if ell == 0 && sine {
                        continue;
                    }
                    let h = Harmonic { ell, sine };
                    let sq: Vec<f64> = g.directions.iter().map(|d| h.eval(n, &d[..n]).powi(2)).collect();
                    assert_relative_eq!(sphere_average(&g, &sq), 1.0, epsilon = 1e-12);
                    if ell > 0 {
                        let v: Vec<f64> = g.directions.iter().map(|d| h.eval(n, &d[..n])).collect();
                        assert!(sphere_average(&g, &v).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn harmonic_abs_moment_matches_quadrature() {
        // q = 4 makes |Y|^q a polynomial, so the product rule is exact
        for n in [2, 3] {
            let g = sphere_grid(n, 40).unwrap();
            for ell in 1..4 {
                let h = Harmonic::new(ell);
                let v: Vec<f64> = g.directions.iter().map(|d| h.eval(n, &d[..n]).powi(4)).collect();
                assert_relative_eq!(sphere_average(&g, &v), h.abs_moment(n, 4.0), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn lifts_of_named_fields() {
        for (n, s) in [(2, 0.5), (3, 0.5), (3, 0.25), (4, 0.7)] {
            let q = p(n, s);
            let k = kernel_fields(&q);
            let u = sector_to_sphere_coeffs(&k[0], &q, 20, 1e-10).unwrap();
            assert!(u.coeffs[0].abs() > 0.1);
            assert!(u.coeffs[1..].iter().all(|a| a.abs() < 1e-10));
            let z0 = sector_to_sphere_coeffs(&k[1], &q, 20, 1e-10).unwrap();
            assert!(z0.coeffs.iter().enumerate().all(|(j, a)| j == 1 || a.abs() < 1e-10));
            let du = sector_to_sphere_coeffs(&k[2], &q, 20, 1e-10).unwrap();
            assert!(du.coeffs[1..].iter().all(|a| a.abs() < 1e-10));
            let rho = sector_to_sphere_coeffs(&SectorField::radial(degree_two_test_field(&q)), &q, 20, 1e-10).unwrap();
            assert!(rho.coeffs.iter().enumerate().all(|(j, a)| j == 2 || a.abs() < 1e-10));
        }
    }

    #[test]
    fn lift_of_bubble_is_constant() {
        let q = p(3, 0.3);
        let u = bubble_u(&q);
        let g0 = lift(&q, &u, 0.4);
        for &t in &[0.1, 1.0, 2.5, 3.1] {
            assert_relative_eq!(lift(&q, &u, t), g0, epsilon = 1e-14);
        }
    }

    #[test]
    fn basis_round_trip() {
        let q = p(2, 0.5);
        let basis = SphereBasis::new(2, 2, 60).unwrap();
        let f = SectorField::new(
            RadialProfile::new("bump", 2.0, |r: f64| r * r * (-r * r).exp() / (1.0 + r * r)),
            Harmonic::new(2),
        );
        let c = sector_to_sphere_coeffs_with(&q, &f.profile, &basis, 1.0).unwrap();
        for (i, &t) in basis.theta.iter().enumerate().step_by(37) {
            let direct = lift(&q, &f.profile, t);
            let synth: f64 = (0..basis.modes()).map(|j| c.coeffs[j] * basis.values[(i, j)]).sum();
            assert!((direct - synth).abs() < 1e-8, "{direct} {synth}");
        }
    }

    #[test]
    fn profile_from_coeffs_inverts_lift() {
        let q = p(3, 0.5);
        let basis = Arc::new(SphereBasis::new(3, 0, 8).unwrap());
        let rho = degree_two_test_field(&q);
        let c = sector_to_sphere_coeffs_with(&q, &rho, &basis, 1e-10).unwrap();
        let back = profile_from_coeffs(&q, basis, c.coeffs, "rho");
        for &r in &[0.0, 0.4, 1.0, 3.0, 30.0] {
            assert_relative_eq!(back.eval(r), rho.eval(r), epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_realization_symmetries() {
        let q = p(2, 0.5);
        let k = kernel_fields(&q);
        let u = realize_on_grid(&k[0], &q, 6.0, 32).unwrap();
        let c = 16 * 32 + 16;
        assert_eq!(u.samples[c], 1.0);
        let d = realize_on_grid(&k[2], &q, 6.0, 32).unwrap();
        for i in 1..32 {
            for j in 1..32 {
                let a = d.samples[i * 32 + j];
                let b = d.samples[(32 - i) * 32 + (32 - j)];
                assert!((a + b).abs() < 1e-15);
            }
        }
        let z = realize_on_grid(&k[3], &q, 6.0, 32).unwrap();
        for i in 0..32 {
            assert!(z.samples[i * 32 + i].abs() < 1e-15);
        }
    }

    #[test]
    fn grid_io_round_trip() {
        let q = p(3, 0.5);
        let u = realize_on_grid(&SectorField::radial(bubble_u(&q)), &q, 4.0, 8).unwrap();
        let dir = std::env::temp_dir().join(format!("affsob-grid-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("u");
        u.write(&stem).unwrap();
        let back = GridField::read(&stem).unwrap();
        assert_eq!(back.samples, u.samples);
        assert_eq!(back.header(), u.header());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn boundary_guard() {
        let q = p(2, 0.5);
        let u = realize_on_grid(&SectorField::radial(bubble_u(&q)), &q, 4.0, 16).unwrap();
        assert!(u.check_boundary(0.5).is_ok());
        assert!(matches!(u.check_boundary(0.1), Err(Error::BoundaryTruncation { .. })));
    }

    proptest! {
        #[test]
        fn parseval_for_smooth_sector_fields(ell in 0usize..5, w in 0.3f64..3.0, n in 2usize..5) {
            let q = p(n, 0.4);
            let f = RadialProfile::new("g", 3.0, move |r: f64| r.powi(ell as i32) * (-w * r * r).exp());
            let c = sector_to_sphere_coeffs(&SectorField::new(f, Harmonic::new(ell)), &q, 60, 1.0).unwrap();
            prop_assert!(c.truncation_loss().abs() < 1e-8);
        }
    }
}
