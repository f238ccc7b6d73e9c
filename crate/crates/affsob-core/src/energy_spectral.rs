//! Sphere-side evaluation of seminorms, the fractional Hessian, the affine
//! correction in each sector, radial deficits, the constrained sector
//! Rayleigh quotients and the degree-two ε-sweep.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{
    affine_profile, bubble_u, degree_two_test_field, sector_to_sphere_coeffs_with, Harmonic, RadialProfile,
    SectorField, SphereBasis, SphereCoeffs,
};
use crate::params::{lambda_k, rho_closed_form, sphere_area, Params};
use crate::quadrature::{halfline_rule, integrate_halfline, HalflineOpts, Rule1D};
use crate::special::{hyp2f1_split, lgamma};

pub const DEFAULT_KMAX: usize = 40;

/// Σ Λ_k a_k b_k.
pub fn inner_hs(a: &SphereCoeffs, b: &SphereCoeffs, p: &Params) -> f64 {
    debug_assert_eq!(a.ell, b.ell);
    let top = a.kmax().min(b.kmax());
    (a.ell..=top).map(|k| lambda_k(p, k) * a.get(k) * b.get(k)).sum()
}

pub fn seminorm_sq(c: &SphereCoeffs, p: &Params) -> f64 {
    inner_hs(c, c, p)
}

/// Σ_{k≥1} (Λ_k − Λ_1) a_k b_k; the constant mode carries weight 0.
pub fn q_frac_bilinear(a: &SphereCoeffs, b: &SphereCoeffs, p: &Params) -> f64 {
    let l1 = lambda_k(p, 1);
    let top = a.kmax().min(b.kmax());
    (a.ell.max(1)..=top).map(|k| (lambda_k(p, k) - l1) * a.get(k) * b.get(k)).sum()
}

pub fn q_frac_sector(c: &SphereCoeffs, p: &Params) -> f64 {
    q_frac_bilinear(c, c, p)
}

/// [U]² = Λ_0 2^{−(n−2s)} |S^n|, from the constant lift 2^{−(n−2s)/2}.
pub fn bubble_seminorm_sq(p: &Params) -> f64 {
    lambda_k(p, 0) * 2f64.powf(-p.decay()) * sphere_area(p.n)
}

/// [z]² for the affine profile z with a unit-normalized Y_2.
pub fn affine_seminorm_sq(p: &Params) -> f64 {
    let (a, s, n) = (p.a, p.s, p.nf());
    bubble_seminorm_sq(p) * n * (a + s) * (a + s + 1.0) / (n + 1.0)
}

fn radial_opts() -> HalflineOpts {
    HalflineOpts { tol: 1e-13, max_doublings: 7, ..HalflineOpts::default() }
}

/// ‖f Y‖_q = (|S^{n−1}| ⟨|Y|^q⟩ ∫ |f|^q r^{n−1} dr)^{1/q}.
pub fn lq_norm(f: &SectorField, p: &Params) -> Result<f64> {
    if f.profile.decay * p.q <= p.nf() {
        return Err(Error::Divergent(format!(
            "profile {} decays like r^-{} and is not in L^{}",
            f.profile.name, f.profile.decay, p.q
        )));
    }
    let nm1 = p.n as i32 - 1;
    let radial = integrate_halfline(|r| f.profile.eval(r).abs().powf(p.q) * r.powi(nm1), &radial_opts())?;
    let total = sphere_area(p.n - 1) * f.harmonic.abs_moment(p.n, p.q) * radial;
    Ok(total.powf(1.0 / p.q))
}

fn sharp_cache() -> &'static Mutex<HashMap<(usize, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// S_{n,s} = [U]²/‖U‖_q² with [U]² taken from the lifted coefficients.
pub fn sharp_constant(p: &Params) -> Result<f64> {
    let key = (p.n, p.s.to_bits());
    if let Some(&v) = sharp_cache().lock().unwrap().get(&key) {
        return Ok(v);
    }
    let basis = SphereBasis::new(p.n, 0, 4)?;
    let u = bubble_u(p);
    let c = sector_to_sphere_coeffs_with(p, &u, &basis, 1e-12)?;
    let v = seminorm_sq(&c, p) / lq_norm(&SectorField::radial(u), p)?.powi(2);
    sharp_cache().lock().unwrap().insert(key, v);
    Ok(v)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub seminorm_sq: f64,
    pub lq_norm: f64,
    pub deficit: f64,
    /// Λ_k a_k² for k = 0..=K_max.
    pub mode_energies: Vec<f64>,
}

/// Deficit of a radial field; the affine energy equals the seminorm here.
pub fn spectral_report(u: &RadialProfile, p: &Params, basis: &SphereBasis, tol: f64) -> Result<SpectralReport> {
    let c = sector_to_sphere_coeffs_with(p, u, basis, tol)?;
    let mode_energies: Vec<f64> = (0..=c.kmax()).map(|k| lambda_k(p, k) * c.get(k).powi(2)).collect();
    let seminorm_sq: f64 = mode_energies.iter().sum();
    let lq = lq_norm(&SectorField::radial(u.clone()), p)?;
    Ok(SpectralReport { seminorm_sq, lq_norm: lq, deficit: seminorm_sq - sharp_constant(p)? * lq * lq, mode_energies })
}

pub fn deficit_radial(u: &RadialProfile, p: &Params, basis: &SphereBasis) -> Result<f64> {
    Ok(spectral_report(u, p, basis, 1e-10)?.deficit)
}

/// 2^{2s} Γ((ℓ+n)/2+s) Γ((ℓ+n)/2) / (Γ(ℓ+n/2) Γ(n/2−s)).
fn pairing_constant(p: &Params, ell: usize) -> f64 {
    let (l, n, s) = (ell as f64, p.nf(), p.s);
    (2.0 * s * std::f64::consts::LN_2 + lgamma((l + n) / 2.0 + s) + lgamma((l + n) / 2.0)
        - lgamma(l + n / 2.0)
        - lgamma(n / 2.0 - s))
        .exp()
}

/// ĥ_ℓ(r) = r^ℓ (1+r²)^{−(ℓ+n)/2} ₂F₁(ℓ/2−s, (ℓ+n)/2; ℓ+n/2; r²/(1+r²)).
///
/// Up to the constant `pairing_constant`, f ↦ ∫ ĥ_ℓ f r^{n−1} dr is the
/// Fourier pairing of fY_ℓ against Û Y_ℓ with the weight |ζ|^{2s}; at ℓ = 0
/// the kernel reduces to U^{q−1}.
pub fn pairing_kernel(p: &Params, ell: usize, r: f64) -> f64 {
    let (l, n, s) = (ell as f64, p.nf(), p.s);
    let t = r * r;
    let w = t / (1.0 + t);
    let v = 1.0 / (1.0 + t);
    r.powi(ell as i32) * v.powf((l + n) / 2.0) * hyp2f1_split(l / 2.0 - s, (l + n) / 2.0, l + n / 2.0, w, v)
}

/// Radial rule and kernel tables shared by the sector pairings.
#[derive(Debug, Clone)]
pub struct PairingTable {
    pub ell: usize,
    rule: Rule1D,
    /// c_ℓ ĥ_ℓ(r_i) r_i^{n−1} w_i, so that ⟨G_ℓ, fY⟩ = Σ_i kern_i f(r_i).
    kern: Vec<f64>,
}

impl PairingTable {
    pub fn new(p: &Params, ell: usize, pieces: usize) -> Result<Self> {
        let rule = halfline_rule(&radial_opts(), pieces);
        let nm1 = p.n as i32 - 1;
        let u = bubble_u(p);
        let uq: f64 = rule.integrate(|r| u.eval(r).powf(p.q) * r.powi(nm1));
        let sign = if (ell / 2).is_multiple_of(2) { 1.0 } else { -1.0 };
        let c = sign * bubble_seminorm_sq(p) * pairing_constant(p, ell) / pairing_constant(p, 0) / uq;
        let kern = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&r, &w)| c * pairing_kernel(p, ell, r) * r.powi(nm1) * w)
            .collect();
        Ok(Self { ell, rule, kern })
    }

    /// ⟨G_ℓ, fY⟩, normalized so that ⟨G_0, U⟩ = [U]².
    pub fn pair(&self, f: &RadialProfile) -> f64 {
        self.rule.nodes.iter().zip(&self.kern).map(|(&r, &k)| k * f.eval(r)).sum()
    }

    /// Pairings of all basis modes, with profiles f_k = ((1+r²)/2)^{−(n−2s)/2} Ψ_k(θ).
    pub fn pair_modes(&self, p: &Params, basis: &SphereBasis) -> Vec<f64> {
        let e = -p.decay() / 2.0;
        let mut out = vec![0.0; basis.modes()];
        for (&r, &k) in self.rule.nodes.iter().zip(&self.kern) {
            let w = k * ((1.0 + r * r) / 2.0).powf(e);
            for (o, v) in out.iter_mut().zip(basis.eval_modes(2.0 * r.atan())) {
                *o += w * v;
            }
        }
        out
    }
}

/// (n+2s)/s · ρ_ℓ² / [U]²: the affine correction in sector ℓ is this factor
/// times ⟨G_ℓ, fY⟩².
pub fn correction_factor(p: &Params, ell: usize) -> f64 {
    (p.nf() + 2.0 * p.s) / p.s * rho_closed_form(p, ell).powi(2) / bubble_seminorm_sq(p)
}

/// R_s^{(ℓ)}(fY) through the Funk–Hecke factorization of L_ξ.
pub fn affine_correction(p: &Params, ell: usize, f: &RadialProfile) -> Result<f64> {
    if ell % 2 == 1 {
        return Ok(0.0);
    }
    let t = PairingTable::new(p, ell, 2)?;
    Ok(correction_factor(p, ell) * t.pair(f).powi(2))
}

/// Q_frac(z, z) = [z]² − Λ_1‖g_z‖², with ‖g_z‖² by direct quadrature of the
/// lift, which needs no truncation in k.
pub fn q_frac_affine_continuum(p: &Params) -> Result<f64> {
    let basis = SphereBasis::new(p.n, 2, 2)?;
    let g: Vec<f64> = basis.theta.iter().map(|&t| crate::fields::lift(p, &affine_profile(p), t)).collect();
    Ok(affine_seminorm_sq(p) - lambda_k(p, 1) * basis.norm_sq(&g))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegreeTwoForm {
    pub q_frac: f64,
    pub correction: f64,
    pub q_aff: f64,
}

/// Exact data of the affine profile z in the ℓ = 2 sector.
///
/// The lift of z·Y_2 is discontinuous at the pole r = ∞, so its Gegenbauer
/// coefficients decay slowly and truncated sums lose several percent of
/// Q_frac(z, z). Fields are therefore carried as v + t·z with v expanded in
/// the basis and z kept whole.
#[derive(Debug, Clone)]
pub struct AffineMode {
    /// Truncated coefficients of z, used only in pairings against v.
    pub coeffs: SphereCoeffs,
    pub seminorm_sq: f64,
    pub q_frac: f64,
    /// ⟨G_2, z⟩.
    pub pairing: f64,
}

impl AffineMode {
    pub fn new(p: &Params, basis: &SphereBasis) -> Result<Self> {
        if basis.ell != 2 {
            return Err(Error::InvalidParams("affine mode lives in the ℓ = 2 sector".into()));
        }
        let z = affine_profile(p);
        Ok(Self {
            coeffs: sector_to_sphere_coeffs_with(p, &z, basis, 1.0)?,
            seminorm_sq: affine_seminorm_sq(p),
            q_frac: q_frac_affine_continuum(p)?,
            pairing: PairingTable::new(p, 2, 2)?.pair(&z),
        })
    }
}

/// Q_U^{(2)}(v + t z) = Q_frac(f,f) − Q_frac(f,z)²/Q_frac(z,z).
pub fn q_aff_degree2_split(v: &SphereCoeffs, t: f64, z: &AffineMode, p: &Params) -> Result<DegreeTwoForm> {
    if v.ell != 2 {
        return Err(Error::InvalidParams("degree-two form needs ℓ = 2 coefficients".into()));
    }
    if z.q_frac.abs() < 1e-300 {
        return Err(Error::Degenerate("Q_frac(z, z) vanishes".into()));
    }
    let vz = q_frac_bilinear(v, &z.coeffs, p);
    let qff = q_frac_sector(v, p) + 2.0 * t * vz + t * t * z.q_frac;
    let qfz = vz + t * z.q_frac;
    let correction = qfz * qfz / z.q_frac;
    Ok(DegreeTwoForm { q_frac: qff, correction, q_aff: qff - correction })
}

/// `q_aff_degree2_split` for a field given by its profile alone.
pub fn q_aff_degree2(f: &SectorField, p: &Params, basis: &SphereBasis) -> Result<DegreeTwoForm> {
    if f.ell() != 2 || basis.ell != 2 {
        return Err(Error::InvalidParams("degree-two form needs an ℓ = 2 field and basis".into()));
    }
    let cf = sector_to_sphere_coeffs_with(p, &f.profile, basis, 1e-8)?;
    q_aff_degree2_split(&cf, 0.0, &AffineMode::new(p, basis)?, p)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapResult {
    pub ell: usize,
    pub minimum: f64,
    /// Degree k carrying the largest weight in the minimizing vector; K_max+1
    /// stands for the affine profile z in the ℓ = 2 sector.
    pub dominant_k: usize,
}

/// Minimum of Q_U^{(ℓ)}/[·]² over the truncated sector, with the kernel
/// directions removed: k ∈ {0, 1} for ℓ = 0, k = 1 for ℓ = 1, and the
/// Ḣ^s-projection onto z for ℓ = 2 (where z itself is adjoined to the basis).
pub fn rayleigh_gap(p: &Params, ell: usize, kmax: usize) -> Result<GapResult> {
    let basis = SphereBasis::new(p.n, ell, kmax)?;
    let lam: Vec<f64> = (ell..=kmax).map(|k| lambda_k(p, k)).collect();
    let l1 = lambda_k(p, 1);
    let m = lam.len();
    let with_z = ell == 2;
    let dim = if with_z { m + 1 } else { m };
    // Ḣ^s Gram matrix and Q_U^{(ℓ)} in the (possibly augmented) basis
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut form = DMatrix::<f64>::zeros(dim, dim);
    for j in 0..m {
        gram[(j, j)] = lam[j];
        form[(j, j)] = lam[j] - l1;
    }
    let mut pairs = DVector::<f64>::zeros(dim);
    let even = ell.is_multiple_of(2) && ell >= 2;
    if even {
        let table = PairingTable::new(p, ell, 2)?;
        for (j, v) in table.pair_modes(p, &basis).into_iter().enumerate() {
            pairs[j] = v;
        }
    }
    if with_z {
        let z = AffineMode::new(p, &basis)?;
        for j in 0..m {
            let a = z.coeffs.coeffs[j];
            gram[(j, m)] = lam[j] * a;
            gram[(m, j)] = lam[j] * a;
            form[(j, m)] = (lam[j] - l1) * a;
            form[(m, j)] = (lam[j] - l1) * a;
        }
        gram[(m, m)] = z.seminorm_sq;
        form[(m, m)] = z.q_frac;
        pairs[m] = z.pairing;
    }
    if even {
        form -= correction_factor(p, ell) * &pairs * pairs.transpose();
    }
    let unit = |j: usize| {
        let mut v = DVector::zeros(dim);
        v[j] = 1.0;
        v
    };
    // constraints are linear functionals x ↦ c·x
    let constraints: Vec<DVector<f64>> = match ell {
        0 => vec![unit(0), unit(1)],
        1 => vec![unit(0)],
        2 => vec![gram.column(m).into_owned()],
        _ => Vec::new(),
    };
    let q = complement_basis(dim, &constraints)?;
    let g = q.transpose() * &gram * &q;
    let a = q.transpose() * &form * &q;
    let chol = g.cholesky().ok_or_else(|| Error::Degenerate("sector Gram matrix not positive definite".into()))?;
    let linv = chol.l().try_inverse().ok_or_else(|| Error::Degenerate("singular Gram factor".into()))?;
    let reduced = &linv * a * linv.transpose();
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let eig = SymmetricEigen::new(reduced);
    let (imin, &minimum) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::Degenerate("empty sector".into()))?;
    let x = &q * (linv.transpose() * eig.eigenvectors.column(imin));
    // weight of each basis direction in the Ḣ^s norm
    let weight = |j: usize| x[j].powi(2) * gram[(j, j)];
    let jmax = (0..dim).max_by(|&a, &b| weight(a).total_cmp(&weight(b))).unwrap_or(0);
    Ok(GapResult { ell, minimum, dominant_k: ell + jmax })
}

/// Orthonormal basis (as columns) of the common kernel of the functionals.
fn complement_basis(dim: usize, constraints: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let mut span: Vec<DVector<f64>> = Vec::new();
    let push = |v: &DVector<f64>, span: &mut Vec<DVector<f64>>| -> bool {
        let mut w = v.clone();
        for _ in 0..2 {
            for u in span.iter() {
                w -= u * u.dot(&w);
            }
        }
        let norm = w.norm();
        if norm > 1e-10 * v.norm().max(1e-300) {
            span.push(w / norm);
            true
        } else {
            false
        }
    };
    for c in constraints {
        if !push(c, &mut span) {
            return Err(Error::Degenerate("dependent sector constraints".into()));
        }
    }
    let fixed = span.len();
    for j in 0..dim {
        if span.len() == dim {
            break;
        }
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        push(&e, &mut span);
    }
    if span.len() != dim || fixed > dim {
        return Err(Error::Degenerate("constraint complement incomplete".into()));
    }
    Ok(DMatrix::from_columns(&span[fixed..]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelCheck {
    pub name: String,
    pub ell: usize,
    pub hessian: f64,
    pub seminorm_sq: f64,
}

impl KernelCheck {
    pub fn relative(&self) -> f64 {
        self.hessian.abs() / self.seminorm_sq
    }
}

/// Sector Hessians of the kernel generators. The ℓ = 2 generator uses the
/// continuum Q_frac(z, z) and the ĥ_2 pairing, neither of which truncates.
pub fn kernel_flatness(p: &Params, kmax: usize) -> Result<Vec<KernelCheck>> {
    let mut out = Vec::new();
    for f in crate::fields::kernel_fields(p).iter().take(3) {
        let basis = SphereBasis::new(p.n, f.ell(), kmax)?;
        let c = sector_to_sphere_coeffs_with(p, &f.profile, &basis, 1e-10)?;
        out.push(KernelCheck {
            name: f.profile.name.clone(),
            ell: f.ell(),
            hessian: q_frac_sector(&c, p),
            seminorm_sq: seminorm_sq(&c, p),
        });
    }
    let z = affine_profile(p);
    out.push(KernelCheck {
        name: z.name.clone(),
        ell: 2,
        hessian: q_frac_affine_continuum(p)? - affine_correction(p, 2, &z)?,
        seminorm_sq: affine_seminorm_sq(p),
    });
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub deficit: f64,
    pub eps2_rho2: f64,
    pub quotient: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Fitted quotient ≈ intercept − kappa·ε.
    pub intercept: f64,
    pub kappa: f64,
    pub fit_rms: f64,
    pub gamma_s: f64,
    pub all_below_gap: bool,
}

/// δ(U + ερ)/(ε²[ρ]²) along the degree-two direction, with exact radial
/// quadrature of the L^q norm.
pub fn konig_sweep(p: &Params, eps_list: &[f64], fit_tol: f64) -> Result<Sweep> {
    if eps_list.len() < 2 {
        return Err(Error::InvalidParams("sweep needs at least two ε values".into()));
    }
    let basis = SphereBasis::new(p.n, 0, 8)?;
    let u = bubble_u(p);
    let rho = degree_two_test_field(p);
    let rho2 = seminorm_sq(&sector_to_sphere_coeffs_with(p, &rho, &basis, 1e-12)?, p);
    let rows = eps_list
        .iter()
        .map(|&eps| {
            let d = deficit_radial(&u.plus(eps, &rho), p, &basis)?;
            let e2 = eps * eps * rho2;
            Ok(SweepRow { eps, deficit: d, eps2_rho2: e2, quotient: d / e2 })
        })
        .collect::<Result<Vec<_>>>()?;
    let (intercept, slope, fit_rms) = linear_fit(
        &rows.iter().map(|r| r.eps).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.quotient).collect::<Vec<_>>(),
    );
    if fit_rms > fit_tol {
        return Err(Error::FitQuality { residual: fit_rms, tol: fit_tol });
    }
    let all_below_gap = rows.iter().all(|r| r.quotient < p.gamma_s);
    Ok(Sweep { rows, intercept, kappa: -slope, fit_rms, gamma_s: p.gamma_s, all_below_gap })
}

/// Least-squares line y ≈ a + b x; returns (a, b, rms residual).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rms = (x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum::<f64>() / m).sqrt();
    (a, b, rms)
}

/// Profile of the lifted mode Ψ_k of sector ℓ, used to build test directions.
pub fn mode_profile(p: &Params, basis: &Arc<SphereBasis>, k: usize) -> RadialProfile {
    let mut coeffs = vec![0.0; basis.modes()];
    coeffs[k - basis.ell] = 1.0;
    crate::fields::profile_from_coeffs(p, basis.clone(), coeffs, &format!("psi_{k}_{}", basis.ell))
}

/// The sector field of mode (k, ℓ) with the cosine sectoral harmonic.
pub fn mode_field(p: &Params, basis: &Arc<SphereBasis>, k: usize) -> SectorField {
    SectorField::new(mode_profile(p, basis, k), Harmonic::new(basis.ell))
}

/// ψ_k/[ψ_k] for the pure degree-k mode of sector ℓ.
pub fn unit_mode_field(p: &Params, ell: usize, k: usize) -> Result<SectorField> {
    if k < ell {
        return Err(Error::InvalidParams(format!("mode degree k = {k} below ℓ = {ell}")));
    }
    let basis = Arc::new(SphereBasis::new(p.n, ell, k.max(ell))?);
    let f = mode_field(p, &basis, k);
    let scale = lambda_k(p, k).sqrt();
    Ok(SectorField::new(f.profile.scaled(1.0 / scale), f.harmonic))
}

/// f/[f] for a radial profile.
pub fn unit_radial_field(p: &Params, profile: RadialProfile) -> Result<SectorField> {
    let basis = SphereBasis::new(p.n, 0, 8)?;
    let norm = seminorm_sq(&sector_to_sphere_coeffs_with(p, &profile, &basis, 1e-12)?, p).sqrt();
    Ok(SectorField::radial(profile.scaled(1.0 / norm)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::kernel_fields;
    use crate::params::gamma_gap;
    use crate::special::bessel_k;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p(n: usize, s: f64) -> Params {
        Params::new(n, s).unwrap()
    }

    #[test]
    fn single_mode_energies() {
        let q = p(2, 0.5);
        let c = SphereCoeffs::mode(0, 6, 2);
        assert_relative_eq!(seminorm_sq(&c, &q), 2.5, epsilon = 1e-13);
        assert_relative_eq!(q_frac_sector(&c, &q), 1.0, epsilon = 1e-13);
        assert_relative_eq!(q_frac_sector(&c, &q) / seminorm_sq(&c, &q), gamma_gap(&q), epsilon = 1e-13);
        assert_eq!(q_frac_sector(&SphereCoeffs::mode(0, 6, 1), &q), 0.0);
        assert_eq!(q_frac_sector(&SphereCoeffs::mode(0, 6, 0), &q), 0.0);
        let zero = SphereCoeffs { ell: 0, coeffs: vec![0.0; 4], norm_sq: 0.0 };
        assert_eq!(seminorm_sq(&zero, &q), 0.0);
    }

    #[test]
    fn bubble_seminorm_from_lift() {
        for (n, s) in [(2, 0.5), (3, 0.25), (5, 0.9)] {
            let q = p(n, s);
            let basis = SphereBasis::new(n, 0, 4).unwrap();
            let c = sector_to_sphere_coeffs_with(&q, &bubble_u(&q), &basis, 1e-12).unwrap();
            assert_relative_eq!(seminorm_sq(&c, &q), bubble_seminorm_sq(&q), max_relative = 1e-12);
        }
    }

    /// Fourier oracle: Û ∝ ρ^{−s}K_s(ρ) and ẑ = −ρÛ′ ∝ ρ^{1−s}K_{s+1}(ρ), so
    /// [z]²/[U]² = ∫ρ^{n+1}K_{s+1}² / ∫ρ^{n−1}K_s².
    #[test]
    fn affine_seminorm_against_bessel_oracle() {
        for (n, s) in [(2, 0.5), (3, 0.25), (3, 0.75), (4, 0.5)] {
            let q = p(n, s);
            let o = HalflineOpts { tol: 1e-10, ..HalflineOpts::default() };
            let num = integrate_halfline(|r| r.powi(n as i32 + 1) * bessel_k(s + 1.0, r).powi(2), &o).unwrap();
            let den = integrate_halfline(|r| r.powi(n as i32 - 1) * bessel_k(s, r).powi(2), &o).unwrap();
            let ratio = affine_seminorm_sq(&q) / bubble_seminorm_sq(&q);
            assert_relative_eq!(ratio, num / den, max_relative = 1e-8);
        }
    }

    #[test]
    fn affine_continuum_closed_form() {
        // Q_frac(z,z) = 2s(a+s)[U]²
        for (n, s) in [(2, 0.5), (3, 0.25), (6, 0.8)] {
            let q = p(n, s);
            let want = 2.0 * s * (q.a + s) * bubble_seminorm_sq(&q);
            assert_relative_eq!(q_frac_affine_continuum(&q).unwrap(), want, max_relative = 1e-11);
        }
    }

    #[test]
    fn pairing_kernel_at_zero_is_bubble_power() {
        let q = p(3, 0.3);
        let u = bubble_u(&q);
        for &r in &[0.0, 0.3, 1.0, 2.0, 50.0, 1e4] {
            assert_relative_eq!(pairing_kernel(&q, 0, r), u.eval(r).powf(q.q - 1.0), max_relative = 1e-11);
        }
    }

    #[test]
    fn pairing_normalization() {
        let q = p(2, 0.5);
        let t0 = PairingTable::new(&q, 0, 2).unwrap();
        assert_relative_eq!(t0.pair(&bubble_u(&q)), bubble_seminorm_sq(&q), max_relative = 1e-12);
        // ⟨G_2, z⟩ = (a+s)[U]² in magnitude
        for (n, s) in [(2, 0.5), (3, 0.5), (3, 0.25), (4, 0.75)] {
            let q = p(n, s);
            let t2 = PairingTable::new(&q, 2, 2).unwrap();
            let v = t2.pair(&affine_profile(&q));
            assert_relative_eq!(v.abs(), (q.a + s) * bubble_seminorm_sq(&q), max_relative = 1e-9);
        }
    }

    #[test]
    fn pairing_rule_converged() {
        let q = p(3, 0.25);
        let a = PairingTable::new(&q, 4, 2).unwrap().pair(&affine_profile(&q));
        let b = PairingTable::new(&q, 4, 4).unwrap().pair(&affine_profile(&q));
        assert!((a - b).abs() < 1e-11 * a.abs().max(1.0));
    }

    #[test]
    fn degree_two_form_cases() {
        let q = p(2, 0.5);
        let basis = SphereBasis::new(2, 2, 40).unwrap();
        let z = SectorField::new(affine_profile(&q), Harmonic::new(2));
        let zm = AffineMode::new(&q, &basis).unwrap();
        let none = SphereCoeffs { ell: 2, coeffs: vec![0.0; basis.modes()], norm_sq: 0.0 };
        let f = q_aff_degree2_split(&none, 1.0, &zm, &q).unwrap();
        assert!(f.q_aff.abs() < 1e-10 * f.q_frac.abs());
        // a direction with Q_frac(f, z) = 0 keeps its full Q_frac
        let mut c = SphereCoeffs::mode(2, 40, 2);
        let t = q_frac_bilinear(&c, &zm.coeffs, &q) / q_frac_bilinear(&SphereCoeffs::mode(2, 40, 3), &zm.coeffs, &q);
        c.coeffs[1] = -t;
        let f = q_aff_degree2_split(&c, 0.0, &zm, &q).unwrap();
        assert!(f.correction.abs() < 1e-12 * f.q_frac);
        let _ = z;
        assert!(q_aff_degree2(&SectorField::radial(bubble_u(&q)), &q, &basis).is_err());
    }

    #[test]
    fn degree_two_correction_matches_pairing_route() {
        // smooth test field: Q_frac(f,z)²/Q_frac(z,z) against (n+2s)/s ρ_2² ⟨G_2,f⟩²/[U]²
        for (n, s) in [(2, 0.5), (3, 0.5), (3, 0.25)] {
            let q = p(n, s);
            let basis = Arc::new(SphereBasis::new(n, 2, 40).unwrap());
            let f = mode_field(&q, &basis, 2);
            let g = mode_field(&q, &basis, 4);
            let mix = SectorField::new(f.profile.plus(0.7, &g.profile), Harmonic::new(2));
            let form = q_aff_degree2(&mix, &q, &basis).unwrap();
            let other = affine_correction(&q, 2, &mix.profile).unwrap();
            assert_relative_eq!(form.correction, other, max_relative = 1e-6);
        }
    }

    #[test]
    fn lq_norm_bubble_two_half() {
        // ∫ r(1+r²)^{−2} dr = 1/2, so ‖U‖_4^4 = 2π·1/2 = π
        let q = p(2, 0.5);
        let u = SectorField::radial(bubble_u(&q));
        assert_relative_eq!(lq_norm(&u, &q).unwrap(), std::f64::consts::PI.powf(0.25), max_relative = 1e-12);
        let scaled = SectorField::radial(bubble_u(&q).scaled(-3.0));
        assert_relative_eq!(lq_norm(&scaled, &q).unwrap(), 3.0 * lq_norm(&u, &q).unwrap(), max_relative = 1e-12);
        let zero = SectorField::radial(RadialProfile::new("0", 5.0, |_| 0.0));
        assert_eq!(lq_norm(&zero, &q).unwrap(), 0.0);
        let slow = SectorField::radial(RadialProfile::new("slow", 0.2, |r: f64| (1.0 + r).powf(-0.2)));
        assert!(matches!(lq_norm(&slow, &q), Err(Error::Divergent(_))));
    }

    #[test]
    fn deficit_vanishes_on_bubble_and_kernel() {
        for (n, s) in [(2, 0.5), (3, 0.5)] {
            let q = p(n, s);
            let basis = SphereBasis::new(n, 0, 12).unwrap();
            let u = bubble_u(&q);
            assert!(deficit_radial(&u, &q, &basis).unwrap().abs() < 1e-10);
            assert!(deficit_radial(&u.scaled(2.5), &q, &basis).unwrap().abs() < 1e-10);
            assert!(sharp_constant(&q).unwrap() > 0.0);
            // the kernel direction Z_0 is o(ε²)
            let z0 = kernel_fields(&q)[1].profile.clone();
            let ratios: Vec<f64> = [0.02, 0.01]
                .iter()
                .map(|&e| deficit_radial(&u.plus(e, &z0), &q, &basis).unwrap() / (e * e))
                .collect();
            assert!(ratios[1].abs() < 0.6 * ratios[0].abs() + 1e-9, "{ratios:?}");
        }
    }

    #[test]
    fn degree_two_deficit_leading_order() {
        let q = p(2, 0.5);
        let basis = SphereBasis::new(2, 0, 8).unwrap();
        let rho = degree_two_test_field(&q);
        let rho2 = seminorm_sq(&sector_to_sphere_coeffs_with(&q, &rho, &basis, 1e-12).unwrap(), &q);
        let e = 1e-3;
        let d = deficit_radial(&bubble_u(&q).plus(e, &rho), &q, &basis).unwrap();
        assert_relative_eq!(d / (e * e * rho2), q.gamma_s, max_relative = 2e-3);
    }

    #[test]
    fn second_variation_is_quadratic() {
        // (δ(U+tφ)+δ(U−tφ))/(2t²) → Q_frac(φ) with O(t²) error, φ radial
        let q = p(3, 0.5);
        let basis = Arc::new(SphereBasis::new(3, 0, 10).unwrap());
        let phi = degree_two_test_field(&q).plus(0.6, &mode_profile(&q, &basis, 3));
        let c = sector_to_sphere_coeffs_with(&q, &phi, &basis, 1e-10).unwrap();
        let target = q_frac_sector(&c, &q);
        let u = bubble_u(&q);
        let err = |t: f64| {
            let dp = deficit_radial(&u.plus(t, &phi), &q, &basis).unwrap();
            let dm = deficit_radial(&u.plus(-t, &phi), &q, &basis).unwrap();
            ((dp + dm) / (2.0 * t * t) - target).abs()
        };
        let (e1, e2) = (err(0.04), err(0.02));
        assert!(e1 < 0.05 * target);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.3, "order {order}");
    }

    #[test]
    fn gap_sectors() {
        for (n, s) in [(2, 0.5), (3, 0.5), (3, 0.25)] {
            let q = p(n, s);
            let g0 = rayleigh_gap(&q, 0, 40).unwrap();
            assert_relative_eq!(g0.minimum, q.gamma_s, epsilon = 1e-8);
            assert_eq!(g0.dominant_k, 2);
            let g2 = rayleigh_gap(&q, 2, 40).unwrap();
            assert!(g2.minimum >= q.gamma_s - 1e-8, "{g2:?}");
            let g3 = rayleigh_gap(&q, 3, 40).unwrap();
            assert_relative_eq!(g3.minimum, 1.0 - lambda_k(&q, 1) / lambda_k(&q, 3), epsilon = 1e-8);
            assert!(g3.minimum > q.gamma_s);
            let eta4 = crate::params::eta4_margin(&q).0;
            for ell in [4, 6] {
                assert!(rayleigh_gap(&q, ell, 40).unwrap().minimum >= eta4 - 1e-8);
            }
        }
    }

    #[test]
    fn gap_insensitive_to_truncation() {
        let q = p(2, 0.5);
        for ell in [0, 1, 3, 5] {
            let a = rayleigh_gap(&q, ell, 40).unwrap().minimum;
            let b = rayleigh_gap(&q, ell, 60).unwrap().minimum;
            assert!((a - b).abs() < 1e-8, "{ell}: {a} {b}");
        }
        // the pairing vector decays slowly in k, so even sectors drift down
        let a = rayleigh_gap(&q, 4, 40).unwrap().minimum;
        let b = rayleigh_gap(&q, 4, 60).unwrap().minimum;
        assert!(b <= a && a - b < 1e-4, "{a} {b}");
        let a = rayleigh_gap(&q, 2, 40).unwrap().minimum;
        let b = rayleigh_gap(&q, 2, 60).unwrap().minimum;
        assert!(b <= a + 1e-12 && b >= q.gamma_s, "{a} {b}");
    }

    #[test]
    fn kernel_generators_are_flat() {
        for (n, s) in [(2, 0.5), (3, 0.5), (3, 0.25), (5, 0.6)] {
            for k in kernel_flatness(&p(n, s), 40).unwrap() {
                assert!(k.relative() <= 1e-8, "{k:?}");
            }
        }
    }

    #[test]
    fn sweep_below_gap() {
        let q = p(2, 0.5);
        let eps: Vec<f64> = (1..=10).map(|i| 0.01 * i as f64).collect();
        let sw = konig_sweep(&q, &eps, 1e-3).unwrap();
        assert!(sw.all_below_gap);
        assert!(sw.kappa > 0.0);
        assert!((sw.intercept - q.gamma_s).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn degree_two_quotient_above_gap(w in proptest::collection::vec(-1.0f64..1.0, 6)) {
            // random combinations of ℓ = 2 modes, projected off z in Ḣ^s
            let q = p(2, 0.5);
            let basis = Arc::new(SphereBasis::new(2, 2, 30).unwrap());
            let cz = sector_to_sphere_coeffs_with(&q, &affine_profile(&q), &basis, 1.0).unwrap();
            let mut c = SphereCoeffs { ell: 2, coeffs: vec![0.0; basis.modes()], norm_sq: 0.0 };
            for (j, wj) in w.iter().enumerate() {
                c.coeffs[j] = *wj;
            }
            let t = inner_hs(&c, &cz, &q) / seminorm_sq(&cz, &q);
            for j in 0..c.coeffs.len() {
                c.coeffs[j] -= t * cz.coeffs[j];
            }
            let prof = crate::fields::profile_from_coeffs(&q, basis.clone(), c.coeffs.clone(), "mix");
            let corr = affine_correction(&q, 2, &prof).unwrap();
            let quotient = (q_frac_sector(&c, &q) - corr) / seminorm_sq(&c, &q);
            prop_assert!(quotient >= q.gamma_s - 1e-8, "{}", quotient);
        }
    }
}
