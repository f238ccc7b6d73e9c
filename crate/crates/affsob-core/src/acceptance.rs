//! The acceptance suite: twelve checks with their tolerances and runtime
//! budgets. Each check reports a headline measurement; failures of the
//! underlying computation are recorded as failed checks.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affine_geom::normalize_energy;
use crate::energy_grid::{
    anchored_combination, anchored_perturbation, calibrate, e_aff, phi_mean, variance_correction, AnchoredField,
    Calibration, DirectionalEnergy, GridConfig,
};
use crate::energy_spectral::{
    kernel_flatness, konig_sweep, q_frac_affine_continuum, rayleigh_gap, seminorm_sq, unit_mode_field,
    unit_radial_field, AffineMode, DEFAULT_KMAX,
};
use crate::error::Result;
use crate::fields::{
    bubble_u, degree_two_test_field, kernel_fields, realize_on_grid, sample_on_grid, sector_to_sphere_coeffs_with,
    SectorField, SphereBasis,
};
use crate::modulation::{d_aff_local, two_sided_check, ModulationOpts};
use crate::params::{beta_funk_hecke_numeric, eta4_margin, lambda_k, rho_closed_form, Params};
use crate::quadrature::sphere_grid;

pub const CRITERIA: usize = 12;

const S_GRID: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptanceConfig {
    /// Skip the grid-backend checks (7, 8, 10, 11, 12).
    pub quick: bool,
    pub seed: u64,
    pub kmax: usize,
    pub grid2: GridConfig,
    pub grid3: GridConfig,
    pub modulation: ModulationOpts,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        Self {
            quick: false,
            seed: 7,
            kmax: DEFAULT_KMAX,
            grid2: GridConfig::default_for(2).expect("n = 2 has a default grid"),
            grid3: GridConfig::default_for(3).expect("n = 3 has a default grid"),
            modulation: ModulationOpts::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub skipped: bool,
    /// Headline measurement and the tolerance it is held to.
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let status = if self.skipped {
            "SKIP"
        } else if self.pass {
            "PASS"
        } else {
            "FAIL"
        };
        format!(
            "{status} [{:>2}] {}: measured {:.6e} (tol {:.3e}), {:.1}s of {:.0}s; {}",
            self.id, self.name, self.measured, self.tolerance, self.seconds, self.budget_seconds, self.detail
        )
    }
}

struct Outcome {
    pass: bool,
    measured: f64,
    tolerance: f64,
    detail: String,
}

pub fn criterion_name(id: usize) -> &'static str {
    match id {
        1 => "gap identity",
        2 => "Funk-Hecke closed form",
        3 => "even-sector margin",
        4 => "kernel flatness",
        5 => "sharp gap by minimization",
        6 => "degree-two sweep",
        7 => "grid/spectral cross-validation",
        8 => "affine-correction oracle",
        9 => "power-mean properties",
        10 => "normalization lemma",
        11 => "two-sided stability sampling",
        12 => "modulation first-order law",
        _ => "unknown",
    }
}

fn budget(id: usize) -> f64 {
    match id {
        1 | 3 => 1.0,
        2 | 9 => 5.0,
        4 => 10.0,
        5 => 30.0,
        6 => 60.0,
        7 => 720.0,
        8 => 120.0,
        10 => 180.0,
        11 => 600.0,
        12 => 300.0,
        _ => 0.0,
    }
}

pub fn grid_dependent(id: usize) -> bool {
    matches!(id, 7 | 8 | 10 | 11 | 12)
}

pub fn run_criterion(id: usize, cfg: &AcceptanceConfig) -> CriterionResult {
    let name = criterion_name(id).to_string();
    let budget_seconds = budget(id);
    if cfg.quick && grid_dependent(id) {
        return CriterionResult {
            id,
            name,
            pass: true,
            skipped: true,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: "grid backend skipped".into(),
            seconds: 0.0,
            budget_seconds,
        };
    }
    let start = Instant::now();
    let out = match id {
        1 => gap_identity(),
        2 => funk_hecke(),
        3 => even_margin(),
        4 => flatness(cfg),
        5 => sharp_gap(cfg),
        6 => sweep(),
        7 => cross_validation(cfg),
        8 => affine_oracle(cfg),
        9 => power_mean(cfg),
        10 => normalization(cfg),
        11 => two_sided(cfg),
        12 => first_order(cfg),
        _ => Err(crate::Error::InvalidParams(format!("no criterion {id}"))),
    };
    let seconds = start.elapsed().as_secs_f64();
    match out {
        Ok(o) => {
            let in_time = seconds <= budget_seconds;
            let detail = if in_time { o.detail } else { format!("{}; over runtime budget", o.detail) };
            CriterionResult {
                id,
                name,
                pass: o.pass && in_time,
                skipped: false,
                measured: o.measured,
                tolerance: o.tolerance,
                detail,
                seconds,
                budget_seconds,
            }
        }
        Err(e) => CriterionResult {
            id,
            name,
            pass: false,
            skipped: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: format!("error: {e}"),
            seconds,
            budget_seconds,
        },
    }
}

pub fn run_all(cfg: &AcceptanceConfig) -> Vec<CriterionResult> {
    (1..=CRITERIA).map(|id| run_criterion(id, cfg)).collect()
}

fn param_grid(ns: std::ops::RangeInclusive<usize>) -> Vec<Params> {
    ns.flat_map(|n| S_GRID.iter().filter_map(move |&s| Params::new(n, s).ok()))
        .collect()
}

fn study_points() -> Vec<Params> {
    [(2, 0.5), (3, 0.5), (3, 0.25)]
        .iter()
        .map(|&(n, s)| Params::new(n, s).expect("valid study point"))
        .collect()
}

fn gap_identity() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for p in param_grid(2..=6) {
        let lhs = 1.0 - lambda_k(&p, 1) / lambda_k(&p, 2);
        let rhs = 2.0 * p.s / (p.nf() / 2.0 + p.s + 1.0);
        worst = worst.max((lhs - rhs).abs());
    }
    let g2 = Params::new(2, 0.5)?.gamma_s;
    let g3 = Params::new(3, 0.5)?.gamma_s;
    let exact = (g2 - 0.4).abs() <= f64::EPSILON && (g3 - 1.0 / 3.0).abs() <= f64::EPSILON;
    Ok(Outcome {
        pass: worst <= 1e-12 && exact,
        measured: worst,
        tolerance: 1e-12,
        detail: format!("γ(2,1/2) = {g2}, γ(3,1/2) = {g3}"),
    })
}

fn funk_hecke() -> Result<Outcome> {
    let mut closed: f64 = 0.0;
    let mut odd: f64 = 0.0;
    let mut ratio: f64 = 0.0;
    let mut quad_ratio: f64 = 0.0;
    for p in param_grid(2..=6) {
        let b0 = beta_funk_hecke_numeric(&p, 0)?;
        let mut prev = b0;
        for ell in 1..=12 {
            let b = beta_funk_hecke_numeric(&p, ell)?;
            if ell % 2 == 1 {
                odd = odd.max(b.abs());
                continue;
            }
            closed = closed.max((b / b0 - rho_closed_form(&p, ell)).abs());
            let m = (ell / 2 - 1) as f64;
            // ρ_{2m+2}/ρ_{2m} = −(m−s)/(m+n/2+s)
            let law = -(m - p.s) / (m + p.nf() / 2.0 + p.s);
            ratio = ratio.max((rho_closed_form(&p, ell) / rho_closed_form(&p, ell - 2) - law).abs());
            quad_ratio = quad_ratio.max((b / prev - law).abs());
            prev = b;
        }
    }
    Ok(Outcome {
        pass: closed <= 1e-10 && odd <= 1e-12 && ratio <= 1e-12,
        measured: closed,
        tolerance: 1e-10,
        detail: format!("odd max |β| {odd:.2e} (tol 1e-12), ratio law {ratio:.2e} (tol 1e-12), on quadrature β {quad_ratio:.2e}"),
    })
}

fn even_margin() -> Result<Outcome> {
    let mut min_margin = f64::INFINITY;
    for p in param_grid(2..=10) {
        min_margin = min_margin.min(eta4_margin(&p).1);
    }
    // At (3, 1/2), Λ_k = k+1: η_4 − γ = 1 − 2/5 − 1/72 − 1/3 = 91/360.
    let oracle = 91.0 / 360.0;
    let got = eta4_margin(&Params::new(3, 0.5)?).1;
    let err = (got - oracle).abs();
    Ok(Outcome {
        pass: min_margin > 0.0 && err <= 1e-10,
        measured: err,
        tolerance: 1e-10,
        detail: format!("margin(3,1/2) = {got:.12}, min margin over grid {min_margin:.4e}"),
    })
}

fn flatness(cfg: &AcceptanceConfig) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut names = Vec::new();
    for p in study_points() {
        for c in kernel_flatness(&p, cfg.kmax)? {
            worst = worst.max(c.relative());
            names.push(format!("{}:{:.1e}", c.ell, c.relative()));
        }
    }
    Ok(Outcome {
        pass: worst <= 1e-8,
        measured: worst,
        tolerance: 1e-8,
        detail: format!("per generator (ℓ:rel) {}", names.join(" ")),
    })
}

fn sharp_gap(cfg: &AcceptanceConfig) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut ell3: f64 = 0.0;
    let mut hits_target = true;
    let mut detail = Vec::new();
    for p in study_points() {
        let minima = (0..=6)
            .map(|ell| rayleigh_gap(&p, ell, cfg.kmax).map(|g| g.minimum))
            .collect::<Result<Vec<_>>>()?;
        let best = minima.iter().cloned().fold(f64::INFINITY, f64::min);
        worst = worst.max((best - p.gamma_s).abs());
        let argmin: Vec<usize> = (0..=6).filter(|&l| minima[l] <= p.gamma_s + 1e-6).collect();
        hits_target &= argmin.iter().any(|l| *l == 0 || *l == 2);
        ell3 = ell3.max((minima[3] - (1.0 - lambda_k(&p, 1) / lambda_k(&p, 3))).abs());
        detail.push(format!("({},{}) argmin ℓ {:?}", p.n, p.s, argmin));
    }
    Ok(Outcome {
        pass: worst <= 1e-6 && hits_target && ell3 <= 1e-8,
        measured: worst,
        tolerance: 1e-6,
        detail: format!("{}; ℓ=3 err {ell3:.2e} (tol 1e-8)", detail.join(", ")),
    })
}

fn sweep() -> Result<Outcome> {
    let eps: Vec<f64> = (0..10).map(|i| 0.01 + 0.01 * i as f64).collect();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut detail = Vec::new();
    for p in study_points() {
        let sw = konig_sweep(&p, &eps, 1e-2)?;
        let err = (sw.intercept - p.gamma_s).abs();
        worst = worst.max(err);
        ok &= sw.all_below_gap && sw.kappa > 0.0;
        detail.push(format!("({},{}) κ̂ {:.4}", p.n, p.s, sw.kappa));
    }
    Ok(Outcome {
        pass: ok && worst <= 1e-3,
        measured: worst,
        tolerance: 1e-3,
        detail: detail.join(", "),
    })
}

fn config_for(cfg: &AcceptanceConfig, n: usize) -> GridConfig {
    if n == 2 {
        cfg.grid2
    } else {
        cfg.grid3
    }
}

fn rho_seminorm_sq(p: &Params) -> Result<f64> {
    let basis = SphereBasis::new(p.n, 0, 8)?;
    Ok(seminorm_sq(&sector_to_sphere_coeffs_with(p, &degree_two_test_field(p), &basis, 1e-12)?, p))
}

/// (|e_aff(U)/[U]² − 1|, |e_aff(U+0.1ρ)/[U+0.1ρ]² − 1|, spread of A_ξ(U)).
fn grid_errors(p: &Params, gc: &GridConfig) -> Result<[f64; 3]> {
    let cal = calibrate(p, gc)?;
    let u2 = cal.u_seminorm_sq;
    let eu = e_aff(&cal.u_grid, &cal)?.phi_route;
    let field = SectorField::radial(bubble_u(p).plus(0.1, &degree_two_test_field(p)));
    let g = realize_on_grid(&field, p, gc.half_width, gc.points)?;
    let want = u2 + 0.01 * rho_seminorm_sq(p)?;
    let ef = e_aff(&g, &cal)?.phi_route;
    Ok([(eu / u2 - 1.0).abs(), (ef / want - 1.0).abs(), cal.spread])
}

fn cross_validation(cfg: &AcceptanceConfig) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut refines = true;
    let mut detail = Vec::new();
    for n in [2, 3] {
        let p = Params::new(n, 0.5)?;
        let gc = config_for(cfg, n);
        let fine = grid_errors(&p, &gc)?;
        let coarse = grid_errors(&p, &gc.coarse())?;
        worst = worst.max(fine.iter().cloned().fold(0.0, f64::max));
        let spread_down = fine[2] < coarse[2];
        let field_down = fine[1] < coarse[1];
        refines &= spread_down && field_down && fine[0] < coarse[0];
        detail.push(format!(
            "n={n}: U {:.2e}, U+0.1ρ {:.2e}, spread {:.2e}; coarse {:.2e}/{:.2e}/{:.2e}",
            fine[0], fine[1], fine[2], coarse[0], coarse[1], coarse[2]
        ));
    }
    Ok(Outcome {
        pass: worst < 1e-2 && refines,
        measured: worst,
        tolerance: 1e-2,
        detail: detail.join("; "),
    })
}

fn affine_oracle(cfg: &AcceptanceConfig) -> Result<Outcome> {
    let p = Params::new(2, 0.5)?;
    let cal = calibrate(&p, &cfg.grid2)?;
    let z = kernel_fields(&p).remove(3);
    let g = realize_on_grid(&z, &p, cal.config.half_width, cal.config.points)?;
    let v = variance_correction(&g, &cal)?;
    let want = q_frac_affine_continuum(&p)?;
    let err = (v.r_s / want - 1.0).abs();
    Ok(Outcome {
        pass: err <= 2e-2,
        measured: err,
        tolerance: 2e-2,
        detail: format!("R_s {:.6} vs Q_frac(z,z) {want:.6}", v.r_s),
    })
}

fn power_mean(cfg: &AcceptanceConfig) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    let mut violations = 0usize;
    let mut count = 0usize;
    for (p, res) in [(Params::new(2, 0.5)?, 64), (Params::new(3, 0.5)?, 26), (Params::new(3, 0.25)?, 26)] {
        let sphere = sphere_grid(p.n, res)?;
        let m = sphere.weights.len();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            // log-uniform over four decades
            (0..m).map(|_| 10f64.powf(rng.random_range(-2.0..2.0))).collect()
        };
        for _ in 0..1000 {
            let a = draw(&mut rng);
            let b = draw(&mut rng);
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let (pa, pb, pab) = (phi_mean(&a, &sphere, &p)?, phi_mean(&b, &sphere, &p)?, phi_mean(&ab, &sphere, &p)?);
            let mean = crate::quadrature::sphere_average(&sphere, &a);
            let v1 = (pa - mean) / mean;
            let v2 = (pa + pb - pab) / pab;
            for v in [v1, v2] {
                worst = worst.max(v);
                if v > 1e-12 {
                    violations += 1;
                }
            }
            count += 1;
        }
    }
    Ok(Outcome {
        pass: violations == 0,
        measured: worst.max(0.0),
        tolerance: 1e-12,
        detail: format!("{count} functions, {violations} violations"),
    })
}

fn stretched_bubble(cal: &Calibration, t: f64) -> Result<crate::fields::GridField> {
    let u = bubble_u(&cal.p);
    sample_on_grid(2, cal.config.half_width, cal.config.points, "stretched U", |x| {
        u.eval(((t * x[0]).powi(2) + (x[1] / t).powi(2)).sqrt())
    })
}

fn normalization(cfg: &AcceptanceConfig) -> Result<Outcome> {
    let p = Params::new(2, 0.5)?;
    let cal = calibrate(&p, &cfg.grid2)?;
    let mut rows = Vec::new();
    for t in [1.0, 1.5, 2.0, 3.0] {
        let u = stretched_bubble(&cal, t)?;
        let norm = normalize_energy(&DirectionalEnergy::raw(&u, &cal)?, &cal)?;
        rows.push((t, norm.bound_ratio, norm.e_aff));
    }
    let (_, r1, e1) = rows[0];
    let mut worst_e: f64 = 0.0;
    let mut ratio_ok = true;
    for &(_, r, e) in &rows[1..] {
        worst_e = worst_e.max((e / e1 - 1.0).abs());
        ratio_ok &= r / r1 <= 1.5 && r1 / r <= 1.5;
    }
    let detail = rows
        .iter()
        .map(|(t, r, e)| format!("t={t}: ratio {r:.4}, e_aff {e:.5}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome { pass: ratio_ok && worst_e <= 2e-2, measured: worst_e, tolerance: 2e-2, detail })
}

/// Unit ℓ = 2 field in span{ψ_2, ψ_3} orthogonal to z. Unlike ψ − tz it
/// decays faster than U, so the grid sees no slow tail.
fn z_orthogonal_degree_two(p: &Params, kmax: usize) -> Result<SectorField> {
    let basis = SphereBasis::new(p.n, 2, kmax)?;
    let z = AffineMode::new(p, &basis)?;
    // [ψ_k]² = Λ_k, so ⟨ψ_k/√Λ_k, z⟩ = √Λ_k z_k
    let pz = |k: usize| lambda_k(p, k).sqrt() * z.coeffs.get(k);
    let (c2, c3) = (pz(3), -pz(2));
    let norm = (c2 * c2 + c3 * c3).sqrt();
    let (m2, m3) = (unit_mode_field(p, 2, 2)?, unit_mode_field(p, 2, 3)?);
    Ok(SectorField::new(m2.profile.scaled(c2 / norm).plus(c3 / norm, &m3.profile), m2.harmonic))
}

struct Sample {
    label: String,
    degree_two: bool,
    field: AnchoredField,
}

fn stability_family(cal: &Calibration, kmax: usize) -> Result<Vec<Sample>> {
    let p = &cal.p;
    let rho = unit_radial_field(p, degree_two_test_field(p))?;
    let r3 = unit_mode_field(p, 0, 3)?;
    let l1 = unit_mode_field(p, 1, 2)?;
    let l3 = unit_mode_field(p, 3, 3)?;
    let l2 = z_orthogonal_degree_two(p, kmax)?;
    let l4 = unit_mode_field(p, 4, 4)?;
    let mut out = Vec::new();
    let mut single = |label: &str, f: &SectorField, eps: &[f64], degree_two: bool| -> Result<()> {
        for &e in eps {
            out.push(Sample {
                label: format!("{label} ε={e}"),
                degree_two,
                field: anchored_perturbation(f, e, cal)?,
            });
        }
        Ok(())
    };
    single("ρ", &rho, &[0.02, 0.05, 0.08, 0.1], true)?;
    single("ℓ0k3", &r3, &[0.02, 0.05, 0.1], false)?;
    single("ℓ1k2", &l1, &[0.02, 0.05, 0.1], false)?;
    single("ℓ2⊥z", &l2, &[0.02, 0.05, 0.1], false)?;
    single("ℓ3k3", &l3, &[0.02, 0.05, 0.1], false)?;
    single("ℓ4k4", &l4, &[0.05, 0.1], false)?;
    out.push(Sample {
        label: "ρ+ℓ1k2 ε=0.05".into(),
        degree_two: false,
        field: anchored_combination(&[(rho.clone(), 0.05), (l1.clone(), 0.05)], cal)?,
    });
    out.push(Sample {
        label: "ℓ0k3+ℓ3k3 ε=0.05".into(),
        degree_two: false,
        field: anchored_combination(&[(r3, 0.05), (l3, 0.05)], cal)?,
    });
    Ok(out)
}

fn two_sided(cfg: &AcceptanceConfig) -> Result<Outcome> {
    let p = Params::new(2, 0.5)?;
    let cal = calibrate(&p, &cfg.grid2)?;
    let family = stability_family(&cal, cfg.kmax)?;
    let mut worst_upper = f64::NEG_INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut all_ok = true;
    let mut rows = Vec::new();
    for s in &family {
        let r = two_sided_check(&s.field, &cal, &cfg.modulation, 0.02, 0.05)?;
        worst_upper = worst_upper.max(r.ratio);
        min_ratio = min_ratio.min(r.ratio);
        let below_gap = !s.degree_two || r.ratio < p.gamma_s;
        all_ok &= r.upper_ok && r.lower_ok && below_gap;
        rows.push(format!("{} {:.4}", s.label, r.ratio));
    }
    Ok(Outcome {
        pass: all_ok,
        measured: worst_upper,
        tolerance: 1.02,
        detail: format!("{} fields, min ratio {min_ratio:.4}; {}", family.len(), rows.join(", ")),
    })
}

fn first_order(cfg: &AcceptanceConfig) -> Result<Outcome> {
    let p = Params::new(2, 0.5)?;
    let cal = calibrate(&p, &cfg.grid2)?;
    let rho = unit_radial_field(&p, degree_two_test_field(&p))?;
    let ts = [0.005, 0.01, 0.02];
    let mut worst: f64 = 0.0;
    let mut logs = Vec::new();
    let mut detail = Vec::new();
    for &t in &ts {
        let u = anchored_perturbation(&rho, t, &cal)?;
        let res = d_aff_local(&u, &cal, &cfg.modulation)?;
        let ratio = res.d / t;
        worst = worst.max((ratio - 1.0).abs());
        let a = res.point.norm();
        let geo = (a * a - res.point.c * res.point.c).max(0.0).sqrt();
        logs.push((t.ln(), a.max(f64::MIN_POSITIVE).ln()));
        detail.push(format!("t={t}: D/t {ratio:.5}, |a*| {a:.2e} (c* {:.2e}, y/λ/B {geo:.2e})", res.point.c));
    }
    let (_, slope, _) = crate::energy_spectral::linear_fit(
        &logs.iter().map(|l| l.0).collect::<Vec<_>>(),
        &logs.iter().map(|l| l.1).collect::<Vec<_>>(),
    );
    let slope_ok = (slope - 2.0).abs() <= 0.3;
    Ok(Outcome {
        pass: worst <= 1e-2 && slope_ok,
        measured: worst,
        tolerance: 1e-2,
        detail: format!("{}; |a*| log-log slope {slope:.3} (want 2 ± 0.3)", detail.join(", ")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_mode_skips_grid_checks() {
        let cfg = AcceptanceConfig { quick: true, ..Default::default() };
        for id in [7, 8, 10, 11, 12] {
            assert!(run_criterion(id, &cfg).skipped);
        }
    }

    #[test]
    fn test_directions_are_unit_and_z_orthogonal() {
        let p = Params::new(2, 0.5).unwrap();
        for (ell, k) in [(0, 3), (1, 2), (3, 3), (4, 4)] {
            let f = unit_mode_field(&p, ell, k).unwrap();
            let basis = SphereBasis::new(p.n, ell, 8).unwrap();
            let c = sector_to_sphere_coeffs_with(&p, &f.profile, &basis, 1e-12).unwrap();
            assert!((seminorm_sq(&c, &p) - 1.0).abs() < 1e-8, "ℓ={ell} k={k}");
        }
        let v = z_orthogonal_degree_two(&p, 20).unwrap();
        let basis = SphereBasis::new(2, 2, 20).unwrap();
        let c = sector_to_sphere_coeffs_with(&p, &v.profile, &basis, 1e-12).unwrap();
        let z = AffineMode::new(&p, &basis).unwrap();
        assert!((seminorm_sq(&c, &p) - 1.0).abs() < 1e-8);
        assert!(crate::energy_spectral::inner_hs(&c, &z.coeffs, &p).abs() < 1e-10);
    }

    #[test]
    fn closed_form_checks_pass() {
        let cfg = AcceptanceConfig::default();
        for id in [1, 3] {
            let r = run_criterion(id, &cfg);
            assert!(r.pass, "{}", r.line());
        }
    }
}
