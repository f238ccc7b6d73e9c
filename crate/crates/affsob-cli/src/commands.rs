//! Subcommand implementations. Each returns its report; `main` decides
//! where it goes and which exit code follows.

use std::fmt;
use std::io::Write;
use std::path::Path;

use affsob_core::acceptance::{run_all, AcceptanceConfig, CriterionResult};
use affsob_core::affine_geom::{normalize_energy, transformed_table, Normalization};
use affsob_core::energy_grid::{
    anchored_perturbation, body_from_table, calibrate, deficit_aff_anchored, e_aff_table, DirectionalEnergy,
    DirectionalEnergyTable, GridDeficit, StarBody,
};
use affsob_core::energy_spectral::{konig_sweep, unit_mode_field, unit_radial_field, Sweep};
use affsob_core::fields::{bubble_u, degree_two_test_field, sample_on_grid};
use affsob_core::modulation::{d_frac_local, two_sided_check, TwoSided};
use affsob_core::params::{beta_funk_hecke_numeric, eta4_margin, lambda_k, rho_closed_form};
use affsob_core::{AnchoredField, Calibration, ModulationOpts, ModulationResult};
use serde::Serialize;

use crate::config::{ConfigError, FieldSpec, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Core(affsob_core::Error),
    Output(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Core(e) => write!(f, "{e}"),
            Self::Output(e) => write!(f, "output: {e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<affsob_core::Error> for CliError {
    fn from(e: affsob_core::Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Output(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Output(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Writes to `--out` when given, stdout otherwise.
pub fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

pub fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct CoeffRow {
    pub quantity: &'static str,
    pub index: usize,
    pub value: f64,
    /// Closed-form counterpart where one exists.
    pub reference: Option<f64>,
}

/// Λ_k for k ≤ 8, γ_s, β_ℓ and β_ℓ/β_0 against the closed form for ℓ ≤ 12,
/// and (η_4, η_4 − γ_s).
pub fn coeffs(cfg: &RunConfig) -> CliResult<Vec<CoeffRow>> {
    let p = cfg.params()?;
    let mut rows = Vec::new();
    for k in 0..=8 {
        rows.push(CoeffRow { quantity: "lambda", index: k, value: lambda_k(&p, k), reference: None });
    }
    rows.push(CoeffRow { quantity: "gamma", index: 0, value: p.gamma_s, reference: None });
    let b0 = beta_funk_hecke_numeric(&p, 0)?;
    for ell in 0..=12 {
        let b = beta_funk_hecke_numeric(&p, ell)?;
        rows.push(CoeffRow { quantity: "beta", index: ell, value: b, reference: None });
        rows.push(CoeffRow { quantity: "rho", index: ell, value: b / b0, reference: Some(rho_closed_form(&p, ell)) });
    }
    let (eta4, margin) = eta4_margin(&p);
    rows.push(CoeffRow { quantity: "eta4", index: 4, value: eta4, reference: None });
    rows.push(CoeffRow { quantity: "eta4_margin", index: 4, value: margin, reference: None });
    Ok(rows)
}

pub fn coeffs_text(rows: &[CoeffRow]) -> String {
    let mut s = format!("{:<12} {:>5} {:>24} {:>24}\n", "quantity", "index", "value", "closed form");
    for r in rows {
        let reference = r.reference.map(|v| format!("{v:.16e}")).unwrap_or_default();
        s.push_str(&format!("{:<12} {:>5} {:>24.16e} {:>24}\n", r.quantity, r.index, r.value, reference));
    }
    s
}

pub fn coeffs_csv(rows: &[CoeffRow]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| CliError::Output(e.to_string()))?)
        .map_err(|e| CliError::Output(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyCheck {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub skipped: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub budget_seconds: f64,
    pub detail: String,
}

/// Runtimes are left out so that reports are reproducible byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub config: RunConfig,
    pub acceptance: AcceptanceConfig,
    pub all_pass: bool,
    pub checks: Vec<VerifyCheck>,
}

pub fn acceptance_config(cfg: &RunConfig) -> CliResult<AcceptanceConfig> {
    let mut acc = AcceptanceConfig {
        quick: cfg.quick,
        seed: cfg.seed,
        kmax: cfg.kmax,
        modulation: ModulationOpts { seed: cfg.seed, ..cfg.modulation },
        ..Default::default()
    };
    if let Some(g) = cfg.grid {
        let g = RunConfig { grid: Some(g), ..cfg.clone() }.grid_config()?;
        if cfg.n == 2 {
            acc.grid2 = g;
        } else {
            acc.grid3 = g;
        }
    }
    Ok(acc)
}

pub fn verify(cfg: &RunConfig) -> CliResult<(VerifyReport, Vec<CriterionResult>)> {
    let acc = acceptance_config(cfg)?;
    let results = run_all(&acc);
    let checks = results
        .iter()
        .map(|r| VerifyCheck {
            id: r.id,
            name: r.name.clone(),
            pass: r.pass,
            skipped: r.skipped,
            measured: r.measured,
            tolerance: r.tolerance,
            budget_seconds: r.budget_seconds,
            detail: r.detail.clone(),
        })
        .collect::<Vec<_>>();
    let all_pass = checks.iter().all(|c| c.pass);
    Ok((VerifyReport { config: cfg.clone(), acceptance: acc, all_pass, checks }, results))
}

/// Sweep rows as CSV; the footer row holds the fitted intercept, slope and
/// RMS residual in the last three columns.
pub fn sweep(cfg: &RunConfig) -> CliResult<(Sweep, String)> {
    let p = cfg.params()?;
    let eps = cfg.eps_list()?;
    let sw = konig_sweep(&p, &eps, f64::INFINITY)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["eps", "deficit", "eps2_rho2", "quotient"])?;
    for r in &sw.rows {
        w.write_record([r.eps, r.deficit, r.eps2_rho2, r.quotient].map(|v| format!("{v:.16e}")))?;
    }
    w.write_record([
        "fit".to_string(),
        format!("{:.16e}", sw.intercept),
        format!("{:.16e}", -sw.kappa),
        format!("{:.16e}", sw.fit_rms),
    ])?;
    let text = String::from_utf8(w.into_inner().map_err(|e| CliError::Output(e.to_string()))?)
        .map_err(|e| CliError::Output(e.to_string()))?;
    Ok((sw, text))
}

/// The configured field as μU + w on the calibrated grid.
pub fn build_field(cfg: &RunConfig, cal: &Calibration) -> CliResult<AnchoredField> {
    let p = &cal.p;
    let g = &cal.config;
    let field = match cfg.field {
        FieldSpec::Bubble => AnchoredField::new(1.0, sample_on_grid(p.n, g.half_width, g.points, "0", |_| 0.0)?),
        FieldSpec::Rho => anchored_perturbation(&unit_radial_field(p, degree_two_test_field(p))?, cfg.eps, cal)?,
        FieldSpec::Mode { ell, k } => anchored_perturbation(&unit_mode_field(p, ell, k)?, cfg.eps, cal)?,
        FieldSpec::Stretch { t } => {
            // U∘diag(t, 1/t, 1) − U
            let u = bubble_u(p);
            let n = p.n;
            let w = sample_on_grid(n, g.half_width, g.points, "stretch", |x| {
                let r0 = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                let mut r2 = (t * x[0]).powi(2) + (x[1] / t).powi(2);
                if n == 3 {
                    r2 += x[2] * x[2];
                }
                u.eval(r2.sqrt()) - u.eval(r0)
            })?;
            AnchoredField::new(1.0, w)
        }
    };
    Ok(field)
}

#[derive(Debug, Clone, Serialize)]
pub struct BodyReport {
    pub config: RunConfig,
    pub volume: f64,
    pub e_aff_phi: f64,
    pub e_aff_volume: f64,
    /// |Φ-route − volume-route|/Φ-route; an algebraic identity on the grid.
    pub route_gap: f64,
    pub boundary: Vec<Vec<f64>>,
    pub normalization: Normalization,
    /// Boundary of K_{Su} when `normalize` is set.
    pub normalized_boundary: Option<Vec<Vec<f64>>>,
}

fn trim(points: &[[f64; 3]], n: usize) -> Vec<Vec<f64>> {
    points.iter().map(|x| x[..n].to_vec()).collect()
}

pub fn body(cfg: &RunConfig) -> CliResult<BodyReport> {
    let p = cfg.params()?;
    let cal = calibrate(&p, &cfg.grid_config()?)?;
    let u = build_field(cfg, &cal)?;
    let energy = DirectionalEnergy::anchored(&u, &cal)?;
    let star: StarBody = body_from_table(&energy.table, &cal)?;
    let e = e_aff_table(&energy.table, &cal)?;
    let normalization = normalize_energy(&energy, &cal)?;
    let normalized_boundary = if cfg.normalize {
        let values = transformed_table(&energy, &normalization.matrix(), &cal)?;
        let table = DirectionalEnergyTable { values, c_cal: cal.c_cal };
        Some(trim(&body_from_table(&table, &cal)?.boundary, p.n))
    } else {
        None
    };
    Ok(BodyReport {
        config: cfg.clone(),
        volume: star.volume,
        e_aff_phi: e.phi_route,
        e_aff_volume: e.volume_route,
        route_gap: (e.phi_route - e.volume_route).abs() / e.phi_route,
        boundary: trim(&star.boundary, p.n),
        normalization,
        normalized_boundary,
    })
}

/// Boundary samples as CSV columns x, y[, z][, normalized x, y[, z]].
pub fn body_csv(report: &BodyReport) -> CliResult<String> {
    let n = report.boundary.first().map_or(0, |b| b.len());
    let names = ["x", "y", "z"];
    let mut header: Vec<String> = names[..n].iter().map(|s| s.to_string()).collect();
    if report.normalized_boundary.is_some() {
        header.extend(names[..n].iter().map(|s| format!("normalized_{s}")));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for (i, b) in report.boundary.iter().enumerate() {
        let mut row: Vec<String> = b.iter().map(|v| format!("{v:.12e}")).collect();
        if let Some(nb) = &report.normalized_boundary {
            row.extend(nb[i].iter().map(|v| format!("{v:.12e}")));
        }
        w.write_record(&row)?;
    }
    String::from_utf8(w.into_inner().map_err(|e| CliError::Output(e.to_string()))?)
        .map_err(|e| CliError::Output(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct DeficitReport {
    pub config: RunConfig,
    pub deficit: GridDeficit,
    pub d_aff: f64,
    pub d_frac: f64,
    pub ratio: f64,
    pub upper_ok: bool,
    pub lower_ok: bool,
    pub chart_optimum: ModulationResult,
    pub frac_optimum: ModulationResult,
}

pub fn deficit(cfg: &RunConfig) -> CliResult<DeficitReport> {
    let p = cfg.params()?;
    let cal = calibrate(&p, &cfg.grid_config()?)?;
    let u = build_field(cfg, &cal)?;
    let opts = ModulationOpts { seed: cfg.seed, ..cfg.modulation };
    let deficit = deficit_aff_anchored(&u, &cal)?;
    let TwoSided { d, ratio, upper_ok, lower_ok, modulation, .. } =
        two_sided_check(&u, &cal, &opts, cfg.upper_slack, cfg.lower_floor)?;
    let frac = d_frac_local(&u, &cal, &opts)?;
    Ok(DeficitReport {
        config: cfg.clone(),
        deficit,
        d_aff: d,
        d_frac: frac.d,
        ratio,
        upper_ok,
        lower_ok,
        chart_optimum: modulation,
        frac_optimum: frac,
    })
}
