//! `affsob`: coefficient tables, the acceptance suite, the degree-two sweep,
//! star-body export and single-field deficit reports.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, CliResult};
use config::{FieldSpec, RunConfig};

#[derive(Parser)]
#[command(name = "affsob", version, about = "Affine fractional Sobolev stability laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Λ_k, γ_s, Funk–Hecke coefficients and the even-sector margin.
    Coeffs(Common),
    /// Run the acceptance suite and emit a JSON report.
    Verify(Common),
    /// Degree-two deficit sweep as CSV.
    Sweep(Common),
    /// Star body K_u of a field and its inscribed-ellipsoid normalization.
    Body(Common),
    /// Deficit, distance to the affine cone and chart optimum of a field.
    Deficit(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    s: Option<f64>,
    /// Grid points per axis.
    #[arg(long = "grid-n")]
    grid_n: Option<usize>,
    /// Grid half-width L.
    #[arg(long = "grid-l")]
    grid_l: Option<f64>,
    #[arg(long = "sphere-res")]
    sphere_res: Option<usize>,
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long = "eps-min")]
    eps_min: Option<f64>,
    #[arg(long = "eps-max")]
    eps_max: Option<f64>,
    #[arg(long = "eps-steps")]
    eps_steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the grid-backend checks in `verify`.
    #[arg(long)]
    quick: bool,
    /// bubble, rho, mode:ℓ:k or stretch:t.
    #[arg(long)]
    field: Option<FieldSpec>,
    /// Size of the `rho` or `mode` perturbation.
    #[arg(long)]
    eps: Option<f64>,
    /// Also export the body of the normalized field.
    #[arg(long)]
    normalize: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, config::ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.s {
            cfg.s = v;
        }
        if let Some(v) = self.kmax {
            cfg.kmax = v;
        }
        if let Some(v) = self.eps_min {
            cfg.eps_min = v;
        }
        if let Some(v) = self.eps_max {
            cfg.eps_max = v;
        }
        if let Some(v) = self.eps_steps {
            cfg.eps_steps = v;
        }
        if let Some(v) = &self.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.field {
            cfg.field = v;
        }
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        cfg.quick |= self.quick;
        cfg.normalize |= self.normalize;
        if self.grid_n.is_some() || self.grid_l.is_some() || self.sphere_res.is_some() {
            let mut g = match cfg.grid {
                Some(g) => g,
                None => RunConfig { grid: None, ..cfg.clone() }.grid_config()?,
            };
            if let Some(v) = self.grid_n {
                g.points = v;
            }
            if let Some(v) = self.grid_l {
                g.half_width = v;
            }
            if let Some(v) = self.sphere_res {
                g.sphere_res = v;
            }
            cfg.grid = Some(g);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn is_csv(cfg: &RunConfig) -> bool {
    cfg.out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv"))
}

/// Ok(true) when every check passed.
fn run(command: Command) -> CliResult<bool> {
    match command {
        Command::Coeffs(c) => {
            let cfg = c.resolve()?;
            let rows = commands::coeffs(&cfg)?;
            print!("{}", commands::coeffs_text(&rows));
            if let Some(out) = &cfg.out {
                commands::emit(Some(out), &commands::coeffs_csv(&rows)?)?;
            }
            Ok(true)
        }
        Command::Verify(c) => {
            let cfg = c.resolve()?;
            let (report, results) = commands::verify(&cfg)?;
            for r in &results {
                eprintln!("{}", r.line());
            }
            commands::emit(cfg.out.as_deref(), &commands::to_json(&report)?)?;
            Ok(report.all_pass)
        }
        Command::Sweep(c) => {
            let cfg = c.resolve()?;
            let (sw, text) = commands::sweep(&cfg)?;
            if sw.fit_rms > cfg.fit_tol {
                eprintln!("warning: fit residual {:.3e} exceeds {:.1e}", sw.fit_rms, cfg.fit_tol);
            }
            eprintln!(
                "γ_s = {:.6}, intercept = {:.6}, κ̂ = {:.6}, all below gap: {}",
                sw.gamma_s, sw.intercept, sw.kappa, sw.all_below_gap
            );
            commands::emit(cfg.out.as_deref(), &text)?;
            Ok(true)
        }
        Command::Body(c) => {
            let cfg = c.resolve()?;
            let report = commands::body(&cfg)?;
            let text = if is_csv(&cfg) { commands::body_csv(&report)? } else { commands::to_json(&report)? };
            commands::emit(cfg.out.as_deref(), &text)?;
            Ok(true)
        }
        Command::Deficit(c) => {
            let cfg = c.resolve()?;
            let report = commands::deficit(&cfg)?;
            commands::emit(cfg.out.as_deref(), &commands::to_json(&report)?)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ CliError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
