//! Run configuration: JSON file with command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use affsob_core::energy_spectral::DEFAULT_KMAX;
use affsob_core::{GridConfig, ModulationOpts, Params};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub s: f64,
    /// Grid box and resolution; the dimension's default when absent.
    pub grid: Option<GridConfig>,
    pub kmax: usize,
    pub eps_min: f64,
    pub eps_max: f64,
    pub eps_steps: usize,
    /// RMS bound for the linear fit of the sweep quotient.
    pub fit_tol: f64,
    pub seed: u64,
    pub quick: bool,
    pub out: Option<PathBuf>,
    pub field: FieldSpec,
    /// Perturbation size for `rho` and `mode` fields.
    pub eps: f64,
    pub normalize: bool,
    pub modulation: ModulationOpts,
    /// δ_aff ≤ (1 + upper_slack)·D² and δ_aff/D² ≥ lower_floor.
    pub upper_slack: f64,
    pub lower_floor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 2,
            s: 0.5,
            grid: None,
            kmax: DEFAULT_KMAX,
            eps_min: 0.01,
            eps_max: 0.1,
            eps_steps: 10,
            fit_tol: 1e-2,
            seed: 7,
            quick: false,
            out: None,
            field: FieldSpec::Bubble,
            eps: 0.05,
            normalize: false,
            modulation: ModulationOpts::default(),
            upper_slack: 0.02,
            lower_floor: 0.05,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn params(&self) -> Result<Params, ConfigError> {
        Params::new(self.n, self.s).map_err(|e| ConfigError(e.to_string()))
    }

    /// The grid for grid-backend commands, which need n ∈ {2, 3}.
    pub fn grid_config(&self) -> Result<GridConfig, ConfigError> {
        if self.n != 2 && self.n != 3 {
            return Err(ConfigError(format!("grid commands need n = 2 or 3, got n = {}", self.n)));
        }
        let g = match self.grid {
            Some(g) => g,
            None => GridConfig::default_for(self.n).map_err(|e| ConfigError(e.to_string()))?,
        };
        if !(g.half_width > 0.0) || g.points < 8 || g.points % 2 != 0 || g.sphere_res < 4 {
            return Err(ConfigError(format!("invalid grid {g:?}")));
        }
        Ok(g)
    }

    pub fn eps_list(&self) -> Result<Vec<f64>, ConfigError> {
        let ok = self.eps_min > 0.0 && self.eps_max > self.eps_min && self.eps_steps >= 2;
        if !ok {
            return Err(ConfigError(format!(
                "ε range needs 0 < eps_min < eps_max and at least two steps, got [{}, {}] × {}",
                self.eps_min, self.eps_max, self.eps_steps
            )));
        }
        let h = (self.eps_max - self.eps_min) / (self.eps_steps - 1) as f64;
        Ok((0..self.eps_steps).map(|i| self.eps_min + h * i as f64).collect())
    }

    /// Checks shared by every command.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params()?;
        if self.kmax < 8 {
            return Err(ConfigError(format!("kmax = {} is below 8", self.kmax)));
        }
        Ok(())
    }
}

/// Field selector for `body` and `deficit`: `bubble`, `rho`, `mode:ℓ:k` or
/// `stretch:t`. `rho` and `mode` are unit directions scaled by `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FieldSpec {
    Bubble,
    Rho,
    Mode { ell: usize, k: usize },
    Stretch { t: f64 },
}

impl FromStr for FieldSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || ConfigError(format!("unknown field '{s}' (bubble, rho, mode:ℓ:k, stretch:t)"));
        match parts.as_slice() {
            ["bubble"] => Ok(Self::Bubble),
            ["rho"] => Ok(Self::Rho),
            ["mode", ell, k] => {
                let ell: usize = ell.parse().map_err(|_| bad())?;
                let k: usize = k.parse().map_err(|_| bad())?;
                if k < ell.max(2) {
                    return Err(ConfigError(format!("mode:{ell}:{k} needs k ≥ max(ℓ, 2) to avoid the kernel")));
                }
                Ok(Self::Mode { ell, k })
            }
            ["stretch", t] => {
                let t: f64 = t.parse().map_err(|_| bad())?;
                if !(t > 0.0) {
                    return Err(ConfigError(format!("stretch factor must be positive, got {t}")));
                }
                Ok(Self::Stretch { t })
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for FieldSpec {
    type Error = ConfigError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FieldSpec> for String {
    fn from(f: FieldSpec) -> Self {
        f.to_string()
    }
}

impl fmt::Display for FieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bubble => write!(f, "bubble"),
            Self::Rho => write!(f, "rho"),
            Self::Mode { ell, k } => write!(f, "mode:{ell}:{k}"),
            Self::Stretch { t } => write!(f, "stretch:{t}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_spec_round_trips_through_text() {
        for f in [FieldSpec::Bubble, FieldSpec::Rho, FieldSpec::Mode { ell: 3, k: 4 }, FieldSpec::Stretch { t: 1.5 }] {
            assert_eq!(f.to_string().parse::<FieldSpec>().unwrap(), f);
        }
        assert!("mode:2:1".parse::<FieldSpec>().is_err());
        assert!("mode:0:1".parse::<FieldSpec>().is_err());
        assert!("stretch:-1".parse::<FieldSpec>().is_err());
        assert!("cube".parse::<FieldSpec>().is_err());
    }

    #[test]
    fn config_rejects_bad_order_and_dimension() {
        let cfg = RunConfig { s: 1.2, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig { n: 4, ..Default::default() };
        assert!(cfg.validate().is_ok());
        assert!(cfg.grid_config().is_err());
    }

    #[test]
    fn json_overrides_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"n": 3, "s": 0.25, "field": "stretch:2", "grid": {"L": 20, "N": 64, "sphere_res": 12}}"#).unwrap();
        assert_eq!(cfg.n, 3);
        assert_eq!(cfg.field, FieldSpec::Stretch { t: 2.0 });
        assert_eq!(cfg.grid_config().unwrap().points, 64);
        assert_eq!(cfg.kmax, DEFAULT_KMAX);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn eps_list_spans_the_range() {
        let cfg = RunConfig { eps_min: 0.02, eps_max: 0.08, eps_steps: 3, ..Default::default() };
        let e = cfg.eps_list().unwrap();
        assert_eq!(e.len(), 3);
        assert!((e[1] - 0.05).abs() < 1e-15);
        assert!(RunConfig { eps_steps: 1, ..Default::default() }.eps_list().is_err());
    }
}
