//! Shared fixtures for the benchmarks: a small n = 2 calibration and a
//! perturbed bubble on it.

use affsob_core::energy_grid::{anchored_perturbation, calibrate};
use affsob_core::energy_spectral::unit_mode_field;
use affsob_core::{AnchoredField, Calibration, GridConfig, Params, Result};

/// L = 48, N = 256: small enough to rebuild per benchmark group.
pub fn small_grid() -> GridConfig {
    GridConfig { half_width: 48.0, points: 256, sphere_res: 64 }
}

pub fn small_calibration() -> Result<Calibration> {
    calibrate(&Params::new(2, 0.5)?, &small_grid())
}

/// U + 0.05ψ with ψ the unit (ℓ, k) = (0, 3) mode.
pub fn perturbed_bubble(cal: &Calibration) -> Result<AnchoredField> {
    anchored_perturbation(&unit_mode_field(&cal.p, 0, 3)?, 0.05, cal)
}
