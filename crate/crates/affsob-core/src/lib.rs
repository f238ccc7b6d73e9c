pub mod acceptance;
pub mod affine_geom;
pub mod energy_grid;
pub mod energy_spectral;
pub mod error;
pub mod fields;
pub mod modulation;
pub mod params;
pub mod quadrature;
pub mod special;

pub use error::{Error, Result};
pub use params::Params;
pub use acceptance::{AcceptanceConfig, CriterionResult};
pub use energy_grid::{AnchoredField, Calibration, GridConfig};
pub use fields::{GridField, RadialProfile, SectorField};
pub use modulation::{ChartPoint, ModulationOpts, ModulationResult};
