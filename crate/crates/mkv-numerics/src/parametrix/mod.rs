//! Parametrix expansion of the transition density in d = 1.

pub mod bounds;
pub mod constants;
pub mod iterate;
pub mod kernel;
pub mod quadrature;
pub mod series;

pub use bounds::{fit_kernel, series_tail, KernelFit, HEADROOM};
pub use constants::{beta, constants, constants_asymptotic, ln_beta, log_constants_asymptotic, threshold, ParametrixConstants};
pub use iterate::{iterate_kernel, kernel_table, KernelTable};
pub use kernel::kernel_h;
pub use quadrature::{GradedRule, UniformGrid};
pub use series::{
    parametrix_density, parametrix_density_grid, parametrix_density_with, series_table, ParametrixConfig, SeriesResult,
    SeriesTable, SpaceTimeGrid,
};
