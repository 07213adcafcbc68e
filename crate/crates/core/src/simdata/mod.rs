//! Synthetic data: SDE path simulators and toy point-cloud generators.

mod sde;
mod toy;

pub use sde::{
    ou_dt_log_density, ou_log_density, ou_moments, simulate, simulate_bouc_wen, simulate_duffing, simulate_ou, simulate_ou_from,
    BoucWenParams, DuffingParams, OuParams, SimOutput, Sde, BLOWUP_LIMIT,
};
pub use toy::{gen_checkerboard, gen_circles, gen_moons, gen_moons_with_noise, gen_semisphere};
