//! Linear algebra, tail probabilities and random streams shared by every
//! other module.

pub mod linalg;
pub mod rng;
pub mod special;

pub use linalg::{dot, solve_spd, Cholesky, SpdMatrix};
pub use rng::{draw_std_normals, RngStream};
pub use special::{chisq_sf, normal_quantile, normal_sf};
