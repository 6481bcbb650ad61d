//! Image mutations: the natural metamorphic pipeline and corruptions.

mod acceptance;
mod corruption;
mod enhance;
mod filter;
mod geometric;
mod natural;

pub use acceptance::{acceptance_test, pixel_distances, AcceptanceParams};
pub use corruption::{apply_corruption, Corruption, CorruptionTable};
pub use enhance::{apply_enhancement, luminance, Enhancement};
pub use filter::{apply_filter, convolve3x3_clamped, Filter};
pub use geometric::{apply_geometric, flip_horizontal, scale_and_place, scaled_len, translate, GeometricParams};
pub use natural::{mutate_natural, replay, MutationRecord, NaturalParams};
