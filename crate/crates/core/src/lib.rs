//! Non-parametric risk-aversion tests built on mean-preserving spreads.

pub mod agents;
pub mod analysis;
pub mod choice;
pub mod crra;
pub mod geometry;
pub mod lottery;
pub mod records;
pub mod reference;
pub mod root;
pub mod scalar;
pub mod stats;
pub mod tasks;

pub use scalar::Rational;

/// Utility table in double precision.
pub type Utility = lottery::TabulatedUtility<f64>;
/// Utility table with exact entries.
pub type ExactUtility = lottery::TabulatedUtility<Rational>;
pub type Point = geometry::NormalizedUtilityPoint<f64>;
pub type ExactPoint = geometry::NormalizedUtilityPoint<Rational>;
pub type ExactPolygon = geometry::Polygon<Rational>;
