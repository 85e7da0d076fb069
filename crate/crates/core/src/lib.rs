//! Spherically symmetric Finsler metrics `F = |y| φ(|x|, <x,y>/|y|)`.

pub mod catalog;
pub mod construct;
pub mod curvature;
pub mod error;
pub mod expr;
pub mod frame;
pub mod jet;
pub mod metric;
pub mod oracle;
pub mod quad;
pub mod report;
pub mod sample;
pub mod spec;
pub mod tol;

pub use error::{Error, Result};
pub use expr::Expr;
pub use frame::RadialFrame;
pub use jet::Jet;
pub use spec::MetricSpec;
