//! Minimisation and free-boundary diagnostics for the periodic one-phase
//! Bernoulli problem on a truncated strip.
//!
//! * [`regimes`]: critical heads, the flat-height cubic, and the `gamma` ranges
//!   where minimisers must be non-flat.
//! * [`flat`]: one-dimensional profiles and their exact energies.
//! * [`grid`]: the periodic grid, the smoothed energy and its gradient.
//! * [`minimizer`]: projected descent with indicator continuation and
//!   symmetric multistart.
//! * [`freeboundary`]: graph extraction, oscillation, the gradient condition,
//!   and contact-angle ratios.
//! * [`weiss`]: the boundary density at the contact point, blow-ups and their
//!   classification.
//! * [`io`] and [`pipeline`]: artifact formats and the experiment driver.

pub mod error;
pub mod exec;
pub mod flat;
pub mod freeboundary;
pub mod grid;
pub mod io;
pub mod minimizer;
pub mod pipeline;
pub mod regimes;
pub mod weiss;

pub use error::{Error, Result};
pub use exec::Exec;
pub use flat::{FlatHeight, FlatProfile};
pub use grid::{Field, Grid, SmoothingParams};
pub use minimizer::{MinimizeOptions, Solution, Start};
pub use regimes::{GammaClass, ProblemParams, RegimeReport};
