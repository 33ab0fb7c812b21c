//! Numerics for the wrinkling transition of a thin elastic sheet in the
//! thickness-to-zero limit.
//!
//! The crate covers four stages:
//!
//! * [`measure`]: discrete measures on `(0, λ) × (π/L)ℤ`, the convex limit
//!   functional `F_∞`, disintegrations, dilation and frequency binning;
//! * [`limit_solver`]: barrier-Newton minimization of the discrete `F_∞`
//!   and diagnostics of the minimizer (equipartition, support gap,
//!   dominant frequency, Benamou–Brenier form);
//! * [`recovery`]: the explicit construction of displacement fields
//!   `(w₁, w₂, u)` at finite thickness `1/L` from a measure;
//! * [`energy`]: spectral evaluation of the rescaled excess energy `F_L` and
//!   of the gap `F_L − F_∞` along a sequence of `L`.
//!
//! [`grids`], [`spectral`] and [`profile`] provide the shared grids, Fourier
//! transforms and exact `y`-profile algebra.

pub mod energy;
pub mod error;
pub mod grids;
pub mod limit_solver;
pub mod measure;
pub mod profile;
pub mod recovery;
pub mod spectral;

pub use error::{Error, Result};
