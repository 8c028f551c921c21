//! Simulation of a forward implied volatility curve `X_t` for one strike,
//! jointly with the stock, under volvol feedback that keeps the implied
//! surface free of arbitrage.
//!
//! The curve lives on a uniform grid over time-to-maturity `[0, T*]`
//! ([`curve`]). A volvol model ([`volvol`]) fixes the coefficients of the
//! system ([`dynamics`]); total implied variance and positivity checks sit in
//! [`xi`], valuation and the martingale test in [`pricing`], and ensembles in
//! [`engine`].
//!
//! ```
//! use fwdvol::curve::{Curve, Grid};
//! use fwdvol::dynamics::{step, MarketState};
//! use fwdvol::volvol::ZeroVolVol;
//!
//! let grid = Grid::new(5, 1.0)?;
//! let x = Curve::from_fn(grid, |s| 0.04 + 0.01 * s)?;
//! let state = MarketState::new(0.0, 100.0, x)?;
//! let (next, _) = step(&state, &ZeroVolVol::new(1), 100.0, 0.25, &[0.0], 1e-8)?;
//! assert_eq!(next.x.values(), &[0.0425, 0.045, 0.0475, 0.05, 0.05]);
//! # Ok::<(), fwdvol::Error>(())
//! ```

pub mod curve;
pub mod dynamics;
pub mod engine;
mod error;
pub mod pricing;
pub mod volvol;
pub mod xi;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/curves.md")]
    mod curves {}
    #[doc = include_str!("../../../book/src/volvol.md")]
    mod volvol {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/variance.md")]
    mod variance {}
    #[doc = include_str!("../../../book/src/pricing.md")]
    mod pricing {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
