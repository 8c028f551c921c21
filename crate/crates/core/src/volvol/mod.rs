//! The volvol map `u: (t, K, S, X) ↦ (u⁽¹⁾, …, u⁽ᵐ⁾)`, its `x`-derivative, and
//! the short-end scalars built from it:
//!
//! ```text
//! L  = X[0] − Σ_{j≥2} (u⁽ʲ⁾[0])² ln²(K/S)
//! θ̄  = sqrt(|L|) − u⁽¹⁾[0] ln(K/S)
//! θ  = sqrt(L)   − u⁽¹⁾[0] ln(K/S)        (requires L ≥ 0)
//! ```
//!
//! Component 1 loads on the Brownian motion that drives the stock.

mod families;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::curve::{integrate_prefix, Curve};
use crate::error::{Error, Result};

pub use families::{
    cutoff, eta_rational, eta_two_sqrt, phi_default, phi_default_prime, psi_over_log_default,
    Component, Family1, Family2, ScalarFn, ZeroVolVol,
};
pub use validate::{validate_hypotheses, ItemResult, SampleSpec, ValidationReport, Witness};

/// Read-only view of the state handed to a [`VolVol`].
///
/// `prefix` is `I(X)` on the same nodes as `x`; callers that already have it
/// (the stepper) pass it in so families that depend on it do not recompute.
#[derive(Debug, Clone, Copy)]
pub struct StateView<'a> {
    pub t: f64,
    pub strike: f64,
    pub spot: f64,
    pub x: &'a [f64],
    pub prefix: &'a [f64],
    pub dx: f64,
}

impl StateView<'_> {
    pub fn n_nodes(&self) -> usize {
        self.x.len()
    }

    /// `ln(K/S)`.
    pub fn log_moneyness(&self) -> f64 {
        (self.strike / self.spot).ln()
    }
}

/// A volvol model. Implementations fill `u` and `∂ₓu` row-major: component
/// `i` occupies `[i·n, (i+1)·n)` where `n` is the number of grid nodes.
pub trait VolVol: Send + Sync + fmt::Debug {
    /// Brownian dimension `m ≥ 1`.
    fn dim(&self) -> usize;

    fn fill(&self, state: &StateView<'_>, u: &mut [f64], du: &mut [f64]) -> Result<()>;

    /// True when `u ≡ 0` for every input; lets the stepper skip coefficient work.
    fn is_zero(&self) -> bool {
        false
    }
}

pub(crate) fn check_spot(spot: f64) -> Result<()> {
    if spot > 0.0 && spot.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveSpot(spot))
    }
}

/// Evaluate `u` and `∂ₓu` as curves on `x`'s grid.
pub fn eval_both(
    model: &dyn VolVol,
    t: f64,
    strike: f64,
    spot: f64,
    x: &Curve,
) -> Result<(Vec<Curve>, Vec<Curve>)> {
    check_spot(spot)?;
    let grid = *x.grid();
    let n = grid.n_nodes();
    let m = model.dim();
    let prefix = integrate_prefix(x);
    let view = StateView {
        t,
        strike,
        spot,
        x: x.values(),
        prefix: prefix.values(),
        dx: grid.dx(),
    };
    let mut u = vec![0.0; m * n];
    let mut du = vec![0.0; m * n];
    model.fill(&view, &mut u, &mut du)?;
    let split = |flat: Vec<f64>| -> Result<Vec<Curve>> {
        flat.chunks(n).map(|c| Curve::new(grid, c.to_vec())).collect()
    };
    Ok((split(u)?, split(du)?))
}

pub fn eval_u(model: &dyn VolVol, t: f64, strike: f64, spot: f64, x: &Curve) -> Result<Vec<Curve>> {
    Ok(eval_both(model, t, strike, spot, x)?.0)
}

pub fn eval_du(model: &dyn VolVol, t: f64, strike: f64, spot: f64, x: &Curve) -> Result<Vec<Curve>> {
    Ok(eval_both(model, t, strike, spot, x)?.1)
}

/// `X[0] − Σ_{j≥2} (u⁽ʲ⁾[0] λ)²` from the short-end loadings `u0` and
/// `λ = ln(K/S)`.
pub fn discriminant(x_front: f64, u0: &[f64], log_moneyness: f64) -> f64 {
    x_front
        - u0.iter()
            .skip(1)
            .map(|u| {
                let a = u * log_moneyness;
                a * a
            })
            .sum::<f64>()
}

/// `θ̄ = sqrt(|L|) − u⁽¹⁾[0] λ`.
pub fn theta_bar_from(l: f64, u0_first: f64, log_moneyness: f64) -> f64 {
    l.abs().sqrt() - u0_first * log_moneyness
}

/// Short-end loadings `u⁽ⁱ⁾[0]` and `λ = ln(K/S)` at a state.
fn short_end(model: &dyn VolVol, t: f64, strike: f64, spot: f64, x: &Curve) -> Result<(Vec<f64>, f64)> {
    let u = eval_u(model, t, strike, spot, x)?;
    Ok((u.iter().map(|c| c.values()[0]).collect(), (strike / spot).ln()))
}

pub fn compute_l(model: &dyn VolVol, t: f64, strike: f64, spot: f64, x: &Curve) -> Result<f64> {
    let (u0, lam) = short_end(model, t, strike, spot, x)?;
    Ok(discriminant(x.values()[0], &u0, lam))
}

pub fn compute_theta_bar(model: &dyn VolVol, t: f64, strike: f64, spot: f64, x: &Curve) -> Result<f64> {
    let (u0, lam) = short_end(model, t, strike, spot, x)?;
    let l = discriminant(x.values()[0], &u0, lam);
    Ok(theta_bar_from(l, u0[0], lam))
}

/// Spot volatility from the feedback condition; fails with
/// [`Error::DegenerateRoot`] when `L < 0`.
pub fn compute_theta(model: &dyn VolVol, t: f64, strike: f64, spot: f64, x: &Curve) -> Result<f64> {
    let (u0, lam) = short_end(model, t, strike, spot, x)?;
    let l = discriminant(x.values()[0], &u0, lam);
    if l < 0.0 {
        return Err(Error::DegenerateRoot(l));
    }
    Ok(l.sqrt() - u0[0] * lam)
}

/// Which `η` to use for components `2..=m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaChoice {
    /// `β σ / (1 + σ)^{3/2}`: vanishes at 0 and stays below `√σ`.
    #[default]
    Rational,
    /// `2√σ`: breaks the sub-square-root constraint.
    TwoSqrt,
}

fn default_m() -> usize {
    2
}
fn default_m_zero() -> usize {
    1
}
fn default_beta() -> f64 {
    1.0
}
fn default_cutoff() -> f64 {
    1e3
}

/// Scenario-file description of a volvol model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// `u ≡ 0`: pure transport of the curve, constant-volatility stock.
    Zero {
        #[serde(default = "default_m_zero")]
        m: usize,
    },
    /// Loadings constant in `x`.
    Family1 {
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        eta2: EtaChoice,
    },
    /// Loadings depending on `x` through `∫₀ˣ X`, with an `H¹` cut-off at `N`.
    Family2 {
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_cutoff")]
        cutoff: f64,
        #[serde(default)]
        eta2: EtaChoice,
    },
}

impl FamilySpec {
    pub fn build(&self) -> Result<Box<dyn VolVol>> {
        let check = |m: usize, beta: f64| -> Result<()> {
            if m == 0 {
                return Err(Error::InvalidParams("volvol dimension m must be >= 1".into()));
            }
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::InvalidParams(format!("beta must lie in (0, 1], got {beta}")));
            }
            Ok(())
        };
        Ok(match *self {
            FamilySpec::Zero { m } => {
                check(m, 1.0)?;
                Box::new(ZeroVolVol::new(m))
            }
            FamilySpec::Family1 { m, beta, eta2 } => {
                check(m, beta)?;
                Box::new(Family1::standard(m, beta, eta2))
            }
            FamilySpec::Family2 { m, beta, cutoff, eta2 } => {
                check(m, beta)?;
                if !(cutoff > 0.0 && cutoff.is_finite()) {
                    return Err(Error::InvalidParams(format!("cutoff must be positive, got {cutoff}")));
                }
                Box::new(Family2::standard(m, beta, cutoff, eta2))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Grid;
    use approx::assert_abs_diff_eq;

    fn flat(n: usize, v: f64) -> Curve {
        Curve::constant(Grid::new(n, 1.0).unwrap(), v).unwrap()
    }

    #[test]
    fn zero_model_short_end() {
        let z = ZeroVolVol::new(3);
        let x = flat(9, 0.04);
        assert_eq!(compute_l(&z, 0.0, 100.0, 87.0, &x).unwrap(), 0.04);
        assert_abs_diff_eq!(compute_theta(&z, 0.0, 100.0, 87.0, &x).unwrap(), 0.2, epsilon = 1e-16);
    }

    #[test]
    fn at_the_money_theta_is_root_of_front() {
        let f = Family2::standard(2, 1.0, 1e3, EtaChoice::Rational);
        let x = Curve::from_fn(Grid::new(9, 1.0).unwrap(), |s| 0.09 + 0.01 * s).unwrap();
        assert_eq!(compute_l(&f, 0.0, 100.0, 100.0, &x).unwrap(), 0.09);
        assert_abs_diff_eq!(compute_theta(&f, 0.0, 100.0, 100.0, &x).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn front_zero_gives_zero_discriminant() {
        // η(0) = 0 for the rational η, so L = 0 and θ = −u⁽¹⁾[0] ln(K/S) = 0 as well.
        for model in [
            Box::new(Family1::standard(2, 1.0, EtaChoice::Rational)) as Box<dyn VolVol>,
            Box::new(Family2::standard(2, 1.0, 1e3, EtaChoice::Rational)),
        ] {
            let x = Curve::from_fn(Grid::new(9, 1.0).unwrap(), |s| s * 0.1).unwrap();
            let l = compute_l(model.as_ref(), 0.0, 100.0, 80.0, &x).unwrap();
            assert_eq!(l, 0.0);
            let u0 = eval_u(model.as_ref(), 0.0, 100.0, 80.0, &x).unwrap()[0].values()[0];
            let th = compute_theta(model.as_ref(), 0.0, 100.0, 80.0, &x).unwrap();
            assert_eq!(th, -u0 * (100.0_f64 / 80.0).ln());
        }
    }

    #[test]
    fn family1_discriminant_by_hand() {
        // mpmath: u⁽²⁾ = φ(0.04)·(1/(1+ln²1.1))·η(0.04), L = 0.04 − (u⁽²⁾ ln 1.1)²
        let f = Family1::standard(2, 1.0, EtaChoice::Rational);
        let x = flat(17, 0.04);
        let spot = 100.0 / 1.1;
        let u = eval_u(&f, 0.0, 100.0, spot, &x).unwrap();
        assert_abs_diff_eq!(u[1].values()[5], 0.037_315_419_933_672_387_9, epsilon = 1e-15);
        let l = compute_l(&f, 0.0, 100.0, spot, &x).unwrap();
        assert_abs_diff_eq!(l, 0.039_987_351_027_614_664_7, epsilon = 1e-15);
    }

    #[test]
    fn theta_rejects_negative_discriminant() {
        let f = Family2::standard(2, 1.0, 1e3, EtaChoice::TwoSqrt);
        // the TwoSqrt η at ln(K/S) = 1 puts L at the edge; push it over with m = 3
        let f3 = Family2::standard(3, 1.0, 1e3, EtaChoice::TwoSqrt);
        let x = flat(9, 0.04);
        let spot = 100.0 / 1f64.exp();
        assert!(compute_l(&f, 0.0, 100.0, spot, &x).unwrap().abs() < 1e-15);
        let l3 = compute_l(&f3, 0.0, 100.0, spot, &x).unwrap();
        assert!(l3 < 0.0);
        assert!(matches!(compute_theta(&f3, 0.0, 100.0, spot, &x), Err(Error::DegenerateRoot(_))));
        assert!(compute_theta_bar(&f3, 0.0, 100.0, spot, &x).unwrap().is_finite());
    }

    #[test]
    fn spot_must_be_positive() {
        let f = Family1::standard(2, 1.0, EtaChoice::Rational);
        assert!(matches!(
            eval_u(&f, 0.0, 100.0, 0.0, &flat(5, 0.04)),
            Err(Error::NonPositiveSpot(_))
        ));
    }

    #[test]
    fn family_spec_parsing_is_strict() {
        let ok: FamilySpec = serde_json::from_str(r#"{"kind":"family2","beta":0.5}"#).unwrap();
        assert_eq!(
            ok,
            FamilySpec::Family2 { m: 2, beta: 0.5, cutoff: 1e3, eta2: EtaChoice::Rational }
        );
        assert!(serde_json::from_str::<FamilySpec>(r#"{"kind":"family1","betta":0.5}"#).is_err());
        let bad: FamilySpec = serde_json::from_str(r#"{"kind":"family1","beta":1.5}"#).unwrap();
        assert!(bad.build().is_err());
    }
}
