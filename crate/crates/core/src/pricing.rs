//! Zero-rate Black–Scholes valuation off the simulated curve, and the Monte
//! Carlo martingale check that stands in for the no-arbitrage property.

use std::f64::consts::FRAC_1_SQRT_2;

use serde::Serialize;

use crate::engine::{EnsembleStats, Moment};
use crate::error::{Error, Result};
use crate::xi::{implied_vol, XiSeries};

/// Minimum number of paths accepted by [`martingale_test`].
pub const MIN_MARTINGALE_PATHS: usize = 100;

/// Pass threshold on `|z|` for each checkpoint.
pub const Z_THRESHOLD: f64 = 3.0;

/// Standard normal cumulative distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of [`norm_cdf`] on `(0, 1)`, Wichura's AS 241 (PPND16).
///
/// Relative accuracy is about `1e-16`; `p` outside `(0, 1)` maps to `±∞` or NaN.
pub fn norm_quantile(p: f64) -> f64 {
    if !(p > 0.0 && p < 1.0) {
        return if p == 0.0 {
            f64::NEG_INFINITY
        } else if p == 1.0 {
            f64::INFINITY
        } else {
            f64::NAN
        };
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                + 67265.770927008700853)
                * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                + 39307.89580009271061)
                * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Zero-rate Black–Scholes call price `S·N(d₁) − K·N(d₂)` with time to
/// maturity `tau`. A zero volatility returns the intrinsic value.
pub fn bs_price(spot: f64, sigma: f64, strike: f64, tau: f64) -> Result<f64> {
    if !(spot > 0.0 && spot.is_finite()) {
        return Err(Error::NonPositiveSpot(spot));
    }
    if !(strike > 0.0 && strike.is_finite()) {
        return Err(Error::InvalidArgument(format!("strike must be positive, got {strike}")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("time to maturity must be positive, got {tau}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("volatility must be >= 0, got {sigma}")));
    }
    let total = sigma * tau.sqrt();
    if total == 0.0 {
        return Ok((spot - strike).max(0.0));
    }
    let m = (spot / strike).ln() / total;
    let d1 = m + 0.5 * total;
    let d2 = m - 0.5 * total;
    Ok(spot * norm_cdf(d1) - strike * norm_cdf(d2))
}

/// The single European call the model is built around.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptionSpec {
    pub strike: f64,
    pub maturity: f64,
}

/// `C_t = BS(S_t, σ̂_t(T), K, T − t)` along a reconstructed total variance
/// series. `spots` must hold `S` at each sample time of `xi`.
pub fn option_price_process(
    xi: &XiSeries,
    spots: &[f64],
    spec: OptionSpec,
) -> Result<Vec<(f64, f64)>> {
    if spots.len() != xi.samples.len() {
        return Err(Error::InvalidArgument(format!(
            "{} spot values for {} variance samples",
            spots.len(),
            xi.samples.len()
        )));
    }
    xi.samples
        .iter()
        .zip(spots)
        .filter(|((t, _), _)| *t < spec.maturity)
        .map(|(&(t, value), &spot)| {
            let sigma = implied_vol(value, t, spec.maturity)?;
            Ok((t, bs_price(spot, sigma, spec.strike, spec.maturity - t)?))
        })
        .collect()
}

/// One row of the martingale report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointResult {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub strike: f64,
    pub maturity: f64,
    pub n_paths: usize,
    pub threshold: f64,
    pub option: Vec<CheckpointResult>,
    pub spot: Vec<CheckpointResult>,
    pub pass: bool,
    /// Family-wise caveat when several checkpoints are tested at once.
    pub note: Option<String>,
}

impl MartingaleReport {
    /// CSV mirror: `quantity,t,mean,stderr,target,z,pass`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,t,mean,stderr,target,z,pass\n");
        for (name, rows) in [("option", &self.option), ("spot", &self.spot)] {
            for r in rows {
                out.push_str(&format!(
                    "{name},{},{},{},{},{},{}\n",
                    r.t, r.mean, r.stderr, r.target, r.z, r.pass
                ));
            }
        }
        out
    }
}

fn z_score(m: &Moment, target: f64) -> f64 {
    let diff = m.mean - target;
    if m.stderr > 0.0 {
        diff / m.stderr
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

fn check(t: f64, m: &Moment, target: f64) -> CheckpointResult {
    let z = z_score(m, target);
    CheckpointResult { t, mean: m.mean, stderr: m.stderr, target, z, pass: z.abs() <= Z_THRESHOLD }
}

/// Compare the ensemble means of `C_t(T, K)` and `S_t` at each checkpoint
/// against `C_0` and `s₀`. Passes when every `|z| ≤ 3`.
pub fn martingale_test(
    stats: &EnsembleStats,
    spec: OptionSpec,
    checkpoints: &[f64],
) -> Result<MartingaleReport> {
    if stats.n_paths < MIN_MARTINGALE_PATHS {
        return Err(Error::InsufficientSample { got: stats.n_paths, need: MIN_MARTINGALE_PATHS });
    }
    let mi = stats
        .maturities
        .iter()
        .position(|&m| (m - spec.maturity).abs() <= 1e-12 * spec.maturity.max(1.0))
        .ok_or_else(|| {
            Error::InvalidArgument(format!("maturity {} was not simulated", spec.maturity))
        })?;
    let c0 = stats.initial_option[mi];
    let mut option = Vec::new();
    let mut spot = Vec::new();
    for &t in checkpoints {
        if t >= spec.maturity {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {t} is not before maturity {}",
                spec.maturity
            )));
        }
        let cp = stats
            .checkpoints
            .iter()
            .find(|c| (c.t - t).abs() <= 1e-9 * t.max(1.0))
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint {t} was not recorded")))?;
        let moment = cp.option[mi]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("no option value at checkpoint {t}")))?;
        option.push(check(cp.t, moment, c0));
        spot.push(check(cp.t, &cp.spot, stats.s0));
    }
    let pass = option.iter().chain(&spot).all(|r| r.pass);
    let tests = option.len() + spot.len();
    let note = (tests > 1).then(|| {
        let per_test = 2.0 * norm_cdf(-Z_THRESHOLD);
        format!(
            "{tests} simultaneous |z| <= {Z_THRESHOLD} tests; Bonferroni bound on the false-rejection rate {:.4}",
            (tests as f64 * per_test).min(1.0)
        )
    });
    Ok(MartingaleReport {
        strike: spec.strike,
        maturity: spec.maturity,
        n_paths: stats.n_paths,
        threshold: Z_THRESHOLD,
        option,
        spot,
        pass,
        note,
    })
}
