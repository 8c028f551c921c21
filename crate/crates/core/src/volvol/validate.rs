//! Sampled spot checks of the regularity and positivity conditions a volvol
//! model must satisfy. These are difference quotients and bound ratios on
//! random states, not proofs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{discriminant, eval_both, theta_bar_from, VolVol};
use crate::curve::{h1_norm, integrate_prefix, Curve, Grid};
use crate::dynamics::{coefficient_h1_size, compute_coefficients, MarketState};
use crate::engine::NoiseStream;
use crate::error::Result;

/// Stream index reserved for validator draws, disjoint from path streams in
/// practice.
const VALIDATION_STREAM: u64 = u64::MAX - 1;

/// Ranges and caps for [`validate_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSpec {
    pub n_samples: usize,
    pub n_nodes: usize,
    pub horizon: f64,
    pub strike: f64,
    /// Samples draw `ln(K/S)` uniformly in `[−a, a]`.
    pub max_log_moneyness: f64,
    /// Curve levels are log-uniform in `[1e-4, 1]·x_level_max`.
    pub x_level_max: f64,
    /// Relative amplitude of the sinusoidal wiggle, below 1 to keep `X > 0`.
    pub x_wiggle: f64,
    /// Share of samples with `X[0] = 0`.
    pub zero_front_fraction: f64,
    /// Relative size of the Lipschitz perturbation.
    pub perturbation: f64,
    pub bound_cap: f64,
    pub lipschitz_cap: f64,
    pub growth_cap: f64,
    /// `L = 0` is declared when `|L| ≤ tol_rel · X[0]`.
    pub tol_rel: f64,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            n_nodes: 33,
            horizon: 1.0,
            strike: 100.0,
            max_log_moneyness: 3.0,
            x_level_max: 1.0,
            x_wiggle: 0.5,
            zero_front_fraction: 0.05,
            perturbation: 1e-4,
            bound_cap: 1e3,
            lipschitz_cap: 1e4,
            growth_cap: 1e3,
            tol_rel: 1e-6,
            seed: 0,
        }
    }
}

/// The state at which an item attained its worst value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub t: f64,
    pub spot: f64,
    pub log_moneyness: f64,
    pub x_front: f64,
    pub l: f64,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemResult {
    pub name: String,
    pub pass: bool,
    /// Worst value seen (a max ratio, or a min of `L`).
    pub statistic: f64,
    pub threshold: f64,
    pub checked: usize,
    pub violations: usize,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n_samples: usize,
    pub items: Vec<ItemResult>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn item(&self, name: &str) -> Option<&ItemResult> {
        self.items.iter().find(|i| i.name == name)
    }
}

/// Running worst value of one item.
struct Tracker {
    name: &'static str,
    threshold: f64,
    /// `true`: bad values are large (ratio caps). `false`: bad values are small.
    upper: bool,
    worst: f64,
    witness: Option<Witness>,
    checked: usize,
    violations: usize,
}

impl Tracker {
    fn upper(name: &'static str, threshold: f64) -> Self {
        Self { name, threshold, upper: true, worst: 0.0, witness: None, checked: 0, violations: 0 }
    }

    fn lower(name: &'static str, threshold: f64) -> Self {
        Self { name, threshold, upper: false, worst: f64::INFINITY, witness: None, checked: 0, violations: 0 }
    }

    /// `bad` overrides the threshold comparison when given.
    fn observe(&mut self, value: f64, bad: Option<bool>, witness: impl FnOnce() -> Witness) {
        self.checked += 1;
        let violated = bad.unwrap_or(if self.upper {
            !(value <= self.threshold)
        } else {
            !(value >= self.threshold)
        });
        if violated {
            self.violations += 1;
        }
        let worse = if self.upper { !(value <= self.worst) } else { !(value >= self.worst) };
        // The first violation is kept as witness; before that, the worst value.
        if (violated && self.violations == 1) || (self.violations == 0 && worse) {
            self.witness = Some(witness());
        }
        if worse {
            self.worst = value;
        }
    }

    fn finish(self) -> ItemResult {
        ItemResult {
            name: self.name.to_string(),
            pass: self.violations == 0 && self.checked > 0,
            statistic: self.worst,
            threshold: self.threshold,
            checked: self.checked,
            violations: self.violations,
            witness: self.witness,
        }
    }
}

/// One sampled state.
struct Sample {
    t: f64,
    spot: f64,
    x: Curve,
}

fn sample_curve(rng: &mut NoiseStream, spec: &SampleSpec, grid: Grid, zero_front: bool) -> Result<Curve> {
    let level = spec.x_level_max * (-(1e4f64).ln() * rng.uniform()).exp();
    let wiggle = spec.x_wiggle * rng.uniform();
    let freq = 3.0 * rng.uniform();
    let phase = 2.0 * PI * rng.uniform();
    let h = grid.horizon();
    Curve::from_fn(grid, |x| {
        let base = level * (1.0 + wiggle * (2.0 * PI * freq * x / h + phase).sin());
        if zero_front {
            base * x / h
        } else {
            base
        }
    })
}

fn unit_direction(rng: &mut NoiseStream, grid: Grid) -> Result<Curve> {
    let freq = 2.0 * rng.uniform();
    let phase = 2.0 * PI * rng.uniform();
    let shift = 2.0 * rng.uniform() - 1.0;
    let h = grid.horizon();
    let d = Curve::from_fn(grid, |x| (2.0 * PI * freq * x / h + phase).cos() + shift)?;
    let norm = h1_norm(&d);
    Curve::new(grid, d.values().iter().map(|v| v / norm).collect())
}

/// Short-end quantities and curves at one state.
struct Eval {
    u: Vec<Curve>,
    du: Vec<Curve>,
    l: f64,
    theta_bar: f64,
    lam: f64,
}

fn evaluate(model: &dyn VolVol, strike: f64, s: &Sample) -> Result<Eval> {
    let (u, du) = eval_both(model, s.t, strike, s.spot, &s.x)?;
    let lam = (strike / s.spot).ln();
    let u0: Vec<f64> = u.iter().map(|c| c.values()[0]).collect();
    let l = discriminant(s.x.values()[0], &u0, lam);
    Ok(Eval { theta_bar: theta_bar_from(l, u0[0], lam), u, du, l, lam })
}

fn h1_diff(a: &Curve, b: &Curve) -> f64 {
    let d: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    h1_norm(&Curve::new(*a.grid(), d).expect("finite difference of finite curves"))
}

fn scaled(c: &Curve, k: f64) -> Curve {
    Curve::new(*c.grid(), c.values().iter().map(|v| v * k).collect()).expect("finite scaling")
}

/// Run every check on `spec.n_samples` random states plus a fixed set of
/// probes at `ln(K/S) ∈ {−1, 0, 1}` and flat curves.
pub fn validate_hypotheses(model: &dyn VolVol, spec: &SampleSpec) -> Result<ValidationReport> {
    let grid = Grid::new(spec.n_nodes, spec.horizon)?;
    let k = spec.strike;
    let mut rng = NoiseStream::for_path(spec.seed, VALIDATION_STREAM);

    let mut samples = Vec::with_capacity(spec.n_samples + 12);
    for _ in 0..spec.n_samples {
        let zero_front = rng.uniform() < spec.zero_front_fraction;
        let t = spec.horizon * rng.uniform();
        let lam = spec.max_log_moneyness * (2.0 * rng.uniform() - 1.0);
        let x = sample_curve(&mut rng, spec, grid, zero_front)?;
        samples.push(Sample { t, spot: k * (-lam).exp(), x });
    }
    for lam in [-1.0, 0.0, 1.0] {
        for level in [1e-4, 0.04, 0.25, 1.0] {
            samples.push(Sample { t: 0.0, spot: k * (-lam as f64).exp(), x: Curve::constant(grid, level)? });
        }
    }

    let mut bound = Tracker::upper("u bounded", spec.bound_cap);
    let mut du_h1 = Tracker::upper("du in H1", f64::INFINITY);
    let mut lip_u = Tracker::upper("Lipschitz u", spec.lipschitz_cap);
    let mut lip_du = Tracker::upper("Lipschitz du", spec.lipschitz_cap);
    let mut lip_ut = Tracker::upper("Lipschitz u1*theta_bar", spec.lipschitz_cap);
    let mut lip_dut = Tracker::upper("Lipschitz du1*theta_bar", spec.lipschitz_cap);
    let mut iv_a = Tracker::upper("du1*(1+|theta_bar|) bounded", spec.bound_cap);
    let mut iv_b = Tracker::upper("du1*theta_bar*ln S/(1+|X|) bounded", spec.bound_cap);
    let mut growth = Tracker::upper("linear growth F,B", spec.growth_cap);
    let mut nonneg = Tracker::lower("L >= 0", 0.0);
    let mut iff = Tracker::lower("L = 0 iff X[0] = 0", 0.0);

    for s in &samples {
        let e = evaluate(model, k, s)?;
        let x0 = s.x.values()[0];
        let wit = |value: f64, detail: String| Witness {
            t: s.t,
            spot: s.spot,
            log_moneyness: e.lam,
            x_front: x0,
            l: e.l,
            value,
            detail,
        };

        // (i): |u⁽ⁱ⁾[x]| (1 + |ln S| + |I(X)[x]| + |θ̄|) ≤ C
        let prefix = integrate_prefix(&s.x);
        let ln_s = s.spot.ln().abs();
        let mut c_i = 0.0f64;
        let mut at = (0, 0);
        for (i, ui) in e.u.iter().enumerate() {
            for (node, (&v, &j)) in ui.values().iter().zip(prefix.values()).enumerate() {
                let c = v.abs() * (1.0 + ln_s + j.abs() + e.theta_bar.abs());
                if !(c <= c_i) {
                    c_i = c;
                    at = (i + 1, node);
                }
            }
        }
        bound.observe(c_i, None, || wit(c_i, format!("component {} node {}", at.0, at.1)));

        // (ii)
        let du_norm: f64 = e.du.iter().map(h1_norm).fold(0.0, f64::max);
        du_h1.observe(du_norm, Some(!du_norm.is_finite()), || wit(du_norm, "max H1 norm of du".into()));

        // weighted du1 bounds, with |·| read as the H1 norm throughout
        let du1 = h1_norm(&e.du[0]);
        let a = du1 * (1.0 + e.theta_bar.abs());
        iv_a.observe(a, None, || wit(a, String::new()));
        let b = du1 * (e.theta_bar * s.spot.ln()).abs() / (1.0 + h1_norm(&s.x));
        iv_b.observe(b, None, || wit(b, String::new()));

        // linear growth of the coefficients
        let state = MarketState::new(s.t, s.spot, s.x.clone())?;
        let coeffs = compute_coefficients(model, k, &state)?;
        let g = coefficient_h1_size(&coeffs) / (1.0 + h1_norm(&s.x));
        growth.observe(g, None, || wit(g, "(|F| + sum |B|) / (1 + |X|)".into()));

        // (iii): difference quotients over a small ball
        let level = s.x.values().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
        let dir = unit_direction(&mut rng, grid)?;
        let dx_size = spec.perturbation * level;
        let ds = s.spot * spec.perturbation * (2.0 * rng.uniform() - 1.0);
        let moved = Sample { t: s.t, spot: s.spot + ds, x: s.x.axpby(1.0, &scaled(&dir, dx_size), 1.0)? };
        let e2 = evaluate(model, k, &moved)?;
        let denom = ds.abs() + dx_size;
        let max_diff = |a: &[Curve], b: &[Curve]| a.iter().zip(b).map(|(p, q)| h1_diff(p, q)).fold(0.0, f64::max);
        let r = max_diff(&e.u, &e2.u) / denom;
        lip_u.observe(r, None, || wit(r, String::new()));
        let r = max_diff(&e.du, &e2.du) / denom;
        lip_du.observe(r, None, || wit(r, String::new()));
        let r = h1_diff(&scaled(&e.u[0], e.theta_bar), &scaled(&e2.u[0], e2.theta_bar)) / denom;
        lip_ut.observe(r, None, || wit(r, String::new()));
        let r = h1_diff(&scaled(&e.du[0], e.theta_bar), &scaled(&e2.du[0], e2.theta_bar)) / denom;
        lip_dut.observe(r, None, || wit(r, String::new()));

        // sign of the discriminant
        if x0 >= 0.0 {
            let tol = 1e-14 * (1.0 + x0);
            nonneg.observe(e.l, Some(e.l < -tol), || wit(e.l, "X[0] >= 0 but L < 0".into()));
            let (bad, detail) = if x0 > 0.0 {
                (e.l <= spec.tol_rel * x0, "X[0] > 0 but L <= tol_rel * X[0]")
            } else {
                (e.l.abs() > tol, "X[0] = 0 but L != 0")
            };
            let margin = if x0 > 0.0 { e.l / x0 } else { -e.l.abs() };
            iff.observe(margin, Some(bad), || wit(e.l, detail.into()));
        }
    }

    let items: Vec<ItemResult> = [bound, du_h1, lip_u, lip_du, lip_ut, lip_dut, iv_a, iv_b, growth, nonneg, iff]
        .into_iter()
        .map(Tracker::finish)
        .collect();
    let pass = items.iter().all(|i| i.pass);
    Ok(ValidationReport { n_samples: samples.len(), items, pass })
}
