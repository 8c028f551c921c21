//! Total implied variance `ξ_t^T = ∫₀^{T−t} X_t` read off the curve, the same
//! quantity integrated directly from its scalar SDE, and positivity checks.

use std::io::Write;

use serde::Serialize;

use crate::curve::{integrate_prefix, interpolate};
use crate::dynamics::{MarketState, PathRecord};
use crate::error::{Error, Result};
use crate::volvol::{compute_theta, discriminant, eval_u, theta_bar_from, VolVol};

const TIME_TOL: f64 = 1e-9;

/// `(t, ξ_t^T)` samples along one path for a fixed maturity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiSeries {
    pub maturity: f64,
    pub samples: Vec<(f64, f64)>,
}

impl XiSeries {
    /// Columns `t,T,xi,implied_vol`; the volatility is blank at `t = T` and
    /// for negative `ξ`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "T", "xi", "implied_vol"])?;
        for &(t, xi) in &self.samples {
            let vol = implied_vol(xi, t, self.maturity).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([t.to_string(), self.maturity.to_string(), xi.to_string(), vol])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }
}

fn check_maturity(path: &PathRecord, maturity: f64) -> Result<f64> {
    let horizon = path
        .snapshots
        .first()
        .ok_or(Error::MissingData("curve snapshots"))?
        .x
        .grid()
        .horizon();
    if !(maturity > 0.0 && maturity <= horizon * (1.0 + TIME_TOL)) {
        return Err(Error::InvalidArgument(format!("maturity {maturity} outside (0, {horizon}]")));
    }
    Ok(horizon)
}

/// `σ̂ = sqrt(ξ / (T − t))`.
pub fn implied_vol(xi: f64, t: f64, maturity: f64) -> Result<f64> {
    if !(maturity > t) {
        return Err(Error::NonPositiveTimeToMaturity { t, maturity });
    }
    if xi < 0.0 {
        return Err(Error::NegativeXi { xi, t });
    }
    Ok((xi / (maturity - t)).sqrt())
}

/// `ξ_t^T = I(X_t)[T − t]` at each snapshot with `t ≤ T`.
pub fn xi_from_curve(path: &PathRecord, maturity: f64) -> Result<XiSeries> {
    check_maturity(path, maturity)?;
    let samples = path
        .snapshots
        .iter()
        .filter(|s| s.t <= maturity + TIME_TOL * maturity)
        .map(|s| {
            let prefix = integrate_prefix(&s.x);
            (s.t, interpolate(prefix.values(), s.x.grid().dx(), (maturity - s.t).max(0.0)))
        })
        .collect();
    Ok(XiSeries { maturity, samples })
}

/// `ξ_t^{T1,T2} = I(X_t)[T2 − t] − I(X_t)[T1]` for `t ≤ T2 − T1`.
pub fn xi_slice(path: &PathRecord, t1: f64, t2: f64) -> Result<XiSeries> {
    if !(t1 >= 0.0 && t1 < t2) {
        return Err(Error::InvalidArgument(format!("slice needs 0 <= T1 < T2, got [{t1}, {t2}]")));
    }
    check_maturity(path, t2)?;
    let end = t2 - t1;
    let samples = path
        .snapshots
        .iter()
        .filter(|s| s.t <= end + TIME_TOL * end.max(1.0))
        .map(|s| {
            let prefix = integrate_prefix(&s.x);
            let dx = s.x.grid().dx();
            let value = if (s.t - end).abs() <= TIME_TOL * end.max(1.0) {
                0.0
            } else {
                interpolate(prefix.values(), dx, t2 - s.t) - interpolate(prefix.values(), dx, t1)
            };
            (s.t, value)
        })
        .collect();
    Ok(XiSeries { maturity: t2, samples })
}

/// Euler integration of the scalar `ξ^T` SDE along a recorded path, driven by
/// the path's own increments, with `v = u(t, K, S_t, X_t)[T − t]`:
///
/// ```text
/// dξ = ξ((1 + ¼ξ)|v|² − θ v⁽¹⁾) dt − (θ + v⁽¹⁾λ)² dt − Σ_{j≥2} (v⁽ʲ⁾λ)² dt + 2ξ v·dW
/// ```
///
/// Needs a snapshot at every step.
pub fn simulate_xi_direct(path: &PathRecord, model: &dyn VolVol, maturity: f64) -> Result<XiSeries> {
    check_maturity(path, maturity)?;
    if !path.has_every_step() {
        return Err(Error::MissingData("a curve snapshot at every step"));
    }
    let m = model.dim();
    if path.m != m || path.increments.len() != path.n_steps() * m {
        return Err(Error::InvalidArgument("increments do not match the model dimension".into()));
    }
    let first = &path.snapshots[0];
    let mut xi = interpolate(integrate_prefix(&first.x).values(), first.x.grid().dx(), maturity);
    let mut samples = vec![(first.t, xi)];
    for (n, snap) in path.snapshots.iter().enumerate().take(path.n_steps()) {
        let next_t = path.snapshots[n + 1].t;
        if next_t > maturity + TIME_TOL * maturity {
            break;
        }
        let u = eval_u(model, snap.t, path.strike, snap.spot, &snap.x)?;
        let lam = (path.strike / snap.spot).ln();
        let u0: Vec<f64> = u.iter().map(|c| c.values()[0]).collect();
        let theta = theta_bar_from(discriminant(snap.x.values()[0], &u0, lam), u0[0], lam);
        let y = (maturity - snap.t).max(0.0);
        let v: Vec<f64> = u.iter().map(|c| c.eval(y)).collect();
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let cross: f64 = v.iter().skip(1).map(|a| (a * lam).powi(2)).sum();
        let dw = &path.increments[n * m..(n + 1) * m];
        let noise: f64 = v.iter().zip(dw).map(|(a, w)| a * w).sum();
        let dt = next_t - snap.t;
        xi += (xi * ((1.0 + 0.25 * xi) * vv - theta * v[0]) - (theta + v[0] * lam).powi(2) - cross) * dt
            + 2.0 * xi * noise;
        if !xi.is_finite() {
            return Err(Error::NumericalBlowup { step: n, what: "direct xi" });
        }
        samples.push((next_t, xi));
    }
    Ok(XiSeries { maturity, samples })
}

/// `X[0] − [(θ + u⁽¹⁾[0]λ)² + Σ_{j≥2} (u⁽ʲ⁾[0]λ)²]`, zero up to rounding
/// whenever `L ≥ 0`.
pub fn feedback_residual(model: &dyn VolVol, strike: f64, state: &MarketState) -> Result<f64> {
    let theta = compute_theta(model, state.t, strike, state.spot, &state.x)?;
    let u = eval_u(model, state.t, strike, state.spot, &state.x)?;
    let lam = (strike / state.spot).ln();
    let first = theta + u[0].values()[0] * lam;
    let rest: f64 = u.iter().skip(1).map(|c| (c.values()[0] * lam).powi(2)).sum();
    Ok(state.x.values()[0] - (first * first + rest))
}

/// Where a positivity statistic attained its minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PositivityWitness {
    pub path: usize,
    pub t: f64,
    /// Maturity `T` for `ξ` samples, node position `x` for curve samples.
    pub at: f64,
    pub value: f64,
}

/// Counts of `ξ_t^T < −δ`, `X_t[x] < −δ` and `S_t ≤ 0` over every
/// `(path, t, T)` and `(path, t, x)` sample. Merging is order-sensitive only
/// in which of two equal minima is kept, and callers merge in path order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityTally {
    pub delta: f64,
    pub xi_samples: u64,
    pub xi_below_delta: u64,
    pub min_xi: Option<PositivityWitness>,
    pub x_samples: u64,
    pub x_below_delta: u64,
    pub min_x: Option<PositivityWitness>,
    pub spot_samples: u64,
    pub spot_nonpositive: u64,
}

impl PositivityTally {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            xi_samples: 0,
            xi_below_delta: 0,
            min_xi: None,
            x_samples: 0,
            x_below_delta: 0,
            min_x: None,
            spot_samples: 0,
            spot_nonpositive: 0,
        }
    }

    /// `δ = c · sup x₀ · sqrt(dt)`.
    pub fn slack(coefficient: f64, sup_x0: f64, dt: f64) -> f64 {
        coefficient * sup_x0 * dt.sqrt()
    }

    fn keep_min(slot: &mut Option<PositivityWitness>, w: PositivityWitness) {
        if slot.is_none_or(|cur| w.value < cur.value) {
            *slot = Some(w);
        }
    }

    /// Record one state. `prefix` is `I(X_t)`; `ξ` is sampled at every grid
    /// maturity `T = t + k·dx ≤ T*`, `k ≥ 1`.
    pub fn observe(&mut self, path: usize, t: f64, spot: f64, x: &[f64], prefix: &[f64], dx: f64, horizon: f64) {
        self.spot_samples += 1;
        if !(spot > 0.0) {
            self.spot_nonpositive += 1;
        }
        let k_max = (((horizon - t) / dx + TIME_TOL).floor().max(0.0) as usize).min(prefix.len() - 1);
        let mut lo = (0, f64::INFINITY);
        for (k, &v) in prefix.iter().enumerate().take(k_max + 1).skip(1) {
            if v < -self.delta {
                self.xi_below_delta += 1;
            }
            if v < lo.1 {
                lo = (k, v);
            }
        }
        self.xi_samples += k_max as u64;
        if k_max > 0 {
            Self::keep_min(&mut self.min_xi, PositivityWitness { path, t, at: t + lo.0 as f64 * dx, value: lo.1 });
        }
        let mut lo = (0, f64::INFINITY);
        for (k, &v) in x.iter().enumerate() {
            if v < -self.delta {
                self.x_below_delta += 1;
            }
            if v < lo.1 {
                lo = (k, v);
            }
        }
        self.x_samples += x.len() as u64;
        Self::keep_min(&mut self.min_x, PositivityWitness { path, t, at: lo.0 as f64 * dx, value: lo.1 });
    }

    pub fn merge(&mut self, other: &PositivityTally) {
        self.xi_samples += other.xi_samples;
        self.xi_below_delta += other.xi_below_delta;
        self.x_samples += other.x_samples;
        self.x_below_delta += other.x_below_delta;
        self.spot_samples += other.spot_samples;
        self.spot_nonpositive += other.spot_nonpositive;
        if let Some(w) = other.min_xi {
            Self::keep_min(&mut self.min_xi, w);
        }
        if let Some(w) = other.min_x {
            Self::keep_min(&mut self.min_x, w);
        }
    }

    /// No sample crossed `−δ` and every stock price was positive.
    pub fn pass(&self) -> bool {
        self.xi_below_delta == 0 && self.x_below_delta == 0 && self.spot_nonpositive == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{Curve, Grid};
    use crate::dynamics::{simulate_path, Recording};
    use crate::engine::{NoiseStream, SimParams, X0Spec};
    use crate::volvol::{EtaChoice, Family1, Family2, FamilySpec, ZeroVolVol};
    use approx::assert_abs_diff_eq;

    fn zero_path(x0: X0Spec, n_nodes: usize) -> PathRecord {
        let p = SimParams { n_nodes, x0, n_paths: 1, ..SimParams::default() };
        let x = p.build_x0().unwrap();
        simulate_path(&p, &ZeroVolVol::new(1), &x, 100.0, &mut NoiseStream::for_path(2, 0), Recording::EveryStep)
            .unwrap()
    }

    #[test]
    fn flat_transport_gives_linear_variance() {
        let path = zero_path(X0Spec::Flat(0.09), 65);
        let s = xi_from_curve(&path, 0.75).unwrap();
        for &(t, xi) in &s.samples {
            assert_abs_diff_eq!(xi, 0.09 * (0.75 - t), epsilon = 1e-14);
            if t < 0.75 {
                assert_abs_diff_eq!(implied_vol(xi, t, 0.75).unwrap(), 0.3, epsilon = 1e-12);
            }
        }
        assert_eq!(s.samples.last().unwrap(), &(0.75, 0.0));
    }

    #[test]
    fn slices() {
        let path = zero_path(X0Spec::Flat(0.04), 33);
        let whole = xi_from_curve(&path, 0.5).unwrap();
        let slice = xi_slice(&path, 0.0, 0.5).unwrap();
        assert_eq!(whole, slice);
        let s = xi_slice(&path, 0.25, 0.75).unwrap();
        for &(t, v) in &s.samples {
            assert_abs_diff_eq!(v, 0.04 * (0.75 - t - 0.25), epsilon = 1e-14);
        }
        assert_eq!(s.samples.last().unwrap().1, 0.0);
        assert!(xi_slice(&path, 0.5, 0.5).is_err());
    }

    #[test]
    fn additivity_on_grid_maturities() {
        let nodes: Vec<f64> = (0..33).map(|k| 0.03 + 0.001 * (k as f64).sin().abs()).collect();
        let path = zero_path(X0Spec::Nodes(nodes), 33);
        let a = xi_from_curve(&path, 0.25).unwrap();
        let b = xi_from_curve(&path, 0.75).unwrap();
        for (sa, sb) in a.samples.iter().zip(&b.samples) {
            let snap = path.snapshots.iter().find(|s| s.t == sa.0).unwrap();
            let j = integrate_prefix(&snap.x);
            let dx = snap.x.grid().dx();
            let direct = interpolate(j.values(), dx, 0.75 - sa.0) - interpolate(j.values(), dx, 0.25 - sa.0);
            assert_abs_diff_eq!(sb.1 - sa.1, direct, epsilon = 1e-15);
        }
    }

    #[test]
    fn implied_vol_domain() {
        assert!(matches!(implied_vol(0.1, 1.0, 1.0), Err(Error::NonPositiveTimeToMaturity { .. })));
        assert!(matches!(implied_vol(-0.1, 0.0, 1.0), Err(Error::NegativeXi { .. })));
        assert_eq!(implied_vol(0.0, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn direct_xi_without_volvol_tracks_the_curve() {
        let path = zero_path(X0Spec::Flat(0.04), 65);
        let d = simulate_xi_direct(&path, &ZeroVolVol::new(1), 1.0).unwrap();
        let c = xi_from_curve(&path, 1.0).unwrap();
        assert_eq!(d.samples.len(), c.samples.len());
        for (a, b) in d.samples.iter().zip(&c.samples) {
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-14);
        }
    }

    #[test]
    fn direct_xi_needs_every_step() {
        let p = SimParams { n_nodes: 17, n_paths: 1, ..SimParams::default() };
        let x = p.build_x0().unwrap();
        let path = simulate_path(&p, &ZeroVolVol::new(1), &x, 100.0, &mut NoiseStream::for_path(1, 0), Recording::SnapshotTimes)
            .unwrap();
        assert!(matches!(simulate_xi_direct(&path, &ZeroVolVol::new(1), 1.0), Err(Error::MissingData(_))));
    }

    #[test]
    fn family1_discrepancy_shrinks() {
        let model = Family1::standard(2, 1.0, EtaChoice::Rational);
        let disc = |n_nodes: usize, seed_path: u64| -> f64 {
            let p = SimParams {
                n_nodes,
                n_paths: 1,
                family: FamilySpec::Family1 { m: 2, beta: 1.0, eta2: EtaChoice::Rational },
                x0: X0Spec::Flat(0.04),
                ..SimParams::default()
            };
            let x = p.build_x0().unwrap();
            let path = simulate_path(&p, &model, &x, 100.0, &mut NoiseStream::for_path(5, seed_path), Recording::EveryStep)
                .unwrap();
            let d = simulate_xi_direct(&path, &model, 1.0).unwrap();
            let c = xi_from_curve(&path, 1.0).unwrap();
            d.values().zip(c.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let coarse: f64 = (0..8).map(|i| disc(33, i)).sum();
        let fine: f64 = (0..8).map(|i| disc(129, i)).sum();
        assert!(fine < coarse, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn feedback_residual_is_rounding_level() {
        let g = Grid::new(9, 1.0).unwrap();
        let model = Family2::standard(2, 1.0, 1e3, EtaChoice::Rational);
        for (spot, level) in [(90.0, 0.04), (100.0, 0.2), (250.0, 0.01)] {
            let st = MarketState::new(0.0, spot, Curve::constant(g, level).unwrap()).unwrap();
            assert!(feedback_residual(&model, 100.0, &st).unwrap().abs() < 1e-15);
        }
        let st = MarketState::new(0.0, 80.0, Curve::constant(g, 0.04).unwrap()).unwrap();
        assert!(feedback_residual(&ZeroVolVol::new(1), 100.0, &st).unwrap().abs() <= f64::EPSILON * 0.04);
        let adversarial = Family2::standard(3, 1.0, 1e3, EtaChoice::TwoSqrt);
        let st = MarketState::new(0.0, 100.0 / 1f64.exp(), Curve::constant(g, 0.04).unwrap()).unwrap();
        assert!(matches!(feedback_residual(&adversarial, 100.0, &st), Err(Error::DegenerateRoot(_))));
    }

    #[test]
    fn tally_counts_and_merges() {
        let mut a = PositivityTally::new(0.01);
        let x = [0.1, -0.05, 0.1, 0.1, 0.1];
        let prefix = [0.0, 0.0125, 0.025, 0.05, 0.075];
        a.observe(0, 0.0, 1.0, &x, &prefix, 0.25, 1.0);
        assert_eq!((a.xi_samples, a.xi_below_delta), (4, 0));
        assert_eq!((a.x_samples, a.x_below_delta), (5, 1));
        assert_eq!(a.min_x.unwrap().at, 0.25);
        let mut b = PositivityTally::new(0.01);
        b.observe(1, 0.5, 2.0, &x, &[0.0, -0.02, 0.0, 0.0, 0.0], 0.25, 1.0);
        assert_eq!(b.xi_samples, 2);
        assert_eq!(b.xi_below_delta, 1);
        a.merge(&b);
        assert_eq!(a.xi_below_delta, 1);
        assert_eq!(a.min_xi.unwrap().path, 1);
        assert!(!a.pass());
    }

    #[test]
    fn xi_csv_layout() {
        let s = XiSeries { maturity: 1.0, samples: vec![(0.0, 0.04), (1.0, 0.0)] };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,T,xi,implied_vol\n0,1,0.04,0.2\n1,1,0,\n");
    }
}
