//! Coefficients of the curve/stock system and the regularized mild-Euler
//! stepper.
//!
//! With `J = I(X)`, `λ = ln(K/S)`, `⟨·,·⟩` the scalar product in `ℝᵐ` and
//! `ℓ = (1, 0, …, 0)`:
//!
//! ```text
//! F = J (½ X |u|² + ½ ⟨u, ∂ₓu⟩ J + 2 ⟨u, ∂ₓu⟩ − θ̄ ∂ₓu⁽¹⁾)
//!     + X (|u|² − θ̄ u⁽¹⁾) − 2 ⟨θ̄ ℓ + u λ, ∂ₓu λ⟩
//! B⁽ⁱ⁾ = 2 X u⁽ⁱ⁾ + 2 ∂ₓu⁽ⁱ⁾ J
//! G = u⁽¹⁾[0] λ,   L = X[0] − Σ_{j≥2} (u⁽ʲ⁾[0] λ)²
//! ```
//!
//! One step of size `dt` adds drift and noise, then transports:
//! `X⁺ = e^{dt A}(X + F dt + Σᵢ B⁽ⁱ⁾ dW⁽ⁱ⁾)`. The stock moves in log space with
//! `θ_ε = sqrt(|L| ∨ ε) − G`, so it stays positive.

use std::io::Write;

use serde::Serialize;

use crate::curve::{h1_norm_raw, prefix_integral_into, shift_in_place, Curve, CurveJson};
use crate::engine::SimParams;
use crate::error::{Error, Result};
use crate::volvol::{check_spot, theta_bar_from, StateView, VolVol};

/// `(t, S_t, X_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    pub t: f64,
    pub spot: f64,
    pub x: Curve,
}

impl MarketState {
    pub fn new(t: f64, spot: f64, x: Curve) -> Result<Self> {
        check_spot(spot)?;
        Ok(Self { t, spot, x })
    }
}

/// `F`, `B⁽¹⁾…B⁽ᵐ⁾`, `G` and `L` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub drift: Curve,
    pub diffusion: Vec<Curve>,
    pub g: f64,
    pub l: f64,
}

/// Occupancy of the `ε`-floor along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoppingDiagnostics {
    /// First time at which `L < ε` was used for a step.
    pub first_floor_hit: Option<f64>,
    pub floor_steps: usize,
    pub min_l: f64,
}

impl Default for StoppingDiagnostics {
    fn default() -> Self {
        Self { first_floor_hit: None, floor_steps: 0, min_l: f64::INFINITY }
    }
}

impl StoppingDiagnostics {
    /// Record the `L` that drove a step taken at time `t`.
    pub fn record_step(&mut self, t: f64, l: f64, epsilon: f64) {
        self.min_l = self.min_l.min(l);
        if l < epsilon {
            self.floor_steps += 1;
            self.first_floor_hit.get_or_insert(t);
        }
    }

    /// Record an `L` observed without stepping (the terminal state).
    pub fn record_state(&mut self, l: f64) {
        self.min_l = self.min_l.min(l);
    }
}

/// Scalars evaluated at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateScalars {
    pub l: f64,
    pub g: f64,
    pub theta_bar: f64,
    pub log_moneyness: f64,
}

/// Buffers reused across steps.
#[derive(Debug, Clone)]
struct Workspace {
    n: usize,
    m: usize,
    prefix: Vec<f64>,
    u: Vec<f64>,
    du: Vec<f64>,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            prefix: vec![0.0; n],
            u: vec![0.0; m * n],
            du: vec![0.0; m * n],
            drift: vec![0.0; n],
            diffusion: vec![0.0; m * n],
        }
    }
}

/// Evaluate `u`, `∂ₓu`, `F` (with `θ̄`) and `B` into the workspace.
fn fill_coefficients(
    model: &dyn VolVol,
    strike: f64,
    t: f64,
    spot: f64,
    x: &[f64],
    dx: f64,
    ws: &mut Workspace,
) -> Result<StateScalars> {
    check_spot(spot)?;
    let (n, m) = (ws.n, ws.m);
    prefix_integral_into(x, dx, &mut ws.prefix);
    let lam = (strike / spot).ln();
    if model.is_zero() {
        ws.drift.fill(0.0);
        ws.diffusion.fill(0.0);
        let l = x[0];
        return Ok(StateScalars { l, g: 0.0, theta_bar: l.abs().sqrt(), log_moneyness: lam });
    }
    let view = StateView { t, strike, spot, x, prefix: &ws.prefix, dx };
    model.fill(&view, &mut ws.u, &mut ws.du)?;

    let mut l = x[0];
    for j in 1..m {
        let a = ws.u[j * n] * lam;
        l -= a * a;
    }
    let g = ws.u[0] * lam;
    let theta_bar = theta_bar_from(l, ws.u[0], lam);

    for k in 0..n {
        let (mut uu, mut udu) = (0.0, 0.0);
        for i in 0..m {
            let (a, b) = (ws.u[i * n + k], ws.du[i * n + k]);
            uu += a * a;
            udu += a * b;
        }
        let (xk, jk) = (x[k], ws.prefix[k]);
        let (u1, du1) = (ws.u[k], ws.du[k]);
        ws.drift[k] = jk * (0.5 * xk * uu + 0.5 * udu * jk + 2.0 * udu - theta_bar * du1)
            + xk * (uu - theta_bar * u1)
            - 2.0 * lam * (theta_bar * du1 + lam * udu);
        for i in 0..m {
            ws.diffusion[i * n + k] = 2.0 * xk * ws.u[i * n + k] + 2.0 * ws.du[i * n + k] * jk;
        }
    }
    Ok(StateScalars { l, g, theta_bar, log_moneyness: lam })
}

/// `F`, `B`, `G`, `L` at a state; `F` uses `θ̄` (the absolute-value root).
pub fn compute_coefficients(model: &dyn VolVol, strike: f64, state: &MarketState) -> Result<Coefficients> {
    let grid = *state.x.grid();
    let mut ws = Workspace::new(grid.n_nodes(), model.dim());
    let s = fill_coefficients(model, strike, state.t, state.spot, state.x.values(), grid.dx(), &mut ws)?;
    let n = ws.n;
    Ok(Coefficients {
        drift: Curve::new(grid, ws.drift)?,
        diffusion: ws
            .diffusion
            .chunks(n)
            .map(|c| Curve::new(grid, c.to_vec()))
            .collect::<Result<_>>()?,
        g: s.g,
        l: s.l,
    })
}

/// Regularized stock volatility `sqrt(|L| ∨ ε) − G`.
pub fn floored_theta(l: f64, g: f64, epsilon: f64) -> f64 {
    l.abs().max(epsilon).sqrt() - g
}

/// Reusable stepper for one model and strike.
#[derive(Debug)]
pub struct Stepper<'m> {
    model: &'m dyn VolVol,
    strike: f64,
    epsilon: f64,
    ws: Workspace,
    scalars: Option<StateScalars>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m dyn VolVol, strike: f64, epsilon: f64, n_nodes: usize) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon floor must be positive, got {epsilon}")));
        }
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(Error::InvalidArgument(format!("strike must be positive, got {strike}")));
        }
        Ok(Self {
            model,
            strike,
            epsilon,
            ws: Workspace::new(n_nodes, model.dim()),
            scalars: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.ws.m
    }

    /// Evaluate coefficients at `state`. Must precede [`Stepper::apply`].
    pub fn evaluate(&mut self, state: &MarketState) -> Result<StateScalars> {
        let dx = state.x.grid().dx();
        let s = fill_coefficients(self.model, self.strike, state.t, state.spot, state.x.values(), dx, &mut self.ws)?;
        self.scalars = Some(s);
        Ok(s)
    }

    /// `I(X)` of the last evaluated state.
    pub fn prefix(&self) -> &[f64] {
        &self.ws.prefix
    }

    /// `u` of the last evaluated state, row-major by component.
    pub fn loadings(&self) -> &[f64] {
        &self.ws.u
    }

    /// Advance the last evaluated state in place by one mild-Euler step.
    pub fn apply(&mut self, state: &mut MarketState, dt: f64, dw: &[f64], step: usize) -> Result<()> {
        let s = self
            .scalars
            .take()
            .ok_or(Error::InvalidArgument("apply called without evaluate".into()))?;
        let (n, m) = (self.ws.n, self.ws.m);
        let dx = state.x.grid().dx();
        let x = state.x.values_mut();
        if !self.model.is_zero() {
            for k in 0..n {
                let mut y = x[k] + self.ws.drift[k] * dt;
                for i in 0..m {
                    y += self.ws.diffusion[i * n + k] * dw[i];
                }
                if !y.is_finite() {
                    return Err(Error::NumericalBlowup { step, what: "curve value" });
                }
                x[k] = y;
            }
        }
        shift_in_place(x, dx, dt);
        let theta = floored_theta(s.l, s.g, self.epsilon);
        let spot = state.spot * (-0.5 * theta * theta * dt + theta * dw[0]).exp();
        if !(spot.is_finite() && spot > 0.0) {
            return Err(Error::NumericalBlowup { step, what: "stock price" });
        }
        state.spot = spot;
        state.t += dt;
        Ok(())
    }

    /// Evaluate then apply.
    pub fn advance(&mut self, state: &mut MarketState, dt: f64, dw: &[f64], step: usize) -> Result<StateScalars> {
        let s = self.evaluate(state)?;
        self.apply(state, dt, dw, step)?;
        Ok(s)
    }
}

/// One step from `state`, returning the new state and the step's `L`
/// (`floor_hit` when `L < ε`).
pub fn step(
    state: &MarketState,
    model: &dyn VolVol,
    strike: f64,
    dt: f64,
    dw: &[f64],
    epsilon: f64,
) -> Result<(MarketState, StepDiagnostics)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if dw.len() != model.dim() {
        return Err(Error::InvalidArgument(format!(
            "{} Brownian increments for a {}-dimensional model",
            dw.len(),
            model.dim()
        )));
    }
    let mut stepper = Stepper::new(model, strike, epsilon, state.x.grid().n_nodes())?;
    let mut next = state.clone();
    let s = stepper.advance(&mut next, dt, dw, 0)?;
    Ok((next, StepDiagnostics { l: s.l, floor_hit: s.l < epsilon }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub l: f64,
    pub floor_hit: bool,
}

/// Source of Brownian increments, `m` per step.
pub trait NoiseSource {
    fn fill(&mut self, dt: f64, out: &mut [f64]);
}

/// Increments fixed in advance, consumed in order (`m` per step).
#[derive(Debug, Clone)]
pub struct PrecomputedNoise {
    increments: Vec<f64>,
    pos: usize,
}

impl PrecomputedNoise {
    pub fn new(increments: Vec<f64>) -> Self {
        Self { increments, pos: 0 }
    }
}

impl NoiseSource for PrecomputedNoise {
    fn fill(&mut self, _dt: f64, out: &mut [f64]) {
        let end = self.pos + out.len();
        out.copy_from_slice(&self.increments[self.pos..end]);
        self.pos = end;
    }
}

/// Callbacks fired while a path is driven.
pub trait PathObserver {
    /// Called for every state `n = 0..=n_steps` after its coefficients are
    /// evaluated; `prefix` is `I(X_t)`.
    fn on_state(&mut self, step: usize, state: &MarketState, scalars: &StateScalars, prefix: &[f64], loadings: &[f64]);

    fn on_increments(&mut self, _step: usize, _dw: &[f64]) {}
}

/// Drive one path for `n_steps` steps of size `dt`.
#[allow(clippy::too_many_arguments)]
pub fn drive_path(
    model: &dyn VolVol,
    strike: f64,
    epsilon: f64,
    dt: f64,
    n_steps: usize,
    initial: MarketState,
    noise: &mut dyn NoiseSource,
    observer: &mut dyn PathObserver,
) -> Result<MarketState> {
    let mut stepper = Stepper::new(model, strike, epsilon, initial.x.grid().n_nodes())?;
    let mut state = initial;
    let mut dw = vec![0.0; model.dim()];
    for n in 0..n_steps {
        let s = stepper.evaluate(&state)?;
        observer.on_state(n, &state, &s, stepper.prefix(), stepper.loadings());
        noise.fill(dt, &mut dw);
        observer.on_increments(n, &dw);
        stepper.apply(&mut state, dt, &dw, n)?;
    }
    let s = stepper.evaluate(&state)?;
    observer.on_state(n_steps, &state, &s, stepper.prefix(), stepper.loadings());
    Ok(state)
}

/// A curve recorded at a given step.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub spot: f64,
    pub x: Curve,
}

#[derive(Serialize)]
struct SnapshotJson<'a> {
    step: usize,
    t: f64,
    spot: f64,
    curve: &'a CurveJson,
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub strike: f64,
    pub dt: f64,
    pub m: usize,
    pub epsilon_floor: f64,
    /// `t_n` for `n = 0..=n_steps`.
    pub times: Vec<f64>,
    pub spot: Vec<f64>,
    pub l: Vec<f64>,
    pub theta_bar: Vec<f64>,
    pub x_front: Vec<f64>,
    pub maturities: Vec<f64>,
    /// `ξ_t^T = I(X_t)[T − t]` per maturity and state; NaN once `t > T`.
    pub xi: Vec<Vec<f64>>,
    /// Brownian increments, `m` per step.
    pub increments: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: StoppingDiagnostics,
}

impl PathRecord {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// True when a snapshot exists for every state.
    pub fn has_every_step(&self) -> bool {
        self.snapshots.len() == self.times.len()
            && self.snapshots.iter().enumerate().all(|(k, s)| s.step == k)
    }

    /// CSV export: `t,S,L,theta,X0,xi_T=...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string(), "S".into(), "L".into(), "theta".into(), "X0".into()];
        header.extend(self.maturities.iter().map(|m| format!("xi_T={m}")));
        w.write_record(&header)?;
        for n in 0..self.times.len() {
            let mut row = vec![
                self.times[n].to_string(),
                self.spot[n].to_string(),
                self.l[n].to_string(),
                self.theta_bar[n].to_string(),
                self.x_front[n].to_string(),
            ];
            row.extend(self.xi.iter().map(|xi| if xi[n].is_nan() { String::new() } else { xi[n].to_string() }));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON array of recorded curves.
    pub fn snapshots_json(&self) -> Result<String> {
        let curves: Vec<CurveJson> = self.snapshots.iter().map(|s| s.x.to_json()).collect();
        let items: Vec<SnapshotJson<'_>> = self
            .snapshots
            .iter()
            .zip(&curves)
            .map(|(s, c)| SnapshotJson { step: s.step, t: s.t, spot: s.spot, curve: c })
            .collect();
        Ok(serde_json::to_string(&items)?)
    }
}

/// Which curves a [`PathRecord`] keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Recording {
    /// Only at the configured snapshot times.
    SnapshotTimes,
    /// At every step (needed for direct `ξ` integration).
    EveryStep,
}

/// Value of the prefix integral at `y`, linear between nodes.
pub(crate) fn prefix_at(prefix: &[f64], dx: f64, y: f64) -> f64 {
    crate::curve::interpolate(prefix, dx, y)
}

struct Recorder<'a> {
    record: PathRecord,
    snapshot_steps: Vec<usize>,
    every_step: bool,
    dx: f64,
    horizon: f64,
    _params: &'a SimParams,
}

impl PathObserver for Recorder<'_> {
    fn on_state(&mut self, step: usize, state: &MarketState, s: &StateScalars, prefix: &[f64], _u: &[f64]) {
        let r = &mut self.record;
        r.times.push(state.t);
        r.spot.push(state.spot);
        r.l.push(s.l);
        r.theta_bar.push(s.theta_bar);
        r.x_front.push(state.x.values()[0]);
        for (mi, &maturity) in r.maturities.iter().enumerate() {
            let y = maturity - state.t;
            let v = if y < -1e-12 * self.horizon { f64::NAN } else { prefix_at(prefix, self.dx, y.max(0.0)) };
            r.xi[mi].push(v);
        }
        if step < r.n_steps_planned() {
            r.diagnostics.record_step(state.t, s.l, r.epsilon_floor);
        } else {
            r.diagnostics.record_state(s.l);
        }
        if self.every_step || self.snapshot_steps.contains(&step) {
            r.snapshots.push(Snapshot { step, t: state.t, spot: state.spot, x: state.x.clone() });
        }
    }

    fn on_increments(&mut self, _step: usize, dw: &[f64]) {
        self.record.increments.extend_from_slice(dw);
    }
}

impl PathRecord {
    fn n_steps_planned(&self) -> usize {
        self.increments.capacity() / self.m.max(1)
    }
}

/// Simulate one path from `(x0, s0)` under `params`.
///
/// `x0` must be strictly positive at every node and live on the grid given by
/// `params`. Floor hits are recorded in the diagnostics, never clamped away.
pub fn simulate_path(
    params: &SimParams,
    model: &dyn VolVol,
    x0: &Curve,
    s0: f64,
    noise: &mut dyn NoiseSource,
    recording: Recording,
) -> Result<PathRecord> {
    let grid = params.grid()?;
    if *x0.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if let Some(k) = x0.values().iter().position(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParams(format!(
            "initial curve must be strictly positive, node {k} is {}",
            x0.values()[k]
        )));
    }
    let dt = params.dt();
    let n_steps = params.n_steps();
    let m = model.dim();
    let snapshot_steps = params.snapshot_steps()?;
    let mut rec = Recorder {
        record: PathRecord {
            strike: params.strike,
            dt,
            m,
            epsilon_floor: params.epsilon_floor,
            times: Vec::with_capacity(n_steps + 1),
            spot: Vec::with_capacity(n_steps + 1),
            l: Vec::with_capacity(n_steps + 1),
            theta_bar: Vec::with_capacity(n_steps + 1),
            x_front: Vec::with_capacity(n_steps + 1),
            maturities: params.maturities.clone(),
            xi: vec![Vec::with_capacity(n_steps + 1); params.maturities.len()],
            increments: Vec::with_capacity(n_steps * m),
            snapshots: Vec::new(),
            diagnostics: StoppingDiagnostics::default(),
        },
        snapshot_steps,
        every_step: recording == Recording::EveryStep,
        dx: grid.dx(),
        horizon: grid.horizon(),
        _params: params,
    };
    let initial = MarketState::new(0.0, s0, x0.clone())?;
    drive_path(model, params.strike, params.epsilon_floor, dt, n_steps, initial, noise, &mut rec)?;
    Ok(rec.record)
}

/// `|F|_{H¹} + Σᵢ |B⁽ⁱ⁾|_{H¹}` at a state; used by the growth checks.
pub fn coefficient_h1_size(c: &Coefficients) -> f64 {
    let dx = c.drift.grid().dx();
    h1_norm_raw(c.drift.values(), dx) + c.diffusion.iter().map(|b| h1_norm_raw(b.values(), dx)).sum::<f64>()
}
