use rayon::prelude::*;
use serde::Serialize;

use super::{Manifest, NoiseStream, SimParams};
use crate::curve::Curve;
use crate::dynamics::{
    drive_path, prefix_at, simulate_path, MarketState, PathObserver, PathRecord, Recording, StateScalars,
    StoppingDiagnostics,
};
use crate::error::{Error, Result};
use crate::pricing::bs_price;
use crate::volvol::VolVol;
use crate::xi::{implied_vol, PositivityTally};

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moment {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

impl Moment {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = pairwise_sum(v) / n as f64;
        let stderr = if n > 1 {
            let dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointStats {
    pub t: f64,
    pub spot: Moment,
    pub log_spot: Moment,
    /// `C_t(T, K)` per maturity; absent once `t ≥ T`.
    pub option: Vec<Option<Moment>>,
    pub xi: Vec<Option<Moment>>,
    /// Samples with `ξ < 0` priced at `ξ = 0`.
    pub negative_xi_clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FloorStats {
    pub paths_with_floor_hit: usize,
    pub floor_steps: u64,
    pub paths_with_negative_l: usize,
    pub min_l: f64,
    pub earliest_floor_hit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFailure {
    pub path: usize,
    pub message: String,
    pub blowup: bool,
}

/// Aggregate output of [`run_ensemble`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub manifest: Manifest,
    /// Paths that completed.
    pub n_paths: usize,
    pub failures: Vec<PathFailure>,
    pub s0: f64,
    pub strike: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub maturities: Vec<f64>,
    pub initial_xi: Vec<f64>,
    pub initial_option: Vec<f64>,
    pub checkpoints: Vec<CheckpointStats>,
    pub terminal_t: f64,
    pub terminal_spot: Moment,
    pub terminal_log_spot: Moment,
    pub positivity: PositivityTally,
    pub floor: FloorStats,
}

impl EnsembleStats {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

pub struct EnsembleRun {
    pub stats: EnsembleStats,
    /// Full records of the first `dump_paths` paths.
    pub dumps: Vec<PathRecord>,
}

/// What one path contributes.
#[derive(Debug, Clone)]
struct PathSummary {
    spot: Vec<f64>,
    option: Vec<Vec<f64>>,
    xi: Vec<Vec<f64>>,
    clamped: Vec<usize>,
    terminal_spot: f64,
    tally: PositivityTally,
    diagnostics: StoppingDiagnostics,
}

struct Summarizer<'a> {
    path: usize,
    n_steps: usize,
    epsilon: f64,
    strike: f64,
    maturities: &'a [f64],
    checkpoint_steps: &'a [usize],
    dx: f64,
    horizon: f64,
    out: PathSummary,
}

impl PathObserver for Summarizer<'_> {
    fn on_state(&mut self, step: usize, state: &MarketState, s: &StateScalars, prefix: &[f64], _u: &[f64]) {
        let x = state.x.values();
        self.out.tally.observe(self.path, state.t, state.spot, x, prefix, self.dx, self.horizon);
        if step < self.n_steps {
            self.out.diagnostics.record_step(state.t, s.l, self.epsilon);
        } else {
            self.out.diagnostics.record_state(s.l);
            self.out.terminal_spot = state.spot;
        }
        if let Some(c) = self.checkpoint_steps.iter().position(|&k| k == step) {
            self.out.spot[c] = state.spot;
            for (mi, &maturity) in self.maturities.iter().enumerate() {
                if maturity <= state.t {
                    continue;
                }
                let mut xi = prefix_at(prefix, self.dx, maturity - state.t);
                self.out.xi[c][mi] = xi;
                if xi < 0.0 {
                    self.out.clamped[c] += 1;
                    xi = 0.0;
                }
                let sigma = implied_vol(xi, state.t, maturity).expect("t < T and xi >= 0");
                self.out.option[c][mi] =
                    bs_price(state.spot, sigma, self.strike, maturity - state.t).expect("validated inputs");
            }
        }
    }
}

struct Prepared<'a> {
    params: SimParams,
    model: &'a dyn VolVol,
    x0: Curve,
    checkpoint_steps: Vec<usize>,
    delta: f64,
}

fn prepare<'a>(params: &SimParams, model: &'a dyn VolVol) -> Result<Prepared<'a>> {
    let params = params.validate()?;
    let x0 = params.build_x0()?;
    let delta = PositivityTally::slack(params.positivity_slack, x0.max(), params.dt());
    let checkpoint_steps = params.snapshot_steps()?;
    Ok(Prepared { params, model, x0, checkpoint_steps, delta })
}

fn run_one(p: &Prepared<'_>, path: usize) -> Result<PathSummary> {
    let n_cp = p.checkpoint_steps.len();
    let n_mat = p.params.maturities.len();
    let grid = *p.x0.grid();
    let mut obs = Summarizer {
        path,
        n_steps: p.params.n_steps(),
        epsilon: p.params.epsilon_floor,
        strike: p.params.strike,
        maturities: &p.params.maturities,
        checkpoint_steps: &p.checkpoint_steps,
        dx: grid.dx(),
        horizon: grid.horizon(),
        out: PathSummary {
            spot: vec![f64::NAN; n_cp],
            option: vec![vec![f64::NAN; n_mat]; n_cp],
            xi: vec![vec![f64::NAN; n_mat]; n_cp],
            clamped: vec![0; n_cp],
            terminal_spot: f64::NAN,
            tally: PositivityTally::new(p.delta),
            diagnostics: StoppingDiagnostics::default(),
        },
    };
    let mut noise = NoiseStream::for_path(p.params.seed, path as u64);
    let initial = MarketState::new(0.0, p.params.s0, p.x0.clone())?;
    drive_path(
        p.model,
        p.params.strike,
        p.params.epsilon_floor,
        p.params.dt(),
        p.params.n_steps(),
        initial,
        &mut noise,
        &mut obs,
    )?;
    Ok(obs.out)
}

fn column<'a>(rows: impl Iterator<Item = &'a PathSummary>, f: impl Fn(&PathSummary) -> f64) -> Vec<f64> {
    rows.map(f).collect()
}

fn reduce(p: &Prepared<'_>, results: Vec<Result<PathSummary>>) -> Result<EnsembleStats> {
    let params = &p.params;
    let mut failures = Vec::new();
    let mut ok = Vec::with_capacity(results.len());
    for (path, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => failures.push(PathFailure { path, blowup: e.is_blowup(), message: e.to_string() }),
        }
    }
    let grid = *p.x0.grid();
    let initial_xi: Vec<f64> = params.maturities.iter().map(|&m| prefix_at(&prefix_of(&p.x0), grid.dx(), m)).collect();
    let initial_option = params
        .maturities
        .iter()
        .zip(&initial_xi)
        .map(|(&m, &xi)| bs_price(params.s0, implied_vol(xi, 0.0, m)?, params.strike, m))
        .collect::<Result<Vec<_>>>()?;

    let dt = params.dt();
    let mut checkpoints = Vec::new();
    for (c, &k) in p.checkpoint_steps.iter().enumerate() {
        let t = k as f64 * dt;
        let spots = column(ok.iter(), |s| s.spot[c]);
        let logs: Vec<f64> = spots.iter().map(|s| s.ln()).collect();
        let per_maturity = |pick: &dyn Fn(&PathSummary) -> f64, mi: usize| {
            (params.maturities[mi] > t).then(|| Moment::from_samples(&column(ok.iter(), pick)))
        };
        let option = (0..params.maturities.len()).map(|mi| per_maturity(&|s| s.option[c][mi], mi)).collect();
        let xi = (0..params.maturities.len()).map(|mi| per_maturity(&|s| s.xi[c][mi], mi)).collect();
        checkpoints.push(CheckpointStats {
            t,
            spot: Moment::from_samples(&spots),
            log_spot: Moment::from_samples(&logs),
            option,
            xi,
            negative_xi_clamped: ok.iter().map(|s| s.clamped[c]).sum(),
        });
    }

    let terminal = column(ok.iter(), |s| s.terminal_spot);
    let terminal_logs: Vec<f64> = terminal.iter().map(|s| s.ln()).collect();
    let mut positivity = PositivityTally::new(p.delta);
    let mut floor = FloorStats {
        paths_with_floor_hit: 0,
        floor_steps: 0,
        paths_with_negative_l: 0,
        min_l: f64::INFINITY,
        earliest_floor_hit: None,
    };
    for s in &ok {
        positivity.merge(&s.tally);
        let d = &s.diagnostics;
        if let Some(t) = d.first_floor_hit {
            floor.paths_with_floor_hit += 1;
            floor.earliest_floor_hit = Some(floor.earliest_floor_hit.map_or(t, |e: f64| e.min(t)));
        }
        floor.floor_steps += d.floor_steps as u64;
        if d.min_l < 0.0 {
            floor.paths_with_negative_l += 1;
        }
        floor.min_l = floor.min_l.min(d.min_l);
    }
    Ok(EnsembleStats {
        manifest: Manifest::new(params),
        n_paths: ok.len(),
        failures,
        s0: params.s0,
        strike: params.strike,
        dt,
        n_steps: params.n_steps(),
        maturities: params.maturities.clone(),
        initial_xi,
        initial_option,
        checkpoints,
        terminal_t: params.n_steps() as f64 * dt,
        terminal_spot: Moment::from_samples(&terminal),
        terminal_log_spot: Moment::from_samples(&terminal_logs),
        positivity,
        floor,
    })
}

fn prefix_of(c: &Curve) -> Vec<f64> {
    crate::curve::integrate_prefix(c).into_values()
}

/// Simulate `params.n_paths` independent paths; path `i` uses substream `i`
/// of `params.seed`. Failed paths are listed and excluded from the moments.
/// The result does not depend on the worker count.
pub fn run_ensemble(params: &SimParams, model: &dyn VolVol, options: &RunOptions) -> Result<EnsembleRun> {
    let p = prepare(params, model)?;
    let n = p.params.n_paths;
    let work = || (0..n).into_par_iter().map(|i| run_one(&p, i)).collect::<Vec<_>>();
    let results = match options.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let stats = reduce(&p, results)?;
    let dumps = (0..p.params.dump_paths.min(n))
        .filter(|i| stats.failures.iter().all(|f| f.path != *i))
        .map(|i| {
            let mut noise = NoiseStream::for_path(p.params.seed, i as u64);
            simulate_path(&p.params, model, &p.x0, p.params.s0, &mut noise, Recording::SnapshotTimes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleRun { stats, dumps })
}
