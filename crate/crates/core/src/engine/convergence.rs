use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Manifest, Moment, NoiseStream, SimParams};
use crate::curve::{shift_semigroup, sup_norm};
use crate::dynamics::{simulate_path, NoiseSource, PrecomputedNoise, Recording};
use crate::error::{Error, Result};
use crate::volvol::VolVol;
use crate::xi::{simulate_xi_direct, xi_from_curve};

/// Refinement levels for [`convergence_study`]. Each level runs on a grid with
/// `dx = dt` over the whole horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub dt_levels: Vec<f64>,
    pub n_paths: usize,
    /// Maturity of the `ξ` comparison; defaults to the horizon.
    pub maturity: Option<f64>,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self { dt_levels: vec![1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0, 1.0 / 512.0], n_paths: 64, maturity: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelResult {
    pub dt: f64,
    pub n_steps: usize,
    /// Mean over paths of `sup_t |ξ_direct − ξ_curve|`.
    pub xi_discrepancy: Moment,
    /// Mean over paths of `|S_T − S_T(finest)|`; absent on the finest level.
    pub spot_error: Option<Moment>,
    /// Mean over paths of `sup_t sup_x |X_t − e^{tA}x₀|`.
    pub transport_deviation: Moment,
    pub paths_with_floor_hit: usize,
    pub paths_with_negative_l: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub manifest: Manifest,
    pub maturity: f64,
    pub n_paths: usize,
    pub levels: Vec<LevelResult>,
    /// Least-squares slope of `ln error` against `ln dt`; absent when some
    /// error is zero or not finite.
    pub xi_order: Option<f64>,
    pub spot_order: Option<f64>,
    pub transport_order: Option<f64>,
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return None;
    }
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Some(sxy / sxx)
}

/// Sum consecutive groups of `ratio` fine steps (each `m` wide) into coarse steps.
pub fn coarse_increments(fine: &[f64], m: usize, ratio: usize) -> Vec<f64> {
    let steps = fine.len() / m / ratio;
    let mut out = vec![0.0; steps * m];
    for s in 0..steps {
        for r in 0..ratio {
            let base = (s * ratio + r) * m;
            for i in 0..m {
                out[s * m + i] += fine[base + i];
            }
        }
    }
    out
}

struct PathLevel {
    xi_disc: f64,
    terminal_spot: f64,
    transport: f64,
    floor_hit: bool,
    negative_l: bool,
}

/// Coupled refinement study: every level of path `i` is driven by sums of the
/// same finest-level increments.
pub fn convergence_study(params: &SimParams, model: &dyn VolVol, spec: &ConvergenceSpec) -> Result<ConvergenceReport> {
    if spec.dt_levels.len() < 3 {
        return Err(Error::InvalidParams(format!("need at least 3 refinement levels, got {}", spec.dt_levels.len())));
    }
    if spec.n_paths == 0 {
        return Err(Error::InvalidParams("convergence n_paths must be at least 1".into()));
    }
    let mut dts = spec.dt_levels.clone();
    dts.sort_by(|a, b| b.total_cmp(a));
    let levels: Vec<SimParams> = dts
        .iter()
        .map(|&dt| {
            let p = SimParams { snapshot_times: Vec::new(), n_paths: spec.n_paths, ..params.at_resolution(dt)? };
            p.validate()
        })
        .collect::<Result<_>>()?;
    let finest = levels.last().expect("at least 3 levels").n_steps();
    let ratios: Vec<usize> = levels
        .iter()
        .map(|p| {
            let n = p.n_steps();
            if finest % n == 0 {
                Ok(finest / n)
            } else {
                Err(Error::InvalidParams(format!("{} steps do not divide the finest level's {finest}", n)))
            }
        })
        .collect::<Result<_>>()?;
    let maturity = spec.maturity.unwrap_or(params.horizon);
    let levels: Vec<SimParams> = levels.into_iter().map(|p| SimParams { maturities: vec![maturity], ..p }).collect();
    let x0s = levels.iter().map(|p| p.validate().and_then(|p| p.build_x0())).collect::<Result<Vec<_>>>()?;
    let m = model.dim();
    let fine_dt = levels.last().unwrap().dt();

    let per_path = |i: usize| -> Result<Vec<PathLevel>> {
        let mut fine = vec![0.0; finest * m];
        NoiseStream::for_path(params.seed, i as u64).fill(fine_dt, &mut fine);
        levels
            .iter()
            .zip(&x0s)
            .zip(&ratios)
            .map(|((p, x0), &ratio)| {
                let mut noise = PrecomputedNoise::new(coarse_increments(&fine, m, ratio));
                let path = simulate_path(p, model, x0, p.s0, &mut noise, Recording::EveryStep)?;
                let direct = simulate_xi_direct(&path, model, maturity)?;
                let curve = xi_from_curve(&path, maturity)?;
                let xi_disc = direct.values().zip(curve.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let mut transport = 0.0f64;
                for snap in &path.snapshots {
                    let reference = shift_semigroup(x0, snap.t)?;
                    transport = transport.max(sup_norm(&snap.x.axpby(1.0, &reference, -1.0)?));
                }
                Ok(PathLevel {
                    xi_disc,
                    terminal_spot: *path.spot.last().unwrap(),
                    transport,
                    floor_hit: path.diagnostics.first_floor_hit.is_some(),
                    negative_l: path.diagnostics.min_l < 0.0,
                })
            })
            .collect()
    };
    let results = (0..spec.n_paths).into_par_iter().map(per_path).collect::<Vec<_>>();
    let results = results
        .into_iter()
        .enumerate()
        .map(|(path, r)| r.map_err(|e| Error::PathFailed { path, source: Box::new(e) }))
        .collect::<Result<Vec<_>>>()?;

    let last = levels.len() - 1;
    let out: Vec<LevelResult> = levels
        .iter()
        .enumerate()
        .map(|(l, p)| {
            let col = |f: &dyn Fn(&[PathLevel]) -> f64| results.iter().map(|r| f(r)).collect::<Vec<_>>();
            LevelResult {
                dt: p.dt(),
                n_steps: p.n_steps(),
                xi_discrepancy: Moment::from_samples(&col(&|r| r[l].xi_disc)),
                spot_error: (l != last)
                    .then(|| Moment::from_samples(&col(&|r| (r[l].terminal_spot - r[last].terminal_spot).abs()))),
                transport_deviation: Moment::from_samples(&col(&|r| r[l].transport)),
                paths_with_floor_hit: results.iter().filter(|r| r[l].floor_hit).count(),
                paths_with_negative_l: results.iter().filter(|r| r[l].negative_l).count(),
            }
        })
        .collect();
    let slope = |f: &dyn Fn(&LevelResult) -> Option<f64>| {
        let pts: Vec<(f64, f64)> = out.iter().filter_map(|r| f(r).map(|e| (r.dt, e))).collect();
        log_log_slope(&pts)
    };
    Ok(ConvergenceReport {
        manifest: Manifest::new(params),
        maturity,
        n_paths: spec.n_paths,
        xi_order: slope(&|r| Some(r.xi_discrepancy.mean)),
        spot_order: slope(&|r| r.spot_error.map(|m| m.mean)),
        transport_order: slope(&|r| Some(r.transport_deviation.mean)),
        levels: out,
    })
}
