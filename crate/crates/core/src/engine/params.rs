use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curve::{Curve, Grid};
use crate::engine::ConvergenceSpec;
use crate::error::{Error, Result};
use crate::volvol::{FamilySpec, SampleSpec};

const STEP_TOL: f64 = 1e-9;

/// Initial curve: a constant, nodal values, or a two-column `x,value` CSV.
/// Inputs on a different uniform grid are resampled linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Spec {
    Flat(f64),
    Nodes(Vec<f64>),
    Csv(PathBuf),
}

/// Everything a simulation run depends on besides the worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub n_nodes: usize,
    pub horizon: f64,
    /// Defaults to the grid spacing.
    pub dt: Option<f64>,
    /// Defaults to `⌊T*/dt⌋`.
    pub n_steps: Option<usize>,
    pub n_paths: usize,
    pub seed: u64,
    pub epsilon_floor: f64,
    pub strike: f64,
    pub s0: f64,
    pub x0: X0Spec,
    pub family: FamilySpec,
    /// Checkpoints; must be whole multiples of `dt`.
    pub snapshot_times: Vec<f64>,
    pub maturities: Vec<f64>,
    /// `c` in the positivity slack `δ = c · sup x₀ · sqrt(dt)`.
    pub positivity_slack: f64,
    /// Number of leading paths written out in full.
    pub dump_paths: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            n_nodes: 257,
            horizon: 1.0,
            dt: None,
            n_steps: None,
            n_paths: 100_000,
            seed: 1,
            epsilon_floor: 1e-8,
            strike: 100.0,
            s0: 100.0,
            x0: X0Spec::Flat(0.04),
            family: FamilySpec::Zero { m: 1 },
            snapshot_times: vec![0.25, 0.5, 0.75],
            maturities: vec![1.0],
            positivity_slack: 0.1,
            dump_paths: 0,
        }
    }
}

impl SimParams {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n_nodes, self.horizon)
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(self.horizon / (self.n_nodes.max(2) - 1) as f64)
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps.unwrap_or_else(|| (self.horizon / self.dt() + STEP_TOL).floor() as usize)
    }

    /// Same run on a grid with `dx = dt` for the given `dt`.
    pub fn at_resolution(&self, dt: f64) -> Result<Self> {
        let cells = self.horizon / dt;
        if !(cells.is_finite() && (cells - cells.round()).abs() <= STEP_TOL * cells.max(1.0) && cells >= 2.0) {
            return Err(Error::InvalidParams(format!("T*/dt must be a whole number >= 2, got {cells}")));
        }
        Ok(Self { n_nodes: cells.round() as usize + 1, dt: None, n_steps: None, ..self.clone() })
    }

    /// Step indices of the snapshot times.
    pub fn snapshot_steps(&self) -> Result<Vec<usize>> {
        let dt = self.dt();
        self.snapshot_times
            .iter()
            .map(|&t| {
                let k = t / dt;
                let r = k.round();
                if r < 0.0 || (k - r).abs() > STEP_TOL * r.max(1.0) || r as usize > self.n_steps() {
                    Err(Error::InvalidParams(format!("snapshot time {t} is not a step of size {dt} within the run")))
                } else {
                    Ok(r as usize)
                }
            })
            .collect()
    }

    /// Check every invariant and return a copy with `dt` and `n_steps` filled.
    pub fn validate(&self) -> Result<Self> {
        let grid = self.grid().map_err(|e| Error::InvalidParams(e.to_string()))?;
        let dt = self.dt();
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidParams(format!("dt must be positive, got {dt}")));
        }
        let n_steps = self.n_steps();
        if n_steps == 0 {
            return Err(Error::InvalidParams("run has no steps".into()));
        }
        if dt * n_steps as f64 > self.horizon * (1.0 + STEP_TOL) {
            return Err(Error::InvalidParams(format!(
                "dt * n_steps = {} exceeds the horizon {}",
                dt * n_steps as f64,
                self.horizon
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParams("n_paths must be at least 1".into()));
        }
        for (name, v) in [("epsilon_floor", self.epsilon_floor), ("strike", self.strike), ("s0", self.s0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.positivity_slack >= 0.0) {
            return Err(Error::InvalidParams("positivity_slack must be nonnegative".into()));
        }
        if self.maturities.is_empty() {
            return Err(Error::InvalidParams("at least one maturity is required".into()));
        }
        if let Some(m) = self.maturities.iter().find(|&&m| !(m > 0.0 && m <= self.horizon * (1.0 + STEP_TOL))) {
            return Err(Error::InvalidParams(format!("maturity {m} outside (0, {}]", self.horizon)));
        }
        let resolved = Self { dt: Some(dt), n_steps: Some(n_steps), ..self.clone() };
        resolved.snapshot_steps()?;
        self.family.build()?;
        let x0 = resolved.build_x0()?;
        if grid != *x0.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(resolved)
    }

    /// Initial curve on this run's grid; must be strictly positive.
    pub fn build_x0(&self) -> Result<Curve> {
        let grid = self.grid()?;
        let x0 = match &self.x0 {
            X0Spec::Flat(v) => Curve::constant(grid, *v)?,
            X0Spec::Nodes(values) if values.len() == grid.n_nodes() => Curve::new(grid, values.clone())?,
            X0Spec::Nodes(values) => Curve::new(Grid::new(values.len(), self.horizon)?, values.clone())?.resample(grid)?,
            X0Spec::Csv(path) => {
                let c = Curve::load_csv(path)?;
                if (c.grid().horizon() - self.horizon).abs() > STEP_TOL * self.horizon {
                    return Err(Error::InvalidParams(format!(
                        "x0 csv covers [0, {}] but the horizon is {}",
                        c.grid().horizon(),
                        self.horizon
                    )));
                }
                if c.grid().n_nodes() == grid.n_nodes() {
                    Curve::new(grid, c.into_values())?
                } else {
                    c.resample(grid)?
                }
            }
        };
        if let Some(k) = x0.values().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::InvalidParams(format!(
                "initial curve must be strictly positive, node {k} is {}",
                x0.values()[k]
            )));
        }
        Ok(x0)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("parameters serialize");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A scenario file: simulation parameters plus optional verifier settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub simulation: SimParams,
    pub validation: SampleSpec,
    pub convergence: ConvergenceSpec,
    /// Seeds the martingale check is expected to pass for.
    pub seeds: Vec<u64>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParams(e.to_string()))
    }

    /// Parse a scenario file; a relative `x0` CSV path is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut s = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let X0Spec::Csv(p) = &mut s.simulation.x0 {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(s)
    }
}

/// Identifies the inputs behind an output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub params_hash: String,
    pub crate_version: &'static str,
}

impl Manifest {
    pub fn new(params: &SimParams) -> Self {
        Self { seed: params.seed, params_hash: params.hash(), crate_version: env!("CARGO_PKG_VERSION") }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let p = SimParams::default().validate().unwrap();
        assert_eq!(p.dt, Some(1.0 / 256.0));
        assert_eq!(p.n_steps, Some(256));
        assert_eq!(p.snapshot_steps().unwrap(), vec![64, 128, 192]);
    }

    #[test]
    fn invariants_are_enforced() {
        let bad = [
            SimParams { s0: 0.0, ..SimParams::default() },
            SimParams { n_steps: Some(300), ..SimParams::default() },
            SimParams { maturities: vec![1.5], ..SimParams::default() },
            SimParams { snapshot_times: vec![0.3], dt: Some(0.25), ..SimParams::default() },
            SimParams { x0: X0Spec::Nodes(vec![0.04, 0.0, 0.04]), ..SimParams::default() },
            SimParams { x0: X0Spec::Flat(-0.01), ..SimParams::default() },
            SimParams { n_paths: 0, ..SimParams::default() },
        ];
        for p in bad {
            assert!(matches!(p.validate(), Err(Error::InvalidParams(_))), "{p:?}");
        }
    }

    #[test]
    fn strict_scenario_parsing() {
        assert!(Scenario::from_json(r#"{"simulation": {"n_paths": 10, "typo": 1}}"#).is_err());
        assert!(Scenario::from_json(r#"{"simulaton": {}}"#).is_err());
        let s = Scenario::from_json(
            r#"{"simulation": {"n_paths": 10, "x0": {"flat": 0.09}, "family": {"kind": "family1"}}}"#,
        )
        .unwrap();
        assert_eq!(s.simulation.n_paths, 10);
        assert_eq!(s.simulation.x0, X0Spec::Flat(0.09));
    }

    #[test]
    fn nodes_are_resampled() {
        let p = SimParams { n_nodes: 5, x0: X0Spec::Nodes(vec![0.02, 0.04, 0.06]), ..SimParams::default() };
        let x0 = p.build_x0().unwrap();
        assert_eq!(x0.values(), &[0.02, 0.03, 0.04, 0.05, 0.06]);
    }

    #[test]
    fn csv_path_is_relative_to_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(5, 1.0).unwrap();
        Curve::constant(grid, 0.05).unwrap().write_csv(std::fs::File::create(dir.path().join("x0.csv")).unwrap()).unwrap();
        let file = dir.path().join("s.json");
        std::fs::write(&file, r#"{"simulation": {"n_nodes": 9, "x0": {"csv": "x0.csv"}}}"#).unwrap();
        let s = Scenario::load(&file).unwrap();
        let x0 = s.simulation.build_x0().unwrap();
        assert_eq!(x0.grid().n_nodes(), 9);
        assert!(x0.values().iter().all(|&v| (v - 0.05).abs() < 1e-15));
    }

    #[test]
    fn hash_tracks_content() {
        let a = SimParams::default();
        let b = SimParams { seed: 2, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn resolution_sets_grid() {
        let p = SimParams::default().at_resolution(1.0 / 64.0).unwrap();
        assert_eq!(p.n_nodes, 65);
        assert!(SimParams::default().at_resolution(0.3).is_err());
    }
}
