//! Acceptance criteria 1-9. Each criterion prints one PASS/FAIL line; the test
//! fails at the end if any criterion failed.

use std::path::PathBuf;
use std::time::Instant;

use fwdvol::curve::{integrate_prefix, shift_semigroup, Curve, Grid};
use fwdvol::dynamics::{compute_coefficients, simulate_path, MarketState, Recording};
use fwdvol::engine::{
    convergence_study, run_ensemble, EnsembleStats, NoiseStream, RunOptions, Scenario, SimParams, X0Spec,
};
use fwdvol::pricing::{bs_price, martingale_test, OptionSpec};
use fwdvol::volvol::{
    compute_theta_bar, eval_du, eval_u, validate_hypotheses, EtaChoice, Family1, Family2, FamilySpec,
    VolVol, ZeroVolVol,
};
use fwdvol::xi::{feedback_residual, xi_from_curve};

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn line(o: &Outcome) {
    println!("[{}] criterion {}: {} -- {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
}

fn martingale(stats: &EnsembleStats, params: &SimParams) -> (bool, String) {
    let mut pass = true;
    let mut detail = Vec::new();
    for &maturity in &params.maturities {
        let checkpoints: Vec<f64> = params.snapshot_times.iter().copied().filter(|&t| t < maturity).collect();
        let spec = OptionSpec { strike: params.strike, maturity };
        let r = martingale_test(stats, spec, &checkpoints).unwrap();
        pass &= r.pass;
        let worst = r.option.iter().chain(&r.spot).map(|c| c.z.abs()).fold(0.0, f64::max);
        detail.push(format!("T={maturity}: max|z|={worst:.2}"));
    }
    (pass, detail.join(", "))
}

fn criterion1() -> Outcome {
    let start = Instant::now();
    let params = SimParams {
        n_paths: 1,
        x0: X0Spec::Nodes((0..257).map(|k| 0.04 + 0.02 * (k as f64 * 0.05).sin().powi(2)).collect()),
        maturities: vec![0.5, 1.0],
        ..SimParams::default()
    };
    let params = params.validate().unwrap();
    let x0 = params.build_x0().unwrap();
    let path = simulate_path(
        &params,
        &ZeroVolVol::new(1),
        &x0,
        params.s0,
        &mut NoiseStream::for_path(params.seed, 0),
        Recording::EveryStep,
    )
    .unwrap();
    let mut exact = true;
    for snap in &path.snapshots {
        exact &= snap.x == shift_semigroup(&x0, snap.t).unwrap();
    }
    // trapezoid sum of x₀ over the nodes in [t, T]
    let dx = x0.grid().dx();
    let v = x0.values();
    let mut worst = 0.0f64;
    for &maturity in &params.maturities {
        let series = xi_from_curve(&path, maturity).unwrap();
        let k_end = (maturity / dx).round() as usize;
        for (n, &(_, xi)) in series.samples.iter().enumerate() {
            let quad: f64 = (n..k_end).map(|k| 0.5 * (v[k] + v[k + 1]) * dx).sum();
            worst = worst.max((xi - quad).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        name: "transport oracle",
        pass: exact && worst < 1e-12 && secs < 1.0,
        detail: format!("X exact shift: {exact}, max |xi - quadrature| = {worst:.2e}, runtime {secs:.3}s"),
    }
}

fn criterion2() -> (Outcome, EnsembleStats) {
    let start = Instant::now();
    let s = scenario("flat.json");
    let params = s.simulation.validate().unwrap();
    let model = params.family.build().unwrap();
    let stats = run_ensemble(&params, model.as_ref(), &RunOptions::default()).unwrap().stats;
    let c0_expect = bs_price(params.s0, 0.2, params.strike, 1.0).unwrap();
    let c0_ok = (stats.initial_option[0] - c0_expect).abs() < 1e-12;
    let (mart, detail) = martingale(&stats, &params);
    // lognormal check: E[ln S_T] = ln s₀ − ½σ²T
    let target = params.s0.ln() - 0.5 * 0.04 * stats.terminal_t;
    let z_log = (stats.terminal_log_spot.mean - target) / stats.terminal_log_spot.stderr;
    let secs = start.elapsed().as_secs_f64();
    let o = Outcome {
        id: 2,
        name: "flat-scenario martingale",
        pass: c0_ok && mart && z_log.abs() <= 3.0 && stats.n_paths == 100_000,
        detail: format!(
            "N={}, dt={}, C0={:.10} (BS sigma=0.2), {detail}, z(ln S_T)={z_log:.2}, {secs:.1}s",
            stats.n_paths, stats.dt, stats.initial_option[0]
        ),
    };
    (o, stats)
}

fn criterion3() -> (Outcome, Vec<EnsembleStats>) {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    let mut all = Vec::new();
    for file in ["family1.json", "family2.json"] {
        let params = scenario(file).simulation.validate().unwrap();
        let model = params.family.build().unwrap();
        let stats = run_ensemble(&params, model.as_ref(), &RunOptions::default()).unwrap().stats;
        let (ok, d) = martingale(&stats, &params);
        pass &= ok && stats.n_paths == 100_000 && stats.failures.is_empty() && stats.dt == 1.0 / 256.0;
        details.push(format!("{file}: N={}, {d}", stats.n_paths));
        all.push(stats);
    }
    let secs = start.elapsed().as_secs_f64();
    let o = Outcome {
        id: 3,
        name: "stochastic-volvol martingale",
        pass,
        detail: format!("{}; {secs:.1}s", details.join("; ")),
    };
    (o, all)
}

fn criterion4() -> Outcome {
    let grid = Grid::new(33, 1.0).unwrap();
    let models: [Box<dyn VolVol>; 2] = [
        Box::new(Family1::standard(2, 1.0, EtaChoice::Rational)),
        Box::new(Family2::standard(2, 1.0, 1e3, EtaChoice::Rational)),
    ];
    let mut rng = NoiseStream::for_path(404, 0);
    let mut worst = 0.0f64;
    let mut count = 0;
    for k in 0..10_000 {
        let model = &models[k % 2];
        let level = 10f64.powf(-3.0 + 3.0 * rng.uniform());
        let (a, f) = (rng.uniform(), 4.0 * rng.uniform());
        let x = Curve::from_fn(grid, |s| level * (1.0 + 0.5 * a * (f * s).sin())).unwrap();
        let spot = 100.0 * (3.0 * (2.0 * rng.uniform() - 1.0)).exp();
        let state = MarketState::new(rng.uniform(), spot, x).unwrap();
        worst = worst.max(feedback_residual(model.as_ref(), 100.0, &state).unwrap().abs());
        count += 1;
    }
    Outcome {
        id: 4,
        name: "feedback identity",
        pass: worst < 1e-12 && count == 10_000,
        detail: format!("{count} states (Family1/Family2), max |residual| = {worst:.2e}"),
    }
}

fn criterion5(ensembles: &[&EnsembleStats]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in ensembles {
        let p = &s.positivity;
        pass &= p.pass() && p.spot_samples > 0 && p.xi_samples > 0;
        parts.push(format!(
            "xi<-delta {}/{}, X<-delta {}/{}, S<=0 {}/{} (delta={:.2e}, min xi={:.2e})",
            p.xi_below_delta,
            p.xi_samples,
            p.x_below_delta,
            p.x_samples,
            p.spot_nonpositive,
            p.spot_samples,
            p.delta,
            p.min_xi.map_or(f64::NAN, |w| w.value)
        ));
    }
    // floor occupancy under refinement, Family2 defaults, 10⁴ paths
    let base = SimParams {
        n_paths: 10_000,
        seed: 55,
        family: FamilySpec::Family2 { m: 2, beta: 1.0, cutoff: 1e3, eta2: EtaChoice::Rational },
        ..scenario("family2.json").simulation
    };
    let model = base.family.build().unwrap();
    let mut fractions = Vec::new();
    let mut min_l = Vec::new();
    for dt in [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0] {
        let p = base.at_resolution(dt).unwrap();
        let stats = run_ensemble(&p, model.as_ref(), &RunOptions::default()).unwrap().stats;
        pass &= stats.positivity.pass();
        fractions.push(stats.floor.paths_with_floor_hit as f64 / stats.n_paths as f64);
        min_l.push(stats.floor.min_l);
    }
    // strictly smaller whenever the coarser level has any hits; zero stays zero
    let refine_ok = fractions.windows(2).all(|w| if w[0] > 0.0 { w[1] < w[0] } else { w[1] == 0.0 });
    pass &= refine_ok;
    Outcome {
        id: 5,
        name: "positivity",
        pass,
        detail: format!(
            "{}; floor-hit fraction at dt=1/64,1/128,1/256: {:?} (min L {:?})",
            parts.join("; "),
            fractions,
            min_l.iter().map(|l| format!("{l:.3e}")).collect::<Vec<_>>()
        ),
    }
}

fn criterion6() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for file in ["family1.json", "family2.json"] {
        let s = scenario(file);
        let model = s.simulation.family.build().unwrap();
        let r = convergence_study(&s.simulation, model.as_ref(), &s.convergence).unwrap();
        let dts: Vec<f64> = r.levels.iter().map(|l| l.dt).collect();
        let order = r.xi_order.unwrap_or(f64::NAN);
        pass &= dts == [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0, 1.0 / 512.0] && order >= 0.4;
        parts.push(format!(
            "{file}: errors {:?}, order {order:.3}",
            r.levels.iter().map(|l| format!("{:.3e}", l.xi_discrepancy.mean)).collect::<Vec<_>>()
        ));
    }
    Outcome { id: 6, name: "xi cross-consistency", pass, detail: parts.join("; ") }
}

fn criterion7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for file in ["family1.json", "family2.json"] {
        let s = scenario(file);
        let model = s.simulation.family.build().unwrap();
        let r = validate_hypotheses(model.as_ref(), &s.validation).unwrap();
        pass &= r.pass && s.validation.n_samples >= 10_000;
        let failed: Vec<&str> = r.items.iter().filter(|i| !i.pass).map(|i| i.name.as_str()).collect();
        parts.push(format!("{file}: {} items over {} states, failed {:?}", r.items.len(), r.n_samples, failed));
    }
    let s = scenario("adversarial.json");
    let model = s.simulation.family.build().unwrap();
    let r = validate_hypotheses(model.as_ref(), &s.validation).unwrap();
    let h2: Vec<_> = r.items.iter().filter(|i| i.name.starts_with("L ") && !i.pass).collect();
    let witness = h2.iter().find_map(|i| i.witness.clone());
    let witness_ok = witness.as_ref().is_some_and(|w| w.x_front > 0.0 && w.l <= s.validation.tol_rel * w.x_front);
    pass &= !r.pass && witness_ok;
    parts.push(match &witness {
        Some(w) => format!(
            "adversarial fails {:?}; witness X[0]={:.4}, ln(K/S)={:.4}, L={:.3e}",
            h2.iter().map(|i| i.name.as_str()).collect::<Vec<_>>(),
            w.x_front,
            w.log_moneyness,
            w.l
        ),
        None => "adversarial: no discriminant witness".into(),
    });
    Outcome { id: 7, name: "hypothesis validator", pass, detail: parts.join("; ") }
}

/// Term-by-term evaluation of `F` and `B`, written independently of the
/// library's fused loop.
fn reference_coefficients(model: &dyn VolVol, strike: f64, st: &MarketState) -> (Vec<f64>, Vec<Vec<f64>>) {
    let u = eval_u(model, st.t, strike, st.spot, &st.x).unwrap();
    let du = eval_du(model, st.t, strike, st.spot, &st.x).unwrap();
    let j = integrate_prefix(&st.x);
    let th = compute_theta_bar(model, st.t, strike, st.spot, &st.x).unwrap();
    let lam = (strike / st.spot).ln();
    let m = u.len();
    let n = st.x.grid().n_nodes();
    let mut f = vec![0.0; n];
    let mut b = vec![vec![0.0; n]; m];
    for x in 0..n {
        let ux: Vec<f64> = (0..m).map(|i| u[i].values()[x]).collect();
        let dux: Vec<f64> = (0..m).map(|i| du[i].values()[x]).collect();
        let norm2: f64 = ux.iter().map(|a| a * a).sum();
        let inner: f64 = ux.iter().zip(&dux).map(|(a, b)| a * b).sum();
        let ell: Vec<f64> = (0..m).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let left: Vec<f64> = (0..m).map(|i| th * ell[i] + ux[i] * lam).collect();
        let right: Vec<f64> = (0..m).map(|i| dux[i] * lam).collect();
        let last: f64 = left.iter().zip(&right).map(|(a, b)| a * b).sum();
        let xv = st.x.values()[x];
        let jv = j.values()[x];
        let term1 = jv * (0.5 * xv * norm2 + 0.5 * inner * jv + 2.0 * inner - th * dux[0]);
        let term2 = xv * (norm2 - th * ux[0]);
        f[x] = term1 + term2 - 2.0 * last;
        for i in 0..m {
            b[i][x] = 2.0 * xv * ux[i] + 2.0 * dux[i] * jv;
        }
    }
    (f, b)
}

fn criterion8() -> Outcome {
    let grid = Grid::new(9, 1.0).unwrap();
    let mut rng = NoiseStream::for_path(808, 0);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let model: Box<dyn VolVol> = match k % 3 {
            0 => Box::new(Family1::standard(2, 1.0, EtaChoice::Rational)),
            1 => Box::new(Family2::standard(2, 1.0, 1e3, EtaChoice::Rational)),
            _ => Box::new(Family2::standard(3, 0.5, 1e3, EtaChoice::Rational)),
        };
        let level = 0.01 + 0.3 * rng.uniform();
        let (a, f, ph) = (rng.uniform(), 5.0 * rng.uniform(), 6.0 * rng.uniform());
        let x = Curve::from_fn(grid, |s| level * (1.0 + 0.8 * a * (f * s + ph).sin())).unwrap();
        let spot = 100.0 * (2.0 * (2.0 * rng.uniform() - 1.0)).exp();
        let st = MarketState::new(0.0, spot, x).unwrap();
        let c = compute_coefficients(model.as_ref(), 100.0, &st).unwrap();
        let (f_ref, b_ref) = reference_coefficients(model.as_ref(), 100.0, &st);
        for (p, q) in c.drift.values().iter().zip(&f_ref) {
            worst = worst.max((p - q).abs());
        }
        for (bi, ri) in c.diffusion.iter().zip(&b_ref) {
            for (p, q) in bi.values().iter().zip(ri) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    Outcome {
        id: 8,
        name: "coefficient oracle",
        pass: worst < 1e-12,
        detail: format!("100 states on 9 nodes, max nodewise |diff| = {worst:.2e}"),
    }
}

fn criterion9() -> Outcome {
    let s = scenario("family2.json");
    let params = SimParams { n_paths: 2_000, ..s.simulation };
    let model = params.family.build().unwrap();
    let bytes: Vec<String> = [1, 4, 8]
        .iter()
        .map(|&w| {
            run_ensemble(&params, model.as_ref(), &RunOptions { workers: Some(w) }).unwrap().stats.to_json().unwrap()
        })
        .collect();
    let same = bytes[1] == bytes[0] && bytes[2] == bytes[0];
    Outcome {
        id: 9,
        name: "determinism",
        pass: same,
        detail: format!("family2.json, 2000 paths, stats.json of {} bytes identical for 1/4/8 workers: {same}", bytes[0].len()),
    }
}

#[test]
fn acceptance() {
    let mut outcomes = Vec::new();
    let mut run = |o: Outcome| {
        line(&o);
        outcomes.push(o);
    };
    run(criterion1());
    let (o2, flat) = criterion2();
    run(o2);
    let (o3, stochastic) = criterion3();
    run(o3);
    run(criterion4());
    let mut shipped = vec![&flat];
    shipped.extend(stochastic.iter());
    run(criterion5(&shipped));
    run(criterion6());
    run(criterion7());
    run(criterion8());
    run(criterion9());
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| format!("{} ({})", o.id, o.name)).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
