//! Batch driver. Exit codes: 0 ok, 1 a verification failed, 2 invalid input,
//! 3 numerical blow-up.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fwdvol::engine::{convergence_study, run_ensemble, EnsembleRun, RunOptions, Scenario};
use fwdvol::pricing::{bs_price, martingale_test, OptionSpec};
use fwdvol::volvol::validate_hypotheses;
use fwdvol::Error;

#[derive(Parser)]
#[command(name = "fwdvol", version, about = "Forward implied volatility curve simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the ensemble and write stats.json, manifest.json and path dumps.
    Simulate(RunArgs),
    /// Spot-check the volvol model against its regularity and positivity conditions.
    VerifyHypotheses(RunArgs),
    /// Run the ensemble and test that option and stock prices are martingales.
    MartingaleTest(RunArgs),
    /// Coupled refinement study of the scheme.
    Convergence(RunArgs),
    /// Zero-rate Black-Scholes call price.
    Price {
        #[arg(long)]
        spot: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        strike: f64,
        #[arg(long)]
        tau: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Worker threads (output does not depend on it).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

enum Failure {
    Verification(String),
    Input(String),
    Blowup(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_blowup() {
            Failure::Blowup(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl RunArgs {
    fn load(&self) -> Result<Scenario, Failure> {
        let mut s = Scenario::load(&self.scenario)?;
        let sim = &mut s.simulation;
        if let Some(seed) = self.seed {
            sim.seed = seed;
            s.validation.seed = seed;
        }
        if let Some(n) = self.paths {
            sim.n_paths = n;
            s.convergence.n_paths = n;
        }
        if let Some(dt) = self.dt {
            sim.dt = Some(dt);
            sim.n_steps = None;
        }
        s.simulation = sim.validate()?;
        Ok(s)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn ensemble(args: &RunArgs, s: &Scenario) -> Result<EnsembleRun, Failure> {
    let model = s.simulation.family.build()?;
    let run = run_ensemble(&s.simulation, model.as_ref(), &RunOptions { workers: args.workers })?;
    write(&args.out, "stats.json", &run.stats.to_json()?)?;
    write(&args.out, "manifest.json", &serde_json::to_string_pretty(&run.stats.manifest)?)?;
    let paths = args.out.join("paths");
    for (i, rec) in run.dumps.iter().enumerate() {
        fs::create_dir_all(&paths)?;
        rec.write_csv(fs::File::create(paths.join(format!("path_{i}.csv")))?)?;
        write(&paths, &format!("path_{i}_snapshots.json"), &rec.snapshots_json()?)?;
    }
    let st = &run.stats;
    args.say(format!(
        "{} paths, {} failed; floor hits on {} paths; positivity {}",
        st.n_paths,
        st.failures.len(),
        st.floor.paths_with_floor_hit,
        if st.positivity.pass() { "ok" } else { "VIOLATED" }
    ));
    if let Some(f) = st.failures.iter().find(|f| f.blowup) {
        return Err(Failure::Blowup(format!("path {}: {}", f.path, f.message)));
    }
    Ok(run)
}

fn simulate(args: &RunArgs) -> Result<(), Failure> {
    let s = args.load()?;
    ensemble(args, &s)?;
    args.say(format!("wrote {}", args.out.join("stats.json").display()));
    Ok(())
}

fn martingale(args: &RunArgs) -> Result<(), Failure> {
    let s = args.load()?;
    let run = ensemble(args, &s)?;
    let sim = &s.simulation;
    let mut reports = Vec::new();
    let mut csv = String::from("maturity,quantity,t,mean,stderr,target,z,pass\n");
    for &maturity in &sim.maturities {
        let checkpoints: Vec<f64> = sim.snapshot_times.iter().copied().filter(|&t| t < maturity).collect();
        if checkpoints.is_empty() {
            continue;
        }
        let r = martingale_test(&run.stats, OptionSpec { strike: sim.strike, maturity }, &checkpoints)?;
        for c in r.option.iter().chain(&r.spot) {
            args.say(format!("T={maturity} t={} mean={:.6} target={:.6} z={:+.2}", c.t, c.mean, c.target, c.z));
        }
        for row in r.to_csv().lines().skip(1) {
            csv.push_str(&format!("{maturity},{row}\n"));
        }
        reports.push(r);
    }
    write(&args.out, "martingale.json", &serde_json::to_string_pretty(&reports)?)?;
    write(&args.out, "martingale.csv", &csv)?;
    if reports.iter().all(|r| r.pass) {
        args.say("martingale test passed");
        Ok(())
    } else {
        Err(Failure::Verification("martingale test failed: some |z| > 3".into()))
    }
}

fn verify(args: &RunArgs) -> Result<(), Failure> {
    let s = args.load()?;
    let model = s.simulation.family.build()?;
    let report = validate_hypotheses(model.as_ref(), &s.validation)?;
    write(&args.out, "validation.json", &serde_json::to_string_pretty(&report)?)?;
    for item in &report.items {
        args.say(format!("{:<36} {} (worst {:.3e})", item.name, if item.pass { "pass" } else { "FAIL" }, item.statistic));
        if let (false, Some(w)) = (item.pass, &item.witness) {
            args.say(format!(
                "    witness: t={} S={} ln(K/S)={:.6} X[0]={:.6e} L={:.6e} {}",
                w.t, w.spot, w.log_moneyness, w.x_front, w.l, w.detail
            ));
        }
    }
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Verification("some hypothesis checks failed".into()))
    }
}

fn convergence(args: &RunArgs) -> Result<(), Failure> {
    let s = args.load()?;
    let model = s.simulation.family.build()?;
    let report = convergence_study(&s.simulation, model.as_ref(), &s.convergence)?;
    write(&args.out, "convergence.json", &serde_json::to_string_pretty(&report)?)?;
    for l in &report.levels {
        args.say(format!(
            "dt={:<12} xi discrepancy {:.3e}  transport {:.3e}  spot error {}",
            l.dt,
            l.xi_discrepancy.mean,
            l.transport_deviation.mean,
            l.spot_error.map_or("-".into(), |m| format!("{:.3e}", m.mean))
        ));
    }
    let fmt = |o: Option<f64>| o.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    args.say(format!(
        "orders: xi {}, spot {}, transport {}",
        fmt(report.xi_order),
        fmt(report.spot_order),
        fmt(report.transport_order)
    ));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::VerifyHypotheses(a) => verify(a),
        Command::MartingaleTest(a) => martingale(a),
        Command::Convergence(a) => convergence(a),
        Command::Price { spot, sigma, strike, tau } => bs_price(*spot, *sigma, *strike, *tau)
            .map(|c| println!("{c}"))
            .map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("invalid input: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Blowup(m)) => {
            eprintln!("numerical blow-up: {m}");
            ExitCode::from(3)
        }
    }
}
