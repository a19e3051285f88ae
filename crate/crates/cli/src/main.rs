use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use shlab_core::diagnostics::{
    convergence_study, energy_inequality_residual, energy_jump, weak_residual,
    weak_strong_experiment,
};
use shlab_core::workbench::{
    chain_residuals, energy_gap, find_lambda0, frequency_schedule, improvement_step,
    subsolution_certificate, ImprovementOptions, SubsolutionState, WorkbenchBase,
};
use shlab_core::{
    parse_scenario, simulate_with, write_snapshot, Error, Result, ScenarioConfig, SimulateOptions,
    Snapshot, TorusGrid,
};

#[derive(Parser)]
#[command(
    name = "shlab",
    version,
    about = "Savage-Hutter numerical laboratory on the periodic torus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the finite-volume solver and write the energy ledger.
    Simulate(Common),
    /// Build a certified subsolution and apply improvement steps.
    Workbench(Common),
    /// Simulate with every step recorded and check the weak and energy identities.
    Diagnose(Common),
    /// Weak-strong experiment: relative energy of a coarse run against the fine reference.
    Wsu(Common),
    /// Grid convergence of the solver against the scenario grid.
    Convergence(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML, flat dotted keys).
    scenario: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the oscillatory directions and phases (workbench).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of improvement steps (workbench).
    #[arg(long)]
    steps: Option<usize>,
    /// Velocity perturbation size (wsu).
    #[arg(long)]
    eps: Option<f64>,
    /// CFL number, overriding physics.cfl.
    #[arg(long)]
    cfl: Option<f64>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Workbench(_) => "workbench",
            Command::Diagnose(_) => "diagnose",
            Command::Wsu(_) => "wsu",
            Command::Convergence(_) => "convergence",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Workbench(c)
            | Command::Diagnose(c)
            | Command::Wsu(c)
            | Command::Convergence(c) => c,
        }
    }
}

/// Output directory bookkeeping: every file goes through here so the manifest lists it.
struct RunDir {
    root: PathBuf,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
    summary: String,
}

impl RunDir {
    fn create(root: PathBuf) -> Result<Self> {
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            files: Vec::new(),
            timings: Vec::new(),
            summary: String::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn snapshot(&mut self, name: &str, field: Snapshot) -> Result<()> {
        write_snapshot(&field, self.root.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.timings
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    match run(&cli.command) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SHLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Validation {
            key: "SHLAB_THREADS".into(),
            message: format!("expected a positive integer, got '{raw}'"),
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidValue(e.to_string()))
}

fn run(command: &Command) -> Result<PathBuf> {
    let args = command.common();
    let start = Instant::now();
    let text = fs::read(&args.scenario).map_err(|e| Error::io(&args.scenario, e))?;
    let mut cfg = parse_scenario(&args.scenario)?;
    if let Some(c) = args.cfl {
        cfg.cfl = c;
    }
    if let Some(s) = args.steps {
        cfg.workbench.steps = s;
    }
    if let Some(e) = args.eps {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(Error::Validation {
                key: "--eps".into(),
                message: format!("must be a nonnegative number, got {e}"),
            });
        }
        cfg.diagnostics.eps = e;
    }
    // Overrides go through the same validation as file values.
    cfg.scenario()?;

    let root = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("shlab_{}", command.name())));
    let mut dir = RunDir::create(root)?;
    dir.line(format!("command: {}", command.name()));
    dir.line(format!("grid: {}x{}", cfg.grid.nx(), cfg.grid.ny()));
    dir.line(format!("T: {}", cfg.t_final));

    match command {
        Command::Simulate(_) => simulate_cmd(&cfg, &mut dir)?,
        Command::Workbench(_) => workbench_cmd(&cfg, args.seed, &mut dir)?,
        Command::Diagnose(_) => diagnose_cmd(&cfg, &mut dir)?,
        Command::Wsu(_) => wsu_cmd(&cfg, &mut dir)?,
        Command::Convergence(_) => convergence_cmd(&cfg, &mut dir)?,
    }

    dir.write("scenario.toml", &String::from_utf8_lossy(&text))?;
    let summary = std::mem::take(&mut dir.summary);
    dir.write("summary.txt", &summary)?;
    dir.timings
        .push(("total".into(), start.elapsed().as_secs_f64()));
    let mut files = dir.files.clone();
    files.push("manifest.json".into());
    let manifest = json!({
        "command": command.name(),
        "scenario": args.scenario.display().to_string(),
        "scenario_sha256": hex::encode(Sha256::digest(&text)),
        "seed": args.seed,
        "grid": [cfg.grid.nx(), cfg.grid.ny()],
        "overrides": {
            "cfl": args.cfl,
            "steps": args.steps,
            "eps": args.eps,
        },
        "versions": {
            "shlab-core": shlab_core::VERSION,
            "shlab-cli": env!("CARGO_PKG_VERSION"),
        },
        "threads": rayon::current_num_threads(),
        "outputs": files,
        "timings_seconds": dir.timings.iter().map(|(k, v)| json!({ "stage": k, "seconds": v })).collect::<Vec<_>>(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is plain JSON");
    dir.write("manifest.json", &text)?;
    Ok(dir.root)
}

fn simulate_cmd(cfg: &ScenarioConfig, dir: &mut RunDir) -> Result<()> {
    let scenario = cfg.scenario()?;
    let traj = dir.timed("simulate", || {
        simulate_with(&scenario, SimulateOptions::default())
    })?;
    dir.write("ledger.csv", &traj.ledger.to_csv())?;
    if cfg.snapshots {
        let last = traj.states.len() - 1;
        for (tag, k) in [("initial", 0), ("final", last)] {
            dir.snapshot(
                &format!("h_{tag}.shlab"),
                Snapshot::Scalar(traj.states[k].h.clone()),
            )?;
            dir.snapshot(
                &format!("q_{tag}.shlab"),
                Snapshot::Vector(traj.states[k].q.clone()),
            )?;
        }
    }
    let m0 = traj.states[0].mass();
    let drift = (traj.final_state().mass() - m0).abs() / m0;
    dir.line(format!("steps: {}", traj.step_count));
    dir.line(format!("relative mass drift: {drift:.3e}"));
    dir.line(format!(
        "max e2 residual: {:.6e}",
        energy_inequality_residual(&traj.ledger)
    ));
    let rows = traj.ledger.rows();
    dir.line(format!(
        "total energy: {:.10} -> {:.10}",
        rows[0].total,
        rows[rows.len() - 1].total
    ));
    Ok(())
}

fn certificate_csv(sub: &SubsolutionState) -> Result<(String, f64)> {
    let cert = subsolution_certificate(sub)?;
    let mut out = String::from("t,min_margin\n");
    for (t, m) in sub.e.times().iter().zip(&cert.min_margin_per_node) {
        let _ = writeln!(out, "{t},{m}");
    }
    Ok((out, cert.min_margin))
}

fn workbench_cmd(cfg: &ScenarioConfig, seed: u64, dir: &mut RunDir) -> Result<()> {
    let data = cfg.workbench_data()?;
    let base = dir.timed("design", || WorkbenchBase::new(data.clone()))?;
    let delta = cfg.workbench.delta;
    let lambda = match cfg.workbench.lambda {
        Some(l) => l,
        None => dir.timed("lambda_search", || find_lambda0(&base, delta))?,
    };
    let mut sub = base.initial_subsolution(lambda, delta)?;
    let cert = subsolution_certificate(&sub)?;
    if !cert.pass {
        return Err(Error::Constraint(format!(
            "initial subsolution fails the certificate at Λ = {lambda}, min margin {:e}",
            cert.min_margin
        )));
    }
    dir.line(format!("lambda: {lambda:.10}"));
    dir.line(format!("tau: {:.6}", base.design.tau));
    let jump = energy_jump(&sub, &data.h0, &data.u0, &data.a)?;
    dir.line(format!("energy jump at t=0+: {jump:.10}"));

    let mut gap = String::from("step,frequency,I,accepted,delta,min_margin,energy_ratio\n");
    let _ = writeln!(
        gap,
        "0,0,{},true,{},{},0",
        energy_gap(&sub),
        sub.delta,
        cert.min_margin
    );
    let steps = cfg.workbench.steps;
    let mut accepted = 0;
    for m in 0..steps {
        let n = frequency_schedule(m, cfg.workbench.frequency, cfg.grid);
        let opts = ImprovementOptions {
            n,
            oscillation: cfg.oscillatory_options(seed.wrapping_add(m as u64)),
            ..ImprovementOptions::default()
        };
        let rep = dir.timed(&format!("improve_{}", m + 1), || {
            improvement_step(&sub, &opts)
        })?;
        if let Some(msg) = &rep.message {
            log::info!("step {}: {msg}", m + 1);
        }
        accepted += rep.accepted as usize;
        sub = rep.state;
        let margin = subsolution_certificate(&sub)?.min_margin;
        let _ = writeln!(
            gap,
            "{},{n},{},{},{},{margin},{}",
            m + 1,
            rep.gap_after,
            rep.accepted,
            sub.delta,
            rep.energy_ratio
        );
    }
    dir.write("gap.csv", &gap)?;
    let (cert_csv, min_margin) = certificate_csv(&sub)?;
    dir.write("certificate.csv", &cert_csv)?;
    let chain = chain_residuals(&sub)?;
    dir.line(format!("improvement steps: {steps} ({accepted} accepted)"));
    dir.line(format!("I: {:.10}", energy_gap(&sub)));
    dir.line(format!("min certificate margin: {min_margin:.6e}"));
    dir.line(format!("chain residual: {:.3e}", chain.max()));
    let last = sub.e.nodes() - 1;
    dir.snapshot("E_final.shlab", Snapshot::Scalar(sub.e.slice(last).clone()))?;
    dir.snapshot("q_mid.shlab", Snapshot::Vector(sub.momentum(last / 2)))?;
    Ok(())
}

fn diagnose_cmd(cfg: &ScenarioConfig, dir: &mut RunDir) -> Result<()> {
    let scenario = cfg.scenario()?;
    let opts = SimulateOptions {
        record_steps: true,
        max_steps: None,
    };
    let traj = dir.timed("simulate", || simulate_with(&scenario, opts))?;
    dir.write("ledger.csv", &traj.ledger.to_csv())?;
    let basis = cfg.diagnostics.basis;
    let wr = dir.timed("weak_residual", || weak_residual(&traj, basis))?;
    let e2 = energy_inequality_residual(&traj.ledger);
    let mut csv = String::from("quantity,value\n");
    let _ = writeln!(csv, "e2_residual_max,{e2}");
    let _ = writeln!(csv, "weak_mass,{}", wr.mass);
    let _ = writeln!(csv, "weak_momentum,{}", wr.momentum);
    let _ = writeln!(csv, "weak_mass_mode,{}", wr.mass_mode);
    let _ = writeln!(csv, "test_functions,{}", wr.test_functions);
    dir.write("diagnostics.csv", &csv)?;
    dir.line(format!("steps: {}", traj.step_count));
    dir.line(format!("max e2 residual: {e2:.6e}"));
    dir.line(format!(
        "weak residual (mass, momentum, mass mode): {:.3e}, {:.3e}, {:.3e} over {} test functions",
        wr.mass, wr.momentum, wr.mass_mode, wr.test_functions
    ));
    Ok(())
}

fn wsu_cmd(cfg: &ScenarioConfig, dir: &mut RunDir) -> Result<()> {
    let scenario = cfg.scenario()?;
    let coarse = TorusGrid::new(
        cfg.diagnostics.coarse,
        cfg.diagnostics.coarse * cfg.grid.ny() / cfg.grid.nx(),
    )?;
    let eps = cfg.diagnostics.eps;
    let rep = dir.timed("experiment", || {
        weak_strong_experiment(&scenario, eps, coarse)
    })?;
    dir.write("relative_energy.csv", &rep.to_csv())?;
    dir.line(format!(
        "coarse grid: {}x{}, eps: {eps}",
        coarse.nx(),
        coarse.ny()
    ));
    dir.line(format!(
        "relative energy: {:.6e} -> {:.6e}",
        rep.initial(),
        rep.last()
    ));
    dir.line(format!(
        "fitted Gronwall rate c: {:.6} (rms {:.3e})",
        rep.rate, rep.fit_residual
    ));
    for w in &rep.warnings {
        dir.line(format!("warning: {w}"));
    }
    Ok(())
}

fn convergence_cmd(cfg: &ScenarioConfig, dir: &mut RunDir) -> Result<()> {
    let scenario = cfg.scenario()?;
    let levels = cfg.diagnostics.levels.clone();
    let rep = dir.timed("study", || convergence_study(&scenario, &levels))?;
    dir.write("convergence.csv", &rep.to_csv())?;
    for (n, e) in rep.sizes.iter().zip(&rep.errors) {
        dir.line(format!("n = {n}: L1 error {e:.6e}"));
    }
    dir.line(format!("observed orders: {:?}", rep.orders));
    Ok(())
}
