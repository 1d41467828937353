//! Command-line surface: scenario orchestration around the library solvers.
//!
//! Exit codes: 0 success / all checks passed, 1 verification failure,
//! 2 usage or configuration error, 3 numerical error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use levy_fdt::config::ScenarioConfig;
use levy_fdt::error::Error;
use levy_fdt::fokker_planck::solve_stationary;
use levy_fdt::model::{audit_assumptions, ProbeSpec};
use levy_fdt::output::{
    write_ensemble_csv, write_grid_field_csv, write_json, write_response_csv, Provenance,
};
use levy_fdt::response::{
    response_agarwal, response_seifert, response_semigroup, verify_fdt, ResponseCurve,
};
use levy_fdt::simulate::{run_ensemble, sample_steady_state, InitialLaw};
use levy_fdt::stable::RngStream;

#[derive(Parser)]
#[command(
    name = "levyfdt",
    version,
    about = "Alpha-stable SDE simulation, nonlocal Fokker-Planck solves and \
             linear response cross-validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// scenario file (TOML); defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// output directory override
    #[arg(long)]
    output: Option<PathBuf>,
    /// cap on worker threads (does not change results)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a trajectory ensemble and write observable statistics
    Simulate(Common),
    /// Solve for the stationary density and write it with the solve log
    Stationary(Common),
    /// Estimate the response function
    Response {
        #[command(flatten)]
        common: Common,
        /// one of: direct, agarwal, seifert, semigroup, all
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Run all four response methods and cross-validate them
    Verify(Common),
    /// Probe the drift/diffusion assumptions and report the verdict
    Audit(Common),
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::from_file(path)?,
        None => ScenarioConfig::default(),
    };
    cfg.apply_env(|key| std::env::var(key).ok())?;
    if let Some(seed) = common.seed {
        cfg.ensemble.master_seed = seed;
    }
    if let Some(dir) = &common.output {
        cfg.output.directory = dir.display().to_string();
    }
    Ok(cfg)
}

fn out_path(cfg: &ScenarioConfig, name: &str) -> PathBuf {
    Path::new(&cfg.output.directory).join(name)
}

fn provenance(cfg: &ScenarioConfig) -> Provenance {
    Provenance { config_hash: cfg.hash(), seed: cfg.ensemble.master_seed }
}

fn cmd_simulate(cfg: &ScenarioConfig) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let observables: Vec<_> = cfg
        .build_observables()?
        .into_iter()
        .map(|o| {
            let f = o.f.clone();
            (
                format!("O_{}", o.name),
                Arc::new(move |x: &[f64]| f(x[0])) as levy_fdt::model::ScalarField,
            )
        })
        .collect();
    let init = InitialLaw::Samples(Arc::new(sample_steady_state(
        &model,
        cfg.integrator.burn_in,
        cfg.ensemble.n_traj,
        cfg.integrator.thinning,
        cfg.integrator.dt,
        cfg.ensemble.master_seed,
    )?));
    let result = run_ensemble(
        &model,
        &init,
        &cfg.integrator_spec()?,
        None,
        &observables,
        cfg.ensemble.n_traj,
        cfg.ensemble.master_seed,
    )?;
    if let Some(w) = &result.warning {
        eprintln!("warning: {w}");
    }
    let path = out_path(cfg, "ensemble.csv");
    write_ensemble_csv(&path, &result, &provenance(cfg))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_stationary(cfg: &ScenarioConfig) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let (p_ss, log) = solve_stationary(&model, cfg.build_grid()?, &cfg.fp_spec())?;
    let csv = out_path(cfg, "stationary.csv");
    write_grid_field_csv(&csv, &p_ss, &provenance(cfg))?;
    let json = out_path(cfg, "stationary_log.json");
    write_json(&json, &log)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn cmd_response(cfg: &ScenarioConfig, method: &str) -> Result<bool, Error> {
    let model = cfg.build_model()?;
    let pert = cfg.build_perturbation()?;
    let observable = cfg
        .build_observables()?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("response needs at least one observable".into()))?;
    let prov = provenance(cfg);

    if method == "all" {
        let report = verify_fdt(&model, &pert, &observable, &cfg.verify_spec()?)?;
        let refs: Vec<&ResponseCurve> = report.curves.iter().collect();
        write_response_csv(&out_path(cfg, "response_all.csv"), &refs, &prov)?;
        write_json(&out_path(cfg, "response_report.json"), &report)?;
        println!("wrote response_all.csv and response_report.json");
        return Ok(report.pass);
    }

    let grid = cfg.build_grid()?;
    let t_grid = cfg.time_grid();
    let mc = cfg.mc_spec();
    let fp = cfg.fp_spec();
    let curve = match method {
        "direct" => {
            let (curve, _) = levy_fdt::response::response_direct(
                &model,
                &pert,
                &observable,
                &cfg.perturbation.eps_list,
                &t_grid,
                &mc,
            )?;
            curve
        }
        "agarwal" => {
            let (p_ss, _) = solve_stationary(&model, grid, &fp)?;
            let y = levy_fdt::fokker_planck::agarwal_observable(&p_ss, &pert)?;
            response_agarwal(&model, &y, &observable, &pert.name, &t_grid, &mc)?
        }
        "seifert" => {
            let (p_ss, _) = solve_stationary(&model, grid, &fp)?;
            let conj = levy_fdt::fokker_planck::solve_conjugate(&model, &p_ss, &pert)?;
            response_seifert(&model, &conj.u, &observable, &pert.name, &t_grid, &mc)?
        }
        "semigroup" => {
            let (p_ss, _) = solve_stationary(&model, grid, &fp)?;
            response_semigroup(&model, &p_ss, &pert, &observable, &t_grid, &fp)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown method '{other}' (expected direct, agarwal, seifert, semigroup or all)"
            )))
        }
    };
    let path = out_path(cfg, &format!("response_{method}.csv"));
    write_response_csv(&path, &[&curve], &prov)?;
    println!("wrote {}", path.display());
    Ok(true)
}

fn cmd_verify(cfg: &ScenarioConfig) -> Result<bool, Error> {
    let model = cfg.build_model()?;
    let pert = cfg.build_perturbation()?;
    let observable = cfg
        .build_observables()?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Config("verify needs at least one observable".into()))?;
    let report = verify_fdt(&model, &pert, &observable, &cfg.verify_spec()?)?;
    let path = out_path(cfg, "verify_report.json");
    write_json(&path, &report)?;
    for check in &report.pairwise_checks {
        println!(
            "{} vs {}: sup_diff={:.3e} tol={:.3e} {}",
            check.a.label(),
            check.b.label(),
            check.sup_diff,
            check.tol,
            if check.pass { "pass" } else { "FAIL" }
        );
    }
    println!("wrote {}", path.display());
    Ok(report.pass)
}

fn cmd_audit(cfg: &ScenarioConfig) -> Result<(), Error> {
    let model = cfg.build_model()?;
    let probe = ProbeSpec { half_width: cfg.grid.half_width / 2.0, count: 20_000 };
    let mut stream = RngStream::new(cfg.ensemble.master_seed, 0);
    let audit = audit_assumptions(&model, probe, &mut stream)?;
    let path = out_path(cfg, "audit.json");
    write_json(&path, &audit)?;
    println!("verdict: {:?}", audit.verdict);
    println!("wrote {}", path.display());
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Unsupported(_) => 2,
        _ => 3,
    }
}

fn run() -> Result<bool, Error> {
    let cli = Cli::parse();
    let (common, method) = match &cli.command {
        Command::Simulate(c) | Command::Stationary(c) | Command::Verify(c) | Command::Audit(c) => {
            (c, None)
        }
        Command::Response { common, method } => (common, Some(method.clone())),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool setup failed: {e}")))?;
    }
    let cfg = load_config(common)?;
    match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg).map(|_| true),
        Command::Stationary(_) => cmd_stationary(&cfg).map(|_| true),
        Command::Response { .. } => cmd_response(&cfg, method.as_deref().unwrap_or("all")),
        Command::Verify(_) => cmd_verify(&cfg),
        Command::Audit(_) => cmd_audit(&cfg).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
