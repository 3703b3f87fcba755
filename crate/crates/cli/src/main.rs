//! `surrogacy` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use surrogacy::ingest::{AnalysisConfig, DEFAULT_REPLICATES};
use surrogacy::pipeline::{
    hr_checks, load_trials, run_analysis, simulate_to_dir, write_artifacts, write_ipd, write_qc, PipelineError,
    RunOptions,
};
use surrogacy::simlab::SimScenario;

#[derive(Parser)]
#[command(name = "surrogacy", version, about = "Binary surrogate endpoint validation across two-arm trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rebuild patient-level data from digitized curves and write ipd.csv.
    Reconstruct(Common),
    /// Run the full surrogacy analysis and write the report and figures.
    Analyze(Common),
    /// Simulate trials from a scenario file and write a ready-to-run config.
    Simulate(Common),
    /// Report how well each reconstruction reproduces its input curve.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Analysis config (TOML); for `simulate`, the scenario file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the bootstrap seed (for `simulate`, the scenario seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap replicates; defaults to the config value, or 10000.
    #[arg(long)]
    replicates: Option<usize>,
    /// Leave this trial out; may be repeated.
    #[arg(long = "exclude-trial", value_name = "ID")]
    exclude_trial: Vec<String>,
    /// Output directory; defaults to the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl ToString) -> Failure {
    Failure {
        code: 1,
        message: message.to_string(),
    }
}

fn load_config(args: &Common) -> Result<AnalysisConfig, Failure> {
    Ok(AnalysisConfig::load(&args.config).map_err(PipelineError::from)?)
}

fn out_dir(args: &Common, cfg: &AnalysisConfig) -> PathBuf {
    args.out.clone().unwrap_or_else(|| cfg.output_dir())
}

fn excluded(args: &Common, cfg: &AnalysisConfig) -> Vec<String> {
    let mut ids = cfg.analysis.exclude_trials.clone();
    ids.extend(args.exclude_trial.iter().cloned());
    ids
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", dir.display()),
    })
}

fn reconstruct(args: &Common) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let loaded = load_trials(&cfg, &excluded(args, &cfg))?;
    let dir = out_dir(args, &cfg);
    create_dir(&dir)?;
    let ipd = loaded.all_ipd();
    write_ipd(&dir.join("ipd.csv"), &ipd)?;
    write_qc(
        &dir.join("reconstruction_qc.json"),
        &loaded.all_qc(),
        &hr_checks(&loaded.trials, cfg.analysis.hr_tolerance),
    )?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "{} patients from {} trials written to {}",
        ipd.len(),
        loaded.trials.len(),
        dir.join("ipd.csv").display()
    );
    Ok(())
}

fn analyze(args: &Common) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let opts = RunOptions {
        seed: args.seed,
        replicates: args.replicates,
        exclude_trials: args.exclude_trial.clone(),
    };
    let analysis = run_analysis(&cfg, &opts)?;
    let dir = out_dir(args, &cfg);
    let written = write_artifacts(&analysis, &dir)?;
    print!("{}", analysis.report.render_text());
    info!("wrote {} files to {}", written.len(), dir.display());
    Ok(())
}

fn simulate(args: &Common) -> Result<(), Failure> {
    let mut scenario = SimScenario::load(&args.config).map_err(config_failure)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let dir = args.out.clone().ok_or_else(|| config_failure("simulate needs --out"))?;
    let sim = simulate_to_dir(&scenario, &dir, args.replicates.unwrap_or(DEFAULT_REPLICATES))?;
    println!(
        "{} trials, {} patients written to {}; analyze with --config {}",
        sim.truth.len(),
        sim.records.len(),
        dir.display(),
        dir.join("analysis.toml").display()
    );
    Ok(())
}

fn validate(args: &Common) -> Result<(), Failure> {
    let cfg = load_config(args)?;
    let loaded = load_trials(&cfg, &excluded(args, &cfg))?;
    let qc = loaded.all_qc();
    let hr = hr_checks(&loaded.trials, cfg.analysis.hr_tolerance);
    println!(
        "{:<16}{:<24}{:>8}{:>8}{:>8}{:>10}{:>9}",
        "Trial", "Stratum", "points", "RMSE", "MAE", "KS p", "repairs"
    );
    for q in &qc {
        let v = &q.validation;
        println!(
            "{:<16}{:<24}{:>8}{:>8.4}{:>8.4}{:>10.3}{:>9}",
            q.trial_id,
            q.stratum,
            v.n_points,
            v.rmse,
            v.mae,
            v.ks_p_value,
            q.repairs.len()
        );
    }
    if let Some(q) = qc.first() {
        println!("{}", q.validation.advisory);
    }
    for h in &hr {
        let refit = h.refit_hr.map_or("n/a".to_string(), |r| format!("{r:.3}"));
        println!(
            "trial {}: reported HR {:.3}, refitted {refit}{}",
            h.trial_id,
            h.reported_hr,
            if h.within_tolerance { "" } else { " (outside tolerance)" }
        );
    }
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_qc(&dir.join("reconstruction_qc.json"), &qc, &hr)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Reconstruct(a) => reconstruct(a),
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
