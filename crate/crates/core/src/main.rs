// `!(x > 0.0)` also rejects NaN, unlike `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Command-line entry point: simulate, analyze, budget, scenario.
//!
//! One JSON config file drives each run; flags only override the seed and
//! choose file paths. Exit codes are a stable contract: 0 success, 2
//! config/validation error, 3 I/O error, 4 analysis failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use qlink::analysis::{analyze_stream, AnalysisError};
use qlink::config::{load_config, ConfigError};
use qlink::link_budget::{project_scenario, BackgroundMode, ScenarioChanges};
use qlink::report::Report;
use qlink::timetag_sim::{read_tags, simulate, write_tags, TagIoError};

#[derive(Parser)]
#[command(name = "qlink", version, about = "Simulate and analyze single-photon time-tag streams for a satellite laser-ranging optical link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic time-tag stream from a run config.
    Simulate {
        /// Run config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output tag CSV; a `<out>.meta.json` sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Override the seed from the config's sim section.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full analysis pipeline on a tag stream and write a report.
    Analyze {
        /// Input tag CSV.
        #[arg(long)]
        tags: PathBuf,
        /// Run config JSON describing the same pass.
        #[arg(long)]
        config: PathBuf,
        /// Output report JSON.
        #[arg(long)]
        report: PathBuf,
        /// If set, write the delta and rate histograms as CSVs here.
        #[arg(long)]
        hist_dir: Option<PathBuf>,
    },
    /// Print link-budget intermediates at a given range.
    Budget {
        /// Run config JSON; the budget section is required.
        #[arg(long)]
        config: PathBuf,
        /// Slant range in kilometers.
        #[arg(long)]
        range_km: f64,
    },
    /// Project a report's kept-frame summary onto a changed link.
    Scenario {
        /// Report JSON produced by `analyze`.
        #[arg(long)]
        report: PathBuf,
        /// Extra diffraction gain, dB.
        #[arg(long, default_value_t = 0.0)]
        gain_db: f64,
        /// New receiver transmission η_rx.
        #[arg(long)]
        eta_rx: f64,
        /// New satellite-side photon number μ_sat.
        #[arg(long)]
        mu_sat: f64,
        /// How the background responds to the receiver change.
        #[arg(long, value_enum, default_value_t = BackgroundFlag::DarkDominated)]
        background: BackgroundFlag,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackgroundFlag {
    /// Background is detector dark counts; unchanged by η_rx.
    DarkDominated,
    /// Background enters through the receiver and scales with η_rx.
    ScalesWithEtaRx,
}

impl From<BackgroundFlag> for BackgroundMode {
    fn from(f: BackgroundFlag) -> BackgroundMode {
        match f {
            BackgroundFlag::DarkDominated => BackgroundMode::DarkDominated,
            BackgroundFlag::ScalesWithEtaRx => BackgroundMode::ScalesWithEtaRx,
        }
    }
}

enum CliError {
    Config(String),
    Io(String),
    Analysis(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Analysis(_) => 4,
        }
    }

    fn reason(&self) -> (&'static str, &str) {
        match self {
            CliError::Config(m) => ("config", m),
            CliError::Io(m) => ("io", m),
            CliError::Analysis(m) => ("analysis", m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> CliError {
        match e {
            ConfigError::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<TagIoError> for CliError {
    fn from(e: TagIoError) -> CliError {
        match e {
            TagIoError::Io(e) => CliError::Io(e.to_string()),
            TagIoError::Format(f) => CliError::Analysis(format!("malformed tag stream: {f}")),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> CliError {
        CliError::Analysis(e.to_string())
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, message) = e.reason();
            eprintln!("{}", json!({ "error": kind, "reason": message }));
            ExitCode::from(e.exit_code())
        }
    }
}

/// Cap the worker count via QLINK_THREADS (default: machine parallelism).
fn init_thread_pool() {
    if let Ok(v) = std::env::var("QLINK_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, out, seed } => cmd_simulate(&config, &out, seed),
        Command::Analyze { tags, config, report, hist_dir } => {
            cmd_analyze(&tags, &config, &report, hist_dir.as_deref())
        }
        Command::Budget { config, range_km } => cmd_budget(&config, range_km),
        Command::Scenario { report, gain_db, eta_rx, mu_sat, background } => {
            cmd_scenario(&report, gain_db, eta_rx, mu_sat, background.into())
        }
    }
}

fn cmd_simulate(config: &std::path::Path, out: &std::path::Path, seed: Option<u64>) -> Result<(), CliError> {
    let loaded = load_config(config)?;
    let sim_cfg = loaded.sim_config(seed)?;
    let stream = simulate(&sim_cfg).map_err(|e| CliError::Config(e.to_string()))?;
    write_tags(&stream, out)?;
    println!(
        "{}",
        json!({
            "out": out,
            "tags": stream.tags.len(),
            "seed": sim_cfg.seed,
            "config_digest": loaded.digest,
        })
    );
    Ok(())
}

fn cmd_analyze(
    tags: &std::path::Path,
    config: &std::path::Path,
    report_path: &std::path::Path,
    hist_dir: Option<&std::path::Path>,
) -> Result<(), CliError> {
    let loaded = load_config(config)?;
    let pass = loaded.pass_model()?;
    let sched = loaded.config.schedule.to_schedule();
    let budget = loaded.budget_params();
    let opts = loaded.config.analysis.to_options();
    let stream = read_tags(tags)?;
    let result = analyze_stream(&stream, &pass, &sched, &budget, &opts)?;

    if let Some(dir) = hist_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(e.to_string()))?;
        qlink::histogram::write_csv(&result.delta_histogram, &dir.join("delta_histogram.csv"))
            .map_err(|e| CliError::Io(e.to_string()))?;
        if let Some(fit) = &result.rate_fit {
            qlink::histogram::write_csv(&fit.histogram, &dir.join("rate_histogram.csv"))
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }

    let report = Report::new(result, loaded.digest.clone(), loaded.config.pass_id.clone(), budget.eta_rx);
    report
        .write(report_path)
        .map_err(|e| CliError::Io(e.to_string()))?;
    println!(
        "{}",
        json!({
            "report": report_path,
            "tags": report.analysis.total_tags,
            "kept_frames": report.analysis.arts.kept,
            "discard_fraction": report.analysis.arts.discard_fraction,
            "kept_rate_cps": report.summary.rate_cps,
            "kept_snr": report.summary.snr,
            "mu_sat_mean": report.summary.mu_sat,
        })
    );
    Ok(())
}

fn cmd_budget(config: &std::path::Path, range_km: f64) -> Result<(), CliError> {
    let loaded = load_config(config)?;
    let section = loaded
        .config
        .budget
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no budget section".into()))?;
    let params = section.to_params();
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if !(range_km > 0.0) {
        return Err(CliError::Config("--range-km must be positive".into()));
    }
    let range_m = range_km * 1e3;
    let t_diff = params.diffraction_transmittance(range_m);
    println!(
        "{}",
        json!({
            "omega_sr": params.solid_angle_sr(),
            "aperture_urad": params.equivalent_aperture_rad() * 1e6,
            "t_diff": t_diff.value,
            "t_diff_db": 10.0 * t_diff.value.log10(),
            "t_diff_clamped": t_diff.clamped,
            "mu_rec_per_mu_sat": params.mu_received(range_m, 1.0),
        })
    );
    Ok(())
}

fn cmd_scenario(
    report_path: &std::path::Path,
    gain_db: f64,
    eta_rx: f64,
    mu_sat: f64,
    background: BackgroundMode,
) -> Result<(), CliError> {
    let report = Report::read(report_path).map_err(|e| match e {
        qlink::report::ReportError::Io(e) => CliError::Io(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let changes = ScenarioChanges {
        diffraction_gain_db: gain_db,
        eta_rx_new: eta_rx,
        mu_sat_new: mu_sat,
        background_mode: background,
    };
    let projected = project_scenario(&report.summary, &changes)
        .map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "{}",
        json!({
            "rate_cps": projected.rate_cps,
            "snr": projected.snr,
            "base": report.summary,
            "config_digest": report.config_digest,
        })
    );
    Ok(())
}
