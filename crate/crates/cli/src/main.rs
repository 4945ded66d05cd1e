//! Command-line driver: query generation, similarity sweeps, fitting, the
//! frame similarity table and the early-rejection comparison.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use partialfit::engine::{run_fit, FitConfig};
use partialfit::experiments::{compare_er, run_sweep, sphere_query, ExperimentError, FrameTable, SphereFixture};
use partialfit::grammar::{FamilyId, ModelFamily};
use partialfit::io::{
    export_model, read_cloud, synthesize_query, trace_csv, write_atomic, write_cloud, CloudFormat, GenerateConfig,
    IoError, RunConfig, SweepConfig,
};
use partialfit::metrics::MetricConfig;
use serde_json::json;
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "partialfit",
    version,
    about = "Fit procedural models to partial point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a query cloud from a model and noise description.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        format: Option<CloudFormat>,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep one parameter and record every similarity per grid value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a model family to a query cloud.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// WMM of the four frame models against the four frame queries.
    FrameTable {
        #[command(flatten)]
        common: Common,
    },
    /// Run one fit with and without early rejection and compare throughput.
    CompareEr {
        /// Fit config; defaults to the heavy-noise sphere fixture.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        budget: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Assertion(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Assertion(_) => 3,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Io(e) => e.into(),
            e => CliError::Validation(e.to_string()),
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn generate(config: &Path, seed: Option<u64>, format: Option<CloudFormat>, out: &Path) -> Result<(), CliError> {
    let cfg = GenerateConfig::load(config)?;
    let family = cfg.model_family()?;
    let cloud = synthesize_query(
        &family,
        &cfg.param_vector(),
        cfg.resolution,
        &cfg.noise,
        seed.unwrap_or(cfg.seed),
    )?;
    ensure_dir(out)?;
    let format = format.unwrap_or(cfg.format);
    let path = out.join(format!("query.{}", format.extension()));
    write_cloud(&path, &cloud, format)?;
    info!("wrote {} points to {}", cloud.len(), path.display());
    println!("{}", path.display());
    Ok(())
}

fn sweep(config: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = SweepConfig::load(config)?;
    let tables = run_sweep(&cfg)?;
    ensure_dir(out)?;
    for t in &tables {
        let path = out.join(t.file_name());
        write_atomic(&path, &t.to_csv()?)?;
        for (m, curve) in t.metrics.iter().zip(&t.normalized) {
            if curve.flat {
                log::warn!("{}: {} is flat over the grid", t.file_name(), m.column());
            }
        }
        println!("{}", path.display());
    }
    Ok(())
}

fn fit(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.fit.seed = s;
    }
    let family = cfg.model_family()?;
    let query = read_cloud(&cfg.query, cfg.query_format())?;
    if query.is_empty() {
        return Err(CliError::Validation(format!("{}: query is empty", cfg.query.display())));
    }
    let result = run_fit(&family, &query, &cfg.fit).map_err(|e| CliError::Validation(e.to_string()))?;
    ensure_dir(out)?;
    let params: serde_json::Map<String, serde_json::Value> = result
        .best_params
        .values
        .iter()
        .map(|(k, v)| (k.to_string(), json!(v)))
        .collect();
    write_json(
        &out.join("result.json"),
        &json!({
            "family": family.id.to_string(),
            "seed": cfg.fit.seed,
            "best_params": params,
            "best_log_post": result.best_log_post,
            "proposals": result.proposals,
            "accepted": result.accepted,
            "swaps_attempted": result.swaps_attempted,
            "swaps_accepted": result.swaps_accepted,
            "early_rejection": result.early_rejection,
        }),
    )?;
    write_json(
        &out.join("timing.json"),
        &json!({
            "seconds": result.elapsed_seconds,
            "proposals_per_second": result.proposals_per_second(),
        }),
    )?;
    write_atomic(&out.join("trace.csv"), &trace_csv(&result.trace)?)?;
    let snaps = out.join("snapshots");
    ensure_dir(&snaps)?;
    for s in &result.snapshots {
        let prims = family
            .instantiate(&s.params)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        export_model(
            &prims,
            cfg.snapshot_level,
            &snaps.join(format!("best_{:08}.obj", s.iter)),
        )?;
    }
    println!("best log-posterior {:.6}", result.best_log_post);
    for (k, v) in &result.best_params.values {
        println!("  {k} = {v:.6}");
    }
    Ok(())
}

fn frame_table(out: &Path) -> Result<(), CliError> {
    let table = FrameTable::compute(&MetricConfig::default())?;
    ensure_dir(out)?;
    let path = out.join("frame_table.csv");
    write_atomic(&path, &table.to_csv()?)?;
    print!("{}", String::from_utf8_lossy(&table.to_csv()?));
    let bad = table.off_diagonal_rows();
    if !bad.is_empty() {
        return Err(CliError::Assertion(format!("rows {bad:?} peak off the diagonal")));
    }
    Ok(())
}

fn compare(config: Option<&Path>, seed: Option<u64>, budget: Option<u64>, out: &Path) -> Result<(), CliError> {
    let (family, query, mut fit) = match config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            let query = read_cloud(&cfg.query, cfg.query_format())?;
            (cfg.model_family()?, query, cfg.fit)
        }
        None => (
            ModelFamily::new(FamilyId::Sphere),
            sphere_query(SphereFixture::HighUniform, 1),
            FitConfig {
                h: 10.0,
                delta: 0.04,
                budget: 10_000,
                ..FitConfig::default()
            },
        ),
    };
    if let Some(s) = seed {
        fit.seed = s;
    }
    if let Some(b) = budget {
        fit.budget = b;
    }
    let cmp = compare_er(&family, &query, &fit)?;
    ensure_dir(out)?;
    write_atomic(&out.join("compare_er.csv"), &cmp.to_csv()?)?;
    println!(
        "with early rejection {:.1} proposals/s, without {:.1} proposals/s, speedup {:.2}x",
        cmp.with_er.proposals_per_second,
        cmp.without_er.proposals_per_second,
        cmp.speedup()
    );
    println!(
        "best log-posterior {:.6} vs {:.6}",
        cmp.with_er.best_log_post, cmp.without_er.best_log_post
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate {
            config,
            seed,
            format,
            common,
        } => generate(&config, seed, format, &common.out),
        Command::Sweep { config, common } => sweep(&config, &common.out),
        Command::Fit { config, seed, common } => fit(&config, seed, &common.out),
        Command::FrameTable { common } => frame_table(&common.out),
        Command::CompareEr {
            config,
            seed,
            budget,
            common,
        } => compare(config.as_deref(), seed, budget, &common.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
