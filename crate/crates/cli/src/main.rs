use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hybridwarp::pipeline::{
    self, load_config, AlignDepthConfig, CacheUpdateConfig, FilterConfig, GenSceneConfig, MetricsConfig,
    PipelineConfig, PipelineError,
};
use hybridwarp::scheduler::ScheduleConfig;
use serde::{Deserialize, Serialize};

/// Coarse-video synthesis, world-cache maintenance and schedule simulation.
#[derive(Debug, Parser)]
#[command(name = "hybridwarp", version)]
struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides any seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for frame-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render coarse frames and validity masks along a target trajectory.
    Coarse,
    /// Build a world cache from a source video.
    CacheBuild,
    /// Align a generated segment to a cache and merge its new content.
    CacheUpdate,
    /// Print point count, bounding box and per-round counts of a cache.
    CacheStats,
    /// Simulate the autoregressive schedule with a stub denoiser.
    Schedule,
    /// Per-frame PSNR between two frame directories.
    Metrics,
    /// Ray-cast a synthetic scene into a source directory.
    GenScene,
    /// Align predicted depth to sparse anchors per region.
    AlignDepth,
    /// Apply the sample rejection rules to a manifest.
    Filter,
}

#[derive(Debug, Deserialize)]
struct CacheStatsConfig {
    cache: PathBuf,
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("summary serializes"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| PipelineError::Config("--config is required".into()))?;
    let base = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = |fallback: Option<PathBuf>| {
        cli.out
            .clone()
            .or(fallback)
            .ok_or_else(|| PipelineError::Config("--out is required".into()))
    };

    match cli.command {
        Command::Coarse => {
            let cfg = load_config::<PipelineConfig>(&config_path)?.resolved(&base);
            let out = out(cfg.output.clone())?;
            print_json(&pipeline::cmd_coarse(&cfg, &out, cli.threads)?);
        }
        Command::CacheBuild => {
            let cfg = load_config::<PipelineConfig>(&config_path)?.resolved(&base);
            let out = out(cfg.output.clone())?;
            print_json(&pipeline::cmd_cache_build(&cfg, &out)?);
        }
        Command::CacheUpdate => {
            let cfg = load_config::<CacheUpdateConfig>(&config_path)?.resolved(&base);
            print_json(&pipeline::cmd_cache_update(&cfg, &out(None)?)?);
        }
        Command::CacheStats => {
            let cfg = load_config::<CacheStatsConfig>(&config_path)?;
            let stats = pipeline::cmd_cache_stats(&pipeline::resolve(&base, &cfg.cache))?;
            if let Some(dir) = &cli.out {
                hybridwarp::io::write_json(&dir.join("stats.json"), &stats)?;
            }
            print_json(&stats);
        }
        Command::Schedule => {
            let mut cfg = load_config::<ScheduleConfig>(&config_path)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            print_json(&pipeline::cmd_schedule(&cfg, &out(None)?)?);
        }
        Command::Metrics => {
            let cfg = load_config::<MetricsConfig>(&config_path)?.resolved(&base);
            let table = pipeline::cmd_metrics(&cfg, &out(None)?)?;
            for (name, value) in &table.rows {
                println!("{name},{value}");
            }
            println!("mean,{}", table.mean);
        }
        Command::GenScene => {
            let cfg = load_config::<GenSceneConfig>(&config_path)?;
            let video = pipeline::cmd_gen_scene(&cfg, &out(None)?)?;
            println!("{} frames", video.frames.len());
        }
        Command::AlignDepth => {
            let cfg = load_config::<AlignDepthConfig>(&config_path)?.resolved(&base);
            print_json(&pipeline::cmd_align_depth(&cfg, &out(None)?)?);
        }
        Command::Filter => {
            let cfg = load_config::<FilterConfig>(&config_path)?;
            let report = pipeline::cmd_filter(&cfg, &base, &out(None)?)?;
            println!("kept {} of {}", report.kept(), report.entries.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
