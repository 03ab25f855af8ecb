//! Command-line entry points for the hybrid zoom fusion pipeline.
//!
//! Exit codes: 0 success, 2 I/O or decode failure, 3 invalid config or
//! scene, 4 dimension or metadata inconsistency, 5 fusion skipped
//! (low-confidence coarse alignment; the wide frame is copied through).

mod io;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use zoomfuse::config::PipelineConfig;
use zoomfuse::pipeline::{run_pipeline, PipelineOutput, StageTimings};
use zoomfuse::rig::{synthesize_pair, SceneSpec};
use zoomfuse::{FusionError, Result};

#[derive(Parser)]
#[command(name = "zoomfuse", version, about = "Dual-camera hybrid zoom fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse a synchronized wide/tele pair into a detail-enhanced wide frame.
    Fuse(FuseArgs),
    /// Synthesize a wide/tele pair with ground-truth labels from a scene
    /// description.
    Simulate(SimulateArgs),
    /// Benchmark the pipeline on a pair directory and report per-stage
    /// median latencies.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FuseArgs {
    /// Wide camera frame (PNG, 8- or 16-bit).
    #[arg(long)]
    wide: PathBuf,
    /// Tele camera frame (PNG, 8- or 16-bit).
    #[arg(long)]
    tele: PathBuf,
    /// Camera metadata JSON (focal_ratio, tele_fov_rect, focus_roi).
    #[arg(long)]
    meta: PathBuf,
    /// Pipeline configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output image path (16-bit PNG).
    #[arg(long)]
    out: PathBuf,
    /// Directory for intermediate dumps (source, warped reference, masks,
    /// flow fields).
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    /// Write per-stage timings as JSON to this path ("-" for stdout).
    #[arg(long)]
    timings_json: Option<PathBuf>,
    /// Worker threads (0 = all cores). Overrides the config value.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene description JSON.
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for the pair, metadata, and labels.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory holding wide.png, tele.png, and meta.json (the simulate
    /// layout).
    #[arg(long)]
    pair_dir: PathBuf,
    /// Pipeline configuration JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of timed runs; the report takes per-stage medians.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Write the timing report as JSON to this path ("-" for stdout only).
    #[arg(long)]
    timings_json: Option<PathBuf>,
    /// Worker threads (0 = all cores). Overrides the config value.
    #[arg(long)]
    threads: Option<usize>,
}

fn exit_code_for(err: &FusionError) -> u8 {
    match err {
        FusionError::Io(_) => 2,
        FusionError::InvalidConfig(_) | FusionError::InvalidScene(_) => 3,
        FusionError::InvalidInput(_) | FusionError::DimensionMismatch { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuse(args) => cmd_fuse(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            PipelineConfig::from_json(&text)
        }
    }
}

/// Runs `f` inside a rayon pool with the requested thread count (0 = all
/// cores). Results are bit-identical across thread counts; the pool only
/// affects latency.
fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| FusionError::InvalidConfig(e.to_string()))?;
    pool.install(f)
}

fn emit_timings(timings: &StageTimings, dest: &Option<PathBuf>) -> Result<()> {
    let Some(path) = dest else { return Ok(()) };
    if path.as_os_str() == "-" {
        println!(
            "{}",
            serde_json::to_string_pretty(timings)
                .map_err(|e| FusionError::Io(std::io::Error::other(e.to_string())))?
        );
        Ok(())
    } else {
        io::save_json(path, timings)
    }
}

fn dump_intermediates(dir: &Path, output: &PipelineOutput) -> Result<()> {
    let Some(inter) = &output.intermediates else {
        return Ok(());
    };
    fs::create_dir_all(dir)?;
    io::save_rgb16(&dir.join("i_src.png"), &inter.src)?;
    io::save_rgb16(&dir.join("i_ref.png"), &inter.reference)?;
    io::save_rgb16(&dir.join("i_ref_warped.png"), &inter.ref_warped)?;
    io::save_flo(&dir.join("flow_fwd.flo"), &inter.flow_fwd)?;
    io::save_logvar(&dir.join("flow_fwd.logvar"), &inter.flow_fwd)?;
    io::save_flo(&dir.join("flow_bwd.flo"), &inter.flow_bwd)?;
    io::save_logvar(&dir.join("flow_bwd.logvar"), &inter.flow_bwd)?;
    io::save_mask(&dir.join("m_occlusion.png"), &inter.occlusion)?;
    io::save_mask(&dir.join("m_defocus.png"), &inter.defocus)?;
    io::save_mask(&dir.join("m_flow_uncertainty.png"), &inter.flow_uncertainty)?;
    io::save_mask(&dir.join("m_rejection.png"), &inter.rejection)?;
    io::save_mask(&dir.join("m_blend.png"), &inter.blend)?;
    io::save_rgb16(&dir.join("blended.png"), &inter.blended)?;
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> Result<u8> {
    let config = load_config(&args.config)?;
    config.validate()?;
    let wide = io::load_rgb(&args.wide)?;
    let tele = io::load_rgb(&args.tele)?;
    let meta = io::load_meta(&args.meta)?;
    meta.validate(wide.dims(), tele.dims())?;

    let threads = args.threads.unwrap_or(config.threads);
    let keep = args.dump_dir.is_some() || config.dump_intermediates;
    let output = with_pool(threads, || run_pipeline(&wide, &tele, &meta, &config, keep))?;

    io::save_rgb16(&args.out, &output.image)?;
    if let Some(dir) = &args.dump_dir {
        dump_intermediates(dir, &output)?;
    }
    emit_timings(&output.timings, &args.timings_json)?;

    if output.skipped {
        eprintln!("fusion skipped: low-confidence coarse alignment; wide frame copied through");
        return Ok(5);
    }
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.scene)?;
    let spec = SceneSpec::from_json(&text)?;
    let scene = spec.realize()?;
    let (wide, tele, meta, labels) = synthesize_pair(&scene)?;

    fs::create_dir_all(&args.out_dir)?;
    io::save_rgb16(&args.out_dir.join("wide.png"), &wide)?;
    io::save_rgb16(&args.out_dir.join("tele.png"), &tele)?;
    io::save_meta(&args.out_dir.join("meta.json"), &meta)?;
    io::save_flo(&args.out_dir.join("gt_flow.flo"), &labels.gt_flow)?;
    io::save_mask(&args.out_dir.join("gt_occlusion.png"), &labels.gt_occlusion)?;
    io::save_mask(&args.out_dir.join("gt_defocus.png"), &labels.gt_defocus_region)?;
    Ok(0)
}

fn cmd_bench(args: BenchArgs) -> Result<u8> {
    if args.repeats == 0 {
        return Err(FusionError::InvalidConfig("repeats must be >= 1".into()));
    }
    let config = load_config(&args.config)?;
    config.validate()?;
    let wide = io::load_rgb(&args.pair_dir.join("wide.png"))?;
    let tele = io::load_rgb(&args.pair_dir.join("tele.png"))?;
    let meta = io::load_meta(&args.pair_dir.join("meta.json"))?;
    meta.validate(wide.dims(), tele.dims())?;

    let threads = args.threads.unwrap_or(config.threads);
    let runs = with_pool(threads, || {
        let mut runs = Vec::with_capacity(args.repeats);
        for _ in 0..args.repeats {
            let output = run_pipeline(&wide, &tele, &meta, &config, false)?;
            runs.push(output.timings);
        }
        Ok(runs)
    })?;

    let median = StageTimings::median(&runs);
    println!(
        "{}",
        serde_json::to_string_pretty(&median)
            .map_err(|e| FusionError::Io(std::io::Error::other(e.to_string())))?
    );
    if let Some(path) = &args.timings_json {
        if path.as_os_str() != "-" {
            io::save_json(path, &median)?;
        }
    }
    Ok(0)
}
