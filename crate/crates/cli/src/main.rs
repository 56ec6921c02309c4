use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rihvr::metrics::{rms_velocity, write_error_table, Axis, MatchReport};
use rihvr::pipeline::{
    expand_inputs, load_image, match_frames, read_particle_table, read_trajectory_table, read_truth_table,
    reconstruct_frames, residuals, rms_of_rows, save_raw, synthesize, track, truth_trajectories, Method, PipelineConfig,
};
use rihvr::segment::write_particle_table;
use rihvr::solver::write_objective_history;
use rihvr::sparsevol::save_volume;
use rihvr::synth::write_truth_table;
use rihvr::track::write_trajectory_table;

/// Sparse regularized reconstruction of particle fields from inline
/// holograms, with particle tracking and evaluation against ground truth.
#[derive(Parser, Debug)]
#[command(name = "rihvr", version, about)]
struct Cli {
    /// TOML configuration file; built-in defaults are used when absent
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frames processed concurrently (0: one per core)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum MethodArg {
    Rihvr,
    Baseline,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic particle sequence, its holograms and ground truth
    Synthesize,
    /// Reconstruct holograms into sparse volumes and particle tables
    Reconstruct {
        /// Glob of input holograms (PNG, TIFF, or .f32 with .dims sidecar)
        #[arg(long)]
        input: Option<String>,
        /// Reconstruction method; overrides the configuration
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Skip writing volume files
        #[arg(long)]
        no_volumes: bool,
    },
    /// Link particle tables into smoothed trajectories
    Track {
        /// Particle table; defaults to particles.tsv in the output directory
        #[arg(long)]
        particles: Option<PathBuf>,
    },
    /// Compare detections and trajectories with ground truth
    Evaluate {
        /// Ground-truth table written by `synthesize`
        #[arg(long)]
        truth: PathBuf,
        /// Particle table; defaults to particles.tsv in the output directory
        #[arg(long)]
        particles: Option<PathBuf>,
        /// Trajectory table for velocity statistics
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = &cli.output {
        cfg.paths.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn write_table(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).with_context(|| format!("cannot write {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn run_synthesize(cfg: &PipelineConfig) -> Result<()> {
    let out = &cfg.paths.output;
    let holo_dir = out.join("holograms");
    fs::create_dir_all(&holo_dir).with_context(|| format!("cannot create {}", holo_dir.display()))?;
    let (scenes, holograms) = synthesize(cfg)?;
    for (f, h) in holograms.iter().enumerate() {
        save_raw(&holo_dir.join(format!("hologram_{f:05}.f32")), h)?;
    }
    write_table(&out.join("truth.tsv"), |w| write_truth_table(w, &scenes))?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    println!("wrote {} holograms to {}", holograms.len(), holo_dir.display());
    Ok(())
}

fn run_reconstruct(cfg: &PipelineConfig, input: Option<String>, no_volumes: bool) -> Result<()> {
    let out = &cfg.paths.output;
    let pattern = input.unwrap_or_else(|| cfg.paths.input.clone());
    let paths = expand_inputs(&pattern)?;
    let frames = paths
        .iter()
        .map(|p| load_image(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    let res = residuals(&cfg.preprocessing, &frames)?;
    log::info!("reconstructing {} frames with {:?}", res.len(), cfg.method);
    let results = reconstruct_frames(cfg, &res)?;

    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    if !no_volumes {
        let vol_dir = out.join("volumes");
        fs::create_dir_all(&vol_dir)?;
        for (f, r) in results.iter().enumerate() {
            save_volume(&vol_dir.join(format!("frame_{f:05}.rihv")), &r.volume)?;
        }
    }
    let reports: Vec<_> = results.iter().filter_map(|r| r.report.as_ref()).collect();
    if !reports.is_empty() {
        let obj_dir = out.join("objective");
        fs::create_dir_all(&obj_dir)?;
        for (f, rep) in reports.iter().enumerate() {
            write_table(&obj_dir.join(format!("frame_{f:05}.tsv")), |w| write_objective_history(w, rep))?;
        }
    }
    let blobs: Vec<_> = results.into_iter().map(|r| r.blobs).collect();
    write_table(&out.join("particles.tsv"), |w| write_particle_table(w, &cfg.geometry, &blobs))?;
    let total: usize = blobs.iter().map(Vec::len).sum();
    println!("{} frames, {total} particles", blobs.len());
    Ok(())
}

fn run_track(cfg: &PipelineConfig, particles: Option<PathBuf>) -> Result<()> {
    let out = &cfg.paths.output;
    let path = particles.unwrap_or_else(|| out.join("particles.tsv"));
    let frames = read_particle_table(&path)?;
    let trajs = track(&cfg.tracking, &frames)?;
    fs::create_dir_all(out)?;
    let dest = out.join("trajectories.tsv");
    let mut w = create(&dest)?;
    write_trajectory_table(&mut w, &trajs, cfg.frame_interval)?;
    w.flush()?;
    println!("{} trajectories", trajs.len());
    Ok(())
}

fn run_evaluate(cfg: &PipelineConfig, truth: &Path, particles: Option<PathBuf>, trajectories: Option<PathBuf>) -> Result<()> {
    let out = &cfg.paths.output;
    let g = &cfg.geometry;
    let truth_frames = read_truth_table(truth)?;
    let particles = particles.unwrap_or_else(|| out.join("particles.tsv"));
    let detected = read_particle_table(&particles)?;
    if detected.len() > truth_frames.len() {
        bail!("{} has {} frames but the truth has {}", particles.display(), detected.len(), truth_frames.len());
    }
    let tpos: Vec<Vec<[f64; 3]>> = truth_frames.iter().map(|f| f.iter().map(|e| e.position).collect()).collect();
    let dpos: Vec<Vec<[f64; 3]>> = detected.iter().map(|f| f.iter().map(|d| d.position).collect()).collect();
    let reports = match_frames(g, &tpos, &dpos, cfg.matching)?;
    fs::create_dir_all(out)?;
    write_table(&out.join("ep.tsv"), |w| {
        writeln!(w, "frame\ttruth\tdetected\tmatched\tep")?;
        for (f, r) in reports.iter().enumerate() {
            writeln!(w, "{f}\t{}\t{}\t{}\t{:.6}", r.truth_count, r.detected_count, r.pairs.len(), r.extraction_rate())?;
        }
        Ok(())
    })?;
    let all = MatchReport::merge(&reports);
    write_table(&out.join("errors.tsv"), |w| write_error_table(w, &all, &[50.0, 75.0, 90.0]))?;
    println!("extraction rate {:.4} over {} frames", all.extraction_rate(), reports.len());

    if let Some(tp) = trajectories {
        let rows = read_trajectory_table(&tp)?;
        let truth_trajs = truth_trajectories(&truth_frames)?;
        write_table(&out.join("velocity.tsv"), |w| {
            writeln!(w, "axis\trms_measured\trms_truth\trel_error")?;
            for axis in Axis::ALL {
                let m = rms_of_rows(&rows, axis);
                let t = rms_velocity(&truth_trajs, axis) / cfg.frame_interval;
                let rel = if t > 0.0 { (m - t).abs() / t } else { f64::NAN };
                writeln!(w, "{}\t{m:.9e}\t{t:.9e}\t{rel:.6}", axis.name())?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Synthesize => run_synthesize(&cfg),
        Command::Reconstruct { input, method, no_volumes } => {
            if let Some(m) = method {
                cfg.method = match m {
                    MethodArg::Rihvr => Method::Rihvr,
                    MethodArg::Baseline => Method::Baseline,
                };
            }
            run_reconstruct(&cfg, input, no_volumes)
        }
        Command::Track { particles } => run_track(&cfg, particles),
        Command::Evaluate {
            truth,
            particles,
            trajectories,
        } => run_evaluate(&cfg, &truth, particles, trajectories),
        Command::Config => {
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
    }
}
