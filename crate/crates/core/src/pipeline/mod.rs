//! Configuration, I/O and frame-level drivers that tie reconstruction,
//! segmentation, tracking and evaluation together.

mod config;
mod io;
mod preprocess;

use ndarray::{s, Array2};
use rayon::prelude::*;

pub use config::{
    BaselineConfig, Method, Normalization, PathsConfig, PipelineConfig, PreprocessConfig,
    SegmentationConfig, SynthesisConfig, TrackingConfig,
};
pub use io::{
    dims_path, expand_inputs, group_by_frame, load_image, read_particle_table,
    read_trajectory_table, read_truth_table, save_raw, TableEntry, TrajectoryRow,
};
pub use preprocess::{mean_subtract, preprocess_background, BACKGROUND_EPS};

use crate::error::{Error, Result};
use crate::metrics::{match_particles, Axis, MatchReport, MatchTolerance};
use crate::optics::{ForwardModel, VolumeGeometry};
use crate::segment::{principal_axis_scaled, segment_projected, segment_volume, Blob};
use crate::solver::{baseline_with_model, Fista, SolveReport};
use crate::sparsevol::SparseVolume;
use crate::synth::{
    add_noise, generate_scene, render_hologram, simulate_sequence, Scene, VelocityField,
};
use crate::track::{
    filter_min_duration, link_frames, smooth_trajectory, Detection, Sample, Trajectory,
};

/// Runs `f` on a pool of `workers` threads (0: one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Turns recorded intensities into hologram residuals.
pub fn residuals(cfg: &PreprocessConfig, frames: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    match cfg.mode {
        Normalization::MeanSubtract => Ok(frames.iter().map(mean_subtract).collect()),
        Normalization::Background => preprocess_background(frames, cfg.window),
    }
}

/// Result of reconstructing and segmenting one hologram.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub volume: SparseVolume,
    pub blobs: Vec<Blob>,
    /// Present for the regularized solver only.
    pub report: Option<SolveReport>,
}

/// Per-frame reconstruction with either method; reusable across frames.
pub struct Reconstructor {
    method: Method,
    geom: VolumeGeometry,
    padding: usize,
    segmentation: SegmentationConfig,
    baseline: BaselineConfig,
    solver: Option<Fista>,
    model: Option<ForwardModel>,
}

impl Reconstructor {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        Self::with_method(cfg, cfg.method)
    }

    pub fn with_method(cfg: &PipelineConfig, method: Method) -> Result<Self> {
        cfg.validate()?;
        let geom = cfg.geometry;
        let (solver, model) = match method {
            Method::Rihvr => {
                let padded = VolumeGeometry {
                    nx: geom.nx * cfg.padding,
                    ny: geom.ny * cfg.padding,
                    ..geom
                };
                (Some(Fista::new(padded, cfg.solver.clone())?), None)
            }
            Method::Baseline => (None, Some(ForwardModel::new(geom)?)),
        };
        Ok(Self {
            method,
            geom,
            padding: cfg.padding,
            segmentation: cfg.segmentation,
            baseline: cfg.baseline,
            solver,
            model,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn process(&self, b: &Array2<f64>) -> Result<FrameOutput> {
        let g = self.geom;
        if b.dim() != g.plane_shape() {
            return Err(Error::GeometryMismatch(format!(
                "hologram has shape {:?}, geometry expects {:?}",
                b.dim(),
                g.plane_shape()
            )));
        }
        match (&self.solver, &self.model) {
            (Some(solver), _) => {
                let (volume, report) = if self.padding == 1 {
                    solver.solve(b)?
                } else {
                    let mut padded = Array2::zeros((g.ny * self.padding, g.nx * self.padding));
                    padded.slice_mut(s![..g.ny, ..g.nx]).assign(b);
                    let (v, r) = solver.solve(&padded)?;
                    (crop_volume(&v, g)?, r)
                };
                let blobs = segment_volume(
                    &volume,
                    self.segmentation.rel_tol,
                    self.segmentation.min_vox,
                )?;
                Ok(FrameOutput {
                    volume,
                    blobs,
                    report: Some(report),
                })
            }
            (None, Some(model)) => {
                let volume = baseline_with_model(model, b, self.baseline.threshold)?;
                let blobs = segment_projected(&volume, 0.0, self.baseline.min_pixels)?;
                Ok(FrameOutput {
                    volume,
                    blobs,
                    report: None,
                })
            }
            (None, None) => unreachable!("constructor sets one backend"),
        }
    }
}

/// Keeps the `geom.ny x geom.nx` corner of a laterally larger volume.
fn crop_volume(v: &SparseVolume, geom: VolumeGeometry) -> Result<SparseVolume> {
    let voxels = v
        .iter_voxels()
        .filter(|&(_, r, c, _)| r < geom.ny && c < geom.nx);
    SparseVolume::from_voxels(geom, voxels)
}

/// Reconstructs every residual on the configured worker pool, in order.
pub fn reconstruct_frames(
    cfg: &PipelineConfig,
    residuals: &[Array2<f64>],
) -> Result<Vec<FrameOutput>> {
    let rec = Reconstructor::new(cfg)?;
    with_workers(cfg.workers, || {
        residuals.par_iter().map(|b| rec.process(b)).collect()
    })?
}

/// Blob centroids in meters, with orientation where the principal axis is
/// well defined in physical coordinates.
pub fn detections(geom: &VolumeGeometry, blobs: &[Blob]) -> Vec<Detection> {
    let scale = [geom.pitch, geom.pitch, geom.dz];
    blobs
        .iter()
        .enumerate()
        .map(|(id, b)| Detection {
            id,
            position: b.centroid_meters(geom),
            orientation: principal_axis_scaled(b, scale)
                .ok()
                .filter(|a| a.reliable)
                .map(|a| a.axis),
        })
        .collect()
}

/// Links detections, drops short tracks and smooths the survivors.
pub fn track(cfg: &TrackingConfig, frames: &[Vec<Detection>]) -> Result<Vec<Trajectory>> {
    let linked = link_frames(frames, cfg.max_disp)?;
    filter_min_duration(linked, cfg.min_frames)?
        .iter()
        .map(|t| smooth_trajectory(t, cfg.smoothing))
        .collect()
}

/// Noise seed of frame `frame` derived from the run seed.
fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(frame as u64 + 1)
}

/// Synthetic scene sequence and its noisy holograms.
pub fn synthesize(cfg: &PipelineConfig) -> Result<(Vec<Scene>, Vec<Array2<f64>>)> {
    cfg.validate()?;
    let syn = &cfg.synthesis;
    let initial = generate_scene(syn.particles, &cfg.geometry, syn.diameter, cfg.seed);
    let still = VelocityField::Uniform { velocity: [0.0; 3] };
    let scenes = simulate_sequence(
        &initial,
        syn.flow.as_ref().unwrap_or(&still),
        cfg.frame_interval,
        syn.frames,
    )?;
    let holograms = with_workers(cfg.workers, || {
        scenes
            .par_iter()
            .enumerate()
            .map(|(f, s)| {
                add_noise(
                    &render_hologram(s)?,
                    syn.noise_sigma,
                    frame_seed(cfg.seed, f),
                )
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok((scenes, holograms))
}

/// Truth positions in voxel coordinates.
pub fn truth_voxels(geom: &VolumeGeometry, scene: &Scene) -> Vec<[f64; 3]> {
    scene
        .particles
        .iter()
        .map(|p| geom.meters_to_voxel(p.position()))
        .collect()
}

/// Matches per-frame detections (meters) against truth (meters), in voxels.
pub fn match_frames(
    geom: &VolumeGeometry,
    truth: &[Vec<[f64; 3]>],
    detected: &[Vec<[f64; 3]>],
    tol: MatchTolerance,
) -> Result<Vec<MatchReport>> {
    let empty = Vec::new();
    truth
        .iter()
        .enumerate()
        .map(|(f, t)| {
            let tv: Vec<[f64; 3]> = t.iter().map(|p| geom.meters_to_voxel(*p)).collect();
            let dv: Vec<[f64; 3]> = detected
                .get(f)
                .unwrap_or(&empty)
                .iter()
                .map(|p| geom.meters_to_voxel(*p))
                .collect();
            match_particles(&tv, &dv, tol)
        })
        .collect()
}

/// Trajectories of the truth particles, keyed by their table id.
pub fn truth_trajectories(truth: &[Vec<TableEntry>]) -> Result<Vec<Trajectory>> {
    let mut by_id: std::collections::BTreeMap<usize, Vec<Sample>> = Default::default();
    for (f, entries) in truth.iter().enumerate() {
        for e in entries {
            by_id.entry(e.id).or_default().push(Sample {
                frame: f,
                position: e.position,
                orientation: e.axis,
            });
        }
    }
    by_id
        .into_iter()
        .map(|(id, s)| Trajectory::new(id, s))
        .collect()
}

/// RMS of one velocity component over trajectory table rows.
pub fn rms_of_rows(rows: &[TrajectoryRow], axis: Axis) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    (rows
        .iter()
        .map(|r| r.velocity[axis.index()].powi(2))
        .sum::<f64>()
        / rows.len() as f64)
        .sqrt()
}

/// Localization results of both methods over a set of synthetic holograms.
#[derive(Debug, Clone)]
pub struct SyntheticEvaluation {
    pub rihvr: MatchReport,
    pub baseline: MatchReport,
    /// `(sparsity, memory_estimate, dense_memory_estimate)` of each RIHVR volume.
    pub volumes: Vec<(f64, usize, usize)>,
}

/// Renders `trials` single-frame scenes of `particles` particles (scene seeds
/// `seed, seed + 1, ...`) and reconstructs each with both methods.
pub fn evaluate_synthetic(
    cfg: &PipelineConfig,
    particles: usize,
    trials: usize,
    seed: u64,
) -> Result<SyntheticEvaluation> {
    let geom = cfg.geometry;
    let rihvr = Reconstructor::with_method(cfg, Method::Rihvr)?;
    let baseline = Reconstructor::with_method(cfg, Method::Baseline)?;
    let per_trial = with_workers(cfg.workers, || {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let scene_seed = seed.wrapping_add(t as u64);
                let scene = generate_scene(particles, &geom, cfg.synthesis.diameter, scene_seed);
                let img = add_noise(
                    &render_hologram(&scene)?,
                    cfg.synthesis.noise_sigma,
                    frame_seed(scene_seed, 0),
                )?;
                let b = mean_subtract(&img);
                let truth = truth_voxels(&geom, &scene);
                let r = rihvr.process(&b)?;
                let bl = baseline.process(&b)?;
                let rm = match_particles(
                    &truth,
                    &r.blobs.iter().map(|b| b.centroid).collect::<Vec<_>>(),
                    cfg.matching,
                )?;
                let bm = match_particles(
                    &truth,
                    &bl.blobs.iter().map(|b| b.centroid).collect::<Vec<_>>(),
                    cfg.matching,
                )?;
                let stats = (
                    r.volume.sparsity(),
                    r.volume.memory_estimate(),
                    r.volume.dense_memory_estimate(),
                );
                Ok((rm, bm, stats))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let (rm, rest): (Vec<_>, Vec<_>) = per_trial.into_iter().map(|(a, b, c)| (a, (b, c))).unzip();
    let (bm, volumes): (Vec<_>, Vec<_>) = rest.into_iter().unzip();
    Ok(SyntheticEvaluation {
        rihvr: MatchReport::merge(&rm),
        baseline: MatchReport::merge(&bm),
        volumes,
    })
}

/// Extraction rates of both methods at one concentration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    /// particles per pixel
    pub concentration: f64,
    pub particles: usize,
    pub ep_rihvr: f64,
    pub ep_baseline: f64,
}

/// Extraction rate against concentration (particles per pixel).
pub fn concentration_sweep(
    cfg: &PipelineConfig,
    concentrations: &[f64],
    trials: usize,
) -> Result<Vec<SweepPoint>> {
    let pixels = (cfg.geometry.nx * cfg.geometry.ny) as f64;
    concentrations
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "concentration {c} must be > 0"
                )));
            }
            let particles = (c * pixels).round().max(1.0) as usize;
            let seed = cfg.seed.wrapping_add(1000 * i as u64);
            let e = evaluate_synthetic(cfg, particles, trials, seed)?;
            Ok(SweepPoint {
                concentration: c,
                particles,
                ep_rihvr: e.rihvr.extraction_rate(),
                ep_baseline: e.baseline.extraction_rate(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::forward;
    use num_complex::Complex64;

    fn small_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.geometry = VolumeGeometry {
            nx: 32,
            ny: 32,
            nz: 8,
            pitch: 2e-6,
            dz: 20e-6,
            z0: 100e-6,
            wavelength: 632e-9,
        };
        cfg.solver.max_iters = 40;
        cfg.solver.weights.lambda_l1 = 1e-3;
        cfg.solver.weights.lambda_tv = 0.0;
        cfg.segmentation.min_vox = 0;
        cfg.workers = 1;
        cfg
    }

    #[test]
    fn padding_recovers_same_voxel() {
        let mut cfg = small_cfg();
        let g = cfg.geometry;
        let x = SparseVolume::from_voxels(g, [(3, 16, 15, Complex64::new(1.0, 0.0))]).unwrap();
        let b = forward(&x, &g).unwrap();
        for padding in [1, 2] {
            cfg.padding = padding;
            let out = Reconstructor::new(&cfg).unwrap().process(&b).unwrap();
            assert_eq!(out.volume.geom(), &g);
            let (k, r, c, _) = out
                .volume
                .iter_voxels()
                .max_by(|a, b| a.3.norm().total_cmp(&b.3.norm()))
                .unwrap();
            assert!(
                k.abs_diff(3) <= 1 && r.abs_diff(16) <= 1 && c.abs_diff(15) <= 1,
                "{padding}: {:?}",
                (k, r, c)
            );
            assert!(!out.blobs.is_empty());
        }
    }

    #[test]
    fn wrong_hologram_shape_is_rejected() {
        let cfg = small_cfg();
        let rec = Reconstructor::new(&cfg).unwrap();
        assert!(rec.process(&Array2::zeros((31, 32))).is_err());
    }

    #[test]
    fn empty_synthesis_gives_uniform_holograms() {
        let mut cfg = small_cfg();
        cfg.synthesis.particles = 0;
        cfg.synthesis.noise_sigma = 0.0;
        cfg.synthesis.frames = 3;
        let (scenes, holos) = synthesize(&cfg).unwrap();
        assert_eq!(scenes.len(), 3);
        assert!(scenes.iter().all(|s| s.particles.is_empty()));
        assert!(holos.iter().flatten().all(|&v| v == 1.0));
    }

    #[test]
    fn synthesis_is_seeded() {
        let mut cfg = small_cfg();
        cfg.synthesis.particles = 3;
        cfg.synthesis.diameter = 6e-6;
        cfg.synthesis.frames = 2;
        cfg.synthesis.flow = Some(VelocityField::Uniform {
            velocity: [1e-3, 0.0, 0.0],
        });
        let (s1, h1) = synthesize(&cfg).unwrap();
        let (s2, h2) = synthesize(&cfg).unwrap();
        assert_eq!((s1.clone(), h1.clone()), (s2, h2));
        assert_ne!(h1[0], h1[1]);
        cfg.seed = 1;
        assert_ne!(synthesize(&cfg).unwrap().0, s1);
    }

    #[test]
    fn truth_trajectories_follow_ids() {
        let e = |frame, id, x| TableEntry {
            frame,
            id,
            position: [x, 0.0, 0.0],
            axis: None,
        };
        let truth = vec![
            vec![e(0, 0, 0.0), e(0, 1, 5.0)],
            vec![e(1, 1, 6.0), e(1, 0, 1.0)],
            vec![e(2, 0, 2.0)],
        ];
        let t = truth_trajectories(&truth).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(
            t[0].positions().iter().map(|p| p[0]).collect::<Vec<_>>(),
            [0.0, 1.0, 2.0]
        );
        assert_eq!(t[1].len(), 2);
    }

    #[test]
    fn rows_rms() {
        let row = |u| TrajectoryRow {
            track: 0,
            frame: 0,
            position: [0.0; 3],
            velocity: [u, 0.0, 1.0],
        };
        let rows = [row(3.0), row(-4.0)];
        assert!((rms_of_rows(&rows, Axis::X) - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rms_of_rows(&rows, Axis::Z), 1.0);
        assert_eq!(rms_of_rows(&[], Axis::Y), 0.0);
    }

    #[test]
    fn residual_modes() {
        let frames: Vec<Array2<f64>> = (0..3)
            .map(|f| Array2::from_elem((2, 2), 1.0 + f as f64))
            .collect();
        let m = residuals(&PreprocessConfig::default(), &frames).unwrap();
        assert!(m.iter().flatten().all(|&v| v == 0.0));
        let cfg = PreprocessConfig {
            mode: Normalization::Background,
            window: 3,
        };
        let b = residuals(&cfg, &frames).unwrap();
        assert!((b[1][[0, 0]] - 0.0).abs() < 1e-12);
        assert!((b[0][[0, 0]] - (1.0 - 2.0) / 2.0f64.sqrt()).abs() < 1e-12);
        let too_long = PreprocessConfig {
            mode: Normalization::Background,
            window: 5,
        };
        assert!(residuals(&too_long, &frames).is_err());
    }
}
