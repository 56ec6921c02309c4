use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MatchTolerance;
use crate::optics::VolumeGeometry;
use crate::solver::SolverConfig;
use crate::synth::VelocityField;
use crate::track::Smoothing;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    /// Voxels below `rel_tol * max` are dropped before labeling.
    pub rel_tol: f64,
    /// Blobs need strictly more voxels than this.
    pub min_vox: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1.0 / 256.0,
            min_vox: 5,
        }
    }
}

/// Settings of the back-propagation baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Global intensity threshold relative to the volume maximum.
    pub threshold: f64,
    /// Blobs need strictly more lateral pixels than this.
    pub min_pixels: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.3,
            min_pixels: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingConfig {
    /// Largest frame-to-frame displacement in meters.
    pub max_disp: f64,
    /// Shorter trajectories are discarded.
    pub min_frames: usize,
    pub smoothing: Smoothing,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            max_disp: 50e-6,
            min_frames: 5,
            smoothing: Smoothing::default(),
        }
    }
}

/// How recorded intensities become the hologram residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Subtract each frame's own mean.
    #[default]
    MeanSubtract,
    /// Subtract a sliding temporal mean and divide by its square root.
    Background,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub mode: Normalization,
    /// Sliding window length in frames for background removal.
    pub window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mode: Normalization::MeanSubtract,
            window: 151,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Glob selecting the input holograms, sorted by name.
    pub input: String,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            input: "holograms/*.f32".into(),
            output: PathBuf::from("out"),
        }
    }
}

/// Synthetic data generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub particles: usize,
    /// meters
    pub diameter: f64,
    pub noise_sigma: f64,
    pub frames: usize,
    /// Velocity field for multi-frame sequences; particles stay put without one.
    pub flow: Option<VelocityField>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            particles: 100,
            diameter: 20e-6,
            noise_sigma: 0.02,
            frames: 1,
            flow: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rihvr,
    Baseline,
}

/// Complete configuration of a reconstruction and tracking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Frames reconstructed concurrently; 0 uses every core.
    pub workers: usize,
    /// Seconds between frames.
    pub frame_interval: f64,
    pub method: Method,
    /// Lateral zero-padding factor for the solver, 1 or 2.
    pub padding: usize,
    pub geometry: VolumeGeometry,
    pub solver: SolverConfig,
    pub segmentation: SegmentationConfig,
    pub baseline: BaselineConfig,
    pub tracking: TrackingConfig,
    pub preprocessing: PreprocessConfig,
    pub matching: MatchTolerance,
    pub paths: PathsConfig,
    pub synthesis: SynthesisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            frame_interval: 1e-3,
            method: Method::Rihvr,
            padding: 1,
            geometry: VolumeGeometry::default(),
            solver: SolverConfig::default(),
            segmentation: SegmentationConfig::default(),
            baseline: BaselineConfig::default(),
            tracking: TrackingConfig::default(),
            preprocessing: PreprocessConfig::default(),
            matching: MatchTolerance::default(),
            paths: PathsConfig::default(),
            synthesis: SynthesisConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section and collects all failures into one error.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |section: &str, r: Result<()>| {
            if let Err(e) = r {
                problems.push(format!("{section}: {e}"));
            }
        };
        check("geometry", self.geometry.validate());
        check("solver", self.solver.validate());
        check("tracking.smoothing", self.tracking.smoothing.validate());
        check("matching", self.matching.validate());
        let rule = |ok: bool, msg: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(msg))
            }
        };
        let s = &self.segmentation;
        check(
            "segmentation",
            rule(
                (0.0..1.0).contains(&s.rel_tol),
                format!("rel_tol {} must lie in [0, 1)", s.rel_tol),
            ),
        );
        let b = &self.baseline;
        check(
            "baseline",
            rule(
                b.threshold > 0.0 && b.threshold <= 1.0,
                format!("threshold {} must lie in (0, 1]", b.threshold),
            ),
        );
        let t = &self.tracking;
        check(
            "tracking",
            rule(
                t.max_disp > 0.0 && t.max_disp.is_finite(),
                format!("max_disp {} must be > 0", t.max_disp),
            ),
        );
        check(
            "tracking",
            rule(t.min_frames >= 1, "min_frames must be >= 1".into()),
        );
        let w = self.preprocessing.window;
        check(
            "preprocessing",
            rule(
                w >= 3 && w % 2 == 1,
                format!("window {w} must be odd and >= 3"),
            ),
        );
        check(
            "padding",
            rule(
                self.padding == 1 || self.padding == 2,
                format!("padding {} must be 1 or 2", self.padding),
            ),
        );
        check(
            "frame_interval",
            rule(
                self.frame_interval > 0.0 && self.frame_interval.is_finite(),
                format!("frame_interval {} must be > 0", self.frame_interval),
            ),
        );
        let syn = &self.synthesis;
        check(
            "synthesis",
            rule(
                syn.diameter > 0.0,
                format!("diameter {} must be > 0", syn.diameter),
            ),
        );
        check(
            "synthesis",
            rule(
                syn.noise_sigma >= 0.0,
                format!("noise_sigma {} must be >= 0", syn.noise_sigma),
            ),
        );
        check(
            "synthesis",
            rule(syn.frames >= 1, "frames must be >= 1".into()),
        );
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
