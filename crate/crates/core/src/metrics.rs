//! Evaluation against ground truth: matching, extraction rate, localization
//! error, RMS velocity and the Jeffery rotation rate.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::track::Trajectory;

/// Tolerance below which matrices count as (anti)symmetric.
const SYMMETRY_TOL: f64 = 1e-12;
/// Tolerance on `|p| - 1`.
const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Matching radii in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchTolerance {
    pub lateral: f64,
    pub axial: f64,
}

impl Default for MatchTolerance {
    fn default() -> Self {
        Self {
            lateral: 2.0,
            axial: 8.0,
        }
    }
}

impl MatchTolerance {
    pub fn validate(&self) -> Result<()> {
        if !(self.lateral > 0.0 && self.axial > 0.0) {
            return Err(Error::InvalidParameter(
                "match tolerances must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Squared distance scaled so that the tolerance ellipsoid has radius 1.
    pub fn normalized_sqr(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let l = self.lateral * self.lateral;
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) / l
            + (a[2] - b[2]).powi(2) / (self.axial * self.axial)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    /// `(truth index, detection index)`, ordered by truth index.
    pub pairs: Vec<(usize, usize)>,
    /// Detected minus true position per pair, in voxels.
    pub errors: Vec<[f64; 3]>,
    pub truth_count: usize,
    pub detected_count: usize,
    pub false_positives: usize,
}

impl MatchReport {
    /// Extraction rate `Ep`: matched truth particles over all truth particles.
    pub fn extraction_rate(&self) -> f64 {
        if self.truth_count == 0 {
            return 0.0;
        }
        self.pairs.len() as f64 / self.truth_count as f64
    }

    /// Pools several reports (for example one per frame).
    pub fn merge(reports: &[MatchReport]) -> MatchReport {
        let mut out = MatchReport {
            pairs: Vec::new(),
            errors: Vec::new(),
            truth_count: 0,
            detected_count: 0,
            false_positives: 0,
        };
        for r in reports {
            let (t0, d0) = (out.truth_count, out.detected_count);
            out.pairs
                .extend(r.pairs.iter().map(|&(t, d)| (t + t0, d + d0)));
            out.errors.extend_from_slice(&r.errors);
            out.truth_count += r.truth_count;
            out.detected_count += r.detected_count;
            out.false_positives += r.false_positives;
        }
        out
    }

    /// Absolute errors along one axis.
    pub fn abs_errors(&self, axis: Axis) -> Vec<f64> {
        self.errors.iter().map(|e| e[axis.index()].abs()).collect()
    }
}

/// Greedy nearest-neighbour matching in ascending normalized distance; pairs
/// outside the tolerance ellipsoid are never formed. Positions in voxels.
pub fn match_particles(
    truth: &[[f64; 3]],
    detected: &[[f64; 3]],
    tol: MatchTolerance,
) -> Result<MatchReport> {
    tol.validate()?;
    let mut candidates = Vec::new();
    for (t, a) in truth.iter().enumerate() {
        for (d, b) in detected.iter().enumerate() {
            let d2 = tol.normalized_sqr(a, b);
            if d2 <= 1.0 {
                candidates.push((d2, t, d));
            }
        }
    }
    // ties resolve by truth index, then by detection position rather than
    // detection index, so detection order does not matter
    candidates.sort_by(|x, y| {
        x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then_with(|| {
            let (p, q) = (&detected[x.2], &detected[y.2]);
            p[0].total_cmp(&q[0])
                .then(p[1].total_cmp(&q[1]))
                .then(p[2].total_cmp(&q[2]))
        })
    });
    let mut truth_used = vec![false; truth.len()];
    let mut det_used = vec![false; detected.len()];
    let mut pairs = Vec::new();
    for (_, t, d) in candidates {
        if !truth_used[t] && !det_used[d] {
            truth_used[t] = true;
            det_used[d] = true;
            pairs.push((t, d));
        }
    }
    pairs.sort();
    let errors = pairs
        .iter()
        .map(|&(t, d)| [0, 1, 2].map(|a| detected[d][a] - truth[t][a]))
        .collect();
    Ok(MatchReport {
        false_positives: detected.len() - pairs.len(),
        pairs,
        errors,
        truth_count: truth.len(),
        detected_count: detected.len(),
    })
}

/// Percentile `q` in `[0, 100]` with linear interpolation between order
/// statistics.
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("percentile of an empty sample".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "percentile {q} outside [0, 100]"
        )));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

/// Percentile of the absolute localization error along `axis`, in voxels.
pub fn error_percentiles(report: &MatchReport, axis: Axis, q: f64) -> Result<f64> {
    if report.errors.is_empty() {
        return Err(Error::Empty("match report has no matched pairs".into()));
    }
    percentile(&report.abs_errors(axis), q)
}

/// RMS of one velocity component over every trajectory sample, in the
/// trajectories' position units per frame.
pub fn rms_velocity(trajs: &[Trajectory], axis: Axis) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in trajs {
        for v in t.velocities() {
            sum += v[axis.index()].powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    (sum / n as f64).sqrt()
}

/// Jeffery rotation rate of a slender rod, `p' = W p + S p - p (p.S p)`.
pub fn jeffery_rate(p: [f64; 3], omega: [[f64; 3]; 3], strain: [[f64; 3]; 3]) -> Result<[f64; 3]> {
    let norm = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidParameter(format!(
            "orientation has norm {norm}, expected 1"
        )));
    }
    for i in 0..3 {
        for j in 0..3 {
            if (omega[i][j] + omega[j][i]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidParameter(
                    "rotation tensor is not antisymmetric".into(),
                ));
            }
            if (strain[i][j] - strain[j][i]).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidParameter(
                    "strain tensor is not symmetric".into(),
                ));
            }
        }
    }
    let mul =
        |m: &[[f64; 3]; 3]| [0, 1, 2].map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2]);
    let wp = mul(&omega);
    let sp = mul(&strain);
    let psp = p[0] * sp[0] + p[1] * sp[1] + p[2] * sp[2];
    Ok([0, 1, 2].map(|i| wp[i] + sp[i] - p[i] * psp))
}

/// Splits a velocity gradient `du_i/dx_j` into rotation and strain rate.
pub fn decompose_velocity_gradient(grad: [[f64; 3]; 3]) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let mut omega = [[0.0; 3]; 3];
    let mut strain = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            omega[i][j] = 0.5 * (grad[i][j] - grad[j][i]);
            strain[i][j] = 0.5 * (grad[i][j] + grad[j][i]);
        }
    }
    (omega, strain)
}

/// `concentration<TAB>ep` table.
pub fn write_sweep_table<W: Write>(mut w: W, rows: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "concentration\tep")?;
    for (c, ep) in rows {
        writeln!(w, "{c:.6e}\t{ep:.6}")?;
    }
    Ok(())
}

/// `axis<TAB>percentile<TAB>error` table for the given percentiles.
pub fn write_error_table<W: Write>(
    mut w: W,
    report: &MatchReport,
    percentiles: &[f64],
) -> std::io::Result<()> {
    writeln!(w, "axis\tpercentile\terror_vox")?;
    if report.errors.is_empty() {
        return Ok(());
    }
    for axis in Axis::ALL {
        for &q in percentiles {
            let e =
                error_percentiles(report, axis, q).expect("non-empty report and valid percentile");
            writeln!(w, "{}\t{q}\t{e:.6}", axis.name())?;
        }
    }
    Ok(())
}
