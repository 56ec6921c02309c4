//! Frame-to-frame linking of detections into trajectories, trajectory
//! smoothing and rotation rates.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-9;

/// A particle found in one frame. Positions in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub id: usize,
    pub position: [f64; 3],
    pub orientation: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub frame: usize,
    pub position: [f64; 3],
    pub orientation: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    samples: Vec<Sample>,
}

impl Trajectory {
    /// Requires consecutive frames and unit orientations where present.
    pub fn new(id: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty(format!("trajectory {id} has no samples")));
        }
        for w in samples.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                return Err(Error::InvalidParameter(format!(
                    "trajectory {id} jumps from frame {} to {}",
                    w[0].frame, w[1].frame
                )));
            }
        }
        for s in &samples {
            if let Some(p) = s.orientation {
                let n = p.iter().map(|a| a * a).sum::<f64>().sqrt();
                if (n - 1.0).abs() > UNIT_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "trajectory {id} has non-unit orientation"
                    )));
                }
            }
        }
        Ok(Self { id, samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_frame(&self) -> usize {
        self.samples[0].frame
    }

    pub fn frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|s| s.frame)
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.samples.iter().map(|s| s.position).collect()
    }

    /// Per-sample velocity in position units per frame: central differences
    /// inside the track, one-sided at its ends, zero for a single sample.
    pub fn velocities(&self) -> Vec<[f64; 3]> {
        differentiate(&self.positions())
    }

    fn with_positions(&self, positions: &[[f64; 3]]) -> Trajectory {
        let samples = self
            .samples
            .iter()
            .zip(positions)
            .map(|(s, &position)| Sample { position, ..*s })
            .collect();
        Trajectory {
            id: self.id,
            samples,
        }
    }
}

fn differentiate(x: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let (a, b, h) = match (i, n) {
                (_, 1) => return [0.0; 3],
                (0, _) => (0, 1, 1.0),
                (i, n) if i == n - 1 => (n - 2, n - 1, 1.0),
                (i, _) => (i - 1, i + 1, 2.0),
            };
            [0, 1, 2].map(|d| (x[b][d] - x[a][d]) / h)
        })
        .collect()
}

fn dist_sqr(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|d| (a[d] - b[d]).powi(2)).sum()
}

/// Index of the nearest candidate; equal distances go to the lower id.
fn nearest(from: &[f64; 3], cands: &[Detection]) -> Option<usize> {
    cands
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            dist_sqr(from, &a.position)
                .total_cmp(&dist_sqr(from, &b.position))
                .then(a.id.cmp(&b.id))
        })
        .map(|(n, _)| n)
}

/// Links detections of consecutive frames by greedy mutual nearest
/// neighbours within `max_disp` meters. A missed link ends the trajectory;
/// unmatched detections start new ones. `frames[f]` holds frame `f`.
pub fn link_frames(frames: &[Vec<Detection>], max_disp: f64) -> Result<Vec<Trajectory>> {
    if !(max_disp > 0.0 && max_disp.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "max_disp {max_disp} must be > 0"
        )));
    }
    let max2 = max_disp * max_disp;
    let mut done: Vec<Vec<Sample>> = Vec::new();
    // open trajectories with the frame-local index of their last detection
    let mut open: Vec<(Vec<Sample>, usize)> = Vec::new();
    for (f, dets) in frames.iter().enumerate() {
        let mut taken = vec![false; dets.len()];
        let mut next_open = Vec::new();
        if f > 0 && !dets.is_empty() {
            let prev = &frames[f - 1];
            let back: Vec<Option<usize>> =
                dets.iter().map(|d| nearest(&d.position, prev)).collect();
            let mut survivors = Vec::new();
            for (samples, last) in open.drain(..) {
                let from = &prev[last];
                let link = nearest(&from.position, dets).filter(|&n| {
                    back[n] == Some(last) && dist_sqr(&from.position, &dets[n].position) <= max2
                });
                match link {
                    Some(n) => {
                        taken[n] = true;
                        let mut s = samples;
                        s.push(Sample {
                            frame: f,
                            position: dets[n].position,
                            orientation: dets[n].orientation,
                        });
                        survivors.push((s, n));
                    }
                    None => done.push(samples),
                }
            }
            next_open = survivors;
        } else {
            done.extend(open.drain(..).map(|(s, _)| s));
        }
        let mut fresh: Vec<usize> = (0..dets.len()).filter(|&n| !taken[n]).collect();
        fresh.sort_by_key(|&n| dets[n].id);
        for n in fresh {
            next_open.push((
                vec![Sample {
                    frame: f,
                    position: dets[n].position,
                    orientation: dets[n].orientation,
                }],
                n,
            ));
        }
        open = next_open;
    }
    done.extend(open.into_iter().map(|(s, _)| s));
    // stable, reproducible numbering: by start frame, then first position
    done.sort_by(|a, b| {
        a[0].frame.cmp(&b[0].frame).then_with(|| {
            let (p, q) = (&a[0].position, &b[0].position);
            p[0].total_cmp(&q[0])
                .then(p[1].total_cmp(&q[1]))
                .then(p[2].total_cmp(&q[2]))
        })
    });
    done.into_iter()
        .enumerate()
        .map(|(id, s)| Trajectory::new(id, s))
        .collect()
}

/// Keeps trajectories with at least `min_frames` samples.
pub fn filter_min_duration(trajs: Vec<Trajectory>, min_frames: usize) -> Result<Vec<Trajectory>> {
    if min_frames == 0 {
        return Err(Error::InvalidParameter("min_frames must be >= 1".into()));
    }
    Ok(trajs
        .into_iter()
        .filter(|t| t.len() >= min_frames)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Smoothing {
    None,
    SavitzkyGolay {
        window: usize,
        order: usize,
    },
    /// 1D total-variation denoising per axis; `weight` in meters.
    TotalVariation {
        weight: f64,
    },
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing::SavitzkyGolay {
            window: 20,
            order: 2,
        }
    }
}

impl Smoothing {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Smoothing::SavitzkyGolay { window, order } if window < 2 || order >= window => {
                Err(Error::InvalidParameter(format!(
                    "Savitzky-Golay needs window >= 2 and order < window, got {window}/{order}"
                )))
            }
            Smoothing::TotalVariation { weight } if !(weight >= 0.0 && weight.is_finite()) => Err(
                Error::InvalidParameter(format!("TV weight {weight} must be >= 0")),
            ),
            _ => Ok(()),
        }
    }
}

/// Replaces positions by smoothed values; frames and orientations are kept.
pub fn smooth_trajectory(traj: &Trajectory, method: Smoothing) -> Result<Trajectory> {
    method.validate()?;
    let pos = traj.positions();
    let smoothed: Vec<[f64; 3]> = match method {
        Smoothing::None => return Ok(traj.clone()),
        Smoothing::SavitzkyGolay { window, order } => {
            if traj.len() < window {
                log::warn!(
                    "trajectory {} has {} samples, shorter than the {window}-sample window; left unsmoothed",
                    traj.id,
                    traj.len()
                );
                return Ok(traj.clone());
            }
            per_axis(&pos, |x| savitzky_golay(x, window, order))
        }
        Smoothing::TotalVariation { weight } => per_axis(&pos, |x| tv_denoise_1d(x, weight)),
    };
    Ok(traj.with_positions(&smoothed))
}

fn per_axis(pos: &[[f64; 3]], f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<[f64; 3]> {
    let cols: Vec<Vec<f64>> = (0..3)
        .map(|d| f(&pos.iter().map(|p| p[d]).collect::<Vec<_>>()))
        .collect();
    (0..pos.len())
        .map(|i| [cols[0][i], cols[1][i], cols[2][i]])
        .collect()
}

/// Local least-squares polynomial fit over `window` samples. The window is
/// centred where possible and shifted inward near the ends, with the fit
/// evaluated at the sample itself.
pub fn savitzky_golay(x: &[f64], window: usize, order: usize) -> Vec<f64> {
    let n = x.len();
    if n < window || window == 0 {
        return x.to_vec();
    }
    let left = (window - 1) / 2;
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(left).min(n - window);
            let t: Vec<f64> = (start..start + window)
                .map(|j| j as f64 - i as f64)
                .collect();
            let a = DMatrix::from_fn(window, order + 1, |r, c| t[r].powi(c as i32));
            let b = DVector::from_iterator(window, x[start..start + window].iter().copied());
            let coef = a
                .svd(true, true)
                .solve(&b, 1e-12)
                .expect("SVD computed with U and V");
            coef[0]
        })
        .collect()
}

/// Exact solution of `min_u 0.5 |u - y|^2 + lambda sum |u_{i+1} - u_i|`
/// by Condat's direct algorithm.
pub fn tv_denoise_1d(y: &[f64], lambda: f64) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    if n == 0 {
        return out;
    }
    if lambda <= 0.0 {
        return y.to_vec();
    }
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let (mut umin, mut umax) = (lambda, -lambda);
    let (mut vmin, mut vmax) = (y[0] - lambda, y[0] + lambda);
    let twolambda = 2.0 * lambda;
    loop {
        while k == n - 1 {
            if umin < 0.0 {
                loop {
                    out[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k0;
                vmin = y[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                loop {
                    out[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k0;
                vmax = y[k0];
                umax = -lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                loop {
                    out[k0] = vmin;
                    k0 += 1;
                    if k0 > k {
                        break;
                    }
                }
                return out;
            }
        }
        umin += y[k + 1] - vmin;
        if umin < -lambda {
            loop {
                out[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmin = y[k0];
            vmax = vmin + twolambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        umax += y[k + 1] - vmax;
        if umax > lambda {
            loop {
                out[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmax = y[k0];
            vmin = vmax - twolambda;
            umin = lambda;
            umax = -lambda;
        } else {
            k += 1;
            if umin >= lambda {
                kminus = k;
                vmin += (umin - lambda) / (kminus - k0 + 1) as f64;
                umin = lambda;
            }
            if umax <= -lambda {
                kplus = k;
                vmax += (umax + lambda) / (kplus - k0 + 1) as f64;
                umax = -lambda;
            }
        }
    }
}

/// Orientations flipped where needed so consecutive ones never point into
/// opposite hemispheres.
pub fn aligned_orientations(traj: &Trajectory) -> Result<Vec<[f64; 3]>> {
    let mut out: Vec<[f64; 3]> = Vec::with_capacity(traj.len());
    for s in traj.samples() {
        let mut p = s.orientation.ok_or(Error::MissingOrientation(traj.id))?;
        if let Some(prev) = out.last() {
            if p[0] * prev[0] + p[1] * prev[1] + p[2] * prev[2] < 0.0 {
                p = p.map(|a| -a);
            }
        }
        out.push(p);
    }
    Ok(out)
}

/// `|dp/dt|` per sample in 1/s from sign-aligned orientations.
pub fn rotation_rate(traj: &Trajectory, frame_interval: f64) -> Result<Vec<f64>> {
    if !(frame_interval > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frame interval {frame_interval} must be > 0"
        )));
    }
    let p = aligned_orientations(traj)?;
    Ok(differentiate(&p)
        .iter()
        .map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / frame_interval)
        .collect())
}

fn fmt_f(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.9e}"),
        None => "nan".into(),
    }
}

/// Trajectory table with velocities in m/s and `|dp/dt|` in 1/s.
pub fn write_trajectory_table<W: Write>(
    mut w: W,
    trajs: &[Trajectory],
    frame_interval: f64,
) -> Result<()> {
    if !(frame_interval > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frame interval {frame_interval} must be > 0"
        )));
    }
    writeln!(w, "track\tframe\tx\ty\tz\tu\tv\tw\tpx\tpy\tpz\tpdot")?;
    for t in trajs {
        let vel = t.velocities();
        let rate = rotation_rate(t, frame_interval).ok();
        let aligned = aligned_orientations(t).ok();
        for (i, s) in t.samples().iter().enumerate() {
            let v = vel[i].map(|c| c / frame_interval);
            let p = aligned.as_ref().map(|a| a[i]);
            writeln!(
                w,
                "{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{}\t{}\t{}\t{}",
                t.id,
                s.frame,
                s.position[0],
                s.position[1],
                s.position[2],
                v[0],
                v[1],
                v[2],
                fmt_f(p.map(|p| p[0])),
                fmt_f(p.map(|p| p[1])),
                fmt_f(p.map(|p| p[2])),
                fmt_f(rate.as_ref().map(|r| r[i])),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn det(id: usize, p: [f64; 3]) -> Detection {
        Detection {
            id,
            position: p,
            orientation: None,
        }
    }

    fn line(start: [f64; 3], step: [f64; 3], n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|i| [0, 1, 2].map(|d| start[d] + step[d] * i as f64))
            .collect()
    }

    fn traj_of(pos: &[[f64; 3]]) -> Trajectory {
        Trajectory::new(
            0,
            pos.iter()
                .enumerate()
                .map(|(frame, &position)| Sample {
                    frame,
                    position,
                    orientation: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn drifting_particle_forms_one_track() {
        let frames: Vec<Vec<Detection>> = line([0.0; 3], [10e-6, 0.0, 0.0], 30)
            .into_iter()
            .map(|p| vec![det(0, p)])
            .collect();
        let t = link_frames(&frames, 70e-6).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 30);
    }

    #[test]
    fn large_jump_splits_track() {
        let mut frames: Vec<Vec<Detection>> = (0..5)
            .map(|f| vec![det(0, [f as f64 * 10e-6, 0.0, 0.0])])
            .collect();
        frames.push(vec![det(0, [40e-6 + 100e-6, 0.0, 0.0])]);
        frames.push(vec![det(0, [150e-6, 0.0, 0.0])]);
        let t = link_frames(&frames, 70e-6).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].len(), 5);
        assert_eq!(t[1].first_frame(), 5);
        assert_eq!(t[1].len(), 2);
    }

    #[test]
    fn empty_frames_end_tracks() {
        let frames = vec![vec![det(0, [0.0; 3])], vec![], vec![det(0, [0.0; 3])]];
        let t = link_frames(&frames, 1.0).unwrap();
        assert_eq!(t.len(), 2);
        assert!(link_frames(&frames, 0.0).is_err());
        assert!(link_frames(&[], 1.0).unwrap().is_empty());
    }

    #[test]
    fn equidistant_candidates_go_to_lower_id() {
        let frames = vec![
            vec![det(0, [0.0; 3])],
            vec![det(7, [1.0, 0.0, 0.0]), det(3, [-1.0, 0.0, 0.0])],
        ];
        let t = link_frames(&frames, 5.0).unwrap();
        let linked = t.iter().find(|t| t.len() == 2).unwrap();
        assert_eq!(linked.samples()[1].position, [-1.0, 0.0, 0.0]);
    }

    /// All complete one-to-one assignments between two frames, by brute force.
    fn exhaustive_links(a: &[[f64; 3]], b: &[[f64; 3]], max: f64) -> Vec<(usize, usize)> {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for i in 0..n {
                    let mut q = p.clone();
                    q.insert(i, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let best = perms(b.len())
            .into_iter()
            .map(|p| {
                (
                    p.iter()
                        .enumerate()
                        .map(|(i, &j)| dist_sqr(&a[i], &b[j]).sqrt())
                        .sum::<f64>(),
                    p,
                )
            })
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .unwrap()
            .1;
        best.into_iter()
            .enumerate()
            .filter(|&(i, j)| dist_sqr(&a[i], &b[j]).sqrt() <= max)
            .collect()
    }

    proptest! {
        #[test]
        fn well_separated_links_match_exhaustive(n in 1usize..5, jitter in prop::collection::vec(prop::array::uniform3(-5e-6f64..5e-6), 4)) {
            let a: Vec<[f64; 3]> = (0..n).map(|i| [i as f64 * 200e-6, (i % 2) as f64 * 150e-6, 0.0]).collect();
            let b: Vec<[f64; 3]> = a.iter().zip(&jitter).map(|(p, j)| [p[0] + j[0] + 8e-6, p[1] + j[1], p[2] + j[2]]).collect();
            let frames = vec![
                a.iter().enumerate().map(|(i, &p)| det(i, p)).collect::<Vec<_>>(),
                b.iter().enumerate().map(|(i, &p)| det(i, p)).collect::<Vec<_>>(),
            ];
            let t = link_frames(&frames, 70e-6).unwrap();
            let mut links: Vec<(usize, usize)> = t
                .iter()
                .filter(|t| t.len() == 2)
                .map(|t| {
                    let s = t.samples();
                    (a.iter().position(|p| *p == s[0].position).unwrap(), b.iter().position(|p| *p == s[1].position).unwrap())
                })
                .collect();
            links.sort();
            prop_assert_eq!(links, exhaustive_links(&a, &b, 70e-6));
        }

        #[test]
        fn linking_is_time_symmetric(pts in prop::collection::vec(prop::collection::vec(prop::array::uniform3(0.0f64..300e-6), 0..6), 2..6)) {
            let frames: Vec<Vec<Detection>> = pts.iter().map(|f| f.iter().enumerate().map(|(i, &p)| det(i, p)).collect()).collect();
            let edges = |frames: &[Vec<Detection>], reversed: bool| {
                let nf = frames.len();
                let mut e: Vec<(usize, [u64; 3], usize, [u64; 3])> = Vec::new();
                for t in link_frames(frames, 70e-6).unwrap() {
                    for w in t.samples().windows(2) {
                        let (f0, f1) = if reversed { (nf - 1 - w[1].frame, nf - 1 - w[0].frame) } else { (w[0].frame, w[1].frame) };
                        let (p0, p1) = if reversed { (w[1].position, w[0].position) } else { (w[0].position, w[1].position) };
                        e.push((f0, p0.map(f64::to_bits), f1, p1.map(f64::to_bits)));
                    }
                }
                e.sort();
                e
            };
            let reversed: Vec<Vec<Detection>> = frames.iter().rev().cloned().collect();
            prop_assert_eq!(edges(&frames, false), edges(&reversed, true));
        }

        #[test]
        fn each_detection_used_once(pts in prop::collection::vec(prop::collection::vec(prop::array::uniform3(0.0f64..200e-6), 0..8), 1..6)) {
            let frames: Vec<Vec<Detection>> = pts.iter().map(|f| f.iter().enumerate().map(|(i, &p)| det(i, p)).collect()).collect();
            let t = link_frames(&frames, 50e-6).unwrap();
            let total: usize = t.iter().map(Trajectory::len).sum();
            prop_assert_eq!(total, pts.iter().map(Vec::len).sum::<usize>());
            for tr in &t {
                for w in tr.samples().windows(2) {
                    prop_assert_eq!(w[1].frame, w[0].frame + 1);
                }
            }
        }

        #[test]
        fn tv_denoise_satisfies_optimality(y in prop::collection::vec(-5.0f64..5.0, 1..40), lambda in 0.0f64..3.0) {
            let u = tv_denoise_1d(&y, lambda);
            // with s_k the running sum of y - u: |s_k| <= lambda, s_{n-1} = 0,
            // and s_k = -lambda * sign(u_{k+1} - u_k) wherever u jumps
            let tol = 1e-9 * (1.0 + lambda) * y.len() as f64;
            let mut s = 0.0;
            for k in 0..y.len() {
                s += y[k] - u[k];
                if k + 1 < y.len() {
                    prop_assert!(s.abs() <= lambda + tol, "k={} s={}", k, s);
                    let jump = u[k + 1] - u[k];
                    if jump.abs() > 1e-9 {
                        prop_assert!((s + lambda * jump.signum()).abs() <= tol, "k={} s={} jump={}", k, s, jump);
                    }
                } else {
                    prop_assert!(s.abs() <= tol);
                }
            }
        }

        #[test]
        fn smoothing_keeps_frames(pos in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 1..40), w in 2usize..12, o in 0usize..4, weight in 0.0f64..1.0) {
            let t = traj_of(&pos);
            for m in [Smoothing::SavitzkyGolay { window: w, order: o.min(w - 1) }, Smoothing::TotalVariation { weight }] {
                let s = smooth_trajectory(&t, m).unwrap();
                prop_assert_eq!(s.len(), t.len());
                prop_assert!(s.frames().eq(t.frames()));
            }
        }
    }

    #[test]
    fn tv_denoise_small_cases() {
        assert_eq!(tv_denoise_1d(&[], 1.0), Vec::<f64>::new());
        assert_eq!(tv_denoise_1d(&[3.0], 1.0), vec![3.0]);
        let y = [1.0, -2.0, 4.0, 0.5];
        assert_eq!(tv_denoise_1d(&y, 0.0), y.to_vec());
        // a large weight flattens to the mean
        for v in tv_denoise_1d(&y, 100.0) {
            assert!((v - 0.875).abs() < 1e-12);
        }
        // a step of height 4 shrinks by 2 lambda / n per side
        let u = tv_denoise_1d(&[0.0, 0.0, 4.0, 4.0], 1.0);
        for (a, b) in u.iter().zip([0.5, 0.5, 3.5, 3.5]) {
            assert!((a - b).abs() < 1e-12, "{u:?}");
        }
    }

    #[test]
    fn filter_by_duration() {
        let t = vec![
            traj_of(&line([0.0; 3], [1.0; 3], 9)),
            traj_of(&line([0.0; 3], [1.0; 3], 10)),
        ];
        let kept = filter_min_duration(t.clone(), 10).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].len(), 10);
        assert_eq!(filter_min_duration(t.clone(), 1).unwrap().len(), 2);
        assert!(filter_min_duration(t, 0).is_err());
    }

    #[test]
    fn savitzky_golay_reproduces_lines() {
        let pos = line([1.0, -2.0, 0.5], [0.3, 0.01, -0.2], 37);
        let t = traj_of(&pos);
        for (w, o) in [(5, 1), (20, 2), (7, 3), (37, 1)] {
            let s = smooth_trajectory(
                &t,
                Smoothing::SavitzkyGolay {
                    window: w,
                    order: o,
                },
            )
            .unwrap();
            for (a, b) in s.positions().iter().zip(&pos) {
                for d in 0..3 {
                    assert!((a[d] - b[d]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn savitzky_golay_reduces_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let sigma = 0.1;
        let noise = Normal::new(0.0, sigma).unwrap();
        let pos: Vec<[f64; 3]> = (0..100)
            .map(|_| {
                [
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                ]
            })
            .collect();
        let s = smooth_trajectory(
            &traj_of(&pos),
            Smoothing::SavitzkyGolay {
                window: 20,
                order: 2,
            },
        )
        .unwrap();
        for d in 0..3 {
            let rms = (s.positions().iter().map(|p| p[d] * p[d]).sum::<f64>() / 100.0).sqrt();
            assert!(rms < sigma / 2.0, "axis {d}: {rms}");
        }
    }

    #[test]
    fn short_tracks_and_zero_weight() {
        let t = traj_of(&line([0.0; 3], [1.0, 2.0, 3.0], 5));
        assert_eq!(
            smooth_trajectory(
                &t,
                Smoothing::SavitzkyGolay {
                    window: 20,
                    order: 2
                }
            )
            .unwrap(),
            t
        );
        let noisy = traj_of(&[[0.0, 1.0, 2.0], [5.0, -1.0, 0.0], [1.0, 1.0, 1.0]]);
        assert_eq!(
            smooth_trajectory(&noisy, Smoothing::TotalVariation { weight: 0.0 }).unwrap(),
            noisy
        );
        assert!(smooth_trajectory(
            &t,
            Smoothing::SavitzkyGolay {
                window: 3,
                order: 3
            }
        )
        .is_err());
        assert!(smooth_trajectory(&t, Smoothing::TotalVariation { weight: -1.0 }).is_err());
    }

    #[test]
    fn velocities_of_a_line() {
        let t = traj_of(&line([0.0; 3], [1.0, -2.0, 0.5], 6));
        for v in t.velocities() {
            assert_eq!(v, [1.0, -2.0, 0.5]);
        }
        assert_eq!(traj_of(&[[1.0; 3]]).velocities(), vec![[0.0; 3]]);
    }

    fn oriented(ps: &[[f64; 3]]) -> Trajectory {
        Trajectory::new(
            4,
            ps.iter()
                .enumerate()
                .map(|(frame, &p)| Sample {
                    frame,
                    position: [0.0; 3],
                    orientation: Some(p),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rotation_rate_cases() {
        let still = oriented(&[[0.0, 0.0, 1.0]; 5]);
        assert!(rotation_rate(&still, 0.01)
            .unwrap()
            .iter()
            .all(|&r| r == 0.0));

        let flipped = oriented(&[
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
        ]);
        assert!(rotation_rate(&flipped, 0.01)
            .unwrap()
            .iter()
            .all(|&r| r == 0.0));

        let dt = 1e-3;
        for omega in [1.0, 25.0, 100.0] {
            let ps: Vec<[f64; 3]> = (0..30)
                .map(|i| {
                    let a = omega * dt * i as f64;
                    [a.cos(), a.sin(), 0.0]
                })
                .collect();
            for r in rotation_rate(&oriented(&ps), dt).unwrap() {
                assert!((r - omega).abs() <= 0.02 * omega, "omega {omega}: {r}");
            }
        }

        let bare = traj_of(&line([0.0; 3], [1.0; 3], 3));
        assert!(matches!(
            rotation_rate(&bare, 0.1),
            Err(Error::MissingOrientation(0))
        ));
        assert!(rotation_rate(&still, 0.0).is_err());
    }

    #[test]
    fn trajectory_validation() {
        let s = |frame| Sample {
            frame,
            position: [0.0; 3],
            orientation: None,
        };
        assert!(Trajectory::new(0, vec![s(0), s(2)]).is_err());
        assert!(Trajectory::new(0, vec![]).is_err());
        let bad = Sample {
            orientation: Some([1.0, 1.0, 0.0]),
            ..s(0)
        };
        assert!(Trajectory::new(0, vec![bad]).is_err());
    }

    #[test]
    fn table_layout() {
        let t = oriented(&[[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]);
        let mut out = Vec::new();
        write_trajectory_table(&mut out, &[t], 0.5).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split('\t').count(), 12);
        // the flipped orientation is written aligned
        assert_eq!(lines[2].split('\t').nth(10), Some("1.000000000e0"));
    }
}
