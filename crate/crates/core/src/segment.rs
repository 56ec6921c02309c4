//! Conversion of reconstructed volumes into discrete particles.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::optics::VolumeGeometry;
use crate::sparsevol::SparseVolume;

/// Relative eigenvalue gap below which the principal axis is ambiguous.
const ISOTROPY_TOL: f64 = 1e-9;

/// One voxel of a blob: lateral column `i`, row `j`, plane `k`, and the
/// modulus of the reconstruction there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobVoxel {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub intensity: f64,
}

/// Principal-axis estimate of a blob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisEstimate {
    /// Unit vector in `(x, y, z)` order; largest-magnitude component positive.
    pub axis: [f64; 3],
    /// `sqrt(l1 / l2)` of the two largest covariance eigenvalues; infinite
    /// for collinear voxels.
    pub elongation: f64,
    /// False when the two leading eigenvalues coincide and the axis is
    /// therefore arbitrary.
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// Sorted by `(k, j, i)`.
    pub voxels: Vec<BlobVoxel>,
    /// Intensity-weighted centroid `(x, y, z)` in voxel units.
    pub centroid: [f64; 3],
    pub peak_intensity: f64,
    pub principal_axis: Option<AxisEstimate>,
}

impl Blob {
    /// Builds a blob from voxels, computing its centroid and principal axis.
    pub fn from_voxels(mut voxels: Vec<BlobVoxel>) -> Result<Self> {
        if voxels.is_empty() {
            return Err(Error::DegenerateBlob("blob has no voxels".into()));
        }
        if voxels
            .iter()
            .any(|v| !(v.intensity >= 0.0 && v.intensity.is_finite()))
        {
            return Err(Error::DegenerateBlob(
                "blob intensities must be finite and >= 0".into(),
            ));
        }
        voxels.sort_by_key(|v| (v.k, v.j, v.i));
        let mut blob = Blob {
            voxels,
            centroid: [0.0; 3],
            peak_intensity: 0.0,
            principal_axis: None,
        };
        blob.centroid = weighted_centroid(&blob)?;
        blob.peak_intensity = blob.voxels.iter().map(|v| v.intensity).fold(0.0, f64::max);
        blob.principal_axis = principal_axis(&blob).ok();
        Ok(blob)
    }

    pub fn volume(&self) -> usize {
        self.voxels.len()
    }

    /// Inclusive `(min, max)` voxel corners in `(i, j, k)` order.
    pub fn bounding_box(&self) -> ([usize; 3], [usize; 3]) {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0; 3];
        for v in &self.voxels {
            for (a, c) in [v.i, v.j, v.k].into_iter().enumerate() {
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        (lo, hi)
    }

    /// Centroid in meters (`z` measured from the sensor).
    pub fn centroid_meters(&self, geom: &VolumeGeometry) -> [f64; 3] {
        geom.voxel_to_meters(self.centroid)
    }
}

/// Drops entries whose modulus is below `rel_tol` times the volume maximum.
pub fn threshold_volume(v: &SparseVolume, rel_tol: f64) -> Result<SparseVolume> {
    if !(0.0..1.0).contains(&rel_tol) {
        return Err(Error::InvalidParameter(format!(
            "rel_tol {rel_tol} must lie in [0, 1)"
        )));
    }
    let cut = rel_tol * v.max_modulus();
    let mut out = v.clone();
    if cut > 0.0 {
        for plane in out.planes_mut() {
            plane.retain(|_, _, c| c.norm() >= cut);
        }
    }
    Ok(out)
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    // the smaller index becomes the root so labels follow voxel order
    if ra < rb {
        parent[rb] = ra;
    } else if rb < ra {
        parent[ra] = rb;
    }
}

/// 26-connected components of the nonzero voxels. Blobs are ordered by their
/// first voxel in `(k, j, i)` order.
pub fn connected_components(v: &SparseVolume) -> Vec<Blob> {
    let voxels: Vec<BlobVoxel> = v
        .iter_voxels()
        .map(|(k, j, i, c)| BlobVoxel {
            i,
            j,
            k,
            intensity: c.norm(),
        })
        .collect();
    components_of(voxels)
}

/// 26-connected components of an arbitrary voxel list.
pub fn components_of(mut voxels: Vec<BlobVoxel>) -> Vec<Blob> {
    voxels.sort_by_key(|v| (v.k, v.j, v.i));
    voxels.dedup_by_key(|v| (v.k, v.j, v.i));
    let index: HashMap<(usize, usize, usize), usize> = voxels
        .iter()
        .enumerate()
        .map(|(n, v)| ((v.i, v.j, v.k), n))
        .collect();
    let mut parent: Vec<usize> = (0..voxels.len()).collect();
    for (n, v) in voxels.iter().enumerate() {
        for dk in -1i64..=1 {
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if (dk, dj, di) == (0, 0, 0) {
                        continue;
                    }
                    let (i, j, k) = (v.i as i64 + di, v.j as i64 + dj, v.k as i64 + dk);
                    if i < 0 || j < 0 || k < 0 {
                        continue;
                    }
                    if let Some(&m) = index.get(&(i as usize, j as usize, k as usize)) {
                        union(&mut parent, n, m);
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<BlobVoxel>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for n in 0..voxels.len() {
        let root = find(&mut parent, n);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(voxels[n]);
    }
    groups
        .into_iter()
        .map(|g| Blob::from_voxels(g).expect("stored voxels have positive modulus"))
        .collect()
}

/// Keeps blobs with strictly more than `min_vox` voxels.
pub fn filter_min_volume(blobs: Vec<Blob>, min_vox: usize) -> Vec<Blob> {
    blobs.into_iter().filter(|b| b.volume() > min_vox).collect()
}

/// Intensity-weighted mean voxel position `(x, y, z)`.
pub fn weighted_centroid(blob: &Blob) -> Result<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut w = 0.0;
    for v in &blob.voxels {
        sum[0] += v.intensity * v.i as f64;
        sum[1] += v.intensity * v.j as f64;
        sum[2] += v.intensity * v.k as f64;
        w += v.intensity;
    }
    if !(w > 0.0) {
        return Err(Error::DegenerateBlob(
            "all blob intensities are zero".into(),
        ));
    }
    Ok(sum.map(|s| s / w))
}

/// Leading eigenvector of the intensity-weighted position covariance, with
/// voxel indices treated as unit-spaced coordinates.
pub fn principal_axis(blob: &Blob) -> Result<AxisEstimate> {
    principal_axis_scaled(blob, [1.0, 1.0, 1.0])
}

/// As [`principal_axis`] with voxel edge lengths `scale` in `(x, y, z)`,
/// for volumes whose plane spacing differs from the pixel pitch.
pub fn principal_axis_scaled(blob: &Blob, scale: [f64; 3]) -> Result<AxisEstimate> {
    let positive = blob.voxels.iter().filter(|v| v.intensity > 0.0).count();
    if positive < 2 {
        return Err(Error::DegenerateBlob(
            "principal axis needs at least two weighted voxels".into(),
        ));
    }
    let pos = |v: &BlobVoxel| {
        Vector3::new(
            v.i as f64 * scale[0],
            v.j as f64 * scale[1],
            v.k as f64 * scale[2],
        )
    };
    let w: f64 = blob.voxels.iter().map(|v| v.intensity).sum();
    let mean = blob
        .voxels
        .iter()
        .fold(Vector3::zeros(), |acc, v| acc + pos(v) * v.intensity)
        / w;
    let cov = blob.voxels.iter().fold(Matrix3::zeros(), |acc, v| {
        let d = pos(v) - mean;
        acc + d * d.transpose() * v.intensity
    }) / w;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
    );
    let v = eig.eigenvectors.column(order[0]);
    let mut axis = [v[0], v[1], v[2]];
    let n = axis.iter().map(|a| a * a).sum::<f64>().sqrt();
    axis = axis.map(|a| a / n);
    let lead = (0..3)
        .max_by(|&a, &b| axis[a].abs().total_cmp(&axis[b].abs()).then(b.cmp(&a)))
        .expect("three components");
    if axis[lead] < 0.0 {
        axis = axis.map(|a| -a);
    }
    let reliable = l1 > 0.0 && (l1 - l2) > ISOTROPY_TOL * l1;
    let elongation = if l2 > 0.0 {
        (l1 / l2).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(AxisEstimate {
        axis,
        elongation,
        reliable,
    })
}

/// Full segmentation: threshold, label, then drop small blobs.
pub fn segment_volume(v: &SparseVolume, rel_tol: f64, min_vox: usize) -> Result<Vec<Blob>> {
    let t = threshold_volume(v, rel_tol)?;
    Ok(filter_min_volume(connected_components(&t), min_vox))
}

/// Segmentation for volumes holding at most one voxel per lateral pixel:
/// voxels are grouped by 8-connectivity of their lateral footprint regardless
/// of plane, so each blob's centroid depth is the intensity-weighted mean of
/// its per-pixel depths.
pub fn segment_projected(v: &SparseVolume, rel_tol: f64, min_vox: usize) -> Result<Vec<Blob>> {
    let t = threshold_volume(v, rel_tol)?;
    let mut depth: HashMap<(usize, usize), BlobVoxel> = HashMap::new();
    for (k, j, i, c) in t.iter_voxels() {
        let vox = BlobVoxel {
            i,
            j,
            k,
            intensity: c.norm(),
        };
        if depth.insert((i, j), vox).is_some() {
            return Err(Error::InvalidParameter(format!(
                "pixel ({i}, {j}) holds more than one voxel"
            )));
        }
    }
    let flat: Vec<BlobVoxel> = depth.values().map(|v| BlobVoxel { k: 0, ..*v }).collect();
    let blobs = components_of(flat)
        .into_iter()
        .filter(|b| b.volume() > min_vox)
        .map(|b| {
            let voxels = b.voxels.iter().map(|f| depth[&(f.i, f.j)]).collect();
            Blob::from_voxels(voxels).expect("stored voxels have positive modulus")
        })
        .collect();
    Ok(blobs)
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:.9e}"),
        None => "nan".into(),
    }
}

/// Particle table: one line per blob per frame, tab separated.
pub fn write_particle_table<W: Write>(
    mut w: W,
    geom: &VolumeGeometry,
    frames: &[Vec<Blob>],
) -> std::io::Result<()> {
    writeln!(
        w,
        "frame\tid\tx_vox\ty_vox\tz_vox\tx\ty\tz\tvolume\tpeak\tpx\tpy\tpz\telongation"
    )?;
    for (f, blobs) in frames.iter().enumerate() {
        for (id, b) in blobs.iter().enumerate() {
            let m = b.centroid_meters(geom);
            let axis = b.principal_axis.filter(|a| a.reliable);
            writeln!(
                w,
                "{f}\t{id}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{}\t{:.9e}\t{}\t{}\t{}\t{}",
                b.centroid[0],
                b.centroid[1],
                b.centroid[2],
                m[0],
                m[1],
                m[2],
                b.volume(),
                b.peak_intensity,
                fmt_opt(axis.map(|a| a.axis[0])),
                fmt_opt(axis.map(|a| a.axis[1])),
                fmt_opt(axis.map(|a| a.axis[2])),
                fmt_opt(b.principal_axis.map(|a| a.elongation)),
            )?;
        }
    }
    Ok(())
}
