use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::optics::{ForwardModel, VolumeGeometry};
use crate::sparsevol::SparseVolume;

/// Conventional reconstruction: back-propagate to every plane, threshold the
/// intensity globally at `threshold * max`, and keep for each surviving
/// lateral pixel only the plane where its intensity peaks.
pub fn baseline_reconstruct(
    b: &Array2<f64>,
    geom: &VolumeGeometry,
    threshold: f64,
) -> Result<SparseVolume> {
    baseline_with_model(&ForwardModel::new(*geom)?, b, threshold)
}

pub fn baseline_with_model(
    model: &ForwardModel,
    b: &Array2<f64>,
    threshold: f64,
) -> Result<SparseVolume> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "baseline threshold {threshold} must lie in (0, 1]"
        )));
    }
    let geom = *model.geom();
    let spec = model.sensor_spectrum(b)?;
    let shape = geom.plane_shape();
    let mut peak = Array2::<f64>::zeros(shape);
    let mut peak_plane = Array2::<usize>::zeros(shape);
    let mut peak_value = Array2::<Complex64>::zeros(shape);
    for k in 0..geom.nz {
        let field = model.adjoint_plane(&spec, k);
        for ((idx, &v), p) in field.indexed_iter().zip(peak.iter_mut()) {
            let intensity = v.norm_sqr();
            // strict comparison keeps the shallowest plane on ties
            if intensity > *p {
                *p = intensity;
                peak_plane[idx] = k;
                peak_value[idx] = v;
            }
        }
    }
    let max = peak.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(SparseVolume::zeros(geom));
    }
    let cut = threshold * max;
    let voxels = peak
        .indexed_iter()
        .filter(|(_, &i)| i >= cut)
        .map(|((r, c), _)| (peak_plane[[r, c]], r, c, peak_value[[r, c]]));
    SparseVolume::from_voxels(geom, voxels)
}
