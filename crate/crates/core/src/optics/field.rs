use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sampled complex wavefield on a square-pixel grid.
///
/// `values` has shape `(height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField2D {
    pub values: Array2<Complex64>,
    /// meters per pixel
    pub pitch: f64,
    /// meters
    pub wavelength: f64,
}

impl ComplexField2D {
    pub fn new(values: Array2<Complex64>, pitch: f64, wavelength: f64) -> Result<Self> {
        let field = Self {
            values,
            pitch,
            wavelength,
        };
        field.validate()?;
        Ok(field)
    }

    pub fn zeros(width: usize, height: usize, pitch: f64, wavelength: f64) -> Result<Self> {
        Self::new(Array2::zeros((height, width)), pitch, wavelength)
    }

    pub fn from_real(values: &Array2<f64>, pitch: f64, wavelength: f64) -> Result<Self> {
        Self::new(values.mapv(|v| Complex64::new(v, 0.0)), pitch, wavelength)
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width() == 0 || self.height() == 0 {
            return Err(Error::InvalidParameter("field must be at least 1x1".into()));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "pitch {} must be > 0",
                self.pitch
            )));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wavelength {} must be > 0",
                self.wavelength
            )));
        }
        if self
            .values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::InvalidParameter(
                "field contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Reconstruction volume layout: `nz` planes of `ny x nx` voxels stacked in
/// depth, plane `k` at distance `z0 + k*dz` from the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeGeometry {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// lateral voxel size, meters
    pub pitch: f64,
    /// plane spacing, meters
    pub dz: f64,
    /// sensor to first plane, meters
    pub z0: f64,
    pub wavelength: f64,
}

impl Default for VolumeGeometry {
    fn default() -> Self {
        Self {
            nx: 512,
            ny: 512,
            nz: 700,
            pitch: 10e-6,
            dz: 10e-6,
            z0: 1e-3,
            wavelength: 632e-9,
        }
    }
}

impl VolumeGeometry {
    /// Cubic voxels: plane spacing equal to the lateral pitch.
    pub fn cubic(nx: usize, ny: usize, nz: usize, pitch: f64, z0: f64, wavelength: f64) -> Self {
        Self {
            nx,
            ny,
            nz,
            pitch,
            dz: pitch,
            z0,
            wavelength,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return bad(format!(
                "volume extents must be >= 1 (got {}x{}x{})",
                self.nx, self.ny, self.nz
            ));
        }
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return bad(format!("pitch {} must be > 0", self.pitch));
        }
        if !(self.dz > 0.0 && self.dz.is_finite()) {
            return bad(format!("dz {} must be > 0", self.dz));
        }
        if !(self.z0 >= 0.0 && self.z0.is_finite()) {
            return bad(format!("z0 {} must be >= 0", self.z0));
        }
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return bad(format!("wavelength {} must be > 0", self.wavelength));
        }
        Ok(())
    }

    pub fn plane_depth(&self, k: usize) -> f64 {
        self.z0 + k as f64 * self.dz
    }

    pub fn plane_shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Physical position (meters) of a continuous voxel coordinate `(x, y, z)`.
    pub fn voxel_to_meters(&self, v: [f64; 3]) -> [f64; 3] {
        [
            v[0] * self.pitch,
            v[1] * self.pitch,
            self.z0 + v[2] * self.dz,
        ]
    }

    pub fn meters_to_voxel(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0] / self.pitch,
            p[1] / self.pitch,
            (p[2] - self.z0) / self.dz,
        ]
    }

    pub(crate) fn check_plane(&self, shape: (usize, usize), what: &str) -> Result<()> {
        if shape != self.plane_shape() {
            return Err(Error::GeometryMismatch(format!(
                "{what} has shape {:?}, geometry expects {:?}",
                shape,
                self.plane_shape()
            )));
        }
        Ok(())
    }
}
