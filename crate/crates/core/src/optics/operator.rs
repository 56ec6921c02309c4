//! The linearized hologram formation operator `H` and its adjoint.
//!
//! `H x = Re{ sum_k propagate(x_k, -z_k) }` maps a plane stack to a real
//! sensor-plane image; `(H* r)_k = propagate(r, +z_k)`.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::fft::Fft2;
use super::field::VolumeGeometry;
use super::propagation::transfer_kernel;
use crate::error::{Error, Result};
use crate::sparsevol::{SparsePlane, SparseVolume};

/// Kernels for all planes are cached when they fit in this many bytes.
const KERNEL_CACHE_BYTES: usize = 768 << 20;

/// Reusable forward model for one volume geometry.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    geom: VolumeGeometry,
    fft: Fft2,
    kernels: Option<Vec<Array2<Complex64>>>,
    /// planes transformed concurrently; bounds the transient dense memory
    chunk: usize,
}

impl ForwardModel {
    pub fn new(geom: VolumeGeometry) -> Result<Self> {
        geom.validate()?;
        let bytes = geom.voxel_count() * std::mem::size_of::<Complex64>();
        let kernels = (bytes <= KERNEL_CACHE_BYTES).then(|| {
            (0..geom.nz)
                .into_par_iter()
                .map(|k| {
                    transfer_kernel(
                        geom.ny,
                        geom.nx,
                        geom.pitch,
                        geom.wavelength,
                        geom.plane_depth(k),
                    )
                })
                .collect()
        });
        Ok(Self {
            geom,
            fft: Fft2::new(geom.ny, geom.nx),
            kernels,
            chunk: rayon::current_num_threads().max(1) * 2,
        })
    }

    /// Caps how many dense planes are alive at once during forward/adjoint.
    pub fn with_plane_concurrency(mut self, planes: usize) -> Self {
        self.chunk = planes.max(1);
        self
    }

    pub fn geom(&self) -> &VolumeGeometry {
        &self.geom
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    /// Transfer kernel for `+z_k`.
    fn with_kernel<T>(&self, k: usize, f: impl FnOnce(&Array2<Complex64>) -> T) -> T {
        match &self.kernels {
            Some(ks) => f(&ks[k]),
            None => f(&transfer_kernel(
                self.geom.ny,
                self.geom.nx,
                self.geom.pitch,
                self.geom.wavelength,
                self.geom.plane_depth(k),
            )),
        }
    }

    fn check_volume(&self, x: &SparseVolume) -> Result<()> {
        if x.geom() != &self.geom {
            return Err(Error::GeometryMismatch(format!(
                "volume geometry {:?} does not match operator geometry {:?}",
                x.geom(),
                self.geom
            )));
        }
        Ok(())
    }

    /// Spectrum of `propagate(x_k, -z_k)`, or `None` for an empty plane.
    fn plane_contribution(&self, k: usize, plane: &SparsePlane) -> Option<Array2<Complex64>> {
        if plane.is_empty() {
            return None;
        }
        let mut spec = plane.to_dense();
        self.fft.forward(&mut spec);
        self.with_kernel(k, |h| {
            Zip::from(&mut spec).and(h).for_each(|s, &h| *s *= h.conj());
        });
        Some(spec)
    }

    /// `H x`. Plane contributions are summed in plane order, so the result
    /// does not depend on the thread count.
    pub fn forward(&self, x: &SparseVolume) -> Result<Array2<f64>> {
        self.check_volume(x)?;
        let mut acc: Array2<Complex64> = Array2::zeros(self.geom.plane_shape());
        let planes = x.planes();
        for start in (0..planes.len()).step_by(self.chunk) {
            let end = (start + self.chunk).min(planes.len());
            let parts: Vec<Option<Array2<Complex64>>> = (start..end)
                .into_par_iter()
                .map(|k| self.plane_contribution(k, &planes[k]))
                .collect();
            for part in parts.into_iter().flatten() {
                acc += &part;
            }
        }
        self.fft.inverse(&mut acc);
        Ok(acc.mapv(|v| v.re))
    }

    /// FFT of a real sensor image, shared by all planes of an adjoint.
    pub fn sensor_spectrum(&self, r: &Array2<f64>) -> Result<Array2<Complex64>> {
        self.geom.check_plane(r.dim(), "sensor image")?;
        let mut spec = r.mapv(|v| Complex64::new(v, 0.0));
        self.fft.forward(&mut spec);
        Ok(spec)
    }

    /// Plane `k` of `H* r` given `r`'s spectrum.
    pub fn adjoint_plane(&self, spectrum: &Array2<Complex64>, k: usize) -> Array2<Complex64> {
        self.adjoint_plane_scaled(spectrum, k, 1.0)
    }

    /// `scale` times plane `k` of `H* r`.
    pub fn adjoint_plane_scaled(
        &self,
        spectrum: &Array2<Complex64>,
        k: usize,
        scale: f64,
    ) -> Array2<Complex64> {
        let s = scale * self.fft.inverse_scale();
        let mut out = self.with_kernel(k, |h| {
            let mut o = Array2::zeros(spectrum.dim());
            Zip::from(&mut o)
                .and(spectrum)
                .and(h)
                .for_each(|o, &a, &h| *o = a * h * s);
            o
        });
        self.fft.inverse_unnormalized(&mut out);
        out
    }

    /// `H* r` as a dense stack.
    pub fn adjoint(&self, r: &Array2<f64>) -> Result<Vec<Array2<Complex64>>> {
        let spec = self.sensor_spectrum(r)?;
        let mut out = Vec::with_capacity(self.geom.nz);
        for start in (0..self.geom.nz).step_by(self.chunk) {
            let end = (start + self.chunk).min(self.geom.nz);
            let part: Vec<_> = (start..end)
                .into_par_iter()
                .map(|k| self.adjoint_plane(&spec, k))
                .collect();
            out.extend(part);
        }
        Ok(out)
    }

    /// `H x - b`
    pub fn residual(&self, x: &SparseVolume, b: &Array2<f64>) -> Result<Array2<f64>> {
        self.geom.check_plane(b.dim(), "hologram")?;
        Ok(self.forward(x)? - b)
    }

    /// `||H x - b||^2`
    pub fn data_misfit(&self, x: &SparseVolume, b: &Array2<f64>) -> Result<f64> {
        Ok(self.residual(x, b)?.iter().map(|v| v * v).sum())
    }

    /// Gradient of `||H x - b||^2`, i.e. `2 H*(H x - b)`.
    pub fn data_gradient(
        &self,
        x: &SparseVolume,
        b: &Array2<f64>,
    ) -> Result<Vec<Array2<Complex64>>> {
        let r = self.residual(x, b)? * 2.0;
        self.adjoint(&r)
    }

    /// Estimates `||H||^2` (the largest eigenvalue of `H*H`) by power
    /// iteration from a seeded random start.
    pub fn norm_sqr_estimate(&self, iterations: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // iterate on H H*, which shares the top eigenvalue with H*H and lives
        // on the sensor plane
        let mut r: Array2<f64> =
            Array2::from_shape_fn(self.geom.plane_shape(), |_| rng.random_range(-1.0..1.0));
        let mut estimate = 0.0;
        for _ in 0..iterations.max(1) {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            r /= norm;
            let stack = self.adjoint(&r).expect("shape checked at construction");
            let x =
                SparseVolume::from_dense_stack(self.geom, &stack, 0.0).expect("geometry matches");
            let next = self.forward(&x).expect("geometry matches");
            estimate = next.iter().zip(r.iter()).map(|(a, b)| a * b).sum::<f64>();
            r = next;
        }
        estimate
    }
}

/// `H x` for a one-off geometry.
pub fn forward(x: &SparseVolume, geom: &VolumeGeometry) -> Result<Array2<f64>> {
    if x.geom() != geom {
        return Err(Error::GeometryMismatch(
            "volume does not match geometry".into(),
        ));
    }
    ForwardModel::new(*geom)?.forward(x)
}

/// `H* r` for a one-off geometry.
pub fn adjoint(r: &Array2<f64>, geom: &VolumeGeometry) -> Result<Vec<Array2<Complex64>>> {
    ForwardModel::new(*geom)?.adjoint(r)
}

/// `2 H*(H x - b)` for a one-off geometry.
pub fn data_gradient(
    x: &SparseVolume,
    b: &Array2<f64>,
    geom: &VolumeGeometry,
) -> Result<Vec<Array2<Complex64>>> {
    if x.geom() != geom {
        return Err(Error::GeometryMismatch(
            "volume does not match geometry".into(),
        ));
    }
    ForwardModel::new(*geom)?.data_gradient(x, b)
}
