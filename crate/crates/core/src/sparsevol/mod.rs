//! Coordinate-format (COO) sparse storage for reconstruction volumes.
//!
//! Each depth plane is indexed independently as a list of `(row, col, value)`
//! triples sorted by `(row, col)`. Zeros are never stored.

mod io;

pub use io::{load_volume, read_volume, save_volume, write_volume, VOLUME_MAGIC, VOLUME_VERSION};

use std::cmp::Ordering;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::optics::VolumeGeometry;

/// Bytes charged per stored element: two 8-byte indices plus an 8-byte
/// complex value.
pub const BYTES_PER_SPARSE_ENTRY: usize = 24;
/// Bytes charged per voxel for dense complex storage.
pub const BYTES_PER_DENSE_VOXEL: usize = 8;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparsePlane {
    nrows: usize,
    ncols: usize,
    coords: Vec<(u32, u32)>,
    values: Vec<Complex64>,
}

impl SparsePlane {
    pub fn empty(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            coords: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Keeps exactly the entries with `|value| > drop_tol`.
    pub fn from_dense(plane: &Array2<Complex64>, drop_tol: f64) -> Self {
        let (nrows, ncols) = plane.dim();
        let mut out = Self::empty(nrows, ncols);
        let t2 = drop_tol * drop_tol;
        let keep = |v: Complex64| {
            if drop_tol == 0.0 {
                return v.re != 0.0 || v.im != 0.0;
            }
            // decide on the squared modulus unless it is too close to call
            let n2 = v.norm_sqr();
            if n2 > t2 * (1.0 + 1e-12) {
                true
            } else if n2 < t2 * (1.0 - 1e-12) {
                false
            } else {
                v.norm() > drop_tol
            }
        };
        let std = plane.as_standard_layout();
        let flat = std.as_slice().expect("standard layout");
        let count = flat.iter().filter(|&&v| keep(v)).count();
        out.coords.reserve_exact(count);
        out.values.reserve_exact(count);
        for (n, &v) in flat.iter().enumerate() {
            if keep(v) {
                out.coords.push(((n / ncols) as u32, (n % ncols) as u32));
                out.values.push(v);
            }
        }
        out
    }

    /// Builds a plane from arbitrary-order triples. Zero values are skipped;
    /// duplicates and out-of-range coordinates are rejected.
    pub fn from_entries<I>(nrows: usize, ncols: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, Complex64)>,
    {
        let mut triples: Vec<(u32, u32, Complex64)> = Vec::new();
        for (r, c, v) in entries {
            if r >= nrows || c >= ncols {
                return Err(Error::InvalidParameter(format!(
                    "entry ({r}, {c}) outside {nrows}x{ncols} plane"
                )));
            }
            if v != ZERO {
                triples.push((r as u32, c as u32, v));
            }
        }
        triples.sort_by_key(|t| (t.0, t.1));
        if let Some(w) = triples
            .windows(2)
            .find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1))
        {
            return Err(Error::InvalidParameter(format!(
                "duplicate entry ({}, {})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self {
            nrows,
            ncols,
            coords: triples.iter().map(|t| (t.0, t.1)).collect(),
            values: triples.iter().map(|t| t.2).collect(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.coords
            .iter()
            .zip(&self.values)
            .map(|(&(r, c), &v)| (r as usize, c as usize, v))
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        match self.coords.binary_search(&(row as u32, col as u32)) {
            Ok(i) => self.values[i],
            Err(_) => ZERO,
        }
    }

    pub fn to_dense(&self) -> Array2<Complex64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        self.add_to_dense(&mut out, 1.0);
        out
    }

    /// `dense += scale * self`
    pub fn add_to_dense(&self, dense: &mut Array2<Complex64>, scale: f64) {
        for (r, c, v) in self.iter() {
            dense[[r, c]] += v * scale;
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::empty(self.nrows, self.ncols);
        }
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out.purge_zeros();
        out
    }

    /// Keeps entries for which `keep(row, col, value)` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(usize, usize, Complex64) -> bool) {
        let mut w = 0;
        for i in 0..self.values.len() {
            let (r, c) = self.coords[i];
            if keep(r as usize, c as usize, self.values[i]) {
                self.coords[w] = self.coords[i];
                self.values[w] = self.values[i];
                w += 1;
            }
        }
        self.coords.truncate(w);
        self.values.truncate(w);
    }

    /// Replaces every stored value by `f(value)`, dropping results that are zero.
    pub fn map_values(&mut self, mut f: impl FnMut(Complex64) -> Complex64) {
        for v in &mut self.values {
            *v = f(*v);
        }
        self.purge_zeros();
    }

    fn purge_zeros(&mut self) {
        self.retain(|_, _, v| v != ZERO);
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `alpha * x + y` by a sorted merge of the two entry sets.
    pub fn axpy(alpha: f64, x: &SparsePlane, y: &SparsePlane) -> Result<SparsePlane> {
        if x.shape() != y.shape() {
            return Err(Error::GeometryMismatch(format!(
                "plane shapes {:?} and {:?} differ",
                x.shape(),
                y.shape()
            )));
        }
        let mut out = SparsePlane::empty(x.nrows, x.ncols);
        out.coords.reserve(x.nnz() + y.nnz());
        out.values.reserve(x.nnz() + y.nnz());
        let (mut i, mut j) = (0, 0);
        let push = |out: &mut SparsePlane, rc: (u32, u32), v: Complex64| {
            if v != ZERO {
                out.coords.push(rc);
                out.values.push(v);
            }
        };
        while i < x.nnz() || j < y.nnz() {
            let ord = match (x.coords.get(i), y.coords.get(j)) {
                (Some(a), Some(b)) => a.cmp(b),
                (Some(_), None) => Ordering::Less,
                (None, _) => Ordering::Greater,
            };
            match ord {
                Ordering::Less => {
                    push(&mut out, x.coords[i], x.values[i] * alpha);
                    i += 1;
                }
                Ordering::Greater => {
                    push(&mut out, y.coords[j], y.values[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    push(&mut out, x.coords[i], x.values[i] * alpha + y.values[j]);
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(out)
    }

    /// `Re <self, other>` summed over shared coordinates.
    pub fn dot_re(&self, other: &SparsePlane) -> f64 {
        let (mut i, mut j) = (0, 0);
        let mut acc = 0.0;
        while i < self.nnz() && j < other.nnz() {
            match self.coords[i].cmp(&other.coords[j]) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    acc += (self.values[i].conj() * other.values[j]).re;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// `Re <self, dense>`
    pub fn dot_re_dense(&self, dense: &Array2<Complex64>) -> f64 {
        self.iter()
            .map(|(r, c, v)| (v.conj() * dense[[r, c]]).re)
            .sum()
    }
}

/// A z-ordered stack of sparse planes matching a [`VolumeGeometry`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVolume {
    geom: VolumeGeometry,
    planes: Vec<SparsePlane>,
}

impl SparseVolume {
    pub fn zeros(geom: VolumeGeometry) -> Self {
        Self {
            geom,
            planes: (0..geom.nz)
                .map(|_| SparsePlane::empty(geom.ny, geom.nx))
                .collect(),
        }
    }

    pub fn from_planes(geom: VolumeGeometry, planes: Vec<SparsePlane>) -> Result<Self> {
        if planes.len() != geom.nz {
            return Err(Error::GeometryMismatch(format!(
                "{} planes supplied for nz = {}",
                planes.len(),
                geom.nz
            )));
        }
        if let Some((k, p)) = planes
            .iter()
            .enumerate()
            .find(|(_, p)| p.shape() != geom.plane_shape())
        {
            return Err(Error::GeometryMismatch(format!(
                "plane {k} has shape {:?}, expected {:?}",
                p.shape(),
                geom.plane_shape()
            )));
        }
        Ok(Self { geom, planes })
    }

    pub fn from_dense_stack(
        geom: VolumeGeometry,
        stack: &[Array2<Complex64>],
        drop_tol: f64,
    ) -> Result<Self> {
        let planes = stack
            .iter()
            .map(|p| SparsePlane::from_dense(p, drop_tol))
            .collect();
        Self::from_planes(geom, planes)
    }

    /// Builds a volume from `(plane, row, col, value)` voxels in any order.
    pub fn from_voxels<I>(geom: VolumeGeometry, voxels: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, usize, Complex64)>,
    {
        let mut per_plane: Vec<Vec<(usize, usize, Complex64)>> = vec![Vec::new(); geom.nz];
        for (k, r, c, v) in voxels {
            if k >= geom.nz {
                return Err(Error::InvalidParameter(format!(
                    "plane {k} outside nz = {}",
                    geom.nz
                )));
            }
            per_plane[k].push((r, c, v));
        }
        let planes = per_plane
            .into_iter()
            .map(|e| SparsePlane::from_entries(geom.ny, geom.nx, e))
            .collect::<Result<Vec<_>>>()?;
        Self::from_planes(geom, planes)
    }

    pub fn geom(&self) -> &VolumeGeometry {
        &self.geom
    }

    pub fn planes(&self) -> &[SparsePlane] {
        &self.planes
    }

    pub fn plane(&self, k: usize) -> &SparsePlane {
        &self.planes[k]
    }

    pub fn planes_mut(&mut self) -> &mut [SparsePlane] {
        &mut self.planes
    }

    pub fn into_planes(self) -> Vec<SparsePlane> {
        self.planes
    }

    pub fn get(&self, k: usize, row: usize, col: usize) -> Complex64 {
        self.planes[k].get(row, col)
    }

    pub fn nnz(&self) -> usize {
        self.planes.iter().map(SparsePlane::nnz).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.iter().all(SparsePlane::is_empty)
    }

    /// Fraction of zero voxels.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / self.geom.voxel_count() as f64
    }

    /// Storage under the 24-bytes-per-entry accounting model, independent
    /// of the narrower indices actually held in memory.
    pub fn memory_estimate(&self) -> usize {
        self.nnz() * BYTES_PER_SPARSE_ENTRY
    }

    /// Storage the same volume would need as a dense complex array.
    pub fn dense_memory_estimate(&self) -> usize {
        self.geom.voxel_count() * BYTES_PER_DENSE_VOXEL
    }

    pub fn iter_voxels(&self) -> impl Iterator<Item = (usize, usize, usize, Complex64)> + '_ {
        self.planes
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.iter().map(move |(r, c, v)| (k, r, c, v)))
    }

    pub fn to_dense_stack(&self) -> Vec<Array2<Complex64>> {
        self.planes.iter().map(SparsePlane::to_dense).collect()
    }

    pub fn max_modulus(&self) -> f64 {
        self.planes
            .iter()
            .map(SparsePlane::max_modulus)
            .fold(0.0, f64::max)
    }

    pub fn l1_norm(&self) -> f64 {
        self.planes.iter().map(SparsePlane::l1_norm).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.planes.iter().map(SparsePlane::norm_sqr).sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            geom: self.geom,
            planes: self.planes.iter().map(|p| p.scale(s)).collect(),
        }
    }

    pub fn axpy(alpha: f64, x: &SparseVolume, y: &SparseVolume) -> Result<SparseVolume> {
        if x.geom != y.geom {
            return Err(Error::GeometryMismatch(
                "axpy operands have different geometries".into(),
            ));
        }
        let planes = x
            .planes
            .iter()
            .zip(&y.planes)
            .map(|(a, b)| SparsePlane::axpy(alpha, a, b))
            .collect::<Result<Vec<_>>>()?;
        Ok(SparseVolume {
            geom: x.geom,
            planes,
        })
    }

    /// `Re <self, other>`
    pub fn dot_re(&self, other: &SparseVolume) -> Result<f64> {
        if self.geom != other.geom {
            return Err(Error::GeometryMismatch(
                "dot operands have different geometries".into(),
            ));
        }
        Ok(self
            .planes
            .iter()
            .zip(&other.planes)
            .map(|(a, b)| a.dot_re(b))
            .sum())
    }

    /// `Re <self, stack>` against a dense plane stack.
    pub fn dot_re_dense(&self, stack: &[Array2<Complex64>]) -> Result<f64> {
        if stack.len() != self.geom.nz {
            return Err(Error::GeometryMismatch(format!(
                "dense stack has {} planes, volume has {}",
                stack.len(),
                self.geom.nz
            )));
        }
        Ok(self
            .planes
            .iter()
            .zip(stack)
            .map(|(p, d)| p.dot_re_dense(d))
            .sum())
    }
}
