//! Binary volume container.
//!
//! Layout (all little-endian):
//! `"RIHV"`, version `u64`, `nx ny nz` as `u64`, `pitch dz z0 wavelength` as
//! `f64`, then for every plane an entry count `u64` followed by that many
//! `(row: u32, col: u32, re: f32, im: f32)` records.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use super::{SparsePlane, SparseVolume};
use crate::error::{Error, Result};
use crate::optics::VolumeGeometry;

pub const VOLUME_MAGIC: &[u8; 4] = b"RIHV";
pub const VOLUME_VERSION: u64 = 1;

pub fn write_volume<W: Write>(mut w: W, v: &SparseVolume) -> Result<()> {
    let g = v.geom();
    w.write_all(VOLUME_MAGIC)?;
    for n in [VOLUME_VERSION, g.nx as u64, g.ny as u64, g.nz as u64] {
        w.write_all(&n.to_le_bytes())?;
    }
    for f in [g.pitch, g.dz, g.z0, g.wavelength] {
        w.write_all(&f.to_le_bytes())?;
    }
    for plane in v.planes() {
        w.write_all(&(plane.nnz() as u64).to_le_bytes())?;
        for (r, c, val) in plane.iter() {
            w.write_all(&(r as u32).to_le_bytes())?;
            w.write_all(&(c as u32).to_le_bytes())?;
            w.write_all(&(val.re as f32).to_le_bytes())?;
            w.write_all(&(val.im as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads a volume written by [`write_volume`]. `origin` is used only in
/// error messages.
pub fn read_volume<R: Read>(mut r: R, origin: &Path) -> Result<SparseVolume> {
    let fmt = |msg: String| Error::Format {
        path: origin.to_path_buf(),
        msg,
    };
    let eof = |e: std::io::Error| fmt(format!("truncated container: {e}"));

    let magic: [u8; 4] = read_array(&mut r).map_err(eof)?;
    if &magic != VOLUME_MAGIC {
        return Err(fmt(format!("bad magic {magic:?}")));
    }
    let mut u = || -> Result<u64> { Ok(u64::from_le_bytes(read_array(&mut r).map_err(eof)?)) };
    let version = u()?;
    if version != VOLUME_VERSION {
        return Err(fmt(format!("unsupported version {version}")));
    }
    let (nx, ny, nz) = (u()? as usize, u()? as usize, u()? as usize);
    let mut f = || -> Result<f64> { Ok(f64::from_le_bytes(read_array(&mut r).map_err(eof)?)) };
    let geom = VolumeGeometry {
        nx,
        ny,
        nz,
        pitch: f()?,
        dz: f()?,
        z0: f()?,
        wavelength: f()?,
    };
    geom.validate().map_err(|e| fmt(e.to_string()))?;

    let mut planes = Vec::with_capacity(nz);
    for k in 0..nz {
        let count = u64::from_le_bytes(read_array(&mut r).map_err(eof)?) as usize;
        if count > nx * ny {
            return Err(fmt(format!("plane {k} claims {count} entries")));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let row = u32::from_le_bytes(read_array(&mut r).map_err(eof)?) as usize;
            let col = u32::from_le_bytes(read_array(&mut r).map_err(eof)?) as usize;
            let re = f32::from_le_bytes(read_array(&mut r).map_err(eof)?) as f64;
            let im = f32::from_le_bytes(read_array(&mut r).map_err(eof)?) as f64;
            entries.push((row, col, Complex64::new(re, im)));
        }
        planes.push(
            SparsePlane::from_entries(ny, nx, entries)
                .map_err(|e| fmt(format!("plane {k}: {e}")))?,
        );
    }
    SparseVolume::from_planes(geom, planes)
}


/// Convenience wrapper writing to a file path.
pub fn save_volume(path: &Path, v: &SparseVolume) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_volume(&mut w, v)?;
    w.flush()?;
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<SparseVolume> {
    let f = std::fs::File::open(path)?;
    read_volume(std::io::BufReader::new(f), path)
}
