use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::DynamicImage;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::track::Detection;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Sidecar holding `width height` for a raw float image.
pub fn dims_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".dims");
    PathBuf::from(s)
}

fn is_raw(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("f32" | "raw")
    )
}

/// Loads a grayscale hologram. 8- and 16-bit PNG/TIFF are scaled to [0, 1];
/// raw little-endian float32 (`.f32`/`.raw` with a `.dims` sidecar) is read
/// as stored.
pub fn load_image(path: &Path) -> Result<Array2<f64>> {
    if is_raw(path) {
        return load_raw(path);
    }
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / u8::MAX as f64)
            .collect(),
        DynamicImage::ImageLuma16(b) => b
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / u16::MAX as f64)
            .collect(),
        other => {
            return Err(format_err(
                path,
                format!("expected 8- or 16-bit grayscale, found {:?}", other.color()),
            ))
        }
    };
    Ok(Array2::from_shape_vec((h, w), data).expect("buffer matches image size"))
}

fn load_raw(path: &Path) -> Result<Array2<f64>> {
    let dims = dims_path(path);
    let text = std::fs::read_to_string(&dims)
        .map_err(|e| format_err(&dims, format!("cannot read dimensions: {e}")))?;
    let nums: Vec<usize> = text
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| format_err(&dims, format!("bad dimension {t:?}")))
        })
        .collect::<Result<_>>()?;
    let [w, h] = nums[..] else {
        return Err(format_err(&dims, "expected `width height`"));
    };
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != w * h * 4 {
        return Err(format_err(
            path,
            format!("{} bytes do not hold {w}x{h} float32 values", bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("length checked"))
}

/// Writes raw little-endian float32 plus the `.dims` sidecar.
pub fn save_raw(path: &Path, img: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for &v in img.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    std::fs::write(
        dims_path(path),
        format!("{} {}\n", img.ncols(), img.nrows()),
    )?;
    Ok(())
}

/// Files matching `pattern`, sorted by path.
pub fn expand_inputs(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern)
        .map_err(|e| Error::Config(format!("bad input pattern {pattern:?}: {e}")))?;
    let mut out: Vec<PathBuf> = paths
        .filter_map(|p| p.ok())
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Empty(format!("no input files match {pattern:?}")));
    }
    Ok(out)
}

/// Tab-separated table with a header line.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header: Vec<String> = match lines.next() {
            Some(l) => l?.split('\t').map(str::to_owned).collect(),
            None => return Err(format_err(path, "missing header line")),
        };
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<String> = line.split('\t').map(str::to_owned).collect();
            if row.len() != header.len() {
                return Err(format_err(
                    path,
                    format!(
                        "line {} has {} fields, header has {}",
                        n + 2,
                        row.len(),
                        header.len()
                    ),
                ));
            }
            rows.push(row);
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(&self.path, format!("missing column {name:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let s = &self.rows[row][col];
        s.parse().map_err(|_| {
            format_err(
                &self.path,
                format!(
                    "line {}: cannot parse {s:?} in column {:?}",
                    row + 2,
                    self.header[col]
                ),
            )
        })
    }

    fn triple(&self, row: usize, cols: [usize; 3]) -> Result<[f64; 3]> {
        Ok([
            self.parse(row, cols[0])?,
            self.parse(row, cols[1])?,
            self.parse(row, cols[2])?,
        ])
    }
}

/// One row of a truth or particle table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableEntry {
    pub frame: usize,
    pub id: usize,
    /// meters
    pub position: [f64; 3],
    pub axis: Option<[f64; 3]>,
}

fn read_entries(path: &Path) -> Result<Vec<TableEntry>> {
    let t = Table::read(path)?;
    let frame = t.column("frame")?;
    let id = t.column("id")?;
    let pos = [t.column("x")?, t.column("y")?, t.column("z")?];
    let axis = [t.column("px")?, t.column("py")?, t.column("pz")?];
    (0..t.rows.len())
        .map(|r| {
            let a = t.triple(r, axis)?;
            Ok(TableEntry {
                frame: t.parse(r, frame)?,
                id: t.parse(r, id)?,
                position: t.triple(r, pos)?,
                axis: a.iter().all(|v| v.is_finite()).then_some(a),
            })
        })
        .collect()
}

/// Groups entries by frame; frames `0..=max` are all present.
pub fn group_by_frame(entries: Vec<TableEntry>) -> Vec<Vec<TableEntry>> {
    let n = entries.iter().map(|e| e.frame + 1).max().unwrap_or(0);
    let mut out = vec![Vec::new(); n];
    for e in entries {
        out[e.frame].push(e);
    }
    out
}

/// Ground truth written by the synthesizer.
pub fn read_truth_table(path: &Path) -> Result<Vec<Vec<TableEntry>>> {
    Ok(group_by_frame(read_entries(path)?))
}

/// Particle table written by reconstruction, as per-frame detections.
pub fn read_particle_table(path: &Path) -> Result<Vec<Vec<Detection>>> {
    Ok(group_by_frame(read_entries(path)?)
        .into_iter()
        .map(|f| {
            f.into_iter()
                .map(|e| Detection {
                    id: e.id,
                    position: e.position,
                    orientation: e.axis,
                })
                .collect()
        })
        .collect())
}

/// One row of a trajectory table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub track: usize,
    pub frame: usize,
    pub position: [f64; 3],
    /// m/s
    pub velocity: [f64; 3],
}

pub fn read_trajectory_table(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let t = Table::read(path)?;
    let track = t.column("track")?;
    let frame = t.column("frame")?;
    let pos = [t.column("x")?, t.column("y")?, t.column("z")?];
    let vel = [t.column("u")?, t.column("v")?, t.column("w")?];
    (0..t.rows.len())
        .map(|r| {
            Ok(TrajectoryRow {
                track: t.parse(r, track)?,
                frame: t.parse(r, frame)?,
                position: t.triple(r, pos)?,
                velocity: t.triple(r, vel)?,
            })
        })
        .collect()
}
