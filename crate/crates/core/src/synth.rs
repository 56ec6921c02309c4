//! Synthetic particle scenes and nonlinear hologram rendering for
//! validation against known ground truth.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{transfer_kernel, Fft2, VolumeGeometry};

/// Sub-samples per pixel side used to rasterize masks.
const SUPERSAMPLE: usize = 8;

/// Elongated particle: a cylinder of the particle diameter and `length`
/// along the unit axis `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rod {
    pub axis: [f64; 3],
    pub length: f64,
}

impl Rod {
    pub fn aspect_ratio(&self, diameter: f64) -> f64 {
        self.length / diameter
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    /// meters; `z` is the distance from the sensor
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub diameter: f64,
    /// amplitude attenuation in [0, 1]
    pub opacity: f64,
    pub rod: Option<Rod>,
}

impl Particle {
    pub fn sphere(x: f64, y: f64, z: f64, diameter: f64) -> Self {
        Self {
            x,
            y,
            z,
            diameter,
            opacity: 1.0,
            rod: None,
        }
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub particles: Vec<Particle>,
    pub geom: VolumeGeometry,
    pub rng_seed: u64,
}

impl Scene {
    pub fn empty(geom: VolumeGeometry, rng_seed: u64) -> Self {
        Self {
            particles: Vec::new(),
            geom,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geom;
        let (xmax, ymax) = (g.nx as f64 * g.pitch, g.ny as f64 * g.pitch);
        let (zmin, zmax) = (g.z0, g.z0 + g.nz as f64 * g.dz);
        for (i, p) in self.particles.iter().enumerate() {
            let inside = (0.0..xmax).contains(&p.x)
                && (0.0..ymax).contains(&p.y)
                && (zmin..zmax).contains(&p.z);
            if !inside {
                return Err(Error::InvalidParameter(format!(
                    "particle {i} lies outside the volume"
                )));
            }
            if !(p.diameter > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "particle {i} has diameter {}",
                    p.diameter
                )));
            }
            if !(0.0..=1.0).contains(&p.opacity) {
                return Err(Error::InvalidParameter(format!(
                    "particle {i} opacity {} outside [0, 1]",
                    p.opacity
                )));
            }
            if let Some(rod) = p.rod {
                let n = rod.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "particle {i} axis is not unit length"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Particles per sensor pixel.
    pub fn concentration(&self) -> f64 {
        self.particles.len() as f64 / (self.geom.nx * self.geom.ny) as f64
    }
}

/// `n` spheres placed uniformly over the voxel-centre span of the volume.
pub fn generate_scene(n: usize, geom: &VolumeGeometry, diameter: f64, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = |n: usize| (n.max(1) - 1) as f64;
    let particles = (0..n)
        .map(|_| {
            let v = [
                rng.random_range(0.0..=span(geom.nx)),
                rng.random_range(0.0..=span(geom.ny)),
                rng.random_range(0.0..=span(geom.nz)),
            ];
            let [x, y, z] = geom.voxel_to_meters(v);
            Particle::sphere(x, y, z, diameter)
        })
        .collect();
    Scene {
        particles,
        geom: *geom,
        rng_seed: seed,
    }
}

/// Analytic velocity fields (m/s) used to move synthetic particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityField {
    Uniform {
        velocity: [f64; 3],
    },
    /// Rigid rotation about the axis parallel to z through `(cx, cy)`.
    SolidBodyRotation {
        omega: f64,
        center: [f64; 2],
    },
    /// `u = a_x sin(2 pi y / Ly)`, `v = a_y sin(2 pi z' / Lz)`,
    /// `w = a_z sin(2 pi x / Lx)` over the volume box; periodic and
    /// divergence free, with per-component RMS `a / sqrt(2)` for uniformly
    /// spread particles.
    Sinusoidal {
        amplitude: [f64; 3],
        extent: [f64; 3],
        z0: f64,
    },
    /// Closed cellular flow in the box `[0, Lx] x [0, Ly] x [z0, z0 + Lz]`;
    /// normal velocity vanishes on every wall so particles never leave.
    Cellular {
        rate: [f64; 2],
        extent: [f64; 3],
        z0: f64,
    },
}

impl VelocityField {
    /// Sinusoidal field spanning `geom`.
    pub fn sinusoidal_for(geom: &VolumeGeometry, amplitude: [f64; 3]) -> Self {
        VelocityField::Sinusoidal {
            amplitude,
            extent: extent_of(geom),
            z0: geom.z0,
        }
    }

    /// Cellular field spanning `geom` with peak lateral speeds `peak` (m/s).
    pub fn cellular_for(geom: &VolumeGeometry, peak: [f64; 2]) -> Self {
        let e = extent_of(geom);
        // u peaks at rate_x * Lx / pi
        VelocityField::Cellular {
            rate: [peak[0] * PI / e[0], peak[1] * PI / e[1]],
            extent: e,
            z0: geom.z0,
        }
    }

    pub fn velocity(&self, p: [f64; 3]) -> [f64; 3] {
        match *self {
            VelocityField::Uniform { velocity } => velocity,
            VelocityField::SolidBodyRotation { omega, center } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                [-omega * dy, omega * dx, 0.0]
            }
            VelocityField::Sinusoidal {
                amplitude,
                extent,
                z0,
            } => [
                amplitude[0] * (2.0 * PI * p[1] / extent[1]).sin(),
                amplitude[1] * (2.0 * PI * (p[2] - z0) / extent[2]).sin(),
                amplitude[2] * (2.0 * PI * p[0] / extent[0]).sin(),
            ],
            VelocityField::Cellular { rate, extent, z0 } => {
                let (sx, cx) = (PI * p[0] / extent[0]).sin_cos();
                let (sy, cy) = (PI * p[1] / extent[1]).sin_cos();
                let (sz, cz) = (PI * (p[2] - z0) / extent[2]).sin_cos();
                [
                    rate[0] * extent[0] / PI * sx * cz,
                    rate[1] * extent[1] / PI * sy * cz,
                    -extent[2] / PI * sz * (rate[0] * cx + rate[1] * cy),
                ]
            }
        }
    }
}

fn extent_of(geom: &VolumeGeometry) -> [f64; 3] {
    [
        geom.nx as f64 * geom.pitch,
        geom.ny as f64 * geom.pitch,
        geom.nz as f64 * geom.dz,
    ]
}

/// One forward-Euler step of length `dt`, wrapping positions periodically
/// into the volume.
pub fn advect_scene(
    scene: &Scene,
    velocity: impl Fn([f64; 3]) -> [f64; 3],
    dt: f64,
) -> Result<Scene> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt {dt} must be > 0")));
    }
    let g = &scene.geom;
    let [lx, ly, lz] = extent_of(g);
    let particles = scene
        .particles
        .iter()
        .map(|p| {
            let v = velocity(p.position());
            let mut q = *p;
            q.x = (p.x + v[0] * dt).rem_euclid(lx);
            q.y = (p.y + v[1] * dt).rem_euclid(ly);
            q.z = g.z0 + (p.z - g.z0 + v[2] * dt).rem_euclid(lz);
            q
        })
        .collect();
    Ok(Scene {
        particles,
        geom: *g,
        rng_seed: scene.rng_seed,
    })
}

/// Scenes for `frames` consecutive instants starting at `initial`.
pub fn simulate_sequence(
    initial: &Scene,
    field: &VelocityField,
    dt: f64,
    frames: usize,
) -> Result<Vec<Scene>> {
    let mut out = Vec::with_capacity(frames);
    if frames == 0 {
        return Ok(out);
    }
    out.push(initial.clone());
    for _ in 1..frames {
        let next = advect_scene(out.last().expect("non-empty"), |p| field.velocity(p), dt)?;
        out.push(next);
    }
    Ok(out)
}

/// Adds the anti-aliased coverage of a disc of `radius` pixels centred at
/// pixel coordinates `(cx, cy)` into `mask` (periodic), keeping the maximum
/// where masks overlap.
fn rasterize_disc(mask: &mut Array2<f64>, cx: f64, cy: f64, radius: f64, opacity: f64) {
    let (rows, cols) = mask.dim();
    let reach = radius.ceil() as i64 + 1;
    let (ix, iy) = (cx.round() as i64, cy.round() as i64);
    let s = SUPERSAMPLE as f64;
    let r2 = radius * radius;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let (px, py) = (ix + dx, iy + dy);
            let mut hits = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let ox = px as f64 + (sx as f64 + 0.5) / s - 0.5 - cx;
                    let oy = py as f64 + (sy as f64 + 0.5) / s - 0.5 - cy;
                    if ox * ox + oy * oy <= r2 {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let cover = opacity * hits as f64 / (s * s);
                let r = py.rem_euclid(rows as i64) as usize;
                let c = px.rem_euclid(cols as i64) as usize;
                if cover > mask[[r, c]] {
                    mask[[r, c]] = cover;
                }
            }
        }
    }
}

/// Amplitude masks keyed by propagation depth (bit pattern of the f64 so
/// that iteration order is deterministic).
fn scene_masks(scene: &Scene) -> BTreeMap<u64, Array2<f64>> {
    let g = &scene.geom;
    let mut masks: BTreeMap<u64, Array2<f64>> = BTreeMap::new();
    let mut warned = false;
    for p in &scene.particles {
        let mut radius = 0.5 * p.diameter / g.pitch;
        let single_pixel = p.diameter < g.pitch;
        if single_pixel && !warned {
            log::warn!(
                "particle diameter {:e} m below pixel pitch; using single-pixel masks",
                p.diameter
            );
            warned = true;
        }
        match p.rod {
            None => {
                let mask = masks
                    .entry(p.z.to_bits())
                    .or_insert_with(|| Array2::zeros(g.plane_shape()));
                let (cx, cy) = (p.x / g.pitch, p.y / g.pitch);
                if single_pixel {
                    let r = (cy.round() as i64).rem_euclid(g.ny as i64) as usize;
                    let c = (cx.round() as i64).rem_euclid(g.nx as i64) as usize;
                    mask[[r, c]] = mask[[r, c]].max(p.opacity);
                } else {
                    rasterize_disc(mask, cx, cy, radius, p.opacity);
                }
            }
            Some(rod) => {
                radius = radius.max(0.5);
                // slices along the axis, binned to the nearest reconstruction plane
                let spacing = 0.25 * g.pitch.min(g.dz);
                let n = (rod.length / spacing).ceil().max(1.0) as usize;
                for i in 0..=n {
                    let s = -0.5 * rod.length + rod.length * i as f64 / n as f64;
                    let (x, y, z) = (
                        p.x + s * rod.axis[0],
                        p.y + s * rod.axis[1],
                        p.z + s * rod.axis[2],
                    );
                    let k = ((z - g.z0) / g.dz).round().clamp(0.0, (g.nz - 1) as f64);
                    let depth = g.z0 + k * g.dz;
                    let mask = masks
                        .entry(depth.to_bits())
                        .or_insert_with(|| Array2::zeros(g.plane_shape()));
                    rasterize_disc(mask, x / g.pitch, y / g.pitch, radius, p.opacity);
                }
            }
        }
    }
    masks
}

/// Scattered field at the sensor, `sum_k propagate(mask_k, -z_k)`.
pub fn scattered_field(scene: &Scene) -> Result<Array2<Complex64>> {
    scene.validate()?;
    let g = &scene.geom;
    let fft = Fft2::new(g.ny, g.nx);
    let mut acc: Array2<Complex64> = Array2::zeros(g.plane_shape());
    for (bits, mask) in scene_masks(scene) {
        let z = f64::from_bits(bits);
        let mut spec = mask.mapv(|m| Complex64::new(m, 0.0));
        fft.forward(&mut spec);
        let h = transfer_kernel(g.ny, g.nx, g.pitch, g.wavelength, -z);
        Zip::from(&mut acc)
            .and(&spec)
            .and(&h)
            .for_each(|a, &s, &h| *a += s * h);
    }
    fft.inverse(&mut acc);
    Ok(acc)
}

/// Full nonlinear in-line hologram `|1 - scattered|^2` under unit plane-wave
/// illumination, including twin-image and cross-interference terms.
pub fn render_hologram(scene: &Scene) -> Result<Array2<f64>> {
    let u = scattered_field(scene)?;
    Ok(u.mapv(|v| (Complex64::new(1.0, 0.0) - v).norm_sqr()))
}

/// Adds white Gaussian noise of standard deviation `sigma` and clamps at 0.
pub fn add_noise(image: &Array2<f64>, sigma: f64, seed: u64) -> Result<Array2<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "noise sigma {sigma} must be >= 0"
        )));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    Ok(image.mapv(|v| (v + normal.sample(&mut rng)).max(0.0)))
}

/// Fraction of the sensor shadowed by particles: `n_s * depth * d^2`
/// (number density in 1/m^3, depth and diameter in meters).
pub fn shadow_density(number_density: f64, depth: f64, diameter: f64) -> Result<f64> {
    if number_density < 0.0 || depth < 0.0 || diameter < 0.0 {
        return Err(Error::InvalidParameter(
            "shadow density inputs must be >= 0".into(),
        ));
    }
    Ok(number_density * depth * diameter * diameter)
}

/// Ground-truth table: `frame id x y z px py pz` (meters), tab separated.
pub fn write_truth_table<W: Write>(mut w: W, frames: &[Scene]) -> std::io::Result<()> {
    writeln!(w, "frame\tid\tx\ty\tz\tpx\tpy\tpz")?;
    for (f, scene) in frames.iter().enumerate() {
        for (id, p) in scene.particles.iter().enumerate() {
            let (px, py, pz) = match p.rod {
                Some(r) => (
                    format!("{:.9e}", r.axis[0]),
                    format!("{:.9e}", r.axis[1]),
                    format!("{:.9e}", r.axis[2]),
                ),
                None => ("nan".into(), "nan".into(), "nan".into()),
            };
            writeln!(
                w,
                "{f}\t{id}\t{:.9e}\t{:.9e}\t{:.9e}\t{px}\t{py}\t{pz}",
                p.x, p.y, p.z
            )?;
        }
    }
    Ok(())
}
