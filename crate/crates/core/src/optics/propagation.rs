use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use super::fft::{signed_index, Fft2};
use super::field::ComplexField2D;

/// Angular-spectrum transfer function for a plane-wave component
/// `(fx, fy)` (cycles/meter) travelling a distance `z`.
///
/// Evanescent components are truncated to zero.
pub fn transfer_function(fx: f64, fy: f64, z: f64, wavelength: f64) -> Complex64 {
    let ax = wavelength * fx;
    let ay = wavelength * fy;
    let s = 1.0 - ax * ax - ay * ay;
    if s < 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::from_polar(1.0, 2.0 * PI * (z / wavelength) * s.sqrt())
}

/// Transfer function sampled on the FFT grid of a `(rows, cols)` field.
pub fn transfer_kernel(
    rows: usize,
    cols: usize,
    pitch: f64,
    wavelength: f64,
    z: f64,
) -> Array2<Complex64> {
    let dfx = 1.0 / (cols as f64 * pitch);
    let dfy = 1.0 / (rows as f64 * pitch);
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        transfer_function(
            signed_index(c, cols) * dfx,
            signed_index(r, rows) * dfy,
            z,
            wavelength,
        )
    })
}

/// Propagates `field` by `z` meters with periodic boundaries.
pub fn propagate(field: &ComplexField2D, z: f64) -> ComplexField2D {
    let (rows, cols) = field.values.dim();
    let fft = Fft2::new(rows, cols);
    let kernel = transfer_kernel(rows, cols, field.pitch, field.wavelength, z);
    let values = propagate_with(&fft, &kernel, &field.values);
    ComplexField2D {
        values,
        pitch: field.pitch,
        wavelength: field.wavelength,
    }
}

/// `inverse(kernel * forward(values))` with caller-provided plan and kernel.
pub fn propagate_with(
    fft: &Fft2,
    kernel: &Array2<Complex64>,
    values: &Array2<Complex64>,
) -> Array2<Complex64> {
    let mut spec = values.to_owned();
    fft.forward(&mut spec);
    spec *= kernel;
    fft.inverse(&mut spec);
    spec
}

/// True when no sample of a `(rows, cols)` grid at this pitch is evanescent.
pub fn is_fully_propagating(rows: usize, cols: usize, pitch: f64, wavelength: f64) -> bool {
    let fx = (cols / 2) as f64 / (cols as f64 * pitch);
    let fy = (rows / 2) as f64 / (rows as f64 * pitch);
    (wavelength * fx).powi(2) + (wavelength * fy).powi(2) <= 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 632e-9;
    const PITCH: f64 = 10e-6;

    fn random_field(rows: usize, cols: usize, seed: u64) -> ComplexField2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn((rows, cols), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        ComplexField2D::new(values, PITCH, LAMBDA).unwrap()
    }

    fn rel_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn dc_term_after_one_wavelength_is_one() {
        let h = transfer_function(0.0, 0.0, LAMBDA, LAMBDA);
        assert!((h - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_distance_is_identity_kernel() {
        for &(fx, fy) in &[(0.0, 0.0), (1e5, -3e5), (1.0e6, 1.0e6), (0.0, 1.0 / LAMBDA)] {
            assert_eq!(
                transfer_function(fx, fy, 0.0, LAMBDA),
                Complex64::new(1.0, 0.0)
            );
        }
    }

    #[test]
    fn evanescent_components_are_cut() {
        let fx = 1.5 / LAMBDA;
        assert_eq!(
            transfer_function(fx, 0.0, 1e-3, LAMBDA),
            Complex64::new(0.0, 0.0)
        );
        assert_eq!(
            transfer_function(fx, 0.0, -1e-3, LAMBDA),
            Complex64::new(0.0, 0.0)
        );
    }

    #[test]
    fn zero_distance_propagation_is_identity() {
        let f = random_field(16, 24, 1);
        let g = propagate(&f, 0.0);
        assert!(rel_diff(&g.values, &f.values) < 1e-12);
    }

    #[test]
    fn propagation_conserves_energy() {
        assert!(is_fully_propagating(32, 32, PITCH, LAMBDA));
        let f = random_field(32, 32, 2);
        for &z in &[1e-4, 2.5e-3, -7e-3] {
            let g = propagate(&f, z);
            assert!(((g.norm() - f.norm()) / f.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn forward_then_back_is_identity() {
        let f = random_field(32, 48, 3);
        for &z in &[3e-4, 4e-3] {
            let g = propagate(&propagate(&f, z), -z);
            assert!(rel_diff(&g.values, &f.values) < 1e-10);
        }
    }

    #[test]
    fn geometry_is_preserved() {
        let f = random_field(8, 12, 4);
        let g = propagate(&f, 1e-3);
        assert_eq!(g.values.dim(), (8, 12));
        assert_eq!(g.pitch, f.pitch);
        assert_eq!(g.wavelength, f.wavelength);
    }
}
