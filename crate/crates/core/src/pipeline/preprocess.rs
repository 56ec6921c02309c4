use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// Floor applied to the background before taking its square root.
pub const BACKGROUND_EPS: f64 = 1e-12;

/// Removes a sliding temporal mean from a time-ordered stack:
/// `(I - M) / sqrt(M)` per frame, where `M` averages the other frames of a
/// centred `window`, truncated at the stack ends.
pub fn preprocess_background(stack: &[Array2<f64>], window: usize) -> Result<Vec<Array2<f64>>> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "background window {window} must be odd and >= 3"
        )));
    }
    if window > stack.len() {
        return Err(Error::InvalidParameter(format!(
            "background window {window} exceeds the {} frames available",
            stack.len()
        )));
    }
    let shape = stack[0].dim();
    if let Some(bad) = stack.iter().position(|f| f.dim() != shape) {
        return Err(Error::GeometryMismatch(format!(
            "frame {bad} has shape {:?}, expected {shape:?}",
            stack[bad].dim()
        )));
    }
    let half = window / 2;
    let n = stack.len();
    let mut sum = Array2::<f64>::zeros(shape);
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut out = Vec::with_capacity(n);
    for (f, frame) in stack.iter().enumerate() {
        let (want_lo, want_hi) = (f.saturating_sub(half), (f + half + 1).min(n));
        while hi < want_hi {
            sum += &stack[hi];
            hi += 1;
        }
        while lo < want_lo {
            sum -= &stack[lo];
            lo += 1;
        }
        let others = (hi - lo - 1) as f64;
        let mut o = Array2::zeros(shape);
        Zip::from(&mut o)
            .and(frame)
            .and(&sum)
            .for_each(|o, &i, &s| {
                let m = ((s - i) / others).max(BACKGROUND_EPS);
                *o = (i - m) / m.sqrt();
            });
        out.push(o);
    }
    Ok(out)
}

/// `I - mean(I)`.
pub fn mean_subtract(frame: &Array2<f64>) -> Array2<f64> {
    let mean = frame.mean().unwrap_or(0.0);
    frame.mapv(|v| v - mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn static_scene_vanishes() {
        let f = Array2::from_shape_fn((4, 5), |(r, c)| 0.5 + 0.1 * (r * c) as f64);
        let out = preprocess_background(&vec![f; 7], 5).unwrap();
        assert!(out.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn transient_is_scaled_by_background() {
        let (b, di) = (0.64, 0.3);
        let mut stack = vec![Array2::from_elem((3, 3), b); 11];
        stack[5][[1, 1]] += di;
        let out = preprocess_background(&stack, 5).unwrap();
        assert!((out[5][[1, 1]] - di / b.sqrt()).abs() < 1e-6);
        assert!(out[5][[0, 0]].abs() < 1e-12);
        // neighbours see the transient in their background
        assert!(out[4][[1, 1]] < 0.0);
    }

    #[test]
    fn invalid_windows_are_rejected() {
        let stack = vec![Array2::<f64>::zeros((2, 2)); 5];
        for w in [1, 2, 4, 7] {
            assert!(preprocess_background(&stack, w).is_err(), "{w}");
        }
        assert!(preprocess_background(&stack, 5).is_ok());
        let mut mixed = stack.clone();
        mixed[2] = Array2::zeros((3, 2));
        assert!(preprocess_background(&mixed, 3).is_err());
    }

    /// Direct per-frame average over the truncated window, excluding the frame.
    fn naive(stack: &[Array2<f64>], window: usize) -> Vec<Array2<f64>> {
        let half = window / 2;
        (0..stack.len())
            .map(|f| {
                let idx: Vec<usize> = (f.saturating_sub(half)..(f + half + 1).min(stack.len()))
                    .filter(|&g| g != f)
                    .collect();
                let mut m = Array2::<f64>::zeros(stack[f].dim());
                for &g in &idx {
                    m += &stack[g];
                }
                m /= idx.len() as f64;
                Zip::from(&stack[f]).and(&m).map_collect(|&i, &m| {
                    let m = m.max(BACKGROUND_EPS);
                    (i - m) / m.sqrt()
                })
            })
            .collect()
    }

    proptest! {
        #[test]
        fn running_sum_matches_direct_average(
            vals in proptest::collection::vec(0.01..2.0f64, 4 * 9),
            half in 1usize..5,
        ) {
            let stack: Vec<Array2<f64>> = vals.chunks(4).map(|c| Array2::from_shape_vec((2, 2), c.to_vec()).unwrap()).collect();
            let window = (2 * half + 1).min(9);
            let a = preprocess_background(&stack, window).unwrap();
            let b = naive(&stack, window);
            for (x, y) in a.iter().zip(&b) {
                for (p, q) in x.iter().zip(y) {
                    prop_assert!((p - q).abs() < 1e-9 * (1.0 + q.abs()));
                }
            }
        }
    }

    #[test]
    fn mean_subtraction_centres_frame() {
        let f = Array2::from_shape_fn((3, 4), |(r, c)| (r + 2 * c) as f64);
        let m = mean_subtract(&f);
        assert!(m.sum().abs() < 1e-12);
        assert!((m[[0, 0]] + 4.0).abs() < 1e-12);
    }
}
