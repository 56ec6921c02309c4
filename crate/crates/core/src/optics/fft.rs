use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Planned 2D FFT over row-major `(rows, cols)` complex grids.
///
/// The inverse is normalized by `1/(rows*cols)` so that `inverse(forward(a)) == a`.
#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn forward(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.row_inv, &self.col_inv);
        let scale = self.inverse_scale();
        data.mapv_inplace(|v| v * scale);
    }

    /// Inverse transform without the `1/(rows*cols)` factor, for callers
    /// that fold it into an earlier pointwise product.
    pub fn inverse_unnormalized(&self, data: &mut Array2<Complex64>) {
        self.transform(data, &self.row_inv, &self.col_inv);
    }

    pub fn inverse_scale(&self) -> f64 {
        1.0 / (self.rows * self.cols) as f64
    }

    fn transform(
        &self,
        data: &mut Array2<Complex64>,
        row: &Arc<dyn Fft<f64>>,
        col: &Arc<dyn Fft<f64>>,
    ) {
        assert_eq!(data.dim(), (self.rows, self.cols), "fft shape mismatch");
        if !data.is_standard_layout() {
            *data = data.as_standard_layout().to_owned();
        }
        let (rows, cols) = (self.rows, self.cols);
        let buf = data.as_slice_mut().expect("standard layout");
        let scratch_len = row
            .get_inplace_scratch_len()
            .max(col.get_inplace_scratch_len());
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];

        // rows are contiguous; rustfft handles a buffer of back-to-back rows
        row.process_with_scratch(buf, &mut scratch);

        let mut t = vec![Complex64::new(0.0, 0.0); rows * cols];
        transpose::transpose(buf, &mut t, cols, rows);
        col.process_with_scratch(&mut t, &mut scratch);
        transpose::transpose(&t, buf, rows, cols);
    }
}

/// Signed frequency index for FFT bin `i` of an `n`-point transform.
///
/// The Nyquist bin of an even-length transform maps to `+n/2`.
pub fn signed_index(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}
