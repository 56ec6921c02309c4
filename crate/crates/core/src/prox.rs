//! Regularizers and their proximal operators.
//!
//! Complex planes are handled as follows: the l1 term acts on the complex
//! modulus, and TV acts on the real and imaginary parts independently, so
//! `TV(x) = TV(Re x) + TV(Im x)`.

use std::ops::{Add, Mul, Sub};

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of fast-gradient-projection steps used for the TV proximal unless
/// configured otherwise.
pub const DEFAULT_TV_INNER_ITERS: usize = 5;

/// Weights of the fused-lasso penalty `l1 * ||x||_1 + tv * ||x||_TV`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerWeights {
    pub lambda_l1: f64,
    pub lambda_tv: f64,
}

impl Default for RegularizerWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 0.5,
            lambda_tv: 0.2,
        }
    }
}

impl RegularizerWeights {
    pub fn new(lambda_l1: f64, lambda_tv: f64) -> Result<Self> {
        let w = Self {
            lambda_l1,
            lambda_tv,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_l1 {} must be >= 0",
                self.lambda_l1
            )));
        }
        if !(self.lambda_tv >= 0.0 && self.lambda_tv.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_tv {} must be >= 0",
                self.lambda_tv
            )));
        }
        Ok(())
    }

    /// Penalty value of a dense complex plane.
    pub fn penalty(&self, plane: &Array2<Complex64>) -> f64 {
        let mut g = 0.0;
        if self.lambda_l1 > 0.0 {
            g += self.lambda_l1 * l1_norm(plane);
        }
        if self.lambda_tv > 0.0 {
            g += self.lambda_tv * tv_norm_complex(plane);
        }
        g
    }
}

pub fn l1_norm(plane: &Array2<Complex64>) -> f64 {
    plane.iter().map(|v| v.norm()).sum()
}

/// Isotropic TV with backward differences; differences reaching outside
/// the plane are zero.
pub fn tv_norm_2d(plane: &Array2<f64>) -> f64 {
    let (rows, cols) = plane.dim();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let std = plane.as_standard_layout();
    let x = std.as_slice().expect("standard layout");
    let mut acc = 0.0;
    for i in 0..rows {
        let xr = &x[i * cols..(i + 1) * cols];
        let xu = if i > 0 {
            &x[(i - 1) * cols..i * cols]
        } else {
            xr
        };
        acc += (xr[0] - xu[0]).abs();
        for j in 1..cols {
            let di = xr[j] - xu[j];
            let dj = xr[j] - xr[j - 1];
            acc += (di * di + dj * dj).sqrt();
        }
    }
    acc
}

/// `TV(Re x) + TV(Im x)`
pub fn tv_norm_complex(plane: &Array2<Complex64>) -> f64 {
    tv_norm_2d(&plane.mapv(|v| v.re)) + tv_norm_2d(&plane.mapv(|v| v.im))
}

/// Complex soft threshold: shrinks the modulus by `tau`, keeps the phase.
#[inline]
pub fn soft_threshold(v: Complex64, tau: f64) -> Complex64 {
    let m = v.norm();
    if m <= tau {
        Complex64::new(0.0, 0.0)
    } else {
        v * ((m - tau) / m)
    }
}

/// Proximal operator of `tau * ||.||_1`.
pub fn prox_l1(v: &Array2<Complex64>, tau: f64) -> Array2<Complex64> {
    v.mapv(|x| soft_threshold(x, tau))
}

/// Proximal operator of `tau * TV` on a real plane, computed with
/// `inner_iters` steps of fast gradient projection on the dual.
///
/// The result never has a larger prox objective than `v` itself.
pub fn prox_tv_2d(v: &Array2<f64>, tau: f64, inner_iters: usize) -> Array2<f64> {
    if tau <= 0.0 || v.is_empty() {
        return v.clone();
    }
    let (rows, cols) = v.dim();
    let vs = v.as_standard_layout();
    let vs = vs.as_slice().expect("standard layout");
    let x = fgp(vs, rows, cols, tau, inner_iters.max(1));
    let x = Array2::from_shape_vec((rows, cols), x).expect("shape preserved");

    let candidate =
        tau * tv_norm_2d(&x) + 0.5 * x.iter().zip(vs).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    if candidate <= tau * tv_norm_2d(v) {
        x
    } else {
        v.clone()
    }
}

/// Pixel types the dual TV solver runs on. Complex pixels carry two
/// independent real channels.
trait Channels:
    Copy + Default + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    /// Projects each channel's edge pair `(a, b)` onto the unit disc.
    fn project(a: Self, b: Self) -> (Self, Self);
}

impl Channels for f64 {
    #[inline]
    fn project(a: f64, b: f64) -> (f64, f64) {
        let s = 1.0 / (a * a + b * b).sqrt().max(1.0);
        (a * s, b * s)
    }
}

impl Channels for Complex64 {
    #[inline]
    fn project(a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        let (ar, br) = f64::project(a.re, b.re);
        let (ai, bi) = f64::project(a.im, b.im);
        (Complex64::new(ar, ai), Complex64::new(br, bi))
    }
}

/// Fast gradient projection for the dual of the TV-denoising problem.
///
/// The dual variable `(p, q)` lives on backward-difference edges; `p[0, j]`
/// and `q[i, 0]` are structurally zero. Each iteration is one pass over the
/// plane: the primal row is formed from the extrapolated dual before that
/// row of the dual is overwritten.
fn fgp<T: Channels>(v: &[T], rows: usize, cols: usize, tau: f64, iters: usize) -> Vec<T> {
    let n = rows * cols;
    let zero = T::default();
    let mut p = vec![zero; n];
    let mut q = vec![zero; n];
    // extrapolated dual point
    let mut rp = vec![zero; n];
    let mut rq = vec![zero; n];
    let mut x = vec![zero; cols];
    let mut x_up = vec![zero; cols];
    let step = 1.0 / (8.0 * tau);
    let mut t = 1.0f64;

    for _ in 0..iters {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for i in 0..rows {
            primal_row(v, &rp, &rq, rows, cols, tau, i, &mut x);
            let r = i * cols..(i + 1) * cols;
            let (pr, qr) = (&mut p[r.clone()], &mut q[r.clone()]);
            let (rpr, rqr) = (&mut rp[r.clone()], &mut rq[r]);
            let xu: &[T] = if i > 0 { &x_up } else { &x };
            for j in 0..cols {
                let a = if i > 0 {
                    rpr[j] + (x[j] - xu[j]) * step
                } else {
                    zero
                };
                let b = if j > 0 {
                    rqr[j] + (x[j] - x[j - 1]) * step
                } else {
                    zero
                };
                let (a, b) = T::project(a, b);
                rpr[j] = a + (a - pr[j]) * beta;
                rqr[j] = b + (b - qr[j]) * beta;
                pr[j] = a;
                qr[j] = b;
            }
            std::mem::swap(&mut x, &mut x_up);
        }
        t = t_next;
    }
    let mut out = vec![zero; n];
    for i in 0..rows {
        primal_row(
            v,
            &p,
            &q,
            rows,
            cols,
            tau,
            i,
            &mut out[i * cols..(i + 1) * cols],
        );
    }
    out
}

/// Row `i` of `v - tau * D^T (p, q)`, relying on `p[0, .]` and `q[., 0]`
/// being zero.
#[allow(clippy::too_many_arguments)]
#[inline]
fn primal_row<T: Channels>(
    v: &[T],
    p: &[T],
    q: &[T],
    rows: usize,
    cols: usize,
    tau: f64,
    i: usize,
    x: &mut [T],
) {
    let r = i * cols..(i + 1) * cols;
    let (vr, pr, qr) = (&v[r.clone()], &p[r.clone()], &q[r]);
    let below = (i + 1 < rows).then(|| &p[(i + 1) * cols..(i + 2) * cols]);
    for j in 0..cols {
        let mut d = pr[j] + qr[j];
        if let Some(pd) = below {
            d = d - pd[j];
        }
        if j + 1 < cols {
            d = d - qr[j + 1];
        }
        x[j] = vr[j] - d * tau;
    }
}

/// Prox objective `tau * TV(x) + |x - v|^2 / 2` of one real channel.
fn channel_objective(
    x: &Array2<Complex64>,
    v: &Array2<Complex64>,
    tau: f64,
    part: fn(&Complex64) -> f64,
) -> f64 {
    let xs = x.map(part);
    let fit: f64 = x
        .iter()
        .zip(v.iter())
        .map(|(a, b)| (part(a) - part(b)).powi(2))
        .sum();
    tau * tv_norm_2d(&xs) + 0.5 * fit
}

/// TV proximal of a complex plane, real and imaginary parts separately.
pub fn prox_tv_complex(v: &Array2<Complex64>, tau: f64, inner_iters: usize) -> Array2<Complex64> {
    if tau <= 0.0 || v.is_empty() {
        return v.clone();
    }
    let (rows, cols) = v.dim();
    let vs = v.as_standard_layout();
    let flat = vs.as_slice().expect("standard layout");
    let x = fgp(flat, rows, cols, tau, inner_iters.max(1));
    let mut x = Array2::from_shape_vec((rows, cols), x).expect("shape preserved");
    // per-channel safeguard: fall back to the input where iterating hurt
    let re = |c: &Complex64| c.re;
    let im = |c: &Complex64| c.im;
    let keep_re = channel_objective(&x, v, tau, re) <= tau * tv_norm_2d(&v.map(re));
    let keep_im = channel_objective(&x, v, tau, im) <= tau * tv_norm_2d(&v.map(im));
    if !(keep_re && keep_im) {
        Zip::from(&mut x).and(v).for_each(|o, &a| {
            *o = Complex64::new(
                if keep_re { o.re } else { a.re },
                if keep_im { o.im } else { a.im },
            )
        });
    }
    x
}

/// Fused-lasso proximal: soft thresholding applied to the TV proximal.
pub fn prox_fl(
    v: &Array2<Complex64>,
    tau_l1: f64,
    tau_tv: f64,
    inner_iters: usize,
) -> Array2<Complex64> {
    let smooth = prox_tv_complex(v, tau_tv, inner_iters);
    if tau_l1 <= 0.0 {
        return smooth;
    }
    prox_l1(&smooth, tau_l1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_real(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn random_complex(rows: usize, cols: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn tv_objective(x: &Array2<f64>, v: &Array2<f64>, tau: f64) -> f64 {
        tau * tv_norm_2d(x) + 0.5 * x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
    }

    #[test]
    fn l1_norm_values() {
        assert_eq!(l1_norm(&Array2::zeros((3, 3))), 0.0);
        assert_eq!(l1_norm(&array![[c(3.0, 4.0)]]), 5.0);
        let p = random_complex(5, 6, 1);
        let direct: f64 = p.iter().map(|v| (v.re * v.re + v.im * v.im).sqrt()).sum();
        assert_eq!(l1_norm(&p), direct);
    }

    #[test]
    fn tv_norm_values() {
        assert_eq!(tv_norm_2d(&Array2::from_elem((4, 5), 2.5)), 0.0);
        assert_eq!(tv_norm_2d(&array![[0.0, 1.0]]), 1.0);
        let p = random_real(4, 4, 2);
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                let up = if i == 0 { p[[i, j]] } else { p[[i - 1, j]] };
                let left = if j == 0 { p[[i, j]] } else { p[[i, j - 1]] };
                direct += ((p[[i, j]] - up).powi(2) + (p[[i, j]] - left).powi(2)).sqrt();
            }
        }
        assert!((tv_norm_2d(&p) - direct).abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_closed_form() {
        assert_eq!(soft_threshold(c(0.0, 0.0), 0.3), c(0.0, 0.0));
        assert_eq!(soft_threshold(c(2.0, 0.0), 0.5), c(1.5, 0.0));
        assert_eq!(soft_threshold(c(-2.0, 0.0), 0.5), c(-1.5, 0.0));
        assert_eq!(soft_threshold(c(0.3, 0.4), 0.5), c(0.0, 0.0));
    }

    #[test]
    fn soft_threshold_matches_grid_search() {
        let tau = 0.37;
        for &v in &[-2.3, -0.5, -0.2, 0.0, 0.1, 0.37, 0.9, 3.1] {
            let mut best = (f64::INFINITY, 0.0);
            let step = 1e-5;
            let mut x = -5.0;
            while x <= 5.0 {
                let obj = tau * f64::abs(x) + 0.5 * (x - v) * (x - v);
                if obj < best.0 {
                    best = (obj, x);
                }
                x += step;
            }
            let got = soft_threshold(c(v, 0.0), tau).re;
            assert!((got - best.1).abs() <= 1e-4, "v = {v}: {got} vs {}", best.1);
        }
    }

    #[test]
    fn tv_prox_leaves_constant_plane() {
        let v = Array2::from_elem((6, 7), -0.75);
        assert_eq!(prox_tv_2d(&v, 0.4, 5), v);
    }

    #[test]
    fn tv_prox_with_zero_tau_is_identity() {
        let v = random_real(5, 5, 3);
        assert_eq!(prox_tv_2d(&v, 0.0, 10), v);
    }

    /// Subgradient descent with 1/k steps (the objective is 1-strongly convex),
    /// keeping the best objective seen.
    fn subgradient_oracle(v: &Array2<f64>, tau: f64, steps: usize) -> f64 {
        let (rows, cols) = v.dim();
        let mut x = v.clone();
        let mut best = tv_objective(&x, v, tau);
        for k in 0..steps {
            let mut g = &x - v;
            for i in 0..rows {
                for j in 0..cols {
                    let di = if i > 0 {
                        x[[i, j]] - x[[i - 1, j]]
                    } else {
                        0.0
                    };
                    let dj = if j > 0 {
                        x[[i, j]] - x[[i, j - 1]]
                    } else {
                        0.0
                    };
                    let n = (di * di + dj * dj).sqrt();
                    if n > 0.0 {
                        g[[i, j]] += tau * (di + dj) / n;
                        if i > 0 {
                            g[[i - 1, j]] -= tau * di / n;
                        }
                        if j > 0 {
                            g[[i, j - 1]] -= tau * dj / n;
                        }
                    }
                }
            }
            x.scaled_add(-1.0 / (k as f64 + 1.0), &g);
            best = best.min(tv_objective(&x, v, tau));
        }
        best
    }

    #[test]
    fn tv_prox_reaches_subgradient_oracle() {
        for seed in 0..3 {
            let v = random_real(4, 4, 100 + seed);
            let tau = 0.3;
            let oracle = subgradient_oracle(&v, tau, 100_000);
            let ours = tv_objective(&prox_tv_2d(&v, tau, 200), &v, tau);
            assert!(
                (ours - oracle).abs() <= 1e-3,
                "seed {seed}: {ours} vs {oracle}"
            );
        }
    }

    #[test]
    fn fused_lasso_degenerate_cases() {
        let v = random_complex(6, 6, 4);
        assert_eq!(prox_fl(&v, 0.0, 0.2, 5), prox_tv_complex(&v, 0.2, 5));
        assert_eq!(prox_fl(&v, 0.3, 0.0, 5), prox_l1(&v, 0.3));
        let smooth = prox_tv_complex(&v, 0.2, 5);
        let max = smooth.iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(prox_fl(&v, max * 1.01, 0.2, 5)
            .iter()
            .all(|x| x.norm() == 0.0));
    }

    #[test]
    fn fused_lasso_is_threshold_of_tv() {
        let v = random_complex(8, 5, 5);
        assert_eq!(
            prox_fl(&v, 0.1, 0.05, 5),
            prox_l1(&prox_tv_complex(&v, 0.05, 5), 0.1)
        );
    }

    #[test]
    fn weights_validation() {
        assert!(RegularizerWeights::new(0.0, 0.0).is_ok());
        assert!(RegularizerWeights::new(-1.0, 0.0).is_err());
        assert!(RegularizerWeights::new(0.1, f64::NAN).is_err());
    }

    fn plane_strategy() -> impl Strategy<Value = Array2<Complex64>> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, cc)| {
            proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), r * cc).prop_map(move |vals| {
                Array2::from_shape_vec((r, cc), vals.into_iter().map(|(a, b)| c(a, b)).collect())
                    .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn prox_l1_is_nonexpansive(u in plane_strategy(), tau in 0.0f64..1.5, seed in 0u64..1000) {
            let w = u.mapv(|x| x + c((seed as f64 * 0.37).sin(), (seed as f64 * 0.11).cos()));
            let du: f64 = prox_l1(&u, tau).iter().zip(prox_l1(&w, tau).iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            let dv: f64 = u.iter().zip(w.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
            prop_assert!(du <= dv + 1e-12);
        }

        #[test]
        fn prox_l1_shrinks_and_keeps_phase(v in plane_strategy(), tau in 0.0f64..1.5) {
            let out = prox_l1(&v, tau);
            for (o, i) in out.iter().zip(v.iter()) {
                prop_assert!(o.norm() <= i.norm() + 1e-15);
                if o.norm() > 0.0 {
                    prop_assert!((o.arg() - i.arg()).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn prox_tv_never_worse_than_input(v in plane_strategy(), tau in 0.0f64..1.0, iters in 1usize..20) {
            let re = v.mapv(|x| x.re);
            let out = prox_tv_2d(&re, tau, iters);
            prop_assert!(tv_objective(&out, &re, tau) <= tv_objective(&re, &re, tau) + 1e-12);
        }

        #[test]
        fn fused_lasso_only_removes_entries(v in plane_strategy(), t1 in 0.0f64..1.0, t2 in 0.0f64..0.5) {
            let tv = prox_tv_complex(&v, t2, 5);
            let fl = prox_fl(&v, t1, t2, 5);
            let zeros = |a: &Array2<Complex64>| a.iter().filter(|x| x.norm() == 0.0).count();
            prop_assert!(zeros(&fl) >= zeros(&tv));
        }

        #[test]
        fn zero_tau_prox_is_fixed_point(v in plane_strategy(), t1 in 0.0f64..1.0, t2 in 0.0f64..0.5) {
            let once = prox_fl(&v, t1, t2, 5);
            prop_assert_eq!(prox_fl(&once, 0.0, 0.0, 5), once.clone());
            prop_assert_eq!(prox_l1(&once, 0.0), once);
        }
    }
}
