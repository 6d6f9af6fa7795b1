//! Robust local quadratic regression (tricube distance weights, bisquare
//! robustness weights).

use crate::dsp::median;
use crate::error::{ensure, Result};

const ROBUST_ITERATIONS: usize = 4;

/// Smooth `x` (unit-spaced samples). Each point is refit from its
/// `ceil(span * n)` nearest neighbours (at least 4).
pub fn smooth_rloess(x: &[f64], span: f64) -> Result<Vec<f64>> {
    let n = x.len();
    ensure!(n >= 5, Validation, "series of length {n} too short for rloess");
    ensure!(span > 0.0 && span <= 1.0, Validation, "span {span} outside (0, 1]");
    ensure!(x.iter().all(|v| v.is_finite()), Validation, "non-finite sample");
    let q = ((span * n as f64).ceil() as usize).clamp(4, n);

    let mut robust = vec![1.0; n];
    let mut fit = local_fit(x, q, &robust);
    for _ in 0..ROBUST_ITERATIONS {
        let resid: Vec<f64> = x.iter().zip(&fit).map(|(a, b)| (a - b).abs()).collect();
        let mad = median(&resid);
        let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        if mad <= 1e-12 * scale {
            break;
        }
        for (w, r) in robust.iter_mut().zip(&resid) {
            let u = r / (6.0 * mad);
            *w = if u < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
        }
        fit = local_fit(x, q, &robust);
    }
    Ok(fit)
}

fn local_fit(x: &[f64], q: usize, robust: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            // The q nearest indices form a contiguous window around i.
            let mut lo = i.saturating_sub(q / 2);
            if lo + q > n {
                lo = n - q;
            }
            let hi = lo + q;
            let dmax = ((i - lo).max(hi - 1 - i) as f64) * (1.0 + 1e-9) + 1e-12;
            let mut s = [0.0f64; 5];
            let mut t = [0.0f64; 3];
            for (j, &xj) in x.iter().enumerate().take(hi).skip(lo) {
                let d = j as f64 - i as f64;
                let u = (d.abs() / dmax).min(1.0);
                let w = (1.0 - u * u * u).powi(3) * robust[j];
                if w == 0.0 {
                    continue;
                }
                let mut p = 1.0;
                for (k, sk) in s.iter_mut().enumerate() {
                    *sk += w * p;
                    if k < 3 {
                        t[k] += w * p * xj;
                    }
                    p *= d;
                }
            }
            solve_quadratic(&s, &t).unwrap_or_else(|| {
                if s[0] > 0.0 {
                    t[0] / s[0]
                } else {
                    x[i]
                }
            })
        })
        .collect()
}

/// Intercept of the weighted quadratic fit from its moment sums.
fn solve_quadratic(s: &[f64; 5], t: &[f64; 3]) -> Option<f64> {
    let m = [[s[0], s[1], s[2]], [s[1], s[2], s[3]], [s[2], s[3], s[4]]];
    let det = |a: &[[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(&m);
    let norm = s[0] * s[2] * s[4];
    if !(d.abs() > 1e-12 * norm.abs()) {
        return None;
    }
    let mut m0 = m;
    for row in 0..3 {
        m0[row][0] = t[row];
    }
    Some(det(&m0) / d)
}
