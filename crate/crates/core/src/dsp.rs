//! Small signal-processing building blocks shared by the pipeline stages.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{ensure, Result};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
pub fn variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Median of a slice; the mean of the two middle values for even lengths.
pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wrap to (-pi, pi].
pub fn wrap(phase: f64) -> f64 {
    let w = phase - 2.0 * PI * ((phase + PI) / (2.0 * PI)).floor();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

// ---------------------------------------------------------------------------
// Sliding median
// ---------------------------------------------------------------------------

/// Centered running median over `[i - half, i + half]`, truncated at the ends.
pub fn sliding_median(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    if half == 0 {
        return x.to_vec();
    }
    if half <= 48 {
        sliding_median_sorted(x, half)
    } else {
        sliding_median_fenwick(x, half)
    }
}

fn middle(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn sliding_median_sorted(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut win: Vec<f64> = Vec::with_capacity(2 * half + 1);
    let insert = |win: &mut Vec<f64>, v: f64| {
        let pos = win.partition_point(|&w| w.total_cmp(&v).is_lt());
        win.insert(pos, v);
    };
    for &v in &x[..half.min(n)] {
        insert(&mut win, v);
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i + half < n {
            insert(&mut win, x[i + half]);
        }
        if i > half {
            let old = x[i - half - 1];
            let pos = win.partition_point(|&w| w.total_cmp(&old).is_lt());
            win.remove(pos);
        }
        out.push(middle(&win));
    }
    out
}

/// Order-statistic tree over value ranks, for long windows.
fn sliding_median_fenwick(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    let mut tree = vec![0i32; n + 1];
    let update = |tree: &mut [i32], r: usize, d: i32| {
        let mut i = r + 1;
        while i < tree.len() {
            tree[i] += d;
            i += i & i.wrapping_neg();
        }
    };
    let top = n.next_power_of_two();
    // k is 1-based; returns the 0-based rank of the k-th smallest element present.
    let kth = |tree: &[i32], mut k: i32| -> usize {
        let mut pos = 0;
        let mut step = top;
        while step > 0 {
            let next = pos + step;
            if next < tree.len() && tree[next] < k {
                pos = next;
                k -= tree[next];
            }
            step >>= 1;
        }
        pos
    };

    let mut count = 0i32;
    for r in rank.iter().take(half.min(n)) {
        update(&mut tree, *r, 1);
        count += 1;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i + half < n {
            update(&mut tree, rank[i + half], 1);
            count += 1;
        }
        if i > half {
            update(&mut tree, rank[i - half - 1], -1);
            count -= 1;
        }
        let med = if count % 2 == 1 {
            x[order[kth(&tree, count / 2 + 1)]]
        } else {
            0.5 * (x[order[kth(&tree, count / 2)]] + x[order[kth(&tree, count / 2 + 1)]])
        };
        out.push(med);
    }
    out
}

// ---------------------------------------------------------------------------
// Windows and FIR filters
// ---------------------------------------------------------------------------

/// Symmetric Hamming window.
pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n as f64 - 1.0)).cos())
        .collect()
}

/// Hann window without the zero end points (`hanning` convention), so every
/// sample contributes.
pub fn hanning(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * (i as f64 + 1.0) / (n as f64 + 1.0)).cos())
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc low-pass with cutoff `fc` in cycles/sample, unit DC gain.
pub fn design_lowpass(taps: usize, fc: f64) -> Result<Vec<f64>> {
    ensure!(taps % 2 == 1 && taps >= 3, Validation, "FIR length must be odd and >= 3");
    ensure!(fc > 0.0 && fc < 0.5, Validation, "cutoff {fc} outside (0, 0.5) cycles/sample");
    let mid = (taps - 1) as f64 / 2.0;
    let w = hamming(taps);
    let mut h: Vec<f64> = (0..taps)
        .map(|i| 2.0 * fc * sinc(2.0 * fc * (i as f64 - mid)) * w[i])
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    Ok(h)
}

/// Windowed-sinc band-pass for `[lo, hi]` cycles/sample, unit gain at the band center.
pub fn design_bandpass(taps: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    ensure!(taps % 2 == 1 && taps >= 3, Validation, "FIR length must be odd and >= 3");
    ensure!(
        lo > 0.0 && lo < hi && hi < 0.5,
        Validation,
        "band [{lo}, {hi}] invalid in cycles/sample"
    );
    let mid = (taps - 1) as f64 / 2.0;
    let w = hamming(taps);
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let m = i as f64 - mid;
            (2.0 * hi * sinc(2.0 * hi * m) - 2.0 * lo * sinc(2.0 * lo * m)) * w[i]
        })
        .collect();
    let fc = 0.5 * (lo + hi);
    let gain = freq_response(&h, fc).norm();
    h.iter_mut().for_each(|v| *v /= gain);
    Ok(h)
}

/// Complex response of `h` at `f` cycles/sample.
pub fn freq_response(h: &[f64], f: f64) -> Complex64 {
    h.iter()
        .enumerate()
        .map(|(i, &c)| Complex64::from_polar(c, -2.0 * PI * f * i as f64))
        .sum()
}

/// Convolve with an odd-length symmetric filter, keeping the input alignment.
/// Samples outside `x` count as zero.
pub fn convolve_same(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    let half = h.len() / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            (lo..=hi).map(|j| x[j] * h[j + half - i]).sum()
        })
        .collect()
}

/// Zero-phase filtering: the filter is applied twice (forward and backward) on the
/// signal extended by odd reflection of `min(3 * taps, len - 1)` samples per side.
pub fn filtfilt(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n < 2 {
        return x.to_vec();
    }
    let pad = (3 * h.len()).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    // A symmetric FIR is its own time reverse, so forward-backward is two passes.
    let once = convolve_same(&ext, h);
    let twice = convolve_same(&once, h);
    twice[pad..pad + n].to_vec()
}

/// Even (mirror) reflection about the end samples, `pad` samples per side.
pub fn reflect_even(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let idx = |i: isize| -> usize {
        let period = 2 * (n as isize - 1);
        if period == 0 {
            return 0;
        }
        let mut j = i.rem_euclid(period);
        if j >= n as isize {
            j = period - j;
        }
        j as usize
    };
    (-(pad as isize)..(n + pad) as isize).map(|i| x[idx(i)]).collect()
}

// ---------------------------------------------------------------------------
// FFT helpers
// ---------------------------------------------------------------------------

/// Forward DFT of `x` zero-padded to `n`.
pub fn fft_real(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

/// Unnormalized inverse DFT of `x` zero-padded to `n`.
pub fn ifft_padded(x: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut buf = x.to_vec();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_sliding_median(x: &[f64], half: usize) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half).min(x.len() - 1);
                median(&x[lo..=hi])
            })
            .collect()
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn wrap_range() {
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap(-PI) - PI).abs() < 1e-12);
        assert!((wrap(0.5) - 0.5).abs() < 1e-15);
        assert!((wrap(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sliding_median_matches_naive(
            x in prop::collection::vec(-100.0f64..100.0, 1..300),
            half in 0usize..120,
        ) {
            let fast = sliding_median(&x, half);
            let slow = naive_sliding_median(&x, half);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn fenwick_path_with_ties(
            x in prop::collection::vec(0i32..5, 1..400),
            half in 49usize..200,
        ) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            prop_assert_eq!(sliding_median(&x, half), naive_sliding_median(&x, half));
        }
    }

    #[test]
    fn lowpass_dc_gain_and_stopband() {
        let h = design_lowpass(101, 0.02).unwrap();
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(freq_response(&h, 0.1).norm() < 1e-3);
        assert!(design_lowpass(100, 0.02).is_err());
        assert!(design_lowpass(101, 0.6).is_err());
    }

    #[test]
    fn bandpass_center_gain() {
        let h = design_bandpass(401, 0.01, 0.02).unwrap();
        assert!((freq_response(&h, 0.015).norm() - 1.0).abs() < 1e-12);
        assert!(freq_response(&h, 0.0).norm() < 1e-3);
        assert!(freq_response(&h, 0.05).norm() < 1e-3);
    }

    #[test]
    fn filtfilt_is_zero_phase() {
        let f = 0.005;
        let x: Vec<f64> = (0..600).map(|i| (2.0 * PI * f * i as f64).sin()).collect();
        let h = design_lowpass(51, 0.05).unwrap();
        let y = filtfilt(&x, &h);
        for i in 100..500 {
            assert!((y[i] - x[i]).abs() < 1e-3, "{i}: {} vs {}", y[i], x[i]);
        }
    }

    #[test]
    fn even_reflection() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(reflect_even(&x, 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn fft_round_trip() {
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).cos()).collect();
        let spec = fft_real(&x, 16);
        let back = ifft_padded(&spec, 16);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b.re / 16.0).abs() < 1e-12);
        }
    }
}
