//! Mallat decomposition with periodic extension.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Daubechies 4 (8-tap) scaling filter.
const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

const HAAR: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Haar,
    Db4,
}

impl Wavelet {
    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Haar => "haar",
            Wavelet::Db4 => "db4",
        }
    }

    pub fn lowpass(self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &HAAR,
            Wavelet::Db4 => &DB4,
        }
    }

    /// Quadrature mirror of the scaling filter.
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let n = h.len();
        (0..n)
            .map(|k| if k % 2 == 0 { h[n - 1 - k] } else { -h[n - 1 - k] })
            .collect()
    }

    pub fn filter_len(self) -> usize {
        self.lowpass().len()
    }
}

impl std::str::FromStr for Wavelet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(Wavelet::Haar),
            "db4" => Ok(Wavelet::Db4),
            other => Err(Error::Validation(format!("unknown wavelet {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwtDecomp {
    /// Approximation at the deepest level.
    pub approx: Vec<f64>,
    /// Detail coefficients, `details[0]` is level 1.
    pub details: Vec<Vec<f64>>,
    pub levels: usize,
    pub wavelet: Wavelet,
    /// Coefficient rate at each level, `fs / 2^j`.
    pub fs_per_level: Vec<f64>,
    /// Input length at each level, needed to undo odd-length padding.
    lengths: Vec<usize>,
    fs: f64,
}

fn analysis(x: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        for m in 0..h.len() {
            let v = x[(2 * k + m) % n];
            a[k] += h[m] * v;
            d[k] += g[m] * v;
        }
    }
    (a, d)
}

fn synthesis(a: &[f64], d: &[f64], h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = 2 * a.len();
    let mut x = vec![0.0; n];
    for k in 0..a.len() {
        for m in 0..h.len() {
            x[(2 * k + m) % n] += h[m] * a[k] + g[m] * d[k];
        }
    }
    x
}

/// Decompose `x` sampled at `fs` into `levels` levels.
pub fn dwt_decompose(x: &[f64], levels: usize, wavelet: Wavelet, fs: f64) -> Result<DwtDecomp> {
    ensure!(levels >= 1, Validation, "levels must be >= 1");
    ensure!(fs > 0.0, Validation, "fs must be positive");
    let min_len = wavelet.filter_len() << levels;
    ensure!(
        x.len() >= min_len,
        Validation,
        "series of length {} too short for {levels} levels of {} (need {min_len})",
        x.len(),
        wavelet.name()
    );
    let h = wavelet.lowpass();
    let g = wavelet.highpass();
    let mut cur = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(cur.len());
        if cur.len() % 2 == 1 {
            cur.push(*cur.last().unwrap());
        }
        let (a, d) = analysis(&cur, h, &g);
        details.push(d);
        cur = a;
    }
    Ok(DwtDecomp {
        approx: cur,
        details,
        levels,
        wavelet,
        fs_per_level: (1..=levels).map(|j| fs / (1u64 << j) as f64).collect(),
        lengths,
        fs,
    })
}

impl DwtDecomp {
    /// Inverse transform keeping the approximation when `keep_approx` and detail
    /// level `j` when `keep_details[j - 1]`.
    pub fn reconstruct_selected(&self, keep_approx: bool, keep_details: &[bool]) -> Vec<f64> {
        let h = self.wavelet.lowpass();
        let g = self.wavelet.highpass();
        let mut cur = if keep_approx {
            self.approx.clone()
        } else {
            vec![0.0; self.approx.len()]
        };
        for j in (0..self.levels).rev() {
            let d = if keep_details.get(j).copied().unwrap_or(false) {
                self.details[j].clone()
            } else {
                vec![0.0; self.details[j].len()]
            };
            let mut x = synthesis(&cur, &d, h, &g);
            x.truncate(self.lengths[j]);
            cur = x;
        }
        cur
    }

    pub fn reconstruct(&self) -> Vec<f64> {
        self.reconstruct_selected(true, &vec![true; self.levels])
    }

    /// Nominal band of the approximation branch, Hz.
    pub fn approx_band(&self) -> (f64, f64) {
        (0.0, self.fs / (1u64 << (self.levels + 1)) as f64)
    }

    /// Nominal band of detail level `j` (1-based), Hz.
    pub fn detail_band(&self, j: usize) -> (f64, f64) {
        (
            self.fs / (1u64 << (j + 1)) as f64,
            self.fs / (1u64 << j) as f64,
        )
    }

    /// Reconstruct from every branch whose nominal band overlaps `[lo, hi]`.
    pub fn reconstruct_band(&self, lo: f64, hi: f64) -> Vec<f64> {
        let overlaps = |(a, b): (f64, f64)| lo < b && hi > a;
        let keep_approx = overlaps(self.approx_band());
        let keep: Vec<bool> = (1..=self.levels).map(|j| overlaps(self.detail_band(j))).collect();
        self.reconstruct_selected(keep_approx, &keep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn db4_is_orthonormal() {
        let h = Wavelet::Db4.lowpass();
        assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12);
        assert!((h.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        for shift in [2, 4, 6] {
            let dot: f64 = (0..h.len() - shift).map(|i| h[i] * h[i + shift]).sum();
            assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_has_no_detail() {
        let x = vec![3.0; 256];
        let d = dwt_decompose(&x, 4, Wavelet::Db4, 100.0).unwrap();
        for level in &d.details {
            assert!(level.iter().all(|v| v.abs() < 1e-9));
        }
        assert!(d.approx.iter().all(|v| (v - 3.0 * 4.0).abs() < 1e-9));
        assert_eq!(d.fs_per_level, vec![50.0, 25.0, 12.5, 6.25]);
    }

    #[test]
    fn slow_tone_lives_in_the_approximation() {
        let x: Vec<f64> = (0..500).map(|i| (2.0 * PI * 0.5 * i as f64 / 100.0).sin()).collect();
        let d = dwt_decompose(&x, 4, Wavelet::Db4, 100.0).unwrap();
        let e_a: f64 = d.approx.iter().map(|v| v * v).sum();
        let e_d: f64 = d.details.iter().flatten().map(|v| v * v).sum();
        assert!(e_a / (e_a + e_d) >= 0.9);
        assert_eq!(d.approx_band(), (0.0, 3.125));
    }

    #[test]
    fn too_short_is_rejected() {
        assert!(dwt_decompose(&[0.0; 127], 4, Wavelet::Db4, 100.0).is_err());
        assert!(dwt_decompose(&[0.0; 128], 0, Wavelet::Db4, 100.0).is_err());
        assert!(dwt_decompose(&[0.0; 128], 4, Wavelet::Db4, 100.0).is_ok());
    }

    proptest! {
        #[test]
        fn perfect_reconstruction(
            x in prop::collection::vec(-10.0f64..10.0, 128..700),
            levels in 1usize..5,
        ) {
            for w in [Wavelet::Db4, Wavelet::Haar] {
                let d = dwt_decompose(&x, levels, w, 100.0).unwrap();
                let y = d.reconstruct();
                prop_assert_eq!(y.len(), x.len());
                let scale = x.iter().map(|v| v.abs()).fold(1.0, f64::max);
                for (a, b) in x.iter().zip(&y) {
                    prop_assert!((a - b).abs() < 1e-9 * scale);
                }
            }
        }

        #[test]
        fn branches_sum_to_signal(x in prop::collection::vec(-1.0f64..1.0, 256..300)) {
            let d = dwt_decompose(&x, 3, Wavelet::Db4, 100.0).unwrap();
            let mut total = d.reconstruct_selected(true, &[false; 3]);
            for j in 0..3 {
                let mut keep = [false; 3];
                keep[j] = true;
                for (t, v) in total.iter_mut().zip(d.reconstruct_selected(false, &keep)) {
                    *t += v;
                }
            }
            for (a, b) in x.iter().zip(&total) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
