//! Peak picking and inter-peak interval statistics.

use serde::{Deserialize, Serialize};

use super::Band;
use crate::dsp::std_dev;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PeakOptions {
    /// Minimum prominence as a fraction of the series standard deviation.
    pub prominence: f64,
    /// Peaks closer than `edge_guard / band.hi` seconds to either end are ignored.
    pub edge_guard: f64,
}

impl Default for PeakOptions {
    fn default() -> Self {
        PeakOptions {
            prominence: 0.2,
            edge_guard: 0.5,
        }
    }
}

/// Local maxima with prominence at least `min_prominence`. Flat tops report
/// their middle sample.
pub fn find_peaks(x: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = x.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                let p = (i + j) / 2;
                if prominence(x, p) >= min_prominence {
                    peaks.push(p);
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Height of a peak above the higher of its two bases, each base being the
/// minimum between the peak and the nearest strictly higher sample (or the end).
pub fn prominence(x: &[f64], p: usize) -> f64 {
    let v = x[p];
    let mut left_min = v;
    for &y in x[..p].iter().rev() {
        if y > v {
            break;
        }
        left_min = left_min.min(y);
    }
    let mut right_min = v;
    for &y in &x[p + 1..] {
        if y > v {
            break;
        }
        right_min = right_min.min(y);
    }
    v - left_min.max(right_min)
}

/// Drop intervals outside `[1/band.hi, 1/band.lo]`, shortest offender first.
/// Surviving intervals are not merged.
pub fn filter_intervals(intervals: &[f64], band: &Band) -> Vec<f64> {
    let (min_p, max_p) = (1.0 / band.hi, 1.0 / band.lo);
    let mut kept: Vec<f64> = intervals.to_vec();
    loop {
        let worst = kept
            .iter()
            .enumerate()
            .filter(|(_, &l)| l < min_p || l > max_p)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i);
        match worst {
            Some(i) => {
                kept.remove(i);
            }
            None => return kept,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub peaks: Vec<usize>,
    /// Surviving intervals, s.
    pub intervals: Vec<f64>,
    /// Mean surviving interval, s.
    pub mean_period: f64,
    /// Coefficient of variation of the surviving intervals.
    pub spread: f64,
}

pub fn peak_intervals(x: &[f64], fs: f64, band: &Band, opts: &PeakOptions) -> Result<IntervalStats> {
    ensure!(!x.is_empty(), Validation, "empty series");
    ensure!(fs > 0.0, Validation, "fs must be positive");
    let guard = (opts.edge_guard / band.hi * fs).ceil() as usize;
    let n = x.len();
    let peaks: Vec<usize> = find_peaks(x, opts.prominence * std_dev(x))
        .into_iter()
        .filter(|&p| p >= guard && p + guard < n)
        .collect();
    let raw: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / fs).collect();
    let intervals = filter_intervals(&raw, band);
    if intervals.is_empty() {
        return Err(Error::InsufficientPeaks(format!(
            "{} peaks, no admissible interval in [{:.3}, {:.3}] s",
            peaks.len(),
            1.0 / band.hi,
            1.0 / band.lo
        )));
    }
    let mean = intervals.iter().sum::<f64>() / intervals.len() as f64;
    let spread = std_dev(&intervals) / mean;
    Ok(IntervalStats {
        peaks,
        intervals,
        mean_period: mean,
        spread,
    })
}
