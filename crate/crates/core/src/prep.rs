//! Phase preprocessing: unwrap over time, Hampel detrend, Hampel denoise and
//! anti-aliased downsampling, one series per subcarrier.
//!
//! The Hampel variants here compare against a fraction of the global standard
//! deviation of the input, not the local MAD.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{BeamPair, CsiCapture, PairMatrix};
use crate::dsp::{self, design_lowpass, reflect_even, sliding_median};
use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pair: BeamPair,
    subcarrier: usize,
    fs: f64,
    samples: Vec<f64>,
    variance: f64,
}

impl PhaseSeries {
    pub fn new(pair: BeamPair, subcarrier: usize, fs: f64, samples: Vec<f64>) -> Result<Self> {
        ensure!(fs.is_finite() && fs > 0.0, Validation, "fs must be positive");
        let variance = dsp::variance(&samples);
        Ok(PhaseSeries {
            pair,
            subcarrier,
            fs,
            samples,
            variance,
        })
    }

    pub fn pair(&self) -> BeamPair {
        self.pair
    }

    pub fn subcarrier(&self) -> usize {
        self.subcarrier
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepOptions {
    pub trend_window: usize,
    pub trend_threshold: f64,
    pub denoise_window: usize,
    pub denoise_threshold: f64,
    pub downsample_factor: usize,
    pub antialias_taps: usize,
}

impl Default for PrepOptions {
    fn default() -> Self {
        PrepOptions {
            trend_window: 2000,
            trend_threshold: 0.01,
            denoise_window: 50,
            denoise_threshold: 0.01,
            downsample_factor: 20,
            antialias_taps: 101,
        }
    }
}

pub fn unwrap(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    for (i, &p) in phase.iter().enumerate() {
        if i > 0 {
            let d = p - phase[i - 1];
            // Map the raw step into (-pi, pi]; the correction accumulates.
            let wrapped = dsp::wrap(d);
            offset += wrapped - d;
        }
        out.push(p + offset);
    }
    out
}

fn hampel_core(x: &[f64], window: usize, t: f64) -> Result<Vec<f64>> {
    ensure!(!x.is_empty(), Validation, "empty series");
    ensure!(window >= 3, Validation, "Hampel window must be >= 3, got {window}");
    ensure!(t > 0.0 && t.is_finite(), Validation, "threshold must be positive");
    let half = ((window - 1) / 2).min(x.len() - 1);
    let med = sliding_median(x, half);
    let limit = t * dsp::std_dev(x);
    Ok(x.iter()
        .zip(&med)
        .map(|(&v, &m)| if (v - m).abs() > limit { m } else { v })
        .collect())
}

/// Returns `(trend, detrended)` with `trend + detrended == x`.
pub fn hampel_trend(x: &[f64], window: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let trend = hampel_core(x, window, t)?;
    let detrended = x.iter().zip(&trend).map(|(v, m)| v - m).collect();
    Ok((trend, detrended))
}

pub fn hampel_denoise(x: &[f64], window: usize, t: f64) -> Result<Vec<f64>> {
    hampel_core(x, window, t)
}

pub fn downsample(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    downsample_with(x, factor, PrepOptions::default().antialias_taps)
}

/// Low-pass at 0.8 x the output Nyquist, then keep every `factor`-th sample.
pub fn downsample_with(x: &[f64], factor: usize, taps: usize) -> Result<Vec<f64>> {
    ensure!(factor >= 1, Validation, "downsample factor must be >= 1");
    if factor == 1 || x.is_empty() {
        return Ok(x.to_vec());
    }
    let h = design_lowpass(taps, 0.8 * 0.5 / factor as f64)?;
    let half = taps / 2;
    let ext = reflect_even(x, half);
    Ok((0..x.len())
        .step_by(factor)
        .map(|i| h.iter().zip(&ext[i..i + taps]).map(|(a, b)| a * b).sum())
        .collect())
}

impl PrepOptions {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.trend_window >= 3, Validation, "trend_window must be >= 3");
        ensure!(self.denoise_window >= 3, Validation, "denoise_window must be >= 3");
        ensure!(
            self.trend_threshold > 0.0 && self.denoise_threshold > 0.0,
            Validation,
            "Hampel thresholds must be positive"
        );
        ensure!(self.downsample_factor >= 1, Validation, "downsample_factor must be >= 1");
        ensure!(
            self.antialias_taps % 2 == 1 && self.antialias_taps >= 3,
            Validation,
            "antialias_taps must be odd and >= 3"
        );
        Ok(())
    }
}

/// Full chain for one time series of raw (wrapped) phase samples.
pub fn preprocess_phase(raw_phase: &[f64], opts: &PrepOptions) -> Result<Vec<f64>> {
    let unwrapped = unwrap(raw_phase);
    let (_, detrended) = hampel_trend(&unwrapped, opts.trend_window, opts.trend_threshold)?;
    let denoised = hampel_denoise(&detrended, opts.denoise_window, opts.denoise_threshold)?;
    downsample_with(&denoised, opts.downsample_factor, opts.antialias_taps)
}

pub fn preprocess_matrix(
    m: &PairMatrix,
    pair: BeamPair,
    symbol_rate: f64,
    opts: &PrepOptions,
) -> Result<Vec<PhaseSeries>> {
    ensure!(opts.downsample_factor >= 1, Validation, "downsample factor must be >= 1");
    let fs = symbol_rate / opts.downsample_factor as f64;
    (0..m.n_subcarriers)
        .into_par_iter()
        .map(|n| {
            let raw: Vec<f64> = (0..m.n_symbols).map(|s| m.get(s, n).arg()).collect();
            PhaseSeries::new(pair, n, fs, preprocess_phase(&raw, opts)?)
        })
        .collect()
}

pub fn preprocess_pair(c: &CsiCapture, pair: BeamPair, opts: &PrepOptions) -> Result<Vec<PhaseSeries>> {
    let m = c.slice_pair(pair)?;
    preprocess_matrix(&m, pair, c.meta().symbol_rate, opts)
}

/// Sample times for a series of `n` samples at `fs`.
pub fn times(n: usize, fs: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 / fs).collect()
}
