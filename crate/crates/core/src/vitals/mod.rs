//! Breathing and heart rate estimation from preprocessed phase series.
//!
//! Two estimators share the same front end (zero-phase FIR band-pass):
//!
//! * single person: band-limit, DWT, reconstruct the branches covering the band,
//!   average inter-peak intervals, fuse subcarriers by phase variance;
//! * several people: per-subcarrier spectra, count the spectral peaks above a
//!   threshold and cluster the peak frequencies with 1-D k-means.

mod dwt;
mod kmeans;
mod peaks;

pub use dwt::{dwt_decompose, DwtDecomp, Wavelet};
pub use kmeans::{kmeans_1d, kmeans_1d_detailed, sse, KMeans};
pub use peaks::{filter_intervals, find_peaks, peak_intervals, prominence, IntervalStats, PeakOptions};

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::BeamPair;
use crate::dsp::{self, design_bandpass, filtfilt, hanning};
use crate::error::{ensure, Error, Result};
use crate::prep::PhaseSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VitalKind {
    Breath,
    Heart,
}

impl fmt::Display for VitalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VitalKind::Breath => "breath",
            VitalKind::Heart => "heart",
        })
    }
}

/// Frequency band of a vital sign, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
    pub kind: VitalKind,
}

impl Band {
    pub fn new(lo: f64, hi: f64, kind: VitalKind) -> Result<Self> {
        ensure!(
            lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi,
            Validation,
            "band [{lo}, {hi}] must satisfy 0 < lo < hi"
        );
        Ok(Band { lo, hi, kind })
    }

    /// 0.08-1 Hz for breathing, 1-2 Hz for the heart.
    pub fn for_kind(kind: VitalKind) -> Self {
        match kind {
            VitalKind::Breath => Band { lo: 0.08, hi: 1.0, kind },
            VitalKind::Heart => Band { lo: 1.0, hi: 2.0, kind },
        }
    }

    pub fn validate_for(&self, fs: f64) -> Result<()> {
        ensure!(
            0.0 < self.lo && self.lo < self.hi && self.hi < fs / 2.0,
            Validation,
            "{} band [{}, {}] Hz outside (0, {}) Hz",
            self.kind,
            self.lo,
            self.hi,
            fs / 2.0
        );
        Ok(())
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo && f <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dwt,
    Fft,
    FftKmeans,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dwt => "dwt",
            Method::Fft => "fft",
            Method::FftKmeans => "fft_kmeans",
        })
    }
}

/// One subcarrier's share of a fused estimate. `value` is a period in seconds for
/// [`Method::Dwt`] and a frequency in Hz otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub pair: BeamPair,
    pub subcarrier: usize,
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitalEstimate {
    pub kind: VitalKind,
    pub rate_hz: f64,
    pub rate_bpm: f64,
    pub per_subcarrier: Vec<Contribution>,
    pub method: Method,
    /// Relative spread of the per-subcarrier values and intervals.
    pub dispersion: f64,
    /// Fraction of the input series that produced a value.
    pub coverage: f64,
    /// Mean absolute correlation between the band-limited series of different
    /// subcarriers; 1 when only one series contributes. Not computed for
    /// multi-target estimates.
    pub coherence: Option<f64>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleEstimate {
    pub breath: VitalEstimate,
    pub heart: VitalEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VitalOptions {
    pub breath_band: Band,
    pub heart_band: Band,
    /// Odd FIR length at the processing rate.
    pub fir_taps: usize,
    pub dwt_levels: usize,
    pub wavelet: Wavelet,
    pub peaks: PeakOptions,
    pub fft_size: usize,
    /// Normalized spectral level a peak must exceed to count as a target.
    pub peak_threshold: f64,
    /// Hann taper before the multi-target spectra.
    pub spectrum_taper: bool,
    pub kmeans_seed: u64,
    /// Dispersion above which an estimate is flagged.
    pub max_dispersion: f64,
    /// Coverage below which an estimate is flagged.
    pub min_coverage: f64,
    /// Coherence below which an estimate is flagged.
    pub min_coherence: f64,
}

impl Default for VitalOptions {
    fn default() -> Self {
        VitalOptions {
            breath_band: Band::for_kind(VitalKind::Breath),
            heart_band: Band::for_kind(VitalKind::Heart),
            fir_taps: 401,
            dwt_levels: 4,
            wavelet: Wavelet::Db4,
            peaks: PeakOptions::default(),
            fft_size: 4096,
            peak_threshold: 0.5,
            spectrum_taper: true,
            kmeans_seed: 0,
            max_dispersion: 0.25,
            min_coverage: 0.5,
            min_coherence: 0.5,
        }
    }
}

impl VitalOptions {
    pub fn band(&self, kind: VitalKind) -> Band {
        match kind {
            VitalKind::Breath => self.breath_band,
            VitalKind::Heart => self.heart_band,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Band::new(self.breath_band.lo, self.breath_band.hi, VitalKind::Breath)?;
        Band::new(self.heart_band.lo, self.heart_band.hi, VitalKind::Heart)?;
        ensure!(
            self.breath_band.kind == VitalKind::Breath && self.heart_band.kind == VitalKind::Heart,
            Validation,
            "band kinds do not match their slots"
        );
        ensure!(self.fir_taps % 2 == 1 && self.fir_taps >= 3, Validation, "fir_taps must be odd and >= 3");
        ensure!(self.dwt_levels >= 1, Validation, "dwt_levels must be >= 1");
        ensure!(self.fft_size >= 2, Validation, "fft_size must be >= 2");
        ensure!(
            self.peak_threshold > 0.0 && self.peak_threshold < 1.0,
            Validation,
            "peak_threshold must lie in (0, 1)"
        );
        ensure!(
            self.peaks.prominence >= 0.0 && self.peaks.edge_guard >= 0.0,
            Validation,
            "peak options must be non-negative"
        );
        ensure!(self.max_dispersion > 0.0, Validation, "max_dispersion must be positive");
        ensure!(
            (0.0..=1.0).contains(&self.min_coverage),
            Validation,
            "min_coverage must lie in [0, 1]"
        );
        ensure!(
            (0.0..=1.0).contains(&self.min_coherence),
            Validation,
            "min_coherence must lie in [0, 1]"
        );
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Filtering and spectra
// ---------------------------------------------------------------------------

/// Zero-phase Hamming-windowed FIR band-pass. The mean is removed first.
pub fn fir_bandpass(x: &[f64], fs: f64, band: &Band, taps: usize) -> Result<Vec<f64>> {
    ensure!(!x.is_empty(), Validation, "empty series");
    band.validate_for(fs)?;
    let h = design_bandpass(taps, band.lo / fs, band.hi / fs)?;
    let m = dsp::mean(x);
    let centered: Vec<f64> = x.iter().map(|v| v - m).collect();
    Ok(filtfilt(&centered, &h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    /// One-sided magnitude normalized to a maximum of 1 (all zero for a zero input).
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn resolution(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    /// Index of the largest bin inside `band`.
    pub fn argmax_in(&self, band: &Band) -> Option<usize> {
        (0..self.freqs.len())
            .filter(|&i| band.contains(self.freqs[i]))
            .max_by(|&a, &b| self.power[a].total_cmp(&self.power[b]))
    }

    /// Local maxima inside `band` strictly above `thr`.
    pub fn peaks_in(&self, band: &Band, thr: f64) -> Vec<usize> {
        let p = &self.power;
        (1..p.len().saturating_sub(1))
            .filter(|&i| band.contains(self.freqs[i]) && p[i] > thr && p[i] > p[i - 1] && p[i] >= p[i + 1])
            .collect()
    }
}

pub fn fft_spectrum(x: &[f64], fs: f64, n_fft: usize) -> Result<Spectrum> {
    ensure!(!x.is_empty(), Validation, "empty series");
    ensure!(fs > 0.0, Validation, "fs must be positive");
    ensure!(n_fft >= x.len(), Validation, "n_fft {n_fft} shorter than the series ({})", x.len());
    let spec = dsp::fft_real(x, n_fft);
    let half = n_fft / 2 + 1;
    let mut power: Vec<f64> = spec[..half].iter().map(|c| c.norm()).collect();
    let max = power.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        power.iter_mut().for_each(|v| *v /= max);
    }
    Ok(Spectrum {
        freqs: (0..half).map(|k| k as f64 * fs / n_fft as f64).collect(),
        power,
    })
}

pub fn count_targets(spectrum: &Spectrum, band: &Band, thr: f64) -> usize {
    spectrum.peaks_in(band, thr).len()
}

/// Weighted mean of spectra sharing one frequency grid, rescaled to a unit maximum.
fn mean_spectrum<'a>(items: impl Iterator<Item = (f64, &'a Spectrum)>) -> Spectrum {
    let mut freqs = Vec::new();
    let mut power: Vec<f64> = Vec::new();
    for (w, spec) in items {
        if power.is_empty() {
            freqs = spec.freqs.clone();
            power = vec![0.0; spec.power.len()];
        }
        for (m, p) in power.iter_mut().zip(&spec.power) {
            *m += w * p;
        }
    }
    let peak = power.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        power.iter_mut().for_each(|v| *v /= peak);
    }
    Spectrum { freqs, power }
}

/// Number of groups left after joining sorted values closer than `tol`.
fn count_distinct(values: &mut [f64], tol: f64) -> usize {
    values.sort_by(f64::total_cmp);
    match values.first() {
        None => 0,
        Some(_) => 1 + values.windows(2).filter(|w| w[1] - w[0] > tol).count(),
    }
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

/// Variance-weighted mean `sum(v * l) / sum(v)`.
pub fn weighted_rate(contribs: &[(f64, f64)]) -> Result<f64> {
    ensure!(!contribs.is_empty(), Validation, "no contributions");
    ensure!(
        contribs.iter().all(|&(l, v)| l > 0.0 && l.is_finite() && v >= 0.0 && v.is_finite()),
        Validation,
        "values must be positive and weights non-negative"
    );
    let total: f64 = contribs.iter().map(|c| c.1).sum();
    ensure!(total > 0.0, Validation, "all weights are zero");
    Ok(contribs.iter().map(|&(l, v)| v * l).sum::<f64>() / total)
}

fn weighted_cv(contribs: &[Contribution], centre: f64) -> f64 {
    let total: f64 = contribs.iter().map(|c| c.weight).sum();
    let var = contribs.iter().map(|c| c.weight * (c.value - centre).powi(2)).sum::<f64>() / total;
    var.sqrt() / centre
}

/// Mean absolute pairwise correlation, over at most 32 evenly spaced signals.
pub fn coherence(signals: &[&[f64]]) -> f64 {
    const MAX: usize = 32;
    if signals.len() < 2 {
        return 1.0;
    }
    let step = signals.len().div_ceil(MAX);
    let picked: Vec<Vec<f64>> = signals
        .iter()
        .step_by(step)
        .map(|x| {
            let m = dsp::mean(x);
            let c: Vec<f64> = x.iter().map(|v| v - m).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            c.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..picked.len() {
        for j in i + 1..picked.len() {
            let n = picked[i].len().min(picked[j].len());
            total += (0..n).map(|t| picked[i][t] * picked[j][t]).sum::<f64>().abs();
            count += 1;
        }
    }
    if count == 0 {
        1.0
    } else {
        total / count as f64
    }
}

fn fuse(
    kind: VitalKind,
    method: Method,
    contribs: Vec<Contribution>,
    within: f64,
    coherence: Option<f64>,
    n_inputs: usize,
    opts: &VitalOptions,
) -> Result<VitalEstimate> {
    if contribs.is_empty() {
        return Err(Error::Estimation(format!(
            "no usable subcarrier for the {kind} rate ({n_inputs} tried)"
        )));
    }
    let pairs: Vec<(f64, f64)> = contribs.iter().map(|c| (c.value, c.weight)).collect();
    let centre = weighted_rate(&pairs)?;
    let rate_hz = if method == Method::Dwt { 1.0 / centre } else { centre };
    let dispersion = weighted_cv(&contribs, centre).max(within);
    let coverage = contribs.len() as f64 / n_inputs as f64;
    Ok(VitalEstimate {
        kind,
        rate_hz,
        rate_bpm: 60.0 * rate_hz,
        per_subcarrier: contribs,
        method,
        dispersion,
        coverage,
        coherence,
        low_confidence: dispersion > opts.max_dispersion
            || coverage < opts.min_coverage
            || coherence.is_some_and(|c| c < opts.min_coherence),
    })
}

fn check_series(series: &[PhaseSeries]) -> Result<f64> {
    ensure!(!series.is_empty(), Validation, "no phase series given");
    let fs = series[0].fs();
    ensure!(
        series.iter().all(|s| s.fs() == fs && !s.samples().is_empty()),
        Validation,
        "series must be non-empty and share one sample rate"
    );
    Ok(fs)
}

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

/// Band-limit, decompose and keep the DWT branches overlapping the band.
pub fn dwt_band_signal(x: &[f64], fs: f64, band: &Band, opts: &VitalOptions) -> Result<Vec<f64>> {
    let y = fir_bandpass(x, fs, band, opts.fir_taps)?;
    let d = dwt_decompose(&y, opts.dwt_levels, opts.wavelet, fs)?;
    Ok(d.reconstruct_band(band.lo, band.hi))
}

/// Inter-peak estimate of one vital sign.
pub fn estimate_dwt(series: &[PhaseSeries], kind: VitalKind, opts: &VitalOptions) -> Result<VitalEstimate> {
    let fs = check_series(series)?;
    let band = opts.band(kind);
    let results = series
        .par_iter()
        .map(|s| {
            let r = dwt_band_signal(s.samples(), fs, &band, opts)?;
            match peak_intervals(&r, fs, &band, &opts.peaks) {
                Ok(stats) => Ok(Some((
                    Contribution {
                        pair: s.pair(),
                        subcarrier: s.subcarrier(),
                        value: stats.mean_period,
                        weight: s.variance(),
                    },
                    stats.spread,
                    r,
                ))),
                Err(Error::InsufficientPeaks(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<_> = results.into_iter().flatten().filter(|(c, _, _)| c.weight > 0.0).collect();
    let total: f64 = kept.iter().map(|(c, _, _)| c.weight).sum();
    let within = if total > 0.0 {
        kept.iter().map(|(c, s, _)| c.weight * s).sum::<f64>() / total
    } else {
        0.0
    };
    let signals: Vec<&[f64]> = kept.iter().map(|(_, _, r)| r.as_slice()).collect();
    let coh = coherence(&signals);
    let contribs = kept.iter().map(|(c, _, _)| c.clone()).collect();
    fuse(kind, Method::Dwt, contribs, within, Some(coh), series.len(), opts)
}

pub fn estimate_single(series: &[PhaseSeries], opts: &VitalOptions) -> Result<SingleEstimate> {
    Ok(SingleEstimate {
        breath: estimate_dwt(series, VitalKind::Breath, opts)?,
        heart: estimate_dwt(series, VitalKind::Heart, opts)?,
    })
}

/// Band-limited series and its spectrum.
fn band_spectrum(
    s: &PhaseSeries,
    band: &Band,
    n_fft: usize,
    taper: bool,
    opts: &VitalOptions,
) -> Result<(Vec<f64>, Spectrum)> {
    let y = fir_bandpass(s.samples(), s.fs(), band, opts.fir_taps)?;
    let spec = if taper {
        let w = hanning(y.len());
        let tapered: Vec<f64> = y.iter().zip(w).map(|(v, w)| v * w).collect();
        fft_spectrum(&tapered, s.fs(), n_fft)?
    } else {
        fft_spectrum(&y, s.fs(), n_fft)?
    };
    Ok((y, spec))
}

/// Spectral-peak estimate: per-subcarrier argmax inside the band, fused by
/// variance. `n_fft = None` uses the native resolution (no zero padding).
pub fn estimate_fft(
    series: &[PhaseSeries],
    kind: VitalKind,
    n_fft: Option<usize>,
    opts: &VitalOptions,
) -> Result<VitalEstimate> {
    let fs = check_series(series)?;
    let band = opts.band(kind);
    band.validate_for(fs)?;
    let contribs = series
        .par_iter()
        .map(|s| {
            let n = n_fft.unwrap_or(s.samples().len()).max(s.samples().len());
            let (y, spec) = band_spectrum(s, &band, n, false, opts)?;
            Ok(spec.argmax_in(&band).filter(|_| s.variance() > 0.0).map(|i| {
                let c = Contribution {
                    pair: s.pair(),
                    subcarrier: s.subcarrier(),
                    value: spec.freqs[i],
                    weight: s.variance(),
                };
                (c, y)
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<_> = contribs.into_iter().flatten().collect();
    let signals: Vec<&[f64]> = kept.iter().map(|(_, y)| y.as_slice()).collect();
    let coh = coherence(&signals);
    let contribs = kept.iter().map(|(c, _)| c.clone()).collect();
    fuse(kind, Method::Fft, contribs, 0.0, Some(coh), series.len(), opts)
}

/// Several targets in one band. The target count is read from the variance-weighted
/// mean spectrum of each beam pair, the spectral peaks of all subcarriers are
/// pooled and clustered, and each subcarrier contributes its peak nearest to each
/// centroid. Returns estimates in ascending rate order; an empty list when no peak
/// clears the threshold.
pub fn estimate_multi(series: &[PhaseSeries], kind: VitalKind, opts: &VitalOptions) -> Result<Vec<VitalEstimate>> {
    let fs = check_series(series)?;
    let band = opts.band(kind);
    band.validate_for(fs)?;
    let spectra = series
        .par_iter()
        .map(|s| {
            let n = opts.fft_size.max(s.samples().len());
            band_spectrum(s, &band, n, opts.spectrum_taper, opts).map(|(_, spec)| spec)
        })
        .collect::<Result<Vec<_>>>()?;
    ensure!(
        spectra.iter().all(|s| s.freqs.len() == spectra[0].freqs.len()),
        Validation,
        "series lengths differ beyond the FFT size"
    );

    if series.iter().all(|s| s.variance() <= 0.0) {
        return Ok(Vec::new());
    }
    // Targets may sit on different beams with very different phase variance, so
    // peaks are counted on each pair's own mean spectrum and merged across pairs
    // when closer than one native bin.
    let mut by_pair: BTreeMap<BeamPair, Vec<usize>> = BTreeMap::new();
    for (i, s) in series.iter().enumerate() {
        by_pair.entry(s.pair()).or_default().push(i);
    }
    let mut pair_peaks: Vec<f64> = Vec::new();
    for idx in by_pair.values() {
        let mean = mean_spectrum(idx.iter().map(|&i| (series[i].variance(), &spectra[i])));
        pair_peaks.extend(mean.peaks_in(&band, opts.peak_threshold).into_iter().map(|i| mean.freqs[i]));
    }
    let bin = fs / series.iter().map(|s| s.samples().len()).max().unwrap() as f64;
    let k = count_distinct(&mut pair_peaks, bin);
    if k == 0 {
        return Ok(Vec::new());
    }

    let per_series: Vec<Vec<f64>> = spectra
        .iter()
        .map(|spec| {
            spec.peaks_in(&band, opts.peak_threshold)
                .into_iter()
                .map(|i| spec.freqs[i])
                .collect()
        })
        .collect();
    let pooled: Vec<f64> = per_series.iter().flatten().copied().collect();
    let mut distinct = pooled.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let k = k.min(distinct.len());
    if k == 0 {
        return Ok(Vec::new());
    }
    let centroids = kmeans_1d(&pooled, k, opts.kmeans_seed)?;

    // Each peak belongs to its nearest centroid; a subcarrier contributes to a
    // cluster through its member peak closest to the centroid.
    let nearest = |f: f64| {
        (0..centroids.len())
            .min_by(|&a, &b| (f - centroids[a]).abs().total_cmp(&(f - centroids[b]).abs()))
            .unwrap()
    };
    let mut out = Vec::with_capacity(k);
    for (c, &centre) in centroids.iter().enumerate() {
        let contribs: Vec<Contribution> = series
            .iter()
            .zip(&per_series)
            .filter(|(s, _)| s.variance() > 0.0)
            .filter_map(|(s, peaks)| {
                peaks
                    .iter()
                    .copied()
                    .filter(|&f| nearest(f) == c)
                    .min_by(|a, b| (a - centre).abs().total_cmp(&(b - centre).abs()))
                    .map(|f| Contribution {
                        pair: s.pair(),
                        subcarrier: s.subcarrier(),
                        value: f,
                        weight: s.variance(),
                    })
            })
            .collect();
        if contribs.is_empty() {
            continue;
        }
        let n = contribs.len();
        let mut est = fuse(kind, Method::FftKmeans, contribs, 0.0, None, n, opts)?;
        est.coverage = n as f64 / series.len() as f64;
        out.push(est);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const FS: f64 = 100.0;

    fn tone(f: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / FS + phase).sin()).collect()
    }

    fn series(sub: usize, x: Vec<f64>) -> PhaseSeries {
        PhaseSeries::new(BeamPair::new(1, 1), sub, FS, x).unwrap()
    }

    fn amplitude_at(x: &[f64], f: f64) -> f64 {
        // Single-bin DFT over an integer number of periods.
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let a = 2.0 * PI * f * i as f64 / FS;
            re += v * a.cos();
            im += v * a.sin();
        }
        2.0 * (re * re + im * im).sqrt() / n
    }

    #[test]
    fn band_defaults_and_validation() {
        let b = Band::for_kind(VitalKind::Breath);
        assert_eq!((b.lo, b.hi), (0.08, 1.0));
        assert!(b.validate_for(100.0).is_ok());
        assert!(b.validate_for(1.5).is_err());
        assert!(Band::new(1.0, 0.5, VitalKind::Heart).is_err());
    }

    #[test]
    fn bandpass_kills_dc() {
        let y = fir_bandpass(&vec![5.0; 1000], FS, &Band::for_kind(VitalKind::Breath), 401).unwrap();
        assert!(y.iter().all(|v| v.abs() < 5e-3));
    }

    #[test]
    fn bandpass_passes_breath_tone() {
        let x = tone(0.5, 4000, 0.3);
        let y = fir_bandpass(&x, FS, &Band::for_kind(VitalKind::Breath), 401).unwrap();
        let a = amplitude_at(&y[1000..3000], 0.5);
        assert!((a - 1.0).abs() < 0.01, "{a}");
    }

    #[test]
    fn bandpass_rejects_out_of_band() {
        let x = tone(3.0, 4000, 0.0);
        let y = fir_bandpass(&x, FS, &Band::for_kind(VitalKind::Heart), 401).unwrap();
        let a = amplitude_at(&y[1000..3000], 3.0);
        assert!(20.0 * a.log10() <= -40.0, "{a}");
        assert!(fir_bandpass(&x, 3.0, &Band::for_kind(VitalKind::Heart), 401).is_err());
    }

    #[test]
    fn bandpass_is_zero_phase() {
        let x = tone(1.4, 2000, 0.0);
        let y = fir_bandpass(&x, FS, &Band::for_kind(VitalKind::Heart), 401).unwrap();
        let xc = |lag: isize| -> f64 {
            (600..1400).map(|i| x[i] * y[(i as isize + lag) as usize]).sum()
        };
        let best = (-20..=20).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn spectrum_examples() {
        let s = fft_spectrum(&tone(0.5, 500, 0.0), FS, 4096).unwrap();
        assert!((s.resolution() - 0.0244).abs() < 1e-4);
        let i = s.argmax_in(&Band::for_kind(VitalKind::Breath)).unwrap();
        assert!((s.freqs[i] - 0.5).abs() <= s.resolution());
        assert_eq!(s.power[i], 1.0);
        assert!(fft_spectrum(&[], FS, 16).is_err());
        assert!(fft_spectrum(&[1.0; 20], FS, 16).is_err());
    }

    #[test]
    fn two_tone_spectrum_has_two_peaks() {
        let x: Vec<f64> = tone(0.35, 3000, 0.0).iter().zip(tone(0.69, 3000, 1.0)).map(|(a, b)| a + b).collect();
        let s = fft_spectrum(&x, FS, 4096).unwrap();
        let band = Band::for_kind(VitalKind::Breath);
        let peaks = s.peaks_in(&band, 0.5);
        assert_eq!(peaks.len(), 2);
        assert!((s.freqs[peaks[0]] - 0.35).abs() <= s.resolution());
        assert!((s.freqs[peaks[1]] - 0.69).abs() <= s.resolution());
        assert_eq!(count_targets(&s, &band, 0.5), 2);
    }

    #[test]
    fn zero_spectrum_counts_nothing() {
        let s = fft_spectrum(&[0.0; 64], FS, 64).unwrap();
        assert_eq!(count_targets(&s, &Band::for_kind(VitalKind::Breath), 0.5), 0);
    }

    #[test]
    fn weighted_rate_examples() {
        assert_eq!(weighted_rate(&[(1.3, 2.0)]).unwrap(), 1.3);
        assert!((weighted_rate(&[(0.5, 1.0), (0.7, 3.0)]).unwrap() - 0.65).abs() < 1e-12);
        assert!((weighted_rate(&[(1.0, 2.0), (2.0, 2.0), (4.0, 2.0)]).unwrap() - 7.0 / 3.0).abs() < 1e-12);
        assert!(weighted_rate(&[(1.0, 0.0), (2.0, 0.0)]).is_err());
        assert!(weighted_rate(&[]).is_err());
        assert!(weighted_rate(&[(-1.0, 1.0)]).is_err());
    }

    #[test]
    fn single_estimate_on_clean_tones() {
        let x: Vec<f64> = tone(0.56, 500, 0.2)
            .iter()
            .zip(tone(1.37, 500, 0.9))
            .map(|(b, h)| b + 0.2 * h)
            .collect();
        let s = vec![series(0, x.clone()), series(1, x.iter().map(|v| 0.8 * v).collect())];
        let e = estimate_single(&s, &VitalOptions::default()).unwrap();
        assert!((e.breath.rate_bpm - 33.6).abs() < 2.0, "{}", e.breath.rate_bpm);
        assert!((e.heart.rate_bpm - 82.2).abs() < 2.0, "{}", e.heart.rate_bpm);
        assert_eq!(e.breath.method, Method::Dwt);
        assert!(!e.breath.low_confidence);
        assert_eq!(e.breath.per_subcarrier.len(), 2);
    }

    #[test]
    fn flat_input_fails() {
        let s = vec![series(0, vec![1.0; 500])];
        let err = estimate_single(&s, &VitalOptions::default()).unwrap_err();
        assert!(err.is_estimation());
    }

    #[test]
    fn noise_is_never_a_confident_estimate() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let opts = VitalOptions::default();
        for seed in 0..10u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<PhaseSeries> = (0..20)
                .map(|i| series(i, (0..500).map(|_| normal.sample(&mut rng)).collect()))
                .collect();
            for kind in [VitalKind::Breath, VitalKind::Heart] {
                match estimate_dwt(&s, kind, &opts) {
                    Ok(e) => assert!(e.low_confidence, "seed {seed} {kind}: {e:?}"),
                    Err(e) => assert!(e.is_estimation()),
                }
            }
        }
    }

    #[test]
    fn fft_estimate_native_and_padded() {
        let s = vec![series(0, tone(0.5, 500, 0.0))];
        let native = estimate_fft(&s, VitalKind::Breath, None, &VitalOptions::default()).unwrap();
        assert!((native.rate_hz - 0.6).abs() < 1e-9 || (native.rate_hz - 0.4).abs() < 1e-9 || (native.rate_hz - 0.5).abs() < 1e-9);
        let padded = estimate_fft(&s, VitalKind::Breath, Some(4096), &VitalOptions::default()).unwrap();
        assert!((padded.rate_hz - 0.5).abs() < 0.025);
    }

    #[test]
    fn multi_separates_two_rates() {
        let mut s = Vec::new();
        for i in 0..6 {
            s.push(series(i, tone(0.35, 3000, i as f64)));
        }
        for i in 6..12 {
            s.push(series(i, tone(0.69, 3000, i as f64)));
        }
        let est = estimate_multi(&s, VitalKind::Breath, &VitalOptions::default()).unwrap();
        assert_eq!(est.len(), 2);
        assert!((est[0].rate_bpm - 21.0).abs() < 3.0);
        assert!((est[1].rate_bpm - 41.4).abs() < 3.0);
        assert!(est.iter().all(|e| e.method == Method::FftKmeans));
    }

    #[test]
    fn multi_collapses_identical_rates() {
        let s: Vec<PhaseSeries> = (0..4).map(|i| series(i, tone(0.4, 3000, i as f64))).collect();
        let est = estimate_multi(&s, VitalKind::Breath, &VitalOptions::default()).unwrap();
        assert_eq!(est.len(), 1);
    }

    #[test]
    fn multi_on_single_target_agrees_with_fft_path() {
        let s: Vec<PhaseSeries> = (0..4).map(|i| series(i, tone(0.47, 500, i as f64))).collect();
        let opts = VitalOptions {
            spectrum_taper: false,
            ..VitalOptions::default()
        };
        let multi = estimate_multi(&s, VitalKind::Breath, &opts).unwrap();
        let fft = estimate_fft(&s, VitalKind::Breath, Some(opts.fft_size), &opts).unwrap();
        assert_eq!(multi.len(), 1);
        assert!((multi[0].rate_hz - fft.rate_hz).abs() <= FS / opts.fft_size as f64);
    }

    #[test]
    fn multi_flat_input_is_empty() {
        let s = vec![series(0, vec![0.0; 500])];
        assert!(estimate_multi(&s, VitalKind::Breath, &VitalOptions::default()).unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn weighted_rate_is_convex(
            c in prop::collection::vec((0.1f64..20.0, 0.0f64..5.0), 1..20),
        ) {
            prop_assume!(c.iter().map(|x| x.1).sum::<f64>() > 1e-6);
            let e = weighted_rate(&c).unwrap();
            let lo = c.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
            let hi = c.iter().map(|x| x.0).fold(0.0, f64::max);
            prop_assert!(e >= lo * (1.0 - 1e-12) && e <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn weighted_rate_is_scale_invariant(
            c in prop::collection::vec((0.1f64..20.0, 0.01f64..5.0), 1..20),
            k in 1e-3f64..1e3,
        ) {
            let scaled: Vec<(f64, f64)> = c.iter().map(|&(l, v)| (l, v * k)).collect();
            let a = weighted_rate(&c).unwrap();
            let b = weighted_rate(&scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a);
        }

        #[test]
        fn single_estimate_ignores_offsets(offset in -50.0f64..50.0) {
            let x: Vec<f64> = tone(0.56, 500, 0.4).iter().zip(tone(1.37, 500, 0.0)).map(|(b, h)| b + 0.3 * h).collect();
            let shifted: Vec<f64> = x.iter().map(|v| v + offset).collect();
            let opts = VitalOptions::default();
            let a = estimate_single(&[series(0, x)], &opts).unwrap();
            let b = estimate_single(&[series(0, shifted)], &opts).unwrap();
            prop_assert!((a.breath.rate_hz - b.breath.rate_hz).abs() < 1e-9);
            prop_assert!((a.heart.rate_hz - b.heart.rate_hz).abs() < 1e-9);
        }
    }
}
