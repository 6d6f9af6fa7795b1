//! Power-domain analysis: delay profiles, link budget, variance energy and beam /
//! subcarrier selection.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{BeamPair, CsiCapture, SPEED_OF_LIGHT};
use crate::dsp::{self, hanning, ifft_padded};
use crate::error::{ensure, Result};
use crate::prep::{preprocess_pair, PhaseSeries, PrepOptions};
use crate::synth::mw_to_dbm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdp {
    pub pair: Option<BeamPair>,
    /// `None` for a profile averaged over symbols.
    pub symbol: Option<usize>,
    /// Linear power per delay bin.
    pub bins: Vec<f64>,
    /// Seconds per bin.
    pub delay_resolution: f64,
    pub zero_pad: usize,
}

impl Pdp {
    /// Strongest bin and its power.
    pub fn peak(&self) -> (usize, f64) {
        self.bins
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best })
    }

    pub fn delay(&self, bin: usize) -> f64 {
        bin as f64 * self.delay_resolution
    }

    /// Propagation path length of a bin in m.
    pub fn path_length(&self, bin: usize) -> f64 {
        self.delay(bin) * SPEED_OF_LIGHT
    }

    /// Ratio of the strongest bin to the median bin.
    pub fn peak_to_median(&self) -> f64 {
        let med = dsp::median(&self.bins);
        if med > 0.0 {
            self.peak().1 / med
        } else {
            f64::INFINITY
        }
    }
}

/// `|IFFT(w * ctf)|^2 / (sum w)^2` with a Hann window `w`, zero-padded to
/// `zero_pad` bins. A unit-modulus CTF gives a unit peak; summed over all bins the
/// profile equals `zero_pad * sum |w ctf|^2 / (sum w)^2`.
pub fn pdp(ctf: &[Complex64], zero_pad: usize, subcarrier_spacing: f64) -> Result<Pdp> {
    ensure!(!ctf.is_empty(), Validation, "empty CTF");
    ensure!(
        zero_pad >= ctf.len(),
        Validation,
        "zero_pad {zero_pad} shorter than CTF length {}",
        ctf.len()
    );
    ensure!(subcarrier_spacing > 0.0, Validation, "subcarrier spacing must be positive");
    let w = hanning(ctf.len());
    let norm = w.iter().sum::<f64>().powi(2);
    let windowed: Vec<Complex64> = ctf.iter().zip(&w).map(|(c, w)| c * w).collect();
    let bins = ifft_padded(&windowed, zero_pad)
        .iter()
        .map(|v| v.norm_sqr() / norm)
        .collect();
    Ok(Pdp {
        pair: None,
        symbol: None,
        bins,
        delay_resolution: 1.0 / (zero_pad as f64 * subcarrier_spacing),
        zero_pad,
    })
}

/// Delay profile of one symbol of one pair. The stored CTF rotates with
/// `+2 pi f tau`, so it is conjugated to put delays at positive bins.
pub fn symbol_pdp(c: &CsiCapture, pair: BeamPair, symbol: usize, zero_pad: usize) -> Result<Pdp> {
    let row: Vec<Complex64> = c
        .row(symbol, pair)?
        .iter()
        .map(|h| Complex64::new(h.re as f64, -(h.im as f64)))
        .collect();
    let mut p = pdp(&row, zero_pad, c.meta().effective_spacing())?;
    p.pair = Some(pair);
    p.symbol = Some(symbol);
    Ok(p)
}

/// Delay profile averaged over every `stride`-th symbol.
pub fn mean_pdp(c: &CsiCapture, pair: BeamPair, zero_pad: usize, stride: usize) -> Result<Pdp> {
    c.meta().check_pair(pair)?;
    let stride = stride.max(1);
    let symbols: Vec<usize> = (0..c.meta().n_symbols).step_by(stride).collect();
    let mut acc = vec![0.0; zero_pad];
    let mut last = None;
    for &s in &symbols {
        let p = symbol_pdp(c, pair, s, zero_pad)?;
        for (a, b) in acc.iter_mut().zip(&p.bins) {
            *a += b;
        }
        last = Some(p);
    }
    let mut p = last.expect("capture has at least one symbol");
    p.bins = acc.into_iter().map(|v| v / symbols.len() as f64).collect();
    p.symbol = None;
    Ok(p)
}

// ---------------------------------------------------------------------------
// Link budget
// ---------------------------------------------------------------------------

/// Free-space path loss in dB.
pub fn fspl(d: f64, f: f64) -> Result<f64> {
    ensure!(d > 0.0 && f > 0.0, Validation, "fspl needs positive distance and frequency");
    Ok(fspl_db(d, f))
}

pub(crate) fn fspl_db(d: f64, f: f64) -> f64 {
    20.0 * (4.0 * PI * d * f / SPEED_OF_LIGHT).log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    /// dBm.
    pub p_t: f64,
    /// dB.
    pub g_t: f64,
    /// dB.
    pub g_r: f64,
    /// Tx -> target, m.
    pub d_t: f64,
    /// Target -> Rx, m.
    pub d_r: f64,
    /// Carrier frequency for the path-loss terms, Hz.
    pub frequency: f64,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.d_t > 0.0 && self.d_r > 0.0, Validation, "link distances must be positive");
        ensure!(self.frequency > 0.0, Validation, "frequency must be positive");
        ensure!(
            [self.p_t, self.g_t, self.g_r].iter().all(|v| v.is_finite()),
            Validation,
            "non-finite link budget"
        );
        Ok(())
    }

    /// Power incident on the target, dBm.
    pub fn incident_power(&self) -> f64 {
        self.p_t + self.g_t - fspl_db(self.d_t, self.frequency)
    }

    /// Power leaving the target given the power at the receiver output, dBm.
    pub fn reflected_power(&self, received_dbm: f64) -> f64 {
        received_dbm - self.g_r + fspl_db(self.d_r, self.frequency)
    }
}

/// `r_L = p_o - p_i` in dB.
pub fn backscatter_coeff(budget: &LinkBudget, p_o: f64) -> f64 {
    p_o - budget.incident_power()
}

/// Back-scattering coefficient from the strongest bin of the pair's mean delay
/// profile. The profile is normalized so a single path's peak equals its
/// received power.
pub fn measure_backscatter(
    c: &CsiCapture,
    pair: BeamPair,
    budget: &LinkBudget,
    zero_pad: usize,
) -> Result<f64> {
    budget.validate()?;
    let stride = (c.meta().n_symbols / 200).max(1);
    let p = mean_pdp(c, pair, zero_pad, stride)?;
    let received = mw_to_dbm(p.peak().1);
    Ok(backscatter_coeff(budget, budget.reflected_power(received)))
}

// ---------------------------------------------------------------------------
// Variance energy and selection
// ---------------------------------------------------------------------------

/// Windowed variances, `n_subcarriers x n_windows`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceMatrix {
    pub n_subcarriers: usize,
    pub n_windows: usize,
    pub v: Vec<f64>,
}

impl VarianceMatrix {
    pub fn new(n_subcarriers: usize, n_windows: usize, v: Vec<f64>) -> Result<Self> {
        ensure!(
            v.len() == n_subcarriers * n_windows,
            Validation,
            "variance matrix shape mismatch"
        );
        ensure!(v.iter().all(|x| *x >= 0.0), Validation, "negative variance");
        Ok(VarianceMatrix {
            n_subcarriers,
            n_windows,
            v,
        })
    }

    pub fn get(&self, n: usize, w: usize) -> f64 {
        self.v[n * self.n_windows + w]
    }

    /// Mean over subcarriers per window.
    pub fn trace(&self) -> Vec<f64> {
        (0..self.n_windows)
            .map(|w| (0..self.n_subcarriers).map(|n| self.get(n, w)).sum::<f64>() / self.n_subcarriers as f64)
            .collect()
    }
}

/// Population variance of each series over non-overlapping windows of `window_s`
/// seconds. A trailing partial window is kept when it has at least two samples.
pub fn variance_matrix(series: &[PhaseSeries], window_s: f64) -> Result<VarianceMatrix> {
    ensure!(!series.is_empty(), Validation, "no series");
    ensure!(window_s > 0.0, Validation, "window must be positive");
    let len = series[0].samples().len();
    ensure!(
        series.iter().all(|s| s.samples().len() == len),
        Validation,
        "series lengths differ"
    );
    let w = ((window_s * series[0].fs()).round() as usize).max(2);
    let starts: Vec<usize> = (0..len).step_by(w).filter(|&s| len - s >= 2).collect();
    ensure!(!starts.is_empty(), Validation, "series shorter than one window");
    let mut v = Vec::with_capacity(series.len() * starts.len());
    for s in series {
        for &start in &starts {
            v.push(dsp::variance(&s.samples()[start..(start + w).min(len)]));
        }
    }
    VarianceMatrix::new(series.len(), starts.len(), v)
}

/// Normalized variance energy: mean absolute entry.
pub fn nve(v: &VarianceMatrix) -> Result<f64> {
    ensure!(!v.v.is_empty(), Validation, "empty variance matrix");
    Ok(v.v.iter().map(|x| x.abs()).sum::<f64>() / v.v.len() as f64)
}

/// Positions in `series` whose variance exceeds `frac` of the largest; the
/// argmax is always included.
pub fn select_subcarriers(series: &[PhaseSeries], frac: f64) -> Result<Vec<usize>> {
    let v: Vec<f64> = series.iter().map(|s| s.variance()).collect();
    select_by_variance(&v, frac)
}

pub fn select_by_variance(v: &[f64], frac: f64) -> Result<Vec<usize>> {
    ensure!(!v.is_empty(), Validation, "no series to select from");
    ensure!(frac > 0.0 && frac < 1.0, Validation, "fraction {frac} outside (0, 1)");
    let (arg, max) = v
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, x)| if x > b.1 { (i, x) } else { b });
    let mut out: Vec<usize> = (0..v.len()).filter(|&i| v[i] > frac * max).collect();
    if !out.contains(&arg) {
        out.push(arg);
        out.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamOptions {
    pub pdp_zero_pad: usize,
    pub nve_window_s: f64,
    /// Minimum mean-PDP peak-to-median ratio (dB) for a pair to count as seeing a
    /// reflector.
    pub gate_db: f64,
    pub subcarrier_fraction: f64,
    /// Subtracted from delay distances before display, m.
    pub delay_offset_m: f64,
}

impl Default for BeamOptions {
    fn default() -> Self {
        BeamOptions {
            pdp_zero_pad: 4096,
            nve_window_s: 0.25,
            gate_db: 10.0,
            subcarrier_fraction: 0.8,
            delay_offset_m: 0.0,
        }
    }
}

impl BeamOptions {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.pdp_zero_pad >= 2, Validation, "pdp_zero_pad must be >= 2");
        ensure!(self.nve_window_s > 0.0, Validation, "nve_window_s must be positive");
        ensure!(self.gate_db.is_finite(), Validation, "gate_db must be finite");
        ensure!(
            self.subcarrier_fraction > 0.0 && self.subcarrier_fraction <= 1.0,
            Validation,
            "subcarrier_fraction must lie in (0, 1]"
        );
        ensure!(self.delay_offset_m.is_finite(), Validation, "delay_offset_m must be finite");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamScore {
    pub rx: u16,
    pub nve: f64,
    pub mean_amplitude: f64,
    pub pdp_peak_db: f64,
    /// Passed the delay-profile gate.
    pub gated: bool,
}

/// Peak-to-median ratio (dB) of the mean delay profile over about 100 symbols.
pub fn pdp_peak_db(c: &CsiCapture, pair: BeamPair, opts: &BeamOptions) -> Result<f64> {
    let stride = (c.meta().n_symbols / 100).max(1);
    let profile = mean_pdp(c, pair, opts.pdp_zero_pad, stride)?;
    Ok(10.0 * profile.peak_to_median().log10())
}

/// Score one pair from its already preprocessed series.
pub fn score_beam(
    c: &CsiCapture,
    pair: BeamPair,
    series: &[PhaseSeries],
    opts: &BeamOptions,
) -> Result<BeamScore> {
    let peak_db = pdp_peak_db(c, pair, opts)?;
    let m = c.slice_pair(pair)?;
    let mean_amplitude = m.data.iter().map(|h| h.norm()).sum::<f64>() / m.data.len() as f64;
    Ok(BeamScore {
        rx: pair.rx,
        nve: nve(&variance_matrix(series, opts.nve_window_s)?)?,
        mean_amplitude,
        pdp_peak_db: peak_db,
        gated: peak_db >= opts.gate_db,
    })
}

/// Order scores: gated beams first, then by NVE, then by mean amplitude, then id.
pub fn rank_scores(scores: &mut [BeamScore]) {
    scores.sort_by(|a, b| {
        b.gated
            .cmp(&a.gated)
            .then(b.nve.total_cmp(&a.nve))
            .then(b.mean_amplitude.total_cmp(&a.mean_amplitude))
            .then(a.rx.cmp(&b.rx))
    });
}

/// All Rx beams of `tx`, best first.
pub fn rank_beams(
    c: &CsiCapture,
    tx: u16,
    prep: &PrepOptions,
    opts: &BeamOptions,
) -> Result<Vec<BeamScore>> {
    let meta = c.meta();
    ensure!(
        tx >= 1 && tx as usize <= meta.n_tx_beams,
        Range,
        "tx beam {tx} outside 1..={}",
        meta.n_tx_beams
    );
    let mut scores = (1..=meta.n_rx_beams as u16)
        .into_par_iter()
        .map(|rx| {
            let pair = BeamPair::new(tx, rx);
            let series = preprocess_pair(c, pair, prep)?;
            score_beam(c, pair, &series, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    rank_scores(&mut scores);
    Ok(scores)
}

/// Top `k` Rx beam ids of `tx`.
pub fn select_beams(
    c: &CsiCapture,
    tx: u16,
    k: usize,
    prep: &PrepOptions,
    opts: &BeamOptions,
) -> Result<Vec<u16>> {
    ensure!(
        k <= c.meta().n_rx_beams,
        Validation,
        "k = {k} exceeds {} rx beams",
        c.meta().n_rx_beams
    );
    Ok(rank_beams(c, tx, prep, opts)?
        .into_iter()
        .take(k)
        .map(|s| s.rx)
        .collect())
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Field of view in degrees needed to cover a width `width` at distance `d`.
pub fn fov(width: f64, d: f64) -> Result<f64> {
    ensure!(d > 0.0, Validation, "distance must be positive");
    ensure!(width >= 0.0, Validation, "width must be non-negative");
    Ok((2.0 * (width / (2.0 * d)).atan()).to_degrees())
}

/// Angle off boresight in degrees of a point `cross_range` to the side at depth `d`.
pub fn incidence_angle(cross_range: f64, d: f64) -> Result<f64> {
    ensure!(d > 0.0, Validation, "distance must be positive");
    Ok((cross_range / d).atan().to_degrees())
}
