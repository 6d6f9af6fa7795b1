//! Per-symbol phase-error estimation and compensation.
//!
//! The error model over the centered subcarrier index `k` is
//!
//! ```text
//! zeta_iq(k) = atan(eps_g * sin(k xi_t + eps_p) / cos(k xi_t))
//! model(k)   = zeta_iq(k) + k * slope + cpo
//! ```
//!
//! A measured symbol is `H * exp(-j model(k))`; compensation multiplies by
//! `exp(+j model(k))`.
//!
//! Detection compares each symbol against a per-subcarrier reference built from
//! its temporal neighbours, so geometry and slow chest motion cancel and only the
//! hardware error plus noise remain. All comparisons use wrapped phase differences
//! relative to the symbol under test; nothing is unwrapped over time.

mod lm;
mod loess;

pub use lm::{levenberg_marquardt, LmOptions, LmOutcome, StopReason};
pub use loess::smooth_rloess;

use std::f64::consts::FRAC_PI_2;

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture::{BeamPair, CsiCapture, PairMatrix};
use crate::dsp::{median, wrap};
use crate::error::{ensure, Result};
use crate::prep::unwrap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseErrorParams {
    pub eps_g: f64,
    pub eps_p: f64,
    pub xi_t: f64,
    pub sfo_sto_slope: f64,
    pub cpo: f64,
}

impl Default for PhaseErrorParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl PhaseErrorParams {
    /// No phase error: unit gain ratio, everything else zero.
    pub fn identity() -> Self {
        PhaseErrorParams {
            eps_g: 1.0,
            eps_p: 0.0,
            xi_t: 0.0,
            sfo_sto_slope: 0.0,
            cpo: 0.0,
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.eps_g, self.eps_p, self.xi_t, self.sfo_sto_slope, self.cpo]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        PhaseErrorParams {
            eps_g: a[0],
            eps_p: a[1],
            xi_t: a[2],
            sfo_sto_slope: a[3],
            cpo: a[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.to_array().iter().all(|v| v.is_finite()),
            Validation,
            "non-finite phase-error parameter"
        );
        ensure!(self.eps_g > 0.0, Validation, "eps_g must be positive");
        Ok(())
    }
}

/// IQ-imbalance phase term. Where `cos(k xi_t) == 0` the signed limit `+-pi/2`
/// is returned.
pub fn iq_phase_shift(p: &PhaseErrorParams, k: f64) -> f64 {
    let num = p.eps_g * (k * p.xi_t + p.eps_p).sin();
    let den = (k * p.xi_t).cos();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            FRAC_PI_2.copysign(num)
        }
    } else {
        (num / den).atan()
    }
}

pub fn model_residual(p: &PhaseErrorParams, k: f64) -> f64 {
    iq_phase_shift(p, k) + k * p.sfo_sto_slope + p.cpo
}

/// Centered subcarrier offsets `n - (N-1)/2`.
pub fn subcarrier_offsets(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 - (n as f64 - 1.0) / 2.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: PhaseErrorParams,
    /// rad.
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Least-squares line through `(x, y)`: `(intercept, slope)`.
pub fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

fn rms(x: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in x {
        s += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Fit the error model to a residual phase vector (unwrapped along subcarriers,
/// indexed by centered offset).
pub fn fit_phase_errors(
    residual_phase: &[f64],
    init: &PhaseErrorParams,
    opts: &LmOptions,
) -> Result<FitReport> {
    ensure!(
        residual_phase.len() >= 5,
        Validation,
        "need at least 5 subcarriers, got {}",
        residual_phase.len()
    );
    ensure!(
        residual_phase.iter().all(|v| v.is_finite()),
        Validation,
        "non-finite residual phase"
    );
    init.validate()?;
    let k = subcarrier_offsets(residual_phase.len());
    // Slope and CPO enter linearly: for any IQ triple they are the least-squares
    // line through what the IQ term leaves over, so LM only searches the IQ terms.
    let profile = |iq: &[f64; 3], iq_part: &mut Vec<f64>| -> PhaseErrorParams {
        let mut p = PhaseErrorParams {
            eps_g: iq[0],
            eps_p: iq[1],
            xi_t: iq[2],
            sfo_sto_slope: 0.0,
            cpo: 0.0,
        };
        iq_part.clear();
        iq_part.extend(k.iter().zip(residual_phase).map(|(&k, &y)| y - iq_phase_shift(&p, k)));
        let (cpo, slope) = line_fit(&k, iq_part);
        p.sfo_sto_slope = slope;
        p.cpo = cpo;
        p
    };
    // The IQ term is linear in k at xi_t = eps_p = 0, which the line absorbs, so
    // the projected Jacobian vanishes there. A few small skews break the tie.
    let starts = [0.0, 2e-3, -2e-3, 1e-2, -1e-2].map(|dxi| [init.eps_g, init.eps_p, init.xi_t + dxi]);
    let out = starts
        .iter()
        .map(|&start| {
            levenberg_marquardt(
                |iq: &[f64; 3], r: &mut [f64]| {
                    let mut rest = Vec::with_capacity(k.len());
                    let p = profile(iq, &mut rest);
                    for i in 0..k.len() {
                        r[i] = residual_phase[i] - model_residual(&p, k[i]);
                    }
                },
                k.len(),
                start,
                opts,
            )
        })
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .unwrap();
    let params = profile(&out.params, &mut Vec::new());
    Ok(FitReport {
        params,
        residual_rms: (out.cost / k.len() as f64).sqrt(),
        iterations: out.iterations,
        converged: out.converged(),
    })
}

/// Multiply a subcarrier row by `exp(+j model(k))`.
pub fn compensate_row(row: &mut [Complex64], p: &PhaseErrorParams) {
    rotate_row(row, p, 1.0);
}

/// Multiply a subcarrier row by `exp(-j model(k))`, the forward error model.
pub fn apply_impairment_row(row: &mut [Complex64], p: &PhaseErrorParams) {
    rotate_row(row, p, -1.0);
}

fn rotate_row(row: &mut [Complex64], p: &PhaseErrorParams, sign: f64) {
    let k = subcarrier_offsets(row.len());
    for (h, k) in row.iter_mut().zip(k) {
        *h *= Complex64::from_polar(1.0, sign * model_residual(p, k));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolCorrection {
    pub pair: BeamPair,
    pub symbol: usize,
    pub params: PhaseErrorParams,
}

/// Compensate the listed symbols; everything else is copied unchanged.
pub fn compensate(c: &CsiCapture, corrections: &[SymbolCorrection]) -> Result<CsiCapture> {
    let mut out = c.clone();
    let meta = c.meta().clone();
    for corr in corrections {
        corr.params.validate()?;
        meta.check_pair(corr.pair)?;
        ensure!(corr.symbol < meta.n_symbols, Range, "symbol {} out of range", corr.symbol);
        let offset =
            (corr.symbol * meta.n_pairs() + meta.pair_index(corr.pair)) * meta.n_subcarriers;
        let slot = &mut out.data_mut()[offset..offset + meta.n_subcarriers];
        let mut row: Vec<Complex64> = slot
            .iter()
            .map(|h| Complex64::new(h.re as f64, h.im as f64))
            .collect();
        compensate_row(&mut row, &corr.params);
        for (dst, src) in slot.iter_mut().zip(&row) {
            *dst = Complex32::new(src.re as f32, src.im as f32);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Detection and per-pair calibration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibOptions {
    /// Minimum RMS deviation (rad) from the reference for a symbol to be fitted.
    pub detect_threshold: f64,
    /// The threshold is raised to this multiple of the pair's median deviation,
    /// so that noise alone does not trigger fits.
    pub noise_factor: f64,
    /// Half-width (symbols) of the temporal reference window.
    pub reference_half_window: usize,
    /// Pairs whose median deviation exceeds this (rad) carry no usable phase and
    /// are left untouched.
    pub max_noise_rms: f64,
    /// Try previously fitted parameters before running a new fit.
    pub reuse_fits: bool,
    /// Apply robust LOESS across subcarriers to the phase of corrected symbols.
    pub smoothing_span: Option<f64>,
    pub lm: LmOptions,
}

impl Default for CalibOptions {
    fn default() -> Self {
        CalibOptions {
            detect_threshold: 0.05,
            noise_factor: 1.5,
            reference_half_window: 16,
            max_noise_rms: 0.5,
            reuse_fits: true,
            smoothing_span: None,
            lm: LmOptions::default(),
        }
    }
}

impl CalibOptions {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.detect_threshold > 0.0, Validation, "detect_threshold must be positive");
        ensure!(self.noise_factor >= 0.0, Validation, "noise_factor must be non-negative");
        ensure!(self.reference_half_window >= 1, Validation, "reference window must be >= 1");
        ensure!(self.max_noise_rms > 0.0, Validation, "max_noise_rms must be positive");
        if let Some(span) = self.smoothing_span {
            ensure!(span > 0.0 && span <= 1.0, Validation, "smoothing_span must lie in (0, 1]");
        }
        ensure!(self.lm.max_iterations >= 1, Validation, "LM needs at least one iteration");
        ensure!(self.lm.diff_step > 0.0, Validation, "LM diff_step must be positive");
        Ok(())
    }
}

const FIT_CACHE: usize = 8;
/// A cached fit is reused when it explains a symbol within this factor of the
/// residual it achieved on its own symbol.
const REUSE_SLACK: f64 = 1.15;
const REFINE_PASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolFit {
    pub pair: BeamPair,
    pub symbol: usize,
    /// RMS deviation from the reference before correction (rad).
    pub deviation_rms: f64,
    pub report: FitReport,
    /// True when parameters fitted on an earlier symbol were reused.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCalibration {
    pub pair: BeamPair,
    /// Median per-symbol RMS deviation from the reference (rad).
    pub noise_rms: f64,
    pub threshold: f64,
    pub corrected: usize,
    /// True when the pair was too noisy to calibrate.
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub pairs: Vec<PairCalibration>,
    pub fits: Vec<SymbolFit>,
}

impl CalibrationReport {
    pub fn corrections(&self) -> Vec<SymbolCorrection> {
        self.fits
            .iter()
            .map(|f| SymbolCorrection {
                pair: f.pair,
                symbol: f.symbol,
                params: f.report.params,
            })
            .collect()
    }
}

/// Reference phase of one block of symbols at its centre.
struct Anchor {
    centre: f64,
    phase: Vec<f64>,
}

/// One anchor per block of `block` symbols. Each subcarrier is centred on the
/// circular mean of the members, then takes the median offset (`flagged` absent)
/// or the mean offset of the clean members.
fn block_anchors(phase: &[Vec<f64>], flagged: Option<&[bool]>, block: usize) -> Vec<Anchor> {
    let ns = phase.len();
    let nf = phase[0].len();
    let mut buf = Vec::with_capacity(block);
    (0..ns)
        .step_by(block)
        .filter_map(|start| {
            let members: Vec<usize> = (start..(start + block).min(ns))
                .filter(|&j| flagged.is_none_or(|f| !f[j]))
                .collect();
            if members.len() < 2 {
                return None;
            }
            let centre = members.iter().sum::<usize>() as f64 / members.len() as f64;
            let phase = (0..nf)
                .map(|n| {
                    let c = members
                        .iter()
                        .map(|&j| Complex64::from_polar(1.0, phase[j][n]))
                        .sum::<Complex64>()
                        .arg();
                    buf.clear();
                    buf.extend(members.iter().map(|&j| wrap(phase[j][n] - c)));
                    let offset = match flagged {
                        None => median(&buf),
                        Some(_) => buf.iter().sum::<f64>() / buf.len() as f64,
                    };
                    c + offset
                })
                .collect();
            Some(Anchor { centre, phase })
        })
        .collect()
}

/// Linear inter- or extrapolation of the anchors `a` and `b` at position `t`.
fn interpolate(a: &Anchor, b: &Anchor, t: f64, out: &mut [f64]) {
    let frac = (t - a.centre) / (b.centre - a.centre);
    for ((o, &pa), &pb) in out.iter_mut().zip(&a.phase).zip(&b.phase) {
        *o = pa + frac * wrap(pb - pa);
    }
}

/// Replace anchors that disagree with the line through their neighbours. This
/// catches blocks where impaired symbols were a local majority.
fn repair_anchors(anchors: &mut [Anchor], threshold: f64) {
    let na = anchors.len();
    if na < 3 {
        return;
    }
    let nf = anchors[0].phase.len();
    let mut line = vec![0.0; nf];
    let mut repairs = Vec::new();
    for i in 0..na {
        let (a, b) = match i {
            0 => (1, 2),
            i if i == na - 1 => (na - 3, na - 2),
            i => (i - 1, i + 1),
        };
        interpolate(&anchors[a], &anchors[b], anchors[i].centre, &mut line);
        let misfit = rms(line.iter().zip(&anchors[i].phase).map(|(l, p)| wrap(p - l)));
        if misfit > threshold {
            repairs.push((i, line.clone()));
        }
    }
    for (i, phase) in repairs {
        anchors[i].phase = phase;
    }
}

/// RMS over subcarriers of each symbol's offset from the interpolated anchors.
fn anchor_deviation(phase: &[Vec<f64>], anchors: &[Anchor]) -> Vec<f64> {
    let nf = phase[0].len();
    let mut reference = vec![0.0; nf];
    let mut next = 0;
    phase
        .iter()
        .enumerate()
        .map(|(s, row)| {
            let t = s as f64;
            if anchors.len() == 1 {
                reference.copy_from_slice(&anchors[0].phase);
            } else {
                while next + 1 < anchors.len() - 1 && anchors[next + 1].centre < t {
                    next += 1;
                }
                interpolate(&anchors[next], &anchors[next + 1], t, &mut reference);
            }
            rms(reference.iter().zip(row).map(|(r, p)| wrap(p - r)))
        })
        .collect()
}

/// Expected phase-noise level of every symbol relative to the median symbol.
/// Phase noise grows as the amplitude drops, e.g. where paths interfere.
fn noise_scale(m: &PairMatrix) -> Vec<f64> {
    let level: Vec<f64> = (0..m.n_symbols)
        .map(|s| {
            let row = m.row(s);
            (row.iter().map(|h| 1.0 / h.norm_sqr().max(f64::MIN_POSITIVE)).sum::<f64>() / row.len() as f64).sqrt()
        })
        .collect();
    let mid = median(&level);
    if !(mid > 0.0 && mid.is_finite()) {
        return vec![1.0; level.len()];
    }
    level.iter().map(|l| (l / mid).min(1e6)).collect()
}

/// Per-subcarrier offset of the neighbours' linear trend from symbol `s`, i.e.
/// the reference minus the measured phase, unwrapped along subcarriers.
fn reference_offset(phase: &[Vec<f64>], s: usize, neighbours: &[usize]) -> Vec<f64> {
    let n = neighbours.len() as f64;
    let t: Vec<f64> = neighbours.iter().map(|&j| j as f64 - s as f64).collect();
    let tm = t.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|v| (v - tm) * (v - tm)).sum();
    let weights: Vec<f64> = t
        .iter()
        .map(|&tj| {
            if stt > 0.0 {
                1.0 / n - tm * (tj - tm) / stt
            } else {
                1.0 / n
            }
        })
        .collect();
    let mut d = vec![0.0; neighbours.len()];
    let offsets: Vec<f64> = (0..phase[s].len())
        .map(|sc| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (v, &j) in d.iter_mut().zip(neighbours) {
                *v = wrap(phase[j][sc] - phase[s][sc]);
                acc += Complex64::from_polar(1.0, *v);
            }
            // Centre on the circular mean so the regression never straddles +-pi.
            let c = acc.arg();
            d.iter().zip(&weights).map(|(v, w)| (c + wrap(v - c)) * w).sum()
        })
        .collect();
    unwrap(&offsets.iter().map(|&v| wrap(v)).collect::<Vec<_>>())
}

fn clean_neighbours(flagged: &[bool], s: usize, reach: usize) -> Vec<usize> {
    let lo = s.saturating_sub(reach);
    let hi = (s + reach).min(flagged.len() - 1);
    (lo..=hi).filter(|&j| j != s && !flagged[j]).collect()
}

/// Calibrate one pair in place.
pub fn calibrate_matrix(
    m: &mut PairMatrix,
    pair: BeamPair,
    opts: &CalibOptions,
) -> Result<(PairCalibration, Vec<SymbolFit>)> {
    opts.validate()?;
    let ns = m.n_symbols;
    let nf = m.n_subcarriers;
    let mut summary = PairCalibration {
        pair,
        noise_rms: 0.0,
        threshold: opts.detect_threshold,
        corrected: 0,
        skipped: false,
    };
    if ns < 3 || nf < 5 {
        summary.skipped = true;
        return Ok((summary, Vec::new()));
    }

    let phase: Vec<Vec<f64>> = (0..ns).map(|s| m.row(s).iter().map(|h| h.arg()).collect()).collect();
    let half = opts.reference_half_window.min(ns - 1);
    let block = 2 * half.max(1);
    let scale = noise_scale(m);
    let mut anchors = block_anchors(&phase, None, block);
    let deviation = anchor_deviation(&phase, &anchors);
    let noise = median(&deviation.iter().zip(&scale).map(|(d, g)| d / g).collect::<Vec<_>>());
    summary.noise_rms = noise;
    if !(noise <= opts.max_noise_rms) {
        summary.skipped = true;
        return Ok((summary, Vec::new()));
    }
    let threshold = opts.detect_threshold.max(opts.noise_factor * noise);
    summary.threshold = threshold;
    let thresholds: Vec<f64> = scale
        .iter()
        .map(|g| opts.detect_threshold.max(opts.noise_factor * noise * g))
        .collect();
    let flag = |deviation: Vec<f64>| -> Vec<bool> { deviation.iter().zip(&thresholds).map(|(d, t)| d > t).collect() };
    repair_anchors(&mut anchors, threshold);
    let mut flagged = flag(anchor_deviation(&phase, &anchors));
    for _ in 0..REFINE_PASSES {
        let mut anchors = block_anchors(&phase, Some(&flagged), block);
        if anchors.is_empty() {
            break;
        }
        repair_anchors(&mut anchors, threshold);
        flagged = flag(anchor_deviation(&phase, &anchors));
    }

    let k = subcarrier_offsets(nf);
    // Recently fitted parameters with the residual of their own fit.
    let mut cache: Vec<(PhaseErrorParams, f64)> = Vec::new();
    let mut fits = Vec::new();
    for s in (0..ns).filter(|&s| flagged[s]) {
        let threshold = thresholds[s];
        let mut neighbours = clean_neighbours(&flagged, s, 2 * half);
        if neighbours.len() < 2 {
            neighbours = clean_neighbours(&flagged, s, 8 * half);
        }
        if neighbours.len() < 2 {
            continue;
        }
        let delta = reference_offset(&phase, s, &neighbours);
        let deviation_rms = rms(delta.iter().map(|&d| wrap(d)));
        if deviation_rms <= threshold {
            continue;
        }

        let reused = if opts.reuse_fits {
            cache.iter().find_map(|(p, own)| {
                let r = rms(k.iter().zip(&delta).map(|(&k, &d)| wrap(d - model_residual(p, k))));
                (r <= threshold && r <= REUSE_SLACK * own).then_some(FitReport {
                    params: *p,
                    residual_rms: r,
                    iterations: 0,
                    converged: true,
                })
            })
        } else {
            None
        };
        let (report, was_reused) = match reused {
            Some(r) => (r, true),
            None => {
                let (cpo, slope) = line_fit(&k, &delta);
                let init = PhaseErrorParams {
                    sfo_sto_slope: slope,
                    cpo,
                    ..PhaseErrorParams::identity()
                };
                let report = fit_phase_errors(&delta, &init, &opts.lm)?;
                if opts.reuse_fits && report.residual_rms <= threshold {
                    cache.insert(0, (report.params, report.residual_rms));
                    cache.truncate(FIT_CACHE);
                }
                (report, false)
            }
        };

        let row = m.row_mut(s);
        compensate_row(row, &report.params);
        if let Some(span) = opts.smoothing_span {
            smooth_row_phase(row, span)?;
        }
        fits.push(SymbolFit {
            pair,
            symbol: s,
            deviation_rms,
            report,
            reused: was_reused,
        });
    }
    summary.corrected = fits.len();
    Ok((summary, fits))
}

fn smooth_row_phase(row: &mut [Complex64], span: f64) -> Result<()> {
    let phase = unwrap(&row.iter().map(|h| h.arg()).collect::<Vec<_>>());
    let smooth = smooth_rloess(&phase, span)?;
    for (h, p) in row.iter_mut().zip(smooth) {
        *h = Complex64::from_polar(h.norm(), p);
    }
    Ok(())
}

/// Detect, fit and compensate phase errors on every pair.
pub fn calibrate(c: &CsiCapture, opts: &CalibOptions) -> Result<(CsiCapture, CalibrationReport)> {
    let pairs: Vec<BeamPair> = c.meta().pairs().collect();
    calibrate_pairs(c, &pairs, opts)
}

/// As [`calibrate`], restricted to `pairs`; other pairs are copied unchanged.
pub fn calibrate_pairs(
    c: &CsiCapture,
    pairs: &[BeamPair],
    opts: &CalibOptions,
) -> Result<(CsiCapture, CalibrationReport)> {
    opts.validate()?;
    let results: Vec<(BeamPair, PairMatrix, PairCalibration, Vec<SymbolFit>)> = pairs
        .par_iter()
        .map(|&pair| {
            let mut m = c.slice_pair(pair)?;
            let (summary, fits) = calibrate_matrix(&mut m, pair, opts)?;
            Ok((pair, m, summary, fits))
        })
        .collect::<Result<_>>()?;
    let mut out = c.clone();
    let mut report = CalibrationReport::default();
    for (pair, m, summary, fits) in results {
        if !fits.is_empty() {
            out.set_pair(pair, &m)?;
        }
        report.pairs.push(summary);
        report.fits.extend(fits);
    }
    Ok((out, report))
}
