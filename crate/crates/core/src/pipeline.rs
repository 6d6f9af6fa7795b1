//! End-to-end runs: calibrated capture in, rate estimates out, plus the
//! evaluation harness against synthetic ground truth.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beams::{pdp_peak_db, rank_scores, score_beam, select_subcarriers, BeamScore};
use crate::calib::calibrate_pairs;
use crate::capture::{BeamPair, CsiCapture};
use crate::config::Config;
use crate::error::{ensure, Error, Result};
use crate::prep::{preprocess_pair, PhaseSeries};
use crate::synth::{generate, GroundTruth, ScenarioSpec};
use crate::vitals::{
    estimate_dwt, estimate_fft, estimate_multi, estimate_single, Method, SingleEstimate, VitalEstimate,
    VitalKind,
};

/// Which Rx beams of a Tx beam feed the estimator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RxBeams {
    /// Single mode: the best-ranked beam. Multi mode: every gated beam.
    Auto,
    List(Vec<u16>),
}

impl std::str::FromStr for RxBeams {
    type Err = Error;

    /// `auto` or a comma-separated list of Rx ids.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(RxBeams::Auto);
        }
        let list = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u16>()
                    .map_err(|_| Error::Validation(format!("bad Rx beam id {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ensure!(!list.is_empty(), Validation, "empty Rx beam list");
        Ok(RxBeams::List(list))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamAnalysis {
    pub pair: BeamPair,
    pub score: BeamScore,
    /// Subcarrier indices passing the variance selection.
    pub selected: Vec<usize>,
    pub series: Vec<PhaseSeries>,
}

impl BeamAnalysis {
    pub fn selected_series(&self) -> Vec<PhaseSeries> {
        self.selected.iter().map(|&i| self.series[i].clone()).collect()
    }
}

/// Preprocess, score and select subcarriers on one pair.
pub fn analyze_beam(c: &CsiCapture, pair: BeamPair, cfg: &Config) -> Result<BeamAnalysis> {
    c.meta().check_pair(pair)?;
    let series = preprocess_pair(c, pair, &cfg.prep)?;
    let score = score_beam(c, pair, &series, &cfg.beams)?;
    let selected = select_subcarriers(&series, cfg.beams.subcarrier_fraction)?;
    Ok(BeamAnalysis {
        pair,
        score,
        selected,
        series,
    })
}

/// Best first.
fn rank_analyses(beams: &mut [BeamAnalysis]) {
    let mut scores: Vec<BeamScore> = beams.iter().map(|a| a.score.clone()).collect();
    rank_scores(&mut scores);
    beams.sort_by_key(|a| scores.iter().position(|s| s.rx == a.pair.rx).unwrap());
}

/// [`analyze_beam`] on the Rx beams of `tx` (all of them when `rx` is `None`),
/// best beam first. The capture is used as given.
pub fn analyze_beams(c: &CsiCapture, tx: u16, rx: Option<&[u16]>, cfg: &Config) -> Result<Vec<BeamAnalysis>> {
    let rx: Vec<u16> = match rx {
        Some(list) => list.to_vec(),
        None => (1..=c.meta().n_rx_beams as u16).collect(),
    };
    ensure!(!rx.is_empty(), Validation, "no Rx beams requested");
    let mut out = rx
        .par_iter()
        .map(|&r| analyze_beam(c, BeamPair::new(tx, r), cfg))
        .collect::<Result<Vec<_>>>()?;
    rank_analyses(&mut out);
    Ok(out)
}

/// Delay-profile gate of every Rx beam of `tx`: `(rx, peak_db, gated)`.
pub fn gate_beams(c: &CsiCapture, tx: u16, cfg: &Config) -> Result<Vec<(u16, f64, bool)>> {
    (1..=c.meta().n_rx_beams as u16)
        .into_par_iter()
        .map(|rx| {
            let db = pdp_peak_db(c, BeamPair::new(tx, rx), &cfg.beams)?;
            Ok((rx, db, db >= cfg.beams.gate_db))
        })
        .collect()
}

/// Beams worth analysing: the explicit list, or the gated beams (every beam when
/// none passes the gate).
fn candidates(c: &CsiCapture, tx: u16, rx: &RxBeams, cfg: &Config) -> Result<Vec<u16>> {
    Ok(match rx {
        RxBeams::List(list) => list.clone(),
        RxBeams::Auto => {
            let gate = gate_beams(c, tx, cfg)?;
            let gated: Vec<u16> = gate.iter().filter(|g| g.2).map(|g| g.0).collect();
            if gated.is_empty() {
                gate.iter().map(|g| g.0).collect()
            } else {
                gated
            }
        }
    })
}

/// Calibrate the candidate beams of `tx` and analyse them, best first.
pub fn prepare_beams(c: &CsiCapture, tx: u16, rx: &RxBeams, cfg: &Config) -> Result<Vec<BeamAnalysis>> {
    ensure!(
        tx >= 1 && tx as usize <= c.meta().n_tx_beams,
        Range,
        "tx beam {tx} outside 1..={}",
        c.meta().n_tx_beams
    );
    let rx_list = candidates(c, tx, rx, cfg)?;
    ensure!(!rx_list.is_empty(), Validation, "no Rx beams requested");
    let pairs: Vec<BeamPair> = rx_list.iter().map(|&r| BeamPair::new(tx, r)).collect();
    let (calibrated, _) = calibrate_pairs(c, &pairs, &cfg.calibration)?;
    analyze_beams(&calibrated, tx, Some(&rx_list), cfg)
}

fn chosen<'a>(beams: &'a [BeamAnalysis], rx: &RxBeams, multi: bool) -> Vec<&'a BeamAnalysis> {
    match rx {
        RxBeams::List(_) => beams.iter().collect(),
        RxBeams::Auto if multi => {
            let gated: Vec<&BeamAnalysis> = beams.iter().filter(|b| b.score.gated).collect();
            if gated.is_empty() {
                beams.iter().take(1).collect()
            } else {
                gated
            }
        }
        RxBeams::Auto => beams.iter().take(1).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleRun {
    pub tx: u16,
    pub rx: Vec<u16>,
    /// Scores of the analysed beams, best first.
    pub beams: Vec<BeamScore>,
    pub estimate: SingleEstimate,
}

/// Single-person estimate. The analysed pairs are calibrated first.
pub fn run_single(c: &CsiCapture, tx: u16, rx: &RxBeams, cfg: &Config) -> Result<SingleRun> {
    let beams = prepare_beams(c, tx, rx, cfg)?;
    let picked = chosen(&beams, rx, false);
    let series: Vec<PhaseSeries> = picked.iter().flat_map(|b| b.selected_series()).collect();
    Ok(SingleRun {
        tx,
        rx: picked.iter().map(|b| b.pair.rx).collect(),
        beams: beams.iter().map(|b| b.score.clone()).collect(),
        estimate: estimate_single(&series, &cfg.vitals)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiRun {
    pub tx: u16,
    pub rx: Vec<u16>,
    pub beams: Vec<BeamScore>,
    pub breath: Vec<VitalEstimate>,
    pub heart: Vec<VitalEstimate>,
}

/// Multi-person estimate. Subcarriers are selected per beam and pooled across
/// the chosen beams.
pub fn run_multi(c: &CsiCapture, tx: u16, rx: &RxBeams, cfg: &Config) -> Result<MultiRun> {
    let beams = prepare_beams(c, tx, rx, cfg)?;
    let picked = chosen(&beams, rx, true);
    let series: Vec<PhaseSeries> = picked.iter().flat_map(|b| b.selected_series()).collect();
    Ok(MultiRun {
        tx,
        rx: picked.iter().map(|b| b.pair.rx).collect(),
        beams: beams.iter().map(|b| b.score.clone()).collect(),
        breath: estimate_multi(&series, VitalKind::Breath, &cfg.vitals)?,
        heart: estimate_multi(&series, VitalKind::Heart, &cfg.vitals)?,
    })
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEval {
    pub pair: BeamPair,
    /// Index of the target the pair sees, if any.
    pub target: Option<usize>,
    pub gated_trials: usize,
    /// Trials where the estimator failed.
    pub failures: usize,
    pub breath_rmse_bpm: Option<f64>,
    pub heart_rmse_bpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub trials: usize,
    pub per_beam: Vec<BeamEval>,
    /// Lowest breath RMSE among pairs that see a target; ties go to the lower Rx id.
    pub best_beam: Option<BeamPair>,
    pub method: Method,
    pub runtime_s: f64,
}

/// Lowest breath RMSE; ties go to the lower Rx id.
fn best_beam(per_beam: &[BeamEval]) -> Option<BeamPair> {
    per_beam
        .iter()
        .filter_map(|b| b.breath_rmse_bpm.map(|r| (b.pair, r)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.rx.cmp(&b.0.rx)))
        .map(|(p, _)| p)
}

fn rmse(errors: &[f64]) -> Option<f64> {
    (!errors.is_empty()).then(|| (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Single-person estimates on every pair that sees a target, over `trials` seeds
/// starting at the scenario seed. Gate counts cover every pair of the Tx beams
/// involved.
pub fn evaluate(spec: &ScenarioSpec, name: &str, trials: usize, cfg: &Config) -> Result<EvalReport> {
    ensure!(trials >= 1, Validation, "trials must be >= 1");
    spec.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let mut tx_beams: Vec<u16> = spec.targets.iter().flat_map(|t| t.tx_beams_hit.iter().copied()).collect();
    tx_beams.sort_unstable();
    tx_beams.dedup();
    let pairs: Vec<BeamPair> = tx_beams
        .iter()
        .flat_map(|&tx| (1..=spec.meta.n_rx_beams as u16).map(move |rx| BeamPair::new(tx, rx)))
        .collect();
    let target_of = |pair: BeamPair| spec.targets.iter().position(|t| t.hits(pair));

    let mut breath_err = vec![Vec::new(); pairs.len()];
    let mut heart_err = vec![Vec::new(); pairs.len()];
    let mut failures = vec![0usize; pairs.len()];
    let mut gated = vec![0usize; pairs.len()];
    for t in 0..trials {
        let mut trial = spec.clone();
        trial.rng_seed = spec.rng_seed.wrapping_add(t as u64);
        let (raw, truth) = generate(&trial)?;
        for &tx in &tx_beams {
            // Pairs without a target have no truth to score against.
            let rx: Vec<u16> = (1..=spec.meta.n_rx_beams as u16)
                .filter(|&rx| target_of(BeamPair::new(tx, rx)).is_some())
                .collect();
            for (rx, _, g) in gate_beams(&raw, tx, cfg)? {
                let i = pairs.iter().position(|&p| p == BeamPair::new(tx, rx)).unwrap();
                gated[i] += g as usize;
            }
            if rx.is_empty() {
                continue;
            }
            for b in prepare_beams(&raw, tx, &RxBeams::List(rx), cfg)? {
                let i = pairs.iter().position(|&p| p == b.pair).unwrap();
                let Some(target) = target_of(b.pair) else { continue };
                match estimate_single(&b.selected_series(), &cfg.vitals) {
                    Ok(e) => {
                        let tt = &truth.targets[target];
                        breath_err[i].push(e.breath.rate_bpm - tt.breath_rate_bpm);
                        heart_err[i].push(e.heart.rate_bpm - tt.heart_rate_bpm);
                    }
                    Err(e) if e.is_estimation() => failures[i] += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let per_beam: Vec<BeamEval> = pairs
        .iter()
        .enumerate()
        .map(|(i, &pair)| BeamEval {
            pair,
            target: target_of(pair),
            gated_trials: gated[i],
            failures: failures[i],
            breath_rmse_bpm: rmse(&breath_err[i]),
            heart_rmse_bpm: rmse(&heart_err[i]),
        })
        .collect();
    Ok(EvalReport {
        scenario: name.to_string(),
        trials,
        best_beam: best_beam(&per_beam),
        per_beam,
        method: Method::Dwt,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTrial {
    pub seed: u64,
    pub pair: BeamPair,
    pub truth_bpm: f64,
    pub dwt_bpm: Option<f64>,
    pub fft_native_bpm: Option<f64>,
    pub fft_padded_bpm: Option<f64>,
}

impl MethodTrial {
    fn err(&self, v: Option<f64>) -> Option<f64> {
        v.map(|v| (v - self.truth_bpm).abs())
    }

    pub fn dwt_error(&self) -> Option<f64> {
        self.err(self.dwt_bpm)
    }

    pub fn fft_native_error(&self) -> Option<f64> {
        self.err(self.fft_native_bpm)
    }

    pub fn fft_padded_error(&self) -> Option<f64> {
        self.err(self.fft_padded_bpm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub kind: VitalKind,
    pub fft_size: usize,
    pub trials: Vec<MethodTrial>,
}

/// Breath or heart rate of the first target by DWT, native-resolution FFT and
/// zero-padded FFT on the automatically selected beam.
pub fn compare_methods(
    spec: &ScenarioSpec,
    kind: VitalKind,
    trials: usize,
    cfg: &Config,
) -> Result<MethodComparison> {
    ensure!(trials >= 1, Validation, "trials must be >= 1");
    ensure!(!spec.targets.is_empty(), Validation, "scenario has no target");
    let target = &spec.targets[0];
    let tx = *target
        .tx_beams_hit
        .iter()
        .next()
        .ok_or_else(|| Error::Validation("first target hits no Tx beam".into()))?;
    let truth_hz = match kind {
        VitalKind::Breath => target.breath_rate,
        VitalKind::Heart => target.heart_rate,
    };
    let ok = |r: Result<VitalEstimate>| -> Result<Option<f64>> {
        match r {
            Ok(e) => Ok(Some(e.rate_bpm)),
            Err(e) if e.is_estimation() => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut rows = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut trial = spec.clone();
        trial.rng_seed = spec.rng_seed.wrapping_add(t as u64);
        let (raw, _) = generate(&trial)?;
        let beams = prepare_beams(&raw, tx, &RxBeams::Auto, cfg)?;
        let best = &beams[0];
        let series = best.selected_series();
        rows.push(MethodTrial {
            seed: trial.rng_seed,
            pair: best.pair,
            truth_bpm: 60.0 * truth_hz,
            dwt_bpm: ok(estimate_dwt(&series, kind, &cfg.vitals))?,
            fft_native_bpm: ok(estimate_fft(&series, kind, None, &cfg.vitals))?,
            fft_padded_bpm: ok(estimate_fft(&series, kind, Some(cfg.vitals.fft_size), &cfg.vitals))?,
        });
    }
    Ok(MethodComparison {
        kind,
        fft_size: cfg.vitals.fft_size,
        trials: rows,
    })
}

// ---------------------------------------------------------------------------
// Single capture against its ground truth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair: BeamPair,
    pub target: Option<usize>,
    pub score: Option<BeamScore>,
    pub breath_bpm: Option<f64>,
    pub heart_bpm: Option<f64>,
    /// Failure of any stage on this pair; other pairs are unaffected.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureEval {
    pub report: EvalReport,
    pub pairs: Vec<PairOutcome>,
    /// Successfully analysed beams, best first within each Tx beam.
    #[serde(skip)]
    pub beams: Vec<BeamAnalysis>,
}

fn truth_tx_beams(truth: &GroundTruth) -> Vec<u16> {
    let mut tx: Vec<u16> = truth.targets.iter().flat_map(|t| t.tx_beams_hit.iter().copied()).collect();
    tx.sort_unstable();
    tx.dedup();
    tx
}

fn truth_target(truth: &GroundTruth, pair: BeamPair) -> Option<usize> {
    truth
        .targets
        .iter()
        .position(|t| t.tx_beams_hit.contains(&pair.tx) && t.rx_beams_hit.contains(&pair.rx))
}

/// Calibrate, preprocess and estimate every Rx beam of each Tx beam a target
/// hits, scoring the pairs that see a target against the truth.
pub fn evaluate_capture(c: &CsiCapture, truth: &GroundTruth, name: &str, cfg: &Config) -> Result<CaptureEval> {
    cfg.validate()?;
    let start = Instant::now();
    let tx_beams = truth_tx_beams(truth);
    ensure!(!tx_beams.is_empty(), Validation, "ground truth has no Tx beam");
    let mut pairs = Vec::new();
    let mut beams = Vec::new();
    for &tx in &tx_beams {
        c.meta().check_pair(BeamPair::new(tx, 1))?;
        let all: Vec<BeamPair> = (1..=c.meta().n_rx_beams as u16).map(|rx| BeamPair::new(tx, rx)).collect();
        let (calibrated, _) = calibrate_pairs(c, &all, &cfg.calibration)?;
        let results: Vec<(PairOutcome, Option<BeamAnalysis>)> = all
            .par_iter()
            .map(|&pair| {
                let mut o = PairOutcome {
                    pair,
                    target: truth_target(truth, pair),
                    score: None,
                    breath_bpm: None,
                    heart_bpm: None,
                    error: None,
                };
                let b = match analyze_beam(&calibrated, pair, cfg) {
                    Ok(b) => b,
                    Err(e) => {
                        o.error = Some(e.to_string());
                        return (o, None);
                    }
                };
                o.score = Some(b.score.clone());
                match estimate_single(&b.selected_series(), &cfg.vitals) {
                    Ok(e) => {
                        o.breath_bpm = Some(e.breath.rate_bpm);
                        o.heart_bpm = Some(e.heart.rate_bpm);
                    }
                    Err(e) => o.error = Some(e.to_string()),
                }
                (o, Some(b))
            })
            .collect();
        let mut analysed = Vec::new();
        for (o, b) in results {
            pairs.push(o);
            analysed.extend(b);
        }
        rank_analyses(&mut analysed);
        beams.extend(analysed);
    }

    let per_beam: Vec<BeamEval> = pairs
        .iter()
        .map(|o| {
            let tt = o.target.map(|i| &truth.targets[i]);
            let err = |v: Option<f64>, want: fn(&crate::synth::TargetTruth) -> f64| {
                tt.and_then(|t| v.map(|v| (v - want(t)).abs()))
            };
            BeamEval {
                pair: o.pair,
                target: o.target,
                gated_trials: o.score.as_ref().is_some_and(|s| s.gated) as usize,
                failures: o.error.is_some() as usize,
                breath_rmse_bpm: err(o.breath_bpm, |t| t.breath_rate_bpm),
                heart_rmse_bpm: err(o.heart_bpm, |t| t.heart_rate_bpm),
            }
        })
        .collect();
    let report = EvalReport {
        scenario: name.to_string(),
        trials: 1,
        best_beam: best_beam(&per_beam),
        per_beam,
        method: Method::Dwt,
        runtime_s: start.elapsed().as_secs_f64(),
    };
    Ok(CaptureEval { report, pairs, beams })
}

/// A rate in both units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub hz: f64,
    pub bpm: f64,
}

impl Rate {
    pub fn from_hz(hz: f64) -> Self {
        Rate { hz, bpm: 60.0 * hz }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub pair: BeamPair,
    pub kind: VitalKind,
    pub truth: Rate,
    pub dwt: Option<Rate>,
    pub fft_native: Option<Rate>,
    pub fft_padded: Option<Rate>,
    pub error: Option<String>,
}

impl MethodRow {
    fn err(&self, r: Option<Rate>) -> Option<f64> {
        r.map(|r| (r.bpm - self.truth.bpm).abs())
    }

    pub fn dwt_error_bpm(&self) -> Option<f64> {
        self.err(self.dwt)
    }

    pub fn fft_native_error_bpm(&self) -> Option<f64> {
        self.err(self.fft_native)
    }

    pub fn fft_padded_error_bpm(&self) -> Option<f64> {
        self.err(self.fft_padded)
    }
}

/// DWT against native and zero-padded FFT on every pair that sees a target,
/// both vital signs.
pub fn compare_capture(c: &CsiCapture, truth: &GroundTruth, cfg: &Config) -> Result<Vec<MethodRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for tx in truth_tx_beams(truth) {
        c.meta().check_pair(BeamPair::new(tx, 1))?;
        let pairs: Vec<BeamPair> = (1..=c.meta().n_rx_beams as u16)
            .map(|rx| BeamPair::new(tx, rx))
            .filter(|&p| truth_target(truth, p).is_some())
            .collect();
        if pairs.is_empty() {
            continue;
        }
        let (calibrated, _) = calibrate_pairs(c, &pairs, &cfg.calibration)?;
        let per_pair: Vec<Vec<MethodRow>> = pairs
            .par_iter()
            .map(|&pair| {
                let t = &truth.targets[truth_target(truth, pair).unwrap()];
                let analysis = analyze_beam(&calibrated, pair, cfg);
                [VitalKind::Breath, VitalKind::Heart]
                    .into_iter()
                    .map(|kind| {
                        let truth_hz = match kind {
                            VitalKind::Breath => t.breath_rate_hz,
                            VitalKind::Heart => t.heart_rate_hz,
                        };
                        let mut row = MethodRow {
                            pair,
                            kind,
                            truth: Rate::from_hz(truth_hz),
                            dwt: None,
                            fft_native: None,
                            fft_padded: None,
                            error: None,
                        };
                        let b = match &analysis {
                            Ok(b) => b,
                            Err(e) => {
                                row.error = Some(e.to_string());
                                return row;
                            }
                        };
                        let series = b.selected_series();
                        let mut note = |r: Result<VitalEstimate>| match r {
                            Ok(e) => Some(Rate::from_hz(e.rate_hz)),
                            Err(e) => {
                                row.error.get_or_insert_with(|| e.to_string());
                                None
                            }
                        };
                        let dwt = note(estimate_dwt(&series, kind, &cfg.vitals));
                        let native = note(estimate_fft(&series, kind, None, &cfg.vitals));
                        let padded = note(estimate_fft(&series, kind, Some(cfg.vitals.fft_size), &cfg.vitals));
                        row.dwt = dwt;
                        row.fft_native = native;
                        row.fft_padded = padded;
                        row
                    })
                    .collect()
            })
            .collect();
        rows.extend(per_pair.into_iter().flatten());
    }
    Ok(rows)
}
