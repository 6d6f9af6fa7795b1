//! Synthetic multi-beam CSI with breathing/heartbeat phase modulation and
//! per-symbol hardware phase errors.
//!
//! Each hit pair carries `A * exp(j * 2*pi*d(t)/lambda_n)` with
//! `d(t) = D + a_b cos(2 pi f_b t) + a_h cos(2 pi f_h t)`. Noise is added to every
//! pair, then affected symbols are rotated by `exp(-j * model_residual(params, k))`.
//! Noise and impairment activation come from separate RNG families, so a twin
//! scenario with impairments switched off shares the exact noise realization.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beams::fspl_db;
use crate::calib::{model_residual, PhaseErrorParams};
use crate::capture::{BeamPair, CaptureMeta, CsiCapture, SPEED_OF_LIGHT};
use crate::error::{ensure, Result};
use crate::vitals::{Band, VitalKind};

const NOISE_DOMAIN: u64 = 0x6e6f_6973_6500_0001;
const ACTIVATION_DOMAIN: u64 = 0x6163_7469_7600_0002;
const JITTER_DOMAIN: u64 = 0x6a69_7474_6500_0003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    /// Mean Tx -> chest -> Rx path length in m.
    pub mean_distance: f64,
    /// m.
    pub breath_amp: f64,
    /// m.
    pub heart_amp: f64,
    /// Hz.
    pub breath_rate: f64,
    /// Hz.
    pub heart_rate: f64,
    pub rx_beams_hit: BTreeSet<u16>,
    pub tx_beams_hit: BTreeSet<u16>,
    /// Fraction of incident power reflected, in (0, 1].
    pub reflect_coeff: f64,
    /// Tx -> target leg for the link budget; half the path when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_distance: Option<f64>,
    /// Target -> Rx leg for the link budget; half the path when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rx_distance: Option<f64>,
}

impl TargetSpec {
    pub fn tx_leg(&self) -> f64 {
        self.tx_distance.unwrap_or(self.mean_distance / 2.0)
    }

    pub fn rx_leg(&self) -> f64 {
        self.rx_distance.unwrap_or(self.mean_distance / 2.0)
    }

    /// Path length at time `t`.
    pub fn distance(&self, t: f64) -> f64 {
        self.mean_distance
            + self.breath_amp * (2.0 * PI * self.breath_rate * t).cos()
            + self.heart_amp * (2.0 * PI * self.heart_rate * t).cos()
    }

    pub fn hits(&self, pair: BeamPair) -> bool {
        self.tx_beams_hit.contains(&pair.tx) && self.rx_beams_hit.contains(&pair.rx)
    }

    pub fn validate(&self, meta: &CaptureMeta) -> Result<()> {
        let (b, h) = (Band::for_kind(VitalKind::Breath), Band::for_kind(VitalKind::Heart));
        ensure!(
            self.breath_rate >= b.lo && self.breath_rate <= b.hi,
            Validation,
            "breath_rate {} Hz outside [{}, {}]",
            self.breath_rate,
            b.lo,
            b.hi
        );
        ensure!(
            self.heart_rate >= h.lo && self.heart_rate <= h.hi,
            Validation,
            "heart_rate {} Hz outside [{}, {}]",
            self.heart_rate,
            h.lo,
            h.hi
        );
        let is_static = self.breath_amp == 0.0 && self.heart_amp == 0.0;
        ensure!(
            is_static || (self.breath_amp > self.heart_amp && self.heart_amp > 0.0),
            Validation,
            "need breath_amp > heart_amp > 0 (or both zero), got {} and {}",
            self.breath_amp,
            self.heart_amp
        );
        ensure!(
            self.mean_distance.is_finite() && self.mean_distance > 0.0,
            Validation,
            "mean_distance must be positive"
        );
        for leg in [self.tx_leg(), self.rx_leg()] {
            ensure!(leg.is_finite() && leg > 0.0, Validation, "link distances must be positive");
        }
        ensure!(
            self.reflect_coeff > 0.0 && self.reflect_coeff <= 1.0,
            Validation,
            "reflect_coeff {} outside (0, 1]",
            self.reflect_coeff
        );
        ensure!(!self.rx_beams_hit.is_empty(), Validation, "rx_beams_hit is empty");
        ensure!(!self.tx_beams_hit.is_empty(), Validation, "tx_beams_hit is empty");
        for &rx in &self.rx_beams_hit {
            ensure!(
                rx >= 1 && rx as usize <= meta.n_rx_beams,
                Validation,
                "rx beam {rx} outside 1..={}",
                meta.n_rx_beams
            );
        }
        for &tx in &self.tx_beams_hit {
            ensure!(
                tx >= 1 && tx as usize <= meta.n_tx_beams,
                Validation,
                "tx beam {tx} outside 1..={}",
                meta.n_tx_beams
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentSpec {
    /// Combined SFO/STO slope, rad per subcarrier index.
    pub sfo_slope: f64,
    /// rad.
    pub cpo: f64,
    pub iq_gain_mismatch: f64,
    /// rad.
    pub iq_phase_mismatch: f64,
    /// rad per subcarrier index.
    pub iq_time_offset: f64,
    /// Per-entry SNR in dB relative to the strongest target; `None` is noiseless.
    pub awgn_snr: Option<f64>,
    /// Probability that a given symbol of a given pair is impaired.
    pub affected_symbols: f64,
    /// Std-dev in dB of per-symbol log-normal amplitude jitter; 0 disables it.
    #[serde(default)]
    pub gain_jitter_db: f64,
}

impl Default for ImpairmentSpec {
    fn default() -> Self {
        ImpairmentSpec {
            sfo_slope: 0.0,
            cpo: 0.0,
            iq_gain_mismatch: 1.0,
            iq_phase_mismatch: 0.0,
            iq_time_offset: 0.0,
            awgn_snr: None,
            affected_symbols: 0.0,
            gain_jitter_db: 0.0,
        }
    }
}

impl ImpairmentSpec {
    pub fn params(&self) -> PhaseErrorParams {
        PhaseErrorParams {
            eps_g: self.iq_gain_mismatch,
            eps_p: self.iq_phase_mismatch,
            xi_t: self.iq_time_offset,
            sfo_sto_slope: self.sfo_slope,
            cpo: self.cpo,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.affected_symbols),
            Validation,
            "affected_symbols {} outside [0, 1]",
            self.affected_symbols
        );
        ensure!(
            self.iq_gain_mismatch > 0.0,
            Validation,
            "iq_gain_mismatch must be positive"
        );
        let all = [
            self.sfo_slope,
            self.cpo,
            self.iq_gain_mismatch,
            self.iq_phase_mismatch,
            self.iq_time_offset,
            self.gain_jitter_db,
        ];
        ensure!(all.iter().all(|v| v.is_finite()), Validation, "non-finite impairment");
        ensure!(self.gain_jitter_db >= 0.0, Validation, "gain_jitter_db must be >= 0");
        if let Some(snr) = self.awgn_snr {
            ensure!(snr.is_finite(), Validation, "awgn_snr must be finite");
        }
        Ok(())
    }
}

/// Transmit side of the link budget used to scale target amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub tx_power_dbm: f64,
    pub tx_gain_db: f64,
    pub rx_gain_db: f64,
}

impl Default for LinkSpec {
    fn default() -> Self {
        LinkSpec {
            tx_power_dbm: 15.0,
            tx_gain_db: 31.0,
            rx_gain_db: 31.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub meta: CaptureMeta,
    pub targets: Vec<TargetSpec>,
    pub impairments: ImpairmentSpec,
    pub rng_seed: u64,
    #[serde(default)]
    pub link: LinkSpec,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        ensure!(!self.targets.is_empty(), Validation, "scenario has no targets");
        for t in &self.targets {
            t.validate(&self.meta)?;
        }
        self.impairments.validate()
    }

    /// Same scene and noise realization with the phase impairments switched off.
    pub fn clean_twin(&self) -> ScenarioSpec {
        let mut twin = self.clone();
        twin.impairments = ImpairmentSpec {
            awgn_snr: self.impairments.awgn_snr,
            gain_jitter_db: self.impairments.gain_jitter_db,
            ..ImpairmentSpec::default()
        };
        twin
    }

    /// Received power of target `i` in dBm on any of its hit pairs.
    pub fn received_power_dbm(&self, i: usize) -> f64 {
        let t = &self.targets[i];
        let f = self.meta.center_frequency;
        self.link.tx_power_dbm + self.link.tx_gain_db + self.link.rx_gain_db
            - fspl_db(t.tx_leg(), f)
            - fspl_db(t.rx_leg(), f)
            + 10.0 * t.reflect_coeff.log10()
    }

    /// Complex noise power per entry (mW), zero when noiseless.
    pub fn noise_power(&self) -> f64 {
        match self.impairments.awgn_snr {
            None => 0.0,
            Some(snr) => {
                let strongest = (0..self.targets.len())
                    .map(|i| dbm_to_mw(self.received_power_dbm(i)))
                    .fold(0.0, f64::max);
                strongest / 10f64.powf(snr / 10.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTruth {
    pub breath_rate_hz: f64,
    pub heart_rate_hz: f64,
    pub breath_rate_bpm: f64,
    pub heart_rate_bpm: f64,
    pub mean_distance: f64,
    pub rx_beams_hit: BTreeSet<u16>,
    pub tx_beams_hit: BTreeSet<u16>,
    pub received_power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub targets: Vec<TargetTruth>,
    pub impairments: ImpairmentSpec,
    /// mW per entry.
    pub noise_power: f64,
    pub rng_seed: u64,
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn subcarrier_wavelength(meta: &CaptureMeta, n: usize) -> Result<f64> {
    Ok(SPEED_OF_LIGHT / meta.subcarrier_frequency(n)?)
}

pub fn vital_phase(t: f64, target: &TargetSpec, wavelength: f64) -> f64 {
    2.0 * PI * target.distance(t) / wavelength
}

/// Which symbols of `pair` carry the impairment.
pub fn affected_mask(spec: &ScenarioSpec, pair: BeamPair) -> Result<Vec<bool>> {
    spec.meta.check_pair(pair)?;
    let p = spec.impairments.affected_symbols;
    let mut rng = stream_rng(spec.rng_seed, ACTIVATION_DOMAIN, spec.meta.pair_index(pair) as u64);
    Ok((0..spec.meta.n_symbols)
        .map(|_| rng.random::<f64>() < p)
        .collect())
}

fn stream_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(stream);
    rng
}

pub fn generate(spec: &ScenarioSpec) -> Result<(CsiCapture, GroundTruth)> {
    spec.validate()?;
    let meta = &spec.meta;
    let nf = meta.n_subcarriers;
    let ns = meta.n_symbols;

    let wavelengths = (0..nf)
        .map(|n| subcarrier_wavelength(meta, n))
        .collect::<Result<Vec<_>>>()?;
    let amplitudes: Vec<f64> = (0..spec.targets.len())
        .map(|i| dbm_to_mw(spec.received_power_dbm(i)).sqrt())
        .collect();
    // Path length per target per symbol, shared by every pair.
    let paths: Vec<Vec<f64>> = spec
        .targets
        .iter()
        .map(|t| (0..ns).map(|s| t.distance(meta.symbol_time(s))).collect())
        .collect();
    let noise_sigma = (spec.noise_power() / 2.0).sqrt();
    let jitter_sigma = spec.impairments.gain_jitter_db / 20.0 * std::f64::consts::LN_10;
    let model = spec.impairments.params();
    let rotation: Vec<Complex64> = (0..nf)
        .map(|n| Complex64::from_polar(1.0, -model_residual(&model, meta.centered_index(n))))
        .collect();

    let pairs: Vec<BeamPair> = meta.pairs().collect();
    let blocks: Vec<Vec<Complex32>> = pairs
        .par_iter()
        .map(|&pair| -> Result<Vec<Complex32>> {
            let hits: Vec<usize> = (0..spec.targets.len())
                .filter(|&i| spec.targets[i].hits(pair))
                .collect();
            let mask = affected_mask(spec, pair)?;
            let pair_id = meta.pair_index(pair) as u64;
            let mut jitter_rng = stream_rng(spec.rng_seed, JITTER_DOMAIN, pair_id);
            let mut block = Vec::with_capacity(ns * nf);
            for s in 0..ns {
                let gain = if jitter_sigma > 0.0 {
                    (jitter_sigma * jitter_rng.sample::<f64, _>(StandardNormal)).exp()
                } else {
                    1.0
                };
                let mut noise_rng =
                    stream_rng(spec.rng_seed, NOISE_DOMAIN, pair_id * ns as u64 + s as u64);
                for n in 0..nf {
                    let mut h = Complex64::new(0.0, 0.0);
                    for &i in &hits {
                        let phase = 2.0 * PI * paths[i][s] / wavelengths[n];
                        h += Complex64::from_polar(amplitudes[i] * gain, phase);
                    }
                    if noise_sigma > 0.0 {
                        let re: f64 = noise_rng.sample(StandardNormal);
                        let im: f64 = noise_rng.sample(StandardNormal);
                        h += Complex64::new(re, im) * noise_sigma;
                    }
                    if mask[s] {
                        h *= rotation[n];
                    }
                    block.push(Complex32::new(h.re as f32, h.im as f32));
                }
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;

    let mut capture = CsiCapture::zeros(meta.clone())?;
    let n_pairs = meta.n_pairs();
    let data = capture.data_mut();
    for (p, block) in blocks.iter().enumerate() {
        for s in 0..ns {
            let dst = (s * n_pairs + p) * nf;
            data[dst..dst + nf].copy_from_slice(&block[s * nf..(s + 1) * nf]);
        }
    }

    let truth = GroundTruth {
        targets: spec
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| TargetTruth {
                breath_rate_hz: t.breath_rate,
                heart_rate_hz: t.heart_rate,
                breath_rate_bpm: t.breath_rate * 60.0,
                heart_rate_bpm: t.heart_rate * 60.0,
                mean_distance: t.mean_distance,
                rx_beams_hit: t.rx_beams_hit.clone(),
                tx_beams_hit: t.tx_beams_hit.clone(),
                received_power_dbm: spec.received_power_dbm(i),
            })
            .collect(),
        impairments: spec.impairments.clone(),
        noise_power: spec.noise_power(),
        rng_seed: spec.rng_seed,
    };
    Ok((capture, truth))
}

/// Ready-made scenes mirroring the lab layouts.
pub mod templates {
    use super::*;

    /// Default chest displacement amplitudes (m).
    pub const BREATH_AMP: f64 = 2e-3;
    pub const HEART_AMP: f64 = 0.5e-3;

    pub fn person(
        one_way_distance: f64,
        breath_rate: f64,
        heart_rate: f64,
        rx_beams: &[u16],
        tx_beams: &[u16],
    ) -> TargetSpec {
        TargetSpec {
            mean_distance: 2.0 * one_way_distance,
            breath_amp: BREATH_AMP,
            heart_amp: HEART_AMP,
            breath_rate,
            heart_rate,
            rx_beams_hit: rx_beams.iter().copied().collect(),
            tx_beams_hit: tx_beams.iter().copied().collect(),
            reflect_coeff: 0.35,
            tx_distance: None,
            rx_distance: None,
        }
    }

    /// One person 1 m from the radar, seen by Rx beams 8 and 9 of Tx beam 1.
    pub fn single_person(seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            meta: CaptureMeta::testbed(),
            targets: vec![person(1.0, 0.56, 1.37, &[8, 9], &[1])],
            impairments: ImpairmentSpec {
                awgn_snr: Some(20.0),
                ..ImpairmentSpec::default()
            },
            rng_seed: seed,
            link: LinkSpec::default(),
        }
    }

    /// Two people at 1 m and 1.5 m on disjoint Rx beams of Tx beam 1.
    pub fn two_person(seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            meta: CaptureMeta::testbed(),
            targets: vec![
                person(1.0, 0.35, 1.2, &[6, 7], &[1]),
                person(1.5, 0.69, 1.5, &[10, 11], &[1]),
            ],
            impairments: ImpairmentSpec {
                awgn_snr: Some(20.0),
                ..ImpairmentSpec::default()
            },
            rng_seed: seed,
            link: LinkSpec::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prep::unwrap;

    fn small_meta(n_symbols: usize, n_rx: usize) -> CaptureMeta {
        CaptureMeta {
            n_symbols,
            n_rx_beams: n_rx,
            n_tx_beams: 1,
            capture_duration: n_symbols as f64 / 2000.0,
            ..CaptureMeta::testbed()
        }
    }

    fn scene(n_symbols: usize) -> ScenarioSpec {
        ScenarioSpec {
            meta: small_meta(n_symbols, 3),
            targets: vec![templates::person(1.0, 0.56, 1.37, &[2], &[1])],
            impairments: ImpairmentSpec::default(),
            rng_seed: 5,
            link: LinkSpec::default(),
        }
    }

    #[test]
    fn wavelength_at_center() {
        let meta = CaptureMeta {
            n_subcarriers: 101,
            bandwidth: 20e6,
            ..CaptureMeta::testbed()
        };
        let lambda = subcarrier_wavelength(&meta, 50).unwrap();
        assert!((lambda - 299_792_458.0 / 26e9).abs() < 1e-15);
        assert!((lambda - 0.011530).abs() < 5e-7);
        let half = CaptureMeta {
            center_frequency: 13e9,
            bandwidth: 10e6,
            ..meta.clone()
        };
        let ratio = lambda / subcarrier_wavelength(&half, 50).unwrap();
        assert!((ratio - 0.5).abs() < 1e-15);
        let edge = subcarrier_wavelength(&meta, 100).unwrap();
        assert!((edge - 299_792_458.0 / (26e9 + 10e6)).abs() < 1e-15);
        assert!(edge < lambda);
    }

    #[test]
    fn vital_phase_closed_forms() {
        let lambda = 0.0115;
        let mut t = templates::person(1.0, 0.56, 1.37, &[1], &[1]);
        t.breath_amp = 0.0;
        t.heart_amp = 0.0;
        t.mean_distance = lambda;
        for time in [0.0, 0.3, 4.2] {
            assert!((vital_phase(time, &t, lambda) - 2.0 * PI).abs() < 1e-12);
        }
        let t = templates::person(1.0, 0.56, 1.37, &[1], &[1]);
        let expected = 2.0 * PI * (2.0 + 2e-3 + 0.5e-3) / lambda;
        assert!((vital_phase(0.0, &t, lambda) - expected).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_scenes() {
        let mut s = scene(100);
        s.targets.clear();
        assert!(generate(&s).is_err());
        let mut s = scene(100);
        s.targets[0].heart_amp = 0.01;
        assert!(generate(&s).is_err());
        let mut s = scene(100);
        s.targets[0].breath_rate = 1.5;
        assert!(generate(&s).is_err());
        let mut s = scene(100);
        s.targets[0].rx_beams_hit.insert(4);
        assert!(generate(&s).is_err());
        let mut s = scene(100);
        s.impairments.affected_symbols = 1.5;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn deterministic() {
        let mut s = scene(200);
        s.impairments.awgn_snr = Some(10.0);
        s.impairments.affected_symbols = 0.3;
        s.impairments.cpo = 0.4;
        let (a, _) = generate(&s).unwrap();
        let (b, _) = generate(&s).unwrap();
        assert_eq!(a.data(), b.data());
        s.rng_seed += 1;
        let (c, _) = generate(&s).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn static_target_has_constant_phase() {
        let mut s = scene(300);
        s.targets[0].breath_amp = 0.0;
        s.targets[0].heart_amp = 0.0;
        let (c, _) = generate(&s).unwrap();
        let m = c.slice_pair(BeamPair::new(1, 2)).unwrap();
        for n in [0, 37, 99] {
            let p0 = m.get(0, n).arg();
            for sym in 0..300 {
                assert!((m.get(sym, n).arg() - p0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn clean_phase_matches_vital_phase() {
        let s = scene(400);
        let (c, _) = generate(&s).unwrap();
        let m = c.slice_pair(BeamPair::new(1, 2)).unwrap();
        let n = 13;
        let lambda = subcarrier_wavelength(&s.meta, n).unwrap();
        let measured = unwrap(&m.column(n).iter().map(|h| h.arg()).collect::<Vec<_>>());
        let truth: Vec<f64> = (0..400)
            .map(|i| vital_phase(s.meta.symbol_time(i), &s.targets[0], lambda))
            .collect();
        let offset = truth[0] - measured[0];
        let k = (offset / (2.0 * PI)).round();
        // f32 storage limits agreement to roughly 1e-7 rad.
        for (m, t) in measured.iter().zip(&truth) {
            assert!((m + 2.0 * PI * k - t).abs() < 1e-5);
        }
    }

    #[test]
    fn noise_only_pair_power() {
        let mut s = scene(1000);
        s.meta.n_subcarriers = 20;
        s.impairments.awgn_snr = Some(20.0);
        let (c, truth) = generate(&s).unwrap();
        let m = c.slice_pair(BeamPair::new(1, 1)).unwrap();
        let mean = m.data.iter().map(|h| h.norm_sqr()).sum::<f64>() / m.data.len() as f64;
        assert!((mean / truth.noise_power - 1.0).abs() < 0.05);
    }

    #[test]
    fn impairment_slope_on_affected_symbols() {
        let mut s = scene(50);
        s.impairments.sfo_slope = 0.01;
        s.impairments.affected_symbols = 1.0;
        let (dirty, _) = generate(&s).unwrap();
        let (clean, _) = generate(&s.clean_twin()).unwrap();
        let pair = BeamPair::new(1, 2);
        let slope = |row: &[Complex32]| {
            let ph = unwrap(&row.iter().map(|h| h.arg() as f64).collect::<Vec<_>>());
            let n = ph.len() as f64;
            let mx = (n - 1.0) / 2.0;
            let my = ph.iter().sum::<f64>() / n;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (i, y) in ph.iter().enumerate() {
                sxy += (i as f64 - mx) * (y - my);
                sxx += (i as f64 - mx).powi(2);
            }
            sxy / sxx
        };
        for sym in [0, 17, 49] {
            let d = slope(dirty.row(sym, pair).unwrap());
            let c = slope(clean.row(sym, pair).unwrap());
            // The rotation is exp(-j * model), so the measured slope drops by s.
            assert!((d - (c - 0.01)).abs() < 1e-5, "{d} vs {c}");
        }
    }

    #[test]
    fn twin_shares_noise_off_the_mask() {
        let mut s = scene(300);
        s.impairments.awgn_snr = Some(15.0);
        s.impairments.affected_symbols = 0.2;
        s.impairments.cpo = 1.0;
        let (dirty, _) = generate(&s).unwrap();
        let (clean, _) = generate(&s.clean_twin()).unwrap();
        let pair = BeamPair::new(1, 2);
        let mask = affected_mask(&s, pair).unwrap();
        let hits = mask.iter().filter(|&&m| m).count();
        assert!(hits > 30 && hits < 90, "{hits}");
        for (sym, &m) in mask.iter().enumerate() {
            let same = dirty.row(sym, pair).unwrap() == clean.row(sym, pair).unwrap();
            assert_eq!(same, !m);
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = templates::two_person(3);
        let text = serde_json::to_string_pretty(&s).unwrap();
        let back: ScenarioSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = text.replacen("\"rng_seed\"", "\"seed_typo\": 1, \"rng_seed\"", 1);
        assert!(serde_json::from_str::<ScenarioSpec>(&bad).is_err());
    }
}
