//! Benchmark fixtures.

use mmvital::synth::templates::person;
use mmvital::synth::{ImpairmentSpec, LinkSpec, ScenarioSpec};
use mmvital::CaptureMeta;

/// One target on Rx beam 1 of a one-by-one beam scene.
pub fn scenario(n_symbols: usize, affected: f64, seed: u64) -> ScenarioSpec {
    let meta = CaptureMeta::testbed();
    ScenarioSpec {
        meta: CaptureMeta {
            n_symbols,
            n_rx_beams: 1,
            n_tx_beams: 1,
            capture_duration: n_symbols as f64 / meta.symbol_rate,
            ..meta
        },
        targets: vec![person(1.0, 0.56, 1.37, &[1], &[1])],
        impairments: ImpairmentSpec {
            awgn_snr: Some(20.0),
            sfo_slope: 0.01,
            cpo: 1.0,
            iq_gain_mismatch: 1.05,
            iq_phase_mismatch: 0.05,
            iq_time_offset: 0.005,
            affected_symbols: affected,
            ..ImpairmentSpec::default()
        },
        rng_seed: seed,
        link: LinkSpec::default(),
    }
}

/// Slowly varying phase with a deterministic ripple, `n` samples.
pub fn phase_trace(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / 2000.0;
            0.3 * t + 2.0 * (std::f64::consts::TAU * 0.56 * t).sin() + 0.05 * ((i * 7919 % 1000) as f64 / 1000.0 - 0.5)
        })
        .collect()
}
