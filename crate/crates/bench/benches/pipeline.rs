use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mmvital::calib::{apply_impairment_row, fit_phase_errors, CalibOptions, PhaseErrorParams};
use mmvital::dsp::sliding_median;
use mmvital::prep::{hampel_trend, preprocess_pair, PrepOptions};
use mmvital::synth::generate;
use mmvital::vitals::{dwt_decompose, estimate_single, VitalOptions, Wavelet};
use mmvital::BeamPair;
use mmvital_bench::{phase_trace, scenario};
use num_complex::Complex64;

fn dsp(c: &mut Criterion) {
    let x = phase_trace(10_000);
    c.bench_function("sliding_median/10000/w101", |b| b.iter(|| sliding_median(black_box(&x), 50)));
    c.bench_function("hampel_trend/10000/w2000", |b| {
        b.iter(|| hampel_trend(black_box(&x), 2000, 0.01).unwrap())
    });
    let y = phase_trace(500);
    c.bench_function("dwt_decompose/500/db4/L4", |b| {
        b.iter(|| dwt_decompose(black_box(&y), 4, Wavelet::Db4, 100.0).unwrap())
    });
}

fn calibration(c: &mut Criterion) {
    let truth = PhaseErrorParams {
        eps_g: 1.1,
        eps_p: 0.05,
        xi_t: 0.004,
        sfo_sto_slope: 0.012,
        cpo: -1.2,
    };
    let mut row = vec![Complex64::new(1.0, 0.0); 100];
    apply_impairment_row(&mut row, &truth);
    let residual: Vec<f64> = row.iter().map(|h| -h.arg()).collect();
    let opts = CalibOptions::default();
    c.bench_function("fit_phase_errors/100", |b| {
        b.iter(|| fit_phase_errors(black_box(&residual), &PhaseErrorParams::identity(), &opts.lm).unwrap())
    });

    let (capture, _) = generate(&scenario(2000, 0.1, 3)).unwrap();
    let mut group = c.benchmark_group("calibrate");
    group.sample_size(10);
    group.bench_function("2000x100/10%", |b| {
        b.iter(|| mmvital::calib::calibrate(black_box(&capture), &opts).unwrap())
    });
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut group = c.benchmark_group("end_to_end");
    group.sample_size(10);
    let spec = scenario(10_000, 0.0, 4);
    group.bench_function("generate/10000x1x100", |b| b.iter(|| generate(black_box(&spec)).unwrap()));
    let (capture, _) = generate(&spec).unwrap();
    let pair = BeamPair::new(1, 1);
    let prep = PrepOptions::default();
    group.bench_function("preprocess_pair/10000x100", |b| {
        b.iter(|| preprocess_pair(black_box(&capture), pair, &prep).unwrap())
    });
    let series = preprocess_pair(&capture, pair, &prep).unwrap();
    let vitals = VitalOptions::default();
    group.bench_function("estimate_single/100x500", |b| {
        b.iter(|| estimate_single(black_box(&series), &vitals).unwrap())
    });
    group.finish();
}

criterion_group!(benches, dsp, calibration, end_to_end);
criterion_main!(benches);
