use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mmvital::beams::{mean_pdp, symbol_pdp, variance_matrix};
use mmvital::calib::calibrate_pairs;
use mmvital::pipeline::{
    analyze_beams, compare_capture, evaluate_capture, run_multi, run_single, CaptureEval, MethodRow, Rate, RxBeams,
};
use mmvital::prep::preprocess_pair;
use mmvital::synth::{generate, templates, GroundTruth, ScenarioSpec};
use mmvital::vitals::{dwt_band_signal, fft_spectrum, fir_bandpass};
use mmvital::{read_capture, write_capture, BeamPair, Config, CsiCapture, VitalKind};

#[derive(Parser)]
#[command(name = "mmvital", version, about = "Vital-sign estimation from multi-beam CSI captures")]
struct Cli {
    /// JSON configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file; stdout when omitted (required for binary captures).
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic capture and its `.truth.json` sidecar.
    Synth {
        /// Scenario JSON; the template is used when omitted.
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Template::SinglePerson)]
        template: Template,
    },
    /// Detect and compensate hardware phase errors; the report goes to `.report.json`.
    Calibrate {
        input: PathBuf,
        /// Only these Tx beams (all by default).
        #[arg(long, value_delimiter = ',')]
        tx_beams: Vec<u16>,
    },
    /// Preprocessed phase of one pair as CSV `t,subcarrier,phase`.
    Prep {
        input: PathBuf,
        #[command(flatten)]
        pair: PairArgs,
        /// Calibrate the pair first.
        #[arg(long)]
        calibrate: bool,
    },
    /// Delay profile of one pair as CSV `delay_m,power_db`.
    Pdp {
        input: PathBuf,
        #[command(flatten)]
        pair: PairArgs,
        /// One symbol instead of the average over the capture.
        #[arg(long)]
        symbol: Option<usize>,
    },
    /// Rank the Rx beams of one Tx beam (JSON).
    Beams {
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        tx_beam: u16,
    },
    /// Breathing and heart rates (JSON).
    Estimate {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Single)]
        mode: Mode,
        #[arg(long, default_value_t = 1)]
        tx_beam: u16,
        /// `auto` or a comma-separated list of Rx ids.
        #[arg(long, default_value = "auto")]
        rx_beams: RxBeams,
    },
    /// Per-beam RMSE of a capture against its ground truth (JSON).
    Eval {
        input: PathBuf,
        #[command(flatten)]
        truth: TruthArgs,
        /// Write plot data (CSV) for the best beam into this directory.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// DWT against native and zero-padded FFT on the beams that see a target.
    CompareMethods {
        input: PathBuf,
        #[command(flatten)]
        truth: TruthArgs,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(clap::Args)]
struct TruthArgs {
    /// Ground truth; defaults to the `.truth.json` sidecar of the capture.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(clap::Args)]
struct PairArgs {
    #[arg(long, default_value_t = 1)]
    tx: u16,
    #[arg(long)]
    rx: u16,
}

#[derive(Clone, Copy, ValueEnum)]
enum Template {
    SinglePerson,
    TwoPerson,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Mode {
    Single,
    Multi,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let estimation = e
                .downcast_ref::<mmvital::Error>()
                .is_some_and(mmvital::Error::is_estimation);
            ExitCode::from(if estimation { 1 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let out = cli.output.as_deref();

    match &cli.command {
        Command::Synth { spec, template } => {
            let (spec, _) = scenario(spec.as_deref(), *template, cli.seed)?;
            let path = out.ok_or_else(|| anyhow!("synth needs --output"))?;
            let (capture, truth) = generate(&spec)?;
            write_capture(&capture, path)?;
            let truth_path = truth_sidecar(path);
            write_json(Some(&truth_path), &truth)?;
            let m = capture.meta();
            println!(
                "{}: {} symbols x {} rx x {} tx x {} subcarriers, {} target(s), seed {}; truth in {}",
                path.display(),
                m.n_symbols,
                m.n_rx_beams,
                m.n_tx_beams,
                m.n_subcarriers,
                truth.targets.len(),
                spec.rng_seed,
                truth_path.display()
            );
            Ok(())
        }
        Command::Calibrate { input, tx_beams } => {
            let path = out.ok_or_else(|| anyhow!("calibrate needs --output"))?;
            let c = read_capture(input)?;
            let pairs: Vec<BeamPair> = c
                .meta()
                .pairs()
                .filter(|p| tx_beams.is_empty() || tx_beams.contains(&p.tx))
                .collect();
            let (fixed, report) = calibrate_pairs(&c, &pairs, &cfg.calibration)?;
            write_capture(&fixed, path)?;
            write_json(Some(&sidecar(path, "report.json")), &report)
        }
        Command::Prep { input, pair, calibrate } => {
            let pair = BeamPair::new(pair.tx, pair.rx);
            let mut c = read_capture(input)?;
            if *calibrate {
                c = calibrate_pairs(&c, &[pair], &cfg.calibration)?.0;
            }
            let series = preprocess_pair(&c, pair, &cfg.prep)?;
            let mut csv = String::from("t,subcarrier,phase\n");
            for s in &series {
                for (i, v) in s.samples().iter().enumerate() {
                    csv += &format!("{},{},{}\n", i as f64 / s.fs(), s.subcarrier(), v);
                }
            }
            write_text(out, &csv)
        }
        Command::Pdp { input, pair, symbol } => {
            let pair = BeamPair::new(pair.tx, pair.rx);
            let c = read_capture(input)?;
            let zero_pad = cfg.beams.pdp_zero_pad;
            let p = match symbol {
                Some(s) => symbol_pdp(&c, pair, *s, zero_pad)?,
                None => mean_pdp(&c, pair, zero_pad, 1)?,
            };
            let mut csv = String::from("delay_m,power_db\n");
            for (i, v) in p.bins.iter().enumerate() {
                csv += &format!("{},{}\n", p.path_length(i), 10.0 * v.max(f64::MIN_POSITIVE).log10());
            }
            write_text(out, &csv)
        }
        Command::Beams { input, tx_beam } => {
            let c = calibrated_tx(&read_capture(input)?, *tx_beam, &cfg)?;
            let beams = analyze_beams(&c, *tx_beam, None, &cfg)?;
            let scores: Vec<_> = beams.iter().map(|b| &b.score).collect();
            write_json(out, &scores)
        }
        Command::Estimate {
            input,
            mode,
            tx_beam,
            rx_beams,
        } => {
            let c = read_capture(input)?;
            match mode {
                Mode::Single => write_json(out, &run_single(&c, *tx_beam, rx_beams, &cfg)?),
                Mode::Multi => write_json(out, &run_multi(&c, *tx_beam, rx_beams, &cfg)?),
            }
        }
        Command::Eval { input, truth, plots } => {
            let (c, truth) = capture_with_truth(input, truth)?;
            let name = input.file_stem().map_or("capture".into(), |s| s.to_string_lossy().into_owned());
            let eval = evaluate_capture(&c, &truth, &name, &cfg)?;
            if let Some(dir) = plots {
                write_plots(dir, &eval, &cfg)?;
            }
            write_json(out, &eval)
        }
        Command::CompareMethods { input, truth, format } => {
            let (c, truth) = capture_with_truth(input, truth)?;
            let rows = compare_capture(&c, &truth, &cfg)?;
            match format {
                Format::Json => write_json(out, &rows),
                Format::Csv => write_text(out, &method_table(&rows)),
            }
        }
    }
}

fn capture_with_truth(input: &Path, truth: &TruthArgs) -> Result<(CsiCapture, GroundTruth)> {
    let path = truth.truth.clone().unwrap_or_else(|| truth_sidecar(input));
    let text = fs::read_to_string(&path).with_context(|| format!("reading ground truth {}", path.display()))?;
    let truth: GroundTruth =
        serde_json::from_str(&text).with_context(|| format!("parsing ground truth {}", path.display()))?;
    Ok((read_capture(input)?, truth))
}

fn method_table(rows: &[MethodRow]) -> String {
    let rate = |r: &Option<Rate>| r.map_or(",".to_string(), |r| format!("{:.4},{:.2}", r.hz, r.bpm));
    let err = |e: Option<f64>| e.map_or(String::new(), |e| format!("{e:.2}"));
    let mut csv = String::from(
        "tx,rx,kind,truth_hz,truth_bpm,dwt_hz,dwt_bpm,fft_native_hz,fft_native_bpm,fft_padded_hz,fft_padded_bpm,\
         dwt_error_bpm,fft_native_error_bpm,fft_padded_error_bpm\n",
    );
    for r in rows {
        csv += &format!(
            "{},{},{},{:.4},{:.2},{},{},{},{},{},{}\n",
            r.pair.tx,
            r.pair.rx,
            kind_name(r.kind),
            r.truth.hz,
            r.truth.bpm,
            rate(&r.dwt),
            rate(&r.fft_native),
            rate(&r.fft_padded),
            err(r.dwt_error_bpm()),
            err(r.fft_native_error_bpm()),
            err(r.fft_padded_error_bpm()),
        );
    }
    csv
}

fn kind_name(kind: VitalKind) -> &'static str {
    match kind {
        VitalKind::Breath => "breath",
        VitalKind::Heart => "heart",
    }
}

/// Variance per subcarrier, NVE trace, spectra and DWT reconstructions of the
/// best beam.
fn write_plots(dir: &Path, eval: &CaptureEval, cfg: &Config) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let Some(beam) = eval
        .beams
        .iter()
        .find(|b| Some(b.pair) == eval.report.best_beam)
        .or(eval.beams.first())
    else {
        bail!(mmvital::Error::Estimation("no beam to plot".into()));
    };
    let opts = &cfg.vitals;

    let mut csv = String::from("subcarrier,variance,selected\n");
    for (i, s) in beam.series.iter().enumerate() {
        csv += &format!("{},{},{}\n", s.subcarrier(), s.variance(), u8::from(beam.selected.contains(&i)));
    }
    write_text(Some(&dir.join("variance.csv")), &csv)?;

    let window = cfg.beams.nve_window_s;
    let trace = variance_matrix(&beam.series, window)?.trace();
    let mut csv = String::from("t,mean_variance\n");
    for (w, v) in trace.iter().enumerate() {
        csv += &format!("{},{}\n", w as f64 * window, v);
    }
    write_text(Some(&dir.join("nve.csv")), &csv)?;

    let selected = beam.selected_series();
    let Some(strongest) = selected.iter().max_by(|a, b| a.variance().total_cmp(&b.variance())) else {
        bail!(mmvital::Error::Estimation("no selected subcarrier".into()));
    };
    let fs = strongest.fs();
    let x = strongest.samples();
    let breath_band = opts.band(VitalKind::Breath);
    let heart_band = opts.band(VitalKind::Heart);

    let breath = fft_spectrum(&fir_bandpass(x, fs, &breath_band, opts.fir_taps)?, fs, opts.fft_size)?;
    let heart = fft_spectrum(&fir_bandpass(x, fs, &heart_band, opts.fir_taps)?, fs, opts.fft_size)?;
    let mut csv = String::from("freq_hz,bpm,breath,heart\n");
    for ((f, b), h) in breath.freqs.iter().zip(&breath.power).zip(&heart.power) {
        csv += &format!("{},{},{},{}\n", f, 60.0 * f, b, h);
    }
    write_text(Some(&dir.join("spectra.csv")), &csv)?;

    let breath = dwt_band_signal(x, fs, &breath_band, opts)?;
    let heart = dwt_band_signal(x, fs, &heart_band, opts)?;
    let mut csv = String::from("t,phase,breath,heart\n");
    for (i, ((p, b), h)) in x.iter().zip(&breath).zip(&heart).enumerate() {
        csv += &format!("{},{},{},{}\n", i as f64 / fs, p, b, h);
    }
    write_text(Some(&dir.join("dwt.csv")), &csv)
}

fn scenario(path: Option<&Path>, template: Template, seed: Option<u64>) -> Result<(ScenarioSpec, String)> {
    let (mut spec, name) = match path {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec: ScenarioSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let name = path.file_stem().map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
            (spec, name)
        }
        None => match template {
            Template::SinglePerson => (templates::single_person(0), "single-person".to_string()),
            Template::TwoPerson => (templates::two_person(0), "two-person".to_string()),
        },
    };
    if let Some(seed) = seed {
        spec.rng_seed = seed;
    }
    spec.validate()?;
    Ok((spec, name))
}

fn calibrated_tx(c: &CsiCapture, tx: u16, cfg: &Config) -> Result<CsiCapture> {
    if tx == 0 || tx as usize > c.meta().n_tx_beams {
        bail!(mmvital::Error::Range(format!("tx beam {tx} outside 1..={}", c.meta().n_tx_beams)));
    }
    let pairs: Vec<BeamPair> = c.meta().pairs().filter(|p| p.tx == tx).collect();
    Ok(calibrate_pairs(c, &pairs, &cfg.calibration)?.0)
}

/// `cap.csi` -> `cap.<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn truth_sidecar(path: &Path) -> PathBuf {
    sidecar(path, "truth.json")
}

fn write_json<T: Serialize + ?Sized>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(out, &text)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}
