//! Multi-beam CSI captures and the `CSIV1` file format.
//!
//! A capture is a dense tensor indexed `[symbol][rx][tx][subcarrier]`. On disk it is
//! the 6-byte magic `CSIV1\n`, one line of JSON carrying [`CaptureMeta`], then the
//! entries as little-endian interleaved `f32` (re, im) in the same order.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub const MAGIC: &[u8; 6] = b"CSIV1\n";

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureMeta {
    /// Hz.
    pub center_frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Nominal numerology spacing in Hz. The captured subcarriers span the whole
    /// bandwidth, see [`CaptureMeta::effective_spacing`].
    pub subcarrier_spacing: f64,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub n_rx_beams: usize,
    pub n_tx_beams: usize,
    /// Symbols per second.
    pub symbol_rate: f64,
    /// Seconds.
    pub capture_duration: f64,
}

impl CaptureMeta {
    /// The 26 GHz testbed configuration: 16 Rx x 2 Tx beams, 100 subcarriers over
    /// 20 MHz, 10000 symbols in 5 s.
    pub fn testbed() -> Self {
        CaptureMeta {
            center_frequency: 26e9,
            bandwidth: 20e6,
            subcarrier_spacing: 15e3,
            n_subcarriers: 100,
            n_symbols: 10_000,
            n_rx_beams: 16,
            n_tx_beams: 2,
            symbol_rate: 2000.0,
            capture_duration: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("center_frequency", self.center_frequency),
            ("bandwidth", self.bandwidth),
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("symbol_rate", self.symbol_rate),
            ("capture_duration", self.capture_duration),
        ];
        for (name, v) in positive {
            ensure!(v.is_finite() && v > 0.0, Validation, "{name} must be positive, got {v}");
        }
        let counts = [
            ("n_subcarriers", self.n_subcarriers),
            ("n_symbols", self.n_symbols),
            ("n_rx_beams", self.n_rx_beams),
            ("n_tx_beams", self.n_tx_beams),
        ];
        for (name, v) in counts {
            ensure!(v > 0, Validation, "{name} must be positive");
        }
        ensure!(
            self.n_rx_beams <= u16::MAX as usize && self.n_tx_beams <= u16::MAX as usize,
            Validation,
            "too many beams"
        );
        let span = (self.n_subcarriers as f64 - 1.0) * self.subcarrier_spacing;
        ensure!(
            self.bandwidth >= span * (1.0 - 1e-9),
            Validation,
            "bandwidth {} Hz is narrower than the subcarrier grid ({span} Hz)",
            self.bandwidth
        );
        ensure!(self.n_subcarriers >= 2, Validation, "need at least 2 subcarriers");
        let expected = (self.symbol_rate * self.capture_duration).round();
        ensure!(
            expected == self.n_symbols as f64,
            Validation,
            "n_symbols {} != round(symbol_rate x capture_duration) = {expected}",
            self.n_symbols
        );
        self.n_entries_checked().map(|_| ())
    }

    /// Frequency step between adjacent captured subcarriers. The captured grid covers
    /// the full bandwidth, so this is `bandwidth / (n_subcarriers - 1)`.
    pub fn effective_spacing(&self) -> f64 {
        self.bandwidth / (self.n_subcarriers.max(2) as f64 - 1.0)
    }

    /// Offset of subcarrier `n` from the band center, in subcarrier units.
    pub fn centered_index(&self, n: usize) -> f64 {
        n as f64 - (self.n_subcarriers as f64 - 1.0) / 2.0
    }

    pub fn subcarrier_frequency(&self, n: usize) -> Result<f64> {
        ensure!(
            n < self.n_subcarriers,
            Range,
            "subcarrier {n} outside 0..{}",
            self.n_subcarriers
        );
        Ok(self.center_frequency + self.centered_index(n) * self.effective_spacing())
    }

    pub fn symbol_time(&self, s: usize) -> f64 {
        s as f64 / self.symbol_rate
    }

    pub fn n_pairs(&self) -> usize {
        self.n_rx_beams * self.n_tx_beams
    }

    pub fn n_entries(&self) -> usize {
        self.n_symbols * self.n_pairs() * self.n_subcarriers
    }

    fn n_entries_checked(&self) -> Result<usize> {
        self.n_symbols
            .checked_mul(self.n_rx_beams)
            .and_then(|v| v.checked_mul(self.n_tx_beams))
            .and_then(|v| v.checked_mul(self.n_subcarriers))
            .and_then(|v| v.checked_mul(8).map(|_| v))
            .ok_or_else(|| Error::Validation("capture dimensions overflow".into()))
    }

    /// All pairs in storage order (rx-major, then tx).
    pub fn pairs(&self) -> impl Iterator<Item = BeamPair> + '_ {
        (1..=self.n_rx_beams).flat_map(move |rx| {
            (1..=self.n_tx_beams).map(move |tx| BeamPair::new(tx as u16, rx as u16))
        })
    }

    pub fn check_pair(&self, pair: BeamPair) -> Result<()> {
        ensure!(
            pair.tx >= 1 && (pair.tx as usize) <= self.n_tx_beams,
            Range,
            "tx beam {} outside 1..={}",
            pair.tx,
            self.n_tx_beams
        );
        ensure!(
            pair.rx >= 1 && (pair.rx as usize) <= self.n_rx_beams,
            Range,
            "rx beam {} outside 1..={}",
            pair.rx,
            self.n_rx_beams
        );
        Ok(())
    }

    /// Dense 0-based index of a pair in storage order.
    pub fn pair_index(&self, pair: BeamPair) -> usize {
        (pair.rx as usize - 1) * self.n_tx_beams + (pair.tx as usize - 1)
    }
}

/// A (Tx beam, Rx beam) combination. Beam ids are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BeamPair {
    pub tx: u16,
    pub rx: u16,
}

impl BeamPair {
    pub fn new(tx: u16, rx: u16) -> Self {
        BeamPair { tx, rx }
    }
}

impl fmt::Display for BeamPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tx{}-rx{}", self.tx, self.rx)
    }
}

/// Entries of one beam pair, `n_symbols x n_subcarriers`, row-major by symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    pub n_symbols: usize,
    pub n_subcarriers: usize,
    pub data: Vec<Complex64>,
}

impl PairMatrix {
    pub fn row(&self, s: usize) -> &[Complex64] {
        &self.data[s * self.n_subcarriers..(s + 1) * self.n_subcarriers]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [Complex64] {
        &mut self.data[s * self.n_subcarriers..(s + 1) * self.n_subcarriers]
    }

    pub fn get(&self, s: usize, n: usize) -> Complex64 {
        self.data[s * self.n_subcarriers + n]
    }

    /// Time series of subcarrier `n`.
    pub fn column(&self, n: usize) -> Vec<Complex64> {
        (0..self.n_symbols).map(|s| self.get(s, n)).collect()
    }
}

/// A capture held in memory. Construction checks the shape only; finiteness is
/// checked by [`CsiCapture::validate`], which both file routines call.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiCapture {
    meta: CaptureMeta,
    data: Vec<Complex32>,
}

impl CsiCapture {
    pub fn new(meta: CaptureMeta, data: Vec<Complex32>) -> Result<Self> {
        meta.validate()?;
        ensure!(
            data.len() == meta.n_entries(),
            Validation,
            "expected {} entries, got {}",
            meta.n_entries(),
            data.len()
        );
        Ok(CsiCapture { meta, data })
    }

    pub fn zeros(meta: CaptureMeta) -> Result<Self> {
        meta.validate()?;
        let n = meta.n_entries();
        Ok(CsiCapture {
            meta,
            data: vec![Complex32::new(0.0, 0.0); n],
        })
    }

    pub fn meta(&self) -> &CaptureMeta {
        &self.meta
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        ensure!(
            self.data.len() == self.meta.n_entries(),
            Validation,
            "entry count mismatch"
        );
        if let Some(i) = self
            .data
            .iter()
            .position(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Err(Error::Validation(format!("non-finite entry at flat index {i}")));
        }
        Ok(())
    }

    fn offset(&self, s: usize, pair: BeamPair) -> usize {
        (s * self.meta.n_pairs() + self.meta.pair_index(pair)) * self.meta.n_subcarriers
    }

    pub fn get(&self, s: usize, pair: BeamPair, n: usize) -> Result<Complex64> {
        self.meta.check_pair(pair)?;
        ensure!(s < self.meta.n_symbols, Range, "symbol {s} out of range");
        ensure!(n < self.meta.n_subcarriers, Range, "subcarrier {n} out of range");
        let c = self.data[self.offset(s, pair) + n];
        Ok(Complex64::new(c.re as f64, c.im as f64))
    }

    /// Subcarrier row of one symbol of one pair.
    pub fn row(&self, s: usize, pair: BeamPair) -> Result<&[Complex32]> {
        self.meta.check_pair(pair)?;
        ensure!(s < self.meta.n_symbols, Range, "symbol {s} out of range");
        let o = self.offset(s, pair);
        Ok(&self.data[o..o + self.meta.n_subcarriers])
    }

    pub fn slice_pair(&self, pair: BeamPair) -> Result<PairMatrix> {
        self.meta.check_pair(pair)?;
        let nf = self.meta.n_subcarriers;
        let mut data = Vec::with_capacity(self.meta.n_symbols * nf);
        for s in 0..self.meta.n_symbols {
            let o = self.offset(s, pair);
            data.extend(
                self.data[o..o + nf]
                    .iter()
                    .map(|c| Complex64::new(c.re as f64, c.im as f64)),
            );
        }
        Ok(PairMatrix {
            n_symbols: self.meta.n_symbols,
            n_subcarriers: nf,
            data,
        })
    }

    /// Overwrite one pair with `m` (rounded to `f32`).
    pub fn set_pair(&mut self, pair: BeamPair, m: &PairMatrix) -> Result<()> {
        self.meta.check_pair(pair)?;
        ensure!(
            m.n_symbols == self.meta.n_symbols && m.n_subcarriers == self.meta.n_subcarriers,
            Validation,
            "pair matrix shape {}x{} does not match capture",
            m.n_symbols,
            m.n_subcarriers
        );
        let nf = self.meta.n_subcarriers;
        for s in 0..self.meta.n_symbols {
            let o = self.offset(s, pair);
            for (dst, src) in self.data[o..o + nf].iter_mut().zip(m.row(s)) {
                *dst = Complex32::new(src.re as f32, src.im as f32);
            }
        }
        Ok(())
    }

    /// Mutable access for in-place edits. Callers are responsible for keeping the
    /// entries finite.
    pub fn data_mut(&mut self) -> &mut [Complex32] {
        &mut self.data
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_string(&self.meta)?;
        let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + 8 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for c in &self.data {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(
            bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] == MAGIC,
            Format,
            "missing CSIV1 magic"
        );
        let rest = &bytes[MAGIC.len()..];
        let eol = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("unterminated header".into()))?;
        let meta: CaptureMeta = serde_json::from_slice(&rest[..eol])
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        meta.validate()
            .map_err(|e| Error::Format(format!("bad header: {e}")))?;
        let payload = &rest[eol + 1..];
        let expected = 8 * meta.n_entries();
        ensure!(
            payload.len() == expected,
            Corruption,
            "payload is {} bytes, header implies {expected}",
            payload.len()
        );
        let data = payload
            .chunks_exact(8)
            .map(|b| {
                Complex32::new(
                    f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
                    f32::from_le_bytes([b[4], b[5], b[6], b[7]]),
                )
            })
            .collect();
        let capture = CsiCapture { meta, data };
        capture.validate()?;
        Ok(capture)
    }
}

pub fn read_capture(path: impl AsRef<Path>) -> Result<CsiCapture> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    CsiCapture::from_bytes(&bytes)
}

/// Write `capture` to `path`. Nothing is created when validation fails.
pub fn write_capture(capture: &CsiCapture, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = capture.to_bytes()?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
