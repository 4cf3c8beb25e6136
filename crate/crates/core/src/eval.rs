//! Objective metrics, test-set tables and spectrogram images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::LrHrPair;
use crate::dsp::{sinc_resample, stft, write_wav, ComplexSpectrogram, Sample, StftConfig, WavFormat, WaveSignal};
use crate::error::{AeroError, Result};
use crate::pipeline::Upsampler;

pub const LSD_POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LsdConfig {
    pub fft_size: usize,
    pub hop_length: usize,
}

impl Default for LsdConfig {
    fn default() -> Self {
        Self { fft_size: 2048, hop_length: 512 }
    }
}

impl LsdConfig {
    fn stft_config(&self) -> Result<StftConfig> {
        Ok(StftConfig::hann(self.fft_size, self.fft_size, self.hop_length)?)
    }

    /// Frames whose centre lies inside the signal.
    pub fn frames(&self, len: usize) -> usize {
        (len - 1) / self.hop_length + 1
    }
}

/// `log10` power grid, frames-major.
fn log_power<T: Sample>(x: &WaveSignal<T>, cfg: &LsdConfig) -> Result<Vec<Vec<f64>>> {
    let spec = stft(&x.cast::<f64>(), &cfg.stft_config()?)?;
    let frames = cfg.frames(x.len()).min(spec.frames());
    Ok((0..frames)
        .map(|n| {
            (0..spec.bins())
                .map(|k| spec.get(k, n).norm_sqr().max(LSD_POWER_FLOOR).log10())
                .collect()
        })
        .collect())
}

fn check_pair<T: Sample>(y: &WaveSignal<T>, yhat: &WaveSignal<T>, cfg: &LsdConfig) -> Result<()> {
    if y.len() != yhat.len() || y.sample_rate() != yhat.sample_rate() {
        return Err(AeroError::Metric(format!(
            "lsd needs matching signals, got {} @ {} Hz and {} @ {} Hz",
            y.len(),
            y.sample_rate(),
            yhat.len(),
            yhat.sample_rate()
        )));
    }
    if y.len() < cfg.fft_size {
        return Err(AeroError::Metric(format!(
            "lsd needs at least {} samples, got {}",
            cfg.fft_size,
            y.len()
        )));
    }
    Ok(())
}

/// Log-spectral distance restricted to bins `lo..hi`.
pub fn lsd_bins<T: Sample>(y: &WaveSignal<T>, yhat: &WaveSignal<T>, cfg: &LsdConfig, lo: usize, hi: usize) -> Result<f64> {
    check_pair(y, yhat, cfg)?;
    let a = log_power(y, cfg)?;
    let b = log_power(yhat, cfg)?;
    let bins = a[0].len();
    if lo >= hi || hi > bins {
        return Err(AeroError::Metric(format!("bin range {lo}..{hi} invalid for {bins} bins")));
    }
    let k = (hi - lo) as f64;
    let total: f64 = a
        .iter()
        .zip(&b)
        .map(|(fa, fb)| (fa[lo..hi].iter().zip(&fb[lo..hi]).map(|(p, q)| (q - p).powi(2)).sum::<f64>() / k).sqrt())
        .sum();
    Ok(total / a.len() as f64)
}

/// Mean over frames of the RMS difference of log10 power spectra.
pub fn lsd<T: Sample>(y: &WaveSignal<T>, yhat: &WaveSignal<T>, cfg: &LsdConfig) -> Result<f64> {
    lsd_bins(y, yhat, cfg, 0, cfg.fft_size / 2 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisqolMode {
    Speech,
    Audio,
}

impl VisqolMode {
    pub fn rate(&self) -> u32 {
        match self {
            VisqolMode::Speech => 16000,
            VisqolMode::Audio => 48000,
        }
    }
}

/// Extracts the score from a `MOS-LQO:` line of the tool's output.
pub fn parse_mos(output: &str) -> Option<f64> {
    output.lines().find_map(|l| {
        let (_, rest) = l.split_once("MOS-LQO")?;
        rest.trim_start_matches([':', ' ', '\t', '=']).split_whitespace().next()?.parse().ok()
    })
}

/// Runs the external ViSQOL binary on a reference/degraded pair.
pub fn visqol_score(reference: &WaveSignal<f32>, degraded: &WaveSignal<f32>, mode: VisqolMode, binary: &Path) -> Result<f64> {
    if !binary.is_file() {
        return Err(AeroError::MetricUnavailable(format!(
            "ViSQOL binary not found at {}",
            binary.display()
        )));
    }
    let dir = tempfile::tempdir().map_err(|e| AeroError::io(std::env::temp_dir(), e))?;
    let r = dir.path().join("reference.wav");
    let d = dir.path().join("degraded.wav");
    write_wav(&r, &sinc_resample(reference, mode.rate())?, WavFormat::Pcm16)?;
    write_wav(&d, &sinc_resample(degraded, mode.rate())?, WavFormat::Pcm16)?;
    let mut cmd = Command::new(binary);
    cmd.arg("--reference_file").arg(&r).arg("--degraded_file").arg(&d);
    if mode == VisqolMode::Speech {
        cmd.arg("--use_speech_mode");
    }
    let out = cmd
        .output()
        .map_err(|e| AeroError::MetricUnavailable(format!("cannot run {}: {e}", binary.display())))?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    if !out.status.success() {
        return Err(AeroError::Metric(format!(
            "ViSQOL exited with {}: {}{}",
            out.status,
            stdout.trim(),
            stderr.trim()
        )));
    }
    parse_mos(&stdout)
        .ok_or_else(|| AeroError::Metric(format!("no MOS-LQO in ViSQOL output: {}", stdout.trim())))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricSelection {
    pub lsd: bool,
    pub visqol: Option<(PathBuf, VisqolMode)>,
}

impl MetricSelection {
    /// Parses a comma list such as `lsd,visqol`.
    pub fn parse(list: &str, visqol_binary: Option<PathBuf>, mode: VisqolMode) -> Result<Self> {
        let mut sel = MetricSelection::default();
        for m in list.split(',').map(str::trim).filter(|m| !m.is_empty()) {
            match m {
                "lsd" => sel.lsd = true,
                "visqol" => {
                    let bin = visqol_binary.clone().ok_or_else(|| {
                        AeroError::MetricUnavailable("visqol requested but no binary path given".into())
                    })?;
                    sel.visqol = Some((bin, mode));
                }
                other => return Err(AeroError::Config(format!("unknown metric {other:?} (lsd, visqol)"))),
            }
        }
        if !sel.lsd && sel.visqol.is_none() {
            return Err(AeroError::Config("no metrics selected".into()));
        }
        Ok(sel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub path: String,
    pub lsd: Option<f64>,
    pub visqol: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub system: String,
    pub rows: Vec<EvalRow>,
    pub mean_lsd: Option<f64>,
    pub mean_visqol: Option<f64>,
    /// Rows that produced every requested metric.
    pub count: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

impl EvalResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,lsd,visqol,error\n");
        let q = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                q(&r.path),
                r.lsd.map(|v| v.to_string()).unwrap_or_default(),
                r.visqol.map(|v| v.to_string()).unwrap_or_default(),
                q(r.error.as_deref().unwrap_or(""))
            );
        }
        let _ = writeln!(
            out,
            "mean,{},{},{} of {} files",
            self.mean_lsd.map(|v| v.to_string()).unwrap_or_default(),
            self.mean_visqol.map(|v| v.to_string()).unwrap_or_default(),
            self.count,
            self.rows.len()
        );
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.path.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:>8}  {:>8}\n", format!("[{}]", self.system), "LSD", "ViSQOL");
        for r in &self.rows {
            let _ = write!(out, "{:<width$}  {:>8}  {:>8}", r.path, fmt_opt(r.lsd), fmt_opt(r.visqol));
            if let Some(e) = &r.error {
                let _ = write!(out, "  error: {e}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  ({} of {} files)",
            "mean",
            fmt_opt(self.mean_lsd),
            fmt_opt(self.mean_visqol),
            self.count,
            self.rows.len()
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| AeroError::io(path, e))
    }
}

/// Upsamples every pair's low-rate side and scores it against the
/// high-rate side. Per-file failures are recorded in their row; an
/// unavailable metric aborts the run.
pub fn evaluate_testset(system: &dyn Upsampler, pairs: &[LrHrPair], metrics: &MetricSelection, lsd_cfg: &LsdConfig) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(AeroError::Data("evaluation set is empty".into()));
    }
    let mut order: Vec<&LrHrPair> = pairs.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rows = Vec::with_capacity(order.len());
    for p in order {
        let mut row = EvalRow { path: p.id.clone(), lsd: None, visqol: None, error: None };
        let result = (|| -> Result<()> {
            let yhat = system.upsample(&p.lr, p.hr.sample_rate())?;
            let yhat = yhat.fit_to_len(p.hr.len())?;
            if metrics.lsd {
                row.lsd = Some(lsd(&p.hr, &yhat, lsd_cfg)?);
            }
            if let Some((bin, mode)) = &metrics.visqol {
                row.visqol = Some(visqol_score(&p.hr, &yhat, *mode, bin)?);
            }
            Ok(())
        })();
        match result {
            Ok(()) => {}
            Err(e @ AeroError::MetricUnavailable(_)) => return Err(e),
            Err(e) => row.error = Some(e.to_string()),
        }
        rows.push(row);
    }
    let ok: Vec<&EvalRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    Ok(EvalResult {
        system: system.name(),
        mean_lsd: mean(ok.iter().filter_map(|r| r.lsd)),
        mean_visqol: mean(ok.iter().filter_map(|r| r.visqol)),
        count: ok.len(),
        rows,
    })
}

/// Input for [`render_spectrogram_image`].
pub enum SpectrogramSource<'a> {
    Wave(&'a WaveSignal<f32>),
    /// Spectrogram plus the sample rate its bins refer to.
    Spectrum(&'a ComplexSpectrogram<f64>, u32),
}

const DYNAMIC_RANGE_DB: f64 = 80.0;
const MARGIN: u32 = 24;

const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn draw_number(img: &mut RgbImage, n: u32, x0: u32, y0: i64) {
    let text = n.to_string();
    for (i, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    let x = x0 + i as u32 * 4 + col;
                    let y = y0 + row as i64;
                    if y >= 0 && (y as u32) < img.height() && x < img.width() {
                        img.put_pixel(x, y as u32, Rgb([255, 255, 255]));
                    }
                }
            }
        }
    }
}

fn colormap(t: f64) -> Rgb<u8> {
    let stops = [(0.0, [0.0, 0.0, 4.0]), (0.35, [120.0, 28.0, 109.0]), (0.7, [237.0, 105.0, 37.0]), (1.0, [252.0, 255.0, 164.0])];
    let t = t.clamp(0.0, 1.0);
    for w in stops.windows(2) {
        let ((t0, c0), (t1, c1)) = (w[0], w[1]);
        if t <= t1 {
            let f = (t - t0) / (t1 - t0);
            return Rgb([0, 1, 2].map(|i| (c0[i] + f * (c1[i] - c0[i])).round() as u8));
        }
    }
    Rgb([252, 255, 164])
}

/// Writes a log-magnitude spectrogram PNG, low frequencies at the bottom,
/// with kHz ticks up to the Nyquist frequency on the left margin.
pub fn render_spectrogram_image(source: SpectrogramSource<'_>, path: &Path) -> Result<()> {
    let owned;
    let (spec, rate) = match source {
        SpectrogramSource::Wave(w) => {
            let fft = if w.len() >= 2048 { 1024 } else { 256 };
            let cfg = StftConfig::hann(fft, fft, fft / 4)?;
            let padded = if w.len() > fft / 2 { w.cast::<f64>() } else { w.cast::<f64>().fit_to_len(fft / 2 + 1)? };
            owned = stft(&padded, &cfg)?;
            (&owned, w.sample_rate())
        }
        SpectrogramSource::Spectrum(s, rate) => (s, rate),
    };
    let (bins, frames) = (spec.bins(), spec.frames().max(1));
    let db: Vec<f64> = spec.values().iter().map(|c| 20.0 * c.norm().max(1e-10).log10()).collect();
    let top = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let top = if top.is_finite() { top } else { 0.0 };
    let mut img = RgbImage::from_pixel(MARGIN + frames as u32, bins as u32, Rgb([0, 0, 0]));
    for k in 0..bins {
        for n in 0..spec.frames() {
            let t = (db[k * spec.frames() + n] - (top - DYNAMIC_RANGE_DB)) / DYNAMIC_RANGE_DB;
            img.put_pixel(MARGIN + n as u32, (bins - 1 - k) as u32, colormap(t));
        }
    }
    let nyquist_khz = rate as f64 / 2000.0;
    let step = [1.0, 2.0, 4.0, 5.0, 10.0].into_iter().find(|s| nyquist_khz / s <= 8.0).unwrap_or(20.0);
    let mut khz = 0.0;
    while khz <= nyquist_khz + 1e-9 {
        let y = ((1.0 - khz / nyquist_khz) * (bins - 1) as f64).round() as i64;
        for x in MARGIN - 4..MARGIN {
            img.put_pixel(x, y.clamp(0, bins as i64 - 1) as u32, Rgb([255, 255, 255]));
        }
        draw_number(&mut img, khz.round() as u32, 2, (y - 2).clamp(0, (bins as i64 - 5).max(0)));
        khz += step;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AeroError::io(dir, e))?;
    }
    img.save(path).map_err(|e| AeroError::Image(e))?;
    Ok(())
}
