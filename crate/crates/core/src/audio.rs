//! Acousto-optical transducer and the end-to-end microphone pipeline.
//!
//! calibrated PCM → sound pressure → membrane displacement → optical phase
//! → detector counts → phase estimate → reconstructed PCM.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Scheme, SensorConfig};
use crate::detection::{
    estimate_phase, simulate_record, CommonModeNoise, PhaseTrace, SumNormalization, QUADRATURE,
};
use crate::error::{Error, Result};
use crate::exec::{substream, Execution};

/// Reference pressure of the dB_SPL scale, in pascal.
pub const P_REF: f64 = 20e-6;

/// Membrane gain chosen so that a full-scale PCM peak at 60 dB_SPL moves the
/// quantum sensor's optical phase by about 0.1 rad.
pub const DEFAULT_GAIN_NM_PER_PA: f64 = 211.7;

/// Largest optical phase excursion treated as linear.
pub const LINEAR_PHASE_LIMIT: f64 = 0.3;

/// SNR reported when the residual vanishes.
pub const SNR_CAP_DB: f64 = 120.0;

pub const AUDIO_SAMPLE_RATE: f64 = 20_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f64>,
    sample_rate: f64,
    /// dB_SPL offset of PCM full scale.
    spl_reference: f64,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64, spl_reference: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::domain("sample_rate", format!("must be > 0, got {sample_rate}")));
        }
        if !spl_reference.is_finite() {
            return Err(Error::domain("spl_reference", "must be finite"));
        }
        if let Some(i) = samples.iter().position(|s| !(s.is_finite() && s.abs() <= 1.0)) {
            return Err(Error::domain(
                "samples",
                format!("sample {i} = {} outside [-1, 1]", samples[i]),
            ));
        }
        Ok(AudioSignal {
            samples,
            sample_rate,
            spl_reference,
        })
    }

    /// Scales arbitrary samples into [-1, 1] by their peak.
    ///
    /// Returns the signal and the factor that maps it back to the input units.
    pub fn peak_normalized(samples: Vec<f64>, sample_rate: f64, spl_reference: f64) -> Result<(Self, f64)> {
        let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let scale = if peak > 0.0 { peak } else { 1.0 };
        let s = samples.into_iter().map(|x| x / scale).collect();
        Ok((Self::new(s, sample_rate, spl_reference)?, scale))
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn spl_reference(&self) -> f64 {
        self.spl_reference
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        let channels = spec.channels as usize;
        let raw: Vec<f64> = match spec.sample_format {
            hound::SampleFormat::Int => {
                let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| (v as f64 / full).max(-1.0)))
                    .collect::<std::result::Result<_, _>>()?
            }
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .map(|s| s.map(|v| (v as f64).clamp(-1.0, 1.0)))
                .collect::<std::result::Result<_, _>>()?,
        };
        // downmix to mono
        let samples = raw
            .chunks(channels)
            .map(|c| c.iter().sum::<f64>() / channels as f64)
            .collect();
        Self::new(samples, spec.sample_rate as f64, 0.0)
    }

    /// 16-bit mono PCM.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate.round() as u32,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for s in &self.samples {
            w.write_sample((s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)?;
        }
        w.finalize()?;
        Ok(())
    }
}

/// Speech-like test signal: a voiced harmonic series with a drifting pitch,
/// three formant weights and a syllabic envelope. Peak-normalized to 0.99.
pub fn synthetic_speech(duration_s: f64, sample_rate: f64, seed: u64) -> Result<AudioSignal> {
    if !(duration_s > 0.0) {
        return Err(Error::domain("duration_s", "must be > 0"));
    }
    let mut rng = substream(seed, 0);
    let n = (duration_s * sample_rate).round() as usize;
    let f0_base: f64 = rng.random_range(100.0..200.0);
    let syllable_rate: f64 = rng.random_range(3.0..5.0);
    let formants: [f64; 3] = [
        rng.random_range(400.0..800.0),
        rng.random_range(1000.0..1800.0),
        rng.random_range(2200.0..3000.0),
    ];
    let harmonics = ((4000.0 / f0_base) as usize).max(1);
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let weights: Vec<f64> = (1..=harmonics)
        .map(|h| {
            let f = h as f64 * f0_base;
            formants
                .iter()
                .map(|fm| (-((f - fm) / 250.0).powi(2)).exp())
                .sum::<f64>()
                + 0.05 / h as f64
        })
        .collect();

    let mut pitch_phase = 0.0;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / sample_rate;
        let f0 = f0_base * (1.0 + 0.1 * (2.0 * PI * 0.7 * t).sin());
        pitch_phase += 2.0 * PI * f0 / sample_rate;
        let env = 0.5 * (1.0 - (2.0 * PI * syllable_rate * t).cos());
        let v: f64 = weights
            .iter()
            .zip(&phases)
            .enumerate()
            .map(|(h, (w, p))| w * ((h + 1) as f64 * pitch_phase + p).sin())
            .sum();
        out.push(env * v);
    }
    let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs())).max(f64::MIN_POSITIVE);
    AudioSignal::new(out.into_iter().map(|x| 0.99 * x / peak).collect(), sample_rate, 0.0)
}

/// Frequency response of the membrane displacement per unit pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MembraneResponse {
    /// Ideal flat response up to the band edge.
    Flat { band_edge_hz: f64 },
    /// Damped second-order (mass–spring) response, flat well below `f0_hz`.
    Resonant { band_edge_hz: f64, f0_hz: f64, q: f64 },
}

impl Default for MembraneResponse {
    fn default() -> Self {
        MembraneResponse::Flat { band_edge_hz: 15_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MembraneModel {
    pub diameter_mm: f64,
    pub thickness_um: f64,
    pub gain_nm_per_pa: f64,
    pub response: MembraneResponse,
}

impl Default for MembraneModel {
    fn default() -> Self {
        MembraneModel {
            diameter_mm: 12.7,
            thickness_um: 70.0,
            gain_nm_per_pa: DEFAULT_GAIN_NM_PER_PA,
            response: MembraneResponse::default(),
        }
    }
}

impl MembraneModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_nm_per_pa.is_finite() && self.gain_nm_per_pa > 0.0) {
            return Err(Error::domain("gain_nm_per_pa", "must be > 0"));
        }
        if !(self.diameter_mm > 0.0 && self.thickness_um > 0.0) {
            return Err(Error::domain("diameter_mm", "membrane dimensions must be > 0"));
        }
        match self.response {
            MembraneResponse::Flat { band_edge_hz } if band_edge_hz > 0.0 => Ok(()),
            MembraneResponse::Resonant { band_edge_hz, f0_hz, q } if band_edge_hz > 0.0 && f0_hz > 0.0 && q > 0.0 => {
                Ok(())
            }
            _ => Err(Error::domain("response", "band edge, f0 and q must be > 0")),
        }
    }

    /// Response filter applied to the pressure waveform (unit DC gain).
    fn filter(&self, x: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
        match self.response {
            MembraneResponse::Flat { .. } => Ok(x.to_vec()),
            MembraneResponse::Resonant { f0_hz, q, .. } => {
                if f0_hz >= sample_rate / 2.0 {
                    return Err(Error::domain("f0_hz", "resonance must lie below Nyquist"));
                }
                Ok(Biquad::resonant_lowpass(f0_hz, q, sample_rate).run(x))
            }
        }
    }
}

/// Transposed direct-form II biquad.
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// Bilinear transform of ω0²/(s² + s·ω0/Q + ω0²), prewarped at f0.
    fn resonant_lowpass(f0: f64, q: f64, fs: f64) -> Self {
        let k = (PI * f0 / fs).tan();
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [2.0 * (k * k - 1.0) * norm, (1.0 - k / q + k * k) * norm],
        }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut z1, mut z2) = (0.0, 0.0);
        x.iter()
            .map(|&v| {
                let y = self.b[0] * v + z1;
                z1 = self.b[1] * v - self.a[0] * y + z2;
                z2 = self.b[2] * v - self.a[1] * y;
                y
            })
            .collect()
    }
}

/// Pressure amplitude (Pa) of PCM full scale at playback volume `volume_db_spl`.
pub fn full_scale_pressure(volume_db_spl: f64, spl_reference: f64) -> f64 {
    P_REF * 10f64.powf((volume_db_spl - spl_reference) / 20.0)
}

/// Membrane displacement in nm for each audio sample.
pub fn audio_to_displacement(audio: &AudioSignal, volume_db_spl: f64, membrane: &MembraneModel) -> Result<Vec<f64>> {
    membrane.validate()?;
    if !volume_db_spl.is_finite() {
        return Err(Error::domain("volume_db_spl", "must be finite"));
    }
    let p0 = full_scale_pressure(volume_db_spl, audio.spl_reference);
    let pressure: Vec<f64> = audio.samples.iter().map(|s| s * p0).collect();
    let filtered = membrane.filter(&pressure, audio.sample_rate)?;
    Ok(filtered.into_iter().map(|p| p * membrane.gain_nm_per_pa).collect())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordOptions {
    pub noise: CommonModeNoise,
    pub normalization: SumNormalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    /// Reconstructed audio, peak-normalized into [-1, 1].
    pub audio: AudioSignal,
    /// Multiply `audio` samples by this to get calibrated PCM units.
    pub pcm_scale: f64,
    /// Largest optical phase excursion from the operating point.
    pub max_abs_phase: f64,
    /// Samples whose excursion exceeded [`LINEAR_PHASE_LIMIT`].
    pub guard_violations: usize,
    /// Detector bins without counts, replaced by the operating point.
    pub invalid_bins: usize,
}

impl Recording {
    pub fn calibrated_samples(&self) -> Vec<f64> {
        self.audio.samples.iter().map(|s| s * self.pcm_scale).collect()
    }
}

/// Plays `audio` at `volume_db_spl` onto the membrane and records it with the sensor.
pub fn record_through_microphone(
    audio: &AudioSignal,
    volume_db_spl: f64,
    config: &SensorConfig,
    membrane: &MembraneModel,
    options: &RecordOptions,
    seed: u64,
    exec: Execution,
) -> Result<Recording> {
    config.validate()?;
    let displacement = audio_to_displacement(audio, volume_db_spl, membrane)?;
    let per_nm = config.phase_per_nm();
    let excursions: Vec<f64> = displacement.iter().map(|d| d * per_nm).collect();
    let max_abs_phase = excursions.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let guard_violations = excursions.iter().filter(|p| p.abs() > LINEAR_PHASE_LIMIT).count();
    if guard_violations > 0 {
        log::warn!(
            "{} at {volume_db_spl} dB_SPL: {guard_violations} of {} samples exceed the linear regime \
             (|ΔΦ| up to {max_abs_phase:.3} rad > {LINEAR_PHASE_LIMIT} rad)",
            config.scheme,
            excursions.len()
        );
    }

    let trace = PhaseTrace::new(excursions.into_iter().map(|p| QUADRATURE + p).collect(), audio.sample_rate)?;
    let record = simulate_record(&trace, config, &options.noise, seed, exec)?;
    let (estimate, invalid_bins) =
        estimate_phase(&record, QUADRATURE, options.normalization)?.into_trace_filled()?;

    // mechanical phase → displacement → pressure → PCM
    let to_pcm = config.phase_multiplicity()
        / per_nm
        / membrane.gain_nm_per_pa
        / full_scale_pressure(volume_db_spl, audio.spl_reference);
    let pcm: Vec<f64> = estimate.samples().iter().map(|p| p * to_pcm).collect();
    let (audio_out, pcm_scale) = AudioSignal::peak_normalized(pcm, audio.sample_rate, audio.spl_reference)?;
    Ok(Recording {
        audio: audio_out,
        pcm_scale,
        max_abs_phase,
        guard_violations,
        invalid_bins,
    })
}

/// Linear-interpolation resampling.
pub fn resample_linear(x: &[f64], from_rate: f64, to_rate: f64) -> Vec<f64> {
    if x.is_empty() || from_rate == to_rate {
        return x.to_vec();
    }
    let n_out = ((x.len() as f64) * to_rate / from_rate).floor() as usize;
    (0..n_out)
        .map(|k| {
            let t = k as f64 * from_rate / to_rate;
            let i = t.floor() as usize;
            let frac = t - i as f64;
            let a = x[i.min(x.len() - 1)];
            let b = x[(i + 1).min(x.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// 10·log₁₀(P_signal / P_noise) with the clean waveform projected onto the recording.
///
/// The recording is resampled to the clean rate when needed; the two must then
/// agree in length to within 1 %.
pub fn snr_measure(clean: &AudioSignal, recorded: &AudioSignal) -> Result<f64> {
    snr_measure_samples(clean.samples(), clean.sample_rate(), recorded.samples(), recorded.sample_rate())
}

pub fn snr_measure_samples(clean: &[f64], clean_rate: f64, recorded: &[f64], recorded_rate: f64) -> Result<f64> {
    let rec = resample_linear(recorded, recorded_rate, clean_rate);
    let n = clean.len().min(rec.len());
    let longest = clean.len().max(rec.len());
    if n == 0 || (longest - n) as f64 > 0.01 * longest as f64 {
        return Err(Error::Contract(format!(
            "clean and recorded lengths differ: {} vs {}",
            clean.len(),
            rec.len()
        )));
    }
    let (c, r) = (&clean[..n], &rec[..n]);
    let cc: f64 = c.iter().map(|v| v * v).sum();
    if cc == 0.0 {
        return Err(Error::domain("clean", "reference signal is silent"));
    }
    let g = c.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / cc;
    let signal = g * g * cc;
    let noise: f64 = c.iter().zip(r).map(|(a, b)| (b - g * a).powi(2)).sum();
    if noise <= signal * 10f64.powf(-SNR_CAP_DB / 10.0) {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

/// SNR_dB = α·V_A + β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrFit {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_se: f64,
    pub beta_se: f64,
    /// RMS residual, dB.
    pub residual: f64,
    pub points: usize,
}

impl SnrFit {
    pub fn predict(&self, volume_db_spl: f64) -> f64 {
        self.alpha * volume_db_spl + self.beta
    }
}

/// Least-squares line through (volume dB_SPL, SNR dB) points.
pub fn fit_snr_vs_volume(points: &[(f64, f64)]) -> Result<SnrFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::domain("points", format!("need at least 3 volume points, got {n}")));
    }
    if points.iter().any(|(x, y)| !(x.is_finite() && y.is_finite())) {
        return Err(Error::domain("points", "all points must be finite"));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("points", "volumes must not all be equal"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let alpha = sxy / sxx;
    let beta = my - alpha * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - alpha * p.0 - beta).powi(2)).sum();
    let s2 = sse / (nf - 2.0);
    Ok(SnrFit {
        alpha,
        beta,
        alpha_se: (s2 / sxx).sqrt(),
        beta_se: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        residual: (sse / nf).sqrt(),
        points: n,
    })
}

/// Classical vs. quantum SNR lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrComparison {
    pub classical: SnrFit,
    pub quantum: SnrFit,
    /// α_q − α_c from the separate fits.
    pub alpha_difference: f64,
    pub alpha_difference_se: f64,
    /// Slope shared by both schemes in the joint fit.
    pub common_alpha: f64,
    /// β_q − β_c with a common slope.
    pub beta_difference: f64,
    pub beta_difference_se: f64,
}

impl SnrComparison {
    /// |α_q − α_c| in units of its joint standard error.
    pub fn alpha_z(&self) -> f64 {
        if self.alpha_difference_se > 0.0 {
            self.alpha_difference.abs() / self.alpha_difference_se
        } else if self.alpha_difference == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Separate fits per scheme plus a joint fit SNR = α·V + β_scheme.
///
/// The intercept difference of two separate fits inherits the slope error
/// times the distance to V = 0; with a shared slope it reduces to the mean
/// SNR offset between the schemes at equal volume.
pub fn compare_snr(classical: &[(f64, f64)], quantum: &[(f64, f64)]) -> Result<SnrComparison> {
    let fc = fit_snr_vs_volume(classical)?;
    let fq = fit_snr_vs_volume(quantum)?;
    let mean = |pts: &[(f64, f64)]| {
        let n = pts.len() as f64;
        (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n)
    };
    let (xc, yc) = mean(classical);
    let (xq, yq) = mean(quantum);
    let sxx = classical.iter().map(|p| (p.0 - xc).powi(2)).sum::<f64>()
        + quantum.iter().map(|p| (p.0 - xq).powi(2)).sum::<f64>();
    let sxy = classical.iter().map(|p| (p.0 - xc) * (p.1 - yc)).sum::<f64>()
        + quantum.iter().map(|p| (p.0 - xq) * (p.1 - yq)).sum::<f64>();
    let alpha = sxy / sxx;
    let (bc, bq) = (yc - alpha * xc, yq - alpha * xq);
    let (nc, nq) = (classical.len() as f64, quantum.len() as f64);
    let sse = classical.iter().map(|p| (p.1 - alpha * p.0 - bc).powi(2)).sum::<f64>()
        + quantum.iter().map(|p| (p.1 - alpha * p.0 - bq).powi(2)).sum::<f64>();
    let s2 = sse / (nc + nq - 3.0);
    Ok(SnrComparison {
        classical: fc,
        quantum: fq,
        alpha_difference: fq.alpha - fc.alpha,
        alpha_difference_se: fc.alpha_se.hypot(fq.alpha_se),
        common_alpha: alpha,
        beta_difference: bq - bc,
        beta_difference_se: (s2 * (1.0 / nc + 1.0 / nq + (xq - xc).powi(2) / sxx)).sqrt(),
    })
}

/// Equally spaced volume grid, e.g. 22 steps of 1 dB.
pub fn volume_grid(start_db: f64, step_db: f64, steps: usize) -> Vec<f64> {
    (0..steps).map(|k| start_db + step_db * k as f64).collect()
}

/// One row of a batch manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub file: String,
    pub volume_db_spl: f64,
    pub scheme: Scheme,
    pub seed: u64,
}

/// Parses a `file,volume_db_spl,scheme,seed` CSV with header; `#` lines are comments.
pub fn read_manifest<R: Read>(r: R) -> Result<Vec<BatchEntry>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(format!("manifest: {e}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub entry: BatchEntry,
    pub snr_db: f64,
    pub recording: Recording,
}

/// Records every entry, in parallel across entries. `load` maps a manifest
/// file name to its clean audio.
pub fn run_batch<F>(
    entries: &[BatchEntry],
    load: F,
    classical: &SensorConfig,
    quantum: &SensorConfig,
    membrane: &MembraneModel,
    options: &RecordOptions,
    exec: Execution,
) -> Result<Vec<BatchResult>>
where
    F: Fn(&str) -> Result<AudioSignal> + Sync + Send,
{
    exec.map(entries.len(), |i| {
        let entry = &entries[i];
        let clean = load(&entry.file)?;
        let config = match entry.scheme {
            Scheme::Classical => classical,
            Scheme::Quantum => quantum,
        };
        let recording = record_through_microphone(
            &clean,
            entry.volume_db_spl,
            config,
            membrane,
            options,
            entry.seed,
            Execution::Sequential,
        )?;
        let snr_db = snr_measure(&clean, &recording.audio)?;
        Ok(BatchResult {
            entry: entry.clone(),
            snr_db,
            recording,
        })
    })
    .into_iter()
    .collect()
}

pub fn write_batch_results<W: Write>(results: &[BatchResult], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["file", "scheme", "volume", "snr_db"])?;
    for r in results {
        out.write_record([
            r.entry.file.clone(),
            r.entry.scheme.to_string(),
            r.entry.volume_db_spl.to_string(),
            format!("{:.6}", r.snr_db),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn scheme_points(results: &[BatchResult], scheme: Scheme) -> Vec<(f64, f64)> {
    results
        .iter()
        .filter(|r| r.entry.scheme == scheme)
        .map(|r| (r.entry.volume_db_spl, r.snr_db))
        .collect()
}

/// SNR-vs-volume fit for one scheme over a set of batch results.
pub fn fit_scheme(results: &[BatchResult], scheme: Scheme) -> Result<SnrFit> {
    fit_snr_vs_volume(&scheme_points(results, scheme))
}

pub fn compare_batch(results: &[BatchResult]) -> Result<SnrComparison> {
    compare_snr(&scheme_points(results, Scheme::Classical), &scheme_points(results, Scheme::Quantum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{phase_noise_spectrum, WindowMeta};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand_distr::StandardNormal;

    fn tone(freq: f64, amp: f64, secs: f64, fs: f64) -> AudioSignal {
        let n = (secs * fs) as usize;
        AudioSignal::new((0..n).map(|k| amp * (2.0 * PI * freq * k as f64 / fs).sin()).collect(), fs, 0.0).unwrap()
    }

    fn peak(x: &[f64]) -> f64 {
        x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Amplitude of the `freq` component by projection onto sin/cos.
    fn tone_amplitude(x: &[f64], freq: f64, fs: f64) -> f64 {
        let n = x.len() as f64;
        let (mut s, mut c) = (0.0, 0.0);
        for (k, v) in x.iter().enumerate() {
            let w = 2.0 * PI * freq * k as f64 / fs;
            s += v * w.sin();
            c += v * w.cos();
        }
        2.0 * (s * s + c * c).sqrt() / n
    }

    fn bright(config: SensorConfig) -> SensorConfig {
        SensorConfig { photon_rate: 1e12, ..config }
    }

    #[test]
    fn rejects_out_of_range_pcm() {
        assert!(AudioSignal::new(vec![0.0, 1.5], 2e4, 0.0).is_err());
        assert!(AudioSignal::new(vec![0.0], -1.0, 0.0).is_err());
    }

    #[test]
    fn silence_gives_zero_displacement() {
        let a = AudioSignal::new(vec![0.0; 100], 2e4, 0.0).unwrap();
        let d = audio_to_displacement(&a, 70.0, &MembraneModel::default()).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pressure_doubling_doubles_displacement() {
        let a = tone(1000.0, 0.5, 0.05, 2e4);
        let m = MembraneModel::default();
        let d1 = audio_to_displacement(&a, 50.0, &m).unwrap();
        let d2 = audio_to_displacement(&a, 50.0 + 20.0 * 2f64.log10(), &m).unwrap();
        assert_relative_eq!(peak(&d2) / peak(&d1), 2.0, max_relative = 1e-3);
    }

    #[test]
    fn flat_response_across_audio_band() {
        let fs = 48_000.0;
        let m = MembraneModel::default();
        let reference = {
            let d = audio_to_displacement(&tone(200.0, 0.5, 0.1, fs), 60.0, &m).unwrap();
            tone_amplitude(&d, 200.0, fs)
        };
        for f in [200.0, 500.0, 1000.0, 2000.0, 5000.0, 10_000.0, 15_000.0] {
            let d = audio_to_displacement(&tone(f, 0.5, 0.1, fs), 60.0, &m).unwrap();
            let db = 20.0 * (tone_amplitude(&d, f, fs) / reference).log10();
            assert!(db.abs() < 1.0, "{f} Hz: {db} dB");
        }
    }

    #[test]
    fn resonant_membrane_flat_below_resonance() {
        let fs = 96_000.0;
        let m = MembraneModel {
            response: MembraneResponse::Resonant { band_edge_hz: 15_000.0, f0_hz: 25_000.0, q: 0.7 },
            ..MembraneModel::default()
        };
        let gain = |f: f64| {
            let a = tone(f, 0.5, 0.2, fs);
            let d = audio_to_displacement(&a, 60.0, &m).unwrap();
            let flat = audio_to_displacement(&a, 60.0, &MembraneModel::default()).unwrap();
            // skip filter start-up
            tone_amplitude(&d[2000..], f, fs) / tone_amplitude(&flat[2000..], f, fs)
        };
        for f in [200.0, 1000.0, 5000.0, 10_000.0] {
            assert!((20.0 * gain(f).log10()).abs() < 1.0, "{f} Hz");
        }
        let peaky = MembraneModel {
            response: MembraneResponse::Resonant { band_edge_hz: 15_000.0, f0_hz: 5_000.0, q: 5.0 },
            ..MembraneModel::default()
        };
        let a = tone(5_000.0, 0.5, 0.2, fs);
        let d = audio_to_displacement(&a, 60.0, &peaky).unwrap();
        let flat = audio_to_displacement(&a, 60.0, &MembraneModel::default()).unwrap();
        assert_relative_eq!(tone_amplitude(&d[4000..], 5e3, fs) / tone_amplitude(&flat[4000..], 5e3, fs), 5.0, max_relative = 0.02);
    }

    #[test]
    fn gain_calibration() {
        let a = tone(1000.0, 1.0, 0.01, 2e4);
        let d = audio_to_displacement(&a, 60.0, &MembraneModel::default()).unwrap();
        let phase = peak(&d) * SensorConfig::quantum().phase_per_nm();
        assert_abs_diff_eq!(phase, 0.1, epsilon = 0.002);
    }

    #[test]
    fn silence_records_zero_mean_shot_noise() {
        let a = AudioSignal::new(vec![0.0; 40_000], AUDIO_SAMPLE_RATE, 0.0).unwrap();
        for cfg in [SensorConfig::classical(), SensorConfig::quantum()] {
            let r = record_through_microphone(&a, 60.0, &cfg, &MembraneModel::default(), &RecordOptions::default(), 1, Execution::Parallel).unwrap();
            let x = r.calibrated_samples();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
            assert!(sd > 0.0);
            assert!(mean.abs() < 4.0 * sd / (x.len() as f64).sqrt());
            assert_eq!(r.guard_violations, 0);
        }
    }

    #[test]
    fn quantum_noise_floor_is_lower() {
        let a = AudioSignal::new(vec![0.0; 200_000], AUDIO_SAMPLE_RATE, 0.0).unwrap();
        let sd = |cfg: &SensorConfig| {
            let r = record_through_microphone(&a, 60.0, cfg, &MembraneModel::default(), &RecordOptions::default(), 9, Execution::Parallel).unwrap();
            let x = r.calibrated_samples();
            (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
        };
        let ratio = sd(&SensorConfig::classical()) / sd(&SensorConfig::quantum());
        assert!((ratio - 1.121).abs() < 0.02, "noise ratio {ratio}");
    }

    #[test]
    fn tone_survives_without_harmonics() {
        let fs = AUDIO_SAMPLE_RATE;
        let a = tone(1000.0, 0.9, 1.0, fs);
        for cfg in [bright(SensorConfig::classical()), bright(SensorConfig::quantum())] {
            // 68 dB keeps the quantum excursion at ≈0.24 rad
            let r = record_through_microphone(&a, 68.0, &cfg, &MembraneModel::default(), &RecordOptions::default(), 2, Execution::Parallel).unwrap();
            assert_eq!(r.guard_violations, 0);
            let x = r.calibrated_samples();
            let trace = PhaseTrace::new(x.clone(), fs).unwrap();
            let s = phase_noise_spectrum(&trace, WindowMeta::new(4096), Execution::Sequential).unwrap();
            let p = |f: f64| s.band_power(f - 30.0, f + 30.0);
            let fundamental = p(1000.0);
            for h in 2..=9 {
                let dbc = 10.0 * (p(1000.0 * h as f64) / fundamental).log10();
                assert!(dbc < -40.0, "{:?} harmonic {h}: {dbc} dBc", cfg.scheme);
            }
            assert_relative_eq!(tone_amplitude(&x, 1000.0, fs), 0.9, max_relative = 0.02);
        }
    }

    #[test]
    fn end_to_end_linearity() {
        let fs = AUDIO_SAMPLE_RATE;
        let a = tone(700.0, 0.9, 0.5, fs);
        for cfg in [bright(SensorConfig::classical()), bright(SensorConfig::quantum())] {
            let mut gains = Vec::new();
            for v in [40.0, 50.0, 60.0, 66.0] {
                let r = record_through_microphone(&a, v, &cfg, &MembraneModel::default(), &RecordOptions::default(), 3, Execution::Parallel).unwrap();
                assert_eq!(r.guard_violations, 0);
                // output tone amplitude in pressure units relative to input
                gains.push(tone_amplitude(&r.calibrated_samples(), 700.0, fs) / 0.9);
            }
            for g in &gains {
                assert!((g / gains[0] - 1.0).abs() < 0.01, "{:?}: {gains:?}", cfg.scheme);
            }
        }
    }

    #[test]
    fn guard_flags_large_excursions() {
        let a = tone(500.0, 1.0, 0.02, AUDIO_SAMPLE_RATE);
        let r = record_through_microphone(&a, 75.0, &SensorConfig::quantum(), &MembraneModel::default(), &RecordOptions::default(), 4, Execution::Sequential).unwrap();
        assert!(r.guard_violations > 0);
        assert!(r.max_abs_phase > LINEAR_PHASE_LIMIT);
    }

    #[test]
    fn recording_is_deterministic() {
        let a = synthetic_speech(0.5, AUDIO_SAMPLE_RATE, 5).unwrap();
        let run = |exec| {
            record_through_microphone(&a, 60.0, &SensorConfig::quantum(), &MembraneModel::default(), &RecordOptions::default(), 11, exec).unwrap()
        };
        assert_eq!(run(Execution::Parallel), run(Execution::Sequential));
    }

    #[test]
    fn snr_examples() {
        let clean = tone(440.0, 0.5, 1.0, 2e4);
        assert!(snr_measure(&clean, &clean).unwrap() >= 120.0);

        let mut rng = substream(6, 0);
        let power = clean.samples().iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
        let noise: Vec<f64> = (0..clean.len()).map(|_| power.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
        let noisy: Vec<f64> = clean.samples().iter().zip(&noise).map(|(c, n)| c + n).collect();
        let snr = snr_measure_samples(clean.samples(), 2e4, &noisy, 2e4).unwrap();
        assert_abs_diff_eq!(snr, 0.0, epsilon = 0.2);

        let long_clean = tone(440.0, 0.5, 5.0, 2e4);
        let pure_noise: Vec<f64> = (0..long_clean.len()).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(snr_measure_samples(long_clean.samples(), 2e4, &pure_noise, 2e4).unwrap() < -40.0);

        // gain-invariant
        let scaled: Vec<f64> = noisy.iter().map(|v| 0.01 * v).collect();
        assert_abs_diff_eq!(snr_measure_samples(clean.samples(), 2e4, &scaled, 2e4).unwrap(), snr, epsilon = 1e-9);
    }

    #[test]
    fn snr_resamples_and_checks_lengths() {
        let clean = tone(300.0, 0.5, 1.0, 2e4);
        let rec = tone(300.0, 0.5, 1.0, 4e4);
        assert!(snr_measure(&clean, &rec).unwrap() > 40.0);
        let short = tone(300.0, 0.5, 0.5, 2e4);
        assert!(snr_measure(&clean, &short).is_err());
    }

    #[test]
    fn snr_fit_examples() {
        let pts: Vec<(f64, f64)> = (0..22).map(|k| {
            let v = 40.0 + k as f64;
            (v, 0.95 * v + 7.04)
        }).collect();
        let fit = fit_snr_vs_volume(&pts).unwrap();
        assert_abs_diff_eq!(fit.alpha, 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.beta, 7.04, epsilon = 1e-10);
        assert!(fit.residual < 1e-10);
        assert!(fit_snr_vs_volume(&pts[..2]).is_err());
        assert!(fit_snr_vs_volume(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]).is_err());
    }

    #[test]
    fn comparison_of_parallel_lines() {
        let line = |b: f64| -> Vec<(f64, f64)> { (0..22).map(|k| (48.0 + k as f64, 0.95 * (48.0 + k as f64) + b)).collect() };
        let c = compare_snr(&line(6.20), &line(7.04)).unwrap();
        assert_abs_diff_eq!(c.beta_difference, 0.84, epsilon = 1e-9);
        assert_abs_diff_eq!(c.common_alpha, 0.95, epsilon = 1e-12);
        assert_abs_diff_eq!(c.alpha_difference, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn comparison_matches_separate_fits_when_slopes_agree() {
        let mut rng = substream(12, 0);
        let mut noisy = |b: f64| -> Vec<(f64, f64)> {
            (0..22).map(|k| {
                let v = 48.0 + k as f64;
                (v, 0.95 * v + b + 0.2 * rng.sample::<f64, _>(StandardNormal))
            }).collect()
        };
        let (pc, pq) = (noisy(6.20), noisy(7.04));
        let c = compare_snr(&pc, &pq).unwrap();
        // the shared-slope offset is far tighter than the separate intercepts
        assert!(c.beta_difference_se < 0.2 * c.classical.beta_se.hypot(c.quantum.beta_se));
        assert!((c.beta_difference - 0.84).abs() < 3.0 * c.beta_difference_se);
    }

    #[test]
    fn manifest_parses() {
        let text = "file,volume_db_spl,scheme,seed\n# comment\na.wav, 55.5, quantum, 3\nb.wav,60,classical,4\n";
        let e = read_manifest(text.as_bytes()).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].scheme, Scheme::Quantum);
        assert_eq!(e[1].volume_db_spl, 60.0);
        assert!(read_manifest("file,volume_db_spl,scheme,seed\na.wav,55,laser,1\n".as_bytes()).is_err());
        assert!(read_manifest("file,volume_db_spl,scheme,seed\na.wav,55\n".as_bytes()).is_err());
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let a = synthetic_speech(0.2, AUDIO_SAMPLE_RATE, 1).unwrap();
        a.write_wav(&path).unwrap();
        let b = AudioSignal::read_wav(&path).unwrap();
        assert_eq!(b.len(), a.len());
        assert_eq!(b.sample_rate(), AUDIO_SAMPLE_RATE);
        for (x, y) in a.samples().iter().zip(b.samples()) {
            assert!((x - y).abs() < 1.0 / 32_000.0);
        }
    }

    #[test]
    fn synthetic_speech_is_bounded_and_seeded() {
        let a = synthetic_speech(0.5, AUDIO_SAMPLE_RATE, 1).unwrap();
        assert_abs_diff_eq!(peak(a.samples()), 0.99, epsilon = 1e-12);
        assert_eq!(a, synthetic_speech(0.5, AUDIO_SAMPLE_RATE, 1).unwrap());
        assert_ne!(a, synthetic_speech(0.5, AUDIO_SAMPLE_RATE, 2).unwrap());
    }
}
