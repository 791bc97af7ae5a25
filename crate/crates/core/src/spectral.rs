//! Phase-noise amplitude spectral density and sensitivity benchmarking.
//!
//! Spectra are one-sided averaged periodograms (Hann window, 50 % overlap,
//! per-segment mean removal) reported as amplitude spectral density in
//! rad/√Hz. The DC bin is dropped, so frequencies are strictly positive.
//!
//! With this convention white phase noise of variance σ² per sample at rate
//! f has a flat floor σ·√(2/f), and a sensor with sensitivity S at input
//! photon rate R has floor S·√(2/R).

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::detection::PhaseTrace;
use crate::error::{Error, Result};
use crate::exec::{substream, Execution};

/// Minimum number of averaged segments targeted by [`WindowMeta::for_length`].
pub const MIN_AVERAGES: usize = 16;
/// Longest segment chosen automatically.
pub const MAX_SEGMENT: usize = 1 << 14;
const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_SEED: u64 = 0x5eed_f100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        }
    }

    /// Periodic window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..n)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / n as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowMeta {
    pub segment_len: usize,
    /// Overlap fraction in [0, 1).
    pub overlap: f64,
    pub window: WindowKind,
}

impl WindowMeta {
    pub fn new(segment_len: usize) -> Self {
        WindowMeta {
            segment_len,
            overlap: 0.5,
            window: WindowKind::Hann,
        }
    }

    /// Largest power-of-two segment (≤ [`MAX_SEGMENT`]) giving at least
    /// [`MIN_AVERAGES`] half-overlapping segments for `n` samples.
    pub fn for_length(n: usize) -> Self {
        let mut len = MAX_SEGMENT;
        while len > 8 && Self::new(len).segments(n) < MIN_AVERAGES {
            len /= 2;
        }
        Self::new(len)
    }

    pub fn hop(&self) -> usize {
        ((self.segment_len as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }

    pub fn segments(&self, n: usize) -> usize {
        if n < self.segment_len {
            0
        } else {
            (n - self.segment_len) / self.hop() + 1
        }
    }

    /// Samples needed for two segments.
    pub fn min_length(&self) -> usize {
        self.segment_len + self.hop()
    }

    fn validate(&self) -> Result<()> {
        if self.segment_len < 4 {
            return Err(Error::domain("segment_len", "must be >= 4"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::domain("overlap", format!("must lie in [0, 1), got {}", self.overlap)));
        }
        Ok(())
    }

    /// Equivalent χ² degrees of freedom of the averaged estimate for `segments` segments.
    pub fn equivalent_dof(&self, segments: usize) -> f64 {
        let w = self.window.coefficients(self.segment_len);
        let energy: f64 = w.iter().map(|x| x * x).sum();
        let hop = self.hop();
        let k = segments as f64;
        let mut corr = 0.0;
        for j in 1..segments {
            let shift = j * hop;
            if shift >= w.len() {
                break;
            }
            let rho: f64 = w.iter().zip(&w[shift..]).map(|(a, b)| a * b).sum::<f64>() / energy;
            corr += (1.0 - j as f64 / k) * rho * rho;
        }
        2.0 * k / (1.0 + 2.0 * corr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub window: WindowMeta,
    pub averages: usize,
    pub sample_rate: f64,
    pub equivalent_dof: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum {
    pub frequencies: Vec<f64>,
    /// rad/√Hz
    pub amplitude: Vec<f64>,
    pub meta: SpectrumMeta,
}

impl NoiseSpectrum {
    pub fn resolution(&self) -> f64 {
        self.meta.sample_rate / self.meta.window.segment_len as f64
    }

    pub fn nyquist(&self) -> f64 {
        self.meta.sample_rate / 2.0
    }

    /// ∫ ASD² df over all positive frequencies.
    pub fn integrated_power(&self) -> f64 {
        self.amplitude.iter().map(|a| a * a).sum::<f64>() * self.resolution()
    }

    /// ∫ ASD² df over `[lo, hi]`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.amplitude)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, a)| a * a)
            .sum::<f64>()
            * self.resolution()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frequency_hz,amplitude_rad_per_sqrt_hz")?;
        for (f, a) in self.frequencies.iter().zip(&self.amplitude) {
            writeln!(w, "{f},{a:e}")?;
        }
        Ok(())
    }
}

fn segment_power(fft: &Arc<dyn Fft<f64>>, x: &[f64], window: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut buf: Vec<Complex64> = x
        .iter()
        .zip(window)
        .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
        .collect();
    fft.process(&mut buf);
    buf[..=x.len() / 2].iter().map(|c| c.norm_sqr()).collect()
}

/// Averaged-periodogram amplitude spectral density of a phase trace.
pub fn phase_noise_spectrum(trace: &PhaseTrace, meta: WindowMeta, exec: Execution) -> Result<NoiseSpectrum> {
    meta.validate()?;
    let n = trace.len();
    if n < meta.min_length() {
        return Err(Error::TooShort {
            min: meta.min_length(),
            got: n,
        });
    }
    let len = meta.segment_len;
    let hop = meta.hop();
    let segments = meta.segments(n);
    let window = meta.window.coefficients(len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(len);
    let x = trace.samples();

    let powers = exec.map(segments, |s| segment_power(&fft, &x[s * hop..s * hop + len], &window));
    // fixed summation order for reproducibility
    let mut acc = vec![0.0; len / 2 + 1];
    for p in &powers {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }

    let fs = trace.sample_rate();
    let energy: f64 = window.iter().map(|w| w * w).sum();
    let scale = 1.0 / (fs * energy * segments as f64);
    let df = fs / len as f64;
    let half = len / 2;
    let mut frequencies = Vec::with_capacity(half);
    let mut amplitude = Vec::with_capacity(half);
    for (j, p) in acc.iter().enumerate().skip(1) {
        let one_sided = if j == half { 1.0 } else { 2.0 };
        frequencies.push(j as f64 * df);
        amplitude.push((one_sided * p * scale).sqrt());
    }
    Ok(NoiseSpectrum {
        frequencies,
        amplitude,
        meta: SpectrumMeta {
            window: meta,
            averages: segments,
            sample_rate: fs,
            equivalent_dof: meta.equivalent_dof(segments),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Self {
        Band { lo, hi }
    }

    /// From 200 Hz up to the Nyquist frequency.
    pub fn audio_default(sample_rate: f64) -> Self {
        Band::new(200.0, sample_rate / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorFit {
    /// rad/√Hz
    pub amplitude: f64,
    /// Bootstrap standard error, rad/√Hz.
    pub uncertainty: f64,
    pub bins: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median of χ²_ν/ν (Wilson–Hilferty).
fn chi2_median_ratio(dof: f64) -> f64 {
    (1.0 - 2.0 / (9.0 * dof)).powi(3)
}

/// Flat floor of a spectrum inside `band`.
///
/// The median of the power values is corrected for the skew of the averaged
/// periodogram (χ² with the spectrum's equivalent degrees of freedom), which
/// makes the fit unbiased on white noise while staying robust to tones.
/// DC and Nyquist bins never enter the fit.
pub fn fit_noise_floor(spectrum: &NoiseSpectrum, band: Band) -> Result<FloorFit> {
    let nyq = spectrum.nyquist();
    let power: Vec<f64> = spectrum
        .frequencies
        .iter()
        .zip(&spectrum.amplitude)
        .filter(|(f, _)| **f >= band.lo && **f <= band.hi && **f < nyq)
        .map(|(_, a)| a * a)
        .collect();
    if power.is_empty() {
        return Err(Error::domain(
            "band",
            format!("[{} Hz, {} Hz] contains no spectral bins", band.lo, band.hi),
        ));
    }
    let correction = chi2_median_ratio(spectrum.meta.equivalent_dof);
    let floor = |v: &mut [f64]| (median(v) / correction).sqrt();

    let amplitude = floor(&mut power.clone());
    let mut rng = substream(BOOTSTRAP_SEED, 0);
    let mut scratch = vec![0.0; power.len()];
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for s in scratch.iter_mut() {
            *s = power[rng.random_range(0..power.len())];
        }
        let a = floor(&mut scratch);
        acc += a;
        acc2 += a * a;
    }
    let b = BOOTSTRAP_RESAMPLES as f64;
    let mean = acc / b;
    let uncertainty = ((acc2 / b - mean * mean).max(0.0) * b / (b - 1.0)).sqrt();
    Ok(FloorFit {
        amplitude,
        uncertainty,
        bins: power.len(),
    })
}

/// One-sided floor of a sensor with sensitivity `s` at input rate `photon_rate`.
pub fn sensitivity_floor(s: f64, photon_rate: f64) -> f64 {
    s * (2.0 / photon_rate).sqrt()
}

/// One-sided shot-noise floor √(2/R) of an ideal classical sensor.
pub fn snl_floor(photon_rate: f64) -> f64 {
    sensitivity_floor(1.0, photon_rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhancementReport {
    /// classical floor / quantum floor
    pub amplitude_ratio: f64,
    pub variance_ratio: f64,
    pub band: Band,
    /// classical floor / analytic shot-noise floor
    pub classical_excess_over_snl: f64,
    pub classical_floor: FloorFit,
    pub quantum_floor: FloorFit,
    pub snl_floor: f64,
}

impl EnhancementReport {
    /// Propagated 1σ uncertainty of the amplitude ratio.
    pub fn amplitude_ratio_uncertainty(&self) -> f64 {
        let rc = self.classical_floor.uncertainty / self.classical_floor.amplitude;
        let rq = self.quantum_floor.uncertainty / self.quantum_floor.amplitude;
        self.amplitude_ratio * (rc * rc + rq * rq).sqrt()
    }
}

pub fn enhancement(
    classical: &NoiseSpectrum,
    quantum: &NoiseSpectrum,
    band: Band,
    photon_rate: f64,
) -> Result<EnhancementReport> {
    if !(photon_rate > 0.0) {
        return Err(Error::domain("photon_rate", "must be > 0"));
    }
    let classical_floor = fit_noise_floor(classical, band)?;
    let quantum_floor = fit_noise_floor(quantum, band)?;
    let amplitude_ratio = classical_floor.amplitude / quantum_floor.amplitude;
    let snl = snl_floor(photon_rate);
    Ok(EnhancementReport {
        amplitude_ratio,
        variance_ratio: amplitude_ratio * amplitude_ratio,
        band,
        classical_excess_over_snl: classical_floor.amplitude / snl,
        classical_floor,
        quantum_floor,
        snl_floor: snl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::StandardNormal;

    fn white(sigma: f64, n: usize, fs: f64, seed: u64) -> PhaseTrace {
        let mut rng = substream(seed, 0);
        PhaseTrace::new((0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect(), fs).unwrap()
    }

    fn variance(t: &PhaseTrace) -> f64 {
        let s = t.std_dev();
        s * s * (t.len() as f64 - 1.0) / t.len() as f64
    }

    #[test]
    fn auto_segment_gives_enough_averages() {
        for n in [1_000, 20_000, 100_000, 1_000_000] {
            let m = WindowMeta::for_length(n);
            assert!(m.segment_len.is_power_of_two());
            assert!(m.segments(n) >= MIN_AVERAGES, "n={n}: {m:?}");
        }
        assert_eq!(WindowMeta::for_length(1_000_000).segment_len, MAX_SEGMENT);
    }

    #[test]
    fn too_short_names_minimum() {
        let t = white(1.0, 90, 1e3, 1);
        let err = phase_noise_spectrum(&t, WindowMeta::new(64), Execution::Sequential).unwrap_err();
        assert_eq!(err, Error::TooShort { min: 96, got: 90 });
    }

    #[test]
    fn frequencies_positive_and_increasing() {
        let t = white(1.0, 4096, 1e3, 2);
        let s = phase_noise_spectrum(&t, WindowMeta::new(256), Execution::Sequential).unwrap();
        assert!(s.frequencies[0] > 0.0);
        assert!(s.frequencies.windows(2).all(|w| w[1] > w[0]));
        assert_relative_eq!(*s.frequencies.last().unwrap(), 500.0);
        assert!(s.amplitude.iter().all(|a| *a >= 0.0));
    }

    #[test]
    fn tone_power() {
        // a·sin(2π f0 t) carries a²/2
        let fs = 20_000.0;
        let a = 0.3;
        let f0 = 1_234.5;
        let t = PhaseTrace::new(
            (0..200_000).map(|k| a * (2.0 * PI * f0 * k as f64 / fs).sin()).collect(),
            fs,
        )
        .unwrap();
        let s = phase_noise_spectrum(&t, WindowMeta::for_length(t.len()), Execution::Parallel).unwrap();
        let p = s.band_power(f0 - 50.0, f0 + 50.0);
        assert_relative_eq!(p, a * a / 2.0, max_relative = 0.03);
        let peak = s.amplitude.iter().cloned().enumerate().max_by(|x, y| x.1.total_cmp(&y.1)).unwrap().0;
        assert!((s.frequencies[peak] - f0).abs() < s.resolution());
    }

    #[test]
    fn white_noise_floor_and_parseval() {
        let fs = 20_000.0;
        let sigma = 0.05;
        let t = white(sigma, 400_000, fs, 3);
        let s = phase_noise_spectrum(&t, WindowMeta::for_length(t.len()), Execution::Parallel).unwrap();
        let fit = fit_noise_floor(&s, Band::new(1.0, fs / 2.0)).unwrap();
        assert_relative_eq!(fit.amplitude, sigma * (2.0 / fs).sqrt(), max_relative = 0.05);
        assert_relative_eq!(s.integrated_power(), variance(&t), max_relative = 0.02);
    }

    #[test]
    fn floor_robust_to_tones() {
        let fs: f64 = 10_000.0;
        let n = 1 << 18;
        let mut rng = substream(4, 0);
        let sigma = 1e-3 * (fs / 2.0).sqrt(); // floor 1e-3 rad/√Hz
        let samples: Vec<f64> = (0..n)
            .map(|k| {
                let t = k as f64 / fs;
                sigma * rng.sample::<f64, _>(StandardNormal)
                    + 0.05 * (2.0 * PI * 500.0 * t).sin()
                    + 0.02 * (2.0 * PI * 2_100.0 * t).sin()
                    + 0.01 * (2.0 * PI * 3_700.0 * t).sin()
            })
            .collect();
        let t = PhaseTrace::new(samples, fs).unwrap();
        let s = phase_noise_spectrum(&t, WindowMeta::for_length(n), Execution::Parallel).unwrap();
        let fit = fit_noise_floor(&s, Band::new(200.0, fs / 2.0)).unwrap();
        assert_relative_eq!(fit.amplitude, 1e-3, max_relative = 0.02);
        assert!(fit.uncertainty > 0.0 && fit.uncertainty < 0.01 * fit.amplitude);
    }

    #[test]
    fn floor_fit_unbiased_over_seeds() {
        let fs: f64 = 1_000.0;
        let n = 16_384;
        let truth = (2.0 / fs).sqrt();
        let fits: Vec<f64> = Execution::Parallel.map(100, |seed| {
            let t = white(1.0, n, fs, 100 + seed as u64);
            let s = phase_noise_spectrum(&t, WindowMeta::for_length(n), Execution::Sequential).unwrap();
            fit_noise_floor(&s, Band::new(1.0, fs / 2.0)).unwrap().amplitude
        });
        let mean = fits.iter().sum::<f64>() / fits.len() as f64;
        assert!((mean / truth - 1.0).abs() < 0.01, "bias {}", mean / truth - 1.0);
    }

    #[test]
    fn empty_band_is_error() {
        let t = white(1.0, 4096, 1e3, 5);
        let s = phase_noise_spectrum(&t, WindowMeta::new(256), Execution::Sequential).unwrap();
        assert!(fit_noise_floor(&s, Band::new(600.0, 700.0)).is_err());
        assert!(fit_noise_floor(&s, Band::new(100.0, 50.0)).is_err());
    }

    #[test]
    fn snl_floor_value() {
        // one-sided √(2/R); 1/√R = 6.84e-4 is the two-sided value
        assert_relative_eq!(snl_floor(2.14e6), 2f64.sqrt() * 6.8359e-4, max_relative = 1e-4);
    }

    #[test]
    fn enhancement_identity_and_swap() {
        let a = phase_noise_spectrum(&white(1.0, 1 << 15, 1e3, 6), WindowMeta::for_length(1 << 15), Execution::Sequential).unwrap();
        let b = phase_noise_spectrum(&white(0.8, 1 << 15, 1e3, 7), WindowMeta::for_length(1 << 15), Execution::Sequential).unwrap();
        let band = Band::new(10.0, 500.0);
        let same = enhancement(&a, &a, band, 1e3).unwrap();
        assert_eq!(same.amplitude_ratio, 1.0);
        assert_eq!(same.variance_ratio, 1.0);
        let ab = enhancement(&a, &b, band, 1e3).unwrap();
        let ba = enhancement(&b, &a, band, 1e3).unwrap();
        assert_relative_eq!(ab.amplitude_ratio * ba.amplitude_ratio, 1.0, max_relative = 1e-12);
        assert!((ab.variance_ratio - ab.amplitude_ratio.powi(2)).abs() < 1e-9);
    }

    #[test]
    fn parallel_spectrum_is_bit_identical() {
        let t = white(1.0, 100_000, 1e4, 8);
        let m = WindowMeta::for_length(t.len());
        let a = phase_noise_spectrum(&t, m, Execution::Parallel).unwrap();
        let b = phase_noise_spectrum(&t, m, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }
}
