//! Differential intensity detection with Poisson shot noise.
//!
//! A [`PhaseTrace`] of optical phases is turned into paired detector counts
//! for the D+ and D− outputs, and [`estimate_phase`] inverts the difference
//! channel back to a small-signal phase about the operating point.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{Scheme, SensorConfig};
use crate::error::{Error, Result};
use crate::exec::{substream, Execution};
use crate::photonics::displacement_to_phase;

/// Bins per RNG substream. Fixed so that parallel and sequential runs agree.
pub const CHUNK_BINS: usize = 8192;

/// Stream id reserved for the common-mode noise generator.
const COMMON_MODE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTrace {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl PhaseTrace {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::domain("sample_rate", format!("must be > 0, got {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::domain("phase", format!("sample {i} is not finite")));
        }
        Ok(PhaseTrace { samples, sample_rate })
    }

    /// A constant phase held for `len` samples.
    pub fn constant(phase: f64, len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![phase; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Sample standard deviation (n − 1 denominator).
    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        let ss: f64 = self.samples.iter().map(|x| (x - m) * (x - m)).sum();
        (ss / (self.samples.len() as f64 - 1.0)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRecord {
    pub i_plus: Vec<u64>,
    pub i_minus: Vec<u64>,
    pub sample_rate: f64,
    pub config: SensorConfig,
    pub seed: u64,
}

impl DetectorRecord {
    pub fn len(&self) -> usize {
        self.i_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i_plus.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CommonModeSpectrum {
    #[default]
    White,
    OneOverF,
}

/// Multiplicative fluctuation of the input photon rate (pump noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommonModeNoise {
    /// Standard deviation of the relative rate fluctuation.
    pub relative_amplitude: f64,
    pub spectrum: CommonModeSpectrum,
    pub seed: u64,
}

impl Default for CommonModeNoise {
    fn default() -> Self {
        CommonModeNoise {
            relative_amplitude: 0.0,
            spectrum: CommonModeSpectrum::White,
            seed: 0,
        }
    }
}

impl CommonModeNoise {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn white(relative_amplitude: f64, seed: u64) -> Self {
        CommonModeNoise {
            relative_amplitude,
            spectrum: CommonModeSpectrum::White,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relative_amplitude.is_finite() && self.relative_amplitude >= 0.0) {
            return Err(Error::domain(
                "relative_amplitude",
                format!("must be >= 0, got {}", self.relative_amplitude),
            ));
        }
        Ok(())
    }

    /// Rate multipliers m_k ≥ 0 with unit mean, one per bin.
    pub fn factors(&self, len: usize) -> Vec<f64> {
        if self.relative_amplitude == 0.0 {
            return vec![1.0; len];
        }
        let mut rng = substream(self.seed, COMMON_MODE_STREAM);
        let unit: Vec<f64> = match self.spectrum {
            CommonModeSpectrum::White => (0..len).map(|_| rng.sample(StandardNormal)).collect(),
            CommonModeSpectrum::OneOverF => voss_pink(len, &mut rng),
        };
        unit.into_iter()
            .map(|x| (1.0 + self.relative_amplitude * x).max(0.0))
            .collect()
    }
}

/// Voss–McCartney pink noise with unit variance per sample.
fn voss_pink<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    const ROWS: usize = 16;
    let mut rows: [f64; ROWS] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let scale = 1.0 / (ROWS as f64).sqrt();
    (0..len)
        .map(|k| {
            // row r updates every 2^r samples
            let tz = if k == 0 { 0 } else { (k.trailing_zeros() as usize).min(ROWS - 1) };
            rows[tz] = rng.sample(StandardNormal);
            rows.iter().sum::<f64>() * scale
        })
        .collect()
}

fn poisson<R: Rng>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    let d = Poisson::new(lambda).expect("finite positive rate");
    d.sample(rng) as u64
}

/// Expected counts per bin for the given phase and common-mode factor.
pub fn expected_counts(phase: f64, config: &SensorConfig, sample_rate: f64, common_mode: f64) -> (f64, f64) {
    let base = common_mode * config.photon_rate / sample_rate * config.detection_efficiency();
    let dark = config.dark_count_rate / sample_rate;
    let fringe = config.visibility * phase.cos();
    (
        base * 0.5 * (1.0 + fringe) + dark,
        base * 0.5 * (1.0 - fringe) + dark,
    )
}

/// Draws Poisson detector counts for every bin of `phase`.
pub fn simulate_record(
    phase: &PhaseTrace,
    config: &SensorConfig,
    noise: &CommonModeNoise,
    seed: u64,
    exec: Execution,
) -> Result<DetectorRecord> {
    config.validate()?;
    noise.validate()?;
    if phase.is_empty() {
        return Err(Error::TooShort { min: 1, got: 0 });
    }
    let n = phase.len();
    let fs = phase.sample_rate();
    let factors = noise.factors(n);
    let chunks = n.div_ceil(CHUNK_BINS);

    let parts = exec.map(chunks, |c| {
        let mut rng = substream(seed, c as u64);
        let lo = c * CHUNK_BINS;
        let hi = (lo + CHUNK_BINS).min(n);
        let mut plus = Vec::with_capacity(hi - lo);
        let mut minus = Vec::with_capacity(hi - lo);
        for k in lo..hi {
            let (lp, lm) = expected_counts(phase.samples[k], config, fs, factors[k]);
            plus.push(poisson(lp, &mut rng));
            minus.push(poisson(lm, &mut rng));
        }
        (plus, minus)
    });

    let mut i_plus = Vec::with_capacity(n);
    let mut i_minus = Vec::with_capacity(n);
    for (p, m) in parts {
        i_plus.extend(p);
        i_minus.extend(m);
    }
    Ok(DetectorRecord {
        i_plus,
        i_minus,
        sample_rate: fs,
        config: config.clone(),
        seed,
    })
}

/// How the difference channel is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SumNormalization {
    /// Divide by the sum of the same bin.
    PerBin,
    /// Divide by a centered moving average of the sum channel.
    MovingAverage { window_bins: usize },
}

impl Default for SumNormalization {
    fn default() -> Self {
        SumNormalization::MovingAverage { window_bins: 256 }
    }
}

/// Phase estimate per bin; `None` marks bins whose normalization was zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseEstimate {
    pub values: Vec<Option<f64>>,
    pub sample_rate: f64,
}

impl PhaseEstimate {
    pub fn invalid_bins(&self) -> impl Iterator<Item = usize> + '_ {
        self.values.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i)
    }

    /// Converts to a trace, failing if any bin is invalid.
    pub fn into_trace(self) -> Result<PhaseTrace> {
        let count = self.values.iter().filter(|v| v.is_none()).count();
        if count > 0 {
            let first = self.invalid_bins().next().unwrap_or(0);
            return Err(Error::InvalidBins { count, first });
        }
        PhaseTrace::new(self.values.into_iter().flatten().collect(), self.sample_rate)
    }

    /// Converts to a trace, replacing invalid bins with the operating point (0).
    /// Returns the trace and the number of replaced bins.
    pub fn into_trace_filled(self) -> Result<(PhaseTrace, usize)> {
        let mut filled = 0;
        let samples = self
            .values
            .into_iter()
            .map(|v| {
                v.unwrap_or_else(|| {
                    filled += 1;
                    0.0
                })
            })
            .collect();
        Ok((PhaseTrace::new(samples, self.sample_rate)?, filled))
    }
}

fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in x {
        acc += v;
        prefix.push(acc);
    }
    let half = window / 2;
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Small-signal phase about `operating_point` from the difference channel.
///
/// Per bin, r = (i+ − i−)/S where S is the chosen sum normalization, and
/// δΦ = (ν·cos φ₀ − r)/(ν·sin φ₀), which at quadrature reduces to −r/ν. The
/// quantum estimate is divided by 2 to report the mechanical phase on the
/// same footing as the classical sensor.
pub fn estimate_phase(
    record: &DetectorRecord,
    operating_point: f64,
    normalization: SumNormalization,
) -> Result<PhaseEstimate> {
    let nu = record.config.visibility;
    let slope = nu * operating_point.sin();
    if slope.abs() < 1e-9 {
        return Err(Error::domain(
            "operating_point",
            "fringe slope vanishes (visibility 0 or operating point at a fringe extremum)",
        ));
    }
    if record.i_plus.len() != record.i_minus.len() {
        return Err(Error::Contract("detector channels differ in length".into()));
    }
    let offset = nu * operating_point.cos();
    let multiplicity = record.config.phase_multiplicity();

    let sums: Vec<f64> = record
        .i_plus
        .iter()
        .zip(&record.i_minus)
        .map(|(&p, &m)| (p + m) as f64)
        .collect();
    let norm = match normalization {
        SumNormalization::PerBin => sums,
        SumNormalization::MovingAverage { window_bins } => {
            if window_bins == 0 {
                return Err(Error::domain("window_bins", "must be >= 1"));
            }
            moving_average(&sums, window_bins)
        }
    };

    let values = record
        .i_plus
        .iter()
        .zip(&record.i_minus)
        .zip(&norm)
        .map(|((&p, &m), &s)| {
            if s <= 0.0 {
                return None;
            }
            let r = (p as f64 - m as f64) / s;
            Some((offset - r) / slope / multiplicity)
        })
        .collect();
    Ok(PhaseEstimate {
        values,
        sample_rate: record.sample_rate,
    })
}

/// Default quadrature operating point.
pub const QUADRATURE: f64 = FRAC_PI_2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub displacement_nm: f64,
    pub phase_rad: f64,
    /// Expected D+ − D− in detected counts per second.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringeSweep {
    pub scheme: Scheme,
    pub rows: Vec<SweepRow>,
    /// Expected D+ + D− in counts per second.
    pub total_rate: f64,
}

impl FringeSweep {
    /// Fringes traversed over the swept range.
    pub fn fringe_count(&self) -> f64 {
        let first = self.rows.first().map_or(0.0, |r| r.phase_rad);
        let last = self.rows.last().map_or(0.0, |r| r.phase_rad);
        crate::photonics::fringe_count(last - first)
    }

    /// Number of sign changes of the difference signal.
    pub fn zero_crossings(&self) -> usize {
        self.rows
            .windows(2)
            .filter(|w| (w[0].difference > 0.0) != (w[1].difference > 0.0))
            .count()
    }

    pub fn peak_to_peak(&self) -> f64 {
        let (lo, hi) = self.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.difference), hi.max(r.difference))
        });
        hi - lo
    }
}

/// Noiseless difference signal over a linear displacement range.
pub fn fringe_sweep(d_start_nm: f64, d_end_nm: f64, steps: usize, config: &SensorConfig) -> Result<FringeSweep> {
    config.validate()?;
    if steps < 2 {
        return Err(Error::domain("steps", format!("must be >= 2, got {steps}")));
    }
    if !(d_start_nm.is_finite() && d_end_nm.is_finite()) {
        return Err(Error::domain("displacement", "range must be finite"));
    }
    let total_rate = config.photon_rate * config.detection_efficiency();
    let step = (d_end_nm - d_start_nm) / (steps - 1) as f64;
    let rows = (0..steps)
        .map(|k| {
            let d = d_start_nm + step * k as f64;
            let phase = displacement_to_phase(d, config);
            SweepRow {
                displacement_nm: d,
                phase_rad: phase,
                difference: total_rate * config.visibility * phase.cos(),
            }
        })
        .collect();
    Ok(FringeSweep {
        scheme: config.scheme,
        rows,
        total_rate,
    })
}

fn config_fields(c: &SensorConfig) -> [(&'static str, String); 12] {
    [
        ("scheme", c.scheme.to_string()),
        ("lambda_pump_nm", c.lambda_pump_nm.to_string()),
        ("lambda_signal_nm", c.lambda_signal_nm.to_string()),
        ("lambda_idler_nm", c.lambda_idler_nm.to_string()),
        ("lambda_classical_nm", c.lambda_classical_nm.to_string()),
        ("photon_rate", c.photon_rate.to_string()),
        ("eta_ext", c.eta_ext.to_string()),
        ("eta_int", c.eta_int.to_string()),
        ("visibility", c.visibility.to_string()),
        ("pair_flux", c.pair_flux.to_string()),
        ("parametric_threshold", c.parametric_threshold.to_string()),
        ("dark_count_rate", c.dark_count_rate.to_string()),
    ]
}

/// Writes `bin_index,i_plus,i_minus` rows preceded by `# key=value` comments.
pub fn write_record_csv<W: Write>(record: &DetectorRecord, mut w: W) -> Result<()> {
    let mut head = String::new();
    let _ = writeln!(head, "# sample_rate={}", record.sample_rate);
    let _ = writeln!(head, "# seed={}", record.seed);
    for (k, v) in config_fields(&record.config) {
        let _ = writeln!(head, "# config.{k}={v}");
    }
    head.push_str("bin_index,i_plus,i_minus\n");
    w.write_all(head.as_bytes())?;
    for (k, (p, m)) in record.i_plus.iter().zip(&record.i_minus).enumerate() {
        writeln!(w, "{k},{p},{m}")?;
    }
    Ok(())
}

pub fn read_record_csv<R: BufRead>(r: R) -> Result<DetectorRecord> {
    let mut sample_rate = None;
    let mut seed = None;
    let mut config = SensorConfig::classical();
    let mut i_plus = Vec::new();
    let mut i_minus = Vec::new();
    let bad = |what: &str| Error::Parse(format!("detector csv: {what}"));
    let num = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("bad number `{v}`")));

    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let (k, v) = meta.trim().split_once('=').ok_or_else(|| bad("malformed header"))?;
            match k {
                "sample_rate" => sample_rate = Some(num(v)?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad("bad seed"))?),
                "config.scheme" => config.scheme = v.parse()?,
                "config.lambda_pump_nm" => config.lambda_pump_nm = num(v)?,
                "config.lambda_signal_nm" => config.lambda_signal_nm = num(v)?,
                "config.lambda_idler_nm" => config.lambda_idler_nm = num(v)?,
                "config.lambda_classical_nm" => config.lambda_classical_nm = num(v)?,
                "config.photon_rate" => config.photon_rate = num(v)?,
                "config.eta_ext" => config.eta_ext = num(v)?,
                "config.eta_int" => config.eta_int = num(v)?,
                "config.visibility" => config.visibility = num(v)?,
                "config.pair_flux" => config.pair_flux = num(v)?,
                "config.parametric_threshold" => config.parametric_threshold = num(v)?,
                "config.dark_count_rate" => config.dark_count_rate = num(v)?,
                other => return Err(bad(&format!("unknown header key `{other}`"))),
            }
            continue;
        }
        if line.starts_with("bin_index") {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let (_, p, m) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(bad("expected 3 columns")),
        };
        i_plus.push(p.parse().map_err(|_| bad("bad count"))?);
        i_minus.push(m.parse().map_err(|_| bad("bad count"))?);
    }
    config.validate()?;
    Ok(DetectorRecord {
        i_plus,
        i_minus,
        sample_rate: sample_rate.ok_or_else(|| bad("missing sample_rate"))?,
        config,
        seed: seed.ok_or_else(|| bad("missing seed"))?,
    })
}
