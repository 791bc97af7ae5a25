//! JSON experiment configuration.
//!
//! Every section is overlaid onto its defaults, so a file only needs the keys
//! it changes. Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use qmic_core::audio::{MembraneModel, AUDIO_SAMPLE_RATE};
use qmic_core::detection::{CommonModeNoise, SumNormalization};
use qmic_core::srt::PopulationConfig;
use qmic_core::{Scheme, SensorConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult, Context};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub start_nm: f64,
    pub end_nm: f64,
    pub steps: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        // one classical wavelength of travel: two classical fringes
        SweepSettings {
            start_nm: 0.0,
            end_nm: 1064.0,
            steps: 4001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSettings {
    pub sample_rate: f64,
    pub bins: usize,
    /// Welch segment length; chosen automatically when absent.
    pub segment_len: Option<usize>,
    /// Edges of the fit bands in Hz; the first and last also bound the full band.
    pub band_edges_hz: Vec<f64>,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        BenchmarkSettings {
            sample_rate: 100_000.0,
            bins: 1 << 20,
            segment_len: None,
            band_edges_hz: vec![200.0, 500.0, 1_000.0, 2_000.0, 5_000.0, 10_000.0, 20_000.0, 50_000.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AudioSettings {
    pub sample_rate: f64,
    /// Manifest CSV; when absent, synthetic clips are generated.
    pub manifest: Option<PathBuf>,
    pub synthetic_files: usize,
    pub clip_seconds: f64,
    pub volume_start_db: f64,
    pub volume_step_db: f64,
    pub volume_steps: usize,
    pub write_recordings: bool,
}

impl Default for AudioSettings {
    fn default() -> Self {
        AudioSettings {
            sample_rate: AUDIO_SAMPLE_RATE,
            manifest: None,
            synthetic_files: 10,
            clip_seconds: 2.0,
            volume_start_db: 48.0,
            volume_step_db: 1.0,
            volume_steps: 22,
            write_recordings: true,
        }
    }
}

/// SNR = α·V + β for one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrLine {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSettings {
    pub population: PopulationConfig,
    pub snr_classical: SnrLine,
    pub snr_quantum: SnrLine,
    pub histogram_bin_db: f64,
    pub power_replications: usize,
}

impl Default for StatsSettings {
    fn default() -> Self {
        StatsSettings {
            population: PopulationConfig::default(),
            snr_classical: SnrLine { alpha: 0.95, beta: 6.20 },
            snr_quantum: SnrLine { alpha: 0.95, beta: 7.04 },
            histogram_bin_db: 0.5,
            power_replications: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub classical: SensorConfig,
    pub quantum: SensorConfig,
    pub noise: CommonModeNoise,
    pub normalization: SumNormalization,
    pub fringe_sweep: SweepSettings,
    pub benchmark: BenchmarkSettings,
    pub membrane: MembraneModel,
    pub audio: AudioSettings,
    pub stats: StatsSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out_dir: PathBuf::from("out"),
            classical: SensorConfig::classical(),
            quantum: SensorConfig::quantum(),
            noise: CommonModeNoise::default(),
            normalization: SumNormalization::default(),
            fringe_sweep: SweepSettings::default(),
            benchmark: BenchmarkSettings::default(),
            membrane: MembraneModel::default(),
            audio: AudioSettings::default(),
            stats: StatsSettings::default(),
        }
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn section<T: DeserializeOwned>(name: &str, value: Value) -> CliResult<T> {
    serde_json::from_value(value).map_err(|e| CliError::config(name, e.to_string()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let patch: Value = serde_json::from_str(text).map_err(|e| CliError::config("<root>", format!("invalid JSON: {e}")))?;
        let Value::Object(patch) = patch else {
            return Err(CliError::config("<root>", "config must be a JSON object"));
        };
        let defaults = serde_json::to_value(Self::default()).expect("defaults serialize");
        let Value::Object(mut merged) = defaults else { unreachable!() };
        for (key, value) in patch {
            let Some(slot) = merged.get_mut(&key) else {
                let known: Vec<&String> = Self::known_keys(&merged);
                return Err(CliError::config(key.clone(), format!("unknown key, expected one of {known:?}")));
            };
            // unknown nested keys are caught by deny_unknown_fields below
            match (slot.is_object(), value.is_object()) {
                (true, true) => merge(slot, value),
                _ => *slot = value,
            }
        }
        let mut cfg = Self::default();
        for (key, value) in merged {
            match key.as_str() {
                "seed" => cfg.seed = section(&key, value)?,
                "out_dir" => cfg.out_dir = section(&key, value)?,
                "classical" => cfg.classical = section(&key, value)?,
                "quantum" => cfg.quantum = section(&key, value)?,
                "noise" => cfg.noise = section(&key, value)?,
                "normalization" => cfg.normalization = section(&key, value)?,
                "fringe_sweep" => cfg.fringe_sweep = section(&key, value)?,
                "benchmark" => cfg.benchmark = section(&key, value)?,
                "membrane" => cfg.membrane = section(&key, value)?,
                "audio" => cfg.audio = section(&key, value)?,
                "stats" => cfg.stats = section(&key, value)?,
                other => return Err(CliError::config(other, "unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn known_keys(m: &Map<String, Value>) -> Vec<&String> {
        m.keys().collect()
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => {
                let cfg = Self::default();
                cfg.validate()?;
                Ok(cfg)
            }
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.classical.validate().section("classical")?;
        self.quantum.validate().section("quantum")?;
        if self.classical.scheme != Scheme::Classical {
            return Err(CliError::config("classical.scheme", "must be \"classical\""));
        }
        if self.quantum.scheme != Scheme::Quantum {
            return Err(CliError::config("quantum.scheme", "must be \"quantum\""));
        }
        self.noise.validate().section("noise")?;
        if let SumNormalization::MovingAverage { window_bins: 0 } = self.normalization {
            return Err(CliError::config("normalization.moving_average.window_bins", "must be > 0"));
        }
        self.membrane.validate().section("membrane")?;

        let s = &self.fringe_sweep;
        if s.steps < 2 {
            return Err(CliError::config("fringe_sweep.steps", "must be >= 2"));
        }
        if !(s.start_nm.is_finite() && s.end_nm.is_finite()) {
            return Err(CliError::config("fringe_sweep.start_nm", "start_nm and end_nm must be finite"));
        }

        let b = &self.benchmark;
        if !(b.sample_rate > 0.0) {
            return Err(CliError::config("benchmark.sample_rate", "must be > 0"));
        }
        if b.bins < 1024 {
            return Err(CliError::config("benchmark.bins", "must be >= 1024"));
        }
        if b.band_edges_hz.len() < 2 || b.band_edges_hz.windows(2).any(|w| !(w[0] < w[1])) || b.band_edges_hz[0] <= 0.0 {
            return Err(CliError::config(
                "benchmark.band_edges_hz",
                "need at least two positive, strictly increasing edges",
            ));
        }
        if b.band_edges_hz[b.band_edges_hz.len() - 1] > b.sample_rate / 2.0 {
            return Err(CliError::config("benchmark.band_edges_hz", "last edge must not exceed Nyquist"));
        }
        if let Some(seg) = b.segment_len {
            if !seg.is_power_of_two() || seg < 16 {
                return Err(CliError::config("benchmark.segment_len", "must be a power of two >= 16"));
            }
        }

        let a = &self.audio;
        if !(a.sample_rate > 0.0) {
            return Err(CliError::config("audio.sample_rate", "must be > 0"));
        }
        if !(a.clip_seconds > 0.0) {
            return Err(CliError::config("audio.clip_seconds", "must be > 0"));
        }
        if a.volume_steps < 3 {
            return Err(CliError::config("audio.volume_steps", "need at least 3 volumes for the SNR fit"));
        }
        if a.manifest.is_none() && a.synthetic_files == 0 {
            return Err(CliError::config("audio.synthetic_files", "must be > 0 without a manifest"));
        }

        let st = &self.stats;
        st.population.validate().section("stats.population")?;
        for (name, line) in [("stats.snr_classical.alpha", st.snr_classical), ("stats.snr_quantum.alpha", st.snr_quantum)] {
            if !(line.alpha > 0.0 && line.beta.is_finite()) {
                return Err(CliError::config(name, "alpha must be > 0 and beta finite"));
            }
        }
        if !(st.histogram_bin_db > 0.0) {
            return Err(CliError::config("stats.histogram_bin_db", "must be > 0"));
        }
        if st.power_replications == 0 {
            return Err(CliError::config("stats.power_replications", "must be > 0"));
        }
        Ok(())
    }
}
