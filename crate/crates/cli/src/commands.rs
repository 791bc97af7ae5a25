use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qmic_core::audio::{
    compare_batch, read_manifest, record_through_microphone, run_batch, synthetic_speech, volume_grid,
    write_batch_results, AudioSignal, BatchEntry, RecordOptions, SnrComparison, SnrFit,
};
use qmic_core::detection::{estimate_phase, fringe_sweep, simulate_record, PhaseTrace, QUADRATURE};
use qmic_core::photonics::sensitivity_for;
use qmic_core::spectral::{
    enhancement, phase_noise_spectrum, sensitivity_floor, snl_floor, Band, EnhancementReport, NoiseSpectrum,
    WindowMeta,
};
use qmic_core::srt::{
    histogram, paired_analysis, power_monte_carlo, read_srt_csv, simulate_population, write_srt_csv, SrtResult,
};
use qmic_core::{Execution, Scheme, SensorConfig};

use crate::config::{ExperimentConfig, SnrLine};
use crate::error::{CliError, CliResult, Context};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes a CSV through `body` and flushes it.
fn write_csv(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> qmic_core::Result<()>) -> CliResult<()> {
    let mut w = create(path)?;
    body(&mut w).map_err(|e| CliError::io(path, e))?;
    finish(path, w)
}

pub fn fringe_sweep_cmd(cfg: &ExperimentConfig) -> CliResult<()> {
    let s = &cfg.fringe_sweep;
    let classical = fringe_sweep(s.start_nm, s.end_nm, s.steps, &cfg.classical).section("fringe_sweep")?;
    let quantum = fringe_sweep(s.start_nm, s.end_nm, s.steps, &cfg.quantum).section("fringe_sweep")?;
    ensure_dir(&cfg.out_dir)?;

    let path = cfg.out_dir.join("fringe_sweep.csv");
    let mut w = create(&path)?;
    let io = |e| CliError::io(&path, e);
    writeln!(w, "displacement_nm,phase_classical_rad,difference_classical,phase_quantum_rad,difference_quantum").map_err(io)?;
    for (c, q) in classical.rows.iter().zip(&quantum.rows) {
        writeln!(w, "{},{},{},{},{}", c.displacement_nm, c.phase_rad, c.difference, q.phase_rad, q.difference).map_err(io)?;
    }
    finish(&path, w)?;

    let ratio = quantum.fringe_count() / classical.fringe_count();
    let summary = cfg.out_dir.join("fringe_summary.csv");
    write_text(
        &summary,
        &format!(
            "classical_fringes,quantum_fringes,fringe_ratio,classical_zero_crossings,quantum_zero_crossings,classical_peak_to_peak,quantum_peak_to_peak\n{},{},{},{},{},{},{}\n",
            classical.fringe_count(),
            quantum.fringe_count(),
            ratio,
            classical.zero_crossings(),
            quantum.zero_crossings(),
            classical.peak_to_peak(),
            quantum.peak_to_peak()
        ),
    )?;
    println!(
        "fringes over {:.1} nm: classical {:.3}, quantum {:.3} (ratio {:.5})",
        s.end_nm - s.start_nm,
        classical.fringe_count(),
        quantum.fringe_count(),
        ratio
    );
    println!("wrote {} and {}", path.display(), summary.display());
    Ok(())
}

/// Simulates a sensor held at quadrature and returns its phase-noise spectrum.
fn benchmark_spectrum(cfg: &ExperimentConfig, sensor: &SensorConfig, seed: u64) -> CliResult<NoiseSpectrum> {
    let b = &cfg.benchmark;
    let section = sensor.scheme.as_str();
    let trace = PhaseTrace::constant(QUADRATURE, b.bins, b.sample_rate).section("benchmark")?;
    let record = simulate_record(&trace, sensor, &cfg.noise, seed, Execution::Parallel).section(section)?;
    let estimate = estimate_phase(&record, QUADRATURE, cfg.normalization)
        .and_then(|e| e.into_trace())
        .section(section)?;
    let meta = b.segment_len.map(WindowMeta::new).unwrap_or_else(|| WindowMeta::for_length(b.bins));
    phase_noise_spectrum(&estimate, meta, Execution::Parallel).section("benchmark")
}

fn limit_spectrum(freqs: &[f64], level: f64) -> Vec<f64> {
    vec![level; freqs.len()]
}

fn write_two_column(path: &Path, freqs: &[f64], amps: &[f64]) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "frequency_hz,amplitude_rad_per_sqrt_hz").map_err(io)?;
    for (f, a) in freqs.iter().zip(amps) {
        writeln!(w, "{f},{a:e}").map_err(io)?;
    }
    finish(path, w)
}

pub fn noise_benchmark_cmd(cfg: &ExperimentConfig) -> CliResult<()> {
    if cfg.classical.photon_rate != cfg.quantum.photon_rate {
        log::warn!(
            "photon rates differ (classical {}, quantum {}): the comparison is not at equal input flux",
            cfg.classical.photon_rate,
            cfg.quantum.photon_rate
        );
    }
    // both sensors share the seed, as in an A/B measurement
    let classical = benchmark_spectrum(cfg, &cfg.classical, cfg.seed)?;
    let quantum = benchmark_spectrum(cfg, &cfg.quantum, cfg.seed)?;
    let rate = cfg.classical.photon_rate;
    let edges = &cfg.benchmark.band_edges_hz;
    let full = Band::new(edges[0], edges[edges.len() - 1]);

    let mut reports: Vec<EnhancementReport> = vec![enhancement(&classical, &quantum, full, rate).section("benchmark")?];
    for w in edges.windows(2) {
        reports.push(enhancement(&classical, &quantum, Band::new(w[0], w[1]), rate).section("benchmark")?);
    }

    ensure_dir(&cfg.out_dir)?;
    let dir = &cfg.out_dir;
    write_csv(&dir.join("spectrum_classical.csv"), |w| classical.write_csv(w))?;
    write_csv(&dir.join("spectrum_quantum.csv"), |w| quantum.write_csv(w))?;
    let freqs = &classical.frequencies;
    write_two_column(&dir.join("limit_snl.csv"), freqs, &limit_spectrum(freqs, snl_floor(rate)))?;
    let s_q = sensitivity_for(&cfg.quantum).section("quantum")?;
    let quantum_limit = sensitivity_floor(s_q, cfg.quantum.photon_rate);
    write_two_column(&dir.join("limit_quantum.csv"), freqs, &limit_spectrum(freqs, quantum_limit))?;

    let path = dir.join("enhancement.csv");
    let mut w = create(&path)?;
    let io = |e| CliError::io(&path, e);
    writeln!(
        w,
        "band_lo_hz,band_hi_hz,classical_floor,quantum_floor,snl_floor,amplitude_ratio,amplitude_ratio_sigma,variance_ratio,classical_excess_over_snl,quantum_below_snl"
    )
    .map_err(io)?;
    for r in &reports {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:.6},{:.6},{:.6},{:.6},{}",
            r.band.lo,
            r.band.hi,
            r.classical_floor.amplitude,
            r.quantum_floor.amplitude,
            r.snl_floor,
            r.amplitude_ratio,
            r.amplitude_ratio_uncertainty(),
            r.variance_ratio,
            r.classical_excess_over_snl,
            r.quantum_floor.amplitude < r.snl_floor
        )
        .map_err(io)?;
    }
    finish(&path, w)?;

    let r = &reports[0];
    let summary = format!(
        "bins per sensor:        {}\n\
         sample rate:            {} Hz\n\
         photon rate:            {rate:e} /s\n\
         fit band:               {}-{} Hz\n\
         shot-noise floor:       {:.4e} rad/sqrt(Hz)\n\
         classical floor:        {:.4e} rad/sqrt(Hz) ({:.4} x SNL)\n\
         quantum floor:          {:.4e} rad/sqrt(Hz) (expected {:.4e})\n\
         amplitude enhancement:  {:.4} +/- {:.4}\n\
         variance enhancement:   {:.4}\n\
         sub-SNL in all bands:   {}\n",
        cfg.benchmark.bins,
        cfg.benchmark.sample_rate,
        r.band.lo,
        r.band.hi,
        r.snl_floor,
        r.classical_floor.amplitude,
        r.classical_excess_over_snl,
        r.quantum_floor.amplitude,
        quantum_limit,
        r.amplitude_ratio,
        r.amplitude_ratio_uncertainty(),
        r.variance_ratio,
        reports.iter().all(|r| r.quantum_floor.amplitude < r.snl_floor)
    );
    write_text(&dir.join("noise_benchmark_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub struct RecordArgs<'a> {
    pub input: &'a Path,
    pub scheme: Scheme,
    pub volume: f64,
    pub output: &'a Path,
}

pub fn record_cmd(cfg: &ExperimentConfig, args: RecordArgs<'_>) -> CliResult<()> {
    let clean = AudioSignal::read_wav(args.input).map_err(|e| CliError::io(args.input, e))?;
    let sensor = match args.scheme {
        Scheme::Classical => &cfg.classical,
        Scheme::Quantum => &cfg.quantum,
    };
    let options = RecordOptions {
        noise: cfg.noise.clone(),
        normalization: cfg.normalization,
    };
    let rec = record_through_microphone(&clean, args.volume, sensor, &cfg.membrane, &options, cfg.seed, Execution::Parallel)
        .section("record")?;
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    rec.audio.write_wav(args.output).map_err(|e| CliError::io(args.output, e))?;
    let snr = qmic_core::audio::snr_measure(&clean, &rec.audio).section("record")?;
    println!(
        "{} at {} dB_SPL: snr {:.3} dB, peak |dphi| {:.4} rad, {} guard violations, {} empty bins, pcm scale {:.6e}",
        args.scheme, args.volume, snr, rec.max_abs_phase, rec.guard_violations, rec.invalid_bins, rec.pcm_scale
    );
    println!("wrote {}", args.output.display());
    Ok(())
}

/// Synthetic clips plus a full manifest over both schemes and the volume grid.
fn synthesize_inputs(cfg: &ExperimentConfig, clip_dir: &Path) -> CliResult<Vec<BatchEntry>> {
    ensure_dir(clip_dir)?;
    let a = &cfg.audio;
    let volumes = volume_grid(a.volume_start_db, a.volume_step_db, a.volume_steps);
    let mut entries = Vec::new();
    for f in 0..a.synthetic_files {
        let name = format!("clip_{f:02}.wav");
        let clip = synthetic_speech(a.clip_seconds, a.sample_rate, cfg.seed.wrapping_add(f as u64)).section("audio")?;
        let path = clip_dir.join(&name);
        clip.write_wav(&path).map_err(|e| CliError::io(&path, e))?;
        for (k, v) in volumes.iter().enumerate() {
            for scheme in [Scheme::Classical, Scheme::Quantum] {
                entries.push(BatchEntry {
                    file: name.clone(),
                    volume_db_spl: *v,
                    scheme,
                    // schemes share noise seeds so the comparison is paired
                    seed: cfg.seed ^ ((f as u64) << 32 | k as u64),
                });
            }
        }
    }
    Ok(entries)
}

fn write_manifest(path: &Path, entries: &[BatchEntry]) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "file,volume_db_spl,scheme,seed").map_err(io)?;
    for e in entries {
        writeln!(w, "{},{},{},{}", e.file, e.volume_db_spl, e.scheme, e.seed).map_err(io)?;
    }
    finish(path, w)
}

pub fn record_batch_cmd(cfg: &ExperimentConfig, manifest: Option<&Path>) -> CliResult<SnrComparison> {
    ensure_dir(&cfg.out_dir)?;
    let manifest = manifest.map(Path::to_path_buf).or_else(|| cfg.audio.manifest.clone());
    let (entries, base_dir): (Vec<BatchEntry>, PathBuf) = match &manifest {
        Some(path) => {
            let f = File::open(path).map_err(|e| CliError::io(path, e))?;
            let entries = read_manifest(f).map_err(|e| CliError::config("manifest", e.to_string()))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (entries, base)
        }
        None => {
            let clip_dir = cfg.out_dir.join("clips");
            let entries = synthesize_inputs(cfg, &clip_dir)?;
            write_manifest(&cfg.out_dir.join("manifest.csv"), &entries)?;
            (entries, clip_dir)
        }
    };
    if entries.is_empty() {
        return Err(CliError::config("manifest", "no entries"));
    }

    let options = RecordOptions {
        noise: cfg.noise.clone(),
        normalization: cfg.normalization,
    };
    let load = |name: &str| AudioSignal::read_wav(base_dir.join(name));
    let results = run_batch(&entries, load, &cfg.classical, &cfg.quantum, &cfg.membrane, &options, Execution::Parallel)
        .section("audio")?;

    if cfg.audio.write_recordings {
        let rec_dir = cfg.out_dir.join("recordings");
        ensure_dir(&rec_dir)?;
        for r in &results {
            let stem = Path::new(&r.entry.file).file_stem().and_then(|s| s.to_str()).unwrap_or("clip");
            let path = rec_dir.join(format!("{stem}_{}_{}dB.wav", r.entry.scheme, r.entry.volume_db_spl));
            r.recording.audio.write_wav(&path).map_err(|e| CliError::io(&path, e))?;
        }
    }
    let guard: usize = results.iter().map(|r| r.recording.guard_violations).sum();
    if guard > 0 {
        log::warn!("{guard} samples across the batch left the linear phase regime");
    }

    write_csv(&cfg.out_dir.join("snr_results.csv"), |w| write_batch_results(&results, w))?;
    let cmp = compare_batch(&results).section("audio")?;
    let (fc, fq) = (&cmp.classical, &cmp.quantum);
    let mut text = String::from("scheme,alpha,alpha_se,beta,beta_se,residual_db,points\n");
    for (scheme, f) in [(Scheme::Classical, fc), (Scheme::Quantum, fq)] {
        text += &format!(
            "{scheme},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            f.alpha, f.alpha_se, f.beta, f.beta_se, f.residual, f.points
        );
    }
    write_text(&cfg.out_dir.join("snr_fit.csv"), &text)?;
    let summary = format!(
        "recordings:              {}\n\
         classical:               SNR = {:.4}(+/-{:.4}) V {:+.3}(+/-{:.3}) dB\n\
         quantum:                 SNR = {:.4}(+/-{:.4}) V {:+.3}(+/-{:.3}) dB\n\
         alpha_q - alpha_c:       {:+.4} +/- {:.4} ({:.2} sigma)\n\
         beta_q - beta_c:         {:+.3} +/- {:.3} dB (common slope {:.4})\n\
         separate-fit intercepts: {:+.3} dB\n\
         guard violations:        {guard}\n",
        results.len(),
        fc.alpha,
        fc.alpha_se,
        fc.beta,
        fc.beta_se,
        fq.alpha,
        fq.alpha_se,
        fq.beta,
        fq.beta_se,
        cmp.alpha_difference,
        cmp.alpha_difference_se,
        cmp.alpha_z(),
        cmp.beta_difference,
        cmp.beta_difference_se,
        cmp.common_alpha,
        fq.beta - fc.beta
    );
    write_text(&cfg.out_dir.join("record_batch_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(cmp)
}

fn snr_fit_from_line(line: SnrLine) -> SnrFit {
    SnrFit {
        alpha: line.alpha,
        beta: line.beta,
        alpha_se: 0.0,
        beta_se: 0.0,
        residual: 0.0,
        points: 0,
    }
}

pub fn srt_cmd(cfg: &ExperimentConfig, input: Option<&Path>) -> CliResult<()> {
    let st = &cfg.stats;
    let results: SrtResult = match input {
        Some(path) => {
            let f = File::open(path).map_err(|e| CliError::io(path, e))?;
            read_srt_csv(f).map_err(|e| CliError::config("input", e.to_string()))?
        }
        None => simulate_population(
            &st.population,
            &snr_fit_from_line(st.snr_classical),
            &snr_fit_from_line(st.snr_quantum),
            cfg.seed,
            Execution::Parallel,
        )
        .section("stats.population")?,
    };
    let stats = paired_analysis(&results).section("input")?;
    let hist = histogram(&results, st.histogram_bin_db).section("stats")?;
    let power = power_monte_carlo(stats.mean_diff, stats.sd, stats.n, 0.05, st.power_replications, cfg.seed, Execution::Parallel)
        .section("stats")?;

    ensure_dir(&cfg.out_dir)?;
    let dir = &cfg.out_dir;
    write_csv(&dir.join("srt_subjects.csv"), |w| write_srt_csv(&results, w))?;
    write_csv(&dir.join("srt_report.csv"), |w| stats.write_csv(w))?;
    write_csv(&dir.join("srt_histogram.csv"), |w| hist.write_csv(w))?;
    let summary = format!("{stats}\npower at this effect (one-sided, alpha 0.05): {power:.3}\n");
    write_text(&dir.join("srt_summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
