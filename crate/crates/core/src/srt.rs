//! Speech-recognition-threshold analysis: psychometric fits, synthetic
//! listeners and paired statistics over a subject population.

use std::fmt;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal as NormalDist};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};

use crate::audio::SnrFit;
use crate::error::{Error, Result};
use crate::exec::{substream, Execution};

const MAX_ITERATIONS: usize = 100;

/// Words presented at one volume and the fraction understood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub volume_db_spl: f64,
    pub fraction_correct: f64,
    pub words: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub iterations: usize,
    pub converged: bool,
    /// Binomial deviance at the optimum.
    pub residual: f64,
}

/// P(correct | V) = 1 / (1 + exp(−slope·(V − srt))).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsychometricFit {
    pub srt: f64,
    pub slope: f64,
    pub fit_meta: FitMeta,
}

impl PsychometricFit {
    pub fn probability(&self, volume_db_spl: f64) -> f64 {
        logistic(self.slope * (volume_db_spl - self.srt))
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Noiseless trials on a logistic curve.
pub fn generate_logistic(srt: f64, slope: f64, volumes: &[f64], words: u32) -> Vec<Trial> {
    volumes
        .iter()
        .map(|&v| Trial {
            volume_db_spl: v,
            fraction_correct: logistic(slope * (v - srt)),
            words,
        })
        .collect()
}

/// Maximum-likelihood logistic fit by Newton iteration with step halving.
pub fn fit_psychometric(trials: &[Trial]) -> Result<PsychometricFit> {
    for t in trials {
        if !(0.0..=1.0).contains(&t.fraction_correct) {
            return Err(Error::domain("fraction_correct", format!("{} outside [0, 1]", t.fraction_correct)));
        }
        if t.words == 0 || !t.volume_db_spl.is_finite() {
            return Err(Error::domain("trials", "every trial needs a finite volume and at least one word"));
        }
    }
    let mut volumes: Vec<f64> = trials.iter().map(|t| t.volume_db_spl).collect();
    volumes.sort_by(f64::total_cmp);
    volumes.dedup();
    if volumes.len() < 4 {
        return Err(Error::domain("trials", format!("need at least 4 distinct volumes, got {}", volumes.len())));
    }
    let total: f64 = trials.iter().map(|t| t.words as f64).sum();
    let correct: f64 = trials.iter().map(|t| t.fraction_correct * t.words as f64).sum();
    if correct <= 0.0 || correct >= total {
        return Err(Error::FitFailed("all-or-nothing responses: the threshold is not identified".into()));
    }

    // centred parametrisation logit = b·(V − v̄) + c keeps the Hessian well conditioned
    let vbar = trials.iter().map(|t| t.volume_db_spl * t.words as f64).sum::<f64>() / total;
    let loglik = |b: f64, c: f64| -> f64 {
        trials
            .iter()
            .map(|t| {
                let eta = b * (t.volume_db_spl - vbar) + c;
                let n = t.words as f64;
                let y = t.fraction_correct * n;
                // y·η − n·log(1 + e^η), written to avoid overflow
                y * eta - n * (eta.max(0.0) + (-eta.abs()).exp().ln_1p())
            })
            .sum()
    };

    let (mut b, mut c) = (0.0, (correct / (total - correct)).ln());
    let mut ll = loglik(b, c);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (mut gb, mut gc, mut hbb, mut hbc, mut hcc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for t in trials {
            let x = t.volume_db_spl - vbar;
            let n = t.words as f64;
            let p = logistic(b * x + c);
            let r = n * (t.fraction_correct - p);
            let w = n * p * (1.0 - p);
            gb += r * x;
            gc += r;
            hbb += w * x * x;
            hbc += w * x;
            hcc += w;
        }
        let det = hbb * hcc - hbc * hbc;
        if !(det.is_finite() && det > 0.0) {
            break;
        }
        let db = (hcc * gb - hbc * gc) / det;
        let dc = (hbb * gc - hbc * gb) / det;
        let mut step = 1.0;
        let mut next = loglik(b + db, c + dc);
        while next < ll - 1e-12 * ll.abs().max(1.0) && step > 1e-10 {
            step *= 0.5;
            next = loglik(b + step * db, c + step * dc);
        }
        b += step * db;
        c += step * dc;
        ll = next;
        if (step * db).abs() < 1e-12 * (1.0 + b.abs()) && (step * dc).abs() < 1e-12 * (1.0 + c.abs()) {
            converged = true;
            break;
        }
    }
    if !converged || !b.is_finite() || !c.is_finite() {
        return Err(Error::FitFailed(format!(
            "psychometric fit did not converge after {iterations} iterations (separable data?)"
        )));
    }
    if b <= 0.0 {
        return Err(Error::FitFailed(format!("success falls with volume (slope {b:.4} /dB)")));
    }

    let deviance = 2.0
        * trials
            .iter()
            .map(|t| {
                let n = t.words as f64;
                let y = t.fraction_correct * n;
                let mu = n * logistic(b * (t.volume_db_spl - vbar) + c);
                let term = |obs: f64, exp: f64| if obs > 0.0 { obs * (obs / exp).ln() } else { 0.0 };
                term(y, mu) + term(n - y, n - mu)
            })
            .sum::<f64>();
    Ok(PsychometricFit {
        srt: vbar - c / b,
        slope: b,
        fit_meta: FitMeta {
            iterations,
            converged,
            residual: deviance,
        },
    })
}

/// A listener's intelligibility as a function of recording SNR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Listener {
    /// SNR (dB) at which half the words are understood.
    pub reference_snr_db: f64,
    /// Logistic slope per dB of SNR.
    pub slope_per_db: f64,
}

/// Draws word outcomes at each volume. `words_per_volume` words are presented
/// at every entry of `volumes`.
pub fn simulate_listener(
    listener: &Listener,
    snr_model: &SnrFit,
    volumes: &[f64],
    words_per_volume: u32,
    seed: u64,
) -> Result<Vec<Trial>> {
    if !(snr_model.alpha.is_finite() && snr_model.alpha > 0.0 && snr_model.beta.is_finite()) {
        return Err(Error::domain("snr_model", "alpha must be > 0 and beta finite"));
    }
    if !(listener.slope_per_db > 0.0) {
        return Err(Error::domain("slope_per_db", "must be > 0"));
    }
    if words_per_volume == 0 {
        return Err(Error::domain("words_per_volume", "must be > 0"));
    }
    let mut rng = substream(seed, 0);
    volumes
        .iter()
        .map(|&v| {
            let p = logistic(listener.slope_per_db * (snr_model.predict(v) - listener.reference_snr_db));
            let k = Binomial::new(words_per_volume as u64, p)
                .map_err(|e| Error::domain("probability", e.to_string()))?
                .sample(&mut rng);
            Ok(Trial {
                volume_db_spl: v,
                fraction_correct: k as f64 / words_per_volume as f64,
                words: words_per_volume,
            })
        })
        .collect()
}

/// Volume at which a listener's expected success crosses 50 %.
pub fn expected_srt(listener: &Listener, snr_model: &SnrFit) -> f64 {
    (listener.reference_snr_db - snr_model.beta) / snr_model.alpha
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSrt {
    pub subject: String,
    pub srt_classical: f64,
    pub srt_quantum: f64,
}

impl SubjectSrt {
    pub fn difference(&self) -> f64 {
        self.srt_quantum - self.srt_classical
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SrtResult {
    pub per_subject: Vec<SubjectSrt>,
}

impl SrtResult {
    pub fn n(&self) -> usize {
        self.per_subject.len()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.per_subject.iter().map(SubjectSrt::difference).collect()
    }

    /// Subjects with a classical SRT of 0 and the given quantum−classical differences.
    pub fn from_differences(diffs: &[f64]) -> Self {
        SrtResult {
            per_subject: diffs
                .iter()
                .enumerate()
                .map(|(i, d)| SubjectSrt {
                    subject: format!("s{:02}", i + 1),
                    srt_classical: 0.0,
                    srt_quantum: *d,
                })
                .collect(),
        }
    }
}

/// Synthetic listener population for the speech test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub subjects: usize,
    pub reference_snr_mean_db: f64,
    pub reference_snr_sd_db: f64,
    /// Session-to-session jitter of a listener's reference SNR, drawn
    /// independently for the classical and the quantum session.
    pub session_sd_db: f64,
    pub slope_per_db: f64,
    /// Volume grid is centred on the population's classical SRT.
    pub volume_span_db: f64,
    pub volume_steps: usize,
    /// Five-word sentences per scheme and subject.
    pub sentences: u32,
    pub words_per_sentence: u32,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            subjects: 45,
            reference_snr_mean_db: -7.0,
            reference_snr_sd_db: 1.0,
            session_sd_db: 0.9,
            slope_per_db: 0.68,
            volume_span_db: 10.0,
            volume_steps: 15,
            sentences: 30,
            words_per_sentence: 5,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 2 {
            return Err(Error::domain("subjects", "need at least 2"));
        }
        if self.volume_steps < 4 {
            return Err(Error::domain("volume_steps", "need at least 4 distinct volumes"));
        }
        if self.sentences == 0 || self.words_per_sentence == 0 {
            return Err(Error::domain("sentences", "sentences and words_per_sentence must be > 0"));
        }
        if self.sentences as usize % self.volume_steps != 0 {
            return Err(Error::domain("sentences", "must be a multiple of volume_steps"));
        }
        if !(self.slope_per_db > 0.0 && self.volume_span_db > 0.0) {
            return Err(Error::domain("slope_per_db", "slope and span must be > 0"));
        }
        if !(self.reference_snr_sd_db >= 0.0 && self.session_sd_db >= 0.0) {
            return Err(Error::domain("reference_snr_sd_db", "spreads must be >= 0"));
        }
        Ok(())
    }

    pub fn volumes(&self, snr_classical: &SnrFit) -> Vec<f64> {
        let centre = (self.reference_snr_mean_db - snr_classical.beta) / snr_classical.alpha;
        let step = self.volume_span_db / (self.volume_steps - 1) as f64;
        (0..self.volume_steps)
            .map(|k| centre - self.volume_span_db / 2.0 + step * k as f64)
            .collect()
    }
}

/// Each subject hears both schemes with the same word-level random stream, so
/// identical SNR models without session jitter give identical thresholds.
pub fn simulate_population(
    population: &PopulationConfig,
    snr_classical: &SnrFit,
    snr_quantum: &SnrFit,
    seed: u64,
    exec: Execution,
) -> Result<SrtResult> {
    population.validate()?;
    let volumes = population.volumes(snr_classical);
    let words = population.sentences / population.volume_steps as u32 * population.words_per_sentence;
    let unit = NormalDist::new(0.0, 1.0).expect("unit normal");
    let per_subject = exec
        .map(population.subjects, |i| {
            let mut traits = substream(seed, i as u64);
            let reference = population.reference_snr_mean_db + population.reference_snr_sd_db * unit.sample(&mut traits);
            let session = |rng: &mut _| Listener {
                reference_snr_db: reference + population.session_sd_db * unit.sample(rng),
                slope_per_db: population.slope_per_db,
            };
            let (lc, lq) = (session(&mut traits), session(&mut traits));
            let trial_seed: u64 = traits.random();
            let c = fit_psychometric(&simulate_listener(&lc, snr_classical, &volumes, words, trial_seed)?)?;
            let q = fit_psychometric(&simulate_listener(&lq, snr_quantum, &volumes, words, trial_seed)?)?;
            Ok(SubjectSrt {
                subject: format!("s{:02}", i + 1),
                srt_classical: c.srt,
                srt_quantum: q.srt,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SrtResult { per_subject })
}

/// Student t distribution with `df` degrees of freedom.
#[derive(Debug, Clone, Copy)]
pub struct TDist {
    inner: StudentsT,
}

impl TDist {
    pub fn new(df: f64) -> Result<Self> {
        let inner = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::domain("df", e.to_string()))?;
        Ok(TDist { inner })
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.inner.cdf(t)
    }

    pub fn sf(&self, t: f64) -> f64 {
        self.inner.sf(t)
    }

    /// Quantile, refined by Newton steps on the CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let mut t = self.inner.inverse_cdf(p);
        for _ in 0..3 {
            let dens = self.inner.pdf(t);
            if !(dens > 0.0) {
                break;
            }
            t -= (self.inner.cdf(t) - p) / dens;
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedStats {
    pub n: usize,
    /// Mean of srt_quantum − srt_classical.
    pub mean_diff: f64,
    pub sd: f64,
    pub sem: f64,
    /// Half-width of the 95 % confidence interval.
    pub ci95: f64,
    pub t_statistic: f64,
    /// One-sided, H₁: mean < 0.
    pub p_value: f64,
    pub p_value_two_sided: f64,
    pub fraction_improved: f64,
}

pub fn paired_analysis(results: &SrtResult) -> Result<PairedStats> {
    paired_from_differences(&results.differences())
}

pub fn paired_from_differences(diffs: &[f64]) -> Result<PairedStats> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::domain("results", format!("need at least 2 subjects, got {n}")));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::domain("results", "non-finite SRT difference"));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let sem = sd / nf.sqrt();
    let t_dist = TDist::new(nf - 1.0)?;
    let t = if sem > 0.0 {
        mean / sem
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    let p = t_dist.cdf(t);
    Ok(PairedStats {
        n,
        mean_diff: mean,
        sd,
        sem,
        ci95: t_dist.quantile(0.975) * sem,
        t_statistic: t,
        p_value: p,
        p_value_two_sided: (2.0 * p.min(1.0 - p)).min(1.0),
        fraction_improved: diffs.iter().filter(|d| **d < 0.0).count() as f64 / nf,
    })
}

impl PairedStats {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "statistic,value")?;
        for (k, v) in [
            ("n", self.n as f64),
            ("mean_diff_db", self.mean_diff),
            ("sd_db", self.sd),
            ("sem_db", self.sem),
            ("ci95_db", self.ci95),
            ("t_statistic", self.t_statistic),
            ("p_one_sided", self.p_value),
            ("p_two_sided", self.p_value_two_sided),
            ("fraction_improved", self.fraction_improved),
        ] {
            writeln!(w, "{k},{v}")?;
        }
        Ok(())
    }
}

impl fmt::Display for PairedStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "subjects:            {}", self.n)?;
        writeln!(f, "mean SRT change:     {:+.2} dB_SPL (quantum − classical)", self.mean_diff)?;
        writeln!(f, "95% CI:              ±{:.2} dB_SPL", self.ci95)?;
        writeln!(f, "spread (1 sd):       {:.2} dB_SPL", self.sd)?;
        writeln!(f, "standard error:      {:.2} dB_SPL", self.sem)?;
        writeln!(f, "t({}):               {:.3}", self.n - 1, self.t_statistic)?;
        writeln!(f, "p (one-sided):       {:.4}", self.p_value)?;
        writeln!(f, "p (two-sided):       {:.4}", self.p_value_two_sided)?;
        write!(f, "improved subjects:   {:.0}%", 100.0 * self.fraction_improved)
    }
}

/// Deterministic difference population with an exact sample mean and sd.
///
/// `round(fraction_improved·n)` subjects get negative differences and the rest
/// positive ones; each group follows half-normal quantiles, scaled so the
/// moments hit their targets.
pub fn reconstruct_population(n: usize, mean: f64, sd: f64, fraction_improved: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::domain("n", "need at least 2"));
    }
    if !(sd > 0.0) {
        return Err(Error::domain("sd", "must be > 0"));
    }
    let k = (fraction_improved * n as f64).round() as usize;
    if k == 0 || k == n {
        return Err(Error::domain("fraction_improved", "needs subjects on both sides of zero"));
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let half_normal = |m: usize| -> Vec<f64> {
        (0..m)
            .map(|i| std_normal.inverse_cdf(0.5 + 0.5 * (i as f64 + 0.5) / m as f64))
            .collect()
    };
    let u = half_normal(k);
    let w = half_normal(n - k);
    let (u1, u2) = (u.iter().sum::<f64>(), u.iter().map(|x| x * x).sum::<f64>());
    let (w1, w2) = (w.iter().sum::<f64>(), w.iter().map(|x| x * x).sum::<f64>());
    let nf = n as f64;
    let total = nf * mean;
    let second = (nf - 1.0) * sd * sd + nf * mean * mean;
    // −c·u1 + d·w1 = total, c²·u2 + d²·w2 = second
    let r = w2 / (w1 * w1);
    let qa = u2 + u1 * u1 * r;
    let qb = 2.0 * total * u1 * r;
    let qc = total * total * r - second;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return Err(Error::domain("sd", "incompatible with mean and fraction_improved"));
    }
    let c = (-qb + disc.sqrt()) / (2.0 * qa);
    let d = (total + c * u1) / w1;
    if !(c > 0.0 && d > 0.0) {
        return Err(Error::domain("fraction_improved", "incompatible with mean and sd"));
    }
    // interleave so subject order carries no structure
    let mut neg = u.into_iter().map(|x| -c * x);
    let mut pos = w.into_iter().map(|x| d * x);
    let out = (0..n)
        .map(|i| {
            if (i + 1) * k / n > i * k / n {
                neg.next()
            } else {
                pos.next()
            }
            .expect("group sizes add up to n")
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge; edges sit on multiples of the bin width.
    pub lower: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Mean and sample sd from bin centres.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.total() as f64;
        let centre = |b: &HistogramBin| b.lower + self.bin_width / 2.0;
        let mean = self.bins.iter().map(|b| centre(b) * b.count as f64).sum::<f64>() / n;
        let var = self.bins.iter().map(|b| (centre(b) - mean).powi(2) * b.count as f64).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lower_db,bin_upper_db,count")?;
        for b in &self.bins {
            writeln!(w, "{},{},{}", b.lower, b.lower + self.bin_width, b.count)?;
        }
        Ok(())
    }
}

/// Histogram of srt_quantum − srt_classical, contiguous from the lowest to the highest occupied bin.
pub fn histogram(results: &SrtResult, bin_width: f64) -> Result<Histogram> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(Error::domain("bin_width", "must be > 0"));
    }
    let diffs = results.differences();
    if diffs.is_empty() {
        return Ok(Histogram { bin_width, bins: Vec::new() });
    }
    let index = |d: f64| (d / bin_width).floor() as i64;
    let lo = diffs.iter().map(|d| index(*d)).min().unwrap_or(0);
    let hi = diffs.iter().map(|d| index(*d)).max().unwrap_or(0);
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for d in &diffs {
        counts[(index(*d) - lo) as usize] += 1;
    }
    Ok(Histogram {
        bin_width,
        bins: counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                lower: (lo + i as i64) as f64 * bin_width,
                count,
            })
            .collect(),
    })
}

/// Share of simulated studies whose one-sided test rejects at `alpha`.
pub fn power_monte_carlo(
    effect: f64,
    sd: f64,
    n: usize,
    alpha: f64,
    replications: usize,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    if replications == 0 {
        return Err(Error::domain("replications", "must be > 0"));
    }
    let dist = NormalDist::new(effect, sd).map_err(|e| Error::domain("sd", e.to_string()))?;
    let rejected = exec
        .map(replications, |r| {
            let mut rng = substream(seed, r as u64);
            let diffs: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            paired_from_differences(&diffs).map(|s| s.p_value < alpha)
        })
        .into_iter()
        .collect::<Result<Vec<bool>>>()?;
    Ok(rejected.iter().filter(|r| **r).count() as f64 / replications as f64)
}

#[derive(Serialize, Deserialize)]
struct SrtRow {
    subject: String,
    srt_classical_db: f64,
    srt_quantum_db: f64,
}

/// Reads a `subject,srt_classical_db,srt_quantum_db` CSV with header; `#` lines are comments.
pub fn read_srt_csv<R: Read>(r: R) -> Result<SrtResult> {
    let per_subject = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r)
        .deserialize::<SrtRow>()
        .map(|row| {
            row.map(|r| SubjectSrt {
                subject: r.subject,
                srt_classical: r.srt_classical_db,
                srt_quantum: r.srt_quantum_db,
            })
            .map_err(|e| Error::Parse(format!("SRT table: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(SrtResult { per_subject })
}

pub fn write_srt_csv<W: Write>(results: &SrtResult, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in &results.per_subject {
        out.serialize(SrtRow {
            subject: s.subject.clone(),
            srt_classical_db: s.srt_classical,
            srt_quantum_db: s.srt_quantum,
        })?;
    }
    out.flush()?;
    Ok(())
}
