//! Synthetic fixtures with known ground truth: colored noise, injected
//! upsweeps and pulse trains, on-disk archives, and scored event sets.
//!
//! Everything here is seeded and deterministic; tests, the acceptance suite
//! and the CLI `synth` command all build their inputs through this module.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::archive::wav::{write_wav, SampleFormat, WavError};
use crate::event::{Bounds, DetectionEvent, EventId};
use crate::postclass::ExpertScore;
use crate::time::Timestamp;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pink (1/f) noise from white Gaussian noise through Kellet's refined
/// filter, scaled to the requested RMS.
pub fn pink_noise(n: usize, rms: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut b = [0.0f64; 7];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let w: f64 = StandardNormal.sample(&mut r);
        b[0] = 0.99886 * b[0] + w * 0.0555179;
        b[1] = 0.99332 * b[1] + w * 0.0750759;
        b[2] = 0.96900 * b[2] + w * 0.1538520;
        b[3] = 0.86650 * b[3] + w * 0.3104856;
        b[4] = 0.55000 * b[4] + w * 0.5329522;
        b[5] = -0.7616 * b[5] - w * 0.0168980;
        out.push(b.iter().sum::<f64>() + w * 0.5362);
        b[6] = w * 0.115926;
    }
    scale_to_rms(&mut out, rms);
    out
}

pub fn white_noise(n: usize, rms: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut r); rms * z }).collect()
}

fn scale_to_rms(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
}

/// Tukey (cosine-tapered) envelope with the given taper fraction per side.
fn tukey(n: usize, taper: f64) -> Vec<f64> {
    let m = ((n as f64) * taper).round().max(1.0) as usize;
    (0..n)
        .map(|i| {
            let edge = i.min(n - 1 - i);
            if edge >= m {
                1.0
            } else {
                0.5 - 0.5 * (PI * edge as f64 / m as f64).cos()
            }
        })
        .collect()
}

/// Unit-amplitude linear FM sweep from `f0` to `f1` Hz with tapered ends.
pub fn linear_chirp(fs: u32, f0: f64, f1: f64, duration_s: f64) -> Vec<f64> {
    let n = (duration_s * fs as f64).round() as usize;
    let env = tukey(n, 0.1);
    let k = (f1 - f0) / duration_s;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs as f64;
            env[i] * (2.0 * PI * (f0 * t + 0.5 * k * t * t)).sin()
        })
        .collect()
}

/// Short burst of random-phase tones spread over `[f_lo, f_hi]` under a Hann envelope.
pub fn band_pulse(fs: u32, f_lo: f64, f_hi: f64, duration_s: f64, r: &mut impl Rng) -> Vec<f64> {
    let n = (duration_s * fs as f64).round().max(2.0) as usize;
    let comps = 8;
    let tones: Vec<(f64, f64)> = (0..comps)
        .map(|i| {
            let f = f_lo + (f_hi - f_lo) * (i as f64 + r.gen::<f64>()) / comps as f64;
            (f, r.gen::<f64>() * 2.0 * PI)
        })
        .collect();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs as f64;
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            w * tones.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>()
        })
        .collect();
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    x.iter_mut().for_each(|v| *v /= peak.max(1e-12));
    x
}

pub fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Mean-square power of `x` falling in `[f_lo, f_hi]`, from one long periodogram
/// over at most the first 2^18 samples.
pub fn band_power(x: &[f64], fs: u32, f_lo: f64, f_hi: f64) -> f64 {
    let n = x.len().min(1 << 18);
    let mut buf: Vec<Complex<f64>> = x[..n].iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = fs as f64 / n as f64;
    let mut p = 0.0;
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1) {
        let f = k as f64 * df;
        if f >= f_lo && f <= f_hi {
            let one_sided = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            p += one_sided * c.norm_sqr();
        }
    }
    p / (n as f64 * n as f64)
}

/// Amplitude factor giving `signal` the requested SNR against `noise_band_power`.
pub fn snr_gain(signal: &[f64], noise_band_power: f64, snr_db: f64) -> f64 {
    (10f64.powf(snr_db / 10.0) * noise_band_power / mean_square(signal)).sqrt()
}

pub fn add_at(buf: &mut [f64], offset: usize, signal: &[f64], gain: f64) {
    for (b, s) in buf.iter_mut().skip(offset).zip(signal) {
        *b += gain * s;
    }
}

/// Ground-truth time-frequency box of an injected signal, in seconds from the
/// start of the fixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    pub t0_s: f64,
    pub t1_s: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Injection {
    pub fn overlaps(&self, t0_s: f64, t1_s: f64) -> bool {
        t0_s < self.t1_s && self.t0_s < t1_s
    }
}

#[derive(Debug, Clone)]
pub struct SynthSignal {
    pub sample_rate_hz: u32,
    pub samples: Vec<f64>,
    pub injections: Vec<Injection>,
}

impl SynthSignal {
    pub fn to_f32(&self) -> Vec<f32> {
        self.samples.iter().map(|&v| v as f32).collect()
    }

    pub fn clip(&self, start: Timestamp) -> crate::archive::AudioClip {
        crate::archive::AudioClip {
            channel: 0,
            sample_rate_hz: self.sample_rate_hz,
            start_time: start,
            samples: self.to_f32(),
        }
    }

    pub fn with_gain(&self, g: f64) -> Self {
        Self { samples: self.samples.iter().map(|v| v * g).collect(), ..self.clone() }
    }
}

/// Upsweeps embedded in pink noise.
#[derive(Debug, Clone)]
pub struct UpsweepFixture {
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub n_calls: usize,
    pub f0: f64,
    pub f1: f64,
    pub call_s: f64,
    pub snr_db: f64,
    pub noise_rms: f64,
    pub seed: u64,
    /// Explicit call start times (seconds); when empty, calls are spread one
    /// per equal slot with a random offset.
    pub at_s: Vec<f64>,
}

impl Default for UpsweepFixture {
    fn default() -> Self {
        Self {
            sample_rate_hz: 2000,
            duration_s: 3600.0,
            n_calls: 50,
            f0: 100.0,
            f1: 200.0,
            call_s: 1.0,
            snr_db: 15.0,
            noise_rms: 0.05,
            seed: 1,
            at_s: Vec::new(),
        }
    }
}

impl UpsweepFixture {
    pub fn build(&self) -> SynthSignal {
        let fs = self.sample_rate_hz;
        let n = (self.duration_s * fs as f64).round() as usize;
        let mut x = pink_noise(n, self.noise_rms, self.seed);
        let noise_bp = band_power(&x, fs, self.f0.min(self.f1), self.f0.max(self.f1));
        let call = linear_chirp(fs, self.f0, self.f1, self.call_s);
        let gain = snr_gain(&call, noise_bp, self.snr_db);
        let starts = if self.at_s.is_empty() {
            let mut r = rng(self.seed ^ 0x5eed_ca11);
            let slot = self.duration_s / self.n_calls.max(1) as f64;
            let margin = (slot - self.call_s) * 0.1;
            (0..self.n_calls)
                .map(|i| i as f64 * slot + margin + r.gen::<f64>() * (slot - self.call_s - 2.0 * margin))
                .collect()
        } else {
            self.at_s.clone()
        };
        let mut injections = Vec::with_capacity(starts.len());
        for s in starts {
            add_at(&mut x, (s * fs as f64).round() as usize, &call, gain);
            injections.push(Injection {
                t0_s: s,
                t1_s: s + self.call_s,
                f_lo: self.f0.min(self.f1),
                f_hi: self.f0.max(self.f1),
            });
        }
        SynthSignal { sample_rate_hz: fs, samples: x, injections }
    }
}

/// Regular pulse trains and Poisson pulse clutter in pink noise.
///
/// The fixture is cut into equal slots. `n_trains` randomly chosen slots hold
/// one regular train each; every remaining slot holds Poisson clutter only.
#[derive(Debug, Clone)]
pub struct PulseTrainFixture {
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    pub slot_s: f64,
    pub n_trains: usize,
    pub pulses_per_train: usize,
    pub ipi_s: f64,
    /// Uniform relative jitter on each interval (0.02 = +/-2%).
    pub jitter: f64,
    pub clutter_rate_hz: f64,
    pub pulse_s: f64,
    pub band: (f64, f64),
    pub snr_db: f64,
    pub noise_rms: f64,
    pub seed: u64,
}

impl Default for PulseTrainFixture {
    fn default() -> Self {
        Self {
            sample_rate_hz: 2000,
            duration_s: 3600.0,
            slot_s: 60.0,
            n_trains: 30,
            pulses_per_train: 20,
            ipi_s: 0.45,
            jitter: 0.02,
            clutter_rate_hz: 1.0,
            pulse_s: 0.1,
            band: (100.0, 250.0),
            snr_db: 20.0,
            noise_rms: 0.05,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PulseTrainSignal {
    pub signal: SynthSignal,
    /// One entry per injected regular train, spanning first onset to last pulse end.
    pub trains: Vec<Injection>,
    /// Slots (start, end seconds) holding only Poisson clutter.
    pub clutter_slots: Vec<(f64, f64)>,
    pub clutter_pulses: usize,
}

impl PulseTrainFixture {
    pub fn build(&self) -> PulseTrainSignal {
        let fs = self.sample_rate_hz;
        let n = (self.duration_s * fs as f64).round() as usize;
        let mut r = rng(self.seed);
        let mut x = pink_noise(n, self.noise_rms, self.seed.wrapping_add(1));
        let noise_bp = band_power(&x, fs, self.band.0, self.band.1);
        let n_slots = (self.duration_s / self.slot_s).floor() as usize;
        let mut slots: Vec<usize> = (0..n_slots).collect();
        slots.shuffle(&mut r);
        let mut train_slots = slots[..self.n_trains.min(n_slots)].to_vec();
        train_slots.sort_unstable();
        let margin = 10.0;

        let mut trains = Vec::new();
        let mut clutter_slots = Vec::new();
        let mut clutter_pulses = 0;
        let put_pulse = |x: &mut Vec<f64>, r: &mut ChaCha8Rng, at: f64| {
            let p = band_pulse(fs, self.band.0, self.band.1, self.pulse_s, r);
            let g = snr_gain(&p, noise_bp, self.snr_db);
            add_at(x, (at * fs as f64).round() as usize, &p, g);
        };
        for slot in 0..n_slots {
            let s0 = slot as f64 * self.slot_s;
            if train_slots.binary_search(&slot).is_ok() {
                let span = self.ipi_s * (self.pulses_per_train.saturating_sub(1)) as f64 * (1.0 + self.jitter);
                let room = (self.slot_s - 2.0 * margin - span - self.pulse_s).max(0.0);
                let mut t = s0 + margin + r.gen::<f64>() * room;
                let first = t;
                for i in 0..self.pulses_per_train {
                    if i > 0 {
                        t += self.ipi_s * (1.0 + self.jitter * (2.0 * r.gen::<f64>() - 1.0));
                    }
                    put_pulse(&mut x, &mut r, t);
                }
                trains.push(Injection {
                    t0_s: first,
                    t1_s: t + self.pulse_s,
                    f_lo: self.band.0,
                    f_hi: self.band.1,
                });
            } else {
                let (c0, c1) = (s0 + margin, s0 + self.slot_s - margin);
                clutter_slots.push((c0, c1));
                if self.clutter_rate_hz > 0.0 {
                    let gap = Exp::new(self.clutter_rate_hz).expect("positive rate");
                    let mut t = c0 + gap.sample(&mut r);
                    while t + self.pulse_s < c1 {
                        put_pulse(&mut x, &mut r, t);
                        clutter_pulses += 1;
                        t += gap.sample(&mut r);
                    }
                }
            }
        }
        PulseTrainSignal {
            signal: SynthSignal { sample_rate_hz: fs, samples: x, injections: trains.clone() },
            trains,
            clutter_slots,
            clutter_pulses,
        }
    }
}

/// Write `samples` (one channel per slice) as consecutive WAV files of
/// `file_s` seconds named `<prefix>_YYYYMMDD_HHMMSS.wav`.
pub fn write_archive(
    dir: &Path,
    prefix: &str,
    start: Timestamp,
    sample_rate_hz: u32,
    channels: &[Vec<f32>],
    file_s: u32,
) -> Result<Vec<std::path::PathBuf>, WavError> {
    std::fs::create_dir_all(dir).map_err(|e| WavError::Io(hound::Error::IoError(e)))?;
    let total = channels[0].len();
    let per_file = file_s as usize * sample_rate_hz as usize;
    let mut paths = Vec::new();
    let mut offset = 0;
    while offset < total {
        let end = (offset + per_file).min(total);
        let t = start.add_seconds(offset as f64 / sample_rate_hz as f64);
        let name = format!("{prefix}_{}.wav", t.to_datetime().format("%Y%m%d_%H%M%S"));
        let path = dir.join(name);
        let slices: Vec<&[f32]> = channels.iter().map(|c| &c[offset..end]).collect();
        write_wav(&path, sample_rate_hz, SampleFormat::Int16, &slices)?;
        paths.push(path);
        offset = end;
    }
    Ok(paths)
}

pub fn io_error(e: WavError) -> io::Error {
    io::Error::other(e.to_string())
}

/// A scored pulse-train event set with known truth, for post-classifier tests.
///
/// True trains cluster around dawn, which drifts through the season by
/// `dawn_drift_h` hours, and are more common early in the season; their
/// intervals sit near 0.45 s with moderate regularity. False
/// detections are uniform in time and come from two sources: mechanical
/// trains (very regular, broadband, any interval) and chance groupings of
/// clutter pulses (irregular). The detector's regularity score therefore
/// ranks the mechanical trains above most true ones.
#[derive(Debug, Clone)]
pub struct EventSetFixture {
    pub n_events: usize,
    pub positive_fraction: f64,
    /// Share of false detections that are mechanical trains.
    pub mechanical_fraction: f64,
    pub start: Timestamp,
    pub days: u32,
    /// UTC hour of dawn on the first day.
    pub dawn_hour: f64,
    /// Change of the dawn hour from the first to the last day.
    pub dawn_drift_h: f64,
    pub hour_sd: f64,
    pub seed: u64,
}

impl Default for EventSetFixture {
    fn default() -> Self {
        Self {
            n_events: 4000,
            positive_fraction: 0.3,
            mechanical_fraction: 0.35,
            start: Timestamp::from_ymd_hms(2013, 3, 1, 0, 0, 0),
            days: 120,
            dawn_hour: 10.0,
            dawn_drift_h: -8.0,
            hour_sd: 1.0,
            seed: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledEvents {
    pub events: Vec<DetectionEvent>,
    /// Ground truth aligned with `events`.
    pub truth: Vec<bool>,
}

#[derive(Clone, Copy)]
enum Source {
    Call,
    Mechanical,
    Clutter,
}

impl EventSetFixture {
    pub fn build(&self) -> LabeledEvents {
        let mut r = rng(self.seed);
        let n01 = Normal::new(0.0, 1.0).expect("unit normal");
        let g = |r: &mut ChaCha8Rng, m: f64, s: f64| m + s * n01.sample(r);
        let cv_max = 0.35;
        let mut events = Vec::with_capacity(self.n_events);
        let mut truth = Vec::with_capacity(self.n_events);
        while events.len() < self.n_events {
            let source = if r.gen::<f64>() < self.positive_fraction {
                Source::Call
            } else if r.gen::<f64>() < self.mechanical_fraction {
                Source::Mechanical
            } else {
                Source::Clutter
            };
            let (day, hour) = match source {
                Source::Call => {
                    let day = (r.gen::<f64>().powf(1.5) * self.days as f64).floor();
                    let dawn = self.dawn_hour + self.dawn_drift_h * day / self.days as f64;
                    (day, g(&mut r, dawn, self.hour_sd).rem_euclid(24.0))
                }
                _ => ((r.gen::<f64>() * self.days as f64).floor(), r.gen::<f64>() * 24.0),
            };
            let t0 = self.start.add_seconds(day * 86_400.0 + hour * 3600.0);
            let (ipi_cv, ipi_mean, count, width, level, center, bandwidth) = match source {
                Source::Call => {
                    // Larger callers repeat more slowly, call lower and hold
                    // each pulse longer, so these three move together.
                    let size = g(&mut r, 0.0, 1.0);
                    (
                        g(&mut r, 0.14, 0.07),
                        0.45 + 0.12 * size + g(&mut r, 0.0, 0.02),
                        g(&mut r, 14.0, 5.0),
                        0.15 + 0.04 * size + g(&mut r, 0.0, 0.01),
                        g(&mut r, 10.0, 3.5),
                        165.0 - 40.0 * size + g(&mut r, 0.0, 6.0),
                        g(&mut r, 120.0, 35.0),
                    )
                }
                Source::Mechanical => (
                    g(&mut r, 0.05, 0.03),
                    r.gen_range(0.2..1.8),
                    g(&mut r, 14.0, 6.0),
                    g(&mut r, 0.25, 0.06),
                    g(&mut r, 13.0, 4.0),
                    g(&mut r, 130.0, 40.0),
                    g(&mut r, 170.0, 40.0),
                ),
                Source::Clutter => (
                    r.gen_range(0.18..cv_max),
                    g(&mut r, 0.45, 0.12),
                    g(&mut r, 12.0, 5.0),
                    g(&mut r, 0.15, 0.04),
                    g(&mut r, 9.5, 3.5),
                    g(&mut r, 165.0, 40.0),
                    g(&mut r, 120.0, 35.0),
                ),
            };
            let ipi_cv = ipi_cv.clamp(0.002, cv_max);
            let ipi_mean = ipi_mean.clamp(0.1, 2.0);
            let count = count.round().max(5.0);
            let width = width.clamp(0.03, 0.8);
            let bandwidth = bandwidth.max(20.0);
            let duration = ipi_mean * (count - 1.0) + width;
            let features: BTreeMap<String, f64> = [
                ("pulse_count", count),
                ("duration_s", duration),
                ("ipi_mean_s", ipi_mean),
                ("ipi_cv", ipi_cv),
                ("mean_width_s", width),
                ("mean_peak_db", level),
                ("band_center_hz", center),
                ("bandwidth_hz", bandwidth),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
            let bounds = Bounds {
                t0,
                t1: t0.add_seconds(duration),
                f_lo: center - bandwidth / 2.0,
                f_hi: center + bandwidth / 2.0,
            };
            let score = (1.0 - ipi_cv / cv_max).max(0.0);
            let e = DetectionEvent::new("synthetic", 0, "asr_pt", bounds, score, features);
            // Two draws landing on the same millisecond and band would share an id.
            if events.iter().rev().take(64).any(|o: &DetectionEvent| o.event_id == e.event_id) {
                continue;
            }
            events.push(e);
            truth.push(matches!(source, Source::Call));
        }
        LabeledEvents { events, truth }
    }
}

/// Expert scores for `ids` from a reviewer who is right with probability
/// `1 - label_noise`: believed positives get 4 or 5, believed negatives 1 or 2.
pub fn simulate_scores(
    truth: &HashMap<EventId, bool>,
    ids: &[EventId],
    label_noise: f64,
    reviewer_id: &str,
    scored_at: Timestamp,
    seed: u64,
) -> Vec<ExpertScore> {
    let mut r = rng(seed);
    ids.iter()
        .map(|id| {
            let believed = truth.get(id).copied().unwrap_or(false) ^ (r.gen::<f64>() < label_noise);
            let score = if believed { r.gen_range(4..=5) } else { r.gen_range(1..=2) };
            ExpertScore { event_id: *id, score, reviewer_id: reviewer_id.to_string(), scored_at }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pink_noise_has_requested_rms_and_tilt() {
        let x = pink_noise(1 << 16, 0.05, 1);
        assert!((mean_square(&x).sqrt() - 0.05).abs() < 1e-12);
        let lo = band_power(&x, 2000, 50.0, 100.0);
        let hi = band_power(&x, 2000, 500.0, 550.0);
        // 1/f: equal-width bands an octave-plus apart differ by ~10 dB.
        assert!(10.0 * (lo / hi).log10() > 6.0);
    }

    #[test]
    fn band_power_of_a_tone() {
        let fs = 2000;
        let x: Vec<f64> = (0..1 << 14).map(|i| (2.0 * PI * 250.0 * i as f64 / fs as f64).sin()).collect();
        assert!((band_power(&x, fs, 240.0, 260.0) - 0.5).abs() < 1e-3);
        assert!(band_power(&x, fs, 400.0, 500.0) < 1e-6);
    }

    #[test]
    fn fixtures_are_deterministic() {
        let f = UpsweepFixture { duration_s: 60.0, n_calls: 3, ..Default::default() };
        let a = f.build();
        let b = f.build();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.injections.len(), 3);
        let p = PulseTrainFixture { duration_s: 240.0, n_trains: 2, ..Default::default() };
        let s = p.build();
        assert_eq!(s.trains.len(), 2);
        assert_eq!(s.clutter_slots.len(), 2);
        let e = EventSetFixture { n_events: 50, ..Default::default() }.build();
        assert_eq!(e.events.len(), 50);
        assert_eq!(e.truth, EventSetFixture { n_events: 50, ..Default::default() }.build().truth);
    }
}
