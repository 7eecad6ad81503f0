//! Sound archive indexing and gap-aware segment reads.
//!
//! An archive is a directory tree of WAV files. Each file's start time comes
//! from its name (`<prefix>_YYYYMMDD_HHMMSS.wav` by default) or from a
//! `manifest.json` at the archive root. The index records, per channel, the
//! disjoint intervals that are covered by audio; reads that touch an
//! uncovered sub-interval fail with [`ArchiveError::Gap`].

pub mod wav;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use regex::Regex;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::time::{Interval, Timestamp, MICROS_PER_SECOND};
pub use wav::SampleFormat;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("archive root {path} is not a readable directory: {reason}")]
    RootUnreadable { path: PathBuf, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("invalid naming pattern: {0}")]
    Pattern(#[from] regex::Error),
    #[error("channel {channel} has no coverage in archive '{archive_id}'")]
    ChannelOutOfRange { archive_id: String, channel: u16 },
    #[error("zero-length or inverted request [{t0}, {t1})")]
    EmptyRequest { t0: Timestamp, t1: Timestamp },
    #[error("channel {channel}: no audio for {missing}")]
    Gap { channel: u16, missing: Interval },
    #[error("channel {channel}: request spans files with sample rates {a} and {b} Hz")]
    SampleRateMismatch { channel: u16, a: u32, b: u32 },
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: wav::WavError,
    },
}

/// How archive file names map to start times.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamingConfig {
    /// Files with this extension (case-insensitive) are candidates.
    pub extension: String,
    /// Must contain a capture group named `ts`.
    pub timestamp_regex: String,
    /// chrono format applied to the `ts` capture; interpreted as UTC.
    pub timestamp_format: String,
}

impl Default for NamingConfig {
    fn default() -> Self {
        Self {
            extension: "wav".into(),
            timestamp_regex: r"^.+_(?P<ts>\d{8}_\d{6})\.[wW][aA][vV]$".into(),
            timestamp_format: "%Y%m%d_%H%M%S".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveFile {
    /// Relative to the archive root.
    pub path: PathBuf,
    pub channel_count: u16,
    pub sample_rate_hz: u32,
    pub start_time: Timestamp,
    pub frame_count: u64,
    pub format: SampleFormat,
}

impl ArchiveFile {
    pub fn duration_seconds(&self) -> f64 {
        self.frame_count as f64 / self.sample_rate_hz as f64
    }

    /// End of the file, rounded to the nearest microsecond.
    pub fn end_time(&self) -> Timestamp {
        let us = round_half_down(
            self.frame_count as i128 * MICROS_PER_SECOND as i128,
            self.sample_rate_hz as i128,
        );
        self.start_time + us
    }

    pub fn interval(&self) -> Interval {
        Interval::new(self.start_time, self.end_time())
    }

    fn half_sample_micros(&self) -> i64 {
        MICROS_PER_SECOND / (2 * self.sample_rate_hz as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub path: PathBuf,
    /// One of `timestamp`, `header`, `format`, `manifest`.
    pub reason: String,
    pub detail: String,
}

/// A file whose span overlaps an already-indexed file on a shared channel.
/// The later file (by start time, then path) is kept out of coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub path: PathBuf,
    pub overlaps: PathBuf,
    pub channel: u16,
    pub overlap: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelCoverage {
    pub channel: u16,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveIndex {
    pub archive_id: String,
    pub root: PathBuf,
    /// Sorted by (start_time, path).
    pub files: Vec<ArchiveFile>,
    pub coverage: Vec<ChannelCoverage>,
    pub total_channel_hours: f64,
    pub rejects: Vec<Reject>,
    pub conflicts: Vec<Conflict>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AudioClip {
    pub channel: u16,
    pub sample_rate_hz: u32,
    pub start_time: Timestamp,
    pub samples: Vec<f32>,
}

impl AudioClip {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn end_time(&self) -> Timestamp {
        self.start_time.add_seconds(self.duration_seconds())
    }
}

#[derive(Debug, Deserialize)]
struct ManifestEntry {
    path: PathBuf,
    start_time: Timestamp,
    sample_rate_hz: u32,
    channels: u16,
}

/// `num / den` rounded to the nearest integer, ties toward negative infinity.
fn round_half_down(num: i128, den: i128) -> i64 {
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    (if 2 * r > den { q + 1 } else { q }) as i64
}

fn read_manifest(root: &Path) -> Result<HashMap<PathBuf, ManifestEntry>, ArchiveError> {
    let path = root.join(MANIFEST_FILE);
    if !path.is_file() {
        return Ok(HashMap::new());
    }
    let err = |reason: String| ArchiveError::Manifest { path: path.clone(), reason };
    let text = fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
    Ok(entries.into_iter().map(|e| (e.path.clone(), e)).collect())
}

/// Build the index for every candidate file under `root`.
pub fn index_archive(root: &Path, naming: &NamingConfig) -> Result<ArchiveIndex, ArchiveError> {
    let meta = fs::metadata(root).map_err(|e| ArchiveError::RootUnreadable {
        path: root.to_path_buf(),
        reason: e.to_string(),
    })?;
    if !meta.is_dir() {
        return Err(ArchiveError::RootUnreadable {
            path: root.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    fs::read_dir(root).map_err(|e| ArchiveError::RootUnreadable {
        path: root.to_path_buf(),
        reason: e.to_string(),
    })?;

    let ts_re = Regex::new(&naming.timestamp_regex)?;
    let manifest = read_manifest(root)?;
    let ext = naming.extension.to_ascii_lowercase();

    let mut files = Vec::new();
    let mut rejects = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e.path().map(Path::to_path_buf).unwrap_or_default();
                rejects.push(Reject { path, reason: "header".into(), detail: e.to_string() });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path()).to_path_buf();
        let is_candidate = rel
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase() == ext)
            .unwrap_or(false);
        if !is_candidate {
            continue;
        }
        let reject = |reason: &str, detail: String| Reject {
            path: rel.clone(),
            reason: reason.into(),
            detail,
        };

        let header = match wav::probe(entry.path()) {
            Ok(h) => h,
            Err(e @ wav::WavError::Unsupported { .. }) => {
                rejects.push(reject("format", e.to_string()));
                continue;
            }
            Err(e) => {
                rejects.push(reject("header", e.to_string()));
                continue;
            }
        };

        let start_time = if let Some(m) = manifest.get(&rel) {
            if m.sample_rate_hz != header.sample_rate_hz || m.channels != header.channels {
                rejects.push(reject(
                    "manifest",
                    format!(
                        "manifest says {} Hz x{}, header says {} Hz x{}",
                        m.sample_rate_hz, m.channels, header.sample_rate_hz, header.channels
                    ),
                ));
                continue;
            }
            m.start_time
        } else {
            let name = rel.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let parsed = ts_re
                .captures(&name)
                .and_then(|c| c.name("ts"))
                .ok_or_else(|| "no timestamp in file name".to_string())
                .and_then(|m| {
                    NaiveDateTime::parse_from_str(m.as_str(), &naming.timestamp_format)
                        .map_err(|e| format!("'{}': {e}", m.as_str()))
                });
            match parsed {
                Ok(ndt) => Timestamp::from_datetime(ndt.and_utc()),
                Err(detail) => {
                    rejects.push(reject("timestamp", detail));
                    continue;
                }
            }
        };

        files.push(ArchiveFile {
            path: rel,
            channel_count: header.channels,
            sample_rate_hz: header.sample_rate_hz,
            start_time,
            frame_count: header.frame_count,
            format: header.format,
        });
    }

    files.sort_by(|a, b| (a.start_time, &a.path).cmp(&(b.start_time, &b.path)));

    // Per channel: detect overlaps against the last accepted file, then build
    // merged coverage from the surviving files.
    let mut last_on_channel: BTreeMap<u16, usize> = BTreeMap::new();
    let mut conflicts = Vec::new();
    let mut kept = Vec::with_capacity(files.len());
    for f in files {
        let tol = f.half_sample_micros();
        let clash = (0..f.channel_count).find_map(|ch| {
            let prev: &ArchiveFile = &kept[*last_on_channel.get(&ch)?];
            (f.start_time.micros() < prev.end_time().micros() - tol).then_some((ch, prev))
        });
        if let Some((ch, prev)) = clash {
            conflicts.push(Conflict {
                path: f.path.clone(),
                overlaps: prev.path.clone(),
                channel: ch,
                overlap: Interval::new(f.start_time, prev.end_time().min(f.end_time())),
            });
            continue;
        }
        for ch in 0..f.channel_count {
            last_on_channel.insert(ch, kept.len());
        }
        kept.push(f);
    }

    let mut cov: BTreeMap<u16, Vec<Interval>> = BTreeMap::new();
    for f in &kept {
        let tol = f.half_sample_micros();
        for ch in 0..f.channel_count {
            let ivs = cov.entry(ch).or_default();
            match ivs.last_mut() {
                Some(last) if (f.start_time - last.end).abs() <= tol => last.end = f.end_time(),
                _ => ivs.push(f.interval()),
            }
        }
    }
    let coverage: Vec<ChannelCoverage> = cov
        .into_iter()
        .map(|(channel, intervals)| ChannelCoverage { channel, intervals })
        .collect();
    let total_us: i64 = coverage
        .iter()
        .flat_map(|c| c.intervals.iter())
        .map(Interval::len_micros)
        .sum();

    let archive_id = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "archive".into());

    Ok(ArchiveIndex {
        archive_id,
        root: root.to_path_buf(),
        files: kept,
        coverage,
        total_channel_hours: total_us as f64 / crate::time::MICROS_PER_HOUR as f64,
        rejects,
        conflicts,
    })
}

impl ArchiveIndex {
    pub fn channels(&self) -> Vec<u16> {
        self.coverage.iter().map(|c| c.channel).collect()
    }

    pub fn coverage_of(&self, channel: u16) -> &[Interval] {
        self.coverage
            .iter()
            .find(|c| c.channel == channel)
            .map(|c| c.intervals.as_slice())
            .unwrap_or(&[])
    }

    /// Sample rate of the file covering `t` on `channel`, if any.
    pub fn sample_rate_at(&self, channel: u16, t: Timestamp) -> Option<u32> {
        self.files_on(channel)
            .find(|f| f.interval().contains(t))
            .map(|f| f.sample_rate_hz)
    }

    fn files_on(&self, channel: u16) -> impl Iterator<Item = &ArchiveFile> {
        self.files.iter().filter(move |f| channel < f.channel_count)
    }

    /// First sub-interval of `[t0, t1)` not covered on `channel`.
    pub fn first_gap(&self, channel: u16, t0: Timestamp, t1: Timestamp) -> Option<Interval> {
        let mut cursor = t0;
        for iv in self.coverage_of(channel) {
            if iv.end <= cursor {
                continue;
            }
            if iv.start > cursor {
                return Some(Interval::new(cursor, iv.start.min(t1)));
            }
            cursor = iv.end;
            if cursor >= t1 {
                return None;
            }
        }
        (cursor < t1).then(|| Interval::new(cursor, t1))
    }

    /// Read `[t0, t1)` of one channel as a single clip.
    ///
    /// The clip holds `round((t1 - t0) * fs)` samples (ties toward fewer) and
    /// is stitched across contiguous files sample-accurately.
    pub fn read_segment(&self, channel: u16, t0: Timestamp, t1: Timestamp) -> Result<AudioClip, ArchiveError> {
        if t1 <= t0 {
            return Err(ArchiveError::EmptyRequest { t0, t1 });
        }
        if self.coverage_of(channel).is_empty() {
            return Err(ArchiveError::ChannelOutOfRange {
                archive_id: self.archive_id.clone(),
                channel,
            });
        }
        if let Some(missing) = self.first_gap(channel, t0, t1) {
            return Err(ArchiveError::Gap { channel, missing });
        }
        let fs = self
            .sample_rate_at(channel, t0)
            .ok_or(ArchiveError::Gap { channel, missing: Interval::new(t0, t1) })?;
        let us = MICROS_PER_SECOND as i128;
        let n = round_half_down((t1 - t0) as i128 * fs as i128, us).max(0) as usize;

        let mut samples = Vec::with_capacity(n);
        // Position of the next wanted sample, in units of microseconds * fs.
        let t0_scaled = t0.micros() as i128 * fs as i128;
        for f in self.files_on(channel) {
            if samples.len() >= n {
                break;
            }
            if f.end_time() <= t0 {
                continue;
            }
            let want = t0_scaled + samples.len() as i128 * us;
            let offset = round_half_down(want - f.start_time.micros() as i128 * fs as i128, us);
            if offset >= f.frame_count as i64 {
                continue;
            }
            if offset < -1 {
                return Err(ArchiveError::Gap {
                    channel,
                    missing: Interval::new(t0, f.start_time),
                });
            }
            if f.sample_rate_hz != fs {
                return Err(ArchiveError::SampleRateMismatch { channel, a: fs, b: f.sample_rate_hz });
            }
            let offset = offset.max(0) as u64;
            let take = ((f.frame_count - offset) as usize).min(n - samples.len());
            let path = self.root.join(&f.path);
            let chunk = wav::read_channel(&path, channel, offset, take)
                .map_err(|source| ArchiveError::Wav { path, source })?;
            samples.extend_from_slice(&chunk);
        }
        if samples.len() < n {
            let covered_to = t0.add_seconds(samples.len() as f64 / fs as f64);
            return Err(ArchiveError::Gap { channel, missing: Interval::new(covered_to, t1) });
        }
        Ok(AudioClip { channel, sample_rate_hz: fs, start_time: t0, samples })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn sine(n: usize, fs: u32, f: f64) -> Vec<f32> {
        // Quantized to the 16-bit grid so WAV round trips are exact.
        (0..n)
            .map(|i| {
                let x = 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / fs as f64).sin();
                ((x * 32768.0).round() / 32768.0) as f32
            })
            .collect()
    }

    #[test]
    fn empty_directory_indexes_to_nothing() {
        let dir = TempDir::new().unwrap();
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        assert!(idx.files.is_empty());
        assert_eq!(idx.total_channel_hours, 0.0);
    }

    #[test]
    fn missing_root_is_fatal() {
        let err = index_archive(Path::new("/definitely/not/here"), &NamingConfig::default());
        assert!(matches!(err, Err(ArchiveError::RootUnreadable { .. })));
    }

    #[test]
    fn three_two_channel_hours() {
        let dir = TempDir::new().unwrap();
        let fs = 100;
        let z = vec![0.0f32; 3600 * fs as usize];
        for h in 0..3 {
            let p = dir.path().join(format!("site_20130105_{:02}0000.wav", h));
            wav::write_wav(&p, fs, SampleFormat::Int16, &[&z, &z]).unwrap();
        }
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        assert_eq!(idx.files.len(), 3);
        assert_eq!(idx.total_channel_hours, 6.0);
        assert_eq!(idx.coverage_of(0).len(), 1, "contiguous files merge");
    }

    #[test]
    fn unparseable_name_is_rejected_with_reason() {
        let dir = TempDir::new().unwrap();
        let z = vec![0.0f32; 10];
        wav::write_wav(&dir.path().join("nodate.wav"), 100, SampleFormat::Int16, &[&z]).unwrap();
        wav::write_wav(&dir.path().join("x_20131399_000000.wav"), 100, SampleFormat::Int16, &[&z]).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        assert!(idx.files.is_empty());
        assert_eq!(idx.rejects.len(), 2);
        assert!(idx.rejects.iter().all(|r| r.reason == "timestamp"));
    }

    #[test]
    fn unsupported_and_corrupt_files_are_rejected() {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("a_20130101_000000.wav"), b"RIFFjunk").unwrap();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 100,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(dir.path().join("b_20130101_010000.wav"), spec).unwrap();
        w.write_sample(1i8).unwrap();
        w.finalize().unwrap();
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        let reasons: Vec<_> = idx.rejects.iter().map(|r| r.reason.as_str()).collect();
        assert_eq!(reasons, vec!["header", "format"]);
    }

    #[test]
    fn manifest_overrides_name() {
        let dir = TempDir::new().unwrap();
        let z = vec![0.0f32; 200];
        wav::write_wav(&dir.path().join("rec1.wav"), 100, SampleFormat::Float32, &[&z]).unwrap();
        std::fs::write(
            dir.path().join(MANIFEST_FILE),
            r#"[{"path":"rec1.wav","start_time":"2014-03-01T12:00:00Z","sample_rate_hz":100,"channels":1}]"#,
        )
        .unwrap();
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        assert_eq!(idx.files.len(), 1);
        assert_eq!(idx.files[0].start_time, Timestamp::from_ymd_hms(2014, 3, 1, 12, 0, 0));
    }

    #[test]
    fn overlapping_files_become_conflicts() {
        let dir = TempDir::new().unwrap();
        let z = vec![0.0f32; 100 * 120];
        wav::write_wav(&dir.path().join("a_20130101_000000.wav"), 100, SampleFormat::Int16, &[&z]).unwrap();
        wav::write_wav(&dir.path().join("a_20130101_000100.wav"), 100, SampleFormat::Int16, &[&z]).unwrap();
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        assert_eq!(idx.files.len(), 1);
        assert_eq!(idx.conflicts.len(), 1);
        assert_eq!(idx.conflicts[0].overlap.len_micros(), 60 * MICROS_PER_SECOND);
        assert!((idx.total_channel_hours - 120.0 / 3600.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_read_matches_unsplit_signal() {
        let dir = TempDir::new().unwrap();
        let fs = 2000;
        let full = sine(2 * 60 * fs as usize, fs, 137.0);
        let (a, b) = full.split_at(60 * fs as usize);
        wav::write_wav(&dir.path().join("s_20130101_000000.wav"), fs, SampleFormat::Int16, &[a]).unwrap();
        wav::write_wav(&dir.path().join("s_20130101_000100.wav"), fs, SampleFormat::Int16, &[b]).unwrap();
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        let origin = Timestamp::from_ymd_hms(2013, 1, 1, 0, 0, 0);
        let t0 = origin.add_seconds(55.25);
        let t1 = origin.add_seconds(64.5);
        let clip = idx.read_segment(0, t0, t1).unwrap();
        assert_eq!(clip.len(), (9.25 * fs as f64) as usize);
        let start = (55.25 * fs as f64) as usize;
        assert_eq!(&clip.samples[..], &full[start..start + clip.len()]);
    }

    #[test]
    fn gap_and_degenerate_requests() {
        let dir = TempDir::new().unwrap();
        let z = vec![0.0f32; 100 * 60];
        wav::write_wav(&dir.path().join("s_20130101_000000.wav"), 100, SampleFormat::Int16, &[&z]).unwrap();
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        let origin = Timestamp::from_ymd_hms(2013, 1, 1, 0, 0, 0);
        match idx.read_segment(0, origin.add_seconds(50.0), origin.add_seconds(70.0)) {
            Err(ArchiveError::Gap { missing, .. }) => {
                assert_eq!(missing, Interval::new(origin.add_seconds(60.0), origin.add_seconds(70.0)));
            }
            other => panic!("expected gap, got {other:?}"),
        }
        assert!(matches!(
            idx.read_segment(0, origin, origin),
            Err(ArchiveError::EmptyRequest { .. })
        ));
        assert!(matches!(
            idx.read_segment(3, origin, origin.add_seconds(1.0)),
            Err(ArchiveError::ChannelOutOfRange { .. })
        ));
    }

    #[test]
    fn sub_sample_request_rounds_to_nearest() {
        let dir = TempDir::new().unwrap();
        let z: Vec<f32> = (0..1000).map(|i| i as f32 / 32768.0).collect();
        wav::write_wav(&dir.path().join("s_20130101_000000.wav"), 1000, SampleFormat::Int16, &[&z]).unwrap();
        let idx = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        let origin = Timestamp::from_ymd_hms(2013, 1, 1, 0, 0, 0);
        // 0.5 ms into the file: a tie between samples 0 and 1, resolved to 0.
        let clip = idx.read_segment(0, origin + 500, origin + 10_500).unwrap();
        assert_eq!(clip.len(), 10);
        assert_eq!(clip.samples[0], 0.0);
        let clip = idx.read_segment(0, origin + 600, origin + 10_000).unwrap();
        assert_eq!(clip.samples[0], 1.0 / 32768.0);
    }

    #[test]
    fn reindex_is_identical_and_serializes() {
        let dir = TempDir::new().unwrap();
        let z = vec![0.25f32; 500];
        for name in ["b_20130101_000010.wav", "a_20130101_000000.wav"] {
            wav::write_wav(&dir.path().join(name), 100, SampleFormat::Int24, &[&z]).unwrap();
        }
        let a = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        let b = index_archive(dir.path(), &NamingConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ArchiveIndex::from_json(&a.to_json()).unwrap(), a);
    }
}
