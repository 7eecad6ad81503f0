//! Percentile binarization and 8-connected region labeling.

use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegionError {
    #[error("cannot binarize an empty spectrogram")]
    Empty,
    #[error("percentile {0} outside (0, 100]")]
    Percentile(f64),
    #[error("region has no pixels")]
    EmptyRegion,
}

/// Boolean `[frames x bins]` mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub n_frames: usize,
    pub n_bins: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(n_frames: usize, n_bins: usize) -> Self {
        Self { n_frames, n_bins, bits: vec![false; n_frames * n_bins] }
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> bool {
        self.bits[frame * self.n_bins + bin]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, bin: usize, v: bool) {
        self.bits[frame * self.n_bins + bin] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)` of the sorted data.
pub fn percentile_value(values: &[f64], percentile: f64) -> Result<f64, RegionError> {
    if values.is_empty() {
        return Err(RegionError::Empty);
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(RegionError::Percentile(percentile));
    }
    let n = values.len();
    let rank = ((percentile / 100.0) * n as f64).ceil().clamp(1.0, n as f64) as usize;
    let mut v = values.to_vec();
    let (_, nth, _) = v.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*nth)
}

/// Pixels strictly above the given percentile of the whole spectrogram.
pub fn binarize(spec: &Spectrogram, percentile: f64) -> Result<Mask, RegionError> {
    if spec.is_empty() {
        return Err(RegionError::Empty);
    }
    let thr = percentile_value(&spec.values, percentile)?;
    Ok(Mask {
        n_frames: spec.n_frames,
        n_bins: spec.n_bins,
        bits: spec.values.iter().map(|&v| v > thr).collect(),
    })
}

/// An 8-connected set of mask pixels with its tight pixel bounding box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    /// `(frame, bin)` pairs in row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub frame_lo: usize,
    pub frame_hi: usize,
    pub bin_lo: usize,
    pub bin_hi: usize,
}

/// Region bounds in seconds (relative to the spectrogram start) and Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionBounds {
    pub t0_s: f64,
    pub t1_s: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Region {
    pub fn from_pixels(mut pixels: Vec<(usize, usize)>) -> Result<Self, RegionError> {
        if pixels.is_empty() {
            return Err(RegionError::EmptyRegion);
        }
        pixels.sort_unstable();
        let frame_lo = pixels.iter().map(|p| p.0).min().unwrap_or(0);
        let frame_hi = pixels.iter().map(|p| p.0).max().unwrap_or(0);
        let bin_lo = pixels.iter().map(|p| p.1).min().unwrap_or(0);
        let bin_hi = pixels.iter().map(|p| p.1).max().unwrap_or(0);
        Ok(Self { pixels, frame_lo, frame_hi, bin_lo, bin_hi })
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn frames(&self) -> usize {
        self.frame_hi - self.frame_lo + 1
    }

    pub fn bins(&self) -> usize {
        self.bin_hi - self.bin_lo + 1
    }

    /// Each pixel spans one hop in time and one bin width in frequency,
    /// centered on its frame center and bin frequency.
    pub fn bounds(&self, spec: &Spectrogram) -> RegionBounds {
        let half_t = spec.frame_period_s / 2.0;
        let half_f = spec.bin_hz / 2.0;
        RegionBounds {
            t0_s: spec.frame_center_s(self.frame_lo) - half_t,
            t1_s: spec.frame_center_s(self.frame_hi) + half_t,
            f_lo: spec.bin_freq(self.bin_lo) - half_f,
            f_hi: spec.bin_freq(self.bin_hi) + half_f,
        }
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Two-pass union-find labeling with 8-connectivity. Regions with fewer than
/// `min_area` pixels are dropped; the rest are sorted by (first frame, lowest bin).
pub fn connected_regions(mask: &Mask, min_area: usize) -> Vec<Region> {
    let (nt, nb) = (mask.n_frames, mask.n_bins);
    let mut parent: Vec<usize> = (0..nt * nb).collect();
    for t in 0..nt {
        for k in 0..nb {
            if !mask.get(t, k) {
                continue;
            }
            let here = t * nb + k;
            if k > 0 && mask.get(t, k - 1) {
                union(&mut parent, here, here - 1);
            }
            if t > 0 {
                let lo = k.saturating_sub(1);
                let hi = (k + 1).min(nb - 1);
                for kk in lo..=hi {
                    if mask.get(t - 1, kk) {
                        union(&mut parent, here, (t - 1) * nb + kk);
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for t in 0..nt {
        for k in 0..nb {
            if mask.get(t, k) {
                let r = find(&mut parent, t * nb + k);
                groups.entry(r).or_default().push((t, k));
            }
        }
    }
    let mut regions: Vec<Region> = groups
        .into_values()
        .filter(|p| p.len() >= min_area.max(1))
        .map(|p| Region::from_pixels(p).expect("non-empty group"))
        .collect();
    regions.sort_by(|a, b| (a.frame_lo, a.bin_lo, &a.pixels).cmp(&(b.frame_lo, b.bin_lo, &b.pixels)));
    regions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::SpectrogramParams;
    use crate::time::Timestamp;

    fn spec_from(values: Vec<f64>, nt: usize, nb: usize) -> Spectrogram {
        Spectrogram {
            params: SpectrogramParams::default(),
            sample_rate_hz: 2000,
            start_time: Timestamp::default(),
            frame_period_s: 0.064,
            bin_hz: 3.90625,
            bin_offset: 0,
            n_frames: nt,
            n_bins: nb,
            values,
        }
    }

    #[test]
    fn constant_spectrogram_binarizes_empty() {
        let s = spec_from(vec![3.0; 50], 10, 5);
        for p in [0.001, 50.0, 99.0, 100.0] {
            assert_eq!(binarize(&s, p).unwrap().count(), 0);
        }
    }

    #[test]
    fn one_hot_pixel_at_p99() {
        let mut v = vec![0.0; 100];
        v[37] = 10.0;
        let m = binarize(&spec_from(v, 10, 10), 99.0).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.get(3, 7));
    }

    #[test]
    fn tiny_percentile_keeps_all_above_minimum() {
        let v: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let m = binarize(&spec_from(v.clone(), 6, 5), 1e-9).unwrap();
        let expected = v.iter().filter(|&&x| x > 0.0).count();
        assert_eq!(m.count(), expected);
    }

    #[test]
    fn binarize_errors() {
        assert_eq!(binarize(&spec_from(vec![], 0, 0), 50.0), Err(RegionError::Empty));
        assert_eq!(binarize(&spec_from(vec![1.0], 1, 1), 0.0), Err(RegionError::Percentile(0.0)));
        assert_eq!(binarize(&spec_from(vec![1.0], 1, 1), 100.5), Err(RegionError::Percentile(100.5)));
    }

    #[test]
    fn diagonal_neighbours_join() {
        let mut m = Mask::new(4, 4);
        m.set(1, 1, true);
        m.set(2, 2, true);
        let r = connected_regions(&m, 1);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area(), 2);
        assert_eq!((r[0].frame_lo, r[0].frame_hi, r[0].bin_lo, r[0].bin_hi), (1, 2, 1, 2));
    }

    #[test]
    fn empty_mask_no_regions() {
        assert!(connected_regions(&Mask::new(5, 5), 1).is_empty());
    }

    #[test]
    fn min_area_and_ordering() {
        let mut m = Mask::new(10, 10);
        m.set(5, 1, true);
        for k in 6..9 {
            m.set(2, k, true);
        }
        for k in 0..3 {
            m.set(2, k, true);
        }
        let r = connected_regions(&m, 2);
        assert_eq!(r.len(), 2);
        assert_eq!((r[0].frame_lo, r[0].bin_lo), (2, 0));
        assert_eq!((r[1].frame_lo, r[1].bin_lo), (2, 6));
    }

    #[test]
    fn bounds_in_physical_units() {
        let s = spec_from(vec![0.0; 100], 10, 10);
        let r = Region::from_pixels(vec![(2, 3), (4, 5)]).unwrap();
        let b = r.bounds(&s);
        assert!((b.t1_s - b.t0_s - 3.0 * 0.064).abs() < 1e-12);
        assert!((b.f_hi - b.f_lo - 3.0 * 3.90625).abs() < 1e-12);
        assert!(Region::from_pixels(vec![]).is_err());
    }
}
