//! Region descriptors: grid occupancy masks and histograms of oriented gradients.

use super::regions::{Region, RegionError};
use crate::dsp::Spectrogram;

pub const PATCH: usize = 32;
pub const HOG_CELL: usize = 8;
pub const HOG_BINS: usize = 9;
pub const HOG_LEN: usize = (PATCH / HOG_CELL) * (PATCH / HOG_CELL) * HOG_BINS;
const HOG_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeatureError {
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("patch must have {expected} values, got {got}")]
    PatchSize { expected: usize, got: usize },
    #[error("patch contains non-finite values")]
    NonFinite,
}

/// Occupancy of each cell when the box `[frame0, frame0+width) x [bin0, bin0+height)`
/// is split into `gt x gf` cells. Output is time-major: index `ct * gf + cf`.
/// Cells that receive no pixels (boxes narrower than the grid) are 0.
pub fn grid_mask_in(
    pixels: &[(usize, usize)],
    frame0: usize,
    width: usize,
    bin0: usize,
    height: usize,
    grid: (usize, usize),
) -> Result<Vec<f64>, FeatureError> {
    if pixels.is_empty() || width == 0 || height == 0 {
        return Err(RegionError::EmptyRegion.into());
    }
    let (gt, gf) = grid;
    let cell_t = |dt: usize| dt * gt / width;
    let cell_f = |df: usize| df * gf / height;
    let mut per_t = vec![0usize; gt];
    for dt in 0..width {
        per_t[cell_t(dt)] += 1;
    }
    let mut per_f = vec![0usize; gf];
    for df in 0..height {
        per_f[cell_f(df)] += 1;
    }
    let mut occupied = vec![0usize; gt * gf];
    for &(t, k) in pixels {
        let (dt, df) = (t - frame0, k - bin0);
        if dt < width && df < height {
            occupied[cell_t(dt) * gf + cell_f(df)] += 1;
        }
    }
    Ok((0..gt * gf)
        .map(|i| {
            let cells = per_t[i / gf] * per_f[i % gf];
            if cells == 0 { 0.0 } else { occupied[i] as f64 / cells as f64 }
        })
        .collect())
}

/// Grid occupancy over the region's own bounding box.
pub fn grid_mask(region: &Region, grid: (usize, usize)) -> Result<Vec<f64>, FeatureError> {
    grid_mask_in(
        &region.pixels,
        region.frame_lo,
        region.frames(),
        region.bin_lo,
        region.bins(),
        grid,
    )
}

/// Bilinearly resample the region's bounding box of `spec` to a `PATCH x PATCH`
/// matrix. Row 0 is the lowest frequency; columns run forward in time.
pub fn resample_patch(spec: &Spectrogram, region: &Region) -> Vec<f64> {
    let sample = |lo: usize, n: usize, i: usize| -> f64 {
        if n <= 1 {
            lo as f64
        } else {
            lo as f64 + i as f64 * (n - 1) as f64 / (PATCH - 1) as f64
        }
    };
    let mut out = vec![0.0; PATCH * PATCH];
    for r in 0..PATCH {
        let y = sample(region.bin_lo, region.bins(), r);
        let (y0, fy) = (y.floor() as usize, y - y.floor());
        let y1 = (y0 + 1).min(region.bin_hi);
        for c in 0..PATCH {
            let x = sample(region.frame_lo, region.frames(), c);
            let (x0, fx) = (x.floor() as usize, x - x.floor());
            let x1 = (x0 + 1).min(region.frame_hi);
            let v00 = spec.at(x0, y0);
            let v01 = spec.at(x1, y0);
            let v10 = spec.at(x0, y1);
            let v11 = spec.at(x1, y1);
            out[r * PATCH + c] =
                (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
        }
    }
    out
}

/// 4x4 cells of 8x8 pixels, 9 unsigned orientation bins centered at 0, 20, ..., 160
/// degrees with linear vote splitting, each cell L2-normalized.
pub fn hog_features(patch: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if patch.len() != PATCH * PATCH {
        return Err(FeatureError::PatchSize { expected: PATCH * PATCH, got: patch.len() });
    }
    if patch.iter().any(|v| !v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }
    let at = |r: usize, c: usize| patch[r * PATCH + c];
    let cells = PATCH / HOG_CELL;
    let mut hist = vec![0.0; HOG_LEN];
    for r in 0..PATCH {
        for c in 0..PATCH {
            let gx = at(r, (c + 1).min(PATCH - 1)) - at(r, c.saturating_sub(1));
            let gy = at((r + 1).min(PATCH - 1), c) - at(r.saturating_sub(1), c);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx).to_degrees();
            if theta < 0.0 {
                theta += 180.0;
            }
            if theta >= 180.0 {
                theta -= 180.0;
            }
            let pos = theta / (180.0 / HOG_BINS as f64);
            let lo = pos.floor() as usize % HOG_BINS;
            let hi = (lo + 1) % HOG_BINS;
            let frac = pos - pos.floor();
            let base = ((r / HOG_CELL) * cells + c / HOG_CELL) * HOG_BINS;
            hist[base + lo] += mag * (1.0 - frac);
            hist[base + hi] += mag * frac;
        }
    }
    for cell in hist.chunks_mut(HOG_BINS) {
        let norm = (cell.iter().map(|v| v * v).sum::<f64>() + HOG_EPS * HOG_EPS).sqrt();
        cell.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_region_is_all_ones() {
        let px: Vec<_> = (0..20).flat_map(|t| (0..24).map(move |k| (t + 3, k + 7))).collect();
        let r = Region::from_pixels(px).unwrap();
        let g = grid_mask(&r, (16, 16)).unwrap();
        assert_eq!(g.len(), 256);
        assert!(g.iter().all(|&v| v == 1.0), "{g:?}");
    }

    #[test]
    fn left_half_counted_directly() {
        // 32 frames x 16 bins box, region fills frames 0..16 only.
        let px: Vec<_> = (0..16).flat_map(|t| (0..16).map(move |k| (t, k))).collect();
        let g = grid_mask_in(&px, 0, 32, 0, 16, (16, 16)).unwrap();
        for ct in 0..16 {
            for cf in 0..16 {
                let want = if ct < 8 { 1.0 } else { 0.0 };
                assert_eq!(g[ct * 16 + cf], want);
            }
        }
    }

    #[test]
    fn single_pixel_region() {
        let r = Region::from_pixels(vec![(5, 5)]).unwrap();
        let g = grid_mask(&r, (16, 16)).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(g.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn empty_region_errors() {
        assert!(grid_mask_in(&[], 0, 1, 0, 1, (16, 16)).is_err());
    }

    #[test]
    fn constant_patch_gives_zero_hog() {
        let h = hog_features(&vec![4.2; 1024]).unwrap();
        assert_eq!(h.len(), 144);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_votes_zero_degree_bin() {
        // Columns 0..16 dark, 16..32 bright: gradient points along +x (0 degrees).
        let patch: Vec<f64> = (0..1024).map(|i| if i % 32 >= 16 { 1.0 } else { 0.0 }).collect();
        let h = hog_features(&patch).unwrap();
        let total: f64 = h.iter().sum();
        let bin0: f64 = h.chunks(9).map(|c| c[0]).sum();
        assert!(total > 0.0);
        assert!(bin0 / total >= 0.9, "bin0 share {}", bin0 / total);
        // Only the two cell columns adjacent to the step see gradient.
        for (i, cell) in h.chunks(9).enumerate() {
            let cc = i % 4;
            let has = cell.iter().any(|&v| v > 0.0);
            assert_eq!(has, cc == 1 || cc == 2, "cell {i}");
        }
    }

    #[test]
    fn hog_rejects_bad_patches() {
        assert_eq!(hog_features(&[0.0; 10]), Err(FeatureError::PatchSize { expected: 1024, got: 10 }));
        let mut p = vec![0.0; 1024];
        p[5] = f64::NAN;
        assert_eq!(hog_features(&p), Err(FeatureError::NonFinite));
    }

    proptest! {
        #[test]
        fn hog_length_and_unit_cells(vals in prop::collection::vec(-40.0f64..40.0, 1024)) {
            let h = hog_features(&vals).unwrap();
            prop_assert_eq!(h.len(), 144);
            for cell in h.chunks(9) {
                let n: f64 = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!(n <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn grid_values_are_fractions(pix in prop::collection::btree_set((0usize..40, 0usize..30), 1..200)) {
            let r = Region::from_pixels(pix.into_iter().collect()).unwrap();
            let g = grid_mask(&r, (16, 16)).unwrap();
            prop_assert!(g.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(g.iter().any(|&v| v > 0.0));
        }
    }
}
