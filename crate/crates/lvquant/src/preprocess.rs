//! ROI cropping, resizing to the 80×80 network grid, per-sequence intensity
//! standardization, the 75×75 augmentation crop, and target normalization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::contours::Point;
use crate::phantom::{CardiacSequence, IndexLabels};
use crate::tensor::ShapeError;

/// Side of the resized input grid the network trains against.
pub const PREPROC_SIZE: usize = 80;
/// Side of the augmentation crop actually fed to the CNN.
pub const CROP_SIZE: usize = 75;
/// Largest top-left crop offset (inclusive); offsets run over a 6×6 grid.
pub const MAX_CROP_OFFSET: usize = PREPROC_SIZE - CROP_SIZE;

fn bilinear(raw: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    // Edge replication via index clamping.
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (xc - x0 as f64) as f32;
    let fy = (yc - y0 as f64) as f32;
    let top = raw[y0 * w + x0] * (1.0 - fx) + raw[y0 * w + x1] * fx;
    let bot = raw[y1 * w + x0] * (1.0 - fx) + raw[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Crop a square ROI of side `roi_size` (source pixels) centered at
/// `roi_center` and resize it to 80×80. Returns the resized frame, the
/// effective mm/pixel, and whether edge-replication padding was needed.
///
/// A full-frame ROI on an 80×80 input is an exact identity.
pub fn preprocess_frame(
    raw: &[f32],
    height: usize,
    width: usize,
    roi_center: (f64, f64),
    roi_size: f64,
    spacing: f64,
) -> Result<(Vec<f32>, f64, bool), ShapeError> {
    if raw.len() != height * width || height == 0 || width == 0 {
        return Err(ShapeError::new(format!(
            "raw frame is {} samples, expected {}x{}",
            raw.len(),
            height,
            width
        )));
    }
    if roi_size <= 0.0 {
        return Err(ShapeError::new(format!("roi_size {} must be positive", roi_size)));
    }
    let half = roi_size / 2.0;
    let padded = roi_center.0 - half < -0.5
        || roi_center.1 - half < -0.5
        || roi_center.0 + half > width as f64 - 0.5
        || roi_center.1 + half > height as f64 - 0.5;
    let step = roi_size / PREPROC_SIZE as f64;
    let mut out = vec![0f32; PREPROC_SIZE * PREPROC_SIZE];
    // (d + 0.5)*step maps each destination pixel center into the ROI, whose
    // low edge is half a pixel below the first source pixel center; a
    // same-size full-frame ROI reproduces the input exactly.
    for dy in 0..PREPROC_SIZE {
        let sy = roi_center.1 - half + (dy as f64 + 0.5) * step;
        for dx in 0..PREPROC_SIZE {
            let sx = roi_center.0 - half + (dx as f64 + 0.5) * step;
            out[dy * PREPROC_SIZE + dx] = bilinear(raw, height, width, sx, sy);
        }
    }
    Ok((out, spacing * roi_size / PREPROC_SIZE as f64, padded))
}

/// Map a source-pixel point into the resized 80×80 coordinate frame of
/// `preprocess_frame` with the same ROI. Lets contours ride along with the
/// image so labels can be recomputed after resampling.
pub fn map_point_to_roi(p: Point, roi_center: (f64, f64), roi_size: f64) -> Point {
    let half = roi_size / 2.0;
    let step = roi_size / PREPROC_SIZE as f64;
    (
        (p.0 - (roi_center.0 - half)) / step - 0.5,
        (p.1 - (roi_center.1 - half)) / step - 0.5,
    )
}

#[derive(Debug, Clone)]
pub struct ProcessedSequence {
    pub subject_id: String,
    /// F standardized frames on the 80×80 grid.
    pub frames: Vec<Vec<f32>>,
    /// Effective mm/pixel after the ROI resize.
    pub spacing: f64,
    pub labels: Vec<IndexLabels>,
    /// True when any frame needed edge-replication padding.
    pub padded: bool,
}

/// Zero-mean / unit-variance over all frames jointly (population variance).
pub fn standardize_frames(frames: &mut [Vec<f32>]) {
    let n: usize = frames.iter().map(|f| f.len()).sum();
    if n == 0 {
        return;
    }
    let mean = frames.iter().flatten().map(|&v| v as f64).sum::<f64>() / n as f64;
    let var = frames
        .iter()
        .flatten()
        .map(|&v| (v as f64 - mean) * (v as f64 - mean))
        .sum::<f64>()
        / n as f64;
    let inv = 1.0 / var.sqrt().max(1e-6);
    for f in frames.iter_mut() {
        for v in f.iter_mut() {
            *v = ((*v as f64 - mean) * inv) as f32;
        }
    }
}

/// ROI-crop, resize, and standardize a whole sequence. `roi` of `None` takes
/// the full frame (identity geometry for 80×80 inputs). Labels stay in mm and
/// ride through untouched.
pub fn preprocess_sequence(
    seq: &CardiacSequence,
    roi: Option<((f64, f64), f64)>,
) -> Result<ProcessedSequence, ShapeError> {
    let (center, size) = roi.unwrap_or_else(|| {
        (
            ((seq.width as f64 - 1.0) / 2.0, (seq.height as f64 - 1.0) / 2.0),
            seq.width.max(seq.height) as f64,
        )
    });
    let mut frames = Vec::with_capacity(seq.frames.len());
    let mut spacing = seq.pixel_spacing;
    let mut padded = false;
    for raw in &seq.frames {
        let (img, sp, pad) =
            preprocess_frame(raw, seq.height, seq.width, center, size, seq.pixel_spacing)?;
        frames.push(img);
        spacing = sp;
        padded |= pad;
    }
    standardize_frames(&mut frames);
    Ok(ProcessedSequence {
        subject_id: seq.subject_id.clone(),
        frames,
        spacing,
        labels: seq.labels.clone(),
        padded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Train,
    Eval,
}

/// Top-left offset of the 75×75 crop: uniform over the 6×6 grid in train
/// mode (deterministic in `seed`), fixed center (2,2) in eval mode.
pub fn crop_offset(mode: CropMode, seed: u64) -> (usize, usize) {
    match mode {
        CropMode::Eval => (MAX_CROP_OFFSET / 2, MAX_CROP_OFFSET / 2),
        CropMode::Train => {
            let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            (
                rng.random_range(0..=MAX_CROP_OFFSET),
                rng.random_range(0..=MAX_CROP_OFFSET),
            )
        }
    }
}

/// Extract a `crop_size²` window at `offset` from a `pre_size²` frame.
pub fn crop_window(
    image: &[f32],
    pre_size: usize,
    crop_size: usize,
    offset: (usize, usize),
) -> Result<Vec<f32>, ShapeError> {
    if image.len() != pre_size * pre_size {
        return Err(ShapeError::new(format!(
            "augmentation crop expects {0}x{0} input, got {1} samples",
            pre_size,
            image.len()
        )));
    }
    let max = pre_size - crop_size;
    if offset.0 > max || offset.1 > max {
        return Err(ShapeError::new(format!(
            "crop offset {:?} exceeds the maximum {}",
            offset, max
        )));
    }
    let mut out = Vec::with_capacity(crop_size * crop_size);
    for y in 0..crop_size {
        let row = (y + offset.1) * pre_size + offset.0;
        out.extend_from_slice(&image[row..row + crop_size]);
    }
    Ok(out)
}

/// Extract the 75×75 window at `offset` from an 80×80 frame.
pub fn crop_at(image: &[f32], offset: (usize, usize)) -> Result<Vec<f32>, ShapeError> {
    crop_window(image, PREPROC_SIZE, CROP_SIZE, offset)
}

pub fn augment_crop(image: &[f32], mode: CropMode, seed: u64) -> Result<Vec<f32>, ShapeError> {
    crop_at(image, crop_offset(mode, seed))
}

/// Per-output divisors taking mm/mm² targets to roughly unit scale: areas by
/// (80·spacing)², lengths by 80·spacing. Eval multiplies back by the same
/// factors, so the round trip is exact.
pub fn target_scales(spacing: f64) -> [f64; 11] {
    let len = PREPROC_SIZE as f64 * spacing;
    let area = len * len;
    let mut s = [len; 11];
    s[0] = area;
    s[1] = area;
    s
}

pub fn normalize_targets(labels: &IndexLabels, spacing: f64) -> [f64; 11] {
    let raw = labels.regression_vec();
    let scale = target_scales(spacing);
    std::array::from_fn(|i| raw[i] / scale[i])
}

pub fn denormalize_targets(norm: &[f64; 11], spacing: f64) -> [f64; 11] {
    let scale = target_scales(spacing);
    std::array::from_fn(|i| norm[i] * scale[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contours::{compute_areas, compute_dimensions, compute_rwt, polygon_centroid};
    use crate::phantom::{generate_phantom_sequence, PhantomParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp(h: usize, w: usize) -> Vec<f32> {
        (0..h * w)
            .map(|i| 0.5 * (i % w) as f32 + 0.25 * (i / w) as f32)
            .collect()
    }

    #[test]
    fn full_frame_roi_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let raw: Vec<f32> = (0..80 * 80).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (out, sp, padded) =
            preprocess_frame(&raw, 80, 80, (39.5, 39.5), 80.0, 1.5625).unwrap();
        assert_eq!(out, raw);
        assert_eq!(sp, 1.5625);
        assert!(!padded);
    }

    #[test]
    fn downsample_doubles_spacing_and_interpolates_linearly() {
        let raw = ramp(160, 160);
        let (out, sp, padded) =
            preprocess_frame(&raw, 160, 160, (79.5, 79.5), 160.0, 1.0).unwrap();
        assert_eq!(sp, 2.0);
        assert!(!padded);
        // Bilinear sampling of a linear field is exact away from clamped edges.
        for dy in 1..79 {
            for dx in 1..79 {
                let sx = (dx as f64 + 0.5) * 2.0 - 0.5;
                let sy = (dy as f64 + 0.5) * 2.0 - 0.5;
                let expect = (0.5 * sx + 0.25 * sy) as f32;
                let got = out[dy * 80 + dx];
                assert!((got - expect).abs() < 1e-4, "({}, {}): {} vs {}", dx, dy, got, expect);
            }
        }
    }

    #[test]
    fn out_of_bounds_roi_pads_and_flags() {
        let raw = ramp(40, 40);
        let (out, _, padded) = preprocess_frame(&raw, 40, 40, (0.0, 0.0), 60.0, 1.0).unwrap();
        assert!(padded);
        // Far corner of the ROI is outside the source: replicated edge value.
        assert_eq!(out[0], raw[0]);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn standardization_zeroes_mean_and_unit_variance() {
        let mut frames = vec![
            (0..100).map(|i| i as f32).collect::<Vec<_>>(),
            (0..100).map(|i| (i * 3) as f32).collect::<Vec<_>>(),
        ];
        standardize_frames(&mut frames);
        let n = 200.0;
        let mean: f64 = frames.iter().flatten().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 =
            frames.iter().flatten().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn labels_survive_roi_resize() {
        // Recompute the indices from contours mapped into the resized frame:
        // they must agree with the stored mm labels.
        let p = PhantomParams {
            center: (39.5, 39.5),
            inner_radius_ed: 18.0,
            inner_radius_es: 12.0,
            wall_thickness_ed: 6.0,
            wall_thickness_es: 8.0,
            ed_frame_index: 2,
            es_frame_index: 11,
            eccentricity: 0.18,
            rotation: 0.9,
            noise_sigma: 0.0,
            texture_seed: 3,
            pixel_spacing: 1.5625,
            frames_per_cycle: 20,
        };
        let seq = generate_phantom_sequence(&p, 17).unwrap();
        let roi = ((39.5, 39.5), 64.0);
        let proc = preprocess_sequence(&seq, Some(roi)).unwrap();
        assert!((proc.spacing - 1.5625 * 64.0 / 80.0).abs() < 1e-12);

        let contours = seq.contours.as_ref().unwrap();
        let lm = [
            map_point_to_roi(seq.landmarks[0], roi.0, roi.1),
            map_point_to_roi(seq.landmarks[1], roi.0, roi.1),
        ];
        for (f, (inner, outer)) in contours.iter().enumerate() {
            let inner_r: Vec<_> = inner.iter().map(|&q| map_point_to_roi(q, roi.0, roi.1)).collect();
            let outer_r: Vec<_> = outer.iter().map(|&q| map_point_to_roi(q, roi.0, roi.1)).collect();
            let (cav, myo) = compute_areas(&inner_r, &outer_r, proc.spacing).unwrap();
            let c = polygon_centroid(&inner_r).unwrap();
            let orient = (lm[0].1 - c.1).atan2(lm[0].0 - c.0);
            let dims = compute_dimensions(&inner_r, orient, proc.spacing).unwrap();
            let rwt = compute_rwt(&inner_r, &outer_r, lm, proc.spacing).unwrap();
            let lab = &seq.labels[f];
            assert!((cav - lab.cavity_area).abs() / lab.cavity_area < 0.02);
            assert!((myo - lab.myo_area).abs() / lab.myo_area < 0.02);
            for k in 0..3 {
                assert!((dims[k] - lab.dims[k]).abs() / lab.dims[k] < 0.02);
            }
            for k in 0..6 {
                assert!((rwt[k] - lab.rwt[k]).abs() / lab.rwt[k] < 0.02);
            }
        }
    }

    #[test]
    fn crops_are_deterministic_and_enumerable() {
        let img = ramp(80, 80);
        let e1 = augment_crop(&img, CropMode::Eval, 1).unwrap();
        let e2 = augment_crop(&img, CropMode::Eval, 999).unwrap();
        assert_eq!(e1, e2, "eval crop ignores the seed");
        assert_eq!(crop_offset(CropMode::Eval, 0), (2, 2));

        let t1 = augment_crop(&img, CropMode::Train, 77).unwrap();
        let t2 = augment_crop(&img, CropMode::Train, 77).unwrap();
        assert_eq!(t1, t2);

        // Every train crop is one of the 36 possible windows.
        let all: Vec<Vec<f32>> = (0..=MAX_CROP_OFFSET)
            .flat_map(|oy| {
                let img = &img;
                (0..=MAX_CROP_OFFSET).map(move |ox| crop_at(img, (ox, oy)).unwrap())
            })
            .collect();
        assert_eq!(all.len(), 36);
        let mut seen = std::collections::HashSet::new();
        for seed in 0..50u64 {
            let c = augment_crop(&img, CropMode::Train, seed).unwrap();
            let idx = all.iter().position(|w| *w == c);
            assert!(idx.is_some(), "crop for seed {} not in the window set", seed);
            seen.insert(idx.unwrap());
        }
        assert!(seen.len() > 5, "offsets should vary across seeds");
    }

    #[test]
    fn crop_content_matches_direct_indexing() {
        let img = ramp(80, 80);
        let c = crop_at(&img, (3, 5)).unwrap();
        for y in 0..CROP_SIZE {
            for x in 0..CROP_SIZE {
                assert_eq!(c[y * CROP_SIZE + x], img[(y + 5) * 80 + (x + 3)]);
            }
        }
        assert!(crop_at(&img[..100], (0, 0)).is_err());
        assert!(crop_at(&img, (6, 0)).is_err());
    }

    #[test]
    fn target_normalization_roundtrip() {
        let lab = IndexLabels {
            cavity_area: 1234.5,
            myo_area: 876.0,
            dims: [31.2, 29.9, 30.4],
            rwt: [5.0, 5.5, 6.0, 6.5, 7.0, 7.5],
            phase: 1,
        };
        let sp = 1.5625;
        let norm = normalize_targets(&lab, sp);
        assert!((norm[0] - 1234.5 / (80.0 * sp * 80.0 * sp)).abs() < 1e-12);
        assert!((norm[2] - 31.2 / (80.0 * sp)).abs() < 1e-12);
        let back = denormalize_targets(&norm, sp);
        let raw = lab.regression_vec();
        for i in 0..11 {
            assert!((back[i] - raw[i]).abs() < 1e-9, "output {}", i);
        }
    }
}
