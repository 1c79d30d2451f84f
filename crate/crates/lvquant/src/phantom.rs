//! Synthetic short-axis cardiac sequences: an elliptical-annulus myocardium
//! beating over a cycle, rendered to 80×80 intensity frames with exact
//! contours and index labels attached.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::contours::{
    compute_areas, compute_dimensions, compute_rwt, ellipse_polygon, label_phases,
    polygon_centroid, GeometryError, Point,
};
use crate::scalar::derive_seed;

pub const CANVAS: usize = 80;
const CANVAS_MARGIN: f64 = 4.0;
const CONTOUR_VERTICES: usize = 360;

const BG_INTENSITY: f64 = 0.2;
const CAVITY_INTENSITY: f64 = 0.45;
const MYO_INTENSITY: f64 = 1.0;

#[derive(Debug, Clone)]
pub enum PhantomError {
    InvalidParams(String),
    CanvasOverflow(String),
    Geometry(GeometryError),
    SamplerExhausted(String),
}

impl std::fmt::Display for PhantomError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PhantomError::InvalidParams(m) => write!(f, "invalid phantom params: {}", m),
            PhantomError::CanvasOverflow(m) => write!(f, "phantom exceeds canvas: {}", m),
            PhantomError::Geometry(e) => write!(f, "phantom geometry: {}", e),
            PhantomError::SamplerExhausted(m) => write!(f, "phantom sampler: {}", m),
        }
    }
}

impl std::error::Error for PhantomError {}

impl From<GeometryError> for PhantomError {
    fn from(e: GeometryError) -> Self {
        PhantomError::Geometry(e)
    }
}

/// Anatomy and acquisition parameters of one synthetic subject.
///
/// The cavity is an ellipse with semi-axes `r(1+ecc)` / `r(1-ecc)`; the outer
/// wall adds `wall_thickness` to both semi-axes. Radii and thicknesses
/// interpolate between their ED and ES values over the cycle with cosine
/// easing, so the geometry is smooth and periodic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomParams {
    pub center: (f64, f64),
    pub inner_radius_ed: f64,
    pub inner_radius_es: f64,
    pub wall_thickness_ed: f64,
    pub wall_thickness_es: f64,
    pub ed_frame_index: usize,
    pub es_frame_index: usize,
    pub eccentricity: f64,
    pub rotation: f64,
    pub noise_sigma: f64,
    pub texture_seed: u64,
    pub pixel_spacing: f64,
    pub frames_per_cycle: usize,
}

impl PhantomParams {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let fail = |m: String| Err(PhantomError::InvalidParams(m));
        if self.frames_per_cycle < 2 {
            return fail(format!("frames_per_cycle {} < 2", self.frames_per_cycle));
        }
        if self.pixel_spacing <= 0.0 {
            return fail(format!("pixel_spacing {} <= 0", self.pixel_spacing));
        }
        if self.inner_radius_ed <= 0.0
            || self.inner_radius_es <= 0.0
            || self.wall_thickness_ed <= 0.0
            || self.wall_thickness_es <= 0.0
        {
            return fail("radii and wall thicknesses must be strictly positive".into());
        }
        if self.inner_radius_es >= self.inner_radius_ed {
            return fail(format!(
                "inner_radius_es {} must be < inner_radius_ed {} (cavity shrinks in systole)",
                self.inner_radius_es, self.inner_radius_ed
            ));
        }
        if self.wall_thickness_es <= self.wall_thickness_ed {
            return fail(format!(
                "wall_thickness_es {} must be > wall_thickness_ed {} (wall thickens in systole)",
                self.wall_thickness_es, self.wall_thickness_ed
            ));
        }
        if self.ed_frame_index >= self.frames_per_cycle
            || self.es_frame_index >= self.frames_per_cycle
        {
            return fail(format!(
                "frame indices (ed {}, es {}) must lie in [0, {})",
                self.ed_frame_index, self.es_frame_index, self.frames_per_cycle
            ));
        }
        if self.ed_frame_index == self.es_frame_index {
            return fail("ed_frame_index equals es_frame_index".into());
        }
        if !(0.0..=0.3).contains(&self.eccentricity) {
            return fail(format!("eccentricity {} outside [0, 0.3]", self.eccentricity));
        }
        // Canvas fit with margin. The outer major semi-axis is linear in the
        // cycle position, so checking the ED/ES endpoints covers every frame.
        let bound = |r: f64, w: f64| (r * (1.0 + self.eccentricity) + w) / self.pixel_spacing;
        let reach = bound(self.inner_radius_ed, self.wall_thickness_ed)
            .max(bound(self.inner_radius_es, self.wall_thickness_es));
        let hi = (CANVAS - 1) as f64 - CANVAS_MARGIN;
        for (axis, c) in [("x", self.center.0), ("y", self.center.1)] {
            if c - reach < CANVAS_MARGIN || c + reach > hi {
                return Err(PhantomError::CanvasOverflow(format!(
                    "outer contour reach {:.2}px from {}={:.2} leaves the {}x{} canvas \
                     ({}px margin requires [{:.2}, {:.2}])",
                    reach, axis, c, CANVAS, CANVAS, CANVAS_MARGIN, CANVAS_MARGIN, hi
                )));
            }
        }
        Ok(())
    }

    /// Cycle position in [0,1]: 0 at ED, easing up to 1 at ES and back.
    pub fn cycle_alpha(&self, frame: usize) -> f64 {
        let f = self.frames_per_cycle;
        let d = (frame + f - self.ed_frame_index) % f;
        let sys_len = (self.es_frame_index + f - self.ed_frame_index) % f;
        let dia_len = f - sys_len;
        if d <= sys_len {
            let t = d as f64 / sys_len as f64;
            (1.0 - (std::f64::consts::PI * t).cos()) / 2.0
        } else {
            let t = (d - sys_len) as f64 / dia_len as f64;
            (1.0 + (std::f64::consts::PI * t).cos()) / 2.0
        }
    }

    /// Inner radius and wall thickness (mm) at a frame.
    pub fn geometry_at(&self, frame: usize) -> (f64, f64) {
        let a = self.cycle_alpha(frame);
        let r = self.inner_radius_ed + a * (self.inner_radius_es - self.inner_radius_ed);
        let w = self.wall_thickness_ed + a * (self.wall_thickness_es - self.wall_thickness_ed);
        (r, w)
    }

    fn semi_axes_px(&self, frame: usize) -> (f64, f64, f64, f64) {
        let (r, w) = self.geometry_at(frame);
        let sp = self.pixel_spacing;
        let a_in = r * (1.0 + self.eccentricity) / sp;
        let b_in = r * (1.0 - self.eccentricity) / sp;
        (a_in, b_in, a_in + w / sp, b_in + w / sp)
    }

    /// Inner and outer contours (pixel coordinates) at a frame.
    pub fn contour_at(&self, frame: usize) -> (Vec<Point>, Vec<Point>) {
        let (a_in, b_in, a_out, b_out) = self.semi_axes_px(frame);
        (
            ellipse_polygon(self.center, a_in, b_in, self.rotation, CONTOUR_VERTICES),
            ellipse_polygon(self.center, a_out, b_out, self.rotation, CONTOUR_VERTICES),
        )
    }

    /// The wall must thicken monotonically on the way to ES and thin on the
    /// way back, or myocardial area would reverse mid-phase. The derivative
    /// of (2rw + w²) in the cycle position is linear, so endpoint checks
    /// suffice.
    pub fn myo_area_monotone(&self) -> bool {
        let dr = self.inner_radius_es - self.inner_radius_ed;
        let dw = self.wall_thickness_es - self.wall_thickness_ed;
        let at = |r: f64, w: f64| dr * w + dw * (r + w);
        at(self.inner_radius_ed, self.wall_thickness_ed) > 0.0
            && at(self.inner_radius_es, self.wall_thickness_es) > 0.0
    }

    /// Landmark parameter angles on the outer contour: the anterior-septal
    /// junction and its inferior counterpart, fixed in the rotated frame.
    fn landmarks(&self) -> [Point; 2] {
        let (_, _, a_out, b_out) = self.semi_axes_px(self.ed_frame_index);
        let (cr, sr) = (self.rotation.cos(), self.rotation.sin());
        let place = |t: f64| {
            let (ex, ey) = (a_out * f64::cos(t), b_out * f64::sin(t));
            (
                self.center.0 + cr * ex - sr * ey,
                self.center.1 + sr * ex + cr * ey,
            )
        };
        [
            place(2.0 * std::f64::consts::PI / 3.0),
            place(4.0 * std::f64::consts::PI / 3.0),
        ]
    }
}

/// Ground-truth indices of one frame. `dims` follow the three probe
/// directions; `rwt` is in segment order IS, I, IL, AL, A, AS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexLabels {
    pub cavity_area: f64,
    pub myo_area: f64,
    pub dims: [f64; 3],
    pub rwt: [f64; 6],
    pub phase: u8,
}

impl IndexLabels {
    /// The 11 regression targets in head order: areas, dims, rwt.
    pub fn regression_vec(&self) -> [f64; 11] {
        let mut v = [0.0; 11];
        v[0] = self.cavity_area;
        v[1] = self.myo_area;
        v[2..5].copy_from_slice(&self.dims);
        v[5..11].copy_from_slice(&self.rwt);
        v
    }
}

#[derive(Debug, Clone)]
pub struct CardiacSequence {
    pub subject_id: String,
    pub height: usize,
    pub width: usize,
    /// F frames, each `height*width` row-major intensities.
    pub frames: Vec<Vec<f32>>,
    pub landmarks: [Point; 2],
    pub pixel_spacing: f64,
    pub labels: Vec<IndexLabels>,
    pub contours: Option<Vec<(Vec<Point>, Vec<Point>)>>,
}

struct Texture {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

impl Texture {
    fn new(seed: u64) -> Self {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        Texture {
            kx: rng.random_range(0.05..0.15),
            ky: rng.random_range(0.05..0.15),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            amp: 0.06,
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        1.0 + self.amp * (std::f64::consts::TAU * (self.kx * x + self.ky * y) + self.phase).sin()
    }
}

fn render_frame(params: &PhantomParams, frame: usize, tex: &Texture, noise_seed: u64) -> Vec<f32> {
    let (a_in, b_in, a_out, b_out) = params.semi_axes_px(frame);
    let (cr, sr) = (params.rotation.cos(), params.rotation.sin());
    let inside = |x: f64, y: f64, a: f64, b: f64| {
        let (dx, dy) = (x - params.center.0, y - params.center.1);
        // rotate into the ellipse frame
        let (ex, ey) = (cr * dx + sr * dy, -sr * dx + cr * dy);
        (ex / a) * (ex / a) + (ey / b) * (ey / b) <= 1.0
    };
    let mut img = vec![0f32; CANVAS * CANVAS];
    for iy in 0..CANVAS {
        for ix in 0..CANVAS {
            let mut acc = 0.0;
            for (ox, oy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let (x, y) = (ix as f64 + ox, iy as f64 + oy);
                let v = if inside(x, y, a_in, b_in) {
                    CAVITY_INTENSITY
                } else if inside(x, y, a_out, b_out) {
                    MYO_INTENSITY
                } else {
                    BG_INTENSITY
                };
                acc += v * tex.at(x, y);
            }
            img[iy * CANVAS + ix] = (acc / 4.0) as f32;
        }
    }
    if params.noise_sigma > 0.0 {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, params.noise_sigma).expect("sigma >= 0");
        for px in img.iter_mut() {
            *px += normal.sample(&mut rng) as f32;
        }
    }
    img
}

/// Render a full cycle and attach exact contours and labels. Deterministic in
/// (params, seed).
pub fn generate_phantom_sequence(
    params: &PhantomParams,
    seed: u64,
) -> Result<CardiacSequence, PhantomError> {
    params.validate()?;
    let f_count = params.frames_per_cycle;
    let tex = Texture::new(params.texture_seed);
    let landmarks = params.landmarks();

    let mut frames = Vec::with_capacity(f_count);
    let mut contour_list = Vec::with_capacity(f_count);
    for f in 0..f_count {
        frames.push(render_frame(params, f, &tex, derive_seed(seed, &[0x01, f as u64])));
        contour_list.push(params.contour_at(f));
    }

    let centroid = polygon_centroid(&contour_list[0].0)?;
    let orientation = (landmarks[0].1 - centroid.1).atan2(landmarks[0].0 - centroid.0);

    let mut cavity_series = Vec::with_capacity(f_count);
    let mut partial: Vec<(f64, f64, [f64; 3], [f64; 6])> = Vec::with_capacity(f_count);
    for (inner, outer) in &contour_list {
        let (cavity, myo) = compute_areas(inner, outer, params.pixel_spacing)?;
        let dims = compute_dimensions(inner, orientation, params.pixel_spacing)?;
        let rwt = compute_rwt(inner, outer, landmarks, params.pixel_spacing)?;
        cavity_series.push(cavity);
        partial.push((cavity, myo, dims, rwt));
    }
    let phases = label_phases(&cavity_series)?;

    let labels = partial
        .into_iter()
        .zip(&phases)
        .map(|((cavity_area, myo_area, dims, rwt), &phase)| IndexLabels {
            cavity_area,
            myo_area,
            dims,
            rwt,
            phase,
        })
        .collect();

    Ok(CardiacSequence {
        subject_id: format!("subj_{:016x}", seed),
        height: CANVAS,
        width: CANVAS,
        frames,
        landmarks,
        pixel_spacing: params.pixel_spacing,
        labels,
        contours: Some(contour_list),
    })
}

/// Ranges the cohort sampler draws subject anatomy from. Tuples are
/// inclusive-exclusive (lo, hi) ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub frames_per_cycle: usize,
    pub pixel_spacing: f64,
    pub noise_sigma: f64,
    /// Inner cavity radius at ED, mm.
    pub inner_radius_ed: (f64, f64),
    /// ES radius as a fraction of the ED radius.
    pub es_radius_fraction: (f64, f64),
    /// Wall thickness at ED, mm.
    pub wall_thickness_ed: (f64, f64),
    /// ES wall thickness as a multiple of the ED thickness.
    pub es_wall_gain: (f64, f64),
    pub eccentricity: (f64, f64),
    /// Uniform center jitter around the canvas middle, pixels.
    pub center_jitter: f64,
    /// Number of frames from ED to ES (cyclic), inclusive range.
    pub systole_frames: (usize, usize),
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            frames_per_cycle: 20,
            pixel_spacing: 1.5625,
            noise_sigma: 0.05,
            inner_radius_ed: (14.0, 22.0),
            es_radius_fraction: (0.6, 0.85),
            wall_thickness_ed: (5.0, 8.5),
            es_wall_gain: (1.2, 1.5),
            eccentricity: (0.0, 0.22),
            center_jitter: 2.5,
            systole_frames: (7, 11),
        }
    }
}

const SAMPLER_MAX_TRIES: usize = 10_000;

/// Draw one subject's parameters, rejecting draws that leave the canvas or
/// whose myocardial area would not change monotonically within each phase.
pub fn sample_params(
    spec: &CohortSpec,
    rng: &mut impl Rng,
) -> Result<PhantomParams, PhantomError> {
    let mid = (CANVAS as f64 - 1.0) / 2.0;
    for _ in 0..SAMPLER_MAX_TRIES {
        let r_ed = rng.random_range(spec.inner_radius_ed.0..spec.inner_radius_ed.1);
        let r_es = r_ed * rng.random_range(spec.es_radius_fraction.0..spec.es_radius_fraction.1);
        let w_ed = rng.random_range(spec.wall_thickness_ed.0..spec.wall_thickness_ed.1);
        let w_es = w_ed * rng.random_range(spec.es_wall_gain.0..spec.es_wall_gain.1);
        let ed = rng.random_range(0..spec.frames_per_cycle);
        let sys = rng.random_range(spec.systole_frames.0..=spec.systole_frames.1);
        let params = PhantomParams {
            center: (
                mid + rng.random_range(-spec.center_jitter..spec.center_jitter),
                mid + rng.random_range(-spec.center_jitter..spec.center_jitter),
            ),
            inner_radius_ed: r_ed,
            inner_radius_es: r_es,
            wall_thickness_ed: w_ed,
            wall_thickness_es: w_es,
            ed_frame_index: ed,
            es_frame_index: (ed + sys) % spec.frames_per_cycle,
            eccentricity: rng.random_range(spec.eccentricity.0..spec.eccentricity.1),
            rotation: rng.random_range(0.0..std::f64::consts::TAU),
            noise_sigma: spec.noise_sigma,
            texture_seed: rng.random::<u64>(),
            pixel_spacing: spec.pixel_spacing,
            frames_per_cycle: spec.frames_per_cycle,
        };
        if params.validate().is_ok() && params.myo_area_monotone() {
            return Ok(params);
        }
    }
    Err(PhantomError::SamplerExhausted(format!(
        "no valid parameter draw in {} tries; ranges too aggressive for the canvas",
        SAMPLER_MAX_TRIES
    )))
}

/// Generate `count` subjects deterministically from one base seed.
pub fn generate_cohort(
    spec: &CohortSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<CardiacSequence>, PhantomError> {
    (0..count)
        .map(|i| {
            let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(derive_seed(
                seed,
                &[0x5a, i as u64],
            ));
            let params = sample_params(spec, &mut rng)?;
            let mut seq = generate_phantom_sequence(&params, derive_seed(seed, &[0x5b, i as u64]))?;
            seq.subject_id = format!("s{:03}", i);
            Ok(seq)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn base_params() -> PhantomParams {
        PhantomParams {
            center: (39.5, 39.5),
            inner_radius_ed: 20.0,
            inner_radius_es: 12.0,
            wall_thickness_ed: 6.0,
            wall_thickness_es: 8.5,
            ed_frame_index: 0,
            es_frame_index: 10,
            eccentricity: 0.0,
            rotation: 0.0,
            noise_sigma: 0.0,
            texture_seed: 7,
            pixel_spacing: 1.5625,
            frames_per_cycle: 20,
        }
    }

    #[test]
    fn concentric_noise_free_labels_match_analytic() {
        let p = base_params();
        let seq = generate_phantom_sequence(&p, 11).unwrap();
        assert_eq!(seq.frames.len(), 20);
        assert_eq!(seq.labels.len(), 20);
        for f in 0..20 {
            let (r, w) = p.geometry_at(f);
            let lab = &seq.labels[f];
            assert!(
                (lab.cavity_area - PI * r * r).abs() / (PI * r * r) < 0.005,
                "frame {} cavity {} vs {}",
                f,
                lab.cavity_area,
                PI * r * r
            );
            let myo_true = PI * ((r + w) * (r + w) - r * r);
            assert!((lab.myo_area - myo_true).abs() / myo_true < 0.01);
            for d in lab.dims {
                assert!((d - 2.0 * r).abs() / (2.0 * r) < 0.01, "dim {} vs {}", d, 2.0 * r);
            }
            for t in lab.rwt {
                assert!((t - w).abs() / w < 0.01, "rwt {} vs {}", t, w);
            }
        }
    }

    #[test]
    fn cavity_at_ed_matches_pixel_count() {
        // Analytic pi*20^2 against a pixel-counting oracle on the rendered
        // ED frame: classify each pixel by nearest tissue intensity band.
        let p = base_params();
        let seq = generate_phantom_sequence(&p, 3).unwrap();
        let lab = &seq.labels[0];
        let analytic = PI * 400.0;
        assert!((lab.cavity_area - analytic).abs() / analytic < 0.005);

        // Only look inside the mid-wall disk: there the image is a pure
        // cavity/myocardium mixture, so nearest-band classification is
        // unbiased (outer-rim myo/background blends would alias into the
        // cavity band otherwise).
        let img = &seq.frames[0];
        let (r, w) = p.geometry_at(0);
        let guard = (r + 0.5 * w) / p.pixel_spacing;
        let count = (0..CANVAS * CANVAS)
            .filter(|i| {
                let (x, y) = ((i % CANVAS) as f64, (i / CANVAS) as f64);
                let inside =
                    (x - p.center.0).powi(2) + (y - p.center.1).powi(2) < guard * guard;
                let v = img[*i] as f64;
                inside && (v - CAVITY_INTENSITY).abs() < (v - MYO_INTENSITY).abs()
            })
            .count();
        let pixel_area = count as f64 * p.pixel_spacing * p.pixel_spacing;
        assert!(
            (pixel_area - analytic).abs() / analytic < 0.05,
            "pixel-count {} vs analytic {}",
            pixel_area,
            analytic
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let p = PhantomParams {
            noise_sigma: 0.08,
            eccentricity: 0.15,
            rotation: 0.7,
            ..base_params()
        };
        let a = generate_phantom_sequence(&p, 42).unwrap();
        let b = generate_phantom_sequence(&p, 42).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.labels, b.labels);
        let c = generate_phantom_sequence(&p, 43).unwrap();
        assert_ne!(a.frames, c.frames, "noise must depend on the seed");
    }

    #[test]
    fn landmarks_sit_on_ed_outer_contour() {
        let p = PhantomParams {
            eccentricity: 0.2,
            rotation: 1.1,
            ..base_params()
        };
        let seq = generate_phantom_sequence(&p, 5).unwrap();
        let (_, outer_ed) = p.contour_at(p.ed_frame_index);
        for lm in seq.landmarks {
            let d = outer_ed
                .iter()
                .map(|&(x, y)| ((x - lm.0).powi(2) + (y - lm.1).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(d < 0.1, "landmark {:?} off the outer contour by {}", lm, d);
        }
        let (a, b) = (seq.landmarks[0], seq.landmarks[1]);
        assert!((a.0 - b.0).abs() + (a.1 - b.1).abs() > 1.0);
    }

    #[test]
    fn cavity_and_myo_monotone_within_phases() {
        // On every systole-labeled transition the cavity shrinks and the wall
        // area grows; diastole transitions do the opposite.
        let spec = CohortSpec {
            noise_sigma: 0.0,
            ..CohortSpec::default()
        };
        let cohort = generate_cohort(&spec, 6, 99).unwrap();
        for seq in &cohort {
            let f_count = seq.labels.len();
            for f in 0..f_count {
                let prev = (f + f_count - 1) % f_count;
                let dc = seq.labels[f].cavity_area - seq.labels[prev].cavity_area;
                let dm = seq.labels[f].myo_area - seq.labels[prev].myo_area;
                if seq.labels[f].phase == 1 {
                    assert!(dc < 0.0, "{} frame {}: systole cavity rose", seq.subject_id, f);
                    assert!(dm > 0.0, "{} frame {}: systole wall shrank", seq.subject_id, f);
                } else {
                    assert!(dc > 0.0, "{} frame {}: diastole cavity shrank", seq.subject_id, f);
                    assert!(dm < 0.0, "{} frame {}: diastole wall grew", seq.subject_id, f);
                }
            }
        }
    }

    #[test]
    fn oversize_geometry_rejected_with_bounds() {
        let p = PhantomParams {
            inner_radius_ed: 60.0,
            inner_radius_es: 40.0,
            ..base_params()
        };
        match p.validate() {
            Err(PhantomError::CanvasOverflow(msg)) => {
                assert!(msg.contains("margin"), "report should cite the margin: {}", msg)
            }
            other => panic!("expected canvas overflow, got {:?}", other),
        }
    }

    #[test]
    fn invariant_violations_rejected() {
        let grow = PhantomParams {
            inner_radius_es: 25.0,
            ..base_params()
        };
        assert!(matches!(grow.validate(), Err(PhantomError::InvalidParams(_))));
        let thin = PhantomParams {
            wall_thickness_es: 5.0,
            ..base_params()
        };
        assert!(matches!(thin.validate(), Err(PhantomError::InvalidParams(_))));
        let same_frame = PhantomParams {
            es_frame_index: 0,
            ..base_params()
        };
        assert!(matches!(same_frame.validate(), Err(PhantomError::InvalidParams(_))));
    }

    #[test]
    fn cohort_is_deterministic_and_valid() {
        let spec = CohortSpec::default();
        let a = generate_cohort(&spec, 8, 2024).unwrap();
        let b = generate_cohort(&spec, 8, 2024).unwrap();
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.subject_id, y.subject_id);
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.labels, y.labels);
        }
        // ids unique
        let mut ids: Vec<_> = a.iter().map(|s| s.subject_id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 8);
    }

    #[test]
    fn cycle_alpha_hits_phase_extremes() {
        let p = base_params();
        assert_eq!(p.cycle_alpha(0), 0.0);
        assert!((p.cycle_alpha(10) - 1.0).abs() < 1e-12);
        let p2 = PhantomParams {
            ed_frame_index: 15,
            es_frame_index: 3,
            ..base_params()
        };
        assert_eq!(p2.cycle_alpha(15), 0.0);
        assert!((p2.cycle_alpha(3) - 1.0).abs() < 1e-12);
    }
}
