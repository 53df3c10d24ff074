//! Synthetic corpus with a known image-to-gaze map.
//!
//! Each eye crop shows a sclera ellipse and an iris disc. The iris sits at
//! `pupil_gain · (target + bias + jitter)` crop pixels from the sclera center
//! (y flipped, since image rows grow downward), so gaze is affinely
//! recoverable from the relative iris position. Per-subject eye placement and
//! per-frame crop misalignment move the sclera and iris together. The face
//! crop carries a head-position cue that follows the face box.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::session::{fixed_dot_fraction, sessions_from_frames, SessionRecord, FIXED_DOT_COUNT};
use super::{BBox, FrameSample};
use crate::error::{Error, Result};
use crate::geometry::{screen_rect_cm, DeviceSpec, GazePoint, Orientation};
use crate::rng::{stream, tag, Rng};
use crate::tensor::Tensor;

/// Distribution of the per-subject systematic gaze offset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BiasModel {
    None,
    Gaussian { std_cm: f64 },
    Fixed { x_cm: f64, y_cm: f64 },
    /// Uniform direction, norm uniform in `[min_cm, max_cm]`.
    Ring { min_cm: f64, max_cm: f64 },
}

impl BiasModel {
    fn sample(&self, rng: &mut Rng) -> [f64; 2] {
        match *self {
            BiasModel::None => [0.0, 0.0],
            BiasModel::Gaussian { std_cm } => {
                let n = Normal::new(0.0, std_cm).expect("finite std");
                [n.sample(rng), n.sample(rng)]
            }
            BiasModel::Fixed { x_cm, y_cm } => [x_cm, y_cm],
            BiasModel::Ring { min_cm, max_cm } => {
                let r = rng.gen_range(min_cm..=max_cm);
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                [r * a.cos(), r * a.sin()]
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: u32,
    /// Id of the first generated subject; lets separate corpora stay disjoint.
    pub first_subject: u32,
    pub session_id: u32,
    pub dots_per_session: u32,
    pub frames_per_dot: u32,
    pub crop_size: usize,
    pub tight_size: usize,
    /// Side of the tight eye window as a fraction of the regular eye window.
    pub tight_span: f64,
    /// Camera frame `[width, height]` in pixels.
    pub frame_size: [f64; 2],
    /// Largest on-screen iris displacement as a fraction of the crop side.
    pub gain_fill: f64,
    /// Per-subject multiplicative spread of the pupil gain.
    pub gain_spread: f64,
    pub bias: BiasModel,
    /// Per-frame gaze jitter (std, cm).
    pub jitter_cm: f64,
    /// Per-subject eye placement inside the crop (max, crop pixels).
    pub eye_offset_px: f64,
    /// Per-frame crop misalignment (std, crop pixels).
    pub eye_jitter_px: f64,
    /// Per-frame face-detector misalignment (std, face crop pixels). The
    /// face moves inside its crop and `face_bbox` moves the opposite way.
    pub face_jitter_px: f64,
    /// Amplitude of the smooth per-frame face box drift (frame pixels).
    pub bbox_drift_px: f64,
    pub pixel_noise: f64,
}

impl SynthConfig {
    /// 32×32 crops and 24×24 tight crops.
    pub fn desk() -> Self {
        SynthConfig {
            n_subjects: 10,
            first_subject: 0,
            session_id: 0,
            dots_per_session: 20,
            frames_per_dot: 5,
            crop_size: 32,
            tight_size: 24,
            tight_span: 0.8,
            frame_size: [480.0, 640.0],
            gain_fill: 0.3,
            gain_spread: 0.05,
            bias: BiasModel::Gaussian { std_cm: 0.25 },
            jitter_cm: 0.15,
            eye_offset_px: 1.6,
            eye_jitter_px: 0.8,
            face_jitter_px: 0.8,
            bbox_drift_px: 4.0,
            pixel_noise: 0.02,
        }
    }

    /// 224×224 crops and 80×80 tight crops.
    pub fn full() -> Self {
        SynthConfig {
            crop_size: 224,
            tight_size: 80,
            eye_offset_px: 11.2,
            eye_jitter_px: 5.6,
            face_jitter_px: 5.6,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.dots_per_session == 0 || self.frames_per_dot == 0 {
            return Err(Error::Config("subject, dot and frame counts must be at least 1".into()));
        }
        if self.crop_size < 8 || self.tight_size < 8 {
            return Err(Error::Config("crop sizes must be at least 8".into()));
        }
        if !(self.tight_span > 0.0 && self.tight_span <= 1.0) {
            return Err(Error::Config("tight_span must be in (0, 1]".into()));
        }
        if !(self.gain_fill > 0.0 && self.gain_fill < 0.5) {
            return Err(Error::Config("gain_fill must be in (0, 0.5)".into()));
        }
        if !(0.0..1.0).contains(&self.gain_spread) {
            return Err(Error::Config("gain_spread must be in [0, 1)".into()));
        }
        let nonneg = [
            self.jitter_cm,
            self.eye_offset_px,
            self.eye_jitter_px,
            self.face_jitter_px,
            self.bbox_drift_px,
            self.pixel_noise,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("noise magnitudes must be finite and non-negative".into()));
        }
        if self.frame_size.iter().any(|&v| v < 64.0) {
            return Err(Error::Config("frame must be at least 64×64 pixels".into()));
        }
        if self.n_subjects as u64 + self.first_subject as u64 > 1 << 24 {
            return Err(Error::Config("subject ids must fit in 24 bits".into()));
        }
        if self.dots_per_session > u16::MAX as u32 || self.frames_per_dot > u16::MAX as u32 {
            return Err(Error::Config("dot and frame counts must fit in 16 bits".into()));
        }
        Ok(())
    }

    /// Nominal pupil gain (crop pixels per cm) for a device and orientation:
    /// the screen point farthest from the camera along either axis moves the
    /// iris by `gain_fill` of the crop side.
    pub fn nominal_gain(&self, dev: &DeviceSpec, o: Orientation) -> f64 {
        let (lo, hi) = screen_rect_cm(dev, o);
        let reach = lo.iter().chain(&hi).fold(0.0f64, |m, v| m.max(v.abs()));
        self.gain_fill * self.crop_size as f64 / reach
    }
}

/// Hidden per-subject parameters of the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: u32,
    pub bias_cm: [f64; 2],
    pub appearance_seed: u64,
    /// Crop pixels of iris displacement per cm of gaze.
    pub pupil_gain: f64,
    /// Sclera center offset from the crop center, per eye (left, right).
    pub eye_offset_px: [[f64; 2]; 2],
    pub skin: [f32; 3],
    pub sclera: [f32; 3],
    pub iris: [f32; 3],
    /// Face box at frame 0.
    pub face_box: BBox,
    pub drift_phase: [f64; 2],
}

impl SubjectProfile {
    pub fn sample(
        cfg: &SynthConfig,
        dev: &DeviceSpec,
        o: Orientation,
        seed: u64,
        subject_id: u32,
    ) -> Self {
        let mut rng = stream(seed, &[tag::SUBJECT, subject_id as u64]);
        let bias_cm = cfg.bias.sample(&mut rng);
        let factor = 1.0 + cfg.gain_spread * rng.gen_range(-1.0..=1.0);
        let mut offset = || [0, 1].map(|_| cfg.eye_offset_px * rng.gen_range(-1.0..=1.0));
        let eye_offset_px = [offset(), offset()];
        let skin_base = rng.gen_range(0.45..0.75f32);
        let skin = [skin_base + 0.08, skin_base, skin_base - 0.08];
        let sclera = [0, 1, 2].map(|_| rng.gen_range(0.85..0.95f32));
        let iris_base = rng.gen_range(0.05..0.25f32);
        let iris = [0, 1, 2].map(|_| (iris_base + rng.gen_range(-0.04..0.04f32)).max(0.0));
        let [fw, fh] = cfg.frame_size;
        let side = fw * rng.gen_range(0.40..0.50);
        let cx = fw / 2.0 + rng.gen_range(-0.08..0.08) * fw;
        let cy = fh / 2.0 + rng.gen_range(-0.08..0.08) * fh;
        SubjectProfile {
            subject_id,
            bias_cm,
            appearance_seed: rng.gen(),
            pupil_gain: cfg.nominal_gain(dev, o) * factor,
            eye_offset_px,
            skin,
            sclera,
            iris,
            face_box: BBox::new(cx - side / 2.0, cy - side / 2.0, side, side),
            drift_phase: [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)],
        }
    }

    /// Iris displacement from the sclera center in crop pixels (x right, y down).
    pub fn iris_offset_px(&self, target_cm: [f64; 2], jitter_cm: [f64; 2]) -> [f64; 2] {
        let g = self.pupil_gain;
        [
            g * (target_cm[0] + self.bias_cm[0] + jitter_cm[0]),
            -g * (target_cm[1] + self.bias_cm[1] + jitter_cm[1]),
        ]
    }
}

/// Packs `(subject, session, dot, frame)` into a unique frame id.
pub fn frame_id(subject: u32, session: u32, dot: u32, frame: u32) -> u64 {
    ((subject as u64) << 40) | ((session as u64 & 0xFF) << 32) | ((dot as u64) << 16) | frame as u64
}

/// A square raster onto which flat shapes are drawn with one-pixel soft edges.
struct Canvas {
    size: usize,
    /// Pixels per crop-pixel unit; shapes are given in crop-pixel units
    /// relative to the canvas center.
    scale: f64,
    data: Vec<f32>,
}

impl Canvas {
    fn new(size: usize, span: f64, fill: [f32; 3]) -> Self {
        let mut data = vec![0.0; 3 * size * size];
        for (c, plane) in data.chunks_mut(size * size).enumerate() {
            plane.fill(fill[c]);
        }
        Canvas {
            size,
            scale: size as f64 / span,
            data,
        }
    }

    fn paint(&mut self, color: [f32; 3], coverage: impl Fn(f64, f64) -> f64) {
        let n = self.size;
        let half = n as f64 / 2.0;
        for y in 0..n {
            for x in 0..n {
                let ux = (x as f64 + 0.5 - half) / self.scale;
                let uy = (y as f64 + 0.5 - half) / self.scale;
                let a = coverage(ux, uy) as f32;
                if a <= 0.0 {
                    continue;
                }
                for c in 0..3 {
                    let v = &mut self.data[c * n * n + y * n + x];
                    *v += a * (color[c] - *v);
                }
            }
        }
    }

    fn ellipse(&mut self, center: [f64; 2], radii: [f64; 2], color: [f32; 3]) {
        let s = self.scale;
        self.paint(color, |x, y| {
            let dx = (x - center[0]) / radii[0];
            let dy = (y - center[1]) / radii[1];
            let signed = ((dx * dx + dy * dy).sqrt() - 1.0) * radii[0].min(radii[1]) * s;
            (0.5 - signed).clamp(0.0, 1.0)
        });
    }

    fn rect(&mut self, center: [f64; 2], half: [f64; 2], color: [f32; 3]) {
        let s = self.scale;
        self.paint(color, |x, y| {
            let cx = (0.5 - ((x - center[0]).abs() - half[0]) * s).clamp(0.0, 1.0);
            let cy = (0.5 - ((y - center[1]).abs() - half[1]) * s).clamp(0.0, 1.0);
            cx * cy
        });
    }

    fn finish(mut self, noise: f64, rng: &mut Rng) -> Tensor {
        if noise > 0.0 {
            let n = Normal::new(0.0, noise).expect("finite noise");
            for v in &mut self.data {
                *v += n.sample(rng) as f32;
            }
        }
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        Tensor::new(&[3, self.size, self.size], self.data).expect("canvas shape")
    }
}

const SCLERA_RADII: [f64; 2] = [0.42, 0.30];
const IRIS_RADIUS: f64 = 0.12;

/// Renders one eye. `span` is the window side in crop pixels; `center` is the
/// sclera center relative to the window center.
fn render_eye(
    p: &SubjectProfile,
    size: usize,
    span: f64,
    crop: f64,
    center: [f64; 2],
    iris: [f64; 2],
    noise: f64,
    rng: &mut Rng,
) -> Tensor {
    let mut c = Canvas::new(size, span, p.skin);
    c.ellipse(center, SCLERA_RADII.map(|r| r * crop), p.sclera);
    let ic = [center[0] + iris[0], center[1] + iris[1]];
    c.ellipse(ic, [IRIS_RADIUS * crop; 2], p.iris);
    c.finish(noise, rng)
}

/// Renders the face crop: a skin oval, two small eyes with the same relative
/// iris displacement, and a dark band whose position tracks where the face
/// box sits in the camera frame.
fn render_face(
    cfg: &SynthConfig,
    p: &SubjectProfile,
    bbox: BBox,
    misalign: [f64; 2],
    iris: [f64; 2],
    rng: &mut Rng,
) -> Tensor {
    let s = cfg.crop_size as f64;
    let [mx, my] = misalign;
    let mut c = Canvas::new(cfg.crop_size, s, [0.3, 0.35, 0.4]);
    c.ellipse([-mx, -my], [0.38 * s, 0.46 * s], p.skin);
    let eye_scale = 0.25;
    for ex in [-0.17 * s, 0.17 * s] {
        let center = [ex - mx, -0.08 * s - my];
        c.ellipse(center, SCLERA_RADII.map(|r| r * s * eye_scale), p.sclera);
        let ic = [center[0] + iris[0] * eye_scale, center[1] + iris[1] * eye_scale];
        c.ellipse(ic, [IRIS_RADIUS * s * eye_scale; 2], p.iris);
    }
    let [fw, fh] = cfg.frame_size;
    let bc = bbox.center();
    let cue = [
        (bc[0] / fw - 0.5) * s * 0.6 - mx,
        0.3 * s + (bc[1] / fh - 0.5) * s * 0.3 - my,
    ];
    c.rect(cue, [0.12 * s, 0.04 * s], [0.15, 0.1, 0.1]);
    c.finish(cfg.pixel_noise, rng)
}

/// Face box for a given frame: the subject's base box plus a smooth drift,
/// kept inside the camera frame.
fn drifted_box(cfg: &SynthConfig, p: &SubjectProfile, dot: u32, frame: u32) -> BBox {
    let t = (dot * cfg.frames_per_dot + frame) as f64 * 0.35;
    let a = cfg.bbox_drift_px;
    let b = p.face_box;
    let [fw, fh] = cfg.frame_size;
    BBox {
        x: (b.x + a * (t + p.drift_phase[0]).sin()).clamp(0.0, fw - b.w),
        y: (b.y + a * (t + p.drift_phase[1]).sin()).clamp(0.0, fh - b.h),
        ..b
    }
}

/// Screen position of dot `dot`: the fixed locations first, then uniform.
pub fn dot_target(dev: &DeviceSpec, o: Orientation, seed: u64, subject: u32, dot: u32) -> GazePoint {
    let [w, h] = dev.extent_px(o);
    let px = if (dot as usize) < FIXED_DOT_COUNT {
        let f = fixed_dot_fraction(dot as usize);
        [f[0] * w, f[1] * h]
    } else {
        let mut rng = stream(seed, &[tag::DOT, subject as u64, dot as u64]);
        [rng.gen_range(0.0..=w), rng.gen_range(0.0..=h)]
    };
    GazePoint::from_screen(px, dev, o)
}

/// Renders one frame of `profile` looking at `target`.
pub fn render_frame(
    cfg: &SynthConfig,
    dev: &DeviceSpec,
    o: Orientation,
    profile: &SubjectProfile,
    dot: u32,
    frame: u32,
    target: GazePoint,
    seed: u64,
) -> FrameSample {
    let sid = profile.subject_id;
    let mut rng = stream(seed, &[tag::FRAME, sid as u64, dot as u64, frame as u64]);
    let jitter = if cfg.jitter_cm > 0.0 {
        let n = Normal::new(0.0, cfg.jitter_cm).expect("finite jitter");
        [n.sample(&mut rng), n.sample(&mut rng)]
    } else {
        [0.0, 0.0]
    };
    let iris = profile.iris_offset_px(target.cam_cm, jitter);
    let mut misalign = || {
        if cfg.eye_jitter_px > 0.0 {
            let n = Normal::new(0.0, cfg.eye_jitter_px).expect("finite jitter");
            [n.sample(&mut rng), n.sample(&mut rng)]
        } else {
            [0.0, 0.0]
        }
    };
    let shifts = [misalign(), misalign()];
    let face_shift = if cfg.face_jitter_px > 0.0 {
        let n = Normal::new(0.0, cfg.face_jitter_px).expect("finite jitter");
        [n.sample(&mut rng), n.sample(&mut rng)]
    } else {
        [0.0, 0.0]
    };
    let s = cfg.crop_size as f64;
    let tight_span = s * cfg.tight_span;
    let eye_center = |e: usize| {
        [
            profile.eye_offset_px[e][0] + shifts[e][0],
            profile.eye_offset_px[e][1] + shifts[e][1],
        ]
    };
    let noise = cfg.pixel_noise;
    let left_eye = render_eye(profile, cfg.crop_size, s, s, eye_center(0), iris, noise, &mut rng);
    let right_eye = render_eye(profile, cfg.crop_size, s, s, eye_center(1), iris, noise, &mut rng);
    let tight_left = render_eye(profile, cfg.tight_size, tight_span, s, eye_center(0), iris, noise, &mut rng);
    let tight_right = render_eye(profile, cfg.tight_size, tight_span, s, eye_center(1), iris, noise, &mut rng);
    let head = drifted_box(cfg, profile, dot, frame);
    let face = render_face(cfg, profile, head, face_shift, iris, &mut rng);
    let [fw, fh] = cfg.frame_size;
    let face_bbox = BBox {
        x: (head.x + face_shift[0] * head.w / s).clamp(0.0, fw - head.w),
        y: (head.y + face_shift[1] * head.h / s).clamp(0.0, fh - head.h),
        ..head
    };
    FrameSample {
        frame_id: frame_id(sid, cfg.session_id, dot, frame),
        subject_id: sid,
        session_id: cfg.session_id,
        dot_id: dot,
        frame_index: frame,
        device: dev.name.clone(),
        orientation: o,
        fixed_index: ((dot as usize) < FIXED_DOT_COUNT).then_some(dot as u8),
        face,
        left_eye,
        right_eye,
        tight_left,
        tight_right,
        face_bbox,
        frame_size: cfg.frame_size,
        target,
    }
}

/// Generates `cfg.n_subjects` single-session subjects on one device and
/// orientation. Output order is subject, dot, frame.
pub fn synth_generate(
    cfg: &SynthConfig,
    dev: &DeviceSpec,
    o: Orientation,
    seed: u64,
) -> Result<(Vec<SessionRecord>, Vec<FrameSample>)> {
    cfg.validate()?;
    dev.validate()?;
    let subjects: Vec<u32> = (cfg.first_subject..cfg.first_subject + cfg.n_subjects).collect();
    let jobs: Vec<(u32, u32, u32)> = subjects
        .iter()
        .flat_map(|&s| {
            (0..cfg.dots_per_session)
                .flat_map(move |d| (0..cfg.frames_per_dot).map(move |f| (s, d, f)))
        })
        .collect();
    let profiles: Vec<SubjectProfile> = subjects
        .iter()
        .map(|&s| SubjectProfile::sample(cfg, dev, o, seed, s))
        .collect();
    let frames: Vec<FrameSample> = jobs
        .par_iter()
        .map(|&(s, d, f)| {
            let p = &profiles[(s - cfg.first_subject) as usize];
            render_frame(cfg, dev, o, p, d, f, dot_target(dev, o, seed, s, d), seed)
        })
        .collect();
    let sessions = sessions_from_frames(&frames)?;
    Ok((sessions, frames))
}
