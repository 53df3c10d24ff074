use super::{BBox, FrameSample};
use crate::tensor::Tensor;

/// Crop-window offset `(dx, dy)` in face/eye crop pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftKey {
    pub dx: f64,
    pub dy: f64,
}

/// The 5×5 offsets `{−m, −m/2, 0, m/2, m}²`, row-major over `dy` then `dx`;
/// index 12 is the zero shift.
pub fn shift_lattice(max_shift: f64) -> [ShiftKey; 25] {
    let steps = [-1.0, -0.5, 0.0, 0.5, 1.0].map(|s| s * max_shift);
    std::array::from_fn(|i| ShiftKey {
        dx: steps[i % 5],
        dy: steps[i / 5],
    })
}

/// Moves the crop window of a `[C, H, W]` image by `(dx, dy)` pixels:
/// `out(x, y) = in(x + dx, y + dy)`, bilinear, with edge replication outside
/// the source. A zero shift returns the input unchanged.
pub fn shift_crop(img: &Tensor, dx: f64, dy: f64) -> Tensor {
    if dx == 0.0 && dy == 0.0 {
        return img.clone();
    }
    let (c, h, w) = (img.dims()[0], img.dims()[1], img.dims()[2]);
    let src = img.data();
    let sample = |plane: &[f32], x: f64, y: f64| -> f32 {
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
        let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
        top * (1.0 - fy) + bot * fy
    };
    let mut out = Vec::with_capacity(img.numel());
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                out.push(sample(plane, x as f64 + dx, y as f64 + dy));
            }
        }
    }
    Tensor::new(img.dims(), out).expect("same shape")
}

fn shifted_bbox(b: BBox, key: ShiftKey, crop_size: usize, frame: [f64; 2]) -> BBox {
    let sx = key.dx * b.w / crop_size as f64;
    let sy = key.dy * b.h / crop_size as f64;
    BBox {
        x: (b.x + sx).clamp(0.0, (frame[0] - b.w).max(0.0)),
        y: (b.y + sy).clamp(0.0, (frame[1] - b.h).max(0.0)),
        ..b
    }
}

/// Applies one lattice offset jointly to the face and both eye windows.
/// Tight eye crops move by the same fraction of their own side.
pub fn apply_shift(s: &FrameSample, key: ShiftKey) -> FrameSample {
    if key.dx == 0.0 && key.dy == 0.0 {
        return s.clone();
    }
    let size = s.crop_size() as f64;
    let tight_scale = s.tight_size() as f64 / size;
    let (tdx, tdy) = (key.dx * tight_scale, key.dy * tight_scale);
    FrameSample {
        face: shift_crop(&s.face, key.dx, key.dy),
        left_eye: shift_crop(&s.left_eye, key.dx, key.dy),
        right_eye: shift_crop(&s.right_eye, key.dx, key.dy),
        tight_left: shift_crop(&s.tight_left, tdx, tdy),
        tight_right: shift_crop(&s.tight_right, tdx, tdy),
        face_bbox: shifted_bbox(s.face_bbox, key, s.crop_size(), s.frame_size),
        ..s.clone()
    }
}

/// The 25 shifted copies of `s` over [`shift_lattice`]; targets are untouched
/// and index 12 equals `s`.
pub fn augment_25(s: &FrameSample, max_shift: f64) -> Vec<FrameSample> {
    shift_lattice(max_shift)
        .into_iter()
        .map(|key| apply_shift(s, key))
        .collect()
}
