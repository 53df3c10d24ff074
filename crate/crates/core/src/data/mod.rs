//! Frame samples, session structure, augmentation and the synthetic corpus.

mod augment;
mod facegrid;
mod session;
mod split;
pub mod synth;

pub use augment::{apply_shift, augment_25, shift_crop, shift_lattice, ShiftKey};
pub use facegrid::{make_face_grid, FaceGrid, GRID_SIZE};
pub use session::{
    calibration_fixed_indices, fixed_dot_fraction, sessions_from_frames, DotRecord, SessionRecord,
    FIXED_DOT_COUNT,
};
pub use split::{split_subjects, SplitSets, SubjectInfo};
pub use synth::{synth_generate, BiasModel, SubjectProfile, SynthConfig};

use serde::{Deserialize, Serialize};

use crate::geometry::{GazePoint, Orientation};
use crate::tensor::Tensor;

/// Axis-aligned box in full-frame pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0]
    }

    pub fn inside(&self, frame: [f64; 2]) -> bool {
        self.x >= 0.0 && self.y >= 0.0 && self.x + self.w <= frame[0] && self.y + self.h <= frame[1]
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    pub frame_id: u64,
    pub subject_id: u32,
    pub session_id: u32,
    pub dot_id: u32,
    pub frame_index: u32,
    pub device: String,
    pub orientation: Orientation,
    /// Position in the fixed calibration set, for dots shown at one of the fixed locations.
    pub fixed_index: Option<u8>,
    /// `[3, S, S]` face crop.
    pub face: Tensor,
    pub left_eye: Tensor,
    pub right_eye: Tensor,
    /// `[3, T, T]` tighter eye crops used by the distilled student.
    pub tight_left: Tensor,
    pub tight_right: Tensor,
    pub face_bbox: BBox,
    pub frame_size: [f64; 2],
    pub target: GazePoint,
}

impl FrameSample {
    pub fn crop_size(&self) -> usize {
        self.face.dims()[1]
    }

    pub fn tight_size(&self) -> usize {
        self.tight_left.dims()[1]
    }

    pub fn face_grid(&self) -> FaceGrid {
        make_face_grid(self.face_bbox, self.frame_size).expect("sample bbox is non-empty")
    }

    pub fn target_cm_f32(&self) -> [f32; 2] {
        [self.target.cam_cm[0] as f32, self.target.cam_cm[1] as f32]
    }

    pub fn device_key(&self) -> (String, Orientation) {
        (self.device.clone(), self.orientation)
    }
}
