use super::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID_SIZE: usize = 25;

/// Binary `[1, 25, 25]` mask marking where the face box sits in the frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceGrid {
    pub mask: Tensor,
    /// Half-open cell ranges `[col_lo, col_hi) × [row_lo, row_hi)`.
    pub cols: (usize, usize),
    pub rows: (usize, usize),
}

impl FaceGrid {
    pub fn area(&self) -> usize {
        (self.cols.1 - self.cols.0) * (self.rows.1 - self.rows.0)
    }
}

fn cell_range(start: f64, len: f64, extent: f64) -> (usize, usize) {
    let g = GRID_SIZE as f64;
    let lo = (start * g / extent).floor().clamp(0.0, g) as usize;
    let hi = ((start + len) * g / extent).ceil().clamp(0.0, g) as usize;
    (lo, hi.max(lo + 1).min(GRID_SIZE))
}

/// Marks cells `[floor(x·25/W), ceil((x+w)·25/W))` and the analogous rows.
pub fn make_face_grid(bbox: BBox, frame_size: [f64; 2]) -> Result<FaceGrid> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::Contract(format!("empty face box {bbox:?}")));
    }
    if !(frame_size[0] > 0.0 && frame_size[1] > 0.0) {
        return Err(Error::Contract(format!("empty frame {frame_size:?}")));
    }
    let cols = cell_range(bbox.x, bbox.w, frame_size[0]);
    let rows = cell_range(bbox.y, bbox.h, frame_size[1]);
    let mut mask = Tensor::zeros(&[1, GRID_SIZE, GRID_SIZE]);
    let data = mask.data_mut();
    for r in rows.0..rows.1 {
        for c in cols.0..cols.1 {
            data[r * GRID_SIZE + c] = 1.0;
        }
    }
    Ok(FaceGrid { mask, cols, rows })
}
