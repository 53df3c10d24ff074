use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::FrameSample;
use crate::error::{Error, Result};
use crate::geometry::{GazePoint, Orientation};

pub const FIXED_DOT_COUNT: usize = 13;

/// Fixed dot locations as fractions of the oriented screen, in calibration
/// order: the four corners of the interior 3×3 lattice, its center, its four
/// edge midpoints, then the midpoints of the four screen edges. The first `k`
/// entries form the `k`-point calibration set, so the sets for 4, 5, 9 and 13
/// points are nested.
const FIXED_DOTS: [[f64; 2]; FIXED_DOT_COUNT] = [
    [0.2, 0.2],
    [0.8, 0.2],
    [0.2, 0.8],
    [0.8, 0.8],
    [0.5, 0.5],
    [0.5, 0.2],
    [0.8, 0.5],
    [0.5, 0.8],
    [0.2, 0.5],
    [0.5, 0.04],
    [0.96, 0.5],
    [0.5, 0.96],
    [0.04, 0.5],
];

pub fn fixed_dot_fraction(index: usize) -> [f64; 2] {
    FIXED_DOTS[index]
}

/// Fixed-dot indices used for `k`-point calibration.
pub fn calibration_fixed_indices(k: usize) -> Result<std::ops::Range<u8>> {
    match k {
        0 | 4 | 5 | 9 | 13 => Ok(0..k as u8),
        _ => Err(Error::Config(format!(
            "calibration point count must be one of 0, 4, 5, 9, 13; got {k}"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DotRecord {
    pub dot_id: u32,
    pub target: GazePoint,
    pub fixed_index: Option<u8>,
    pub frame_ids: Vec<u64>,
}

/// One subject's recording on one device and orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub subject_id: u32,
    pub session_id: u32,
    pub device: String,
    pub orientation: Orientation,
    /// Ordered by `dot_id`.
    pub dots: Vec<DotRecord>,
}

impl SessionRecord {
    /// Whether all 13 fixed locations were shown.
    pub fn has_complete_fixed_set(&self) -> bool {
        let mut seen = [false; FIXED_DOT_COUNT];
        for d in &self.dots {
            if let Some(i) = d.fixed_index {
                if let Some(slot) = seen.get_mut(i as usize) {
                    *slot = true;
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    pub fn frame_count(&self) -> usize {
        self.dots.iter().map(|d| d.frame_ids.len()).sum()
    }
}

/// Groups frames into sessions keyed by `(subject_id, session_id)`.
pub fn sessions_from_frames<'a>(
    frames: impl IntoIterator<Item = &'a FrameSample>,
) -> Result<Vec<SessionRecord>> {
    let mut map: BTreeMap<(u32, u32), SessionRecord> = BTreeMap::new();
    for f in frames {
        let rec = map
            .entry((f.subject_id, f.session_id))
            .or_insert_with(|| SessionRecord {
                subject_id: f.subject_id,
                session_id: f.session_id,
                device: f.device.clone(),
                orientation: f.orientation,
                dots: Vec::new(),
            });
        if rec.device != f.device || rec.orientation != f.orientation {
            return Err(Error::Contract(format!(
                "session ({}, {}) mixes devices or orientations",
                f.subject_id, f.session_id
            )));
        }
        match rec.dots.iter_mut().find(|d| d.dot_id == f.dot_id) {
            Some(d) => d.frame_ids.push(f.frame_id),
            None => rec.dots.push(DotRecord {
                dot_id: f.dot_id,
                target: f.target,
                fixed_index: f.fixed_index,
                frame_ids: vec![f.frame_id],
            }),
        }
    }
    let mut out: Vec<SessionRecord> = map.into_values().collect();
    for s in &mut out {
        s.dots.sort_by_key(|d| d.dot_id);
    }
    Ok(out)
}
