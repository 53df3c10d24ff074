//! Dataset directories.
//!
//! ```text
//! DIR/meta.jsonl      one FrameRecord per line
//! DIR/devices.csv     device table (geometry format)
//! DIR/tensors/*.gzt   one container per session, entries <prefix>/<crop>
//! ```
//!
//! Crop names are `face`, `left_eye`, `right_eye`, `tight_left`, `tight_right`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gzt::{load_gzt, save_gzt, write_atomic};
use crate::data::{BBox, FrameSample};
use crate::error::{Error, Result};
use crate::geometry::{DeviceTable, GazePoint, Orientation};
use crate::tensor::Tensor;

pub const META_FILE: &str = "meta.jsonl";
pub const DEVICES_FILE: &str = "devices.csv";
pub const TENSOR_DIR: &str = "tensors";
pub const CROPS: [&str; 5] = ["face", "left_eye", "right_eye", "tight_left", "tight_right"];

/// One line of `meta.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub subject_id: u32,
    pub session_id: u32,
    pub dot_id: u32,
    pub frame_index: u32,
    pub device: String,
    pub orientation: Orientation,
    pub fixed_index: Option<u8>,
    /// `[x, y, w, h]` in camera-frame pixels.
    pub face_bbox: [f64; 4],
    /// `[width, height]` of the camera frame.
    pub frame_size: [f64; 2],
    pub target_px: [f64; 2],
    pub target_cm: [f64; 2],
    /// Path relative to the dataset directory.
    pub tensor_file: String,
    pub tensor_prefix: String,
}

impl FrameRecord {
    fn of(f: &FrameSample) -> Self {
        let b = f.face_bbox;
        FrameRecord {
            frame_id: f.frame_id,
            subject_id: f.subject_id,
            session_id: f.session_id,
            dot_id: f.dot_id,
            frame_index: f.frame_index,
            device: f.device.clone(),
            orientation: f.orientation,
            fixed_index: f.fixed_index,
            face_bbox: [b.x, b.y, b.w, b.h],
            frame_size: f.frame_size,
            target_px: f.target.screen_px,
            target_cm: f.target.cam_cm,
            tensor_file: format!("{TENSOR_DIR}/s{:06}_{:03}.gzt", f.subject_id, f.session_id),
            tensor_prefix: format!("f{:016x}", f.frame_id),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub frames: Vec<FrameSample>,
    pub devices: DeviceTable,
}

fn meta_line(r: &FrameRecord) -> String {
    serde_json::to_string(r).expect("record serializes")
}

fn read_meta(dir: &Path) -> Result<Vec<FrameRecord>> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                file: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Writes frames into `dir`, adding to any dataset already there. Frame ids
/// must not collide with existing ones; device tables are merged.
pub fn save_dataset(dir: &Path, frames: &[FrameSample], devices: &DeviceTable) -> Result<()> {
    let tensor_dir = dir.join(TENSOR_DIR);
    fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
    let (mut records, mut table) = if dir.join(META_FILE).exists() {
        (read_meta(dir)?, DeviceTable::load(&dir.join(DEVICES_FILE))?)
    } else {
        (Vec::new(), DeviceTable::parse("", "empty")?)
    };
    let existing_files: BTreeSet<String> = records.iter().map(|r| r.tensor_file.clone()).collect();
    let mut ids: BTreeSet<u64> = records.iter().map(|r| r.frame_id).collect();

    let mut by_file: BTreeMap<String, Vec<(String, &FrameSample)>> = BTreeMap::new();
    for f in frames {
        if !ids.insert(f.frame_id) {
            return Err(Error::Config(format!(
                "frame id {:#x} (subject {}) already present in {}",
                f.frame_id,
                f.subject_id,
                dir.display()
            )));
        }
        devices.get(&f.device)?;
        let r = FrameRecord::of(f);
        if existing_files.contains(&r.tensor_file) {
            return Err(Error::Config(format!("{} already exists in the dataset", r.tensor_file)));
        }
        by_file.entry(r.tensor_file.clone()).or_default().push((r.tensor_prefix.clone(), f));
        records.push(r);
    }
    for (file, items) in &by_file {
        let names: Vec<String> = items
            .iter()
            .flat_map(|(prefix, _)| CROPS.iter().map(move |c| format!("{prefix}/{c}")))
            .collect();
        let tensors: Vec<&Tensor> = items
            .iter()
            .flat_map(|(_, f)| [&f.face, &f.left_eye, &f.right_eye, &f.tight_left, &f.tight_right])
            .collect();
        save_gzt(&dir.join(file), names.iter().map(String::as_str).zip(tensors))?;
    }
    for name in frames.iter().map(|f| f.device.as_str()).collect::<BTreeSet<_>>() {
        table.upsert(devices.get(name)?.clone());
    }
    write_atomic(&dir.join(DEVICES_FILE), table.to_text().as_bytes())?;
    let mut meta = String::new();
    for r in &records {
        meta.push_str(&meta_line(r));
        meta.push('\n');
    }
    write_atomic(&dir.join(META_FILE), meta.as_bytes())
}

fn check_crop(t: &Tensor, name: &str) -> Result<()> {
    let d = t.dims();
    if d.len() != 3 || d[0] != 3 || d[1] != d[2] {
        return Err(Error::Format(format!("{name}: expected a square [3, S, S] crop, got {d:?}")));
    }
    if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Format(format!("{name}: pixel values outside [0, 1]")));
    }
    Ok(())
}

/// Reads a dataset directory in `meta.jsonl` order.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let records = read_meta(dir)?;
    if records.is_empty() {
        return Err(Error::Config(format!("{} holds no frames", dir.display())));
    }
    let devices = DeviceTable::load(&dir.join(DEVICES_FILE))?;
    let mut files: BTreeMap<&str, BTreeMap<String, Tensor>> = BTreeMap::new();
    for r in &records {
        if !files.contains_key(r.tensor_file.as_str()) {
            let path = dir.join(&r.tensor_file);
            files.insert(&r.tensor_file, load_gzt(&path)?.into_iter().collect());
        }
    }
    let mut frames = Vec::with_capacity(records.len());
    for r in &records {
        let dev = devices.get(&r.device)?;
        let store = files.get_mut(r.tensor_file.as_str()).expect("loaded above");
        let mut crop = |c: &str| -> Result<Tensor> {
            let name = format!("{}/{c}", r.tensor_prefix);
            let t = store.remove(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            check_crop(&t, &name)?;
            Ok(t)
        };
        let [x, y, w, h] = r.face_bbox;
        let face_bbox = BBox::new(x, y, w, h);
        if !(w > 0.0 && h > 0.0 && face_bbox.inside(r.frame_size)) {
            return Err(Error::Format(format!("frame {:#x}: face box outside the frame", r.frame_id)));
        }
        let f = FrameSample {
            frame_id: r.frame_id,
            subject_id: r.subject_id,
            session_id: r.session_id,
            dot_id: r.dot_id,
            frame_index: r.frame_index,
            device: r.device.clone(),
            orientation: r.orientation,
            fixed_index: r.fixed_index,
            face: crop("face")?,
            left_eye: crop("left_eye")?,
            right_eye: crop("right_eye")?,
            tight_left: crop("tight_left")?,
            tight_right: crop("tight_right")?,
            face_bbox,
            frame_size: r.frame_size,
            target: GazePoint {
                screen_px: r.target_px,
                cam_cm: r.target_cm,
            },
        };
        let cm = GazePoint::from_screen(r.target_px, dev, r.orientation).cam_cm;
        if (cm[0] - r.target_cm[0]).abs() > 1e-6 || (cm[1] - r.target_cm[1]).abs() > 1e-6 {
            return Err(Error::Format(format!(
                "frame {:#x}: target_cm disagrees with target_px on {}",
                r.frame_id, r.device
            )));
        }
        let s = f.crop_size();
        if f.left_eye.dims()[1] != s || f.right_eye.dims()[1] != s || f.tight_right.dims()[1] != f.tight_size() {
            return Err(Error::Format(format!("frame {:#x}: crop sizes disagree", r.frame_id)));
        }
        frames.push(f);
    }
    Ok(Dataset { frames, devices })
}

/// SHA-256 over the metadata, the device table, and every tensor file in
/// name order.
pub fn dataset_hash(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut files: Vec<PathBuf> = vec![dir.join(META_FILE), dir.join(DEVICES_FILE)];
    let tdir = dir.join(TENSOR_DIR);
    let mut tensor_files: Vec<PathBuf> = fs::read_dir(&tdir)
        .map_err(|e| Error::io(&tdir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "gzt"))
        .collect();
    tensor_files.sort();
    files.extend(tensor_files);
    for p in files {
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}
