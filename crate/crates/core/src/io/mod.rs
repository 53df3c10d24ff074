//! Binary tensor container, checkpoints and dataset directories.

mod checkpoint;
mod dataset;
pub mod gzt;

pub use checkpoint::{check_shapes, load_checkpoint, save_checkpoint, Checkpoint};
pub use dataset::{dataset_hash, load_dataset, save_dataset, Dataset, FrameRecord, CROPS, DEVICES_FILE, META_FILE, TENSOR_DIR};
pub use gzt::{decode, encode, load_gzt, save_gzt, write_atomic};
