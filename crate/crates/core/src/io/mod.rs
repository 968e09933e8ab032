//! Persistence: packed binary frames, COLMAP text models, dataset manifests,
//! checkpoints and images.

pub mod checkpoint;
pub mod colmap;
pub mod images;
pub mod manifest;
pub mod pbf;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use colmap::{parse_colmap_text, write_colmap_text, ColmapImage, ColmapModel, ColmapPoint};
pub use images::{load_color, load_gray, save_color, save_gray};
pub use manifest::{DatasetManifest, ReferenceEntry, ViewEntry, MANIFEST_VERSION};
pub use pbf::{decode_frames, encode_frames, read_frames, write_frames, PbfFile};
