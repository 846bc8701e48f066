pub mod manifest;
pub mod pst1;

pub use manifest::{read_json, read_taxonomy, write_json, Manifest, ManifestWriter, PanopticSet, PanopticWriter};
pub use pst1::{DType, Tensor};
