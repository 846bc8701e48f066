//! On-disk image sets.
//!
//! A prediction set is a directory holding `manifest.json`, the taxonomy and,
//! per image, a masks tensor (N×H×W f32), a class-probability tensor (N×C
//! f32) and a provenance list. A panoptic set holds `panoptic.json`, the
//! taxonomy and per-image `sem`/`ids` tensors (H×W u32). Paths inside either
//! index are relative to its directory.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::IxDyn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::pst1::{self, Tensor};
use crate::error::{Error, Result};
use crate::types::{validate_stack, MaskStack, PanopticMap, Provenance, Segment, Taxonomy, ValidatedStack};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PANOPTIC_FILE: &str = "panoptic.json";
pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const FORMAT_VERSION: u32 = 1;

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_taxonomy(path: &Path) -> Result<Taxonomy> {
    read_json(path)
}

/// Accepts either the index file itself or its directory.
fn index_path(path: &Path, file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file)
    } else {
        path.to_path_buf()
    }
}

fn check_version(path: &Path, version: u32) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub masks: PathBuf,
    pub class_probs: PathBuf,
    pub provenance: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    taxonomy: PathBuf,
    images: Vec<ImageEntry>,
}

/// A loaded prediction manifest. Images are read lazily.
#[derive(Clone, Debug)]
pub struct Manifest {
    pub root: PathBuf,
    pub taxonomy: Taxonomy,
    pub images: Vec<ImageEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let path = index_path(path, MANIFEST_FILE);
        let file: ManifestFile = read_json(&path)?;
        check_version(&path, file.version)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let taxonomy = read_taxonomy(&root.join(&file.taxonomy))?;
        Ok(Self { root, taxonomy, images: file.images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Reads and validates image `i`. Errors name the offending file.
    pub fn load_image(&self, i: usize) -> Result<ValidatedStack> {
        let entry = &self.images[i];
        let masks_path = self.root.join(&entry.masks);
        let probs_path = self.root.join(&entry.class_probs);
        let prov_path = self.root.join(&entry.provenance);
        let masks = pst1::read_f32_3(&masks_path)?;
        let probs = pst1::read_f32_2(&probs_path)?;
        let provenance: Vec<Provenance> = read_json(&prov_path)?;
        if masks.shape()[1..] != [entry.height, entry.width] {
            return Err(Error::format(
                &masks_path,
                format!("mask shape {:?} disagrees with image size {}x{}", masks.shape(), entry.height, entry.width),
            ));
        }
        let stack = MaskStack::new(masks, probs, provenance).map_err(|e| Error::format(&masks_path, e.to_string()))?;
        validate_stack(stack, &self.taxonomy).map_err(|e| Error::format(&masks_path, e.to_string()))
    }
}

/// Writes a prediction set one image at a time.
pub struct ManifestWriter {
    root: PathBuf,
    images: Vec<ImageEntry>,
}

impl ManifestWriter {
    pub fn create(dir: &Path, taxonomy: &Taxonomy) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(TAXONOMY_FILE), taxonomy)?;
        Ok(Self { root: dir.to_path_buf(), images: Vec::new() })
    }

    pub fn add(&mut self, name: &str, stack: &MaskStack) -> Result<()> {
        let entry = ImageEntry {
            name: name.to_owned(),
            height: stack.height(),
            width: stack.width(),
            masks: format!("{name}.masks.pst").into(),
            class_probs: format!("{name}.probs.pst").into(),
            provenance: format!("{name}.provenance.json").into(),
        };
        pst1::write(&self.root.join(&entry.masks), &Tensor::F32(stack.masks().clone().into_dyn()))?;
        pst1::write(&self.root.join(&entry.class_probs), &Tensor::F32(stack.class_probs().clone().into_dyn()))?;
        write_json(&self.root.join(&entry.provenance), stack.provenance())?;
        self.images.push(entry);
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        let file = ManifestFile { version: FORMAT_VERSION, taxonomy: TAXONOMY_FILE.into(), images: self.images };
        write_json(&path, &file)?;
        Ok(path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanopticEntry {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub sem: PathBuf,
    pub ids: PathBuf,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PanopticFile {
    version: u32,
    taxonomy: PathBuf,
    images: Vec<PanopticEntry>,
}

#[derive(Clone, Debug)]
pub struct PanopticSet {
    pub root: PathBuf,
    pub taxonomy: Taxonomy,
    pub images: Vec<PanopticEntry>,
}

impl PanopticSet {
    pub fn load(path: &Path) -> Result<Self> {
        let path = index_path(path, PANOPTIC_FILE);
        let file: PanopticFile = read_json(&path)?;
        check_version(&path, file.version)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let taxonomy = read_taxonomy(&root.join(&file.taxonomy))?;
        Ok(Self { root, taxonomy, images: file.images })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.images.iter().position(|e| e.name == name)
    }

    pub fn load_image(&self, i: usize) -> Result<PanopticMap> {
        let entry = &self.images[i];
        let sem_path = self.root.join(&entry.sem);
        let sem = pst1::read_u32_2(&sem_path)?;
        let ids = pst1::read_u32_2(&self.root.join(&entry.ids))?;
        if sem.dim() != (entry.height, entry.width) {
            return Err(Error::format(
                &sem_path,
                format!("map shape {:?} disagrees with image size {}x{}", sem.shape(), entry.height, entry.width),
            ));
        }
        for s in &entry.segments {
            if self.taxonomy.get(s.category_id).is_none() {
                return Err(Error::format(&sem_path, format!("segment {} has unknown category {}", s.instance_id, s.category_id)));
            }
        }
        PanopticMap::new(sem, ids, entry.segments.clone()).map_err(|e| Error::format(&sem_path, e.to_string()))
    }
}

pub struct PanopticWriter {
    root: PathBuf,
    images: Vec<PanopticEntry>,
}

impl PanopticWriter {
    pub fn create(dir: &Path, taxonomy: &Taxonomy) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(TAXONOMY_FILE), taxonomy)?;
        Ok(Self { root: dir.to_path_buf(), images: Vec::new() })
    }

    pub fn add(&mut self, name: &str, map: &PanopticMap) -> Result<()> {
        let entry = PanopticEntry {
            name: name.to_owned(),
            height: map.height(),
            width: map.width(),
            sem: format!("{name}.sem.pst").into(),
            ids: format!("{name}.ids.pst").into(),
            segments: map.segments().to_vec(),
        };
        let to_tensor = |a: &ndarray::Array2<u32>| {
            Tensor::U32(a.clone().into_shape_with_order(IxDyn(&[map.height(), map.width()])).unwrap())
        };
        pst1::write(&self.root.join(&entry.sem), &to_tensor(map.sem()))?;
        pst1::write(&self.root.join(&entry.ids), &to_tensor(map.ids()))?;
        self.images.push(entry);
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self.root.join(PANOPTIC_FILE);
        let file = PanopticFile { version: FORMAT_VERSION, taxonomy: TAXONOMY_FILE.into(), images: self.images };
        write_json(&path, &file)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneParams};

    #[test]
    fn prediction_and_panoptic_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tax = Taxonomy::synthetic_default();
        let scene = generate_scene(&SceneParams { seed: 4, height: 32, width: 32, ..SceneParams::default() }, &tax).unwrap();

        let mut w = ManifestWriter::create(&dir.path().join("pred"), &tax).unwrap();
        w.add("a", &scene.stack).unwrap();
        w.finish().unwrap();
        let m = Manifest::load(&dir.path().join("pred")).unwrap();
        assert_eq!(m.taxonomy, tax);
        assert_eq!(m.load_image(0).unwrap(), scene.stack);

        let mut w = PanopticWriter::create(&dir.path().join("gt"), &tax).unwrap();
        w.add("a", &scene.gt).unwrap();
        let index = w.finish().unwrap();
        let set = PanopticSet::load(&index).unwrap();
        assert_eq!(set.find("a"), Some(0));
        assert_eq!(set.load_image(0).unwrap(), scene.gt);
    }

    #[test]
    fn corrupt_tensor_is_reported_with_its_path() {
        let dir = tempfile::tempdir().unwrap();
        let tax = Taxonomy::synthetic_default();
        let scene = generate_scene(&SceneParams { seed: 1, height: 16, width: 16, ..SceneParams::default() }, &tax).unwrap();
        let mut w = ManifestWriter::create(dir.path(), &tax).unwrap();
        w.add("img", &scene.stack).unwrap();
        w.finish().unwrap();
        let bad = dir.path().join("img.masks.pst");
        fs::write(&bad, b"JUNK").unwrap();
        let err = Manifest::load(dir.path()).unwrap().load_image(0).unwrap_err();
        assert!(err.to_string().contains("img.masks.pst"), "{err}");
    }
}
