//! Shared data model: categories, per-image prediction stacks, panoptic maps
//! and multi-scale attention tokens.

use std::collections::{BTreeMap, HashSet};
use std::ops::Deref;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CategoryId = u32;
pub type InstanceId = u32;

/// Threshold used to turn soft masks into binary masks.
pub const BINARIZE_THRESHOLD: f32 = 0.5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub id: CategoryId,
    pub is_thing: bool,
    pub name: String,
}

impl CategorySpec {
    pub fn thing(id: CategoryId, name: &str) -> Self {
        Self { id, is_thing: true, name: name.to_owned() }
    }

    pub fn stuff(id: CategoryId, name: &str) -> Self {
        Self { id, is_thing: false, name: name.to_owned() }
    }
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    categories: Vec<CategorySpec>,
}

/// An ordered category list. Column `j` of every class-probability matrix
/// refers to `categories()[j]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyFile", into = "TaxonomyFile")]
pub struct Taxonomy {
    categories: Vec<CategorySpec>,
    index: BTreeMap<CategoryId, usize>,
}

impl TryFrom<TaxonomyFile> for Taxonomy {
    type Error = Error;

    fn try_from(file: TaxonomyFile) -> Result<Self> {
        Taxonomy::new(file.categories)
    }
}

impl From<Taxonomy> for TaxonomyFile {
    fn from(t: Taxonomy) -> Self {
        TaxonomyFile { categories: t.categories }
    }
}

impl Taxonomy {
    pub fn new(categories: Vec<CategorySpec>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, c) in categories.iter().enumerate() {
            if c.id == 0 {
                return Err(Error::Taxonomy(format!("category '{}' uses reserved id 0", c.name)));
            }
            if index.insert(c.id, i).is_some() {
                return Err(Error::Taxonomy(format!("duplicate category id {}", c.id)));
            }
        }
        Ok(Self { categories, index })
    }

    /// Five thing and three stuff categories used by the synthetic generator.
    pub fn synthetic_default() -> Self {
        Self::new(vec![
            CategorySpec::thing(1, "person"),
            CategorySpec::thing(2, "car"),
            CategorySpec::thing(3, "dog"),
            CategorySpec::thing(4, "cup"),
            CategorySpec::thing(5, "knife"),
            CategorySpec::stuff(6, "sky"),
            CategorySpec::stuff(7, "grass"),
            CategorySpec::stuff(8, "road"),
        ])
        .expect("default taxonomy is well formed")
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn categories(&self) -> &[CategorySpec] {
        &self.categories
    }

    pub fn get(&self, id: CategoryId) -> Option<&CategorySpec> {
        self.index.get(&id).map(|&i| &self.categories[i])
    }

    pub fn column_of(&self, id: CategoryId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn is_thing(&self, id: CategoryId) -> Option<bool> {
        self.get(id).map(|c| c.is_thing)
    }

    pub fn things(&self) -> impl Iterator<Item = &CategorySpec> {
        self.categories.iter().filter(|c| c.is_thing)
    }

    pub fn stuff(&self) -> impl Iterator<Item = &CategorySpec> {
        self.categories.iter().filter(|c| !c.is_thing)
    }
}

/// Where a predicted mask came from. Stuff queries are bound to exactly one
/// category; thing queries classify over all thing categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub query_index: u32,
    pub is_thing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_category: Option<CategoryId>,
}

impl Provenance {
    pub fn thing(query_index: u32) -> Self {
        Self { query_index, is_thing: true, fixed_category: None }
    }

    pub fn stuff(query_index: u32, category: CategoryId) -> Self {
        Self { query_index, is_thing: false, fixed_category: Some(category) }
    }
}

/// N soft masks over an H×W image with per-mask class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack {
    masks: Array3<f32>,
    class_probs: Array2<f32>,
    provenance: Vec<Provenance>,
}

impl MaskStack {
    /// `masks` is N×H×W, `class_probs` is N×C.
    pub fn new(masks: Array3<f32>, class_probs: Array2<f32>, provenance: Vec<Provenance>) -> Result<Self> {
        let n = masks.len_of(Axis(0));
        if class_probs.nrows() != n || provenance.len() != n {
            return Err(Error::Dimension(format!(
                "{} masks, {} class-probability rows, {} provenance records",
                n,
                class_probs.nrows(),
                provenance.len()
            )));
        }
        let masks = if masks.is_standard_layout() { masks } else { masks.as_standard_layout().into_owned() };
        let class_probs =
            if class_probs.is_standard_layout() { class_probs } else { class_probs.as_standard_layout().into_owned() };
        Ok(Self { masks, class_probs, provenance })
    }

    pub fn empty(height: usize, width: usize, classes: usize) -> Self {
        Self {
            masks: Array3::zeros((0, height, width)),
            class_probs: Array2::zeros((0, classes)),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn height(&self) -> usize {
        self.masks.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.masks.len_of(Axis(2))
    }

    pub fn masks(&self) -> &Array3<f32> {
        &self.masks
    }

    pub fn mask(&self, i: usize) -> ArrayView2<'_, f32> {
        self.masks.index_axis(Axis(0), i)
    }

    /// Row-major pixel slice of mask `i`.
    pub fn mask_slice(&self, i: usize) -> &[f32] {
        let px = self.height() * self.width();
        &self.masks.as_slice().expect("standard layout")[i * px..(i + 1) * px]
    }

    pub fn class_probs(&self) -> &Array2<f32> {
        &self.class_probs
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Keeps only the masks for which `keep` returns true.
    pub fn select(&self, mut keep: impl FnMut(usize, &Provenance) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i, &self.provenance[i])).collect();
        Self {
            masks: self.masks.select(Axis(0), &idx),
            class_probs: self.class_probs.select(Axis(0), &idx),
            provenance: idx.iter().map(|&i| self.provenance[i]).collect(),
        }
    }
}

/// Category and class probability resolved for one mask.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskLabel {
    pub category: CategoryId,
    pub is_thing: bool,
    /// Most likely class probability of the mask.
    pub prob: f64,
}

/// A [`MaskStack`] that passed [`validate_stack`], with each mask's label
/// resolved against the taxonomy.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidatedStack {
    stack: MaskStack,
    labels: Vec<MaskLabel>,
}

impl ValidatedStack {
    pub fn stack(&self) -> &MaskStack {
        &self.stack
    }

    pub fn labels(&self) -> &[MaskLabel] {
        &self.labels
    }

    pub fn into_inner(self) -> MaskStack {
        self.stack
    }

    pub fn select(&self, mut keep: impl FnMut(usize, &MaskLabel) -> bool) -> Self {
        let keep_idx: HashSet<usize> = (0..self.labels.len()).filter(|&i| keep(i, &self.labels[i])).collect();
        let stack = self.stack.select(|i, _| keep_idx.contains(&i));
        let labels = (0..self.labels.len()).filter(|i| keep_idx.contains(i)).map(|i| self.labels[i]).collect();
        Self { stack, labels }
    }
}

impl Deref for ValidatedStack {
    type Target = MaskStack;

    fn deref(&self) -> &MaskStack {
        &self.stack
    }
}

fn check_prob(what: impl FnOnce() -> String, v: f32) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::ProbabilityRange { what: what(), value: v as f64 })
    }
}

/// Checks every [`MaskStack`] invariant against `taxonomy` and resolves the
/// label of each mask. Thing masks take the most likely thing category; stuff
/// masks take the probability of their fixed category.
pub fn validate_stack(stack: MaskStack, taxonomy: &Taxonomy) -> Result<ValidatedStack> {
    if stack.class_probs.ncols() != taxonomy.len() {
        return Err(Error::Dimension(format!(
            "class probabilities have {} columns, taxonomy has {} categories",
            stack.class_probs.ncols(),
            taxonomy.len()
        )));
    }
    let values = stack.masks.as_slice().expect("MaskStack keeps standard layout");
    let in_range = values.chunks(1024).all(|c| c.iter().fold(true, |ok, &v| ok & (0.0..=1.0).contains(&v)));
    if !in_range {
        for (i, &v) in values.iter().enumerate() {
            check_prob(|| format!("mask value at flat index {i}"), v)?;
        }
    }
    for ((row, col), &v) in stack.class_probs.indexed_iter() {
        check_prob(|| format!("class probability [{row}, {col}]"), v)?;
    }

    let mut seen = HashSet::new();
    let mut labels = Vec::with_capacity(stack.len());
    for (i, prov) in stack.provenance.iter().enumerate() {
        if !seen.insert(prov.query_index) {
            return Err(Error::Provenance { query: prov.query_index, reason: "duplicate query index".into() });
        }
        let probs = stack.class_probs.row(i);
        let label = if prov.is_thing {
            if prov.fixed_category.is_some() {
                return Err(Error::Provenance {
                    query: prov.query_index,
                    reason: "thing query carries a fixed category".into(),
                });
            }
            let mut best: Option<(usize, f32)> = None;
            for (col, cat) in taxonomy.categories().iter().enumerate() {
                if cat.is_thing && best.map_or(true, |(_, p)| probs[col] > p) {
                    best = Some((col, probs[col]));
                }
            }
            let (col, p) = best.ok_or_else(|| Error::Taxonomy("taxonomy has no thing categories".into()))?;
            MaskLabel { category: taxonomy.categories()[col].id, is_thing: true, prob: p as f64 }
        } else {
            let cat = prov.fixed_category.ok_or_else(|| Error::Provenance {
                query: prov.query_index,
                reason: "stuff query is missing its fixed category".into(),
            })?;
            let col = taxonomy.column_of(cat).ok_or(Error::UnknownCategory(cat))?;
            if taxonomy.categories()[col].is_thing {
                return Err(Error::Provenance {
                    query: prov.query_index,
                    reason: format!("fixed category {cat} is a thing category"),
                });
            }
            MaskLabel { category: cat, is_thing: false, prob: probs[col] as f64 }
        };
        labels.push(label);
    }
    Ok(ValidatedStack { stack, labels })
}

/// Pixel is true iff its value is strictly greater than `threshold`.
///
/// Panics if `threshold` is outside (0, 1).
pub fn binarize(mask: ArrayView2<'_, f32>, threshold: f32) -> Array2<bool> {
    assert!(threshold > 0.0 && threshold < 1.0, "binarize threshold must lie in (0, 1), got {threshold}");
    mask.mapv(|v| v > threshold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub instance_id: InstanceId,
    pub category_id: CategoryId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_query: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Per-pixel category and instance id. Zero means void in both maps.
#[derive(Clone, Debug, PartialEq)]
pub struct PanopticMap {
    sem: Array2<CategoryId>,
    ids: Array2<InstanceId>,
    segments: Vec<Segment>,
}

impl PanopticMap {
    pub fn new(sem: Array2<CategoryId>, ids: Array2<InstanceId>, segments: Vec<Segment>) -> Result<Self> {
        let map = Self::from_parts_unchecked(sem, ids, segments);
        map.validate()?;
        Ok(map)
    }

    pub(crate) fn from_parts_unchecked(
        sem: Array2<CategoryId>,
        ids: Array2<InstanceId>,
        segments: Vec<Segment>,
    ) -> Self {
        let sem = if sem.is_standard_layout() { sem } else { sem.as_standard_layout().into_owned() };
        let ids = if ids.is_standard_layout() { ids } else { ids.as_standard_layout().into_owned() };
        Self { sem, ids, segments }
    }

    /// Builds a map from row-major buffers produced by the merging routines.
    pub(crate) fn from_buffers(
        height: usize,
        width: usize,
        sem: Vec<CategoryId>,
        ids: Vec<InstanceId>,
        segments: Vec<Segment>,
    ) -> Self {
        let sem = Array2::from_shape_vec((height, width), sem).expect("buffer matches shape");
        let ids = Array2::from_shape_vec((height, width), ids).expect("buffer matches shape");
        let map = Self { sem, ids, segments };
        debug_assert!(map.validate().is_ok(), "{:?}", map.validate());
        map
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { sem: Array2::zeros((height, width)), ids: Array2::zeros((height, width)), segments: Vec::new() }
    }

    pub fn height(&self) -> usize {
        self.sem.nrows()
    }

    pub fn width(&self) -> usize {
        self.sem.ncols()
    }

    pub fn sem(&self) -> &Array2<CategoryId> {
        &self.sem
    }

    pub fn ids(&self) -> &Array2<InstanceId> {
        &self.ids
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, id: InstanceId) -> Option<&Segment> {
        self.segments.iter().find(|s| s.instance_id == id)
    }

    pub fn into_parts(self) -> (Array2<CategoryId>, Array2<InstanceId>, Vec<Segment>) {
        (self.sem, self.ids, self.segments)
    }

    /// Pixel count of every instance id present in the map.
    pub fn areas(&self) -> BTreeMap<InstanceId, u64> {
        let mut areas = BTreeMap::new();
        for &id in self.ids.iter().filter(|&&id| id != 0) {
            *areas.entry(id).or_insert(0) += 1;
        }
        areas
    }

    /// Single linear scan over both maps checking the void coupling, that
    /// every id has exactly one segment record and one category, and that
    /// every segment covers at least one pixel.
    pub fn validate(&self) -> Result<()> {
        if self.sem.dim() != self.ids.dim() {
            return Err(Error::PanopticMap(format!(
                "semantic map is {:?} but id map is {:?}",
                self.sem.dim(),
                self.ids.dim()
            )));
        }
        let mut by_id: BTreeMap<InstanceId, (CategoryId, u64)> = BTreeMap::new();
        for seg in &self.segments {
            if seg.instance_id == 0 {
                return Err(Error::PanopticMap("segment uses reserved instance id 0".into()));
            }
            if seg.category_id == 0 {
                return Err(Error::PanopticMap(format!("segment {} has void category", seg.instance_id)));
            }
            if by_id.insert(seg.instance_id, (seg.category_id, 0)).is_some() {
                return Err(Error::PanopticMap(format!("instance id {} listed twice", seg.instance_id)));
            }
        }
        for (((r, c), &cat), &id) in self.sem.indexed_iter().zip(self.ids.iter()) {
            if (cat == 0) != (id == 0) {
                return Err(Error::PanopticMap(format!("pixel ({r}, {c}) has category {cat} but id {id}")));
            }
            if id == 0 {
                continue;
            }
            match by_id.get_mut(&id) {
                None => return Err(Error::PanopticMap(format!("instance id {id} has no segment record"))),
                Some((expected, count)) => {
                    if *expected != cat {
                        return Err(Error::PanopticMap(format!(
                            "instance id {id} has category {cat} at ({r}, {c}) but segment says {expected}"
                        )));
                    }
                    *count += 1;
                }
            }
        }
        if let Some((id, _)) = by_id.iter().find(|(_, (_, count))| *count == 0) {
            return Err(Error::PanopticMap(format!("segment {id} covers no pixels")));
        }
        Ok(())
    }
}

/// Attention tokens of one query over three feature scales at strides 8, 16
/// and 32, stored token-major with heads innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiScaleAttn {
    heads: usize,
    base_height: usize,
    base_width: usize,
    tokens: Vec<f32>,
}

/// Strides of the three attention scales relative to the input image.
pub const ATTN_STRIDES: [usize; 3] = [8, 16, 32];

impl MultiScaleAttn {
    pub fn new(heads: usize, base_height: usize, base_width: usize, tokens: Vec<f32>) -> Result<Self> {
        if heads == 0 {
            return Err(Error::Param("attention needs at least one head".into()));
        }
        if base_height == 0 || base_width == 0 || base_height % 32 != 0 || base_width % 32 != 0 {
            return Err(Error::Dimension(format!(
                "base size {base_height}x{base_width} must be a positive multiple of 32"
            )));
        }
        let expected = Self::token_count(base_height, base_width) * heads;
        if tokens.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} attention values for {base_height}x{base_width} with {heads} heads, got {}",
                tokens.len()
            )));
        }
        Ok(Self { heads, base_height, base_width, tokens })
    }

    /// L1 + L2 + L3 for an H×W input.
    pub fn token_count(base_height: usize, base_width: usize) -> usize {
        (0..3).map(|l| Self::scale_len(base_height, base_width, l)).sum()
    }

    pub fn scale_shape(base_height: usize, base_width: usize, level: usize) -> (usize, usize) {
        (base_height / ATTN_STRIDES[level], base_width / ATTN_STRIDES[level])
    }

    fn scale_len(base_height: usize, base_width: usize, level: usize) -> usize {
        let (h, w) = Self::scale_shape(base_height, base_width, level);
        h * w
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn base_height(&self) -> usize {
        self.base_height
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn tokens(&self) -> &[f32] {
        &self.tokens
    }
}
