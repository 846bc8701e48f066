//! Post-processors turning a [`ValidatedStack`] into a non-overlapping
//! [`PanopticMap`]: confidence-ordered mask-wise merging and the pixel-wise
//! argmax and things-first heuristic baselines.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{confidence_from_quality, ScoreParams};
use crate::types::{CategoryId, InstanceId, PanopticMap, Segment, Taxonomy, ValidatedStack, BINARIZE_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeParams {
    /// Masks scoring below this confidence are dropped.
    pub t_cnf: f64,
    /// Minimum fraction of a binarized mask that must still be unclaimed.
    pub t_keep: f64,
    pub score: ScoreParams,
    pub merge_same_stuff: bool,
    /// Segments with fewer pixels are voided by the argmax-based baselines.
    pub min_area: usize,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self { t_cnf: 0.25, t_keep: 0.6, score: ScoreParams::default(), merge_same_stuff: false, min_area: 0 }
    }
}

impl MergeParams {
    /// Confidence floor reported for the larger backbones.
    pub const T_CNF_ALT: f64 = 0.3;

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.t_cnf) || !(0.0..=1.0).contains(&self.t_keep) {
            return Err(Error::Param(format!(
                "t_cnf and t_keep must lie in [0, 1], got {} and {}",
                self.t_cnf, self.t_keep
            )));
        }
        ScoreParams::new(self.score.alpha, self.score.beta).map(|_| ())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[serde(rename = "maskwise")]
    MaskWise,
    Argmax,
    ArgmaxWeighted,
    Heuristic,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::MaskWise, Strategy::Argmax, Strategy::ArgmaxWeighted, Strategy::Heuristic];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::MaskWise => "maskwise",
            Strategy::Argmax => "argmax",
            Strategy::ArgmaxWeighted => "argmax-weighted",
            Strategy::Heuristic => "heuristic",
        }
    }

    /// Whether same-category stuff segments are merged when the caller does
    /// not say otherwise. Only the argmax baselines emit split stuff regions.
    pub fn merges_stuff_by_default(self) -> bool {
        matches!(self, Strategy::Argmax | Strategy::ArgmaxWeighted)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Param(format!("unknown strategy '{s}'")))
    }
}

/// Runs `strategy`, then collapses same-category stuff segments when
/// `params.merge_same_stuff` is set.
pub fn merge(stack: &ValidatedStack, taxonomy: &Taxonomy, strategy: Strategy, params: &MergeParams) -> PanopticMap {
    let map = match strategy {
        Strategy::MaskWise => mask_wise_merge(stack, params),
        Strategy::Argmax => pixel_wise_argmax(stack, false, params.min_area),
        Strategy::ArgmaxWeighted => pixel_wise_argmax(stack, true, params.min_area),
        Strategy::Heuristic => heuristic_merge(stack, params),
    };
    if params.merge_same_stuff {
        merge_same_category_stuff(&map, taxonomy)
    } else {
        map
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    index: usize,
    score: f64,
    category: CategoryId,
    query: u32,
}

/// Sum of the foreground values and the flat indices of the foreground
/// pixels, in pixel order.
fn footprint(values: &[f32]) -> (f64, Vec<u32>) {
    assert!(values.len() <= u32::MAX as usize, "mask exceeds u32 pixel indexing");
    let mut sum = 0.0f64;
    let mut pixels = Vec::new();
    for (px, &v) in values.iter().enumerate() {
        if v > BINARIZE_THRESHOLD {
            sum += v as f64;
            pixels.push(px as u32);
        }
    }
    (sum, pixels)
}

/// Descending score, then ascending category id, then ascending query index.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.category.cmp(&b.category))
        .then(a.query.cmp(&b.query))
}

/// Paints candidates in the given order onto an initially void canvas,
/// skipping those below `t_cnf` or whose unclaimed share of their binarized
/// footprint falls below `t_keep`.
/// `footprints` is indexed by mask.
fn paint_in_order(
    footprints: &[Vec<u32>],
    order: &[Candidate],
    t_cnf: f64,
    t_keep: f64,
    sem: &mut [CategoryId],
    ids: &mut [InstanceId],
) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut next_id: InstanceId = 1;
    for cand in order {
        if cand.score < t_cnf {
            continue;
        }
        let pixels = &footprints[cand.index];
        let visible = pixels.iter().filter(|&&px| sem[px as usize] == 0).count();
        if visible == 0 || (visible as f64) / (pixels.len() as f64) < t_keep {
            continue;
        }
        for &px in pixels {
            let px = px as usize;
            if sem[px] == 0 {
                sem[px] = cand.category;
                ids[px] = next_id;
            }
        }
        segments.push(Segment {
            instance_id: next_id,
            category_id: cand.category,
            source_query: Some(cand.query),
            score: Some(cand.score),
        });
        next_id += 1;
    }
    segments
}

/// Confidence-ordered mask-wise merging.
///
/// Masks are visited by descending confidence. Each claims the still-void
/// part of its binarized footprint if its confidence is at least `t_cnf` and
/// that part is at least `t_keep` of the footprint. Masks with an empty
/// footprint are discarded up front.
pub fn mask_wise_merge(stack: &ValidatedStack, params: &MergeParams) -> PanopticMap {
    let (h, w) = (stack.height(), stack.width());
    let mut footprints = Vec::with_capacity(stack.len());
    let mut order = Vec::with_capacity(stack.len());
    for i in 0..stack.len() {
        let (sum, pixels) = footprint(stack.mask_slice(i));
        if !pixels.is_empty() {
            let label = stack.labels()[i];
            order.push(Candidate {
                index: i,
                score: confidence_from_quality(label.prob, sum / pixels.len() as f64, &params.score),
                category: label.category,
                query: stack.provenance()[i].query_index,
            });
        }
        footprints.push(pixels);
    }
    order.sort_by(rank);

    let mut sem = vec![0; h * w];
    let mut ids = vec![0; h * w];
    let segments = paint_in_order(&footprints, &order, params.t_cnf, params.t_keep, &mut sem, &mut ids);
    PanopticMap::from_buffers(h, w, sem, ids, segments)
}

/// Assigns every pixel of `pixels` to the listed mask with the largest
/// (optionally class-weighted) value; ties go to the earliest listed mask.
fn argmax_owner(stack: &ValidatedStack, members: &[usize], weighted: bool, pixels: usize, eligible: impl Fn(usize) -> bool) -> Vec<Option<usize>> {
    let mut best_val = vec![f32::NEG_INFINITY; pixels];
    let mut owner: Vec<Option<usize>> = vec![None; pixels];
    for &i in members {
        let weight = if weighted { stack.labels()[i].prob as f32 } else { 1.0 };
        for (px, &v) in stack.mask_slice(i).iter().enumerate() {
            let v = v * weight;
            if v > best_val[px] && eligible(px) {
                best_val[px] = v;
                owner[px] = Some(i);
            }
        }
    }
    owner
}

/// Turns an owner map into segments in ascending mask order, voiding any
/// segment smaller than `min_area`. Returns the next free instance id.
fn emit_owned(
    stack: &ValidatedStack,
    owner: &[Option<usize>],
    min_area: usize,
    first_id: InstanceId,
    sem: &mut [CategoryId],
    ids: &mut [InstanceId],
    segments: &mut Vec<Segment>,
) -> InstanceId {
    let mut area = vec![0usize; stack.len()];
    for i in owner.iter().flatten() {
        area[*i] += 1;
    }
    let mut id_of = vec![0 as InstanceId; stack.len()];
    let mut next_id = first_id;
    for (i, &a) in area.iter().enumerate() {
        if a > 0 && a >= min_area {
            id_of[i] = next_id;
            let label = stack.labels()[i];
            segments.push(Segment {
                instance_id: next_id,
                category_id: label.category,
                source_query: Some(stack.provenance()[i].query_index),
                score: None,
            });
            next_id += 1;
        }
    }
    for (px, o) in owner.iter().enumerate() {
        if let Some(i) = *o {
            if id_of[i] != 0 {
                sem[px] = stack.labels()[i].category;
                ids[px] = id_of[i];
            }
        }
    }
    next_id
}

/// Pixel-wise argmax over mask values, or over `p_i * m_i` when `weighted`.
/// Every pixel goes to some mask; ties go to the lowest mask index and
/// segments below `min_area` pixels are voided.
pub fn pixel_wise_argmax(stack: &ValidatedStack, weighted: bool, min_area: usize) -> PanopticMap {
    let (h, w) = (stack.height(), stack.width());
    let members: Vec<usize> = (0..stack.len()).collect();
    let owner = argmax_owner(stack, &members, weighted, h * w, |_| true);
    let mut sem = vec![0; h * w];
    let mut ids = vec![0; h * w];
    let mut segments = Vec::new();
    emit_owned(stack, &owner, min_area, 1, &mut sem, &mut ids, &mut segments);
    PanopticMap::from_buffers(h, w, sem, ids, segments)
}

/// Things-first heuristic procedure.
///
/// Thing masks are painted by descending class probability with the same
/// `t_cnf` and `t_keep` filters as mask-wise merging. Pixels still void are
/// then given to the stuff mask with the largest value there, and stuff
/// segments below `min_area` pixels are voided.
pub fn heuristic_merge(stack: &ValidatedStack, params: &MergeParams) -> PanopticMap {
    let (h, w) = (stack.height(), stack.width());
    let mut things: Vec<Candidate> = Vec::new();
    let mut stuff: Vec<usize> = Vec::new();
    let mut footprints = vec![Vec::new(); stack.len()];
    for (i, label) in stack.labels().iter().enumerate() {
        if !label.is_thing {
            stuff.push(i);
            continue;
        }
        footprints[i] = footprint(stack.mask_slice(i)).1;
        if !footprints[i].is_empty() {
            things.push(Candidate { index: i, score: label.prob, category: label.category, query: stack.provenance()[i].query_index });
        }
    }
    things.sort_by(rank);

    let mut sem = vec![0; h * w];
    let mut ids = vec![0; h * w];
    let mut segments = paint_in_order(&footprints, &things, params.t_cnf, params.t_keep, &mut sem, &mut ids);
    let next_id = segments.len() as InstanceId + 1;

    let claimed: Vec<bool> = sem.iter().map(|&c| c != 0).collect();
    let owner = argmax_owner(stack, &stuff, false, h * w, |px| !claimed[px]);
    emit_owned(stack, &owner, params.min_area, next_id, &mut sem, &mut ids, &mut segments);
    PanopticMap::from_buffers(h, w, sem, ids, segments)
}

/// Collapses all segments of each stuff category onto the lowest instance id
/// of that category. Thing segments are left untouched.
pub fn merge_same_category_stuff(map: &PanopticMap, taxonomy: &Taxonomy) -> PanopticMap {
    let mut keeper: BTreeMap<CategoryId, InstanceId> = BTreeMap::new();
    let mut remap: BTreeMap<InstanceId, InstanceId> = BTreeMap::new();
    let mut segments = Vec::new();
    let mut ordered: Vec<&Segment> = map.segments().iter().collect();
    ordered.sort_by_key(|s| s.instance_id);
    for seg in ordered {
        let is_stuff = taxonomy.is_thing(seg.category_id) == Some(false);
        if is_stuff {
            if let Some(&target) = keeper.get(&seg.category_id) {
                remap.insert(seg.instance_id, target);
                continue;
            }
            keeper.insert(seg.category_id, seg.instance_id);
        }
        segments.push(seg.clone());
    }
    segments.sort_by_key(|s| s.instance_id);
    let ids = map.ids().mapv(|id| remap.get(&id).copied().unwrap_or(id));
    PanopticMap::from_parts_unchecked(map.sem().clone(), ids, segments)
}
