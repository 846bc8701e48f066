//! Bipartite matching of thing queries to ground-truth instances and the
//! fixed binding of stuff queries to stuff categories.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{dice_loss, focal_loss, FocalParams, DICE_EPS};
use crate::types::{CategoryId, Provenance};

/// Row-major matrix of finite costs, one row per query and one column per
/// ground-truth target.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!("{rows}x{cols} cost matrix needs {} entries, got {}", rows * cols, data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCost { row: i / cols.max(1), col: i % cols.max(1) });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }
}

/// Query-to-target pairs. Queries absent from `pairs` are assigned ∅.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(query_index, target_index)`, sorted by target.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_queries: Vec<usize>,
}

impl Assignment {
    pub fn new(mut pairs: Vec<(usize, usize)>, queries: usize) -> Self {
        pairs.sort_by_key(|&(q, t)| (t, q));
        let matched: BTreeSet<usize> = pairs.iter().map(|&(q, _)| q).collect();
        let unmatched_queries = (0..queries).filter(|q| !matched.contains(q)).collect();
        Self { pairs, unmatched_queries }
    }

    pub fn query_count(&self) -> usize {
        self.pairs.len() + self.unmatched_queries.len()
    }

    /// Sum of the paired costs, accumulated in target order.
    pub fn total_cost(&self, costs: &CostMatrix) -> f64 {
        self.pairs.iter().map(|&(q, t)| costs.get(q, t)).sum()
    }

    pub fn target_of(&self, query: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(q, _)| q == query).map(|&(_, t)| t)
    }
}

/// Minimum-cost assignment covering every column (Kuhn-Munkres with row and
/// column potentials, O(cols² · rows)).
pub fn hungarian(costs: &CostMatrix) -> Result<Assignment> {
    let (queries, targets) = (costs.rows(), costs.cols());
    if queries < targets {
        return Err(Error::Infeasible { rows: queries, cols: targets });
    }
    if targets == 0 {
        return Ok(Assignment::new(Vec::new(), queries));
    }

    // Targets play the role of rows (n <= m); index 0 is a sentinel.
    let (n, m) = (targets, queries);
    let cost = |target: usize, query: usize| costs.get(query - 1, target - 1);
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for target in 1..=n {
        owner[0] = target;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0, j) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let pairs = (1..=m).filter(|&j| owner[j] != 0).map(|j| (j - 1, owner[j] - 1)).collect();
    Ok(Assignment::new(pairs, queries))
}

/// Geometric cue compared by the location term, in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    /// `[x0, y0, x1, y1]`, exclusive upper corner.
    Box([f64; 4]),
    /// Mass center `[x, y]`.
    Center([f64; 2]),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocationMode {
    #[default]
    Box,
    MassCenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub cls: f64,
    pub seg: f64,
    pub det: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { cls: 2.0, seg: 1.0, det: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchingOptions {
    pub weights: CostWeights,
    pub mode: LocationMode,
    /// Image `(height, width)` used to normalize coordinates to [0, 1].
    /// `None` compares raw pixel coordinates.
    pub normalize: Option<(usize, usize)>,
    pub focal: FocalParams,
    pub dice_eps: f64,
}

impl MatchingOptions {
    pub fn new(mode: LocationMode, normalize: Option<(usize, usize)>) -> Self {
        Self { weights: CostWeights::default(), mode, normalize, focal: FocalParams::default(), dice_eps: DICE_EPS }
    }
}

pub struct QueryPrediction<'a> {
    pub class_probs: &'a [f64],
    pub mask: ArrayView2<'a, f32>,
    pub location: Location,
}

pub struct TargetInstance<'a> {
    /// Column of the target category in `class_probs`.
    pub class_index: usize,
    pub mask: ArrayView2<'a, bool>,
    pub location: Location,
}

fn normalized(loc: Location, norm: Option<(usize, usize)>) -> Location {
    let Some((h, w)) = norm else { return loc };
    let (h, w) = (h as f64, w as f64);
    match loc {
        Location::Box([x0, y0, x1, y1]) => Location::Box([x0 / w, y0 / h, x1 / w, y1 / h]),
        Location::Center([x, y]) => Location::Center([x / w, y / h]),
    }
}

fn area(b: &[f64; 4]) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Generalized IoU of two `[x0, y0, x1, y1]` boxes.
pub fn generalized_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let inter = area(&[a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])]);
    let union = area(a) + area(b) - inter;
    let hull = area(&[a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]);
    if hull <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (hull - union) / hull
}

/// L1 distance between `(cx, cy, w, h)` box encodings plus `1 - GIoU`.
fn box_cost(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let enc = |b: &[f64; 4]| [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0, b[2] - b[0], b[3] - b[1]];
    let (ea, eb) = (enc(a), enc(b));
    let l1: f64 = ea.iter().zip(&eb).map(|(x, y)| (x - y).abs()).sum();
    l1 + 1.0 - generalized_iou(a, b)
}

/// Location term on its own: box L1 + GIoU loss, or center L1.
pub fn location_cost(query: Location, target: Location, mode: LocationMode, normalize: Option<(usize, usize)>) -> Result<f64> {
    match (mode, normalized(query, normalize), normalized(target, normalize)) {
        (LocationMode::Box, Location::Box(a), Location::Box(b)) => Ok(box_cost(&a, &b)),
        (LocationMode::MassCenter, Location::Center(a), Location::Center(b)) => {
            Ok((a[0] - b[0]).abs() + (a[1] - b[1]).abs())
        }
        (mode, q, t) => Err(Error::LocationMode(format!("mode {mode:?} cannot compare {q:?} with {t:?}"))),
    }
}

/// `λ_cls·focal + λ_seg·dice + λ_det·location` between one thing query and
/// one ground-truth thing.
pub fn matching_cost(query: &QueryPrediction<'_>, target: &TargetInstance<'_>, opts: &MatchingOptions) -> Result<f64> {
    let cls = focal_loss(query.class_probs, Some(target.class_index), &opts.focal)?;
    let seg = dice_loss(query.mask, target.mask, opts.dice_eps)?;
    let det = location_cost(query.location, target.location, opts.mode, opts.normalize)?;
    Ok(opts.weights.cls * cls + opts.weights.seg * seg + opts.weights.det * det)
}

/// Probability-weighted mass center `[x, y]` of a soft mask, or `None` when
/// the mask is all zero.
pub fn mass_center(mask: ArrayView2<'_, f32>) -> Option<[f64; 2]> {
    let mut total = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for ((r, c), &v) in mask.indexed_iter() {
        let v = v as f64;
        total += v;
        sx += v * c as f64;
        sy += v * r as f64;
    }
    (total > 0.0).then(|| [sx / total, sy / total])
}

pub fn binary_mass_center(mask: ArrayView2<'_, bool>) -> Option<[f64; 2]> {
    mass_center(mask.mapv(|b| b as u8 as f32).view())
}

/// Tight `[x0, y0, x1, y1]` box around the true pixels.
pub fn bounding_box(mask: ArrayView2<'_, bool>) -> Option<[f64; 4]> {
    let mut bounds: Option<[usize; 4]> = None;
    for ((r, c), _) in mask.indexed_iter().filter(|(_, &b)| b) {
        let b = bounds.get_or_insert([c, r, c, r]);
        b[0] = b[0].min(c);
        b[1] = b[1].min(r);
        b[2] = b[2].max(c);
        b[3] = b[3].max(r);
    }
    bounds.map(|[x0, y0, x1, y1]| [x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64])
}

/// Thing-side assignment plus the fixed stuff bindings of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoupledAssignment {
    pub things: Assignment,
    /// `(query_index, category)` for stuff queries whose category is present.
    pub stuff: Vec<(u32, CategoryId)>,
    pub unmatched_stuff: Vec<u32>,
}

/// Thing queries are matched by [`hungarian`]; each stuff query is bound to
/// its fixed category when that category appears in the ground truth.
pub fn decoupled_assign(
    things: &CostMatrix,
    stuff_queries: &[Provenance],
    gt_stuff_present: &BTreeSet<CategoryId>,
) -> Result<DecoupledAssignment> {
    let mut by_category: BTreeMap<CategoryId, u32> = BTreeMap::new();
    for prov in stuff_queries {
        let cat = match (prov.is_thing, prov.fixed_category) {
            (false, Some(c)) => c,
            _ => {
                return Err(Error::Provenance {
                    query: prov.query_index,
                    reason: "stuff query list must hold class-fixed stuff queries".into(),
                })
            }
        };
        if by_category.insert(cat, prov.query_index).is_some() {
            return Err(Error::Provenance { query: prov.query_index, reason: format!("duplicate stuff category {cat}") });
        }
    }

    let things = if things.cols() == 0 {
        Assignment::new(Vec::new(), things.rows())
    } else {
        hungarian(things)?
    };

    let mut stuff = Vec::new();
    let mut unmatched_stuff = Vec::new();
    for prov in stuff_queries {
        let cat = prov.fixed_category.expect("checked above");
        if gt_stuff_present.contains(&cat) {
            stuff.push((prov.query_index, cat));
        } else {
            unmatched_stuff.push(prov.query_index);
        }
    }
    Ok(DecoupledAssignment { things, stuff, unmatched_stuff })
}
