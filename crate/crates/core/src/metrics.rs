//! Panoptic quality (PQ = SQ × RQ) and per-query thing-preference
//! diagnostics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{CategoryId, InstanceId, PanopticMap, Taxonomy};

/// Version tag written into serialized reports.
pub const PQ_REPORT_SCHEMA: &str = "pq-report/1";
pub const QUERY_STATS_SCHEMA: &str = "query-stats/1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Unmatched predictions lying mostly (> 50%) on ground-truth void are
    /// not counted as false positives.
    pub ignore_void_fp: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { ignore_void_fp: true }
    }
}

/// Pixel overlap bookkeeping between a prediction and a ground truth.
struct Overlaps {
    pred_area: HashMap<InstanceId, u64>,
    gt_area: HashMap<InstanceId, u64>,
    /// Keyed by `(gt_id, pred_id)`; `gt_id == 0` is ground-truth void.
    inter: HashMap<(InstanceId, InstanceId), u64>,
}

impl Overlaps {
    fn compute(pred: &PanopticMap, gt: &PanopticMap) -> Result<Self> {
        if pred.ids().dim() != gt.ids().dim() {
            return Err(Error::Dimension(format!(
                "prediction is {:?} but ground truth is {:?}",
                pred.ids().dim(),
                gt.ids().dim()
            )));
        }
        let mut pred_area = HashMap::new();
        let mut gt_area = HashMap::new();
        let mut inter = HashMap::new();
        for (&p, &g) in pred.ids().iter().zip(gt.ids().iter()) {
            if p != 0 {
                *pred_area.entry(p).or_insert(0) += 1;
                *inter.entry((g, p)).or_insert(0) += 1;
            }
            if g != 0 {
                *gt_area.entry(g).or_insert(0) += 1;
            }
        }
        Ok(Self { pred_area, gt_area, inter })
    }

    /// IoU with prediction pixels over ground-truth void left out of the union.
    fn iou(&self, gt_id: InstanceId, pred_id: InstanceId) -> f64 {
        let inter = self.inter.get(&(gt_id, pred_id)).copied().unwrap_or(0);
        if inter == 0 {
            return 0.0;
        }
        let void = self.inter.get(&(0, pred_id)).copied().unwrap_or(0);
        let union = self.pred_area[&pred_id] + self.gt_area[&gt_id] - inter - void;
        inter as f64 / union as f64
    }

    fn void_fraction(&self, pred_id: InstanceId) -> f64 {
        let void = self.inter.get(&(0, pred_id)).copied().unwrap_or(0);
        void as f64 / self.pred_area[&pred_id] as f64
    }
}

/// Same-category `(gt, pred, iou)` pairs with IoU > 0.5.
fn matched_pairs(pred: &PanopticMap, gt: &PanopticMap, ov: &Overlaps) -> Vec<(InstanceId, InstanceId, f64)> {
    let pred_cat: HashMap<InstanceId, CategoryId> = pred.segments().iter().map(|s| (s.instance_id, s.category_id)).collect();
    let gt_cat: HashMap<InstanceId, CategoryId> = gt.segments().iter().map(|s| (s.instance_id, s.category_id)).collect();
    let mut pairs = Vec::new();
    for &(g, p) in ov.inter.keys() {
        if g == 0 || gt_cat[&g] != pred_cat[&p] {
            continue;
        }
        let iou = ov.iou(g, p);
        if iou > 0.5 {
            pairs.push((g, p, iou));
        }
    }
    pairs.sort_by_key(|&(g, p, _)| (g, p));
    // IoU > 0.5 with non-overlapping segments admits at most one partner.
    let mut seen_pred = std::collections::HashSet::new();
    let mut seen_gt = std::collections::HashSet::new();
    for &(g, p, _) in &pairs {
        assert!(seen_pred.insert(p), "prediction {p} matched twice");
        assert!(seen_gt.insert(g), "ground truth {g} matched twice");
    }
    pairs
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub iou_sum: f64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl CategoryCounts {
    fn merge(&mut self, o: &CategoryCounts) {
        self.iou_sum += o.iou_sum;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    fn present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    /// `(pq, sq, rq)`; SQ is 0 when there is no true positive.
    pub fn quality(&self) -> (f64, f64, f64) {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        if denom == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let sq = if self.tp > 0 { self.iou_sum / self.tp as f64 } else { 0.0 };
        let rq = self.tp as f64 / denom;
        (self.iou_sum / denom, sq, rq)
    }
}

/// Per-category counts that can be folded across images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PqAccumulator {
    per_category: BTreeMap<CategoryId, CategoryCounts>,
}

impl PqAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_image(&mut self, pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy, opts: &EvalOptions) -> Result<()> {
        for seg in pred.segments().iter().chain(gt.segments()) {
            if taxonomy.get(seg.category_id).is_none() {
                return Err(Error::UnknownCategory(seg.category_id));
            }
        }
        let ov = Overlaps::compute(pred, gt)?;
        let pairs = matched_pairs(pred, gt, &ov);
        let matched_gt: std::collections::HashSet<_> = pairs.iter().map(|&(g, _, _)| g).collect();
        let matched_pred: std::collections::HashSet<_> = pairs.iter().map(|&(_, p, _)| p).collect();

        for &(g, _, iou) in &pairs {
            let cat = gt.segment(g).expect("matched id has a segment").category_id;
            let c = self.per_category.entry(cat).or_default();
            c.tp += 1;
            c.iou_sum += iou;
        }
        for seg in gt.segments() {
            if !matched_gt.contains(&seg.instance_id) {
                self.per_category.entry(seg.category_id).or_default().fn_ += 1;
            }
        }
        for seg in pred.segments() {
            if matched_pred.contains(&seg.instance_id) {
                continue;
            }
            if opts.ignore_void_fp && ov.void_fraction(seg.instance_id) > 0.5 {
                continue;
            }
            self.per_category.entry(seg.category_id).or_default().fp += 1;
        }
        Ok(())
    }

    /// Associative, commutative merge of two accumulators.
    pub fn merge(&mut self, other: &PqAccumulator) {
        for (cat, counts) in &other.per_category {
            self.per_category.entry(*cat).or_default().merge(counts);
        }
    }

    pub fn report(&self, taxonomy: &Taxonomy) -> PqReport {
        let mut rows = BTreeMap::new();
        for (&cat, counts) in self.per_category.iter().filter(|(_, c)| c.present()) {
            let (pq, sq, rq) = counts.quality();
            let is_thing = taxonomy.is_thing(cat).unwrap_or(true);
            rows.insert(cat, CategoryRow { counts: *counts, is_thing, pq, sq, rq });
        }
        let summary = |filter: &dyn Fn(&CategoryRow) -> bool| {
            let sel: Vec<&CategoryRow> = rows.values().filter(|r| filter(r)).collect();
            let n = sel.len();
            if n == 0 {
                return Summary { pq: 0.0, sq: 0.0, rq: 0.0, n: 0 };
            }
            let mean = |f: fn(&CategoryRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n as f64;
            Summary { pq: mean(|r| r.pq), sq: mean(|r| r.sq), rq: mean(|r| r.rq), n }
        };
        PqReport {
            schema: PQ_REPORT_SCHEMA.to_owned(),
            all: summary(&|_| true),
            things: summary(&|r| r.is_thing),
            stuff: summary(&|r| !r.is_thing),
            per_category: rows,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    #[serde(flatten)]
    pub counts: CategoryCounts,
    pub is_thing: bool,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    /// Number of categories averaged.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PqReport {
    pub schema: String,
    pub all: Summary,
    pub things: Summary,
    pub stuff: Summary,
    pub per_category: BTreeMap<CategoryId, CategoryRow>,
}

pub fn pq(pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy) -> Result<PqReport> {
    pq_with(pred, gt, taxonomy, &EvalOptions::default())
}

pub fn pq_with(pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy, opts: &EvalOptions) -> Result<PqReport> {
    let mut acc = PqAccumulator::new();
    acc.add_image(pred, gt, taxonomy, opts)?;
    Ok(acc.report(taxonomy))
}

/// Output counts of a single query, split by thing and stuff predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub n_things: u64,
    pub n_stuff: u64,
    pub thing_tp: u64,
    pub thing_fp: u64,
    pub stuff_tp: u64,
    pub stuff_fp: u64,
}

impl QueryRecord {
    /// Share of this query's outputs that are things, if it emitted any.
    pub fn thing_preference(&self) -> Option<f64> {
        let total = self.n_things + self.n_stuff;
        (total > 0).then(|| self.n_things as f64 / total as f64)
    }

    /// Decile of the thing preference, computed exactly on integers.
    pub fn decile(&self) -> Option<usize> {
        let total = self.n_things + self.n_stuff;
        (total > 0).then(|| ((10 * self.n_things / total) as usize).min(9))
    }

    fn merge(&mut self, o: &QueryRecord) {
        self.n_things += o.n_things;
        self.n_stuff += o.n_stuff;
        self.thing_tp += o.thing_tp;
        self.thing_fp += o.thing_fp;
        self.stuff_tp += o.stuff_tp;
        self.stuff_fp += o.stuff_fp;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub per_query: BTreeMap<u32, QueryRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileRow {
    pub lower: f64,
    pub upper: f64,
    pub queries: usize,
    pub stuff_tp: u64,
    pub stuff_total: u64,
    pub stuff_precision: Option<f64>,
    pub thing_tp: u64,
    pub thing_total: u64,
    pub thing_precision: Option<f64>,
}

impl DecileRow {
    fn empty(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            queries: 0,
            stuff_tp: 0,
            stuff_total: 0,
            stuff_precision: None,
            thing_tp: 0,
            thing_total: 0,
            thing_precision: None,
        }
    }

    fn add(&mut self, r: &QueryRecord) {
        self.queries += 1;
        self.stuff_tp += r.stuff_tp;
        self.stuff_total += r.stuff_tp + r.stuff_fp;
        self.thing_tp += r.thing_tp;
        self.thing_total += r.thing_tp + r.thing_fp;
    }

    fn finish(&mut self) {
        let ratio = |tp: u64, total: u64| (total > 0).then(|| tp as f64 / total as f64);
        self.stuff_precision = ratio(self.stuff_tp, self.stuff_total);
        self.thing_precision = ratio(self.thing_tp, self.thing_total);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileTable {
    pub schema: String,
    /// Bins `[0.0, 0.1)`, ..., `[0.9, 1.0]`.
    pub rows: Vec<DecileRow>,
    pub total: DecileRow,
}

impl QueryStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Counts every predicted segment against its source query. A segment is
    /// a true positive when it takes a still-unmatched ground-truth segment
    /// of the same category with IoU > 0.5, matching greedily by IoU.
    pub fn add_image(&mut self, pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy) -> Result<()> {
        let ov = Overlaps::compute(pred, gt)?;
        let gt_cat: HashMap<InstanceId, CategoryId> = gt.segments().iter().map(|s| (s.instance_id, s.category_id)).collect();

        let mut candidates: Vec<(f64, InstanceId, InstanceId)> = Vec::new();
        for seg in pred.segments() {
            for (&(g, p), _) in ov.inter.iter().filter(|((g, p), _)| *p == seg.instance_id && *g != 0) {
                if gt_cat[&g] == seg.category_id {
                    let iou = ov.iou(g, p);
                    if iou > 0.5 {
                        candidates.push((iou, g, p));
                    }
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_gt = std::collections::HashSet::new();
        let mut tp_pred = std::collections::HashSet::new();
        for (_, g, p) in candidates {
            if !tp_pred.contains(&p) && used_gt.insert(g) {
                tp_pred.insert(p);
            }
        }

        for seg in pred.segments() {
            let query = seg.source_query.ok_or_else(|| Error::Provenance {
                query: seg.instance_id,
                reason: "segment has no source query".into(),
            })?;
            let is_thing = taxonomy.is_thing(seg.category_id).ok_or(Error::UnknownCategory(seg.category_id))?;
            let tp = tp_pred.contains(&seg.instance_id);
            let rec = self.per_query.entry(query).or_default();
            match (is_thing, tp) {
                (true, true) => rec.thing_tp += 1,
                (true, false) => rec.thing_fp += 1,
                (false, true) => rec.stuff_tp += 1,
                (false, false) => rec.stuff_fp += 1,
            }
            if is_thing {
                rec.n_things += 1;
            } else {
                rec.n_stuff += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &QueryStats) {
        for (q, r) in &other.per_query {
            self.per_query.entry(*q).or_default().merge(r);
        }
    }

    pub fn decile_table(&self) -> DecileTable {
        let mut rows: Vec<DecileRow> = (0..10).map(|i| DecileRow::empty(i as f64 / 10.0, (i + 1) as f64 / 10.0)).collect();
        let mut total = DecileRow::empty(0.0, 1.0);
        for rec in self.per_query.values() {
            if let Some(bin) = rec.decile() {
                rows[bin].add(rec);
                total.add(rec);
            }
        }
        rows.iter_mut().for_each(DecileRow::finish);
        total.finish();
        DecileTable { schema: QUERY_STATS_SCHEMA.to_owned(), rows, total }
    }
}

pub fn query_stats(pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy) -> Result<QueryStats> {
    let mut stats = QueryStats::new();
    stats.add_image(pred, gt, taxonomy)?;
    Ok(stats)
}
