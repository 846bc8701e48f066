//! Forward values of the classification, segmentation and aggregate training
//! losses. The same functions serve as bipartite matching costs.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::error::{Error, Result};
use crate::types::{PanopticMap, Taxonomy};

/// Floor applied inside logarithms.
const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 0.25 }
    }
}

/// Sigmoid focal loss summed over classes. `target` is the column of the
/// positive class, or `None` for a query assigned to no object.
pub fn focal_loss(pred: &[f64], target: Option<usize>, params: &FocalParams) -> Result<f64> {
    if let Some(t) = target {
        if t >= pred.len() {
            return Err(Error::CategoryIndex { index: t, classes: pred.len() });
        }
    }
    let mut total = 0.0;
    for (j, &p) in pred.iter().enumerate() {
        let positive = target == Some(j);
        let (p_t, alpha_t) = if positive { (p, params.alpha) } else { (1.0 - p, 1.0 - params.alpha) };
        let p_t = p_t.clamp(0.0, 1.0);
        let modulator = if params.gamma == 0.0 { 1.0 } else { (1.0 - p_t).powf(params.gamma) };
        total += -alpha_t * modulator * p_t.max(LOG_EPS).ln();
    }
    Ok(total)
}

fn check_shapes<P>(pred: &ArrayView2<'_, P>, gt: &ArrayView2<'_, bool>) -> Result<()> {
    if pred.dim() != gt.dim() {
        return Err(Error::Dimension(format!("prediction is {:?} but target is {:?}", pred.dim(), gt.dim())));
    }
    Ok(())
}

/// Default smoothing term of the dice loss.
pub const DICE_EPS: f64 = 1.0;

/// `1 - (2·Σ p·g + eps) / (Σ p + Σ g + eps)`.
pub fn dice_loss<P: Copy + Into<f64>>(pred: ArrayView2<'_, P>, gt: ArrayView2<'_, bool>, eps: f64) -> Result<f64> {
    check_shapes(&pred, &gt)?;
    let (inter, sum_p, sum_g) = dice_sums(&pred, &gt);
    Ok(1.0 - (2.0 * inter + eps) / (sum_p + sum_g + eps))
}

fn dice_sums<P: Copy + Into<f64>>(pred: &ArrayView2<'_, P>, gt: &ArrayView2<'_, bool>) -> (f64, f64, f64) {
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_g = 0.0;
    Zip::from(pred).and(gt).for_each(|&p, &g| {
        let p: f64 = p.into();
        sum_p += p;
        if g {
            inter += p;
            sum_g += 1.0;
        }
    });
    (inter, sum_p, sum_g)
}

/// Analytic partial derivatives of [`dice_loss`] with respect to every
/// prediction pixel.
pub fn dice_loss_grad<P: Copy + Into<f64>>(pred: ArrayView2<'_, P>, gt: ArrayView2<'_, bool>, eps: f64) -> Result<Array2<f64>> {
    check_shapes(&pred, &gt)?;
    let (inter, sum_p, sum_g) = dice_sums(&pred, &gt);
    let denom = sum_p + sum_g + eps;
    let numer = 2.0 * inter + eps;
    Ok(gt.mapv(|g| {
        let dnumer = if g { 2.0 } else { 0.0 };
        -(dnumer * denom - numer) / (denom * denom)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub seg: f64,
    pub det: f64,
    /// Number of decoder layers receiving supervision.
    pub layers: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 2.0, seg: 1.0, det: 1.0, layers: 6 }
    }
}

impl LossWeights {
    pub fn new(cls: f64, seg: f64, det: f64, layers: usize) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Param("at least one supervised layer is required".into()));
        }
        if [cls, seg, det].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Param(format!("loss weights must be finite and >= 0, got ({cls}, {seg}, {det})")));
        }
        Ok(Self { cls, seg, det, layers })
    }
}

/// `λ_det·det + Σ_layers (λ_cls·cls + λ_seg·seg)`. Pass `det_loss = None` for
/// the stuff loss, which carries no detection term.
pub fn deep_supervised_loss(per_layer: &[(f64, f64)], det_loss: Option<f64>, weights: &LossWeights) -> Result<f64> {
    if per_layer.len() != weights.layers {
        return Err(Error::LayerCount { expected: weights.layers, got: per_layer.len() });
    }
    let layers: f64 = per_layer.iter().map(|&(cls, seg)| weights.cls * cls + weights.seg * seg).sum();
    Ok(det_loss.map_or(0.0, |d| weights.det * d) + layers)
}

/// What the things/stuff balance is proportional to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProportionBase {
    #[default]
    Pixels,
    Instances,
}

/// `(λ_things, λ_stuff)` proportional to the given amounts and summing to 1.
pub fn dynamic_lambda(things: u64, stuff: u64) -> Result<(f64, f64)> {
    let total = things + stuff;
    if total == 0 {
        return Err(Error::Param("image has neither thing nor stuff ground truth".into()));
    }
    let t = things as f64 / total as f64;
    Ok((t, 1.0 - t))
}

/// [`dynamic_lambda`] computed from a ground-truth map.
pub fn dynamic_lambda_for(gt: &PanopticMap, taxonomy: &Taxonomy, base: ProportionBase) -> Result<(f64, f64)> {
    let mut things = 0u64;
    let mut stuff = 0u64;
    match base {
        ProportionBase::Pixels => {
            for &c in gt.sem().iter().filter(|&&c| c != 0) {
                match taxonomy.is_thing(c) {
                    Some(true) => things += 1,
                    Some(false) => stuff += 1,
                    None => return Err(Error::UnknownCategory(c)),
                }
            }
        }
        ProportionBase::Instances => {
            for seg in gt.segments() {
                match taxonomy.is_thing(seg.category_id) {
                    Some(true) => things += 1,
                    Some(false) => stuff += 1,
                    None => return Err(Error::UnknownCategory(seg.category_id)),
                }
            }
        }
    }
    dynamic_lambda(things, stuff)
}

/// `λ_things·L_things + λ_stuff·L_stuff`.
pub fn total_loss(lambdas: (f64, f64), things_loss: f64, stuff_loss: f64) -> f64 {
    lambdas.0 * things_loss + lambdas.1 * stuff_loss
}

/// Segmentation-loss weight per query: 1 when matched, 0 when assigned ∅.
pub fn masked_seg_weight(assignment: &Assignment) -> Vec<f64> {
    let mut weights = vec![0.0; assignment.query_count()];
    for &(q, _) in &assignment.pairs {
        weights[q] = 1.0;
    }
    weights
}
