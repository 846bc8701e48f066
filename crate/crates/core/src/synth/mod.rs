//! Deterministic synthetic scenes and the brute-force oracles used to check
//! the merging and assignment routines.

pub mod oracle;
pub mod rng;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    validate_stack, CategoryId, MaskStack, PanopticMap, Provenance, Segment, Taxonomy, ValidatedStack,
};
use rng::XorShift64Star;

pub use oracle::{oracle_assignment, oracle_merge};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_things: usize,
    /// Horizontal stuff bands; zero leaves the background void.
    pub stuff_bands: usize,
    pub noise_sigma: f64,
    /// Probability that a thing is placed over the shared scene anchor.
    /// At 1.0 every pair of things overlaps.
    pub overlap_bias: f64,
    /// Low-confidence thing predictions with no ground-truth counterpart.
    pub n_distractors: usize,
    /// When set, distractors are added until the stack holds this many masks.
    pub pad_to: Option<usize>,
    /// Thing side-length range in pixels. Defaults to
    /// `[max(2, min(H, W) / 8), max(2, min(H, W) / 2)]`.
    pub min_thing_size: Option<usize>,
    pub max_thing_size: Option<usize>,
    /// Range of the true-class probability given to matched predictions.
    pub class_prob_range: [f64; 2],
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            n_things: 4,
            stuff_bands: 2,
            noise_sigma: 0.1,
            overlap_bias: 0.3,
            n_distractors: 1,
            pad_to: None,
            min_thing_size: None,
            max_thing_size: None,
            class_prob_range: [0.7, 0.98],
        }
    }
}

impl SceneParams {
    fn thing_size_range(&self) -> (usize, usize) {
        let side = self.height.min(self.width);
        let lo = self.min_thing_size.unwrap_or((side / 8).max(2));
        let hi = self.max_thing_size.unwrap_or((side / 2).max(2));
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Geometry(format!("image size {}x{} is empty", self.height, self.width)));
        }
        let (lo, hi) = self.thing_size_range();
        if lo == 0 || lo > hi {
            return Err(Error::Geometry(format!("thing size range [{lo}, {hi}] is empty")));
        }
        if hi > self.height.min(self.width) {
            return Err(Error::Geometry(format!(
                "things up to {hi} px do not fit a {}x{} image",
                self.height, self.width
            )));
        }
        if self.stuff_bands > self.height {
            return Err(Error::Geometry(format!("{} stuff bands exceed {} rows", self.stuff_bands, self.height)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Param(format!("noise sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        let [plo, phi] = self.class_prob_range;
        if !(0.0 < plo && plo <= phi && phi <= 1.0) {
            return Err(Error::Param(format!("class probability range [{plo}, {phi}] is not within (0, 1]")));
        }
        if !(0.0..=1.0).contains(&self.overlap_bias) {
            return Err(Error::Param(format!("overlap bias must lie in [0, 1], got {}", self.overlap_bias)));
        }
        Ok(())
    }
}

/// Seed of image `index` in a set generated from `base`.
pub fn image_seed(base: u64, index: u64) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// Axis-aligned rectangle or inscribed ellipse covering `[x0, x0+w) × [y0, y0+h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Shape {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.w || y >= self.y0 + self.h {
            return false;
        }
        match self.kind {
            ShapeKind::Rect => true,
            ShapeKind::Ellipse => {
                let dx = (x as f64 + 0.5 - (self.x0 as f64 + self.w as f64 / 2.0)) / (self.w as f64 / 2.0);
                let dy = (y as f64 + 0.5 - (self.y0 as f64 + self.h as f64 / 2.0)) / (self.h as f64 / 2.0);
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y0 + self.h)
            .flat_map(move |y| (self.x0..self.x0 + self.w).map(move |x| (x, y)))
            .filter(move |&(x, y)| self.contains(x, y))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gt: PanopticMap,
    pub stack: ValidatedStack,
    /// Full (unoccluded) footprint of every generated thing, in paint order.
    pub things: Vec<Shape>,
}

/// Integer top-left coordinate range that keeps a segment of length `len`
/// inside `[0, extent)` and places `anchor` within its middle half.
fn anchored_start(rng: &mut XorShift64Star, anchor: usize, len: usize, extent: usize, central: bool) -> Option<usize> {
    let (lo, hi) = if central {
        let c = anchor as f64 + 0.5 - len as f64 / 2.0;
        ((c - len as f64 / 4.0).ceil().max(0.0), (c + len as f64 / 4.0).floor().min((extent - len) as f64))
    } else {
        ((anchor as f64 - len as f64 + 1.0).max(0.0), (anchor as f64).min((extent - len) as f64))
    };
    (lo <= hi).then(|| rng.range_inclusive(lo as usize, hi as usize))
}

fn random_shape(
    rng: &mut XorShift64Star,
    params: &SceneParams,
    anchor: Option<(usize, usize)>,
) -> Shape {
    let (lo, hi) = params.thing_size_range();
    let mut kind = if rng.next_f64() < 0.5 { ShapeKind::Rect } else { ShapeKind::Ellipse };
    let w = rng.range_inclusive(lo, hi);
    let h = rng.range_inclusive(lo, hi);
    let (x0, y0) = match anchor {
        None => (rng.range_inclusive(0, params.width - w), rng.range_inclusive(0, params.height - h)),
        Some((ax, ay)) => {
            let central = kind == ShapeKind::Ellipse;
            let x = anchored_start(rng, ax, w, params.width, central);
            let y = anchored_start(rng, ay, h, params.height, central);
            match (x, y) {
                (Some(x), Some(y)) => (x, y),
                _ => {
                    kind = ShapeKind::Rect;
                    (
                        anchored_start(rng, ax, w, params.width, false).expect("anchor fits"),
                        anchored_start(rng, ay, h, params.height, false).expect("anchor fits"),
                    )
                }
            }
        }
    };
    Shape { kind, x0, y0, w, h }
}

/// Class-probability row peaked on `column` with value `p`, other thing
/// columns strictly below it and stuff columns zero.
fn thing_probs(rng: &mut XorShift64Star, taxonomy: &Taxonomy, column: usize, p: f64) -> Vec<f32> {
    taxonomy
        .categories()
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if j == column {
                p as f32
            } else if c.is_thing {
                rng.uniform(0.0, p.min(1.0 - p) * 0.9) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Writes `base * footprint + noise`, clamped to [0, 1], in row-major order.
fn soft_mask(rng: &mut XorShift64Star, footprint: &[bool], base: f64, sigma: f64, out: &mut [f32]) {
    for (o, &inside) in out.iter_mut().zip(footprint) {
        let v = if inside { base } else { 0.0 };
        *o = if sigma > 0.0 { (v + sigma * rng.noise()).clamp(0.0, 1.0) as f32 } else { v as f32 };
    }
}

/// Generates ground truth over horizontal stuff bands with overlapping thing
/// rectangles and ellipses, plus a prediction stack holding one noisy soft
/// mask per ground-truth segment, optional distractors, and one class-fixed
/// query per stuff category present.
///
/// Stack order is thing predictions, distractors, stuff predictions. Stuff
/// queries are numbered after all thing queries, in taxonomy order.
pub fn generate_scene(params: &SceneParams, taxonomy: &Taxonomy) -> Result<Scene> {
    params.validate()?;
    let (hgt, wid) = (params.height, params.width);
    let thing_cats: Vec<(usize, CategoryId)> =
        taxonomy.categories().iter().enumerate().filter(|(_, c)| c.is_thing).map(|(j, c)| (j, c.id)).collect();
    let stuff_cats: Vec<CategoryId> = taxonomy.stuff().map(|c| c.id).collect();
    if (params.n_things > 0 || params.n_distractors > 0 || params.pad_to.is_some()) && thing_cats.is_empty() {
        return Err(Error::Taxonomy("scene needs thing categories".into()));
    }
    if params.stuff_bands > 0 && stuff_cats.is_empty() {
        return Err(Error::Taxonomy("scene needs stuff categories for its bands".into()));
    }

    let mut rng = XorShift64Star::new(params.seed);

    // Ground-truth owner per pixel: stuff category or thing index.
    #[derive(Clone, Copy, PartialEq)]
    enum Owner {
        Void,
        Stuff(CategoryId),
        Thing(usize),
    }
    let mut owner = Array2::from_elem((hgt, wid), Owner::Void);
    if params.stuff_bands > 0 {
        let offset = rng.below(stuff_cats.len() as u64) as usize;
        for b in 0..params.stuff_bands {
            let cat = stuff_cats[(b + offset) % stuff_cats.len()];
            let (r0, r1) = (b * hgt / params.stuff_bands, (b + 1) * hgt / params.stuff_bands);
            owner.slice_mut(ndarray::s![r0..r1, ..]).fill(Owner::Stuff(cat));
        }
    }

    let anchor = (
        rng.range_inclusive(wid / 4, (3 * wid / 4).saturating_sub(1).max(wid / 4)),
        rng.range_inclusive(hgt / 4, (3 * hgt / 4).saturating_sub(1).max(hgt / 4)),
    );
    let mut things = Vec::with_capacity(params.n_things);
    let mut thing_class = Vec::with_capacity(params.n_things);
    for t in 0..params.n_things {
        let (col, cat) = thing_cats[rng.below(thing_cats.len() as u64) as usize];
        let anchored = rng.next_f64() < params.overlap_bias;
        let shape = random_shape(&mut rng, params, anchored.then_some(anchor));
        for (x, y) in shape.pixels() {
            owner[[y, x]] = Owner::Thing(t);
        }
        things.push(shape);
        thing_class.push((col, cat));
    }

    // Segments: visible things in paint order, then stuff in taxonomy order.
    let mut segment_owner: Vec<Owner> = (0..params.n_things).map(Owner::Thing).collect();
    segment_owner.extend(stuff_cats.iter().map(|&c| Owner::Stuff(c)));
    let mut segments = Vec::new();
    let mut footprints = Vec::new();
    for o in segment_owner {
        let fp = owner.mapv(|p| p == o);
        if !fp.iter().any(|&b| b) {
            continue;
        }
        let category = match o {
            Owner::Thing(t) => thing_class[t].1,
            Owner::Stuff(c) => c,
            Owner::Void => unreachable!(),
        };
        segments.push((o, category));
        footprints.push(fp);
    }

    let mut sem = Array2::zeros((hgt, wid));
    let mut ids = Array2::zeros((hgt, wid));
    let mut gt_segments = Vec::new();
    for (k, ((_, cat), fp)) in segments.iter().zip(&footprints).enumerate() {
        let id = k as u32 + 1;
        ndarray::Zip::from(&mut sem).and(&mut ids).and(fp).for_each(|s, i, &inside| {
            if inside {
                *s = *cat;
                *i = id;
            }
        });
        gt_segments.push(Segment { instance_id: id, category_id: *cat, source_query: None, score: None });
    }
    let gt = PanopticMap::new(sem, ids, gt_segments)?;

    let n_thing_preds = segments.iter().filter(|(o, _)| matches!(o, Owner::Thing(_))).count();
    let n_stuff_preds = segments.len() - n_thing_preds;
    let n_distractors = match params.pad_to {
        Some(target) => params.n_distractors.max(target.saturating_sub(segments.len())),
        None => params.n_distractors,
    };
    let n_thing_queries = n_thing_preds + n_distractors;
    let total = segments.len() + n_distractors;

    // Masks are drawn in segment order, then distractors, but stored in stack order.
    let mut masks = Array3::<f32>::zeros((total, hgt, wid));
    let mut probs = Array2::<f32>::zeros((total, taxonomy.len()));
    let mut provenance = vec![Provenance::thing(0); total];
    let mut draw = |i: usize, rng: &mut XorShift64Star, fp: &[bool], base: f64| {
        let out = masks.index_axis_mut(Axis(0), i).into_slice().expect("fresh array is contiguous");
        soft_mask(rng, fp, base, params.noise_sigma, out);
    };

    let mut thing_slot = 0usize;
    let mut stuff_slot = 0usize;
    for ((o, cat), fp) in segments.iter().zip(&footprints) {
        let fp = fp.as_slice().expect("mapv output is contiguous");
        let base = rng.uniform(0.7, 1.0);
        let p = rng.uniform(params.class_prob_range[0], params.class_prob_range[1]);
        match o {
            Owner::Thing(t) => {
                draw(thing_slot, &mut rng, fp, base);
                let row = thing_probs(&mut rng, taxonomy, thing_class[*t].0, p);
                probs.row_mut(thing_slot).assign(&ndarray::Array1::from(row));
                provenance[thing_slot] = Provenance::thing(thing_slot as u32);
                thing_slot += 1;
            }
            Owner::Stuff(c) => {
                let col = taxonomy.column_of(*cat).expect("stuff category in taxonomy");
                let mut row = vec![0.0f32; taxonomy.len()];
                row[col] = p as f32;
                let rank = stuff_cats.iter().position(|s| s == c).expect("stuff category listed");
                let i = n_thing_queries + stuff_slot;
                draw(i, &mut rng, fp, base);
                probs.row_mut(i).assign(&ndarray::Array1::from(row));
                provenance[i] = Provenance::stuff((n_thing_queries + rank) as u32, *c);
                stuff_slot += 1;
            }
            Owner::Void => unreachable!(),
        }
    }
    debug_assert_eq!(stuff_slot, n_stuff_preds);

    let mut fp = vec![false; hgt * wid];
    for d in 0..n_distractors {
        let shape = random_shape(&mut rng, params, None);
        let (col, _) = thing_cats[rng.below(thing_cats.len() as u64) as usize];
        let base = rng.uniform(0.6, 0.95);
        let p = rng.uniform(0.05, 0.2);
        fp.fill(false);
        for (x, y) in shape.pixels() {
            fp[y * wid + x] = true;
        }
        let q = n_thing_preds + d;
        draw(q, &mut rng, &fp, base);
        let row = thing_probs(&mut rng, taxonomy, col, p);
        probs.row_mut(q).assign(&ndarray::Array1::from(row));
        provenance[q] = Provenance::thing(q as u32);
    }

    let stack = validate_stack(MaskStack::new(masks, probs, provenance)?, taxonomy)?;
    Ok(Scene { gt, stack, things })
}
