#![allow(dead_code)]

use ndarray::{Array2, Array3};
use panoptic_core::synth::rng::XorShift64Star;
use panoptic_core::{validate_stack, MaskStack, PanopticMap, Provenance, Taxonomy, ValidatedStack};

/// Random stack over the synthetic taxonomy. With `quantized`, mask values
/// and probabilities come from small grids so that equal confidences occur.
pub fn random_stack(rng: &mut XorShift64Star, h: usize, w: usize, n: usize, quantized: bool) -> ValidatedStack {
    let tax = Taxonomy::synthetic_default();
    let thing_cols: Vec<usize> = (0..tax.len()).filter(|&j| tax.categories()[j].is_thing).collect();
    let stuff_ids: Vec<u32> = tax.stuff().map(|c| c.id).collect();
    let mut masks = Array3::<f32>::zeros((n, h, w));
    let mut probs = Array2::<f32>::zeros((n, tax.len()));
    let mut prov = Vec::with_capacity(n);
    let mut used_stuff = Vec::new();
    for i in 0..n {
        let (y0, x0) = (rng.below(h as u64) as usize, rng.below(w as u64) as usize);
        let (y1, x1) = (rng.range_inclusive(y0, h - 1), rng.range_inclusive(x0, w - 1));
        for y in 0..h {
            for x in 0..w {
                let inside = (y0..=y1).contains(&y) && (x0..=x1).contains(&x);
                masks[[i, y, x]] = if quantized {
                    let grid = [0.2f32, 0.6, 0.8, 1.0];
                    if inside { grid[1 + rng.below(3) as usize] } else { grid[0] }
                } else if inside || rng.next_f64() < 0.15 {
                    rng.uniform(0.0, 1.0) as f32
                } else {
                    rng.uniform(0.0, 0.5) as f32
                };
            }
        }
        let draw = |rng: &mut XorShift64Star| -> f32 {
            if quantized {
                [0.3f32, 0.5, 0.9][rng.below(3) as usize]
            } else {
                rng.uniform(0.05, 1.0) as f32
            }
        };
        let stuff_left: Vec<u32> = stuff_ids.iter().copied().filter(|c| !used_stuff.contains(c)).collect();
        if !stuff_left.is_empty() && rng.next_f64() < 0.3 {
            let cat = stuff_left[rng.below(stuff_left.len() as u64) as usize];
            used_stuff.push(cat);
            probs[[i, tax.column_of(cat).unwrap()]] = draw(rng);
            prov.push(Provenance::stuff(100 + cat, cat));
        } else {
            for &j in &thing_cols {
                probs[[i, j]] = draw(rng) * rng.uniform(0.2, 1.0) as f32;
            }
            let j = thing_cols[rng.below(thing_cols.len() as u64) as usize];
            probs[[i, j]] = draw(rng);
            prov.push(Provenance::thing(i as u32));
        }
    }
    validate_stack(MaskStack::new(masks, probs, prov).unwrap(), &tax).unwrap()
}

/// Per-pixel source query, `None` on void.
pub fn query_map(map: &PanopticMap) -> Array2<Option<u32>> {
    map.ids().mapv(|id| map.segment(id).and_then(|s| s.source_query))
}
