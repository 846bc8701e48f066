//! Slow reference implementations kept deliberately naive.

use std::collections::HashSet;

use crate::assignment::{Assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::merging::MergeParams;
use crate::types::{PanopticMap, Segment, ValidatedStack};

/// Reference mask-wise merge. Selection is decided first by replaying the
/// ranked masks against a set of claimed pixels; the map is then rendered
/// pixel by pixel from the selected list.
pub fn oracle_merge(stack: &ValidatedStack, params: &MergeParams) -> PanopticMap {
    let (h, w) = (stack.height(), stack.width());
    let footprint = |i: usize| -> Vec<(usize, usize)> {
        let m = stack.mask(i);
        let mut px = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if m[[y, x]] > 0.5 {
                    px.push((y, x));
                }
            }
        }
        px
    };

    let mut ranked = Vec::new();
    for i in 0..stack.len() {
        let px = footprint(i);
        if px.is_empty() {
            continue;
        }
        let m = stack.mask(i);
        let q = px.iter().map(|&p| m[p] as f64).sum::<f64>() / px.len() as f64;
        let label = stack.labels()[i];
        let s = label.prob.powf(params.score.alpha) * q.powf(params.score.beta);
        ranked.push((s, label.category, stack.provenance()[i].query_index, i, px));
    }
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut claimed: HashSet<(usize, usize)> = HashSet::new();
    let mut selected = Vec::new();
    for (s, category, query, i, px) in &ranked {
        if *s < params.t_cnf {
            continue;
        }
        let free: Vec<_> = px.iter().filter(|p| !claimed.contains(p)).copied().collect();
        if free.is_empty() || (free.len() as f64) / (px.len() as f64) < params.t_keep {
            continue;
        }
        claimed.extend(free);
        selected.push((*i, *category, *query, *s));
    }

    let mut sem = vec![0u32; h * w];
    let mut ids = vec![0u32; h * w];
    for y in 0..h {
        for x in 0..w {
            let first = selected.iter().position(|&(i, ..)| stack.mask(i)[[y, x]] > 0.5);
            if let Some(k) = first {
                sem[y * w + x] = selected[k].1;
                ids[y * w + x] = k as u32 + 1;
            }
        }
    }
    let segments = selected
        .iter()
        .enumerate()
        .map(|(k, &(_, category, query, s))| Segment {
            instance_id: k as u32 + 1,
            category_id: category,
            source_query: Some(query),
            score: Some(s),
        })
        .collect();
    PanopticMap::from_buffers(h, w, sem, ids, segments)
}

/// Exhaustive minimum-cost assignment covering every column. Refuses inputs
/// with more than 7 columns or more than 12 rows.
pub fn oracle_assignment(costs: &CostMatrix) -> Result<Assignment> {
    let (rows, cols) = (costs.rows(), costs.cols());
    if rows < cols {
        return Err(Error::Infeasible { rows, cols });
    }
    if cols > 7 || rows > 12 {
        return Err(Error::OracleLimit(format!("{rows} x {cols} is too large for exhaustive search")));
    }
    if cols == 0 {
        return Ok(Assignment::new(Vec::new(), rows));
    }

    fn search(costs: &CostMatrix, col: usize, used: &mut [bool], current: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        if col == costs.cols() {
            let total: f64 = current.iter().enumerate().map(|(c, &r)| costs.get(r, c)).sum();
            if total < best.0 {
                *best = (total, current.clone());
            }
            return;
        }
        for r in 0..costs.rows() {
            if !used[r] {
                used[r] = true;
                current.push(r);
                search(costs, col + 1, used, current, best);
                current.pop();
                used[r] = false;
            }
        }
    }

    let mut best = (f64::INFINITY, Vec::new());
    search(costs, 0, &mut vec![false; rows], &mut Vec::new(), &mut best);
    let pairs = best.1.iter().enumerate().map(|(c, &r)| (r, c)).collect();
    Ok(Assignment::new(pairs, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exhaustive_small_case() {
        let c = CostMatrix::new(3, 2, vec![4.0, 1.0, 2.0, 0.0, 3.0, 5.0]).unwrap();
        let a = oracle_assignment(&c).unwrap();
        assert_eq!(a.total_cost(&c), 3.0);
        assert_eq!(a.unmatched_queries.len(), 1);
    }

    #[test]
    fn limits() {
        let c = CostMatrix::from_fn(8, 8, |_, _| 0.0).unwrap();
        assert!(matches!(oracle_assignment(&c), Err(Error::OracleLimit(_))));
        let c = CostMatrix::from_fn(2, 3, |_, _| 0.0).unwrap();
        assert!(matches!(oracle_assignment(&c), Err(Error::Infeasible { .. })));
    }
}
