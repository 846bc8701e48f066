use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rayon::prelude::*;
use serde::Serialize;

use panoptic_core::assignment::{binary_mass_center, bounding_box, mass_center};
use panoptic_core::io::manifest::{write_json, Manifest, ManifestWriter, PanopticSet, PanopticWriter};
use panoptic_core::io::pst1::{self, Tensor};
use panoptic_core::metrics::{DecileTable, QueryRecord, QUERY_STATS_SCHEMA};
use panoptic_core::{
    bench_scene, decoupled_assign, dynamic_lambda_for, generate_scene, image_seed, mask_from_attention, matching_cost,
    merge as merge_stack, run_bench, BenchConfig, CostMatrix, CostWeights, Error, EvalOptions, FuseHead, Location,
    LocationMode, MatchingOptions, MergeParams, MultiScaleAttn, PanopticMap, PqAccumulator, QueryPrediction,
    QueryStats, SceneParams, ScoreParams, Strategy, TargetInstance, Taxonomy,
};

use crate::{AssignArgs, BenchArgs, CliError, EvalArgs, FuseArgs, MergeFlags, MergeArgs, StatsArgs, SynthArgs};

/// Images processed concurrently before results are written out.
const CHUNK: usize = 64;

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn image_name(i: usize) -> String {
    format!("img_{i:05}")
}

fn merge_params(flags: &MergeFlags, strategy: Option<Strategy>) -> Result<MergeParams, CliError> {
    let params = MergeParams {
        t_cnf: flags.t_cnf,
        t_keep: flags.t_keep,
        score: ScoreParams::new(flags.alpha, flags.beta).map_err(usage)?,
        merge_same_stuff: flags.merge_stuff.unwrap_or_else(|| strategy.is_some_and(Strategy::merges_stuff_by_default)),
        min_area: flags.min_area,
    };
    params.validate().map_err(usage)?;
    Ok(params)
}

fn same_taxonomy(a: &Taxonomy, b: &Taxonomy, path: &Path) -> Result<(), CliError> {
    if a != b {
        return Err(CliError::Data(Error::Format {
            path: path.to_path_buf(),
            message: "taxonomy differs from the ground truth's".into(),
        }));
    }
    Ok(())
}

/// Pairs every ground-truth image with the prediction of the same name.
fn paired(pred: &PanopticSet, gt: &PanopticSet) -> Result<Vec<(usize, usize)>, CliError> {
    gt.images
        .iter()
        .enumerate()
        .map(|(g, e)| {
            pred.find(&e.name).map(|p| (p, g)).ok_or_else(|| {
                CliError::Data(Error::Format {
                    path: pred.root.clone(),
                    message: format!("no prediction for image {:?}", e.name),
                })
            })
        })
        .collect()
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let taxonomy = Taxonomy::synthetic_default();
    let params = |i: usize| SceneParams {
        seed: image_seed(a.seed, i as u64),
        height: a.h,
        width: a.w,
        n_things: a.things,
        stuff_bands: a.stuff_bands,
        noise_sigma: a.noise,
        overlap_bias: a.overlap,
        n_distractors: a.distractors,
        pad_to: a.pad_to,
        ..SceneParams::default()
    };
    params(0).validate().map_err(usage)?;
    let mut pred = ManifestWriter::create(&a.out.join("pred"), &taxonomy)?;
    let mut gt = PanopticWriter::create(&a.out.join("gt"), &taxonomy)?;
    for start in (0..a.n).step_by(CHUNK) {
        let scenes: Vec<_> = (start..(start + CHUNK).min(a.n))
            .into_par_iter()
            .map(|i| generate_scene(&params(i), &taxonomy))
            .collect::<Result<_, _>>()?;
        for (k, scene) in scenes.iter().enumerate() {
            let name = image_name(start + k);
            pred.add(&name, &scene.stack)?;
            gt.add(&name, &scene.gt)?;
        }
    }
    pred.finish()?;
    gt.finish()?;
    println!("wrote {} images to {}", a.n, a.out.display());
    Ok(())
}

pub fn merge(a: &MergeArgs) -> Result<(), CliError> {
    let params = merge_params(&a.flags, Some(a.strategy))?;
    let manifest = Manifest::load(&a.input)?;
    let mut out = PanopticWriter::create(&a.out, &manifest.taxonomy)?;
    for start in (0..manifest.len()).step_by(CHUNK) {
        let maps: Vec<PanopticMap> = (start..(start + CHUNK).min(manifest.len()))
            .into_par_iter()
            .map(|i| manifest.load_image(i).map(|s| merge_stack(&s, &manifest.taxonomy, a.strategy, &params)))
            .collect::<Result<_, _>>()?;
        for (k, map) in maps.iter().enumerate() {
            out.add(&manifest.images[start + k].name, map)?;
        }
    }
    out.finish()?;
    println!("merged {} images with {} into {}", manifest.len(), a.strategy, a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let pred = PanopticSet::load(&a.pred)?;
    let gt = PanopticSet::load(&a.gt)?;
    same_taxonomy(&pred.taxonomy, &gt.taxonomy, &pred.root)?;
    let opts = EvalOptions { ignore_void_fp: !a.count_void_fp };
    let per_image: Vec<PqAccumulator> = paired(&pred, &gt)?
        .into_par_iter()
        .map(|(p, g)| {
            let mut acc = PqAccumulator::new();
            acc.add_image(&pred.load_image(p)?, &gt.load_image(g)?, &gt.taxonomy, &opts)?;
            Ok(acc)
        })
        .collect::<Result<_, Error>>()?;
    let mut total = PqAccumulator::new();
    for acc in &per_image {
        total.merge(acc);
    }
    let report = total.report(&gt.taxonomy);
    println!("{:<8} {:>8} {:>8} {:>8} {:>4}", "", "PQ", "SQ", "RQ", "N");
    for (label, s) in [("all", &report.all), ("things", &report.things), ("stuff", &report.stuff)] {
        println!("{label:<8} {:>8.4} {:>8.4} {:>8.4} {:>4}", s.pq * 100.0, s.sq * 100.0, s.rq * 100.0, s.n);
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ThingPair {
    query: u32,
    target: u32,
    cost: f64,
}

#[derive(Serialize)]
struct ImageAssignment {
    name: String,
    things: Vec<ThingPair>,
    unmatched_things: Vec<u32>,
    stuff: Vec<(u32, u32)>,
    unmatched_stuff: Vec<u32>,
    lambda_things: f64,
    lambda_stuff: f64,
}

#[derive(Serialize)]
struct AssignReport {
    schema: &'static str,
    location_mode: LocationMode,
    weights: CostWeights,
    images: Vec<ImageAssignment>,
}

pub fn assign(a: &AssignArgs) -> Result<(), CliError> {
    let manifest = Manifest::load(&a.pred)?;
    let gt = PanopticSet::load(&a.gt)?;
    same_taxonomy(&manifest.taxonomy, &gt.taxonomy, &manifest.root)?;
    let tax = &gt.taxonomy;
    let mode = LocationMode::from(a.location_mode);
    let weights = CostWeights { cls: a.lambdas.0[0], seg: a.lambdas.0[1], det: a.lambdas.0[2] };

    let images: Vec<ImageAssignment> = (0..manifest.len())
        .into_par_iter()
        .map(|i| -> Result<ImageAssignment, Error> {
            let name = &manifest.images[i].name;
            let stack = manifest.load_image(i)?;
            let g = gt.find(name).ok_or_else(|| Error::Format {
                path: gt.root.clone(),
                message: format!("no ground truth for image {name:?}"),
            })?;
            let map = gt.load_image(g)?;
            let (h, w) = (map.height(), map.width());
            let mut opts = MatchingOptions::new(mode, (!a.no_normalize).then_some((h, w)));
            opts.weights = weights;

            let locate_soft = |mask: ndarray::ArrayView2<'_, f32>| match mode {
                LocationMode::Box => Location::Box(bounding_box(mask.mapv(|v| v > 0.5).view()).unwrap_or([0.0; 4])),
                LocationMode::MassCenter => Location::Center(mass_center(mask).unwrap_or([0.0; 2])),
            };
            let queries: Vec<usize> = (0..stack.len()).filter(|&q| stack.provenance()[q].is_thing).collect();
            let probs: Vec<Vec<f64>> = queries
                .iter()
                .map(|&q| stack.class_probs().row(q).iter().map(|&p| p as f64).collect())
                .collect();
            let q_locs: Vec<Location> = queries.iter().map(|&q| locate_soft(stack.mask(q))).collect();

            let targets: Vec<_> = map.segments().iter().filter(|s| tax.is_thing(s.category_id) == Some(true)).collect();
            let t_masks: Vec<_> = targets.iter().map(|s| map.ids().mapv(|id| id == s.instance_id)).collect();
            let t_locs: Vec<Location> = t_masks
                .iter()
                .map(|m| match mode {
                    LocationMode::Box => Location::Box(bounding_box(m.view()).expect("segment is non-empty")),
                    LocationMode::MassCenter => Location::Center(binary_mass_center(m.view()).expect("segment is non-empty")),
                })
                .collect();

            let mut entries = Vec::with_capacity(queries.len() * targets.len());
            for (qi, &q) in queries.iter().enumerate() {
                let pred = QueryPrediction { class_probs: &probs[qi], mask: stack.mask(q), location: q_locs[qi] };
                for (ti, s) in targets.iter().enumerate() {
                    let target = TargetInstance {
                        class_index: tax.column_of(s.category_id).expect("validated category"),
                        mask: t_masks[ti].view(),
                        location: t_locs[ti],
                    };
                    entries.push(matching_cost(&pred, &target, &opts)?);
                }
            }
            let costs = CostMatrix::new(queries.len(), targets.len(), entries)?;
            let stuff_queries: Vec<_> = stack.provenance().iter().filter(|p| !p.is_thing).copied().collect();
            let present: BTreeSet<u32> = map
                .segments()
                .iter()
                .filter(|s| tax.is_thing(s.category_id) == Some(false))
                .map(|s| s.category_id)
                .collect();
            let d = decoupled_assign(&costs, &stuff_queries, &present)?;
            let (lambda_things, lambda_stuff) = if map.segments().is_empty() {
                (0.0, 0.0)
            } else {
                dynamic_lambda_for(&map, tax, a.proportion.into())?
            };
            let query_id = |row: usize| stack.provenance()[queries[row]].query_index;
            Ok(ImageAssignment {
                name: name.clone(),
                things: d
                    .things
                    .pairs
                    .iter()
                    .map(|&(r, t)| ThingPair { query: query_id(r), target: targets[t].instance_id, cost: costs.get(r, t) })
                    .collect(),
                unmatched_things: d.things.unmatched_queries.iter().map(|&r| query_id(r)).collect(),
                stuff: d.stuff,
                unmatched_stuff: d.unmatched_stuff,
                lambda_things,
                lambda_stuff,
            })
        })
        .collect::<Result<_, _>>()?;

    let matched: usize = images.iter().map(|i| i.things.len()).sum();
    write_json(&a.out, &AssignReport { schema: "assignment/1", location_mode: mode, weights, images })?;
    println!("assigned {matched} thing targets; report written to {}", a.out.display());
    Ok(())
}

pub fn fuse(a: &FuseArgs) -> Result<(), CliError> {
    let tokens = match pst1::read(&a.attn)? {
        Tensor::F32(t) if t.ndim() == 2 => t,
        t => {
            return Err(CliError::Data(Error::Format {
                path: a.attn.clone(),
                message: format!("expected a [tokens, heads] f32 tensor, found {:?} {:?}", t.dtype(), t.shape()),
            }))
        }
    };
    let heads = tokens.shape()[1];
    let attn = MultiScaleAttn::new(heads, a.h, a.w, tokens.iter().copied().collect())
        .map_err(|e| CliError::Data(Error::Format { path: a.attn.clone(), message: e.to_string() }))?;
    let head = match &a.head {
        Some(path) => FuseHead::from_vector(&pst1::read_f32_1(path)?)
            .map_err(|e| CliError::Data(Error::Format { path: path.clone(), message: e.to_string() }))?,
        None => FuseHead::seeded(heads, a.head_seed),
    };
    let mask = mask_from_attention(&attn, &head)
        .map_err(|e| CliError::Data(Error::Format { path: a.attn.clone(), message: e.to_string() }))?;
    let (mh, mw) = mask.dim();
    pst1::write(&a.out, &Tensor::F32(ArrayD::from_shape_vec(IxDyn(&[mh, mw]), mask.iter().copied().collect()).unwrap()))?;
    println!("wrote {mh}x{mw} mask from {} parameters to {}", head.parameter_count(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct StatsReport<'a> {
    schema: &'static str,
    per_query: Vec<QueryRow<'a>>,
    deciles: DecileTable,
}

#[derive(Serialize)]
struct QueryRow<'a> {
    query: u32,
    #[serde(flatten)]
    record: &'a QueryRecord,
    thing_preference: Option<f64>,
}

pub fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let pred = PanopticSet::load(&a.pred)?;
    let gt = PanopticSet::load(&a.gt)?;
    same_taxonomy(&pred.taxonomy, &gt.taxonomy, &pred.root)?;
    let per_image: Vec<QueryStats> = paired(&pred, &gt)?
        .into_par_iter()
        .map(|(p, g)| {
            let mut s = QueryStats::new();
            s.add_image(&pred.load_image(p)?, &gt.load_image(g)?, &gt.taxonomy)
                .map_err(|e| Error::Format { path: pred.root.join(&pred.images[p].sem), message: e.to_string() })?;
            Ok(s)
        })
        .collect::<Result<_, Error>>()?;
    let mut stats = QueryStats::new();
    for s in &per_image {
        stats.merge(s);
    }
    let deciles = stats.decile_table();
    println!("{:<11} {:>7} {:>14} {:>14}", "P_t", "queries", "stuff prec.", "thing prec.");
    let pct = |p: Option<f64>| p.map_or("-".to_string(), |v| format!("{:.1}", v * 100.0));
    for r in deciles.rows.iter().chain(std::iter::once(&deciles.total)) {
        println!(
            "{:<11} {:>7} {:>14} {:>14}",
            format!("{:.1}-{:.1}", r.lower, r.upper),
            r.queries,
            pct(r.stuff_precision),
            pct(r.thing_precision)
        );
    }
    if let Some(out) = &a.out {
        let per_query = stats
            .per_query
            .iter()
            .map(|(&query, record)| QueryRow { query, record, thing_preference: record.thing_preference() })
            .collect();
        write_json(out, &StatsReport { schema: QUERY_STATS_SCHEMA, per_query, deciles })?;
    }
    Ok(())
}

pub fn bench(a: &BenchArgs) -> Result<(), CliError> {
    if a.reps == 0 || a.strategies.0.is_empty() {
        return Err(CliError::Usage("need at least one repetition and one strategy".into()));
    }
    let config = BenchConfig {
        strategies: a.strategies.0.clone(),
        repetitions: a.reps,
        params: merge_params(&a.flags, None)?,
        merge_stuff: a.flags.merge_stuff,
    };
    let report = match (&a.input, a.synthetic) {
        (Some(path), _) => {
            let manifest = Manifest::load(path)?;
            run_bench(manifest.len(), |i| manifest.load_image(i), &manifest.taxonomy, &config)?
        }
        (None, Some(n)) => {
            let taxonomy = Taxonomy::synthetic_default();
            bench_scene(a.seed, 0, a.h, a.w, a.masks, a.noise).validate().map_err(usage)?;
            let source = |i| generate_scene(&bench_scene(a.seed, i, a.h, a.w, a.masks, a.noise), &taxonomy).map(|s| s.stack);
            run_bench(n, source, &taxonomy, &config)?
        }
        (None, None) => return Err(CliError::Usage("bench needs --in <manifest> or --synthetic <count>".into())),
    };
    print!("{}", report.table());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}
