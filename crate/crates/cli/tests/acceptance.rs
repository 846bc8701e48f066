//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one status line; exits non-zero if any criterion fails.

use std::time::Instant;

use clap::CommandFactory;
use ndarray::{Array2, Array3};
use panoptic_cli::Cli;
use panoptic_core::metrics::QueryStats;
use panoptic_core::synth::rng::XorShift64Star;
use panoptic_core::types::ATTN_STRIDES;
use panoptic_core::{
    bench_scene, confidence, confidence_from_quality, dice_loss, dice_loss_grad, flatten_attn, focal_loss, fuse_attn,
    generate_scene, hungarian, mask_from_attention, mask_wise_merge, merge, oracle_assignment, oracle_merge, pq,
    predict_mask, query_stats, run_bench, split_attn, BenchConfig, CategorySpec, CostMatrix, FocalParams, FuseHead,
    MergeParams, MultiScaleAttn, PanopticMap, SceneParams, ScoreParams, Segment, Strategy, Taxonomy,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_merge_equivalence() -> Outcome {
    let start = Instant::now();
    let tax = Taxonomy::synthetic_default();
    let params = MergeParams::default();
    let mut conflicts = 0;
    for seed in 0..200 {
        let p = SceneParams {
            seed,
            height: 8,
            width: 8,
            n_things: 3,
            stuff_bands: 1,
            n_distractors: 1,
            noise_sigma: 0.3,
            overlap_bias: 0.7,
            min_thing_size: Some(2),
            max_thing_size: Some(6),
            ..SceneParams::default()
        };
        let scene = generate_scene(&p, &tax).map_err(|e| e.to_string())?;
        check(scene.stack.len() <= 5, || format!("seed {seed}: {} masks", scene.stack.len()))?;
        let fast = mask_wise_merge(&scene.stack, &params);
        check(fast == oracle_merge(&scene.stack, &params), || format!("seed {seed}: maps differ"))?;
        conflicts += (fast.segments().len() < scene.stack.len()) as usize;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("200 scenes pixel-identical ({conflicts} with dropped masks) in {secs:.3} s"))
}

fn oracle_assignment_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = XorShift64Star::new(0xA55);
    for case in 0..500 {
        let cols = rng.range_inclusive(0, 5);
        let rows = rng.range_inclusive(cols.max(1), 7);
        let costs = CostMatrix::from_fn(rows, cols, |_, _| rng.uniform(0.0, 10.0)).map_err(|e| e.to_string())?;
        let fast = hungarian(&costs).map_err(|e| e.to_string())?;
        let slow = oracle_assignment(&costs).map_err(|e| e.to_string())?;
        check(fast.total_cost(&costs) == slow.total_cost(&costs), || {
            format!("case {case}: {} vs {}", fast.total_cost(&costs), slow.total_cost(&costs))
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 10.0, || format!("took {secs:.2} s"))?;
    Ok(format!("500 matrices up to 7x5 at the exact minimum in {secs:.3} s"))
}

fn metric_sanity() -> Outcome {
    let tax = Taxonomy::synthetic_default();
    for seed in 0..50 {
        let scene = generate_scene(&SceneParams { seed, ..SceneParams::default() }, &tax).map_err(|e| e.to_string())?;
        let r = pq(&scene.gt, &scene.gt, &tax).map_err(|e| e.to_string())?;
        check((r.all.pq, r.all.sq, r.all.rq) == (1.0, 1.0, 1.0), || format!("seed {seed}: {:?}", r.all))?;
    }
    // 10x10 image: ground truth covers rows 0..5, prediction rows 0..3, so IoU = 30 / 50.
    let gt_sem = Array2::from_shape_fn((10, 10), |(r, _)| if r < 5 { 1u32 } else { 0 });
    let pred_sem = Array2::from_shape_fn((10, 10), |(r, _)| if r < 3 { 1u32 } else { 0 });
    let seg = vec![Segment { instance_id: 1, category_id: 1, source_query: None, score: None }];
    let gt = PanopticMap::new(gt_sem.clone(), gt_sem, seg.clone()).map_err(|e| e.to_string())?;
    let pred = PanopticMap::new(pred_sem.clone(), pred_sem, seg).map_err(|e| e.to_string())?;
    let r = pq(&pred, &gt, &tax).map_err(|e| e.to_string())?;
    check((r.all.pq - 0.6).abs() <= 1e-9 && (r.all.sq - 0.6).abs() <= 1e-9 && r.all.rq == 1.0, || format!("{:?}", r.all))?;
    Ok(format!("pq(gt, gt) = 1 on 50 scenes; IoU 0.6 case gives PQ {:.12}", r.all.pq))
}

fn threshold_monotonicity() -> Outcome {
    let tax = Taxonomy::synthetic_default();
    let grid = [0.2, 0.25, 0.3, 0.35, 0.4];
    let mut deletions = 0usize;
    for seed in 0..50 {
        let p = SceneParams {
            seed,
            n_things: 8,
            noise_sigma: 0.35,
            n_distractors: 4,
            overlap_bias: 0.6,
            class_prob_range: [0.3, 0.98],
            ..SceneParams::default()
        };
        let scene = generate_scene(&p, &tax).map_err(|e| e.to_string())?;
        let maps: Vec<PanopticMap> = grid
            .iter()
            .map(|&t| mask_wise_merge(&scene.stack, &MergeParams { t_cnf: t, ..MergeParams::default() }))
            .collect();
        for (i, lo) in maps.iter().enumerate() {
            for (j, hi) in maps.iter().enumerate().skip(i + 1) {
                let keep = |id: u32| lo.segment(id).is_some_and(|s| s.score.unwrap() >= grid[j]);
                let expected_q = lo.ids().mapv(|id| if keep(id) { lo.segment(id).unwrap().source_query } else { None });
                let got_q = hi.ids().mapv(|id| hi.segment(id).and_then(|s| s.source_query));
                let expected_sem = ndarray::Zip::from(lo.sem()).and(lo.ids()).map_collect(|&c, &id| if keep(id) { c } else { 0 });
                check(got_q == expected_q && hi.sem() == &expected_sem, || {
                    format!("seed {seed}: t_cnf {} is not the filtered output at {}", grid[j], grid[i])
                })?;
                deletions += lo.segments().len() - hi.segments().len();
            }
        }
    }
    Ok(format!("exact subset relation on 50 scenes x 10 threshold pairs ({deletions} segment deletions checked)"))
}

fn directional_ablation() -> Outcome {
    let tax = Taxonomy::synthetic_default();
    let (mut mw, mut am) = (0.0, 0.0);
    let (mut am_fp, mut mw_fp) = (0u64, 0u64);
    let n = 500;
    for seed in 0..n {
        let p = SceneParams {
            seed: 10_000 + seed,
            noise_sigma: 0.15,
            n_things: 5,
            n_distractors: 4,
            overlap_bias: 0.5,
            ..SceneParams::default()
        };
        let scene = generate_scene(&p, &tax).map_err(|e| e.to_string())?;
        let eval = |s: Strategy| {
            let params = MergeParams { merge_same_stuff: s.merges_stuff_by_default(), ..MergeParams::default() };
            pq(&merge(&scene.stack, &tax, s, &params), &scene.gt, &tax)
        };
        let a = eval(Strategy::MaskWise).map_err(|e| e.to_string())?;
        let b = eval(Strategy::Argmax).map_err(|e| e.to_string())?;
        mw += a.all.pq;
        am += b.all.pq;
        mw_fp += a.per_category.values().map(|c| c.counts.fp).sum::<u64>();
        am_fp += b.per_category.values().map(|c| c.counts.fp).sum::<u64>();
    }
    let (mw, am) = (mw / n as f64, am / n as f64);
    check(am_fp > 0, || "argmax produced no false positives; noise is not calibrated".into())?;
    check(mw >= am, || format!("mask-wise {:.2} < argmax {:.2}", mw * 100.0, am * 100.0))?;
    Ok(format!(
        "mean PQ mask-wise {:.2} vs argmax {:.2} (gap {:+.2}); false positives {mw_fp} vs {am_fp}",
        mw * 100.0,
        am * 100.0,
        (mw - am) * 100.0
    ))
}

fn score_reductions_and_defaults() -> Outcome {
    let mut rng = XorShift64Star::new(6);
    for case in 0..1000 {
        let p = rng.next_f64();
        let alpha = rng.uniform(0.0, 3.0);
        let mask = Array2::from_shape_fn((4, 4), |_| rng.next_f64() as f32);
        let params = ScoreParams::new(alpha, 0.0).map_err(|e| e.to_string())?;
        let s = confidence(p, mask.view(), &params);
        check(s == p.powf(alpha), || format!("case {case}: {s} vs {}", p.powf(alpha)))?;
    }
    let perfect = Array2::<f32>::ones((5, 5));
    check(confidence(1.0, perfect.view(), &ScoreParams::default()) == 1.0, || "perfect mask scored below 1".into())?;
    check(confidence_from_quality(1.0, 1.0, &ScoreParams::default()) == 1.0, || "s(1, 1) != 1".into())?;

    let cmd = Cli::command();
    let default_of = |sub: &str, arg: &str| -> Option<String> {
        let sc = cmd.find_subcommand(sub)?;
        let a = sc.get_arguments().find(|a| a.get_id().as_str() == arg)?;
        Some(a.get_default_values().iter().map(|v| v.to_string_lossy().into_owned()).collect::<Vec<_>>().join(","))
    };
    let expected = [
        ("merge", "alpha", "1"),
        ("merge", "beta", "2"),
        ("merge", "t_cnf", "0.25"),
        ("merge", "t_keep", "0.6"),
        ("merge", "strategy", "maskwise"),
        ("bench", "alpha", "1"),
        ("bench", "beta", "2"),
        ("assign", "lambdas", "2,1,1"),
    ];
    for (sub, arg, want) in expected {
        let got = default_of(sub, arg);
        check(got.as_deref() == Some(want), || format!("{sub} --{arg} defaults to {got:?}, want {want}"))?;
    }
    let d = ScoreParams::default();
    check((d.alpha, d.beta) == (1.0, 2.0), || "library defaults drifted".into())?;
    Ok("beta = 0 reduces to p^alpha on 1000 inputs; s(1, perfect) = 1; CLI defaults alpha=1 beta=2 t_cnf=0.25 t_keep=0.6 lambdas=2,1,1".into())
}

fn loss_numerics() -> Outcome {
    let mut rng = XorShift64Star::new(12);
    let mut worst_ce = 0.0f64;
    for case in 0..1000 {
        let c = rng.range_inclusive(1, 20);
        let pred: Vec<f64> = (0..c).map(|_| rng.uniform(0.001, 0.999)).collect();
        let target = Some(rng.below(c as u64) as usize);
        let alpha = rng.uniform(0.05, 0.95);
        let focal = focal_loss(&pred, target, &FocalParams { gamma: 0.0, alpha }).map_err(|e| e.to_string())?;
        let ce: f64 = pred
            .iter()
            .enumerate()
            .map(|(j, &p)| if Some(j) == target { -alpha * p.ln() } else { -(1.0 - alpha) * (1.0 - p).ln() })
            .sum();
        worst_ce = worst_ce.max((focal - ce).abs());
        check((focal - ce).abs() <= 1e-6, || format!("case {case}: focal {focal} vs CE {ce}"))?;
    }
    let step = 1e-5;
    let mut worst_fd = 0.0f64;
    for case in 0..100 {
        let pred = Array2::from_shape_fn((8, 8), |_| rng.next_f64());
        let gt = Array2::from_shape_fn((8, 8), |_| rng.next_f64() < 0.5);
        let grad = dice_loss_grad(pred.view(), gt.view(), 1.0).map_err(|e| e.to_string())?;
        for ((r, c), &g) in grad.indexed_iter() {
            let mut up = pred.clone();
            up[[r, c]] += step;
            let mut down = pred.clone();
            down[[r, c]] -= step;
            let f = |m: &Array2<f64>| dice_loss(m.view(), gt.view(), 1.0).unwrap();
            let fd = (f(&up) - f(&down)) / (2.0 * step);
            worst_fd = worst_fd.max((fd - g).abs());
            check((fd - g).abs() <= 1e-4, || format!("case {case} ({r}, {c}): {fd} vs {g}"))?;
        }
    }
    Ok(format!("focal(gamma=0) vs balanced CE max err {worst_ce:.1e}; dice gradient vs central differences max err {worst_fd:.1e}"))
}

fn attnfuse_suite() -> Outcome {
    let mut rng = XorShift64Star::new(21);
    for &(h, w, heads) in &[(32, 32, 1), (64, 96, 3), (64, 64, 8), (128, 32, 2)] {
        let n = MultiScaleAttn::token_count(h, w) * heads;
        let tokens: Vec<f32> = (0..n).map(|_| rng.uniform(-3.0, 3.0) as f32).collect();
        let attn = MultiScaleAttn::new(heads, h, w, tokens).map_err(|e| e.to_string())?;
        let back = flatten_attn(&split_attn(&attn), h, w).map_err(|e| e.to_string())?;
        check(back == attn, || format!("{h}x{w}x{heads}: round trip differs"))?;
    }
    let (h, w, heads) = (64, 64, 8);
    let attn = MultiScaleAttn::new(heads, h, w, vec![0.25; MultiScaleAttn::token_count(h, w) * heads]).map_err(|e| e.to_string())?;
    let head = FuseHead::seeded(heads, 1);
    let mask = mask_from_attention(&attn, &head).map_err(|e| e.to_string())?;
    check(mask.dim() == (h / ATTN_STRIDES[0], w / ATTN_STRIDES[0]), || format!("output {:?}", mask.dim()))?;
    check(head.parameter_count() == 25, || format!("{} parameters", head.parameter_count()))?;

    let consts = [0.5f32, -1.25, 3.0];
    let maps: [Array3<f32>; 3] = std::array::from_fn(|k| {
        let (sh, sw) = MultiScaleAttn::scale_shape(h, w, k);
        Array3::from_elem((sh, sw, heads), consts[k])
    });
    let fused = fuse_attn(&maps).map_err(|e| e.to_string())?;
    for (c, v) in fused.indexed_iter() {
        check(*v == consts[c.2 / heads], || format!("fused channel {} is {v}", c.2))?;
    }
    let mut weights = vec![0.0f32; 3 * heads];
    weights[heads] = 1.0;
    let one_hot = predict_mask(&fused, &FuseHead::new(weights, 0.0).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let expect = 1.0 / (1.0 + (1.25f32).exp());
    check(one_hot.iter().all(|&v| v == expect), || "one-hot head is not constant logistic(v)".into())?;
    Ok("round trip exact on 4 shapes; 64x64 h=8 gives 8x8; 25 head parameters; constants propagate exactly".into())
}

fn thing_preference() -> Outcome {
    // Five stuff categories so that five class-fixed stuff queries exist.
    let mut cats: Vec<CategorySpec> = Taxonomy::synthetic_default().things().cloned().collect();
    cats.extend((0..5).map(|k| CategorySpec::stuff(20 + k, &format!("stuff{k}"))));
    let tax = Taxonomy::new(cats).map_err(|e| e.to_string())?;
    let mut stats = QueryStats::new();
    let mut segments = 0u64;
    for seed in 0..40 {
        let p = SceneParams { seed, n_things: 6, stuff_bands: 5, noise_sigma: 0.2, n_distractors: 2, ..SceneParams::default() };
        let scene = generate_scene(&p, &tax).map_err(|e| e.to_string())?;
        let merged = mask_wise_merge(&scene.stack, &MergeParams::default());
        // Thing outputs rotate over queries 0..10, stuff outputs come from 10..15.
        let mut next_thing = seed as u32;
        let relabeled: Vec<Segment> = merged
            .segments()
            .iter()
            .map(|s| {
                let q = if tax.is_thing(s.category_id) == Some(true) {
                    next_thing += 1;
                    next_thing % 10
                } else {
                    10 + tax.stuff().position(|c| c.id == s.category_id).unwrap() as u32
                };
                Segment { source_query: Some(q), ..s.clone() }
            })
            .collect();
        segments += relabeled.len() as u64;
        let (sem, ids, _) = merged.into_parts();
        let pred = PanopticMap::new(sem, ids, relabeled).map_err(|e| e.to_string())?;
        stats.merge(&query_stats(&pred, &scene.gt, &tax).map_err(|e| e.to_string())?);
    }
    check(stats.per_query.len() == 15, || format!("queries {:?} emitted output", stats.per_query.keys().collect::<Vec<_>>()))?;
    for (&q, r) in &stats.per_query {
        let want = if q < 10 { 1.0 } else { 0.0 };
        check(r.thing_preference() == Some(want), || format!("query {q}: P_t {:?}", r.thing_preference()))?;
    }
    let table = stats.decile_table();
    let binned: u64 = table.rows.iter().map(|r| r.thing_total + r.stuff_total).sum();
    let queries: usize = table.rows.iter().map(|r| r.queries).sum();
    check(binned == segments, || format!("bins hold {binned} outputs, {segments} segments emitted"))?;
    check(queries == 15 && table.rows[9].queries == 10 && table.rows[0].queries == 5, || "decile occupancy wrong".into())?;
    let tp = |p: Option<f64>| p.map_or("-".into(), |v| format!("{:.1}%", v * 100.0));
    Ok(format!(
        "P_t exactly 1 for 10 thing queries and 0 for 5 stuff queries; {binned} outputs binned; precision things {} stuff {}",
        tp(table.rows[9].thing_precision),
        tp(table.rows[0].stuff_precision)
    ))
}

fn performance_report() -> Outcome {
    let tax = Taxonomy::synthetic_default();
    let (images, size, masks) = (1000, 256, 100);
    let config = BenchConfig {
        strategies: vec![Strategy::MaskWise, Strategy::Argmax],
        repetitions: 1,
        params: MergeParams::default(),
        merge_stuff: None,
    };
    let start = Instant::now();
    let source = |i| {
        let stack = generate_scene(&bench_scene(0, i, size, size, masks, 0.2), &tax)?.stack;
        assert_eq!(stack.len(), masks);
        Ok(stack)
    };
    let report = run_bench(images, source, &tax, &config).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(secs < 120.0, || format!("took {secs:.1} s"))?;
    let ratio = report.ratio(Strategy::MaskWise, Strategy::Argmax).unwrap();
    Ok(format!(
        "{images} images {size}x{size} x {masks} masks in {secs:.1} s single-threaded; merge time mask-wise {:.2} s vs argmax {:.2} s (ratio {ratio:.3}, {:+.1}%)",
        report.summary[0].mean_seconds,
        report.summary[1].mean_seconds,
        (ratio - 1.0) * 100.0
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence, merging", oracle_merge_equivalence),
        ("oracle equivalence, assignment", oracle_assignment_equivalence),
        ("metric sanity", metric_sanity),
        ("threshold monotonicity", threshold_monotonicity),
        ("mask-wise vs pixel argmax", directional_ablation),
        ("confidence reductions and CLI defaults", score_reductions_and_defaults),
        ("loss numerics", loss_numerics),
        ("attention fusion shapes and identities", attnfuse_suite),
        ("thing-preference diagnostics", thing_preference),
        ("performance report", performance_report),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.2} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.2} s]", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
