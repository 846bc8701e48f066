//! Wall-clock comparison of merge strategies over a stream of images.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::merging::{merge, MergeParams, Strategy};
use crate::synth::{image_seed, SceneParams};
use crate::types::{Taxonomy, ValidatedStack};

pub const BENCH_REPORT_SCHEMA: &str = "bench-report/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub strategy: Strategy,
    pub repetition: usize,
    pub seconds: f64,
    pub images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub mean_seconds: f64,
    pub per_image_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub images: usize,
    pub repetitions: usize,
    /// Strategy-major, repetitions ascending.
    pub rows: Vec<TimingRow>,
    pub summary: Vec<StrategySummary>,
}

impl BenchReport {
    /// Mean time of `a` relative to `b`, when both were measured.
    pub fn ratio(&self, a: Strategy, b: Strategy) -> Option<f64> {
        let mean = |s| self.summary.iter().find(|r| r.strategy == s).map(|r| r.mean_seconds);
        Some(mean(a)? / mean(b)?)
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<16} {:>5} {:>12} {:>8}", "strategy", "rep", "seconds", "images").unwrap();
        for r in &self.rows {
            writeln!(out, "{:<16} {:>5} {:>12.6} {:>8}", r.strategy.name(), r.repetition, r.seconds, r.images).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "{:<16} {:>12} {:>14}", "strategy", "mean s", "ms / image").unwrap();
        for s in &self.summary {
            writeln!(out, "{:<16} {:>12.6} {:>14.4}", s.strategy.name(), s.mean_seconds, s.per_image_ms).unwrap();
        }
        if let Some(r) = self.ratio(Strategy::MaskWise, Strategy::Argmax) {
            writeln!(out, "\nmaskwise / argmax time ratio: {r:.3} ({:+.1}%)", (r - 1.0) * 100.0).unwrap();
        }
        out
    }
}

/// Scene recipe for the synthetic timing stream: a third of the budget as
/// ground-truth things over three stuff bands, padded with distractors to
/// exactly `masks` predictions.
pub fn bench_scene(seed: u64, index: usize, height: usize, width: usize, masks: usize, noise_sigma: f64) -> SceneParams {
    SceneParams {
        seed: image_seed(seed, index as u64),
        height,
        width,
        n_things: masks / 3,
        stuff_bands: 3,
        noise_sigma,
        overlap_bias: 0.3,
        n_distractors: 0,
        pad_to: Some(masks),
        ..SceneParams::default()
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub strategies: Vec<Strategy>,
    pub repetitions: usize,
    pub params: MergeParams,
    /// Overrides each strategy's default stuff merging.
    pub merge_stuff: Option<bool>,
}

/// Times every strategy on every image. Images are pulled from `source` one
/// at a time so the set never has to fit in memory; loading is not timed.
pub fn run_bench(
    images: usize,
    mut source: impl FnMut(usize) -> Result<ValidatedStack>,
    taxonomy: &Taxonomy,
    config: &BenchConfig,
) -> Result<BenchReport> {
    let (ns, nr) = (config.strategies.len(), config.repetitions);
    let mut seconds = vec![0.0f64; ns * nr];
    let params: Vec<MergeParams> = config
        .strategies
        .iter()
        .map(|s| MergeParams { merge_same_stuff: config.merge_stuff.unwrap_or(s.merges_stuff_by_default()), ..config.params })
        .collect();
    for i in 0..images {
        let stack = source(i)?;
        for rep in 0..nr {
            for (k, &strategy) in config.strategies.iter().enumerate() {
                let start = Instant::now();
                let map = merge(black_box(&stack), taxonomy, strategy, &params[k]);
                black_box(&map);
                seconds[k * nr + rep] += start.elapsed().as_secs_f64();
            }
        }
    }

    let mut rows = Vec::with_capacity(ns * nr);
    let mut summary = Vec::with_capacity(ns);
    for (k, &strategy) in config.strategies.iter().enumerate() {
        for rep in 0..nr {
            rows.push(TimingRow { strategy, repetition: rep, seconds: seconds[k * nr + rep], images });
        }
        let mean = seconds[k * nr..(k + 1) * nr].iter().sum::<f64>() / nr.max(1) as f64;
        summary.push(StrategySummary {
            strategy,
            mean_seconds: mean,
            per_image_ms: if images > 0 { mean * 1e3 / images as f64 } else { 0.0 },
        });
    }
    Ok(BenchReport { schema: BENCH_REPORT_SCHEMA.into(), images, repetitions: nr, rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneParams};

    #[test]
    fn rows_are_ordered_and_positive() {
        let tax = Taxonomy::synthetic_default();
        let cfg = BenchConfig {
            strategies: vec![Strategy::MaskWise, Strategy::Argmax],
            repetitions: 3,
            params: MergeParams::default(),
            merge_stuff: None,
        };
        let src = |i: usize| {
            let p = SceneParams { seed: i as u64, ..SceneParams::default() };
            generate_scene(&p, &tax).map(|s| s.stack)
        };
        let report = run_bench(4, src, &tax, &cfg).unwrap();
        assert_eq!(report.rows.len(), 6);
        let order: Vec<_> = report.rows.iter().map(|r| (r.strategy, r.repetition)).collect();
        assert_eq!(
            order,
            vec![
                (Strategy::MaskWise, 0),
                (Strategy::MaskWise, 1),
                (Strategy::MaskWise, 2),
                (Strategy::Argmax, 0),
                (Strategy::Argmax, 1),
                (Strategy::Argmax, 2)
            ]
        );
        assert!(report.rows.iter().all(|r| r.seconds > 0.0 && r.images == 4));
        assert!(report.table().contains("time ratio"));
    }
}
