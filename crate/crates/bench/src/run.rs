//! Timed pipeline runs.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sparseocc_core::flops::{Probe, Stage};
use sparseocc_core::pipeline::{Model, PipelineConfig, PipelineOutput};
use sparseocc_core::SparseVoxelTensor;

use crate::error::BenchError;
use crate::report::{count_flops, Report, StageTime, Timing};
use crate::scene::{gen_scene, SceneConfig};

/// Accumulates wall-clock time per stage in first-seen order.
#[derive(Debug, Default)]
pub struct TimingProbe {
    open: Vec<(Stage, Instant)>,
    totals: Vec<(Stage, Duration)>,
}

impl Probe for TimingProbe {
    fn begin(&mut self, stage: Stage) {
        self.open.push((stage, Instant::now()));
    }

    fn end(&mut self, stage: Stage) {
        let Some(i) = self.open.iter().rposition(|(s, _)| *s == stage) else {
            return;
        };
        let (_, start) = self.open.remove(i);
        let dt = start.elapsed();
        match self.totals.iter_mut().find(|(s, _)| *s == stage) {
            Some((_, t)) => *t += dt,
            None => self.totals.push((stage, dt)),
        }
    }
}

impl TimingProbe {
    pub fn timing(&self, overall: Duration) -> Timing {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        let stages = self.totals.iter().map(|(s, d)| StageTime { name: s.to_string(), ms: ms(*d) }).collect();
        let latency_3d = self.totals.iter().filter(|(s, _)| s.is_encoder()).map(|(_, d)| ms(*d)).sum();
        Timing { stages, latency_3d_ms: latency_3d, latency_overall_ms: ms(overall) }
    }
}

/// Seeds the model from `cfg`, runs it on `scene` and builds the report.
pub fn run_pipeline(scene: &SparseVoxelTensor, cfg: &PipelineConfig) -> Result<(PipelineOutput, Report), BenchError> {
    let model = Model::seeded(cfg).map_err(|e| BenchError::Config(e.to_string()))?;
    let mut probe = TimingProbe::default();
    let start = Instant::now();
    let out = model.forward_probed(scene, &mut probe)?;
    let timing = probe.timing(start.elapsed());
    let report = count_flops(cfg, scene.len(), &out, timing);
    Ok((out, report))
}

pub fn scene_for(cfg: &PipelineConfig) -> SceneConfig {
    SceneConfig { shape: cfg.shape, channels: cfg.channels, density: cfg.density, seed: cfg.seed }
}

/// Per-stage timing statistics over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub repeat: usize,
    pub scene_active: usize,
    pub encoder_ratio: f64,
    pub stages: Vec<StageStats>,
    pub latency_3d_ms: Stats,
    pub latency_overall_ms: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub name: String,
    pub ms: Stats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Stats {
    fn of(mut v: Vec<f64>) -> Self {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Self { min: v[0], median, mean: v.iter().sum::<f64>() / n as f64, max: v[n - 1] }
    }
}

/// Generates the configured scene once and times `repeat` forward passes.
pub fn bench(cfg: &PipelineConfig, repeat: usize) -> Result<BenchSummary, BenchError> {
    if repeat == 0 {
        return Err(BenchError::Config("repeat must be at least 1".into()));
    }
    let scene = gen_scene(&scene_for(cfg))?.tensor;
    let mut reports = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        reports.push(run_pipeline(&scene, cfg)?.1);
    }
    let first = &reports[0];
    let stages = first
        .timing
        .stages
        .iter()
        .enumerate()
        .map(|(i, st)| StageStats { name: st.name.clone(), ms: Stats::of(reports.iter().map(|r| r.timing.stages[i].ms).collect()) })
        .collect();
    Ok(BenchSummary {
        repeat,
        scene_active: scene.len(),
        encoder_ratio: first.encoder.ratio,
        stages,
        latency_3d_ms: Stats::of(reports.iter().map(|r| r.timing.latency_3d_ms).collect()),
        latency_overall_ms: Stats::of(reports.iter().map(|r| r.timing.latency_overall_ms).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_accumulates_repeated_stages() {
        let mut p = TimingProbe::default();
        for _ in 0..2 {
            p.begin(Stage::HeadDecode);
            p.end(Stage::HeadDecode);
        }
        p.begin(Stage::Fusion);
        p.end(Stage::Fusion);
        let t = p.timing(Duration::from_millis(5));
        assert_eq!(t.stages.iter().map(|s| s.name.as_str()).collect::<Vec<_>>(), ["head_decode", "fusion"]);
        assert_eq!(t.latency_overall_ms, 5.0);
    }

    #[test]
    fn stats() {
        let s = Stats::of(vec![3.0, 1.0, 2.0, 10.0]);
        assert_eq!((s.min, s.median, s.mean, s.max), (1.0, 2.5, 4.0, 10.0));
    }
}
