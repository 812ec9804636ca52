//! Multiply-accumulate accounting.
//!
//! Every counter is exact: it is incremented by the work the fast path
//! actually performs (rulebook pairs times channel product, GEMM sizes),
//! never estimated after the fact. Each stage also carries the MACs the same
//! operation would cost on the dense grid. One MAC is two FLOPs.

use alloc::vec::Vec;
use core::fmt;
use core::ops::AddAssign;

/// Sparse and dense-equivalent MACs of one piece of work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCount {
    pub sparse: u64,
    pub dense: u64,
}

impl MacCount {
    pub fn new(sparse: u64, dense: u64) -> Self {
        Self { sparse, dense }
    }

    /// `sparse / dense`, or 1 for an empty dense baseline.
    pub fn ratio(&self) -> f64 {
        if self.dense == 0 {
            1.0
        } else {
            self.sparse as f64 / self.dense as f64
        }
    }
}

impl AddAssign for MacCount {
    fn add_assign(&mut self, rhs: Self) {
        self.sparse += rhs.sparse;
        self.dense += rhs.dense;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// Completion + aggregation blocks at a 1-based pyramid level.
    Diffuser(u8),
    /// Strided convolution producing the given level.
    Downsample(u8),
    Projection,
    Fusion,
    HeadFilter,
    HeadAttention,
    /// Mask decoding plus dense mask reconstruction.
    HeadDecode,
    HeadClassify,
    Assembly,
}

impl Stage {
    /// Stages that make up the sparse 3D encoder and voxel decoder.
    pub fn is_encoder(&self) -> bool {
        matches!(self, Stage::Diffuser(_) | Stage::Downsample(_) | Stage::Projection | Stage::Fusion)
    }

    pub fn is_head(&self) -> bool {
        !self.is_encoder()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Diffuser(l) => write!(f, "diffuser_l{l}"),
            Stage::Downsample(l) => write!(f, "downsample_l{l}"),
            Stage::Projection => f.write_str("projection"),
            Stage::Fusion => f.write_str("fusion"),
            Stage::HeadFilter => f.write_str("head_filter"),
            Stage::HeadAttention => f.write_str("head_attention"),
            Stage::HeadDecode => f.write_str("head_decode"),
            Stage::HeadClassify => f.write_str("head_classify"),
            Stage::Assembly => f.write_str("assembly"),
        }
    }
}

/// Per-stage counters in first-touched order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacLedger {
    entries: Vec<(Stage, MacCount)>,
}

impl MacLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, stage: Stage, count: MacCount) {
        match self.entries.iter_mut().find(|(s, _)| *s == stage) {
            Some((_, c)) => *c += count,
            None => self.entries.push((stage, count)),
        }
    }

    pub fn get(&self, stage: Stage) -> MacCount {
        self.entries.iter().find(|(s, _)| *s == stage).map(|(_, c)| *c).unwrap_or_default()
    }

    pub fn entries(&self) -> &[(Stage, MacCount)] {
        &self.entries
    }

    pub fn total_where(&self, pred: impl Fn(&Stage) -> bool) -> MacCount {
        let mut t = MacCount::default();
        for (s, c) in &self.entries {
            if pred(s) {
                t += *c;
            }
        }
        t
    }

    pub fn encoder_total(&self) -> MacCount {
        self.total_where(Stage::is_encoder)
    }

    pub fn head_total(&self) -> MacCount {
        self.total_where(Stage::is_head)
    }

    pub fn total(&self) -> MacCount {
        self.total_where(|_| true)
    }
}

/// Stage boundary hook; the std side uses it for wall-clock timing.
pub trait Probe {
    fn begin(&mut self, _stage: Stage) {}
    fn end(&mut self, _stage: Stage) {}
}

/// A probe that records nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoProbe;

impl Probe for NoProbe {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_merges_by_stage() {
        let mut l = MacLedger::new();
        l.add(Stage::Diffuser(1), MacCount::new(2, 10));
        l.add(Stage::HeadDecode, MacCount::new(5, 50));
        l.add(Stage::Diffuser(1), MacCount::new(3, 10));
        assert_eq!(l.get(Stage::Diffuser(1)), MacCount::new(5, 20));
        assert_eq!(l.encoder_total(), MacCount::new(5, 20));
        assert_eq!(l.head_total(), MacCount::new(5, 50));
        assert_eq!(l.total().ratio(), 10.0 / 70.0);
        assert_eq!(MacCount::default().ratio(), 1.0);
    }
}
