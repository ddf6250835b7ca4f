//! Clean-state predictors `p(x_0 | x_t)`.

mod loss;
mod network;
mod oracle;
mod tape;
mod train;

pub use loss::{class_weights, loss, ClassWeighting, LossBreakdown, LossWeights};
pub use network::{gradient_check, GradientReport, ModelConfig, Params, ReferenceNetwork};
pub use oracle::TabularOracle;
pub use tape::{Tape, Var};
pub use train::{node_count_histogram, train, Checkpoint, CheckpointHeader, EpochReport, TrainConfig, CHECKPOINT_VERSION};

use crate::error::Result;
use crate::graph::SceneGraphState;
use crate::layout::Bbox;
use crate::reverse::FreeSet;

/// Per-entity clean-state distributions for one graph.
///
/// Pair quantities are stored densely at `i * n + j`; diagonal slots are
/// present but meaningless.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput {
    pub n_nodes: usize,
    pub k_obj: usize,
    pub k_rel: usize,
    /// `n * k_obj`, row per node.
    pub obj_probs: Vec<f64>,
    /// `n * n`, probability that the clean edge is active.
    pub edge_probs: Vec<f64>,
    /// `n * n * k_rel`; slot `c - 1` holds relation `c`.
    pub rel_probs: Vec<f64>,
    /// `n * n * 2` raw edge scores; empty when the predictor has none.
    pub edge_logits: Vec<f64>,
    pub box_preds: Option<Vec<Bbox>>,
}

impl DenoiserOutput {
    pub fn obj(&self, i: usize) -> &[f64] {
        &self.obj_probs[i * self.k_obj..(i + 1) * self.k_obj]
    }

    pub fn edge(&self, i: usize, j: usize) -> f64 {
        self.edge_probs[i * self.n_nodes + j]
    }

    /// Relation law over `1..=K_rel` (slot `c - 1` is relation `c`).
    pub fn rel(&self, i: usize, j: usize) -> &[f64] {
        let p = i * self.n_nodes + j;
        &self.rel_probs[p * self.k_rel..(p + 1) * self.k_rel]
    }

    /// Object law padded to the node alphabet (zero on the mask).
    pub fn obj_full(&self, i: usize) -> Vec<f64> {
        let mut v = self.obj(i).to_vec();
        v.push(0.0);
        v
    }

    /// Relation law padded to the relation alphabet (zero on null and mask).
    pub fn rel_full(&self, i: usize, j: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.k_rel + 2);
        v.push(0.0);
        v.extend_from_slice(self.rel(i, j));
        v.push(0.0);
        v
    }

    pub fn edge_full(&self, i: usize, j: usize) -> [f64; 2] {
        let p = self.edge(i, j);
        [1.0 - p, p]
    }

    /// Per-entity argmax of the clean prediction, lowest index on ties.
    /// Pairs are active when `P(e = 1) > 0.5`.
    pub fn argmax_state(&self) -> SceneGraphState {
        let n = self.n_nodes;
        let mut s = SceneGraphState::with_nodes((0..n).map(|i| argmax(self.obj(i))).collect());
        for i in 0..n {
            for j in 0..n {
                if i != j && self.edge(i, j) > 0.5 {
                    s.set_relation(i, j, argmax(self.rel(i, j)) + 1);
                }
            }
        }
        s.set_boxes(self.box_preds.clone());
        s
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// A clean-state predictor. Implementations must be safe to share across
/// sampler threads.
pub trait Denoiser: Send + Sync {
    fn predict(&self, x_t: &SceneGraphState, t: usize) -> Result<DenoiserOutput>;

    fn predict_batch(&self, xs: &[SceneGraphState], t: usize) -> Result<Vec<DenoiserOutput>> {
        xs.iter().map(|x| self.predict(x, t)).collect()
    }

    /// Prediction when entities outside `free` are known to hold their
    /// clean values. Predictors that cannot use this fall back to `predict`.
    fn predict_clamped(&self, x_t: &SceneGraphState, t: usize, free: &FreeSet) -> Result<DenoiserOutput> {
        let _ = free;
        self.predict(x_t, t)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict(&self, x_t: &SceneGraphState, t: usize) -> Result<DenoiserOutput> {
        (**self).predict(x_t, t)
    }

    fn predict_clamped(&self, x_t: &SceneGraphState, t: usize, free: &FreeSet) -> Result<DenoiserOutput> {
        (**self).predict_clamped(x_t, t, free)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for std::sync::Arc<D> {
    fn predict(&self, x_t: &SceneGraphState, t: usize) -> Result<DenoiserOutput> {
        (**self).predict(x_t, t)
    }

    fn predict_clamped(&self, x_t: &SceneGraphState, t: usize, free: &FreeSet) -> Result<DenoiserOutput> {
        (**self).predict_clamped(x_t, t, free)
    }
}
