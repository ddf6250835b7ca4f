use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::denoiser::network::Forward;
use crate::denoiser::tape::{Tape, Var};
use crate::denoiser::DenoiserOutput;
use crate::error::{Error, Result};
use crate::graph::{GraphBatch, SceneGraphState};
use crate::layout::{giou, Bbox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    Simple,
    InverseFreq,
    #[default]
    EffectiveNum,
}

/// Loss term scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_v: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub lambda_box: f64,
    pub lambda_giou: f64,
    pub lambda_rev: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_v: 1.0, lambda_e: 0.5, lambda_r: 0.5, lambda_box: 1.0, lambda_giou: 1.0, lambda_rev: 0.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_v, self.lambda_e, self.lambda_r, self.lambda_box, self.lambda_giou, self.lambda_rev];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidConfig("loss scales must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub node: f64,
    pub edge: f64,
    pub relation: f64,
    pub boxes: f64,
    pub rev: f64,
}

/// Unnormalized per-class weights.
pub fn raw_class_weights(counts: &[f64], strategy: ClassWeighting, param: f64) -> Vec<f64> {
    match strategy {
        ClassWeighting::Simple => vec![1.0; counts.len()],
        ClassWeighting::InverseFreq => {
            let total: f64 = counts.iter().sum();
            counts
                .iter()
                .map(|&c| {
                    let p = if total > 0.0 { c / total } else { 0.0 };
                    1.0 / (p + 1e-6).powf(param)
                })
                .collect()
        }
        ClassWeighting::EffectiveNum => counts
            .iter()
            .map(|&f| {
                let f = f.max(1.0);
                (1.0 - param) / (1.0 - param.powf(f))
            })
            .collect(),
    }
}

/// Relation class weights renormalized to mean 1. `counts` are raw class
/// counts (relative frequencies work for the frequency-based strategies).
pub fn class_weights(counts: &[f64], strategy: ClassWeighting, param: f64) -> Vec<f64> {
    let raw = raw_class_weights(counts, strategy, param);
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    raw.into_iter().map(|w| if mean > 0.0 { w / mean } else { 1.0 }).collect()
}

fn nll(p: f64) -> f64 {
    -p.max(1e-300).ln()
}

/// Loss of probability-space predictions against padded clean targets.
/// `outputs[b]` must cover `batch.max_nodes` nodes; masked-out entities
/// are ignored. Relation loss averages over active clean pairs only and is
/// 0 when there are none.
pub fn loss(outputs: &[DenoiserOutput], batch: &GraphBatch, weights: &LossWeights, class_w: &[f64]) -> Result<LossBreakdown> {
    if outputs.len() != batch.states.len() {
        return Err(Error::SizeMismatch(format!("{} outputs for {} graphs", outputs.len(), batch.states.len())));
    }
    let m = batch.max_nodes;
    let (mut lv, mut nv, mut le, mut ne, mut lr, mut nr, mut lb, mut nb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for ((out, x0), (nmask, pmask)) in outputs.iter().zip(&batch.states).zip(batch.node_mask.iter().zip(&batch.pair_mask)) {
        if out.n_nodes != m {
            return Err(Error::SizeMismatch(format!("output has {} nodes, batch has {m}", out.n_nodes)));
        }
        for i in 0..m {
            if !nmask[i] {
                continue;
            }
            lv += nll(out.obj(i)[x0.node(i)]);
            nv += 1.0;
            if let (Some(pred), Some(truth)) = (&out.box_preds, x0.boxes()) {
                let (p, t) = (pred[i], truth[i]);
                let l1: f64 = p.to_array().iter().zip(t.to_array()).map(|(a, b)| (a - b).abs()).sum();
                lb += l1 + weights.lambda_giou * (1.0 - giou(&p, &t)?);
                nb += 1.0;
            }
        }
        for i in 0..m {
            for j in 0..m {
                if !pmask[i * m + j] {
                    continue;
                }
                let e = x0.edge(i, j);
                let pe = out.edge(i, j);
                le += nll(if e == 1 { pe } else { 1.0 - pe });
                ne += 1.0;
                if e == 1 {
                    let r = x0.relation(i, j);
                    lr += class_w[r - 1] * nll(out.rel(i, j)[r - 1]);
                    nr += 1.0;
                }
            }
        }
    }
    let mean = |s: f64, n: f64| if n > 0.0 { s / n } else { 0.0 };
    let mut b = LossBreakdown { node: mean(lv, nv), edge: mean(le, ne), relation: mean(lr, nr), boxes: mean(lb, nb), ..Default::default() };
    b.total = weights.lambda_v * b.node + weights.lambda_e * b.edge + weights.lambda_r * b.relation + weights.lambda_box * b.boxes;
    Ok(b)
}

/// Mixture targets for the intermediate reverse-step term: row `c` weight
/// is `q(x_{t-1} | x_t, x_0 = c)` for each entity.
#[derive(Debug, Clone)]
pub(crate) struct RevTarget {
    pub node: Vec<Vec<f64>>,
    pub edge: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub(crate) struct Example {
    pub x0: SceneGraphState,
    pub x_t: SceneGraphState,
    pub t: usize,
    pub rev: Option<RevTarget>,
}

impl Example {
    pub fn plain(x0: SceneGraphState, x_t: SceneGraphState, t: usize) -> Self {
        Example { x0, x_t, t, rev: None }
    }
}

/// Differentiable training objective on a recorded forward pass.
pub(crate) fn objective(tape: &mut Tape, fwd: &Forward, examples: &[Example], weights: &LossWeights, class_w: &[f64]) -> (Var, LossBreakdown) {
    let k_obj = tape.value(fwd.obj).ncols();
    let k_rel = tape.value(fwd.rel).ncols();
    let n_nodes = tape.value(fwd.obj).nrows();
    let n_pairs = tape.value(fwd.edge).nrows();

    let mut m_obj = Array2::zeros((n_nodes, k_obj));
    let mut m_edge = Array2::zeros((n_pairs, 2));
    let mut m_rel = Array2::zeros((n_pairs, k_rel));
    let mut w_rel = vec![0.0; n_pairs];
    let mut box_rows = Vec::new();
    let mut box_targets: Vec<Bbox> = Vec::new();
    let mut rev_obj = Array2::zeros((n_nodes, k_obj));
    let mut rev_edge = Array2::zeros((n_pairs, 2));
    let mut any_rev = false;
    for (g, ex) in examples.iter().enumerate() {
        let (no, po) = (fwd.node_offset[g], fwd.pair_offset[g]);
        for i in 0..ex.x0.n_nodes() {
            m_obj[[no + i, ex.x0.node(i)]] = 1.0;
        }
        if let Some(b) = ex.x0.boxes() {
            for (i, bx) in b.iter().enumerate() {
                box_rows.push(no + i);
                box_targets.push(*bx);
            }
        }
        for (k, (i, j)) in ex.x0.pairs().enumerate() {
            m_edge[[po + k, ex.x0.edge(i, j) as usize]] = 1.0;
            let r = ex.x0.relation(i, j);
            if r > 0 {
                m_rel[[po + k, r - 1]] = 1.0;
                w_rel[po + k] = class_w[r - 1];
            }
        }
        if let Some(rev) = &ex.rev {
            any_rev = true;
            for (i, row) in rev.node.iter().enumerate() {
                for (c, &v) in row.iter().enumerate() {
                    rev_obj[[no + i, c]] = v;
                }
            }
            for (k, row) in rev.edge.iter().enumerate() {
                rev_edge[[po + k, 0]] = row[0];
                rev_edge[[po + k, 1]] = row[1];
            }
        }
    }
    let n_active = w_rel.iter().filter(|&&w| w > 0.0).count() as f64;
    let lv = tape.mixture_ce(fwd.obj, &m_obj, &vec![1.0; n_nodes], n_nodes as f64);
    let le = tape.mixture_ce(fwd.edge, &m_edge, &vec![1.0; n_pairs], n_pairs as f64);
    let lr = tape.mixture_ce(fwd.rel, &m_rel, &w_rel, n_active);
    let lb = tape.box_loss(fwd.boxes, &box_rows, &box_targets, weights.lambda_giou, box_rows.len() as f64);
    let mut terms = vec![(lv, weights.lambda_v), (le, weights.lambda_e), (lr, weights.lambda_r), (lb, weights.lambda_box)];
    let mut rev = 0.0;
    if any_rev && weights.lambda_rev > 0.0 {
        let rv = tape.mixture_ce(fwd.obj, &rev_obj, &vec![1.0; n_nodes], n_nodes as f64);
        let re = tape.mixture_ce(fwd.edge, &rev_edge, &vec![1.0; n_pairs], n_pairs as f64);
        let total = tape.combine(vec![(rv, 1.0), (re, 1.0)]);
        rev = tape.scalar_value(total);
        terms.push((total, weights.lambda_rev));
    }
    let total = tape.combine(terms);
    let breakdown = LossBreakdown {
        total: tape.scalar_value(total),
        node: tape.scalar_value(lv),
        edge: tape.scalar_value(le),
        relation: tape.scalar_value(lr),
        boxes: tape.scalar_value(lb),
        rev,
    };
    (total, breakdown)
}
