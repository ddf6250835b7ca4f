//! Masked-entity completion protocol: hide one entity per graph, draw
//! completions, and score how often the first `N` contain the hidden label.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::graph::SceneGraphState;
use crate::metrics::win_rate;
use crate::reverse::{chain_rng, complete, SamplerOptions};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompletionMode {
    Object,
    Relation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Node(usize),
    Pair(usize, usize),
}

impl Target {
    pub fn label(&self, g: &SceneGraphState) -> usize {
        match *self {
            Target::Node(i) => g.node(i),
            Target::Pair(i, j) => g.relation(i, j),
        }
    }
}

/// Masks one uniformly chosen node, or the relation of one uniformly chosen
/// active edge. `None` when the graph has nothing of that kind.
pub fn mask_one<R: Rng + ?Sized>(
    g: &SceneGraphState,
    mode: CompletionMode,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Option<(SceneGraphState, Target)> {
    let mut x = g.clone();
    let target = match mode {
        CompletionMode::Object => {
            if g.n_nodes() == 0 {
                return None;
            }
            let i = rng.random_range(0..g.n_nodes());
            x.set_node(i, schedule.mask_obj());
            Target::Node(i)
        }
        CompletionMode::Relation => {
            let edges: Vec<(usize, usize, usize)> = g.active_edges().collect();
            if edges.is_empty() {
                return None;
            }
            let (i, j, _) = edges[rng.random_range(0..edges.len())];
            x.set_pair(i, j, 1, schedule.mask_rel());
            Target::Pair(i, j)
        }
    };
    Some((x, target))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub trials: usize,
    /// Indices of graphs with nothing to mask.
    pub skipped: Vec<usize>,
    /// `w_N` keyed by `N`.
    pub win_rates: BTreeMap<usize, f64>,
}

/// Runs the protocol on every graph. Graph `k` uses `chain_rng(seed, k)`
/// for both masking and completion, and draws `max(n_list)` completions so
/// that every `w_N` is computed on prefixes of the same draws.
pub fn completion_win_rates<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    graphs: &[SceneGraphState],
    mode: CompletionMode,
    n_list: &[usize],
    opts: &SamplerOptions,
    seed: u64,
) -> Result<CompletionReport> {
    let n_max = n_list.iter().copied().max().ok_or_else(|| Error::InvalidConfig("empty N list".into()))?;
    if n_list.contains(&0) {
        return Err(Error::InvalidConfig("N must be at least 1".into()));
    }
    let results: Vec<Option<(Vec<usize>, usize)>> = graphs
        .par_iter()
        .enumerate()
        .map(|(k, g)| {
            let mut rng = chain_rng(seed, k as u64);
            let Some((masked, target)) = mask_one(g, mode, schedule, &mut rng) else {
                return Ok(None);
            };
            let draws = complete(&masked, denoiser, schedule, n_max, opts, &mut rng)?;
            Ok(Some((draws.iter().map(|d| target.label(d)).collect(), target.label(g))))
        })
        .collect::<Result<_>>()?;
    let mut skipped = Vec::new();
    let (mut comps, mut truth) = (Vec::new(), Vec::new());
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Some((c, t)) => {
                comps.push(c);
                truth.push(t);
            }
            None => {
                log::warn!("graph {k} has nothing to mask in {mode:?} mode; skipped");
                skipped.push(k);
            }
        }
    }
    let win_rates = n_list.iter().map(|&n| Ok((n, win_rate(&comps, &truth, n)?))).collect::<Result<_>>()?;
    Ok(CompletionReport { trials: truth.len(), skipped, win_rates })
}
