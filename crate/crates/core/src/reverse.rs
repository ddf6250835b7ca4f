//! Factorized reverse transitions and the full sampling loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{argmax, Denoiser};
use crate::error::{Error, Result};
use crate::graph::SceneGraphState;
use crate::refine::{apply_plan, RefinementPlan};
use crate::schedule::{sample_index, Channel, Matrix, NoiseSchedule};

/// `q(z_{t-1} = a | z_t = b)` averaged over clean predictions `c`:
/// `sum_c pred(c) Q_t[a,b] Qbar_{t-1}[c,a] / Qbar_t[c,b]`. Clean candidates
/// that cannot reach `b` contribute nothing. `pred_clean` may be shorter
/// than the alphabet; missing entries are zero.
pub fn categorical_posterior(pred_clean: &[f64], b: usize, q_t: &Matrix, qbar_prev: &Matrix, qbar_t: &Matrix) -> Result<Vec<f64>> {
    let k = q_t.nrows();
    let mut post = vec![0.0; k];
    let mut reached = false;
    for (c, &w) in pred_clean.iter().enumerate() {
        if w <= 0.0 || qbar_t[[c, b]] <= 0.0 {
            continue;
        }
        reached = true;
        let scale = w / qbar_t[[c, b]];
        for (a, p) in post.iter_mut().enumerate() {
            *p += scale * q_t[[a, b]] * qbar_prev[[c, a]];
        }
    }
    if !reached {
        return Err(Error::UnreachableState);
    }
    normalize(&mut post)?;
    Ok(post)
}

/// Clean prediction moved to `t-1`: `a -> sum_c Qbar_{t-1}[c,a] pred(c)`.
pub fn marginal_prev(pred_clean: &[f64], qbar_prev: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; qbar_prev.ncols()];
    for (c, &w) in pred_clean.iter().enumerate() {
        if w > 0.0 {
            for (a, o) in out.iter_mut().enumerate() {
                *o += w * qbar_prev[[c, a]];
            }
        }
    }
    out
}

fn normalize(p: &mut [f64]) -> Result<()> {
    let z: f64 = p.iter().sum();
    if !(z > 0.0) {
        return Err(Error::UnreachableState);
    }
    p.iter_mut().for_each(|x| *x /= z);
    Ok(())
}

/// Posterior with a fallback for observations the channel chain cannot
/// produce (read as "unobserved"). These arise from mask tokens when `ρ = 0`
/// and from relations drawn on edges that corruption switched on.
fn channel_posterior(schedule: &NoiseSchedule, ch: Channel, pred: &[f64], b: usize, t: usize) -> Result<Vec<f64>> {
    let (q, qp, qt) = (schedule.q(ch, t), schedule.qbar(ch, t - 1), schedule.qbar(ch, t));
    match categorical_posterior(pred, b, q, qp, qt) {
        Err(Error::UnreachableState) => {
            let mut m = marginal_prev(pred, qp);
            normalize(&mut m)?;
            Ok(m)
        }
        other => other,
    }
}

/// Edge-gated relation posterior over the relation alphabet.
/// `pred_rel[c - 1]` is the predicted probability of clean relation `c`.
pub fn relation_posterior(pred_rel: &[f64], r_t: usize, e_prev: u8, e_t: u8, schedule: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    let k = schedule.num_relations() + 2;
    if e_prev == 0 {
        let mut d = vec![0.0; k];
        d[0] = 1.0;
        return Ok(d);
    }
    let mut pred = vec![0.0; k];
    pred[1..=pred_rel.len()].copy_from_slice(pred_rel);
    if e_t == 1 {
        channel_posterior(schedule, Channel::Relation, &pred, r_t, t)
    } else {
        let mut m = marginal_prev(&pred, schedule.qbar(Channel::Relation, t - 1));
        normalize(&mut m)?;
        Ok(m)
    }
}

pub fn node_posterior(pred_obj: &[f64], v_t: usize, schedule: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    channel_posterior(schedule, Channel::Node, pred_obj, v_t, t)
}

pub fn edge_posterior(p_active: f64, e_t: u8, schedule: &NoiseSchedule, t: usize) -> Result<Vec<f64>> {
    channel_posterior(schedule, Channel::Edge, &[1.0 - p_active, p_active], e_t as usize, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerOptions {
    /// One denoiser call per step instead of one per factor.
    pub single_pass: bool,
}

/// Entities a reverse step may change; everything else is held fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreeSet {
    pub nodes: Vec<bool>,
    pub edges: Vec<bool>,
    pub relations: Vec<bool>,
}

impl FreeSet {
    pub fn all(n: usize) -> Self {
        FreeSet { nodes: vec![true; n], edges: vec![true; n * n], relations: vec![true; n * n] }
    }

    /// Masked nodes and masked relations on active edges.
    pub fn masked(x: &SceneGraphState, schedule: &NoiseSchedule) -> Self {
        let n = x.n_nodes();
        let mut f = FreeSet { nodes: vec![false; n], edges: vec![false; n * n], relations: vec![false; n * n] };
        for i in 0..n {
            f.nodes[i] = x.node(i) == schedule.mask_obj();
        }
        for (i, j) in x.pairs() {
            f.relations[i * n + j] = x.edge(i, j) == 1 && x.relation(i, j) == schedule.mask_rel();
        }
        f
    }

    pub fn is_empty(&self) -> bool {
        !self.nodes.iter().chain(&self.edges).chain(&self.relations).any(|&b| b)
    }
}

/// One reverse transition `x_t -> x_{t-1}`: nodes, then edges given the new
/// nodes, then relations given both. Pairs whose edge turns on while the
/// relation is still unknown carry the mask token between sub-steps.
pub fn reverse_step<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x_t: &SceneGraphState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    t: usize,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<SceneGraphState> {
    reverse_step_free(x_t, denoiser, schedule, t, opts, None, rng)
}

pub fn reverse_step_free<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x_t: &SceneGraphState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    t: usize,
    opts: &SamplerOptions,
    free: Option<&FreeSet>,
    rng: &mut R,
) -> Result<SceneGraphState> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::OutOfRange { t, max: schedule.steps() });
    }
    let n = x_t.n_nodes();
    let all = FreeSet::all(n);
    let clamped = free.is_some();
    let free = free.unwrap_or(&all);
    let predict = |x: &SceneGraphState| if clamped { denoiser.predict_clamped(x, t, free) } else { denoiser.predict(x, t) };
    let mut y = x_t.clone();

    let out_v = predict(x_t)?;
    for i in 0..n {
        if free.nodes[i] {
            let post = node_posterior(out_v.obj(i), x_t.node(i), schedule, t)?;
            y.set_node(i, sample_index(&post, rng));
        }
    }

    let out_e = if opts.single_pass { None } else { Some(predict(&y)?) };
    let out_e = out_e.as_ref().unwrap_or(&out_v);
    for (i, j) in x_t.pairs() {
        if !free.edges[i * n + j] {
            continue;
        }
        let post = edge_posterior(out_e.edge(i, j), x_t.edge(i, j), schedule, t)?;
        let e = sample_index(&post, rng) as u8;
        let r = match (e, x_t.edge(i, j)) {
            (0, _) => 0,
            (_, 1) => x_t.relation(i, j),
            _ => schedule.mask_rel(),
        };
        y.set_pair(i, j, e, r);
    }

    let out_r = if opts.single_pass { None } else { Some(predict(&y)?) };
    let out_r = out_r.as_ref().unwrap_or(&out_v);
    for (i, j) in x_t.pairs() {
        if !free.relations[i * n + j] {
            continue;
        }
        let e_prev = y.edge(i, j);
        let post = relation_posterior(out_r.rel(i, j), x_t.relation(i, j), e_prev, x_t.edge(i, j), schedule, t)?;
        let r = sample_index(&post, rng);
        y.set_pair(i, j, e_prev, r);
    }
    Ok(y)
}

/// Replaces leftover mask tokens by the argmax of the clean prediction at
/// `t = 1`, lowest index on ties.
pub fn resolve_masks<D: Denoiser + ?Sized>(x: &SceneGraphState, denoiser: &D, schedule: &NoiseSchedule) -> Result<SceneGraphState> {
    let masked = x.nodes().iter().any(|&v| v == schedule.mask_obj()) || x.relations().iter().any(|&r| r == schedule.mask_rel());
    if !masked {
        return Ok(x.clone());
    }
    let out = denoiser.predict(x, 1)?;
    let mut y = x.clone();
    for i in 0..x.n_nodes() {
        if x.node(i) == schedule.mask_obj() {
            y.set_node(i, argmax(out.obj(i)));
        }
    }
    for (i, j) in x.pairs() {
        if x.relation(i, j) == schedule.mask_rel() {
            y.set_pair(i, j, 1, argmax(out.rel(i, j)) + 1);
        }
    }
    Ok(y)
}

/// Draws `x_T` from the terminal law of the forward chain.
pub fn initial_state<R: Rng + ?Sized>(schedule: &NoiseSchedule, n_nodes: usize, rng: &mut R) -> SceneGraphState {
    schedule.terminal_distribution().sample(n_nodes, rng)
}

/// Full reverse chain `T -> 0` with optional refinement kernels applied
/// after each step whose elapsed count lies in a kernel window.
pub fn sample<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    n_nodes: usize,
    rng: &mut R,
    plan: Option<&RefinementPlan>,
    opts: &SamplerOptions,
) -> Result<SceneGraphState> {
    if n_nodes == 0 {
        return Err(Error::InvalidConfig("n_nodes must be at least 1".into()));
    }
    let mut x = initial_state(schedule, n_nodes, rng);
    for t in (1..=schedule.steps()).rev() {
        x = reverse_step(&x, denoiser, schedule, t, opts, rng)?;
        if let Some(plan) = plan {
            x = apply_plan(&x, denoiser, schedule, t - 1, plan, opts, rng)?;
        }
    }
    resolve_masks(&x, denoiser, schedule)
}

/// Deterministic per-chain generator so batches give the same graphs no
/// matter how chains are scheduled across threads.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Independent chains, chain `k` seeded by `chain_rng(seed, k)`.
pub fn sample_batch<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    node_counts: &[usize],
    seed: u64,
    plan: Option<&RefinementPlan>,
    opts: &SamplerOptions,
) -> Result<Vec<SceneGraphState>> {
    node_counts
        .par_iter()
        .enumerate()
        .map(|(k, &n)| sample(denoiser, schedule, n, &mut chain_rng(seed, k as u64), plan, opts))
        .collect()
}

/// Completions of a partially masked clean graph: only masked entities are
/// sampled, everything else stays clamped at its given value.
pub fn complete<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x_masked: &SceneGraphState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    n_samples: usize,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<Vec<SceneGraphState>> {
    let free = FreeSet::masked(x_masked, schedule);
    if free.is_empty() {
        return Err(Error::NoMaskedEntity);
    }
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut x = x_masked.clone();
        for t in (1..=schedule.steps()).rev() {
            x = reverse_step_free(&x, denoiser, schedule, t, opts, Some(&free), rng)?;
        }
        out.push(resolve_masks(&x, denoiser, schedule)?);
    }
    Ok(out)
}
