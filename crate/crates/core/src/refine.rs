//! Inference-time refinement kernels and their scheduled composition.
//!
//! Windows are counted in elapsed reverse steps: after the step that lands
//! on noise level `t`, `T - t` steps have elapsed, and a block with
//! `start = s, duration = d` fires while `s <= elapsed < s + d`.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{entropy, Denoiser};
use crate::error::{Error, Result};
use crate::graph::SceneGraphState;
use crate::reverse::SamplerOptions;
use crate::schedule::{sample_index, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    V,
    E,
    R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Gibbs,
    Rare,
    SoftMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsBlock {
    pub start: usize,
    pub duration: usize,
    pub sweeps: usize,
    pub order: Vec<Block>,
}

impl Default for GibbsBlock {
    fn default() -> Self {
        GibbsBlock { start: 25, duration: 10, sweeps: 1, order: vec![Block::V, Block::E, Block::R] }
    }
}

/// How soft-mask picks entities to re-mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Entropy strictly above the threshold.
    Entropy(f64),
    TopK(usize),
    /// Top `ceil(fraction * entities)` by entropy.
    TopFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftMaskBlock {
    pub start: usize,
    pub duration: usize,
    pub selection: Selection,
}

impl Default for SoftMaskBlock {
    fn default() -> Self {
        SoftMaskBlock { start: 90, duration: 10, selection: Selection::TopFraction(0.1) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RareBlock {
    pub start: usize,
    pub duration: usize,
    pub beta_rare: f64,
    /// Share of active pairs re-drawn from the tilted conditional.
    pub fraction: f64,
    /// Rarity per relation `1..=K_rel`; defaults to `-ln` of the relation prior.
    pub scores: Option<Vec<f64>>,
}

impl Default for RareBlock {
    fn default() -> Self {
        RareBlock { start: 50, duration: 10, beta_rare: 1.0, fraction: 1.0, scores: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementPlan {
    pub gibbs: Option<GibbsBlock>,
    pub soft_mask: Option<SoftMaskBlock>,
    pub rare: Option<RareBlock>,
}

impl Default for RefinementPlan {
    fn default() -> Self {
        RefinementPlan { gibbs: Some(GibbsBlock::default()), soft_mask: Some(SoftMaskBlock::default()), rare: None }
    }
}

fn in_window(start: usize, duration: usize, elapsed: usize) -> bool {
    elapsed >= start && elapsed < start + duration
}

impl RefinementPlan {
    pub fn none() -> Self {
        RefinementPlan { gibbs: None, soft_mask: None, rare: None }
    }

    /// The default plan with windows rescaled from 100 steps to `steps`.
    pub fn default_for(steps: usize) -> Self {
        let scale = |x: usize| ((x * steps) as f64 / 100.0).round() as usize;
        let fit = |start: usize, duration: usize| {
            let duration = scale(duration).max(1).min(steps);
            (scale(start).clamp(1, steps + 1 - duration), duration)
        };
        let mut plan = Self::default();
        if let Some(g) = plan.gibbs.as_mut() {
            (g.start, g.duration) = fit(g.start, g.duration);
        }
        if let Some(s) = plan.soft_mask.as_mut() {
            (s.start, s.duration) = fit(s.start, s.duration);
        }
        plan
    }

    /// Kernels firing after `elapsed` steps, in composition order.
    pub fn active(&self, elapsed: usize) -> Vec<Kernel> {
        let mut out = Vec::new();
        if self.gibbs.as_ref().is_some_and(|g| in_window(g.start, g.duration, elapsed)) {
            out.push(Kernel::Gibbs);
        }
        if self.rare.as_ref().is_some_and(|r| in_window(r.start, r.duration, elapsed)) {
            out.push(Kernel::Rare);
        }
        if self.soft_mask.as_ref().is_some_and(|s| in_window(s.start, s.duration, elapsed)) {
            out.push(Kernel::SoftMask);
        }
        out
    }

    /// Every window must lie inside `[1, T]`.
    pub fn validate(&self, steps: usize) -> Result<()> {
        let windows = [
            self.gibbs.as_ref().map(|b| ("gibbs", b.start, b.duration)),
            self.rare.as_ref().map(|b| ("rare", b.start, b.duration)),
            self.soft_mask.as_ref().map(|b| ("soft_mask", b.start, b.duration)),
        ];
        for (name, start, duration) in windows.into_iter().flatten() {
            if start < 1 || start + duration > steps + 1 {
                return Err(Error::InvalidConfig(format!("{name} window [{start}, {}) outside [1, {steps}]", start + duration)));
            }
        }
        if let Some(r) = &self.rare {
            if !(r.fraction > 0.0 && r.fraction <= 1.0) {
                return Err(Error::InvalidConfig("rare fraction must lie in (0,1]".into()));
            }
        }
        Ok(())
    }
}

fn level(t: usize) -> usize {
    t.max(1)
}

fn resample_nodes<R: Rng + ?Sized>(x: &mut SceneGraphState, probs: &crate::denoiser::DenoiserOutput, rng: &mut R) {
    for i in 0..x.n_nodes() {
        x.set_node(i, sample_index(probs.obj(i), rng));
    }
}

fn resample_edges<R: Rng + ?Sized>(x: &mut SceneGraphState, probs: &crate::denoiser::DenoiserOutput, rng: &mut R) {
    let pairs: Vec<_> = x.pairs().collect();
    for (i, j) in pairs {
        let e = (rng.random::<f64>() < probs.edge(i, j)) as u8;
        match (e, x.edge(i, j)) {
            (0, _) => x.set_pair(i, j, 0, 0),
            (_, 0) => x.set_pair(i, j, 1, sample_index(probs.rel(i, j), rng) + 1),
            _ => {}
        }
    }
}

/// Split Gibbs: re-draws one entity block from the clean conditional with
/// every other block clamped. Relations are touched only on active pairs.
pub fn gibbs_refine<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x: &SceneGraphState,
    denoiser: &D,
    t: usize,
    block: Block,
    sweeps: usize,
    rng: &mut R,
) -> Result<SceneGraphState> {
    let mut y = x.clone();
    for _ in 0..sweeps {
        let out = denoiser.predict(&y, level(t))?;
        match block {
            Block::V => resample_nodes(&mut y, &out, rng),
            Block::E => resample_edges(&mut y, &out, rng),
            Block::R => {
                let active: Vec<_> = y.active_edges().map(|(i, j, _)| (i, j)).collect();
                for (i, j) in active {
                    y.set_pair(i, j, 1, sample_index(out.rel(i, j), rng) + 1);
                }
            }
        }
    }
    Ok(y)
}

/// Entities picked for re-masking: node `i` is `(true, i, 0)`, active pair
/// `(i, j)` is `(false, i, j)`. Ranked by entropy, ties by position.
fn select(x: &SceneGraphState, out: &crate::denoiser::DenoiserOutput, selection: Selection) -> Vec<(bool, usize, usize)> {
    let mut scored: Vec<((bool, usize, usize), f64)> = (0..x.n_nodes()).map(|i| ((true, i, 0), entropy(out.obj(i)))).collect();
    scored.extend(x.active_edges().map(|(i, j, _)| ((false, i, j), entropy(out.rel(i, j)))));
    match selection {
        Selection::Entropy(tau) => scored.into_iter().filter(|(_, h)| *h > tau).map(|(e, _)| e).collect(),
        Selection::TopK(k) => top(scored, k),
        Selection::TopFraction(f) => {
            let k = (f * scored.len() as f64 - 1e-9).ceil().max(0.0) as usize;
            top(scored, k)
        }
    }
}

fn top(mut scored: Vec<((bool, usize, usize), f64)>, k: usize) -> Vec<(bool, usize, usize)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.into_iter().take(k).map(|(e, _)| e).collect()
}

/// Soft-mask: re-masks the most uncertain entities and re-draws them from
/// the clean prediction given the masked state.
pub fn soft_mask_refine<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x: &SceneGraphState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    t: usize,
    selection: Selection,
    rng: &mut R,
) -> Result<SceneGraphState> {
    let out = denoiser.predict(x, level(t))?;
    let chosen = select(x, &out, selection);
    if chosen.is_empty() {
        return Ok(x.clone());
    }
    let mut y = x.clone();
    for &(is_node, i, j) in &chosen {
        if is_node {
            y.set_node(i, schedule.mask_obj());
        } else {
            y.set_pair(i, j, 1, schedule.mask_rel());
        }
    }
    let out = denoiser.predict(&y, level(t))?;
    for &(is_node, i, j) in &chosen {
        if is_node {
            y.set_node(i, sample_index(out.obj(i), rng));
        } else {
            y.set_pair(i, j, 1, sample_index(out.rel(i, j), rng) + 1);
        }
    }
    Ok(y)
}

/// `p(r) exp(beta s(r))`, renormalized.
pub fn tilt(p: &[f64], scores: &[f64], beta: f64) -> Vec<f64> {
    let logs: Vec<f64> = p.iter().zip(scores).map(|(&p, &s)| if p > 0.0 { p.ln() + beta * s } else { f64::NEG_INFINITY }).collect();
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return p.to_vec();
    }
    let e: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// `-ln p(r)` per relation `1..=K_rel` from the schedule's relation prior.
pub fn rarity_scores(schedule: &NoiseSchedule) -> Vec<f64> {
    schedule.prior_rel()[1..=schedule.num_relations()].iter().map(|p| -p.ln()).collect()
}

/// Rare-relation kernel: tilted relation re-draw on selected active pairs,
/// then edges given the new relations, then nodes given both.
#[allow(clippy::too_many_arguments)]
pub fn rare_refine<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x: &SceneGraphState,
    denoiser: &D,
    t: usize,
    beta_rare: f64,
    fraction: f64,
    scores: &[f64],
    rng: &mut R,
) -> Result<SceneGraphState> {
    let mut y = x.clone();
    let out = denoiser.predict(&y, level(t))?;
    let active: Vec<_> = y.active_edges().map(|(i, j, _)| (i, j)).collect();
    let chosen: Vec<(usize, usize)> = if fraction >= 1.0 {
        active
    } else {
        let k = (fraction * active.len() as f64).ceil() as usize;
        let mut idx = sample_indices(rng, active.len(), k.min(active.len())).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| active[k]).collect()
    };
    for (i, j) in chosen {
        let p = tilt(out.rel(i, j), scores, beta_rare);
        y.set_pair(i, j, 1, sample_index(&p, rng) + 1);
    }
    let out = denoiser.predict(&y, level(t))?;
    resample_edges(&mut y, &out, rng);
    let out = denoiser.predict(&y, level(t))?;
    resample_nodes(&mut y, &out, rng);
    Ok(y)
}

/// Applies the kernels whose windows contain the elapsed step count, in the
/// order Gibbs, rare, soft-mask. `t` is the current noise level of `x`.
pub fn apply_plan<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x: &SceneGraphState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    t: usize,
    plan: &RefinementPlan,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<SceneGraphState> {
    apply_plan_traced(x, denoiser, schedule, t, plan, opts, rng, &mut |_| {})
}

#[allow(clippy::too_many_arguments)]
pub fn apply_plan_traced<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x: &SceneGraphState,
    denoiser: &D,
    schedule: &NoiseSchedule,
    t: usize,
    plan: &RefinementPlan,
    _opts: &SamplerOptions,
    rng: &mut R,
    hook: &mut dyn FnMut(Kernel),
) -> Result<SceneGraphState> {
    let elapsed = schedule.steps().saturating_sub(t);
    let mut y = x.clone();
    for kernel in plan.active(elapsed) {
        hook(kernel);
        y = match kernel {
            Kernel::Gibbs => {
                let g = plan.gibbs.as_ref().unwrap();
                let mut z = y;
                for &b in &g.order {
                    z = gibbs_refine(&z, denoiser, t, b, g.sweeps, rng)?;
                }
                z
            }
            Kernel::Rare => {
                let r = plan.rare.as_ref().unwrap();
                let scores = r.scores.clone().unwrap_or_else(|| rarity_scores(schedule));
                rare_refine(&y, denoiser, t, r.beta_rare, r.fraction, &scores, rng)?
            }
            Kernel::SoftMask => {
                let s = plan.soft_mask.as_ref().unwrap();
                soft_mask_refine(&y, denoiser, schedule, t, s.selection, rng)?
            }
        };
    }
    Ok(y)
}
