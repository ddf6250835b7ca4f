//! Reward-tilted sequential Monte Carlo over the reverse chain.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::graph::SceneGraphState;
use crate::refine::{apply_plan, RefinementPlan};
use crate::reverse::{initial_state, resolve_masks, reverse_step, SamplerOptions};
use crate::reward::Reward;
use crate::schedule::{sample_index, NoiseSchedule};

pub fn incremental_weight(r_new: f64, r_old: f64, beta: f64) -> f64 {
    (beta * (r_new - r_old)).exp()
}

/// `(sum w)^2 / sum w^2`.
pub fn ess(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Systematic resampling: one uniform offset, `D` evenly spaced positions
/// against the cumulative normalized weights.
pub fn systematic_indices<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let d = weights.len();
    let total: f64 = weights.iter().sum();
    if d == 0 || !(total > 0.0) || !total.is_finite() {
        return Err(Error::AllZeroWeights);
    }
    let u: f64 = rng.random::<f64>() / d as f64;
    let mut out = Vec::with_capacity(d);
    let mut cum = weights[0] / total;
    let mut k = 0;
    for m in 0..d {
        let pos = u + m as f64 / d as f64;
        while pos >= cum && k + 1 < d {
            k += 1;
            cum += weights[k] / total;
        }
        out.push(k);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<SceneGraphState>,
    /// Normalized to sum to one.
    pub weights: Vec<f64>,
    pub rewards: Vec<f64>,
    pub beta: f64,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn ess(&self) -> f64 {
        ess(&self.weights)
    }

    /// Multiplies in `exp(beta (r_new - r_old))` per particle and renormalizes.
    pub fn reweight(&mut self, new_rewards: Vec<f64>) -> Result<()> {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(new_rewards.iter().zip(&self.rewards))
            .map(|(w, (rn, ro))| w.ln() + self.beta * (rn - ro))
            .collect();
        self.weights = normalize_log(&logs)?;
        self.rewards = new_rewards;
        Ok(())
    }
}

fn normalize_log(logs: &[f64]) -> Result<Vec<f64>> {
    let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return Err(Error::AllZeroWeights);
    }
    let w: Vec<f64> = logs.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// Copies particles per systematic resampling and resets weights to uniform.
pub fn resample<R: Rng + ?Sized>(set: &ParticleSet, rng: &mut R) -> Result<ParticleSet> {
    let idx = systematic_indices(&set.weights, rng)?;
    let d = set.len();
    Ok(ParticleSet {
        particles: idx.iter().map(|&k| set.particles[k].clone()).collect(),
        weights: vec![1.0 / d as f64; d],
        rewards: idx.iter().map(|&k| set.rewards[k]).collect(),
        beta: set.beta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// Resample when ESS drops below `D / 2`.
    #[default]
    Adaptive,
    EveryStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// Highest final reward, lowest index on ties.
    #[default]
    Best,
    /// One particle drawn by the final weights.
    Sample,
}

/// How the intermediate clean estimate is decoded for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    #[default]
    Argmax,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    pub particles: usize,
    pub beta: f64,
    pub resample: ResampleMode,
    pub return_mode: ReturnMode,
    pub estimate: Estimate,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig { particles: 16, beta: 4.0, resample: ResampleMode::Adaptive, return_mode: ReturnMode::Best, estimate: Estimate::Argmax }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidConfig("particles must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be finite and nonnegative, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Per-step diagnostics; `t` is the level the particles sit at after the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcStep {
    pub t: usize,
    pub max_reward: f64,
    pub mean_reward: f64,
    pub ess: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcOutput {
    pub graph: SceneGraphState,
    pub reward: f64,
    pub trace: Vec<SmcStep>,
}

fn estimate<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x: &SceneGraphState,
    denoiser: &D,
    t: usize,
    mode: Estimate,
    rng: &mut R,
) -> Result<SceneGraphState> {
    let out = denoiser.predict(x, t)?;
    Ok(match mode {
        Estimate::Argmax => out.argmax_state(),
        Estimate::Sample => {
            let mut g = SceneGraphState::with_nodes((0..x.n_nodes()).map(|i| sample_index(out.obj(i), rng)).collect());
            for (i, j) in x.pairs() {
                if rng.random::<f64>() < out.edge(i, j) {
                    g.set_pair(i, j, 1, sample_index(out.rel(i, j), rng) + 1);
                }
            }
            g
        }
    })
}

/// Rewards of the clean estimates `G_0(x, t)`; at `t = 0` the particles are
/// scored directly.
fn score_all<D: Denoiser + ?Sized, W: Reward + ?Sized, R: Rng + ?Sized>(
    xs: &[SceneGraphState],
    denoiser: &D,
    reward: &W,
    t: usize,
    mode: Estimate,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if t > 0 && mode == Estimate::Sample {
        return xs.iter().map(|x| reward.score(&estimate(x, denoiser, t, mode, rng)?)).collect();
    }
    xs.par_iter()
        .map(|x| {
            if t == 0 {
                reward.score(x)
            } else {
                reward.score(&denoiser.predict(x, t)?.argmax_state())
            }
        })
        .collect()
}

/// Samples from `p(G_0) exp(beta R(G_0))` approximately. Particles start
/// from the terminal law with log-weights `beta R(G_0(x_T))`, so the
/// incremental weights telescope to `exp(beta R(x_0))` at the end.
///
/// With one particle and adaptive resampling the generator is consumed
/// exactly as by [`crate::reverse::sample`].
#[allow(clippy::too_many_arguments)]
pub fn smc_sample<D: Denoiser + ?Sized, W: Reward + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    reward: &W,
    config: &SmcConfig,
    n_nodes: usize,
    plan: Option<&RefinementPlan>,
    opts: &SamplerOptions,
    rng: &mut R,
) -> Result<SmcOutput> {
    config.validate()?;
    if n_nodes == 0 {
        return Err(Error::InvalidConfig("n_nodes must be at least 1".into()));
    }
    let d = config.particles;
    let steps = schedule.steps();
    let particles: Vec<_> = (0..d).map(|_| initial_state(schedule, n_nodes, rng)).collect();
    let rewards = score_all(&particles, denoiser, reward, steps, config.estimate, rng)?;
    let logs: Vec<f64> = rewards.iter().map(|r| config.beta * r).collect();
    let mut set = ParticleSet { weights: normalize_log(&logs)?, particles, rewards, beta: config.beta };
    let mut trace = Vec::with_capacity(steps);

    for t in (1..=steps).rev() {
        for x in set.particles.iter_mut() {
            let mut y = reverse_step(x, denoiser, schedule, t, opts, rng)?;
            if let Some(plan) = plan {
                y = apply_plan(&y, denoiser, schedule, t - 1, plan, opts, rng)?;
            }
            if t == 1 {
                y = resolve_masks(&y, denoiser, schedule)?;
            }
            *x = y;
        }
        let new = score_all(&set.particles, denoiser, reward, t - 1, config.estimate, rng)?;
        set.reweight(new)?;
        let ess = set.ess();
        let due = match config.resample {
            ResampleMode::Adaptive => ess < d as f64 / 2.0,
            ResampleMode::EveryStep => true,
        };
        let resampled = d > 1 && t > 1 && due;
        trace.push(SmcStep {
            t: t - 1,
            max_reward: set.rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean_reward: set.rewards.iter().sum::<f64>() / d as f64,
            ess,
            resampled,
        });
        if resampled {
            set = resample(&set, rng)?;
        }
    }

    let pick = match config.return_mode {
        ReturnMode::Best => {
            let mut best = 0;
            for (k, &r) in set.rewards.iter().enumerate() {
                if r > set.rewards[best] {
                    best = k;
                }
            }
            best
        }
        ReturnMode::Sample if d > 1 => sample_index(&set.weights, rng),
        ReturnMode::Sample => 0,
    };
    Ok(SmcOutput { reward: set.rewards[pick], graph: set.particles.swap_remove(pick), trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weight_examples() {
        assert_eq!(incremental_weight(0.3, 0.3, 5.0), 1.0);
        assert_eq!(incremental_weight(0.9, 0.1, 0.0), 1.0);
        assert!((incremental_weight(0.5, 0.0, 2.0) - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn systematic_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let idx = systematic_indices(&[0.75, 0.25, 0.0, 0.0], &mut rng).unwrap();
            assert_eq!(idx.iter().filter(|&&k| k == 0).count(), 3);
            assert_eq!(idx.iter().filter(|&&k| k == 1).count(), 1);
            let mut u = systematic_indices(&[1.0; 7], &mut rng).unwrap();
            u.sort();
            assert_eq!(u, (0..7).collect::<Vec<_>>());
            assert!(systematic_indices(&[1.0, 0.0, 0.0], &mut rng).unwrap().iter().all(|&k| k == 0));
        }
        assert!(matches!(systematic_indices(&[0.0, 0.0], &mut rng), Err(Error::AllZeroWeights)));
    }

    #[test]
    fn ess_bounds() {
        assert!((ess(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert!((ess(&[1.0, 0.0, 0.0]) - 1.0).abs() < 1e-12);
    }
}
