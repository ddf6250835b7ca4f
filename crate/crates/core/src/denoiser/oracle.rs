use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::denoiser::{Denoiser, DenoiserOutput};
use crate::error::{Error, Result};
use crate::graph::SceneGraphState;
use crate::reverse::FreeSet;
use crate::schedule::{Channel, NoiseSchedule};

type CacheKey = (usize, Vec<usize>, Vec<usize>, Vec<bool>);

/// Exact Bayes predictor over an enumerated data distribution:
/// `p(x_0 | x_t) ∝ p_data(x_0) q(x_t | x_0)`, reported as per-entity
/// marginals. When the schedule never produces mask tokens, a mask in the
/// input is read as "unobserved".
pub struct TabularOracle {
    schedule: NoiseSchedule,
    support: Vec<(SceneGraphState, f64)>,
    cache: RwLock<HashMap<CacheKey, Arc<DenoiserOutput>>>,
}

impl TabularOracle {
    /// `support` holds clean states with nonnegative weights; duplicates merge.
    pub fn new(schedule: NoiseSchedule, support: Vec<(SceneGraphState, f64)>) -> Result<Self> {
        let mut merged: HashMap<SceneGraphState, f64> = HashMap::new();
        let mut order = Vec::new();
        for (mut s, w) in support {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::InvalidConfig(format!("support weight {w}")));
            }
            if s.nodes().iter().any(|&v| v >= schedule.mask_obj()) || s.relations().iter().any(|&r| r >= schedule.mask_rel()) {
                return Err(Error::MaskPresent);
            }
            s.set_boxes(None);
            let slot = merged.entry(s.clone()).or_insert_with(|| {
                order.push(s);
                0.0
            });
            *slot += w;
        }
        let total: f64 = merged.values().sum();
        if total <= 0.0 {
            return Err(Error::EmptySampleSet);
        }
        let support = order
            .into_iter()
            .map(|s| {
                let w = merged[&s] / total;
                (s, w)
            })
            .collect();
        Ok(TabularOracle { schedule, support, cache: RwLock::new(HashMap::new()) })
    }

    /// Empirical distribution of a corpus.
    pub fn from_corpus(schedule: NoiseSchedule, corpus: &[SceneGraphState]) -> Result<Self> {
        Self::new(schedule, corpus.iter().map(|s| (s.clone(), 1.0)).collect())
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn support(&self) -> &[(SceneGraphState, f64)] {
        &self.support
    }

    /// `q(x_t | x_0)` with unobservable masks marginalized out.
    pub fn likelihood(&self, x0: &SceneGraphState, x_t: &SceneGraphState, t: usize) -> f64 {
        self.likelihood_clamped(x0, x_t, t, None)
    }

    /// Likelihood when entities outside `free` are exact observations of
    /// `x_0`. A pair whose edge is clamped but whose relation is free
    /// contributes the edge indicator times the relation observation term.
    pub fn likelihood_clamped(&self, x0: &SceneGraphState, x_t: &SceneGraphState, t: usize, free: Option<&FreeSet>) -> f64 {
        let s = &self.schedule;
        let qv = s.qbar(Channel::Node, t);
        let qp = s.qbar(Channel::Pair, t);
        let missing = s.mask_mix() == 0.0;
        let n = x_t.n_nodes();
        let mut p = 1.0;
        for i in 0..n {
            let b = x_t.node(i);
            if free.is_some_and(|f| !f.nodes[i]) {
                if x0.node(i) != b {
                    return 0.0;
                }
            } else if !(missing && b == s.mask_obj()) {
                p *= qv[[x0.node(i), b]];
            }
        }
        for (i, j) in x_t.pairs() {
            let b = x_t.relation(i, j);
            let a = x0.relation(i, j);
            let k = i * n + j;
            let (edge_known, rel_known) = free.map_or((false, false), |f| (!f.edges[k], !f.relations[k]));
            if edge_known && x0.edge(i, j) != x_t.edge(i, j) {
                return 0.0;
            }
            p *= if rel_known {
                if a == b { 1.0 } else { 0.0 }
            } else if missing && b == s.mask_rel() {
                if edge_known { 1.0 } else { 1.0 - qp[[a, 0]] }
            } else {
                qp[[a, b]]
            };
            if p == 0.0 {
                return 0.0;
            }
        }
        p
    }

    /// Joint posterior over the support, unnormalized.
    pub fn posterior_weights(&self, x_t: &SceneGraphState, t: usize) -> Vec<f64> {
        self.weights(x_t, t, None)
    }

    fn weights(&self, x_t: &SceneGraphState, t: usize, free: Option<&FreeSet>) -> Vec<f64> {
        self.support
            .iter()
            .map(|(x0, w)| if x0.n_nodes() == x_t.n_nodes() { w * self.likelihood_clamped(x0, x_t, t, free) } else { 0.0 })
            .collect()
    }

    fn compute(&self, x_t: &SceneGraphState, t: usize, free: Option<&FreeSet>) -> Result<DenoiserOutput> {
        let s = &self.schedule;
        let (k_obj, k_rel, n) = (s.num_objects(), s.num_relations(), x_t.n_nodes());
        let weights = self.weights(x_t, t, free);
        let z: f64 = weights.iter().sum();
        if z <= 0.0 {
            return Err(Error::UnreachableState);
        }
        let mut obj = vec![0.0; n * k_obj];
        let mut edge = vec![0.0; n * n];
        let mut rel = vec![0.0; n * n * k_rel];
        for ((x0, _), w) in self.support.iter().zip(&weights) {
            if *w == 0.0 {
                continue;
            }
            let w = w / z;
            for i in 0..n {
                obj[i * k_obj + x0.node(i)] += w;
            }
            for (i, j, r) in x0.active_edges() {
                let p = i * n + j;
                edge[p] += w;
                rel[p * k_rel + r - 1] += w;
            }
        }
        let prior = &s.prior_rel()[1..=k_rel];
        for p in 0..n * n {
            let row = &mut rel[p * k_rel..(p + 1) * k_rel];
            let mass: f64 = row.iter().sum();
            if mass > 0.0 {
                row.iter_mut().for_each(|x| *x /= mass);
            } else {
                row.copy_from_slice(prior);
            }
            edge[p] = edge[p].min(1.0);
        }
        Ok(DenoiserOutput {
            n_nodes: n,
            k_obj,
            k_rel,
            obj_probs: obj,
            edge_probs: edge,
            rel_probs: rel,
            edge_logits: Vec::new(),
            box_preds: None,
        })
    }
}

impl TabularOracle {
    fn cached(&self, x_t: &SceneGraphState, t: usize, free: Option<&FreeSet>) -> Result<DenoiserOutput> {
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::OutOfRange { t, max: self.schedule.steps() });
        }
        let flags = free.map_or(Vec::new(), |f| f.nodes.iter().chain(&f.edges).chain(&f.relations).copied().collect());
        let key = (t, x_t.nodes().to_vec(), x_t.relations().to_vec(), flags);
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok((**hit).clone());
        }
        let out = self.compute(x_t, t, free)?;
        self.cache.write().unwrap().insert(key, Arc::new(out.clone()));
        Ok(out)
    }
}

impl Denoiser for TabularOracle {
    fn predict(&self, x_t: &SceneGraphState, t: usize) -> Result<DenoiserOutput> {
        self.cached(x_t, t, None)
    }

    fn predict_clamped(&self, x_t: &SceneGraphState, t: usize, free: &FreeSet) -> Result<DenoiserOutput> {
        self.cached(x_t, t, Some(free))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Vocabulary;
    use crate::schedule::ScheduleConfig;

    fn vocab() -> Vocabulary {
        Vocabulary::from_counts(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn near_identity_step_concentrates_on_truth() {
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_steps(100).with_mask_mix(0.0), &vocab()).unwrap();
        let mut a = SceneGraphState::with_nodes(vec![0, 1]);
        a.set_pair(0, 1, 1, 1);
        let b = SceneGraphState::with_nodes(vec![1, 0]);
        let oracle = TabularOracle::new(s, vec![(a.clone(), 0.5), (b, 0.5)]).unwrap();
        let out = oracle.predict(&a, 1).unwrap();
        assert!(out.obj(0)[0] >= 0.99);
        assert!(out.edge(0, 1) >= 0.99);
        for row in out.obj_probs.chunks(2).chain(out.rel_probs.chunks(2)) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_node_is_unobserved_without_mask_noise() {
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_steps(5).with_mask_mix(0.0), &vocab()).unwrap();
        let a = SceneGraphState::with_nodes(vec![0, 1]);
        let b = SceneGraphState::with_nodes(vec![1, 1]);
        let oracle = TabularOracle::new(s, vec![(a, 3.0), (b, 1.0)]).unwrap();
        let x = SceneGraphState::with_nodes(vec![2, 1]);
        let out = oracle.predict(&x, 1).unwrap();
        assert!((out.obj(0)[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn cached_prediction_is_identical() {
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_steps(5), &vocab()).unwrap();
        let oracle = TabularOracle::from_corpus(s, &[SceneGraphState::with_nodes(vec![0, 1])]).unwrap();
        let x = SceneGraphState::with_nodes(vec![1, 1]);
        assert_eq!(oracle.predict(&x, 3).unwrap(), oracle.predict(&x, 3).unwrap());
        assert!(oracle.predict(&x, 0).is_err());
        assert!(matches!(oracle.predict(&SceneGraphState::with_nodes(vec![0]), 2), Err(Error::UnreachableState)));
    }
}
