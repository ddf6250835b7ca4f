#![allow(dead_code)]

use std::collections::HashMap;

use dsg_core::denoiser::TabularOracle;
use dsg_core::reverse::{edge_posterior, node_posterior, relation_posterior};
use dsg_core::schedule::Channel;
use dsg_core::{Denoiser, NoiseSchedule, ScheduleConfig, SceneGraphState, Vocabulary};

/// Two objects, two relations, edge density 0.5.
pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::from_counts(vec!["cat".into(), "dog".into()], vec!["near".into(), "under".into()], vec![3.0, 2.0], vec![3.0, 1.0], 0.4).unwrap()
}

/// Every clean 2-node state: 4 node labelings times 3 states per pair.
pub fn all_states() -> Vec<SceneGraphState> {
    let mut out = Vec::new();
    for v0 in 0..2 {
        for v1 in 0..2 {
            for p01 in 0..3 {
                for p10 in 0..3 {
                    let mut x = SceneGraphState::with_nodes(vec![v0, v1]);
                    if p01 > 0 {
                        x.set_pair(0, 1, 1, p01);
                    }
                    if p10 > 0 {
                        x.set_pair(1, 0, 1, p10);
                    }
                    out.push(x);
                }
            }
        }
    }
    out
}

/// A fixed non-uniform data law over a handful of the 36 states.
pub fn data_law() -> Vec<(SceneGraphState, f64)> {
    let s = all_states();
    let pick = |v0: usize, v1: usize, p01: usize, p10: usize| s[((v0 * 2 + v1) * 3 + p01) * 3 + p10].clone();
    vec![
        (pick(0, 1, 1, 0), 0.35),
        (pick(0, 1, 2, 0), 0.1),
        (pick(1, 1, 0, 0), 0.2),
        (pick(0, 0, 1, 1), 0.15),
        (pick(1, 0, 0, 2), 0.2),
    ]
}

pub fn schedule(steps: usize, mask_mix: f64) -> NoiseSchedule {
    NoiseSchedule::build(&ScheduleConfig::default().with_steps(steps).with_mask_mix(mask_mix), &tiny_vocab()).unwrap()
}

pub fn oracle(steps: usize, mask_mix: f64) -> TabularOracle {
    TabularOracle::new(schedule(steps, mask_mix), data_law()).unwrap()
}

/// Total variation between an empirical histogram and a reference law.
pub fn tv(counts: &HashMap<SceneGraphState, usize>, reference: &[(SceneGraphState, f64)]) -> f64 {
    let n: usize = counts.values().sum();
    let mut d = 0.0;
    let mut seen = 0.0;
    for (x, p) in reference {
        let q = counts.get(x).copied().unwrap_or(0) as f64 / n as f64;
        d += (q - p).abs();
        seen += q;
    }
    0.5 * (d + (1.0 - seen).max(0.0))
}

/// Enumerates `(z_0 = c, z_{t-1}, z_t)` for each clean candidate, conditions
/// on `z_t = b`, and mixes the per-candidate posteriors by `pred`.
pub fn brute_posterior(pred: &[f64], b: usize, s: &NoiseSchedule, ch: Channel, t: usize) -> Vec<f64> {
    let (q, qp) = (s.q(ch, t), s.qbar(ch, t - 1));
    let k = q.nrows();
    let mut out = vec![0.0; k];
    let mut mass = 0.0;
    for (c, &w) in pred.iter().enumerate() {
        let joint: Vec<f64> = (0..k).map(|a| qp[[c, a]] * q[[a, b]]).collect();
        let z: f64 = joint.iter().sum();
        if w == 0.0 || z == 0.0 {
            continue;
        }
        mass += w;
        for a in 0..k {
            out[a] += w * joint[a] / z;
        }
    }
    out.into_iter().map(|v| v / mass).collect()
}

/// Exact law of one factorized reverse step by enumerating all outputs.
pub fn exact_step<D: Denoiser + ?Sized>(x_t: &SceneGraphState, den: &D, s: &NoiseSchedule, t: usize) -> Vec<(SceneGraphState, f64)> {
    let out_v = den.predict(x_t, t).unwrap();
    let mut law = Vec::new();
    for y in all_states() {
        let mut p = 1.0;
        for i in 0..2 {
            p *= node_posterior(out_v.obj(i), x_t.node(i), s, t).unwrap()[y.node(i)];
        }
        let mut z = x_t.clone();
        for i in 0..2 {
            z.set_node(i, y.node(i));
        }
        let out_e = den.predict(&z, t).unwrap();
        for (i, j) in y.pairs() {
            let pe = edge_posterior(out_e.edge(i, j), x_t.edge(i, j), s, t).unwrap();
            p *= pe[y.edge(i, j) as usize];
            let r = match (y.edge(i, j), x_t.edge(i, j)) {
                (0, _) => 0,
                (_, 1) => x_t.relation(i, j),
                _ => s.mask_rel(),
            };
            z.set_pair(i, j, y.edge(i, j), r);
        }
        let out_r = den.predict(&z, t).unwrap();
        for (i, j) in y.pairs() {
            let pr = relation_posterior(out_r.rel(i, j), x_t.relation(i, j), y.edge(i, j), x_t.edge(i, j), s, t).unwrap();
            p *= pr[y.relation(i, j)];
        }
        if p > 0.0 {
            law.push((y, p));
        }
    }
    law
}
