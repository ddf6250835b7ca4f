//! Forward corruption: one-step kernel and closed-form marginals.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::SceneGraphState;
use crate::schedule::{sample_index, Channel, NoiseSchedule};

fn check_t(schedule: &NoiseSchedule, t: usize) -> Result<()> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::OutOfRange { t, max: schedule.steps() });
    }
    Ok(())
}

fn check_clean(x: &SceneGraphState, schedule: &NoiseSchedule) -> Result<()> {
    let masked = x.nodes().iter().any(|&v| v >= schedule.mask_obj())
        || x.relations().iter().any(|&r| r >= schedule.mask_rel());
    if masked {
        Err(Error::MaskPresent)
    } else {
        Ok(())
    }
}

/// One forward step `x_{t-1} -> x_t`. Nodes are visited first, then pairs
/// row-major; each pair draws its edge bit and then its relation.
pub fn corrupt_step<R: Rng + ?Sized>(
    x_prev: &SceneGraphState,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<SceneGraphState> {
    check_t(schedule, t)?;
    let qv = schedule.q(Channel::Node, t);
    let qe = schedule.q(Channel::Edge, t);
    let qr = schedule.q(Channel::Relation, t);
    let n = x_prev.n_nodes();
    let mut out = x_prev.clone();
    for i in 0..n {
        let row = qv.row(x_prev.node(i));
        out.set_node(i, sample_index(row.as_slice().unwrap(), rng));
    }
    for (i, j) in x_prev.pairs() {
        let e_prev = x_prev.edge(i, j) as usize;
        let e = sample_index(qe.row(e_prev).as_slice().unwrap(), rng);
        let r = if e == 0 {
            0
        } else if x_prev.relation(i, j) == 0 {
            sample_index(schedule.prior_rel(), rng)
        } else {
            sample_index(qr.row(x_prev.relation(i, j)).as_slice().unwrap(), rng)
        };
        out.set_relation(i, j, r);
    }
    Ok(out)
}

/// Per-entity laws of `x_t` given a clean `x_0`.
///
/// `pair[i * n + j]` is a distribution over the relation alphabet where
/// index 0 means the pair is inactive; diagonal entries are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub n_nodes: usize,
    pub node: Vec<Vec<f64>>,
    pub pair: Vec<Vec<f64>>,
}

impl Marginals {
    pub fn edge_prob(&self, i: usize, j: usize) -> f64 {
        1.0 - self.pair[i * self.n_nodes + j][0]
    }

    /// Relation law conditioned on the pair being active.
    pub fn relation_given_active(&self, i: usize, j: usize) -> Vec<f64> {
        let row = &self.pair[i * self.n_nodes + j];
        let z = 1.0 - row[0];
        let mut out: Vec<f64> = row.iter().map(|p| if z > 0.0 { p / z } else { 0.0 }).collect();
        out[0] = 0.0;
        out
    }

    /// Probability of an observed state under these laws.
    pub fn likelihood(&self, x: &SceneGraphState) -> f64 {
        let n = self.n_nodes;
        let mut p = 1.0;
        for i in 0..n {
            p *= self.node[i][x.node(i)];
        }
        for (i, j) in x.pairs() {
            p *= self.pair[i * n + j][x.relation(i, j)];
        }
        p
    }
}

/// Closed-form `q(x_t | x_0)`. Pairs follow the joint (edge, relation)
/// chain, so an edge that switched off and back on carries a relation drawn
/// afresh from the prior.
pub fn marginal_distribution(x0: &SceneGraphState, t: usize, schedule: &NoiseSchedule) -> Result<Marginals> {
    check_t(schedule, t)?;
    check_clean(x0, schedule)?;
    Ok(marginals_unchecked(x0, t, schedule))
}

pub(crate) fn marginals_unchecked(x0: &SceneGraphState, t: usize, schedule: &NoiseSchedule) -> Marginals {
    let n = x0.n_nodes();
    let qv = schedule.qbar(Channel::Node, t);
    let qp = schedule.qbar(Channel::Pair, t);
    let node = (0..n).map(|i| qv.row(x0.node(i)).to_vec()).collect();
    let mut pair = vec![Vec::new(); n * n];
    for (i, j) in x0.pairs() {
        pair[i * n + j] = qp.row(x0.relation(i, j)).to_vec();
    }
    Marginals { n_nodes: n, node, pair }
}

/// Draws `x_t ~ q(x_t | x_0)` directly. Same visitation order as
/// [`corrupt_step`]; each pair draws its edge bit, then its relation given
/// the bit.
pub fn sample_marginal<R: Rng + ?Sized>(
    x0: &SceneGraphState,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<SceneGraphState> {
    let m = marginal_distribution(x0, t, schedule)?;
    let n = x0.n_nodes();
    let mut out = x0.clone();
    for i in 0..n {
        out.set_node(i, sample_index(&m.node[i], rng));
    }
    for (i, j) in x0.pairs() {
        let active = rng.random::<f64>() < m.edge_prob(i, j);
        let r = if active { sample_index(&m.relation_given_active(i, j), rng) } else { 0 };
        out.set_relation(i, j, r);
    }
    Ok(out)
}

/// Full trajectory `x_0, x_1, ..., x_T` by repeated [`corrupt_step`].
pub fn trajectory<R: Rng + ?Sized>(
    x0: &SceneGraphState,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<SceneGraphState>> {
    let mut out = Vec::with_capacity(schedule.steps() + 1);
    out.push(x0.clone());
    for t in 1..=schedule.steps() {
        let next = corrupt_step(out.last().unwrap(), t, schedule, rng)?;
        out.push(next);
    }
    Ok(out)
}
