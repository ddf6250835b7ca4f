//! Corruption rates, priors and cached transition matrices for the node,
//! edge and relation channels.
//!
//! Matrices are indexed by the raw label value of their channel:
//! - node: `0..K_obj` plus the mask at `K_obj`;
//! - edge: `{0, 1}`;
//! - relation: `0` (null), `1..=K_rel`, mask at `K_rel + 1`;
//! - pair: the joint (edge, relation) chain, indexed like relations where
//!   `0` means "edge inactive". Its rows are exactly one forward step of a
//!   single ordered pair, so its cumulative products are the exact
//!   closed-form pair marginals.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SceneGraphState, Vocabulary};

pub type Matrix = Array2<f64>;

const COSINE_OFFSET: f64 = 0.008;
pub const MIN_BETA: f64 = 1e-4;
pub const RETENTION_BOUND: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleShape {
    #[default]
    Cosine,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    #[default]
    Empirical,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Node,
    Edge,
    Relation,
    Pair,
}

/// Schedule block of the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub shape: ScheduleShape,
    pub mask_mix: f64,
    pub prior: PriorKind,
    pub prior_floor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 100,
            shape: ScheduleShape::Cosine,
            mask_mix: 0.2,
            prior: PriorKind::Empirical,
            prior_floor: 1e-6,
        }
    }
}

impl ScheduleConfig {
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_mask_mix(mut self, mask_mix: f64) -> Self {
        self.mask_mix = mask_mix;
        self
    }

    pub fn with_shape(mut self, shape: ScheduleShape) -> Self {
        self.shape = shape;
        self
    }
}

/// Per-step corruption rates with `prod(1 - beta) <= 1e-4`.
pub fn betas(steps: usize, shape: ScheduleShape) -> Vec<f64> {
    let retention = |t: usize| -> f64 {
        let frac = t as f64 / steps as f64;
        match shape {
            ScheduleShape::Cosine => {
                let f = |x: f64| ((x + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                f(frac) / f(0.0)
            }
            ScheduleShape::Linear => 1.0 - frac,
        }
    };
    let mut out: Vec<f64> = (1..=steps)
        .map(|t| {
            let prev = retention(t - 1);
            let beta = if prev <= 0.0 { 1.0 } else { 1.0 - retention(t) / prev };
            beta.clamp(MIN_BETA, 1.0)
        })
        .collect();
    // the final step reaches the prior exactly
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// One step of the hybrid random + mask kernel over an alphabet.
///
/// `prior` covers the whole alphabet (zero on the mask and any excluded
/// index). A non-mask row `a` is `(1-b) e_a + b (rho e_mask + (1-rho) prior)`;
/// the mask row keeps mask with `(1-b) + b rho` and jumps to the prior with
/// `b (1-rho)`. Without a mask index the kernel is `(1-b) I + b prior`.
pub fn transition_matrix(beta: f64, prior: &[f64], mask_mix: f64, mask_index: Option<usize>) -> Matrix {
    let k = prior.len();
    let mut q = Matrix::zeros((k, k));
    let rho = if mask_index.is_some() { mask_mix } else { 0.0 };
    for a in 0..k {
        for b in 0..k {
            q[[a, b]] = beta * (1.0 - rho) * prior[b];
        }
        q[[a, a]] += 1.0 - beta;
        if let Some(m) = mask_index {
            q[[a, m]] += beta * rho;
        }
    }
    q
}

fn smooth(freq: &[f64], floor: f64) -> Vec<f64> {
    let floored: Vec<f64> = freq.iter().map(|&p| p.max(floor)).collect();
    let total: f64 = floored.iter().sum();
    floored.iter().map(|p| p / total).collect()
}

/// Immutable schedule with cached per-step and cumulative matrices.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    k_obj: usize,
    k_rel: usize,
    beta_node: Vec<f64>,
    beta_edge: Vec<f64>,
    beta_rel: Vec<f64>,
    prior_node: Vec<f64>,
    edge_rate: f64,
    prior_rel: Vec<f64>,
    // index t holds Q_t for t in 1..=T; index 0 is the identity
    q: [Vec<Matrix>; 4],
    qbar: [Vec<Matrix>; 4],
}

fn slot(channel: Channel) -> usize {
    match channel {
        Channel::Node => 0,
        Channel::Edge => 1,
        Channel::Relation => 2,
        Channel::Pair => 3,
    }
}

impl NoiseSchedule {
    pub fn build(config: &ScheduleConfig, vocab: &Vocabulary) -> Result<Self> {
        if config.steps == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&config.mask_mix) {
            return Err(Error::InvalidConfig(format!("mask_mix {} outside [0,1]", config.mask_mix)));
        }
        let k_obj = vocab.num_objects();
        let k_rel = vocab.num_relations();
        if k_obj == 0 {
            return Err(Error::DegenerateVocab("no object labels".into()));
        }
        if k_rel == 0 {
            return Err(Error::DegenerateVocab("no relation labels".into()));
        }
        let (obj_freq, rel_freq): (Vec<f64>, Vec<f64>) = match config.prior {
            PriorKind::Empirical => (vocab.object_freq().to_vec(), vocab.relation_freq()[1..].to_vec()),
            PriorKind::Uniform => (vec![1.0 / k_obj as f64; k_obj], vec![1.0 / k_rel as f64; k_rel]),
        };
        let obj_freq = smooth(&obj_freq, config.prior_floor);
        let rel_freq = smooth(&rel_freq, config.prior_floor);
        if obj_freq.iter().chain(&rel_freq).any(|&p| p == 0.0) {
            return Err(Error::DegenerateVocab("a prior entry is zero; raise prior_floor".into()));
        }
        let mut prior_node = obj_freq;
        prior_node.push(0.0);
        let mut prior_rel = vec![0.0];
        prior_rel.extend(rel_freq);
        prior_rel.push(0.0);
        let edge_rate = vocab.edge_density();

        let beta = betas(config.steps, config.shape);
        let mut schedule = NoiseSchedule {
            config: config.clone(),
            k_obj,
            k_rel,
            beta_node: beta.clone(),
            beta_edge: beta.clone(),
            beta_rel: beta,
            prior_node,
            edge_rate,
            prior_rel,
            q: Default::default(),
            qbar: Default::default(),
        };
        schedule.cache();
        Ok(schedule)
    }

    fn cache(&mut self) {
        let t_max = self.config.steps;
        let rho = self.config.mask_mix;
        let node_k = self.k_obj + 1;
        let rel_k = self.k_rel + 2;
        let edge_prior = [1.0 - self.edge_rate, self.edge_rate];
        let mut q: [Vec<Matrix>; 4] = [
            vec![Matrix::eye(node_k)],
            vec![Matrix::eye(2)],
            vec![Matrix::eye(rel_k)],
            vec![Matrix::eye(rel_k)],
        ];
        for t in 1..=t_max {
            let qv = transition_matrix(self.beta_node[t - 1], &self.prior_node, rho, Some(self.k_obj));
            let qe = transition_matrix(self.beta_edge[t - 1], &edge_prior, 0.0, None);
            let mut qr = transition_matrix(self.beta_rel[t - 1], &self.prior_rel, rho, Some(self.k_rel + 1));
            // the null relation sits outside the semantic chain
            for b in 0..rel_k {
                qr[[0, b]] = if b == 0 { 1.0 } else { 0.0 };
            }
            let qp = pair_kernel(&qe, &qr, &self.prior_rel);
            q[0].push(qv);
            q[1].push(qe);
            q[2].push(qr);
            q[3].push(qp);
        }
        let mut qbar: [Vec<Matrix>; 4] = Default::default();
        for c in 0..4 {
            let mut acc = q[c][0].clone();
            qbar[c].push(acc.clone());
            for t in 1..=t_max {
                acc = acc.dot(&q[c][t]);
                qbar[c].push(acc.clone());
            }
        }
        self.q = q;
        self.qbar = qbar;
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn mask_mix(&self) -> f64 {
        self.config.mask_mix
    }

    pub fn num_objects(&self) -> usize {
        self.k_obj
    }

    pub fn num_relations(&self) -> usize {
        self.k_rel
    }

    pub fn mask_obj(&self) -> usize {
        self.k_obj
    }

    pub fn mask_rel(&self) -> usize {
        self.k_rel + 1
    }

    pub fn betas(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Node => &self.beta_node,
            Channel::Edge | Channel::Pair => &self.beta_edge,
            Channel::Relation => &self.beta_rel,
        }
    }

    /// Object prior over the node alphabet (zero on the mask).
    pub fn prior_node(&self) -> &[f64] {
        &self.prior_node
    }

    /// `P(edge active)` under the edge prior.
    pub fn edge_rate(&self) -> f64 {
        self.edge_rate
    }

    /// Relation prior over the relation alphabet (zero on null and mask).
    pub fn prior_rel(&self) -> &[f64] {
        &self.prior_rel
    }

    /// Per-step kernel `Q_t`; `t = 0` is the identity.
    pub fn q(&self, channel: Channel, t: usize) -> &Matrix {
        &self.q[slot(channel)][t]
    }

    /// Cumulative kernel `Q_1 ... Q_t`; `t = 0` is the identity.
    pub fn qbar(&self, channel: Channel, t: usize) -> &Matrix {
        &self.qbar[slot(channel)][t]
    }

    /// Range-checked cumulative kernel for `1 <= t <= T`.
    pub fn cumulative(&self, channel: Channel, t: usize) -> Result<&Matrix> {
        if t == 0 || t > self.config.steps {
            return Err(Error::OutOfRange { t, max: self.config.steps });
        }
        Ok(self.qbar(channel, t))
    }

    /// Product of `1 - beta_s` over all steps for a channel.
    pub fn retention(&self, channel: Channel) -> f64 {
        self.betas(channel).iter().map(|b| 1.0 - b).product()
    }

    /// Factored stationary law of the random-corruption component.
    pub fn stationary_distribution(&self) -> Result<FactoredPrior> {
        if self.config.mask_mix != 0.0 {
            return Err(Error::MaskMixNonzero(self.config.mask_mix));
        }
        let mut pair = self.prior_rel.iter().map(|p| p * self.edge_rate).collect::<Vec<_>>();
        pair[0] = 1.0 - self.edge_rate;
        Ok(FactoredPrior { node: self.prior_node.clone(), pair })
    }

    /// Law of `x_T` when `x_0` is drawn from the priors. For `mask_mix = 0`
    /// this equals the stationary distribution; otherwise it carries the
    /// mask share reached at `T`.
    pub fn terminal_distribution(&self) -> FactoredPrior {
        let t = self.config.steps;
        let start_node = ndarray::Array1::from(self.prior_node.clone());
        let mut start_pair = self.prior_rel.iter().map(|p| p * self.edge_rate).collect::<Vec<_>>();
        start_pair[0] = 1.0 - self.edge_rate;
        let start_pair = ndarray::Array1::from(start_pair);
        FactoredPrior {
            node: start_node.dot(self.qbar(Channel::Node, t)).to_vec(),
            pair: start_pair.dot(self.qbar(Channel::Pair, t)).to_vec(),
        }
    }
}

/// Joint one-step kernel of an ordered pair's (edge, relation) state.
fn pair_kernel(qe: &Matrix, qr: &Matrix, prior_rel: &[f64]) -> Matrix {
    let k = qr.nrows();
    let mut p = Matrix::zeros((k, k));
    p[[0, 0]] = qe[[0, 0]];
    for b in 1..k {
        p[[0, b]] = qe[[0, 1]] * prior_rel[b];
    }
    for a in 1..k {
        p[[a, 0]] = qe[[1, 0]];
        for b in 1..k {
            p[[a, b]] = qe[[1, 1]] * qr[[a, b]];
        }
    }
    p
}

/// Independent per-node and per-pair laws over full alphabets.
/// `pair[0]` is the probability that an ordered pair is inactive.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredPrior {
    pub node: Vec<f64>,
    pub pair: Vec<f64>,
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

impl FactoredPrior {
    pub fn edge_rate(&self) -> f64 {
        1.0 - self.pair[0]
    }

    /// Draws nodes in order, then ordered pairs row-major.
    pub fn sample<R: Rng + ?Sized>(&self, n_nodes: usize, rng: &mut R) -> SceneGraphState {
        let mut s = SceneGraphState::empty(n_nodes);
        for i in 0..n_nodes {
            s.set_node(i, sample_index(&self.node, rng));
        }
        for i in 0..n_nodes {
            for j in 0..n_nodes {
                if i != j {
                    s.set_relation(i, j, sample_index(&self.pair, rng));
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab(objs: &[f64], rels: &[f64], density: f64) -> Vocabulary {
        Vocabulary::from_counts(
            (0..objs.len()).map(|k| format!("o{k}")).collect(),
            (0..rels.len()).map(|k| format!("r{k}")).collect(),
            objs.to_vec(),
            rels.to_vec(),
            density,
        )
        .unwrap()
    }

    fn assert_stochastic(m: &Matrix) {
        for row in m.rows() {
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-12, "row sum {}", row.sum());
        }
    }

    #[test]
    fn single_step_schedule_reaches_prior() {
        for shape in [ScheduleShape::Cosine, ScheduleShape::Linear] {
            let b = betas(1, shape);
            assert!(b[0] >= 1.0 - 1e-4);
        }
    }

    #[test]
    fn cosine_hundred_steps_meets_bound() {
        let b = betas(100, ScheduleShape::Cosine);
        let prod: f64 = b.iter().map(|x| 1.0 - x).product();
        assert!(prod <= RETENTION_BOUND);
        assert!(b.iter().all(|&x| (MIN_BETA..=1.0).contains(&x)));
    }

    #[test]
    fn empirical_priors_normalize_counts() {
        let v = vocab(&[30.0, 70.0], &[1.0], 0.5);
        let s = NoiseSchedule::build(&ScheduleConfig::default(), &v).unwrap();
        assert!((s.prior_node()[0] - 0.3).abs() < 1e-5);
        assert!((s.prior_node()[1] - 0.7).abs() < 1e-5);
    }

    #[test]
    fn zero_prior_without_floor_is_degenerate() {
        let v = vocab(&[0.0, 5.0], &[1.0], 0.5);
        let cfg = ScheduleConfig { prior_floor: 0.0, ..Default::default() };
        assert!(matches!(NoiseSchedule::build(&cfg, &v), Err(Error::DegenerateVocab(_))));
        assert!(NoiseSchedule::build(&ScheduleConfig::default(), &v).is_ok());
    }

    #[test]
    fn uniform_random_kernel_entries() {
        let q = transition_matrix(0.3, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0], 0.0, Some(3));
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 0.8 } else { 0.1 };
                assert!((q[[a, b]] - want).abs() < 1e-12);
            }
            assert_eq!(q[[a, 3]], 0.0);
        }
    }

    #[test]
    fn full_corruption_rows_equal_prior() {
        let prior = [0.2, 0.5, 0.3, 0.0];
        let q = transition_matrix(1.0, &prior, 0.0, Some(3));
        for a in 0..3 {
            for b in 0..4 {
                assert!((q[[a, b]] - prior[b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn pure_mask_share() {
        let q = transition_matrix(0.5, &[0.5, 0.5, 0.0], 1.0, Some(2));
        for a in 0..2 {
            assert!((q[[a, a]] - 0.5).abs() < 1e-15);
            assert!((q[[a, 2]] - 0.5).abs() < 1e-15);
        }
        assert!((q[[2, 2]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_step_cumulative_by_hand() {
        let q = transition_matrix(0.5, &[0.5, 0.5], 0.0, None);
        assert!((q[[0, 0]] - 0.75).abs() < 1e-15 && (q[[0, 1]] - 0.25).abs() < 1e-15);
        let q2 = q.dot(&q);
        // [[.75,.25],[.25,.75]]^2 by hand
        let want = [[0.625, 0.375], [0.375, 0.625]];
        for a in 0..2 {
            for b in 0..2 {
                assert!((q2[[a, b]] - want[a][b]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn all_cached_matrices_are_stochastic() {
        let v = vocab(&[3.0, 1.0, 6.0], &[5.0, 1.0], 0.3);
        for rho in [0.0, 0.2, 0.9] {
            let s = NoiseSchedule::build(&ScheduleConfig::default().with_steps(20).with_mask_mix(rho), &v).unwrap();
            for ch in [Channel::Node, Channel::Edge, Channel::Relation, Channel::Pair] {
                for t in 0..=20 {
                    assert_stochastic(s.q(ch, t));
                    assert_stochastic(s.qbar(ch, t));
                }
                assert!(s.retention(ch) <= RETENTION_BOUND);
            }
            assert!(s.cumulative(Channel::Node, 0).is_err());
            assert!(s.cumulative(Channel::Node, 21).is_err());
            assert_eq!(s.cumulative(Channel::Node, 1).unwrap(), s.q(Channel::Node, 1));
        }
    }

    #[test]
    fn cumulative_equals_fold_and_chapman_kolmogorov() {
        let v = vocab(&[3.0, 1.0, 6.0], &[5.0, 1.0, 2.0], 0.3);
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_steps(12), &v).unwrap();
        for ch in [Channel::Node, Channel::Edge, Channel::Relation, Channel::Pair] {
            let mut fold = s.q(ch, 1).clone();
            for t in 2..=12 {
                fold = fold.dot(s.q(ch, t));
                let diff = (&fold - s.qbar(ch, t)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
                assert!(diff < 1e-12);
                let ck = s.qbar(ch, t - 1).dot(s.q(ch, t));
                let diff = (&ck - s.qbar(ch, t)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
                assert!(diff < 1e-12);
            }
        }
    }

    #[test]
    fn prior_is_left_eigenvector_without_mask() {
        let v = vocab(&[3.0, 1.0, 6.0], &[5.0, 1.0, 2.0], 0.3);
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_steps(10).with_mask_mix(0.0), &v).unwrap();
        let pi = s.stationary_distribution().unwrap();
        for t in 1..=10 {
            let node = ndarray::Array1::from(pi.node.clone()).dot(s.q(Channel::Node, t));
            let pair = ndarray::Array1::from(pi.pair.clone()).dot(s.q(Channel::Pair, t));
            for (a, b) in node.iter().zip(&pi.node).chain(pair.iter().zip(&pi.pair)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn geometric_convergence_in_l1() {
        let v = vocab(&[3.0, 1.0, 6.0], &[5.0, 1.0, 2.0], 0.3);
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_steps(15).with_mask_mix(0.0), &v).unwrap();
        let pi = s.prior_node();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut p0: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            p0.push(0.0);
            let z: f64 = p0.iter().sum();
            p0.iter_mut().for_each(|x| *x /= z);
            let d0: f64 = p0.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum();
            let mut retention = 1.0;
            for t in 1..=15 {
                retention *= 1.0 - s.betas(Channel::Node)[t - 1];
                let pt = ndarray::Array1::from(p0.clone()).dot(s.qbar(Channel::Node, t));
                let dt: f64 = pt.iter().zip(pi).map(|(a, b)| (a - b).abs()).sum();
                assert!((dt - retention * d0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn relation_kernel_never_reaches_null() {
        let v = vocab(&[1.0], &[5.0, 1.0, 2.0], 0.3);
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_steps(8), &v).unwrap();
        for t in 1..=8 {
            for a in 1..=s.mask_rel() {
                assert_eq!(s.q(Channel::Relation, t)[[a, 0]], 0.0);
                assert_eq!(s.qbar(Channel::Relation, t)[[a, 0]], 0.0);
            }
        }
    }

    #[test]
    fn stationary_requires_no_mask() {
        let v = vocab(&[1.0, 2.0], &[1.0], 0.3);
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_mask_mix(0.2), &v).unwrap();
        assert!(matches!(s.stationary_distribution(), Err(Error::MaskMixNonzero(_))));
    }

    #[test]
    fn stationary_samples_match_prior() {
        let v = vocab(&[1.0, 3.0, 6.0], &[2.0, 1.0], 0.4);
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_mask_mix(0.0), &v).unwrap();
        let pi = s.stationary_distribution().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut hist = [0.0; 4];
        let draws = 100_000;
        for _ in 0..draws / 2 {
            let g = pi.sample(2, &mut rng);
            for &v in g.nodes() {
                hist[v] += 1.0;
            }
            for (i, j) in g.pairs() {
                if g.edge(i, j) == 0 {
                    assert_eq!(g.relation(i, j), 0);
                }
            }
        }
        let tv: f64 = hist.iter().zip(&pi.node).map(|(h, p)| (h / draws as f64 - p).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.01, "tv {tv}");
    }

    #[test]
    fn zero_edge_rate_gives_edgeless_draws() {
        let v = vocab(&[1.0, 3.0], &[2.0, 1.0], 0.0);
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_mask_mix(0.0), &v).unwrap();
        let pi = s.stationary_distribution().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(pi.sample(4, &mut rng).num_active_edges(), 0);
        }
    }

    #[test]
    fn terminal_equals_stationary_without_mask() {
        let v = vocab(&[1.0, 3.0, 2.0], &[2.0, 1.0], 0.25);
        let s = NoiseSchedule::build(&ScheduleConfig::default().with_mask_mix(0.0), &v).unwrap();
        let pi = s.stationary_distribution().unwrap();
        let term = s.terminal_distribution();
        for (a, b) in term.node.iter().zip(&pi.node).chain(term.pair.iter().zip(&pi.pair)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
