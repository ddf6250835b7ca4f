use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::loss::{class_weights, objective, ClassWeighting, Example, LossBreakdown, LossWeights, RevTarget};
use crate::denoiser::network::{ModelConfig, ReferenceNetwork};
use crate::denoiser::tape::Tape;
use crate::error::{Error, Result};
use crate::forward::{corrupt_step, sample_marginal};
use crate::graph::{SceneGraphState, Vocabulary};
use crate::schedule::{Channel, NoiseSchedule, ScheduleConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_v: f64,
    pub lambda_e: f64,
    pub lambda_r: f64,
    pub lambda_box: f64,
    pub lambda_giou: f64,
    pub lambda_rev: f64,
    pub class_weighting: ClassWeighting,
    pub effective_num_beta: f64,
    pub inverse_freq_alpha: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            lambda_v: w.lambda_v,
            lambda_e: w.lambda_e,
            lambda_r: w.lambda_r,
            lambda_box: w.lambda_box,
            lambda_giou: w.lambda_giou,
            lambda_rev: w.lambda_rev,
            class_weighting: ClassWeighting::EffectiveNum,
            effective_num_beta: 0.999,
            inverse_freq_alpha: 0.5,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            ema_decay: 0.999,
            grad_clip: 1.0,
            epochs: 10,
            batch_size: 32,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_v: self.lambda_v,
            lambda_e: self.lambda_e,
            lambda_r: self.lambda_r,
            lambda_box: self.lambda_box,
            lambda_giou: self.lambda_giou,
            lambda_rev: self.lambda_rev,
        }
    }

    pub fn relation_weights(&self, vocab: &Vocabulary) -> Vec<f64> {
        let param = match self.class_weighting {
            ClassWeighting::InverseFreq => self.inverse_freq_alpha,
            _ => self.effective_num_beta,
        };
        class_weights(vocab.relation_counts(), self.class_weighting, param)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        if !(self.effective_num_beta > 0.0 && self.effective_num_beta < 1.0) {
            return Err(Error::InvalidConfig("effective_num_beta must lie in (0,1)".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) || self.learning_rate < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("bad optimizer settings".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub vocab_hash: String,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub num_objects: usize,
    pub num_relations: usize,
    pub shapes: Vec<[usize; 2]>,
    pub steps: u64,
    pub trained: bool,
    pub vocab: Vocabulary,
    /// Training graphs per node count, indexed by count.
    pub node_counts: Vec<u64>,
}

/// Raw and EMA parameters plus everything needed to rebuild the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub raw: Vec<Array2<f64>>,
    pub ema: Vec<Array2<f64>>,
}

impl Checkpoint {
    pub fn from_network(net: &ReferenceNetwork, ema: Vec<Array2<f64>>, vocab: &Vocabulary, schedule: &ScheduleConfig, steps: u64) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                version: CHECKPOINT_VERSION,
                vocab_hash: vocab.hash(),
                schedule: schedule.clone(),
                model: net.config().clone(),
                num_objects: net.num_objects(),
                num_relations: net.num_relations(),
                shapes: net.params().shapes(),
                steps,
                trained: net.is_trained(),
                vocab: vocab.clone(),
                node_counts: Vec::new(),
            },
            raw: net.params().tensors.clone(),
            ema,
        }
    }

    /// Sampling network built from the EMA parameters.
    pub fn network(&self) -> Result<ReferenceNetwork> {
        let h = &self.header;
        ReferenceNetwork::from_params(h.model.clone(), h.num_objects, h.num_relations, self.ema.clone(), h.trained)
    }

    pub fn raw_network(&self) -> Result<ReferenceNetwork> {
        let h = &self.header;
        ReferenceNetwork::from_params(h.model.clone(), h.num_objects, h.num_relations, self.raw.clone(), h.trained)
    }
}

pub fn node_count_histogram(corpus: &[SceneGraphState]) -> Vec<u64> {
    let mut h = vec![0u64; corpus.iter().map(|g| g.n_nodes() + 1).max().unwrap_or(0)];
    for g in corpus {
        h[g.n_nodes()] += 1;
    }
    h
}

/// Mean loss terms of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

struct AdamW {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: i32,
}

impl AdamW {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &[Array2<f64>]) -> Self {
        AdamW {
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>], lr: f64, wd: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for k in 0..params.len() {
            ndarray::Zip::from(&mut params[k]).and(&mut self.m[k]).and(&mut self.v[k]).and(&grads[k]).for_each(|p, m, v, &g| {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                let step = (*m / c1) / ((*v / c2).sqrt() + Self::EPS) + wd * *p;
                *p -= lr * step;
            });
        }
    }
}

fn rev_target(x_prev: &SceneGraphState, x_t: &SceneGraphState, t: usize, schedule: &NoiseSchedule) -> RevTarget {
    let k_obj = schedule.num_objects();
    let post = |ch: Channel, k: usize, a: usize, b: usize| -> Vec<f64> {
        let (q, qp, qt) = (schedule.q(ch, t), schedule.qbar(ch, t - 1), schedule.qbar(ch, t));
        (0..k).map(|c| if qt[[c, b]] > 0.0 { q[[a, b]] * qp[[c, a]] / qt[[c, b]] } else { 0.0 }).collect()
    };
    RevTarget {
        node: (0..x_t.n_nodes()).map(|i| post(Channel::Node, k_obj, x_prev.node(i), x_t.node(i))).collect(),
        edge: x_t
            .pairs()
            .map(|(i, j)| {
                let p = post(Channel::Edge, 2, x_prev.edge(i, j) as usize, x_t.edge(i, j) as usize);
                [p[0], p[1]]
            })
            .collect(),
    }
}

fn make_example<R: Rng + ?Sized>(x0: &SceneGraphState, schedule: &NoiseSchedule, with_rev: bool, rng: &mut R) -> Result<Example> {
    let t = rng.random_range(1..=schedule.steps());
    if !with_rev {
        let x_t = sample_marginal(x0, t, schedule, rng)?;
        return Ok(Example::plain(x0.clone(), x_t, t));
    }
    let x_prev = if t == 1 { x0.clone() } else { sample_marginal(x0, t - 1, schedule, rng)? };
    let x_t = corrupt_step(&x_prev, t, schedule, rng)?;
    let rev = rev_target(&x_prev, &x_t, t, schedule);
    Ok(Example { x0: x0.clone(), x_t, t, rev: Some(rev) })
}

/// Trains the reference network on a clean corpus. Each example draws
/// `t ~ U{1..T}` and a corrupted input; parameters follow AdamW with global
/// gradient-norm clipping, and an EMA copy is tracked for sampling.
pub fn train<R: Rng + ?Sized>(
    corpus: &[SceneGraphState],
    vocab: &Vocabulary,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    model: &ModelConfig,
    rng: &mut R,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<Checkpoint> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if vocab.num_objects() != schedule.num_objects() || vocab.num_relations() != schedule.num_relations() {
        return Err(Error::SizeMismatch("vocabulary and schedule disagree".into()));
    }
    let mut net = ReferenceNetwork::new(model.clone(), vocab.num_objects(), vocab.num_relations(), rng);
    let mut ema = net.params().tensors.clone();
    let mut opt = AdamW::new(&net.params().tensors);
    let weights = config.loss_weights();
    let class_w = config.relation_weights(vocab);
    let with_rev = config.lambda_rev > 0.0;
    let mut steps: u64 = 0;
    let mut order: Vec<usize> = (0..corpus.len()).collect();

    'epochs: for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0.0;
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break 'epochs;
            }
            let examples = chunk.iter().map(|&i| make_example(&corpus[i], schedule, with_rev, rng)).collect::<Result<Vec<_>>>()?;
            let inputs: Vec<(&SceneGraphState, usize)> = examples.iter().map(|e| (&e.x_t, e.t)).collect();
            let mut tape = Tape::new();
            let fwd = net.forward(&mut tape, &inputs);
            let (loss, breakdown) = objective(&mut tape, &fwd, &examples, &weights, &class_w);
            if !breakdown.total.is_finite() {
                return Err(Error::DivergedLoss(steps));
            }
            let all = tape.backward(loss);
            let mut grads: Vec<Array2<f64>> = fwd
                .params
                .iter()
                .zip(&net.params().tensors)
                .map(|(&v, p)| all[v].clone().unwrap_or_else(|| Array2::zeros(p.raw_dim())))
                .collect();
            let norm = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::DivergedLoss(steps));
            }
            if config.grad_clip > 0.0 && norm > config.grad_clip {
                let s = config.grad_clip / norm;
                grads.iter_mut().for_each(|g| *g *= s);
            }
            opt.update(&mut net.params_mut().tensors, &grads, config.learning_rate, config.weight_decay);
            let d = config.ema_decay;
            for (e, p) in ema.iter_mut().zip(&net.params().tensors) {
                ndarray::Zip::from(e).and(p).for_each(|e, &p| *e = d * *e + (1.0 - d) * p);
            }
            steps += 1;
            batches += 1.0;
            sum.total += breakdown.total;
            sum.node += breakdown.node;
            sum.edge += breakdown.edge;
            sum.relation += breakdown.relation;
            sum.boxes += breakdown.boxes;
            sum.rev += breakdown.rev;
        }
        if batches > 0.0 {
            let mean = LossBreakdown {
                total: sum.total / batches,
                node: sum.node / batches,
                edge: sum.edge / batches,
                relation: sum.relation / batches,
                boxes: sum.boxes / batches,
                rev: sum.rev / batches,
            };
            log::info!("epoch {epoch}: loss {:.4}", mean.total);
            on_epoch(&EpochReport { epoch, steps, loss: mean });
        }
    }
    net.set_trained(steps > 0);
    let mut ckpt = Checkpoint::from_network(&net, ema, vocab, schedule.config(), steps);
    ckpt.header.node_counts = node_count_histogram(corpus);
    Ok(ckpt)
}
