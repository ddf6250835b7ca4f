//! Reference message-passing denoiser with structured heads.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::denoiser::loss::{objective, Example, LossWeights};
use crate::denoiser::tape::{Tape, Var};
use crate::denoiser::{Denoiser, DenoiserOutput};
use crate::error::{Error, Result};
use crate::graph::SceneGraphState;
use crate::layout::Bbox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
    pub phi_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 64, layers: 2, time_dim: 16, phi_dim: 8 }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
}

impl Params {
    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn shapes(&self) -> Vec<[usize; 2]> {
        self.tensors.iter().map(|t| [t.nrows(), t.ncols()]).collect()
    }

    fn get(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }
}

fn layout(cfg: &ModelConfig, k_obj: usize, k_rel: usize) -> Vec<(String, [usize; 2])> {
    let h = cfg.hidden;
    let mut v = vec![
        ("emb_v".to_string(), [k_obj + 1, h]),
        ("emb_e".into(), [2, h]),
        ("emb_r".into(), [k_rel + 2, h]),
        ("w_time".into(), [cfg.time_dim, h]),
        ("b_time".into(), [1, h]),
    ];
    for l in 0..cfg.layers {
        for (name, shape) in [
            ("w_pp", [h, h]),
            ("w_src", [h, h]),
            ("w_dst", [h, h]),
            ("b_p", [1, h]),
            ("w_vv", [h, h]),
            ("w_out", [h, h]),
            ("w_in", [h, h]),
            ("b_v", [1, h]),
        ] {
            v.push((format!("{name}{l}"), shape));
        }
    }
    v.extend([
        ("w_obj".to_string(), [h, k_obj]),
        ("b_obj".into(), [1, k_obj]),
        ("w_edge".into(), [h, 2]),
        ("b_edge".into(), [1, 2]),
        ("w_phi".into(), [2, cfg.phi_dim]),
        ("b_phi".into(), [1, cfg.phi_dim]),
        ("w_rel".into(), [h + cfg.phi_dim, k_rel]),
        ("b_rel".into(), [1, k_rel]),
        ("w_box".into(), [h, 4]),
        ("b_box".into(), [1, 4]),
    ]);
    v
}

fn sinusoid(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = 1.0 / 10000f64.powf(2.0 * k as f64 / dim as f64);
        out[k] = (t as f64 * freq).sin();
        out[half + k] = (t as f64 * freq).cos();
    }
    out
}

/// Head outputs of one batched forward pass. Graphs are laid out back to
/// back: node rows at `node_offset[g]..`, pair rows at `pair_offset[g]..`
/// in row-major off-diagonal order.
pub(crate) struct Forward {
    pub params: Vec<Var>,
    pub obj: Var,
    pub edge: Var,
    pub rel: Var,
    pub boxes: Var,
    pub node_offset: Vec<usize>,
    pub pair_offset: Vec<usize>,
}

/// Trainable predictor. Untrained instances refuse to predict unless
/// explicitly allowed.
#[derive(Debug, Clone)]
pub struct ReferenceNetwork {
    config: ModelConfig,
    k_obj: usize,
    k_rel: usize,
    params: Params,
    trained: bool,
    allow_untrained: bool,
}

impl ReferenceNetwork {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, k_obj: usize, k_rel: usize, rng: &mut R) -> Self {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, [r, c]) in layout(&config, k_obj, k_rel) {
            let std = if name.starts_with("b_") {
                0.0
            } else if name.starts_with("emb_") {
                0.5
            } else {
                (2.0 / (r + c) as f64).sqrt()
            };
            let t = if std == 0.0 {
                Array2::zeros((r, c))
            } else {
                let normal = Normal::new(0.0, std).unwrap();
                Array2::from_shape_fn((r, c), |_| normal.sample(rng))
            };
            names.push(name);
            tensors.push(t);
        }
        ReferenceNetwork { config, k_obj, k_rel, params: Params { names, tensors }, trained: false, allow_untrained: false }
    }

    /// Rebuilds a network from stored tensors; shapes must match the layout.
    pub fn from_params(config: ModelConfig, k_obj: usize, k_rel: usize, tensors: Vec<Array2<f64>>, trained: bool) -> Result<Self> {
        let lay = layout(&config, k_obj, k_rel);
        if lay.len() != tensors.len() || lay.iter().zip(&tensors).any(|((_, s), t)| [t.nrows(), t.ncols()] != *s) {
            return Err(Error::CorruptFile("parameter shapes do not match the model config".into()));
        }
        let names = lay.into_iter().map(|(n, _)| n).collect();
        Ok(ReferenceNetwork { config, k_obj, k_rel, params: Params { names, tensors }, trained, allow_untrained: false })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_objects(&self) -> usize {
        self.k_obj
    }

    pub fn num_relations(&self) -> usize {
        self.k_rel
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }

    /// Permits inference before any training step (baselines, smoke tests).
    pub fn allow_untrained(mut self, allow: bool) -> Self {
        self.allow_untrained = allow;
        self
    }

    pub(crate) fn forward(&self, tape: &mut Tape, inputs: &[(&SceneGraphState, usize)]) -> Forward {
        let p = &self.params;
        let pv: Vec<Var> = p.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let w = |name: &str| pv[p.get(name)];

        let mut node_offset = Vec::with_capacity(inputs.len());
        let mut pair_offset = Vec::with_capacity(inputs.len());
        let (mut v_idx, mut v_graph) = (Vec::new(), Vec::new());
        let (mut e_idx, mut r_idx, mut p_graph, mut src, mut dst, mut active) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut tfeat = Array2::zeros((inputs.len(), self.config.time_dim));
        for (g, (x, t)) in inputs.iter().enumerate() {
            let base = v_idx.len();
            node_offset.push(base);
            pair_offset.push(e_idx.len());
            for i in 0..x.n_nodes() {
                v_idx.push(x.node(i));
                v_graph.push(g);
            }
            for (i, j) in x.pairs() {
                e_idx.push(x.edge(i, j) as usize);
                r_idx.push(x.relation(i, j));
                active.push(x.edge(i, j) as f64);
                p_graph.push(g);
                src.push(base + i);
                dst.push(base + j);
            }
            for (k, f) in sinusoid(*t, self.config.time_dim).into_iter().enumerate() {
                tfeat[[g, k]] = f;
            }
        }
        let n_total = v_idx.len();
        let h = self.config.hidden;

        let tf = tape.leaf(tfeat);
        let temb = tape.matmul(tf, w("w_time"));
        let temb = tape.add_row(temb, w("b_time"));

        let mut v = tape.gather(w("emb_v"), v_idx);
        let tv = tape.gather(temb, v_graph);
        v = tape.add(v, tv);

        let pe = tape.gather(w("emb_e"), e_idx);
        let pr = tape.gather(w("emb_r"), r_idx);
        let gate = Array2::from_shape_fn((active.len(), h), |(r, _)| active[r]);
        let pr = tape.mul_const(pr, gate);
        let mut pair = tape.add(pe, pr);
        let tp = tape.gather(temb, p_graph);
        pair = tape.add(pair, tp);

        for l in 0..self.config.layers {
            let a = tape.matmul(pair, w(&format!("w_pp{l}")));
            let vs = tape.matmul(v, w(&format!("w_src{l}")));
            let vs = tape.gather(vs, src.clone());
            let vd = tape.matmul(v, w(&format!("w_dst{l}")));
            let vd = tape.gather(vd, dst.clone());
            let a = tape.add(a, vs);
            let a = tape.add(a, vd);
            let a = tape.add_row(a, w(&format!("b_p{l}")));
            let a = tape.silu(a);
            pair = tape.add(pair, a);

            let out_mean = tape.segment_mean(pair, src.clone(), n_total);
            let in_mean = tape.segment_mean(pair, dst.clone(), n_total);
            let b = tape.matmul(v, w(&format!("w_vv{l}")));
            let bo = tape.matmul(out_mean, w(&format!("w_out{l}")));
            let bi = tape.matmul(in_mean, w(&format!("w_in{l}")));
            let b = tape.add(b, bo);
            let b = tape.add(b, bi);
            let b = tape.add_row(b, w(&format!("b_v{l}")));
            let b = tape.silu(b);
            v = tape.add(v, b);
        }

        let obj = tape.matmul(v, w("w_obj"));
        let obj = tape.add_row(obj, w("b_obj"));
        let edge = tape.matmul(pair, w("w_edge"));
        let edge = tape.add_row(edge, w("b_edge"));
        let phi = tape.matmul(edge, w("w_phi"));
        let phi = tape.add_row(phi, w("b_phi"));
        let rel_in = tape.concat(pair, phi);
        let rel = tape.matmul(rel_in, w("w_rel"));
        let rel = tape.add_row(rel, w("b_rel"));
        let boxes = tape.matmul(v, w("w_box"));
        let boxes = tape.add_row(boxes, w("b_box"));
        let boxes = tape.sigmoid(boxes);
        Forward { params: pv, obj, edge, rel, boxes, node_offset, pair_offset }
    }

    fn outputs(&self, tape: &Tape, fwd: &Forward, inputs: &[(&SceneGraphState, usize)]) -> Vec<DenoiserOutput> {
        let (obj, edge, rel, boxes) = (tape.value(fwd.obj), tape.value(fwd.edge), tape.value(fwd.rel), tape.value(fwd.boxes));
        inputs
            .iter()
            .enumerate()
            .map(|(g, (x, _))| {
                let n = x.n_nodes();
                let (no, po) = (fwd.node_offset[g], fwd.pair_offset[g]);
                let mut out = DenoiserOutput {
                    n_nodes: n,
                    k_obj: self.k_obj,
                    k_rel: self.k_rel,
                    obj_probs: Vec::with_capacity(n * self.k_obj),
                    edge_probs: vec![0.0; n * n],
                    rel_probs: vec![0.0; n * n * self.k_rel],
                    edge_logits: vec![0.0; n * n * 2],
                    box_preds: Some((0..n).map(|i| Bbox::new(boxes[[no + i, 0]], boxes[[no + i, 1]], boxes[[no + i, 2]], boxes[[no + i, 3]])).collect()),
                };
                for i in 0..n {
                    out.obj_probs.extend(softmax(obj.row(no + i).iter().copied()));
                }
                for (k, (i, j)) in x.pairs().enumerate() {
                    let p = i * n + j;
                    let (l0, l1) = (edge[[po + k, 0]], edge[[po + k, 1]]);
                    out.edge_logits[2 * p] = l0;
                    out.edge_logits[2 * p + 1] = l1;
                    out.edge_probs[p] = 1.0 / (1.0 + (l0 - l1).exp());
                    let r = softmax(rel.row(po + k).iter().copied());
                    out.rel_probs[p * self.k_rel..(p + 1) * self.k_rel].copy_from_slice(&r);
                }
                out
            })
            .collect()
    }

    fn check_ready(&self) -> Result<()> {
        if !self.trained && !self.allow_untrained {
            return Err(Error::UntrainedModel);
        }
        Ok(())
    }
}

fn softmax(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let v: Vec<f64> = it.collect();
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

impl Denoiser for ReferenceNetwork {
    fn predict(&self, x_t: &SceneGraphState, t: usize) -> Result<DenoiserOutput> {
        Ok(self.predict_batch(std::slice::from_ref(x_t), t)?.remove(0))
    }

    fn predict_batch(&self, xs: &[SceneGraphState], t: usize) -> Result<Vec<DenoiserOutput>> {
        self.check_ready()?;
        let inputs: Vec<(&SceneGraphState, usize)> = xs.iter().map(|x| (x, t)).collect();
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &inputs);
        Ok(self.outputs(&tape, &fwd, &inputs))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub n_params: usize,
    pub worst_param: String,
}

/// Central finite differences against the analytic gradient of the full
/// training objective, over every scalar parameter.
pub fn gradient_check(
    net: &ReferenceNetwork,
    x0: &SceneGraphState,
    x_t: &SceneGraphState,
    t: usize,
    weights: &LossWeights,
    class_w: &[f64],
    h: f64,
) -> GradientReport {
    let example = Example::plain(x0.clone(), x_t.clone(), t);
    let eval = |net: &ReferenceNetwork| {
        let mut tape = Tape::new();
        let fwd = net.forward(&mut tape, &[(x_t, t)]);
        let (loss, _) = objective(&mut tape, &fwd, std::slice::from_ref(&example), weights, class_w);
        (tape, fwd, loss)
    };
    let (tape, fwd, loss) = eval(net);
    let grads = tape.backward(loss);
    let mut probe = net.clone();
    let mut report = GradientReport { max_rel_error: 0.0, max_abs_error: 0.0, n_params: net.params.num_params(), worst_param: String::new() };
    for (k, &pv) in fwd.params.iter().enumerate() {
        let analytic = grads[pv].clone().unwrap_or_else(|| Array2::zeros(net.params.tensors[k].raw_dim()));
        for idx in 0..net.params.tensors[k].len() {
            let (r, c) = (idx / net.params.tensors[k].ncols(), idx % net.params.tensors[k].ncols());
            let orig = net.params.tensors[k][[r, c]];
            probe.params.tensors[k][[r, c]] = orig + h;
            let (tp, _, lp) = eval(&probe);
            probe.params.tensors[k][[r, c]] = orig - h;
            let (tm, _, lm) = eval(&probe);
            probe.params.tensors[k][[r, c]] = orig;
            let fd = (tp.scalar_value(lp) - tm.scalar_value(lm)) / (2.0 * h);
            let an = analytic[[r, c]];
            let abs = (fd - an).abs();
            let rel = abs / fd.abs().max(an.abs()).max(1e-6);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{}[{r},{c}]", net.params.names[k]);
            }
        }
    }
    report
}
