//! Minimal reverse-mode differentiation over dense matrices.

use ndarray::{s, Array2, Axis};

use crate::layout::Bbox;

pub type Var = usize;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Silu(Var),
    Sigmoid(Var),
    Gather(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<f64>),
    Concat(Var, Var),
    MulConst(Var, Array2<f64>),
    Combine(Vec<(Var, f64)>),
    // scalar loss with its gradient wrt the input precomputed on the forward pass
    Loss(Var, Array2<f64>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Records operations so that [`Tape::backward`] can replay them in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// `a + b` with `b` a single row broadcast over `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::AddRow(a, b))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x / (1.0 + (-x).exp()));
        self.push(out, Op::Silu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    /// Rows of `a` picked by `idx`.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let out = self.value(a).select(Axis(0), &idx);
        self.push(out, Op::Gather(a, idx))
    }

    /// Mean of the rows of `a` grouped by `seg`; empty groups give zero rows.
    pub fn segment_mean(&mut self, a: Var, seg: Vec<usize>, n_seg: usize) -> Var {
        let src = self.value(a);
        let mut counts = vec![0.0; n_seg];
        for &g in &seg {
            counts[g] += 1.0;
        }
        let inv: Vec<f64> = counts.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
        let mut out = Array2::zeros((n_seg, src.ncols()));
        for (r, &g) in seg.iter().enumerate() {
            out.row_mut(g).scaled_add(inv[g], &src.row(r));
        }
        self.push(out, Op::SegmentMean(a, seg, inv))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()]).unwrap();
        self.push(out, Op::Concat(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let out = self.value(a) * &c;
        self.push(out, Op::MulConst(a, c))
    }

    /// Linear combination of scalar nodes.
    pub fn combine(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let v = terms.iter().map(|&(t, c)| c * self.scalar_value(t)).sum();
        self.push(scalar(v), Op::Combine(terms))
    }

    /// `sum_r w_r * -ln(sum_k softmax(logits_r)_k * m_rk) / denom`.
    ///
    /// One-hot `m` rows give weighted cross-entropy; general rows give the
    /// likelihood of a mixture over clean classes. Rows with `w_r = 0` are
    /// skipped; an empty or zero-denominator loss is 0.
    pub fn mixture_ce(&mut self, logits: Var, m: &Array2<f64>, w: &[f64], denom: f64) -> Var {
        let l = self.value(logits);
        let mut grad = Array2::zeros(l.raw_dim());
        let mut total = 0.0;
        if denom > 0.0 {
            for r in 0..l.nrows() {
                if w[r] == 0.0 {
                    continue;
                }
                let row = l.row(r);
                let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let e: Vec<f64> = row.iter().map(|x| (x - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                let p: Vec<f64> = e.iter().map(|x| x / z).collect();
                let pm: f64 = p.iter().zip(m.row(r)).map(|(a, b)| a * b).sum();
                let pm = pm.max(1e-300);
                total += w[r] * -pm.ln();
                let scale = w[r] / denom;
                for k in 0..p.len() {
                    grad[[r, k]] = scale * (p[k] - p[k] * m[[r, k]] / pm);
                }
            }
            total /= denom;
        }
        self.push(scalar(total), Op::Loss(logits, grad))
    }

    /// `sum_r [|b_r - t_r|_1 + lambda_giou (1 - GIoU(b_r, t_r))] / denom`
    /// over the listed rows of a `(n, 4)` box matrix in `(cx, cy, w, h)`.
    pub fn box_loss(&mut self, pred: Var, rows: &[usize], targets: &[Bbox], lambda_giou: f64, denom: f64) -> Var {
        let b = self.value(pred);
        let mut grad = Array2::zeros(b.raw_dim());
        let mut total = 0.0;
        if denom > 0.0 {
            for (&r, t) in rows.iter().zip(targets) {
                let p = Bbox::new(b[[r, 0]], b[[r, 1]], b[[r, 2]], b[[r, 3]]);
                let tv = t.to_array();
                for k in 0..4 {
                    let d = b[[r, k]] - tv[k];
                    total += d.abs();
                    grad[[r, k]] += d.signum() / denom;
                }
                let (g, dg) = giou_with_grad(&p, t);
                total += lambda_giou * (1.0 - g);
                for k in 0..4 {
                    grad[[r, k]] -= lambda_giou * dg[k] / denom;
                }
            }
            total /= denom;
        }
        self.push(scalar(total), Op::Loss(pred, grad))
    }

    /// Gradients of scalar `loss` with respect to every leaf (other slots are
    /// consumed during the sweep).
    pub fn backward(&self, loss: Var) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(scalar(1.0));
        for v in (0..=loss).rev() {
            let Some(g) = grads[v].take() else { continue };
            let acc = |grads: &mut Vec<Option<Array2<f64>>>, target: Var, d: Array2<f64>| match &mut grads[target] {
                Some(x) => *x += &d,
                slot => *slot = Some(d),
            };
            match &self.nodes[v].op {
                Op::Leaf => grads[v] = Some(g),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    acc(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g.clone());
                }
                Op::Silu(a) => {
                    let d = ndarray::Zip::from(&g).and(self.value(*a)).map_collect(|&g, &x| {
                        let s = 1.0 / (1.0 + (-x).exp());
                        g * s * (1.0 + x * (1.0 - s))
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let out = &self.nodes[v].value;
                    let d = ndarray::Zip::from(&g).and(out).map_collect(|&g, &y| g * y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Gather(a, idx) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &i) in idx.iter().enumerate() {
                        d.row_mut(i).scaled_add(1.0, &g.row(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::SegmentMean(a, seg, inv) => {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &s) in seg.iter().enumerate() {
                        d.row_mut(r).scaled_add(inv[s], &g.row(s));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).ncols();
                    acc(&mut grads, *a, g.slice(s![.., ..ca]).to_owned());
                    acc(&mut grads, *b, g.slice(s![.., ca..]).to_owned());
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, &g * c),
                Op::Combine(terms) => {
                    for &(t, c) in terms {
                        acc(&mut grads, t, &g * c);
                    }
                }
                Op::Loss(a, local) => acc(&mut grads, *a, local * g[[0, 0]]),
            }
        }
        grads
    }
}

/// GIoU and its gradient with respect to the first box's `(cx, cy, w, h)`.
fn giou_with_grad(a: &Bbox, b: &Bbox) -> (f64, [f64; 4]) {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = ax2.min(bx2) - ax1.max(bx1);
    let ih = ay2.min(by2) - ay1.max(by1);
    let (iw, ih, overlap) = if iw > 0.0 && ih > 0.0 { (iw, ih, true) } else { (iw.max(0.0), ih.max(0.0), false) };
    let inter = iw * ih;
    let (aw, ah) = (ax2 - ax1, ay2 - ay1);
    let union = aw * ah + b.area() - inter;
    let cw = ax2.max(bx2) - ax1.min(bx1);
    let ch = ay2.max(by2) - ay1.min(by1);
    let hull = cw * ch;
    let g = inter / union - (hull - union) / hull;

    // partials wrt corners (x1, y1, x2, y2)
    let mut d_inter = [0.0; 4];
    if overlap {
        if ax1 > bx1 {
            d_inter[0] = -ih;
        }
        if ay1 > by1 {
            d_inter[1] = -iw;
        }
        if ax2 < bx2 {
            d_inter[2] = ih;
        }
        if ay2 < by2 {
            d_inter[3] = iw;
        }
    }
    let d_area = [-ah, -aw, ah, aw];
    let mut d_hull = [0.0; 4];
    if ax1 <= bx1 {
        d_hull[0] = -ch;
    }
    if ay1 <= by1 {
        d_hull[1] = -cw;
    }
    if ax2 >= bx2 {
        d_hull[2] = ch;
    }
    if ay2 >= by2 {
        d_hull[3] = cw;
    }
    let mut dc = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        dc[k] = d_inter[k] / union - inter * d_union / (union * union) + d_union / hull - union * d_hull[k] / (hull * hull);
    }
    let grad = [dc[0] + dc[2], dc[1] + dc[3], (dc[2] - dc[0]) / 2.0, (dc[3] - dc[1]) / 2.0];
    (g, grad)
}
