//! Distribution metrics over graph sets, layout F1, and completion win rate.

use std::collections::{BTreeMap, HashMap};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix as PMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SceneGraphState, Vocabulary};
use crate::layout::{iou, Bbox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Node,
    Relation,
    InDegree,
    OutDegree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median of the nonzero pairwise distances over both sets.
    Median,
    Fixed(f64),
}

/// How per-graph histograms are scaled before the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramNorm {
    /// Each histogram sums to one.
    #[default]
    PerGraph,
    /// Counts divided by the mean per-graph total of the owning set.
    Pooled,
}

fn counts(g: &SceneGraphState, feature: Feature, k_obj: usize, k_rel: usize, max_deg: usize) -> Vec<f64> {
    match feature {
        Feature::Node => {
            let mut h = vec![0.0; k_obj];
            for &v in g.nodes() {
                if v < k_obj {
                    h[v] += 1.0;
                }
            }
            h
        }
        Feature::Relation => {
            let mut h = vec![0.0; k_rel];
            for (_, _, r) in g.active_edges() {
                if (1..=k_rel).contains(&r) {
                    h[r - 1] += 1.0;
                }
            }
            h
        }
        Feature::InDegree | Feature::OutDegree => {
            let mut h = vec![0.0; max_deg + 1];
            for i in 0..g.n_nodes() {
                let d = if feature == Feature::InDegree { g.in_degree(i) } else { g.out_degree(i) };
                h[d] += 1.0;
            }
            h
        }
    }
}

fn histograms(set: &[SceneGraphState], feature: Feature, k_obj: usize, k_rel: usize, max_deg: usize, norm: HistogramNorm) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = set.iter().map(|g| counts(g, feature, k_obj, k_rel, max_deg)).collect();
    let scale_all = match norm {
        HistogramNorm::PerGraph => None,
        HistogramNorm::Pooled => {
            let mean = raw.iter().map(|h| h.iter().sum::<f64>()).sum::<f64>() / raw.len() as f64;
            Some(if mean > 0.0 { mean } else { 1.0 })
        }
    };
    raw.into_iter()
        .map(|h| {
            let s = scale_all.unwrap_or_else(|| h.iter().sum::<f64>());
            if s > 0.0 {
                h.into_iter().map(|v| v / s).collect()
            } else {
                h
            }
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median_bandwidth(points: &[&Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let v = sq_dist(points[i], points[j]).sqrt();
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

/// Mean kernel value within one set, excluding the diagonal unless the set
/// has a single member.
fn within(h: &[Vec<f64>], k: &dyn Fn(&[f64], &[f64]) -> f64) -> f64 {
    let m = h.len();
    if m == 1 {
        return k(&h[0], &h[0]);
    }
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                s += k(&h[i], &h[j]);
            }
        }
    }
    s / (m * (m - 1)) as f64
}

/// Squared MMD with RBF kernel `exp(-|x - y|^2 / (2 sigma^2))` over
/// per-graph histograms, clamped at zero.
pub fn mmd(
    a: &[SceneGraphState],
    b: &[SceneGraphState],
    feature: Feature,
    bandwidth: Bandwidth,
    norm: HistogramNorm,
    vocab: &Vocabulary,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let max_deg = a.iter().chain(b).flat_map(|g| (0..g.n_nodes()).map(move |i| g.in_degree(i).max(g.out_degree(i)))).max().unwrap_or(0);
    let (ko, kr) = (vocab.num_objects(), vocab.num_relations());
    let ha = histograms(a, feature, ko, kr, max_deg, norm);
    let hb = histograms(b, feature, ko, kr, max_deg, norm);
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) if s > 0.0 => s,
        Bandwidth::Fixed(s) => return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {s}"))),
        Bandwidth::Median => median_bandwidth(&ha.iter().chain(&hb).collect::<Vec<_>>()),
    };
    let k = |x: &[f64], y: &[f64]| (-sq_dist(x, y) / (2.0 * sigma * sigma)).exp();
    let mut cross = 0.0;
    for x in &ha {
        for y in &hb {
            cross += k(x, y);
        }
    }
    cross /= (ha.len() * hb.len()) as f64;
    Ok((within(&ha, &k) + within(&hb, &k) - 2.0 * cross).max(0.0))
}

type Triplet = (usize, usize, usize);

fn triplet_freq(set: &[SceneGraphState]) -> HashMap<Triplet, f64> {
    let mut h = HashMap::new();
    let mut n = 0.0;
    for g in set {
        for (i, j, r) in g.active_edges() {
            *h.entry((g.node(i), r, g.node(j))).or_insert(0.0) += 1.0;
            n += 1.0;
        }
    }
    h.values_mut().for_each(|v| *v /= n);
    h
}

fn tv_maps<K: std::hash::Hash + Eq + Copy>(p: &HashMap<K, f64>, q: &HashMap<K, f64>) -> f64 {
    match (p.is_empty(), q.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => return 1.0,
        _ => {}
    }
    let mut d = 0.0;
    for (k, v) in p {
        d += (v - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, v) in q {
        if !p.contains_key(k) {
            d += v;
        }
    }
    (0.5 * d).clamp(0.0, 1.0)
}

/// TV between empirical `(object, relation, subject)` laws over active edges.
pub fn triplet_tv(samples: &[SceneGraphState], reference: &[SceneGraphState]) -> Result<f64> {
    if samples.is_empty() || reference.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    Ok(tv_maps(&triplet_freq(samples), &triplet_freq(reference)))
}

fn pair_conditionals(set: &[SceneGraphState]) -> HashMap<(usize, usize), (f64, HashMap<usize, f64>)> {
    let mut out: HashMap<(usize, usize), (f64, HashMap<usize, f64>)> = HashMap::new();
    for g in set {
        for (i, j, r) in g.active_edges() {
            let e = out.entry((g.node(i), g.node(j))).or_default();
            e.0 += 1.0;
            *e.1.entry(r).or_insert(0.0) += 1.0;
        }
    }
    for (n, h) in out.values_mut() {
        h.values_mut().for_each(|v| *v /= *n);
    }
    out
}

/// Reference-weighted TV of `p(r | v_i, v_j)`; object pairs missing from
/// the samples contribute 1.
pub fn attach_tv(samples: &[SceneGraphState], reference: &[SceneGraphState]) -> Result<f64> {
    if samples.is_empty() || reference.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let gen = pair_conditionals(samples);
    let refc = pair_conditionals(reference);
    let total: f64 = refc.values().map(|(n, _)| n).sum();
    if total == 0.0 {
        return Ok(if gen.is_empty() { 0.0 } else { 1.0 });
    }
    let mut out = 0.0;
    for (pair, (n, pr)) in &refc {
        let d = gen.get(pair).map_or(1.0, |(_, pg)| tv_maps(pg, pr));
        out += n / total * d;
    }
    Ok(out.clamp(0.0, 1.0))
}

fn relation_law(set: &[SceneGraphState]) -> HashMap<usize, f64> {
    let mut h = HashMap::new();
    let mut n = 0.0;
    for g in set {
        for (_, _, r) in g.active_edges() {
            *h.entry(r).or_insert(0.0) += 1.0;
            n += 1.0;
        }
    }
    h.values_mut().for_each(|v| *v /= n);
    h
}

/// `1/2 sum_r w_r |p_gen(r) - p_ref(r)|` with `w_r ∝ p_ref(r)^-alpha` over
/// the relations the reference uses.
pub fn rare_k_tv(samples: &[SceneGraphState], reference: &[SceneGraphState], alpha: f64) -> Result<f64> {
    if samples.is_empty() || reference.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if !(0.5..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [0.5, 1], got {alpha}")));
    }
    let pg = relation_law(samples);
    let pr = relation_law(reference);
    match (pg.is_empty(), pr.is_empty()) {
        (true, true) => return Ok(0.0),
        (_, true) | (true, _) => return Ok(1.0),
        _ => {}
    }
    let raw: Vec<(usize, f64)> = pr.iter().map(|(&r, &p)| (r, p.powf(-alpha))).collect();
    let z: f64 = raw.iter().map(|(_, w)| w).sum();
    let d: f64 = raw.iter().map(|&(r, w)| w / z * (pg.get(&r).copied().unwrap_or(0.0) - pr[&r]).abs()).sum();
    Ok((0.5 * d).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Variant {
    Vanilla,
    Area,
    Freq,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Pairs taken by descending IoU.
    #[default]
    Greedy,
    /// Maximum number of matches, ties broken by total IoU.
    Hungarian,
}

/// Boxes with category labels for one image.
pub type Layout = Vec<(usize, Bbox)>;

pub const F1_THRESHOLDS: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];

fn match_count(gen: &[Bbox], refb: &[Bbox], thr: f64, matcher: Matcher) -> usize {
    let ok = |g: &Bbox, r: &Bbox| iou(g, r) >= thr - 1e-12;
    match matcher {
        Matcher::Greedy => {
            let mut cand: Vec<(f64, usize, usize)> = Vec::new();
            for (a, g) in gen.iter().enumerate() {
                for (b, r) in refb.iter().enumerate() {
                    if ok(g, r) {
                        cand.push((iou(g, r), a, b));
                    }
                }
            }
            cand.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let (mut ug, mut ur) = (vec![false; gen.len()], vec![false; refb.len()]);
            let mut n = 0;
            for (_, a, b) in cand {
                if !ug[a] && !ur[b] {
                    ug[a] = true;
                    ur[b] = true;
                    n += 1;
                }
            }
            n
        }
        Matcher::Hungarian => {
            if gen.is_empty() || refb.is_empty() {
                return 0;
            }
            let (rows, cols) = if gen.len() <= refb.len() { (gen, refb) } else { (refb, gen) };
            let w = |x: &Bbox, y: &Bbox| {
                let (g, r) = if gen.len() <= refb.len() { (x, y) } else { (y, x) };
                if ok(g, r) {
                    1_000_000_000_000i64 + (iou(g, r) * 1e9) as i64
                } else {
                    0
                }
            };
            let m = PMatrix::from_fn(rows.len(), cols.len(), |(i, j)| w(&rows[i], &cols[j]));
            let (_, assign) = kuhn_munkres(&m);
            assign.iter().enumerate().filter(|&(i, &j)| m[(i, j)] > 0).count()
        }
    }
}

/// F1 over paired layouts, averaged over the ten IoU thresholds and combined
/// across categories by the variant's weights. Counts pool across images.
pub fn layout_f1(generated: &[Layout], reference: &[Layout], variant: F1Variant, matcher: Matcher) -> Result<f64> {
    if generated.len() != reference.len() {
        return Err(Error::SizeMismatch(format!("{} generated layouts, {} reference layouts", generated.len(), reference.len())));
    }
    let cat = |k: usize| if variant == F1Variant::Box { 0 } else { k };
    let mut cats: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
    for (g, r) in generated.iter().zip(reference) {
        for (k, _) in g {
            cats.entry(cat(*k)).or_default().0 += 1;
        }
        for (k, b) in r {
            let e = cats.entry(cat(*k)).or_default();
            e.1 += 1;
            e.2 += b.area();
        }
    }
    if cats.is_empty() {
        return Ok(1.0);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&k, &(n_gen, n_ref, area)) in &cats {
        let w = match variant {
            F1Variant::Vanilla | F1Variant::Box => 1.0,
            F1Variant::Area => {
                if n_ref > 0 {
                    area / n_ref as f64
                } else {
                    0.0
                }
            }
            F1Variant::Freq => n_ref as f64,
        };
        let mut f1_sum = 0.0;
        for &thr in &F1_THRESHOLDS {
            let tp: usize = generated
                .iter()
                .zip(reference)
                .map(|(g, r)| {
                    let gb: Vec<Bbox> = g.iter().filter(|(c, _)| cat(*c) == k).map(|(_, b)| *b).collect();
                    let rb: Vec<Bbox> = r.iter().filter(|(c, _)| cat(*c) == k).map(|(_, b)| *b).collect();
                    match_count(&gb, &rb, thr, matcher)
                })
                .sum();
            f1_sum += if tp == 0 { 0.0 } else { 2.0 * tp as f64 / (n_gen + n_ref) as f64 };
        }
        num += w * f1_sum / F1_THRESHOLDS.len() as f64;
        den += w;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

/// Layout of a graph: its boxes labeled by node object.
pub fn graph_layout(g: &SceneGraphState) -> Option<Layout> {
    g.boxes().map(|b| g.nodes().iter().copied().zip(b.iter().copied()).collect())
}

/// Fraction of trials whose first `n` completions contain a match.
pub fn win_rate<T: PartialEq>(completions: &[Vec<T>], truth: &[T], n: usize) -> Result<f64> {
    if completions.len() != truth.len() {
        return Err(Error::SizeMismatch(format!("{} completion sets for {} ground truths", completions.len(), truth.len())));
    }
    if completions.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut hits = 0;
    for (set, t) in completions.iter().zip(truth) {
        if set.len() < n {
            return Err(Error::SizeMismatch(format!("completion set has {} samples, need {n}", set.len())));
        }
        if set[..n].iter().any(|c| c == t) {
            hits += 1;
        }
    }
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    NodeMmd,
    RelationMmd,
    InDegreeMmd,
    OutDegreeMmd,
    TripletTv,
    AttachTv,
    RareKTv,
    F1Vanilla,
    F1Area,
    F1Freq,
    F1Box,
}

impl Metric {
    pub const ALL: [Metric; 11] = [
        Metric::NodeMmd,
        Metric::RelationMmd,
        Metric::InDegreeMmd,
        Metric::OutDegreeMmd,
        Metric::TripletTv,
        Metric::AttachTv,
        Metric::RareKTv,
        Metric::F1Vanilla,
        Metric::F1Area,
        Metric::F1Freq,
        Metric::F1Box,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::NodeMmd => "node_mmd",
            Metric::RelationMmd => "relation_mmd",
            Metric::InDegreeMmd => "in_degree_mmd",
            Metric::OutDegreeMmd => "out_degree_mmd",
            Metric::TripletTv => "triplet_tv",
            Metric::AttachTv => "attach_tv",
            Metric::RareKTv => "rare_k_tv",
            Metric::F1Vanilla => "f1_vanilla",
            Metric::F1Area => "f1_area",
            Metric::F1Freq => "f1_freq",
            Metric::F1Box => "f1_box",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub bandwidth: Bandwidth,
    pub histogram_norm: HistogramNorm,
    pub rare_alpha: f64,
    pub matcher: Matcher,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { bandwidth: Bandwidth::Median, histogram_norm: HistogramNorm::PerGraph, rare_alpha: 1.0, matcher: Matcher::Greedy }
    }
}

/// Flat report keyed by metric name. Layout metrics pair graphs by position
/// and need boxes on every graph.
pub fn evaluate(
    generated: &[SceneGraphState],
    reference: &[SceneGraphState],
    vocab: &Vocabulary,
    metrics: &[Metric],
    opts: &EvalOptions,
) -> Result<BTreeMap<String, f64>> {
    let layouts = |set: &[SceneGraphState]| -> Result<Vec<Layout>> {
        set.iter().map(|g| graph_layout(g).ok_or_else(|| Error::InvalidConfig("layout metrics need boxes on every graph".into()))).collect()
    };
    let mut out = BTreeMap::new();
    for &m in metrics {
        let mmd_of = |f| mmd(generated, reference, f, opts.bandwidth, opts.histogram_norm, vocab);
        let f1_of = |v| layout_f1(&layouts(generated)?, &layouts(reference)?, v, opts.matcher);
        let v = match m {
            Metric::NodeMmd => mmd_of(Feature::Node)?,
            Metric::RelationMmd => mmd_of(Feature::Relation)?,
            Metric::InDegreeMmd => mmd_of(Feature::InDegree)?,
            Metric::OutDegreeMmd => mmd_of(Feature::OutDegree)?,
            Metric::TripletTv => triplet_tv(generated, reference)?,
            Metric::AttachTv => attach_tv(generated, reference)?,
            Metric::RareKTv => rare_k_tv(generated, reference, opts.rare_alpha)?,
            Metric::F1Vanilla => f1_of(F1Variant::Vanilla)?,
            Metric::F1Area => f1_of(F1Variant::Area)?,
            Metric::F1Freq => f1_of(F1Variant::Freq)?,
            Metric::F1Box => f1_of(F1Variant::Box)?,
        };
        out.insert(m.name().to_string(), v);
    }
    Ok(out)
}
