//! Corpus files, synthetic corpora with closed-form statistics, and the
//! checkpoint container.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::{Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::graph::{validate, Violation, EdgeRecord, GraphRecord, SceneGraphState, Vocabulary, VocabularyBuilder};
use crate::layout::Bbox;
use crate::schedule::sample_index;

/// Reads a line-delimited JSON corpus and builds its vocabulary. Blank lines
/// are skipped; line numbers in errors are 1-based.
pub fn load_corpus(path: &Path, symmetric: bool) -> Result<(Vocabulary, Vec<SceneGraphState>)> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, symmetric)
}

pub fn parse_corpus(text: &str, symmetric: bool) -> Result<(Vocabulary, Vec<SceneGraphState>)> {
    let (vocab, mut graphs) = parse_corpora(&[text], symmetric)?;
    Ok((vocab, graphs.pop().unwrap()))
}

fn parse_records(text: &str) -> Result<Vec<(usize, GraphRecord)>> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(k, l)| (k + 1, l)).collect();
    lines
        .par_iter()
        .map(|&(line, l)| serde_json::from_str(l).map(|r| (line, r)).map_err(|e| Error::Parse { line, message: e.to_string() }))
        .collect()
}

/// Several corpora sharing one vocabulary built from all of them.
pub fn parse_corpora(texts: &[&str], symmetric: bool) -> Result<(Vocabulary, Vec<Vec<SceneGraphState>>)> {
    let records: Vec<Vec<(usize, GraphRecord)>> = texts.iter().map(|t| parse_records(t)).collect::<Result<_>>()?;
    if records.iter().all(Vec::is_empty) {
        return Ok((Vocabulary::empty(), vec![Vec::new(); texts.len()]));
    }
    let mut builder = VocabularyBuilder::default();
    for (_, r) in records.iter().flatten() {
        builder.observe(r, symmetric);
    }
    let vocab = builder.build()?;
    let graphs = records.iter().map(|r| records_to_states(r, &vocab, symmetric)).collect::<Result<_>>()?;
    Ok((vocab, graphs))
}

/// Resolves records against a fixed vocabulary.
pub fn load_corpus_with(path: &Path, vocab: &Vocabulary, symmetric: bool) -> Result<Vec<SceneGraphState>> {
    records_to_states(&parse_records(&fs::read_to_string(path)?)?, vocab, symmetric)
}

fn records_to_states(records: &[(usize, GraphRecord)], vocab: &Vocabulary, symmetric: bool) -> Result<Vec<SceneGraphState>> {
    records
        .iter()
        .map(|(line, r)| {
            let s = r.to_state(vocab, symmetric).map_err(|message| Error::Parse { line: *line, message })?;
            let mut report = validate(&s, vocab);
            for (node, b) in s.boxes().unwrap_or(&[]).iter().enumerate() {
                if b.is_degenerate() && b.in_unit_square() {
                    report.violations.push(Violation::BoxOutOfRange { node });
                }
            }
            if report.is_valid() {
                Ok(s)
            } else {
                Err(Error::InvalidGraph { line: *line, report })
            }
        })
        .collect()
}

pub fn save_corpus(path: &Path, graphs: &[SceneGraphState], vocab: &Vocabulary) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for g in graphs {
        serde_json::to_writer(&mut w, &GraphRecord::from_state(g, vocab)?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Distribution over `K` items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Law {
    Uniform,
    /// `p(k) ∝ (k + 1)^-exponent`.
    Zipf { exponent: f64 },
    Weights { weights: Vec<f64> },
}

impl Law {
    pub fn probs(&self, k: usize) -> Result<Vec<f64>> {
        let w: Vec<f64> = match self {
            Law::Uniform => vec![1.0; k],
            Law::Zipf { exponent } => (0..k).map(|i| ((i + 1) as f64).powf(-exponent)).collect(),
            Law::Weights { weights } => {
                if weights.len() != k {
                    return Err(Error::InconsistentSpec(format!("{} weights for {k} items", weights.len())));
                }
                weights.clone()
            }
        };
        normalized(w)
    }
}

fn normalized(w: Vec<f64>) -> Result<Vec<f64>> {
    if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InconsistentSpec("weights must be finite and nonnegative".into()));
    }
    let z: f64 = w.iter().sum();
    if z <= 0.0 {
        return Err(Error::InconsistentSpec("weights sum to zero".into()));
    }
    Ok(w.into_iter().map(|x| x / z).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeCountLaw {
    Fixed { n: usize },
    Uniform { min: usize, max: usize },
    /// `weights[k]` is the probability of `min + k` nodes.
    Weights { min: usize, weights: Vec<f64> },
}

impl NodeCountLaw {
    /// `(count, probability)` pairs.
    pub fn probs(&self) -> Result<Vec<(usize, f64)>> {
        let (min, w) = match self {
            Self::Fixed { n } => (*n, vec![1.0]),
            Self::Uniform { min, max } if max >= min => (*min, vec![1.0; max - min + 1]),
            Self::Uniform { .. } => return Err(Error::InconsistentSpec("node count max below min".into())),
            Self::Weights { min, weights } => (*min, weights.clone()),
        };
        if min == 0 {
            return Err(Error::InconsistentSpec("graphs need at least one node".into()));
        }
        Ok(normalized(w)?.into_iter().enumerate().map(|(k, p)| (min + k, p)).collect())
    }
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeLaw {
    Constant { p: f64 },
    /// `p[v_i][v_j]`.
    Matrix { p: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelationLaw {
    /// Same relation law for every object pair.
    Marginal { law: Law },
    /// `r = 1 + (v_i * K_obj + v_j) mod K_rel`.
    Deterministic,
    /// `table[v_i][v_j][r - 1]`.
    Table { table: Vec<Vec<Vec<f64>>> },
}

/// Layout law: i.i.d. boxes, then every active edge carrying the `above`
/// relation moves its subject box above its object box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxLaw {
    pub min_size: f64,
    pub max_size: f64,
    pub above: Option<String>,
}

impl Default for BoxLaw {
    fn default() -> Self {
        BoxLaw { min_size: 0.1, max_size: 0.4, above: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub objects: Vec<String>,
    pub relations: Vec<String>,
    pub node_count: NodeCountLaw,
    pub object_law: Law,
    pub edge_law: EdgeLaw,
    pub relation_law: RelationLaw,
    #[serde(default)]
    pub boxes: Option<BoxLaw>,
}

const OBJECT_NAMES: &[&str] = &["person", "dog", "car", "tree", "table", "cup", "kite", "horse", "bench", "lamp", "boat", "bird"];
const RELATION_NAMES: &[&str] = &["near", "holding", "behind", "riding", "above", "wearing", "beside", "under", "facing", "carrying", "inside", "touching"];

fn names(pool: &[&str], k: usize) -> Vec<String> {
    (0..k).map(|i| if i < pool.len() { pool[i].to_string() } else { format!("{}{}", pool[i % pool.len()], i / pool.len()) }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Zipf(1) relations independent of the object pair.
    LongTailed,
    /// Relation fixed by the ordered object pair.
    Deterministic,
    Uniform,
}

impl SynthSpec {
    pub fn preset(preset: Preset, k_obj: usize, k_rel: usize) -> Self {
        let relation_law = match preset {
            Preset::LongTailed => RelationLaw::Marginal { law: Law::Zipf { exponent: 1.0 } },
            Preset::Deterministic => RelationLaw::Deterministic,
            Preset::Uniform => RelationLaw::Marginal { law: Law::Uniform },
        };
        let relations = names(RELATION_NAMES, k_rel);
        let above = relations.iter().find(|r| *r == "above").cloned();
        SynthSpec {
            objects: names(OBJECT_NAMES, k_obj),
            relations,
            node_count: NodeCountLaw::Uniform { min: 3, max: 5 },
            object_law: Law::Uniform,
            edge_law: EdgeLaw::Constant { p: 0.3 },
            relation_law,
            boxes: Some(BoxLaw { above, ..Default::default() }),
        }
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    fn edge_matrix(&self) -> Result<Vec<Vec<f64>>> {
        let k = self.num_objects();
        let m = match &self.edge_law {
            EdgeLaw::Constant { p } => vec![vec![*p; k]; k],
            EdgeLaw::Matrix { p } => p.clone(),
        };
        if m.len() != k || m.iter().any(|row| row.len() != k || row.iter().any(|x| !(0.0..=1.0).contains(x))) {
            return Err(Error::InconsistentSpec(format!("edge law must be a {k}x{k} matrix of probabilities")));
        }
        Ok(m)
    }

    /// `p(r | v_i, v_j)` indexed `[v_i][v_j][r - 1]`.
    fn relation_table(&self) -> Result<Vec<Vec<Vec<f64>>>> {
        let (ko, kr) = (self.num_objects(), self.num_relations());
        match &self.relation_law {
            RelationLaw::Marginal { law } => {
                let p = law.probs(kr)?;
                Ok(vec![vec![p; ko]; ko])
            }
            RelationLaw::Deterministic => Ok((0..ko)
                .map(|a| {
                    (0..ko)
                        .map(|b| {
                            let mut p = vec![0.0; kr];
                            p[(a * ko + b) % kr] = 1.0;
                            p
                        })
                        .collect()
                })
                .collect()),
            RelationLaw::Table { table } => {
                if table.len() != ko || table.iter().any(|row| row.len() != ko) {
                    return Err(Error::InconsistentSpec(format!("relation table must be {ko}x{ko}")));
                }
                table.iter().map(|row| row.iter().map(|p| Law::Weights { weights: p.clone() }.probs(kr)).collect()).collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.relations.is_empty() {
            return Err(Error::InconsistentSpec("need at least one object and one relation label".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.objects.iter().all(|o| seen.insert(o)) || !self.relations.iter().all(|r| seen.insert(r)) {
            return Err(Error::InconsistentSpec("labels must be unique".into()));
        }
        self.node_count.probs()?;
        self.object_law.probs(self.num_objects())?;
        self.edge_matrix()?;
        self.relation_table()?;
        if let Some(b) = &self.boxes {
            if !(b.min_size > 0.0 && b.min_size <= b.max_size && b.max_size <= 1.0) {
                return Err(Error::InconsistentSpec("box sizes must satisfy 0 < min <= max <= 1".into()));
            }
            if let Some(a) = &b.above {
                if !self.relations.contains(a) {
                    return Err(Error::InconsistentSpec(format!("box law names unknown relation {a:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Closed-form laws of a synthetic spec, keyed by label name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub node_count: BTreeMap<usize, f64>,
    pub objects: BTreeMap<String, f64>,
    /// `p(r | e = 1)`.
    pub relations: BTreeMap<String, f64>,
    /// Probability that an ordered pair of distinct nodes is active.
    pub edge_density: f64,
    /// `"subject|relation|object"` over active edges.
    pub triplets: BTreeMap<String, f64>,
    /// Law of a uniformly chosen node's out-degree; equal to the in-degree
    /// law when the edge law is symmetric.
    pub out_degree: Vec<f64>,
    pub in_degree: Vec<f64>,
}

pub fn triplet_key(s: &str, r: &str, o: &str) -> String {
    format!("{s}|{r}|{o}")
}

fn binomial_mix(n_law: &[(usize, f64)], q_by_obj: &[f64], obj: &[f64]) -> Vec<f64> {
    let max_n = n_law.iter().map(|&(n, _)| n).max().unwrap_or(1);
    let mean_n: f64 = n_law.iter().map(|&(n, p)| n as f64 * p).sum();
    let mut out = vec![0.0; max_n];
    for &(n, pn) in n_law {
        let w = pn * n as f64 / mean_n;
        for (v, &pv) in obj.iter().enumerate() {
            let q = q_by_obj[v];
            let m = n - 1;
            let mut c = 1.0;
            for d in 0..=m {
                if d > 0 {
                    c *= (m - d + 1) as f64 / d as f64;
                }
                out[d] += w * pv * c * q.powi(d as i32) * (1.0 - q).powi((m - d) as i32);
            }
        }
    }
    out
}

/// Exact statistics of a spec.
pub fn synth_stats(spec: &SynthSpec) -> Result<SynthStats> {
    spec.validate()?;
    let (ko, kr) = (spec.num_objects(), spec.num_relations());
    let n_law = spec.node_count.probs()?;
    let obj = spec.object_law.probs(ko)?;
    let pe = spec.edge_matrix()?;
    let pr = spec.relation_table()?;
    let mut density = 0.0;
    let mut trip = BTreeMap::new();
    let mut rel = vec![0.0; kr];
    for a in 0..ko {
        for b in 0..ko {
            let w = obj[a] * obj[b] * pe[a][b];
            density += w;
            for r in 0..kr {
                let p = w * pr[a][b][r];
                if p > 0.0 {
                    *trip.entry(triplet_key(&spec.objects[a], &spec.relations[r], &spec.objects[b])).or_insert(0.0) += p;
                }
                rel[r] += p;
            }
        }
    }
    if density > 0.0 {
        trip.values_mut().for_each(|v| *v /= density);
        rel.iter_mut().for_each(|v| *v /= density);
    }
    let q_out: Vec<f64> = (0..ko).map(|a| (0..ko).map(|b| obj[b] * pe[a][b]).sum()).collect();
    let q_in: Vec<f64> = (0..ko).map(|a| (0..ko).map(|b| obj[b] * pe[b][a]).sum()).collect();
    Ok(SynthStats {
        node_count: n_law.iter().copied().collect(),
        objects: spec.objects.iter().cloned().zip(obj.iter().copied()).collect(),
        relations: spec.relations.iter().cloned().zip(rel).collect(),
        edge_density: density,
        triplets: trip,
        out_degree: binomial_mix(&n_law, &q_out, &obj),
        in_degree: binomial_mix(&n_law, &q_in, &obj),
    })
}

fn sample_graph<R: Rng + ?Sized>(
    spec: &SynthSpec,
    n_law: &[(usize, f64)],
    obj: &[f64],
    pe: &[Vec<f64>],
    pr: &[Vec<Vec<f64>>],
    above: Option<usize>,
    rng: &mut R,
) -> SceneGraphState {
    let n = n_law[sample_index(&n_law.iter().map(|x| x.1).collect::<Vec<_>>(), rng)].0;
    let nodes: Vec<usize> = (0..n).map(|_| sample_index(obj, rng)).collect();
    let mut x = SceneGraphState::with_nodes(nodes.clone());
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < pe[nodes[i]][nodes[j]] {
                x.set_pair(i, j, 1, sample_index(&pr[nodes[i]][nodes[j]], rng) + 1);
            }
        }
    }
    if let Some(law) = &spec.boxes {
        let half = law.max_size / 2.0;
        let mut boxes: Vec<Bbox> = (0..n)
            .map(|_| {
                let w = rng.random_range(law.min_size..=law.max_size);
                let h = rng.random_range(law.min_size..=law.max_size);
                Bbox::new(rng.random_range(w / 2.0..=1.0 - w / 2.0), rng.random_range(half..=1.0 - half), w, h)
            })
            .collect();
        if let Some(a) = above {
            order_above(&x, a, &mut boxes);
        }
        x.set_boxes(Some(boxes));
    }
    x
}

/// Reassigns the vertical centres of nodes touching an `above` edge so that
/// subjects sit higher (smaller `cy`) than objects. Nodes on a cycle of
/// `above` edges keep an arbitrary order.
fn order_above(x: &SceneGraphState, above: usize, boxes: &mut [Bbox]) {
    let edges: Vec<(usize, usize)> = x.active_edges().filter(|e| e.2 == above).map(|(i, j, _)| (i, j)).collect();
    let mut involved: Vec<usize> = edges.iter().flat_map(|&(i, j)| [i, j]).collect();
    involved.sort_unstable();
    involved.dedup();
    let mut indeg: HashMap<usize, usize> = involved.iter().map(|&v| (v, 0)).collect();
    for &(_, j) in &edges {
        *indeg.get_mut(&j).unwrap() += 1;
    }
    let mut order = Vec::with_capacity(involved.len());
    let mut ready: Vec<usize> = involved.iter().copied().filter(|v| indeg[v] == 0).collect();
    while let Some(v) = ready.pop() {
        order.push(v);
        for &(i, j) in &edges {
            if i == v {
                let d = indeg.get_mut(&j).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(j);
                }
            }
        }
    }
    let rest: Vec<usize> = involved.iter().copied().filter(|v| !order.contains(v)).collect();
    order.extend(rest);
    let mut ys: Vec<f64> = involved.iter().map(|&v| boxes[v].cy).collect();
    ys.sort_by(f64::total_cmp);
    for (v, y) in order.into_iter().zip(ys) {
        boxes[v].cy = y;
    }
}

/// Draws `n_graphs` i.i.d. graphs. The vocabulary keeps the spec's label
/// order and carries the generated label counts.
pub fn synth_generate<R: Rng + ?Sized>(spec: &SynthSpec, n_graphs: usize, rng: &mut R) -> Result<(Vocabulary, Vec<SceneGraphState>, SynthStats)> {
    let stats = synth_stats(spec)?;
    let ko = spec.num_objects();
    let n_law = spec.node_count.probs()?;
    let obj = spec.object_law.probs(ko)?;
    let pe = spec.edge_matrix()?;
    let pr = spec.relation_table()?;
    let above = spec.boxes.as_ref().and_then(|b| b.above.as_ref()).and_then(|a| spec.relations.iter().position(|r| r == a)).map(|k| k + 1);
    let graphs: Vec<SceneGraphState> = (0..n_graphs).map(|_| sample_graph(spec, &n_law, &obj, &pe, &pr, above, rng)).collect();
    let vocab = vocab_from_graphs(&spec.objects, &spec.relations, &graphs)?;
    Ok((vocab, graphs, stats))
}

/// Vocabulary with fixed label order and counts taken from `graphs`.
pub fn vocab_from_graphs(objects: &[String], relations: &[String], graphs: &[SceneGraphState]) -> Result<Vocabulary> {
    let mut oc = vec![0.0; objects.len()];
    let mut rc = vec![0.0; relations.len()];
    let (mut active, mut pairs) = (0.0, 0.0);
    for g in graphs {
        for &v in g.nodes() {
            oc[v] += 1.0;
        }
        for (_, _, r) in g.active_edges() {
            rc[r - 1] += 1.0;
            active += 1.0;
        }
        let n = g.n_nodes() as f64;
        pairs += n * (n - 1.0);
    }
    Vocabulary::from_counts(objects.to_vec(), relations.to_vec(), oc, rc, if pairs > 0.0 { active / pairs } else { 0.0 })
}

/// Empirical triplet law of a corpus keyed like [`SynthStats::triplets`].
pub fn empirical_triplets(graphs: &[SceneGraphState], vocab: &Vocabulary) -> BTreeMap<String, f64> {
    let mut h = BTreeMap::new();
    let mut n = 0.0;
    for g in graphs {
        for (i, j, r) in g.active_edges() {
            let key = triplet_key(vocab.object_name(g.node(i)), vocab.relation_name(r), vocab.object_name(g.node(j)));
            *h.entry(key).or_insert(0.0) += 1.0;
            n += 1.0;
        }
    }
    h.values_mut().for_each(|v| *v /= n);
    h
}

/// TV between two laws over string keys.
pub fn tv_keyed(p: &BTreeMap<String, f64>, q: &BTreeMap<String, f64>) -> f64 {
    let mut d = 0.0;
    for (k, v) in p {
        d += (v - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, v) in q {
        if !p.contains_key(k) {
            d += v;
        }
    }
    0.5 * d
}

const MAGIC: &[u8; 4] = b"DSG1";

fn push_tensors(buf: &mut Vec<u8>, tensors: &[Array2<f64>]) {
    let n: usize = tensors.iter().map(|t| t.len()).sum();
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    for t in tensors {
        for v in t.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Container: magic, version, JSON header, raw then EMA parameters as
/// little-endian `f64`, trailing SHA-256 of everything before it.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&ckpt.header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&ckpt.header.version.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    push_tensors(&mut buf, &ckpt.raw);
    push_tensors(&mut buf, &ckpt.ema);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::CorruptFile("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensors(&mut self, shapes: &[[usize; 2]]) -> Result<Vec<Array2<f64>>> {
        let n = self.u64()? as usize;
        if n != shapes.iter().map(|s| s[0] * s[1]).sum::<usize>() {
            return Err(Error::CorruptFile("parameter count does not match header shapes".into()));
        }
        shapes
            .iter()
            .map(|&[r, c]| {
                let bytes = self.take(r * c * 8)?;
                let vals = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
                Ok(Array2::from_shape_vec((r, c), vals).unwrap())
            })
            .collect()
    }
}

/// Parses and verifies a checkpoint. With `expected`, the stored vocabulary
/// must carry the same labels.
pub fn decode_checkpoint(buf: &[u8], expected: Option<&Vocabulary>) -> Result<Checkpoint> {
    if buf.len() < 4 + 4 + 8 + 32 || &buf[..4] != MAGIC {
        return Err(Error::CorruptFile("missing magic".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, found: version });
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptFile("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let len = r.u64()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(len)?).map_err(|e| Error::CorruptFile(format!("header: {e}")))?;
    if header.vocab.hash() != header.vocab_hash {
        return Err(Error::CorruptFile("stored vocabulary does not match its hash".into()));
    }
    if let Some(v) = expected {
        if v.hash() != header.vocab_hash {
            return Err(Error::VocabHashMismatch);
        }
    }
    let raw = r.tensors(&header.shapes)?;
    let ema = r.tensors(&header.shapes)?;
    if r.pos != body.len() {
        return Err(Error::CorruptFile("trailing bytes".into()));
    }
    Ok(Checkpoint { header, raw, ema })
}

pub fn load_checkpoint(path: &Path, expected: Option<&Vocabulary>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?, expected)
}

#[derive(Deserialize)]
struct VgObject {
    object_id: u64,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    names: Vec<String>,
}

#[derive(Deserialize)]
struct VgRelationship {
    predicate: String,
    subject: VgObject,
    object: VgObject,
}

#[derive(Deserialize)]
struct VgImage {
    #[serde(default)]
    relationships: Vec<VgRelationship>,
}

fn vg_name(o: &VgObject) -> Option<String> {
    o.name.clone().or_else(|| o.names.first().cloned()).map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty())
}

/// Minimal converter for a raw relationship dump (a JSON array of images
/// with `relationships`). Names are lower-cased, objects deduplicated by id,
/// duplicate pairs keep the first predicate, and boxes are dropped.
pub fn convert_vg_relationships(json: &str) -> Result<Vec<GraphRecord>> {
    let images: Vec<VgImage> = serde_json::from_str(json).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
    let mut out = Vec::new();
    for img in images {
        let mut ids: HashMap<u64, usize> = HashMap::new();
        let mut nodes = Vec::new();
        let mut edges: Vec<EdgeRecord> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for rel in img.relationships {
            let (Some(sn), Some(on)) = (vg_name(&rel.subject), vg_name(&rel.object)) else { continue };
            let predicate = rel.predicate.trim().to_lowercase();
            if predicate.is_empty() || rel.subject.object_id == rel.object.object_id {
                continue;
            }
            let mut node = |id: u64, name: String| {
                *ids.entry(id).or_insert_with(|| {
                    nodes.push(name);
                    nodes.len() - 1
                })
            };
            let s = node(rel.subject.object_id, sn);
            let o = node(rel.object.object_id, on);
            if seen.insert((s, o)) {
                edges.push(EdgeRecord { s, o, r: predicate });
            }
        }
        if !nodes.is_empty() {
            out.push(GraphRecord { nodes, edges, boxes: None });
        }
    }
    Ok(out)
}
