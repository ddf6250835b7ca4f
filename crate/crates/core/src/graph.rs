//! Scene-graph state space: vocabulary, edge-gated states, batching and
//! text/DOT/JSON views.
//!
//! Relations are stored as a dense `n x n` matrix. Index `0` is the null
//! relation and is the only value allowed on an inactive pair; semantic
//! labels occupy `1..=K_rel` and the relation mask token is `K_rel + 1`.
//! Object labels occupy `0..K_obj` with the object mask token at `K_obj`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layout::Bbox;

/// Label alphabets and their empirical frequency tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    object_labels: Vec<String>,
    relation_labels: Vec<String>,
    object_counts: Vec<f64>,
    relation_counts: Vec<f64>,
    edge_density: f64,
    object_freq: Vec<f64>,
    relation_freq: Vec<f64>,
}

fn normalize_counts(counts: &[f64]) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    if counts.is_empty() {
        return Vec::new();
    }
    if total <= 0.0 {
        return vec![1.0 / counts.len() as f64; counts.len()];
    }
    counts.iter().map(|c| c / total).collect()
}

impl Vocabulary {
    /// Builds a vocabulary from raw label counts. `relation_counts[k]` is the
    /// count of semantic relation `k + 1`. All-zero count tables fall back to
    /// uniform frequencies.
    pub fn from_counts(
        object_labels: Vec<String>,
        relation_labels: Vec<String>,
        object_counts: Vec<f64>,
        relation_counts: Vec<f64>,
        edge_density: f64,
    ) -> Result<Self> {
        if object_counts.len() != object_labels.len() {
            return Err(Error::SizeMismatch(format!(
                "{} object labels but {} counts",
                object_labels.len(),
                object_counts.len()
            )));
        }
        if relation_counts.len() != relation_labels.len() {
            return Err(Error::SizeMismatch(format!(
                "{} relation labels but {} counts",
                relation_labels.len(),
                relation_counts.len()
            )));
        }
        if object_counts.iter().chain(&relation_counts).any(|c| !(*c >= 0.0)) {
            return Err(Error::DegenerateVocab("negative or NaN count".into()));
        }
        if !(0.0..=1.0).contains(&edge_density) {
            return Err(Error::DegenerateVocab(format!("edge density {edge_density} outside [0,1]")));
        }
        let object_freq = normalize_counts(&object_counts);
        let mut relation_freq = vec![0.0];
        relation_freq.extend(normalize_counts(&relation_counts));
        Ok(Vocabulary {
            object_labels,
            relation_labels,
            object_counts,
            relation_counts,
            edge_density,
            object_freq,
            relation_freq,
        })
    }

    /// Vocabulary with uniform frequency tables.
    pub fn uniform(object_labels: Vec<String>, relation_labels: Vec<String>, edge_density: f64) -> Result<Self> {
        let oc = vec![1.0; object_labels.len()];
        let rc = vec![1.0; relation_labels.len()];
        Self::from_counts(object_labels, relation_labels, oc, rc, edge_density)
    }

    pub fn empty() -> Self {
        Vocabulary {
            object_labels: Vec::new(),
            relation_labels: Vec::new(),
            object_counts: Vec::new(),
            relation_counts: Vec::new(),
            edge_density: 0.0,
            object_freq: Vec::new(),
            relation_freq: vec![0.0],
        }
    }

    pub fn num_objects(&self) -> usize {
        self.object_labels.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_labels.len()
    }

    pub fn mask_obj(&self) -> usize {
        self.object_labels.len()
    }

    pub fn mask_rel(&self) -> usize {
        self.relation_labels.len() + 1
    }

    pub fn object_labels(&self) -> &[String] {
        &self.object_labels
    }

    /// Semantic relation names; entry `k` names relation index `k + 1`.
    pub fn relation_labels(&self) -> &[String] {
        &self.relation_labels
    }

    pub fn object_name(&self, v: usize) -> &str {
        if v == self.mask_obj() {
            "[MASK]"
        } else {
            &self.object_labels[v]
        }
    }

    pub fn relation_name(&self, r: usize) -> &str {
        if r == self.mask_rel() {
            "[MASK]"
        } else if r == 0 {
            ""
        } else {
            &self.relation_labels[r - 1]
        }
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.object_labels.iter().position(|l| l == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relation_labels.iter().position(|l| l == name).map(|k| k + 1)
    }

    pub fn object_freq(&self) -> &[f64] {
        &self.object_freq
    }

    /// Relation frequencies indexed by relation value; entry 0 is always 0.
    pub fn relation_freq(&self) -> &[f64] {
        &self.relation_freq
    }

    pub fn object_counts(&self) -> &[f64] {
        &self.object_counts
    }

    /// Raw counts of semantic relations; entry `k` counts relation `k + 1`.
    pub fn relation_counts(&self) -> &[f64] {
        &self.relation_counts
    }

    /// Fraction of ordered node pairs carrying an active edge.
    pub fn edge_density(&self) -> f64 {
        self.edge_density
    }

    /// Hex SHA-256 over the label alphabets.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.object_labels {
            h.update(b"o:");
            h.update(l.as_bytes());
            h.update([0u8]);
        }
        for l in &self.relation_labels {
            h.update(b"r:");
            h.update(l.as_bytes());
            h.update([0u8]);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// One factorized scene-graph state `(V, E, R+)` plus optional layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneGraphState {
    nodes: Vec<usize>,
    edges: Vec<u8>,
    relations: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boxes: Option<Vec<Bbox>>,
}

impl SceneGraphState {
    /// An `n`-node state with every node labelled `0` and no edges.
    pub fn empty(n: usize) -> Self {
        SceneGraphState {
            nodes: vec![0; n],
            edges: vec![0; n * n],
            relations: vec![0; n * n],
            boxes: None,
        }
    }

    /// Nodes with the given labels and no edges.
    pub fn with_nodes(nodes: Vec<usize>) -> Self {
        let n = nodes.len();
        SceneGraphState { nodes, edges: vec![0; n * n], relations: vec![0; n * n], boxes: None }
    }

    /// Unchecked constructor; pair matrices are row-major `n x n`.
    pub fn from_parts(nodes: Vec<usize>, edges: Vec<u8>, relations: Vec<usize>, boxes: Option<Vec<Bbox>>) -> Result<Self> {
        let n = nodes.len();
        if edges.len() != n * n || relations.len() != n * n {
            return Err(Error::SizeMismatch(format!(
                "pair matrices must have {} entries, got {} edges and {} relations",
                n * n,
                edges.len(),
                relations.len()
            )));
        }
        if let Some(b) = &boxes {
            if b.len() != n {
                return Err(Error::SizeMismatch(format!("{} boxes for {} nodes", b.len(), n)));
            }
        }
        Ok(SceneGraphState { nodes, edges, relations, boxes })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> usize {
        self.nodes[i]
    }

    pub fn set_node(&mut self, i: usize, v: usize) {
        self.nodes[i] = v;
    }

    pub fn edge(&self, i: usize, j: usize) -> u8 {
        self.edges[i * self.nodes.len() + j]
    }

    pub fn relation(&self, i: usize, j: usize) -> usize {
        self.relations[i * self.nodes.len() + j]
    }

    pub fn edges(&self) -> &[u8] {
        &self.edges
    }

    pub fn relations(&self) -> &[usize] {
        &self.relations
    }

    /// Sets a pair's edge bit and relation together. Callers keep the gating
    /// rule; `validate` reports breaches.
    pub fn set_pair(&mut self, i: usize, j: usize, edge: u8, relation: usize) {
        let n = self.nodes.len();
        self.edges[i * n + j] = edge;
        self.relations[i * n + j] = relation;
    }

    /// Activates `(i, j)` with relation `r`, or deactivates it when `r == 0`.
    pub fn set_relation(&mut self, i: usize, j: usize, r: usize) {
        self.set_pair(i, j, (r != 0) as u8, r);
    }

    pub fn boxes(&self) -> Option<&[Bbox]> {
        self.boxes.as_deref()
    }

    pub fn set_boxes(&mut self, boxes: Option<Vec<Bbox>>) {
        self.boxes = boxes;
    }

    /// Off-diagonal ordered pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> {
        let n = self.nodes.len();
        (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
    }

    pub fn active_edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.pairs()
            .filter(|&(i, j)| self.edge(i, j) == 1)
            .map(|(i, j)| (i, j, self.relation(i, j)))
    }

    pub fn num_active_edges(&self) -> usize {
        self.active_edges().count()
    }

    pub fn has_mask(&self, vocab: &Vocabulary) -> bool {
        self.nodes.iter().any(|&v| v == vocab.mask_obj())
            || self.relations.iter().any(|&r| r == vocab.mask_rel())
    }

    /// Triplets `(subject label, relation, object label)` over active edges.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.active_edges().map(|(i, j, r)| (self.nodes[i], r, self.nodes[j]))
    }

    pub fn out_degree(&self, i: usize) -> usize {
        (0..self.n_nodes()).filter(|&j| j != i && self.edge(i, j) == 1).count()
    }

    pub fn in_degree(&self, i: usize) -> usize {
        (0..self.n_nodes()).filter(|&j| j != i && self.edge(j, i) == 1).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    ShapeMismatch { expected: usize, found: usize },
    NodeLabelOutOfRange { node: usize, label: usize },
    SelfLoop { node: usize },
    RelationOnInactiveEdge { i: usize, j: usize },
    ActiveEdgeWithoutRelation { i: usize, j: usize },
    RelationOutOfRange { i: usize, j: usize, label: usize },
    EdgeBitOutOfRange { i: usize, j: usize, value: u8 },
    BoxOutOfRange { node: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ShapeMismatch { expected, found } => {
                write!(f, "pair matrix has {found} entries, expected {expected}")
            }
            Violation::NodeLabelOutOfRange { node, label } => {
                write!(f, "node label {label} out of range at node {node}")
            }
            Violation::SelfLoop { node } => write!(f, "self-loop at node {node}"),
            Violation::RelationOnInactiveEdge { i, j } => write!(f, "relation on inactive edge ({i},{j})"),
            Violation::ActiveEdgeWithoutRelation { i, j } => {
                write!(f, "active edge ({i},{j}) carries the null relation")
            }
            Violation::RelationOutOfRange { i, j, label } => {
                write!(f, "relation label {label} out of range at ({i},{j})")
            }
            Violation::EdgeBitOutOfRange { i, j, value } => write!(f, "edge value {value} at ({i},{j}) is not 0/1"),
            Violation::BoxOutOfRange { node } => write!(f, "box of node {node} is outside [0,1] or degenerate"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Lists every breach of the constrained space; an empty report means the
/// state is valid. Mask tokens are in range.
pub fn validate(state: &SceneGraphState, vocab: &Vocabulary) -> ValidityReport {
    let n = state.n_nodes();
    let mut violations = Vec::new();
    if state.edges.len() != n * n || state.relations.len() != n * n {
        violations.push(Violation::ShapeMismatch { expected: n * n, found: state.edges.len().min(state.relations.len()) });
        return ValidityReport { violations };
    }
    for (i, &v) in state.nodes.iter().enumerate() {
        if v > vocab.mask_obj() {
            violations.push(Violation::NodeLabelOutOfRange { node: i, label: v });
        }
    }
    for i in 0..n {
        if state.edge(i, i) != 0 || state.relation(i, i) != 0 {
            violations.push(Violation::SelfLoop { node: i });
        }
    }
    for (i, j) in state.pairs() {
        let e = state.edge(i, j);
        let r = state.relation(i, j);
        match e {
            0 if r != 0 => violations.push(Violation::RelationOnInactiveEdge { i, j }),
            0 => {}
            1 if r == 0 => violations.push(Violation::ActiveEdgeWithoutRelation { i, j }),
            1 if r > vocab.mask_rel() => violations.push(Violation::RelationOutOfRange { i, j, label: r }),
            1 => {}
            value => violations.push(Violation::EdgeBitOutOfRange { i, j, value }),
        }
    }
    if let Some(boxes) = state.boxes() {
        for (node, b) in boxes.iter().enumerate() {
            if !b.in_unit_square() {
                violations.push(Violation::BoxOutOfRange { node });
            }
        }
    }
    ValidityReport { violations }
}

/// Deterministic text view: one `"<subj> <rel> <obj>"` clause per active edge
/// in row-major pair order, then isolated nodes by name, joined with `". "`.
pub fn serialize_graph(state: &SceneGraphState, vocab: &Vocabulary) -> Result<String> {
    if state.has_mask(vocab) {
        return Err(Error::MaskPresent);
    }
    let mut clauses = Vec::new();
    let mut touched = vec![false; state.n_nodes()];
    for (i, j, r) in state.active_edges() {
        touched[i] = true;
        touched[j] = true;
        clauses.push(format!(
            "{} {} {}",
            vocab.object_name(state.node(i)),
            vocab.relation_name(r),
            vocab.object_name(state.node(j))
        ));
    }
    for (i, t) in touched.iter().enumerate() {
        if !t {
            clauses.push(vocab.object_name(state.node(i)).to_string());
        }
    }
    Ok(clauses.join(". "))
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// GraphViz DOT view; mask tokens render as `[MASK]`.
pub fn to_dot(state: &SceneGraphState, vocab: &Vocabulary) -> String {
    let mut out = String::from("digraph scene {\n");
    for (i, &v) in state.nodes().iter().enumerate() {
        out.push_str(&format!("  n{i} [label=\"{}\"];\n", dot_escape(vocab.object_name(v))));
    }
    for (i, j, r) in state.active_edges() {
        out.push_str(&format!("  n{i} -> n{j} [label=\"{}\"];\n", dot_escape(vocab.relation_name(r))));
    }
    out.push_str("}\n");
    out
}

/// States padded to a common node count with validity masks.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub states: Vec<SceneGraphState>,
    pub n_nodes: Vec<usize>,
    pub max_nodes: usize,
    /// `node_mask[b][i]`: node `i` of graph `b` is real.
    pub node_mask: Vec<Vec<bool>>,
    /// `pair_mask[b][i * max_nodes + j]`: off-diagonal pair with both endpoints real.
    pub pair_mask: Vec<Vec<bool>>,
}

pub fn pad_batch(states: &[SceneGraphState]) -> Result<GraphBatch> {
    if states.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let max_nodes = states.iter().map(|s| s.n_nodes()).max().unwrap_or(0);
    let mut padded = Vec::with_capacity(states.len());
    let mut node_mask = Vec::with_capacity(states.len());
    let mut pair_mask = Vec::with_capacity(states.len());
    for s in states {
        let n = s.n_nodes();
        let mut p = SceneGraphState::empty(max_nodes);
        for i in 0..n {
            p.nodes[i] = s.nodes[i];
            for j in 0..n {
                p.set_pair(i, j, s.edge(i, j), s.relation(i, j));
            }
        }
        if let Some(b) = s.boxes() {
            let mut boxes = b.to_vec();
            boxes.resize(max_nodes, Bbox::new(0.5, 0.5, 1.0, 1.0));
            p.boxes = Some(boxes);
        }
        node_mask.push((0..max_nodes).map(|i| i < n).collect());
        pair_mask.push(
            (0..max_nodes * max_nodes)
                .map(|k| {
                    let (i, j) = (k / max_nodes, k % max_nodes);
                    i != j && i < n && j < n
                })
                .collect(),
        );
        padded.push(p);
    }
    Ok(GraphBatch { states: padded, n_nodes: states.iter().map(|s| s.n_nodes()).collect(), max_nodes, node_mask, pair_mask })
}

impl GraphBatch {
    /// Strips padding back off.
    pub fn unpad(&self) -> Vec<SceneGraphState> {
        self.states
            .iter()
            .zip(&self.n_nodes)
            .map(|(p, &n)| {
                let mut s = SceneGraphState::empty(n);
                for i in 0..n {
                    s.nodes[i] = p.nodes[i];
                    for j in 0..n {
                        s.set_pair(i, j, p.edge(i, j), p.relation(i, j));
                    }
                }
                s.boxes = p.boxes().map(|b| b[..n].to_vec());
                s
            })
            .collect()
    }
}

/// One graph in the line-delimited JSON corpus format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub nodes: Vec<String>,
    #[serde(default)]
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub s: usize,
    pub o: usize,
    pub r: String,
}

impl GraphRecord {
    pub fn from_state(state: &SceneGraphState, vocab: &Vocabulary) -> Result<Self> {
        if state.has_mask(vocab) {
            return Err(Error::MaskPresent);
        }
        Ok(GraphRecord {
            nodes: state.nodes().iter().map(|&v| vocab.object_name(v).to_string()).collect(),
            edges: state
                .active_edges()
                .map(|(s, o, r)| EdgeRecord { s, o, r: vocab.relation_name(r).to_string() })
                .collect(),
            boxes: state.boxes().map(|b| b.iter().map(|x| x.to_array()).collect()),
        })
    }

    /// Resolves label names against `vocab`. With `symmetric`, every edge is
    /// also added in the reverse direction.
    pub fn to_state(&self, vocab: &Vocabulary, symmetric: bool) -> std::result::Result<SceneGraphState, String> {
        let n = self.nodes.len();
        let mut nodes = Vec::with_capacity(n);
        for name in &self.nodes {
            nodes.push(vocab.object_index(name).ok_or_else(|| format!("unknown object label {name:?}"))?);
        }
        let mut state = SceneGraphState::with_nodes(nodes);
        for e in &self.edges {
            if e.s >= n || e.o >= n {
                return Err(format!("edge ({},{}) references a node outside 0..{n}", e.s, e.o));
            }
            let r = vocab.relation_index(&e.r).ok_or_else(|| format!("unknown relation label {:?}", e.r))?;
            state.set_relation(e.s, e.o, r);
            if symmetric {
                state.set_relation(e.o, e.s, r);
            }
        }
        if let Some(b) = &self.boxes {
            if b.len() != n {
                return Err(format!("{} boxes for {n} nodes", b.len()));
            }
            state.boxes = Some(b.iter().map(|&a| Bbox::from(a)).collect());
        }
        Ok(state)
    }
}

/// Label counts accumulated over records, in first-seen order.
#[derive(Debug, Default)]
pub struct VocabularyBuilder {
    objects: Vec<String>,
    relations: Vec<String>,
    object_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
    object_counts: Vec<f64>,
    relation_counts: Vec<f64>,
    active_pairs: f64,
    total_pairs: f64,
}

impl VocabularyBuilder {
    pub fn observe(&mut self, record: &GraphRecord, symmetric: bool) {
        for name in &record.nodes {
            let k = *self.object_index.entry(name.clone()).or_insert_with(|| {
                self.objects.push(name.clone());
                self.object_counts.push(0.0);
                self.objects.len() - 1
            });
            self.object_counts[k] += 1.0;
        }
        let mut seen = std::collections::HashSet::new();
        for e in &record.edges {
            let k = *self.relation_index.entry(e.r.clone()).or_insert_with(|| {
                self.relations.push(e.r.clone());
                self.relation_counts.push(0.0);
                self.relations.len() - 1
            });
            let mut add = |s: usize, o: usize| {
                if seen.insert((s, o)) {
                    self.relation_counts[k] += 1.0;
                }
            };
            add(e.s, e.o);
            if symmetric {
                add(e.o, e.s);
            }
        }
        let n = record.nodes.len() as f64;
        self.active_pairs += seen.len() as f64;
        self.total_pairs += n * (n - 1.0);
    }

    pub fn build(self) -> Result<Vocabulary> {
        let density = if self.total_pairs > 0.0 { self.active_pairs / self.total_pairs } else { 0.0 };
        Vocabulary::from_counts(self.objects, self.relations, self.object_counts, self.relation_counts, density)
    }
}
