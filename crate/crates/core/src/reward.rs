//! Text-alignment rewards for conditioned sampling.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{SceneGraphState, Vocabulary};

pub const STOP_WORDS: &[&str] = &["a", "an", "the", "on", "of", "and", "is", "are"];

pub const EMBED_URL_VAR: &str = "DSG_EMBED_URL";

/// Scores a (possibly partially masked) graph against a fixed prompt.
pub trait Reward: Send + Sync {
    fn score(&self, graph: &SceneGraphState) -> Result<f64>;
}

/// Lower-cased alphanumeric words minus stop words.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !STOP_WORDS.contains(&w.as_str()))
        .collect()
}

/// Text view that skips masked labels; equals `serialize_graph` on
/// mask-free graphs.
pub fn graph_text(graph: &SceneGraphState, vocab: &Vocabulary) -> String {
    let name = |v: usize| if v < vocab.num_objects() { vocab.object_name(v) } else { "" };
    let mut clauses = Vec::new();
    let mut touched = vec![false; graph.n_nodes()];
    for (i, j, r) in graph.active_edges() {
        touched[i] = true;
        touched[j] = true;
        let rel = if r <= vocab.num_relations() { vocab.relation_name(r) } else { "" };
        let words: Vec<&str> = [name(graph.node(i)), rel, name(graph.node(j))].into_iter().filter(|w| !w.is_empty()).collect();
        if !words.is_empty() {
            clauses.push(words.join(" "));
        }
    }
    for (i, t) in touched.iter().enumerate() {
        if !t && !name(graph.node(i)).is_empty() {
            clauses.push(name(graph.node(i)).to_string());
        }
    }
    clauses.join(". ")
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone)]
pub struct LexicalReward {
    prompt: BTreeSet<String>,
    vocab: Vocabulary,
}

impl LexicalReward {
    pub fn new(prompt: &str, vocab: &Vocabulary) -> Self {
        LexicalReward { prompt: tokenize(prompt), vocab: vocab.clone() }
    }
}

impl Reward for LexicalReward {
    fn score(&self, graph: &SceneGraphState) -> Result<f64> {
        Ok(jaccard(&tokenize(&graph_text(graph, &self.vocab)), &self.prompt))
    }
}

/// Shorthand for a one-off lexical score.
pub fn reward_lexical(graph: &SceneGraphState, prompt: &str, vocab: &Vocabulary) -> f64 {
    jaccard(&tokenize(&graph_text(graph, vocab)), &tokenize(prompt))
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: [&'a str; 2],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// `(1 + cos) / 2` of two vectors.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::MalformedResponse(format!("vector lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !dot.is_finite() {
        return Err(Error::MalformedResponse("zero or non-finite vector".into()));
    }
    Ok(((1.0 + dot / (na * nb)) / 2.0).clamp(0.0, 1.0))
}

/// Client for an embedding service speaking
/// `POST /embed {"texts": [..]} -> {"vectors": [[..], [..]]}`.
#[derive(Clone)]
pub struct EmbeddingClient {
    agent: ureq::Agent,
    url: String,
}

impl EmbeddingClient {
    /// `base` may be the service root or the full `/embed` endpoint.
    pub fn new(base: &str, timeout: Duration) -> Self {
        let base = base.trim_end_matches('/');
        let url = if base.ends_with("/embed") { base.to_string() } else { format!("{base}/embed") };
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        EmbeddingClient { agent, url }
    }

    pub fn from_env(timeout: Duration) -> Result<Self> {
        let base = std::env::var(EMBED_URL_VAR).map_err(|_| Error::ServiceUnavailable(format!("{EMBED_URL_VAR} not set")))?;
        Ok(Self::new(&base, timeout))
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts: [a, b] })
            .map_err(|e| Error::ServiceUnavailable(e.to_string()))?;
        let body: EmbedResponse = resp.body_mut().read_json().map_err(|e| Error::MalformedResponse(e.to_string()))?;
        match body.vectors.as_slice() {
            [u, v] => cosine_score(u, v),
            other => Err(Error::MalformedResponse(format!("expected 2 vectors, got {}", other.len()))),
        }
    }
}

/// Embedding-service reward with an optional lexical fallback on service
/// or protocol failures.
pub struct EmbeddingReward {
    client: EmbeddingClient,
    prompt: String,
    vocab: Vocabulary,
    fallback: Option<LexicalReward>,
}

impl EmbeddingReward {
    pub fn new(client: EmbeddingClient, prompt: &str, vocab: &Vocabulary, fallback: bool) -> Self {
        EmbeddingReward {
            client,
            prompt: prompt.to_string(),
            vocab: vocab.clone(),
            fallback: fallback.then(|| LexicalReward::new(prompt, vocab)),
        }
    }
}

impl Reward for EmbeddingReward {
    fn score(&self, graph: &SceneGraphState) -> Result<f64> {
        match self.client.similarity(&graph_text(graph, &self.vocab), &self.prompt) {
            Err(e @ (Error::ServiceUnavailable(_) | Error::MalformedResponse(_))) => match &self.fallback {
                Some(lex) => {
                    log::warn!("embedding reward failed ({e}); using lexical reward");
                    lex.score(graph)
                }
                None => Err(e),
            },
            other => other,
        }
    }
}

/// The same score for every graph.
#[derive(Debug, Clone, Copy)]
pub struct ConstantReward(pub f64);

impl Reward for ConstantReward {
    fn score(&self, _graph: &SceneGraphState) -> Result<f64> {
        Ok(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::uniform(
            vec!["person".into(), "surfboard".into(), "kite".into(), "traffic light".into()],
            vec!["on".into(), "holding".into()],
            0.3,
        )
        .unwrap()
    }

    fn holding_kite() -> SceneGraphState {
        let mut x = SceneGraphState::with_nodes(vec![0, 2]);
        x.set_pair(0, 1, 1, 2);
        x
    }

    #[test]
    fn hand_jaccard() {
        assert!((reward_lexical(&holding_kite(), "person on surfboard", &vocab()) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint() {
        let v = vocab();
        let x = holding_kite();
        let text = crate::graph::serialize_graph(&x, &v).unwrap();
        assert_eq!(graph_text(&x, &v), text);
        assert_eq!(reward_lexical(&x, &text, &v), 1.0);
        assert_eq!(reward_lexical(&x, "zebra galloping", &v), 0.0);
    }

    #[test]
    fn masked_entities_contribute_nothing() {
        let v = vocab();
        let mut x = holding_kite();
        x.set_node(1, v.mask_obj());
        x.set_pair(0, 1, 1, v.mask_rel());
        assert_eq!(graph_text(&x, &v), "person");
        assert_eq!(reward_lexical(&x, "person", &v), 1.0);
        let all = SceneGraphState::with_nodes(vec![v.mask_obj()]);
        assert_eq!(reward_lexical(&all, "the", &v), 1.0);
    }

    #[test]
    fn multiword_labels_split() {
        let v = vocab();
        let x = SceneGraphState::with_nodes(vec![3]);
        assert!((reward_lexical(&x, "Traffic, light!", &v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_score(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(cosine_score(&[1.0], &[1.0, 2.0]), Err(Error::MalformedResponse(_))));
    }

    #[test]
    fn endpoint_normalization() {
        let d = Duration::from_secs(1);
        assert_eq!(EmbeddingClient::new("http://h:1/", d).url(), "http://h:1/embed");
        assert_eq!(EmbeddingClient::new("http://h:1/embed", d).url(), "http://h:1/embed");
    }
}
