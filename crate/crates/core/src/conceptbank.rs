//! Concept retrieval, validity filtering, category similarity and negative
//! sampling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::crc_hex;
use crate::embedder::{activation_from_embeddings, assemble, cosine, JointEmbedder, Tokenizer};
use crate::error::{Error, Result};
use crate::synthdata::{AttributeVocab, CategorySpec};
use crate::tensor::Tensor;

pub const DEFAULT_RETRIEVE: usize = 10;
pub const DEFAULT_SELECT: usize = 5;
/// Floor applied to similarities before they become sampling weights.
pub const WEIGHT_FLOOR: f64 = 1e-3;

fn shape_phrases(shape: &str) -> Option<[&'static str; 4]> {
    Some(match shape {
        "circle" => {
            ["circular outline", "round smooth edge with no corners", "curved rim all around", "disc shaped body"]
        }
        "square" => {
            ["square outline", "four equal straight sides", "right angle corners", "boxy body with straight edges"]
        }
        "triangle" => ["triangular outline", "three straight sides", "pointed apex on top", "edges sloping to a tip"],
        "cross" => ["cross shaped body", "two crossing bars", "four perpendicular arms", "plus shaped outline"],
        _ => return None,
    })
}

fn hue_phrases(hue: &str) -> [String; 3] {
    [format!("{hue} colored surface"), format!("bright {hue} fill"), format!("solid {hue} tone")]
}

fn size_phrases(size: &str) -> Option<[&'static str; 3]> {
    Some(match size {
        "small" => ["small compact footprint", "tiny body near the center", "occupying a little part of the frame"],
        "large" => ["large body spanning most of the frame", "big wide footprint", "broad shape covering the image"],
        _ => return None,
    })
}

/// Non-attribute words used by the procedural templates and the assembly
/// template.
pub fn template_words() -> Vec<String> {
    let mut texts: Vec<String> = Vec::new();
    for s in ["circle", "square", "triangle", "cross"] {
        texts.extend(shape_phrases(s).into_iter().flatten().map(String::from));
    }
    for s in ["small", "large"] {
        texts.extend(size_phrases(s).into_iter().flatten().map(String::from));
    }
    texts.extend(hue_phrases("").iter().cloned());
    texts.push(assemble("", ""));
    let mut words: Vec<String> = texts.iter().flat_map(|t| t.split_whitespace().map(String::from)).collect();
    words.sort();
    words.dedup();
    words
}

/// The closed-vocabulary tokenizer for a vocab: attribute values plus
/// template words.
pub fn default_tokenizer(vocab: &AttributeVocab) -> Tokenizer {
    Tokenizer::new(vocab.words().into_iter().chain(template_words()))
}

/// Ten template phrases describing `category`. Axes whose value is shared
/// by the fewest other categories come first; within an axis, phrases keep
/// template order.
pub fn retrieve_concepts_procedural(category: &CategorySpec, all: &[CategorySpec]) -> Result<Vec<String>> {
    let value = |axis: &str| {
        category.attr(axis).ok_or_else(|| Error::arg(format!("{:?} lacks attribute {axis}", category.name)))
    };
    let (shape, hue, size) = (value("shape")?, value("hue")?, value("size")?);
    let shape_p = shape_phrases(shape).ok_or_else(|| Error::arg(format!("no templates for shape {shape:?}")))?;
    let size_p = size_phrases(size).ok_or_else(|| Error::arg(format!("no templates for size {size:?}")))?;
    let mut groups: Vec<(usize, usize, Vec<String>)> = vec![
        (0, 0, shape_p.iter().map(|s| s.to_string()).collect()),
        (1, 0, hue_phrases(hue).to_vec()),
        (2, 0, size_p.iter().map(|s| s.to_string()).collect()),
    ];
    for (axis_pos, shared, _) in groups.iter_mut() {
        let axis = ["shape", "hue", "size"][*axis_pos];
        *shared = all.iter().filter(|c| c.id != category.id && c.attr(axis) == category.attr(axis)).count();
    }
    groups.sort_by_key(|(pos, shared, _)| (*shared, *pos));
    Ok(groups.into_iter().flat_map(|(_, _, p)| p).collect())
}

/// The retrieval prompt for one class name.
pub fn llm_prompt(class_name: &str) -> String {
    const TEMPLATE: &str = "You are an expert in computer vision and image analysis. Here is the task: <task>I want to use some visual descriptions to identify different categories in ImageNet dataset. Please first consider whether there exist categories with similar appearance to {$class_name}. Then please give 10 short descriptions describing the appearance features that the {$class_name} has and can be used to distinguish it from other classes. The phrases should only focus on visual appearance of body parts or components instead of functioning. Each phrase should be detailed but also shorter than 128 characters. Each phrase starts with non-capitalized characters.</task> Give the answer in the form of <answer>[\"$class_name\", [\"phrase1\", \"phrase2\", \"phrase3\", \"phrase4\", \"phrase5\", \"phrase6\", \"phrase7\", \"phrase8\", \"phrase9\", \"phase10\"]]</answer>.";
    TEMPLATE.replace("{$class_name}", class_name)
}

fn format_err(msg: impl Into<String>, raw: &str) -> Error {
    Error::Format { msg: msg.into(), raw: raw.to_string() }
}

/// Extracts `(name, phrases)` from text containing
/// `<answer>["name", ["p1", ...]]</answer>`.
pub fn parse_answer(text: &str) -> Result<(String, Vec<String>)> {
    let start = text.find("<answer>").ok_or_else(|| format_err("missing <answer> tag", text))?;
    let body = &text[start + "<answer>".len()..];
    let end = body.find("</answer>").ok_or_else(|| format_err("missing </answer> tag", text))?;
    let inner: String = body[..end]
        .chars()
        .map(|c| match c {
            '\u{201c}' | '\u{201d}' => '"',
            c => c,
        })
        .collect();
    let v: serde_json::Value =
        serde_json::from_str(inner.trim()).map_err(|e| format_err(format!("answer is not JSON: {e}"), text))?;
    let arr =
        v.as_array().filter(|a| a.len() == 2).ok_or_else(|| format_err("answer must be [name, [phrases]]", text))?;
    let name = arr[0].as_str().ok_or_else(|| format_err("answer name is not a string", text))?.to_string();
    let list = arr[1].as_array().ok_or_else(|| format_err("answer phrases are not a list", text))?;
    let mut phrases = Vec::with_capacity(list.len());
    for p in list {
        let s = p.as_str().ok_or_else(|| format_err("answer phrase is not a string", text))?.trim();
        if s.is_empty() {
            return Err(format_err("empty phrase in answer", text));
        }
        phrases.push(s.to_string());
    }
    if phrases.is_empty() {
        return Err(format_err("answer has no phrases", text));
    }
    Ok((name, phrases))
}

/// Pulls the assistant message out of a chat-completion response body.
pub fn completion_content(body: &str) -> Result<String> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| format_err(format!("response is not JSON: {e}"), body))?;
    v["choices"][0]["message"]["content"]
        .as_str()
        .map(String::from)
        .ok_or_else(|| format_err("response lacks choices[0].message.content", body))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: f64,
    pub cache_dir: PathBuf,
    pub retries: u32,
    pub max_concurrency: usize,
    pub phrases: usize,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4".into(),
            token_env: "CONCEPTDIFF_LLM_TOKEN".into(),
            timeout_secs: 60.0,
            cache_dir: PathBuf::from("llm_cache"),
            retries: 3,
            max_concurrency: 4,
            phrases: DEFAULT_RETRIEVE,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config(format!("LLM timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.max_concurrency == 0 || self.phrases == 0 {
            return Err(Error::Config("LLM concurrency and phrase count must be positive".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    category: String,
    model: String,
    prompt: String,
    response: String,
}

pub fn cache_path(cfg: &LlmEndpointConfig, category: &str) -> PathBuf {
    cfg.cache_dir.join(format!("{}__{}.json", slug(category), slug(&cfg.model)))
}

fn post_once(cfg: &LlmEndpointConfig, prompt: &str) -> Result<String> {
    let token = std::env::var(&cfg.token_env).ok();
    let agent: ureq::Agent =
        ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs))).build().into();
    let body = serde_json::json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": prompt}],
    });
    let mut req = agent.post(&cfg.url()).header("Content-Type", "application/json");
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    let resp = req.send(serde_json::to_vec(&body)?).map_err(|e| Error::Transport(e.to_string()))?;
    resp.into_body().read_to_string().map_err(|e| Error::Transport(e.to_string()))
}

/// Sends the retrieval prompt with exponential-backoff retries on
/// transport errors, returning the raw response body.
pub fn request_completion(cfg: &LlmEndpointConfig, prompt: &str) -> Result<String> {
    cfg.validate()?;
    let mut last = None;
    for attempt in 0..=cfg.retries {
        if attempt > 0 {
            std::thread::sleep(Duration::from_millis(100 << (attempt - 1).min(6)));
        }
        match post_once(cfg, prompt) {
            Ok(body) => return Ok(body),
            Err(e @ Error::Transport(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Retrieves phrases for one category through the endpoint, replaying the
/// on-disk cache when a response for `(category, model)` is present.
pub fn retrieve_concepts_llm(category: &str, cfg: &LlmEndpointConfig) -> Result<Vec<String>> {
    cfg.validate()?;
    let path = cache_path(cfg, category);
    let raw = if path.exists() {
        let entry: CacheEntry = serde_json::from_slice(&fs::read(&path)?)
            .map_err(|e| Error::Corruption(format!("LLM cache {}: {e}", path.display())))?;
        entry.response
    } else {
        let prompt = llm_prompt(category);
        let response = request_completion(cfg, &prompt)?;
        fs::create_dir_all(&cfg.cache_dir)?;
        let entry = CacheEntry { category: category.into(), model: cfg.model.clone(), prompt, response };
        fs::write(&path, serde_json::to_vec_pretty(&entry)?)?;
        entry.response
    };
    let content = completion_content(&raw)?;
    let (_, mut phrases) = parse_answer(&content)?;
    if phrases.len() < cfg.phrases {
        return Err(format_err(format!("expected {} phrases, got {}", cfg.phrases, phrases.len()), &content));
    }
    phrases.truncate(cfg.phrases);
    Ok(phrases)
}

/// Retrieves every category with at most `max_concurrency` requests in
/// flight. Results keep the input order.
pub fn retrieve_all_llm(categories: &[String], cfg: &LlmEndpointConfig) -> Result<Vec<Vec<String>>> {
    cfg.validate()?;
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<Vec<String>>>>> = Mutex::new((0..categories.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..cfg.max_concurrency.min(categories.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue lock");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= categories.len() {
                    break;
                }
                let r = retrieve_concepts_llm(&categories[i], cfg);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every index visited")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankCategory {
    pub id: usize,
    pub name: String,
    pub retrieved: Vec<String>,
    pub scores: Vec<f64>,
    pub selected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptBank {
    pub categories: Vec<BankCategory>,
    pub similarity: Vec<Vec<f64>>,
    pub embedder_checksum: String,
    /// Where the phrases came from: `procedural` or `llm:<model>`.
    #[serde(default)]
    pub source: String,
    /// Which encoder produced `similarity`.
    #[serde(default)]
    pub similarity_encoder: String,
}

impl ConceptBank {
    /// A bank with retrieved phrases only; scores, selections and
    /// similarities are filled by [`select_valid_concepts`] and
    /// [`category_similarity`].
    pub fn from_retrieved(names: &[String], retrieved: Vec<Vec<String>>, source: &str) -> Result<Self> {
        if names.len() != retrieved.len() {
            return Err(Error::arg("one retrieved list per category is required"));
        }
        let categories = names
            .iter()
            .zip(retrieved)
            .enumerate()
            .map(|(id, (name, r))| BankCategory {
                id,
                name: name.clone(),
                retrieved: r,
                scores: vec![],
                selected: vec![],
            })
            .collect();
        Ok(ConceptBank {
            categories,
            similarity: vec![],
            embedder_checksum: String::new(),
            source: source.into(),
            similarity_encoder: String::new(),
        })
    }

    pub fn category(&self, id: usize) -> Result<&BankCategory> {
        self.categories.get(id).ok_or_else(|| Error::arg(format!("category {id} is not in the concept bank")))
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn checksum(&self) -> Result<String> {
        Ok(crc_hex(&serde_json::to_vec(self)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Parses and validates a bank file.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let b: ConceptBank =
            serde_json::from_slice(bytes).map_err(|e| Error::Corruption(format!("concept bank: {e}")))?;
        b.validate().map_err(|e| Error::Corruption(format!("concept bank: {e}")))?;
        Ok(b)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.categories.len();
        for (i, c) in self.categories.iter().enumerate() {
            if c.id != i {
                return Err(Error::arg(format!("category ids must be 0..n in order, found {} at {i}", c.id)));
            }
            if !c.scores.is_empty() && c.scores.len() != c.retrieved.len() {
                return Err(Error::arg(format!(
                    "{}: {} scores for {} phrases",
                    c.name,
                    c.scores.len(),
                    c.retrieved.len()
                )));
            }
            if let Some(s) = c.selected.iter().find(|s| !c.retrieved.contains(s)) {
                return Err(Error::arg(format!("{}: selected phrase {s:?} was never retrieved", c.name)));
            }
        }
        if !self.similarity.is_empty() {
            if self.similarity.len() != n || self.similarity.iter().any(|r| r.len() != n) {
                return Err(Error::arg("similarity matrix must be n x n"));
            }
            for i in 0..n {
                if self.similarity[i][i] != 1.0 {
                    return Err(Error::arg("similarity diagonal must be 1"));
                }
                for j in 0..n {
                    let v = self.similarity[i][j];
                    if !(-1.0..=1.0).contains(&v) || v.to_bits() != self.similarity[j][i].to_bits() {
                        return Err(Error::arg("similarity must be symmetric with entries in [-1, 1]"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Indices of the `k` highest scores, ties going to the earlier index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Scores every retrieved phrase of every category against that category's
/// real images (`images_by_class[i]: [n_i, C, H, W]`) and keeps the top `k`.
pub fn select_valid_concepts(
    bank: &ConceptBank,
    e: &JointEmbedder,
    images_by_class: &[Tensor],
    k: usize,
) -> Result<ConceptBank> {
    if k < 1 {
        return Err(Error::arg("must select at least one concept per category"));
    }
    if images_by_class.len() != bank.categories.len() {
        return Err(Error::arg(format!(
            "{} image sets for {} categories",
            images_by_class.len(),
            bank.categories.len()
        )));
    }
    let mut out = bank.clone();
    for (c, imgs) in out.categories.iter_mut().zip(images_by_class) {
        if c.retrieved.is_empty() {
            return Err(Error::arg(format!("{} has no retrieved phrases", c.name)));
        }
        let ie = e.embed_images(imgs)?;
        let phrases = c.retrieved.iter().map(|t| e.phrase(t)).collect::<Result<Vec<_>>>()?;
        let pe = e.embed_phrases(&phrases)?;
        c.scores = (0..phrases.len())
            .map(|i| activation_from_embeddings(&ie, pe.row(i)).map(f64::from))
            .collect::<Result<_>>()?;
        c.selected = top_k_indices(&c.scores, k).into_iter().map(|i| c.retrieved[i].clone()).collect();
    }
    out.embedder_checksum =
        crate::checkpoint::checksum(&crate::checkpoint::encode(&e.descriptor(), e.params().entries()));
    Ok(out)
}

/// Cosine similarity of category-name embeddings. The upper triangle is
/// computed and mirrored so the matrix is exactly symmetric.
pub fn category_similarity(e: &JointEmbedder, names: &[String]) -> Result<Vec<Vec<f64>>> {
    if names.len() < 2 {
        return Err(Error::arg("similarity needs at least two categories"));
    }
    let phrases = names.iter().map(|n| e.phrase(n)).collect::<Result<Vec<_>>>()?;
    let embs = e.embed_phrases(&phrases)?;
    let n = names.len();
    let mut s = vec![vec![1.0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = if names[i] == names[j] { 1.0 } else { cosine(embs.row(i), embs.row(j)) as f64 };
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    Ok(s)
}

/// Fills the similarity matrix from the concept encoder.
pub fn with_similarity(mut bank: ConceptBank, e: &JointEmbedder) -> Result<ConceptBank> {
    let names: Vec<String> = bank.categories.iter().map(|c| c.name.clone()).collect();
    bank.similarity = category_similarity(e, &names)?;
    bank.similarity_encoder = "concept-tower:category-name".into();
    Ok(bank)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum NegativeStrategy {
    Random,
    SimilarK(usize),
    Weighted,
}

impl fmt::Display for NegativeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NegativeStrategy::Random => write!(f, "random"),
            NegativeStrategy::SimilarK(k) => write!(f, "similar:{k}"),
            NegativeStrategy::Weighted => write!(f, "weighted"),
        }
    }
}

impl FromStr for NegativeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(NegativeStrategy::Random),
            "weighted" => Ok(NegativeStrategy::Weighted),
            other => {
                let k = other
                    .strip_prefix("similar:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::arg(format!("unknown negative strategy {other:?}")))?;
                if k == 0 {
                    return Err(Error::arg("similar:<k> needs k >= 1"));
                }
                Ok(NegativeStrategy::SimilarK(k))
            }
        }
    }
}

impl From<NegativeStrategy> for String {
    fn from(s: NegativeStrategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for NegativeStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeConcept {
    pub category: usize,
    pub concept: String,
}

impl NegativeConcept {
    /// The embedded text, assembled with the donor category's name.
    pub fn text(&self, bank: &ConceptBank) -> Result<String> {
        Ok(assemble(&bank.category(self.category)?.name, &self.concept))
    }
}

/// Donor categories and their draw probabilities for `target`.
pub fn donor_distribution(bank: &ConceptBank, target: usize, strategy: NegativeStrategy) -> Result<Vec<(usize, f64)>> {
    bank.category(target)?;
    let n = bank.categories.len();
    let eligible: Vec<usize> = (0..n).filter(|&j| j != target && !bank.categories[j].selected.is_empty()).collect();
    let needs_sim = !matches!(strategy, NegativeStrategy::Random);
    if needs_sim && bank.similarity.len() != n {
        return Err(Error::arg("this negative strategy needs the similarity matrix"));
    }
    let out: Vec<(usize, f64)> = match strategy {
        NegativeStrategy::Random => eligible.iter().map(|&j| (j, 1.0 / eligible.len() as f64)).collect(),
        NegativeStrategy::SimilarK(k) => {
            if k < 1 || k >= n {
                return Err(Error::arg(format!("similar:{k} needs 1 <= k < {n}")));
            }
            let row = &bank.similarity[target];
            let mut by_sim = eligible.clone();
            by_sim.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            by_sim.truncate(k);
            by_sim.iter().map(|&j| (j, 1.0 / by_sim.len() as f64)).collect()
        }
        NegativeStrategy::Weighted => {
            let row = &bank.similarity[target];
            let w: Vec<f64> = eligible.iter().map(|&j| row[j].max(WEIGHT_FLOOR)).collect();
            let total: f64 = w.iter().sum();
            eligible.iter().zip(w).map(|(&j, w)| (j, w / total)).collect()
        }
    };
    Ok(out)
}

/// Inverse-CDF draw from `(item, probability)` pairs.
pub fn draw_categorical(dist: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for &(j, p) in dist {
        acc += p;
        if u < acc {
            return j;
        }
    }
    dist.last().expect("non-empty distribution").0
}

/// `n` negative concepts for `target`, drawn with replacement.
pub fn sample_negative_concepts(
    bank: &ConceptBank,
    target: usize,
    n: usize,
    strategy: NegativeStrategy,
    rng: &mut impl Rng,
) -> Result<Vec<NegativeConcept>> {
    if n == 0 {
        bank.category(target)?;
        return Ok(vec![]);
    }
    let dist = donor_distribution(bank, target, strategy)?;
    if dist.is_empty() {
        return Err(Error::arg(format!("no eligible donor categories for negatives of category {target}")));
    }
    Ok((0..n)
        .map(|_| {
            let j = draw_categorical(&dist, rng);
            let sel = &bank.categories[j].selected;
            NegativeConcept { category: j, concept: sel[rng.random_range(0..sel.len())].clone() }
        })
        .collect())
}

/// Summary of a bank's per-category phrase counts, for logs.
pub fn describe(bank: &ConceptBank) -> BTreeMap<String, usize> {
    bank.categories.iter().map(|c| (c.name.clone(), c.selected.len())).collect()
}
