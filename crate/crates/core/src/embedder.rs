//! Joint image/phrase embedding trained with symmetric InfoNCE.
//!
//! Both towers end in L2 normalization, so every embedding is a unit
//! d-vector and dot products are cosines.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::grad::{Graph, Real, Var};
use crate::nn::{cosine_lr, Adam, AdamConfig, Bound, Conv, Linear, ParamId, ParamSet};
use crate::rng::{self, domain};
use crate::synthdata::Split;
use crate::tensor::Tensor;

pub const OVERFLOW_BUCKETS: usize = 16;

/// Lowercasing whitespace tokenizer over a closed word list, with unknown
/// words hashed into a fixed number of overflow buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tokenizer {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Tokenizer {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        let mut out = Tokenizer { words: Vec::new(), index: HashMap::new() };
        for w in words {
            let w = normalize_word(&w);
            if !w.is_empty() && !out.index.contains_key(&w) {
                out.index.insert(w.clone(), out.words.len());
                out.words.push(w);
            }
        }
        out
    }

    fn rebuild_index(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }

    /// Total id space, including overflow buckets.
    pub fn size(&self) -> usize {
        self.words.len() + OVERFLOW_BUCKETS
    }

    pub fn known(&self) -> usize {
        self.words.len()
    }

    pub fn token(&self, word: &str) -> usize {
        match self.index.get(word) {
            Some(&i) => i,
            None => self.words.len() + (fnv1a(word) % OVERFLOW_BUCKETS as u64) as usize,
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let toks: Vec<usize> =
            text.split_whitespace().map(normalize_word).filter(|w| !w.is_empty()).map(|w| self.token(&w)).collect();
        if toks.is_empty() {
            return Err(Error::arg(format!("phrase {text:?} is empty after tokenization")));
        }
        Ok(toks)
    }
}

fn normalize_word(w: &str) -> String {
    w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

/// A phrase and its token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptPhrase {
    pub text: String,
    pub tokens: Vec<usize>,
}

/// The text fed to the concept tower for a category's concept.
pub fn assemble(name: &str, concept: &str) -> String {
    format!("{name} with {concept}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub image_shape: [usize; 3],
    pub dim: usize,
    pub token_dim: usize,
    pub hidden: usize,
    pub width: usize,
}

impl EmbedderConfig {
    pub fn new(image_shape: [usize; 3]) -> Self {
        EmbedderConfig { image_shape, dim: 32, token_dim: 32, hidden: 64, width: 16 }
    }
}

#[derive(Debug, Clone)]
pub struct JointEmbedder {
    cfg: EmbedderConfig,
    tokenizer: Tokenizer,
    params: ParamSet,
    c1: Conv,
    c2: Conv,
    c3: Conv,
    i_fc1: Linear,
    i_fc2: Linear,
    table: ParamId,
    t_fc1: Linear,
    t_fc2: Linear,
}

impl JointEmbedder {
    pub fn new(cfg: EmbedderConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        let [c, h, w] = cfg.image_shape;
        if h % 4 != 0 || w % 4 != 0 || cfg.dim == 0 || cfg.width == 0 {
            return Err(Error::arg(format!("unsupported embedder config {cfg:?}")));
        }
        let mut r = rng::stream(seed, &[domain::INIT, 2]);
        let mut ps = ParamSet::new();
        let (w1, w2) = (cfg.width, 2 * cfg.width);
        let c1 = Conv::new(&mut ps, "img.c1", c, w1, 3, 1, &mut r, 1.0);
        let c2 = Conv::new(&mut ps, "img.c2", w1, w2, 3, 2, &mut r, 1.0);
        let c3 = Conv::new(&mut ps, "img.c3", w2, w2, 3, 2, &mut r, 1.0);
        let flat = w2 * (h / 4) * (w / 4);
        let i_fc1 = Linear::new(&mut ps, "img.fc1", flat, cfg.hidden, &mut r);
        let i_fc2 = Linear::with_gain(&mut ps, "img.fc2", cfg.hidden, cfg.dim, 0.1, &mut r);
        let table = ps.add("txt.table", rng::normal_tensor(&mut r, &[tokenizer.size(), cfg.token_dim]));
        let t_fc1 = Linear::new(&mut ps, "txt.fc1", cfg.token_dim, cfg.hidden, &mut r);
        let t_fc2 = Linear::with_gain(&mut ps, "txt.fc2", cfg.hidden, cfg.dim, 0.1, &mut r);
        // Both towers start out pointing along one shared direction, so
        // every initial pairwise cosine is close to 1 and the contrastive
        // softmax starts near uniform.
        let shared = rng::normal_vec(&mut r, cfg.dim);
        let norm = shared.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt() as f32;
        let bias = Tensor::new(vec![cfg.dim], shared.iter().map(|v| v / norm).collect())?;
        let mut me = JointEmbedder { cfg, tokenizer, params: ps, c1, c2, c3, i_fc1, i_fc2, table, t_fc1, t_fc2 };
        for id in [me.i_fc2.bias_id(), me.t_fc2.bias_id()] {
            *me.params.get_mut(id) = bias.clone();
        }
        Ok(me)
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.cfg.dim
    }

    pub fn phrase(&self, text: &str) -> Result<ConceptPhrase> {
        Ok(ConceptPhrase { text: text.to_string(), tokens: self.tokenizer.tokenize(text)? })
    }

    /// `x: [B, C, H, W]` to unit embeddings `[B, d]`.
    pub fn image_forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1..] != self.cfg.image_shape {
            return Err(Error::arg(format!("embedder expects [B, {:?}] images, got {shape:?}", self.cfg.image_shape)));
        }
        let h = self.c1.forward(g, p, x)?;
        let h = g.relu(h)?;
        let h = self.c2.forward(g, p, h)?;
        let h = g.relu(h)?;
        let h = self.c3.forward(g, p, h)?;
        let h = g.relu(h)?;
        let n = g.shape(h)[1..].iter().product();
        let h = g.reshape(h, vec![shape[0], n])?;
        let h = self.i_fc1.forward(g, p, h)?;
        let h = g.relu(h)?;
        let z = self.i_fc2.forward(g, p, h)?;
        g.l2_normalize(z)
    }

    /// Mean-pooled token embeddings through the text MLP, `[B, d]`.
    pub fn concept_forward<S: Real>(&self, g: &mut Graph<S>, p: &Bound, phrases: &[&[usize]]) -> Result<Var> {
        let v = self.tokenizer.size();
        let mut pool = vec![0.0f32; phrases.len() * v];
        for (i, toks) in phrases.iter().enumerate() {
            if toks.is_empty() {
                return Err(Error::arg("empty token list"));
            }
            if let Some(&bad) = toks.iter().find(|&&t| t >= v) {
                return Err(Error::arg(format!("token id {bad} out of range")));
            }
            let w = 1.0 / toks.len() as f32;
            for &t in toks.iter() {
                pool[i * v + t] += w;
            }
        }
        let pool = g.constant(Tensor::new(vec![phrases.len(), v], pool)?);
        let h = g.matmul(pool, p[self.table])?;
        let h = self.t_fc1.forward(g, p, h)?;
        let h = g.relu(h)?;
        let z = self.t_fc2.forward(g, p, h)?;
        g.l2_normalize(z)
    }

    /// Unit embeddings of a batch `[B, C, H, W]`.
    pub fn embed_images(&self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(batch.clone());
        let z = self.image_forward(&mut g, &p, x)?;
        Ok(g.value(z))
    }

    pub fn embed_image(&self, image: &Tensor) -> Result<Tensor> {
        if image.shape() != self.cfg.image_shape {
            return Err(Error::arg(format!(
                "image shape {:?}, embedder trained on {:?}",
                image.shape(),
                self.cfg.image_shape
            )));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(image.shape());
        self.embed_images(&image.reshape(shape)?)?.reshape(vec![self.cfg.dim])
    }

    pub fn embed_phrases(&self, phrases: &[ConceptPhrase]) -> Result<Tensor> {
        let toks: Vec<&[usize]> = phrases.iter().map(|p| p.tokens.as_slice()).collect();
        let mut g = Graph::<f32>::new();
        let p = self.params.bind(&mut g, false);
        let z = self.concept_forward(&mut g, &p, &toks)?;
        Ok(g.value(z))
    }

    pub fn embed_concept(&self, phrase: &ConceptPhrase) -> Result<Tensor> {
        self.embed_phrases(std::slice::from_ref(phrase))?.reshape(vec![self.cfg.dim])
    }

    pub fn embed_text(&self, text: &str) -> Result<Tensor> {
        self.embed_concept(&self.phrase(text)?)
    }

    pub fn descriptor(&self) -> serde_json::Value {
        json!({"kind": "embedder", "config": self.cfg, "tokenizer": self.tokenizer})
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        checkpoint::save(path, &self.descriptor(), self.params.entries())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        checkpoint::expect_kind(&ck.descriptor, "embedder")?;
        let bad = |e: serde_json::Error| Error::Corruption(format!("embedder descriptor: {e}"));
        let cfg: EmbedderConfig = serde_json::from_value(ck.descriptor["config"].clone()).map_err(bad)?;
        let mut tok: Tokenizer = serde_json::from_value(ck.descriptor["tokenizer"].clone()).map_err(bad)?;
        tok.rebuild_index();
        let mut e = JointEmbedder::new(cfg, tok, 0).map_err(|e| Error::Corruption(e.to_string()))?;
        e.params.load(ck.tensors)?;
        Ok(e)
    }
}

/// Cosine between two vectors, computed in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    ((dot / (na * nb)).clamp(-1.0, 1.0)) as f32
}

/// Cosine between the mean of unit image embeddings `[n, d]` and a phrase
/// embedding. The mean is taken over rows in order-independent f64 sums.
pub fn activation_from_embeddings(image_embs: &Tensor, phrase_emb: &[f32]) -> Result<f32> {
    if image_embs.shape().len() != 2 || image_embs.shape()[0] == 0 {
        return Err(Error::arg("activation needs a non-empty [n, d] embedding matrix"));
    }
    let (n, d) = (image_embs.shape()[0], image_embs.shape()[1]);
    if phrase_emb.len() != d {
        return Err(Error::arg(format!("phrase embedding has {} dims, images {d}", phrase_emb.len())));
    }
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(image_embs.row(i)) {
            *m += v as f64;
        }
    }
    let mean: Vec<f32> = mean.iter().map(|m| (m / n as f64) as f32).collect();
    Ok(cosine(&mean, phrase_emb))
}

/// Activation score of `phrase` against a list of images.
pub fn activation_score(e: &JointEmbedder, images: &[Tensor], phrase: &ConceptPhrase) -> Result<f32> {
    if images.is_empty() {
        return Err(Error::arg("activation score needs at least one image"));
    }
    let embs = e.embed_images(&Tensor::stack(images)?)?;
    activation_from_embeddings(&embs, e.embed_concept(phrase)?.data())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderTrainConfig {
    pub steps: usize,
    /// Category-complete groups per step; each group is one InfoNCE batch
    /// holding one image per category.
    pub groups: usize,
    pub lr: f32,
    pub tau: f32,
    pub noise_prob: f64,
    /// Upper bound of noise-augmentation timesteps as a fraction of T.
    pub noise_max_frac: f64,
    pub seed: u64,
}

impl Default for EmbedderTrainConfig {
    fn default() -> Self {
        EmbedderTrainConfig {
            steps: 800,
            groups: 4,
            lr: 2e-3,
            tau: 0.07,
            noise_prob: 0.5,
            noise_max_frac: 0.6,
            seed: 0,
        }
    }
}

/// Symmetric InfoNCE over `img: [B, d]`, `txt: [B, d]` with matching rows.
pub fn info_nce<S: Real>(g: &mut Graph<S>, img: Var, txt: Var, tau: f32) -> Result<Var> {
    let b = g.shape(img)[0];
    let diag: Vec<usize> = (0..b).map(|i| i * b + i).collect();
    let mut total = None;
    for (a, c) in [(img, txt), (txt, img)] {
        let s = g.matmul_t(a, c)?;
        let s = g.scale(s, 1.0 / tau as f64)?;
        let lse = g.logsumexp(s)?;
        let pos = g.gather(s, diag.clone(), vec![b])?;
        let d = g.sub(lse, pos)?;
        let m = g.mean(d)?;
        total = Some(match total {
            None => m,
            Some(t) => g.add(t, m)?,
        });
    }
    g.scale(total.expect("two directions"), 0.5)
}

/// Texts a category trains against: its name, each concept on its own, and
/// each concept in the assembled "name with concept" form.
pub fn training_texts(name: &str, concepts: &[String]) -> Vec<String> {
    let mut out = vec![name.to_string()];
    out.extend(concepts.iter().cloned());
    out.extend(concepts.iter().map(|c| assemble(name, c)));
    out
}

/// Trains the joint embedder on real images and per-category texts.
/// Returns the model and the per-step loss curve.
pub fn train_embedder(
    split: &Split,
    names: &[String],
    concepts: &[Vec<String>],
    tokenizer: Tokenizer,
    schedule: &NoiseSchedule,
    cfg: &EmbedderTrainConfig,
) -> Result<(JointEmbedder, Vec<f32>)> {
    let k = names.len();
    if concepts.len() != k {
        return Err(Error::arg(format!("{} categories but {} concept lists", k, concepts.len())));
    }
    if let Some(i) = concepts.iter().position(|c| c.is_empty()) {
        return Err(Error::arg(format!("category {:?} has no phrases", names[i])));
    }
    let by_class = split.indices_by_class(k);
    if let Some(i) = by_class.iter().position(|v| v.is_empty()) {
        return Err(Error::arg(format!("category {:?} has no images", names[i])));
    }
    if k < 2 || cfg.groups == 0 || cfg.tau.is_nan() || cfg.tau <= 0.0 {
        return Err(Error::arg("embedder training needs >= 2 categories, groups > 0 and tau > 0"));
    }
    let shape: [usize; 3] = split
        .image_shape()
        .try_into()
        .map_err(|_| Error::arg(format!("expected [C, H, W] images, got {:?}", split.image_shape())))?;
    let mut e = JointEmbedder::new(EmbedderConfig::new(shape), tokenizer, cfg.seed)?;
    let texts: Vec<Vec<Vec<usize>>> = names
        .iter()
        .zip(concepts)
        .map(|(n, c)| training_texts(n, c).iter().map(|t| e.tokenizer.tokenize(t)).collect())
        .collect::<Result<_>>()?;
    let t_hi = ((schedule.t_max() as f64 * cfg.noise_max_frac).floor() as usize).max(1);
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..Default::default() }, &e.params);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut r = rng::stream(cfg.seed, &[domain::TRAIN, 2, step as u64]);
        let mut g = Graph::<f32>::new();
        let p = e.params.bind(&mut g, true);
        let mut total = None;
        for _ in 0..cfg.groups {
            let idx: Vec<usize> = by_class.iter().map(|v| v[r.random_range(0..v.len())]).collect();
            let mut imgs = split.batch(&idx);
            let per = imgs.numel() / k;
            for i in 0..k {
                if r.random_bool(cfg.noise_prob) {
                    let t = r.random_range(1..=t_hi);
                    let ab = schedule.alpha_bar(t);
                    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
                    let eps = rng::normal_vec(&mut r, per);
                    for (v, z) in imgs.data_mut()[i * per..(i + 1) * per].iter_mut().zip(eps) {
                        *v = (a * *v as f64 + b * z as f64) as f32;
                    }
                }
            }
            let toks: Vec<&[usize]> = texts.iter().map(|t| t[r.random_range(0..t.len())].as_slice()).collect();
            let x = g.constant(imgs);
            let zi = e.image_forward(&mut g, &p, x)?;
            let zt = e.concept_forward(&mut g, &p, &toks)?;
            let l = info_nce(&mut g, zi, zt, cfg.tau)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let loss = g.scale(total.expect("groups > 0"), 1.0 / cfg.groups as f64)?;
        curve.push(g.data(loss)[0]);
        let grads = g.backward(loss)?;
        opt.step(&mut e.params, &p, &grads, cosine_lr(cfg.lr, step, cfg.steps));
    }
    Ok((e, curve))
}

/// Mean same-category and mean cross-category activation of each
/// category's phrases against its own and other categories' images.
pub fn activation_margin(
    e: &JointEmbedder,
    images_by_class: &[Tensor],
    phrases_by_class: &[Vec<ConceptPhrase>],
) -> Result<(f32, f32)> {
    let embs: Vec<Tensor> = images_by_class.iter().map(|b| e.embed_images(b)).collect::<Result<_>>()?;
    let (mut same, mut cross, mut ns, mut nc) = (0.0f64, 0.0f64, 0usize, 0usize);
    for (j, phrases) in phrases_by_class.iter().enumerate() {
        let pe = e.embed_phrases(phrases)?;
        for (i, ie) in embs.iter().enumerate() {
            for q in 0..phrases.len() {
                let a = activation_from_embeddings(ie, pe.row(q))? as f64;
                if i == j {
                    same += a;
                    ns += 1;
                } else {
                    cross += a;
                    nc += 1;
                }
            }
        }
    }
    Ok(((same / ns.max(1) as f64) as f32, (cross / nc.max(1) as f64) as f32))
}
