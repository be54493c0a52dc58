//! Concept-matching objectives, the informed noise update and the guided
//! DDIM generation loop.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::conceptbank::{sample_negative_concepts, ConceptBank, NegativeConcept, NegativeStrategy};
use crate::diffusion::{ddim_loop, ddim_pairs, estimate_x0, initial_noise, Denoiser, NoiseSchedule};
use crate::embedder::{assemble, EmbedderConfig, JointEmbedder, Tokenizer};
use crate::error::{Error, Result};
use crate::grad::{finite_diff_grad, max_relative_error, value_and_grad, Graph, Real, Var, FD_STEP};
use crate::nn::label_index;
use crate::rng::{self, domain};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    None,
    Cosine,
    Contrastive,
    Classifier,
    /// Classifier plus contrastive directions.
    Combined,
}

impl Objective {
    pub const ALL: [Objective; 5] =
        [Objective::None, Objective::Cosine, Objective::Contrastive, Objective::Classifier, Objective::Combined];

    pub fn uses_concepts(self) -> bool {
        matches!(self, Objective::Cosine | Objective::Contrastive | Objective::Combined)
    }

    pub fn uses_classifier(self) -> bool {
        matches!(self, Objective::Classifier | Objective::Combined)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::None => "none",
            Objective::Cosine => "cosine",
            Objective::Contrastive => "contrastive",
            Objective::Classifier => "classifier",
            Objective::Combined => "combined",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.to_string() == s)
            .ok_or_else(|| Error::arg(format!("unknown objective {s:?}")))
    }
}

/// What the matching objective's image encoder sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PsiTarget {
    #[serde(rename = "noisy")]
    NoisyX,
    #[serde(rename = "x0")]
    EstimatedX0,
}

impl fmt::Display for PsiTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PsiTarget::NoisyX => "noisy",
            PsiTarget::EstimatedX0 => "x0",
        })
    }
}

impl FromStr for PsiTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy" => Ok(PsiTarget::NoisyX),
            "x0" => Ok(PsiTarget::EstimatedX0),
            _ => Err(Error::arg(format!("unknown psi target {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub lambda: f64,
    pub objective: Objective,
    pub tau: f64,
    pub n_neg: usize,
    pub strategy: NegativeStrategy,
    pub psi_target: PsiTarget,
    /// Relative weight of the classifier direction.
    pub classifier_weight: f64,
    /// Optional per-sample L2 cap on the guidance direction.
    pub clip: Option<f64>,
    /// Draw fresh negatives at every step instead of once per sample.
    pub resample_negatives: bool,
    pub steps: usize,
    pub clamp: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            lambda: 1.0,
            objective: Objective::Contrastive,
            tau: 0.07,
            n_neg: 10,
            strategy: NegativeStrategy::Weighted,
            psi_target: PsiTarget::NoisyX,
            classifier_weight: 0.05,
            clip: None,
            resample_negatives: false,
            steps: 50,
            clamp: true,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::arg(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::arg(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.classifier_weight >= 0.0 && self.classifier_weight.is_finite()) {
            return Err(Error::arg("classifier weight must be >= 0"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::arg(format!("clip must be > 0, got {c}")));
            }
        }
        if self.steps == 0 {
            return Err(Error::arg("step count must be positive"));
        }
        Ok(())
    }

    /// True when guidance cannot change the trajectory.
    pub fn is_transparent(&self) -> bool {
        self.objective == Objective::None || self.lambda == 0.0
    }
}

/// Positive and negative concept embeddings for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchContext {
    pub label: usize,
    dim: usize,
    positives: Vec<f32>,
    negatives: Vec<f32>,
}

fn check_unit(rows: &[f32], dim: usize, what: &str) -> Result<()> {
    for (i, r) in rows.chunks_exact(dim).enumerate() {
        let norm = r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::arg(format!("{what} embedding {i} has norm {norm}, expected 1")));
        }
    }
    Ok(())
}

impl MatchContext {
    /// `positives: [P, d]`, `negatives: [N, d]` as flat rows.
    pub fn new(label: usize, dim: usize, positives: Vec<f32>, negatives: Vec<f32>) -> Result<Self> {
        if dim == 0 || positives.is_empty() {
            return Err(Error::arg("a match context needs at least one positive concept"));
        }
        if !positives.len().is_multiple_of(dim) || !negatives.len().is_multiple_of(dim) {
            return Err(Error::arg(format!("embedding rows are not multiples of dimension {dim}")));
        }
        check_unit(&positives, dim, "positive")?;
        check_unit(&negatives, dim, "negative")?;
        Ok(MatchContext { label, dim, positives, negatives })
    }

    /// Embeds the category's selected concepts and the given negatives,
    /// each in the assembled "name with concept" form.
    pub fn from_bank(
        e: &JointEmbedder,
        bank: &ConceptBank,
        category: usize,
        negatives: &[NegativeConcept],
    ) -> Result<Self> {
        let c = bank.category(category)?;
        if c.selected.is_empty() {
            return Err(Error::arg(format!("category {} has no selected concepts", c.name)));
        }
        let pos: Vec<_> = c.selected.iter().map(|s| e.phrase(&assemble(&c.name, s))).collect::<Result<_>>()?;
        let positives = e.embed_phrases(&pos)?.into_vec();
        let negatives = if negatives.is_empty() {
            vec![]
        } else {
            let neg: Vec<_> = negatives.iter().map(|n| e.phrase(&n.text(bank)?)).collect::<Result<_>>()?;
            e.embed_phrases(&neg)?.into_vec()
        };
        MatchContext::new(category, e.dim(), positives, negatives)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_pos(&self) -> usize {
        self.positives.len() / self.dim
    }

    pub fn n_neg(&self) -> usize {
        self.negatives.len() / self.dim
    }
}

/// Per-sample scores `<z_b, anchor>` laid out `[B, P + N]`, positives first.
fn context_scores<S: Real>(g: &mut Graph<S>, z: Var, ctxs: &[MatchContext]) -> Result<Var> {
    let shape = g.shape(z).to_vec();
    let b = ctxs.len();
    if shape.len() != 2 || shape[0] != b {
        return Err(Error::arg(format!("{} contexts for embeddings {shape:?}", b)));
    }
    let (d, p, n) = (ctxs[0].dim, ctxs[0].n_pos(), ctxs[0].n_neg());
    if shape[1] != d {
        return Err(Error::arg(format!("embedding width {} but contexts have {d}", shape[1])));
    }
    if ctxs.iter().any(|c| c.dim != d || c.n_pos() != p || c.n_neg() != n) {
        return Err(Error::arg("contexts in one batch must share concept counts"));
    }
    let w = p + n;
    let mut anchors = Vec::with_capacity(b * w * d);
    for c in ctxs {
        anchors.extend_from_slice(&c.positives);
        anchors.extend_from_slice(&c.negatives);
    }
    let a = g.constant(Tensor::new(vec![b * w, d], anchors)?);
    let all = g.matmul_t(z, a)?;
    let idx: Vec<usize> = (0..b).flat_map(|i| (0..w).map(move |k| i * b * w + i * w + k)).collect();
    g.gather(all, idx, vec![b, w])
}

/// Row means of `x: [B, P]`, returned as `[B]`.
fn row_mean<S: Real>(g: &mut Graph<S>, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let ones = g.constant(Tensor::full(vec![shape[1], 1], 1.0 / shape[1] as f32));
    let m = g.matmul(x, ones)?;
    g.reshape(m, vec![shape[0]])
}

/// `-mean_i <z_b, c_i>` per sample, `[B]`.
pub fn cosine_objective<S: Real>(g: &mut Graph<S>, z: Var, ctxs: &[MatchContext]) -> Result<Var> {
    let s = context_scores(g, z, ctxs)?;
    let p = ctxs[0].n_pos();
    let b = ctxs.len();
    let w = g.shape(s)[1];
    let pos = g.gather(s, (0..b).flat_map(|i| (0..p).map(move |k| i * w + k)).collect(), vec![b, p])?;
    let m = row_mean(g, pos)?;
    g.scale(m, -1.0)
}

/// Contrastive loss from already temperature-scaled scores `[B, P + N]`
/// (positives first): `mean_i [lse(s_i, s_neg) - s_i]` per sample, `[B]`.
/// With no negatives the result is exactly zero.
pub fn contrastive_from_scores<S: Real>(g: &mut Graph<S>, scores: Var, p: usize) -> Result<Var> {
    let shape = g.shape(scores).to_vec();
    if shape.len() != 2 || p == 0 || p > shape[1] {
        return Err(Error::arg(format!("{p} positives in a score matrix {shape:?}")));
    }
    let (b, w) = (shape[0], shape[1]);
    let n = w - p;
    if n == 0 {
        return Ok(g.constant(Tensor::zeros(vec![b])));
    }
    let mut idx = Vec::with_capacity(b * p * (1 + n));
    for i in 0..b {
        for k in 0..p {
            idx.push(i * w + k);
            idx.extend((p..w).map(|j| i * w + j));
        }
    }
    let rows = g.gather(scores, idx, vec![b * p, 1 + n])?;
    let lse = g.logsumexp(rows)?;
    let pos = g.gather(scores, (0..b).flat_map(|i| (0..p).map(move |k| i * w + k)).collect(), vec![b * p])?;
    let d = g.sub(lse, pos)?;
    let d = g.reshape(d, vec![b, p])?;
    row_mean(g, d)
}

/// Contrastive loss per sample, `[B]`.
pub fn contrastive_objective<S: Real>(g: &mut Graph<S>, z: Var, ctxs: &[MatchContext], tau: f64) -> Result<Var> {
    let s = context_scores(g, z, ctxs)?;
    let s = g.scale(s, 1.0 / tau)?;
    contrastive_from_scores(g, s, ctxs[0].n_pos())
}

/// `log softmax(logits)[label]` per sample, `[B]`.
pub fn log_prob_from_logits<S: Real>(g: &mut Graph<S>, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::arg(format!("logits {shape:?} for {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= shape[1]) {
        return Err(Error::arg(format!("label {bad} out of range for {} classes", shape[1])));
    }
    let lse = g.logsumexp(logits)?;
    let picked = g.gather(logits, label_index(labels, shape[1]), vec![labels.len()])?;
    g.sub(picked, lse)
}

fn single(x: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    x.reshape(shape)
}

fn embedding_value<F>(z: &Tensor, f: F) -> Result<f32>
where
    F: FnOnce(&mut Graph<f32>, Var) -> Result<Var>,
{
    let mut g = Graph::<f32>::new();
    let v = g.constant(single(z)?);
    let out = f(&mut g, v)?;
    Ok(g.data(out)[0])
}

/// Cosine loss of a unit embedding `z: [d]`.
pub fn cosine_from_embedding(ctx: &MatchContext, z: &Tensor) -> Result<f32> {
    embedding_value(z, |g, v| cosine_objective(g, v, std::slice::from_ref(ctx)))
}

/// Contrastive loss of a unit embedding `z: [d]`.
pub fn contrastive_from_embedding(ctx: &MatchContext, z: &Tensor, tau: f64) -> Result<f32> {
    embedding_value(z, |g, v| contrastive_objective(g, v, std::slice::from_ref(ctx), tau))
}

/// Cosine loss of an image `x: [C, H, W]`.
pub fn cosine_loss(ctx: &MatchContext, e: &JointEmbedder, x: &Tensor) -> Result<f32> {
    cosine_from_embedding(ctx, &e.embed_image(x)?)
}

/// Contrastive loss of an image `x: [C, H, W]`.
pub fn contrastive_loss(ctx: &MatchContext, e: &JointEmbedder, x: &Tensor, tau: f64) -> Result<f32> {
    contrastive_from_embedding(ctx, &e.embed_image(x)?, tau)
}

/// Contrastive loss of each image in a batch against its own context.
pub fn contrastive_losses(ctxs: &[MatchContext], e: &JointEmbedder, x: &Tensor, tau: f64) -> Result<Vec<f32>> {
    let mut g = Graph::<f32>::new();
    let z = g.constant(e.embed_images(x)?);
    let out = contrastive_objective(&mut g, z, ctxs, tau)?;
    Ok(g.data(out).to_vec())
}

/// `log p(label | x, t)` from a noise-aware classifier, `x: [C, H, W]`.
pub fn classifier_log_prob(classifier: &Classifier, x: &Tensor, t: usize, label: usize) -> Result<f32> {
    let classes = classifier.config().classes;
    if label >= classes {
        return Err(Error::arg(format!("label {label} out of range for {classes} classes")));
    }
    let steps = [t as f32];
    let logits = classifier.logits(&single(x)?, Some(&steps))?;
    let mut g = Graph::<f32>::new();
    let l = g.constant(logits);
    let out = log_prob_from_logits(&mut g, l, &[label])?;
    Ok(g.data(out)[0])
}

/// A guidance gradient, tagged with how it maps to a direction.
#[derive(Debug, Clone, Copy)]
pub enum GuidanceGrad<'a> {
    /// Gradient of a loss; the direction is its negation.
    Loss(&'a Tensor),
    /// Gradient of a log-probability; used as is.
    LogProb(&'a Tensor),
}

/// `eps - lambda * sqrt(1 - ab_t) * g`, with `g` the guidance direction.
pub fn informed_epsilon(eps: &Tensor, grad: GuidanceGrad, lambda: f64, t: usize, s: &NoiseSchedule) -> Result<Tensor> {
    let (gt, sign) = match grad {
        GuidanceGrad::Loss(g) => (g, -1.0),
        GuidanceGrad::LogProb(g) => (g, 1.0),
    };
    if gt.shape() != eps.shape() {
        return Err(Error::arg(format!("gradient {:?} does not match noise {:?}", gt.shape(), eps.shape())));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::arg(format!("lambda must be >= 0, got {lambda}")));
    }
    if t > s.t_max() {
        return Err(Error::arg(format!("timestep {t} beyond T = {}", s.t_max())));
    }
    let c = lambda * (1.0 - s.alpha_bar(t)).sqrt() * sign;
    let data = eps.data().iter().zip(gt.data()).map(|(&e, &g)| (e as f64 - c * g as f64) as f32).collect();
    Tensor::new(eps.shape().to_vec(), data)
}

/// Models a guided run may draw on.
#[derive(Clone, Copy)]
pub struct GuidanceModels<'a> {
    pub embedder: Option<&'a JointEmbedder>,
    pub classifier: Option<&'a Classifier>,
}

/// The unscaled guidance direction at state `x: [B, C, H, W]` and the
/// per-sample objective values (the matching loss, or the negative
/// log-probability in classifier mode).
#[allow(clippy::too_many_arguments)]
pub fn guidance_direction(
    models: GuidanceModels,
    ctxs: &[MatchContext],
    x: &Tensor,
    eps: &Tensor,
    t: usize,
    s: &NoiseSchedule,
    cfg: &GuidanceConfig,
) -> Result<(Tensor, Vec<f32>)> {
    let b = x.shape()[0];
    let mut dir = vec![0.0f64; x.numel()];
    let mut values = vec![0.0f32; b];
    if cfg.objective.uses_concepts() {
        let e = models.embedder.ok_or_else(|| Error::arg("concept guidance needs an embedder"))?;
        let mut g = Graph::<f32>::new();
        let p = e.params().bind(&mut g, false);
        let xv = g.input(x.clone());
        let input = match cfg.psi_target {
            PsiTarget::NoisyX => xv,
            PsiTarget::EstimatedX0 => {
                let ab = s.alpha_bar(t);
                let shifted = g.constant(eps.map(|v| (-(1.0 - ab).sqrt() * v as f64) as f32)?);
                let sum = g.add(xv, shifted)?;
                g.scale(sum, 1.0 / ab.sqrt())?
            }
        };
        let z = e.image_forward(&mut g, &p, input)?;
        let per = if cfg.objective == Objective::Cosine {
            cosine_objective(&mut g, z, ctxs)?
        } else {
            contrastive_objective(&mut g, z, ctxs, cfg.tau)?
        };
        values.copy_from_slice(g.data(per));
        let total = g.sum(per)?;
        let grads = g.backward(total)?;
        if let Some(gx) = grads.get(xv) {
            for (d, v) in dir.iter_mut().zip(gx.data()) {
                *d -= *v as f64;
            }
        }
    }
    if cfg.objective.uses_classifier() {
        let c = models.classifier.ok_or_else(|| Error::arg("classifier guidance needs a classifier"))?;
        let labels: Vec<usize> = ctxs.iter().map(|c| c.label).collect();
        let steps = vec![t as f32; b];
        let mut g = Graph::<f32>::new();
        let p = c.params().bind(&mut g, false);
        let xv = g.input(x.clone());
        let logits = c.forward(&mut g, &p, xv, Some(&steps))?;
        let lp = log_prob_from_logits(&mut g, logits, &labels)?;
        if cfg.objective == Objective::Classifier {
            for (v, l) in values.iter_mut().zip(g.data(lp)) {
                *v = -l;
            }
        }
        let total = g.sum(lp)?;
        let grads = g.backward(total)?;
        let gx = grads.get_or_zeros(xv);
        for (d, v) in dir.iter_mut().zip(gx.data()) {
            *d += cfg.classifier_weight * *v as f64;
        }
    }
    if let Some(cap) = cfg.clip {
        let per = x.numel() / b;
        for row in dir.chunks_exact_mut(per) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > cap {
                row.iter_mut().for_each(|v| *v *= cap / norm);
            }
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), dir.into_iter().map(|v| v as f32).collect())?, values))
}

/// Output of [`generate_informed`].
#[derive(Debug, Clone)]
pub struct Generation {
    /// `[n, C, H, W]`.
    pub images: Tensor,
    /// Negatives drawn for each sample before its trajectory.
    pub negatives: Vec<Vec<NegativeConcept>>,
    /// Contrastive loss of each final image against its positives and
    /// negatives, when concepts are available.
    pub final_losses: Vec<f32>,
}

/// Negatives for sample `index`; `step` is `None` for the once-per-sample
/// draw.
pub fn draw_negatives(
    bank: &ConceptBank,
    category: usize,
    index: usize,
    step: Option<usize>,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<Vec<NegativeConcept>> {
    let mut key = vec![domain::NEGATIVES, category as u64, index as u64];
    if let Some(s) = step {
        key.push(s as u64 + 1);
    }
    sample_negative_concepts(bank, category, cfg.n_neg, cfg.strategy, &mut rng::stream(seed, &key))
}

/// Generates `n` samples of `category` with DDIM, refining every noise
/// prediction with the configured guidance. A transparent configuration
/// reproduces unguided sampling bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn generate_informed(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    models: GuidanceModels,
    bank: Option<&ConceptBank>,
    cfg: &GuidanceConfig,
    category: usize,
    n: usize,
    seed: u64,
) -> Result<Generation> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::arg("must generate at least one sample"));
    }
    if category >= denoiser.config().classes {
        return Err(Error::arg(format!("category {category} is not known to the denoiser")));
    }
    let needs_bank = cfg.objective.uses_concepts() && !cfg.is_transparent();
    if let Some(b) = bank {
        b.category(category)?;
    } else if needs_bank {
        return Err(Error::arg("concept guidance needs a concept bank"));
    }
    let shape = denoiser.config().image_shape;
    let noise: Vec<Tensor> = (0..n).map(|i| initial_noise(seed, category, i, &shape)).collect();
    let pairs = ddim_pairs(schedule, cfg.steps)?;
    let labels = vec![category; n];

    let negatives: Vec<Vec<NegativeConcept>> = match bank {
        Some(b) if !b.categories[category].selected.is_empty() => {
            (0..n).map(|i| draw_negatives(b, category, i, None, cfg, seed)).collect::<Result<_>>()?
        }
        _ => vec![vec![]; n],
    };
    let contexts = |negs: &[Vec<NegativeConcept>]| -> Result<Vec<MatchContext>> {
        let (e, b) = (models.embedder.expect("checked"), bank.expect("checked"));
        negs.iter().map(|ng| MatchContext::from_bank(e, b, category, ng)).collect()
    };
    let mut ctxs = if needs_bank {
        if models.embedder.is_none() {
            return Err(Error::arg("concept guidance needs an embedder"));
        }
        contexts(&negatives)?
    } else {
        vec![]
    };
    if cfg.objective.uses_classifier() && !cfg.is_transparent() {
        if models.classifier.is_none() {
            return Err(Error::arg("classifier guidance needs a classifier"));
        }
        if ctxs.is_empty() {
            ctxs = (0..n)
                .map(|_| MatchContext { label: category, dim: 1, positives: vec![1.0], negatives: vec![] })
                .collect();
        }
    }

    let images = if cfg.is_transparent() {
        ddim_loop(denoiser, schedule, Tensor::stack(&noise)?, &labels, &pairs, cfg.clamp, |_, _, _, e| Ok(e))?
    } else {
        ddim_loop(denoiser, schedule, Tensor::stack(&noise)?, &labels, &pairs, cfg.clamp, |i, pair, x, eps| {
            if cfg.resample_negatives && needs_bank {
                let b = bank.expect("checked");
                let negs: Vec<_> =
                    (0..n).map(|j| draw_negatives(b, category, j, Some(i), cfg, seed)).collect::<Result<_>>()?;
                ctxs = contexts(&negs)?;
            }
            let (dir, _) = guidance_direction(models, &ctxs, x, &eps, pair.t, schedule, cfg)?;
            informed_epsilon(&eps, GuidanceGrad::LogProb(&dir), cfg.lambda, pair.t, schedule)
        })?
    };

    let final_losses = match (models.embedder, bank) {
        (Some(e), Some(b)) if !b.categories[category].selected.is_empty() => {
            let cs =
                negatives.iter().map(|ng| MatchContext::from_bank(e, b, category, ng)).collect::<Result<Vec<_>>>()?;
            contrastive_losses(&cs, e, &images, cfg.tau)?
        }
        _ => vec![],
    };
    Ok(Generation { images, negatives, final_losses })
}

/// Single guided versus unguided DDIM step from a shared state. Returns the
/// two clean-sample estimates `(guided, unguided)`.
pub fn paired_step_estimates(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    models: GuidanceModels,
    ctxs: &[MatchContext],
    x: &Tensor,
    t: usize,
    cfg: &GuidanceConfig,
) -> Result<(Tensor, Tensor)> {
    let labels: Vec<usize> = ctxs.iter().map(|c| c.label).collect();
    let eps = denoiser.predict(x, t, &labels)?;
    let (dir, _) = guidance_direction(models, ctxs, x, &eps, t, schedule, cfg)?;
    let guided = informed_epsilon(&eps, GuidanceGrad::LogProb(&dir), cfg.lambda, t, schedule)?;
    Ok((estimate_x0(x, t, &guided, schedule, false)?, estimate_x0(x, t, &eps, schedule, false)?))
}

/// Worst reverse-mode versus finite-difference gradient error of the
/// `(cosine, contrastive)` objectives composed with a freshly initialized
/// image tower, over `states` random images of `shape`.
pub fn objective_gradcheck(shape: [usize; 3], states: usize, seed: u64) -> Result<(f32, f32)> {
    let e = JointEmbedder::new(EmbedderConfig::new(shape), Tokenizer::new(["concept".to_string()]), seed)?;
    let d = e.dim();
    let mut r = rng::stream(seed, &[domain::EVAL, 1]);
    let mut unit_rows = |n: usize| -> Vec<f32> {
        (0..n)
            .flat_map(|_| {
                let v = rng::normal_vec(&mut r, d);
                let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                v.into_iter().map(move |x| (x as f64 / norm) as f32)
            })
            .collect()
    };
    let ctx = vec![MatchContext::new(0, d, unit_rows(3), unit_rows(4))?];
    let mut worst = (0.0f32, 0.0f32);
    for _ in 0..states {
        let x = rng::uniform_tensor(&mut r, &[1, shape[0], shape[1], shape[2]], -1.0, 1.0);
        for cosine in [true, false] {
            let f = crate::diff_fn!([e: JointEmbedder, ctx: Vec<MatchContext>, cosine: bool] |g, x| {
                let p = e.params().bind(g, false);
                let z = e.image_forward(g, &p, x)?;
                let per = if *cosine { cosine_objective(g, z, ctx)? } else { contrastive_objective(g, z, ctx, 0.07)? };
                g.sum(per)
            });
            let (_, analytic) = value_and_grad(&f, &x)?;
            let numeric = finite_diff_grad(&f, &x, FD_STEP)?;
            let err = max_relative_error(&analytic, &numeric);
            let slot = if cosine { &mut worst.0 } else { &mut worst.1 };
            *slot = slot.max(err);
        }
    }
    Ok(worst)
}

/// Record written next to generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub category: usize,
    pub n: usize,
    pub config: GuidanceConfig,
    pub bank_checksum: Option<String>,
    pub denoiser_checksum: String,
    pub embedder_checksum: Option<String>,
    pub classifier_checksum: Option<String>,
    pub final_losses: Vec<f32>,
    pub images_checksum: String,
}
