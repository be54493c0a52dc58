//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Trained models are cached under the target tmpdir keyed by their
//! configuration. Set `CONCEPTDIFF_FRESH=1` to retrain. Positional
//! arguments filter criteria by name.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use conceptdiff::checkpoint::{self, crc_hex};
use conceptdiff::classifier::{train_classifier, Classifier, ClassifierConfig, ClassifierTrainConfig};
use conceptdiff::conceptbank::{
    default_tokenizer, retrieve_concepts_procedural, sample_negative_concepts, select_valid_concepts, with_similarity,
    BankCategory, ConceptBank, NegativeStrategy, WEIGHT_FLOOR,
};
use conceptdiff::diffusion::{
    ddim_loop, ddim_pairs, estimate_x0, forward_step, initial_noise, q_sample, sample_unguided, train_denoiser,
    Denoiser, DenoiserTrainConfig, NoiseSchedule,
};
use conceptdiff::embedder::{train_embedder, EmbedderConfig, EmbedderTrainConfig, JointEmbedder, Tokenizer};
use conceptdiff::evalharness::{
    build_surrogate, encode_ppm, export_grid, read_results, run_cell, run_experiment, EvalReport, ExperimentConfig,
    Method, Models,
};
use conceptdiff::guidance::{
    contrastive_from_embedding, contrastive_losses, draw_negatives, generate_informed, objective_gradcheck,
    paired_step_estimates, GuidanceConfig, GuidanceModels, MatchContext, Objective, PsiTarget,
};
use conceptdiff::rng;
use conceptdiff::synthdata::{build_dataset, default_categories, generate, AttributeVocab, RenderConfig, Split};
use conceptdiff::{Result, Tensor};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

struct Fixture {
    train: Split,
    test: Split,
    schedule: NoiseSchedule,
    denoiser: Denoiser,
    embedder: JointEmbedder,
    bank: ConceptBank,
    build_seconds: f64,
}

impl Fixture {
    fn models(&self) -> Models<'_> {
        Models {
            real: &self.train,
            classes: CLASSES,
            denoiser: Some(&self.denoiser),
            schedule: &self.schedule,
            embedder: Some(&self.embedder),
            guide_classifier: None,
        }
    }

    fn guidance(&self) -> GuidanceModels<'_> {
        GuidanceModels { embedder: Some(&self.embedder), classifier: None }
    }
}

const CLASSES: usize = 8;
const PER_CLASS: usize = 500;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

fn cached<T>(path: &Path, load: impl Fn(&Path) -> Result<T>, train: impl FnOnce() -> Result<T>) -> Result<T> {
    if std::env::var_os("CONCEPTDIFF_FRESH").is_none() && path.exists() {
        if let Ok(v) = load(path) {
            return Ok(v);
        }
    }
    train()
}

fn build_fixture() -> Result<Fixture> {
    let start = Instant::now();
    let cats = default_categories();
    let vocab = AttributeVocab::default();
    let (train, test, _) = generate(&cats, &vocab, &RenderConfig::default(), PER_CLASS, 0)?;
    let schedule = NoiseSchedule::default();
    let dcfg = DenoiserTrainConfig::default();
    let ecfg = EmbedderTrainConfig::default();
    let data_crc = crc_hex(&train.images.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>());
    let key = crc_hex(serde_json::json!({"d": dcfg, "e": ecfg, "data": data_crc}).to_string().as_bytes());
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-models").join(key);
    fs::create_dir_all(&dir)?;

    let den_path = dir.join("denoiser.ckpt");
    let denoiser = cached(
        &den_path,
        |p| Denoiser::load(p).map(|(m, _)| m),
        || {
            let (m, _) = train_denoiser(&train, CLASSES, &schedule, &dcfg)?;
            m.save(&den_path, &schedule)?;
            Ok(m)
        },
    )?;
    let names: Vec<String> = cats.iter().map(|c| c.name.clone()).collect();
    let retrieved: Vec<Vec<String>> =
        cats.iter().map(|c| retrieve_concepts_procedural(c, &cats)).collect::<Result<_>>()?;
    let emb_path = dir.join("embedder.ckpt");
    let embedder = cached(&emb_path, JointEmbedder::load, || {
        let (e, _) = train_embedder(&train, &names, &retrieved, default_tokenizer(&vocab), &schedule, &ecfg)?;
        e.save(&emb_path)?;
        Ok(e)
    })?;
    let by_class: Vec<Tensor> = train.indices_by_class(CLASSES).iter().map(|i| train.batch(i)).collect();
    let bank = ConceptBank::from_retrieved(&names, retrieved, "procedural")?;
    let bank = with_similarity(select_valid_concepts(&bank, &embedder, &by_class, 5)?, &embedder)?;
    Ok(Fixture { train, test, schedule, denoiser, embedder, bank, build_seconds: start.elapsed().as_secs_f64() })
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> Result<&'static Fixture> {
    if let Some(f) = FIXTURE.get() {
        return Ok(f);
    }
    let f = build_fixture()?;
    println!("fixture ready in {:.1}s", f.build_seconds);
    Ok(FIXTURE.get_or_init(|| f))
}

fn unit_vec(r: &mut impl Rng, d: usize) -> Vec<f32> {
    let v = rng::normal_vec(r, d);
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    v.iter().map(|x| (*x as f64 / n) as f32).collect()
}

// 1. Reverse-mode versus finite-difference gradients of both matching
// objectives through the image tower.
fn gradient_oracle() -> Result<Outcome> {
    let start = Instant::now();
    let (cos, con) = objective_gradcheck([3, 8, 8], 20, 1)?;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        cos <= 1e-3 && con <= 1e-3 && secs < 10.0,
        format!("20 states, input dim 192: cosine {cos:.2e}, contrastive {con:.2e}, {secs:.2}s"),
    )
}

// 2. Chained one-step noising against the closed-form marginal.
fn marginal_consistency() -> Result<Outcome> {
    let start = Instant::now();
    let s = NoiseSchedule::default();
    let n = 10_000;
    let mut r = rng::stream(2, &[]);
    let x0 = rng::uniform_tensor(&mut r, &[n], -1.0, 1.0);
    let m0 = x0.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
    let v0 = x0.data().iter().map(|&v| (v as f64 - m0).powi(2)).sum::<f64>() / n as f64;
    let mut x = x0.clone();
    let mut worst_mean = 0.0f64;
    let mut ratios = Vec::new();
    for t in 1..=s.t_max() {
        let eps = rng::normal_tensor(&mut r, &[n]);
        x = forward_step(&x, t, &eps, &s)?;
        if [10, 100, 500, 1000].contains(&t) {
            let ab = s.alpha_bar(t);
            let mean = x.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = x.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            worst_mean = worst_mean.max((mean - ab.sqrt() * m0).abs());
            ratios.push((t, var / (ab * v0 + 1.0 - ab)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ratio_ok = ratios.iter().all(|&(_, q)| (0.95..=1.05).contains(&q));
    let shown: Vec<String> = ratios.iter().map(|(t, q)| format!("t={t}:{q:.3}")).collect();
    outcome(
        worst_mean <= 0.02 && ratio_ok && secs < 30.0,
        format!("max |mean dev| {worst_mean:.4}, var ratios [{}], {secs:.2}s", shown.join(" ")),
    )
}

// 3. Clean-sample recovery from the true noise.
fn exact_inversion() -> Result<Outcome> {
    let s = NoiseSchedule::default();
    let mut r = rng::stream(3, &[]);
    let mut worst = 0.0f32;
    let mut failing = Vec::new();
    for _ in 0..100 {
        let t = r.random_range(1..=s.t_max());
        let x0 = rng::uniform_tensor(&mut r, &[3, 16, 16], -1.0, 1.0);
        let eps = rng::normal_tensor(&mut r, &[3, 16, 16]);
        let xt = q_sample(&x0, t, &eps, &s)?;
        let back = estimate_x0(&xt, t, &eps, &s, false)?;
        let err = back.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        worst = worst.max(err);
        if err > 1e-5 {
            failing.push(t);
        }
    }
    failing.sort();
    let detail = if failing.is_empty() {
        format!("100 pairs, max abs error {worst:.2e}")
    } else {
        format!(
            "100 pairs, max abs error {worst:.2e}; {} pairs above 1e-5, all at t >= {} (f32 rounding of x_t amplified by 1/sqrt(alpha_bar))",
            failing.len(),
            failing[0]
        )
    };
    outcome(failing.is_empty(), detail)
}

// 4. λ = 0 reproduces unguided trajectories bit for bit in every mode, and an
// empty negative set does too under the contrastive objective.
fn zero_lambda_transparency() -> Result<Outcome> {
    let f = fixture()?;
    let cls =
        Classifier::new(ClassifierConfig { noise_aware: true, ..ClassifierConfig::new([3, 16, 16], CLASSES) }, 0)?;
    let models = GuidanceModels { embedder: Some(&f.embedder), classifier: Some(&cls) };
    let mut checked = 0;
    let mut broken = Vec::new();
    for &c in &[0usize, 5] {
        let base = sample_unguided(&f.denoiser, &f.schedule, c, 2, 11, 50, true)?;
        for objective in Objective::ALL {
            let cfg = GuidanceConfig { objective, lambda: 0.0, ..Default::default() };
            let g = generate_informed(&f.denoiser, &f.schedule, models, Some(&f.bank), &cfg, c, 2, 11)?;
            checked += 1;
            if !g.images.bit_eq(&base) {
                broken.push(format!("{objective}@{c}"));
            }
        }
        let empty = GuidanceConfig { n_neg: 0, ..Default::default() };
        let g = generate_informed(&f.denoiser, &f.schedule, models, Some(&f.bank), &empty, c, 2, 11)?;
        checked += 1;
        if !g.images.bit_eq(&base) {
            broken.push(format!("empty-negatives@{c}"));
        }
    }
    outcome(broken.is_empty(), format!("{checked} 50-step runs compared, mismatches: {broken:?}"))
}

/// Fraction of paired single steps from sampled trajectory states in the
/// middle third where guidance strictly lowers the contrastive loss of x̂0.
fn descent_rate(f: &Fixture, cfg: &GuidanceConfig, trials: usize) -> Result<usize> {
    let pairs = ddim_pairs(&f.schedule, cfg.steps)?;
    let t_max = f.schedule.t_max();
    let mid: Vec<usize> =
        (0..pairs.len()).filter(|&i| 3 * pairs[i].t >= t_max && 3 * pairs[i].t <= 2 * t_max).collect();
    let mut r = rng::stream(5, &[]);
    let mut wins = 0;
    for trial in 0..trials {
        let c = trial % CLASSES;
        let i = mid[r.random_range(0..mid.len())];
        let noise = initial_noise(500, c, trial, &[3, 16, 16]).reshape(vec![1, 3, 16, 16])?;
        let x = ddim_loop(&f.denoiser, &f.schedule, noise, &[c], &pairs[..i], true, |_, _, _, e| Ok(e))?;
        let negs = draw_negatives(&f.bank, c, trial, None, cfg, 500)?;
        let ctx = [MatchContext::from_bank(&f.embedder, &f.bank, c, &negs)?];
        let (guided, plain) = paired_step_estimates(&f.denoiser, &f.schedule, f.guidance(), &ctx, &x, pairs[i].t, cfg)?;
        let lg = contrastive_losses(&ctx, &f.embedder, &guided, cfg.tau)?[0];
        let lu = contrastive_losses(&ctx, &f.embedder, &plain, cfg.tau)?[0];
        if lg < lu {
            wins += 1;
        }
    }
    Ok(wins)
}

// 5. Guided single steps descend the contrastive loss.
fn guidance_descent() -> Result<Outcome> {
    let f = fixture()?;
    let cfg = GuidanceConfig::default();
    let wins = descent_rate(f, &cfg, 100)?;
    let x0 = GuidanceConfig { psi_target: PsiTarget::EstimatedX0, ..cfg.clone() };
    let x0_wins = descent_rate(f, &x0, 100)?;
    let x0_small = descent_rate(f, &GuidanceConfig { lambda: 0.05, ..x0 }, 100)?;
    let small = descent_rate(f, &GuidanceConfig { lambda: 0.05, ..cfg.clone() }, 100)?;
    outcome(
        wins >= 90,
        format!(
            "lambda=1 psi=noisy: {wins}/100 strictly lower (reference: psi=noisy lambda=0.05 {small}/100, \
             psi=x0 lambda=1 {x0_wins}/100, psi=x0 lambda=0.05 {x0_small}/100)"
        ),
    )
}

/// Naive 64-bit contrastive loss with no max-shift.
fn naive_contrastive(z: &[f32], pos: &[Vec<f32>], neg: &[Vec<f32>], tau: f64) -> f64 {
    let s = |c: &[f32]| z.iter().zip(c).map(|(&a, &b)| a as f64 * b as f64).sum::<f64>() / tau;
    let neg_sum: f64 = neg.iter().map(|c| s(c).exp()).sum();
    pos.iter().map(|c| ((s(c).exp() + neg_sum).ln()) - s(c)).sum::<f64>() / pos.len() as f64
}

// 6. Contrastive-loss identities and agreement with a naive oracle.
fn contrastive_identities() -> Result<Outcome> {
    let z = Tensor::from_vec(vec![1.0, 0.0])?;
    let empty = MatchContext::new(0, 2, vec![0.6, 0.8], vec![])?;
    let zero = contrastive_from_embedding(&empty, &z, 0.07)?;
    let tie = MatchContext::new(0, 2, vec![0.6, 0.8], vec![0.6, -0.8])?;
    let ln2 = (contrastive_from_embedding(&tie, &z, 0.07)? as f64 - std::f64::consts::LN_2).abs();
    let mut r = rng::stream(6, &[]);
    let d = 32;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = r.random_range(1..=5);
        let n = r.random_range(0..=20);
        let pos: Vec<Vec<f32>> = (0..p).map(|_| unit_vec(&mut r, d)).collect();
        let neg: Vec<Vec<f32>> = (0..n).map(|_| unit_vec(&mut r, d)).collect();
        let zv = unit_vec(&mut r, d);
        let ctx = MatchContext::new(0, d, pos.concat(), neg.concat())?;
        let got = contrastive_from_embedding(&ctx, &Tensor::from_vec(zv.clone())?, 0.07)? as f64;
        worst = worst.max((got - naive_contrastive(&zv, &pos, &neg, 0.07)).abs());
    }
    outcome(
        zero == 0.0 && ln2 <= 1e-6 && worst <= 1e-5,
        format!("empty={zero}, |tie - ln2|={ln2:.1e}, max |lib - oracle| over 1000 contexts {worst:.1e}"),
    )
}

/// Brute-force selection: rank every phrase by counting those that beat it.
fn rank_oracle(scores: &[f64], k: usize) -> Vec<usize> {
    let rank =
        |i: usize| (0..scores.len()).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
    let mut out = Vec::new();
    for r in 0..k.min(scores.len()) {
        out.push((0..scores.len()).find(|&i| rank(i) == r).expect("ranks are a permutation"));
    }
    out
}

fn mean_cosine_oracle(e: &JointEmbedder, images: &Tensor, text: &str) -> Result<f64> {
    let ie = e.embed_images(images)?;
    let n = ie.shape()[0];
    let d = ie.shape()[1];
    let mean: Vec<f64> = (0..d).map(|j| (0..n).map(|i| ie.row(i)[j] as f64).sum::<f64>() / n as f64).collect();
    let pe = e.embed_text(text)?;
    let dot: f64 = mean.iter().zip(pe.data()).map(|(a, &b)| a * b as f64).sum();
    let na = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = pe.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    Ok(dot / (na * nb))
}

// 7. Validity selection against the brute-force rank oracle.
fn validity_selection() -> Result<Outcome> {
    let words = ["red", "blue", "round", "sharp", "edge", "tone", "with", "bright"];
    let phrases = ["red tone", "blue edge", "round edge", "sharp bright tone", "bright red", "with round blue"];
    let e = JointEmbedder::new(EmbedderConfig::new([3, 8, 8]), Tokenizer::new(words.map(String::from)), 7)?;
    let mut r = rng::stream(7, &[]);
    let (mut mismatches, mut tie_banks, mut worst_score) = (0, 0, 0.0f64);
    for b in 0..100 {
        let k_cats = r.random_range(2..=5);
        let names: Vec<String> = (0..k_cats).map(|i| format!("cat{i}")).collect();
        let retrieved: Vec<Vec<String>> = (0..k_cats)
            .map(|_| {
                (0..r.random_range(1..=12)).map(|_| phrases[r.random_range(0..phrases.len())].to_string()).collect()
            })
            .collect();
        let images: Vec<Tensor> = (0..k_cats)
            .map(|_| {
                let n = r.random_range(1..=4);
                rng::uniform_tensor(&mut r, &[n, 3, 8, 8], -1.0, 1.0)
            })
            .collect();
        let k = r.random_range(1..=7);
        let bank = ConceptBank::from_retrieved(&names, retrieved, "random")?;
        let got = select_valid_concepts(&bank, &e, &images, k)?;
        let mut had_tie = false;
        for (c, imgs) in got.categories.iter().zip(&images) {
            for (text, &s) in c.retrieved.iter().zip(&c.scores) {
                worst_score = worst_score.max((s - mean_cosine_oracle(&e, imgs, text)?).abs());
            }
            let distinct: BTreeSet<u64> = c.scores.iter().map(|s| s.to_bits()).collect();
            had_tie |= distinct.len() < c.scores.len();
            let want: Vec<String> = rank_oracle(&c.scores, k).into_iter().map(|i| c.retrieved[i].clone()).collect();
            if want != c.selected || c.selected.len() != k.min(c.retrieved.len()) {
                mismatches += 1;
                eprintln!("bank {b} category {}: want {want:?} got {:?}", c.name, c.selected);
            }
        }
        tie_banks += had_tie as usize;
    }
    outcome(
        mismatches == 0 && worst_score <= 1e-5,
        format!(
            "100 banks ({tie_banks} with tied scores), {mismatches} mismatches, max score deviation {worst_score:.1e}"
        ),
    )
}

fn sampling_bank(similarity: Vec<Vec<f64>>) -> ConceptBank {
    let n = similarity.len();
    ConceptBank {
        categories: (0..n)
            .map(|i| BankCategory {
                id: i,
                name: format!("c{i}"),
                retrieved: vec![format!("p{i}a"), format!("p{i}b")],
                scores: vec![0.0, 0.0],
                selected: vec![format!("p{i}a"), format!("p{i}b")],
            })
            .collect(),
        similarity,
        embedder_checksum: String::new(),
        source: "test".into(),
        similarity_encoder: "test".into(),
    }
}

/// L1 distance between empirical donor frequencies over 10⁵ draws and the
/// clamped, normalized similarity row.
fn weighted_l1(sim: Vec<Vec<f64>>, target: usize, seed: u64) -> Result<(f64, bool)> {
    let n = sim.len();
    let w: Vec<f64> = (0..n).map(|j| if j == target { 0.0 } else { sim[target][j].max(WEIGHT_FLOOR) }).collect();
    let total: f64 = w.iter().sum();
    let bank = sampling_bank(sim);
    let draws = 100_000;
    let negs = sample_negative_concepts(&bank, target, draws, NegativeStrategy::Weighted, &mut rng::stream(seed, &[]))?;
    let mut counts = vec![0usize; n];
    for ng in &negs {
        counts[ng.category] += 1;
    }
    let l1 = (0..n).map(|j| (counts[j] as f64 / draws as f64 - w[j] / total).abs()).sum();
    Ok((l1, counts[target] == 0))
}

// 8. Weighted negative sampling frequencies.
fn weighted_sampling() -> Result<Outcome> {
    let mut r = rng::stream(8, &[]);
    let mut results = Vec::new();
    for case in 0..5 {
        let n = r.random_range(3..=8);
        let mut sim = vec![vec![1.0; n]; n];
        for (i, j) in (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))) {
            let v = r.random_range(-1.0..1.0);
            sim[i][j] = v;
            sim[j][i] = v;
        }
        results.push((format!("random{case}"), weighted_l1(sim, r.random_range(0..n), 100 + case)?));
    }
    let uniform = vec![vec![0.4; 6]; 6];
    results.push(("uniform".into(), weighted_l1(uniform, 2, 200)?));
    let two = vec![vec![1.0, 0.9, 0.1], vec![0.9, 1.0, 0.5], vec![0.1, 0.5, 1.0]];
    results.push(("0.9/0.1".into(), weighted_l1(two, 0, 201)?));
    let pass = results.iter().all(|(_, (l1, clean))| *l1 <= 0.01 && *clean);
    let shown: Vec<String> = results.iter().map(|(name, (l1, _))| format!("{name}:{l1:.4}")).collect();
    outcome(pass, format!("L1 at 1e5 draws [{}], target never drawn", shown.join(" ")))
}

fn direction_config(id: &str, methods: Vec<Method>, ipc: usize) -> ExperimentConfig {
    ExperimentConfig {
        experiment_id: id.into(),
        method: methods,
        ipc: vec![ipc],
        seed: (0..5).collect(),
        ..Default::default()
    }
}

// 9. End-to-end: contrastive guidance beats unguided sampling at IPC 10.
fn end_to_end_direction() -> Result<Outcome> {
    let start = Instant::now();
    let f = fixture()?;
    let out = scratch("direction");
    let ipc10 =
        direction_config("ipc10", vec![Method::RandomReal, Method::Unguided, Method::Contrastive, Method::Cosine], 10);
    let r10 = run_experiment(&ipc10, f.models(), Some(&f.bank), &f.test, &out.join("ipc10"), 4)?;
    let ipc50 = direction_config("ipc50", vec![Method::Contrastive, Method::Cosine], 50);
    let r50 = run_experiment(&ipc50, f.models(), Some(&f.bank), &f.test, &out.join("ipc50"), 4)?;
    let total = start.elapsed().as_secs_f64() + if FIXTURE.get().is_some() { f.build_seconds } else { 0.0 };
    let m = |r: &EvalReport, method, ipc| r.mean_top1(method, ipc).unwrap_or(f64::NAN);
    let (real, none, con, cos) = (
        m(&r10, Method::RandomReal, 10),
        m(&r10, Method::Unguided, 10),
        m(&r10, Method::Contrastive, 10),
        m(&r10, Method::Cosine, 10),
    );
    let (con50, cos50) = (m(&r50, Method::Contrastive, 50), m(&r50, Method::Cosine, 50));
    let ipc50_note = if con50 >= cos50 { "holds" } else { "deviates (reported, not asserted)" };
    outcome(
        con >= none && total < 1800.0,
        format!(
            "IPC10 mean top1 over 5 seeds: contrastive {con:.4} vs unguided {none:.4} (cosine {cos:.4}, random real {real:.4}); \
             IPC50: contrastive {con50:.4} vs cosine {cos50:.4}, ordering {ipc50_note}; {total:.0}s including model training"
        ),
    )
}

fn file_bytes(p: &Path) -> Vec<u8> {
    fs::read(p).expect("artifact exists")
}

// 10. Every stage reruns bit-identically.
fn determinism() -> Result<Outcome> {
    let f = fixture()?;
    let dir = scratch("determinism");
    let mut checks: BTreeMap<&str, bool> = BTreeMap::new();
    let cats = default_categories();
    let vocab = AttributeVocab::default();
    let rc = RenderConfig::default();
    let (a, b) = (dir.join("data_a"), dir.join("data_b"));
    let ma = build_dataset(&a, &cats, &vocab, &rc, 20, 4)?;
    let mb = build_dataset(&b, &cats, &vocab, &rc, 20, 4)?;
    let files = ["manifest.json", "train.f32", "test.f32", "train.labels.u16", "test.labels.u16"];
    checks.insert("dataset", ma == mb && files.iter().all(|n| file_bytes(&a.join(n)) == file_bytes(&b.join(n))));

    let (small, _, _) = generate(&cats, &vocab, &rc, 12, 4)?;
    let s = &f.schedule;
    let dcfg = DenoiserTrainConfig { steps: 30, width: 8, ..Default::default() };
    let d1 = train_denoiser(&small, CLASSES, s, &dcfg)?.0.save(&dir.join("d1.ckpt"), s)?;
    let d2 = train_denoiser(&small, CLASSES, s, &dcfg)?.0.save(&dir.join("d2.ckpt"), s)?;
    checks.insert(
        "denoiser checkpoint",
        d1 == d2 && file_bytes(&dir.join("d1.ckpt")) == file_bytes(&dir.join("d2.ckpt")),
    );

    let names: Vec<String> = cats.iter().map(|c| c.name.clone()).collect();
    let retrieved: Vec<Vec<String>> =
        cats.iter().map(|c| retrieve_concepts_procedural(c, &cats)).collect::<Result<_>>()?;
    let ecfg = EmbedderTrainConfig { steps: 30, ..Default::default() };
    let emb = || train_embedder(&small, &names, &retrieved, default_tokenizer(&vocab), s, &ecfg).map(|(e, _)| e);
    let (e1, e2) = (emb()?, emb()?);
    let (c1, c2) = (e1.save(&dir.join("e1.ckpt"))?, e2.save(&dir.join("e2.ckpt"))?);
    checks.insert("embedder checkpoint", c1 == c2);

    let ccfg = ClassifierTrainConfig { epochs: 3, ..Default::default() };
    let cls = |noise: Option<&NoiseSchedule>| -> Result<String> {
        let c = train_classifier(&small, CLASSES, &ccfg, noise)?;
        Ok(checkpoint::checksum(&checkpoint::encode(&c.descriptor(), c.params().entries())))
    };
    checks.insert("classifier checkpoints", cls(None)? == cls(None)? && cls(Some(s))? == cls(Some(s))?);

    let by_class: Vec<Tensor> = small.indices_by_class(CLASSES).iter().map(|i| small.batch(i)).collect();
    let bank = |e: &JointEmbedder| -> Result<String> {
        let b = ConceptBank::from_retrieved(&names, retrieved.clone(), "procedural")?;
        with_similarity(select_valid_concepts(&b, e, &by_class, 5)?, e)?.checksum()
    };
    checks.insert("concept bank", bank(&e1)? == bank(&e2)?);

    let gcfg = GuidanceConfig { steps: 10, ..Default::default() };
    let surrogate = |m: Method, ipc: usize| build_surrogate(m, ipc, 3, f.models(), Some(&f.bank), &gcfg);
    let (r1, r2) = (surrogate(Method::RandomReal, 5)?, surrogate(Method::RandomReal, 5)?);
    let (g1, g2) = (surrogate(Method::Contrastive, 2)?, surrogate(Method::Contrastive, 2)?);
    checks.insert("surrogate sets", r1.checksum() == r2.checksum() && g1.checksum() == g2.checksum());

    export_grid(&g1.split.images, 2, &dir.join("g1.ppm"))?;
    export_grid(&g2.split.images, 2, &dir.join("g2.ppm"))?;
    checks.insert(
        "PPM grids",
        file_bytes(&dir.join("g1.ppm")) == file_bytes(&dir.join("g2.ppm"))
            && encode_ppm(&g1.split.images, 2)? == file_bytes(&dir.join("g1.ppm")),
    );

    let cfg = ExperimentConfig {
        experiment_id: "det".into(),
        method: vec![Method::Contrastive],
        ipc: vec![1],
        seed: vec![0],
        steps: 10,
        classifier: ClassifierTrainConfig { epochs: 5, ..Default::default() },
        ..Default::default()
    };
    let cell = &cfg.cells()?[0];
    let row = || run_cell(&cfg, cell, f.models(), Some(&f.bank), &f.test, None);
    let (w1, w2) = (row()?, row()?);
    checks.insert("evaluation rows", w1.top1 == w2.top1 && w1.config_crc == w2.config_crc);

    let bad: Vec<&str> = checks.iter().filter(|(_, ok)| !**ok).map(|(k, _)| *k).collect();
    outcome(bad.is_empty(), format!("{} stages checked, differing: {bad:?}", checks.len()))
}

// 11. Sweep CSVs cover every cell of the strategy, λ and n_neg axes.
fn sweep_fidelity() -> Result<Outcome> {
    let f = fixture()?;
    let out = scratch("sweeps");
    let base = ExperimentConfig {
        experiment_id: "sweep".into(),
        method: vec![Method::Contrastive],
        ipc: vec![1],
        seed: vec![0],
        steps: 10,
        classifier: ClassifierTrainConfig { epochs: 10, ..Default::default() },
        ..Default::default()
    };
    let sweeps = [
        (
            "strategy",
            ExperimentConfig { strategy: vec!["random".into(), "similar:3".into(), "weighted".into()], ..base.clone() },
        ),
        ("lambda", ExperimentConfig { lambda: vec![0.0, 0.5, 1.0, 2.0, 4.0], ..base.clone() }),
        ("n_neg", ExperimentConfig { n_neg: vec![0, 5, 10, 20], ..base.clone() }),
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for (axis, cfg) in &sweeps {
        let dir = out.join(axis);
        run_experiment(cfg, f.models(), Some(&f.bank), &f.test, &dir, 2)?;
        let rows = read_results(&dir.join("results.csv"))?;
        let want: BTreeSet<_> = cfg.cells()?.iter().map(|c| c.key()).collect();
        let got: BTreeSet<_> = rows.iter().map(|r| r.key()).collect();
        let sane = rows.iter().all(|r| (0.0..=1.0).contains(&r.top1) && r.experiment_id == "sweep");
        let complete = got == want && rows.len() == want.len() && sane;
        pass &= complete;
        notes.push(format!("{axis}: {}/{} cells", rows.len(), want.len()));
    }
    outcome(pass, notes.join(", "))
}

type Criterion = fn() -> Result<Outcome>;

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, Criterion); 11] = [
        ("1 gradient oracle", gradient_oracle),
        ("2 diffusion marginal consistency", marginal_consistency),
        ("3 exact inversion", exact_inversion),
        ("4 zero-lambda transparency", zero_lambda_transparency),
        ("5 guidance descent", guidance_descent),
        ("6 contrastive identities", contrastive_identities),
        ("7 validity selection", validity_selection),
        ("8 weighted negative sampling", weighted_sampling),
        ("9 end-to-end direction", end_to_end_direction),
        ("10 determinism", determinism),
        ("11 sweep-harness fidelity", sweep_fidelity),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} criterion {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
