use std::fs;
use std::path::Path;

use conceptdiff::checkpoint::{crc_hex, file_checksum};
use conceptdiff::classifier::{evaluate_top1, train_classifier, Classifier};
use conceptdiff::conceptbank::{
    default_tokenizer, retrieve_all_llm, retrieve_concepts_procedural, select_valid_concepts, with_similarity,
    ConceptBank,
};
use conceptdiff::diffusion::{denoising_loss, train_denoiser, Denoiser, NoiseSchedule};
use conceptdiff::embedder::{train_embedder, JointEmbedder};
use conceptdiff::evalharness::{check_inputs, export_grid, run_experiment, Method, ModelPaths, Models};
use conceptdiff::grad::oracle_suite;
use conceptdiff::guidance::{generate_informed, objective_gradcheck, GuidanceModels, Objective, RunManifest};
use conceptdiff::synthdata::{build_dataset, default_categories, load_dataset, Dataset};
use conceptdiff::{Error, Result, Tensor};

use crate::config::PipelineConfig;
use crate::{Command, Common, GuidanceFlags};

/// Gradient-oracle pass threshold.
const GRADCHECK_TOLERANCE: f32 = 1e-3;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::MakeData(c) => make_data(&resolve(&c, "make-data")?),
        Command::TrainDdpm(c) => train_ddpm(&resolve(&c, "train-ddpm")?),
        Command::TrainEmbed(c) => train_embed(&resolve(&c, "train-embed")?),
        Command::TrainCls(c) => train_cls(&resolve(&c, "train-cls")?),
        Command::ConceptsRetrieve { common, llm } => concepts_retrieve(&resolve(&common, "concepts-retrieve")?, llm),
        Command::ConceptsValidate(c) => concepts_validate(&resolve(&c, "concepts-validate")?),
        Command::Generate { common, guidance } => {
            let mut cfg = load(&common)?;
            apply_generate(&mut cfg, &guidance)?;
            cfg.echo("generate")?;
            generate(&cfg)
        }
        Command::Distill { common, guidance, jobs } => {
            let mut cfg = load(&common)?;
            apply_distill(&mut cfg, &guidance, common.seed)?;
            cfg.echo("distill")?;
            distill(&cfg, jobs)
        }
        Command::Gradcheck(c) => gradcheck(&resolve(&c, "gradcheck")?),
    }
}

fn load(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    cfg.propagate_seed();
    Ok(cfg)
}

fn resolve(common: &Common, command: &str) -> Result<PipelineConfig> {
    let cfg = load(common)?;
    cfg.echo(command)?;
    Ok(cfg)
}

fn single<T: Copy>(values: &[T], flag: &str) -> Result<Option<T>> {
    match values {
        [] => Ok(None),
        [v] => Ok(Some(*v)),
        _ => Err(Error::Argument(format!("--{flag} takes a single value here"))),
    }
}

fn apply_generate(cfg: &mut PipelineConfig, f: &GuidanceFlags) -> Result<()> {
    let g = &mut cfg.generate.guidance;
    if let Some(v) = single(&f.lambda, "lambda")? {
        g.lambda = v;
    }
    if let Some(v) = single(&f.objective, "objective")? {
        g.objective = v;
    }
    if let Some(v) = single(&f.n_neg, "n-neg")? {
        g.n_neg = v;
    }
    if let Some(v) = single(&f.strategy, "strategy")? {
        g.strategy = v;
    }
    if let Some(v) = f.steps {
        g.steps = v;
    }
    if let Some(v) = f.psi_target {
        g.psi_target = v;
    }
    if let Some(v) = single(&f.ipc, "ipc")? {
        cfg.generate.n = v;
    }
    g.validate()
}

fn method_for(o: Objective) -> Method {
    match o {
        Objective::None => Method::Unguided,
        Objective::Cosine => Method::Cosine,
        Objective::Contrastive => Method::Contrastive,
        Objective::Classifier => Method::Classifier,
        Objective::Combined => Method::Combined,
    }
}

fn apply_distill(cfg: &mut PipelineConfig, f: &GuidanceFlags, seed: Option<u64>) -> Result<()> {
    let d = &mut cfg.distill;
    if !f.lambda.is_empty() {
        d.lambda = f.lambda.clone();
    }
    if !f.objective.is_empty() {
        d.method = f.objective.iter().map(|&o| method_for(o)).collect();
    }
    if !f.n_neg.is_empty() {
        d.n_neg = f.n_neg.clone();
    }
    if !f.strategy.is_empty() {
        d.strategy = f.strategy.iter().map(|s| s.to_string()).collect();
    }
    if !f.ipc.is_empty() {
        d.ipc = f.ipc.clone();
    }
    if let Some(v) = f.steps {
        d.steps = v;
    }
    if let Some(v) = f.psi_target {
        d.psi_target = v;
    }
    if let Some(s) = seed {
        d.seed = vec![s];
    }
    d.validate()
}

fn dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    if !dir.join("manifest.json").exists() {
        return Err(Error::Config(format!("no dataset at {}; run make-data first", dir.display())));
    }
    load_dataset(&dir)
}

fn names(ds: &Dataset) -> Vec<String> {
    ds.manifest.categories.iter().map(|c| c.name.clone()).collect()
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("no {what} at {}", path.display())))
    }
}

fn make_data(cfg: &PipelineConfig) -> Result<()> {
    let cats = cfg.data.categories.clone().unwrap_or_else(default_categories);
    let dir = cfg.dataset_dir();
    let m = build_dataset(&dir, &cats, &cfg.data.vocab, &cfg.data.render, cfg.data.n_per_class, cfg.seed)?;
    println!("dataset {} classes {} train {} test {}", dir.display(), m.categories.len(), m.train_count, m.test_count);
    println!("identity {}", m.identity());
    Ok(())
}

fn train_ddpm(cfg: &PipelineConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let s = cfg.schedule.build()?;
    let (model, curve) = train_denoiser(&ds.train, ds.manifest.categories.len(), &s, &cfg.ddpm)?;
    let held_out = denoising_loss(&model, &ds.test, &s, 512, cfg.seed)?;
    let path = cfg.denoiser_path();
    let crc = model.save(&path, &s)?;
    println!("final train loss {:.5}", curve.last().copied().unwrap_or(f32::NAN));
    println!("held-out loss {held_out:.5}");
    println!("denoiser {} checksum {crc}", path.display());
    Ok(())
}

fn train_embed(cfg: &PipelineConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let s = cfg.schedule.build()?;
    let names = names(&ds);
    let bank_path = cfg.bank_path();
    let concepts: Vec<Vec<String>> = if bank_path.exists() {
        let bank = ConceptBank::load(&bank_path)?;
        if bank.categories.len() != names.len() {
            return Err(Error::Config(format!("bank at {} does not match the dataset", bank_path.display())));
        }
        bank.categories.into_iter().map(|c| c.retrieved).collect()
    } else {
        procedural(&ds, cfg.concepts.retrieve)?
    };
    let tok = default_tokenizer(&ds.manifest.vocab);
    let (model, curve) = train_embedder(&ds.train, &names, &concepts, tok, &s, &cfg.embed)?;
    let path = cfg.embedder_path();
    let crc = model.save(&path)?;
    println!("final loss {:.5}", curve.last().copied().unwrap_or(f32::NAN));
    println!("embedder {} checksum {crc}", path.display());
    Ok(())
}

fn train_cls(cfg: &PipelineConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let s = cfg.schedule.build()?;
    let model = train_classifier(&ds.train, ds.manifest.categories.len(), &cfg.cls, Some(&s))?;
    let top1 = evaluate_top1(&model, &ds.test)?;
    let path = cfg.guide_classifier_path();
    let crc = model.save(&path)?;
    println!("clean test top1 {top1:.4}");
    println!("guide classifier {} checksum {crc}", path.display());
    Ok(())
}

fn procedural(ds: &Dataset, n: usize) -> Result<Vec<Vec<String>>> {
    let cats = &ds.manifest.categories;
    cats.iter()
        .map(|c| {
            let mut r = retrieve_concepts_procedural(c, cats)?;
            r.truncate(n);
            Ok(r)
        })
        .collect()
}

fn concepts_retrieve(cfg: &PipelineConfig, llm: bool) -> Result<()> {
    let ds = dataset(cfg)?;
    let names = names(&ds);
    let (retrieved, source) = if llm {
        let mut endpoint = cfg
            .concepts
            .llm
            .clone()
            .ok_or_else(|| Error::Config("--llm needs a concepts.llm endpoint section in the config".into()))?;
        endpoint.phrases = cfg.concepts.retrieve;
        endpoint.validate()?;
        (retrieve_all_llm(&names, &endpoint)?, format!("llm:{}", endpoint.model))
    } else {
        (procedural(&ds, cfg.concepts.retrieve)?, "procedural".to_string())
    };
    let bank = ConceptBank::from_retrieved(&names, retrieved, &source)?;
    let path = cfg.bank_path();
    bank.save(&path)?;
    for c in &bank.categories {
        println!("{}: {} concepts", c.name, c.retrieved.len());
    }
    println!("bank {} checksum {}", path.display(), bank.checksum()?);
    Ok(())
}

fn concepts_validate(cfg: &PipelineConfig) -> Result<()> {
    let ds = dataset(cfg)?;
    let (bank_path, emb_path) = (cfg.bank_path(), cfg.embedder_path());
    require(&bank_path, "concept bank")?;
    require(&emb_path, "embedder checkpoint")?;
    let bank = ConceptBank::load(&bank_path)?;
    let e = JointEmbedder::load(&emb_path)?;
    let k = ds.manifest.categories.len();
    let by_class: Vec<Tensor> = ds.train.indices_by_class(k).iter().map(|idx| ds.train.batch(idx)).collect();
    let bank = with_similarity(select_valid_concepts(&bank, &e, &by_class, cfg.concepts.select)?, &e)?;
    bank.save(&bank_path)?;
    for c in &bank.categories {
        println!("{}: {}", c.name, c.selected.join("; "));
    }
    println!("bank {} checksum {}", bank_path.display(), bank.checksum()?);
    Ok(())
}

fn tensor_crc(t: &Tensor) -> String {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    crc_hex(&bytes)
}

fn optional<T>(path: &Path, needed: bool, what: &str, load: impl Fn(&Path) -> Result<T>) -> Result<Option<T>> {
    if path.exists() {
        load(path).map(Some)
    } else if needed {
        Err(Error::Config(format!("this run needs the {what} at {}", path.display())))
    } else {
        Ok(None)
    }
}

fn generate(cfg: &PipelineConfig) -> Result<()> {
    let g = &cfg.generate.guidance;
    let den_path = cfg.denoiser_path();
    require(&den_path, "denoiser checkpoint")?;
    let (den, s) = Denoiser::load(&den_path)?;
    let active = !g.is_transparent();
    let concepts = active && g.objective.uses_concepts();
    let classifier = active && g.objective.uses_classifier();
    let e = optional(&cfg.embedder_path(), concepts, "embedder checkpoint", JointEmbedder::load)?;
    let bank = optional(&cfg.bank_path(), concepts, "concept bank", ConceptBank::load)?;
    let cls = optional(&cfg.guide_classifier_path(), classifier, "guidance classifier", Classifier::load)?;
    let models = GuidanceModels { embedder: e.as_ref(), classifier: cls.as_ref() };
    let k = den.config().classes;
    let cats: Vec<usize> = match cfg.generate.category {
        Some(c) if c >= k => return Err(Error::Argument(format!("category {c} out of range for {k} classes"))),
        Some(c) => vec![c],
        None => (0..k).collect(),
    };
    let dir = cfg.out.join("samples");
    fs::create_dir_all(&dir)?;
    let mut all = Vec::new();
    for c in cats {
        let out = generate_informed(&den, &s, models, bank.as_ref(), g, c, cfg.generate.n, cfg.seed)?;
        let images_checksum = tensor_crc(&out.images);
        export_grid(&out.images, cfg.generate.n.min(10), &dir.join(format!("class{c}.ppm")))?;
        let manifest = RunManifest {
            seed: cfg.seed,
            category: c,
            n: cfg.generate.n,
            config: g.clone(),
            bank_checksum: bank.as_ref().map(|b| b.checksum()).transpose()?,
            denoiser_checksum: file_checksum(&den_path)?,
            embedder_checksum: e.as_ref().map(|_| file_checksum(&cfg.embedder_path())).transpose()?,
            classifier_checksum: cls.as_ref().map(|_| file_checksum(&cfg.guide_classifier_path())).transpose()?,
            final_losses: out.final_losses.clone(),
            images_checksum: images_checksum.clone(),
        };
        fs::write(dir.join(format!("class{c}.manifest.json")), serde_json::to_vec_pretty(&manifest)?)?;
        println!("class {c} images {images_checksum}");
        all.push(out.images);
    }
    let rows: Vec<Tensor> = all.iter().flat_map(Tensor::unstack).collect();
    println!("images_checksum {}", tensor_crc(&Tensor::stack(&rows)?));
    Ok(())
}

fn distill(cfg: &PipelineConfig, jobs: usize) -> Result<()> {
    let d = &cfg.distill;
    let paths = ModelPaths {
        dataset: cfg.dataset_dir(),
        denoiser: Some(cfg.denoiser_path()),
        embedder: Some(cfg.embedder_path()),
        bank: Some(cfg.bank_path()),
        guide_classifier: Some(cfg.guide_classifier_path()),
    };
    check_inputs(&d.method, &paths)?;
    let ds = load_dataset(&paths.dataset)?;
    let wants = |f: fn(Method) -> bool| d.method.iter().any(|&m| f(m));
    let den = if wants(|m| m != Method::RandomReal) { Some(Denoiser::load(&cfg.denoiser_path())?) } else { None };
    let concepts = wants(|m| m.objective().is_some_and(Objective::uses_concepts));
    let e = if concepts { Some(JointEmbedder::load(&cfg.embedder_path())?) } else { None };
    let bank = if concepts { Some(ConceptBank::load(&cfg.bank_path())?) } else { None };
    let cls = if wants(|m| m.objective().is_some_and(Objective::uses_classifier)) {
        Some(Classifier::load(&cfg.guide_classifier_path())?)
    } else {
        None
    };
    let fallback = cfg.schedule.build()?;
    let schedule: &NoiseSchedule = den.as_ref().map(|(_, s)| s).unwrap_or(&fallback);
    let models = Models {
        real: &ds.train,
        classes: ds.manifest.categories.len(),
        denoiser: den.as_ref().map(|(m, _)| m),
        schedule,
        embedder: e.as_ref(),
        guide_classifier: cls.as_ref(),
    };
    let out = cfg.out.join("distill");
    let report = run_experiment(d, models, bank.as_ref(), &ds.test, &out, jobs)?;
    println!("method,ipc,lambda,n_neg,strategy,seeds,mean_top1,std_top1");
    for r in report.summarize() {
        println!(
            "{},{},{},{},{},{},{:.4},{:.4}",
            r.method, r.ipc, r.lambda, r.n_neg, r.strategy, r.seeds, r.mean, r.std
        );
    }
    println!("results {}", out.join("results.csv").display());
    Ok(())
}

fn gradcheck(cfg: &PipelineConfig) -> Result<()> {
    let primitives = oracle_suite(20, cfg.seed)?;
    let (cosine, contrastive) = objective_gradcheck([3, 8, 8], 20, cfg.seed)?;
    println!("primitives max relative error {primitives:.3e}");
    println!("cosine objective max relative error {cosine:.3e}");
    println!("contrastive objective max relative error {contrastive:.3e}");
    let worst = primitives.max(cosine).max(contrastive);
    println!("max relative error {worst:.3e}");
    if worst > GRADCHECK_TOLERANCE {
        return Err(Error::Contract(format!("gradient oracle error {worst:.3e} exceeds {GRADCHECK_TOLERANCE:.0e}")));
    }
    Ok(())
}
