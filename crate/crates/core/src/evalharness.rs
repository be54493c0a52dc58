//! Surrogate-set construction, downstream evaluation, resumable sweeps and
//! image-grid export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{mpsc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::crc_hex;
use crate::classifier::{evaluate_top1, train_classifier, Classifier, ClassifierTrainConfig};
use crate::conceptbank::{ConceptBank, NegativeStrategy};
use crate::diffusion::{Denoiser, NoiseSchedule};
use crate::embedder::JointEmbedder;
use crate::error::{Error, Result};
use crate::guidance::{generate_informed, GuidanceConfig, GuidanceModels, Objective, PsiTarget};
use crate::rng::{self, domain};
use crate::synthdata::Split;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    RandomReal,
    Unguided,
    Cosine,
    Contrastive,
    Classifier,
    Combined,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::RandomReal,
        Method::Unguided,
        Method::Cosine,
        Method::Contrastive,
        Method::Classifier,
        Method::Combined,
    ];

    pub fn objective(self) -> Option<Objective> {
        match self {
            Method::RandomReal => None,
            Method::Unguided => Some(Objective::None),
            Method::Cosine => Some(Objective::Cosine),
            Method::Contrastive => Some(Objective::Contrastive),
            Method::Classifier => Some(Objective::Classifier),
            Method::Combined => Some(Objective::Combined),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::RandomReal => "random_real",
            Method::Unguided => "unguided",
            Method::Cosine => "cosine",
            Method::Contrastive => "contrastive",
            Method::Classifier => "classifier",
            Method::Combined => "combined",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.to_string() == s).ok_or_else(|| Error::arg(format!("unknown method {s:?}")))
    }
}

/// An IPC-budgeted training set with its provenance.
#[derive(Debug, Clone)]
pub struct SurrogateSet {
    pub split: Split,
    pub method: Method,
    pub ipc: usize,
    pub seed: u64,
    /// Per-sample final contrastive losses of generated sets.
    pub final_losses: Vec<f32>,
}

impl SurrogateSet {
    /// CRC of images and labels.
    pub fn checksum(&self) -> String {
        let mut bytes: Vec<u8> = self.split.images.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        bytes.extend(self.split.labels.iter().flat_map(|&l| (l as u16).to_le_bytes()));
        crc_hex(&bytes)
    }
}

/// Everything surrogate construction may need.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub real: &'a Split,
    pub classes: usize,
    pub denoiser: Option<&'a Denoiser>,
    pub schedule: &'a NoiseSchedule,
    pub embedder: Option<&'a JointEmbedder>,
    pub guide_classifier: Option<&'a Classifier>,
}

pub fn build_surrogate(
    method: Method,
    ipc: usize,
    seed: u64,
    models: Models,
    bank: Option<&ConceptBank>,
    cfg: &GuidanceConfig,
) -> Result<SurrogateSet> {
    if ipc == 0 {
        return Err(Error::arg("ipc must be at least 1"));
    }
    let k = models.classes;
    let Some(objective) = method.objective() else {
        let by_class = models.real.indices_by_class(k);
        let mut idx = Vec::with_capacity(ipc * k);
        for (c, pool) in by_class.iter().enumerate() {
            if ipc > pool.len() {
                return Err(Error::arg(format!("ipc {ipc} exceeds the {} real images of class {c}", pool.len())));
            }
            let perm = rng::permutation(&mut rng::stream(seed, &[domain::SURROGATE, c as u64]), pool.len());
            idx.extend(perm[..ipc].iter().map(|&i| pool[i]));
        }
        let split = models.real.subset(&idx);
        return Ok(SurrogateSet { split, method, ipc, seed, final_losses: vec![] });
    };
    let denoiser = models.denoiser.ok_or_else(|| Error::Config(format!("{method} needs a denoiser")))?;
    let gcfg = GuidanceConfig { objective, ..cfg.clone() };
    let gm = GuidanceModels { embedder: models.embedder, classifier: models.guide_classifier };
    let mut images = Vec::with_capacity(ipc * k);
    let mut labels = Vec::with_capacity(ipc * k);
    let mut final_losses = Vec::new();
    for c in 0..k {
        let g = generate_informed(denoiser, models.schedule, gm, bank, &gcfg, c, ipc, seed)?;
        images.extend(g.images.unstack());
        labels.extend(std::iter::repeat_n(c, ipc));
        final_losses.extend(g.final_losses);
    }
    let split = Split { images: Tensor::stack(&images)?, labels };
    Ok(SurrogateSet { split, method, ipc, seed, final_losses })
}

/// One results row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment_id: String,
    pub method: String,
    pub ipc: usize,
    pub seed: u64,
    pub lambda: f64,
    pub n_neg: usize,
    pub strategy: String,
    pub top1: f64,
    pub wall_seconds: f64,
    pub config_crc: String,
}

pub const CSV_HEADER: &str = "experiment_id,method,ipc,seed,lambda,n_neg,strategy,top1,wall_seconds,config_crc";

/// Identity of a sweep cell.
pub type CellKey = (String, usize, u64, String, usize, String);

impl ReportRow {
    pub fn key(&self) -> CellKey {
        (self.method.clone(), self.ipc, self.seed, format_lambda(self.lambda), self.n_neg, self.strategy.clone())
    }
}

fn format_lambda(l: f64) -> String {
    format!("{l}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

/// Mean and sample standard deviation of top-1 over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub ipc: usize,
    pub lambda: f64,
    pub n_neg: usize,
    pub strategy: String,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn summarize(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(String, usize, String, usize, String), Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((r.method.clone(), r.ipc, format_lambda(r.lambda), r.n_neg, r.strategy.clone()))
                .or_default()
                .push(r);
        }
        groups
            .into_values()
            .map(|rs| {
                let n = rs.len() as f64;
                let mean = rs.iter().map(|r| r.top1).sum::<f64>() / n;
                let var = if rs.len() > 1 {
                    rs.iter().map(|r| (r.top1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                SummaryRow {
                    method: rs[0].method.clone(),
                    ipc: rs[0].ipc,
                    lambda: rs[0].lambda,
                    n_neg: rs[0].n_neg,
                    strategy: rs[0].strategy.clone(),
                    seeds: rs.len(),
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect()
    }

    /// Mean top-1 of `method` at `ipc` over every matching row.
    pub fn mean_top1(&self, method: Method, ipc: usize) -> Option<f64> {
        let v: Vec<f64> =
            self.rows.iter().filter(|r| r.method == method.to_string() && r.ipc == ipc).map(|r| r.top1).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// A sweep over the Cartesian product of the axis lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub method: Vec<Method>,
    pub ipc: Vec<usize>,
    pub seed: Vec<u64>,
    pub lambda: Vec<f64>,
    pub n_neg: Vec<usize>,
    pub strategy: Vec<String>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_psi")]
    pub psi_target: PsiTarget,
    #[serde(default = "default_cls_weight")]
    pub classifier_weight: f64,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub classifier: ClassifierTrainConfig,
    #[serde(default)]
    pub export_grids: bool,
}

fn default_steps() -> usize {
    50
}
fn default_tau() -> f64 {
    0.07
}
fn default_psi() -> PsiTarget {
    PsiTarget::NoisyX
}
fn default_cls_weight() -> f64 {
    0.05
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment_id: "default".into(),
            method: vec![Method::Unguided, Method::Contrastive],
            ipc: vec![1, 10, 50],
            seed: (0..5).collect(),
            lambda: vec![1.0],
            n_neg: vec![10],
            strategy: vec!["weighted".into()],
            steps: default_steps(),
            tau: default_tau(),
            psi_target: default_psi(),
            classifier_weight: default_cls_weight(),
            clip: None,
            classifier: ClassifierTrainConfig::default(),
            export_grids: false,
        }
    }
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub method: Method,
    pub ipc: usize,
    pub seed: u64,
    pub lambda: f64,
    pub n_neg: usize,
    pub strategy: NegativeStrategy,
}

impl Cell {
    pub fn key(&self) -> CellKey {
        (
            self.method.to_string(),
            self.ipc,
            self.seed,
            format_lambda(self.lambda),
            self.n_neg,
            self.strategy.to_string(),
        )
    }

    fn file_stem(&self) -> String {
        format!(
            "{}_ipc{}_seed{}_lambda{}_neg{}_{}",
            self.method,
            self.ipc,
            self.seed,
            format_lambda(self.lambda),
            self.n_neg,
            self.strategy.to_string().replace(':', "-")
        )
    }
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let c: ExperimentConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("method", self.method.is_empty()),
            ("ipc", self.ipc.is_empty()),
            ("seed", self.seed.is_empty()),
            ("lambda", self.lambda.is_empty()),
            ("n_neg", self.n_neg.is_empty()),
            ("strategy", self.strategy.is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("sweep axis {axis} is empty")));
        }
        if self.experiment_id.is_empty() || self.experiment_id.contains([',', '"', '\n']) {
            return Err(Error::Config("experiment_id must be non-empty without commas, quotes or newlines".into()));
        }
        if self.ipc.contains(&0) {
            return Err(Error::Config("ipc values must be positive".into()));
        }
        for s in &self.strategy {
            s.parse::<NegativeStrategy>().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.guidance(&self.cells()?[0]).validate().map_err(|e| Error::Config(e.to_string()))?;
        for &l in &self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda {l} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Cells in a fixed nesting order: method, ipc, seed, lambda, n_neg,
    /// strategy.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let strategies: Vec<NegativeStrategy> =
            self.strategy.iter().map(|s| s.parse()).collect::<Result<_>>().map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::new();
        for &method in &self.method {
            for &ipc in &self.ipc {
                for &seed in &self.seed {
                    for &lambda in &self.lambda {
                        for &n_neg in &self.n_neg {
                            for &strategy in &strategies {
                                out.push(Cell { method, ipc, seed, lambda, n_neg, strategy });
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn guidance(&self, cell: &Cell) -> GuidanceConfig {
        GuidanceConfig {
            lambda: cell.lambda,
            objective: cell.method.objective().unwrap_or(Objective::None),
            tau: self.tau,
            n_neg: cell.n_neg,
            strategy: cell.strategy,
            psi_target: self.psi_target,
            classifier_weight: self.classifier_weight,
            clip: self.clip,
            resample_negatives: false,
            steps: self.steps,
            clamp: true,
        }
    }

    /// CRC of everything that determines a cell's result.
    pub fn cell_crc(&self, cell: &Cell) -> String {
        let v = serde_json::json!({
            "experiment_id": self.experiment_id,
            "cell": cell,
            "guidance": self.guidance(cell),
            "classifier": self.classifier,
        });
        crc_hex(v.to_string().as_bytes())
    }
}

/// Builds and evaluates one cell.
pub fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    models: Models,
    bank: Option<&ConceptBank>,
    test: &Split,
    grid_dir: Option<&Path>,
) -> Result<ReportRow> {
    let start = Instant::now();
    let set = build_surrogate(cell.method, cell.ipc, cell.seed, models, bank, &cfg.guidance(cell))?;
    let ccfg = ClassifierTrainConfig { seed: cell.seed, ..cfg.classifier.clone() };
    let model = train_classifier(&set.split, models.classes, &ccfg, None)?;
    let top1 = evaluate_top1(&model, test)?;
    if let Some(dir) = grid_dir {
        export_grid(&set.split.images, cell.ipc, &dir.join(format!("{}.ppm", cell.file_stem())))?;
    }
    Ok(ReportRow {
        experiment_id: cfg.experiment_id.clone(),
        method: cell.method.to_string(),
        ipc: cell.ipc,
        seed: cell.seed,
        lambda: cell.lambda,
        n_neg: cell.n_neg,
        strategy: cell.strategy.to_string(),
        top1,
        wall_seconds: start.elapsed().as_secs_f64(),
        config_crc: cfg.cell_crc(cell),
    })
}

/// Reads the rows of an existing results file.
pub fn read_results(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Corruption(format!("{} has header {:?}", path.display(), header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Runs every cell not already present in `out/results.csv`, appending one
/// row per finished cell. `jobs` worker threads share the cell queue; a
/// single writer appends rows.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    models: Models,
    bank: Option<&ConceptBank>,
    test: &Split,
    out: &Path,
    jobs: usize,
) -> Result<EvalReport> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("experiment.json"), serde_json::to_vec_pretty(cfg)?)?;
    let csv_path = out.join("results.csv");
    let existing = if csv_path.exists() { read_results(&csv_path)? } else { vec![] };
    let done: BTreeSet<CellKey> = existing.iter().map(ReportRow::key).collect();
    let pending: Vec<Cell> = cfg.cells()?.into_iter().filter(|c| !done.contains(&c.key())).collect();
    let grid_dir = cfg.export_grids.then(|| out.join("grids"));
    if let Some(d) = &grid_dir {
        fs::create_dir_all(d)?;
    }

    let mut file = OpenOptions::new().create(true).append(true).open(&csv_path)?;
    if existing.is_empty() && file.metadata()?.len() == 0 {
        writeln!(file, "{CSV_HEADER}")?;
    }
    let queue = Mutex::new(pending.iter());
    let (tx, rx) = mpsc::channel::<Result<ReportRow>>();
    let mut written = Vec::new();
    let mut first_err = None;
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(pending.len().max(1)) {
            let tx = tx.clone();
            let queue = &queue;
            let grid_dir = grid_dir.as_deref();
            s.spawn(move || loop {
                let Some(cell) = queue.lock().expect("queue lock").next() else { break };
                let r = run_cell(cfg, cell, models, bank, test, grid_dir);
                let failed = r.is_err();
                if tx.send(r).is_err() || failed {
                    break;
                }
            });
        }
        drop(tx);
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut file);
        for r in rx {
            match r {
                Ok(row) => {
                    if let Err(e) = w.serialize(&row).and_then(|_| w.flush().map_err(csv::Error::from)) {
                        first_err.get_or_insert(Error::from(e));
                    }
                    written.push(row);
                }
                Err(e) => {
                    first_err.get_or_insert(e);
                    // Stop handing out work; cells in flight still finish.
                    queue.lock().expect("queue lock").by_ref().for_each(drop);
                }
            }
        }
    });
    if let Some(e) = first_err {
        return Err(e);
    }
    let mut rows = existing;
    rows.extend(written);
    Ok(EvalReport { rows })
}

fn quantize(v: f32) -> u8 {
    let x = ((v.clamp(-1.0, 1.0) as f64 + 1.0) * 0.5 * 255.0 + 0.5).floor();
    x.clamp(0.0, 255.0) as u8
}

/// Binary PPM of `images: [n, 3, H, W]` tiled `per_row` to a row. Cells past
/// the last image stay black.
pub fn encode_ppm(images: &Tensor, per_row: usize) -> Result<Vec<u8>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 || s[0] == 0 {
        return Err(Error::arg(format!("grid export needs [n, 3, H, W] images, got {s:?}")));
    }
    if per_row == 0 {
        return Err(Error::arg("grid needs at least one image per row"));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    let cols = per_row.min(n);
    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut out = format!("P6\n{gw} {gh}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + gw * gh * 3, 0);
    let d = images.data();
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        for y in 0..h {
            for x in 0..w {
                let px = header + ((r * h + y) * gw + c * w + x) * 3;
                for ch in 0..3 {
                    out[px + ch] = quantize(d[((i * 3 + ch) * h + y) * w + x]);
                }
            }
        }
    }
    Ok(out)
}

pub fn export_grid(images: &Tensor, per_row: usize, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(images, per_row)?)?;
    Ok(())
}

/// A decoded binary PPM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Parses a P6 file with maxval 255, allowing `#` comments in the header.
pub fn parse_ppm(bytes: &[u8]) -> Result<Ppm> {
    let bad = |m: &str| Error::Corruption(format!("PPM: {m}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a P6 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 || width == 0 || height == 0 {
        return Err(bad("unsupported dimensions or maxval"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing separator before pixel data"));
    }
    pos += 1;
    let need = width.checked_mul(height).and_then(|v| v.checked_mul(3)).ok_or_else(|| bad("dimensions overflow"))?;
    if bytes.len() - pos != need {
        return Err(bad(&format!("expected {need} pixel bytes, found {}", bytes.len() - pos)));
    }
    Ok(Ppm { width, height, pixels: bytes[pos..].to_vec() })
}

/// Files a sweep reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPaths {
    pub dataset: PathBuf,
    pub denoiser: Option<PathBuf>,
    pub embedder: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub guide_classifier: Option<PathBuf>,
}

/// Checks that every checkpoint a method list needs is present.
pub fn check_inputs(methods: &[Method], paths: &ModelPaths) -> Result<()> {
    let need = |p: &Option<PathBuf>, what: &str, m: Method| -> Result<()> {
        match p {
            Some(p) if p.exists() => Ok(()),
            Some(p) => Err(Error::Config(format!("{m} needs the {what} at {}, which does not exist", p.display()))),
            None => Err(Error::Config(format!("{m} needs a {what}"))),
        }
    };
    if !paths.dataset.join("manifest.json").exists() {
        return Err(Error::Config(format!("no dataset at {}", paths.dataset.display())));
    }
    for &m in methods {
        if m != Method::RandomReal {
            need(&paths.denoiser, "denoiser checkpoint", m)?;
        }
        if matches!(m, Method::Cosine | Method::Contrastive | Method::Combined) {
            need(&paths.embedder, "embedder checkpoint", m)?;
            need(&paths.bank, "concept bank", m)?;
        }
        if matches!(m, Method::Classifier | Method::Combined) {
            need(&paths.guide_classifier, "guidance classifier checkpoint", m)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_endpoints() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 128);
        assert_eq!(quantize(-5.0), 0);
    }

    #[test]
    fn ppm_layout_and_round_trip() {
        let imgs = Tensor::full(vec![8, 3, 16, 16], -1.0);
        let bytes = encode_ppm(&imgs, 4).unwrap();
        let p = parse_ppm(&bytes).unwrap();
        assert_eq!((p.width, p.height), (64, 32));
        assert!(p.pixels.iter().all(|&b| b == 0));
        let mut with_comment = b"P6 # c\n64 32\n255\n".to_vec();
        with_comment.extend_from_slice(&p.pixels);
        assert_eq!(parse_ppm(&with_comment).unwrap(), p);
        assert!(parse_ppm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn cell_count() {
        let cfg = ExperimentConfig {
            method: vec![Method::RandomReal, Method::Unguided],
            ipc: vec![1, 2],
            seed: vec![0, 1, 2],
            ..Default::default()
        };
        assert_eq!(cfg.cells().unwrap().len(), 12);
    }
}
