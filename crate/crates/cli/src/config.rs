//! The pipeline configuration file and its resolution against flags.

use std::fs;
use std::path::{Path, PathBuf};

use conceptdiff::classifier::ClassifierTrainConfig;
use conceptdiff::conceptbank::{LlmEndpointConfig, DEFAULT_RETRIEVE, DEFAULT_SELECT};
use conceptdiff::diffusion::{make_schedule, DenoiserTrainConfig, NoiseSchedule};
use conceptdiff::embedder::EmbedderTrainConfig;
use conceptdiff::evalharness::ExperimentConfig;
use conceptdiff::guidance::GuidanceConfig;
use conceptdiff::synthdata::{AttributeVocab, CategorySpec, RenderConfig};
use conceptdiff::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_per_class: usize,
    pub render: RenderConfig,
    pub vocab: AttributeVocab,
    /// `None` means the eight default classes.
    pub categories: Option<Vec<CategorySpec>>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n_per_class: 500,
            render: RenderConfig::default(),
            vocab: AttributeVocab::default(),
            categories: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub t_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection { t_max: 1000, beta_min: 1e-4, beta_max: 0.02 }
    }
}

impl ScheduleSection {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.t_max, self.beta_min, self.beta_max).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConceptsSection {
    pub retrieve: usize,
    pub select: usize,
    pub llm: Option<LlmEndpointConfig>,
}

impl Default for ConceptsSection {
    fn default() -> Self {
        ConceptsSection { retrieve: DEFAULT_RETRIEVE, select: DEFAULT_SELECT, llm: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    /// `None` generates every category.
    pub category: Option<usize>,
    /// Samples per category.
    pub n: usize,
    pub guidance: GuidanceConfig,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { category: None, n: 10, guidance: GuidanceConfig::default() }
    }
}

/// Input locations; unset entries default to files inside the output
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub dataset: Option<PathBuf>,
    pub denoiser: Option<PathBuf>,
    pub embedder: Option<PathBuf>,
    pub bank: Option<PathBuf>,
    pub guide_classifier: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub ddpm: DenoiserTrainConfig,
    pub embed: EmbedderTrainConfig,
    /// The noise-aware classifier used for classifier guidance.
    pub cls: ClassifierTrainConfig,
    pub concepts: ConceptsSection,
    pub generate: GenerateSection,
    pub distill: ExperimentConfig,
    pub paths: PathsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: PathBuf::from("run"),
            data: DataSection::default(),
            schedule: ScheduleSection::default(),
            ddpm: DenoiserTrainConfig::default(),
            embed: EmbedderTrainConfig::default(),
            cls: ClassifierTrainConfig::default(),
            concepts: ConceptsSection::default(),
            generate: GenerateSection::default(),
            distill: ExperimentConfig::default(),
            paths: PathsSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copies the global seed into every stage that draws randomness.
    pub fn propagate_seed(&mut self) {
        self.ddpm.seed = self.seed;
        self.embed.seed = self.seed;
        self.cls.seed = self.seed;
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn denoiser_path(&self) -> PathBuf {
        self.paths.denoiser.clone().unwrap_or_else(|| self.out.join("denoiser.ckpt"))
    }

    pub fn embedder_path(&self) -> PathBuf {
        self.paths.embedder.clone().unwrap_or_else(|| self.out.join("embedder.ckpt"))
    }

    pub fn bank_path(&self) -> PathBuf {
        self.paths.bank.clone().unwrap_or_else(|| self.out.join("bank.json"))
    }

    pub fn guide_classifier_path(&self) -> PathBuf {
        self.paths.guide_classifier.clone().unwrap_or_else(|| self.out.join("guide_classifier.ckpt"))
    }

    /// Writes the resolved configuration as `<out>/<command>.config.json`.
    pub fn echo(&self, command: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.out.join(format!("{command}.config.json"));
        fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}
