//! Procedural attributed shapes dataset.
//!
//! Each category is a bundle of discrete attributes (shape, hue, size). A
//! sample renders that bundle with hard edges onto a flat gray background,
//! with a small position jitter and background shade as nuisance variables.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::crc_hex;
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::tensor::Tensor;

pub const CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<String>,
}

/// Ordered discrete attribute axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeVocab {
    pub axes: Vec<Axis>,
}

impl Default for AttributeVocab {
    fn default() -> Self {
        let axis = |name: &str, values: &[&str]| Axis {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        };
        AttributeVocab {
            axes: vec![
                axis("shape", &["circle", "square", "triangle", "cross"]),
                axis("hue", &["red", "green", "blue", "yellow"]),
                axis("size", &["small", "large"]),
            ],
        }
    }
}

impl AttributeVocab {
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::arg(format!("duplicate axis {:?}", a.name)));
            }
            if a.values.len() < 2 {
                return Err(Error::arg(format!("axis {:?} needs at least two values", a.name)));
            }
        }
        Ok(())
    }

    pub fn axis(&self, name: &str) -> Option<&Axis> {
        self.axes.iter().find(|a| a.name == name)
    }

    /// Every word that can appear in a category name or attribute value.
    pub fn words(&self) -> Vec<String> {
        self.axes.iter().flat_map(|a| a.values.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub id: usize,
    pub name: String,
    pub bundle: BTreeMap<String, String>,
}

impl CategorySpec {
    pub fn new<'a>(id: usize, attrs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let bundle: BTreeMap<String, String> = attrs.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        let get = |k: &str| bundle.get(k).cloned().unwrap_or_default();
        let name = [get("size"), get("hue"), get("shape")].into_iter().filter(|s| !s.is_empty()).collect::<Vec<_>>();
        CategorySpec { id, name: name.join(" "), bundle }
    }

    pub fn attr(&self, axis: &str) -> Option<&str> {
        self.bundle.get(axis).map(String::as_str)
    }

    /// Checks that every bundle entry names a vocab axis and one of its values.
    pub fn validate(&self, vocab: &AttributeVocab) -> Result<()> {
        for (k, v) in &self.bundle {
            let axis = vocab.axis(k).ok_or_else(|| Error::arg(format!("unknown attribute axis {k:?}")))?;
            if !axis.values.contains(v) {
                return Err(Error::arg(format!("unknown value {v:?} for axis {k:?}")));
            }
        }
        Ok(())
    }
}

/// The eight default classes. Each (shape, hue) pair is used at most once
/// and sizes alternate, so same-shape and same-hue pairs exist while half of
/// the shape-hue grid stays unused.
pub fn default_categories() -> Vec<CategorySpec> {
    [
        ("circle", "red", "large"),
        ("circle", "green", "small"),
        ("square", "blue", "large"),
        ("square", "yellow", "small"),
        ("triangle", "red", "small"),
        ("triangle", "blue", "large"),
        ("cross", "green", "large"),
        ("cross", "yellow", "small"),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (s, h, z))| CategorySpec::new(i, [("shape", s), ("hue", h), ("size", z)]))
    .collect()
}

pub fn validate_categories(categories: &[CategorySpec], vocab: &AttributeVocab) -> Result<()> {
    vocab.validate()?;
    if categories.is_empty() {
        return Err(Error::arg("no categories"));
    }
    if categories.len() > u16::MAX as usize {
        return Err(Error::arg("too many categories for 16-bit labels"));
    }
    for (i, c) in categories.iter().enumerate() {
        if c.id != i {
            return Err(Error::arg(format!("category ids must be 0..n in order, found {} at {i}", c.id)));
        }
        c.validate(vocab)?;
        if categories[..i].iter().any(|d| d.bundle == c.bundle) {
            return Err(Error::arg(format!("category {:?} duplicates another bundle", c.name)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    /// Maximum absolute center offset in pixels.
    pub jitter: u32,
    pub background: (f32, f32),
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { height: 16, width: 16, jitter: 2, background: (-0.9, -0.5) }
    }
}

impl RenderConfig {
    pub fn image_shape(&self) -> [usize; 3] {
        [CHANNELS, self.height, self.width]
    }
}

/// Continuous nuisance parameters of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nuisance {
    pub dx: i32,
    pub dy: i32,
    pub background: f32,
}

impl Nuisance {
    pub fn draw(cfg: &RenderConfig, rng: &mut impl Rng) -> Self {
        let j = cfg.jitter as i32;
        Nuisance {
            dx: rng.random_range(-j..=j),
            dy: rng.random_range(-j..=j),
            background: rng.random_range(cfg.background.0..=cfg.background.1),
        }
    }

    pub fn centered(background: f32) -> Self {
        Nuisance { dx: 0, dy: 0, background }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor,
    pub label: usize,
}

/// RGB in [-1, 1] for each hue value.
pub fn hue_color(hue: &str) -> Option<[f32; 3]> {
    Some(match hue {
        "red" => [1.0, -0.7, -0.7],
        "green" => [-0.7, 1.0, -0.7],
        "blue" => [-0.7, -0.7, 1.0],
        "yellow" => [1.0, 1.0, -0.7],
        _ => return None,
    })
}

fn size_radius(size: &str, extent: usize) -> Option<f32> {
    let base = match size {
        "small" => 3.0,
        "large" => 5.5,
        _ => return None,
    };
    Some(base * extent as f32 / 16.0)
}

fn shape_mask(shape: &str) -> Option<fn(f32, f32, f32) -> bool> {
    // Offsets (x, y) from the center, y pointing down, radius r.
    Some(match shape {
        "circle" => |x, y, r| x * x + y * y <= r * r,
        "square" => |x, y, r| x.abs() <= 0.85 * r && y.abs() <= 0.85 * r,
        "triangle" => |x, y, r| {
            let top = -r;
            let bottom = 0.8 * r;
            y >= top && y <= bottom && x.abs() <= (y - top) / (bottom - top) * r
        },
        "cross" => |x, y, r| {
            let arm = 0.3 * r;
            (x.abs() <= arm && y.abs() <= r) || (y.abs() <= arm && x.abs() <= r)
        },
        _ => return None,
    })
}

/// Foreground mask `[h * w]` of a category under the given nuisance draw.
pub fn foreground_mask(spec: &CategorySpec, cfg: &RenderConfig, n: &Nuisance) -> Result<Vec<bool>> {
    let shape = spec.attr("shape").ok_or_else(|| Error::arg(format!("{:?} has no shape", spec.name)))?;
    let size = spec.attr("size").ok_or_else(|| Error::arg(format!("{:?} has no size", spec.name)))?;
    let mask = shape_mask(shape).ok_or_else(|| Error::arg(format!("cannot render shape {shape:?}")))?;
    let r = size_radius(size, cfg.height.min(cfg.width))
        .ok_or_else(|| Error::arg(format!("cannot render size {size:?}")))?;
    let cx = (cfg.width as f32 - 1.0) / 2.0 + n.dx as f32;
    let cy = (cfg.height as f32 - 1.0) / 2.0 + n.dy as f32;
    let mut out = Vec::with_capacity(cfg.height * cfg.width);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            out.push(mask(x as f32 - cx, y as f32 - cy, r));
        }
    }
    Ok(out)
}

/// Renders with explicit nuisance values.
pub fn render_with(spec: &CategorySpec, vocab: &AttributeVocab, cfg: &RenderConfig, n: &Nuisance) -> Result<Sample> {
    spec.validate(vocab)?;
    let hue = spec.attr("hue").ok_or_else(|| Error::arg(format!("{:?} has no hue", spec.name)))?;
    let color = hue_color(hue).ok_or_else(|| Error::arg(format!("cannot render hue {hue:?}")))?;
    let mask = foreground_mask(spec, cfg, n)?;
    let bg = n.background.clamp(-1.0, 1.0);
    let hw = cfg.height * cfg.width;
    let mut data = vec![bg; CHANNELS * hw];
    for (c, &value) in color.iter().enumerate() {
        for (px, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            data[c * hw + px] = value;
        }
    }
    Ok(Sample { image: Tensor::new(cfg.image_shape().to_vec(), data)?, label: spec.id })
}

/// Draws nuisance values from `rng` and renders.
pub fn render_sample(
    spec: &CategorySpec,
    vocab: &AttributeVocab,
    cfg: &RenderConfig,
    rng: &mut impl Rng,
) -> Result<Sample> {
    let n = Nuisance::draw(cfg, rng);
    render_with(spec, vocab, cfg, &n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub image_shape: Vec<usize>,
    pub render: RenderConfig,
    pub vocab: AttributeVocab,
    pub categories: Vec<CategorySpec>,
    pub per_class: Vec<ClassCounts>,
    pub train_count: usize,
    pub test_count: usize,
    /// File name to lowercase hex CRC-32.
    pub checksums: BTreeMap<String, String>,
}

impl DatasetManifest {
    /// CRC over the manifest's own checksum table, used as a dataset identity.
    pub fn identity(&self) -> String {
        let joined: String = self.checksums.iter().map(|(k, v)| format!("{k}={v};")).collect();
        crc_hex(joined.as_bytes())
    }
}

/// Images `[n, C, H, W]` with matching labels.
#[derive(Debug, Clone)]
pub struct Split {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn image(&self, i: usize) -> Tensor {
        Tensor::from_parts(self.image_shape().to_vec(), self.images.row(i).to_vec())
    }

    /// Stacks the listed samples into `[indices.len(), C, H, W]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let per: usize = self.image_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.images.row(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.image_shape());
        Tensor::from_parts(shape, data)
    }

    /// The listed samples as a new split.
    pub fn subset(&self, indices: &[usize]) -> Split {
        Split { images: self.batch(indices), labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }

    /// Sample indices grouped by label.
    pub fn indices_by_class(&self, classes: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); classes];
        for (i, &l) in self.labels.iter().enumerate() {
            if l < classes {
                out[l].push(i);
            }
        }
        out
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
        Ok(Split { images: Tensor::stack(&images)?, labels: samples.iter().map(|s| s.label).collect() })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub train: Split,
    pub test: Split,
}

pub const TEST_FRACTION: f64 = 0.1;

fn split_counts(n: usize) -> ClassCounts {
    let test = ((n as f64 * TEST_FRACTION).round() as usize).clamp(1, n - 1);
    ClassCounts { train: n - test, test }
}

fn f32_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn label_bytes(labels: &[usize]) -> Vec<u8> {
    labels.iter().flat_map(|&l| (l as u16).to_le_bytes()).collect()
}

/// Renders the full dataset in memory. Sample `j` of class `c` uses the
/// stream `(seed, RENDER, c, j)`; the first `train` indices of each class go
/// to the training split. Splits are interleaved by class.
pub fn generate(
    categories: &[CategorySpec],
    vocab: &AttributeVocab,
    cfg: &RenderConfig,
    n_per_class: usize,
    seed: u64,
) -> Result<(Split, Split, Vec<ClassCounts>)> {
    if n_per_class < 2 {
        return Err(Error::arg(format!("n_per_class must be at least 2, got {n_per_class}")));
    }
    validate_categories(categories, vocab)?;
    let counts = split_counts(n_per_class);
    let render = |c: &CategorySpec, j: usize| {
        let mut r = rng::stream(seed, &[domain::RENDER, c.id as u64, j as u64]);
        render_sample(c, vocab, cfg, &mut r)
    };
    let mut train = Vec::with_capacity(counts.train * categories.len());
    let mut test = Vec::with_capacity(counts.test * categories.len());
    for j in 0..n_per_class {
        for c in categories {
            let s = render(c, j)?;
            if j < counts.train {
                train.push(s);
            } else {
                test.push(s);
            }
        }
    }
    Ok((Split::from_samples(&train)?, Split::from_samples(&test)?, vec![counts; categories.len()]))
}

/// Writes `manifest.json`, `train.f32`, `test.f32`, `train.labels.u16` and
/// `test.labels.u16` into `dir`.
pub fn build_dataset(
    dir: &Path,
    categories: &[CategorySpec],
    vocab: &AttributeVocab,
    cfg: &RenderConfig,
    n_per_class: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let (train, test, per_class) = generate(categories, vocab, cfg, n_per_class, seed)?;
    fs::create_dir_all(dir)?;
    let files = [
        ("train.f32", f32_bytes(&train.images)),
        ("test.f32", f32_bytes(&test.images)),
        ("train.labels.u16", label_bytes(&train.labels)),
        ("test.labels.u16", label_bytes(&test.labels)),
    ];
    let mut checksums = BTreeMap::new();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        checksums.insert(name.to_string(), crc_hex(bytes));
    }
    let manifest = DatasetManifest {
        format_version: 1,
        seed,
        image_shape: cfg.image_shape().to_vec(),
        render: *cfg,
        vocab: vocab.clone(),
        categories: categories.to_vec(),
        per_class,
        train_count: train.len(),
        test_count: test.len(),
        checksums,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, manifest: &DatasetManifest) -> Result<Vec<u8>> {
    let bytes = fs::read(dir.join(name))?;
    let want = manifest
        .checksums
        .get(name)
        .ok_or_else(|| Error::Corruption(format!("manifest lacks a checksum for {name}")))?;
    let got = crc_hex(&bytes);
    if &got != want {
        return Err(Error::Corruption(format!("{name}: checksum {got} does not match manifest {want}")));
    }
    Ok(bytes)
}

fn decode_split(
    images: &[u8],
    labels: &[u8],
    count: usize,
    shape: &[usize],
    classes: usize,
    what: &str,
) -> Result<Split> {
    if count == 0 {
        return Err(Error::Corruption(format!("{what}: split is empty")));
    }
    let per: usize = shape.iter().product();
    let expect = count.checked_mul(per).and_then(|n| n.checked_mul(4));
    if expect != Some(images.len()) {
        return Err(Error::Corruption(format!(
            "{what}: image file holds {} bytes, manifest implies {count} samples",
            images.len()
        )));
    }
    if labels.len() != count * 2 {
        return Err(Error::Corruption(format!("{what}: label file holds {} bytes for {count} samples", labels.len())));
    }
    let data: Vec<f32> = images.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if let Some(bad) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::Corruption(format!("{what}: pixel value {bad} outside [-1, 1]")));
    }
    let labels: Vec<usize> = labels.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]]) as usize).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Corruption(format!("{what}: label {bad} out of range")));
    }
    let mut full = vec![count];
    full.extend_from_slice(shape);
    Ok(Split { images: Tensor::from_parts(full, data), labels })
}

/// Parses a manifest and checks its internal bookkeeping.
pub fn parse_manifest(bytes: &[u8]) -> Result<DatasetManifest> {
    let m: DatasetManifest =
        serde_json::from_slice(bytes).map_err(|e| Error::Corruption(format!("manifest.json: {e}")))?;
    validate_categories(&m.categories, &m.vocab).map_err(|e| Error::Corruption(format!("manifest categories: {e}")))?;
    if m.image_shape.len() != 3 || m.image_shape.iter().any(|&d| d == 0 || d > 4096) {
        return Err(Error::Corruption(format!("bad image shape {:?}", m.image_shape)));
    }
    if m.per_class.len() != m.categories.len() {
        return Err(Error::Corruption("per-class counts do not cover every category".into()));
    }
    let train: usize = m.per_class.iter().map(|c| c.train).sum();
    let test: usize = m.per_class.iter().map(|c| c.test).sum();
    if train != m.train_count || test != m.test_count {
        return Err(Error::Corruption(format!(
            "per-class counts sum to {train}/{test}, manifest says {}/{}",
            m.train_count, m.test_count
        )));
    }
    Ok(m)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = parse_manifest(&fs::read(dir.join("manifest.json"))?)?;
    let k = manifest.categories.len();
    let shape = manifest.image_shape.clone();
    let train = decode_split(
        &read_checked(dir, "train.f32", &manifest)?,
        &read_checked(dir, "train.labels.u16", &manifest)?,
        manifest.train_count,
        &shape,
        k,
        "train",
    )?;
    let test = decode_split(
        &read_checked(dir, "test.f32", &manifest)?,
        &read_checked(dir, "test.labels.u16", &manifest)?,
        manifest.test_count,
        &shape,
        k,
        "test",
    )?;
    for (split, counts, what) in [(&train, true, "train"), (&test, false, "test")] {
        let hist = split.indices_by_class(k);
        for (c, idx) in hist.iter().enumerate() {
            let want = if counts { manifest.per_class[c].train } else { manifest.per_class[c].test };
            if idx.len() != want {
                return Err(Error::Corruption(format!(
                    "{what}: class {c} has {} samples, manifest says {want}",
                    idx.len()
                )));
            }
        }
    }
    Ok(Dataset { manifest, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(shape: &str, hue: &str, size: &str) -> CategorySpec {
        CategorySpec::new(0, [("shape", shape), ("hue", hue), ("size", size)])
    }

    #[test]
    fn names_read_naturally() {
        assert_eq!(default_categories()[0].name, "large red circle");
    }

    #[test]
    fn unknown_values_are_argument_errors() {
        let v = AttributeVocab::default();
        let cfg = RenderConfig::default();
        let bad = spec("hexagon", "red", "large");
        let mut r = rng::stream(0, &[]);
        assert!(matches!(render_sample(&bad, &v, &cfg, &mut r), Err(Error::Argument(_))));
        let mut odd = spec("circle", "red", "large");
        odd.bundle.insert("texture".into(), "striped".into());
        assert!(matches!(render_sample(&odd, &v, &cfg, &mut r), Err(Error::Argument(_))));
    }

    #[test]
    fn centered_red_disc() {
        let v = AttributeVocab::default();
        let cfg = RenderConfig::default();
        let s = spec("circle", "red", "large");
        let n = Nuisance::centered(-0.7);
        let img = render_with(&s, &v, &cfg, &n).unwrap().image;
        let mask = foreground_mask(&s, &cfg, &n).unwrap();
        assert!(mask[7 * 16 + 7] && mask[8 * 16 + 8] && !mask[0]);
        let mean_in = |c: usize| {
            let vals: Vec<f32> =
                mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| img.data()[c * 256 + i]).collect();
            vals.iter().sum::<f32>() / vals.len() as f32
        };
        assert!(mean_in(0) > mean_in(1) && mean_in(0) > mean_in(2));
    }

    #[test]
    fn small_has_fewer_foreground_pixels() {
        let cfg = RenderConfig::default();
        for shape in ["circle", "square", "triangle", "cross"] {
            let n = Nuisance::draw(&cfg, &mut rng::stream(3, &[]));
            let count =
                |size| foreground_mask(&spec(shape, "blue", size), &cfg, &n).unwrap().iter().filter(|&&m| m).count();
            assert!(count("small") < count("large"), "{shape}");
        }
    }

    #[test]
    fn rejects_duplicate_bundles() {
        let mut cats = default_categories();
        cats[1].bundle = cats[0].bundle.clone();
        assert!(validate_categories(&cats, &AttributeVocab::default()).is_err());
    }

    #[test]
    fn split_rounding() {
        assert_eq!(split_counts(500), ClassCounts { train: 450, test: 50 });
        assert_eq!(split_counts(2), ClassCounts { train: 1, test: 1 });
        assert_eq!(split_counts(15), ClassCounts { train: 13, test: 2 });
    }
}
