//! Labeled datasets, synthetic generators and forget/retain splitting.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

/// Height, width and channel count of image-shaped rows (HWC order).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub image_shape: Option<ImageShape>,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
        image_shape: Option<ImageShape>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::input(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if !features.all_finite() {
            return Err(Error::input("features must be finite"));
        }
        if let Some(shape) = image_shape {
            if shape.len() != features.cols() {
                return Err(Error::shape(format!(
                    "image shape {shape:?} does not match {} features",
                    features.cols()
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            image_shape: self.image_shape,
        }
    }

    /// Same samples with the features replaced.
    pub fn with_features(&self, features: Matrix) -> Result<LabeledDataset> {
        LabeledDataset::new(
            features,
            self.labels.clone(),
            self.class_count,
            self.image_shape,
        )
    }

    /// Declares the rows to be images of `shape`, which enables clipping and
    /// the elastic warp. Features must already lie in `[0, 1]`.
    pub fn with_image_shape(mut self, shape: ImageShape) -> Result<LabeledDataset> {
        if shape.len() != self.dim() {
            return Err(Error::shape(format!(
                "image shape {shape:?} does not match {} features",
                self.dim()
            )));
        }
        if self
            .features
            .as_slice()
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::input("image features must lie in [0, 1]"));
        }
        self.image_shape = Some(shape);
        Ok(self)
    }

    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }

    /// Stratified split: per class, `round(test_fraction * n_class)` rows go
    /// to the test side. Both halves keep the original row order.
    pub fn train_test_split(
        &self,
        test_fraction: f64,
        seed: u64,
    ) -> Result<(LabeledDataset, LabeledDataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let mut rng = rng::rng_for(seed, "train-test");
        let mut is_test = vec![false; self.len()];
        for class in 0..self.class_count {
            let mut idx = self.indices_of_class(class);
            idx.shuffle(&mut rng);
            let n_test = (test_fraction * idx.len() as f64).round() as usize;
            for &i in &idx[..n_test] {
                is_test[i] = true;
            }
        }
        let train: Vec<usize> = (0..self.len()).filter(|&i| !is_test[i]).collect();
        let test: Vec<usize> = (0..self.len()).filter(|&i| is_test[i]).collect();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// SHA-256 over shape metadata, labels and feature bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.class_count as u64).to_le_bytes());
        h.update((self.features.rows() as u64).to_le_bytes());
        h.update((self.features.cols() as u64).to_le_bytes());
        if let Some(s) = self.image_shape {
            for v in [s.height, s.width, s.channels] {
                h.update((v as u64).to_le_bytes());
            }
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        for v in self.features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// `classes` isotropic Gaussian clusters in `dim` dimensions.
///
/// Centers lie on the sphere of radius `center_scale`; afterwards every
/// feature is mapped into `[0, 1]` by one global affine rescale, which keeps
/// the clusters isotropic.
pub fn make_blobs(
    classes: usize,
    dim: usize,
    per_class: usize,
    center_scale: f64,
    sigma: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::config("blobs need at least two classes"));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::config(
            "blobs need at least one sample and one feature",
        ));
    }
    if !(sigma >= 0.0) || !(center_scale >= 0.0) {
        return Err(Error::config("blob scale parameters must be nonnegative"));
    }
    let mut center_rng = rng::rng_for(seed, "blob-centers");
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let mut c: Vec<f64> = (0..dim)
                .map(|_| StandardNormal.sample(&mut center_rng))
                .collect();
            let norm = c
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            c.iter_mut().for_each(|v| *v *= center_scale / norm);
            c
        })
        .collect();

    let mut point_rng = rng::rng_for(seed, "blob-points");
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                let z: f64 = StandardNormal.sample(&mut point_rng);
                data.push(c + sigma * z);
            }
            labels.push(k);
        }
    }
    let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    data.iter_mut().for_each(|v| *v = (*v - lo) / span);

    LabeledDataset::new(
        Matrix::from_vec(classes * per_class, dim, data)?,
        labels,
        classes,
        None,
    )
}

/// Seeded binary `edge x edge` templates, one per class, with pairwise
/// Hamming distance at least `0.2 * edge^2`.
pub fn pattern_templates(classes: usize, edge: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if edge < 4 {
        return Err(Error::config(format!(
            "pattern edge must be >= 4, got {edge}"
        )));
    }
    if classes < 2 {
        return Err(Error::config("patterns need at least two classes"));
    }
    let pixels = edge * edge;
    let min_distance = (0.2 * pixels as f64).ceil() as usize;
    let mut rng = rng::rng_for(seed, "pattern-templates");
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let mut attempts = 0;
    while templates.len() < classes {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::config(format!(
                "could not draw {classes} templates at distance >= {min_distance}"
            )));
        }
        let candidate: Vec<f64> = (0..pixels)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let far_enough = templates
            .iter()
            .all(|t| hamming(t, &candidate) >= min_distance);
        if far_enough {
            templates.push(candidate);
        }
    }
    Ok(templates)
}

pub(crate) fn hamming(a: &[f64], b: &[f64]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Image-shaped data: each sample is its class template plus Gaussian pixel
/// noise, clipped to `[0, 1]`.
pub fn make_patterns(
    classes: usize,
    edge: usize,
    per_class: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::config("noise sigma must be nonnegative"));
    }
    let templates = pattern_templates(classes, edge, seed)?;
    let mut rng = rng::rng_for(seed, "pattern-noise");
    let mut data = Vec::with_capacity(classes * per_class * edge * edge);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (k, t) in templates.iter().enumerate() {
        for _ in 0..per_class {
            for &p in t {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((p + noise_sigma * z).clamp(0.0, 1.0));
            }
            labels.push(k);
        }
    }
    LabeledDataset::new(
        Matrix::from_vec(classes * per_class, edge * edge, data)?,
        labels,
        classes,
        Some(ImageShape {
            height: edge,
            width: edge,
            channels: 1,
        }),
    )
}

/// How the forget set is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    /// Every training row of one class.
    ClassWise { class: usize },
    /// `round(ratio * N)` rows drawn without replacement from the whole set.
    Random { ratio: f64, seed: u64 },
    /// `round(ratio * N_c)` rows drawn from the union of `classes`.
    RandomInClasses {
        classes: Vec<usize>,
        ratio: f64,
        seed: u64,
    },
    /// Caller-provided index set.
    Explicit,
}

impl SplitSpec {
    pub fn seed(&self) -> Option<u64> {
        match self {
            SplitSpec::Random { seed, .. } | SplitSpec::RandomInClasses { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    /// The class removed entirely, if this is class-wise forgetting.
    pub fn forgotten_class(&self) -> Option<usize> {
        match self {
            SplitSpec::ClassWise { class } => Some(*class),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgetSplit {
    pub spec: SplitSpec,
    pub forget_indices: Vec<usize>,
    pub retain_indices: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    spec: SplitSpec,
    seed: Option<u64>,
    total: usize,
    forget_indices: Vec<usize>,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config(format!(
            "forget ratio must lie in (0, 1), got {ratio}"
        )));
    }
    Ok(())
}

pub fn split_forget_retain(data: &LabeledDataset, spec: &SplitSpec) -> Result<ForgetSplit> {
    let n = data.len();
    let forget = match spec {
        SplitSpec::ClassWise { class } => {
            let idx = data.indices_of_class(*class);
            if idx.is_empty() {
                return Err(Error::input(format!("class {class} has no training rows")));
            }
            idx
        }
        SplitSpec::Random { ratio, seed } => {
            check_ratio(*ratio)?;
            let m = (ratio * n as f64).round() as usize;
            let mut rng = rng::rng_for(*seed, "forget-split");
            let mut idx = index::sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        SplitSpec::RandomInClasses {
            classes,
            ratio,
            seed,
        } => {
            check_ratio(*ratio)?;
            let pool: Vec<usize> = (0..n)
                .filter(|&i| classes.contains(&data.labels[i]))
                .collect();
            if pool.is_empty() {
                return Err(Error::input(format!(
                    "classes {classes:?} have no training rows"
                )));
            }
            let m = (ratio * pool.len() as f64).round() as usize;
            let mut rng = rng::rng_for(*seed, "forget-split");
            let mut idx: Vec<usize> = index::sample(&mut rng, pool.len(), m)
                .into_iter()
                .map(|j| pool[j])
                .collect();
            idx.sort_unstable();
            idx
        }
        SplitSpec::Explicit => {
            return Err(Error::config(
                "explicit splits are built with ForgetSplit::from_forget_indices",
            ))
        }
    };
    ForgetSplit::from_forget_indices(spec.clone(), forget, n)
}

impl ForgetSplit {
    /// Validates `forget` against `total` rows and derives the complement.
    pub fn from_forget_indices(
        spec: SplitSpec,
        mut forget: Vec<usize>,
        total: usize,
    ) -> Result<Self> {
        forget.sort_unstable();
        if forget.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::input("duplicate forget index"));
        }
        if let Some(&bad) = forget.iter().find(|&&i| i >= total) {
            return Err(Error::input(format!(
                "forget index {bad} out of range for {total} rows"
            )));
        }
        let mut member = vec![false; total];
        forget.iter().for_each(|&i| member[i] = true);
        let retain = (0..total).filter(|&i| !member[i]).collect();
        Ok(Self {
            spec,
            forget_indices: forget,
            retain_indices: retain,
        })
    }

    pub fn total(&self) -> usize {
        self.forget_indices.len() + self.retain_indices.len()
    }

    pub fn forget_set(&self, data: &LabeledDataset) -> LabeledDataset {
        data.subset(&self.forget_indices)
    }

    pub fn retain_set(&self, data: &LabeledDataset) -> LabeledDataset {
        data.subset(&self.retain_indices)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&SplitFile {
            spec: self.spec.clone(),
            seed: self.spec.seed(),
            total: self.total(),
            forget_indices: self.forget_indices.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SplitFile = serde_json::from_str(text)?;
        if file.seed != file.spec.seed() {
            return Err(Error::input("split seed disagrees with its spec"));
        }
        Self::from_forget_indices(file.spec, file.forget_indices, file.total)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let text = self.to_json().expect("split serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// Reads `label,f0,...,f{d-1}` rows.
pub fn load_csv(
    path: &Path,
    class_count: Option<usize>,
    image_shape: Option<ImageShape>,
) -> Result<LabeledDataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("label") {
        return Err(Error::input(format!(
            "{}: first column must be `label`",
            path.display()
        )));
    }
    let dim = headers.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != dim + 1 {
            return Err(Error::shape(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                line + 1,
                record.len(),
                dim + 1
            )));
        }
        let parse_err = |field: &str| {
            Error::input(format!(
                "{}: row {}: bad value `{field}`",
                path.display(),
                line + 1
            ))
        };
        let label = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(&record[0]))?;
        labels.push(label);
        for field in record.iter().skip(1) {
            data.push(field.trim().parse::<f64>().map_err(|_| parse_err(field))?);
        }
    }
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    LabeledDataset::new(
        Matrix::from_vec(labels.len(), dim, data)?,
        labels,
        classes,
        image_shape,
    )
}

pub fn write_csv(data: &LabeledDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..data.dim()).map(|j| format!("f{j}")));
    writer.write_record(&header)?;
    for (row, &y) in data.features.iter_rows().zip(&data.labels) {
        let mut record = vec![y.to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
