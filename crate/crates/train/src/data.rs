//! Feature datasets: CSV ingestion, synthetic Gaussian classes, and the
//! class-disjoint train/test split.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use dmlbench_core::sampling::{class_index, ClassIndex};
use dmlbench_core::{Batch, SamplerRng};
use flate2::read::GzDecoder;
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

/// Feature matrix with contiguous class ids `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Array2<f64>,
    labels: Vec<usize>,
    class_index: ClassIndex,
    /// Original label of each contiguous class id.
    label_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        label_names: Vec<String>,
    ) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(TrainError::config(format!("{} rows but {} labels", features.nrows(), labels.len())));
        }
        if labels.is_empty() || features.ncols() == 0 {
            return Err(TrainError::config("dataset is empty"));
        }
        let class_index = class_index(&labels);
        if class_index.iter().any(Vec::is_empty) || class_index.len() != label_names.len() {
            return Err(TrainError::config("class ids must be contiguous and named"));
        }
        Ok(Self { name: name.into(), features, labels, class_index, label_names })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_index(&self) -> &ClassIndex {
        &self.class_index
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// Rows `ids` as a feature matrix and label vector, in order.
    pub fn rows(&self, ids: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (self.features.select(Axis(0), ids), ids.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn as_batch(&self) -> Result<Batch> {
        Ok(Batch::new(self.features.clone(), self.labels.clone())?)
    }

    /// Keeps the given classes (in the given order), relabelled `0..`.
    pub fn subset_classes(&self, classes: &[usize], name: impl Into<String>) -> Result<Dataset> {
        let mut remap = vec![usize::MAX; self.n_classes()];
        for (new, &old) in classes.iter().enumerate() {
            if old >= self.n_classes() || remap[old] != usize::MAX {
                return Err(TrainError::config(format!("class {old} is out of range or repeated")));
            }
            remap[old] = new;
        }
        let ids: Vec<usize> = (0..self.len()).filter(|&i| remap[self.labels[i]] != usize::MAX).collect();
        let (features, labels) = self.rows(&ids);
        let labels = labels.into_iter().map(|l| remap[l]).collect();
        let names = classes.iter().map(|&c| self.label_names[c].clone()).collect();
        Dataset::new(name, features, labels, names)
    }
}

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let io = |source| TrainError::Io { path: path.to_path_buf(), source };
    let file = BufReader::new(File::open(path).map_err(io)?);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(file)))
    } else {
        Ok(Box::new(file))
    }
}

/// Reads `label,f0,...,f{D-1}` rows (gzip when the name ends in `.gz`).
/// Labels are remapped to contiguous ids in sorted order (numeric when every
/// label is an integer); row order is preserved.
pub fn load_feature_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |line: u64, msg: String| TrainError::Parse { path: path.to_path_buf(), line, msg };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(open(path)?);
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if header.get(0).map(str::trim) != Some("label") {
        return Err(parse_err(1, "first column must be `label`".into()));
    }
    for (j, name) in header.iter().skip(1).enumerate() {
        if name.trim() != format!("f{j}") {
            return Err(parse_err(1, format!("expected column f{j}, found `{name}`")));
        }
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(parse_err(1, "no feature columns".into()));
    }

    let mut raw_labels = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", dim + 1, record.len())));
        }
        raw_labels.push(record[0].trim().to_string());
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v: f64 =
                cell.trim().parse().map_err(|_| parse_err(line, format!("column f{j}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column f{j}: non-finite value")));
            }
            values.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(parse_err(1, "file has no data rows".into()));
    }

    let mut names: Vec<String> = raw_labels.clone();
    names.sort();
    names.dedup();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().unwrap());
    }
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let labels = raw_labels.iter().map(|l| index[l.as_str()]).collect();
    let features = Array2::from_shape_vec((raw_labels.len(), dim), values).expect("row lengths checked");
    let name = path.file_name().map_or_else(|| "dataset".into(), |n| n.to_string_lossy().into_owned());
    Dataset::new(name, features, labels, names)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    /// Per-coordinate standard deviation of the class centres.
    pub center_spread: f64,
    /// Per-coordinate standard deviation of samples around their centre.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_classes: 16, samples_per_class: 40, input_dim: 32, center_spread: 5.0, noise_sigma: 1.0, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples_per_class == 0 || self.input_dim == 0 {
            return Err(TrainError::config("synthetic counts and dimension must be positive"));
        }
        if !(self.center_spread > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(TrainError::config("center_spread must be positive and noise_sigma non-negative"));
        }
        Ok(())
    }

    /// `center_spread / noise_sigma`.
    pub fn separability(&self) -> f64 {
        self.center_spread / self.noise_sigma
    }
}

/// Isotropic Gaussian classes, rows grouped by class.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = SamplerRng::new(spec.seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let centres = Array2::from_shape_simple_fn((spec.n_classes, spec.input_dim), || spec.center_spread * normal());
    let n = spec.n_classes * spec.samples_per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / spec.samples_per_class).collect();
    let mut features = Array2::zeros((n, spec.input_dim));
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = centres[[labels[i], j]] + spec.noise_sigma * normal();
        }
    }
    let name = format!("synthetic-{}x{}-s{}", spec.n_classes, spec.samples_per_class, spec.seed);
    Dataset::new(name, features, labels, (0..spec.n_classes).map(|c| c.to_string()).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SplitSpec {
    /// First `ceil(C/2)` classes train, the rest test.
    #[default]
    FirstHalfClasses,
    ExplicitClassLists {
        train: Vec<usize>,
        test: Vec<usize>,
    },
    /// First `round(fraction * C)` classes train.
    Fraction {
        train_fraction: f64,
    },
}

/// Class-disjoint split; each side is relabelled `0..`.
pub fn split_disjoint_classes(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let c = ds.n_classes();
    if c < 2 {
        return Err(TrainError::config("splitting needs at least two classes"));
    }
    let (train, test): (Vec<usize>, Vec<usize>) = match spec {
        SplitSpec::FirstHalfClasses => {
            let k = c.div_ceil(2);
            ((0..k).collect(), (k..c).collect())
        }
        SplitSpec::Fraction { train_fraction } => {
            if !(0.0..=1.0).contains(train_fraction) {
                return Err(TrainError::config("train_fraction must lie in [0, 1]"));
            }
            let k = (train_fraction * c as f64).round() as usize;
            ((0..k).collect(), (k..c).collect())
        }
        SplitSpec::ExplicitClassLists { train, test } => {
            if train.iter().any(|t| test.contains(t)) {
                return Err(TrainError::config("train and test class lists overlap"));
            }
            (train.clone(), test.clone())
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(TrainError::config("split leaves one side without classes"));
    }
    Ok((
        ds.subset_classes(&train, format!("{}-train", ds.name))?,
        ds.subset_classes(&test, format!("{}-test", ds.name))?,
    ))
}
