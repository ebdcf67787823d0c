//! Feature datasets: synthetic generation, CSV interchange, class-disjoint
//! splits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DadaError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub name: String,
    pub features: Tensor,
    /// Dense labels in `[0, num_classes)`.
    pub labels: Vec<usize>,
    /// Row indices of each class.
    pub class_index: Vec<Vec<usize>>,
    /// Original label token of each dense class.
    pub label_names: Vec<String>,
}

impl FeatureDataset {
    pub fn new(name: impl Into<String>, features: Tensor, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(DadaError::Dimension {
                op: "dataset",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let num_classes = label_names.len();
        let mut class_index = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(DadaError::Index {
                    op: "dataset",
                    index: l,
                    bound: num_classes,
                });
            }
            class_index[l].push(i);
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            class_index,
            label_names,
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

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    /// Subset of rows with labels re-indexed densely in first-appearance order.
    pub fn subset(&self, rows: &[usize], name: impl Into<String>) -> Result<Self> {
        let features = self.features.select_rows(rows)?;
        let mut remap = vec![usize::MAX; self.num_classes()];
        let mut names = Vec::new();
        let labels = rows
            .iter()
            .map(|&r| {
                let old = self.labels[r];
                if remap[old] == usize::MAX {
                    remap[old] = names.len();
                    names.push(self.label_names[old].clone());
                }
                remap[old]
            })
            .collect();
        Self::new(name, features, labels, names)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Radius of the sphere the class centers are drawn on.
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 8,
            dim: 32,
            samples_per_class: 100,
            center_scale: 4.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return Err(DadaError::config("synthetic spec needs positive counts"));
        }
        if !(self.center_scale > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(DadaError::config(
                "synthetic spec needs center_scale > 0 and noise_sigma >= 0",
            ));
        }
        Ok(())
    }
}

/// Gaussian class clusters around centers uniform on a sphere.
pub fn synth_generate(spec: &SynthSpec) -> Result<FeatureDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| spec.center_scale * x / norm).collect()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| DadaError::config(e.to_string()))?;
    let n = spec.num_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            data.extend(center.iter().map(|&m| m + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    let names = (0..spec.num_classes).map(|c| c.to_string()).collect();
    FeatureDataset::new("synth", Tensor::matrix(n, d, data)?, labels, names)
}

/// Reads `label,f0,...,f{d-1}` rows. Labels are arbitrary tokens, re-indexed
/// densely in first-appearance order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DadaError::io(path, e))?;
    let parse_err = |line: usize, msg: String| DadaError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.first() != Some(&"label") || columns.len() < 2 {
        return Err(parse_err(1, format!("expected header 'label,f0,...', got '{header}'")));
    }
    let d = columns.len() - 1;

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut lookup = std::collections::HashMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(parse_err(lineno, format!("expected {} fields, found {}", d + 1, fields.len())));
        }
        let token = fields[0].to_string();
        let next = names.len();
        let label = *lookup.entry(token.clone()).or_insert_with(|| {
            names.push(token);
            next
        });
        labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("non-numeric field '{f}'")))?;
            if !v.is_finite() {
                return Err(parse_err(lineno, format!("non-finite field '{f}'")));
            }
            data.push(v);
        }
    }
    if labels.len() < 2 {
        return Err(parse_err(
            text.lines().count().max(1),
            format!("need at least 2 data rows, found {}", labels.len()),
        ));
    }
    let name = path.file_stem().map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned());
    FeatureDataset::new(name, Tensor::matrix(labels.len(), d, data)?, labels, names)
}

/// CSV text with full round-trip precision; `prefix` names the value columns.
pub fn to_csv(features: &Tensor, labels: &[String], prefix: &str) -> String {
    let d = features.cols();
    let mut out = String::from("label");
    for j in 0..d {
        write!(out, ",{prefix}{j}").expect("string write");
    }
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        out.push_str(label);
        for v in features.row(i) {
            // `{:?}` prints the shortest string that parses back bit-exactly
            write!(out, ",{v:?}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let labels: Vec<String> = dataset.labels.iter().map(|&l| dataset.label_names[l].clone()).collect();
    fs::write(path, to_csv(&dataset.features, &labels, "f")).map_err(|e| DadaError::io(path, e))
}

/// Class-disjoint split: classes are shuffled with `seed`, the first
/// `⌈fraction·C⌉` go to train and the rest to test.
pub fn split(dataset: &FeatureDataset, train_fraction: f64, seed: u64) -> Result<(FeatureDataset, FeatureDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DadaError::config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let c = dataset.num_classes();
    let n_train = (train_fraction * c as f64).ceil() as usize;
    if n_train < 2 || c - n_train < 2 {
        return Err(DadaError::config(format!(
            "split of {c} classes at {train_fraction} leaves {n_train} train / {} test classes; need >= 2 each",
            c - n_train
        )));
    }
    let mut classes: Vec<usize> = (0..c).collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_train = vec![false; c];
    classes[..n_train].iter().for_each(|&k| is_train[k] = true);
    let (train_rows, test_rows): (Vec<usize>, Vec<usize>) =
        (0..dataset.len()).partition(|&i| is_train[dataset.labels[i]]);
    Ok((
        dataset.subset(&train_rows, format!("{}-train", dataset.name))?,
        dataset.subset(&test_rows, format!("{}-test", dataset.name))?,
    ))
}
