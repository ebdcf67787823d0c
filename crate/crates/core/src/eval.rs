//! Retrieval metrics, alignment diagnostics and embedding dumps.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{to_csv, FeatureDataset};
use crate::error::{DadaError, Result};
use crate::nn::{CategoryDiscriminator, Models};
use crate::tensor::{matmul_nt_raw, Tensor};

/// Allowed deviation of a row norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_KS: [usize; 4] = [1, 2, 4, 8];

pub const PROBE_TRAIN_FRACTION: f64 = 0.7;
pub const PROBE_ITERATIONS: usize = 200;
pub const PROBE_LEARNING_RATE: f64 = 0.5;

/// Unit embeddings with labels; queries retrieve from every other row.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    embeddings: Tensor,
    labels: Vec<usize>,
    sims: Vec<f64>,
}

impl RetrievalIndex {
    pub fn new(embeddings: Tensor, labels: Vec<usize>) -> Result<Self> {
        let n = embeddings.rows();
        if n != labels.len() {
            return Err(DadaError::Dimension {
                op: "retrieval_index",
                lhs: embeddings.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if n < 2 {
            return Err(DadaError::contract(format!("retrieval index needs N >= 2, got {n}")));
        }
        for i in 0..n {
            let norm = embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
                return Err(DadaError::contract(format!("row {i} has norm {norm}, expected unit rows")));
            }
        }
        let d = embeddings.cols();
        let sims = matmul_nt_raw(embeddings.data(), embeddings.data(), n, d, n);
        Ok(Self {
            embeddings,
            labels,
            sims,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        self.sims[i * self.len() + j]
    }

    /// Every other row, by descending similarity, ties by ascending index.
    pub fn ranking(&self, query: usize) -> Vec<usize> {
        let n = self.len();
        let row = &self.sims[query * n..(query + 1) * n];
        let mut order: Vec<usize> = (0..n).filter(|&j| j != query).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        order
    }
}

/// Fraction of queries with a same-class row among their top `K`.
pub fn recall_at_k(index: &RetrievalIndex, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let n = index.len();
    if ks.is_empty() || ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DadaError::config(format!("recall ks must be positive and strictly ascending, got {ks:?}")));
    }
    let kmax = *ks.last().expect("non-empty");
    if kmax >= n {
        return Err(DadaError::config(format!("recall@{kmax} needs more than {kmax} items, index has {n}")));
    }
    let mut hits = vec![0usize; ks.len()];
    for q in 0..n {
        let first = index.ranking(q).iter().position(|&j| index.labels[j] == index.labels[q]);
        if let Some(pos) = first {
            for (h, &k) in hits.iter_mut().zip(ks) {
                if pos < k {
                    *h += 1;
                }
            }
        }
    }
    Ok(ks.iter().zip(hits).map(|(&k, h)| (k, h as f64 / n as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapAtR {
    pub value: f64,
    /// Queries without any other same-class item.
    pub skipped: usize,
}

/// Mean average precision over the first `R` retrieved rows, where `R` is
/// the number of other same-class rows.
pub fn map_at_r(index: &RetrievalIndex) -> MapAtR {
    let n = index.len();
    let mut class_size: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in &index.labels {
        *class_size.entry(l).or_default() += 1;
    }
    let (mut total, mut counted, mut skipped) = (0.0, 0usize, 0usize);
    for q in 0..n {
        let r = class_size[&index.labels[q]] - 1;
        if r == 0 {
            skipped += 1;
            continue;
        }
        let mut correct = 0usize;
        let mut ap = 0.0;
        for (i, &j) in index.ranking(q).iter().take(r).enumerate() {
            if index.labels[j] == index.labels[q] {
                correct += 1;
                ap += correct as f64 / (i + 1) as f64;
            }
        }
        total += ap / r as f64;
        counted += 1;
    }
    if skipped > 0 {
        log::warn!("map_at_r skipped {skipped} singleton-class queries");
    }
    MapAtR {
        value: if counted == 0 { 0.0 } else { total / counted as f64 },
        skipped,
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Held-out accuracy of a logistic-regression probe separating `samples`
/// (label 0) from `proxies` (label 1). The smaller set is resampled with
/// replacement to the size of the larger. 0.5 means indistinguishable.
pub fn domain_probe<R: Rng + ?Sized>(samples: &Tensor, proxies: &Tensor, rng: &mut R) -> Result<f64> {
    let d = samples.cols();
    if samples.rows() == 0 || proxies.rows() == 0 {
        return Err(DadaError::contract("domain probe needs two non-empty sets"));
    }
    if proxies.cols() != d {
        return Err(DadaError::Dimension {
            op: "domain_probe",
            lhs: samples.shape().to_vec(),
            rhs: proxies.shape().to_vec(),
        });
    }
    let target = samples.rows().max(proxies.rows());
    let mut resample = |set: &Tensor| -> Vec<usize> {
        if set.rows() == target {
            (0..target).collect()
        } else {
            (0..target).map(|_| rng.random_range(0..set.rows())).collect()
        }
    };
    let mut rows: Vec<(&[f64], f64)> = resample(samples).into_iter().map(|i| (samples.row(i), 0.0)).collect();
    rows.extend(resample(proxies).into_iter().map(|i| (proxies.row(i), 1.0)));
    rows.shuffle(rng);

    let n_train = ((rows.len() as f64) * PROBE_TRAIN_FRACTION).round() as usize;
    let n_train = n_train.clamp(1, rows.len() - 1);
    let (train, test) = rows.split_at(n_train);

    let mut mean = vec![0.0; d];
    for (x, _) in train {
        mean.iter_mut().zip(*x).for_each(|(m, v)| *m += v / n_train as f64);
    }
    let mut scale = vec![0.0; d];
    for (x, _) in train {
        scale.iter_mut().zip(*x).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n_train as f64);
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 0.0 };
    }
    let standardize = |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) * s).collect() };
    let xs: Vec<Vec<f64>> = train.iter().map(|(x, _)| standardize(x)).collect();

    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..PROBE_ITERATIONS {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, (_, y)) in xs.iter().zip(train) {
            let z = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = sigmoid(z) - y;
            gw.iter_mut().zip(x).for_each(|(g, v)| *g += r * v);
            gb += r;
        }
        let step = PROBE_LEARNING_RATE / n_train as f64;
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= step * g);
        b -= step * gb;
    }
    let correct = test
        .iter()
        .filter(|(x, y)| {
            let z = b + standardize(x).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            (z > 0.0) == (*y == 1.0)
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// `counts[i][j]`: rows of true class `i` predicted as class `j` by `f_C`.
pub fn confusion_matrix(cd: &CategoryDiscriminator, rows: &Tensor, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    let c = cd.num_classes();
    if rows.rows() != labels.len() {
        return Err(DadaError::Dimension {
            op: "confusion_matrix",
            lhs: rows.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(DadaError::Index {
            op: "confusion_matrix",
            index: bad,
            bound: c,
        });
    }
    let logits = cd.logits(rows)?;
    let mut counts = vec![vec![0usize; c]; c];
    for (i, &l) in labels.iter().enumerate() {
        counts[l][argmax(logits.row(i))] += 1;
    }
    Ok(counts)
}

/// First index of the maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = j;
        }
    }
    best
}

/// Writes `label,e0,...,e{d-1}` with round-trip precision.
pub fn dump_embeddings(index: &RetrievalIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let labels: Vec<String> = index.labels.iter().map(usize::to_string).collect();
    fs::write(path, to_csv(&index.embeddings, &labels, "e")).map_err(|e| DadaError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub map_at_r: f64,
    pub map_skipped: usize,
    pub domain_probe_acc: f64,
}

/// Retrieval on `test`, and the probe between embedded `train_features`
/// and the normalized proxies. `probe_seed` fixes the probe's draws.
pub fn evaluate_models(
    models: &Models,
    train_features: &Tensor,
    test: &FeatureDataset,
    ks: &[usize],
    probe_seed: u64,
) -> Result<EvalReport> {
    let expected = models.generator.input_dim();
    for (what, t) in [("train", train_features), ("test", &test.features)] {
        if t.cols() != expected {
            return Err(DadaError::config(format!(
                "{what} features have dimension {}, model expects {expected}",
                t.cols()
            )));
        }
    }
    let index = RetrievalIndex::new(models.generator.embed(&test.features)?, test.labels.clone())?;
    let recall_at = recall_at_k(&index, ks)?;
    let map = map_at_r(&index);
    let train_emb = models.generator.embed(train_features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let domain_probe_acc = domain_probe(&train_emb, &models.proxies.normalized(), &mut rng)?;
    Ok(EvalReport {
        recall_at,
        map_at_r: map.value,
        map_skipped: map.skipped,
        domain_probe_acc,
    })
}

/// One line of `metrics.jsonl`. Evaluation fields are `null` on epochs off
/// the evaluation schedule; disabled loss terms are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss_proxy: Option<f64>,
    pub loss_adv: Option<f64>,
    pub loss_cls: Option<f64>,
    pub loss_discrepancy: Option<f64>,
    pub recall_at: Option<BTreeMap<usize, f64>>,
    pub map_at_r: Option<f64>,
    pub domain_probe_acc: Option<f64>,
    /// Kept out of the serialized record so metric files stay reproducible.
    #[serde(skip)]
    pub wallclock_s: f64,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics record serializes")
    }
}
