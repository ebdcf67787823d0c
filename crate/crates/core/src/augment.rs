//! Mixture-domain construction.
//!
//! Each iteration builds three aligned row sets on the graph: the augmented
//! samples `X̃`, the mixture domain `M̃` (samples mixed toward their class
//! proxies, then mixed within class), and the in-batch proxies.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{DadaError, Result};
use crate::nn::NORMALIZE_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub const UNIFORM: BetaParams = BetaParams { alpha: 1.0, beta: 1.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(DadaError::config(format!(
                "Beta parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Marsaglia–Tsang Gamma(shape, 1) draw. Shapes below one use the
/// `Gamma(shape + 1) · U^{1/shape}` boost.
fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let u: f64 = rng.random::<f64>();
        return sample_gamma(shape + 1.0, rng) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random::<f64>();
        if u < 1.0 - 0.0331 * x.powi(4) || u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// One Beta draw as `g₁ / (g₁ + g₂)`.
pub fn sample_beta<R: Rng + ?Sized>(params: BetaParams, rng: &mut R) -> f64 {
    loop {
        let g1 = sample_gamma(params.alpha, rng);
        let g2 = sample_gamma(params.beta, rng);
        let s = g1 + g2;
        if s > 0.0 {
            return g1 / s;
        }
    }
}

/// Uniformly random same-class partner `≠ self` for every row.
pub fn sample_pairing<R: Rng + ?Sized>(labels: &[usize], rng: &mut R) -> Result<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if let Some((class, _)) = groups.iter().find(|(_, m)| m.len() < 2) {
        return Err(DadaError::contract(format!(
            "class {class} has a single sample in the batch; within-class mixing needs >= 2"
        )));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let members = &groups[l];
            let pos = members.iter().position(|&m| m == i).expect("member");
            let k = rng.random_range(0..members.len() - 1);
            Ok(members[if k >= pos { k + 1 } else { k }])
        })
        .collect()
}

fn check_pairing(labels: &[usize], pairing: &[usize]) -> Result<()> {
    if pairing.len() != labels.len() {
        return Err(DadaError::contract(format!(
            "pairing covers {} rows, batch has {}",
            pairing.len(),
            labels.len()
        )));
    }
    for (i, &j) in pairing.iter().enumerate() {
        if j >= labels.len() || j == i || labels[j] != labels[i] {
            return Err(DadaError::contract(format!(
                "row {i} paired with {j}: partner must be a distinct same-class row"
            )));
        }
    }
    Ok(())
}

/// `λ·x + (1−λ)·p` row-wise; `p_rows[i]` is the proxy of `x[i]`'s class.
pub fn mix_proxy_sample(g: &mut Graph, x: Var, p_rows: Var, lambda: f64) -> Result<Var> {
    if g.shape(x) != g.shape(p_rows) {
        return Err(DadaError::contract(format!(
            "sample/proxy rows misaligned: {:?} vs {:?}",
            g.shape(x),
            g.shape(p_rows)
        )));
    }
    g.lincomb(x, lambda, p_rows, 1.0 - lambda)
}

/// `μ·row_i + (1−μ)·row_pair(i)`.
pub fn mix_within_class(g: &mut Graph, rows: Var, labels: &[usize], mu: f64, pairing: &[usize]) -> Result<Var> {
    if g.value(rows).rows() != labels.len() {
        return Err(DadaError::contract("labels do not match row count"));
    }
    check_pairing(labels, pairing)?;
    let partners = g.gather_rows(rows, pairing)?;
    g.lincomb(rows, mu, partners, 1.0 - mu)
}

/// Per-iteration random draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixPlan {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub pairing: Vec<usize>,
    /// Within-class mixing and sample/proxy interpolation enabled.
    pub augment: bool,
}

impl MixPlan {
    /// Draws `λ ~ Beta(α, β)`, `μ₁, μ₂ ~ Beta(1, 1)`, then a pairing.
    pub fn sample<R: Rng + ?Sized>(labels: &[usize], beta: BetaParams, rng: &mut R) -> Result<Self> {
        let lambda = sample_beta(beta, rng);
        let mu1 = sample_beta(BetaParams::UNIFORM, rng);
        let mu2 = sample_beta(BetaParams::UNIFORM, rng);
        let pairing = sample_pairing(labels, rng)?;
        Ok(Self {
            lambda,
            mu1,
            mu2,
            pairing,
            augment: true,
        })
    }

    /// No mixing: `X̃ = X` and the mixture domain is the per-sample proxies.
    pub fn identity(n: usize) -> Self {
        Self {
            lambda: 0.0,
            mu1: 1.0,
            mu2: 1.0,
            pairing: (0..n).collect(),
            augment: false,
        }
    }
}

/// The three domains of one iteration, as graph nodes.
#[derive(Debug, Clone)]
pub struct MixBatch {
    /// `X̃`, unit rows.
    pub x_aug: Var,
    /// `M̃`, unit rows, same row count as `x_aug`.
    pub m_aug: Var,
    /// Normalized proxies of the distinct in-batch classes.
    pub proxies_batch: Var,
    /// Normalized full proxy bank.
    pub proxies_all: Var,
    pub labels_aug: Vec<usize>,
    /// Distinct in-batch classes, ascending; row `k` of `proxies_batch`.
    pub batch_classes: Vec<usize>,
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
}

/// Applies a plan to generator outputs `emb` (unit rows) and the raw
/// proxy bank, entirely on the graph so gradients reach both.
pub fn apply_mix_plan(g: &mut Graph, emb: Var, labels: &[usize], bank: Var, plan: &MixPlan) -> Result<MixBatch> {
    let n = g.value(emb).rows();
    if labels.len() != n {
        return Err(DadaError::contract("labels do not match embedding rows"));
    }
    let num_classes = g.value(bank).rows();
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(DadaError::Index {
            op: "build_mix_batch",
            index: bad,
            bound: num_classes,
        });
    }
    let proxies_all = g.l2_normalize_rows(bank, NORMALIZE_EPS)?;
    let p_rows = g.gather_rows(proxies_all, labels)?;
    let mut batch_classes = labels.to_vec();
    batch_classes.sort_unstable();
    batch_classes.dedup();
    let proxies_batch = g.gather_rows(proxies_all, &batch_classes)?;

    let (x_aug, m_aug, labels_aug) = if plan.augment {
        let d_hat = mix_proxy_sample(g, emb, p_rows, plan.lambda)?;
        let x_mix = mix_within_class(g, emb, labels, plan.mu1, &plan.pairing)?;
        let d_mix = mix_within_class(g, d_hat, labels, plan.mu2, &plan.pairing)?;
        let x_cat = g.concat_rows(&[emb, x_mix])?;
        let m_cat = g.concat_rows(&[d_hat, d_mix])?;
        let x_aug = g.l2_normalize_rows(x_cat, NORMALIZE_EPS)?;
        let m_aug = g.l2_normalize_rows(m_cat, NORMALIZE_EPS)?;
        (x_aug, m_aug, [labels, labels].concat())
    } else {
        (emb, p_rows, labels.to_vec())
    };

    Ok(MixBatch {
        x_aug,
        m_aug,
        proxies_batch,
        proxies_all,
        labels_aug,
        batch_classes,
        lambda: plan.lambda,
        mu1: plan.mu1,
        mu2: plan.mu2,
    })
}

/// Samples a plan from `rng` and applies it.
pub fn build_mix_batch<R: Rng + ?Sized>(
    g: &mut Graph,
    emb: Var,
    labels: &[usize],
    bank: Var,
    beta: BetaParams,
    rng: &mut R,
) -> Result<MixBatch> {
    let plan = MixPlan::sample(labels, beta, rng)?;
    apply_mix_plan(g, emb, labels, bank, &plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(params: BetaParams, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| sample_beta(params, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var)
    }

    #[test]
    fn beta_moments() {
        let (m, _) = moments(BetaParams::UNIFORM, 100_000, 1);
        assert!((m - 0.5).abs() < 0.01, "{m}");
        for (a, b) in [(2.0, 1.0), (5.0, 2.0), (0.5, 0.5)] {
            let p = BetaParams::new(a, b).unwrap();
            let (m, v) = moments(p, 100_000, 7);
            assert!((m - p.mean()).abs() < 0.01, "({a},{b}) mean {m}");
            let want = a * b / ((a + b).powi(2) * (a + b + 1.0));
            assert!((v - want).abs() < 0.05 * want, "({a},{b}) var {v} vs {want}");
        }
    }

    #[test]
    fn beta_rejects_nonpositive() {
        assert!(BetaParams::new(0.0, 1.0).is_err());
        assert!(BetaParams::new(1.0, -2.0).is_err());
    }

    #[test]
    fn pairing_is_same_class_and_not_self() {
        let labels = [0, 1, 0, 2, 1, 2, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = sample_pairing(&labels, &mut rng).unwrap();
            check_pairing(&labels, &p).unwrap();
        }
        assert!(sample_pairing(&[0, 0, 1], &mut rng).is_err());
    }

    #[test]
    fn proxy_mixing_endpoints() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let p = g.constant(Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap());
        let one = mix_proxy_sample(&mut g, x, p, 1.0).unwrap();
        assert_eq!(g.value(one).data(), &[1.0, 0.0]);
        let zero = mix_proxy_sample(&mut g, x, p, 0.0).unwrap();
        assert_eq!(g.value(zero).data(), &[0.0, 1.0]);
        let half = mix_proxy_sample(&mut g, x, p, 0.5).unwrap();
        assert_eq!(g.value(half).data(), &[0.5, 0.5]);
        let bad = g.constant(Tensor::zeros(2, 2));
        assert!(mix_proxy_sample(&mut g, x, bad, 0.5).is_err());
    }

    #[test]
    fn within_class_mixing_cases() {
        let mut g = Graph::new();
        let rows = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let same = mix_within_class(&mut g, rows, &[3, 3], 1.0, &[1, 0]).unwrap();
        assert_eq!(g.value(same).data(), g.value(rows).data());
        let half = mix_within_class(&mut g, rows, &[3, 3], 0.5, &[1, 0]).unwrap();
        assert_eq!(g.value(half).data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(mix_within_class(&mut g, rows, &[3, 4], 0.5, &[1, 0]).is_err());
        assert!(mix_within_class(&mut g, rows, &[3, 3], 0.5, &[0, 1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn mixed_rows_stay_in_parent_hull(seed in any::<u64>(), mu in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels = [0, 0, 1, 1, 1, 2, 2];
            let data: Vec<f64> = (0..labels.len() * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let t = Tensor::matrix(labels.len(), 3, data).unwrap();
            let pairing = sample_pairing(&labels, &mut rng).unwrap();
            let mut g = Graph::new();
            let rows = g.constant(t.clone());
            let mixed = mix_within_class(&mut g, rows, &labels, mu, &pairing).unwrap();
            let out = g.value(mixed);
            for i in 0..labels.len() {
                for j in 0..3 {
                    let (a, b) = (t.get(i, j), t.get(pairing[i], j));
                    let v = out.get(i, j);
                    prop_assert!(v >= a.min(b) - 1e-12 && v <= a.max(b) + 1e-12);
                }
            }
        }
    }

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        let mut g = Graph::new();
        let data = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
        let x = g.constant(Tensor::matrix(n, d, data).unwrap());
        let y = g.l2_normalize_rows(x, NORMALIZE_EPS).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn mix_batch_doubles_and_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let emb = unit_rows(&mut rng, 4, 5);
        let bank = Tensor::matrix(3, 5, (0..15).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let labels = [2, 0, 2, 0];
        let mut g = Graph::new();
        let e = g.constant(emb);
        let b = g.constant(bank);
        let mb = build_mix_batch(&mut g, e, &labels, b, BetaParams::new(2.0, 1.0).unwrap(), &mut rng).unwrap();
        assert_eq!(g.value(mb.x_aug).rows(), 8);
        assert_eq!(g.value(mb.m_aug).rows(), 8);
        assert_eq!(mb.labels_aug, vec![2, 0, 2, 0, 2, 0, 2, 0]);
        assert_eq!(mb.batch_classes, vec![0, 2]);
        for v in [mb.x_aug, mb.m_aug, mb.proxies_batch] {
            let t = g.value(v);
            for i in 0..t.rows() {
                let n: f64 = t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_coefficients_copy_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let emb = unit_rows(&mut rng, 4, 3);
        let bank = Tensor::matrix(2, 3, (0..6).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let labels = [0, 1, 1, 0];
        let plan = MixPlan {
            lambda: 1.0,
            mu1: 1.0,
            mu2: 1.0,
            pairing: vec![3, 2, 1, 0],
            augment: true,
        };
        let mut g = Graph::new();
        let e = g.constant(emb.clone());
        let b = g.constant(bank);
        let mb = apply_mix_plan(&mut g, e, &labels, b, &plan).unwrap();
        let doubled: Vec<f64> = [emb.data(), emb.data()].concat();
        for (a, b) in g.value(mb.x_aug).data().iter().zip(&doubled) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in g.value(mb.m_aug).data().iter().zip(&doubled) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mixture_gradient_reaches_proxies_and_samples() {
        use crate::gradcheck::grad_check;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let emb = Tensor::matrix(4, 3, (0..12).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let bank = Tensor::matrix(2, 3, (0..6).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let w = Tensor::matrix(8, 3, (0..24).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
        let labels = [0, 1, 1, 0];
        let plan = MixPlan {
            lambda: 0.7,
            mu1: 0.4,
            mu2: 0.35,
            pairing: vec![3, 2, 1, 0],
            augment: true,
        };
        let f = |g: &mut Graph, v: &[Var]| {
            let e = g.l2_normalize_rows(v[0], NORMALIZE_EPS)?;
            let mb = apply_mix_plan(g, e, &labels, v[1], &plan)?;
            let wv = g.constant(w.clone());
            let p = g.mul(mb.m_aug, wv)?;
            Ok(g.sum(p))
        };
        let report = grad_check(f, &[emb.clone(), bank.clone()], 1e-5, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");

        let mut g = Graph::new();
        let e0 = g.param(emb);
        let b0 = g.param(bank);
        let out = f(&mut g, &[e0, b0]).unwrap();
        g.backward(out).unwrap();
        let norm = |v: Var| g.grad(v).unwrap().iter().map(|x| x * x).sum::<f64>();
        assert!(norm(e0) > 0.0 && norm(b0) > 0.0);
    }

    #[test]
    fn build_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let emb = unit_rows(&mut rng, 6, 4);
            let bank = Tensor::matrix(3, 4, (0..12).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap();
            let mut g = Graph::new();
            let e = g.constant(emb);
            let b = g.constant(bank);
            let mb = build_mix_batch(&mut g, e, &[0, 1, 2, 0, 1, 2], b, BetaParams::new(2.0, 1.0).unwrap(), &mut rng).unwrap();
            (g.value(mb.x_aug).clone(), g.value(mb.m_aug).clone())
        };
        assert_eq!(run(), run());
    }
}
