//! Objective terms: proxy losses, the domain adversarial loss, the category
//! classification loss, prediction discrepancies, and the two phase
//! objectives that combine them.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, Var};
use crate::error::{DadaError, Result};
use crate::nn::{BatchStats, CategoryDiscriminator, DomainDiscriminator, Mode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Balance between category-level (η) and domain-level (1−η) terms.
    pub eta: f64,
    /// Weight of the proxy loss in the generator objective.
    pub gamma: f64,
    /// Similarity scale.
    pub tau: f64,
    /// Margin.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            eta: 0.01,
            gamma: 0.0075,
            tau: 32.0,
            delta: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(DadaError::config(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if !(self.gamma > 0.0) || !(self.tau > 0.0) || !(self.delta >= 0.0) {
            return Err(DadaError::config(format!(
                "need gamma > 0, tau > 0, delta >= 0; got {}, {}, {}",
                self.gamma, self.tau, self.delta
            )));
        }
        Ok(())
    }
}

/// Which populations the domain discriminator separates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdaptGroup {
    /// Augmented samples vs proxies.
    Xp,
    /// Augmented samples vs mixture domain.
    Xm,
    /// All three.
    Xmp,
}

impl AdaptGroup {
    pub fn num_domains(self) -> usize {
        match self {
            AdaptGroup::Xmp => 3,
            AdaptGroup::Xp | AdaptGroup::Xm => 2,
        }
    }

    /// Row sets with their domain label. Samples are always label 0.
    pub fn domains(self, x_aug: Var, m_aug: Var, proxies: Var) -> Vec<(Var, usize)> {
        match self {
            AdaptGroup::Xmp => vec![(x_aug, 0), (m_aug, 1), (proxies, 2)],
            AdaptGroup::Xp => vec![(x_aug, 0), (proxies, 1)],
            AdaptGroup::Xm => vec![(x_aug, 0), (m_aug, 1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Mean within each domain set, then summed over sets.
    #[default]
    Mean,
    /// Raw sum over every row.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NwdMode {
    /// Nuclear norm of the whole prediction matrix.
    #[default]
    Batch,
    /// Sum of per-row norms (nuclear norm of each `1×C` row).
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discrepancy {
    #[default]
    Nwd,
    L1,
    None,
}

fn check_nonempty(g: &Graph, emb: Var, labels: &[usize], proxies: Var) -> Result<(usize, usize)> {
    let (n, c) = (g.value(emb).rows(), g.value(proxies).rows());
    if labels.is_empty() || labels.len() != n {
        return Err(DadaError::contract(format!(
            "proxy loss needs a non-empty batch with one label per row ({} labels, {} rows)",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(DadaError::contract(format!(
            "sample label {bad} has no proxy row (bank has {c})"
        )));
    }
    Ok((n, c))
}

/// Per-proxy `log(1 + Σ_{masked x} exp(z))` over the rows of `z (n×C)`.
fn log1p_sum_exp_columns(g: &mut Graph, z: Var, mask: &[bool]) -> Result<Var> {
    let c = g.value(z).cols();
    let zero = g.constant(Tensor::zeros(1, c));
    let padded = g.concat_rows(&[z, zero])?;
    let mut m = mask.to_vec();
    m.extend(std::iter::repeat_n(true, c));
    g.masked_logsumexp(padded, &m, Axis::Rows)
}

/// Proxy-Anchor loss over unit embeddings and unit proxies.
///
/// Positive term averaged over proxies with at least one positive in the
/// batch; negative term averaged over every proxy passed in.
pub fn proxy_anchor_loss(g: &mut Graph, emb: Var, labels: &[usize], proxies: Var, tau: f64, delta: f64) -> Result<Var> {
    let (n, c) = check_nonempty(g, emb, labels, proxies)?;
    let sim = g.cosine_similarity_matrix(emb, proxies)?;
    let margin = g.constant(Tensor::filled(n, c, delta));

    let pos_scaled = g.scale(sim, -tau);
    let z_pos = g.add(pos_scaled, margin)?;
    let neg_scaled = g.scale(sim, tau);
    let z_neg = g.add(neg_scaled, margin)?;

    let pos_mask: Vec<bool> = (0..n * c).map(|k| labels[k / c] == k % c).collect();
    let neg_mask: Vec<bool> = pos_mask.iter().map(|&b| !b).collect();
    let pos_terms = log1p_sum_exp_columns(g, z_pos, &pos_mask)?;
    let neg_terms = log1p_sum_exp_columns(g, z_neg, &neg_mask)?;

    let mut with_pos = vec![false; c];
    labels.iter().for_each(|&l| with_pos[l] = true);
    let num_pos = with_pos.iter().filter(|&&b| b).count() as f64;
    let pos_w = with_pos.iter().map(|&b| if b { 1.0 / num_pos } else { 0.0 }).collect();
    let pos = g.weighted_sum(pos_terms, pos_w)?;
    let neg = g.weighted_sum(neg_terms, vec![1.0 / c as f64; c])?;
    g.add(pos, neg)
}

/// Proxy-NCA with temperature `tau`.
///
/// Default form is a softmax over all proxies (the positive included in the
/// denominator). `negatives_only` keeps only the other proxies in the
/// denominator.
pub fn proxy_nca_loss(g: &mut Graph, emb: Var, labels: &[usize], proxies: Var, tau: f64, negatives_only: bool) -> Result<Var> {
    let (n, c) = check_nonempty(g, emb, labels, proxies)?;
    let sim = g.cosine_similarity_matrix(emb, proxies)?;
    let logits = g.scale(sim, tau);
    if !negatives_only {
        return g.softmax_cross_entropy(logits, labels);
    }
    if c < 2 {
        return Err(DadaError::contract(
            "negatives-only Proxy-NCA needs at least two proxies",
        ));
    }
    let mask: Vec<bool> = (0..n * c).map(|k| labels[k / c] != k % c).collect();
    let lse = g.masked_logsumexp(logits, &mask, Axis::Cols)?;
    let denom = g.weighted_sum(lse, vec![1.0 / n as f64; n])?;
    let mut pick = vec![0.0; n * c];
    for (i, &l) in labels.iter().enumerate() {
        pick[i * c + l] = 1.0 / n as f64;
    }
    let numer = g.weighted_sum(logits, pick)?;
    g.sub(denom, numer)
}

/// Domain cross-entropy: the sets are stacked into one discriminator batch
/// (so batch-norm statistics span all domains) and each row is scored
/// against its set's domain label.
pub fn adv_loss(
    g: &mut Graph,
    disc: &DomainDiscriminator,
    disc_vars: &[Var],
    domains: &[(Var, usize)],
    reduction: Reduction,
    mode: Mode,
) -> Result<(Var, Vec<BatchStats>)> {
    if domains.is_empty() {
        return Err(DadaError::contract("adv_loss needs at least one domain set"));
    }
    let mut labels = Vec::new();
    let mut weights = Vec::new();
    for &(set, label) in domains {
        let rows = g.value(set).rows();
        if label >= disc.num_domains() {
            return Err(DadaError::Index {
                op: "adv_loss",
                index: label,
                bound: disc.num_domains(),
            });
        }
        let w = match reduction {
            Reduction::Mean => 1.0 / rows as f64,
            Reduction::Sum => 1.0,
        };
        labels.extend(std::iter::repeat_n(label, rows));
        weights.extend(std::iter::repeat_n(w, rows));
    }
    let sets: Vec<Var> = domains.iter().map(|&(v, _)| v).collect();
    let stacked = g.concat_rows(&sets)?;
    let f = disc.forward(g, disc_vars, stacked, mode)?;
    let loss = g.weighted_cross_entropy(f.out, &labels, &weights)?;
    Ok((loss, f.stats))
}

/// Mean class cross-entropy of `f_C(X̃)`.
pub fn cls_loss(g: &mut Graph, cd: &CategoryDiscriminator, vars: &[Var], x_aug: Var, labels: &[usize]) -> Result<Var> {
    let logits = cd.forward(g, vars, x_aug)?;
    g.softmax_cross_entropy(logits, labels)
}

fn same_rows(g: &Graph, a: Var, b: Var) -> Result<usize> {
    let (ra, rb) = (g.value(a).rows(), g.value(b).rows());
    if ra != rb {
        return Err(DadaError::contract(format!(
            "discrepancy needs equal cardinalities, got {ra} and {rb}"
        )));
    }
    Ok(ra)
}

/// `(‖softmax(logits_x)‖_* − ‖softmax(logits_m)‖_*) / ñ`.
pub fn nwd_from_logits(g: &mut Graph, logits_x: Var, logits_m: Var, mode: NwdMode) -> Result<Var> {
    let n = same_rows(g, logits_x, logits_m)?;
    let px = g.softmax_rows(logits_x)?;
    let pm = g.softmax_rows(logits_m)?;
    let (nx, nm) = match mode {
        NwdMode::Batch => (g.nuclear_norm(px)?, g.nuclear_norm(pm)?),
        NwdMode::PerRow => {
            let rx = g.row_norms(px)?;
            let rm = g.row_norms(pm)?;
            (g.sum(rx), g.sum(rm))
        }
    };
    let diff = g.sub(nx, nm)?;
    Ok(g.scale(diff, 1.0 / n as f64))
}

/// Elementwise mean of `|softmax(logits_x) − softmax(logits_m)|`.
pub fn l1_from_logits(g: &mut Graph, logits_x: Var, logits_m: Var) -> Result<Var> {
    same_rows(g, logits_x, logits_m)?;
    let px = g.softmax_rows(logits_x)?;
    let pm = g.softmax_rows(logits_m)?;
    let d = g.sub(px, pm)?;
    let a = g.abs(d);
    Ok(g.mean(a))
}

pub fn nwd_discrepancy(
    g: &mut Graph,
    cd: &CategoryDiscriminator,
    vars: &[Var],
    x_aug: Var,
    m_aug: Var,
    mode: NwdMode,
) -> Result<Var> {
    same_rows(g, x_aug, m_aug)?;
    let lx = cd.forward(g, vars, x_aug)?;
    let lm = cd.forward(g, vars, m_aug)?;
    nwd_from_logits(g, lx, lm, mode)
}

pub fn l1_discrepancy(g: &mut Graph, cd: &CategoryDiscriminator, vars: &[Var], x_aug: Var, m_aug: Var) -> Result<Var> {
    same_rows(g, x_aug, m_aug)?;
    let lx = cd.forward(g, vars, x_aug)?;
    let lm = cd.forward(g, vars, m_aug)?;
    l1_from_logits(g, lx, lm)
}

/// Component losses of one batch; absent terms are disabled.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub cls: Option<Var>,
    pub discrepancy: Option<Var>,
    pub adv: Option<Var>,
    pub proxy: Option<Var>,
}

fn weighted_total(g: &mut Graph, terms: &[(Option<Var>, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(term, w) in terms {
        let Some(t) = term else { continue };
        let scaled = g.scale(t, w);
        acc = Some(match acc {
            None => scaled,
            Some(a) => g.add(a, scaled)?,
        });
    }
    Ok(acc.unwrap_or_else(|| g.constant(Tensor::scalar(0.0))))
}

/// Returns `(discriminator objective, generator objective)`:
///
/// * `η(L_cls − L_d) + (1−η)L_adv`, minimized over the discriminators;
/// * `η(L_cls + L_d) − (1−η)L_adv + γ·L_proxy`, minimized over the
///   generator and proxies.
pub fn phase_objectives(g: &mut Graph, w: &LossWeights, parts: &LossParts) -> Result<(Var, Var)> {
    let eta = w.eta;
    let disc = weighted_total(
        g,
        &[(parts.cls, eta), (parts.discrepancy, -eta), (parts.adv, 1.0 - eta)],
    )?;
    let gen = weighted_total(
        g,
        &[
            (parts.cls, eta),
            (parts.discrepancy, eta),
            (parts.adv, -(1.0 - eta)),
            (parts.proxy, w.gamma),
        ],
    )?;
    Ok((disc, gen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, MlpSpec, NORMALIZE_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn unit(g: &mut Graph, rows: &[Vec<f64>]) -> Var {
        let t = g.constant(Tensor::from_rows(rows).unwrap());
        g.l2_normalize_rows(t, NORMALIZE_EPS).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn proxy_anchor_spot_values() {
        // cos(x, p) = δ/τ makes the single exponent exactly zero
        let (tau, delta) = (32.0f64, 0.1f64);
        let c = delta / tau;
        let s = (1.0 - c * c).sqrt();
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 2, vec![c, s]).unwrap());
        let p = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let l = proxy_anchor_loss(&mut g, x, &[0], p, tau, delta).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-12);

        let l = proxy_anchor_loss(&mut g, p, &[0], p, tau, delta).unwrap();
        assert!(g.value(l).item() < 2e-14);
        assert!(g.value(l).item() >= 0.0);
    }

    #[test]
    fn proxy_anchor_rejects_empty_and_unknown() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(1, 2));
        let p = g.constant(Tensor::zeros(1, 2));
        assert!(proxy_anchor_loss(&mut g, x, &[], p, 32.0, 0.1).is_err());
        assert!(proxy_anchor_loss(&mut g, x, &[1], p, 32.0, 0.1).is_err());
    }

    #[test]
    fn proxy_anchor_decreases_with_positive_similarity() {
        let mut prev = f64::INFINITY;
        for k in 0..10 {
            let theta = 1.5 - 0.15 * k as f64;
            let mut g = Graph::new();
            let x = unit(&mut g, &[vec![theta.cos(), theta.sin(), 0.0], vec![0.0, 0.3, 1.0]]);
            let p = unit(&mut g, &[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
            let loss = proxy_anchor_loss(&mut g, x, &[0, 1], p, 32.0, 0.1).unwrap();
            let l = g.value(loss).item();
            assert!(l < prev && l >= 0.0);
            prev = l;
        }
    }

    #[test]
    fn proxy_nca_spot_values() {
        let mut g = Graph::new();
        let x = unit(&mut g, &[vec![1.0, 0.0]]);
        let l = proxy_nca_loss(&mut g, x, &[0], x, 32.0, false).unwrap();
        assert!(g.value(l).item().abs() < 1e-15);

        let p = unit(&mut g, &[vec![1.0, 1.0], vec![1.0, -1.0]]);
        let l = proxy_nca_loss(&mut g, x, &[1], p, 32.0, false).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-12);
        // literal form: one positive, one negative, equal similarities
        let l = proxy_nca_loss(&mut g, x, &[1], p, 32.0, true).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);
        assert!(proxy_nca_loss(&mut g, x, &[2], p, 32.0, false).is_err());
    }

    fn zero_head_domain_disc(rng: &mut ChaCha8Rng, d: usize, domains: usize) -> DomainDiscriminator {
        let mut disc = DomainDiscriminator::init(d, 8, domains, rng).unwrap();
        let last = disc.mlp.layers.last_mut().unwrap();
        last.weight = Tensor::zeros(8, domains);
        disc
    }

    #[test]
    fn adv_loss_uniform_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let disc = zero_head_domain_disc(&mut rng, 4, 3);
        let mut g = Graph::new();
        let vars = disc.mlp.bind(&mut g, |_| false);
        let x = g.constant(random(&mut rng, 6, 4));
        let m = g.constant(random(&mut rng, 6, 4));
        let p = g.constant(random(&mut rng, 3, 4));
        let (l, _) = adv_loss(&mut g, &disc, &vars, &AdaptGroup::Xmp.domains(x, m, p), Reduction::Mean, Mode::Train).unwrap();
        assert!((g.value(l).item() - 3.0 * 3f64.ln()).abs() < 1e-12);

        let disc2 = zero_head_domain_disc(&mut rng, 4, 2);
        let vars2 = disc2.mlp.bind(&mut g, |_| false);
        let (l, _) = adv_loss(&mut g, &disc2, &vars2, &AdaptGroup::Xp.domains(x, m, p), Reduction::Mean, Mode::Train).unwrap();
        assert!((g.value(l).item() - 2.0 * 2f64.ln()).abs() < 1e-12);

        let (l, _) = adv_loss(&mut g, &disc, &vars, &AdaptGroup::Xmp.domains(x, m, p), Reduction::Sum, Mode::Train).unwrap();
        assert!((g.value(l).item() - 15.0 * 3f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn adv_loss_saturates_for_perfect_discriminator() {
        // logits = 100 · onehot(domain) via a head reading one-hot inputs
        let spec = MlpSpec::new(vec![3, 3, 3], true).unwrap();
        let mut mlp = Mlp::zeros(spec).unwrap();
        mlp.layers[0].weight = Tensor::identity(3);
        mlp.layers[1].weight = Tensor::identity(3);
        mlp.layers[1].weight.data_mut().iter_mut().for_each(|v| *v *= 100.0);
        let disc = DomainDiscriminator { mlp };
        let mut g = Graph::new();
        let vars = disc.mlp.bind(&mut g, |_| false);
        let e = |k: usize| {
            let mut r = vec![0.0; 3];
            r[k] = 1.0;
            r
        };
        let x = g.constant(Tensor::from_rows(&[e(0), e(0)]).unwrap());
        let m = g.constant(Tensor::from_rows(&[e(1), e(1)]).unwrap());
        let p = g.constant(Tensor::from_rows(&[e(2), e(2)]).unwrap());
        let (l, _) = adv_loss(&mut g, &disc, &vars, &AdaptGroup::Xmp.domains(x, m, p), Reduction::Mean, Mode::Train).unwrap();
        // batch norm maps the one-hot columns to ±√2/±1/√2 before relu
        assert!(g.value(l).item() < 1e-9, "{}", g.value(l).item());
    }

    #[test]
    fn adv_loss_row_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let disc = DomainDiscriminator::init(4, 8, 3, &mut rng).unwrap();
        let xs = random(&mut rng, 5, 4);
        let ms = random(&mut rng, 5, 4);
        let ps = random(&mut rng, 2, 4);
        let eval = |x: &Tensor, m: &Tensor, p: &Tensor| {
            let mut g = Graph::new();
            let vars = disc.mlp.bind(&mut g, |_| false);
            let (x, m, p) = (g.constant(x.clone()), g.constant(m.clone()), g.constant(p.clone()));
            let (l, _) = adv_loss(&mut g, &disc, &vars, &AdaptGroup::Xmp.domains(x, m, p), Reduction::Mean, Mode::Train).unwrap();
            g.value(l).item()
        };
        let base = eval(&xs, &ms, &ps);
        let perm = eval(
            &xs.select_rows(&[4, 2, 0, 1, 3]).unwrap(),
            &ms.select_rows(&[1, 0, 3, 4, 2]).unwrap(),
            &ps.select_rows(&[1, 0]).unwrap(),
        );
        assert!((base - perm).abs() < 1e-12);
    }

    #[test]
    fn cls_loss_closed_forms() {
        let spec = MlpSpec::new(vec![3, 4, 5], false).unwrap();
        let cd = CategoryDiscriminator { mlp: Mlp::zeros(spec).unwrap() };
        let mut g = Graph::new();
        let vars = cd.mlp.bind(&mut g, |_| false);
        let x = g.constant(Tensor::filled(4, 3, 0.5));
        let l = cls_loss(&mut g, &cd, &vars, x, &[0, 1, 2, 4]).unwrap();
        assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);
        assert!(cls_loss(&mut g, &cd, &vars, x, &[0, 1, 2, 5]).is_err());
    }

    #[test]
    fn nwd_identical_sets_is_zero_and_antisymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cd = CategoryDiscriminator::init(4, &[6, 5], 3, &mut rng).unwrap();
        let xs = random(&mut rng, 8, 4);
        let ms = random(&mut rng, 8, 4);
        let mut g = Graph::new();
        let vars = cd.mlp.bind(&mut g, |_| false);
        let x = g.constant(xs);
        let m = g.constant(ms);
        let same = nwd_discrepancy(&mut g, &cd, &vars, x, x, NwdMode::Batch).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        let ab = nwd_discrepancy(&mut g, &cd, &vars, x, m, NwdMode::Batch).unwrap();
        let ba = nwd_discrepancy(&mut g, &cd, &vars, m, x, NwdMode::Batch).unwrap();
        assert_eq!(g.value(ab).item(), -g.value(ba).item());
        let bound = ((8.0f64) * 3.0).sqrt() / 8.0;
        assert!(g.value(ab).item().abs() <= bound);

        let short = g.constant(Tensor::zeros(3, 4));
        assert!(nwd_discrepancy(&mut g, &cd, &vars, x, short, NwdMode::Batch).is_err());
        assert!(l1_discrepancy(&mut g, &cd, &vars, x, short).is_err());
        let l1 = l1_discrepancy(&mut g, &cd, &vars, x, x).unwrap();
        assert_eq!(g.value(l1).item(), 0.0);
        let l1 = l1_discrepancy(&mut g, &cd, &vars, x, m).unwrap();
        assert!((0.0..=2.0 / 3.0).contains(&g.value(l1).item()));
    }

    #[test]
    fn phase_objective_reductions() {
        let mut g = Graph::new();
        let s = |g: &mut Graph, v: f64| g.constant(Tensor::scalar(v));
        let parts = LossParts {
            cls: Some(s(&mut g, 1.5)),
            discrepancy: Some(s(&mut g, 0.25)),
            adv: Some(s(&mut g, 2.0)),
            proxy: Some(s(&mut g, 3.0)),
        };
        let w = LossWeights { eta: 0.0, gamma: 0.0, ..Default::default() };
        let (d, _) = phase_objectives(&mut g, &w, &parts).unwrap();
        assert_eq!(g.value(d).item(), 2.0);
        let w = LossWeights { eta: 1.0, gamma: 0.0, ..Default::default() };
        let (_, gen) = phase_objectives(&mut g, &w, &parts).unwrap();
        assert_eq!(g.value(gen).item(), 1.75);
        let w = LossWeights { eta: 0.2, gamma: 0.5, ..Default::default() };
        let (d, gen) = phase_objectives(&mut g, &w, &parts).unwrap();
        assert!((g.value(d).item() - (0.2 * 1.25 + 0.8 * 2.0)).abs() < 1e-15);
        assert!((g.value(gen).item() - (0.2 * 1.75 - 0.8 * 2.0 + 1.5)).abs() < 1e-15);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { eta: 1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { tau: 0.0, ..Default::default() }.validate().is_err());
    }
}
