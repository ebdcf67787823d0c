//! Finite-difference checks over every differentiable op and every composed
//! objective, grouped by scope.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::augment::{apply_mix_plan, sample_pairing, MixPlan};
use crate::autodiff::{Axis, Graph, Var};
use crate::error::{DadaError, Result};
use crate::gradcheck::{grad_check, grad_check_masked, GradReport};
use crate::losses::{
    adv_loss, cls_loss, l1_discrepancy, nwd_discrepancy, phase_objectives, proxy_anchor_loss, proxy_nca_loss,
    AdaptGroup, LossParts, LossWeights, NwdMode, Reduction,
};
use crate::nn::{CategoryDiscriminator, DomainDiscriminator, Generator, Mlp, Mode, BN_EPS, NORMALIZE_EPS};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Coordinates closer than this to a kink are excluded.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub scope: &'static str,
    pub name: &'static str,
    pub report: GradReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

type CheckFn = fn(f64, f64) -> Result<GradReport>;

struct Check {
    scope: &'static str,
    name: &'static str,
    run: CheckFn,
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect::<Vec<f64>>();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Contracts `v` against fixed pseudo-random weights so every output
/// coordinate contributes a distinct amount.
fn project(g: &mut Graph, v: Var) -> Result<Var> {
    let n = g.value(v).numel();
    let w: Vec<f64> = (0..n).map(|k| ((k as f64 + 1.0) * 0.7548776662466927).fract() - 0.5).collect();
    g.weighted_sum(v, w)
}

fn labels_for(n: usize, c: usize) -> Vec<usize> {
    (0..n).map(|i| i % c).collect()
}

fn check_matmul(h: f64, tol: f64) -> Result<GradReport> {
    let mut r = rng(1);
    let params = [randn(&mut r, 3, 4, 1.0), randn(&mut r, 4, 2, 1.0), randn(&mut r, 5, 4, 1.0)];
    grad_check(
        |g, v| {
            let ab = g.matmul(v[0], v[1])?;
            let at = g.matmul_nt(v[0], v[2])?;
            let a = project(g, ab)?;
            let b = project(g, at)?;
            g.add(a, b)
        },
        &params,
        h,
        tol,
    )
}

fn check_elementwise(h: f64, tol: f64) -> Result<GradReport> {
    let mut r = rng(2);
    let params = [randn(&mut r, 3, 4, 1.0), randn(&mut r, 3, 4, 1.0), randn(&mut r, 1, 4, 1.0)];
    grad_check(
        |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(v[0], v[1])?;
            let m = g.mul(s, d)?;
            let l = g.lincomb(m, 0.3, v[0], -1.7)?;
            let sc = g.scale(l, 2.5);
            let row = g.add_row(sc, v[2])?;
            project(g, row)
        },
        &params,
        h,
        tol,
    )
}

fn check_relu(h: f64, tol: f64) -> Result<GradReport> {
    let x = randn(&mut rng(3), 4, 5, 1.0);
    let near_kink: Vec<bool> = x.data().iter().map(|v| v.abs() < KINK_MARGIN).collect();
    grad_check_masked(
        |g, v| {
            let y = g.relu(v[0]);
            project(g, y)
        },
        &[x],
        h,
        tol,
        |_, c| near_kink[c],
    )
}

fn check_abs(h: f64, tol: f64) -> Result<GradReport> {
    let x = randn(&mut rng(4), 4, 5, 1.0);
    let near_kink: Vec<bool> = x.data().iter().map(|v| v.abs() < KINK_MARGIN).collect();
    grad_check_masked(
        |g, v| {
            let y = g.abs(v[0]);
            project(g, y)
        },
        &[x],
        h,
        tol,
        |_, c| near_kink[c],
    )
}

fn check_l2_normalize(h: f64, tol: f64) -> Result<GradReport> {
    let x = randn(&mut rng(5), 4, 3, 1.0);
    grad_check(
        |g, v| {
            let y = g.l2_normalize_rows(v[0], NORMALIZE_EPS)?;
            let n = g.row_norms(v[0])?;
            let a = project(g, y)?;
            let b = project(g, n)?;
            g.add(a, b)
        },
        &[x],
        h,
        tol,
    )
}

fn check_softmax(h: f64, tol: f64) -> Result<GradReport> {
    let x = randn(&mut rng(6), 4, 3, 2.0);
    grad_check(
        |g, v| {
            let s = g.softmax_rows(v[0])?;
            project(g, s)
        },
        &[x],
        h,
        tol,
    )
}

fn check_cross_entropy(h: f64, tol: f64) -> Result<GradReport> {
    let x = randn(&mut rng(7), 5, 3, 2.0);
    grad_check(
        |g, v| {
            let a = g.softmax_cross_entropy(v[0], &[0, 2, 1, 1, 0])?;
            let b = g.weighted_cross_entropy(v[0], &[1, 1, 2, 0, 2], &[0.5, 0.1, 2.0, 1.0, 0.3])?;
            g.add(a, b)
        },
        &[x],
        h,
        tol,
    )
}

fn check_logsumexp(h: f64, tol: f64) -> Result<GradReport> {
    let x = randn(&mut rng(8), 4, 3, 3.0);
    let mask: Vec<bool> = (0..12).map(|k| k % 5 != 1).collect();
    grad_check(
        |g, v| {
            let r = g.masked_logsumexp(v[0], &mask, Axis::Rows)?;
            let c = g.masked_logsumexp(v[0], &mask, Axis::Cols)?;
            let a = project(g, r)?;
            let b = project(g, c)?;
            g.add(a, b)
        },
        &[x],
        h,
        tol,
    )
}

fn check_nuclear_norm(h: f64, tol: f64) -> Result<GradReport> {
    let mut r = rng(9);
    let params = [randn(&mut r, 6, 3, 1.0), randn(&mut r, 3, 5, 1.0), randn(&mut r, 4, 4, 1.0)];
    grad_check(
        |g, v| {
            let a = g.nuclear_norm(v[0])?;
            let b = g.nuclear_norm(v[1])?;
            let c = g.nuclear_norm(v[2])?;
            let ab = g.lincomb(a, 1.0, b, 0.5)?;
            g.lincomb(ab, 1.0, c, -0.25)
        },
        &params,
        h,
        tol,
    )
}

fn check_reductions(h: f64, tol: f64) -> Result<GradReport> {
    let x = randn(&mut rng(10), 3, 4, 1.0);
    grad_check(
        |g, v| {
            let s = g.sum(v[0]);
            let m = g.mean(v[0]);
            let w = project(g, v[0])?;
            let sm = g.lincomb(s, 0.3, m, 2.0)?;
            g.add(sm, w)
        },
        &[x],
        h,
        tol,
    )
}

fn check_structural(h: f64, tol: f64) -> Result<GradReport> {
    let mut r = rng(11);
    let params = [randn(&mut r, 3, 2, 1.0), randn(&mut r, 2, 2, 1.0)];
    grad_check(
        |g, v| {
            let c = g.concat_rows(&[v[0], v[1], v[0]])?;
            let picked = g.gather_rows(c, &[4, 0, 0, 2, 7])?;
            project(g, picked)
        },
        &params,
        h,
        tol,
    )
}

fn check_cosine(h: f64, tol: f64) -> Result<GradReport> {
    let mut r = rng(12);
    let params = [randn(&mut r, 4, 3, 1.0), randn(&mut r, 3, 3, 1.0)];
    grad_check(
        |g, v| {
            let x = g.l2_normalize_rows(v[0], NORMALIZE_EPS)?;
            let p = g.l2_normalize_rows(v[1], NORMALIZE_EPS)?;
            let s = g.cosine_similarity_matrix(x, p)?;
            project(g, s)
        },
        &params,
        h,
        tol,
    )
}

fn check_batch_norm(h: f64, tol: f64) -> Result<GradReport> {
    let mut r = rng(13);
    let params = [randn(&mut r, 5, 3, 1.0), randn(&mut r, 1, 3, 1.0), randn(&mut r, 1, 3, 1.0)];
    let (mean, var) = (vec![0.1, -0.2, 0.3], vec![1.5, 0.5, 2.0]);
    grad_check(
        |g, v| {
            let (t, _, _) = g.batch_norm_train(v[0], v[1], v[2], BN_EPS)?;
            let e = g.batch_norm_eval(v[0], v[1], v[2], &mean, &var, BN_EPS)?;
            let a = project(g, t)?;
            let b = project(g, e)?;
            g.lincomb(a, 1.0, b, 0.5)
        },
        &params,
        h,
        tol,
    )
}

/// Raw embeddings `6×4` and a raw bank `3×4`, both normalized in-graph.
fn proxy_setup(seed: u64) -> [Tensor; 2] {
    let mut r = rng(seed);
    [randn(&mut r, 6, 4, 1.0), randn(&mut r, 3, 4, 1.0)]
}

fn normalized_pair(g: &mut Graph, v: &[Var]) -> Result<(Var, Var)> {
    let x = g.l2_normalize_rows(v[0], NORMALIZE_EPS)?;
    let p = g.l2_normalize_rows(v[1], NORMALIZE_EPS)?;
    Ok((x, p))
}

fn check_proxy_anchor(h: f64, tol: f64) -> Result<GradReport> {
    // a smaller scale keeps the exponentials away from saturation, where
    // finite differences lose all significant digits
    let labels = [0, 0, 1, 1, 0, 1];
    grad_check(
        |g, v| {
            let (x, p) = normalized_pair(g, v)?;
            let a = proxy_anchor_loss(g, x, &labels, p, 32.0, 0.1)?;
            let b = proxy_anchor_loss(g, x, &labels, p, 4.0, 0.1)?;
            g.add(a, b)
        },
        &proxy_setup(14),
        h,
        tol,
    )
}

fn check_proxy_nca(h: f64, tol: f64) -> Result<GradReport> {
    let labels = labels_for(6, 3);
    grad_check(
        |g, v| {
            let (x, p) = normalized_pair(g, v)?;
            let a = proxy_nca_loss(g, x, &labels, p, 8.0, false)?;
            let b = proxy_nca_loss(g, x, &labels, p, 8.0, true)?;
            g.add(a, b)
        },
        &proxy_setup(15),
        h,
        tol,
    )
}

/// Zero-initialized biases put whole rows exactly on a ReLU kink.
fn random_biases(mlp: &mut Mlp, seed: u64) {
    let mut r = rng(seed);
    for layer in &mut mlp.layers {
        let c = layer.bias.cols();
        layer.bias = randn(&mut r, 1, c, 0.3);
    }
}

fn small_domain_disc(seed: u64, domains: usize) -> DomainDiscriminator {
    let mut d = DomainDiscriminator::init(4, 6, domains, &mut rng(seed)).expect("dims");
    random_biases(&mut d.mlp, seed + 100);
    d
}

fn small_category_disc(seed: u64, classes: usize) -> CategoryDiscriminator {
    let mut c = CategoryDiscriminator::init(4, &[5, 5], classes, &mut rng(seed)).expect("dims");
    random_biases(&mut c.mlp, seed + 100);
    c
}

fn check_adv_loss(h: f64, tol: f64) -> Result<GradReport> {
    let disc = small_domain_disc(16, 3);
    let n_disc = disc.mlp.params().len();
    let mut r = rng(17);
    let mut params: Vec<Tensor> = disc.mlp.params().into_iter().cloned().collect();
    params.extend([randn(&mut r, 4, 4, 1.0), randn(&mut r, 4, 4, 1.0), randn(&mut r, 2, 4, 1.0)]);
    grad_check(
        |g, v| {
            let sets = [(v[n_disc], 0), (v[n_disc + 1], 1), (v[n_disc + 2], 2)];
            let (mean, _) = adv_loss(g, &disc, &v[..n_disc], &sets, Reduction::Mean, Mode::Train)?;
            let (sum, _) = adv_loss(g, &disc, &v[..n_disc], &sets[..2], Reduction::Sum, Mode::Train)?;
            g.lincomb(mean, 1.0, sum, 0.1)
        },
        &params,
        h,
        tol,
    )
}

fn check_cls_loss(h: f64, tol: f64) -> Result<GradReport> {
    let cd = small_category_disc(18, 3);
    let n_cd = cd.mlp.params().len();
    let mut params: Vec<Tensor> = cd.mlp.params().into_iter().cloned().collect();
    params.push(randn(&mut rng(19), 6, 4, 1.0));
    let labels = labels_for(6, 3);
    grad_check(|g, v| cls_loss(g, &cd, &v[..n_cd], v[n_cd], &labels), &params, h, tol)
}

fn discrepancy_params(seed: u64) -> (CategoryDiscriminator, Vec<Tensor>) {
    let cd = small_category_disc(seed, 3);
    let mut r = rng(seed + 1);
    let mut params: Vec<Tensor> = cd.mlp.params().into_iter().cloned().collect();
    params.extend([randn(&mut r, 5, 4, 1.0), randn(&mut r, 5, 4, 1.0)]);
    (cd, params)
}

fn check_nwd(h: f64, tol: f64) -> Result<GradReport> {
    let (cd, params) = discrepancy_params(20);
    let k = cd.mlp.params().len();
    grad_check(
        |g, v| {
            let a = nwd_discrepancy(g, &cd, &v[..k], v[k], v[k + 1], NwdMode::Batch)?;
            let b = nwd_discrepancy(g, &cd, &v[..k], v[k], v[k + 1], NwdMode::PerRow)?;
            g.add(a, b)
        },
        &params,
        h,
        tol,
    )
}

fn check_l1(h: f64, tol: f64) -> Result<GradReport> {
    let (cd, params) = discrepancy_params(22);
    let k = cd.mlp.params().len();
    grad_check(|g, v| l1_discrepancy(g, &cd, &v[..k], v[k], v[k + 1]), &params, h, tol)
}

fn mix_plan(labels: &[usize]) -> MixPlan {
    MixPlan {
        lambda: 0.63,
        mu1: 0.27,
        mu2: 0.81,
        pairing: sample_pairing(labels, &mut rng(24)).expect("pairs"),
        augment: true,
    }
}

fn check_mixup(h: f64, tol: f64) -> Result<GradReport> {
    let labels = [0, 0, 2, 2, 1, 1];
    let plan = mix_plan(&labels);
    grad_check(
        |g, v| {
            let x = g.l2_normalize_rows(v[0], NORMALIZE_EPS)?;
            let m = apply_mix_plan(g, x, &labels, v[1], &plan)?;
            let a = project(g, m.x_aug)?;
            let b = project(g, m.m_aug)?;
            let c = project(g, m.proxies_batch)?;
            let ab = g.add(a, b)?;
            g.add(ab, c)
        },
        &proxy_setup(25),
        h,
        tol,
    )
}

fn objective_parts(
    g: &mut Graph,
    dd: &DomainDiscriminator,
    cd: &CategoryDiscriminator,
    d_vars: &[Var],
    c_vars: &[Var],
    x: Var,
    m: Var,
    p: Var,
    labels: &[usize],
) -> Result<LossParts> {
    let sets = AdaptGroup::Xmp.domains(x, m, p);
    let (adv, _) = adv_loss(g, dd, d_vars, &sets, Reduction::Mean, Mode::Train)?;
    Ok(LossParts {
        cls: Some(cls_loss(g, cd, c_vars, x, labels)?),
        discrepancy: Some(nwd_discrepancy(g, cd, c_vars, x, m, NwdMode::Batch)?),
        adv: Some(adv),
        proxy: None,
    })
}

/// Balanced weights so every term is visible in the composite.
const OBJECTIVE_WEIGHTS: LossWeights = LossWeights {
    eta: 0.4,
    gamma: 0.7,
    tau: 8.0,
    delta: 0.1,
};

fn check_disc_objective(h: f64, tol: f64) -> Result<GradReport> {
    let dd = small_domain_disc(26, 3);
    let cd = small_category_disc(27, 3);
    let (nd, nc) = (dd.mlp.params().len(), cd.mlp.params().len());
    let mut r = rng(28);
    let unit = |t: Tensor| {
        let mut g = Graph::new();
        let v = g.constant(t);
        let n = g.l2_normalize_rows(v, NORMALIZE_EPS).expect("matrix");
        g.value(n).clone()
    };
    let (x, m, p) = (unit(randn(&mut r, 6, 4, 1.0)), unit(randn(&mut r, 6, 4, 1.0)), unit(randn(&mut r, 3, 4, 1.0)));
    let labels = labels_for(6, 3);
    let mut params: Vec<Tensor> = dd.mlp.params().into_iter().cloned().collect();
    params.extend(cd.mlp.params().into_iter().cloned());
    grad_check(
        |g, v| {
            let (xv, mv, pv) = (g.constant(x.clone()), g.constant(m.clone()), g.constant(p.clone()));
            let parts = objective_parts(g, &dd, &cd, &v[..nd], &v[nd..nd + nc], xv, mv, pv, &labels)?;
            Ok(phase_objectives(g, &OBJECTIVE_WEIGHTS, &parts)?.0)
        },
        &params,
        h,
        tol,
    )
}

fn check_gen_objective(h: f64, tol: f64) -> Result<GradReport> {
    let mut gen = Generator::init(5, &[6], 4, &mut rng(29)).expect("dims");
    random_biases(&mut gen.mlp, 129);
    let dd = small_domain_disc(30, 3);
    let cd = small_category_disc(31, 3);
    let ng = gen.mlp.params().len();
    let labels = [0, 0, 1, 1, 2, 2];
    let plan = mix_plan(&labels);
    let mut r = rng(32);
    let raw = randn(&mut r, 6, 5, 1.0);
    let mut params: Vec<Tensor> = gen.mlp.params().into_iter().cloned().collect();
    params.push(randn(&mut r, 3, 4, 1.0));
    grad_check(
        |g, v| {
            let x = g.constant(raw.clone());
            let emb = gen.forward(g, &v[..ng], x)?;
            let mix = apply_mix_plan(g, emb, &labels, v[ng], &plan)?;
            let d_vars = dd.mlp.bind(g, |_| false);
            let c_vars = cd.mlp.bind(g, |_| false);
            let mut parts = objective_parts(
                g,
                &dd,
                &cd,
                &d_vars,
                &c_vars,
                mix.x_aug,
                mix.m_aug,
                mix.proxies_batch,
                &mix.labels_aug,
            )?;
            parts.proxy = Some(proxy_anchor_loss(g, mix.x_aug, &mix.labels_aug, mix.proxies_all, 8.0, 0.1)?);
            Ok(phase_objectives(g, &OBJECTIVE_WEIGHTS, &parts)?.1)
        },
        &params,
        h,
        tol,
    )
}

const CHECKS: &[Check] = &[
    Check { scope: "matmul", name: "matmul and matmul_nt", run: check_matmul },
    Check { scope: "elementwise", name: "add, sub, mul, lincomb, scale, add_row", run: check_elementwise },
    Check { scope: "relu", name: "relu away from 0", run: check_relu },
    Check { scope: "abs", name: "abs away from 0", run: check_abs },
    Check { scope: "l2_normalize_rows", name: "row normalization and row norms", run: check_l2_normalize },
    Check { scope: "softmax", name: "row softmax", run: check_softmax },
    Check { scope: "softmax_cross_entropy", name: "mean and weighted cross-entropy", run: check_cross_entropy },
    Check { scope: "logsumexp", name: "masked logsumexp over rows and columns", run: check_logsumexp },
    Check { scope: "nuclear_norm", name: "nuclear norm of tall, wide and square matrices", run: check_nuclear_norm },
    Check { scope: "reductions", name: "sum, mean, weighted sum", run: check_reductions },
    Check { scope: "structural", name: "concat_rows and gather_rows", run: check_structural },
    Check { scope: "cosine_similarity", name: "cosine similarity of normalized rows", run: check_cosine },
    Check { scope: "batch_norm", name: "batch norm, train and eval", run: check_batch_norm },
    Check { scope: "proxy_anchor", name: "Proxy-Anchor loss", run: check_proxy_anchor },
    Check { scope: "proxy_nca", name: "Proxy-NCA loss, both denominators", run: check_proxy_nca },
    Check { scope: "adv_loss", name: "domain adversarial loss", run: check_adv_loss },
    Check { scope: "cls_loss", name: "category classification loss", run: check_cls_loss },
    Check { scope: "nwd", name: "nuclear-norm discrepancy, batch and per-row", run: check_nwd },
    Check { scope: "l1", name: "L1 discrepancy", run: check_l1 },
    Check { scope: "mixup", name: "sample/proxy and within-class mixing", run: check_mixup },
    Check { scope: "disc_objective", name: "discriminator-phase objective", run: check_disc_objective },
    Check { scope: "gen_objective", name: "generator-phase objective", run: check_gen_objective },
];

pub fn scopes() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.scope).collect()
}

/// Runs every check whose scope matches (`"all"` runs everything).
pub fn run(scope: &str, h: f64, tol: f64) -> Result<Vec<CheckResult>> {
    let selected: Vec<&Check> = CHECKS.iter().filter(|c| scope == "all" || c.scope == scope).collect();
    if selected.is_empty() {
        return Err(DadaError::config(format!(
            "unknown gradcheck scope '{scope}'; expected all or one of: {}",
            scopes().join(", ")
        )));
    }
    selected
        .into_iter()
        .map(|c| {
            Ok(CheckResult {
                scope: c.scope,
                name: c.name,
                report: (c.run)(h, tol)?,
            })
        })
        .collect()
}
