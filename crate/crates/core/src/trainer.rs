//! Alternating adversarial training: `k` discriminator steps, then one
//! generator step per iteration, with an optional generator warm-up.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_mix_plan, BetaParams, MixPlan};
use crate::autodiff::{Graph, Var};
use crate::data::FeatureDataset;
use crate::error::{DadaError, Result};
use crate::eval::{evaluate_models, MetricsRecord};
use crate::losses::{
    adv_loss, cls_loss, l1_discrepancy, nwd_discrepancy, phase_objectives, proxy_anchor_loss, proxy_nca_loss,
    AdaptGroup, Discrepancy, LossParts, LossWeights, NwdMode, Reduction,
};
use crate::nn::{BatchStats, ModelSpec, Models, Mode, NORMALIZE_EPS};
use crate::optim::{adam_update, AdamConfig, AdamState};
use crate::tensor::Tensor;

/// Offset mixed into the run seed for the evaluation probe, so evaluation
/// never touches the training stream.
pub const PROBE_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyLoss {
    #[default]
    Pa,
    Pnca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub eta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub delta: f64,
    /// Beta parameters of the sample/proxy mixing coefficient.
    pub alpha: f64,
    pub beta: f64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub lr_proxy: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
    pub k_disc_steps: usize,
    pub batch_size: usize,
    pub samples_per_class: usize,
    pub warmup_epochs: usize,
    pub epochs: usize,
    /// Defaults to `⌊N_train / batch_size⌋` (at least 1).
    pub iterations_per_epoch: Option<usize>,
    pub seed: u64,
    pub adapt_group: AdaptGroup,
    pub discrepancy: Discrepancy,
    pub nwd_mode: NwdMode,
    pub adv_reduction: Reduction,
    pub dada_enabled: bool,
    pub augment: bool,
    pub use_adv: bool,
    pub use_cls: bool,
    pub loss: ProxyLoss,
    pub pnca_negatives_only: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 0.01,
            gamma: 0.0075,
            tau: 32.0,
            delta: 0.1,
            alpha: 2.0,
            beta: 1.0,
            lr_gen: 1.2e-4,
            lr_disc: 5e-4,
            lr_proxy: 4e-2,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-3,
            decoupled_weight_decay: false,
            k_disc_steps: 3,
            batch_size: 32,
            samples_per_class: 2,
            warmup_epochs: 1,
            epochs: 50,
            iterations_per_epoch: None,
            seed: 0,
            adapt_group: AdaptGroup::Xmp,
            discrepancy: Discrepancy::Nwd,
            nwd_mode: NwdMode::Batch,
            adv_reduction: Reduction::Mean,
            dada_enabled: true,
            augment: true,
            use_adv: true,
            use_cls: true,
            loss: ProxyLoss::Pa,
            pnca_negatives_only: false,
        }
    }
}

impl HyperParams {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            eta: self.eta,
            gamma: self.gamma,
            tau: self.tau,
            delta: self.delta,
        }
    }

    fn adam(&self, lr: f64, weight_decay: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay,
            decoupled: self.decoupled_weight_decay,
        }
    }

    pub fn gen_adam(&self) -> AdamConfig {
        self.adam(self.lr_gen, self.weight_decay)
    }

    /// Proxies are exempt from decay.
    pub fn proxy_adam(&self) -> AdamConfig {
        self.adam(self.lr_proxy, 0.0)
    }

    pub fn disc_adam(&self) -> AdamConfig {
        self.adam(self.lr_disc, self.weight_decay)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        BetaParams::new(self.alpha, self.beta)?;
        for (name, cfg) in [
            ("generator", self.gen_adam()),
            ("proxies", self.proxy_adam()),
            ("discriminators", self.disc_adam()),
        ] {
            cfg.validate(name)?;
        }
        if self.k_disc_steps == 0 {
            return Err(DadaError::config("k_disc_steps must be >= 1"));
        }
        if self.samples_per_class < 2 {
            return Err(DadaError::config(format!(
                "samples_per_class must be >= 2, got {}",
                self.samples_per_class
            )));
        }
        if self.batch_size < self.samples_per_class {
            return Err(DadaError::config(format!(
                "batch_size {} is smaller than samples_per_class {}",
                self.batch_size, self.samples_per_class
            )));
        }
        if self.epochs == 0 || self.iterations_per_epoch == Some(0) {
            return Err(DadaError::config("epochs and iterations_per_epoch must be >= 1"));
        }
        Ok(())
    }

    pub fn classes_per_batch(&self) -> usize {
        self.batch_size / self.samples_per_class
    }
}

/// Draws `⌊batch_size / spc⌋` distinct classes and `spc` distinct rows of
/// each. Returns `(row indices, labels)`.
pub fn class_balanced_batch<R: rand::Rng + ?Sized>(
    dataset: &FeatureDataset,
    batch_size: usize,
    samples_per_class: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if samples_per_class < 2 || batch_size < samples_per_class {
        return Err(DadaError::config(format!(
            "infeasible batch: batch_size {batch_size}, samples_per_class {samples_per_class}"
        )));
    }
    let want = batch_size / samples_per_class;
    let eligible: Vec<usize> = (0..dataset.num_classes())
        .filter(|&c| dataset.class_index[c].len() >= samples_per_class)
        .collect();
    if eligible.len() < want {
        let deficient: Vec<String> = (0..dataset.num_classes())
            .filter(|&c| dataset.class_index[c].len() < samples_per_class)
            .map(|c| format!("{} ({} rows)", dataset.label_names[c], dataset.class_index[c].len()))
            .collect();
        return Err(DadaError::config(format!(
            "batch needs {want} classes with >= {samples_per_class} rows, only {} qualify; deficient: [{}]",
            eligible.len(),
            deficient.join(", ")
        )));
    }
    let mut indices = Vec::with_capacity(want * samples_per_class);
    let mut labels = Vec::with_capacity(want * samples_per_class);
    for &c in eligible.choose_multiple(rng, want) {
        for &i in dataset.class_index[c].choose_multiple(rng, samples_per_class) {
            indices.push(i);
            labels.push(c);
        }
    }
    Ok((indices, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub generator: AdamState,
    pub proxies: AdamState,
    pub domain_disc: AdamState,
    pub category_disc: AdamState,
}

impl OptimState {
    pub fn new(models: &Models) -> Self {
        Self {
            generator: AdamState::new("generator", &models.generator.mlp.params()),
            proxies: AdamState::new("proxies", &[&models.proxies.weights]),
            domain_disc: AdamState::new("domain_disc", &models.domain_disc.mlp.params()),
            category_disc: AdamState::new("category_disc", &models.category_disc.mlp.params()),
        }
    }
}

/// Loss values of one phase; `None` for disabled terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseLosses {
    pub objective: f64,
    pub proxy: Option<f64>,
    pub adv: Option<f64>,
    pub cls: Option<f64>,
    pub discrepancy: Option<f64>,
}

/// Detached domains of one iteration, consumed by the discriminator phase.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTensors {
    pub x_aug: Tensor,
    pub m_aug: Tensor,
    pub proxies_batch: Tensor,
    pub labels_aug: Vec<usize>,
}

/// Embeds `raw` with the current generator and applies `plan`, without
/// tracking gradients.
pub fn detached_domains(models: &Models, raw: &Tensor, labels: &[usize], plan: &MixPlan) -> Result<DomainTensors> {
    let mut g = Graph::new();
    let gen_vars = models.generator.bind(&mut g, false, false);
    let x = g.constant(raw.clone());
    let emb = models.generator.forward(&mut g, &gen_vars, x)?;
    let bank = g.constant(models.proxies.weights.clone());
    let mix = apply_mix_plan(&mut g, emb, labels, bank, plan)?;
    Ok(DomainTensors {
        x_aug: g.value(mix.x_aug).clone(),
        m_aug: g.value(mix.m_aug).clone(),
        proxies_batch: g.value(mix.proxies_batch).clone(),
        labels_aug: mix.labels_aug,
    })
}

struct Domains<'a> {
    x_aug: Var,
    m_aug: Var,
    proxies_batch: Var,
    labels_aug: &'a [usize],
}

/// Discriminator-side terms (adversarial, class, discrepancy) enabled by `hp`.
fn discriminator_terms(
    g: &mut Graph,
    models: &Models,
    d_vars: &[Var],
    c_vars: &[Var],
    dom: &Domains<'_>,
    hp: &HyperParams,
) -> Result<(LossParts, Vec<BatchStats>)> {
    let mut parts = LossParts::default();
    let mut stats = Vec::new();
    if hp.use_adv {
        let sets = hp.adapt_group.domains(dom.x_aug, dom.m_aug, dom.proxies_batch);
        let (adv, s) = adv_loss(g, &models.domain_disc, d_vars, &sets, hp.adv_reduction, Mode::Train)?;
        parts.adv = Some(adv);
        stats = s;
    }
    if hp.use_cls {
        parts.cls = Some(cls_loss(g, &models.category_disc, c_vars, dom.x_aug, dom.labels_aug)?);
    }
    parts.discrepancy = match hp.discrepancy {
        Discrepancy::Nwd => Some(nwd_discrepancy(g, &models.category_disc, c_vars, dom.x_aug, dom.m_aug, hp.nwd_mode)?),
        Discrepancy::L1 => Some(l1_discrepancy(g, &models.category_disc, c_vars, dom.x_aug, dom.m_aug)?),
        Discrepancy::None => None,
    };
    Ok((parts, stats))
}

fn proxy_term(g: &mut Graph, emb: Var, labels: &[usize], proxies: Var, hp: &HyperParams) -> Result<Var> {
    match hp.loss {
        ProxyLoss::Pa => proxy_anchor_loss(g, emb, labels, proxies, hp.tau, hp.delta),
        ProxyLoss::Pnca => proxy_nca_loss(g, emb, labels, proxies, hp.tau, hp.pnca_negatives_only),
    }
}

fn read(g: &Graph, v: Option<Var>) -> Option<f64> {
    v.map(|v| g.value(v).item())
}

fn finite(g: &Graph, v: Var, what: &str) -> Result<f64> {
    let x = g.value(v).item();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(DadaError::numeric(format!("{what} objective is {x}")))
    }
}

/// Gradients for an optimizer group: `None` for constants (frozen).
fn collect_grads(g: &Graph, vars: &[Var]) -> Vec<Option<Vec<f64>>> {
    vars.iter()
        .map(|&v| {
            g.requires_grad(v).then(|| {
                g.grad(v)
                    .map_or_else(|| vec![0.0; g.value(v).numel()], <[f64]>::to_vec)
            })
        })
        .collect()
}

/// `k` updates of `f_D` and `f_C` on the detached domains. Generator and
/// proxies are not touched. Returns the losses of the last inner step, or
/// `None` when every discriminator term is disabled.
pub fn discriminator_phase(
    models: &mut Models,
    optim: &mut OptimState,
    domains: &DomainTensors,
    hp: &HyperParams,
) -> Result<Option<PhaseLosses>> {
    let uses_cd = hp.use_cls || hp.discrepancy != Discrepancy::None;
    if !hp.use_adv && !uses_cd {
        return Ok(None);
    }
    let weights = hp.weights();
    let cfg = hp.disc_adam();
    let mut last = None;
    for _ in 0..hp.k_disc_steps {
        let mut g = Graph::new();
        let dom = Domains {
            x_aug: g.constant(domains.x_aug.clone()),
            m_aug: g.constant(domains.m_aug.clone()),
            proxies_batch: g.constant(domains.proxies_batch.clone()),
            labels_aug: &domains.labels_aug,
        };
        let d_vars = models.domain_disc.mlp.bind(&mut g, |_| hp.use_adv);
        let c_vars = models.category_disc.mlp.bind(&mut g, |_| uses_cd);
        let (parts, stats) = discriminator_terms(&mut g, models, &d_vars, &c_vars, &dom, hp)?;
        let (objective, _) = phase_objectives(&mut g, &weights, &parts)?;
        let value = finite(&g, objective, "discriminator")?;
        g.backward(objective)?;
        if hp.use_adv {
            let grads = collect_grads(&g, &d_vars);
            adam_update(&mut models.domain_disc.mlp.params_mut(), &grads, &mut optim.domain_disc, &cfg)?;
            models.domain_disc.mlp.update_running_stats(&stats);
        }
        if uses_cd {
            let grads = collect_grads(&g, &c_vars);
            adam_update(&mut models.category_disc.mlp.params_mut(), &grads, &mut optim.category_disc, &cfg)?;
        }
        last = Some(PhaseLosses {
            objective: value,
            proxy: None,
            adv: read(&g, parts.adv),
            cls: read(&g, parts.cls),
            discrepancy: read(&g, parts.discrepancy),
        });
    }
    Ok(last)
}

/// One update of the generator and proxies. The batch is re-embedded and
/// re-mixed with the same plan on a graph where the discriminators are
/// constants. With `warmup`, only the generator's final layer moves.
/// With DADA disabled the objective is the proxy loss alone.
pub fn generator_phase(
    models: &mut Models,
    optim: &mut OptimState,
    raw: &Tensor,
    labels: &[usize],
    plan: &MixPlan,
    hp: &HyperParams,
    warmup: bool,
) -> Result<PhaseLosses> {
    let mut g = Graph::new();
    let gen_vars = models.generator.bind(&mut g, true, warmup);
    let bank = g.param(models.proxies.weights.clone());
    let x = g.constant(raw.clone());
    let emb = models.generator.forward(&mut g, &gen_vars, x)?;

    let (objective, parts) = if hp.dada_enabled {
        let mix = apply_mix_plan(&mut g, emb, labels, bank, plan)?;
        let d_vars = models.domain_disc.mlp.bind(&mut g, |_| false);
        let c_vars = models.category_disc.mlp.bind(&mut g, |_| false);
        let dom = Domains {
            x_aug: mix.x_aug,
            m_aug: mix.m_aug,
            proxies_batch: mix.proxies_batch,
            labels_aug: &mix.labels_aug,
        };
        let (mut parts, _) = discriminator_terms(&mut g, models, &d_vars, &c_vars, &dom, hp)?;
        parts.proxy = Some(proxy_term(&mut g, mix.x_aug, &mix.labels_aug, mix.proxies_all, hp)?);
        let (_, gen) = phase_objectives(&mut g, &hp.weights(), &parts)?;
        (gen, parts)
    } else {
        let proxies = g.l2_normalize_rows(bank, NORMALIZE_EPS)?;
        let loss = proxy_term(&mut g, emb, labels, proxies, hp)?;
        let parts = LossParts {
            proxy: Some(loss),
            ..LossParts::default()
        };
        (loss, parts)
    };
    let value = finite(&g, objective, "generator")?;
    g.backward(objective)?;
    let grads = collect_grads(&g, &gen_vars);
    adam_update(&mut models.generator.mlp.params_mut(), &grads, &mut optim.generator, &hp.gen_adam())?;
    let grads = collect_grads(&g, &[bank]);
    adam_update(&mut [&mut models.proxies.weights], &grads, &mut optim.proxies, &hp.proxy_adam())?;
    Ok(PhaseLosses {
        objective: value,
        proxy: read(&g, parts.proxy),
        adv: read(&g, parts.adv),
        cls: read(&g, parts.cls),
        discrepancy: read(&g, parts.discrepancy),
    })
}

/// Full training state; everything a checkpoint needs to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub hp: HyperParams,
    pub models: Models,
    pub optim: OptimState,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(hp: HyperParams, spec: &ModelSpec, input_dim: usize, num_classes: usize) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let models = Models::init(spec, input_dim, num_classes, hp.adapt_group.num_domains(), &mut rng)?;
        let optim = OptimState::new(&models);
        Ok(Self {
            hp,
            models,
            optim,
            rng,
            epoch: 0,
        })
    }

    pub fn iterations_per_epoch(&self, n_train: usize) -> usize {
        self.hp
            .iterations_per_epoch
            .unwrap_or((n_train / self.hp.batch_size).max(1))
    }

    /// Whether the epoch about to run is a warm-up epoch.
    pub fn in_warmup(&self) -> bool {
        self.epoch < self.hp.warmup_epochs
    }

    /// Sample a batch, run the discriminator phase, then the generator phase.
    pub fn step(&mut self, train: &FeatureDataset) -> Result<PhaseLosses> {
        let hp = &self.hp;
        let (indices, labels) = class_balanced_batch(train, hp.batch_size, hp.samples_per_class, &mut self.rng)?;
        let raw = train.features.select_rows(&indices)?;
        let plan = if !hp.dada_enabled || !hp.augment {
            MixPlan::identity(labels.len())
        } else {
            MixPlan::sample(&labels, BetaParams::new(hp.alpha, hp.beta)?, &mut self.rng)?
        };
        if hp.dada_enabled {
            let domains = detached_domains(&self.models, &raw, &labels, &plan)?;
            discriminator_phase(&mut self.models, &mut self.optim, &domains, hp)?;
        }
        let warmup = self.in_warmup();
        generator_phase(&mut self.models, &mut self.optim, &raw, &labels, &plan, hp, warmup)
    }

    /// Runs one epoch and returns its mean generator-phase losses.
    pub fn run_epoch(&mut self, train: &FeatureDataset) -> Result<PhaseLosses> {
        let iters = self.iterations_per_epoch(train.len());
        let mut sums = [0.0; 5];
        let mut seen = [false; 4];
        for it in 0..iters {
            let l = self.step(train).map_err(|e| match e {
                DadaError::Numeric(m) => {
                    DadaError::Numeric(format!("epoch {}, iteration {}: {m}", self.epoch + 1, it + 1))
                }
                other => other,
            })?;
            sums[0] += l.objective;
            for (k, v) in [l.proxy, l.adv, l.cls, l.discrepancy].into_iter().enumerate() {
                if let Some(v) = v {
                    sums[k + 1] += v;
                    seen[k] = true;
                }
            }
        }
        self.epoch += 1;
        let mean = |k: usize| seen[k].then(|| sums[k + 1] / iters as f64);
        Ok(PhaseLosses {
            objective: sums[0] / iters as f64,
            proxy: mean(0),
            adv: mean(1),
            cls: mean(2),
            discrepancy: mean(3),
        })
    }

    pub fn probe_seed(&self) -> u64 {
        self.hp.seed.wrapping_add(PROBE_SEED_OFFSET)
    }
}

/// When and what to evaluate during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSchedule {
    /// Evaluate every `every` epochs and after the last; 0 disables.
    pub every: usize,
    pub ks: Vec<usize>,
}

impl Default for EvalSchedule {
    fn default() -> Self {
        Self {
            every: 1,
            ks: crate::eval::DEFAULT_KS.to_vec(),
        }
    }
}

/// Trains until `hp.epochs` epochs are complete, calling `on_epoch` after
/// each. Resumes from `trainer.epoch`.
pub fn train<F>(
    trainer: &mut Trainer,
    train_set: &FeatureDataset,
    test_set: &FeatureDataset,
    schedule: &EvalSchedule,
    mut on_epoch: F,
) -> Result<Vec<MetricsRecord>>
where
    F: FnMut(&MetricsRecord, &Trainer) -> Result<()>,
{
    if train_set.dim() != trainer.models.generator.input_dim() {
        return Err(DadaError::config(format!(
            "training features have dimension {}, model expects {}",
            train_set.dim(),
            trainer.models.generator.input_dim()
        )));
    }
    let mut records = Vec::new();
    while trainer.epoch < trainer.hp.epochs {
        let start = Instant::now();
        let losses = trainer.run_epoch(train_set)?;
        let epoch = trainer.epoch;
        let due = schedule.every > 0 && (epoch.is_multiple_of(schedule.every) || epoch == trainer.hp.epochs);
        let report = if due {
            Some(evaluate_models(
                &trainer.models,
                &train_set.features,
                test_set,
                &schedule.ks,
                trainer.probe_seed(),
            )?)
        } else {
            None
        };
        let record = MetricsRecord {
            epoch,
            loss_proxy: losses.proxy,
            loss_adv: losses.adv,
            loss_cls: losses.cls,
            loss_discrepancy: losses.discrepancy,
            recall_at: report.as_ref().map(|r| r.recall_at.clone()),
            map_at_r: report.as_ref().map(|r| r.map_at_r),
            domain_probe_acc: report.as_ref().map(|r| r.domain_probe_acc),
            wallclock_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: proxy {:?} adv {:?} R@1 {:?}",
            record.loss_proxy,
            record.loss_adv,
            record.recall_at.as_ref().and_then(|r| r.get(&1))
        );
        on_epoch(&record, trainer)?;
        records.push(record);
    }
    Ok(records)
}

/// Recall values keyed by `K`, for callers that only need `R@1`.
pub fn recall_at_1(record: &MetricsRecord) -> Option<f64> {
    record.recall_at.as_ref().and_then(|r: &BTreeMap<usize, f64>| r.get(&1).copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};

    fn grid(classes: usize, per_class: usize) -> FeatureDataset {
        synth_generate(&SynthSpec {
            num_classes: classes,
            dim: 6,
            samples_per_class: per_class,
            center_scale: 3.0,
            noise_sigma: 0.5,
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn batch_has_balanced_classes() {
        let ds = grid(8, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (idx, labels) = class_balanced_batch(&ds, 8, 2, &mut rng).unwrap();
        assert_eq!(idx.len(), 8);
        let mut counts = BTreeMap::new();
        for (&i, &l) in idx.iter().zip(&labels) {
            assert_eq!(ds.labels[i], l);
            *counts.entry(l).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&c| c == 2));
        let mut uniq = idx.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), idx.len());
    }

    #[test]
    fn class_selection_is_uniform() {
        let ds = grid(8, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1000;
        let mut freq = [0usize; 8];
        for _ in 0..draws {
            let (_, labels) = class_balanced_batch(&ds, 8, 2, &mut rng).unwrap();
            for c in labels.iter().step_by(2) {
                freq[*c] += 1;
            }
        }
        // each class is chosen with probability 1/2 per draw
        let expected = draws as f64 * 0.5;
        let sigma = (draws as f64 * 0.25).sqrt();
        for f in freq {
            assert!((f as f64 - expected).abs() <= 3.0 * sigma, "{freq:?}");
        }
    }

    #[test]
    fn infeasible_batch_lists_deficient_classes() {
        let ds = grid(3, 10);
        let sub: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] != 1 || i % 10 == 0).collect();
        let ds = ds.subset(&sub, "thin").unwrap();
        let err = class_balanced_batch(&ds, 6, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, DadaError::Config(_)));
        assert!(err.to_string().contains("1 (1 rows)"), "{err}");
    }

    #[test]
    fn hyperparams_validation() {
        assert!(HyperParams::default().validate().is_ok());
        for bad in [
            HyperParams { eta: 0.0, ..Default::default() },
            HyperParams { k_disc_steps: 0, ..Default::default() },
            HyperParams { lr_proxy: 0.0, ..Default::default() },
            HyperParams { samples_per_class: 1, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(DadaError::Config(_))));
        }
    }
}
