//! Networks: feature generator, domain discriminator, category
//! discriminator, and the learnable proxy bank.
//!
//! Parameters live in plain [`Tensor`]s owned by the models. Every forward
//! pass binds them onto a fresh [`Graph`], as trainable or constant leaves.

use std::hash::Hasher;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{DadaError, Result};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input, hidden..., output widths.
    pub layer_dims: Vec<usize>,
    pub use_batchnorm_hidden: bool,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, use_batchnorm_hidden: bool) -> Result<Self> {
        let spec = Self {
            layer_dims,
            use_batchnorm_hidden,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(DadaError::config(format!(
                "MLP needs at least two positive layer widths, got {:?}",
                self.layer_dims
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`
    pub weight: Tensor,
    /// `1 × out`
    pub bias: Tensor,
}

impl Linear {
    /// He-normal weights, zero bias.
    pub fn he_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
        Self {
            weight: Tensor::matrix(fan_in, fan_out, data).expect("sized"),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub scale: Tensor,
    pub shift: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(width: usize) -> Self {
        Self {
            scale: Tensor::filled(1, width, 1.0),
            shift: Tensor::zeros(1, width),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    /// Exponential moving update from one batch; `var` is the biased batch
    /// variance, stored unbiased.
    pub fn update(&mut self, stats: &BatchStats) {
        let n = stats.rows as f64;
        let unbias = if stats.rows > 1 { n / (n - 1.0) } else { 1.0 };
        for j in 0..self.running_mean.len() {
            self.running_mean[j] = (1.0 - BN_MOMENTUM) * self.running_mean[j] + BN_MOMENTUM * stats.mean[j];
            self.running_var[j] =
                (1.0 - BN_MOMENTUM) * self.running_var[j] + BN_MOMENTUM * stats.var[j] * unbias;
        }
    }
}

/// Batch statistics observed by one train-mode batch-norm layer.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub layer: usize,
    pub rows: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics.
    Train,
    /// Running statistics.
    Eval,
}

/// Output of an MLP forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub out: Var,
    pub stats: Vec<BatchStats>,
}

/// ReLU MLP, optionally with batch norm before each hidden activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Linear>,
    pub norms: Vec<BatchNormState>,
}

impl Mlp {
    /// He-normal initialisation; a pure function of `(spec, rng state)`.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims
            .windows(2)
            .map(|w| Linear::he_init(w[0], w[1], rng))
            .collect();
        Ok(Self::assemble(spec, layers))
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec.layer_dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect();
        Ok(Self::assemble(spec, layers))
    }

    fn assemble(spec: MlpSpec, layers: Vec<Linear>) -> Self {
        let norms = if spec.use_batchnorm_hidden {
            spec.layer_dims[1..spec.layer_dims.len() - 1]
                .iter()
                .map(|&w| BatchNormState::new(w))
                .collect()
        } else {
            Vec::new()
        };
        Self { spec, layers, norms }
    }

    /// Parameter tensors: `(weight, bias)` per layer, then `(scale, shift)`
    /// per batch-norm layer.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect();
        out.extend(self.norms.iter().flat_map(|n| [&n.scale, &n.shift]));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect();
        out.extend(self.norms.iter_mut().flat_map(|n| [&mut n.scale, &mut n.shift]));
        out
    }

    /// Indices (into [`Mlp::params`]) of the final linear layer.
    pub fn head_param_indices(&self) -> [usize; 2] {
        let last = self.layers.len() - 1;
        [2 * last, 2 * last + 1]
    }

    /// Places every parameter on `g`; `trainable(i)` decides which ones
    /// receive gradient.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(usize) -> bool) -> Vec<Var> {
        self.params()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable(i) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var, mode: Mode) -> Result<Forward> {
        let in_dim = g.value(x).cols();
        if in_dim != self.spec.input_dim() {
            return Err(DadaError::Dimension {
                op: "mlp_forward",
                lhs: g.shape(x).to_vec(),
                rhs: vec![self.spec.input_dim()],
            });
        }
        let n_layers = self.layers.len();
        let bn_base = 2 * n_layers;
        let mut h = x;
        let mut stats = Vec::new();
        for l in 0..n_layers {
            h = g.matmul(h, vars[2 * l])?;
            h = g.add_row(h, vars[2 * l + 1])?;
            if l + 1 == n_layers {
                break;
            }
            if self.spec.use_batchnorm_hidden {
                let (scale, shift) = (vars[bn_base + 2 * l], vars[bn_base + 2 * l + 1]);
                h = match mode {
                    Mode::Train => {
                        let (out, mean, var) = g.batch_norm_train(h, scale, shift, BN_EPS)?;
                        stats.push(BatchStats {
                            layer: l,
                            rows: g.value(out).rows(),
                            mean,
                            var,
                        });
                        out
                    }
                    Mode::Eval => {
                        let bn = &self.norms[l];
                        g.batch_norm_eval(h, scale, shift, &bn.running_mean, &bn.running_var, BN_EPS)?
                    }
                };
            }
            h = g.relu(h);
        }
        Ok(Forward { out: h, stats })
    }

    pub fn update_running_stats(&mut self, stats: &[BatchStats]) {
        for s in stats {
            self.norms[s.layer].update(s);
        }
    }

    /// Bitwise fingerprint of all parameters and running statistics.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for p in self.params() {
            p.hash_into(&mut h);
        }
        for n in &self.norms {
            for v in n.running_mean.iter().chain(&n.running_var) {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    /// Forward without gradient tracking.
    pub fn infer(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, |_| false);
        let xv = g.constant(x.clone());
        let f = self.forward(&mut g, &vars, xv, mode)?;
        Ok(g.value(f.out).clone())
    }
}

/// Feature generator `f_G`: MLP followed by row L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub mlp: Mlp,
}

impl Generator {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], embedding_dim: usize, rng: &mut R) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(embedding_dim);
        Ok(Self {
            mlp: Mlp::init(MlpSpec::new(dims, false)?, rng)?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.spec.input_dim()
    }

    pub fn embedding_dim(&self) -> usize {
        self.mlp.spec.output_dim()
    }

    /// Binds parameters; with `head_only`, only the final layer is trainable.
    pub fn bind(&self, g: &mut Graph, trainable: bool, head_only: bool) -> Vec<Var> {
        let head = self.mlp.head_param_indices();
        self.mlp.bind(g, |i| trainable && (!head_only || head.contains(&i)))
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], raw: Var) -> Result<Var> {
        let f = self.mlp.forward(g, vars, raw, Mode::Train)?;
        g.l2_normalize_rows(f.out, NORMALIZE_EPS)
    }

    pub fn embed(&self, raw: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false, false);
        let x = g.constant(raw.clone());
        let out = self.forward(&mut g, &vars, x)?;
        Ok(g.value(out).clone())
    }
}

/// Domain discriminator `f_D`: `d → hidden → BN → ReLU → domains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainDiscriminator {
    pub mlp: Mlp,
}

impl DomainDiscriminator {
    pub fn init<R: Rng + ?Sized>(embedding_dim: usize, hidden: usize, num_domains: usize, rng: &mut R) -> Result<Self> {
        let spec = MlpSpec::new(vec![embedding_dim, hidden, num_domains], true)?;
        Ok(Self {
            mlp: Mlp::init(spec, rng)?,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.mlp.spec.output_dim()
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var, mode: Mode) -> Result<Forward> {
        self.mlp.forward(g, vars, x, mode)
    }
}

/// Category discriminator `f_C`: `d → h1 → h2 → C` class logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDiscriminator {
    pub mlp: Mlp,
}

impl CategoryDiscriminator {
    pub fn init<R: Rng + ?Sized>(embedding_dim: usize, hidden: &[usize], num_classes: usize, rng: &mut R) -> Result<Self> {
        let mut dims = vec![embedding_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_classes);
        Ok(Self {
            mlp: Mlp::init(MlpSpec::new(dims, false)?, rng)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.mlp.spec.output_dim()
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        Ok(self.mlp.forward(g, vars, x, Mode::Train)?.out)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.infer(x, Mode::Eval)
    }
}

/// One learnable proxy per class, stored unnormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyBank {
    pub weights: Tensor,
}

impl ProxyBank {
    /// Entries drawn from `Normal(0, 1)`.
    pub fn init<R: Rng + ?Sized>(num_classes: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(DadaError::config("proxy bank needs C, d >= 1"));
        }
        let data = (0..num_classes * dim).map(|_| StandardNormal.sample(rng)).collect();
        Ok(Self {
            weights: Tensor::matrix(num_classes, dim, data)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Raw bank rows for the given labels.
    pub fn select(&self, labels: &[usize]) -> Result<Tensor> {
        self.weights.select_rows(labels)
    }

    pub fn normalized(&self) -> Tensor {
        let mut g = Graph::new();
        let w = g.constant(self.weights.clone());
        let n = g.l2_normalize_rows(w, NORMALIZE_EPS).expect("matrix");
        g.value(n).clone()
    }

    pub fn fingerprint(&self) -> u64 {
        self.weights.fingerprint()
    }
}

/// Layer widths of every network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub generator_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub domain_hidden: usize,
    pub category_hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            generator_hidden: vec![256],
            embedding_dim: 64,
            domain_hidden: 512,
            category_hidden: vec![128, 64],
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let widths = self.generator_hidden.iter().chain(&self.category_hidden);
        if self.embedding_dim == 0 || self.domain_hidden == 0 || widths.into_iter().any(|&w| w == 0) {
            return Err(DadaError::config("model widths must be positive"));
        }
        Ok(())
    }
}

/// All networks and the proxy bank of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Models {
    pub generator: Generator,
    pub domain_disc: DomainDiscriminator,
    pub category_disc: CategoryDiscriminator,
    pub proxies: ProxyBank,
}

impl Models {
    pub fn init<R: Rng + ?Sized>(
        spec: &ModelSpec,
        input_dim: usize,
        num_classes: usize,
        num_domains: usize,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let d = spec.embedding_dim;
        Ok(Self {
            generator: Generator::init(input_dim, &spec.generator_hidden, d, rng)?,
            domain_disc: DomainDiscriminator::init(d, spec.domain_hidden, num_domains, rng)?,
            category_disc: CategoryDiscriminator::init(d, &spec.category_hidden, num_classes, rng)?,
            proxies: ProxyBank::init(num_classes, d, rng)?,
        })
    }

    /// Fingerprints of `(generator, proxies, domain_disc, category_disc)`.
    pub fn fingerprints(&self) -> [u64; 4] {
        [
            self.generator.mlp.fingerprint(),
            self.proxies.fingerprint(),
            self.domain_disc.mlp.fingerprint(),
            self.category_disc.mlp.fingerprint(),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| StandardNormal.sample(r)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![4], false).is_err());
        assert!(MlpSpec::new(vec![4, 0, 2], false).is_err());
        assert!(MlpSpec::new(vec![4, 2], false).is_ok());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let spec = MlpSpec::new(vec![8, 16, 4], true).unwrap();
        let a = Mlp::init(spec.clone(), &mut rng(0)).unwrap();
        let b = Mlp::init(spec.clone(), &mut rng(0)).unwrap();
        let c = Mlp::init(spec, &mut rng(1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layers[0].weight, c.layers[0].weight);
        assert!(a.layers.iter().all(|l| l.bias.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn he_init_std_over_seeds() {
        let target = (2.0f64 / 512.0).sqrt();
        for seed in 0..10 {
            let l = Linear::he_init(512, 3, &mut rng(seed));
            let d = l.weight.data();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
            assert!((std - target).abs() < 0.2 * target, "seed {seed}: {std} vs {target}");
        }
    }

    #[test]
    fn proxies_shape_and_moments() {
        let bank = ProxyBank::init(8, 16, &mut rng(5)).unwrap();
        assert_eq!(bank.weights.shape(), &[8, 16]);
        assert_eq!(bank, ProxyBank::init(8, 16, &mut rng(5)).unwrap());
        let big = ProxyBank::init(100, 100, &mut rng(6)).unwrap();
        let mean = big.weights.data().iter().sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn proxy_selection_is_bit_identical() {
        let bank = ProxyBank::init(5, 3, &mut rng(2)).unwrap();
        let sel = bank.select(&[4, 0, 4]).unwrap();
        assert_eq!(sel.row(0), bank.weights.row(4));
        assert_eq!(sel.row(1), bank.weights.row(0));
        assert_eq!(sel.row(2), bank.weights.row(4));
    }

    #[test]
    fn generator_outputs_unit_rows() {
        let mut r = rng(9);
        let gen = Generator::init(6, &[10], 4, &mut r).unwrap();
        let x = random_matrix(&mut r, 7, 6);
        let e = gen.embed(&x).unwrap();
        for i in 0..7 {
            let n: f64 = e.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn generator_gradcheck() {
        let mut r = rng(11);
        let gen = Generator::init(5, &[7], 3, &mut r).unwrap();
        let x = random_matrix(&mut r, 4, 5);
        let params: Vec<Tensor> = gen.mlp.params().into_iter().cloned().collect();
        let target = random_matrix(&mut r, 4, 3);
        let report = grad_check(
            |g, vars| {
                let xv = g.constant(x.clone());
                let e = gen.forward(g, vars, xv)?;
                let t = g.constant(target.clone());
                let p = g.mul(e, t)?;
                Ok(g.sum(p))
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn warmup_binding_freezes_body() {
        let mut r = rng(12);
        let gen = Generator::init(5, &[7, 6], 3, &mut r).unwrap();
        let x = random_matrix(&mut r, 4, 5);
        let mut g = Graph::new();
        let vars = gen.bind(&mut g, true, true);
        let xv = g.constant(x);
        let e = gen.forward(&mut g, &vars, xv).unwrap();
        let w = g.constant(Tensor::filled(4, 3, 0.3));
        let p = g.mul(e, w).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        let head = gen.mlp.head_param_indices();
        for (i, v) in vars.iter().enumerate() {
            let norm: f64 = g.grad(*v).map_or(0.0, |gr| gr.iter().map(|x| x * x).sum());
            if head.contains(&i) {
                assert!(norm > 0.0);
            } else {
                assert_eq!(norm, 0.0);
            }
        }
    }

    #[test]
    fn domain_disc_modes() {
        let mut r = rng(13);
        let disc = DomainDiscriminator::init(4, 6, 3, &mut r).unwrap();
        let x = random_matrix(&mut r, 8, 4);
        let a = disc.mlp.infer(&x, Mode::Eval).unwrap();
        let b = disc.mlp.infer(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[8, 3]);

        let mut g = Graph::new();
        let vars = disc.mlp.bind(&mut g, |_| false);
        let one = g.constant(random_matrix(&mut r, 1, 4));
        assert!(disc.forward(&mut g, &vars, one, Mode::Train).is_err());
    }

    #[test]
    fn batch_norm_normalizes_hidden_layer() {
        let mut r = rng(14);
        let disc = DomainDiscriminator::init(4, 6, 3, &mut r).unwrap();
        // large spread so eps is negligible relative to the batch variance
        let mut x = random_matrix(&mut r, 16, 4);
        x.data_mut().iter_mut().for_each(|v| *v *= 1e3);
        let mut g = Graph::new();
        let vars = disc.mlp.bind(&mut g, |_| false);
        let xv = g.constant(x);
        let h = g.matmul(xv, vars[0]).unwrap();
        let h = g.add_row(h, vars[1]).unwrap();
        let (bn, _, _) = g.batch_norm_train(h, vars[4], vars[5], BN_EPS).unwrap();
        let t = g.value(bn);
        for j in 0..6 {
            let col: Vec<f64> = (0..16).map(|i| t.get(i, j)).collect();
            let mean = col.iter().sum::<f64>() / 16.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNormState::new(1);
        bn.update(&BatchStats {
            layer: 0,
            rows: 4,
            mean: vec![2.0],
            var: vec![3.0],
        });
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn domain_disc_gradcheck_train_mode() {
        let mut r = rng(15);
        let disc = DomainDiscriminator::init(4, 6, 3, &mut r).unwrap();
        let x = random_matrix(&mut r, 8, 4);
        let labels = [0, 1, 2, 0, 1, 2, 0, 1];
        let mut params: Vec<Tensor> = disc.mlp.params().into_iter().cloned().collect();
        params.push(x);
        let report = grad_check(
            |g, vars| {
                let n = vars.len();
                let f = disc.forward(g, &vars[..n - 1], vars[n - 1], Mode::Train)?;
                g.softmax_cross_entropy(f.out, &labels)
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn category_disc_zero_weights_give_uniform_loss() {
        let spec = MlpSpec::new(vec![4, 5, 3, 8], false).unwrap();
        let cd = CategoryDiscriminator { mlp: Mlp::zeros(spec).unwrap() };
        let x = random_matrix(&mut rng(16), 6, 4);
        let logits = cd.logits(&x).unwrap();
        assert_eq!(logits.shape(), &[6, 8]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let mut g = Graph::new();
        let l = g.constant(logits);
        let ce = g.softmax_cross_entropy(l, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert!((g.value(ce).item() - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn category_disc_gradcheck() {
        let mut r = rng(17);
        let cd = CategoryDiscriminator::init(4, &[6, 5], 3, &mut r).unwrap();
        let x = random_matrix(&mut r, 6, 4);
        let mut params: Vec<Tensor> = cd.mlp.params().into_iter().cloned().collect();
        params.push(x);
        let report = grad_check(
            |g, vars| {
                let n = vars.len();
                let z = cd.forward(g, &vars[..n - 1], vars[n - 1])?;
                g.softmax_cross_entropy(z, &[0, 1, 2, 2, 1, 0])
            },
            &params,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
