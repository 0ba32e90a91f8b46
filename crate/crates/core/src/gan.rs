//! WGAN-GP over benign samples. The generator maps Gaussian noise to
//! `rows x 11` matrices that serve as fake-benign donor values.
//!
//! Generator: dense(z -> 5x6x16) -> LeakyReLU -> 2x nearest upsample cropped
//! to rows x 11 -> conv3x3(8) -> LeakyReLU -> conv3x3(1) -> tanh.
//! Critic: conv3x3/2(16) -> LeakyReLU -> conv3x3/2(32) -> LeakyReLU -> dense(1),
//! with no normalisation layers.

use std::path::Path;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifact::{Container, Provenance};
use crate::autodiff::layers::{conv2d, dense, he_uniform, upsample, ConvGeometry};
use crate::autodiff::{pull_params, push_params, AdamConfig, AdamState, Bound, Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::flow::{LabeledDataset, NUM_FEATURES};

pub const GAN_KIND: &str = "gan";

const SLOPE: f64 = 0.2;
const GEN_CHANNELS: usize = 16;
const GEN_HIDDEN: usize = 8;
const CRITIC_CHANNELS: [usize; 2] = [16, 32];
/// Samples per forward pass in [`GanModel::generate`].
const GENERATE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub batch_size: usize,
    /// Generator updates.
    pub iterations: usize,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    /// Gradient-penalty coefficient.
    pub gp_lambda: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            noise_dim: 20,
            batch_size: 32,
            iterations: 400,
            critic_steps: 5,
            gp_lambda: 10.0,
            learning_rate: 2e-3,
            beta1: 0.0,
            beta2: 0.9,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.noise_dim == 0 || self.noise_dim >= rows * NUM_FEATURES {
            return Err(Error::Config(format!("noise_dim must be in 1..{}", rows * NUM_FEATURES)));
        }
        if self.batch_size == 0 || self.critic_steps == 0 {
            return Err(Error::Config("batch_size and critic_steps must be positive".into()));
        }
        if !(self.gp_lambda >= 0.0 && self.learning_rate > 0.0) {
            return Err(Error::Config("gp_lambda must be >= 0 and learning_rate > 0".into()));
        }
        if rows < 2 {
            return Err(Error::Config("samples need at least two rows".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, beta1: self.beta1, beta2: self.beta2, ..AdamConfig::default() }
    }
}

/// Losses of one generator iteration (critic values averaged over its steps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanLog {
    pub critic_loss: f64,
    /// `mean D(real) - mean D(fake)`.
    pub wasserstein: f64,
    pub gradient_penalty: f64,
    pub generator_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub config: GanConfig,
    pub rows: usize,
    pub generator: ParamSet,
    pub critic: ParamSet,
    pub history: Vec<GanLog>,
    pub provenance: Option<Provenance>,
}

/// Generated samples, `[n, rows*11]` with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FakeBenignBatch {
    pub rows: usize,
    pub data: Tensor,
}

impl FakeBenignBatch {
    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let w = self.rows * NUM_FEATURES;
        &self.data.data()[i * w..(i + 1) * w]
    }
}

fn seed_h(rows: usize) -> usize {
    rows.div_ceil(2)
}

fn seed_w() -> usize {
    NUM_FEATURES.div_ceil(2)
}

fn critic_geoms(batch: usize, rows: usize) -> [ConvGeometry; 2] {
    let first =
        ConvGeometry { batch, in_h: rows, in_w: NUM_FEATURES, in_c: 1, k_h: 3, k_w: 3, stride: 2, pad_h: 1, pad_w: 1 };
    let second = ConvGeometry { in_h: first.out_h(), in_w: first.out_w(), in_c: CRITIC_CHANNELS[0], ..first };
    [first, second]
}

fn gen_geoms(batch: usize, rows: usize) -> [ConvGeometry; 2] {
    let first = ConvGeometry {
        batch,
        in_h: rows,
        in_w: NUM_FEATURES,
        in_c: GEN_CHANNELS,
        k_h: 3,
        k_w: 3,
        stride: 1,
        pad_h: 1,
        pad_w: 1,
    };
    [first, ConvGeometry { in_c: GEN_HIDDEN, ..first }]
}

impl GanModel {
    /// Randomly initialised generator and critic.
    pub fn new(config: GanConfig, rows: usize) -> Result<Self> {
        config.validate(rows)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let seed_units = seed_h(rows) * seed_w() * GEN_CHANNELS;
        let [g1, g2] = gen_geoms(1, rows);
        let mut generator = ParamSet::new();
        generator.insert("fc.w", he_uniform(config.noise_dim, seed_units, &mut rng));
        generator.insert("fc.b", Tensor::zeros(&[seed_units]));
        generator.insert("conv1.w", he_uniform(g1.patch_len(), GEN_HIDDEN, &mut rng));
        generator.insert("conv1.b", Tensor::zeros(&[GEN_HIDDEN]));
        generator.insert("conv2.w", he_uniform(g2.patch_len(), 1, &mut rng).map(|v| v * 0.5));
        generator.insert("conv2.b", Tensor::zeros(&[1]));

        let [c1, c2] = critic_geoms(1, rows);
        let flat = c2.out_h() * c2.out_w() * CRITIC_CHANNELS[1];
        let mut critic = ParamSet::new();
        critic.insert("conv1.w", he_uniform(c1.patch_len(), CRITIC_CHANNELS[0], &mut rng));
        critic.insert("conv1.b", Tensor::zeros(&[CRITIC_CHANNELS[0]]));
        critic.insert("conv2.w", he_uniform(c2.patch_len(), CRITIC_CHANNELS[1], &mut rng));
        critic.insert("conv2.b", Tensor::zeros(&[CRITIC_CHANNELS[1]]));
        critic.insert("out.w", he_uniform(flat, 1, &mut rng).map(|v| v * 0.5));
        critic.insert("out.b", Tensor::zeros(&[1]));
        Ok(GanModel { config, rows, generator, critic, history: Vec::new(), provenance: None })
    }

    /// Generator graph from noise `z` (`[batch, noise_dim]`) to samples in
    /// [0, 1] shaped `[batch*rows*11, 1]`.
    fn generator_graph(&self, g: &mut Graph, p: &Bound, z: NodeId, batch: usize) -> Result<NodeId> {
        let (h0, w0) = (seed_h(self.rows), seed_w());
        let h = dense(g, z, p.id("fc.w"), p.id("fc.b"));
        let h = g.leaky_relu(h, SLOPE);
        let h = g.reshape(h, &[batch * h0 * w0, GEN_CHANNELS]);
        let h = upsample(g, h, batch, h0, w0, GEN_CHANNELS, 2, self.rows, NUM_FEATURES)?;
        let [g1, g2] = gen_geoms(batch, self.rows);
        let h = conv2d(g, h, &g1, p.id("conv1.w"), p.id("conv1.b"))?;
        let h = g.leaky_relu(h, SLOPE);
        let h = conv2d(g, h, &g2, p.id("conv2.w"), p.id("conv2.b"))?;
        let h = g.tanh(h);
        let h = g.scale(h, 0.5);
        Ok(g.add_scalar(h, 0.5))
    }

    /// Critic graph over `[batch*rows*11, 1]` inputs; returns `[batch, 1]`.
    fn critic_graph(&self, g: &mut Graph, p: &Bound, x: NodeId, batch: usize) -> Result<NodeId> {
        let [c1, c2] = critic_geoms(batch, self.rows);
        let h = conv2d(g, x, &c1, p.id("conv1.w"), p.id("conv1.b"))?;
        let h = g.leaky_relu(h, SLOPE);
        let h = conv2d(g, h, &c2, p.id("conv2.w"), p.id("conv2.b"))?;
        let h = g.leaky_relu(h, SLOPE);
        let h = g.reshape(h, &[batch, c2.out_h() * c2.out_w() * CRITIC_CHANNELS[1]]);
        Ok(dense(g, h, p.id("out.w"), p.id("out.b")))
    }

    fn fake_cells(&self, z: Tensor) -> Result<Tensor> {
        let batch = z.shape()[0];
        let mut g = Graph::new();
        let p = self.generator.bind_frozen(&mut g);
        let zi = g.constant(z);
        let out = self.generator_graph(&mut g, &p, zi, batch)?;
        Ok(g.forward(out, &[])?.clone())
    }

    fn noise(&self, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::randn(&[n, self.config.noise_dim], 1.0, rng)
    }

    /// `n` fake-benign samples; the same seed yields the same batch.
    pub fn generate(&self, n: usize, seed: u64) -> Result<FakeBenignBatch> {
        if n == 0 {
            return Err(Error::Precondition("generate needs n >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = self.rows * NUM_FEATURES;
        let mut data = Vec::with_capacity(n * width);
        let mut left = n;
        while left > 0 {
            let b = left.min(GENERATE_CHUNK);
            let z = self.noise(b, &mut rng);
            data.extend(self.fake_cells(z)?.data().iter().map(|v| v.clamp(0.0, 1.0)));
            left -= b;
        }
        Ok(FakeBenignBatch { rows: self.rows, data: Tensor::new(vec![n, width], data)? })
    }

    /// Critic scores for a `[n, rows*11]` batch.
    pub fn critic_scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        let n = x.shape()[0];
        let mut g = Graph::new();
        let p = self.critic.bind_frozen(&mut g);
        let xi = g.constant(x.clone().reshaped(&[x.len(), 1])?);
        let d = self.critic_graph(&mut g, &p, xi, n)?;
        Ok(g.forward(d, &[])?.data().to_vec())
    }

    /// Norms of the critic gradient at `x` (`[n, rows*11]`), one per sample.
    pub fn critic_grad_norms(&self, x: &Tensor) -> Result<Vec<f64>> {
        let n = x.shape()[0];
        let mut g = Graph::new();
        let p = self.critic.bind_frozen(&mut g);
        let xi = g.parameter(x.clone().reshaped(&[x.len(), 1])?);
        let d = self.critic_graph(&mut g, &p, xi, n)?;
        let s = g.sum(d);
        g.forward(s, &[])?;
        let grads = g.backward(s, None)?;
        let gx = grads.get_or_zeros(xi, &[x.len(), 1]);
        let w = x.shape()[1];
        Ok(gx.data().chunks(w).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect())
    }

    /// One critic update on a real batch; returns (loss, wasserstein, penalty).
    fn critic_step(&mut self, adam: &mut AdamState, real: Tensor, rng: &mut ChaCha8Rng) -> Result<(f64, f64, f64)> {
        let batch = real.shape()[0];
        let width = self.rows * NUM_FEATURES;
        let fake = self.fake_cells(self.noise(batch, rng))?;
        let real = real.reshaped(&[batch * width, 1])?;
        let mut mix = Vec::with_capacity(batch * width);
        for b in 0..batch {
            let u: f64 = rng.random();
            for j in b * width..(b + 1) * width {
                mix.push(u * real.data()[j] + (1.0 - u) * fake.data()[j]);
            }
        }
        let mut g = Graph::new();
        let p = self.critic.bind(&mut g);
        let xr = g.constant(real);
        let xf = g.constant(fake);
        let xh = g.parameter(Tensor::new(vec![batch * width, 1], mix)?);
        let d_real = self.critic_graph(&mut g, &p, xr, batch)?;
        let d_fake = self.critic_graph(&mut g, &p, xf, batch)?;
        let d_hat = self.critic_graph(&mut g, &p, xh, batch)?;
        g.forward(d_hat, &[])?;
        let grad = g.grad_graph(d_hat, &[xh])?[0];
        let per = g.reshape(grad, &[batch, width]);
        let sq = g.square(per);
        let n2 = g.sum_cols(sq);
        let n2 = g.add_scalar(n2, 1e-12);
        let norm = g.sqrt(n2);
        let dev = g.add_scalar(norm, -1.0);
        let dev2 = g.square(dev);
        let gp = g.mean(dev2);
        let mr = g.mean(d_real);
        let mf = g.mean(d_fake);
        let w = g.sub(mr, mf);
        let neg_w = g.scale(w, -1.0);
        let pen = g.scale(gp, self.config.gp_lambda);
        let loss = g.add(neg_w, pen);
        let l = g.forward(loss, &[])?.item();
        let (wv, gpv) = (g.value(w)?.item(), g.value(gp)?.item());
        if !(l.is_finite() && wv.is_finite() && gpv.is_finite()) {
            return Err(Error::NonFinite(format!(
                "critic loss {} (wasserstein {}, penalty {}) after {} iterations",
                l,
                wv,
                gpv,
                self.history.len()
            )));
        }
        let grads = g.backward(loss, None)?;
        let grads = p.gradients(&grads, &self.critic)?;
        adam.step(&mut self.critic, &grads)?;
        Ok((l, wv, gpv))
    }

    fn generator_step(&mut self, adam: &mut AdamState, rng: &mut ChaCha8Rng) -> Result<f64> {
        let batch = self.config.batch_size;
        let z = self.noise(batch, rng);
        let mut g = Graph::new();
        let gp = self.generator.bind(&mut g);
        let cp = self.critic.bind_frozen(&mut g);
        let zi = g.constant(z);
        let fake = self.generator_graph(&mut g, &gp, zi, batch)?;
        let d = self.critic_graph(&mut g, &cp, fake, batch)?;
        let m = g.mean(d);
        let loss = g.scale(m, -1.0);
        let l = g.forward(loss, &[])?.item();
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("generator loss {} after {} iterations", l, self.history.len())));
        }
        let grads = g.backward(loss, None)?;
        let grads = gp.gradients(&grads, &self.generator)?;
        adam.step(&mut self.generator, &grads)?;
        Ok(l)
    }
}

/// Trains a WGAN-GP on benign samples only.
pub fn train_wgan_gp(benign: &LabeledDataset, config: GanConfig) -> Result<GanModel> {
    if benign.labeled && benign.count(1) > 0 {
        return Err(Error::Precondition(format!(
            "GAN training data contains {} attack samples; pass benign samples only",
            benign.count(1)
        )));
    }
    if benign.len() < config.batch_size {
        return Err(Error::Precondition(format!(
            "GAN training needs at least one batch ({} samples), got {}",
            config.batch_size,
            benign.len()
        )));
    }
    let mut model = GanModel::new(config.clone(), benign.rows)?;
    model.provenance = Some(Provenance::new(&config, config.seed));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam_c = AdamState::new(config.adam(), &model.critic);
    let mut adam_g = AdamState::new(config.adam(), &model.generator);
    for it in 0..config.iterations {
        let (mut cl, mut wd, mut gpv) = (0.0, 0.0, 0.0);
        for _ in 0..config.critic_steps {
            let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..benign.len())).collect();
            let (l, w, p) = model.critic_step(&mut adam_c, benign.batch(&idx), &mut rng)?;
            cl += l;
            wd += w;
            gpv += p;
        }
        let k = config.critic_steps as f64;
        let generator_loss = model.generator_step(&mut adam_g, &mut rng)?;
        let log = GanLog { critic_loss: cl / k, wasserstein: wd / k, gradient_penalty: gpv / k, generator_loss };
        if it % 50 == 0 {
            debug!("gan iteration {}: {:?}", it, log);
        }
        model.history.push(log);
    }
    Ok(model)
}

impl GanModel {
    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            GAN_KIND,
            json!({
                "rows": self.rows,
                "config": self.config,
                "history": self.history,
                "provenance": self.provenance,
            }),
        );
        push_params(&mut c, "generator", &self.generator);
        push_params(&mut c, "critic", &self.critic);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(GAN_KIND)?;
        let field = |name: &str| -> Result<serde_json::Value> {
            c.meta.get(name).cloned().ok_or_else(|| Error::Format(format!("gan checkpoint lacks '{}'", name)))
        };
        let bad = |e: serde_json::Error| Error::Format(format!("gan checkpoint: {}", e));
        let rows: usize = serde_json::from_value(field("rows")?).map_err(bad)?;
        let config: GanConfig = serde_json::from_value(field("config")?).map_err(bad)?;
        let history: Vec<GanLog> = serde_json::from_value(field("history")?).map_err(bad)?;
        let provenance: Option<Provenance> = serde_json::from_value(field("provenance")?).map_err(bad)?;
        let template = GanModel::new(config.clone(), rows)?;
        let generator = pull_params(c, "generator");
        let critic = pull_params(c, "critic");
        for (set, want) in [(&generator, &template.generator), (&critic, &template.critic)] {
            for (name, t) in want.iter() {
                if set.get(name).map(Tensor::shape) != Some(t.shape()) {
                    return Err(Error::Format(format!("gan checkpoint has a missing or misshapen '{}'", name)));
                }
            }
        }
        Ok(GanModel { config, rows, generator, critic, history, provenance })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        GanModel::from_container(&Container::read(path)?)
    }
}
