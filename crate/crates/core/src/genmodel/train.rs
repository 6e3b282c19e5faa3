use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::model::{build_discriminator, build_generator, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::diffnet::{bce_batch, derive_seed, rng_from_seed, Adam, AdamConfig, Mode, Tensor, PROB_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorLoss {
    /// Maximize `log D(G(y))`.
    Nonsaturating,
    /// Minimize `log(1 - D(G(y)))`, the literal minimax objective.
    Minimax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Discriminator dropout rate.
    pub dropout: f64,
    pub generator_loss: GeneratorLoss,
    /// Batch-normalize the last transposed convolution of the generator.
    pub final_batchnorm: bool,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            epochs: 10_000,
            batch_size: 64,
            adam: AdamConfig::default(),
            dropout: 0.2,
            generator_loss: GeneratorLoss::Nonsaturating,
            final_batchnorm: true,
            seed: 0,
        }
    }
}

/// Per-epoch means over batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanEpoch {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_real: f64,
    pub d_fake: f64,
    /// Value of the adversarial objective on the discriminator-step batches.
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GanHistory {
    pub epochs: Vec<GanEpoch>,
}

/// `mean(log d_real) + mean(log(1 - d_fake))` with probabilities clamped
/// away from 0 and 1.
pub fn gan_value(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let clamp = |p: f64| p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let mean = |xs: &[f64], f: &dyn Fn(f64) -> f64| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().map(|&p| f(clamp(p))).sum::<f64>() / xs.len() as f64
        }
    };
    mean(d_real, &|p| p.ln()) + mean(d_fake, &|p| (1.0 - p).ln())
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.values().iter().map(|v| v.to_f64_lossy()).collect()
}

/// Result of one discriminator update.
#[derive(Debug, Clone)]
pub struct DiscriminatorStep {
    pub loss: f64,
    pub d_real: Vec<f64>,
    pub d_fake: Vec<f64>,
}

/// Stacks real and generated windows into one batch, real first.
fn joint_batch<T: Scalar>(real: &Tensor<T>, fake: &Tensor<T>) -> Result<Tensor<T>> {
    if real.shape()[1..] != fake.shape()[1..] {
        return Err(Error::Shape(format!("real {:?} and generated {:?} windows differ", real.shape(), fake.shape())));
    }
    let rows: Vec<&[T]> = (0..real.batch()).map(|i| real.sample(i)).chain((0..fake.batch()).map(|i| fake.sample(i))).collect();
    Tensor::stack(&rows, &real.shape()[1..])
}

/// One Adam update of the discriminator: real windows labelled 1, generated
/// windows labelled 0. Touches only the discriminator.
///
/// Real and generated windows go through the network as one batch so that
/// batch normalization sees their pooled statistics; separate batches would
/// normalize away any difference in mean or scale.
pub fn discriminator_step<T: Scalar, R: RngCore + ?Sized>(
    d: &mut Discriminator<T>,
    adam: &mut Adam<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    rng: &mut R,
) -> Result<DiscriminatorStep> {
    let nr = real.batch();
    let x = joint_batch(real, fake)?;
    let targets: Vec<T> = (0..x.batch()).map(|i| if i < nr { T::one() } else { T::zero() }).collect();
    d.net.zero_grad();
    let p = d.net.forward(&x, Mode::Train, rng)?;
    let (_, g) = bce_batch(&p, &targets)?;
    d.net.backward(&g, false)?;
    adam.step(d.net.params_mut())?;
    let probs = to_f64(&p);
    // the reported loss is -V: per-class means, not the joint-batch mean
    let clamp = |q: f64| q.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let nf = probs.len() - nr;
    let l_real = -probs[..nr].iter().map(|&q| clamp(q).ln()).sum::<f64>() / nr as f64;
    let l_fake = -probs[nr..].iter().map(|&q| (1.0 - clamp(q)).ln()).sum::<f64>() / nf as f64;
    Ok(DiscriminatorStep {
        loss: l_real + l_fake,
        d_real: probs[..nr].to_vec(),
        d_fake: probs[nr..].to_vec(),
    })
}

/// One Adam update of the generator through the (fixed) discriminator.
/// Expects `g` to hold the cache of the forward pass that produced `fake`.
/// The discriminator sees the same joint batch as in its own step, with
/// batch statistics, but its running statistics and weights are left
/// untouched; only the generated half carries loss.
pub fn generator_step<T: Scalar, R: RngCore + ?Sized>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    adam: &mut Adam<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    loss: GeneratorLoss,
    rng: &mut R,
) -> Result<f64> {
    let nr = real.batch();
    let x = joint_batch(real, fake)?;
    g.net.zero_grad();
    let p = d.net.forward(&x, Mode::TrainFrozenStats, rng)?;
    let p_fake = p.select(&(nr..p.batch()).collect::<Vec<_>>());
    let (value, grad) = match loss {
        GeneratorLoss::Nonsaturating => bce_batch(&p_fake, &vec![T::one(); p_fake.len()])?,
        GeneratorLoss::Minimax => {
            // minimize mean log(1 - p) = -bce(p, 0)
            let (l, gr) = bce_batch(&p_fake, &vec![T::zero(); p_fake.len()])?;
            (-l, gr.map(|v| -v))
        }
    };
    let mut full = vec![T::zero(); nr];
    full.extend_from_slice(grad.values());
    let dx = d.net.backward(&Tensor::from_vec(p.shape().to_vec(), full)?, true)?.expect("input gradient requested");
    let dfake = dx.select(&(nr..dx.batch()).collect::<Vec<_>>());
    g.net.backward(&dfake, false)?;
    adam.step(g.net.params_mut())?;
    Ok(value)
}

/// Trains a generator/discriminator pair on aligned `(n, 1, k, c1)` sEMG and
/// `(n, 1, k, c2)` IMU tensors, both already normalized.
pub fn train_gan<T: Scalar>(
    semg: &Tensor<T>,
    imu: &Tensor<T>,
    cfg: &GanTrainConfig,
) -> Result<(Generator<T>, Discriminator<T>, GanHistory)> {
    if semg.rank() != 4 || imu.rank() != 4 || semg.shape()[1] != 1 || imu.shape()[1] != 1 {
        return Err(Error::Shape(format!(
            "expected (n, 1, k, c) tensors, got {:?} and {:?}",
            semg.shape(),
            imu.shape()
        )));
    }
    let n = semg.batch();
    if imu.batch() != n || imu.shape()[2] != semg.shape()[2] {
        return Err(Error::Shape(format!(
            "sEMG {:?} and IMU {:?} are not aligned",
            semg.shape(),
            imu.shape()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    if n < cfg.batch_size {
        return Err(Error::InsufficientData(format!(
            "{n} training pairs for a batch size of {}",
            cfg.batch_size
        )));
    }
    let (k, c1, c2) = (semg.shape()[2], semg.shape()[3], imu.shape()[3]);
    let mut root = rng_from_seed(cfg.seed);
    let g_seed = derive_seed(&mut root);
    let d_seed = derive_seed(&mut root);
    let mut gcfg = GeneratorConfig::new(k, c1, c2);
    gcfg.final_batchnorm = cfg.final_batchnorm;
    let mut dcfg = DiscriminatorConfig::new(k, c2);
    dcfg.dropout = cfg.dropout;
    let mut g = build_generator::<T>(gcfg, g_seed)?;
    let mut d = build_discriminator::<T>(dcfg, d_seed)?;
    let mut adam_g = Adam::new(cfg.adam);
    let mut adam_d = Adam::new(cfg.adam);
    let mut rng = rng_from_seed(derive_seed(&mut root));
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = GanHistory::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            // batch statistics need two samples
            if chunk.len() < 2 {
                continue;
            }
            let x = semg.select(chunk);
            let real = imu.select(chunk);
            let fake = g.net.forward(&x, Mode::Train, &mut rng)?;
            let ds = discriminator_step(&mut d, &mut adam_d, &real, &fake, &mut rng)?;
            let gl = generator_step(&mut g, &mut d, &mut adam_g, &real, &fake, cfg.generator_loss, &mut rng)?;
            if !(ds.loss.is_finite() && gl.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("discriminator loss {}, generator loss {gl}", ds.loss),
                });
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            sums[0] += ds.loss;
            sums[1] += gl;
            sums[2] += mean(&ds.d_real);
            sums[3] += mean(&ds.d_fake);
            sums[4] += gan_value(&ds.d_real, &ds.d_fake);
            batches += 1;
        }
        let b = batches.max(1) as f64;
        history.epochs.push(GanEpoch {
            d_loss: sums[0] / b,
            g_loss: sums[1] / b,
            d_real: sums[2] / b,
            d_fake: sums[3] / b,
            value: sums[4] / b,
        });
        if g.net.params().iter().any(|p| !p.value.all_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: "non-finite generator weights".into(),
            });
        }
    }
    Ok((g, d, history))
}

/// Pearson correlation per channel between two equally shaped stacks of
/// `(n, 1, k, c)` windows, pooling all frames of all windows.
pub fn channel_correlation<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Vec<f64>> {
    if a.shape() != b.shape() || a.rank() != 4 {
        return Err(Error::Shape(format!("cannot correlate {:?} with {:?}", a.shape(), b.shape())));
    }
    let c = a.shape()[3];
    let mut out = Vec::with_capacity(c);
    for ch in 0..c {
        let xs: Vec<f64> = a.values().iter().skip(ch).step_by(c).map(|v| v.to_f64_lossy()).collect();
        let ys: Vec<f64> = b.values().iter().skip(ch).step_by(c).map(|v| v.to_f64_lossy()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx) * (x - mx);
            syy += (y - my) * (y - my);
        }
        out.push(if sxx > 0.0 && syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::param_digest;
    use approx::assert_relative_eq;

    #[test]
    fn value_at_half_is_minus_two_ln_two() {
        assert_relative_eq!(gan_value(&[0.5; 4], &[0.5; 3]), -2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn value_approaches_zero_from_below() {
        let mut last = f64::NEG_INFINITY;
        for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
            let v = gan_value(&[1.0 - eps], &[eps]);
            assert!(v < 0.0 && v > last);
            last = v;
        }
        assert!(last > -3e-4);
    }

    #[test]
    fn value_direct_arithmetic() {
        let want = (0.9f64.ln() + 0.8f64.ln()) / 2.0 + 0.9f64.ln();
        assert_relative_eq!(gan_value(&[0.9, 0.8], &[0.1]), want, epsilon = 1e-15);
        assert_relative_eq!(gan_value(&[0.8, 0.9], &[0.1]), want, epsilon = 1e-15);
    }

    fn toy(n: usize, k: usize, c1: usize, c2: usize) -> (Tensor<f32>, Tensor<f32>) {
        let semg = Tensor::from_vec(vec![n, 1, k, c1], (0..n * k * c1).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect()).unwrap();
        let imu = Tensor::from_vec(vec![n, 1, k, c2], (0..n * k * c2).map(|i| ((i * 13 % 29) as f32 / 14.5) - 1.0).collect()).unwrap();
        (semg, imu)
    }

    #[test]
    fn zero_epochs_returns_initial_weights() {
        let (s, m) = toy(8, 6, 4, 3);
        let cfg = GanTrainConfig {
            epochs: 0,
            batch_size: 4,
            ..Default::default()
        };
        let (g, d, h) = train_gan(&s, &m, &cfg).unwrap();
        assert!(h.epochs.is_empty());
        let mut root = rng_from_seed(cfg.seed);
        let g0 = build_generator::<f32>(GeneratorConfig::new(6, 4, 3), derive_seed(&mut root)).unwrap();
        let d0 = build_discriminator::<f32>(DiscriminatorConfig::new(6, 3), derive_seed(&mut root)).unwrap();
        assert_eq!(param_digest(g.net.params()), param_digest(g0.net.params()));
        assert_eq!(param_digest(d.net.params()), param_digest(d0.net.params()));
    }

    #[test]
    fn insufficient_pairs() {
        let (s, m) = toy(3, 6, 4, 3);
        let cfg = GanTrainConfig {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        assert!(matches!(train_gan(&s, &m, &cfg), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let (s, m) = toy(12, 6, 4, 3);
        let cfg = GanTrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 77,
            ..Default::default()
        };
        let (g1, d1, h1) = train_gan(&s, &m, &cfg).unwrap();
        let (g2, d2, h2) = train_gan(&s, &m, &cfg).unwrap();
        assert_eq!(param_digest(g1.net.params()), param_digest(g2.net.params()));
        assert_eq!(param_digest(d1.net.params()), param_digest(d2.net.params()));
        assert_eq!(h1, h2);
        assert_eq!(h1.epochs.len(), 3);
    }

    #[test]
    fn steps_only_touch_their_own_network() {
        let (s, m) = toy(4, 6, 4, 3);
        let mut g = build_generator::<f32>(GeneratorConfig::new(6, 4, 3), 1).unwrap();
        let mut d = build_discriminator::<f32>(DiscriminatorConfig::new(6, 3), 2).unwrap();
        let mut ag = Adam::new(AdamConfig::default());
        let mut ad = Adam::new(AdamConfig::default());
        let mut rng = rng_from_seed(3);
        for _ in 0..3 {
            let fake = g.net.forward(&s, Mode::Train, &mut rng).unwrap();
            let g_before = param_digest(g.net.params());
            discriminator_step(&mut d, &mut ad, &m, &fake, &mut rng).unwrap();
            assert_eq!(g_before, param_digest(g.net.params()));
            let d_before = param_digest(d.net.params());
            generator_step(&mut g, &mut d, &mut ag, &m, &fake, GeneratorLoss::Nonsaturating, &mut rng).unwrap();
            assert_eq!(d_before, param_digest(d.net.params()));
            assert_ne!(g_before, param_digest(g.net.params()));
        }
    }

    #[test]
    fn correlation_of_affine_copies() {
        let a = Tensor::<f64>::from_vec(vec![2, 1, 3, 2], vec![1., 5., 2., 3., 3., 1., 4., 0., 5., 2., 6., 9.]).unwrap();
        let b = a.map(|v| 2.0 * v + 1.0);
        for r in channel_correlation(&a, &b).unwrap() {
            assert_relative_eq!(r, 1.0, epsilon = 1e-12);
        }
        let neg = a.map(|v| -v);
        for r in channel_correlation(&a, &neg).unwrap() {
            assert_relative_eq!(r, -1.0, epsilon = 1e-12);
        }
    }
}
