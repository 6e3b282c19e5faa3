use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernels::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, local1x1_backward, local1x1_forward,
    tconv2d_backward, tconv2d_forward,
};
use super::layers::{conv_grid, Layer, LayerSpec};
use super::params::{InitRecord, InitScheme, Param, ParamSet};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated, dropout active.
    Train,
    /// Batch statistics and dropout, running statistics left untouched.
    TrainFrozenStats,
    /// Running statistics, dropout is the identity.
    Eval,
}

impl Mode {
    fn batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

/// Batch-normalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    pub eps: f64,
    /// Weight of the old running value in the exponential average.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { eps: 1e-5, momentum: 0.9 }
    }
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Norm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Mask(Option<Vec<T>>),
    None,
}

/// Feed-forward stack of layers with hand-written reverse-mode gradients.
#[derive(Debug, Clone)]
pub struct Sequential<T> {
    layers: Vec<Layer>,
    params: ParamSet<T>,
    bn: BatchNormConfig,
    cache: Option<Vec<Cache<T>>>,
}

/// `(maps, positions)` of a batch-norm input: per-map statistics for spatial
/// inputs, per-feature for flat inputs.
fn norm_layout(shape: &[usize]) -> (usize, usize) {
    match *shape {
        [f] => (f, 1),
        [c, h, w] => (c, h * w),
        _ => unreachable!("validated by LayerSpec::output_shape"),
    }
}

impl<T: Scalar> Sequential<T> {
    /// Resolves shapes for `input_shape` (batch axis excluded) and draws the
    /// initial parameters from a ChaCha stream seeded with `seed`.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, scheme: InitScheme, seed: u64) -> Result<Self> {
        Self::with_batchnorm(input_shape, specs, scheme, seed, BatchNormConfig::default())
    }

    pub fn with_batchnorm(
        input_shape: &[usize],
        specs: Vec<LayerSpec>,
        scheme: InitScheme,
        seed: u64,
        bn: BatchNormConfig,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Config(format!("invalid input shape {input_shape:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new(InitRecord { scheme, seed });
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.to_vec();
        for (i, spec) in specs.into_iter().enumerate() {
            let out = spec.output_shape(i, &shape)?;
            let prefix = format!("{i}.{}", spec.name());
            let mut slots = Vec::new();
            let mut add_affine = |wshape: &[usize], bshape: &[usize], fan_in: usize, params: &mut ParamSet<T>| {
                let w = scheme.sample(wshape, fan_in, &mut rng);
                slots.push(params.push(Param::trainable(format!("{prefix}.weight"), w)));
                slots.push(params.push(Param::trainable(format!("{prefix}.bias"), Tensor::zeros(bshape))));
            };
            match &spec {
                LayerSpec::Conv2d { maps, kernel, .. } => {
                    let fan_in = shape[0] * kernel[0] * kernel[1];
                    add_affine(&[*maps, shape[0], kernel[0], kernel[1]], &[*maps], fan_in, &mut params);
                }
                LayerSpec::Tconv2d { maps, kernel, .. } => {
                    let fan_in = shape[0] * kernel[0] * kernel[1];
                    add_affine(&[shape[0], *maps, kernel[0], kernel[1]], &[*maps], fan_in, &mut params);
                }
                LayerSpec::LocallyConnected { maps, .. } => {
                    let positions = shape[1] * shape[2];
                    add_affine(&[positions, *maps, shape[0]], &[positions, *maps], shape[0], &mut params);
                }
                LayerSpec::Dense { units } => {
                    add_affine(&[*units, shape[0]], &[*units], shape[0], &mut params);
                }
                LayerSpec::Batchnorm => {
                    let (maps, _) = norm_layout(&shape);
                    let p = &mut params;
                    slots.push(p.push(Param::trainable(format!("{prefix}.gamma"), Tensor::filled(&[maps], T::one()))));
                    slots.push(p.push(Param::trainable(format!("{prefix}.beta"), Tensor::zeros(&[maps]))));
                    slots.push(p.push(Param::statistic(format!("{prefix}.running_mean"), Tensor::zeros(&[maps]))));
                    slots.push(p.push(Param::statistic(format!("{prefix}.running_var"), Tensor::filled(&[maps], T::one()))));
                }
                _ => {}
            }
            layers.push(Layer {
                spec,
                in_shape: shape.clone(),
                out_shape: out.clone(),
                slots,
            });
            shape = out;
        }
        Ok(Sequential {
            layers,
            params,
            bn,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        self.layers.first().map_or(&[], |l| &l.in_shape)
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&[], |l| &l.out_shape)
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let expected = self.input_shape();
        if x.rank() != expected.len() + 1 || &x.shape()[1..] != expected {
            let kind = self.layers.first().map_or("input", |l| l.spec.name());
            return Err(Error::dim(
                0,
                kind,
                format!("input shape {:?} does not match [n, {expected:?}]", x.shape()),
            ));
        }
        Ok(())
    }

    /// Forward pass that records what [`backward`](Self::backward) needs.
    pub fn forward<R: RngCore + ?Sized>(&mut self, x: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            let (y, cache) = self.layer_forward(i, cur, mode, rng)?;
            caches.push(cache);
            cur = y;
        }
        self.cache = Some(caches);
        Ok(cur)
    }

    /// Evaluation-mode forward pass on shared parameters.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        // Eval mode draws no random numbers and does not touch parameters.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..self.layers.len() {
            cur = self.layer_eval(i, cur, &mut rng)?;
        }
        Ok(cur)
    }

    fn layer_eval<R: RngCore + ?Sized>(&self, i: usize, x: Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        self.compute(i, x, Mode::Eval, rng, None).map(|(y, _)| y)
    }

    fn layer_forward<R: RngCore + ?Sized>(&mut self, i: usize, x: Tensor<T>, mode: Mode, rng: &mut R) -> Result<(Tensor<T>, Cache<T>)> {
        let mut stats_update = None;
        let out = self.compute(i, x, mode, rng, Some(&mut stats_update))?;
        if let Some((mean, var)) = stats_update {
            let slots = &self.layers[i].slots;
            let m = T::from_f64_lossy(self.bn.momentum);
            let one = T::one();
            let rm = self.params.get_mut(slots[2]).value.values_mut();
            for (r, b) in rm.iter_mut().zip(&mean) {
                *r = m * *r + (one - m) * *b;
            }
            let rv = self.params.get_mut(slots[3]).value.values_mut();
            for (r, b) in rv.iter_mut().zip(&var) {
                *r = m * *r + (one - m) * *b;
            }
        }
        Ok(out)
    }

    /// Computes layer `i`. In batch-statistics modes with `stats` present and
    /// `mode == Train`, the batch mean and unbiased variance of batch-norm
    /// layers are returned through `stats`.
    #[allow(clippy::type_complexity)]
    fn compute<R: RngCore + ?Sized>(
        &self,
        i: usize,
        x: Tensor<T>,
        mode: Mode,
        rng: &mut R,
        stats: Option<&mut Option<(Vec<T>, Vec<T>)>>,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        let layer = &self.layers[i];
        let n = x.batch();
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&layer.out_shape);
        let out_len: usize = out_shape.iter().product();
        let p = |k: usize| self.params.get(layer.slots[k]).value.values();
        match &layer.spec {
            LayerSpec::Conv2d {
                maps,
                kernel,
                stride,
                padding,
            } => {
                let g = conv_grid(&layer.in_shape, &layer.out_shape, *kernel, *stride, *padding);
                let mut y = vec![T::zero(); out_len];
                conv2d_forward(x.values(), n, &g, *maps, p(0), p(1), &mut y);
                Ok((Tensor::raw(out_shape, y), Cache::Input(x)))
            }
            LayerSpec::Tconv2d {
                kernel, stride, padding, ..
            } => {
                let g = conv_grid(&layer.out_shape, &layer.in_shape, *kernel, *stride, *padding);
                let mut y = vec![T::zero(); out_len];
                tconv2d_forward(x.values(), n, layer.in_shape[0], &g, p(0), p(1), &mut y);
                Ok((Tensor::raw(out_shape, y), Cache::Input(x)))
            }
            LayerSpec::LocallyConnected { maps, .. } => {
                let positions = layer.in_shape[1] * layer.in_shape[2];
                let mut y = vec![T::zero(); out_len];
                local1x1_forward(x.values(), n, layer.in_shape[0], *maps, positions, p(0), p(1), &mut y);
                Ok((Tensor::raw(out_shape, y), Cache::Input(x)))
            }
            LayerSpec::Dense { units } => {
                let mut y = vec![T::zero(); out_len];
                dense_forward(x.values(), n, layer.in_shape[0], *units, p(0), p(1), &mut y);
                Ok((Tensor::raw(out_shape, y), Cache::Input(x)))
            }
            LayerSpec::Batchnorm => {
                let (maps, positions) = norm_layout(&layer.in_shape);
                let gamma = p(0);
                let beta = p(1);
                let eps = T::from_f64_lossy(self.bn.eps);
                let (mean, var) = if mode.batch_stats() {
                    let count = n * positions;
                    if count < 2 {
                        return Err(Error::dim(i, "batchnorm", "batch statistics need at least 2 values per feature"));
                    }
                    let (mean, var) = batch_moments(x.values(), n, maps, positions);
                    if let Some(slot) = stats {
                        if mode == Mode::Train {
                            let c = T::from_usize(count).unwrap();
                            let unbiased = var.iter().map(|v| *v * c / (c - T::one())).collect();
                            *slot = Some((mean.clone(), unbiased));
                        }
                    }
                    (mean, var)
                } else {
                    (p(2).to_vec(), p(3).to_vec())
                };
                let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
                let mut xhat = vec![T::zero(); x.len()];
                let mut y = vec![T::zero(); x.len()];
                for s in 0..n {
                    for c in 0..maps {
                        let base = (s * maps + c) * positions;
                        for j in base..base + positions {
                            let h = (x.values()[j] - mean[c]) * inv_std[c];
                            xhat[j] = h;
                            y[j] = gamma[c] * h + beta[c];
                        }
                    }
                }
                Ok((
                    Tensor::raw(out_shape, y),
                    Cache::Norm {
                        xhat,
                        inv_std,
                        batch_stats: mode.batch_stats(),
                    },
                ))
            }
            LayerSpec::Relu => Ok((x.map(|v| if v > T::zero() { v } else { T::zero() }), Cache::Input(x))),
            LayerSpec::LeakyRelu { slope } => {
                let a = T::from_f64_lossy(*slope);
                Ok((x.map(|v| if v > T::zero() { v } else { a * v }), Cache::Input(x)))
            }
            LayerSpec::Tanh => {
                let y = x.map(|v| v.tanh());
                Ok((y.clone(), Cache::Output(y)))
            }
            LayerSpec::Sigmoid => {
                let y = x.map(sigmoid);
                Ok((y.clone(), Cache::Output(y)))
            }
            LayerSpec::Softmax => {
                let f = layer.in_shape[0];
                let mut y = x.into_values();
                for row in y.chunks_mut(f) {
                    softmax_in_place(row);
                }
                let y = Tensor::raw(out_shape, y);
                Ok((y.clone(), Cache::Output(y)))
            }
            LayerSpec::Dropout { rate } => {
                if !mode.batch_stats() || *rate == 0.0 {
                    return Ok((x, Cache::Mask(None)));
                }
                let keep = 1.0 - rate;
                let scale = T::from_f64_lossy(1.0 / keep);
                let mask: Vec<T> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
                    .collect();
                let y: Vec<T> = x.values().iter().zip(&mask).map(|(a, b)| *a * *b).collect();
                Ok((Tensor::raw(out_shape, y), Cache::Mask(Some(mask))))
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => Ok((x.reshape(&out_shape)?, Cache::None)),
        }
    }

    /// Back-propagates `dy` (gradient of the loss w.r.t. the last output),
    /// accumulating into the parameter gradients. Returns the gradient
    /// w.r.t. the network input when `input_grad` is set. Consumes the
    /// cache of the preceding [`forward`](Self::forward).
    pub fn backward(&mut self, dy: &Tensor<T>, input_grad: bool) -> Result<Option<Tensor<T>>> {
        let caches = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward pass".into()))?;
        let mut expected = vec![dy.batch()];
        expected.extend_from_slice(self.output_shape());
        if dy.shape() != expected.as_slice() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                dy.shape(),
                expected
            )));
        }
        let mut grad = dy.clone();
        for (i, cache) in caches.into_iter().enumerate().rev() {
            let need = i > 0 || input_grad;
            match self.layer_backward(i, cache, grad, need)? {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }

    fn layer_backward(&mut self, i: usize, cache: Cache<T>, dy: Tensor<T>, need_dx: bool) -> Result<Option<Tensor<T>>> {
        let layer = &self.layers[i];
        let n = dy.batch();
        let mut in_shape = vec![n];
        in_shape.extend_from_slice(&layer.in_shape);
        let in_len: usize = in_shape.iter().product();
        let slots = layer.slots.clone();
        let spec = layer.spec.clone();
        let lin = layer.in_shape.clone();
        let lout = layer.out_shape.clone();

        // split-borrow: weight value (immutable) and weight/bias grads (mutable)
        let affine = |params: &mut ParamSet<T>| -> (Vec<T>, Tensor<T>, Tensor<T>) {
            let w = params.get(slots[0]).value.values().to_vec();
            let dw = params.get_mut(slots[0]).grad.take().expect("trainable");
            let db = params.get_mut(slots[1]).grad.take().expect("trainable");
            (w, dw, db)
        };
        let restore = |params: &mut ParamSet<T>, dw: Tensor<T>, db: Tensor<T>| {
            params.get_mut(slots[0]).grad = Some(dw);
            params.get_mut(slots[1]).grad = Some(db);
        };

        let dx = match (&spec, cache) {
            (
                LayerSpec::Conv2d {
                    maps,
                    kernel,
                    stride,
                    padding,
                },
                Cache::Input(x),
            ) => {
                let g = conv_grid(&lin, &lout, *kernel, *stride, *padding);
                let (w, mut dw, mut db) = affine(&mut self.params);
                let mut dx = need_dx.then(|| vec![T::zero(); in_len]);
                conv2d_backward(x.values(), n, &g, *maps, &w, dy.values(), dw.values_mut(), db.values_mut(), dx.as_deref_mut());
                restore(&mut self.params, dw, db);
                dx
            }
            (
                LayerSpec::Tconv2d {
                    kernel, stride, padding, ..
                },
                Cache::Input(x),
            ) => {
                let g = conv_grid(&lout, &lin, *kernel, *stride, *padding);
                let (w, mut dw, mut db) = affine(&mut self.params);
                let mut dx = need_dx.then(|| vec![T::zero(); in_len]);
                tconv2d_backward(x.values(), n, lin[0], &g, &w, dy.values(), dw.values_mut(), db.values_mut(), dx.as_deref_mut());
                restore(&mut self.params, dw, db);
                dx
            }
            (LayerSpec::LocallyConnected { maps, .. }, Cache::Input(x)) => {
                let (w, mut dw, mut db) = affine(&mut self.params);
                let mut dx = need_dx.then(|| vec![T::zero(); in_len]);
                local1x1_backward(
                    x.values(),
                    n,
                    lin[0],
                    *maps,
                    lin[1] * lin[2],
                    &w,
                    dy.values(),
                    dw.values_mut(),
                    db.values_mut(),
                    dx.as_deref_mut(),
                );
                restore(&mut self.params, dw, db);
                dx
            }
            (LayerSpec::Dense { units }, Cache::Input(x)) => {
                let (w, mut dw, mut db) = affine(&mut self.params);
                let mut dx = need_dx.then(|| vec![T::zero(); in_len]);
                dense_backward(x.values(), n, lin[0], *units, &w, dy.values(), dw.values_mut(), db.values_mut(), dx.as_deref_mut());
                restore(&mut self.params, dw, db);
                dx
            }
            (
                LayerSpec::Batchnorm,
                Cache::Norm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let (maps, positions) = norm_layout(&lin);
                let gamma = self.params.get(slots[0]).value.values().to_vec();
                let mut dgamma = vec![T::zero(); maps];
                let mut dbeta = vec![T::zero(); maps];
                let d = dy.values();
                for s in 0..n {
                    for c in 0..maps {
                        let base = (s * maps + c) * positions;
                        for j in base..base + positions {
                            dgamma[c] += d[j] * xhat[j];
                            dbeta[c] += d[j];
                        }
                    }
                }
                for (g, v) in self.params.get_mut(slots[0]).grad.as_mut().unwrap().values_mut().iter_mut().zip(&dgamma) {
                    *g += *v;
                }
                for (g, v) in self.params.get_mut(slots[1]).grad.as_mut().unwrap().values_mut().iter_mut().zip(&dbeta) {
                    *g += *v;
                }
                need_dx.then(|| {
                    let mut dx = vec![T::zero(); in_len];
                    let m = T::from_usize(n * positions).unwrap();
                    for c in 0..maps {
                        let k = gamma[c] * inv_std[c];
                        // with batch statistics the mean and variance depend on x
                        let (mean_d, mean_dx) = if batch_stats {
                            (dbeta[c] / m, dgamma[c] / m)
                        } else {
                            (T::zero(), T::zero())
                        };
                        for s in 0..n {
                            let base = (s * maps + c) * positions;
                            for j in base..base + positions {
                                dx[j] = k * (d[j] - mean_d - xhat[j] * mean_dx);
                            }
                        }
                    }
                    dx
                })
            }
            (LayerSpec::Relu, Cache::Input(x)) => need_dx.then(|| {
                x.values()
                    .iter()
                    .zip(dy.values())
                    .map(|(a, g)| if *a > T::zero() { *g } else { T::zero() })
                    .collect()
            }),
            (LayerSpec::LeakyRelu { slope }, Cache::Input(x)) => {
                let a = T::from_f64_lossy(*slope);
                need_dx.then(|| {
                    x.values()
                        .iter()
                        .zip(dy.values())
                        .map(|(v, g)| if *v > T::zero() { *g } else { a * *g })
                        .collect()
                })
            }
            (LayerSpec::Tanh, Cache::Output(y)) => need_dx.then(|| {
                y.values()
                    .iter()
                    .zip(dy.values())
                    .map(|(t, g)| *g * (T::one() - *t * *t))
                    .collect()
            }),
            (LayerSpec::Sigmoid, Cache::Output(y)) => need_dx.then(|| {
                y.values()
                    .iter()
                    .zip(dy.values())
                    .map(|(s, g)| *g * *s * (T::one() - *s))
                    .collect()
            }),
            (LayerSpec::Softmax, Cache::Output(y)) => need_dx.then(|| {
                let f = lin[0];
                let mut dx = vec![T::zero(); in_len];
                for ((yr, gr), dr) in y.values().chunks(f).zip(dy.values().chunks(f)).zip(dx.chunks_mut(f)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |a, (p, g)| a + *p * *g);
                    for ((d, p), g) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = *p * (*g - dot);
                    }
                }
                dx
            }),
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => need_dx.then(|| match mask {
                Some(m) => dy.values().iter().zip(&m).map(|(g, k)| *g * *k).collect(),
                None => dy.values().to_vec(),
            }),
            (LayerSpec::Flatten | LayerSpec::Reshape { .. }, Cache::None) => need_dx.then(|| dy.into_values()),
            (spec, _) => {
                return Err(Error::State(format!("cache of layer {i} does not belong to {}", spec.name())));
            }
        };
        Ok(dx.map(|v| Tensor::raw(in_shape, v)))
    }
}

fn batch_moments<T: Scalar>(x: &[T], n: usize, maps: usize, positions: usize) -> (Vec<T>, Vec<T>) {
    let count = T::from_usize(n * positions).unwrap();
    let mut mean = vec![T::zero(); maps];
    for s in 0..n {
        for (c, m) in mean.iter_mut().enumerate() {
            let base = (s * maps + c) * positions;
            *m += x[base..base + positions].iter().fold(T::zero(), |a, &v| a + v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![T::zero(); maps];
    for s in 0..n {
        for c in 0..maps {
            let base = (s * maps + c) * positions;
            var[c] += x[base..base + positions]
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean[c]) * (v - mean[c]));
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Deterministic RNG for dropout masks and shuffling.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws a sub-seed from a parent stream.
pub fn derive_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.random()
}
