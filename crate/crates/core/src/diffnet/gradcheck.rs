use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{bce_batch, xent_batch};
use super::{Mode, Sequential, Tensor};
use crate::error::Result;

/// Scalar objective placed on top of the network output.
#[derive(Debug, Clone)]
pub enum CheckLoss {
    /// `sum_i w_i * y_i` with fixed pseudo-random weights drawn from `seed`.
    WeightedSum { seed: u64 },
    /// Mean binary cross-entropy of the outputs against targets.
    Bce { targets: Vec<f64> },
    /// Mean cross-entropy of softmax outputs against labels.
    Xent { labels: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, so that gradients near zero
    /// are compared in absolute terms.
    pub floor: f64,
    pub mode: Mode,
    /// Seed of the dropout stream, re-used on every evaluation so that all
    /// evaluations share one mask.
    pub mask_seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            mode: Mode::TrainFrozenStats,
            mask_seed: 17,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub input: TensorCheck,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Largest error over parameter tensors (0 for a parameter-free network).
    pub fn max_param_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_error(&self) -> f64 {
        self.max_param_error().max(self.input.max_rel_error)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn evaluate(net: &mut Sequential<f64>, x: &Tensor<f64>, loss: &CheckLoss, cfg: &GradCheckConfig) -> Result<(f64, Tensor<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mask_seed);
    let y = net.forward(x, cfg.mode, &mut rng)?;
    match loss {
        CheckLoss::WeightedSum { seed } => {
            let mut wr = ChaCha8Rng::seed_from_u64(*seed);
            let w: Vec<f64> = (0..y.len()).map(|_| wr.random_range(-1.0..1.0)).collect();
            let l = y.values().iter().zip(&w).map(|(a, b)| a * b).sum();
            Ok((l, Tensor::raw(y.shape().to_vec(), w)))
        }
        CheckLoss::Bce { targets } => bce_batch(&y, targets),
        CheckLoss::Xent { labels } => xent_batch(&y, labels),
    }
}

/// Compares reverse-mode gradients of every trainable tensor and of the
/// input with central finite differences, in double precision.
pub fn grad_check(net: &mut Sequential<f64>, input: &Tensor<f64>, loss: &CheckLoss, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    net.zero_grad();
    let (_, dy) = evaluate(net, input, loss, cfg)?;
    let dx = net.backward(&dy, true)?.expect("input gradient requested");
    let analytic: Vec<Option<Vec<f64>>> = net
        .params()
        .iter()
        .map(|p| p.grad.as_ref().map(|g| g.values().to_vec()))
        .collect();

    let h = cfg.step;
    let mut tensors = Vec::new();
    for (i, grads) in analytic.iter().enumerate() {
        let Some(grads) = grads else { continue };
        let mut worst = 0.0f64;
        for (j, &a) in grads.iter().enumerate() {
            let orig = net.params().get(i).value.values()[j];
            net.params_mut().get_mut(i).value.values_mut()[j] = orig + h;
            let (lp, _) = evaluate(net, input, loss, cfg)?;
            net.params_mut().get_mut(i).value.values_mut()[j] = orig - h;
            let (lm, _) = evaluate(net, input, loss, cfg)?;
            net.params_mut().get_mut(i).value.values_mut()[j] = orig;
            worst = worst.max(relative_error(a, (lp - lm) / (2.0 * h), cfg.floor));
        }
        tensors.push(TensorCheck {
            name: net.params().get(i).name.clone(),
            coordinates: grads.len(),
            max_rel_error: worst,
        });
    }

    let mut x = input.clone();
    let mut worst = 0.0f64;
    for j in 0..x.len() {
        let orig = x.values()[j];
        x.values_mut()[j] = orig + h;
        let (lp, _) = evaluate(net, &x, loss, cfg)?;
        x.values_mut()[j] = orig - h;
        let (lm, _) = evaluate(net, &x, loss, cfg)?;
        x.values_mut()[j] = orig;
        worst = worst.max(relative_error(dx.values()[j], (lp - lm) / (2.0 * h), cfg.floor));
    }
    let input_check = TensorCheck {
        name: "input".into(),
        coordinates: x.len(),
        max_rel_error: worst,
    };
    let passed = tensors.iter().all(|t| t.max_rel_error < cfg.tolerance) && input_check.max_rel_error < cfg.tolerance;
    Ok(GradCheckReport {
        tensors,
        input: input_check,
        tolerance: cfg.tolerance,
        passed,
    })
}
