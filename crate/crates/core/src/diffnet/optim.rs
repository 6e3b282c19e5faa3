use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are allocated on the first step, one
/// pair per trainable tensor in declaration order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        let trainable: Vec<usize> = (0..params.len()).filter(|&i| params.get(i).is_trainable()).collect();
        if self.first.is_empty() {
            for &i in &trainable {
                let n = params.get(i).value.len();
                self.first.push(vec![T::zero(); n]);
                self.second.push(vec![T::zero(); n]);
            }
        }
        if self.first.len() != trainable.len() {
            return Err(Error::Shape("optimizer state does not match the parameter set".into()));
        }
        self.steps += 1;
        let c = &self.config;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one = T::one();
        let corr1 = T::from_f64_lossy(1.0 - c.beta1.powi(self.steps as i32));
        let corr2 = T::from_f64_lossy(1.0 - c.beta2.powi(self.steps as i32));
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.eps);
        for (slot, &i) in trainable.iter().enumerate() {
            let p = params.get_mut(i);
            let grad = p.grad.as_ref().expect("trainable");
            if grad.len() != self.first[slot].len() {
                return Err(Error::Shape(format!("moment shape mismatch for {}", p.name)));
            }
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            for (((w, g), m), v) in p.value.values_mut().iter_mut().zip(grad.values()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * *g;
                *v = b2 * *v + (one - b2) * *g * *g;
                let mhat = *m / corr1;
                let vhat = *v / corr2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Piecewise-constant learning rate: `initial`, divided by `divisor` at each
/// epoch listed in `decay_epochs` (0-based epoch indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub initial: f64,
    pub decay_epochs: Vec<usize>,
    pub divisor: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            initial: 0.1,
            decay_epochs: vec![16, 24],
            divisor: 10.0,
        }
    }
}

impl StepSchedule {
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.decay_epochs
            .iter()
            .filter(|&&e| epoch >= e)
            .fold(self.initial, |lr, _| lr / self.divisor)
    }
}

/// Plain stochastic gradient descent with a step schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub schedule: StepSchedule,
}

impl Sgd {
    pub fn new(schedule: StepSchedule) -> Self {
        Sgd { schedule }
    }

    /// Applies one update with the rate of `epoch`; returns that rate.
    pub fn step<T: Scalar>(&self, params: &mut ParamSet<T>, epoch: usize) -> f64 {
        let lr = self.schedule.learning_rate(epoch);
        let rate = T::from_f64_lossy(lr);
        for p in params.iter_mut() {
            if let Some(g) = &p.grad {
                for (w, g) in p.value.values_mut().iter_mut().zip(g.values()) {
                    *w -= rate * *g;
                }
            }
        }
        lr
    }
}

/// Either optimizer, for code that is agnostic to the choice.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Adam(Adam<T>),
    Sgd(Sgd),
}

impl<T: Scalar> Optimizer<T> {
    pub fn step(&mut self, params: &mut ParamSet<T>, epoch: usize) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params),
            Optimizer::Sgd(s) => {
                s.step(params, epoch);
                Ok(())
            }
        }
    }
}
