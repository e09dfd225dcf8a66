use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Step-decay learning rate: `lr0 * decay^(epoch / interval)`.
/// An `interval` of `None` keeps the rate constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
    pub interval: Option<usize>,
}

impl LrSchedule {
    pub fn step_decay(lr0: f64, decay: f64, interval: usize) -> Self {
        Self {
            lr0,
            decay,
            interval: Some(interval),
        }
    }

    pub fn constant(lr0: f64) -> Self {
        Self {
            lr0,
            decay: 1.0,
            interval: None,
        }
    }

    /// Rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.interval {
            Some(iv) if iv > 0 => self.lr0 * self.decay.powi((epoch / iv) as i32),
            _ => self.lr0,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(schedule: LrSchedule) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr`. All gradients are
    /// checked before any parameter changes.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[&str], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        let label = |i: usize| names.get(i).map_or_else(|| format!("parameter {i}"), |s| s.to_string());
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient of {} is {:?}, parameter is {:?}",
                    label(i),
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", label(i))));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape()) {
            return Err(Error::Shape("parameter set changed between steps".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let pd = p.data_mut();
            for (k, &gk) in g.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                let mhat = *mk / bc1;
                let vk = &mut v.data_mut()[k];
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let vhat = *vk / bc2;
                pd[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
