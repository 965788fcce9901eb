use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidParameter(format!("unknown optimizer '{other}' (expected sgd or adam)"))),
        }
    }
}

fn check_shapes(params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            what: "gradient tensors",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::DimensionMismatch {
                what: "gradient tensor length",
                expected: p.len(),
                actual: g.len(),
            });
        }
    }
    Ok(())
}

/// `theta <- theta - lr * g`.
pub fn sgd_step(lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (t, d) in p.iter_mut().zip(g.iter()) {
            *t -= lr * d;
        }
    }
    Ok(())
}

/// Adam with bias-corrected moments. The moment buffers take their shapes
/// from the first call.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        check_shapes(params, grads)?;
        if self.step == 0 {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::InvalidParameter(
                "parameter shapes changed between optimizer steps".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(lr)),
        })
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => sgd_step(*lr, params, grads),
            Optimizer::Adam(state) => state.step(params, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_example() {
        let mut theta = [1.0];
        sgd_step(0.1, &mut [&mut theta], &[&[2.0]]).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-15);
        sgd_step(0.1, &mut [&mut theta], &[&[0.0]]).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let mut adam = AdamState::new(0.1);
        let mut theta = [1.0, 1.0, 1.0, 1.0];
        let g = [3.0, -0.02, 0.0, 1e-3];
        adam.step(&mut [&mut theta], &[&g]).unwrap();
        assert!((theta[0] - 0.9).abs() < 1e-8);
        assert!((theta[1] - 1.1).abs() < 1e-6);
        assert_eq!(theta[2], 1.0);
        assert!((theta[3] - 0.9).abs() < 1e-5);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_matches_hand_rolled_recurrence() {
        let mut adam = AdamState::new(0.05);
        let mut theta = [0.3];
        let grads = [0.5, -1.0, 2.0];
        let (mut m, mut v, mut t) = (0.0f64, 0.0f64, 0.3f64);
        for (i, &g) in grads.iter().enumerate() {
            adam.step(&mut [&mut theta], &[&[g]]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let n = (i + 1) as i32;
            t -= 0.05 * (m / (1.0 - 0.9f64.powi(n))) / ((v / (1.0 - 0.999f64.powi(n))).sqrt() + 1e-8);
            assert!((theta[0] - t).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut a = [0.0, 0.0];
        assert!(sgd_step(0.1, &mut [&mut a], &[&[1.0]]).is_err());
        let mut adam = AdamState::new(0.1);
        adam.step(&mut [&mut a], &[&[1.0, 1.0]]).unwrap();
        let mut b = [0.0; 3];
        assert!(adam.step(&mut [&mut b], &[&[1.0, 1.0, 1.0]]).is_err());
        assert!(Optimizer::new(OptimizerKind::Adam, 0.0).is_err());
    }
}
