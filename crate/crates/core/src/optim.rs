//! Adam with bias-corrected moments, and plain SGD.
//!
//! Update per parameter ρ with gradient g at step x:
//!
//! ```text
//! v  ← β₁·v + (1 − β₁)·g          s  ← β₂·s + (1 − β₂)·g²
//! v' = v / (1 − β₁ˣ)              s' = s / (1 − β₂ˣ)
//! ρ  ← ρ − lr · v' / √(s' + δ)
//! ```
//!
//! The moments are stored as undamped discounted sums `V = Σ β^(x−i) g_i`
//! together with their normalizer `D = Σ_{i<x} β^i`. Since
//! `v = (1 − β)·V` and `1 − βˣ = (1 − β)·D`, the corrected moment is `V / D`;
//! at step 1 `D = 1`, so `v' = g` and `s' = g²` hold bitwise.

use std::collections::BTreeMap;

use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

pub const PAPER_LR: f64 = 0.000364;
pub const PAPER_BETA1: f64 = 0.5032;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_DELTA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("optimizer state used before init()")]
    NotInitialized,
    #[error("gradient for {0:?} is not finite")]
    NonFiniteGradient(String),
    #[error("no gradient supplied for parameter {0:?}")]
    MissingGradient(String),
    #[error("gradient for {name:?} has shape {got:?}, parameter has {want:?}")]
    GradientShape {
        name: String,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("parameter {0:?} was not present at init()")]
    UnknownParameter(String),
    #[error("invalid hyper-parameter: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to s' inside the square root.
    pub delta: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: PAPER_LR,
            beta1: PAPER_BETA1,
            beta2: DEFAULT_BETA2,
            delta: DEFAULT_DELTA,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(OptimError::InvalidConfig(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(OptimError::InvalidConfig(format!("lr = {}", self.lr)));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(OptimError::InvalidConfig(format!("delta = {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Adam moment state for one collection of parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Option<BTreeMap<String, Moments<T>>>,
    norm1: T,
    norm2: T,
}

impl<T: Scalar> AdamState<T> {
    /// Uninitialized state; call [`AdamState::init`] before stepping.
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: None,
            norm1: T::zero(),
            norm2: T::zero(),
        }
    }

    /// Zeroes both moments for every parameter in `params`.
    pub fn init(&mut self, params: &ParamStore<T>) -> Result<(), OptimError> {
        self.config.validate()?;
        let moments = params
            .iter()
            .map(|(n, t)| {
                (
                    n.to_string(),
                    Moments {
                        first: vec![T::zero(); t.numel()],
                        second: vec![T::zero(); t.numel()],
                    },
                )
            })
            .collect();
        self.moments = Some(moments);
        self.step = 0;
        self.norm1 = T::zero();
        self.norm2 = T::zero();
        Ok(())
    }

    pub fn initialized(params: &ParamStore<T>, config: AdamConfig) -> Result<Self, OptimError> {
        let mut s = Self::new(config);
        s.init(params)?;
        Ok(s)
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn moments(&self, name: &str) -> Option<&Moments<T>> {
        self.moments.as_ref()?.get(name)
    }

    /// The raw first moment `v` of the update rule.
    pub fn first_moment(&self, name: &str) -> Option<Vec<T>> {
        let b = T::from_f64_lossy(self.config.beta1);
        let m = self.moments(name)?;
        Some(m.first.iter().map(|&v| (T::one() - b) * v).collect())
    }

    /// The raw second moment `s` of the update rule.
    pub fn second_moment(&self, name: &str) -> Option<Vec<T>> {
        let b = T::from_f64_lossy(self.config.beta2);
        let m = self.moments(name)?;
        Some(m.second.iter().map(|&v| (T::one() - b) * v).collect())
    }

    /// Bias-corrected first moment `v'`.
    pub fn corrected_first_moment(&self, name: &str) -> Option<Vec<T>> {
        let m = self.moments(name)?;
        (self.step > 0).then(|| m.first.iter().map(|&v| v / self.norm1).collect())
    }

    /// Bias-corrected second moment `s'`.
    pub fn corrected_second_moment(&self, name: &str) -> Option<Vec<T>> {
        let m = self.moments(name)?;
        (self.step > 0).then(|| m.second.iter().map(|&v| v / self.norm2).collect())
    }

    /// One Adam update of every parameter in `params`.
    ///
    /// All gradients are validated before any parameter changes.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<(), OptimError> {
        let moments = self.moments.as_mut().ok_or(OptimError::NotInitialized)?;
        check_grads(params, grads)?;
        for (name, _) in params.iter() {
            if !moments.contains_key(name) {
                return Err(OptimError::UnknownParameter(name.to_string()));
            }
        }

        let b1 = T::from_f64_lossy(self.config.beta1);
        let b2 = T::from_f64_lossy(self.config.beta2);
        let lr = T::from_f64_lossy(self.config.lr);
        let delta = T::from_f64_lossy(self.config.delta);
        self.step += 1;
        self.norm1 = b1 * self.norm1 + T::one();
        self.norm2 = b2 * self.norm2 + T::one();
        let (n1, n2) = (self.norm1, self.norm2);

        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = moments.get_mut(name).expect("checked above");
            for (((rho, &gv), v), s) in p
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.first.iter_mut())
                .zip(m.second.iter_mut())
            {
                *v = b1 * *v + gv;
                *s = b2 * *s + gv * gv;
                let v_hat = *v / n1;
                let s_hat = *s / n2;
                *rho = *rho - lr * v_hat / (s_hat + delta).sqrt();
            }
        }
        Ok(())
    }
}

fn check_grads<T: Scalar>(
    params: &ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
) -> Result<(), OptimError> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| OptimError::MissingGradient(name.to_string()))?;
        if g.shape() != p.shape() {
            return Err(OptimError::GradientShape {
                name: name.to_string(),
                want: p.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient(name.to_string()));
        }
    }
    Ok(())
}

/// `ρ ← ρ − lr·g` for every parameter.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    lr: T,
) -> Result<(), OptimError> {
    check_grads(params, grads)?;
    for (name, p) in params.iter_mut() {
        for (rho, &g) in p.data_mut().iter_mut().zip(grads[name].data()) {
            *rho = *rho - lr * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    fn grad(value: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(value))])
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = single(0.7);
        let mut adam = AdamState::initialized(&p, AdamConfig::default()).unwrap();
        for _ in 0..5 {
            adam.step(&mut p, &grad(0.0)).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), Some(0.7));
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let mut p = single(1.0);
        let mut adam = AdamState::initialized(&p, AdamConfig::default()).unwrap();
        adam.step(&mut p, &grad(0.5)).unwrap();
        assert_eq!(adam.corrected_first_moment("w").unwrap(), vec![0.5]);
        assert_eq!(adam.corrected_second_moment("w").unwrap(), vec![0.25]);
        let moved = 1.0 - p.get("w").unwrap().item().unwrap();
        assert!((moved - 3.64e-4).abs() < 1e-11, "moved {moved}");
        assert!(moved <= PAPER_LR);
    }

    #[test]
    fn raw_moments_follow_the_recurrence() {
        let mut p = single(0.0);
        let mut adam = AdamState::initialized(&p, AdamConfig::default()).unwrap();
        adam.step(&mut p, &grad(2.0)).unwrap();
        let v = adam.first_moment("w").unwrap()[0];
        assert!((v - (1.0 - PAPER_BETA1) * 2.0).abs() < 1e-15);
        let s = adam.second_moment("w").unwrap()[0];
        assert!((s - (1.0 - DEFAULT_BETA2) * 4.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let mut p = single(1.0);
        let mut fresh = AdamState::<f64>::new(AdamConfig::default());
        assert_eq!(fresh.step(&mut p, &grad(1.0)), Err(OptimError::NotInitialized));

        let mut adam = AdamState::initialized(&p, AdamConfig::default()).unwrap();
        assert_eq!(
            adam.step(&mut p, &grad(f64::NAN)),
            Err(OptimError::NonFiniteGradient("w".into()))
        );
        assert_eq!(
            adam.step(&mut p, &BTreeMap::new()),
            Err(OptimError::MissingGradient("w".into()))
        );
        assert_eq!(adam.step_count(), 0);
        assert_eq!(p.get("w").unwrap().item(), Some(1.0));

        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::initialized(&p, bad).is_err());
    }

    #[test]
    fn sgd_examples() {
        let mut p = single(1.0);
        sgd_step(&mut p, &grad(2.0), 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().item(), Some(1.0));
        sgd_step(&mut p, &grad(2.0), 0.1).unwrap();
        assert!((p.get("w").unwrap().item().unwrap() - 0.8).abs() < 1e-15);
        assert!(sgd_step(&mut p, &grad(f64::INFINITY), 0.1).is_err());
    }

    #[test]
    fn sgd_and_adam_descend_together() {
        for g in [1e-3, 0.5, 40.0] {
            let mut a = single(0.0);
            let mut s = single(0.0);
            let mut adam = AdamState::initialized(&a, AdamConfig::default()).unwrap();
            adam.step(&mut a, &grad(g)).unwrap();
            sgd_step(&mut s, &grad(g), 0.01).unwrap();
            assert!(a.get("w").unwrap().item().unwrap() < 0.0);
            assert!(s.get("w").unwrap().item().unwrap() < 0.0);
        }
    }
}
