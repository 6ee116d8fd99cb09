use indexmap::IndexMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Plain gradient descent or bias-corrected Adam over a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Optimizer<T = f32> {
    kind: OptimizerKind,
    lr: f64,
    adam: AdamHyper,
    moments: IndexMap<String, Moments<T>>,
    step_count: u64,
}

impl<T: Element> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(TensorError::Contract(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        Ok(Optimizer {
            kind,
            lr,
            adam: AdamHyper::default(),
            moments: IndexMap::new(),
            step_count: 0,
        })
    }

    pub fn sgd(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, lr)
    }

    pub fn with_adam_hyper(mut self, hyper: AdamHyper) -> Self {
        self.adam = hyper;
        self
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn has_moments(&self, name: &str) -> bool {
        self.moments.contains_key(name)
    }

    /// Adam first/second moment buffers in insertion order.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &[T], &[T])> {
        self.moments
            .iter()
            .map(|(n, m)| (n.as_str(), m.first.as_slice(), m.second.as_slice()))
    }

    /// Rebuilds an optimizer mid-run, e.g. from a checkpoint.
    pub fn restore(
        kind: OptimizerKind,
        lr: f64,
        step_count: u64,
        moments: impl IntoIterator<Item = (String, Vec<T>, Vec<T>)>,
    ) -> Result<Self> {
        let mut opt = Self::new(kind, lr)?;
        opt.step_count = step_count;
        for (name, first, second) in moments {
            if kind != OptimizerKind::Adam || first.len() != second.len() {
                return Err(TensorError::Contract(format!("invalid moment buffers for `{name}`")));
            }
            opt.moments.insert(name, Moments { first, second });
        }
        Ok(opt)
    }

    /// Applies one update from the gradients stored in `params`, then clears them.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        for (name, p, _) in params.iter() {
            match &p.grad {
                None => {
                    return Err(TensorError::Contract(format!("parameter `{name}` has no gradient")))
                }
                Some(g) if g.len() != p.value.len() => {
                    return Err(TensorError::Contract(format!(
                        "gradient for `{name}` has {} entries, parameter has {}",
                        g.len(),
                        p.value.len()
                    )))
                }
                Some(_) => {}
            }
        }
        self.step_count += 1;
        let lr = T::from_f64_lossy(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (_, p) in params.iter_mut() {
                    let g = p.grad.take().expect("checked above");
                    p.value
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(w, &g)| *w = *w - lr * g);
                }
            }
            OptimizerKind::Adam => {
                let AdamHyper { beta1, beta2, eps } = self.adam;
                let t = self.step_count as i32;
                let bc1 = T::from_f64_lossy(1.0 - beta1.powi(t));
                let bc2 = T::from_f64_lossy(1.0 - beta2.powi(t));
                let (b1, b2, eps) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2), T::from_f64_lossy(eps));
                let one = T::one();
                for (name, p) in params.iter_mut() {
                    let g = p.grad.take().expect("checked above");
                    let m = self.moments.entry(name.to_string()).or_insert_with(|| Moments {
                        first: vec![T::zero(); g.len()],
                        second: vec![T::zero(); g.len()],
                    });
                    if m.first.len() != g.len() {
                        return Err(TensorError::Contract(format!(
                            "moment buffers for `{name}` do not match its shape"
                        )));
                    }
                    let w = p.value.data_mut();
                    for i in 0..g.len() {
                        m.first[i] = b1 * m.first[i] + (one - b1) * g[i];
                        m.second[i] = b2 * m.second[i] + (one - b2) * g[i] * g[i];
                        let m_hat = m.first[i] / bc1;
                        let v_hat = m.second[i] / bc2;
                        w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::NdArray;

    fn single(value: f64, grad: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("p", NdArray::scalar(value));
        p.get_mut("p").unwrap().grad = Some(vec![grad]);
        p
    }

    #[test]
    fn sgd_step() {
        let mut p = single(1.0, 0.5);
        Optimizer::sgd(0.1).unwrap().step(&mut p).unwrap();
        assert!((p.get("p").unwrap().data()[0] - 0.95).abs() < 1e-15);
        assert!(p.get_mut("p").unwrap().grad.is_none(), "gradient cleared");
    }

    #[test]
    fn zero_lr_is_identity() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut p = single(0.3, 7.0);
            Optimizer::new(kind, 0.0).unwrap().step(&mut p).unwrap();
            assert_eq!(p.get("p").unwrap().data()[0], 0.3);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr_times_sign() {
        for g in [2.5, -0.01] {
            let mut p = single(0.0, g);
            let mut opt = Optimizer::adam(1e-3).unwrap();
            opt.step(&mut p).unwrap();
            let expect = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p.get("p").unwrap().data()[0] - expect).abs() < 1e-12);
            assert_eq!(opt.step_count(), 1);
            assert!(opt.has_moments("p"));
        }
    }

    #[test]
    fn sgd_keeps_no_moments() {
        let mut p = single(0.0, 1.0);
        let mut opt = Optimizer::sgd(1.0).unwrap();
        opt.step(&mut p).unwrap();
        assert!(!opt.has_moments("p"));
    }

    #[test]
    fn missing_gradient_names_parameter() {
        let mut p = single(0.0, 1.0);
        p.insert("other", NdArray::scalar(0.0));
        let err = Optimizer::sgd(0.1).unwrap().step(&mut p).unwrap_err();
        assert!(err.to_string().contains("`other`"), "{err}");
        assert_eq!(p.get("p").unwrap().data()[0], 0.0, "nothing applied");
    }

    #[test]
    fn negative_lr_rejected() {
        assert!(Optimizer::<f32>::sgd(-1.0).is_err());
    }
}
