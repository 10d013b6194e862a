//! Adam optimizer with bias correction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::math::Element;
use crate::tensor::Tensor;

/// Adam with bias-corrected first and second moments. Moment buffers are
/// keyed by parameter name and created lazily on the first step; the step
/// counter advances once per [`Adam::step`] call, not per tensor.
pub struct Adam<E: Element> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    state: BTreeMap<String, Moments<E>>,
}

struct Moments<E: Element> {
    m: Tensor<E>,
    v: Tensor<E>,
}

impl<E: Element> Adam<E> {
    /// Standard coefficients: `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, state: BTreeMap::new() }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    /// Replaces the learning rate; used by the plateau schedule mid-run.
    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update to every parameter. Every parameter must have a
    /// gradient of matching shape.
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<E>>,
        grads: &BTreeMap<String, Tensor<E>>,
    ) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let b1 = E::from_f64(self.beta1);
        let nb1 = E::from_f64(1.0 - self.beta1);
        let b2 = E::from_f64(self.beta2);
        let nb2 = E::from_f64(1.0 - self.beta2);
        let inv_c1 = E::from_f64(1.0 / c1);
        let inv_c2 = E::from_f64(1.0 / c2);
        let lr = E::from_f64(self.lr);
        let eps = E::from_f64(self.eps);

        for (name, param) in params.iter_mut() {
            let grad = grads.get(name).ok_or_else(|| {
                Error::contract("adam_step", format!("missing gradient for parameter {name}"))
            })?;
            if grad.shape() != param.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "gradient shape {:?} does not match parameter {name} {:?}",
                        grad.shape(),
                        param.shape()
                    ),
                ));
            }
            let moments = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: Tensor::zeros(param.shape()),
                v: Tensor::zeros(param.shape()),
            });
            let md = moments.m.data_mut();
            let vd = moments.v.data_mut();
            let pd = param.data_mut();
            for ((p, g), (m, v)) in
                pd.iter_mut().zip(grad.data()).zip(md.iter_mut().zip(vd.iter_mut()))
            {
                *m = b1 * *m + nb1 * *g;
                *v = b2 * *v + nb2 * *g * *g;
                let m_hat = *m * inv_c1;
                let v_hat = *v * inv_c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
