use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Scalar};

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<F>> = store.ids().map(|id| vec![F::zero(); store.values(id).len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>, lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: vec![self.m.len()],
                rhs: vec![store.len(), grads.len()],
            });
        }
        for id in store.ids() {
            let n = self.m[id.index()].len();
            if store.values(id).len() != n || grads.get(id).len() != n {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: store.shape(id).to_vec(),
                    rhs: vec![grads.get(id).len()],
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = F::of(1.0 - self.beta1.powi(t));
        let c2 = F::of(1.0 - self.beta2.powi(t));
        let (lr, eps) = (F::of(lr), F::of(self.eps));
        let one = F::one();
        for id in store.ids() {
            let i = id.index();
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &g), m), v) in store.values_mut(id).iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
