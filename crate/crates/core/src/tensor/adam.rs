//! Adam with bias correction, operating on flat parameter slices.

use super::Tensor;
use crate::error::{Error, Result};

/// Step-size schedule knobs shared by every parameter.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> AdamState {
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter; call once before a round of
    /// `update_one` calls so bias correction sees a consistent t.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies one Adam update to parameter `i` in place.  m and v track
    /// exponential moving averages of the gradient and its square, both
    /// divided by `1 - beta^t` before use.
    pub fn update_one(&mut self, i: usize, param: &mut [f64], grad: &[f64], h: &AdamHyper) -> Result<()> {
        if i >= self.m.len() || param.len() != grad.len() || param.len() != self.m[i].len() {
            return Err(Error::InvalidParameter(format!(
                "adam update_one({i}): param {} elements, grad {}, state {}",
                param.len(),
                grad.len(),
                self.m.get(i).map_or(0, Vec::len)
            )));
        }
        let bc1 = 1.0 - h.beta1.powi(self.step as i32);
        let bc2 = 1.0 - h.beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m[i], &mut self.v[i]);
        for (((pv, &gv), mv), vv) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
            *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
            *pv -= h.lr * (*mv / bc1) / ((*vv / bc2).sqrt() + h.eps);
        }
        Ok(())
    }
}

/// One Adam step over a whole parameter list.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    h: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidParameter(format!(
            "adam_step given {} params but {} grads",
            params.len(),
            grads.len()
        )));
    }
    state.begin_step();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update_one(i, p.data_mut(), g.data(), h)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_regardless_of_gradient_scale() {
        // With bias correction, step 1 gives m_hat = g and v_hat = g^2,
        // so the update is lr * g / (|g| + eps) ~= lr * sign(g).
        for &g in &[1e-6, 1.0, 1e6] {
            let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
            let grad = Tensor::new(vec![1], vec![g]).unwrap();
            let mut st = AdamState::new(&[1]);
            let h = AdamHyper {
                lr: 0.01,
                ..AdamHyper::default()
            };
            adam_step(&mut [&mut p], &[&grad], &mut st, &h).unwrap();
            assert!((p.data()[0] + 0.01).abs() < 1e-4, "g={g} p={}", p.data()[0]);
        }
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[2]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut st, &AdamHyper::default()).is_err());
    }
}
