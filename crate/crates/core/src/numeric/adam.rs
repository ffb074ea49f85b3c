use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh accumulators shaped like `params`.
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(format!(
            "adam: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(format!(
                "adam: param {:?}, grad {:?}, accumulator {:?}",
                p.shape(),
                g.shape(),
                m.shape()
            )));
        }
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in params[i].data_mut().iter_mut().zip(m).zip(v) {
            *pj -= lr * (mj / c1) / ((vj / c2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![vecs(&[1.0, -2.0, 3.5])];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &[vecs(&[0.0; 3])], &mut st, 1e-3).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_closed_form() {
        // After one step m_hat = g and v_hat = g^2, so the update is lr*g/(|g|+eps).
        let g = [0.5, -2.0, 1e-3];
        let lr = 1e-2;
        let mut p = vec![vecs(&[0.0; 3])];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vecs(&g)], &mut st, lr).unwrap();
        for (pj, gj) in p[0].data().iter().zip(g) {
            let expect = -lr * gj / (gj.abs() + 1e-8);
            assert!((pj - expect).abs() < 1e-15, "{pj} vs {expect}");
        }
    }

    #[test]
    fn second_step_matches_scalar_recurrence() {
        let (g1, g2, lr) = (0.3, -0.1, 0.01);
        let mut p = vec![vecs(&[1.0])];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[vecs(&[g1])], &mut st, lr).unwrap();
        adam_step(&mut p, &[vecs(&[g2])], &mut st, lr).unwrap();
        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        let mut x = 1.0 - lr * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        x -= lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0].data()[0] - x).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![vecs(&[0.0; 3])];
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &[vecs(&[0.0; 2])], &mut st, 1e-3).is_err());
        assert!(adam_step(&mut p, &[], &mut st, 1e-3).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut p = vec![vecs(&[0.2, -0.4])];
            let mut st = AdamState::new(&p);
            for k in 0..20 {
                let g: Vec<f64> = p[0].data().iter().map(|x| 2.0 * x + 0.01 * k as f64).collect();
                adam_step(&mut p, &[vecs(&g)], &mut st, 1e-2).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
