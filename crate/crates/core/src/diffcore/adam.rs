use serde::{Deserialize, Serialize};

use super::params::{GradTree, ParamTree};
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates and the step counter of Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamTree) -> Self {
        Self {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step applied in place.
pub fn adam_update(
    params: &mut ParamTree,
    grads: &GradTree,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !params.is_congruent(grads) || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::ShapeMismatch(
            "parameters, gradients and optimizer state differ in shape".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let p = params.flatten_mut();
    for (((p, g), m), v) in p
        .iter_mut()
        .zip(grads.flatten())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::params::LayoutBuilder;
    use super::*;
    use proptest::prelude::*;

    fn scalar_tree(v: f64) -> ParamTree {
        let mut b = LayoutBuilder::new();
        b.add("p", 1, 1);
        ParamTree::from_flat(b.finish(), vec![v]).unwrap()
    }

    fn grads_for(tree: &ParamTree, g: &[f64]) -> GradTree {
        let mut grads = GradTree::zeros_like(tree);
        grads.flatten_mut().copy_from_slice(g);
        grads
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_tree(0.0);
        let g = grads_for(&p, &[0.5]);
        let mut s = AdamState::new(&p);
        adam_update(&mut p, &g, &mut s, 0.01).unwrap();
        // m_hat = 0.5, v_hat = 0.25 -> update = 0.01 * 0.5 / (0.5 + 1e-8)
        let expected = -0.01 * 0.5 / (0.5 + 1e-8);
        assert!((p.flatten()[0] - expected).abs() < 1e-15);
        assert!((p.flatten()[0] + 0.01).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_only_counts_the_step() {
        let mut p = scalar_tree(1.25);
        let g = grads_for(&p, &[0.0]);
        let mut s = AdamState::new(&p);
        adam_update(&mut p, &g, &mut s, 0.01).unwrap();
        assert_eq!(p.flatten()[0], 1.25);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn identical_calls_are_identical() {
        let p0 = scalar_tree(0.3);
        let g = grads_for(&p0, &[-1.7]);
        let (mut a, mut b) = (p0.clone(), p0.clone());
        let (mut sa, mut sb) = (AdamState::new(&p0), AdamState::new(&p0));
        adam_update(&mut a, &g, &mut sa, 0.02).unwrap();
        adam_update(&mut b, &g, &mut sb, 0.02).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut p = scalar_tree(0.0);
        let g = grads_for(&p, &[1.0]);
        let mut s = AdamState {
            m: vec![0.0; 2],
            v: vec![0.0; 2],
            step: 0,
        };
        assert!(adam_update(&mut p, &g, &mut s, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn gradient_rescaling_keeps_update_signs(
            g in proptest::collection::vec(-10.0f64..10.0, 4),
            c in 1e-3f64..1e3,
        ) {
            let mut b = LayoutBuilder::new();
            b.add("p", 4, 1);
            let p0 = ParamTree::zeros(b.finish());
            let step = |scale: f64| {
                let mut p = p0.clone();
                let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
                let grads = grads_for(&p, &scaled);
                let mut s = AdamState::new(&p);
                adam_update(&mut p, &grads, &mut s, 0.01).unwrap();
                p.flatten().iter().map(|v| v.signum() * (v.abs() > 0.0) as i32 as f64).collect::<Vec<_>>()
            };
            prop_assert_eq!(step(1.0), step(c));
        }
    }
}
