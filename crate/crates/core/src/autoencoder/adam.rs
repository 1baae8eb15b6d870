//! Adam with bias-corrected moment estimates.

use super::network::{Gradients, NetworkParams};
use super::AeError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Gradients,
    second: Gradients,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(params),
            second: Gradients::zeros_like(params),
        }
    }
}

/// Applies one Adam update for step `t` (1-based).
///
/// Fails without touching `params` if `t == 0` or any gradient entry is not finite.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
    t: u64,
    lr: f64,
) -> Result<(), AeError> {
    if t == 0 {
        return Err(AeError::InvalidStep);
    }
    if let Some(layer) = grads.first_non_finite() {
        return Err(AeError::NonFiniteGradient { layer });
    }
    let cfg = state.config;
    let corr1 = 1.0 - cfg.beta1.powf(t as f64);
    let corr2 = 1.0 - cfg.beta2.powf(t as f64);
    for (((layer, g), m), v) in params
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut state.first.layers)
        .zip(&mut state.second.layers)
    {
        update(
            &mut layer.weights,
            &g.weights,
            &mut m.weights,
            &mut v.weights,
            cfg,
            corr1,
            corr2,
            lr,
        );
        update(
            &mut layer.bias,
            &g.bias,
            &mut m.bias,
            &mut v.bias,
            cfg,
            corr1,
            corr2,
            lr,
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: AdamConfig,
    corr1: f64,
    corr2: f64,
    lr: f64,
) {
    for (((p, &g), m), v) in theta.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::network::Layer;

    fn tiny() -> NetworkParams {
        let layer = Layer {
            inputs: 2,
            outputs: 2,
            weights: vec![0.5, -0.5, 1.0, 2.0],
            bias: vec![0.0, 1.0],
        };
        NetworkParams::from_layers(vec![layer]).unwrap()
    }

    fn constant_grads(p: &NetworkParams, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(p);
        for l in &mut grads.layers {
            l.weights.fill(g);
            l.bias.fill(g);
        }
        grads
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = tiny();
        let before = p.clone();
        let mut state = AdamState::new(&p, AdamConfig::default());
        let g = Gradients::zeros_like(&p);
        for t in 1..=5 {
            adam_step(&mut p, &g, &mut state, t, 0.01).unwrap();
        }
        assert_eq!(p.layers(), before.layers());
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let lr = 9.5e-3;
        let mut p = tiny();
        let mut state = AdamState::new(&p, AdamConfig::default());
        let g = constant_grads(&p, 0.37);
        let mut prev = p.layers()[0].weights[0];
        for t in 1..=2000 {
            adam_step(&mut p, &g, &mut state, t, lr).unwrap();
            let w = p.layers()[0].weights[0];
            let step = prev - w;
            // m̂ = g and v̂ = g² at every step, so |step| = lr·|g|/(|g|+ε).
            let expected = lr * 0.37 / (0.37 + 1e-8);
            assert!((step - expected).abs() < 1e-12, "t={t}: {step}");
            prev = w;
        }
    }

    #[test]
    fn identical_runs_share_trajectories() {
        let run = || {
            let mut p = tiny();
            let mut state = AdamState::new(&p, AdamConfig::default());
            for t in 1..=10 {
                let g = constant_grads(&p, (t as f64).sin());
                adam_step(&mut p, &g, &mut state, t, 0.01).unwrap();
            }
            p
        };
        assert_eq!(run().layers(), run().layers());
    }

    #[test]
    fn rejects_non_finite_gradient_and_step_zero() {
        let mut p = tiny();
        let before = p.clone();
        let mut state = AdamState::new(&p, AdamConfig::default());
        let mut g = Gradients::zeros_like(&p);
        g.layers[0].bias[1] = f64::NAN;
        assert!(matches!(
            adam_step(&mut p, &g, &mut state, 1, 0.01),
            Err(AeError::NonFiniteGradient { layer: 0 })
        ));
        assert_eq!(p.layers(), before.layers());
        let g = Gradients::zeros_like(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut state, 0, 0.01),
            Err(AeError::InvalidStep)
        ));
    }
}
