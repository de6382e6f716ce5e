use super::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::linalg::Tensor2;

/// RMSprop accumulators, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub accumulators: Vec<Tensor2>,
    pub step: u64,
}

impl OptimizerState {
    pub fn for_params(params: &[&Tensor2]) -> Self {
        OptimizerState {
            accumulators: params.iter().map(|p| Tensor2::zeros(p.rows(), p.cols())).collect(),
            step: 0,
        }
    }
}

/// One RMSprop step, elementwise:
/// `s ← ρ·s + (1−ρ)·g²`, `θ ← θ − lr·g / (√s + ε)`.
pub fn rmsprop_update(
    params: &mut [&mut Tensor2],
    grads: &[Tensor2],
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.accumulators.len() {
        return Err(Error::Invalid(format!(
            "rmsprop: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.accumulators.len()
        )));
    }
    for ((p, g), s) in params.iter().zip(grads).zip(&state.accumulators) {
        p.check_same_shape(g, "rmsprop_update")?;
        p.check_same_shape(s, "rmsprop_update")?;
    }
    let OptimizerConfig {
        learning_rate: lr,
        rho,
        epsilon: eps,
    } = *config;
    for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut state.accumulators) {
        for ((theta, &gv), acc) in p.data_mut().iter_mut().zip(g.data()).zip(s.data_mut()) {
            *acc = rho * *acc + (1.0 - rho) * gv * gv;
            let denom = acc.sqrt() + eps;
            if denom > 0.0 {
                *theta -= lr * gv / denom;
            }
        }
    }
    state.step += 1;
    Ok(())
}
