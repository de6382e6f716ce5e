//! Central finite-difference verification of analytic gradients.

use super::layers::{MaskSource, Mode, Stack};
use super::tensor::Tensor2;
use crate::error::Result;

/// Per-tensor outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the entry with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_error))
    }

    /// Tensors whose worst entry exceeds the tolerance.
    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params
            .iter()
            .filter(|p| !(p.max_rel_error <= self.tolerance))
            .collect()
    }
}

#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// An objective whose parameters can be perturbed in place and re-evaluated
/// with all randomness held fixed.
pub trait Perturbable {
    fn param_names(&self) -> Vec<String>;
    fn params_mut(&mut self) -> Vec<&mut Tensor2>;
    fn objective(&self) -> Result<f64>;
}

/// Compares `analytic` (aligned with `target.params_mut()`) against central
/// differences `(f(θ+h) − f(θ−h)) / 2h`, one entry at a time.
pub fn check_against_finite_differences<P: Perturbable>(
    target: &mut P,
    analytic: &[Tensor2],
    tolerance: f64,
    fd_step: f64,
) -> Result<GradReport> {
    let names = target.param_names();
    let mut params = Vec::with_capacity(analytic.len());
    let n_tensors = target.params_mut().len();
    if n_tensors != analytic.len() || names.len() != n_tensors {
        return Err(crate::error::Error::TapeMismatch(format!(
            "{} analytic gradients for {} parameters",
            analytic.len(),
            n_tensors
        )));
    }
    for (t, grad) in analytic.iter().enumerate() {
        let mut worst = ParamCheck {
            name: names[t].clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..grad.len() {
            let original = target.params_mut()[t].data()[k];
            target.params_mut()[t].data_mut()[k] = original + fd_step;
            let plus = target.objective()?;
            target.params_mut()[t].data_mut()[k] = original - fd_step;
            let minus = target.objective()?;
            target.params_mut()[t].data_mut()[k] = original;
            let numeric = (plus - minus) / (2.0 * fd_step);
            let a = grad.data()[k];
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || err.is_nan() {
                worst.max_rel_error = err;
                worst.worst_index = k;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        params.push(worst);
    }
    let passed = params.iter().all(|p| p.max_rel_error <= tolerance);
    Ok(GradReport {
        params,
        tolerance,
        passed,
    })
}

/// A scalar reduction of a stack output: returns the value and its gradient.
pub type ScalarLoss<'a> = dyn Fn(&Tensor2) -> Result<(f64, Tensor2)> + 'a;

struct StackObjective<'a> {
    stack: Stack,
    input: &'a Tensor2,
    masks: Vec<Tensor2>,
    loss: &'a ScalarLoss<'a>,
}

impl Perturbable for StackObjective<'_> {
    fn param_names(&self) -> Vec<String> {
        self.stack.param_names("stack")
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        self.stack.params_mut()
    }

    fn objective(&self) -> Result<f64> {
        let (out, _) = self
            .stack
            .forward_pure(self.input, Mode::Train, &mut MaskSource::Replay(&self.masks))?;
        Ok((self.loss)(&out)?.0 + self.stack.l1_penalty())
    }
}

/// Analytic gradients of `loss(stack(input)) + l1_penalty` for a train-mode
/// pass with the given frozen dropout masks.
pub fn stack_gradients(
    stack: &Stack,
    input: &Tensor2,
    masks: &[Tensor2],
    loss: &ScalarLoss<'_>,
) -> Result<Vec<Tensor2>> {
    let (out, tape) = stack.forward_pure(input, Mode::Train, &mut MaskSource::Replay(masks))?;
    let (_, upstream) = loss(&out)?;
    Ok(stack.backward(&tape, &upstream)?.1)
}

/// Gradient check of a layer stack in train mode with frozen dropout masks.
pub fn grad_check(
    stack: &Stack,
    input: &Tensor2,
    masks: &[Tensor2],
    loss: &ScalarLoss<'_>,
    tolerance: f64,
    fd_step: f64,
) -> Result<GradReport> {
    let analytic = stack_gradients(stack, input, masks, loss)?;
    check_with_analytic(stack, input, masks, loss, &analytic, tolerance, fd_step)
}

/// Like [`grad_check`] but with caller-supplied analytic gradients.
pub fn check_with_analytic(
    stack: &Stack,
    input: &Tensor2,
    masks: &[Tensor2],
    loss: &ScalarLoss<'_>,
    analytic: &[Tensor2],
    tolerance: f64,
    fd_step: f64,
) -> Result<GradReport> {
    let mut objective = StackObjective {
        stack: stack.clone(),
        input,
        masks: masks.to_vec(),
        loss,
    };
    check_against_finite_differences(&mut objective, analytic, tolerance, fd_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::layers::{Activation, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Σ c_ij · y_ij with fixed random coefficients, so every output matters.
    fn weighted_sum(coef: Tensor2) -> impl Fn(&Tensor2) -> Result<(f64, Tensor2)> {
        move |y: &Tensor2| Ok((y.mul(&coef)?.sum(), coef.clone()))
    }

    fn two_layer_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Dense {
                in_dim: 5,
                out_dim: 4,
                l1: 1e-3,
                bias: false,
            },
            LayerSpec::BatchNorm {
                dim: 4,
                epsilon: 1e-5,
                momentum: 0.9,
            },
            LayerSpec::Activation(Activation::LeakyRelu(0.3)),
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Dense {
                in_dim: 4,
                out_dim: 3,
                l1: 1e-3,
                bias: true,
            },
            LayerSpec::Activation(Activation::Sigmoid),
        ]
    }

    fn setup(seed: u64) -> (Stack, Tensor2, Vec<Tensor2>, Tensor2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = Stack::build(&two_layer_specs(), &mut rng).unwrap();
        let x = Tensor2::from_fn(6, 5, |_, _| rng.random_range(-1.5..1.5));
        let (_, tape) = stack
            .forward_pure(&x, Mode::Train, &mut MaskSource::Sample(&mut rng))
            .unwrap();
        let coef = Tensor2::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        (stack, x, tape.dropout_masks(), coef)
    }

    #[test]
    fn random_two_layer_stack_passes() {
        for seed in [1, 2, 3] {
            let (stack, x, masks, coef) = setup(seed);
            let loss = weighted_sum(coef);
            let report = grad_check(&stack, &x, &masks, &loss, 1e-5, 1e-5).unwrap();
            assert!(report.passed, "seed {seed}: {:?}", report.failures());
        }
    }

    #[test]
    fn injected_fault_is_flagged() {
        let (stack, x, masks, coef) = setup(4);
        let loss = weighted_sum(coef);
        let mut analytic = stack_gradients(&stack, &x, &masks, &loss).unwrap();
        // Fault the largest entry of the last weight tensor.
        let target = analytic.len() - 2;
        let (k, _) = analytic[target]
            .data()
            .iter()
            .enumerate()
            .fold(
                (0, 0.0),
                |(bk, bv), (k, v)| if v.abs() > bv { (k, v.abs()) } else { (bk, bv) },
            );
        analytic[target].data_mut()[k] *= 1.01;
        let report = check_with_analytic(&stack, &x, &masks, &loss, &analytic, 1e-5, 1e-5).unwrap();
        assert!(!report.passed);
        let failures = report.failures();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].name, stack.param_names("stack")[target]);
        assert_eq!(failures[0].worst_index, k);
    }

    #[test]
    fn all_zero_case() {
        let specs = [LayerSpec::Dense {
            in_dim: 3,
            out_dim: 2,
            l1: 0.0,
            bias: true,
        }];
        let mut stack = Stack::build(&specs, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for p in stack.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor2::zeros(2, 3);
        let loss = |y: &Tensor2| Ok((y.map(|v| v * v).sum(), y.scale(2.0)));
        let analytic = stack_gradients(&stack, &x, &[], &loss).unwrap();
        assert!(analytic.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        let report = grad_check(&stack, &x, &[], &loss, 1e-5, 1e-5).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn each_activation_passes() {
        for act in [
            Activation::Relu,
            Activation::LeakyRelu(0.3),
            Activation::Sigmoid,
            Activation::Identity,
        ] {
            let specs = [
                LayerSpec::Dense {
                    in_dim: 3,
                    out_dim: 4,
                    l1: 0.0,
                    bias: true,
                },
                LayerSpec::Activation(act),
            ];
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let stack = Stack::build(&specs, &mut rng).unwrap();
            let x = Tensor2::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
            let coef = Tensor2::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
            let loss = weighted_sum(coef);
            let report = grad_check(&stack, &x, &[], &loss, 1e-5, 1e-5).unwrap();
            assert!(report.passed, "{act:?}: {:?}", report.failures());
        }
    }
}
