use super::network::{Network, Param};
use super::tensor::Real;
use crate::error::{Error, Result};

/// Plain gradient descent: `param <- param - epsilon * grad` on every
/// trainable parameter. Nothing is written unless all gradients are finite.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
pub fn sgd_step<T: Real>(params: &mut [Param<T>], epsilon: T) -> Result<()> {
    if !(epsilon >= T::zero()) {
        return Err(Error::Config(format!(
            "step size must be >= 0, got {epsilon:?}"
        )));
    }
    for p in params.iter().filter(|p| p.trainable) {
        if p.tensor.grad().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", p.name)));
        }
    }
    if epsilon == T::zero() {
        return Ok(());
    }
    for p in params.iter_mut().filter(|p| p.trainable) {
        let (values, grad) = p.tensor.parts_mut();
        for (v, &g) in values.iter_mut().zip(grad.iter()) {
            *v -= epsilon * g;
        }
    }
    Ok(())
}

/// Polyak averaging `target <- tau * source + (1 - tau) * target`, applied to
/// every stored value including batch-norm running statistics.
pub fn soft_update<T: Real>(target: &mut Network<T>, source: &Network<T>, tau: T) -> Result<()> {
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(Error::Config(format!(
            "tau must lie in [0, 1], got {tau:?}"
        )));
    }
    if target.params().len() != source.params().len() {
        return Err(Error::ParamMismatch(format!(
            "{} has {} parameters, {} has {}",
            target.name(),
            target.params().len(),
            source.name(),
            source.params().len()
        )));
    }
    for (t, s) in target.params().iter().zip(source.params()) {
        if t.tensor.shape() != s.tensor.shape() {
            return Err(Error::shape(&t.name, t.tensor.shape(), s.tensor.shape()));
        }
    }
    if tau == T::zero() {
        return Ok(());
    }
    let exact_copy = tau == T::one();
    for (t, s) in target.params_mut().iter_mut().zip(source.params()) {
        for (tv, &sv) in t.tensor.values_mut().iter_mut().zip(s.tensor.values()) {
            *tv = if exact_copy {
                sv
            } else {
                *tv + tau * (sv - *tv)
            };
        }
    }
    Ok(())
}

impl<T: Real> Network<T> {
    pub fn sgd_step(&mut self, epsilon: T) -> Result<()> {
        sgd_step(self.params_mut(), epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{NetworkBuilder, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(seed: u64) -> Network<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NetworkBuilder::new("t", &[1])
            .dense(1)
            .build(&mut rng)
            .unwrap()
    }

    #[test]
    fn zero_step_leaves_params() {
        let mut net = tiny(1);
        let before = net.clone();
        net.params_mut()[0].tensor.grad_mut()[0] = 3.0;
        net.sgd_step(0.0).unwrap();
        assert_eq!(net.flat_values(), before.flat_values());
    }

    #[test]
    fn single_step_arithmetic() {
        let mut net = tiny(1);
        net.params_mut()[0].tensor.values_mut()[0] = 1.0;
        net.params_mut()[0].tensor.grad_mut()[0] = 2.0;
        net.sgd_step(0.1).unwrap();
        assert!((net.params()[0].tensor.values()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_whole_step() {
        let mut net = tiny(1);
        let before = net.flat_values();
        net.params_mut()[0].tensor.grad_mut()[0] = 1.0;
        net.params_mut()[1].tensor.grad_mut()[0] = f64::NAN;
        match net.sgd_step(0.1) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("t.0.bias")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(net.flat_values(), before);
    }

    #[test]
    fn descent_on_square_contracts_geometrically() {
        // f(w) = w^2 through the tape; each step multiplies w by (1 - 2 eps).
        let mut w = crate::autodiff::Tensor::<f64>::new(vec![1], vec![1.0]).unwrap();
        let eps = 0.1;
        for k in 1..=80 {
            let mut tape = Tape::new();
            let v = tape.param(&w, true);
            let loss = tape.mse(v, &[0.0]).unwrap();
            let g = tape.backward(loss).unwrap();
            w.grad_mut().copy_from_slice(g.get(v).unwrap());
            let mut p = [crate::autodiff::Param {
                name: "w".into(),
                tensor: w.clone(),
                trainable: true,
            }];
            sgd_step(&mut p, eps).unwrap();
            w = p[0].tensor.clone();
            let closed = (1.0f64 - 2.0 * eps).powi(k);
            assert!((w.values()[0] - closed).abs() < 1e-12);
        }
        assert!(w.values()[0].abs() < 1e-6);
    }

    #[test]
    fn soft_update_extremes() {
        let src = tiny(1);
        let mut tgt = tiny(2);
        let orig = tgt.flat_values();
        soft_update(&mut tgt, &src, 0.0).unwrap();
        assert_eq!(tgt.flat_values(), orig);
        soft_update(&mut tgt, &src, 1.0).unwrap();
        assert_eq!(tgt.flat_values(), src.flat_values());
    }

    #[test]
    fn soft_update_follows_closed_form() {
        let mut src = tiny(1);
        let mut tgt = tiny(1);
        src.load_flat(&[1.0, 1.0]).unwrap();
        tgt.load_flat(&[0.0, 0.0]).unwrap();
        for k in 1..=300 {
            soft_update(&mut tgt, &src, 0.01).unwrap();
            let closed = 1.0 - 0.99f64.powi(k);
            assert!((tgt.flat_values()[0] - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_update_rejects_shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Network<f64> = NetworkBuilder::new("t", &[2])
            .dense(1)
            .build(&mut rng)
            .unwrap();
        let mut b = tiny(0);
        assert!(soft_update(&mut b, &a, 0.5).is_err());
    }
}
