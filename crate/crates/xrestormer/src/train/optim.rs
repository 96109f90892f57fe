//! L1 loss and the AdamW parameter update.

use crate::error::{fmt_shape, Error, Result};
use crate::model::ModelState;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Denominator stabilizer inside the AdamW update.
pub const ADAM_EPS: f64 = 1e-8;

/// Mean absolute difference between a prediction and its target,
/// recorded on the tape so the gradient `sign(pred - target) / n`
/// flows back through the prediction.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let (ps, ts) = (tape.value(pred).shape().to_vec(), tape.value(target).shape().to_vec());
    if ps != ts {
        return Err(Error::Shape(format!(
            "l1 loss prediction {} target {}",
            fmt_shape(&ps),
            fmt_shape(&ts)
        )));
    }
    let diff = tape.sub(pred, target)?;
    let mag = tape.abs(diff);
    Ok(tape.mean_all(mag))
}

/// AdamW hyperparameters; the schedule supplies the learning rate per step.
#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.99, eps: ADAM_EPS, weight_decay: 0.0 }
    }
}

/// First and second moment estimates plus the shared step counter, one
/// moment pair per parameter tensor in registration order.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    /// Fresh zero moments shaped like the model's parameters.
    pub fn new(model: &ModelState<T>) -> Self {
        let mut m = Vec::new();
        model.visit(&mut |_, t| m.push(Tensor::zeros(t.shape())));
        let v = m.clone();
        Self { m, v, step: 0 }
    }

    /// Restores moments saved in a checkpoint, checking the counts line up.
    pub fn from_parts(m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, step: u64) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Contract(format!(
                "optimizer moments disagree: {} first vs {} second",
                m.len(),
                v.len()
            )));
        }
        Ok(Self { m, v, step })
    }
}

/// One AdamW step over every model parameter.
///
/// Weight decay is decoupled: each parameter first shrinks by
/// `lr * weight_decay * theta`, then moves by the bias-corrected moment
/// ratio. `grads` must align with the model's visit order (the order
/// `ModelState::register` returns); a non-finite gradient aborts with the
/// offending parameter's name before anything mutates. Update arithmetic
/// runs in f64 and is stored back in the parameter dtype.
pub fn adamw_step<T: Scalar>(
    model: &mut ModelState<T>,
    opt: &mut OptimizerState<T>,
    grads: &[Tensor<T>],
    lr: f64,
    hp: &AdamW,
) -> Result<()> {
    let mut layout: Vec<(String, Vec<usize>)> = Vec::new();
    model.visit(&mut |name, t| layout.push((name, t.shape().to_vec())));
    if grads.len() != layout.len() || opt.m.len() != layout.len() {
        return Err(Error::Contract(format!(
            "expected {} gradient tensors, got {} (optimizer holds {})",
            layout.len(),
            grads.len(),
            opt.m.len()
        )));
    }
    for ((name, shape), g) in layout.iter().zip(grads) {
        if g.shape() != &shape[..] {
            return Err(Error::Shape(format!(
                "gradient for {name} is {}, parameter is {}",
                fmt_shape(g.shape()),
                fmt_shape(shape)
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
    }

    opt.step += 1;
    let bc1 = 1.0 - hp.beta1.powi(opt.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(opt.step as i32);
    let decay = lr * hp.weight_decay;

    let mut idx = 0;
    model.visit_mut(&mut |_, theta| {
        let (m, v, g) = (&mut opt.m[idx], &mut opt.v[idx], &grads[idx]);
        idx += 1;
        let td = theta.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..td.len() {
            let g = g.data()[i].as_f64();
            let mut t = td[i].as_f64();
            t -= decay * t;
            let m_new = hp.beta1 * md[i].as_f64() + (1.0 - hp.beta1) * g;
            let v_new = hp.beta2 * vd[i].as_f64() + (1.0 - hp.beta2) * g * g;
            t -= lr * (m_new / bc1) / ((v_new / bc2).sqrt() + hp.eps);
            td[i] = T::from_f64(t);
            md[i] = T::from_f64(m_new);
            vd[i] = T::from_f64(v_new);
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::Tape;

    fn tiny_model() -> ModelState<f64> {
        ModelState::init(&ModelConfig::tiny(), 7).unwrap()
    }

    fn grads_like(model: &ModelState<f64>, fill: f64) -> Vec<Tensor<f64>> {
        let mut out = Vec::new();
        model.visit(&mut |_, t| out.push(Tensor::full(t.shape(), fill)));
        out
    }

    fn snapshot(model: &ModelState<f64>) -> Vec<Tensor<f64>> {
        let mut out = Vec::new();
        model.visit(&mut |_, t| out.push(t.clone()));
        out
    }

    #[test]
    fn l1_matches_hand_values_and_checks_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 2], vec![0.5, 1.0, 1.0, 5.0]).unwrap());
        let loss = l1_loss(&mut tape, a, b).unwrap();
        // |{-0.5, 0, 1, -2}| averages to 0.875
        assert!((tape.value(loss).item() - 0.875).abs() < 1e-15);

        let c = tape.constant(Tensor::zeros(&[3]));
        assert!(l1_loss(&mut tape, a, c).is_err());
    }

    #[test]
    fn l1_gradient_is_scaled_sign() {
        let mut tape = Tape::<f64>::new();
        let pred = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let target = Tensor::new(vec![4], vec![0.0, 1.0, 2.0, 3.5]).unwrap();
        let p = tape.leaf(&pred);
        let t = tape.constant(target);
        let loss = l1_loss(&mut tape, p, t).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(p).unwrap();
        for (got, want) in g.data().iter().zip([0.25, -0.25, -0.25, -0.25]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradients_without_decay_change_nothing() {
        let mut model = tiny_model();
        let before = snapshot(&model);
        let grads = grads_like(&model, 0.0);
        let mut opt = OptimizerState::new(&model);
        adamw_step(&mut model, &mut opt, &grads, 1e-3, &AdamW::default()).unwrap();
        for (a, b) in snapshot(&model).iter().zip(&before) {
            assert!(a.bits_eq(b));
        }
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_gradients_with_decay_shrink_uniformly() {
        let mut model = tiny_model();
        let before = snapshot(&model);
        let grads = grads_like(&model, 0.0);
        let mut opt = OptimizerState::new(&model);
        let hp = AdamW { weight_decay: 0.01, ..AdamW::default() };
        let lr = 1e-3;
        adamw_step(&mut model, &mut opt, &grads, lr, &hp).unwrap();
        let factor = 1.0 - lr * hp.weight_decay;
        for (after, before) in snapshot(&model).iter().zip(&before) {
            for (a, b) in after.data().iter().zip(before.data()) {
                assert!((a - b * factor).abs() <= 1e-15 * b.abs().max(1.0));
            }
        }
    }

    /// A single scalar parameter stepped by hand: after one update with
    /// gradient g, m = (1-b1) g, v = (1-b2) g^2, and the bias corrections
    /// cancel to a step of exactly lr * g / (|g| + eps).
    #[test]
    fn scalar_step_matches_hand_computation() {
        let mut model = tiny_model();
        let mut opt = OptimizerState::new(&model);
        let hp = AdamW::default();
        let lr = 2e-3;
        let g = 0.37;
        let before = snapshot(&model);
        let grads = grads_like(&model, g);
        adamw_step(&mut model, &mut opt, &grads, lr, &hp).unwrap();
        let want_step = lr * g / (g.abs() + hp.eps);
        for (after, before) in snapshot(&model).iter().zip(&before) {
            for (a, b) in after.data().iter().zip(before.data()) {
                assert!(((b - a) - want_step).abs() < 1e-12, "step {} vs {}", b - a, want_step);
            }
        }
    }

    /// With weight decay at zero the update must equal a plain scripted
    /// Adam, bitwise, over a multi-step trajectory.
    #[test]
    fn matches_scripted_adam_without_decay() {
        let mut model = tiny_model();
        let mut opt = OptimizerState::new(&model);
        let hp = AdamW::default();

        // independent scalar reference following one concrete parameter
        let mut name0 = None;
        model.visit(&mut |name, t| {
            if name0.is_none() {
                name0 = Some((name, t.data()[0]));
            }
        });
        let (_, mut theta) = name0.unwrap();
        let (mut m, mut v) = (0.0f64, 0.0f64);

        for step in 1..=5 {
            let g = 0.1 * step as f64;
            let lr = 1e-3;
            m = hp.beta1 * m + (1.0 - hp.beta1) * g;
            v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
            let mh = m / (1.0 - hp.beta1.powi(step));
            let vh = v / (1.0 - hp.beta2.powi(step));
            theta -= lr * mh / (vh.sqrt() + hp.eps);

            let grads = grads_like(&model, g);
            adamw_step(&mut model, &mut opt, &grads, lr, &hp).unwrap();
        }

        let mut got = None;
        model.visit(&mut |_, t| {
            if got.is_none() {
                got = Some(t.data()[0]);
            }
        });
        assert_eq!(got.unwrap().to_bits(), theta.to_bits());
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut model = tiny_model();
        let mut opt = OptimizerState::new(&model);
        let mut grads = grads_like(&model, 0.0);
        let poisoned = 3;
        grads[poisoned].data_mut()[0] = f64::NAN;
        let mut names = Vec::new();
        model.visit(&mut |name, _| names.push(name));

        let before = snapshot(&model);
        let err = adamw_step(&mut model, &mut opt, &grads, 1e-3, &AdamW::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&names[poisoned]), "{msg} should name {}", names[poisoned]);
        assert_eq!(opt.step, 0, "failed step must not advance the counter");
        for (a, b) in snapshot(&model).iter().zip(&before) {
            assert!(a.bits_eq(b), "failed step must not mutate parameters");
        }
    }

    #[test]
    fn mismatched_gradient_list_rejected() {
        let mut model = tiny_model();
        let mut opt = OptimizerState::new(&model);
        let mut grads = grads_like(&model, 0.0);
        grads.pop();
        assert!(adamw_step(&mut model, &mut opt, &grads, 1e-3, &AdamW::default()).is_err());
    }
}
