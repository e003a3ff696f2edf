use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::tensor::{Tensor, TensorMap};
use crate::error::Result;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Fixed pseudo-random projection of the output, so that the scalar
/// objective exercises every output unit with a different weight.
fn projection(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn objective(net: &Network<f64>, inputs: &TensorMap<f64>, coef: &[f64]) -> Result<f64> {
    let y = net.infer(inputs)?;
    Ok(y.data().iter().zip(coef).map(|(a, b)| a * b).sum())
}

/// Central finite differences of a projected network output, in `f64`, for
/// every parameter element and every input element.
pub fn numeric_gradients(net: &Network<f64>, inputs: &TensorMap<f64>, eps: f64) -> Result<(TensorMap<f64>, TensorMap<f64>)> {
    let out_len = net.infer(inputs)?.len();
    let coef = projection(out_len);
    let mut work = net.clone();
    let mut params = BTreeMap::new();
    let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
    for name in names {
        let n = work.param(&name).unwrap().value.len();
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = work.param(&name).unwrap().value.data()[i];
            work.param_mut(&name).unwrap().value.data_mut()[i] = orig + eps;
            let plus = objective(&work, inputs, &coef)?;
            work.param_mut(&name).unwrap().value.data_mut()[i] = orig - eps;
            let minus = objective(&work, inputs, &coef)?;
            work.param_mut(&name).unwrap().value.data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * eps);
        }
        let shape = work.param(&name).unwrap().value.shape().to_vec();
        params.insert(name, Tensor::new(shape, g)?);
    }
    let mut input_grads = BTreeMap::new();
    for (name, t) in inputs {
        let mut g = vec![0.0; t.len()];
        let mut perturbed = inputs.clone();
        for (i, gi) in g.iter_mut().enumerate() {
            let orig = t.data()[i];
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let plus = objective(net, &perturbed, &coef)?;
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let minus = objective(net, &perturbed, &coef)?;
            perturbed.get_mut(name).unwrap().data_mut()[i] = orig;
            *gi = (plus - minus) / (2.0 * eps);
        }
        input_grads.insert(name.clone(), Tensor::new(t.shape().to_vec(), g)?);
    }
    Ok((params, input_grads))
}

/// Largest relative error between backpropagated and finite-difference
/// gradients over all parameters and inputs.
///
/// The check runs in `f64` on a cast copy of `net`; keep it to small networks.
pub fn gradient_check(net: &Network<f32>, inputs: &TensorMap<f32>, eps: f64) -> Result<f64> {
    let mut wide = net.cast::<f64>();
    let inputs: TensorMap<f64> = inputs.iter().map(|(k, v)| (k.clone(), v.cast())).collect();
    let out = wide.forward(&inputs)?;
    let coef = Tensor::new(out.shape().to_vec(), projection(out.len()))?;
    let analytic = wide.backward(&coef)?;
    let (num_params, num_inputs) = numeric_gradients(&wide, &inputs, eps)?;

    let mut worst: f64 = 0.0;
    for (name, num) in num_params.iter().chain(num_inputs.iter()) {
        let ana = analytic
            .params
            .get(name)
            .or_else(|| analytic.inputs.get(name));
        for (i, n) in num.data().iter().enumerate() {
            let a = ana.map_or(0.0, |t| t.data()[i]);
            worst = worst.max(relative_error(a, *n));
        }
    }
    Ok(worst)
}
