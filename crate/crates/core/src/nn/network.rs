use std::collections::BTreeMap;

use rand::Rng;

use super::layers::{Cache, Layer, LayerSpec, Param};
use super::scalar::Scalar;
use super::tensor::{Tensor, TensorMap};
use crate::error::{Error, Result};

/// Deliberate backward-rule corruption, used only to prove that gradient
/// checking catches broken derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    /// Negates the input gradient produced by the layer at this index.
    FlipInputGrad(usize),
}

#[derive(Clone, Debug, Default)]
pub struct Gradients<T = f32> {
    /// Keyed by parameter name.
    pub params: BTreeMap<String, Tensor<T>>,
    /// Keyed by input name (the main input and every concatenated side input).
    pub inputs: BTreeMap<String, Tensor<T>>,
}

/// A sequential network with one main input and optional side inputs that
/// [`Layer::Concat`] layers splice in.
#[derive(Debug)]
pub struct Network<T: Scalar = f32> {
    input: String,
    input_shape: Vec<usize>,
    sides: BTreeMap<String, usize>,
    layers: Vec<Layer<T>>,
    output_shape: Vec<usize>,
    tape: Option<Vec<Option<Cache<T>>>>,
    fault: Option<BackwardFault>,
}

impl<T: Scalar> Clone for Network<T> {
    /// Clones weights and structure; a recorded forward pass is not carried over.
    fn clone(&self) -> Self {
        Self {
            input: self.input.clone(),
            input_shape: self.input_shape.clone(),
            sides: self.sides.clone(),
            layers: self.layers.clone(),
            output_shape: self.output_shape.clone(),
            tape: None,
            fault: self.fault,
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Cache<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Cache")
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a zero-initialized network and checks that every layer accepts
    /// the shape produced by its predecessor.
    pub fn from_specs(input: &str, input_shape: Vec<usize>, specs: &[LayerSpec]) -> Result<Self> {
        let layers = specs.iter().map(Layer::from_spec).collect::<Result<Vec<_>>>()?;
        let mut sides = BTreeMap::new();
        for s in specs {
            if let LayerSpec::ConcatInput { input: name, width } = s {
                if name == input || sides.insert(name.clone(), *width).is_some() {
                    return Err(Error::Config(format!("side input {name} declared twice")));
                }
            }
        }
        let mut shape = input_shape.clone();
        for l in &layers {
            shape = l.output_shape(&shape, &sides)?;
        }
        let mut seen = std::collections::HashSet::new();
        for l in &layers {
            for p in l.params() {
                if !seen.insert(p.name.clone()) {
                    return Err(Error::Config(format!("duplicate parameter name {}", p.name)));
                }
            }
        }
        Ok(Self {
            input: input.to_string(),
            input_shape,
            sides,
            layers,
            output_shape: shape,
            tape: None,
            fault: None,
        })
    }

    pub fn input_name(&self) -> &str {
        &self.input
    }

    /// Per-sample shape of the main input.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for l in &mut self.layers {
            l.init_he(rng);
        }
    }

    /// Marks every convolutional parameter (plain and residual) as frozen.
    pub fn freeze_convs(&mut self, frozen: bool) {
        for l in &mut self.layers {
            if l.is_conv() {
                for p in l.params_mut() {
                    p.frozen = frozen;
                }
            }
        }
    }

    pub fn all_frozen(&self) -> bool {
        self.params().iter().all(|p| p.frozen)
    }

    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, fault: Option<BackwardFault>) {
        self.fault = fault;
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input: self.input.clone(),
            input_shape: self.input_shape.clone(),
            sides: self.sides.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            output_shape: self.output_shape.clone(),
            tape: None,
            fault: self.fault,
        }
    }

    fn check_inputs(&self, inputs: &TensorMap<T>) -> Result<()> {
        let x = inputs
            .get(&self.input)
            .ok_or_else(|| Error::shape(format!("missing input {}", self.input)))?;
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::shape(format!(
                "input {} has shape {:?}, expected [n, {:?}]",
                self.input,
                x.shape(),
                self.input_shape
            )));
        }
        let n = x.batch();
        for (name, width) in &self.sides {
            let s = inputs.get(name).ok_or_else(|| Error::shape(format!("missing side input {name}")))?;
            if s.shape() != [n, *width] {
                return Err(Error::shape(format!(
                    "side input {name} has shape {:?}, expected [{n}, {width}]",
                    s.shape()
                )));
            }
        }
        Ok(())
    }

    fn run(&self, inputs: &TensorMap<T>, record: bool) -> Result<(Tensor<T>, Vec<Option<Cache<T>>>)> {
        self.check_inputs(inputs)?;
        let mut caches = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        let mut x: Option<Tensor<T>> = None;
        for l in &self.layers {
            let cur = x.as_ref().unwrap_or(&inputs[&self.input]);
            let (y, c) = l.forward(cur, inputs, record)?;
            if record {
                caches.push(c);
            }
            x = Some(y);
        }
        let out = x.unwrap_or_else(|| inputs[&self.input].clone());
        Ok((out, caches))
    }

    /// Training forward pass; records what [`Network::backward`] needs.
    pub fn forward(&mut self, inputs: &TensorMap<T>) -> Result<Tensor<T>> {
        self.tape = None;
        let (y, caches) = self.run(inputs, true)?;
        self.tape = Some(caches);
        Ok(y)
    }

    /// Forward pass without recording. Produces the same values as `forward`.
    pub fn infer(&self, inputs: &TensorMap<T>) -> Result<Tensor<T>> {
        Ok(self.run(inputs, false)?.0)
    }

    /// Backpropagates `grad_output` through the last recorded forward pass.
    /// The record is consumed.
    pub fn backward(&mut self, grad_output: &Tensor<T>) -> Result<Gradients<T>> {
        let caches = self
            .tape
            .take()
            .ok_or_else(|| Error::State("backward called without a recorded forward pass".into()))?;
        let n = grad_output.batch();
        if grad_output.shape().len() != self.output_shape.len() + 1 || grad_output.shape()[1..] != self.output_shape[..] {
            return Err(Error::shape(format!(
                "output gradient {:?} does not match output [n, {:?}]",
                grad_output.shape(),
                self.output_shape
            )));
        }
        let mut grads = Gradients { params: BTreeMap::new(), inputs: BTreeMap::new() };
        let mut dy = grad_output.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let cache = cache.expect("recorded pass has a cache per layer");
            let mut dx = layer.backward(cache, &dy, &mut grads.params, &mut grads.inputs);
            if self.fault == Some(BackwardFault::FlipInputGrad(i)) {
                dx.data_mut().iter_mut().for_each(|v| *v = -*v);
            }
            dy = dx;
        }
        debug_assert_eq!(dy.batch(), n);
        grads.inputs.insert(self.input.clone(), dy);
        Ok(grads)
    }

    /// Smallest |pre-activation| feeding any ReLU for these inputs. Finite
    /// differences are only trustworthy when this exceeds the perturbation.
    pub fn relu_margin(&self, inputs: &TensorMap<T>) -> Result<f64> {
        self.check_inputs(inputs)?;
        let mut margin = f64::INFINITY;
        let mut x = inputs[&self.input].clone();
        for l in &self.layers {
            if let Some(m) = l.relu_margin(&x)? {
                margin = margin.min(m);
            }
            x = l.forward(&x, inputs, false)?.0;
        }
        Ok(margin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Units;
    use rand::SeedableRng;

    fn map(pairs: Vec<(&str, Tensor<f32>)>) -> TensorMap<f32> {
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn zero_weights_sigmoid_head_gives_half() {
        let net = Network::<f32>::from_specs(
            "x",
            vec![4],
            &[
                LayerSpec::FullyConnected { name: "fc".into(), inputs: 4, outputs: 3 },
                LayerSpec::Sigmoid { units: Units::ALL },
            ],
        )
        .unwrap();
        let y = net.infer(&map(vec![("x", Tensor::new(vec![2, 4], vec![1., -2., 3., 0.5, 9., 9., 9., 9.]).unwrap())])).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.5));
    }

    #[test]
    fn identity_one_by_one_conv_is_identity() {
        let mut net = Network::<f32>::from_specs(
            "img",
            vec![3, 3, 2],
            &[LayerSpec::Conv2d { name: "c".into(), in_channels: 2, out_channels: 2, kernel: 1, stride: 1 }],
        )
        .unwrap();
        let w = net.param_mut("c.weight").unwrap();
        w.value.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let x: Vec<f32> = (0..18).map(|i| i as f32 * 0.1 - 0.7).collect();
        let x = Tensor::new(vec![1, 3, 3, 2], x).unwrap();
        let y = net.infer(&map(vec![("img", x.clone())])).unwrap();
        assert!(y.bit_eq(&x));
    }

    #[test]
    fn centre_tap_three_by_three_is_identity() {
        let mut net = Network::<f32>::from_specs(
            "img",
            vec![4, 5, 1],
            &[LayerSpec::Conv2d { name: "c".into(), in_channels: 1, out_channels: 1, kernel: 3, stride: 1 }],
        )
        .unwrap();
        net.param_mut("c.weight").unwrap().value.data_mut()[4] = 1.0;
        let x = Tensor::new(vec![1, 4, 5, 1], (0..20).map(|i| i as f32).collect()).unwrap();
        assert!(net.infer(&map(vec![("img", x.clone())])).unwrap().bit_eq(&x));
    }

    #[test]
    fn forward_is_deterministic_and_matches_infer() {
        let mut net = Network::<f32>::from_specs(
            "img",
            vec![8, 8, 1],
            &[
                LayerSpec::Conv2d { name: "stem".into(), in_channels: 1, out_channels: 4, kernel: 3, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::ResidualBlock { name: "res".into(), channels: 4 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::ConcatInput { input: "speed".into(), width: 1 },
                LayerSpec::FullyConnected { name: "fc".into(), inputs: 5, outputs: 2 },
                LayerSpec::Tanh { units: Units::range(1, 2) },
            ],
        )
        .unwrap();
        net.init_he(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        let x = Tensor::new(vec![2, 8, 8, 1], (0..128).map(|i| ((i * 7) % 13) as f32 / 13.0).collect()).unwrap();
        let inputs = map(vec![("img", x), ("speed", Tensor::new(vec![2, 1], vec![0.2, 0.9]).unwrap())]);
        let a = net.forward(&inputs).unwrap();
        let b = net.forward(&inputs).unwrap();
        let c = net.infer(&inputs).unwrap();
        assert!(a.bit_eq(&b) && a.bit_eq(&c));
        assert_eq!(a.shape(), &[2, 2]);
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut net = Network::<f32>::from_specs(
            "x",
            vec![2],
            &[LayerSpec::FullyConnected { name: "fc".into(), inputs: 2, outputs: 1 }],
        )
        .unwrap();
        let err = net.backward(&Tensor::zeros(vec![1, 1])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn single_linear_unit_gradient() {
        let mut net = Network::<f32>::from_specs(
            "x",
            vec![1],
            &[LayerSpec::FullyConnected { name: "w".into(), inputs: 1, outputs: 1 }],
        )
        .unwrap();
        net.param_mut("w.weight").unwrap().value.data_mut()[0] = 0.7;
        net.forward(&map(vec![("x", Tensor::new(vec![1, 1], vec![2.0]).unwrap())])).unwrap();
        let g = net.backward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.params["w.weight"].data(), &[2.0]);
        assert_eq!(g.params["w.bias"].data(), &[1.0]);
        assert_eq!(g.inputs["x"].data(), &[0.7]);
    }

    #[test]
    fn unused_parameter_gets_exactly_zero_gradient() {
        // The second output unit is ignored by the loss, so its row is untouched.
        let mut net = Network::<f32>::from_specs(
            "x",
            vec![3],
            &[LayerSpec::FullyConnected { name: "fc".into(), inputs: 3, outputs: 2 }],
        )
        .unwrap();
        net.init_he(&mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        net.forward(&map(vec![("x", Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.1, 0.2, 0.3]).unwrap())]))
            .unwrap();
        let g = net.backward(&Tensor::new(vec![2, 2], vec![1.0, 0.0, -0.5, 0.0]).unwrap()).unwrap();
        let w = g.params["fc.weight"].data();
        assert_eq!(&w[3..6], &[0.0, 0.0, 0.0]);
        assert_eq!(g.params["fc.bias"].data()[1], 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = Network::<f32>::from_specs(
            "x",
            vec![3],
            &[LayerSpec::FullyConnected { name: "fc".into(), inputs: 3, outputs: 2 }],
        )
        .unwrap();
        let err = net.infer(&map(vec![("x", Tensor::zeros(vec![2, 4]))])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        let bad = Network::<f32>::from_specs(
            "x",
            vec![3],
            &[LayerSpec::FullyConnected { name: "fc".into(), inputs: 4, outputs: 2 }],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn freeze_convs_only_touches_conv_params() {
        let mut net = Network::<f32>::from_specs(
            "img",
            vec![4, 4, 1],
            &[
                LayerSpec::Conv2d { name: "c".into(), in_channels: 1, out_channels: 2, kernel: 3, stride: 1 },
                LayerSpec::ResidualBlock { name: "r".into(), channels: 2 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::FullyConnected { name: "fc".into(), inputs: 2, outputs: 1 },
            ],
        )
        .unwrap();
        net.freeze_convs(true);
        for p in net.params() {
            assert_eq!(p.frozen, !p.name.starts_with("fc"), "{}", p.name);
        }
    }
}
