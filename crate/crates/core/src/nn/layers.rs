use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scalar::{gemm, Mat, Scalar};
use super::tensor::{Tensor, TensorMap};
use crate::error::{Error, Result};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

impl<T: Scalar> Param<T> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        Self { name, value: Tensor::zeros(shape), frozen: false }
    }

    fn cast<U: Scalar>(&self) -> Param<U> {
        Param { name: self.name.clone(), value: self.value.cast(), frozen: self.frozen }
    }
}

/// Column range an activation applies to; `None` means every column.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units(pub Option<(usize, usize)>);

impl Units {
    pub const ALL: Units = Units(None);

    pub fn range(start: usize, end: usize) -> Self {
        Units(Some((start, end)))
    }

    fn contains(&self, col: usize) -> bool {
        self.0.is_none_or(|(s, e)| col >= s && col < e)
    }
}

/// Serializable description of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { name: String, in_channels: usize, out_channels: usize, kernel: usize, stride: usize },
    /// Two same-width 3x3 convolutions with an identity shortcut.
    ResidualBlock { name: String, channels: usize },
    FullyConnected { name: String, inputs: usize, outputs: usize },
    Relu,
    Sigmoid { units: Units },
    Tanh { units: Units },
    GlobalAvgPool,
    /// Appends the named side input `[batch, width]` to a `[batch, features]` activation.
    ConcatInput { input: String, width: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub name: String,
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out_c, kernel, kernel, in_c]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub name: String,
    pub conv_a: Conv2d<T>,
    pub conv_b: Conv2d<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T = f32> {
    Conv2d(Conv2d<T>),
    Residual(ResidualBlock<T>),
    Dense(Dense<T>),
    Relu,
    Sigmoid(Units),
    Tanh(Units),
    GlobalAvgPool,
    Concat { input: String, width: usize },
}

pub(crate) enum Cache<T> {
    Conv { cols: Vec<T>, in_shape: [usize; 4], out_hw: (usize, usize) },
    Residual { a: Box<Cache<T>>, pre_a: Vec<T>, b: Box<Cache<T>>, pre_out: Vec<T> },
    Dense { x: Tensor<T> },
    /// Output of an elementwise activation.
    Act { y: Tensor<T> },
    Pool { in_shape: [usize; 4] },
    Concat { width: usize },
}

impl<T: Scalar> Conv2d<T> {
    fn new(name: &str, in_c: usize, out_c: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.to_string(),
            in_c,
            out_c,
            kernel,
            stride,
            weight: Param::zeros(format!("{name}.weight"), vec![out_c, kernel, kernel, in_c]),
            bias: Param::zeros(format!("{name}.bias"), vec![out_c]),
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        ((h + 2 * p - self.kernel) / self.stride + 1, (w + 2 * p - self.kernel) / self.stride + 1)
    }

    fn k_len(&self) -> usize {
        self.kernel * self.kernel * self.in_c
    }

    fn im2col(&self, x: &Tensor<T>) -> (Vec<T>, (usize, usize)) {
        let [n, h, w, c] = dims4(x);
        let (ho, wo) = self.out_hw(h, w);
        let k = self.kernel;
        let kl = self.k_len();
        let pad = self.pad() as isize;
        let xd = x.data();
        let mut cols = vec![T::zero(); n * ho * wo * kl];
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * kl;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let src = ((b * h + iy as usize) * w + ix as usize) * c;
                            let dst = row + (ky * k + kx) * c;
                            cols[dst..dst + c].copy_from_slice(&xd[src..src + c]);
                        }
                    }
                }
            }
        }
        (cols, (ho, wo))
    }

    fn col2im(&self, dcols: &[T], in_shape: [usize; 4], (ho, wo): (usize, usize)) -> Tensor<T> {
        let [n, h, w, c] = in_shape;
        let k = self.kernel;
        let kl = self.k_len();
        let pad = self.pad() as isize;
        let mut dx = vec![T::zero(); n * h * w * c];
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * kl;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let dst = ((b * h + iy as usize) * w + ix as usize) * c;
                            let src = row + (ky * k + kx) * c;
                            for (d, s) in dx[dst..dst + c].iter_mut().zip(&dcols[src..src + c]) {
                                *d += *s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![n, h, w, c], dx).expect("col2im shape")
    }

    fn forward(&self, x: &Tensor<T>, record: bool) -> Result<(Tensor<T>, Option<Cache<T>>)> {
        if x.shape().len() != 4 || x.shape()[3] != self.in_c {
            return Err(Error::shape(format!(
                "{}: expected [n,h,w,{}], got {:?}",
                self.name,
                self.in_c,
                x.shape()
            )));
        }
        let in_shape = dims4(x);
        let (cols, (ho, wo)) = self.im2col(x);
        let rows = in_shape[0] * ho * wo;
        let mut y = Vec::with_capacity(rows * self.out_c);
        for _ in 0..rows {
            y.extend_from_slice(self.bias.value.data());
        }
        let wm = Mat::new(self.weight.value.data(), self.out_c, self.k_len());
        gemm(Mat::new(&cols, rows, self.k_len()), wm.t(), T::one(), &mut y);
        let y = Tensor::new(vec![in_shape[0], ho, wo, self.out_c], y)?;
        let cache = record.then_some(Cache::Conv { cols, in_shape, out_hw: (ho, wo) });
        Ok((y, cache))
    }

    fn backward(&self, cache: Cache<T>, dy: &Tensor<T>, grads: &mut BTreeMap<String, Tensor<T>>) -> Tensor<T> {
        let Cache::Conv { cols, in_shape, out_hw } = cache else { unreachable!("conv cache") };
        let rows = in_shape[0] * out_hw.0 * out_hw.1;
        let kl = self.k_len();
        let dym = Mat::new(dy.data(), rows, self.out_c);

        let mut dw = vec![T::zero(); self.out_c * kl];
        gemm(dym.t(), Mat::new(&cols, rows, kl), T::zero(), &mut dw);
        let mut db = vec![T::zero(); self.out_c];
        for r in dy.data().chunks_exact(self.out_c) {
            for (d, v) in db.iter_mut().zip(r) {
                *d += *v;
            }
        }
        grads.insert(self.weight.name.clone(), Tensor::new(self.weight.value.shape().to_vec(), dw).unwrap());
        grads.insert(self.bias.name.clone(), Tensor::new(vec![self.out_c], db).unwrap());

        let mut dcols = vec![T::zero(); rows * kl];
        gemm(dym, Mat::new(self.weight.value.data(), self.out_c, kl), T::zero(), &mut dcols);
        self.col2im(&dcols, in_shape, out_hw)
    }

    fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = self.k_len();
        he_uniform(&mut self.weight.value, fan_in, rng);
        self.bias.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
    }

    fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            name: self.name.clone(),
            in_c: self.in_c,
            out_c: self.out_c,
            kernel: self.kernel,
            stride: self.stride,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Scalar> ResidualBlock<T> {
    fn forward(&self, x: &Tensor<T>, record: bool) -> Result<(Tensor<T>, Option<Cache<T>>)> {
        let (pre_a, ca) = self.conv_a.forward(x, record)?;
        let a = relu(&pre_a);
        let (mut s, cb) = self.conv_b.forward(&a, record)?;
        for (v, xv) in s.data_mut().iter_mut().zip(x.data()) {
            *v += *xv;
        }
        let y = relu(&s);
        let cache = if record {
            Some(Cache::Residual {
                a: Box::new(ca.unwrap()),
                pre_a: pre_a.into_data(),
                b: Box::new(cb.unwrap()),
                pre_out: s.into_data(),
            })
        } else {
            None
        };
        Ok((y, cache))
    }

    fn backward(&self, cache: Cache<T>, dy: &Tensor<T>, grads: &mut BTreeMap<String, Tensor<T>>) -> Tensor<T> {
        let Cache::Residual { a, pre_a, b, pre_out } = cache else { unreachable!("residual cache") };
        let mut ds = dy.clone();
        mask_relu(ds.data_mut(), &pre_out);
        let mut da = self.conv_b.backward(*b, &ds, grads);
        mask_relu(da.data_mut(), &pre_a);
        let mut dx = self.conv_a.backward(*a, &da, grads);
        for (d, s) in dx.data_mut().iter_mut().zip(ds.data()) {
            *d += *s;
        }
        dx
    }

    /// Smallest |pre-activation| at either ReLU in the block.
    fn relu_margin(&self, x: &Tensor<T>) -> Result<f64> {
        let (pre_a, _) = self.conv_a.forward(x, false)?;
        let (mut s, _) = self.conv_b.forward(&relu(&pre_a), false)?;
        for (v, xv) in s.data_mut().iter_mut().zip(x.data()) {
            *v += *xv;
        }
        Ok(min_abs(pre_a.data()).min(min_abs(s.data())))
    }
}

impl<T: Scalar> Dense<T> {
    fn new(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            name: name.to_string(),
            inputs,
            outputs,
            weight: Param::zeros(format!("{name}.weight"), vec![outputs, inputs]),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
        }
    }

    fn forward(&self, x: &Tensor<T>, record: bool) -> Result<(Tensor<T>, Option<Cache<T>>)> {
        if x.shape().len() != 2 || x.shape()[1] != self.inputs {
            return Err(Error::shape(format!(
                "{}: expected [n,{}], got {:?}",
                self.name,
                self.inputs,
                x.shape()
            )));
        }
        let n = x.batch();
        let mut y = Vec::with_capacity(n * self.outputs);
        for _ in 0..n {
            y.extend_from_slice(self.bias.value.data());
        }
        let wm = Mat::new(self.weight.value.data(), self.outputs, self.inputs);
        gemm(Mat::new(x.data(), n, self.inputs), wm.t(), T::one(), &mut y);
        let y = Tensor::new(vec![n, self.outputs], y)?;
        Ok((y, record.then(|| Cache::Dense { x: x.clone() })))
    }

    fn backward(&self, cache: Cache<T>, dy: &Tensor<T>, grads: &mut BTreeMap<String, Tensor<T>>) -> Tensor<T> {
        let Cache::Dense { x } = cache else { unreachable!("dense cache") };
        let n = x.batch();
        let dym = Mat::new(dy.data(), n, self.outputs);
        let mut dw = vec![T::zero(); self.outputs * self.inputs];
        gemm(dym.t(), Mat::new(x.data(), n, self.inputs), T::zero(), &mut dw);
        let mut db = vec![T::zero(); self.outputs];
        for r in dy.data().chunks_exact(self.outputs) {
            for (d, v) in db.iter_mut().zip(r) {
                *d += *v;
            }
        }
        grads.insert(self.weight.name.clone(), Tensor::new(vec![self.outputs, self.inputs], dw).unwrap());
        grads.insert(self.bias.name.clone(), Tensor::new(vec![self.outputs], db).unwrap());
        let mut dx = vec![T::zero(); n * self.inputs];
        gemm(dym, Mat::new(self.weight.value.data(), self.outputs, self.inputs), T::zero(), &mut dx);
        Tensor::new(vec![n, self.inputs], dx).unwrap()
    }

    fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            name: self.name.clone(),
            inputs: self.inputs,
            outputs: self.outputs,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Scalar> Layer<T> {
    pub fn from_spec(spec: &LayerSpec) -> Result<Self> {
        Ok(match spec {
            LayerSpec::Conv2d { name, in_channels, out_channels, kernel, stride } => {
                if *kernel % 2 == 0 || *stride == 0 || *in_channels == 0 || *out_channels == 0 {
                    return Err(Error::Config(format!("{name}: invalid conv hyperparameters")));
                }
                Layer::Conv2d(Conv2d::new(name, *in_channels, *out_channels, *kernel, *stride))
            }
            LayerSpec::ResidualBlock { name, channels } => {
                if *channels == 0 {
                    return Err(Error::Config(format!("{name}: zero channels")));
                }
                Layer::Residual(ResidualBlock {
                    name: name.clone(),
                    conv_a: Conv2d::new(&format!("{name}.conv_a"), *channels, *channels, 3, 1),
                    conv_b: Conv2d::new(&format!("{name}.conv_b"), *channels, *channels, 3, 1),
                })
            }
            LayerSpec::FullyConnected { name, inputs, outputs } => {
                if *inputs == 0 || *outputs == 0 {
                    return Err(Error::Config(format!("{name}: zero width")));
                }
                Layer::Dense(Dense::new(name, *inputs, *outputs))
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid { units } => Layer::Sigmoid(*units),
            LayerSpec::Tanh { units } => Layer::Tanh(*units),
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::ConcatInput { input, width } => Layer::Concat { input: input.clone(), width: *width },
        })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::Residual(r) => vec![&r.conv_a.weight, &r.conv_a.bias, &r.conv_b.weight, &r.conv_b.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Residual(r) => {
                vec![&mut r.conv_a.weight, &mut r.conv_a.bias, &mut r.conv_b.weight, &mut r.conv_b.bias]
            }
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Residual(_))
    }

    /// Per-sample output shape for a per-sample input shape.
    pub(crate) fn output_shape(&self, input: &[usize], sides: &BTreeMap<String, usize>) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => match input {
                [h, w, ch] if *ch == c.in_c && *h + 2 * c.pad() >= c.kernel && *w + 2 * c.pad() >= c.kernel => {
                    let (ho, wo) = c.out_hw(*h, *w);
                    Ok(vec![ho, wo, c.out_c])
                }
                _ => Err(Error::shape(format!("{}: cannot take input {input:?}", c.name))),
            },
            Layer::Residual(r) => match input {
                [_, _, ch] if *ch == r.conv_a.in_c => Ok(input.to_vec()),
                _ => Err(Error::shape(format!("{}: cannot take input {input:?}", r.name))),
            },
            Layer::Dense(d) => match input {
                [n] if *n == d.inputs => Ok(vec![d.outputs]),
                _ => Err(Error::shape(format!("{}: cannot take input {input:?}", d.name))),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::Sigmoid(u) | Layer::Tanh(u) => {
                if let (Some((_, e)), [n]) = (u.0, input) {
                    if e > *n {
                        return Err(Error::shape(format!("activation units end {e} beyond width {n}")));
                    }
                }
                if u.0.is_some() && input.len() != 1 {
                    return Err(Error::shape("unit-ranged activation needs a vector input"));
                }
                Ok(input.to_vec())
            }
            Layer::GlobalAvgPool => match input {
                [_, _, ch] => Ok(vec![*ch]),
                _ => Err(Error::shape(format!("global_avg_pool cannot take {input:?}"))),
            },
            Layer::Concat { input: name, width } => {
                if sides.get(name) != Some(width) {
                    return Err(Error::shape(format!("side input {name} of width {width} not declared")));
                }
                match input {
                    [n] => Ok(vec![n + width]),
                    _ => Err(Error::shape(format!("concat of {name} needs a vector input, got {input:?}"))),
                }
            }
        }
    }

    pub(crate) fn forward(
        &self,
        x: &Tensor<T>,
        sides: &TensorMap<T>,
        record: bool,
    ) -> Result<(Tensor<T>, Option<Cache<T>>)> {
        match self {
            Layer::Conv2d(c) => c.forward(x, record),
            Layer::Residual(r) => r.forward(x, record),
            Layer::Dense(d) => d.forward(x, record),
            Layer::Relu => {
                let y = relu(x);
                let cache = record.then(|| Cache::Act { y: y.clone() });
                Ok((y, cache))
            }
            Layer::Sigmoid(u) => {
                let y = map_units(x, *u, |v| T::one() / (T::one() + (-v).exp()));
                let cache = record.then(|| Cache::Act { y: y.clone() });
                Ok((y, cache))
            }
            Layer::Tanh(u) => {
                let y = map_units(x, *u, |v| v.tanh());
                let cache = record.then(|| Cache::Act { y: y.clone() });
                Ok((y, cache))
            }
            Layer::GlobalAvgPool => {
                if x.shape().len() != 4 {
                    return Err(Error::shape(format!("global_avg_pool expects 4-D input, got {:?}", x.shape())));
                }
                let [n, h, w, c] = dims4(x);
                let scale = T::one() / T::lit((h * w) as f64);
                let mut y = vec![T::zero(); n * c];
                for b in 0..n {
                    let out = &mut y[b * c..(b + 1) * c];
                    for px in x.data()[b * h * w * c..(b + 1) * h * w * c].chunks_exact(c) {
                        for (o, v) in out.iter_mut().zip(px) {
                            *o += *v;
                        }
                    }
                    out.iter_mut().for_each(|o| *o *= scale);
                }
                let cache = record.then_some(Cache::Pool { in_shape: [n, h, w, c] });
                Ok((Tensor::new(vec![n, c], y)?, cache))
            }
            Layer::Concat { input, width } => {
                let side = sides
                    .get(input)
                    .ok_or_else(|| Error::shape(format!("missing side input {input}")))?;
                let n = x.batch();
                if x.shape().len() != 2 || side.shape() != [n, *width] {
                    return Err(Error::shape(format!(
                        "concat {input}: activation {:?}, side {:?}",
                        x.shape(),
                        side.shape()
                    )));
                }
                let d = x.shape()[1];
                let mut y = Vec::with_capacity(n * (d + width));
                for i in 0..n {
                    y.extend_from_slice(x.row(i));
                    y.extend_from_slice(side.row(i));
                }
                Ok((Tensor::new(vec![n, d + width], y)?, record.then_some(Cache::Concat { width: *width })))
            }
        }
    }

    /// Returns the gradient with respect to the layer input. Parameter
    /// gradients go into `grads`, side-input gradients into `input_grads`.
    pub(crate) fn backward(
        &self,
        cache: Cache<T>,
        dy: &Tensor<T>,
        grads: &mut BTreeMap<String, Tensor<T>>,
        input_grads: &mut BTreeMap<String, Tensor<T>>,
    ) -> Tensor<T> {
        match (self, cache) {
            (Layer::Conv2d(c), cache) => c.backward(cache, dy, grads),
            (Layer::Residual(r), cache) => r.backward(cache, dy, grads),
            (Layer::Dense(d), cache) => d.backward(cache, dy, grads),
            (Layer::Relu, Cache::Act { y }) => {
                let mut dx = dy.clone();
                mask_relu(dx.data_mut(), y.data());
                dx
            }
            (Layer::Sigmoid(u), Cache::Act { y }) => {
                zip_units(dy, &y, *u, |g, s| g * s * (T::one() - s))
            }
            (Layer::Tanh(u), Cache::Act { y }) => zip_units(dy, &y, *u, |g, t| g * (T::one() - t * t)),
            (Layer::GlobalAvgPool, Cache::Pool { in_shape }) => {
                let [n, h, w, c] = in_shape;
                let scale = T::one() / T::lit((h * w) as f64);
                let mut dx = Vec::with_capacity(n * h * w * c);
                for b in 0..n {
                    let g: Vec<T> = dy.row(b).iter().map(|v| *v * scale).collect();
                    for _ in 0..h * w {
                        dx.extend_from_slice(&g);
                    }
                }
                Tensor::new(vec![n, h, w, c], dx).unwrap()
            }
            (Layer::Concat { input, .. }, Cache::Concat { width }) => {
                let n = dy.batch();
                let total = dy.shape()[1];
                let d = total - width;
                let mut dx = Vec::with_capacity(n * d);
                let mut ds = Vec::with_capacity(n * width);
                for i in 0..n {
                    let r = dy.row(i);
                    dx.extend_from_slice(&r[..d]);
                    ds.extend_from_slice(&r[d..]);
                }
                let ds = Tensor::new(vec![n, width], ds).unwrap();
                match input_grads.get_mut(input) {
                    Some(acc) => acc.data_mut().iter_mut().zip(ds.data()).for_each(|(a, b)| *a += *b),
                    None => {
                        input_grads.insert(input.clone(), ds);
                    }
                }
                Tensor::new(vec![n, d], dx).unwrap()
            }
            _ => unreachable!("layer/cache mismatch"),
        }
    }

    pub(crate) fn init_he<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self {
            Layer::Conv2d(c) => c.init_he(rng),
            Layer::Residual(r) => {
                r.conv_a.init_he(rng);
                r.conv_b.init_he(rng);
            }
            Layer::Dense(d) => {
                he_uniform(&mut d.weight.value, d.inputs, rng);
                d.bias.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
            _ => {}
        }
    }

    pub(crate) fn relu_margin(&self, x: &Tensor<T>) -> Result<Option<f64>> {
        Ok(match self {
            Layer::Relu => Some(min_abs(x.data())),
            Layer::Residual(r) => Some(r.relu_margin(x)?),
            _ => None,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(c.cast()),
            Layer::Residual(r) => Layer::Residual(ResidualBlock {
                name: r.name.clone(),
                conv_a: r.conv_a.cast(),
                conv_b: r.conv_b.cast(),
            }),
            Layer::Dense(d) => Layer::Dense(d.cast()),
            Layer::Relu => Layer::Relu,
            Layer::Sigmoid(u) => Layer::Sigmoid(*u),
            Layer::Tanh(u) => Layer::Tanh(*u),
            Layer::GlobalAvgPool => Layer::GlobalAvgPool,
            Layer::Concat { input, width } => Layer::Concat { input: input.clone(), width: *width },
        }
    }
}

fn dims4<T: Scalar>(x: &Tensor<T>) -> [usize; 4] {
    let s = x.shape();
    [s[0], s[1], s[2], s[3]]
}

fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().map(|v| if *v > T::zero() { *v } else { T::zero() }).collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

/// Zeroes gradient entries whose forward value was not positive.
fn mask_relu<T: Scalar>(g: &mut [T], forward: &[T]) {
    for (g, f) in g.iter_mut().zip(forward) {
        if *f <= T::zero() {
            *g = T::zero();
        }
    }
}

fn min_abs<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64().abs()).fold(f64::INFINITY, f64::min)
}

fn map_units<T: Scalar>(x: &Tensor<T>, units: Units, f: impl Fn(T) -> T) -> Tensor<T> {
    let w = x.row_len().max(1);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| if units.contains(i % w) { f(*v) } else { *v })
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

fn zip_units<T: Scalar>(dy: &Tensor<T>, y: &Tensor<T>, units: Units, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let w = dy.row_len().max(1);
    let data = dy
        .data()
        .iter()
        .zip(y.data())
        .enumerate()
        .map(|(i, (g, v))| if units.contains(i % w) { f(*g, *v) } else { *g })
        .collect();
    Tensor::new(dy.shape().to_vec(), data).unwrap()
}

fn he_uniform<T: Scalar, R: Rng + ?Sized>(t: &mut Tensor<T>, fan_in: usize, rng: &mut R) {
    let bound = (6.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = T::lit(rng.random_range(-bound..bound));
    }
}
