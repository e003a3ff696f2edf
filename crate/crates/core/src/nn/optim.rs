use std::collections::{BTreeMap, HashMap};

use super::layers::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam { beta1: f32, beta2: f32, eps: f32 },
    /// Plain gradient descent, `w <- w - lr * g`.
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Per-parameter optimizer state keyed by parameter name. Frozen parameters
/// are skipped entirely: neither their values nor their moments change.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    steps: u64,
    moments: HashMap<String, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, steps: 0, moments: HashMap::new() }
    }

    pub fn adam() -> Self {
        Self::new(OptimizerKind::adam())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: Vec<&mut Param<f32>>, grads: &BTreeMap<String, Tensor<f32>>, lr: f32) -> Result<()> {
        for p in params.iter().filter(|p| !p.frozen) {
            let g = grads
                .get(&p.name)
                .ok_or_else(|| Error::State(format!("no gradient for trainable parameter {}", p.name)))?;
            if g.shape() != p.value.shape() {
                return Err(Error::shape(format!(
                    "{}: gradient {:?} vs parameter {:?}",
                    p.name,
                    g.shape(),
                    p.value.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient in {}", p.name)));
            }
        }
        if lr == 0.0 {
            return Ok(());
        }
        self.steps += 1;
        let t = self.steps as i32;
        for p in params.into_iter().filter(|p| !p.frozen) {
            let g = grads[&p.name].data();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, g) in p.value.data_mut().iter_mut().zip(g) {
                        *w -= lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let st = self
                        .moments
                        .entry(p.name.clone())
                        .or_insert_with(|| Moments { m: vec![0.0; g.len()], v: vec![0.0; g.len()] });
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(g).zip(&mut st.m).zip(&mut st.v) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *w -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
