use super::config::OptimConfig;
use crate::error::{Error, Result};
use crate::network::{ModelParams, ParamKind};
use crate::tensor::Tensor;

/// Adam with bias correction. Moments are kept per learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: OptimConfig,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: OptimConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f32>> = params
            .entries()
            .iter()
            .map(|e| match e.kind {
                ParamKind::Weight => vec![0.0; e.value.numel()],
                ParamKind::Buffer => Vec::new(),
            })
            .collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update; `grads` is indexed like the parameter collection and
    /// entries without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let step = (c.lr * bc2.sqrt() / bc1) as f32;
        let eps = (c.eps * bc2.sqrt()) as f32;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(crate::network::ParamId(i)).data_mut();
            if m.len() != g.numel() || p.len() != g.numel() {
                return Err(Error::InvalidArgument(format!("gradient {i} has the wrong size")));
            }
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}
