//! Parameterized building blocks shared by the generator, discriminator and
//! the perceptual feature extractor.

use super::params::{Bound, ParamBuilder, ParamId, PRELU_INIT};
use crate::error::Result;
use crate::tensor::{Element, Tape, Var};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSettings {
    pub eps: f32,
    pub momentum: f32,
}

impl Default for NormSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Same-padded convolution (`padding = k / 2`).
    pub fn new<R: Rng>(pb: &mut ParamBuilder<R>, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let weight = s.kaiming("weight", &[cout, cin, k, k], cin * k * k)?;
        let bias = s.constant("bias", &[cout], 0.0)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: k / 2,
        })
    }

    pub fn zeroed<R: Rng>(pb: &mut ParamBuilder<R>, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let weight = s.constant("weight", &[cout, cin, k, k], 0.0)?;
        let bias = s.constant("bias", &[cout], 0.0)?;
        Ok(Self {
            weight,
            bias,
            stride: 1,
            padding: k / 2,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, x: Var) -> Result<Var> {
        let w = p.param(tape, self.weight)?;
        let b = p.param(tape, self.bias)?;
        tape.conv2d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn param_count(cin: usize, cout: usize, k: usize) -> usize {
        cout * cin * k * k + cout
    }
}

#[derive(Clone, Debug)]
pub struct Prelu {
    pub alpha: ParamId,
}

impl Prelu {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<R>, name: &str, channels: usize) -> Result<Self> {
        let alpha = pb.scope(name).constant("alpha", &[channels], PRELU_INIT)?;
        Ok(Self { alpha })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, x: Var) -> Result<Var> {
        let a = p.param(tape, self.alpha)?;
        tape.prelu(x, a)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<R>, name: &str, fin: usize, fout: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let weight = s.kaiming("weight", &[fout, fin], fin)?;
        let bias = s.constant("bias", &[fout], 0.0)?;
        Ok(Self { weight, bias })
    }

    pub fn zeroed<R: Rng>(pb: &mut ParamBuilder<R>, name: &str, fin: usize, fout: usize) -> Result<Self> {
        let mut s = pb.scope(name);
        let weight = s.constant("weight", &[fout, fin], 0.0)?;
        let bias = s.constant("bias", &[fout], 0.0)?;
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, x: Var) -> Result<Var> {
        let w = p.param(tape, self.weight)?;
        let b = p.param(tape, self.bias)?;
        tape.linear(x, w, Some(b))
    }
}

/// Batch normalization with running state and an optional learned affine.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub affine: Option<(ParamId, ParamId)>,
    pub settings: NormSettings,
}

impl BatchNorm {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<R>, name: &str, channels: usize, affine: bool, settings: NormSettings) -> Result<Self> {
        let mut s = pb.scope(name);
        let running_mean = s.buffer("running_mean", &[channels], 0.0)?;
        let running_var = s.buffer("running_var", &[channels], 1.0)?;
        let affine = if affine {
            Some((s.constant("weight", &[channels], 1.0)?, s.constant("bias", &[channels], 0.0)?))
        } else {
            None
        };
        Ok(Self {
            running_mean,
            running_var,
            affine,
            settings,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, x: Var) -> Result<Var> {
        let mode = p.mode;
        let (mean, var) = p.buffers_mut(self.running_mean, self.running_var)?;
        let y = tape.batch_norm(
            x,
            mode,
            mean,
            var,
            T::of(self.settings.eps as f64),
            T::of(self.settings.momentum as f64),
        )?;
        match self.affine {
            None => Ok(y),
            Some((w, b)) => {
                let w = p.param(tape, w)?;
                let b = p.param(tape, b)?;
                let y = tape.mul(y, w)?;
                tape.add(y, b)
            }
        }
    }
}
