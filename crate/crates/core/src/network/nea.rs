//! Normalized edge attention and the hybrid edge residual block.

use super::layers::{BatchNorm, Conv2d, Linear, NormSettings, Prelu};
use super::params::{Bound, ParamBuilder};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Var};
use rand::Rng;

/// Lightweight encoder turning a 1-channel edge map into `Ce` edge features.
#[derive(Clone, Debug)]
pub struct EdgeEncoder {
    pub conv3: Conv2d,
    pub act: Prelu,
    pub conv1: Conv2d,
    pub channels: usize,
}

impl EdgeEncoder {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<R>, edge_channels: usize) -> Result<Self> {
        Ok(Self {
            conv3: Conv2d::new(pb, "conv3", 1, edge_channels, 3, 1)?,
            act: Prelu::new(pb, "act", edge_channels)?,
            conv1: Conv2d::new(pb, "conv1", edge_channels, edge_channels, 1, 1)?,
            channels: edge_channels,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, edge: Var) -> Result<Var> {
        let h = self.conv3.forward(tape, p, edge)?;
        let h = self.act.forward(tape, p, h)?;
        self.conv1.forward(tape, p, h)
    }

    pub fn param_count(edge_channels: usize) -> usize {
        Conv2d::param_count(1, edge_channels, 3) + edge_channels + Conv2d::param_count(edge_channels, edge_channels, 1)
    }
}

/// Edge-conditioned channel modulation of batch-normalized features fused
/// with an edge-derived spatial gate.
#[derive(Clone, Debug)]
pub struct NeaBlock {
    pub film_proj: Linear,
    pub spatial_conv1: Conv2d,
    pub spatial_act: Prelu,
    pub spatial_conv3: Conv2d,
    pub norm: BatchNorm,
    pub fusion: Conv2d,
    pub channels: usize,
    pub edge_channels: usize,
}

/// Intermediate values of one NEA evaluation.
#[derive(Clone, Copy, Debug)]
pub struct NeaTrace {
    pub gamma: Var,
    pub beta: Var,
    pub attention: Var,
    pub normalized: Var,
    pub modulated: Var,
    pub gated: Var,
    pub output: Var,
}

impl NeaBlock {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<R>, channels: usize, edge_channels: usize, norm: NormSettings) -> Result<Self> {
        Ok(Self {
            // zero projection: identity modulation until trained
            film_proj: Linear::zeroed(pb, "film_proj", edge_channels, 2 * channels)?,
            spatial_conv1: Conv2d::new(pb, "spatial_conv1", edge_channels, edge_channels, 1, 1)?,
            spatial_act: Prelu::new(pb, "spatial_act", edge_channels)?,
            spatial_conv3: Conv2d::new(pb, "spatial_conv3", edge_channels, 1, 3, 1)?,
            norm: BatchNorm::new(pb, "bn", channels, false, norm)?,
            fusion: Conv2d::new(pb, "fusion", 2 * channels, channels, 1, 1)?,
            channels,
            edge_channels,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, x: Var, edge_features: Var) -> Result<Var> {
        Ok(self.trace(tape, p, x, edge_features)?.output)
    }

    /// `edge_features` are encoder outputs; they are bilinearly resized when
    /// their spatial extent differs from `x`.
    pub fn trace<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, x: Var, edge_features: Var) -> Result<NeaTrace> {
        let [_, c, h, w] = tape.value(x).dims4("nea")?;
        if c != self.channels {
            return Err(Error::shape(
                "nea",
                format!("channel axis: block expects {} channels, input has {c}", self.channels),
            ));
        }
        let [_, ce, eh, ew] = tape.value(edge_features).dims4("nea")?;
        if ce != self.edge_channels {
            return Err(Error::shape(
                "nea",
                format!("channel axis: block expects {} edge channels, got {ce}", self.edge_channels),
            ));
        }
        let e = if (eh, ew) != (h, w) {
            tape.resize_bilinear(edge_features, h, w)?
        } else {
            edge_features
        };

        let pooled = tape.global_avg_pool(e)?;
        let gb = self.film_proj.forward(tape, p, pooled)?;
        let gamma = tape.narrow_channels(gb, 0, c)?;
        let beta = tape.narrow_channels(gb, c, c)?;

        let a = self.spatial_conv1.forward(tape, p, e)?;
        let a = self.spatial_act.forward(tape, p, a)?;
        let a = self.spatial_conv3.forward(tape, p, a)?;
        let attention = tape.sigmoid(a)?;

        let normalized = self.norm.forward(tape, p, x)?;
        let scale = tape.add_scalar(gamma, 1.0)?;
        let modulated = tape.mul(normalized, scale)?;
        let modulated = tape.add(modulated, beta)?;

        let gated = tape.mul(x, attention)?;
        let joint = tape.concat_channels(&[gated, modulated])?;
        let fused = self.fusion.forward(tape, p, joint)?;
        let output = tape.add(fused, x)?;
        Ok(NeaTrace {
            gamma,
            beta,
            attention,
            normalized,
            modulated,
            gated,
            output,
        })
    }

    pub fn param_count(channels: usize, edge_channels: usize) -> usize {
        let (c, ce) = (channels, edge_channels);
        (2 * c * ce + 2 * c)
            + Conv2d::param_count(ce, ce, 1)
            + ce
            + Conv2d::param_count(ce, 1, 3)
            + Conv2d::param_count(2 * c, c, 1)
    }
}

/// What sits at each edge-conditioned position of a residual block.
#[derive(Clone, Debug)]
pub enum Conditioner {
    Nea(NeaBlock),
    /// Ablation stand-in: `x + BN(x)` with no edge input.
    Plain(BatchNorm),
}

impl Conditioner {
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, x: Var, edge_features: Option<Var>) -> Result<Var> {
        match self {
            Conditioner::Nea(block) => {
                let e = edge_features
                    .ok_or_else(|| Error::InvalidArgument("edge-attention block needs edge features".into()))?;
                block.forward(tape, p, x, e)
            }
            Conditioner::Plain(bn) => {
                let y = bn.forward(tape, p, x)?;
                tape.add(y, x)
            }
        }
    }
}

/// Two convolutions, two edge-conditioned submodules and an outer skip.
#[derive(Clone, Debug)]
pub struct HybridEdgeResBlock {
    pub conv1: Conv2d,
    pub hybrid1: Conditioner,
    pub act: Prelu,
    pub conv2: Conv2d,
    pub hybrid2: Conditioner,
}

impl HybridEdgeResBlock {
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<R>,
        channels: usize,
        edge_channels: Option<usize>,
        norm: NormSettings,
    ) -> Result<Self> {
        let conv1 = Conv2d::new(pb, "conv1", channels, channels, 3, 1)?;
        let hybrid1 = conditioner(&mut pb.scope("hybrid1"), channels, edge_channels, norm)?;
        let act = Prelu::new(pb, "act", channels)?;
        let conv2 = Conv2d::new(pb, "conv2", channels, channels, 3, 1)?;
        let hybrid2 = conditioner(&mut pb.scope("hybrid2"), channels, edge_channels, norm)?;
        Ok(Self {
            conv1,
            hybrid1,
            act,
            conv2,
            hybrid2,
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, x: Var, edge_features: Option<Var>) -> Result<Var> {
        let h = self.conv1.forward(tape, p, x)?;
        let x1 = self.hybrid1.forward(tape, p, h, edge_features)?;
        let x2 = self.act.forward(tape, p, x1)?;
        let h = self.conv2.forward(tape, p, x2)?;
        let x3 = self.hybrid2.forward(tape, p, h, edge_features)?;
        tape.add(x, x3)
    }

    pub fn param_count(channels: usize, edge_channels: Option<usize>) -> usize {
        let c = channels;
        let cond = edge_channels.map_or(0, |ce| NeaBlock::param_count(c, ce));
        2 * Conv2d::param_count(c, c, 3) + c + 2 * cond
    }
}

fn conditioner<R: Rng>(
    pb: &mut ParamBuilder<R>,
    channels: usize,
    edge_channels: Option<usize>,
    norm: NormSettings,
) -> Result<Conditioner> {
    Ok(match edge_channels {
        Some(ce) => Conditioner::Nea(NeaBlock::new(pb, channels, ce, norm)?),
        None => Conditioner::Plain(BatchNorm::new(pb, "bn", channels, false, norm)?),
    })
}
