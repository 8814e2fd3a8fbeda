use super::layers::{BatchNorm, Conv2d, NormSettings, Prelu};
use super::nea::{EdgeEncoder, HybridEdgeResBlock};
use super::params::{Bound, ModelParams, ParamBuilder};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub scale: usize,
    /// Feature channels `C`.
    pub channels: usize,
    /// Edge-encoder channels `Ce`.
    pub edge_channels: usize,
    /// Residual block count `B`.
    pub blocks: usize,
    pub edge_attention: bool,
    /// Adds a bicubic upscale of the input to the output, so the network
    /// predicts a correction on top of bicubic.
    pub global_residual: bool,
    pub norm: NormSettings,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            channels: 64,
            edge_channels: 32,
            blocks: 8,
            edge_attention: true,
            global_residual: true,
            norm: NormSettings::default(),
        }
    }
}

/// Factors of the sub-pixel upsampling stages for a scale.
pub fn upsample_factors(scale: usize) -> Result<Vec<usize>> {
    match scale {
        2 => Ok(vec![2]),
        3 => Ok(vec![3]),
        4 => Ok(vec![2, 2]),
        s => Err(Error::InvalidArgument(format!("scale must be 2, 3 or 4, got {s}"))),
    }
}

#[derive(Clone, Debug)]
pub struct Upsample {
    pub conv: Conv2d,
    pub factor: usize,
    pub act: Prelu,
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub initial: Conv2d,
    pub initial_act: Prelu,
    /// Shared edge processor; absent when edge attention is ablated.
    pub edge_encoder: Option<EdgeEncoder>,
    pub blocks: Vec<HybridEdgeResBlock>,
    pub skip_conv: Conv2d,
    pub skip_norm: BatchNorm,
    pub upsamplers: Vec<Upsample>,
    pub output: Conv2d,
}

impl Generator {
    /// Builds the topology and its seeded initial parameters.
    pub fn init(config: &GeneratorConfig, seed: u64) -> Result<(Self, ModelParams)> {
        let factors = upsample_factors(config.scale)?;
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut root = ParamBuilder::new(&mut params, &mut rng, "g");
        let c = config.channels;

        let initial = Conv2d::new(&mut root, "initial", 3, c, 9, 1)?;
        let initial_act = Prelu::new(&mut root, "initial_act", c)?;
        let edge_encoder = if config.edge_attention {
            Some(EdgeEncoder::new(&mut root.scope("edge_encoder"), config.edge_channels)?)
        } else {
            None
        };
        let ce = config.edge_attention.then_some(config.edge_channels);
        let blocks = (0..config.blocks)
            .map(|i| HybridEdgeResBlock::new(&mut root.scope(&format!("block{i}")), c, ce, config.norm))
            .collect::<Result<Vec<_>>>()?;
        let skip_conv = Conv2d::new(&mut root, "skip_conv", c, c, 3, 1)?;
        let skip_norm = BatchNorm::new(&mut root, "skip_bn", c, true, config.norm)?;
        let upsamplers = factors
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut s = root.scope(&format!("up{i}"));
                Ok(Upsample {
                    conv: Conv2d::new(&mut s, "conv", c, c * r * r, 3, 1)?,
                    factor: r,
                    act: Prelu::new(&mut s, "act", c)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let output = Conv2d::new(&mut root, "output", c, 3, 9, 1)?;
        if config.global_residual {
            // Start from exactly the bicubic upscale.
            params.get_mut(output.weight).data_mut().fill(0.0);
        }
        let g = Self {
            config: config.clone(),
            initial,
            initial_act,
            edge_encoder,
            blocks,
            skip_conv,
            skip_norm,
            upsamplers,
            output,
        };
        Ok((g, params))
    }

    /// `lr` is [N,3,H,W] in [0,1]; `edge` is the [N,1,H,W] edge map.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, lr: Var, edge: Var) -> Result<Var> {
        let [n, c, h_in, w_in] = tape.value(lr).dims4("generator")?;
        let (h, w) = (h_in, w_in);
        if c != 3 {
            return Err(Error::shape("generator", format!("channel axis: expected RGB input, got {c} channels")));
        }
        let [en, ec, eh, ew] = tape.value(edge).dims4("generator")?;
        if (en, ec, eh, ew) != (n, 1, h, w) {
            return Err(Error::shape(
                "generator",
                format!("edge map {:?} does not match input {:?}", [en, ec, eh, ew], [n, 1, h, w]),
            ));
        }
        let f0 = self.initial.forward(tape, p, lr)?;
        let f0 = self.initial_act.forward(tape, p, f0)?;
        let edge_features = match &self.edge_encoder {
            Some(enc) => Some(enc.forward(tape, p, edge)?),
            None => None,
        };
        let mut h = f0;
        for block in &self.blocks {
            h = block.forward(tape, p, h, edge_features)?;
        }
        let skip = self.skip_conv.forward(tape, p, f0)?;
        let skip = self.skip_norm.forward(tape, p, skip)?;
        h = tape.add(h, skip)?;
        for up in &self.upsamplers {
            h = up.conv.forward(tape, p, h)?;
            h = tape.pixel_shuffle(h, up.factor)?;
            h = up.act.forward(tape, p, h)?;
        }
        let out = self.output.forward(tape, p, h)?;
        if !self.config.global_residual {
            return Ok(out);
        }
        let s = self.config.scale;
        let base = tape.resize_bicubic(lr, h_in * s, w_in * s)?;
        tape.add(out, base)
    }

    /// Closed-form learnable parameter count for a configuration.
    pub fn param_count(config: &GeneratorConfig) -> Result<usize> {
        let c = config.channels;
        let ce = config.edge_attention.then_some(config.edge_channels);
        let mut total = Conv2d::param_count(3, c, 9) + c;
        if let Some(ce) = ce {
            total += EdgeEncoder::param_count(ce);
        }
        total += config.blocks * HybridEdgeResBlock::param_count(c, ce);
        total += Conv2d::param_count(c, c, 3) + 2 * c;
        for r in upsample_factors(config.scale)? {
            total += Conv2d::param_count(c, c * r * r, 3) + c;
        }
        total += Conv2d::param_count(c, 3, 9);
        Ok(total)
    }
}
