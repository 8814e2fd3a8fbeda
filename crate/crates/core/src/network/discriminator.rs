use super::layers::{BatchNorm, Conv2d, Linear, NormSettings};
use super::params::{Bound, ModelParams, ParamBuilder};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const MIN_INPUT_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Channels of the first block; doubled every second block up to 8x.
    pub base_channels: usize,
    pub blocks: usize,
    pub norm: NormSettings,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            blocks: 8,
            norm: NormSettings::default(),
        }
    }
}

impl DiscriminatorConfig {
    /// (output channels, stride) of each convolution block.
    pub fn layout(&self) -> Vec<(usize, usize)> {
        (0..self.blocks)
            .map(|i| {
                let ch = (self.base_channels << (i / 2)).min(self.base_channels * 8);
                let stride = if i % 2 == 1 { 2 } else { 1 };
                (ch, stride)
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct DiscBlock {
    pub conv: Conv2d,
    pub norm: Option<BatchNorm>,
}

/// Strided VGG-style classifier emitting one logit per image.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    pub blocks: Vec<DiscBlock>,
    pub head: Linear,
}

impl Discriminator {
    pub fn init(config: &DiscriminatorConfig, seed: u64) -> Result<(Self, ModelParams)> {
        if config.blocks == 0 {
            return Err(Error::InvalidArgument("discriminator needs at least one block".into()));
        }
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut root = ParamBuilder::new(&mut params, &mut rng, "d");
        let mut cin = 3;
        let mut blocks = Vec::new();
        for (i, (cout, stride)) in config.layout().into_iter().enumerate() {
            let mut s = root.scope(&format!("block{i}"));
            let conv = Conv2d::new(&mut s, "conv", cin, cout, 3, stride)?;
            let norm = if i > 0 {
                Some(BatchNorm::new(&mut s, "bn", cout, true, config.norm)?)
            } else {
                None
            };
            blocks.push(DiscBlock { conv, norm });
            cin = cout;
        }
        let head = Linear::new(&mut root, "head", cin, 1)?;
        Ok((
            Self {
                config: config.clone(),
                blocks,
                head,
            },
            params,
        ))
    }

    /// `img` is [N,3,H,W]; returns [N,1] logits.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &mut Bound<T>, img: Var) -> Result<Var> {
        let [_, c, h, w] = tape.value(img).dims4("discriminator")?;
        if c != 3 {
            return Err(Error::shape("discriminator", format!("channel axis: expected 3, got {c}")));
        }
        if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
            return Err(Error::shape(
                "discriminator",
                format!("height/width axes: input {h}x{w} smaller than {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}"),
            ));
        }
        let mut x = img;
        for block in &self.blocks {
            x = block.conv.forward(tape, p, x)?;
            if let Some(bn) = &block.norm {
                x = bn.forward(tape, p, x)?;
            }
            x = tape.leaky_relu(x, LEAKY_SLOPE)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        self.head.forward(tape, p, pooled)
    }

    pub fn param_count(config: &DiscriminatorConfig) -> usize {
        let mut cin = 3;
        let mut total = 0;
        for (i, (cout, _)) in config.layout().into_iter().enumerate() {
            total += Conv2d::param_count(cin, cout, 3);
            if i > 0 {
                total += 2 * cout;
            }
            cin = cout;
        }
        total + cin + 1
    }
}
