//! Run configuration and its `key = value` text form.

use crate::canny::CannyParams;
use crate::error::{Error, Result};
use crate::network::{DiscriminatorConfig, GeneratorConfig, NormSettings};
use crate::objective::{LossSchedule, LossWeights};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Component switches used to build ablated variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub edge_attention: bool,
    pub pixel_loss: bool,
    pub perceptual_loss: bool,
    pub adversarial_loss: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            edge_attention: true,
            pixel_loss: true,
            perceptual_loss: true,
            adversarial_loss: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoEdgeAttention,
    NoPixel,
    NoPerceptual,
    NoAdversarial,
}

impl Variant {
    pub const ABLATIONS: [Variant; 4] = [
        Variant::NoEdgeAttention,
        Variant::NoPixel,
        Variant::NoPerceptual,
        Variant::NoAdversarial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEdgeAttention => "no_edge_attention",
            Variant::NoPixel => "no_pixel",
            Variant::NoPerceptual => "no_perceptual",
            Variant::NoAdversarial => "no_adversarial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Variant::Full]
            .into_iter()
            .chain(Self::ABLATIONS)
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected full, no_edge_attention, no_pixel, no_perceptual or no_adversarial"
                ))
            })
    }

    pub fn apply(self, ablation: &mut Ablation) {
        match self {
            Variant::Full => {}
            Variant::NoEdgeAttention => ablation.edge_attention = false,
            Variant::NoPixel => ablation.pixel_loss = false,
            Variant::NoPerceptual => ablation.perceptual_loss = false,
            Variant::NoAdversarial => ablation.adversarial_loss = false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scale: usize,
    pub patch_lr: usize,
    pub batch_size: usize,
    /// Patches drawn per epoch; one epoch is `ceil(patches / batch_size)` steps.
    pub patches_per_epoch: usize,
    pub epochs_pretrain: usize,
    pub epochs_full: usize,
    pub seed: u64,
    pub schedule: LossSchedule,
    /// Target for real images in the discriminator loss (1 means no smoothing).
    pub real_label: f64,
    pub optim: OptimConfig,
    pub channels: usize,
    pub edge_channels: usize,
    pub blocks: usize,
    pub global_residual: bool,
    pub disc_channels: usize,
    pub disc_blocks: usize,
    pub norm: NormSettings,
    pub canny: CannyParams,
    pub extractor_seed: u64,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let d = DiscriminatorConfig::default();
        Self {
            scale: g.scale,
            patch_lr: 32,
            batch_size: 8,
            patches_per_epoch: 800,
            epochs_pretrain: 20,
            epochs_full: 80,
            seed: 0,
            schedule: LossSchedule::staged(),
            real_label: 1.0,
            optim: OptimConfig::default(),
            channels: g.channels,
            edge_channels: g.edge_channels,
            blocks: g.blocks,
            global_residual: g.global_residual,
            disc_channels: d.base_channels,
            disc_blocks: d.blocks,
            norm: NormSettings::default(),
            canny: CannyParams::default(),
            extractor_seed: 7,
            ablation: Ablation::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs_pretrain + self.epochs_full
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.patches_per_epoch.div_ceil(self.batch_size)
    }

    pub fn is_full_stage(&self, epoch: usize) -> bool {
        epoch >= self.epochs_pretrain
    }

    /// Loss weights in effect during `epoch`, with ablations applied.
    pub fn weights_for_epoch(&self, epoch: usize) -> LossWeights {
        let mut w = self.schedule.for_stage(self.is_full_stage(epoch));
        if !self.ablation.pixel_loss {
            w.pixel = 0.0;
        }
        if !self.ablation.perceptual_loss {
            w.perceptual = 0.0;
        }
        if !self.ablation.adversarial_loss {
            w.adversarial = 0.0;
        }
        w
    }

    /// Whether a discriminator exists at all for this run.
    pub fn uses_discriminator(&self) -> bool {
        self.ablation.adversarial_loss && self.epochs_full > 0 && self.schedule.full.adversarial > 0.0
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            scale: self.scale,
            channels: self.channels,
            edge_channels: self.edge_channels,
            blocks: self.blocks,
            edge_attention: self.ablation.edge_attention,
            global_residual: self.global_residual,
            norm: self.norm,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: self.disc_channels,
            blocks: self.disc_blocks,
            norm: self.norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        crate::network::upsample_factors(self.scale).map_err(|e| Error::Config(e.to_string()))?;
        for (key, v) in [
            ("patch_lr", self.patch_lr),
            ("batch_size", self.batch_size),
            ("model.channels", self.channels),
            ("model.edge_channels", self.edge_channels),
            ("model.disc_channels", self.disc_channels),
            ("model.disc_blocks", self.disc_blocks),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        self.schedule.pretrain.validate()?;
        self.schedule.full.validate()?;
        self.canny.validate().map_err(|e| Error::Config(format!("canny: {e}")))?;
        if !(0.0..=1.0).contains(&self.real_label) {
            return Err(Error::Config(format!("loss.real_label must lie in [0, 1], got {}", self.real_label)));
        }
        let o = &self.optim;
        if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        if self.batch_size * self.patch_lr * self.patch_lr < 2 {
            return Err(Error::Config("batch too small for batch statistics".into()));
        }
        if self.uses_discriminator() && self.patch_lr * self.scale < crate::network::MIN_INPUT_SIDE {
            return Err(Error::Config(format!(
                "high-resolution patch side {} is below the discriminator minimum {}",
                self.patch_lr * self.scale,
                crate::network::MIN_INPUT_SIDE
            )));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "scale" => self.scale = parse_num(key, v)?,
            "patch_lr" => self.patch_lr = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "patches_per_epoch" => self.patches_per_epoch = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "schedule.epochs_pretrain" => self.epochs_pretrain = parse_num(key, v)?,
            "schedule.epochs_full" => self.epochs_full = parse_num(key, v)?,
            "loss.preset" => {
                self.schedule = match v {
                    "staged" => LossSchedule::staged(),
                    "balanced" => LossSchedule::balanced(),
                    _ => return Err(Error::Config(format!("loss.preset: expected staged or balanced, got {v:?}"))),
                }
            }
            "loss.lambda_pix" => {
                let x = parse_num(key, v)?;
                self.schedule.pretrain.pixel = x;
                self.schedule.full.pixel = x;
            }
            "loss.lambda_perc_pre" => self.schedule.pretrain.perceptual = parse_num(key, v)?,
            "loss.lambda_perc_full" => self.schedule.full.perceptual = parse_num(key, v)?,
            "loss.lambda_adv_full" => self.schedule.full.adversarial = parse_num(key, v)?,
            "loss.real_label" => self.real_label = parse_num(key, v)?,
            "optim.lr" => self.optim.lr = parse_num(key, v)?,
            "optim.beta1" => self.optim.beta1 = parse_num(key, v)?,
            "optim.beta2" => self.optim.beta2 = parse_num(key, v)?,
            "optim.eps" => self.optim.eps = parse_num(key, v)?,
            "model.channels" => self.channels = parse_num(key, v)?,
            "model.edge_channels" => self.edge_channels = parse_num(key, v)?,
            "model.blocks" => self.blocks = parse_num(key, v)?,
            "model.global_residual" => self.global_residual = parse_bool(key, v)?,
            "model.disc_channels" => self.disc_channels = parse_num(key, v)?,
            "model.disc_blocks" => self.disc_blocks = parse_num(key, v)?,
            "model.bn_eps" => self.norm.eps = parse_num(key, v)?,
            "model.bn_momentum" => self.norm.momentum = parse_num(key, v)?,
            "canny.sigma" => self.canny.sigma = parse_num(key, v)?,
            "canny.ksize" => self.canny.ksize = parse_num(key, v)?,
            "canny.low" => self.canny.low = parse_num(key, v)?,
            "canny.high" => self.canny.high = parse_num(key, v)?,
            "canny.relative" => self.canny.relative = parse_bool(key, v)?,
            "extractor.seed" => self.extractor_seed = parse_num(key, v)?,
            "ablation.edge_attention" => self.ablation.edge_attention = parse_bool(key, v)?,
            "ablation.pixel_loss" => self.ablation.pixel_loss = parse_bool(key, v)?,
            "ablation.perceptual_loss" => self.ablation.perceptual_loss = parse_bool(key, v)?,
            "ablation.adversarial_loss" => self.ablation.adversarial_loss = parse_bool(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies settings from text on top of `self`. Lines are `key = value`;
    /// `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Complete text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let s = &self.schedule;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("scale", self.scale.to_string());
        kv("patch_lr", self.patch_lr.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("patches_per_epoch", self.patches_per_epoch.to_string());
        kv("seed", self.seed.to_string());
        kv("schedule.epochs_pretrain", self.epochs_pretrain.to_string());
        kv("schedule.epochs_full", self.epochs_full.to_string());
        kv("loss.lambda_pix", format!("{:e}", s.full.pixel));
        kv("loss.lambda_perc_pre", format!("{:e}", s.pretrain.perceptual));
        kv("loss.lambda_perc_full", format!("{:e}", s.full.perceptual));
        kv("loss.lambda_adv_full", format!("{:e}", s.full.adversarial));
        kv("loss.real_label", format!("{:e}", self.real_label));
        kv("optim.lr", format!("{:e}", self.optim.lr));
        kv("optim.beta1", format!("{:e}", self.optim.beta1));
        kv("optim.beta2", format!("{:e}", self.optim.beta2));
        kv("optim.eps", format!("{:e}", self.optim.eps));
        kv("model.channels", self.channels.to_string());
        kv("model.edge_channels", self.edge_channels.to_string());
        kv("model.blocks", self.blocks.to_string());
        kv("model.global_residual", self.global_residual.to_string());
        kv("model.disc_channels", self.disc_channels.to_string());
        kv("model.disc_blocks", self.disc_blocks.to_string());
        kv("model.bn_eps", format!("{:e}", self.norm.eps));
        kv("model.bn_momentum", format!("{:e}", self.norm.momentum));
        kv("canny.sigma", format!("{:e}", self.canny.sigma));
        kv("canny.ksize", self.canny.ksize.to_string());
        kv("canny.low", format!("{:e}", self.canny.low));
        kv("canny.high", format!("{:e}", self.canny.high));
        kv("canny.relative", self.canny.relative.to_string());
        kv("extractor.seed", self.extractor_seed.to_string());
        kv("ablation.edge_attention", self.ablation.edge_attention.to_string());
        kv("ablation.pixel_loss", self.ablation.pixel_loss.to_string());
        kv("ablation.perceptual_loss", self.ablation.perceptual_loss.to_string());
        kv("ablation.adversarial_loss", self.ablation.adversarial_loss.to_string());
        out
    }
}
