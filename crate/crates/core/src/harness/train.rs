//! Two-stage adversarial training, resumption and inference.

use super::checkpoint::{Checkpoint, Meta, OptimState};
use super::config::{TrainConfig, Variant};
use super::log::{LogRecord, LOG_HEADER};
use super::optim::Adam;
use crate::canny::CannyParams;
use crate::error::{Error, Result};
use crate::imageio::{batch_to_tensor, bicubic_resize, from_tensor, sample_patch_pairs, Image, PatchPair};
use crate::metrics::psnr;
use crate::network::{Bound, Discriminator, Generator, Mode, ModelParams};
use crate::objective::{self, FeatureExtractor};
use crate::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Network inputs and targets for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub lr: Tensor,
    pub edge: Tensor,
    pub hr: Tensor,
}

/// Low-resolution inputs are quantized to 8-bit levels, as they would be
/// when read from disk; edges are computed once per patch.
pub fn make_batches(pairs: &[PatchPair], batch_size: usize, canny_params: &CannyParams) -> Result<Vec<Batch>> {
    let mut out = Vec::new();
    for chunk in pairs.chunks(batch_size.max(1)) {
        let lr: Vec<Image> = chunk.iter().map(|p| p.lr.quantized()).collect();
        let hr: Vec<Image> = chunk.iter().map(|p| p.hr.clone()).collect();
        out.push(Batch {
            lr: batch_to_tensor(&lr)?,
            edge: crate::canny::edge_batch(&lr, canny_params)?,
            hr: batch_to_tensor(&hr)?,
        });
    }
    Ok(out)
}

/// Seed for the patch draw of one epoch; independent of earlier epochs so
/// that a resumed run sees the same data.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng.gen()
}

/// A generator ready for inference.
#[derive(Clone, Debug)]
pub struct SrModel {
    pub config: TrainConfig,
    pub generator: Generator,
    pub params: ModelParams,
}

impl SrModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = ck
            .meta
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no META section with the run configuration".into()))?;
        let config = TrainConfig::parse(&meta.config)?;
        let (generator, mut params) = Generator::init(&config.generator(), config.seed)?;
        ck.load_into("g", &mut params)?;
        Ok(Self {
            config,
            generator,
            params,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Runs the generator in eval mode on equally sized images.
    pub fn upscale_batch(&mut self, images: &[Image]) -> Result<Vec<Image>> {
        let lr = batch_to_tensor(images)?;
        let edge = crate::canny::edge_batch(images, &self.config.canny)?;
        let out = self.forward(&lr, &edge)?;
        (0..images.len()).map(|i| from_tensor(&out, i)).collect()
    }

    pub fn upscale(&mut self, image: &Image) -> Result<Image> {
        Ok(self.upscale_batch(std::slice::from_ref(image))?.remove(0))
    }

    pub fn forward(&mut self, lr: &Tensor, edge: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut p = Bound::new(&mut self.params, Mode::Eval, false);
        let x = tape.constant(lr.clone())?;
        let e = tape.constant(edge.clone())?;
        let y = self.generator.forward(&mut tape, &mut p, x, e)?;
        Ok(tape.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchEval {
    pub model_psnr: f64,
    pub bicubic_psnr: f64,
    pub patches: usize,
}

/// Mean PSNR of the model and of bicubic upscaling over held-out pairs.
pub fn evaluate_pairs(model: &mut SrModel, pairs: &[PatchPair]) -> Result<PatchEval> {
    if pairs.is_empty() {
        return Err(Error::Data("no evaluation patches".into()));
    }
    let (mut m, mut b) = (0.0, 0.0);
    for chunk in pairs.chunks(16) {
        let lr: Vec<Image> = chunk.iter().map(|p| p.lr.quantized()).collect();
        let sr = model.upscale_batch(&lr)?;
        for ((pair, lr), sr) in chunk.iter().zip(&lr).zip(&sr) {
            let bic = bicubic_resize(lr, pair.hr.height(), pair.hr.width())?.quantized();
            m += psnr(sr, &pair.hr)?;
            b += psnr(&bic, &pair.hr)?;
        }
    }
    let n = pairs.len() as f64;
    Ok(PatchEval {
        model_psnr: m / n,
        bicubic_psnr: b / n,
        patches: pairs.len(),
    })
}

#[derive(Clone, Debug)]
struct DiscState {
    net: Discriminator,
    params: ModelParams,
    opt: Adam,
}

/// Complete mutable training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub g_params: ModelParams,
    g_opt: Adam,
    disc: Option<DiscState>,
    extractor: FeatureExtractor,
    pub epochs_completed: usize,
    pub steps: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (generator, g_params) = Generator::init(&config.generator(), config.seed)?;
        let g_opt = Adam::new(config.optim, &g_params);
        let disc = if config.uses_discriminator() {
            let (net, params) = Discriminator::init(&config.discriminator(), config.seed ^ 0xd15c)?;
            let opt = Adam::new(config.optim, &params);
            Some(DiscState { net, params, opt })
        } else {
            None
        };
        Ok(Self {
            extractor: FeatureExtractor::new(config.extractor_seed)?,
            config,
            generator,
            g_params,
            g_opt,
            disc,
            epochs_completed: 0,
            steps: 0,
        })
    }

    pub fn has_discriminator(&self) -> bool {
        self.disc.is_some()
    }

    pub fn discriminator_params(&self) -> Option<&ModelParams> {
        self.disc.as_ref().map(|d| &d.params)
    }

    pub fn is_complete(&self) -> bool {
        self.epochs_completed >= self.config.total_epochs()
    }

    pub fn model(&self) -> SrModel {
        SrModel {
            config: self.config.clone(),
            generator: self.generator.clone(),
            params: self.g_params.clone(),
        }
    }

    /// Snapshot of the networks and, with `with_optim`, everything needed to resume.
    pub fn checkpoint(&self, with_optim: bool) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_params(&self.g_params);
        if let Some(d) = &self.disc {
            ck.push_params(&d.params);
        }
        ck.meta = Some(Meta {
            epochs_completed: self.epochs_completed as u64,
            steps: self.steps,
            config: self.config.to_text(),
        });
        if with_optim {
            ck.optim.push(OptimState::capture(&self.g_opt, &self.g_params));
            if let Some(d) = &self.disc {
                ck.optim.push(OptimState::capture(&d.opt, &d.params));
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = ck
            .meta
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no META section; cannot resume".into()))?;
        let mut t = Self::new(TrainConfig::parse(&meta.config)?)?;
        ck.load_into("g", &mut t.g_params)?;
        let expected_optim = 1 + t.disc.is_some() as usize;
        if ck.optim.len() != expected_optim {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} optimizer states, resuming needs {expected_optim}",
                ck.optim.len()
            )));
        }
        ck.optim[0].restore(&mut t.g_opt, &t.g_params)?;
        if let Some(d) = &mut t.disc {
            ck.load_into("d", &mut d.params)?;
            ck.optim[1].restore(&mut d.opt, &d.params)?;
        }
        t.epochs_completed = meta.epochs_completed as usize;
        t.steps = meta.steps;
        Ok(t)
    }

    /// One discriminator update (full stage only) followed by one generator update.
    pub fn train_step(&mut self, batch: &Batch, epoch: usize) -> Result<LogRecord> {
        let w = self.config.weights_for_epoch(epoch);
        let real_label = self.config.real_label;
        let mut tape = Tape::new();
        let mut gb = Bound::new(&mut self.g_params, Mode::Train, true);
        let lr = tape.constant(batch.lr.clone())?;
        let edge = tape.constant(batch.edge.clone())?;
        let hr = tape.constant(batch.hr.clone())?;
        let sr = self.generator.forward(&mut tape, &mut gb, lr, edge)?;
        let zero = tape.constant(Tensor::scalar(0.0))?;

        let l_pix = objective::pixel_loss(&mut tape, sr, hr)?;
        let l_perc = if w.perceptual > 0.0 {
            self.extractor.perceptual_loss(&mut tape, sr, hr)?
        } else {
            zero
        };

        let mut d_loss = 0.0;
        let l_adv = match &mut self.disc {
            Some(d) if w.adversarial > 0.0 => {
                let mut dt = Tape::new();
                let mut db = Bound::new(&mut d.params, Mode::Train, true);
                let real = dt.constant(batch.hr.clone())?;
                let fake = dt.constant(tape.value(sr).clone())?;
                let lr_real = d.net.forward(&mut dt, &mut db, real)?;
                let lr_fake = d.net.forward(&mut dt, &mut db, fake)?;
                let ld = objective::adversarial_loss_discriminator(&mut dt, lr_real, lr_fake, real_label)?;
                dt.backward(ld)?;
                d_loss = dt.value(ld).data()[0] as f64;
                let grads = db.grads(&dt);
                drop(db);
                d.opt.step(&mut d.params, &grads)?;

                let mut fb = Bound::new(&mut d.params, Mode::Train, false);
                let logits = d.net.forward(&mut tape, &mut fb, sr)?;
                objective::adversarial_loss_generator(&mut tape, logits)?
            }
            _ => zero,
        };

        let total = objective::total_loss(&mut tape, &w, l_pix, l_perc, l_adv)?;
        let value = |v| tape.value(v).data()[0] as f64;
        let record = LogRecord {
            epoch: epoch as u64,
            step: self.steps,
            l_pix: value(l_pix),
            l_perc: value(l_perc),
            l_adv: value(l_adv),
            l_total: value(total),
            d_loss,
            lambda_pix: w.pixel,
            lambda_perc: w.perceptual,
            lambda_adv: w.adversarial,
        };
        if tape.requires_grad(total) {
            tape.backward(total)?;
            let grads = gb.grads(&tape);
            drop(gb);
            self.g_opt.step(&mut self.g_params, &grads)?;
        }
        self.steps += 1;
        Ok(record)
    }

    /// Draws this epoch's patches and trains on them once.
    pub fn run_epoch(&mut self, images: &[Image]) -> Result<Vec<LogRecord>> {
        let epoch = self.epochs_completed;
        let c = &self.config;
        let sample = sample_patch_pairs(
            images,
            c.scale,
            c.patch_lr,
            c.patches_per_epoch,
            epoch_seed(c.seed, epoch),
        )?;
        let batches = make_batches(&sample.pairs, c.batch_size, &c.canny)?;
        let mut records = Vec::with_capacity(batches.len());
        for b in &batches {
            records.push(self.train_step(b, epoch)?);
        }
        self.epochs_completed += 1;
        Ok(records)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Stop once this many epochs are complete (simulates an interruption).
    pub stop_after: Option<usize>,
    /// Echo per-epoch summaries to stderr.
    pub verbose: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub trainer: Trainer,
    /// Full resumable state after the last completed epoch.
    pub last: PathBuf,
    pub log: PathBuf,
}

pub const LOG_FILE: &str = "train.log";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

pub fn epoch_checkpoint_name(epochs_completed: usize) -> String {
    format!("epoch_{epochs_completed:04}.ckpt")
}

fn prepare_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let probe = out.join(".write_test");
    std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn check_data(images: &[Image], config: &TrainConfig) -> Result<()> {
    let side = config.patch_lr * config.scale;
    if !images.iter().any(|i| i.height() >= side && i.width() >= side) {
        return Err(Error::Data(format!(
            "no usable training image: need at least one of {side}x{side} or larger among {}",
            images.len()
        )));
    }
    Ok(())
}

/// Trains from scratch, writing `train.log`, per-epoch checkpoints and `last.ckpt` into `out`.
pub fn train(config: TrainConfig, images: &[Image], out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let trainer = Trainer::new(config)?;
    check_data(images, &trainer.config)?;
    prepare_out_dir(out)?;
    let log = out.join(LOG_FILE);
    std::fs::write(&log, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(&log, e))?;
    let ck = trainer.checkpoint(true);
    ck.save(out.join(epoch_checkpoint_name(0)))?;
    ck.save(out.join(LAST_CHECKPOINT))?;
    run(trainer, images, out, opts)
}

/// Continues a run from a saved state. A finished run is left untouched.
pub fn resume(state: &Path, images: &[Image], out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let trainer = Trainer::from_checkpoint(&Checkpoint::load(state)?)?;
    prepare_out_dir(out)?;
    if !trainer.is_complete() {
        check_data(images, &trainer.config)?;
    }
    run(trainer, images, out, opts)
}

/// Trains one ablation variant of `config`.
pub fn ablate(config: &TrainConfig, variant: Variant, images: &[Image], out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let mut cfg = config.clone();
    variant.apply(&mut cfg.ablation);
    train(cfg, images, out, opts)
}

fn run(mut trainer: Trainer, images: &[Image], out: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let log_path = out.join(LOG_FILE);
    let last = out.join(LAST_CHECKPOINT);
    let total = trainer.config.total_epochs();
    let stop = opts.stop_after.unwrap_or(total).min(total);
    while trainer.epochs_completed < stop {
        let records = trainer.run_epoch(images)?;
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let mut text = String::new();
        for r in &records {
            text.push_str(&r.to_string());
            text.push('\n');
        }
        log.write_all(text.as_bytes()).map_err(|e| Error::io(&log_path, e))?;
        if opts.verbose {
            let n = records.len().max(1) as f64;
            let mean = |f: fn(&LogRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
            eprintln!(
                "epoch {:>4}/{total}  l_pix {:.4e}  l_perc {:.4e}  l_adv {:.4e}  d_loss {:.4e}",
                trainer.epochs_completed,
                mean(|r| r.l_pix),
                mean(|r| r.l_perc),
                mean(|r| r.l_adv),
                mean(|r| r.d_loss)
            );
        }
        let ck = trainer.checkpoint(true);
        ck.save(out.join(epoch_checkpoint_name(trainer.epochs_completed)))?;
        ck.save(&last)?;
    }
    if !last.exists() {
        trainer.checkpoint(true).save(&last)?;
    }
    Ok(RunOutcome {
        trainer,
        last,
        log: log_path,
    })
}

/// Upscales each input image and writes it under the same file name into `out`.
pub fn super_resolve(checkpoint: &Path, inputs: &[PathBuf], out: &Path, expected_scale: Option<usize>) -> Result<Vec<PathBuf>> {
    let mut model = SrModel::load(checkpoint)?;
    if let Some(s) = expected_scale {
        if s != model.config.scale {
            return Err(Error::InvalidArgument(format!(
                "requested scale {s} but checkpoint was trained for scale {}",
                model.config.scale
            )));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::with_capacity(inputs.len());
    for input in inputs {
        let img = crate::imageio::load_image(input)?;
        let sr = model.upscale(&img)?;
        let name = input
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("input {} has no file name", input.display())))?;
        let dst = out.join(name);
        crate::imageio::save_image(&dst, &sr)?;
        written.push(dst);
    }
    Ok(written)
}
