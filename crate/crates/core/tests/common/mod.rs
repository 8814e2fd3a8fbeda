//! Straightforward reference implementations used as oracles.
#![allow(dead_code)]

use edgesr_core::canny::CannyParams;
use edgesr_core::harness::synth::synthetic_corpus;
use edgesr_core::harness::TrainConfig;
use edgesr_core::imageio::{Image, PatchPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_fn(h, w, |_, _| {
        [
            rng.gen_range(0..=255) as f32,
            rng.gen_range(0..=255) as f32,
            rng.gen_range(0..=255) as f32,
        ]
    })
    .unwrap()
}

pub fn gray_image(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Image {
    Image::from_fn(h, w, |y, x| [f(y, x); 3]).unwrap()
}

// ---------------------------------------------------------------- canny

fn padded(src: &[f64], h: usize, w: usize, r: usize) -> (Vec<f64>, usize) {
    let pw = w + 2 * r;
    let mut out = vec![0.0; (h + 2 * r) * pw];
    for py in 0..h + 2 * r {
        for px in 0..pw {
            let y = (py as isize - r as isize).clamp(0, h as isize - 1) as usize;
            let x = (px as isize - r as isize).clamp(0, w as isize - 1) as usize;
            out[py * pw + px] = src[y * w + x];
        }
    }
    (out, pw)
}

/// Canny on an explicitly padded buffer, with hysteresis by repeated sweeps
/// until nothing changes.
pub fn reference_canny(img: &Image, p: &CannyParams) -> Vec<f32> {
    let (h, w) = (img.height(), img.width());
    let gray: Vec<f64> = (0..h * w)
        .map(|i| {
            let px = &img.data()[i * 3..i * 3 + 3];
            0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64
        })
        .collect();

    let r = p.ksize / 2;
    let mut k: Vec<f64> = (0..p.ksize)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * p.sigma * p.sigma)).exp()
        })
        .collect();
    let ks: f64 = k.iter().sum();
    for v in &mut k {
        *v /= ks;
    }
    let (pad, pw) = padded(&gray, h, w, r);
    let mut horiz = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..p.ksize {
                acc += k[i] * pad[(y + r) * pw + x + i];
            }
            horiz[y * w + x] = acc;
        }
    }
    let (pad, pw) = padded(&horiz, h, w, r);
    let mut smooth = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..p.ksize {
                acc += k[i] * pad[(y + i) * pw + x + r];
            }
            smooth[y * w + x] = acc;
        }
    }

    let (pad, pw) = padded(&smooth, h, w, 1);
    let at = |y: usize, x: usize| pad[y * pw + x];
    let mut mag = vec![0.0; h * w];
    let mut angle = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (cy, cx) = (y + 1, x + 1);
            let right = at(cy - 1, cx + 1) + 2.0 * at(cy, cx + 1) + at(cy + 1, cx + 1);
            let left = at(cy - 1, cx - 1) + 2.0 * at(cy, cx - 1) + at(cy + 1, cx - 1);
            let below = at(cy + 1, cx - 1) + 2.0 * at(cy + 1, cx) + at(cy + 1, cx + 1);
            let above = at(cy - 1, cx - 1) + 2.0 * at(cy - 1, cx) + at(cy - 1, cx + 1);
            let (gx, gy) = (right - left, below - above);
            mag[y * w + x] = gx.hypot(gy);
            let mut deg = gy.atan2(gx).to_degrees();
            // Orientation is a line, not a vector: map onto (-90, 90].
            if deg > 90.0 {
                deg -= 180.0;
            } else if deg <= -90.0 {
                deg += 180.0;
            }
            angle[y * w + x] = deg;
        }
    }

    let mut thin = vec![0.0; h * w];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let d = angle[y * w + x];
            let (n1, n2) = if d > -22.5 && d < 22.5 {
                ((y, x - 1), (y, x + 1))
            } else if d >= 22.5 && d < 67.5 {
                ((y - 1, x - 1), (y + 1, x + 1))
            } else if d > -67.5 && d <= -22.5 {
                ((y + 1, x - 1), (y - 1, x + 1))
            } else {
                ((y - 1, x), (y + 1, x))
            };
            let m = mag[y * w + x];
            if m >= mag[n1.0 * w + n1.1] && m >= mag[n2.0 * w + n2.1] {
                thin[y * w + x] = m;
            }
        }
    }

    let peak = mag.iter().copied().fold(0.0, f64::max);
    let (low, high) = if p.relative { (p.low * peak, p.high * peak) } else { (p.low, p.high) };
    let mut out = vec![0.0f32; h * w];
    if p.relative && peak == 0.0 {
        return out;
    }
    for i in 0..h * w {
        if thin[i] > 0.0 && thin[i] >= high {
            out[i] = 1.0;
        }
    }
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if out[i] == 1.0 || !(thin[i] > 0.0 && thin[i] >= low) {
                    continue;
                }
                let touches = (y.saturating_sub(1)..=(y + 1).min(h - 1))
                    .any(|ny| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|nx| out[ny * w + nx] == 1.0));
                if touches {
                    out[i] = 1.0;
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

// ---------------------------------------------------------------- ssim

/// SSIM evaluated window by window with the 2-D Gaussian written out.
pub fn reference_ssim(a: &Image, b: &Image) -> f64 {
    let (h, w) = (a.height(), a.width());
    let n = 11usize;
    let sigma = 1.5f64;
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            g[i * n + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let gs: f64 = g.iter().sum();
    for v in &mut g {
        *v /= gs;
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let px = |img: &Image, y: usize, x: usize| img.data()[(y * w + x) * 3 + c] as f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        mx += g[i * n + j] * px(a, y0 + i, x0 + j);
                        my += g[i * n + j] * px(b, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let dx = px(a, y0 + i, x0 + j) - mx;
                        let dy = px(b, y0 + i, x0 + j) - my;
                        vx += g[i * n + j] * dx * dx;
                        vy += g[i * n + j] * dy * dy;
                        cov += g[i * n + j] * dx * dy;
                    }
                }
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / 3.0
}

// ---------------------------------------------------------------- bicubic

fn keys_cubic(x: f64) -> f64 {
    // Keys (1981) with a = -1/2.
    let x = x.abs();
    if x < 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Bicubic resampling evaluated as a direct 2-D weighted sum per output
/// pixel; antialiased when shrinking, edge samples replicated.
pub fn reference_bicubic(img: &Image, oh: usize, ow: usize) -> Image {
    let (h, w) = (img.height(), img.width());
    let axis = |n_in: usize, n_out: usize, o: usize| -> Vec<(usize, f64)> {
        let scale = n_in as f64 / n_out as f64;
        let stretch = scale.max(1.0);
        let center = (o as f64 + 0.5) * scale;
        let lo = (center - 2.0 * stretch).floor() as isize;
        let hi = (center + 2.0 * stretch).ceil() as isize;
        let raw: Vec<(usize, f64)> = (lo..hi)
            .map(|i| {
                let wt = keys_cubic((i as f64 + 0.5 - center) / stretch);
                (i.clamp(0, n_in as isize - 1) as usize, wt)
            })
            .collect();
        let s: f64 = raw.iter().map(|t| t.1).sum();
        raw.into_iter().map(|(i, wt)| (i, wt / s)).collect()
    };
    Image::from_fn(oh, ow, |oy, ox| {
        let ry = axis(h, oh, oy);
        let rx = axis(w, ow, ox);
        let mut px = [0.0f32; 3];
        for (c, out) in px.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(iy, wy) in &ry {
                for &(ix, wx) in &rx {
                    acc += wy * wx * img.data()[(iy * w + ix) * 3 + c] as f64;
                }
            }
            *out = acc as f32;
        }
        px
    })
    .unwrap()
}

// ---------------------------------------------------------------- desk protocol

/// Small-scale training setup shared by the quality checks.
pub struct Desk {
    pub config: TrainConfig,
    pub train: Vec<Image>,
    pub held_out: Vec<PatchPair>,
}

pub fn desk() -> Desk {
    let mut config = TrainConfig::default();
    config
        .apply_text(
            "scale = 4\npatch_lr = 12\nbatch_size = 8\npatches_per_epoch = 64\n\
             schedule.epochs_pretrain = 5\nschedule.epochs_full = 15\n\
             model.channels = 16\nmodel.edge_channels = 8\nmodel.blocks = 2\n\
             model.disc_channels = 8\nmodel.disc_blocks = 4\noptim.lr = 1e-3\nseed = 0\n",
        )
        .unwrap();
    let train = synthetic_corpus(32, 96, 96, 1).unwrap();
    let held_out = synthetic_corpus(8, 96, 96, 2)
        .unwrap()
        .iter()
        .map(|im| PatchPair::from_image(im, config.scale).unwrap())
        .collect();
    Desk { config, train, held_out }
}

// ---------------------------------------------------------------- overfit

/// Pixel-only training on one fixed batch of 8 patches; returns the pixel
/// loss before the first and after the last step.
pub fn overfit(steps: usize, extra: &str) -> (f64, f64) {
    use edgesr_core::harness::{make_batches, Trainer};
    use edgesr_core::imageio::sample_patch_pairs;
    let mut config = TrainConfig::default();
    config
        .apply_text(&format!(
            "scale = 4\npatch_lr = 8\nbatch_size = 8\nschedule.epochs_pretrain = 1\nschedule.epochs_full = 0\n\
             model.channels = 16\nmodel.edge_channels = 8\nmodel.blocks = 2\noptim.lr = 1e-3\n\
             ablation.perceptual_loss = false\nablation.adversarial_loss = false\n{extra}"
        ))
        .unwrap();
    let images = synthetic_corpus(4, 64, 64, 17).unwrap();
    let pairs = sample_patch_pairs(&images, config.scale, config.patch_lr, 8, 3).unwrap().pairs;
    let batch = make_batches(&pairs, 8, &config.canny).unwrap().remove(0);
    let mut trainer = Trainer::new(config).unwrap();
    let first = trainer.train_step(&batch, 0).unwrap().l_pix;
    let mut last = first;
    for _ in 1..steps {
        last = trainer.train_step(&batch, 0).unwrap().l_pix;
    }
    (first, last)
}

// ---------------------------------------------------------------- small runs

/// Seconds-scale training configuration with both stages and a discriminator.
pub fn tiny_config(extra: &str) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.apply_text(
        "scale = 2\npatch_lr = 16\nbatch_size = 4\npatches_per_epoch = 8\n\
         schedule.epochs_pretrain = 1\nschedule.epochs_full = 2\n\
         model.channels = 8\nmodel.edge_channels = 4\nmodel.blocks = 1\n\
         model.disc_channels = 4\nmodel.disc_blocks = 3\noptim.lr = 1e-3\nseed = 5\n",
    )
    .unwrap();
    c.apply_text(extra).unwrap();
    c
}

pub fn tiny_corpus() -> Vec<Image> {
    synthetic_corpus(4, 48, 48, 3).unwrap()
}

// ---------------------------------------------------------------- nea

use edgesr_core::network::{Bound, Mode, ModelParams, NeaBlock, NormSettings, ParamBuilder};
use edgesr_core::{Tape, Tensor};

fn nea_block(c: usize, ce: usize, seed: u64) -> (NeaBlock, ModelParams) {
    let mut params = ModelParams::new();
    let mut r = rng(seed);
    let block = NeaBlock::new(&mut ParamBuilder::new(&mut params, &mut r, "nea"), c, ce, NormSettings::default()).unwrap();
    (block, params)
}

/// Per-channel standardization over batch and space.
pub fn batch_norm_reference(x: &Tensor, eps: f64) -> Vec<f64> {
    let [n, c, h, w] = x.dims4("bn").unwrap();
    let hw = h * w;
    let mut out = vec![0.0; x.numel()];
    for ch in 0..c {
        let idx: Vec<usize> = (0..n).flat_map(|s| (s * c + ch) * hw..(s * c + ch + 1) * hw).collect();
        let mean = idx.iter().map(|&i| x.data()[i] as f64).sum::<f64>() / idx.len() as f64;
        let var = idx.iter().map(|&i| (x.data()[i] as f64 - mean).powi(2)).sum::<f64>() / idx.len() as f64;
        for &i in &idx {
            out[i] = (x.data()[i] as f64 - mean) / (var + eps).sqrt();
        }
    }
    out
}

pub struct ZeroFilmCheck {
    pub modulation_is_zero: bool,
    pub modulated_equals_normalized: bool,
    /// Largest deviation of the normalized features from the reference.
    pub bn_error: f64,
}

/// Freshly initialized block, all-zero edge features.
pub fn nea_zero_film_check() -> ZeroFilmCheck {
    let (block, mut params) = nea_block(6, 4, 1);
    let xv = Tensor::uniform(&[2, 6, 5, 7], -2.0, 3.0, &mut rng(2));
    let mut tape = Tape::new();
    let mut p = Bound::new(&mut params, Mode::Train, true);
    let x = tape.constant(xv.clone()).unwrap();
    let e = tape.constant(Tensor::zeros(&[2, 4, 5, 7])).unwrap();
    let tr = block.trace(&mut tape, &mut p, x, e).unwrap();
    let zero = |v| tape.value(v).data().iter().all(|&g: &f32| g == 0.0);
    let modulation_is_zero = zero(tr.gamma) && zero(tr.beta);
    let want = batch_norm_reference(&xv, NormSettings::default().eps as f64);
    let bn_error = tape
        .value(tr.normalized)
        .data()
        .iter()
        .zip(&want)
        .map(|(g, w)| (*g as f64 - w).abs())
        .fold(0.0, f64::max);
    ZeroFilmCheck {
        modulation_is_zero,
        modulated_equals_normalized: tape.value(tr.modulated) == tape.value(tr.normalized),
        bn_error,
    }
}

/// Zero modulation, saturated gate and averaging fusion: the block must
/// compute x + (x + BN(x)) / 2. Returns the largest deviation.
pub fn nea_identity_error() -> f64 {
    let (c, ce) = (5, 3);
    let (block, mut params) = nea_block(c, ce, 3);
    params.get_mut(block.spatial_conv3.weight).data_mut().fill(0.0);
    params.get_mut(block.spatial_conv3.bias).data_mut().fill(20.0);
    let fw = params.get_mut(block.fusion.weight).data_mut();
    fw.fill(0.0);
    for o in 0..c {
        fw[o * 2 * c + o] = 0.5;
        fw[o * 2 * c + c + o] = 0.5;
    }
    params.get_mut(block.fusion.bias).data_mut().fill(0.0);

    let xv = Tensor::uniform(&[3, c, 6, 4], -1.0, 1.0, &mut rng(4));
    let ev = Tensor::uniform(&[3, ce, 3, 2], 0.0, 1.0, &mut rng(5));
    let mut tape = Tape::new();
    let mut p = Bound::new(&mut params, Mode::Train, true);
    let x = tape.constant(xv.clone()).unwrap();
    let e = tape.constant(ev).unwrap();
    let y = block.forward(&mut tape, &mut p, x, e).unwrap();
    let bn = batch_norm_reference(&xv, NormSettings::default().eps as f64);
    tape.value(y)
        .data()
        .iter()
        .zip(xv.data())
        .enumerate()
        .map(|(i, (&got, &xi))| (got as f64 - (xi as f64 + (xi as f64 + bn[i]) / 2.0)).abs())
        .fold(0.0, f64::max)
}
