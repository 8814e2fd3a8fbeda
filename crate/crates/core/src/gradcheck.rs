//! Central finite-difference verification of the autograd engine.
//!
//! Checks run in f64. Each case maps its inputs to an arbitrary tensor which
//! is reduced to a scalar through fixed random weights, so every output
//! element contributes to the checked gradient.

use crate::error::Result;
use crate::network::{
    Bound, Discriminator, DiscriminatorConfig, EdgeEncoder, Generator, GeneratorConfig, HybridEdgeResBlock, Mode,
    ModelParams, NeaBlock, NormSettings, ParamBuilder, ParamId, ParamKind,
};
use crate::objective::{self, FeatureExtractor};
use crate::tensor::{BatchNormMode, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Elements probed per tensor; larger tensors are sampled.
    pub max_elements: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            rel_tol: 1e-3,
            abs_tol: 1e-5,
            max_elements: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub seed: u64,
    pub checked: usize,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
    pub seconds: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn summary(&self) -> String {
        format!(
            "{:<5} {:<28} seed={} checked={:<4} max_abs={:.2e} max_rel={:.2e}",
            if self.passed() { "ok" } else { "FAIL" },
            self.name,
            self.seed,
            self.checked,
            self.max_abs_err,
            self.max_rel_err
        )
    }
}

/// Differentiates `f` with respect to every tensor in `wrt`.
pub fn check<F>(name: &str, seed: u64, wrt: &[Tensor<f64>], opts: &GradCheckOptions, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut tape = Tape::new();
    let vars = wrt
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let projection = Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut rng);
    let loss = project(&mut tape, out, &projection)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(wrt)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&mut tape, &vars)?;
        let loss = project(&mut tape, out, &projection)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut report = GradCheckReport {
        name: name.to_string(),
        seed,
        checked: 0,
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        failures: Vec::new(),
        seconds: 0.0,
    };
    let mut probe = wrt.to_vec();
    for (ti, t) in wrt.iter().enumerate() {
        let n = t.numel();
        let indices: Vec<usize> = if n <= opts.max_elements {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, opts.max_elements).into_vec()
        };
        for i in indices {
            let orig = t.data()[i];
            probe[ti].data_mut()[i] = orig + opts.step;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[i] = orig - opts.step;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[ti].data()[i];
            let err = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(err);
            if scale > 0.0 {
                report.max_rel_err = report.max_rel_err.max(err / scale);
            }
            if err > (opts.rel_tol * scale).max(opts.abs_tol) {
                report.failures.push(format!(
                    "input {ti} element {i}: analytic {a:.6e}, numeric {numeric:.6e}"
                ));
            }
        }
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

fn project(tape: &mut Tape<f64>, out: Var, projection: &Tensor<f64>) -> Result<Var> {
    let r = tape.constant(projection.clone())?;
    let weighted = tape.mul(out, r)?;
    tape.sum(weighted)
}

/// Checks a parameterized network: gradients with respect to its learnable
/// tensors and the given inputs. Learnable tensors are re-drawn uniformly so
/// that zero-initialized projections are exercised too.
pub fn check_network<F>(
    name: &str,
    seed: u64,
    params: &ModelParams<f32>,
    inputs: &[Tensor<f64>],
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &mut Bound<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x51ed));
    let mut params: ModelParams<f64> = params.cast();
    let weight_ids: Vec<ParamId> = params
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == ParamKind::Weight)
        .map(|(i, _)| ParamId(i))
        .collect();
    for &id in &weight_ids {
        let shape = params.get(id).shape().to_vec();
        *params.get_mut(id) = Tensor::uniform(&shape, -0.5, 0.5, &mut rng);
    }
    let mut wrt: Vec<Tensor<f64>> = inputs.to_vec();
    wrt.extend(weight_ids.iter().map(|&id| params.get(id).clone()));
    let n_inputs = inputs.len();
    check(name, seed, &wrt, opts, |tape, vars| {
        let mut bound = Bound::new(&mut params, Mode::Train, true);
        for (&id, &v) in weight_ids.iter().zip(&vars[n_inputs..]) {
            bound.bind(id, v);
        }
        f(tape, &mut bound, &vars[..n_inputs])
    })
}

type Case = fn(u64, &GradCheckOptions) -> Result<GradCheckReport>;

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Random values kept away from the kink at zero.
fn rand_nonzero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = rand_t(rng, shape);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    }
    t
}

fn dims(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(3..=6), rng.gen_range(3..=6)]
}

fn unary(name: &'static str, seed: u64, opts: &GradCheckOptions, op: fn(&mut Tape<f64>, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let d = dims(&mut rng);
    let x = rand_nonzero(&mut rng, &d).map(|v| v * 3.0);
    check(name, seed, &[x], opts, |t, v| op(t, v[0]))
}

fn case_conv2d(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let [n, cin, h, w] = dims(&mut rng);
    let cout = rng.gen_range(1..=4);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let stride = rng.gen_range(1..=2);
    let x = rand_t(&mut rng, &[n, cin, h + 2, w + 2]);
    let wt = rand_t(&mut rng, &[cout, cin, k, k]);
    let b = rand_t(&mut rng, &[cout]);
    check("conv2d", seed, &[x, wt, b], o, |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, k / 2))
}

fn case_batch_norm(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let d = dims(&mut rng);
    let x = rand_t(&mut rng, &d);
    let c = d[1];
    check("batch_norm_train", seed, &[x], o, |t, v| {
        let (mut m, mut var) = (vec![0.0; c], vec![1.0; c]);
        t.batch_norm(v[0], BatchNormMode::Train, &mut m, &mut var, 1e-5, 0.1)
    })
}

fn case_batch_norm_eval(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let d = dims(&mut rng);
    let x = rand_t(&mut rng, &d);
    let mean: Vec<f64> = (0..d[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..d[1]).map(|_| rng.gen_range(0.5..2.0)).collect();
    check("batch_norm_eval", seed, &[x], o, |t, v| {
        let (mut m, mut s) = (mean.clone(), var.clone());
        t.batch_norm(v[0], BatchNormMode::Eval, &mut m, &mut s, 1e-5, 0.1)
    })
}

fn case_prelu(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let d = dims(&mut rng);
    let x = rand_nonzero(&mut rng, &d);
    let a = Tensor::uniform(&[d[1]], 0.0, 0.5, &mut rng);
    check("prelu", seed, &[x, a], o, |t, v| t.prelu(v[0], v[1]))
}

fn case_linear(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let (n, fi, fo) = (rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=5));
    let x = rand_t(&mut rng, &[n, fi]);
    let w = rand_t(&mut rng, &[fo, fi]);
    let b = rand_t(&mut rng, &[fo]);
    check("linear", seed, &[x, w, b], o, |t, v| t.linear(v[0], v[1], Some(v[2])))
}

fn case_pixel_shuffle(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let r = rng.gen_range(2..=3);
    let [n, c, h, w] = dims(&mut rng);
    let x = rand_t(&mut rng, &[n, c * r * r, h, w]);
    check("pixel_shuffle", seed, &[x], o, |t, v| t.pixel_shuffle(v[0], r))
}

fn case_pixel_unshuffle(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let r = rng.gen_range(2..=3);
    let [n, c, h, w] = dims(&mut rng);
    let x = rand_t(&mut rng, &[n, c, h * r, w * r]);
    check("pixel_unshuffle", seed, &[x], o, |t, v| t.pixel_unshuffle(v[0], r))
}

fn case_broadcast_arith(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let d = dims(&mut rng);
    let x = rand_t(&mut rng, &d);
    let y = rand_t(&mut rng, &d);
    let per_nc = rand_t(&mut rng, &[d[0], d[1]]);
    let per_c = rand_t(&mut rng, &[d[1]]);
    let plane = rand_t(&mut rng, &[d[0], 1, d[2], d[3]]);
    check("add_sub_mul_broadcast", seed, &[x, y, per_nc, per_c, plane], o, |t, v| {
        let a = t.mul(v[0], v[1])?;
        let a = t.add(a, v[2])?;
        let a = t.mul(a, v[3])?;
        let a = t.sub(a, v[4])?;
        let b = t.mul(v[0], v[4])?;
        let a = t.add(a, b)?;
        let a = t.scale(a, 0.7)?;
        t.add_scalar(a, -0.3)
    })
}

fn case_concat_narrow(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let [n, c, h, w] = dims(&mut rng);
    let a = rand_t(&mut rng, &[n, c, h, w]);
    let b = rand_t(&mut rng, &[n, c + 1, h, w]);
    check("concat_narrow", seed, &[a, b], o, |t, v| {
        let cat = t.concat_channels(&[v[0], v[1], v[0]])?;
        let mid = t.narrow_channels(cat, 1, 2 * c)?;
        t.mul(mid, mid)
    })
}

fn case_reductions(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let d = dims(&mut rng);
    let x = rand_t(&mut rng, &d);
    let y = rand_t(&mut rng, &d);
    check("sum_mean_mse", seed, &[x, y], o, |t, v| {
        let s = t.sum(v[0])?;
        let m = t.mean(v[1])?;
        let e = t.mse_mean(v[0], v[1])?;
        let a = t.add(s, m)?;
        t.add(a, e)
    })
}

fn case_global_avg_pool(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let d = dims(&mut rng);
    let x = rand_t(&mut rng, &d);
    check("global_avg_pool", seed, &[x], o, |t, v| t.global_avg_pool(v[0]))
}

fn case_bce(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let n = rng.gen_range(1..=6);
    let logits = Tensor::uniform(&[n, 1], -6.0, 6.0, &mut rng);
    let probs = Tensor::uniform(&[n, 1], 0.05, 0.95, &mut rng);
    let target = rng.gen_range(0.0..1.0);
    check("bce_logits_and_probs", seed, &[logits, probs], o, |t, v| {
        let a = t.bce_with_logits(v[0], target)?;
        let b = t.bce(v[1], 1.0 - target)?;
        t.add(a, b)
    })
}

fn case_log(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let d = dims(&mut rng);
    let x = Tensor::uniform(&d, 0.2, 3.0, &mut rng);
    check("log", seed, &[x], o, |t, v| t.log(v[0]))
}

fn case_resize(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let [n, c, h, w] = dims(&mut rng);
    let x = rand_t(&mut rng, &[n, c, h, w]);
    let (oh, ow) = (rng.gen_range(2..=2 * h), rng.gen_range(2..=2 * w));
    check("resize_bilinear", seed, &[x], o, |t, v| t.resize_bilinear(v[0], oh, ow))
}

fn case_resize_bicubic(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let [n, c, h, w] = dims(&mut rng);
    let x = rand_t(&mut rng, &[n, c, h, w]);
    let (oh, ow) = (rng.gen_range(1..=4 * h), rng.gen_range(1..=4 * w));
    check("resize_bicubic", seed, &[x], o, |t, v| t.resize_bicubic(v[0], oh, ow))
}

fn case_avg_pool2(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let [n, c, h, w] = dims(&mut rng);
    let x = rand_t(&mut rng, &[n, c, 2 * h, 2 * w]);
    check("avg_pool2", seed, &[x], o, |t, v| t.avg_pool2(v[0]))
}

fn case_nea(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let (c, ce) = (rng.gen_range(2..=4), rng.gen_range(2..=3));
    let (h, w) = (rng.gen_range(4..=6), rng.gen_range(4..=6));
    // Edge map at a different resolution exercises the internal resize.
    let (eh, ew) = if seed.is_multiple_of(2) { (h, w) } else { (h - 1, w + 1) };
    let mut params = ModelParams::new();
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    let mut pb = ParamBuilder::new(&mut params, &mut init, "t");
    let enc = EdgeEncoder::new(&mut pb.scope("enc"), ce)?;
    let block = NeaBlock::new(&mut pb.scope("nea"), c, ce, NormSettings::default())?;
    let x = rand_t(&mut rng, &[2, c, h, w]);
    let e = Tensor::uniform(&[2, 1, eh, ew], 0.0, 1.0, &mut rng);
    check_network("nea_block", seed, &params, &[x, e], o, |t, p, v| {
        let ef = enc.forward(t, p, v[1])?;
        block.forward(t, p, v[0], ef)
    })
}

fn case_hybrid(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let c = [2, 3, 8][(seed % 3) as usize];
    let side = if c == 8 { 8 } else { rng.gen_range(4..=6) };
    let ce = 2;
    let mut params = ModelParams::new();
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    let mut pb = ParamBuilder::new(&mut params, &mut init, "t");
    let enc = EdgeEncoder::new(&mut pb.scope("enc"), ce)?;
    let block = HybridEdgeResBlock::new(&mut pb.scope("block"), c, Some(ce), NormSettings::default())?;
    let x = rand_t(&mut rng, &[1, c, side, side]);
    let e = Tensor::uniform(&[1, 1, side, side], 0.0, 1.0, &mut rng);
    check_network("hybrid_edge_res_block", seed, &params, &[x, e], o, |t, p, v| {
        let ef = enc.forward(t, p, v[1])?;
        block.forward(t, p, v[0], Some(ef))
    })
}

fn case_generator(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let cfg = GeneratorConfig {
        scale: [2, 3, 4][(seed % 3) as usize],
        channels: 8,
        edge_channels: 4,
        blocks: 1,
        ..GeneratorConfig::default()
    };
    let (g, params) = Generator::init(&cfg, seed)?;
    let lr = Tensor::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut rng);
    let edge = Tensor::uniform(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
    let edge_v = edge.clone();
    check_network("generator", seed, &params, &[lr], o, |t, p, v| {
        let e = t.constant(edge_v.clone())?;
        g.forward(t, p, v[0], e)
    })
}

fn case_discriminator(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let cfg = DiscriminatorConfig {
        base_channels: 3,
        blocks: 3,
        ..DiscriminatorConfig::default()
    };
    let (d, params) = Discriminator::init(&cfg, seed)?;
    let img = Tensor::uniform(&[2, 3, 32, 32 + (seed % 3) as usize], 0.0, 1.0, &mut rng);
    check_network("discriminator", seed, &params, &[img], o, |t, p, v| d.forward(t, p, v[0]))
}

fn case_losses(seed: u64, o: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = rng_for(seed);
    let extractor = FeatureExtractor::new(seed)?.cast::<f64>();
    let side = 16 + 2 * (seed % 3) as usize;
    let sr = Tensor::uniform(&[2, 3, side, side], 0.0, 1.0, &mut rng);
    let hr = Tensor::uniform(&[2, 3, side, side], 0.0, 1.0, &mut rng);
    let logits = Tensor::uniform(&[2, 1], -4.0, 4.0, &mut rng);
    let real = Tensor::uniform(&[2, 1], -4.0, 4.0, &mut rng);
    check("losses", seed, &[sr, hr, logits, real], o, |t, v| {
        let pix = objective::pixel_loss(t, v[0], v[1])?;
        let perc = extractor.perceptual_loss(t, v[0], v[1])?;
        let adv = objective::adversarial_loss_generator(t, v[2])?;
        let w = objective::LossWeights::new(1.0, 0.7, 0.3)?;
        let total = objective::total_loss(t, &w, pix, perc, adv)?;
        let d = objective::adversarial_loss_discriminator(t, v[3], v[2], 1.0)?;
        t.add(total, d)
    })
}

/// Every registered case, by name.
pub fn cases() -> Vec<(&'static str, Case)> {
    vec![
        ("conv2d", case_conv2d as Case),
        ("batch_norm_train", case_batch_norm),
        ("batch_norm_eval", case_batch_norm_eval),
        ("prelu", case_prelu),
        ("leaky_relu", |s, o| unary("leaky_relu", s, o, |t, x| t.leaky_relu(x, 0.2))),
        ("relu", |s, o| unary("relu", s, o, |t, x| t.relu(x))),
        ("sigmoid", |s, o| unary("sigmoid", s, o, |t, x| t.sigmoid(x))),
        ("log_sigmoid", |s, o| unary("log_sigmoid", s, o, |t, x| t.log_sigmoid(x))),
        ("log", case_log),
        ("global_avg_pool", case_global_avg_pool),
        ("linear", case_linear),
        ("pixel_shuffle", case_pixel_shuffle),
        ("pixel_unshuffle", case_pixel_unshuffle),
        ("add_sub_mul_broadcast", case_broadcast_arith),
        ("concat_narrow", case_concat_narrow),
        ("sum_mean_mse", case_reductions),
        ("bce", case_bce),
        ("resize_bilinear", case_resize),
        ("resize_bicubic", case_resize_bicubic),
        ("avg_pool2", case_avg_pool2),
        ("losses", case_losses),
        ("nea_block", case_nea),
        ("hybrid_edge_res_block", case_hybrid),
        ("generator", case_generator),
        ("discriminator", case_discriminator),
    ]
}

/// Runs every case whose name contains `filter` once per seed.
pub fn run_suite(filter: Option<&str>, seeds: &[u64], opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let mut out = Vec::new();
    for (name, case) in cases() {
        if filter.is_some_and(|f| !name.contains(f)) {
            continue;
        }
        for &seed in seeds {
            out.push(case(seed, opts)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // detach hides the dependence of the output on x from the tape
        let x = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let r = check("broken", 0, &[x], &GradCheckOptions::default(), |t, v| {
            let d = t.detach(v[0])?;
            t.mul(d, v[0])
        })
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn conv_case_passes() {
        let r = case_conv2d(1, &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
    }
}
