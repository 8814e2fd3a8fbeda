//! Pixel, perceptual and adversarial losses and their staged weighting.

use crate::error::{Error, Result};
use crate::network::layers::Conv2d;
use crate::network::{Bound, ModelParams, ParamBuilder};
use crate::tensor::{Element, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Weights of the three loss terms. The pixel term is normally 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub pixel: f64,
    pub perceptual: f64,
    pub adversarial: f64,
}

impl LossWeights {
    pub fn new(pixel: f64, perceptual: f64, adversarial: f64) -> Result<Self> {
        let w = Self {
            pixel,
            perceptual,
            adversarial,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pixel", self.pixel),
            ("perceptual", self.perceptual),
            ("adversarial", self.adversarial),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} loss weight must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// `w_pix * l_pix + w_perc * l_perc + w_adv * l_adv` on plain numbers.
    pub fn combine(&self, l_pix: f64, l_perc: f64, l_adv: f64) -> f64 {
        self.pixel * l_pix + self.perceptual * l_perc + self.adversarial * l_adv
    }
}

/// Two-stage weighting: adversarial-free pre-training, then full training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSchedule {
    pub pretrain: LossWeights,
    pub full: LossWeights,
}

impl LossSchedule {
    /// Staged default: (1, 1e-4, 0) then (1, 1e-4, 1e-3).
    pub fn staged() -> Self {
        Self {
            pretrain: LossWeights {
                pixel: 1.0,
                perceptual: 1e-4,
                adversarial: 0.0,
            },
            full: LossWeights {
                pixel: 1.0,
                perceptual: 1e-4,
                adversarial: 1e-3,
            },
        }
    }

    /// The fixed (1, 0.001, 0.01) weighting, with the adversarial term held
    /// at zero during pre-training.
    pub fn balanced() -> Self {
        Self {
            pretrain: LossWeights {
                pixel: 1.0,
                perceptual: 1e-3,
                adversarial: 0.0,
            },
            full: LossWeights {
                pixel: 1.0,
                perceptual: 1e-3,
                adversarial: 1e-2,
            },
        }
    }

    pub fn for_stage(&self, full_stage: bool) -> LossWeights {
        if full_stage {
            self.full
        } else {
            self.pretrain
        }
    }
}

/// Weighted sum of loss terms on the tape.
pub fn total_loss<T: Element>(tape: &mut Tape<T>, w: &LossWeights, l_pix: Var, l_perc: Var, l_adv: Var) -> Result<Var> {
    let a = tape.scale(l_pix, w.pixel)?;
    let b = tape.scale(l_perc, w.perceptual)?;
    let c = tape.scale(l_adv, w.adversarial)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

/// Mean squared error over every element.
pub fn pixel_loss<T: Element>(tape: &mut Tape<T>, sr: Var, hr: Var) -> Result<Var> {
    if tape.shape(sr) != tape.shape(hr) {
        return Err(Error::shape(
            "pixel_loss",
            format!("sr {:?} and hr {:?} differ", tape.shape(sr), tape.shape(hr)),
        ));
    }
    tape.mse_mean(sr, hr)
}

/// `-(1/N) sum log sigmoid(logit)`: the generator wants fakes judged real.
pub fn adversarial_loss_generator<T: Element>(tape: &mut Tape<T>, fake_logits: Var) -> Result<Var> {
    tape.bce_with_logits(fake_logits, 1.0)
}

/// Binary cross-entropy with `real_target` for real logits and 0 for fakes,
/// averaged over both halves.
pub fn adversarial_loss_discriminator<T: Element>(
    tape: &mut Tape<T>,
    real_logits: Var,
    fake_logits: Var,
    real_target: f64,
) -> Result<Var> {
    let real = tape.bce_with_logits(real_logits, real_target)?;
    let fake = tape.bce_with_logits(fake_logits, 0.0)?;
    let sum = tape.add(real, fake)?;
    tape.scale(sum, 0.5)
}

pub const EXTRACTOR_CHANNELS: [usize; 4] = [16, 32, 64, 64];

/// Frozen random convolution stack standing in for a pretrained feature
/// network: four stages of 3x3 conv, ReLU and 2x average pooling.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T: Element = f32> {
    stages: Vec<Conv2d>,
    params: ModelParams<T>,
}

impl FeatureExtractor<f32> {
    pub fn new(seed: u64) -> Result<Self> {
        let mut params = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng, "phi");
        let mut cin = 3;
        let mut stages = Vec::new();
        for (i, &cout) in EXTRACTOR_CHANNELS.iter().enumerate() {
            stages.push(Conv2d::new(&mut pb, &format!("stage{i}"), cin, cout, 3, 1)?);
            cin = cout;
        }
        Ok(Self { stages, params })
    }
}

impl<T: Element> FeatureExtractor<T> {
    pub fn cast<U: Element>(&self) -> FeatureExtractor<U> {
        FeatureExtractor {
            stages: self.stages.clone(),
            params: self.params.cast(),
        }
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// Final-stage features; gradients reach `img` but never the weights.
    pub fn features(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        let mut p = Bound::frozen(&self.params);
        let mut x = img;
        for stage in &self.stages {
            x = stage.forward(tape, &mut p, x)?;
            x = tape.relu(x)?;
            x = tape.avg_pool2(x)?;
        }
        Ok(x)
    }

    /// MSE between feature maps, normalized by the feature map size.
    pub fn perceptual_loss(&self, tape: &mut Tape<T>, sr: Var, hr: Var) -> Result<Var> {
        if tape.shape(sr) != tape.shape(hr) {
            return Err(Error::shape(
                "perceptual_loss",
                format!("sr {:?} and hr {:?} differ", tape.shape(sr), tape.shape(hr)),
            ));
        }
        let fs = self.features(tape, sr)?;
        let fh = self.features(tape, hr)?;
        tape.mse_mean(fs, fh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar(tape: &Tape<f64>, v: Var) -> f64 {
        tape.value(v).data()[0]
    }

    #[test]
    fn pixel_loss_constant_offset() {
        let mut tape = Tape::<f64>::new();
        let hr = Tensor::full(&[1, 3, 4, 4], 0.3);
        let sr = Tensor::full(&[1, 3, 4, 4], 0.4);
        let h = tape.constant(hr.clone()).unwrap();
        let s = tape.leaf(sr, true).unwrap();
        let l = pixel_loss(&mut tape, s, h).unwrap();
        assert!((scalar(&tape, l) - 0.01).abs() < 1e-12);
        let h2 = tape.constant(hr).unwrap();
        let z = pixel_loss(&mut tape, h2, h).unwrap();
        assert_eq!(scalar(&tape, z), 0.0);
    }

    #[test]
    fn pixel_loss_gradient_is_two_residual_over_n() {
        let mut tape = Tape::<f64>::new();
        let sr = Tensor::new(&[1, 1, 1, 4], vec![0.1, 0.5, -0.2, 0.9]).unwrap();
        let hr = Tensor::new(&[1, 1, 1, 4], vec![0.0, 0.5, 0.3, 1.0]).unwrap();
        let s = tape.leaf(sr.clone(), true).unwrap();
        let h = tape.constant(hr.clone()).unwrap();
        let l = pixel_loss(&mut tape, s, h).unwrap();
        tape.backward(l).unwrap();
        let g = tape.grad(s).unwrap();
        for i in 0..4 {
            let expect = 2.0 * (sr.data()[i] - hr.data()[i]) / 4.0;
            assert!((g.data()[i] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[1, 3, 4, 4])).unwrap();
        let b = tape.constant(Tensor::zeros(&[1, 3, 4, 5])).unwrap();
        assert!(pixel_loss(&mut tape, a, b).is_err());
    }

    #[test]
    fn generator_adversarial_loss_values() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[1, 1])).unwrap();
        let l = adversarial_loss_generator(&mut tape, z).unwrap();
        assert!((scalar(&tape, l) - std::f64::consts::LN_2).abs() < 1e-6);
        let big = tape.constant(Tensor::full(&[1, 1], 50.0)).unwrap();
        let l = adversarial_loss_generator(&mut tape, big).unwrap();
        assert!(scalar(&tape, l) < 1e-20);
        // f32 too: no overflow at the extremes
        let mut t32 = Tape::<f32>::new();
        let x = t32.constant(Tensor::new(&[2, 1], vec![1e3, -1e3]).unwrap()).unwrap();
        let l = adversarial_loss_generator(&mut t32, x).unwrap();
        assert!((t32.value(l).data()[0] - 500.0).abs() < 1e-3);
    }

    #[test]
    fn generator_adversarial_matches_naive_form() {
        let mut x = -20.0;
        while x <= 20.0 {
            let mut tape = Tape::<f64>::new();
            let v = tape.constant(Tensor::full(&[1, 1], x)).unwrap();
            let l = adversarial_loss_generator(&mut tape, v).unwrap();
            let naive = -(1.0 / (1.0 + (-x).exp())).ln();
            assert!((scalar(&tape, l) - naive).abs() < 1e-6, "x = {x}");
            x += 0.25;
        }
    }

    #[test]
    fn discriminator_loss_values() {
        let mut tape = Tape::<f64>::new();
        let r = tape.constant(Tensor::zeros(&[1, 1])).unwrap();
        let f = tape.constant(Tensor::zeros(&[1, 1])).unwrap();
        let l = adversarial_loss_discriminator(&mut tape, r, f, 1.0).unwrap();
        assert!((scalar(&tape, l) - std::f64::consts::LN_2).abs() < 1e-6);

        let r = tape.constant(Tensor::full(&[2, 1], 50.0)).unwrap();
        let f = tape.constant(Tensor::full(&[2, 1], -50.0)).unwrap();
        let l = adversarial_loss_discriminator(&mut tape, r, f, 1.0).unwrap();
        assert!(scalar(&tape, l) < 1e-20);

        // 2 + 2 batch against hand-computed BCE
        let real = [0.5, -1.0];
        let fake = [2.0, -0.3];
        let r = tape.constant(Tensor::new(&[2, 1], real.to_vec()).unwrap()).unwrap();
        let f = tape.constant(Tensor::new(&[2, 1], fake.to_vec()).unwrap()).unwrap();
        let l = adversarial_loss_discriminator(&mut tape, r, f, 1.0).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let hand = (-(sig(0.5).ln()) - sig(-1.0).ln() - (1.0 - sig(2.0)).ln() - (1.0 - sig(-0.3)).ln()) / 4.0;
        assert!((scalar(&tape, l) - hand).abs() < 1e-12);
    }

    #[test]
    fn total_loss_presets() {
        let w = LossSchedule::balanced().full;
        assert!((w.combine(1.0, 1.0, 1.0) - 1.011).abs() < 1e-12);
        let pre = LossWeights::new(1.0, 1e-4, 0.0).unwrap();
        assert_eq!(pre.combine(0.5, 2.0, 3.0), pre.combine(0.5, 2.0, 1e9));
        let pix_only = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(pix_only.combine(0.37, 5.0, 9.0), 0.37);
        assert!(LossWeights::new(1.0, -1.0, 0.0).is_err());

        let mut tape = Tape::<f64>::new();
        let ones: Vec<Var> = (0..3).map(|_| tape.constant(Tensor::scalar(1.0)).unwrap()).collect();
        let t = total_loss(&mut tape, &w, ones[0], ones[1], ones[2]).unwrap();
        assert!((scalar(&tape, t) - 1.011).abs() < 1e-12);
    }

    #[test]
    fn perceptual_loss_symmetric_and_frozen() {
        let phi = FeatureExtractor::new(7).unwrap().cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f64>::uniform(&[2, 3, 16, 16], 0.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[2, 3, 16, 16], 0.0, 1.0, &mut rng);
        let mut tape = Tape::<f64>::new();
        let va = tape.leaf(a.clone(), true).unwrap();
        let vb = tape.constant(b.clone()).unwrap();
        let lab = phi.perceptual_loss(&mut tape, va, vb).unwrap();
        let lba = phi.perceptual_loss(&mut tape, vb, va).unwrap();
        assert_eq!(scalar(&tape, lab), scalar(&tape, lba));
        let same = phi.perceptual_loss(&mut tape, vb, vb).unwrap();
        assert_eq!(scalar(&tape, same), 0.0);
        tape.backward(lab).unwrap();
        let g = tape.grad(va).unwrap();
        assert!(g.data().iter().any(|v| *v != 0.0));
        let mut probe = Tape::<f64>::new();
        let x = probe.constant(a).unwrap();
        let f = phi.features(&mut probe, x).unwrap();
        assert!(!probe.requires_grad(f));
        assert_eq!(probe.shape(f), &[2, 64, 1, 1]);
    }

    #[test]
    fn extractor_is_deterministic() {
        let a = FeatureExtractor::new(3).unwrap();
        let b = FeatureExtractor::new(3).unwrap();
        assert_eq!(a.params(), b.params());
        let c = FeatureExtractor::new(4).unwrap();
        assert_ne!(a.params(), c.params());
    }
}
