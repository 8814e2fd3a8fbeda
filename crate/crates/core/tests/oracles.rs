mod common;

use common::*;
use edgesr_core::canny::{canny, CannyParams};
use edgesr_core::imageio::{bicubic_resize, downscale, to_tensor, Image};
use edgesr_core::metrics::{psnr, ssim};
use edgesr_core::Tape;
use rand::Rng;

fn fixtures() -> Vec<(&'static str, Image)> {
    vec![
        ("vertical_step", gray_image(32, 32, |_, x| if x < 16 { 20.0 } else { 220.0 })),
        ("horizontal_step", gray_image(32, 32, |y, _| if y < 13 { 0.0 } else { 255.0 })),
        ("diagonal_step", gray_image(32, 32, |y, x| if x > y { 200.0 } else { 40.0 })),
        ("ramp", gray_image(32, 32, |_, x| (x * 8) as f32)),
        ("plateau", gray_image(32, 32, |_, _| 128.0)),
        (
            "square_plateau",
            gray_image(32, 32, |y, x| if (8..24).contains(&y) && (8..24).contains(&x) { 180.0 } else { 60.0 }),
        ),
        (
            "disc",
            gray_image(32, 32, |y, x| {
                let (dy, dx) = (y as f32 - 15.5, x as f32 - 15.5);
                if dy * dy + dx * dx < 81.0 { 250.0 } else { 10.0 }
            }),
        ),
    ]
}

#[test]
fn canny_matches_reference_on_random_images() {
    let mut r = rng(11);
    let params = [
        CannyParams::default(),
        CannyParams { sigma: 1.4, ksize: 7, low: 0.05, high: 0.3, relative: true },
        CannyParams { sigma: 0.8, ksize: 3, low: 40.0, high: 120.0, relative: false },
    ];
    for i in 0..50 {
        let img = random_image(32, 32, &mut r);
        let p = &params[i % params.len()];
        assert_eq!(canny(&img, p).unwrap().data, reference_canny(&img, p), "image {i}");
    }
}

#[test]
fn canny_matches_reference_on_fixtures() {
    for (name, img) in fixtures() {
        let p = CannyParams::default();
        let got = canny(&img, &p).unwrap();
        assert_eq!(got.data, reference_canny(&img, &p), "{name}");
        if name.ends_with("step") || name == "disc" {
            assert!(got.count() > 0, "{name} should produce edges");
        }
    }
    let flat = canny(&gray_image(32, 32, |_, _| 128.0), &CannyParams::default()).unwrap();
    assert_eq!(flat.count(), 0);
}

#[test]
fn vertical_step_gives_a_thin_vertical_line() {
    let img = gray_image(32, 32, |_, x| if x < 16 { 0.0 } else { 255.0 });
    let e = canny(&img, &CannyParams::default()).unwrap();
    for y in 1..31 {
        let cols: Vec<usize> = (0..32).filter(|&x| e.at(y, x) > 0.0).collect();
        assert!(!cols.is_empty() && cols.len() <= 2, "row {y}: {cols:?}");
        assert!(cols.iter().all(|&x| x == 15 || x == 16), "row {y}: {cols:?}");
    }
}

#[test]
fn ssim_matches_window_by_window_reference() {
    let mut r = rng(5);
    for i in 0..100 {
        let (h, w) = (r.gen_range(11..=18), r.gen_range(11..=18));
        let a = random_image(h, w, &mut r);
        // Mix of unrelated and correlated pairs.
        let b = if i % 2 == 0 {
            random_image(h, w, &mut r)
        } else {
            let noise = random_image(h, w, &mut r);
            Image::from_fn(h, w, |y, x| {
                let k = (y * w + x) * 3;
                let f = |c: usize| 0.8 * a.data()[k + c] + 0.2 * noise.data()[k + c];
                [f(0), f(1), f(2)]
            })
            .unwrap()
        };
        let got = ssim(&a, &b).unwrap();
        let want = reference_ssim(&a, &b);
        assert!((got - want).abs() < 1e-6, "pair {i}: {got} vs {want}");
    }
}

#[test]
fn bicubic_agrees_with_direct_two_dimensional_reference() {
    let mut r = rng(21);
    let hr = edgesr_core::harness::synth::synthetic_corpus(4, 48, 48, 9).unwrap();
    for (i, img) in hr.iter().enumerate() {
        for scale in [2, 3, 4] {
            let lr = downscale(img, scale).unwrap();
            let lr_ref = reference_bicubic(img, 48 / scale, 48 / scale);
            let d = psnr(&lr, &lr_ref).unwrap();
            assert!(d > 60.0, "downscale {i} x{scale}: {d} dB apart");
            let up = bicubic_resize(&lr, 48, 48).unwrap();
            let up_ref = reference_bicubic(&lr, 48, 48);
            let (a, b) = (psnr(&up, img).unwrap(), psnr(&up_ref, img).unwrap());
            assert!((a - b).abs() < 0.05, "upscale {i} x{scale}: {a} vs {b}");
        }
    }
    let noise = random_image(20, 13, &mut r);
    let a = bicubic_resize(&noise, 37, 29).unwrap();
    let b = reference_bicubic(&noise, 37, 29);
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-3));
}

#[test]
fn tape_bicubic_matches_image_resize() {
    let mut r = rng(3);
    let img = random_image(9, 12, &mut r);
    let want = bicubic_resize(&img, 36, 48).unwrap();
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(to_tensor(&img).cast()).unwrap();
    let y = tape.resize_bicubic(x, 36, 48).unwrap();
    let out = tape.value(y);
    for c in 0..3 {
        for i in 0..36 * 48 {
            let got = (out.data()[c * 36 * 48 + i] * 255.0).clamp(0.0, 255.0);
            let exp = want.data()[i * 3 + c] as f64;
            assert!((got - exp).abs() < 1e-3, "channel {c} pixel {i}: {got} vs {exp}");
        }
    }
}
