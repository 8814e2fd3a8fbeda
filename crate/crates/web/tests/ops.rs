use edgesr_web::ops;

fn gray_rgba(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(w * h * 4);
    for y in 0..h {
        for x in 0..w {
            let v = f(y, x);
            out.extend_from_slice(&[v, v, v, 255]);
        }
    }
    out
}

#[test]
fn scene_is_deterministic_and_opaque() {
    let a = ops::scene(24, 3).unwrap();
    assert_eq!(a.len(), 24 * 24 * 4);
    assert_eq!(a, ops::scene(24, 3).unwrap());
    assert_ne!(a, ops::scene(24, 4).unwrap());
    assert!(a.chunks(4).all(|p| p[3] == 255));
}

#[test]
fn edges_of_a_step_are_a_vertical_line() {
    let img = gray_rgba(20, 12, |_, x| if x < 10 { 0 } else { 255 });
    let e = ops::edges(&img, 20, 12, 1.0, 0.1, 0.2).unwrap();
    for y in 1..11 {
        let on: Vec<usize> = (0..20).filter(|&x| e[(y * 20 + x) * 4] == 255).collect();
        assert!(!on.is_empty() && on.iter().all(|&x| x == 9 || x == 10), "row {y}: {on:?}");
    }
    assert!(ops::edges(&img, 20, 12, 1.0, 0.3, 0.2).is_err());
    assert!(ops::edges(&img[4..], 20, 12, 1.0, 0.1, 0.2).is_err());
}

#[test]
fn degrade_restore_crops_to_the_scale() {
    let img = ops::scene(50, 1).unwrap();
    let r = ops::degrade_restore(&img, 50, 50, 4).unwrap();
    assert_eq!((r.width(), r.height(), r.lr_width(), r.lr_height()), (48, 48, 12, 12));
    assert_eq!(r.restored().len(), 48 * 48 * 4);
    assert_eq!(r.lr().len(), 12 * 12 * 4);
    let m = ops::compare(&r.restored(), &r.reference(), 48, 48).unwrap();
    assert!(m[0].is_finite() && m[0] > 15.0, "{m:?}");
    assert!(m[1] > 0.0 && m[1] < 1.0, "{m:?}");
}

#[test]
fn compare_identical_images() {
    let img = ops::scene(16, 2).unwrap();
    let m = ops::compare(&img, &img, 16, 16).unwrap();
    assert!(m[0].is_infinite());
    assert_eq!(m[1], 1.0);
}
