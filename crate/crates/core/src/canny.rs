//! Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
//! suppression and hysteresis thresholding.

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::tensor::Tensor;
use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI};

/// Single-channel real-valued map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value at a possibly out-of-range position, replicating the border.
    fn clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-pixel Sobel response.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Gradient orientation in (-pi/2, pi/2].
    pub direction: Vec<f64>,
}

/// Binary edge map; values are exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl EdgeMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// White edges on black.
    pub fn to_image(&self) -> Image {
        let data = self.data.iter().flat_map(|&v| [v * 255.0; 3]).collect();
        Image::new(self.height, self.width, data).expect("edge map values are binary")
    }

    /// [1,1,H,W] tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[1, 1, self.height, self.width], self.data.clone()).expect("consistent edge map")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    pub ksize: usize,
    pub low: f64,
    pub high: f64,
    /// Thresholds are fractions of the largest gradient magnitude.
    pub relative: bool,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            ksize: 5,
            low: 0.1,
            high: 0.2,
            relative: true,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.ksize.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel size must be odd, got {}", self.ksize)));
        }
        check_thresholds(self.low, self.high)
    }
}

fn check_thresholds(low: f64, high: f64) -> Result<()> {
    if !(low >= 0.0 && low < high) {
        return Err(Error::InvalidArgument(format!(
            "thresholds must satisfy 0 <= low < high, got low={low} high={high}"
        )));
    }
    Ok(())
}

/// Luma with BT.601 weights.
pub fn grayscale(img: &Image) -> GrayMap {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    GrayMap {
        height: img.height(),
        width: img.width(),
        data,
    }
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Result<Vec<f64>> {
    if ksize.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("kernel size must be odd, got {ksize}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let r = (ksize / 2) as f64;
    let mut k: Vec<f64> = (0..ksize)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok(k)
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_smooth(map: &GrayMap, sigma: f64, ksize: usize) -> Result<GrayMap> {
    let k = gaussian_kernel(sigma, ksize)?;
    let r = (ksize / 2) as isize;
    let (h, w) = (map.height, map.width);
    let mut rows = GrayMap::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * map.clamped(y as isize, x as isize + i as isize - r);
            }
            rows.data[y * w + x] = acc;
        }
    }
    let mut out = GrayMap::filled(h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * rows.clamped(y as isize + i as isize - r, x as isize);
            }
            out.data[y * w + x] = acc;
        }
    }
    Ok(out)
}

/// Folds an angle from atan2 into (-pi/2, pi/2].
fn fold_direction(theta: f64) -> f64 {
    if theta > FRAC_PI_2 {
        theta - PI
    } else if theta <= -FRAC_PI_2 {
        theta + PI
    } else {
        theta
    }
}

pub fn sobel_gradients(map: &GrayMap) -> Result<GradientField> {
    let (h, w) = (map.height, map.width);
    if h < 3 || w < 3 {
        return Err(Error::shape("sobel_gradients", format!("need at least 3x3, got {h}x{w}")));
    }
    let n = h * w;
    let mut f = GradientField {
        height: h,
        width: w,
        gx: vec![0.0; n],
        gy: vec![0.0; n],
        magnitude: vec![0.0; n],
        direction: vec![0.0; n],
    };
    for y in 0..h {
        for x in 0..w {
            let p = |dy: isize, dx: isize| map.clamped(y as isize + dy, x as isize + dx);
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let i = y * w + x;
            f.gx[i] = gx;
            f.gy[i] = gy;
            f.magnitude[i] = gx.hypot(gy);
            f.direction[i] = fold_direction(gy.atan2(gx));
        }
    }
    Ok(f)
}

/// Neighbor offsets (dy, dx) along the quantized gradient direction.
/// Rows grow downward, so a positive angle points down-right.
fn direction_offsets(theta: f64) -> (isize, isize) {
    let deg = theta.to_degrees();
    if deg.abs() < 22.5 {
        (0, 1)
    } else if (22.5..67.5).contains(&deg) {
        (1, 1)
    } else if deg > -67.5 && deg <= -22.5 {
        (-1, 1)
    } else {
        (1, 0)
    }
}

/// Keeps pixels whose magnitude is at least that of both neighbors along the
/// gradient; suppressed pixels and the one-pixel border become zero.
pub fn non_max_suppression(g: &GradientField) -> GrayMap {
    let (h, w) = (g.height, g.width);
    let mut out = GrayMap::filled(h, w, 0.0);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = g.magnitude[i];
            let (dy, dx) = direction_offsets(g.direction[i]);
            let a = g.magnitude[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let b = g.magnitude[(y as isize - dy) as usize * w + (x as isize - dx) as usize];
            if m >= a && m >= b {
                out.data[i] = m;
            }
        }
    }
    out
}

/// Dual-threshold linking: values >= `high` seed edges which grow through
/// 8-connected values >= `low`. Zero-valued pixels never become edges.
pub fn hysteresis(map: &GrayMap, low: f64, high: f64) -> Result<EdgeMap> {
    check_thresholds(low, high)?;
    let (h, w) = (map.height, map.width);
    let mut edges = EdgeMap::empty(h, w);
    let candidate = |v: f64| v >= low && v > 0.0;
    let mut queue = VecDeque::new();
    for (i, &v) in map.data.iter().enumerate() {
        if v >= high && candidate(v) {
            edges.data[i] = 1.0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if edges.data[j] == 0.0 && candidate(map.data[j]) {
                    edges.data[j] = 1.0;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(edges)
}

/// Full pipeline on an RGB image.
pub fn canny(img: &Image, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    let gray = grayscale(img);
    let smooth = gaussian_smooth(&gray, params.sigma, params.ksize)?;
    let grad = sobel_gradients(&smooth)?;
    let thin = non_max_suppression(&grad);
    let (low, high) = if params.relative {
        let peak = grad.magnitude.iter().copied().fold(0.0, f64::max);
        if peak == 0.0 {
            return Ok(EdgeMap::empty(img.height(), img.width()));
        }
        (params.low * peak, params.high * peak)
    } else {
        (params.low, params.high)
    };
    hysteresis(&thin, low, high)
}

/// Edge maps of several equally sized images stacked into [N,1,H,W].
pub fn edge_batch(images: &[Image], params: &CannyParams) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.height() != h || img.width() != w {
            return Err(Error::InvalidArgument("edge batch mixes image sizes".into()));
        }
        data.extend(canny(img, params)?.data);
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_preserves_constants_and_rejects_even_kernels() {
        let m = GrayMap::filled(6, 9, 42.0);
        let s = gaussian_smooth(&m, 1.3, 5).unwrap();
        assert!(s.data.iter().all(|&v| (v - 42.0).abs() < 1e-12));
        assert!(gaussian_smooth(&m, 1.0, 4).is_err());
    }

    #[test]
    fn impulse_reproduces_kernel() {
        let mut m = GrayMap::filled(9, 9, 0.0);
        m.data[4 * 9 + 4] = 1.0;
        let s = gaussian_smooth(&m, 1.0, 5).unwrap();
        let norm: f64 = (-2..=2)
            .flat_map(|a: i32| (-2..=2).map(move |b: i32| (-((a * a + b * b) as f64) / 2.0).exp()))
            .sum();
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let want = (-((dy * dy + dx * dx) as f64) / 2.0).exp() / norm;
                let got = s.at((4 + dy) as usize, (4 + dx) as usize);
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_step_gradient() {
        let m = GrayMap::new(5, 5, (0..25).map(|i| if i % 5 >= 3 { 255.0 } else { 0.0 }).collect()).unwrap();
        let g = sobel_gradients(&m).unwrap();
        for y in 0..5 {
            // Columns 2 and 3 straddle the step: 1 + 2 + 1 = 4 times 255.
            assert_eq!(g.gx[y * 5 + 2], 1020.0);
            assert_eq!(g.gx[y * 5 + 3], 1020.0);
            assert_eq!(g.gy[y * 5 + 2], 0.0);
            assert_eq!(g.direction[y * 5 + 2], 0.0);
        }
        assert_eq!(g.magnitude[0], 0.0);
    }

    #[test]
    fn direction_range() {
        for (gx, gy) in [(-1.0, 0.0), (0.0, -1.0), (0.0, 1.0), (-1.0, -1e-9), (1.0, 1.0)] {
            let t = fold_direction(f64::atan2(gy, gx));
            assert!(t > -FRAC_PI_2 && t <= FRAC_PI_2, "{t}");
        }
    }

    #[test]
    fn hysteresis_links_chains() {
        let mut m = GrayMap::filled(7, 7, 0.0);
        m.data[7 + 1] = 0.9;
        m.data[2 * 7 + 2] = 0.5;
        m.data[3 * 7 + 3] = 0.5;
        m.data[5 * 7 + 5] = 0.5;
        let e = hysteresis(&m, 0.3, 0.8).unwrap();
        assert_eq!(e.at(1, 1), 1.0);
        assert_eq!(e.at(2, 2), 1.0);
        assert_eq!(e.at(3, 3), 1.0);
        assert_eq!(e.at(5, 5), 0.0);
        assert_eq!(e.count(), 3);
        assert!(hysteresis(&m, 0.5, 0.5).is_err());
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = Image::filled(16, 16, [90.0, 90.0, 90.0]).unwrap();
        assert_eq!(canny(&img, &CannyParams::default()).unwrap().count(), 0);
    }
}
