//! Browser bindings for the image side of the library: Canny edges, bicubic
//! degradation and restoration, and PSNR/SSIM. Pixels cross the boundary as
//! RGBA bytes straight from a canvas `ImageData`.

use edgesr_core::canny::{canny, CannyParams};
use edgesr_core::harness::synth::synthetic_image;
use edgesr_core::imageio::{bicubic_resize, downscale, Image};
use edgesr_core::metrics::{psnr, ssim};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

pub type OpResult<T> = Result<T, String>;

fn from_rgba(rgba: &[u8], width: usize, height: usize) -> OpResult<Image> {
    if rgba.len() != width * height * 4 {
        return Err(format!("expected {} RGBA bytes for {width}x{height}, got {}", width * height * 4, rgba.len()));
    }
    let data = rgba.chunks_exact(4).flat_map(|p| [p[0] as f32, p[1] as f32, p[2] as f32]).collect();
    Image::new(height, width, data).map_err(|e| e.to_string())
}

fn to_rgba(img: &Image) -> Vec<u8> {
    img.quantized()
        .data()
        .chunks_exact(3)
        .flat_map(|p| [p[0] as u8, p[1] as u8, p[2] as u8, 255])
        .collect()
}

/// Plain-Rust versions of the exported functions, usable off the web.
pub mod ops {
    use super::*;

    pub fn scene(size: usize, seed: u64) -> OpResult<Vec<u8>> {
        let img = synthetic_image(size, size, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
        Ok(to_rgba(&img))
    }

    /// White-on-black edge map; thresholds are fractions of the largest gradient.
    pub fn edges(rgba: &[u8], width: usize, height: usize, sigma: f64, low: f64, high: f64) -> OpResult<Vec<u8>> {
        let params = CannyParams { sigma, low, high, ..CannyParams::default() };
        let map = canny(&from_rgba(rgba, width, height)?, &params).map_err(|e| e.to_string())?;
        Ok(to_rgba(&map.to_image()))
    }

    /// Downscales by `scale` and upscales back with bicubic; the result is
    /// cropped to a multiple of `scale`, as is the returned reference.
    pub fn degrade_restore(rgba: &[u8], width: usize, height: usize, scale: usize) -> OpResult<Restored> {
        let img = from_rgba(rgba, width, height)?;
        let (h, w) = (height / scale.max(1) * scale, width / scale.max(1) * scale);
        let reference = img.crop(0, 0, h, w).map_err(|e| e.to_string())?;
        let lr = downscale(&reference, scale).map_err(|e| e.to_string())?.quantized();
        let up = bicubic_resize(&lr, h, w).map_err(|e| e.to_string())?.quantized();
        Ok(Restored {
            width: w,
            height: h,
            lr_width: lr.width(),
            lr_height: lr.height(),
            lr: to_rgba(&lr),
            restored: to_rgba(&up),
            reference: to_rgba(&reference),
        })
    }

    /// `[psnr_db, ssim]`; PSNR is infinite for identical images.
    pub fn compare(a: &[u8], b: &[u8], width: usize, height: usize) -> OpResult<Vec<f64>> {
        let (a, b) = (from_rgba(a, width, height)?, from_rgba(b, width, height)?);
        let p = psnr(&a, &b).map_err(|e| e.to_string())?;
        let s = ssim(&a, &b).map_err(|e| e.to_string())?;
        Ok(vec![p, s])
    }
}

#[wasm_bindgen]
pub struct Restored {
    width: usize,
    height: usize,
    lr_width: usize,
    lr_height: usize,
    lr: Vec<u8>,
    restored: Vec<u8>,
    reference: Vec<u8>,
}

#[wasm_bindgen]
impl Restored {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }
    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }
    #[wasm_bindgen(getter)]
    pub fn lr_width(&self) -> usize {
        self.lr_width
    }
    #[wasm_bindgen(getter)]
    pub fn lr_height(&self) -> usize {
        self.lr_height
    }
    #[wasm_bindgen(getter)]
    pub fn lr(&self) -> Vec<u8> {
        self.lr.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn restored(&self) -> Vec<u8> {
        self.restored.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn reference(&self) -> Vec<u8> {
        self.reference.clone()
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen]
pub fn scene(size: usize, seed: u32) -> Result<Vec<u8>, JsError> {
    ops::scene(size, seed as u64).map_err(js)
}

#[wasm_bindgen]
pub fn edges(rgba: &[u8], width: usize, height: usize, sigma: f64, low: f64, high: f64) -> Result<Vec<u8>, JsError> {
    ops::edges(rgba, width, height, sigma, low, high).map_err(js)
}

#[wasm_bindgen]
pub fn degrade_restore(rgba: &[u8], width: usize, height: usize, scale: usize) -> Result<Restored, JsError> {
    ops::degrade_restore(rgba, width, height, scale).map_err(js)
}

#[wasm_bindgen]
pub fn compare(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<Vec<f64>, JsError> {
    ops::compare(a, b, width, height).map_err(js)
}
