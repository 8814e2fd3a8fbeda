//! Image files, bicubic resampling, and training patch extraction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

/// RGB image with values in [0, 255], stored row-major as H x W x 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("image must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 255]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// Builds an image from `f(y, x) -> [r, g, b]`, clipping to [0, 255].
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(y, x).map(|v| v.clamp(0.0, 255.0)));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let row = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Self::new(height, width, data)
    }

    /// Rounds every value half-up to an integer.
    pub fn quantized(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| quantize(v)).collect(),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v) as u8).collect()
    }
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 255.0) + 0.5).floor().min(255.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(Self::Png),
            Some("ppm") => Ok(Self::Ppm),
            other => Err(Error::Format {
                format: "image",
                detail: format!("unsupported extension {:?} for {}", other.unwrap_or(""), path.display()),
            }),
        }
    }
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Reads a PNG or binary PPM (P6) file, detected from its leading bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else {
        Err(Error::Format {
            format: "image",
            detail: format!("{} is neither PNG nor binary PPM (P6)", path.display()),
        })
    }
}

/// Writes PNG or PPM depending on the file extension.
pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ImageFormat::Png => encode_png(&mut out, img)?,
        ImageFormat::Ppm => {
            write!(out, "P6\n{} {}\n255\n", img.width, img.height).map_err(|e| Error::io(path, e))?;
            out.write_all(&img.to_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Format {
        format: "PNG",
        detail: e.to_string(),
    }
}

fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err("image dimensions overflow"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (h, w) = (info.height as usize, info.width as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err("unexpanded palette image")),
    };
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            if channels < 3 {
                data.extend([px[0] as f32; 3]);
            } else {
                data.extend(px[..3].iter().map(|&v| v as f32));
            }
        }
    }
    Image::new(h, w, data)
}

fn encode_png<W: Write>(out: W, img: &Image) -> Result<()> {
    let mut enc = png::Encoder::new(out, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&img.to_bytes()).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

fn ppm_err(detail: impl Into<String>) -> Error {
    Error::Format {
        format: "PPM",
        detail: detail.into(),
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    // Header: magic, width, height, maxval, separated by whitespace and comments.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ppm_err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ppm_err("malformed header field"))?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(ppm_err(format!("unsupported maxval {maxval}, expected 255")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ppm_err("missing separator after header"));
    }
    pos += 1;
    let need = w * h * 3;
    let payload = bytes
        .get(pos..pos + need)
        .ok_or_else(|| ppm_err(format!("truncated payload: expected {need} bytes, found {}", bytes.len() - pos)))?;
    Image::new(h, w, payload.iter().map(|&v| v as f32).collect())
}

pub use crate::tensor::resample::cubic_kernel;
use crate::tensor::resample::{clamp_index, cubic_taps as taps};

/// Separable bicubic resampling with clamped borders, clipped to [0, 255].
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!("output size must be positive, got {out_h}x{out_w}")));
    }
    let (h, w) = (img.height, img.width);
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    // Each output is written as reference + weighted deviations so that
    // constant neighborhoods reproduce the constant exactly.
    let tx = taps(w, out_w);
    let mut horiz = vec![0.0f64; h * out_w * 3];
    for y in 0..h {
        for (ox, t) in tx.iter().enumerate() {
            for c in 0..3 {
                let reference = src[(y * w + t.nearest) * 3 + c];
                let mut acc = 0.0;
                for (k, wt) in t.weights.iter().enumerate() {
                    let ix = clamp_index(t.start + k as isize, w);
                    acc += wt * (src[(y * w + ix) * 3 + c] - reference);
                }
                horiz[(y * out_w + ox) * 3 + c] = reference + acc;
            }
        }
    }
    let ty = taps(h, out_h);
    let mut data = vec![0.0f32; out_h * out_w * 3];
    for (oy, t) in ty.iter().enumerate() {
        for ox in 0..out_w {
            for c in 0..3 {
                let reference = horiz[(t.nearest * out_w + ox) * 3 + c];
                let mut acc = 0.0;
                for (k, wt) in t.weights.iter().enumerate() {
                    let iy = clamp_index(t.start + k as isize, h);
                    acc += wt * (horiz[(iy * out_w + ox) * 3 + c] - reference);
                }
                data[(oy * out_w + ox) * 3 + c] = (reference + acc).clamp(0.0, 255.0) as f32;
            }
        }
    }
    Image::new(out_h, out_w, data)
}

/// Bicubic degradation by an integer factor.
pub fn downscale(img: &Image, scale: usize) -> Result<Image> {
    if scale == 0 || img.height < scale || img.width < scale {
        return Err(Error::InvalidArgument(format!(
            "cannot downscale {}x{} by {scale}",
            img.height, img.width
        )));
    }
    bicubic_resize(img, img.height / scale, img.width / scale)
}

/// Aligned low/high resolution training crop.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub lr: Image,
    pub hr: Image,
    pub scale: usize,
}

impl PatchPair {
    /// Whole-image pair: the HR image cropped to a multiple of `scale` and its downscale.
    pub fn from_image(hr: &Image, scale: usize) -> Result<Self> {
        if scale == 0 {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        let hr = hr.crop(0, 0, hr.height / scale * scale, hr.width / scale * scale)?;
        Ok(Self {
            lr: downscale(&hr, scale)?,
            hr,
            scale,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    pub pairs: Vec<PatchPair>,
    /// Indices of input images too small for one HR crop.
    pub skipped: Vec<usize>,
}

/// Draws `count` random aligned crops; LR sides are `patch_lr`, HR sides `patch_lr * scale`.
pub fn sample_patch_pairs(hr_images: &[Image], scale: usize, patch_lr: usize, count: usize, seed: u64) -> Result<PatchSample> {
    if scale == 0 || patch_lr == 0 {
        return Err(Error::InvalidArgument("scale and patch size must be positive".into()));
    }
    let side = patch_lr * scale;
    let (usable, skipped): (Vec<usize>, Vec<usize>) =
        (0..hr_images.len()).partition(|&i| hr_images[i].height >= side && hr_images[i].width >= side);
    if usable.is_empty() {
        return Err(Error::Data(format!(
            "no image is at least {side}x{side} ({} candidates)",
            hr_images.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let img = &hr_images[usable[rng.gen_range(0..usable.len())]];
        let top = rng.gen_range(0..=img.height - side);
        let left = rng.gen_range(0..=img.width - side);
        let hr = img.crop(top, left, side, side)?;
        let lr = bicubic_resize(&hr, patch_lr, patch_lr)?;
        pairs.push(PatchPair { lr, hr, scale });
    }
    Ok(PatchSample { pairs, skipped })
}

/// [1,3,H,W] tensor with values scaled to [0, 1].
pub fn to_tensor(img: &Image) -> Tensor<f32> {
    batch_to_tensor(std::slice::from_ref(img)).expect("single image batch")
}

/// Stacks equally sized images into [N,3,H,W].
pub fn batch_to_tensor(images: &[Image]) -> Result<Tensor<f32>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::InvalidArgument(format!(
                "batch mixes {h}x{w} and {}x{} images",
                img.height, img.width
            )));
        }
        for c in 0..3 {
            data.extend((0..h * w).map(|i| img.data[i * 3 + c] / 255.0));
        }
    }
    Tensor::new(&[images.len(), 3, h, w], data)
}

/// Extracts image `index` of an [N,3,H,W] tensor, clipping to [0, 1] and
/// quantizing half-up to 8-bit levels.
pub fn from_tensor(t: &Tensor<f32>, index: usize) -> Result<Image> {
    let [n, c, h, w] = t.dims4("from_tensor")?;
    if c != 3 || index >= n {
        return Err(Error::shape(
            "from_tensor",
            format!("expected image {index} of [N,3,H,W], got {:?}", t.shape()),
        ));
    }
    let src = &t.data()[index * 3 * h * w..(index + 1) * 3 * h * w];
    let mut data = vec![0.0f32; h * w * 3];
    for ch in 0..3 {
        for i in 0..h * w {
            let v = src[ch * h * w + i];
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            data[i * 3 + ch] = quantize(v * 255.0);
        }
    }
    Image::new(h, w, data)
}

/// Sorted image files (PNG/PPM) directly inside `dir`.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && ImageFormat::from_path(&path).is_ok() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
