//! Full-reference quality metrics computed in RGB space.

use crate::error::{Error, Result};
use crate::imageio::{list_images, load_image, Image};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const MAX_VALUE: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_dims(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; infinite for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_dims("psnr", a, b)?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let mse = sse / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (MAX_VALUE * MAX_VALUE / mse).log10())
}

/// Normalized 1-D Gaussian window; the 2-D window is its outer product.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable weighted sum over every fully contained window.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity, computed per channel over the valid region
/// and averaged across channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(
            "ssim",
            format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let c1 = (SSIM_K1 * MAX_VALUE).powi(2);
    let c2 = (SSIM_K2 * MAX_VALUE).powi(2);
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = (0..h * w).map(|i| a.data()[i * 3 + c] as f64).collect();
        let y: Vec<f64> = (0..h * w).map(|i| b.data()[i * 3 + c] as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_x = filter_valid(&x, h, w, &k);
        let mu_y = filter_valid(&y, h, w, &k);
        let e_xx = filter_valid(&prod(&x, &x), h, w, &k);
        let e_yy = filter_valid(&prod(&y, &y), h, w, &k);
        let e_xy = filter_valid(&prod(&x, &y), h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += sum / mu_x.len() as f64;
    }
    Ok(total / 3.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// Mean over images with finite PSNR; infinite when every image is exact.
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_image: Vec<ImageScore>,
    /// Images whose PSNR is infinite and therefore left out of `psnr_db`.
    pub infinite_psnr: usize,
}

impl MetricReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Data("no images to evaluate".into()));
        }
        let finite: Vec<f64> = per_image.iter().map(|s| s.psnr).filter(|p| p.is_finite()).collect();
        let psnr_db = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / per_image.len() as f64;
        Ok(Self {
            psnr_db,
            ssim,
            infinite_psnr: per_image.len() - finite.len(),
            per_image,
        })
    }

    pub fn table(&self) -> String {
        let width = self
            .per_image
            .iter()
            .map(|s| s.name.len())
            .chain(["name".len(), "mean".len()])
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>8}", "name", "psnr_db", "ssim");
        for s in &self.per_image {
            let _ = writeln!(out, "{:<width$}  {:>10}  {:>8.5}", s.name, fmt_psnr(s.psnr), s.ssim);
        }
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>8.5}", "mean", fmt_psnr(self.psnr_db), self.ssim);
        if self.infinite_psnr > 0 {
            let _ = writeln!(
                out,
                "note: {} of {} images are identical to the reference (psnr inf), excluded from the psnr mean",
                self.infinite_psnr,
                self.per_image.len()
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr_db,ssim\n");
        for s in &self.per_image {
            let _ = writeln!(out, "{},{},{:.8}", s.name, fmt_psnr(s.psnr), s.ssim);
        }
        out
    }
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// Scores every image in `sr_dir` against the same-named (by stem) image in `hr_dir`.
pub fn evaluate_dir(sr_dir: impl AsRef<Path>, hr_dir: impl AsRef<Path>) -> Result<MetricReport> {
    let by_stem = |dir: &Path| -> Result<BTreeMap<String, std::path::PathBuf>> {
        Ok(list_images(dir)?
            .into_iter()
            .map(|p| (p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), p))
            .collect())
    };
    let sr = by_stem(sr_dir.as_ref())?;
    let hr = by_stem(hr_dir.as_ref())?;
    let missing: Vec<String> = sr
        .keys()
        .filter(|k| !hr.contains_key(*k))
        .map(|k| format!("{k} (no reference)"))
        .chain(hr.keys().filter(|k| !sr.contains_key(*k)).map(|k| format!("{k} (no output)")))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!("unpaired images: {}", missing.join(", "))));
    }
    let mut scores = Vec::with_capacity(sr.len());
    for (name, sr_path) in &sr {
        let a = load_image(sr_path)?;
        let b = load_image(&hr[name])?;
        scores.push(ImageScore {
            name: name.clone(),
            psnr: psnr(&a, &b)?,
            ssim: ssim(&a, &b)?,
        });
    }
    MetricReport::from_scores(scores)
}
