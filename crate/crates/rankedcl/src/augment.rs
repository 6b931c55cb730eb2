//! Two-crop stochastic augmentation pipeline.
//!
//! Each input crop yields two independently augmented views through the
//! chain crop -> flip -> color jitter -> maybe-grayscale -> normalize.
//! Cutout, blur, and sobel are deliberately absent. All randomness comes
//! from derived [`Rng`] streams keyed by (view, stage), so outputs are
//! bit-identical for identical (image, config, seed).

use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// RGB float image. Pixels are row-major, interleaved channels
/// (h * w * 3). Values live in [0,1] until normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "pixel buffer {} != {}x{}x3",
                pixels.len(),
                height,
                width
            )));
        }
        Ok(RasterImage { height, width, pixels })
    }

    pub fn constant(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            pixels.extend_from_slice(&rgb);
        }
        RasterImage { height, width, pixels }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.pixels[(y * self.width + x) * 3 + c] = v;
    }

    /// Flattened copy for feeding the encoder.
    pub fn to_vec(&self) -> Vec<f64> {
        self.pixels.clone()
    }
}

fn jitter_default() -> [f64; 3] {
    [0.4, 0.4, 0.4]
}

fn half() -> [f64; 3] {
    [0.5, 0.5, 0.5]
}

/// Augmentation parameters. Defaults follow the usual contrastive recipe
/// at desk scale; everything is overridable from the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub out_size: usize,
    pub crop_scale: (f64, f64),
    pub flip_prob: f64,
    /// brightness / contrast / saturation strengths
    pub jitter: [f64; 3],
    pub grayscale_prob: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            out_size: 32,
            crop_scale: (0.2, 1.0),
            flip_prob: 0.5,
            jitter: jitter_default(),
            grayscale_prob: 0.2,
            mean: half(),
            std: half(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Validation(format!("bad crop_scale ({lo}, {hi})")));
        }
        for (name, p) in [("flip_prob", self.flip_prob), ("grayscale_prob", self.grayscale_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Validation(format!("{name} {p} not in [0,1]")));
            }
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Validation("std must be positive".into()));
        }
        if self.out_size == 0 {
            return Err(Error::Validation("out_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-channel (x - mean) / std.
pub fn normalize(img: &RasterImage, mean: &[f64; 3], std: &[f64; 3]) -> Result<RasterImage> {
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Validation("std must be positive".into()));
    }
    let mut out = img.clone();
    for (i, p) in out.pixels.iter_mut().enumerate() {
        let c = i % 3;
        *p = (*p - mean[c]) / std[c];
    }
    Ok(out)
}

/// Bilinear resample with the half-pixel-center convention.
pub fn resize_bilinear(img: &RasterImage, out_h: usize, out_w: usize) -> RasterImage {
    let mut out = RasterImage::constant(out_h, out_w, [0.0; 3]);
    let scale_y = img.height as f64 / out_h as f64;
    let scale_x = img.width as f64 / out_w as f64;
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).max(0.0);
        let y0 = (sy.floor() as usize).min(img.height - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).max(0.0);
            let x0 = (sx.floor() as usize).min(img.width - 1);
            let x1 = (x0 + 1).min(img.width - 1);
            let fx = sx - x0 as f64;
            for c in 0..3 {
                let top = img.get(y0, x0, c) * (1.0 - fx) + img.get(y0, x1, c) * fx;
                let bot = img.get(y1, x0, c) * (1.0 - fx) + img.get(y1, x1, c) * fx;
                out.set(oy, ox, c, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

fn crop_region(img: &RasterImage, top: usize, left: usize, h: usize, w: usize) -> RasterImage {
    let mut out = RasterImage::constant(h, w, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.set(y, x, c, img.get(top + y, left + x, c));
            }
        }
    }
    out
}

/// Random area crop (aspect ratio in [3/4, 4/3], log-uniform) resized to
/// out_size x out_size. Falls back to a center crop after 10 failed
/// sampling attempts.
pub fn random_resized_crop(
    img: &RasterImage,
    scale_range: (f64, f64),
    out_size: usize,
    rng: &mut Rng,
) -> RasterImage {
    let area = (img.height * img.width) as f64;
    for _ in 0..10 {
        let target_area = area * rng.range_f64(scale_range.0, scale_range.1);
        let log_ratio = rng.range_f64((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
        let ratio = log_ratio.exp();
        let w = (target_area * ratio).sqrt().round() as usize;
        let h = (target_area / ratio).sqrt().round() as usize;
        if w >= 1 && h >= 1 && w <= img.width && h <= img.height {
            let top = if h == img.height { 0 } else { rng.range_usize(img.height - h + 1) };
            let left = if w == img.width { 0 } else { rng.range_usize(img.width - w + 1) };
            let cropped = crop_region(img, top, left, h, w);
            return resize_bilinear(&cropped, out_size, out_size);
        }
    }
    // center-crop fallback
    let side = img.height.min(img.width);
    let top = (img.height - side) / 2;
    let left = (img.width - side) / 2;
    let cropped = crop_region(img, top, left, side, side);
    resize_bilinear(&cropped, out_size, out_size)
}

/// Mirror across the vertical axis with probability p.
pub fn horizontal_flip(img: &RasterImage, p: f64, rng: &mut Rng) -> RasterImage {
    if rng.next_f64() >= p {
        return img.clone();
    }
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                out.set(y, x, c, img.get(y, img.width - 1 - x, c));
            }
        }
    }
    out
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn luma(img: &RasterImage, y: usize, x: usize) -> f64 {
    (0..3).map(|c| LUMA[c] * img.get(y, x, c)).sum()
}

/// Replace every pixel with its luma, replicated to all three channels.
pub fn to_grayscale(img: &RasterImage) -> RasterImage {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            let g = luma(img, y, x);
            for c in 0..3 {
                out.set(y, x, c, g);
            }
        }
    }
    out
}

fn clamp01(img: &mut RasterImage) {
    for p in img.pixels.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
}

/// Brightness, contrast, and saturation factors each sampled uniformly in
/// [1-s, 1+s]; output clamped to [0,1] after each stage.
pub fn color_jitter(img: &RasterImage, strengths: &[f64; 3], rng: &mut Rng) -> RasterImage {
    let mut out = img.clone();

    // brightness
    let b = rng.range_f64(1.0 - strengths[0], 1.0 + strengths[0]);
    for p in out.pixels.iter_mut() {
        *p *= b;
    }
    clamp01(&mut out);

    // contrast: blend with the mean luma of the image
    let c = rng.range_f64(1.0 - strengths[1], 1.0 + strengths[1]);
    let mean_gray = (0..out.height)
        .flat_map(|y| (0..out.width).map(move |x| (y, x)))
        .map(|(y, x)| luma(&out, y, x))
        .sum::<f64>()
        / (out.height * out.width) as f64;
    for p in out.pixels.iter_mut() {
        *p = mean_gray + (*p - mean_gray) * c;
    }
    clamp01(&mut out);

    // saturation: blend each pixel with its own luma
    let s = rng.range_f64(1.0 - strengths[2], 1.0 + strengths[2]);
    for y in 0..out.height {
        for x in 0..out.width {
            let g = luma(&out, y, x);
            for ch in 0..3 {
                out.set(y, x, ch, g + (out.get(y, x, ch) - g) * s);
            }
        }
    }
    clamp01(&mut out);
    out
}

/// Two independently augmented, normalized views of one input.
/// `rng` acts as a key; each (view, stage) pair gets its own derived stream.
pub fn two_crop(img: &RasterImage, cfg: &AugmentConfig, rng: &Rng) -> (RasterImage, RasterImage) {
    let view = |v: u64| -> RasterImage {
        let mut r_crop = rng.derive(&[v, 0]);
        let mut r_flip = rng.derive(&[v, 1]);
        let mut r_jit = rng.derive(&[v, 2]);
        let mut r_gray = rng.derive(&[v, 3]);
        let out = random_resized_crop(img, cfg.crop_scale, cfg.out_size, &mut r_crop);
        let out = horizontal_flip(&out, cfg.flip_prob, &mut r_flip);
        let out = color_jitter(&out, &cfg.jitter, &mut r_jit);
        let out = if r_gray.next_f64() < cfg.grayscale_prob {
            to_grayscale(&out)
        } else {
            out
        };
        normalize(&out, &cfg.mean, &cfg.std).expect("validated config")
    };
    (view(0), view(1))
}

/// Read a binary PPM (P6, 8-bit) fixture into floats in [0,1].
pub fn load_ppm(path: &Path) -> Result<RasterImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Validation("truncated PPM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    if magic != "P6" {
        return Err(Error::Validation(format!("not a P6 PPM: '{magic}'")));
    }
    let width: usize = token()?.parse().map_err(|_| Error::Validation("bad PPM width".into()))?;
    let height: usize =
        token()?.parse().map_err(|_| Error::Validation("bad PPM height".into()))?;
    let maxval: usize =
        token()?.parse().map_err(|_| Error::Validation("bad PPM maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Validation("only 8-bit PPM supported".into()));
    }
    pos += 1; // single whitespace after maxval
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::Validation("truncated PPM payload".into()));
    }
    let pixels = bytes[pos..pos + need].iter().map(|&b| b as f64 / 255.0).collect();
    RasterImage::new(height, width, pixels)
}

/// Write an image (values clamped to [0,1]) as binary PPM.
pub fn save_ppm(img: &RasterImage, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> RasterImage {
        let mut img = RasterImage::constant(h, w, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                img.set(y, x, 0, x as f64 / (w - 1).max(1) as f64);
                img.set(y, x, 1, y as f64 / (h - 1).max(1) as f64);
                img.set(y, x, 2, 0.5);
            }
        }
        img
    }

    #[test]
    fn normalize_cases() {
        let img = gradient_image(4, 4);
        let id = normalize(&img, &[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(id, img);

        let flat = RasterImage::constant(2, 2, [0.5, 0.5, 0.5]);
        let out = normalize(&flat, &[0.5; 3], &[0.25; 3]).unwrap();
        assert!(out.pixels.iter().all(|&p| p == 0.0));

        let one = RasterImage::constant(1, 1, [0.8, 0.8, 0.8]);
        let out = normalize(&one, &[0.5; 3], &[0.25; 3]).unwrap();
        assert!((out.get(0, 0, 0) - 1.2).abs() < 1e-12);

        assert!(normalize(&flat, &[0.5; 3], &[0.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn crop_degenerate_scale_is_identity() {
        let img = gradient_image(8, 8);
        let mut rng = Rng::new(1);
        let out = random_resized_crop(&img, (1.0, 1.0), 8, &mut rng);
        for (a, b) in out.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn crop_constant_image_stays_constant() {
        let img = RasterImage::constant(10, 6, [0.3, 0.6, 0.9]);
        let mut rng = Rng::new(2);
        let out = random_resized_crop(&img, (0.2, 1.0), 5, &mut rng);
        for y in 0..5 {
            for x in 0..5 {
                // interpolation weights sum to 1, so only rounding noise
                assert!((out.get(y, x, 0) - 0.3).abs() < 1e-12);
                assert!((out.get(y, x, 1) - 0.6).abs() < 1e-12);
                assert!((out.get(y, x, 2) - 0.9).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bilinear_checkerboard_upscale() {
        // 2x2 checkerboard (single channel replicated) -> 4x4
        // half-pixel centers: out pixel centers map to src coords
        // sx,sy in {0 (clamped from -0.25), 0.25, 0.75, 1 (clamped from 1.25)}
        let mut img = RasterImage::constant(2, 2, [0.0; 3]);
        for c in 0..3 {
            img.set(0, 0, c, 1.0);
            img.set(1, 1, c, 1.0);
        }
        let out = resize_bilinear(&img, 4, 4);
        // reference kernel computed by hand on the clamped grid
        let coords = [0.0f64, 0.25, 0.75, 1.0];
        let src = |y: f64, x: f64| -> f64 {
            let y0 = y.floor().min(1.0) as usize;
            let y1 = (y0 + 1).min(1);
            let x0 = x.floor().min(1.0) as usize;
            let x1 = (x0 + 1).min(1);
            let fy = y - y0 as f64;
            let fx = x - x0 as f64;
            let v = |yy: usize, xx: usize| -> f64 { if yy == xx { 1.0 } else { 0.0 } };
            (v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx) * (1.0 - fy)
                + (v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx) * fy
        };
        for (oy, &sy) in coords.iter().enumerate() {
            for (ox, &sx) in coords.iter().enumerate() {
                let want = src(sy, sx);
                assert!(
                    (out.get(oy, ox, 0) - want).abs() < 1e-12,
                    "({oy},{ox}): {} vs {want}",
                    out.get(oy, ox, 0)
                );
            }
        }
    }

    #[test]
    fn flip_involution_and_identity() {
        let img = gradient_image(4, 6);
        let mut rng = Rng::new(3);
        let once = horizontal_flip(&img, 1.0, &mut rng);
        let twice = horizontal_flip(&once, 1.0, &mut rng);
        assert_eq!(twice, img);
        let same = horizontal_flip(&img, 0.0, &mut rng);
        assert_eq!(same, img);
    }

    #[test]
    fn flip_swaps_halves() {
        let mut img = RasterImage::constant(2, 4, [0.0; 3]);
        for y in 0..2 {
            for x in 2..4 {
                for c in 0..3 {
                    img.set(y, x, c, 1.0);
                }
            }
        }
        let mut rng = Rng::new(4);
        let out = horizontal_flip(&img, 1.0, &mut rng);
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert_eq!(out.get(0, 3, 0), 0.0);
    }

    #[test]
    fn jitter_zero_strength_is_identity() {
        let img = gradient_image(5, 5);
        let mut rng = Rng::new(5);
        let out = color_jitter(&img, &[0.0; 3], &mut rng);
        for (a, b) in out.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grayscale_cases() {
        let gray = RasterImage::constant(3, 3, [0.4, 0.4, 0.4]);
        let out = to_grayscale(&gray);
        for (a, b) in out.pixels.iter().zip(&gray.pixels) {
            assert!((a - b).abs() < 1e-9);
        }
        let red = RasterImage::constant(1, 1, [1.0, 0.0, 0.0]);
        let out = to_grayscale(&red);
        for c in 0..3 {
            assert!((out.get(0, 0, c) - 0.299).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_stays_in_unit_interval() {
        let img = gradient_image(6, 6);
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let out = color_jitter(&img, &[0.4, 0.4, 0.4], &mut rng);
            assert!(out.pixels.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn two_crop_deterministic_replay() {
        let img = gradient_image(16, 16);
        let cfg = AugmentConfig::default();
        let rng = Rng::new(42);
        let (a1, b1) = two_crop(&img, &cfg, &rng);
        let (a2, b2) = two_crop(&img, &cfg, &rng);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(a1.height, cfg.out_size);
        assert_eq!(a1.width, cfg.out_size);
    }

    #[test]
    fn two_crop_degenerate_params_yield_resized_input() {
        let img = gradient_image(8, 8);
        let cfg = AugmentConfig {
            out_size: 8,
            crop_scale: (1.0, 1.0),
            flip_prob: 0.0,
            jitter: [0.0; 3],
            grayscale_prob: 0.0,
            ..AugmentConfig::default()
        };
        let rng = Rng::new(1);
        let (a, b) = two_crop(&img, &cfg, &rng);
        let want = normalize(&img, &cfg.mean, &cfg.std).unwrap();
        for (x, y) in a.pixels.iter().zip(&want.pixels) {
            assert!((x - y).abs() < 1e-6);
        }
        for (x, y) in b.pixels.iter().zip(&want.pixels) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn two_crop_distinct_seeds_differ() {
        let img = gradient_image(16, 16);
        let cfg = AugmentConfig::default();
        let (a1, _) = two_crop(&img, &cfg, &Rng::new(1));
        let (a2, _) = two_crop(&img, &cfg, &Rng::new(2));
        assert_ne!(a1, a2);
    }

    #[test]
    fn ppm_round_trip() {
        let img = gradient_image(5, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.ppm");
        save_ppm(&img, &path).unwrap();
        let back = load_ppm(&path).unwrap();
        assert_eq!(back.height, 5);
        assert_eq!(back.width, 7);
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AugmentConfig::default();
        cfg.crop_scale = (0.0, 1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.flip_prob = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.std = [0.0, 0.5, 0.5];
        assert!(cfg.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
