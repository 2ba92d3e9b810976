//! Samples, the synthetic star-blob dataset, directory ingestion, splits
//! and geometric augmentation.
//!
//! On disk a dataset is `<root>/images/*.png` (RGB) and `<root>/masks/*.png`
//! (grayscale) matched by file stem. Generated sets also carry `spec.json`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "spec.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(3,H,W)` in `[0,1]`.
    pub image: Tensor<f32>,
    /// `(1,H,W)` with values in `{0,1}`.
    pub mask: Tensor<f32>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let id = id.into();
        let (c, h, w) = image.chw()?;
        let (mc, mh, mw) = mask.chw()?;
        if c != 3 || mc != 1 || (h, w) != (mh, mw) {
            return Err(Error::Data(format!(
                "sample `{id}`: image {:?} and mask {:?} disagree",
                image.shape(),
                mask.shape()
            )));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("sample `{id}`: mask is not binary")));
        }
        Ok(Sample { id, image, mask })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.mask.shape()[1], self.mask.shape()[2])
    }
}

/// Parameters of the synthetic dataset. Every field is a closed range or a
/// scalar; the same spec always yields the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub blobs: (usize, usize),
    /// Base radius as a fraction of the image side.
    pub radius: (f64, f64),
    /// Per-harmonic relative amplitude of the boundary wave.
    pub amplitude: (f64, f64),
    /// Integer angular frequency of each harmonic.
    pub frequency: (u32, u32),
    pub harmonics: usize,
    /// Require blobs not to touch (each blob is its own component).
    pub disjoint: bool,
    /// Foreground/background intensity difference.
    pub contrast: (f64, f64),
    /// Standard deviation of the smoothed texture noise.
    pub noise: f64,
    /// Gaussian sigma (pixels) applied to the noise field.
    pub noise_sigma: f64,
    /// Gaussian sigma (pixels) softening the intensity edge.
    pub edge_sigma: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            count: 8,
            size: 128,
            blobs: (1, 4),
            radius: (0.10, 0.20),
            amplitude: (0.05, 0.15),
            frequency: (3, 9),
            harmonics: 2,
            disjoint: false,
            contrast: (0.25, 0.45),
            noise: 0.06,
            noise_sigma: 1.0,
            edge_sigma: 0.8,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.size < 64 || !self.size.is_multiple_of(32) {
            return bad(format!("size {} must be a multiple of 32 and at least 64", self.size));
        }
        if self.blobs.0 == 0 || self.blobs.0 > self.blobs.1 {
            return bad(format!("blob range {:?} is empty or starts at zero", self.blobs));
        }
        let ordered = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && 0.0 <= r.0 && r.0 <= r.1;
        if !ordered(self.radius) || self.radius.0 == 0.0 || self.radius.1 >= 0.5 {
            return bad(format!("radius range {:?} must lie in (0, 0.5)", self.radius));
        }
        if !ordered(self.amplitude) || self.amplitude.1 * self.harmonics as f64 >= 0.9 {
            return bad(format!(
                "amplitude range {:?} with {} harmonics would fold the boundary",
                self.amplitude, self.harmonics
            ));
        }
        if self.frequency.0 == 0 || self.frequency.0 > self.frequency.1 {
            return bad(format!("frequency range {:?}", self.frequency));
        }
        if !ordered(self.contrast) || self.contrast.1 > 1.0 {
            return bad(format!("contrast range {:?}", self.contrast));
        }
        if !(self.noise >= 0.0 && self.noise_sigma >= 0.0 && self.edge_sigma >= 0.0) {
            return bad("noise and blur settings must be non-negative".into());
        }
        Ok(())
    }
}

/// Star-convex shape with boundary `r(θ) = r0·(1 + Σ a sin(fθ + φ))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub r0: f64,
    /// `(a, f, φ)` per harmonic.
    pub waves: Vec<(f64, f64, f64)>,
}

impl Blob {
    pub fn radius_at(&self, theta: f64) -> f64 {
        self.r0 * (1.0 + self.waves.iter().map(|&(a, f, p)| a * (f * theta + p).sin()).sum::<f64>())
    }

    pub fn max_radius(&self) -> f64 {
        self.r0 * (1.0 + self.waves.iter().map(|w| w.0.abs()).sum::<f64>())
    }

    /// Whether the point `(x, y)` (pixel units) lies inside the boundary.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let d = (dx * dx + dy * dy).sqrt();
        d <= self.radius_at(dy.atan2(dx))
    }
}

/// Binary `(1,size,size)` union of blobs, sampled at pixel centres.
pub fn render_mask(blobs: &[Blob], size: usize) -> Tensor<f32> {
    Tensor::from_fn(&[1, size, size], |i| {
        let (y, x) = ((i / size) as f64 + 0.5, (i % size) as f64 + 0.5);
        if blobs.iter().any(|b| b.contains(x, y)) {
            1.0
        } else {
            0.0
        }
    })
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..=r.1)
    }
}

fn draw_blobs(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Blob>> {
    let n = rng.gen_range(spec.blobs.0..=spec.blobs.1);
    let side = spec.size as f64;
    let mut blobs: Vec<Blob> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = None;
        for _attempt in 0..1000 {
            let r0 = uniform(rng, spec.radius) * side;
            let waves = (0..spec.harmonics)
                .map(|_| {
                    let a = uniform(rng, spec.amplitude);
                    let f = rng.gen_range(spec.frequency.0..=spec.frequency.1) as f64;
                    (a, f, rng.gen_range(0.0..2.0 * PI))
                })
                .collect();
            let mut blob = Blob { cx: 0.0, cy: 0.0, r0, waves };
            let reach = blob.max_radius().min(side / 2.0 - 1.0);
            blob.cx = rng.gen_range(reach..=side - reach);
            blob.cy = rng.gen_range(reach..=side - reach);
            let clear = !spec.disjoint
                || blobs.iter().all(|o| {
                    let d = ((o.cx - blob.cx).powi(2) + (o.cy - blob.cy).powi(2)).sqrt();
                    d > o.max_radius() + blob.max_radius() + 2.0
                });
            if clear {
                placed = Some(blob);
                break;
            }
        }
        blobs.push(placed.ok_or_else(|| Error::Data("could not place disjoint blobs; widen the image or shrink the radius".into()))?);
    }
    Ok(blobs)
}

/// Separable Gaussian blur of one `h×w` plane with clamped borders.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            tmp[i * w + j] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * plane[i * w + clamp(j as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * tmp[clamp(i as isize + t as isize - r, h) * w + j])
                .sum();
        }
    }
    out
}

fn synth_one(spec: &SynthSpec, index: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let n = spec.size;
    let blobs = draw_blobs(spec, &mut rng)?;
    let mask = render_mask(&blobs, n);

    let soft: Vec<f64> = mask.data().iter().map(|&v| v as f64).collect();
    let soft = gaussian_blur(&soft, n, n, spec.edge_sigma);
    let contrast = uniform(&mut rng, spec.contrast);
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut data = Vec::with_capacity(3 * n * n);
    for _ in 0..3 {
        let bg: f64 = rng.gen_range(0.25..0.75);
        let fg = (bg + sign * contrast * rng.gen_range(0.8..1.2)).clamp(0.0, 1.0);
        let raw: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let noise = gaussian_blur(&raw, n, n, spec.noise_sigma);
        // Blurring shrinks the variance; rescale so `noise` is the final std.
        let std = (noise.iter().map(|v| v * v).sum::<f64>() / noise.len() as f64).sqrt().max(1e-12);
        for (s, z) in soft.iter().zip(&noise) {
            let v = bg + (fg - bg) * s + spec.noise * z / std;
            data.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let image = Tensor::new(vec![3, n, n], data)?;
    Sample::new(format!("synth_{index:04}"), image, mask)
}

/// Generates `spec.count` samples; sample `i` depends only on
/// `(spec, i)`, so generation parallelizes without changing output.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    (0..spec.count).into_par_iter().map(|i| synth_one(spec, i)).collect()
}

pub fn image_to_png(image: &Tensor<f32>) -> Result<RgbImage> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::Data(format!("expected 3 channels, got {c}")));
    }
    let d = image.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| to_u8(d[ch * h * w + y as usize * w + x as usize]);
        Rgb([at(0), at(1), at(2)])
    }))
}

/// Single-channel map in `[0,1]` to an 8-bit grayscale image.
pub fn plane_to_png(plane: &Tensor<f32>) -> Result<GrayImage> {
    let (c, h, w) = plane.chw()?;
    if c != 1 {
        return Err(Error::Data(format!("expected 1 channel, got {c}")));
    }
    let d = plane.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        Luma([to_u8(d[y as usize * w + x as usize])])
    }))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the directory layout plus an optional manifest.
pub fn write_dataset(root: &Path, samples: &[Sample], spec: Option<&SynthSpec>) -> Result<()> {
    let (img_dir, mask_dir) = (root.join("images"), root.join("masks"));
    fs::create_dir_all(&img_dir)?;
    fs::create_dir_all(&mask_dir)?;
    for s in samples {
        image_to_png(&s.image)?.save(img_dir.join(format!("{}.png", s.id)))?;
        plane_to_png(&s.mask)?.save(mask_dir.join(format!("{}.png", s.id)))?;
    }
    if let Some(spec) = spec {
        fs::write(root.join(MANIFEST), serde_json::to_string_pretty(spec)?)?;
    }
    Ok(())
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    for entry in entries {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if !is_png {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))
}

fn mask_luma(img: DynamicImage, path: &Path) -> Result<GrayImage> {
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => Ok(img.to_luma8()),
        other => {
            let rgb = other.to_rgb8();
            if rgb.pixels().all(|p| p[0] == p[1] && p[1] == p[2]) {
                Ok(DynamicImage::ImageRgb8(rgb).to_luma8())
            } else {
                Err(Error::Data(format!("mask {} is not grayscale", path.display())))
            }
        }
    }
}

/// Loads matched image/mask pairs. Masks are thresholded at 128; both are
/// resized to `size×size` when given (bilinear image, nearest mask).
pub fn load_dir(images: &Path, masks: &Path, size: Option<usize>) -> Result<Vec<Sample>> {
    let imgs = png_stems(images)?;
    let msks = png_stems(masks)?;
    for (stem, _) in &msks {
        if !imgs.iter().any(|(s, _)| s == stem) {
            return Err(Error::Data(format!("mask `{stem}` has no matching image")));
        }
    }
    let pairs = imgs
        .into_iter()
        .map(|(stem, ip)| match msks.iter().find(|(s, _)| *s == stem) {
            Some((_, mp)) => Ok((stem, ip, mp.clone())),
            None => Err(Error::Data(format!("image `{stem}` has no matching mask"))),
        })
        .collect::<Result<Vec<_>>>()?;
    pairs
        .into_par_iter()
        .map(|(stem, ip, mp)| {
            let mut rgb = open(&ip)?.to_rgb8();
            let mut luma = mask_luma(open(&mp)?, &mp)?;
            if rgb.dimensions() != luma.dimensions() {
                return Err(Error::Data(format!(
                    "`{stem}`: image {:?} and mask {:?} sizes differ",
                    rgb.dimensions(),
                    luma.dimensions()
                )));
            }
            if let Some(n) = size {
                let n = n as u32;
                if rgb.dimensions() != (n, n) {
                    rgb = imageops::resize(&rgb, n, n, FilterType::Triangle);
                    luma = imageops::resize(&luma, n, n, FilterType::Nearest);
                }
            }
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let image = Tensor::from_fn(&[3, h, w], |i| {
                let (c, p) = (i / (h * w), i % (h * w));
                rgb.get_pixel((p % w) as u32, (p / w) as u32)[c] as f32 / 255.0
            });
            let mask = Tensor::from_fn(&[1, h, w], |p| {
                if luma.get_pixel((p % w) as u32, (p / w) as u32)[0] >= 128 {
                    1.0
                } else {
                    0.0
                }
            });
            Sample::new(stem, image, mask)
        })
        .collect()
}

/// `<root>/images` + `<root>/masks`.
pub fn load_root(root: &Path, size: Option<usize>) -> Result<Vec<Sample>> {
    load_dir(&root.join("images"), &root.join("masks"), size)
}

/// Seeded shuffle then split by `ratios`; validation and test sizes are
/// rounded to nearest and training takes the remainder.
pub fn split<S: Clone>(samples: &[S], ratios: (u32, u32, u32), seed: u64) -> (Vec<S>, Vec<S>, Vec<S>) {
    let n = samples.len();
    let total = (ratios.0 + ratios.1 + ratios.2).max(1) as f64;
    let n_val = ((n as f64 * ratios.1 as f64 / total).round() as usize).min(n);
    let n_test = ((n as f64 * ratios.2 as f64 / total).round() as usize).min(n - n_val);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let n_train = n - n_val - n_test;
    (
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub rotation_deg: f64,
    /// Maximum shift as a fraction of the side.
    pub translate: f64,
    pub scale: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_p: 0.5,
            rotation_deg: 15.0,
            translate: 0.05,
            scale: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip_p: 0.0,
            rotation_deg: 0.0,
            translate: 0.0,
            scale: (1.0, 1.0),
        }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        hflip: false,
        vflip: false,
        angle_deg: 0.0,
        tx: 0.0,
        ty: 0.0,
        scale: 1.0,
    };

    pub fn draw(cfg: &AugmentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sym = |rng: &mut ChaCha8Rng, m: f64| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        AugmentParams {
            hflip: rng.gen_bool(cfg.flip_p.clamp(0.0, 1.0)),
            vflip: rng.gen_bool(cfg.flip_p.clamp(0.0, 1.0)),
            angle_deg: sym(&mut rng, cfg.rotation_deg),
            tx: sym(&mut rng, cfg.translate),
            ty: sym(&mut rng, cfg.translate),
            scale: uniform(&mut rng, cfg.scale),
        }
    }

    pub fn is_affine_identity(&self) -> bool {
        self.angle_deg == 0.0 && self.tx == 0.0 && self.ty == 0.0 && self.scale == 1.0
    }
}

fn flip_planes(t: &Tensor<f32>, horizontal: bool) -> Tensor<f32> {
    let (c, h, w) = t.chw().expect("sample tensors are (C,H,W)");
    let d = t.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let (sy, sx) = if horizontal { (y, w - 1 - x) } else { (h - 1 - y, x) };
        d[ch * h * w + sy * w + sx]
    })
}

pub fn hflip(s: &Sample) -> Sample {
    Sample {
        id: s.id.clone(),
        image: flip_planes(&s.image, true),
        mask: flip_planes(&s.mask, true),
    }
}

pub fn vflip(s: &Sample) -> Sample {
    Sample {
        id: s.id.clone(),
        image: flip_planes(&s.image, false),
        mask: flip_planes(&s.mask, false),
    }
}

/// Inverse-maps every output pixel centre through rotation about the
/// image centre, scaling and translation.
fn warp(s: &Sample, p: &AugmentParams) -> Sample {
    let (h, w) = s.size();
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (sin, cos) = p.angle_deg.to_radians().sin_cos();
    let (tx, ty) = (p.tx * w as f64, p.ty * h as f64);
    let source = |y: usize, x: usize| {
        let (u, v) = (x as f64 + 0.5 - cx - tx, y as f64 + 0.5 - cy - ty);
        let (u, v) = ((cos * u + sin * v) / p.scale, (-sin * u + cos * v) / p.scale);
        (v + cy - 0.5, u + cx - 0.5)
    };
    let img = s.image.data();
    let image = Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), (i / w) % h, i % w);
        let (sy, sx) = source(y, x);
        let (sy, sx) = (sy.clamp(0.0, (h - 1) as f64), sx.clamp(0.0, (w - 1) as f64));
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let at = |yy: usize, xx: usize| img[c * h * w + yy * w + xx] as f64;
        let top = at(y0, x0) + (at(y0, x1) - at(y0, x0)) * fx;
        let bottom = at(y1, x0) + (at(y1, x1) - at(y1, x0)) * fx;
        (top + (bottom - top) * fy) as f32
    });
    let m = s.mask.data();
    let mask = Tensor::from_fn(&[1, h, w], |i| {
        let (y, x) = (i / w, i % w);
        let (sy, sx) = source(y, x);
        let yy = sy.round().clamp(0.0, (h - 1) as f64) as usize;
        let xx = sx.round().clamp(0.0, (w - 1) as f64) as usize;
        if m[yy * w + xx] >= 0.5 {
            1.0
        } else {
            0.0
        }
    });
    Sample {
        id: s.id.clone(),
        image,
        mask,
    }
}

pub fn apply_augment(s: &Sample, p: &AugmentParams) -> Sample {
    let mut out = if p.hflip { hflip(s) } else { s.clone() };
    if p.vflip {
        out = vflip(&out);
    }
    if !p.is_affine_identity() {
        out = warp(&out, p);
    }
    out
}

pub fn augment(s: &Sample, cfg: &AugmentConfig, seed: u64) -> Sample {
    apply_augment(s, &AugmentParams::draw(cfg, seed))
}

/// Count of 4-neighbour foreground/background pixel edges, counting the
/// image border as background. A lattice estimate of boundary length.
pub fn boundary_edges(mask: &Tensor<f32>) -> usize {
    let (_, h, w) = mask.chw().expect("mask is (1,H,W)");
    let d = mask.data();
    let fg = |y: isize, x: isize| y >= 0 && x >= 0 && y < h as isize && x < w as isize && d[y as usize * w + x as usize] >= 0.5;
    let mut edges = 0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            if fg(y, x) {
                edges += [(0, 1), (0, -1), (1, 0), (-1, 0)]
                    .iter()
                    .filter(|(dy, dx)| !fg(y + dy, x + dx))
                    .count();
            }
        }
    }
    edges
}

pub fn foreground_area(mask: &Tensor<f32>) -> usize {
    mask.data().iter().filter(|&&v| v >= 0.5).count()
}
