//! Dataset handling: on-disk loading with a deterministic split, synthetic
//! small-target generation, and padding to the network's divisibility
//! contract.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Mask;

/// One grayscale image with its binary ground-truth mask.
#[derive(Debug, Clone)]
pub struct SegmentationSample {
    pub id: String,
    /// values in `[0, 1]`
    pub image: Array2<f64>,
    pub mask: Mask,
}

/// A sample padded to a size multiple, remembering the original size.
#[derive(Debug, Clone)]
pub struct PaddedSample {
    pub sample: SegmentationSample,
    pub orig_h: usize,
    pub orig_w: usize,
}

// ---------------------------------------------------------------------------
// on-disk loading
// ---------------------------------------------------------------------------

/// Load an `images/` + `masks/` dataset, shuffle deterministically and split
/// at `floor(n * split_ratio)`. Masks binarize at pixel value > 127.
pub fn load_dataset(
    root: &Path,
    split_ratio: f64,
    seed: u64,
) -> Result<(Vec<SegmentationSample>, Vec<SegmentationSample>)> {
    if !(0.0..=1.0).contains(&split_ratio) {
        return Err(Error::Argument(format!(
            "split_ratio must lie in [0, 1], got {split_ratio}"
        )));
    }
    let images_dir = root.join("images");
    let masks_dir = root.join("masks");
    if !images_dir.is_dir() {
        return Err(Error::Load(format!(
            "missing images directory: {}",
            images_dir.display()
        )));
    }
    if !masks_dir.is_dir() {
        return Err(Error::Load(format!(
            "missing masks directory: {}",
            masks_dir.display()
        )));
    }

    let mut names: Vec<String> = fs::read_dir(&images_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Load(format!(
            "no image files under {}",
            images_dir.display()
        )));
    }

    let mut samples = Vec::with_capacity(names.len());
    for name in &names {
        let mask_path = masks_dir.join(name);
        if !mask_path.is_file() {
            return Err(Error::Load(format!(
                "missing mask for image {name}: {}",
                mask_path.display()
            )));
        }
        let image = load_gray(&images_dir.join(name))?;
        let mask_gray = load_gray_u8(&mask_path)?;
        if image.dim() != mask_gray.dim() {
            return Err(Error::Load(format!(
                "image/mask size mismatch for {name}: {:?} vs {:?}",
                image.dim(),
                mask_gray.dim()
            )));
        }
        let mask = mask_gray.mapv(|v| u8::from(v > 127));
        samples.push(SegmentationSample {
            id: name.clone(),
            image,
            mask,
        });
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let (cut, _) = split_counts(samples.len(), split_ratio);

    let mut train = Vec::with_capacity(cut);
    let mut test = Vec::with_capacity(samples.len() - cut);
    let mut indexed: Vec<Option<SegmentationSample>> = samples.into_iter().map(Some).collect();
    for (pos, &i) in order.iter().enumerate() {
        let s = indexed[i].take().unwrap();
        if pos < cut {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    Ok((train, test))
}

/// Train/test sizes under the floor split rule.
pub fn split_counts(n: usize, split_ratio: f64) -> (usize, usize) {
    let cut = (n as f64 * split_ratio).floor() as usize;
    let cut = cut.min(n);
    (cut, n - cut)
}

fn load_gray_u8(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32).0[0]
    }))
}

fn load_gray(path: &Path) -> Result<Array2<f64>> {
    Ok(load_gray_u8(path)?.mapv(|v| v as f64 / 255.0))
}

/// Write `train.txt` / `test.txt`, one sample id per line.
pub fn write_split_lists(
    dir: &Path,
    train: &[SegmentationSample],
    test: &[SegmentationSample],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let lines = |set: &[SegmentationSample]| {
        set.iter()
            .map(|s| s.id.as_str())
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    };
    fs::write(dir.join("train.txt"), lines(train))?;
    fs::write(dir.join("test.txt"), lines(test))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat,
    SmoothedNoise,
    Gradient,
}

/// Configuration of the synthetic small-target generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub targets_min: usize,
    pub targets_max: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub peak_min: f64,
    pub peak_max: f64,
    pub background: Background,
    pub background_level: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_images: 20,
            height: 64,
            width: 64,
            targets_min: 1,
            targets_max: 2,
            sigma_min: 0.7,
            sigma_max: 0.85,
            peak_min: 0.3,
            peak_max: 0.45,
            background: Background::SmoothedNoise,
            background_level: 0.25,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// The seeded desk-scale overfit dataset: single bright-but-low-contrast
    /// targets on a flat background with mild pixel noise. Shared features
    /// suffice to fit it, which keeps short training runs meaningful.
    pub fn overfit(n_images: usize, seed: u64) -> Self {
        SynthConfig {
            n_images,
            height: 64,
            width: 64,
            targets_min: 1,
            targets_max: 1,
            sigma_min: 0.9,
            sigma_max: 1.1,
            peak_min: 0.38,
            peak_max: 0.49,
            background: Background::Flat,
            background_level: 0.2,
            noise_std: 0.005,
            seed,
        }
    }
}

/// Fraction of pixels a target mask may cover, per image.
pub const AREA_CAP: f64 = 0.0015;

/// Radius of the half-peak level set of an isotropic Gaussian.
fn half_peak_radius(sigma: f64) -> f64 {
    sigma * (2.0 * std::f64::consts::LN_2).sqrt()
}

impl SynthConfig {
    pub fn area_cap_pixels(&self) -> usize {
        ((self.height * self.width) as f64 * AREA_CAP).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::Config("n_images must be >= 1".into()));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config("image size must be at least 8x8".into()));
        }
        if self.targets_min == 0 || self.targets_min > self.targets_max {
            return Err(Error::Config(
                "target count range must satisfy 1 <= min <= max".into(),
            ));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max) {
            return Err(Error::Config("sigma range must satisfy 0 < min <= max".into()));
        }
        if !(self.peak_min > 0.0 && self.peak_min <= self.peak_max) {
            return Err(Error::Config("peak range must satisfy 0 < min <= max".into()));
        }
        if self.peak_max >= 0.5 {
            return Err(Error::Config(format!(
                "target_peak must stay below 0.5 for the low-contrast regime, got {}",
                self.peak_max
            )));
        }
        if self.noise_std < 0.0 {
            return Err(Error::Config("noise_std must be non-negative".into()));
        }
        let cap = self.area_cap_pixels();
        // feasibility: even the smallest sigma must let targets_max fit the cap
        let r = half_peak_radius(self.sigma_min);
        let smallest = (std::f64::consts::PI * r * r).ceil().max(1.0) as usize;
        if smallest * self.targets_max > cap.max(1) {
            return Err(Error::Config(format!(
                "target area cap violated: {} targets of sigma >= {} cover at least \
                 ~{} pixels, cap is {} (0.15% of {}x{})",
                self.targets_max,
                self.sigma_min,
                smallest * self.targets_max,
                cap,
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// Generate a deterministic synthetic dataset.
///
/// Each image is background + additive Gaussian-profile targets + pixel
/// noise; the mask marks pixels whose noiseless target contribution exceeds
/// half that target's peak. Target draws that would push the mask past the
/// area cap are re-drawn with a smaller footprint; if the cap cannot be met
/// the config is rejected.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SegmentationSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cap = cfg.area_cap_pixels().max(1);
    let (h, w) = (cfg.height, cfg.width);
    let mut samples = Vec::with_capacity(cfg.n_images);
    for index in 0..cfg.n_images {
        let mut image = background(cfg, &mut rng);
        let mut mask = Array2::<u8>::zeros((h, w));
        let n_targets = rng.random_range(cfg.targets_min..=cfg.targets_max);
        let mut area = 0usize;
        for _ in 0..n_targets {
            let mut placed = false;
            for _attempt in 0..100 {
                let cy = rng.random_range(2.0..h as f64 - 2.0);
                let cx = rng.random_range(2.0..w as f64 - 2.0);
                let sigma = rng.random_range(cfg.sigma_min..=cfg.sigma_max);
                let peak = rng.random_range(cfg.peak_min..=cfg.peak_max);
                let level = level_set(cy, cx, sigma, h, w);
                if level.is_empty() || area + level.len() > cap {
                    continue; // invisible or too large; re-draw geometry
                }
                // keep targets disjoint so component counts stay meaningful
                if level.iter().any(|&(y, x)| mask[[y, x]] > 0) {
                    continue;
                }
                stamp_gaussian(&mut image, cy, cx, sigma, peak);
                for &(y, x) in &level {
                    mask[[y, x]] = 1;
                }
                area += level.len();
                placed = true;
                break;
            }
            if !placed {
                return Err(Error::Config(format!(
                    "target area cap violated: could not place {} targets of sigma <= {} \
                     within {} pixels",
                    n_targets, cfg.sigma_max, cap
                )));
            }
        }
        if cfg.noise_std > 0.0 {
            for v in image.iter_mut() {
                *v += gaussian(&mut rng) * cfg.noise_std;
            }
        }
        image.mapv_inplace(|v| v.clamp(0.0, 1.0));
        samples.push(SegmentationSample {
            id: format!("synth_{index:04}"),
            image,
            mask,
        });
    }
    Ok(samples)
}

fn background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let (h, w) = (cfg.height, cfg.width);
    match cfg.background {
        Background::Flat => Array2::from_elem((h, w), cfg.background_level),
        Background::Gradient => {
            let span = cfg.background_level;
            Array2::from_shape_fn((h, w), |(y, x)| {
                span * 0.5 + span * 0.5 * (y as f64 / h as f64 + x as f64 / w as f64) / 2.0
            })
        }
        Background::SmoothedNoise => {
            let raw = Array2::from_shape_fn((h, w), |_| {
                cfg.background_level + gaussian(rng) * cfg.background_level * 0.5
            });
            box_blur(&box_blur(&raw, 3), 3)
        }
    }
}

fn box_blur(src: &Array2<f64>, radius: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    let r = radius as isize;
    Array2::from_shape_fn((h, w), |(y, x)| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (sy, sx) = (y as isize + dy, x as isize + dx);
                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                    acc += src[[sy as usize, sx as usize]];
                    n += 1.0;
                }
            }
        }
        acc / n
    })
}

/// Pixels where a Gaussian of amplitude `peak` exceeds `peak / 2`.
fn level_set(cy: f64, cx: f64, sigma: f64, h: usize, w: usize) -> Vec<(usize, usize)> {
    let r = half_peak_radius(sigma);
    let mut out = Vec::new();
    let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
    let y1 = ((cy + r + 1.0).ceil() as usize).min(h - 1);
    let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
    let x1 = ((cx + r + 1.0).ceil() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            if (-d2 / (2.0 * sigma * sigma)).exp() > 0.5 {
                out.push((y, x));
            }
        }
    }
    out
}

fn stamp_gaussian(image: &mut Array2<f64>, cy: f64, cx: f64, sigma: f64, peak: f64) {
    let (h, w) = image.dim();
    let reach = (4.0 * sigma).ceil();
    let y0 = (cy - reach).floor().max(0.0) as usize;
    let y1 = ((cy + reach).ceil() as usize).min(h - 1);
    let x0 = (cx - reach).floor().max(0.0) as usize;
    let x1 = ((cx + reach).ceil() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            image[[y, x]] += peak * (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
}

/// Standard normal via Box-Muller, deterministic per RNG stream.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

// ---------------------------------------------------------------------------
// dataset directory output
// ---------------------------------------------------------------------------

/// Manifest written next to a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub n_images: usize,
}

/// Write samples in the standard on-disk layout (`images/`, `masks/`,
/// `manifest.json`) as 8-bit grayscale PNG.
pub fn write_dataset(dir: &Path, samples: &[SegmentationSample], cfg: &SynthConfig) -> Result<()> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    fs::create_dir_all(&images_dir)?;
    fs::create_dir_all(&masks_dir)?;
    for s in samples {
        save_gray(&images_dir.join(format!("{}.png", s.id)), &s.image)?;
        let mask_img = s.mask.mapv(|v| if v > 0 { 1.0 } else { 0.0 });
        save_gray(&masks_dir.join(format!("{}.png", s.id)), &mask_img)?;
    }
    let manifest = SynthManifest {
        config: cfg.clone(),
        n_images: samples.len(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

fn save_gray(path: &PathBuf, data: &Array2<f64>) -> Result<()> {
    let (h, w) = data.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = (data[[y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// padding
// ---------------------------------------------------------------------------

/// Zero-pad image and mask on the bottom/right to the next multiple.
pub fn pad_to_multiple(sample: &SegmentationSample, multiple: usize) -> PaddedSample {
    let multiple = multiple.max(1);
    let (h, w) = sample.image.dim();
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return PaddedSample {
            sample: sample.clone(),
            orig_h: h,
            orig_w: w,
        };
    }
    let mut image = Array2::<f64>::zeros((ph, pw));
    let mut mask = Array2::<u8>::zeros((ph, pw));
    image.slice_mut(ndarray::s![..h, ..w]).assign(&sample.image);
    mask.slice_mut(ndarray::s![..h, ..w]).assign(&sample.mask);
    PaddedSample {
        sample: SegmentationSample {
            id: sample.id.clone(),
            image,
            mask,
        },
        orig_h: h,
        orig_w: w,
    }
}

/// Crop a padded prediction back to the original size.
pub fn unpad_prediction(pred: &Array2<f64>, orig_h: usize, orig_w: usize) -> Array2<f64> {
    pred.slice(ndarray::s![..orig_h, ..orig_w]).to_owned()
}
