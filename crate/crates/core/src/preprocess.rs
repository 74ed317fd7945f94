//! Resizing, pixel normalization and train-time augmentation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_zoo::Architecture;
use crate::nn::{Shape, Tensor};
use crate::seeding::{rng_for, Rng};
use crate::splitter::SplitKind;

pub const CHANNELS: usize = 3;

/// A three-channel image stored channel-major (CHW).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != CHANNELS * height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for ({height}, {width}, 3)", CHANNELS * height * width),
                got: data.len().to_string(),
            });
        }
        Ok(ImageTensor { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(CHANNELS * plane);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, plane));
        }
        ImageTensor { height, width, data }
    }

    /// Pixels rescaled from `u8` to `[0, 1]`.
    pub fn from_rgb(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; CHANNELS * h * w];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..CHANNELS {
                data[c * h * w + y as usize * w + x as usize] = p[c] as f32 / 255.0;
            }
        }
        ImageTensor { height: h, width: w, data }
    }

    pub fn to_rgb(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c| (self.get(y as usize, x as usize, c).clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, CHANNELS)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, CHANNELS, self.height, self.width), self.data.clone())
    }

    /// Stacks equally sized images into one `(n, 3, h, w)` batch.
    pub fn batch(images: &[ImageTensor]) -> Result<Tensor> {
        let first = images.first().ok_or(Error::EmptyInput)?;
        let mut data = Vec::with_capacity(first.data.len() * images.len());
        for img in images {
            if img.shape() != first.shape() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{:?}", first.shape()),
                    got: format!("{:?}", img.shape()),
                });
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(
            Shape::new(images.len(), CHANNELS, first.height, first.width),
            data,
        ))
    }
}

pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => crate::error::io_at(path, io),
        other => Error::Image(format!("{}: {other}", path.display())),
    })?;
    Ok(ImageTensor::from_rgb(&img.to_rgb8()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizePolicy {
    pub sizes: BTreeMap<Architecture, (usize, usize)>,
}

impl ResizePolicy {
    pub fn native() -> Self {
        ResizePolicy {
            sizes: Architecture::ALL.iter().map(|&a| (a, (a.input_size(), a.input_size()))).collect(),
        }
    }

    /// Every architecture at the same square size.
    pub fn uniform(side: usize) -> Self {
        ResizePolicy {
            sizes: Architecture::ALL.iter().map(|&a| (a, (side, side))).collect(),
        }
    }

    pub fn get(&self, arch: Architecture) -> (usize, usize) {
        self.sizes[&arch]
    }
}

pub fn target_size(arch: &str) -> Result<(usize, usize)> {
    Ok(ResizePolicy::native().get(Architecture::parse(arch)?))
}

/// Bilinear resampling with half-pixel centers. Same-size input is
/// returned unchanged.
pub fn resize(img: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    if (img.height, img.width) == (height, width) {
        return img.clone();
    }
    let sy = img.height as f32 / height as f32;
    let sx = img.width as f32 / width as f32;
    let mut out = ImageTensor::filled(height, width, [0.0; 3]);
    for y in 0..height {
        let fy = ((y as f32 + 0.5) * sy - 0.5).max(0.0);
        for x in 0..width {
            let fx = ((x as f32 + 0.5) * sx - 0.5).max(0.0);
            for c in 0..CHANNELS {
                out.set(y, x, c, sample_clamped(img, c, fy, fx));
            }
        }
    }
    out
}

fn sample_clamped(img: &ImageTensor, c: usize, fy: f32, fx: f32) -> f32 {
    let y0 = (fy.floor() as usize).min(img.height - 1);
    let x0 = (fx.floor() as usize).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let dy = fy - y0 as f32;
    let dx = fx - x0 as f32;
    let top = img.get(y0, x0, c) * (1.0 - dx) + img.get(y0, x1, c) * dx;
    let bottom = img.get(y1, x0, c) * (1.0 - dx) + img.get(y1, x1, c) * dx;
    top * (1.0 - dy) + bottom * dy
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormalizationSpec {
    pub const IMAGENET: NormalizationSpec = NormalizationSpec {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub const IDENTITY: NormalizationSpec = NormalizationSpec {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig(format!("normalization std must be positive: {:?}", self.std)));
        }
        Ok(())
    }
}

impl Default for NormalizationSpec {
    fn default() -> Self {
        Self::IMAGENET
    }
}

pub fn normalize(img: &ImageTensor, spec: &NormalizationSpec) -> Result<ImageTensor> {
    spec.validate()?;
    if !img.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let plane = img.height * img.width;
    let mut out = img.clone();
    for (c, chunk) in out.data.chunks_mut(plane).enumerate() {
        let (m, s) = (spec.mean[c], spec.std[c]);
        for v in chunk {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub rotation_deg: f64,
    pub shift_frac: f64,
    pub shear_deg: f64,
    pub zoom_frac: f64,
    pub hflip_prob: f64,
    pub brightness_range: (f64, f64),
}

impl AugmentationConfig {
    pub const IDENTITY: AugmentationConfig = AugmentationConfig {
        rotation_deg: 0.0,
        shift_frac: 0.0,
        shear_deg: 0.0,
        zoom_frac: 0.0,
        hflip_prob: 0.0,
        brightness_range: (1.0, 1.0),
    };

    pub fn validate(&self) -> Result<()> {
        let mags = [self.rotation_deg, self.shift_frac, self.shear_deg, self.zoom_frac];
        let (lo, hi) = self.brightness_range;
        if mags.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidConfig("augmentation magnitudes must be finite and non-negative".into()));
        }
        if self.zoom_frac >= 1.0 {
            return Err(Error::InvalidConfig("zoom_frac must be below 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::InvalidConfig("hflip_prob must lie in [0, 1]".into()));
        }
        if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || lo > hi {
            return Err(Error::InvalidConfig("brightness_range must satisfy 0 <= low <= high".into()));
        }
        Ok(())
    }
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rotation_deg: 20.0,
            shift_frac: 0.1,
            shear_deg: 10.0,
            zoom_frac: 0.1,
            hflip_prob: 0.5,
            brightness_range: (0.8, 1.2),
        }
    }
}

/// One draw of every augmentation parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationDraw {
    pub rotation_deg: f64,
    pub shift: (f64, f64),
    pub shear_deg: f64,
    pub zoom: (f64, f64),
    pub hflip: bool,
    pub brightness: f64,
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

impl AugmentationDraw {
    pub fn sample(cfg: &AugmentationConfig, rng: &mut Rng) -> Self {
        let rotation_deg = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg);
        let shift = (
            uniform(rng, -cfg.shift_frac, cfg.shift_frac),
            uniform(rng, -cfg.shift_frac, cfg.shift_frac),
        );
        let shear_deg = uniform(rng, -cfg.shear_deg, cfg.shear_deg);
        let zoom = (
            uniform(rng, 1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac),
            uniform(rng, 1.0 - cfg.zoom_frac, 1.0 + cfg.zoom_frac),
        );
        let hflip = rng.random::<f64>() < cfg.hflip_prob;
        let brightness = uniform(rng, cfg.brightness_range.0, cfg.brightness_range.1);
        AugmentationDraw {
            rotation_deg,
            shift,
            shear_deg,
            zoom,
            hflip,
            brightness,
        }
    }

    fn is_geometric_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.shift == (0.0, 0.0) && self.shear_deg == 0.0 && self.zoom == (1.0, 1.0)
    }

    /// Maps an output pixel offset from the image centre, `(x, y)`, to the
    /// source offset: rotation, then shift, then shear, then zoom.
    fn inverse_map(&self, h: usize, w: usize) -> impl Fn(f64, f64) -> (f64, f64) {
        let t = self.rotation_deg.to_radians();
        let (sin, cos) = t.sin_cos();
        let sh = self.shear_deg.to_radians();
        let (tx, ty) = (self.shift.0 * w as f64, self.shift.1 * h as f64);
        let (zx, zy) = self.zoom;
        move |x, y| {
            let (x, y) = (cos * x - sin * y, sin * x + cos * y);
            let (x, y) = (x + tx, y + ty);
            let (x, y) = (x - sh.sin() * y, sh.cos() * y);
            (x * zx, y * zy)
        }
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn sample_reflect(img: &ImageTensor, c: usize, fy: f64, fx: f64) -> f32 {
    let y0 = fy.floor();
    let x0 = fx.floor();
    let dy = (fy - y0) as f32;
    let dx = (fx - x0) as f32;
    let (y0, x0) = (y0 as isize, x0 as isize);
    let ya = reflect(y0, img.height);
    let yb = reflect(y0 + 1, img.height);
    let xa = reflect(x0, img.width);
    let xb = reflect(x0 + 1, img.width);
    let top = img.get(ya, xa, c) * (1.0 - dx) + img.get(ya, xb, c) * dx;
    let bottom = img.get(yb, xa, c) * (1.0 - dx) + img.get(yb, xb, c) * dx;
    top * (1.0 - dy) + bottom * dy
}

/// Applies one drawn augmentation: the affine part is composed and
/// resampled once, then the flip, then brightness with clipping to `[0, 1]`.
pub fn apply_draw(img: &ImageTensor, draw: &AugmentationDraw) -> ImageTensor {
    let (h, w) = (img.height, img.width);
    let mut out = if draw.is_geometric_identity() {
        img.clone()
    } else {
        let map = draw.inverse_map(h, w);
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let mut out = ImageTensor::filled(h, w, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = map(x as f64 - cx, y as f64 - cy);
                for c in 0..CHANNELS {
                    out.set(y, x, c, sample_reflect(img, c, sy + cy, sx + cx));
                }
            }
        }
        out
    };
    if draw.hflip {
        for c in 0..CHANNELS {
            for y in 0..h {
                let row = &mut out.data[(c * h + y) * w..(c * h + y + 1) * w];
                row.reverse();
            }
        }
    }
    if draw.brightness != 1.0 {
        let b = draw.brightness as f32;
        for v in &mut out.data {
            *v = (*v * b).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn augment(img: &ImageTensor, cfg: &AugmentationConfig, rng: &mut Rng) -> Result<ImageTensor> {
    cfg.validate()?;
    let draw = AugmentationDraw::sample(cfg, rng);
    Ok(apply_draw(img, &draw))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Resize(usize, usize),
    Augment(AugmentationConfig),
    Normalize(NormalizationSpec),
}

/// An image transform for one architecture and split.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    stages: Vec<Stage>,
    seed: u64,
}

impl Pipeline {
    pub fn new(
        target: (usize, usize),
        split: SplitKind,
        cfg: &AugmentationConfig,
        norm: &NormalizationSpec,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        norm.validate()?;
        let mut stages = vec![Stage::Resize(target.0, target.1)];
        if split == SplitKind::Train {
            stages.push(Stage::Augment(*cfg));
        }
        stages.push(Stage::Normalize(*norm));
        Ok(Pipeline { stages, seed })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn is_deterministic(&self) -> bool {
        !self.stages.iter().any(|s| matches!(s, Stage::Augment(_)))
    }

    pub fn output_size(&self) -> (usize, usize) {
        match self.stages[0] {
            Stage::Resize(h, w) => (h, w),
            _ => unreachable!("pipelines start with a resize"),
        }
    }

    /// Applies the pipeline with the augmentation stream owned by
    /// `(seed, image_id, epoch)`.
    pub fn apply(&self, img: &ImageTensor, image_id: &str, epoch: usize) -> Result<ImageTensor> {
        let mut key = image_id.as_bytes().to_vec();
        key.extend_from_slice(&(epoch as u64).to_le_bytes());
        let mut rng = rng_for(self.seed, "augment", &key);
        self.apply_with(img, &mut rng)
    }

    pub fn apply_with(&self, img: &ImageTensor, rng: &mut Rng) -> Result<ImageTensor> {
        let mut cur = img.clone();
        for stage in &self.stages {
            cur = match stage {
                Stage::Resize(h, w) => resize(&cur, *h, *w),
                Stage::Augment(cfg) => augment(&cur, cfg, rng)?,
                Stage::Normalize(spec) => normalize(&cur, spec)?,
            };
        }
        Ok(cur)
    }
}

pub fn build_pipeline(
    arch: &str,
    split: SplitKind,
    cfg: &AugmentationConfig,
    norm: &NormalizationSpec,
) -> Result<Pipeline> {
    Pipeline::new(target_size(arch)?, split, cfg, norm, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.random::<f32>()).collect();
        ImageTensor::new(h, w, data).unwrap()
    }

    #[test]
    fn target_sizes() {
        assert_eq!(target_size("EfficientNet-B3").unwrap(), (300, 300));
        assert_eq!(target_size("InceptionV3").unwrap(), (299, 299));
        assert_eq!(target_size("ResNet50").unwrap(), (224, 224));
        assert_eq!(target_size("VGG16").unwrap(), (224, 224));
        assert!(matches!(target_size("AlexNet"), Err(Error::UnknownArchitecture(_))));
        assert_eq!(ResizePolicy::native().sizes.len(), 4);
    }

    #[test]
    fn normalize_identity_centering_and_loop_oracle() {
        let img = random_image(5, 7, 1);
        assert_eq!(normalize(&img, &NormalizationSpec::IDENTITY).unwrap(), img);

        let spec = NormalizationSpec::IMAGENET;
        let flat = ImageTensor::filled(4, 4, spec.mean);
        assert!(normalize(&flat, &spec).unwrap().data().iter().all(|&v| v == 0.0));

        let out = normalize(&img, &spec).unwrap();
        for y in 0..5 {
            for x in 0..7 {
                for c in 0..3 {
                    let want = (img.get(y, x, c) - spec.mean[c]) / spec.std[c];
                    assert!((out.get(y, x, c) - want).abs() < 1e-6);
                }
            }
        }

        let mut bad = img.clone();
        bad.set(0, 0, 0, f32::NAN);
        assert!(matches!(normalize(&bad, &spec), Err(Error::NonFiniteInput)));
        let zero_std = NormalizationSpec { mean: [0.0; 3], std: [1.0, 0.0, 1.0] };
        assert!(matches!(normalize(&img, &zero_std), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn identity_augmentation_is_bitwise_identity() {
        let img = random_image(9, 11, 2);
        let mut rng = Rng::seed_from_u64(3);
        assert_eq!(augment(&img, &AugmentationConfig::IDENTITY, &mut rng).unwrap(), img);
    }

    #[test]
    fn hflip_mirrors_columns() {
        let img = random_image(6, 5, 4);
        let cfg = AugmentationConfig { hflip_prob: 1.0, ..AugmentationConfig::IDENTITY };
        let out = augment(&img, &cfg, &mut Rng::seed_from_u64(0)).unwrap();
        for y in 0..6 {
            for x in 0..5 {
                for c in 0..3 {
                    assert_eq!(out.get(y, x, c), img.get(y, 4 - x, c));
                }
            }
        }
    }

    #[test]
    fn brightness_scales_then_clips() {
        let cfg = AugmentationConfig { brightness_range: (2.0, 2.0), ..AugmentationConfig::IDENTITY };
        let out = augment(&ImageTensor::filled(3, 3, [0.25; 3]), &cfg, &mut Rng::seed_from_u64(0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
        let out = augment(&ImageTensor::filled(3, 3, [0.75; 3]), &cfg, &mut Rng::seed_from_u64(0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pure_shift_moves_pixels_with_reflection() {
        let img = random_image(4, 10, 5);
        let draw = AugmentationDraw {
            rotation_deg: 0.0,
            shift: (0.2, 0.0),
            shear_deg: 0.0,
            zoom: (1.0, 1.0),
            hflip: false,
            brightness: 1.0,
        };
        let out = apply_draw(&img, &draw);
        for y in 0..4 {
            for x in 0..10 {
                let src = reflect(x as isize + 2, 10);
                assert!((out.get(y, x, 1) - img.get(y, src, 1)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn quarter_turn_rotates_square_image() {
        let img = random_image(5, 5, 6);
        let draw = AugmentationDraw {
            rotation_deg: 90.0,
            shift: (0.0, 0.0),
            shear_deg: 0.0,
            zoom: (1.0, 1.0),
            hflip: false,
            brightness: 1.0,
        };
        let out = apply_draw(&img, &draw);
        // Source offset (cos x - sin y, sin x + cos y) = (-y, x) about the centre.
        for y in 0..5 {
            for x in 0..5 {
                let (sx, sy) = (2 - (y as isize - 2), 2 + (x as isize - 2));
                assert!((out.get(y, x, 0) - img.get(sy as usize, sx as usize, 0)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = Rng::seed_from_u64(0);
        let img = random_image(3, 3, 0);
        for cfg in [
            AugmentationConfig { rotation_deg: -1.0, ..Default::default() },
            AugmentationConfig { hflip_prob: 1.5, ..Default::default() },
            AugmentationConfig { brightness_range: (1.2, 0.8), ..Default::default() },
        ] {
            assert!(matches!(augment(&img, &cfg, &mut rng), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn pipelines_by_split() {
        let cfg = AugmentationConfig::default();
        let norm = NormalizationSpec::default();
        let test = build_pipeline("VGG16", SplitKind::Test, &cfg, &norm).unwrap();
        assert!(test.is_deterministic());
        assert_eq!(test.stages().len(), 2);
        let train = build_pipeline("EfficientNet-B3", SplitKind::Train, &cfg, &norm).unwrap();
        assert!(matches!(train.stages()[1], Stage::Augment(_)));
        let out = train.apply(&random_image(37, 53, 7), "img", 0).unwrap();
        assert_eq!(out.shape(), (300, 300, 3));
        assert!(out.is_finite());

        let img = random_image(40, 30, 8);
        assert_eq!(test.apply(&img, "a", 0).unwrap(), test.apply(&img, "b", 3).unwrap());
        let ident = build_pipeline("ResNet50", SplitKind::Train, &AugmentationConfig::IDENTITY, &norm).unwrap();
        let val = build_pipeline("ResNet50", SplitKind::Val, &cfg, &norm).unwrap();
        assert_eq!(ident.apply(&img, "x", 1).unwrap(), val.apply(&img, "x", 1).unwrap());
        assert!(matches!(
            build_pipeline("VGG19", SplitKind::Val, &cfg, &norm),
            Err(Error::UnknownArchitecture(_))
        ));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = ImageTensor::filled(7, 13, [0.1, 0.2, 0.3]);
        let out = resize(&img, 20, 4);
        assert_eq!(out.shape(), (20, 4, 3));
        for y in 0..20 {
            for x in 0..4 {
                assert!((out.get(y, x, 2) - 0.3).abs() < 1e-6);
            }
        }
    }
}
