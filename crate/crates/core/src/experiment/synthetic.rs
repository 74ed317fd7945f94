//! Class-conditional synthetic leaf images: each class has its own hue and
//! geometric motif, blended with noise according to a pattern strength.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassRegistry, DatasetManifest, Record, NUM_CLASSES};
use crate::error::{io_at, Error, Result};
use crate::seeding::{rng_for, Rng};
use crate::splitter::largest_remainder;

/// Class fractions of the cassava competition data.
pub const CASSAVA_FRACTIONS: [f64; NUM_CLASSES] = [0.05, 0.10, 0.11, 0.615, 0.125];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDatasetSpec {
    pub n_samples: usize,
    pub image_side: usize,
    pub fractions: Vec<f64>,
    /// 0 gives class-independent noise, 1 the full class signature.
    pub pattern_strength: f64,
    /// Half-width of the uniform per-pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        SyntheticDatasetSpec {
            n_samples: 500,
            image_side: 64,
            fractions: CASSAVA_FRACTIONS.to_vec(),
            pattern_strength: 1.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.fractions.len() != NUM_CLASSES {
            return bad(format!("expected {NUM_CLASSES} class fractions, got {}", self.fractions.len()));
        }
        if self.fractions.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return bad("class fractions must be non-negative".into());
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("class fractions sum to {sum}"));
        }
        if self.n_samples < NUM_CLASSES {
            return bad(format!("n_samples must be at least {NUM_CLASSES}"));
        }
        if self.image_side < 8 {
            return bad("image_side must be at least 8".into());
        }
        if !(0.0..=1.0).contains(&self.pattern_strength) || !(0.0..=1.0).contains(&self.noise) {
            return bad("pattern_strength and noise must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        largest_remainder(self.n_samples, &self.fractions)
    }
}

const HUES: [[f32; 3]; NUM_CLASSES] = [
    [0.85, 0.35, 0.20],
    [0.55, 0.35, 0.15],
    [0.45, 0.85, 0.35],
    [0.85, 0.85, 0.20],
    [0.10, 0.55, 0.15],
];

fn motif(class: usize, x: usize, y: usize, side: usize, phase: (usize, usize)) -> f32 {
    let (px, py) = phase;
    let on = match class {
        0 => ((y + py) / 4) % 2 == 0,
        1 => ((x + px) / 4) % 2 == 0,
        2 => (((x + px) / 6) + ((y + py) / 6)) % 2 == 0,
        3 => {
            let cx = side as f32 / 2.0 + px as f32 - 4.0;
            let cy = side as f32 / 2.0 + py as f32 - 4.0;
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            (dx * dx + dy * dy).sqrt() < side as f32 / 4.0
        }
        _ => ((x + y + px) / 5) % 2 == 0,
    };
    if on {
        1.0
    } else {
        0.0
    }
}

/// Draws one image of `class`.
pub fn render(class: usize, spec: &SyntheticDatasetSpec, rng: &mut Rng) -> image::RgbImage {
    let side = spec.image_side;
    let phase = (rng.random_range(0..8), rng.random_range(0..8));
    let shade: f32 = 0.9 + 0.2 * rng.random::<f32>();
    let s = spec.pattern_strength as f32;
    let noise = spec.noise as f32;
    let hue = HUES[class % NUM_CLASSES];
    image::RgbImage::from_fn(side as u32, side as u32, |x, y| {
        let m = motif(class % NUM_CLASSES, x as usize, y as usize, side, phase);
        let mut px = [0u8; 3];
        for (c, out) in px.iter_mut().enumerate() {
            let look = hue[c] * (0.55 + 0.45 * m) * shade;
            let v = (1.0 - s) * 0.5 + s * look + noise * (2.0 * rng.random::<f32>() - 1.0);
            *out = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        image::Rgb(px)
    })
}

/// Writes `images/*.png` and `manifest.csv` under `out_dir`.
pub fn generate_synthetic(spec: &SyntheticDatasetSpec, out_dir: &Path, registry: &ClassRegistry) -> Result<DatasetManifest> {
    spec.validate()?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| io_at(&images, e))?;
    let mut records = Vec::with_capacity(spec.n_samples);
    for (class, &count) in spec.class_counts().iter().enumerate() {
        let code = registry.code(class).unwrap_or("class").to_ascii_lowercase();
        for i in 0..count {
            let image_id = format!("images/{code}_{i:05}.png");
            let mut rng = rng_for(spec.seed, "synthetic", image_id.as_bytes());
            let img = render(class, spec, &mut rng);
            let path = out_dir.join(&image_id);
            img.save(&path).map_err(|e| match e {
                image::ImageError::IoError(io) => io_at(&path, io),
                other => Error::Image(format!("{}: {other}", path.display())),
            })?;
            records.push(Record { image_id, label: class });
        }
    }
    let manifest = DatasetManifest::new(records, out_dir, registry)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_largest_remainder() {
        let spec = SyntheticDatasetSpec { n_samples: 100, ..Default::default() };
        assert_eq!(spec.class_counts(), vec![5, 10, 11, 62, 12]);
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            SyntheticDatasetSpec { fractions: vec![0.5, 0.5], ..Default::default() },
            SyntheticDatasetSpec { fractions: vec![0.2, 0.2, 0.2, 0.2, 0.3], ..Default::default() },
            SyntheticDatasetSpec { n_samples: 4, ..Default::default() },
        ] {
            assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticDatasetSpec { n_samples: 20, image_side: 16, ..Default::default() };
        let reg = ClassRegistry::cassava();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = generate_synthetic(&spec, a.path(), &reg).unwrap();
        generate_synthetic(&spec, b.path(), &reg).unwrap();
        let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
        assert_eq!(read(a.path(), "manifest.csv"), read(b.path(), "manifest.csv"));
        let first = &ma.records()[0].image_id;
        assert_eq!(read(a.path(), first), read(b.path(), first));
        assert_eq!(ma.len(), 20);
    }

    #[test]
    fn zero_strength_hides_the_class() {
        let spec = SyntheticDatasetSpec { pattern_strength: 0.0, noise: 0.0, image_side: 16, ..Default::default() };
        let mut rng = rng_for(0, "t", b"");
        let imgs: Vec<_> = (0..NUM_CLASSES).map(|c| render(c, &spec, &mut rng)).collect();
        assert!(imgs.windows(2).all(|w| w[0] == w[1]));
    }
}
