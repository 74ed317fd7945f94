//! Raster figures drawn directly with the `image` crate: class
//! distribution bars, a per-class example grid and a confusion heatmap.

use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use rand::seq::SliceRandom;

use crate::dataset::{ClassDistribution, DatasetManifest};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::seeding::rng_for;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const PALETTE: [Rgb<u8>; 5] = [
    Rgb([214, 96, 77]),
    Rgb([140, 86, 75]),
    Rgb([116, 196, 118]),
    Rgb([230, 171, 2]),
    Rgb([35, 139, 69]),
];

pub const BAR_AREA: u32 = 400;
const BAR_WIDTH: u32 = 60;
const GAP: u32 = 20;

/// Bar heights in pixels, proportional to each class's share of the data.
pub fn bar_heights(dist: &ClassDistribution) -> Vec<u32> {
    dist.fractions.iter().map(|f| (f * BAR_AREA as f64).round() as u32).collect()
}

pub fn bar_chart(dist: &ClassDistribution) -> RgbImage {
    let heights = bar_heights(dist);
    let k = heights.len() as u32;
    let (w, h) = (GAP + k * (BAR_WIDTH + GAP), BAR_AREA + 2 * GAP);
    let mut img = RgbImage::from_pixel(w, h, BACKGROUND);
    for x in GAP / 2..w - GAP / 2 {
        img.put_pixel(x, h - GAP, Rgb([0, 0, 0]));
    }
    for (i, &bh) in heights.iter().enumerate() {
        let x0 = GAP + i as u32 * (BAR_WIDTH + GAP);
        for x in x0..x0 + BAR_WIDTH {
            for y in (h - GAP - bh)..(h - GAP) {
                img.put_pixel(x, y, PALETTE[i % PALETTE.len()]);
            }
        }
    }
    img
}

pub const THUMB: u32 = 64;

/// A grid with one row per class and up to `per_class` randomly chosen
/// examples per row. Returns the image and its row count.
pub fn example_grid(manifest: &DatasetManifest, classes: usize, per_class: usize, seed: u64) -> Result<(RgbImage, usize)> {
    let pad = 4;
    let w = pad + per_class as u32 * (THUMB + pad) + 12;
    let h = pad + classes as u32 * (THUMB + pad);
    let mut grid = RgbImage::from_pixel(w, h, BACKGROUND);
    for class in 0..classes {
        let y0 = pad + class as u32 * (THUMB + pad);
        for y in y0..y0 + THUMB {
            for x in 0..8 {
                grid.put_pixel(x, y, PALETTE[class % PALETTE.len()]);
            }
        }
        let mut members: Vec<usize> = (0..manifest.len()).filter(|&i| manifest.records()[i].label == class).collect();
        members.shuffle(&mut rng_for(seed, "example-grid", &(class as u64).to_le_bytes()));
        for (j, &i) in members.iter().take(per_class).enumerate() {
            let img = image::open(manifest.image_path(i)).map_err(|e| Error::Image(e.to_string()))?;
            let thumb = imageops::resize(&img.to_rgb8(), THUMB, THUMB, imageops::FilterType::Triangle);
            imageops::replace(&mut grid, &thumb, (12 + pad + j as u32 * (THUMB + pad)) as i64, y0 as i64);
        }
    }
    Ok((grid, classes))
}

pub const CELL: u32 = 48;

/// Cell shade is the count divided by the row's support; empty cells stay
/// white.
pub fn confusion_heatmap(cm: &ConfusionMatrix) -> RgbImage {
    let k = cm.num_classes() as u32;
    let mut img = RgbImage::from_pixel(k * CELL + 1, k * CELL + 1, Rgb([0, 0, 0]));
    let supports = cm.supports();
    for t in 0..k as usize {
        for p in 0..k as usize {
            let frac = if supports[t] == 0 { 0.0 } else { cm.get(t, p) as f64 / supports[t] as f64 };
            let fade = (255.0 * (1.0 - frac)).round() as u8;
            let color = Rgb([fade, fade, 255]);
            for y in 1..CELL {
                for x in 1..CELL {
                    img.put_pixel(p as u32 * CELL + x, t as u32 * CELL + y, color);
                }
            }
        }
    }
    img
}

/// Colour at the centre of heatmap cell `(truth, pred)`.
pub fn heatmap_cell(img: &RgbImage, truth: usize, pred: usize) -> Rgb<u8> {
    *img.get_pixel(pred as u32 * CELL + CELL / 2, truth as u32 * CELL + CELL / 2)
}

fn save(img: &RgbImage, path: &Path) -> Result<PathBuf> {
    img.save(path)
        .map_err(|e| Error::PlotBackendUnavailable(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

/// Writes `class_distribution.png`, `examples.png` and `confusion.png`.
pub fn emit_plots(dir: &Path, manifest: &DatasetManifest, classes: usize, cm: &ConfusionMatrix, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::PlotBackendUnavailable(format!("{}: {e}", dir.display())))?;
    let counts = (0..classes)
        .map(|c| manifest.records().iter().filter(|r| r.label == c).count())
        .collect();
    let dist = ClassDistribution::from_counts(counts);
    let mut written = vec![save(&bar_chart(&dist), &dir.join("class_distribution.png"))?];
    let (grid, _) = example_grid(manifest, classes, 6, seed)?;
    written.push(save(&grid, &dir.join("examples.png"))?);
    written.push(save(&confusion_heatmap(cm), &dir.join("confusion.png"))?);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::confusion_matrix;

    #[test]
    fn bars_are_proportional() {
        let dist = ClassDistribution::from_counts(vec![1070, 2189, 2386, 13158, 2577]);
        let h = bar_heights(&dist);
        let total: u32 = h.iter().sum();
        assert!((h[3] as f64 / total as f64 - 0.615).abs() < 0.005);
        let img = bar_chart(&dist);
        assert_eq!(img.width(), GAP + 5 * (BAR_WIDTH + GAP));
    }

    #[test]
    fn perfect_predictor_heatmap_has_empty_off_diagonal() {
        let cm = confusion_matrix(&[0, 1, 2, 3, 4, 3], &[0, 1, 2, 3, 4, 3]).unwrap();
        let img = confusion_heatmap(&cm);
        for t in 0..5 {
            for p in 0..5 {
                let want = if t == p { Rgb([0, 0, 255]) } else { Rgb([255, 255, 255]) };
                assert_eq!(heatmap_cell(&img, t, p), want);
            }
        }
    }
}
