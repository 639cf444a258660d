//! Screenshot embeddings and dynamism masks.

use std::path::Path;

use image::{DynamicImage, RgbaImage};
use serde::{Deserialize, Serialize};

pub const GRID: usize = 16;
pub const EMBEDDING_DIM: usize = GRID * GRID;
pub const DEFAULT_PIXEL_TOLERANCE: u8 = 10;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unreadable image {path}: {reason}")]
pub struct UnreadableImage {
    pub path: String,
    pub reason: String,
}

pub fn load_image(path: &Path) -> Result<DynamicImage, UnreadableImage> {
    image::open(path).map_err(|e| UnreadableImage {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Axis-aligned rectangle in screenshot pixels, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x - self.x < self.width && y - self.y < self.height
    }
}

/// Screen regions excluded from appearance comparison.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DynamismMask {
    pub rects: Vec<PixelRect>,
}

impl DynamismMask {
    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.rects.iter().any(|r| r.contains(x, y))
    }

    pub fn union(&self, other: &DynamismMask) -> DynamismMask {
        let mut rects = self.rects.clone();
        rects.extend(other.rects.iter().copied());
        rects.sort();
        rects.dedup();
        DynamismMask { rects }
    }
}

fn pixel_delta(a: Option<&image::Rgba<u8>>, b: Option<&image::Rgba<u8>>) -> u8 {
    match (a, b) {
        (Some(a), Some(b)) => a.0.iter().zip(b.0.iter()).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0),
        _ => u8::MAX,
    }
}

/// Bounding rectangles of the 8-connected regions where the two images differ
/// by more than `tolerance` in any channel. The frame is the union of both
/// image sizes; pixels covered by only one image count as changed.
pub fn mask_from_images(a: &RgbaImage, b: &RgbaImage, tolerance: u8) -> DynamismMask {
    let w = a.width().max(b.width());
    let h = a.height().max(b.height());
    fn get(img: &RgbaImage, x: u32, y: u32) -> Option<&image::Rgba<u8>> {
        (x < img.width() && y < img.height()).then(|| img.get_pixel(x, y))
    }
    let (wu, hu) = (w as usize, h as usize);
    let mut changed = vec![false; wu * hu];
    for y in 0..h {
        for x in 0..w {
            changed[y as usize * wu + x as usize] = pixel_delta(get(a, x, y), get(b, x, y)) > tolerance;
        }
    }
    let mut seen = vec![false; wu * hu];
    let mut rects = Vec::new();
    let mut stack = Vec::new();
    for start in 0..changed.len() {
        if !changed[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % wu, i / wu);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= wu as i64 || ny >= hu as i64 {
                        continue;
                    }
                    let j = ny as usize * wu + nx as usize;
                    if changed[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        rects.push(PixelRect {
            x: x0 as u32,
            y: y0 as u32,
            width: (x1 - x0 + 1) as u32,
            height: (y1 - y0 + 1) as u32,
        });
    }
    rects.sort();
    DynamismMask { rects }
}

pub fn dynamism_mask(shot1: &Path, shot2: &Path, tolerance: u8) -> Result<DynamismMask, UnreadableImage> {
    let a = load_image(shot1)?.to_rgba8();
    let b = load_image(shot2)?.to_rgba8();
    Ok(mask_from_images(&a, &b, tolerance))
}

/// Turns a screenshot into a fixed-length vector for comparison.
pub trait ScreenshotEmbedder: Send + Sync {
    fn embed(&self, image: &DynamicImage, mask: &DynamismMask) -> Vec<f64>;
}

/// Grayscale 16×16 average-pool grid over unmasked pixels, L2-normalized.
/// Cells whose pixels are all masked contribute 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridEmbedder;

impl ScreenshotEmbedder for GridEmbedder {
    fn embed(&self, image: &DynamicImage, mask: &DynamismMask) -> Vec<f64> {
        let gray = image.to_luma8();
        let (w, h) = gray.dimensions();
        let mut sums = [0.0f64; EMBEDDING_DIM];
        let mut counts = [0u64; EMBEDDING_DIM];
        if w > 0 && h > 0 {
            for (x, y, p) in gray.enumerate_pixels() {
                if mask.contains(x, y) {
                    continue;
                }
                let cx = (x as u64 * GRID as u64 / w as u64) as usize;
                let cy = (y as u64 * GRID as u64 / h as u64) as usize;
                let cell = cy * GRID + cx;
                sums[cell] += f64::from(p.0[0]) / 255.0;
                counts[cell] += 1;
            }
        }
        let mut v: Vec<f64> = sums
            .iter()
            .zip(counts.iter())
            .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

pub fn embed_screenshot(path: &Path, mask: &DynamismMask) -> Result<Vec<f64>, UnreadableImage> {
    Ok(GridEmbedder.embed(&load_image(path)?, mask))
}

/// Cosine of two embeddings. Identical vectors score 1; a zero vector
/// scores 0 against anything else.
pub fn embedding_similarity(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(0.0, 1.0)
}
