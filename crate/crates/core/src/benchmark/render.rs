//! Procedural micro-image renderer.
//!
//! Each quadrant holds a 2×2 grid of cells and every instance of an object
//! occupies one cell with a 3×3 shape mask. Images are H×W×3, row-major,
//! values in [0, 1].

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::BenchmarkError;
use crate::condition::{Color, Condition, ObjectAttrs, Shape, MAX_COUNT};
use crate::rng::{fill_normal, lane, StreamKey};

pub const DEFAULT_IMAGE_SIZE: usize = 16;
pub const CHANNELS: usize = 3;
pub const BACKGROUND: f32 = 0.5;
pub const PIXEL_NOISE: f64 = 0.02;

pub fn color_rgb(c: Color) -> [f32; 3] {
    match c {
        Color::Red => [0.9, 0.1, 0.1],
        Color::Green => [0.1, 0.8, 0.1],
        Color::Blue => [0.1, 0.2, 0.9],
        Color::Yellow => [0.9, 0.85, 0.1],
    }
}

pub fn shape_mask(s: Shape) -> [[bool; 3]; 3] {
    match s {
        Shape::Square => [[true; 3]; 3],
        Shape::Circle => [[false, true, false], [true, true, true], [false, true, false]],
        Shape::Triangle => [[true, false, false], [true, true, false], [true, true, true]],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MicroScene {
    pub condition: Condition,
    pub size: usize,
    /// H×W×3 row-major.
    pub image: Vec<f32>,
    pub render_seed: u64,
}

impl MicroScene {
    /// Pixels mapped to the model's data space, 2·v − 1.
    pub fn data(&self) -> Vec<f64> {
        to_data_space(&self.image)
    }
}

pub fn to_data_space(image: &[f32]) -> Vec<f64> {
    image.iter().map(|&v| 2.0 * f64::from(v) - 1.0).collect()
}

pub fn check_size(size: usize) -> Result<(), BenchmarkError> {
    if size < 16 || !size.is_multiple_of(4) {
        return Err(BenchmarkError::ImageSize(size));
    }
    Ok(())
}

fn check_objects(objects: &[ObjectAttrs]) -> Result<(), BenchmarkError> {
    for (i, o) in objects.iter().enumerate() {
        if o.count == 0 || o.count > MAX_COUNT {
            return Err(BenchmarkError::Placement(format!(
                "{} instances do not fit in one quadrant",
                o.count
            )));
        }
        if objects[..i].iter().any(|p| p.position == o.position) {
            return Err(BenchmarkError::Placement(format!(
                "two objects share the {} quadrant",
                o.position.name()
            )));
        }
    }
    Ok(())
}

/// Top-left pixel of cell `k` in quadrant `q`.
fn cell_origin(size: usize, q: usize, k: usize) -> (usize, usize) {
    let (half, quarter) = (size / 2, size / 4);
    (half * (q / 2) + quarter * (k / 2), half * (q % 2) + quarter * (k % 2))
}

fn paint(img: &mut [f32], size: usize, origin: (usize, usize), o: &ObjectAttrs, weight: f32) {
    let rgb = color_rgb(o.color);
    let mask = shape_mask(o.shape);
    for (i, row) in mask.iter().enumerate() {
        for (j, &on) in row.iter().enumerate() {
            if on {
                let base = ((origin.0 + i) * size + origin.1 + j) * CHANNELS;
                for ch in 0..CHANNELS {
                    img[base + ch] = img[base + ch] * (1.0 - weight) + rgb[ch] * weight;
                }
            }
        }
    }
}

pub fn render_scene(c: &Condition, render_seed: u64, size: usize) -> Result<MicroScene, BenchmarkError> {
    check_size(size)?;
    let scene = c.as_scene().ok_or(BenchmarkError::NotAScene)?;
    check_objects(&scene.objects)?;
    let mut img = vec![BACKGROUND; size * size * CHANNELS];
    let mut rng = StreamKey::new(render_seed, 0, 0, lane::RENDER).rng();
    for o in &scene.objects {
        for k in index::sample(&mut rng, 4, usize::from(o.count)) {
            paint(&mut img, size, cell_origin(size, o.position.index(), k), o, 1.0);
        }
    }
    let mut noise = vec![0.0; img.len()];
    fill_normal(StreamKey::new(render_seed, 0, 1, lane::RENDER), &mut noise);
    for (p, z) in img.iter_mut().zip(&noise) {
        *p = (f64::from(*p) + PIXEL_NOISE * z).clamp(0.0, 1.0) as f32;
    }
    Ok(MicroScene { condition: c.clone(), size, image: img, render_seed })
}

/// Expected render in data space, ignoring pixel noise: every cell is painted
/// with probability count/4. Objects that do not fit are skipped.
pub fn render_mean(objects: &[ObjectAttrs], size: usize) -> Vec<f64> {
    let mut img = vec![BACKGROUND; size * size * CHANNELS];
    let mut used = [false; 4];
    for o in objects {
        let q = o.position.index();
        if o.count == 0 || o.count > MAX_COUNT || used[q] {
            continue;
        }
        used[q] = true;
        let w = f32::from(o.count) / 4.0;
        for k in 0..4 {
            paint(&mut img, size, cell_origin(size, q, k), o, w);
        }
    }
    to_data_space(&img)
}
