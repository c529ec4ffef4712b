//! Procedural toy scenes used by the desk-scale profile and tests.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{write_label_map, write_rgb};
use super::types::{Pixels, SemanticLayout};
use crate::error::Result;

pub const TOY_CLASSES: [&str; 8] = [
    "sky", "grass", "water", "mountain", "building", "tree", "road", "sun",
];

const BASE_COLORS: [[f32; 3]; 8] = [
    [0.45, 0.65, 0.95],
    [0.25, 0.60, 0.20],
    [0.10, 0.30, 0.65],
    [0.50, 0.45, 0.42],
    [0.70, 0.35, 0.30],
    [0.10, 0.40, 0.12],
    [0.30, 0.30, 0.32],
    [0.98, 0.85, 0.30],
];

/// One scene: a horizon split into sky and ground, plus a few objects.
pub fn toy_scene(seed: u64, size: usize) -> (Pixels, SemanticLayout) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let horizon = rng.random_range(0.35..0.6) * s;
    let water_top = horizon + rng.random_range(0.15..0.3) * s;
    let has_water = rng.random_bool(0.5);
    let mountain_x = rng.random_range(0.1..0.9) * s;
    let mountain_h = rng.random_range(0.1..0.25) * s;
    let mountain_w = rng.random_range(0.2..0.4) * s;
    let sun = (rng.random_range(0.1..0.9) * s, rng.random_range(0.08..0.25) * s, rng.random_range(0.05..0.1) * s);
    let building = (rng.random_range(0.0..0.8) * s, rng.random_range(0.1..0.25) * s, rng.random_range(0.15..0.35) * s);
    let tree = (rng.random_range(0.1..0.9) * s, rng.random_range(0.07..0.12) * s);
    let road_x = rng.random_range(0.3..0.7) * s;

    let mut labels = vec![0u16; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
            let mut c = if fy < horizon { 0 } else { 1 };
            if fy < horizon && fy > horizon - mountain_h * (1.0 - (fx - mountain_x).abs() / mountain_w) {
                c = 3;
            }
            if ((fx - sun.0).powi(2) + (fy - sun.1).powi(2)).sqrt() < sun.2 && c == 0 {
                c = 7;
            }
            if fx >= building.0 && fx < building.0 + building.1 && fy < horizon + 2.0 && fy > horizon - building.2 {
                c = 4;
            }
            if has_water && fy > water_top {
                c = 2;
            }
            let depth = (fy - horizon) / (s - horizon);
            if !has_water && fy > horizon && (fx - road_x).abs() < 0.03 * s + depth * 0.25 * s {
                c = 6;
            }
            let crown_y = horizon - tree.1 * 1.2;
            if ((fx - tree.0).powi(2) + (fy - crown_y).powi(2)).sqrt() < tree.1
                || ((fx - tree.0).abs() < tree.1 * 0.2 && fy >= crown_y && fy < horizon + 1.0)
            {
                c = 5;
            }
            labels[y * size + x] = c;
        }
    }

    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let c = labels[y * size + x] as usize;
            let texture = 0.06 * ((x as f32 * 0.9 + c as f32).sin() * (y as f32 * 0.7).cos());
            let shade = 0.1 * (y as f32 / s - 0.5);
            for ch in 0..3 {
                let noise: f32 = rng.random_range(-0.03..0.03);
                let v = BASE_COLORS[c][ch] + texture + noise - shade;
                data.push((v.clamp(0.0, 1.0) * 2.0 - 1.0).clamp(-1.0, 1.0));
            }
        }
    }
    // Quantize so that the PNG on disk reproduces the in-memory pixels exactly.
    let pixels = Pixels::new(size, size, data).expect("values clamped into range");
    let pixels = Pixels::from_rgb8(&pixels.to_rgb8());
    let layout = SemanticLayout::new(size, size, labels, TOY_CLASSES.len()).expect("labels in range");
    (pixels, layout)
}

/// Writes `images/`, `layouts/` and `manifest.tsv` under `dir`.
pub fn write_toy_dataset(dir: &Path, size: usize, train: usize, val: usize) -> Result<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("layouts"))?;
    let mut manifest = String::from("# image\tlayout\tsplit\n");
    for i in 0..train + val {
        let (pixels, layout) = toy_scene(i as u64, size);
        let name = format!("scene_{i:03}.png");
        write_rgb(&dir.join("images").join(&name), &pixels)?;
        write_label_map(&dir.join("layouts").join(&name), &layout)?;
        let split = if i < train { "train" } else { "val" };
        manifest.push_str(&format!("images/{name}\tlayouts/{name}\t{split}\n"));
    }
    std::fs::write(dir.join("manifest.tsv"), manifest)?;
    Ok(())
}
