//! Synthetic prostate-like phantoms with exact zone masks.
//!
//! Geometry: a large CZ ellipse, a posterior PZ crescent hugging it, an
//! optional TZ ellipse inside the CZ and an optional irregular tumor blob
//! centred on the CZ/PZ border. Labels are painted in the order
//! CZ, PZ, TZ, TUM so later zones win.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    apportion, Dataset, Image, LabelMap, Manifest, ManifestEntry, Sample, ZoneCombo, CZ, PZ, TUM,
    TZ,
};
use crate::error::{Error, Result};

/// Default canvas edge length in pixels.
pub const CANVAS: usize = 256;

/// Mean intensity per class (BG, CZ, PZ, TZ, TUM).
const CLASS_MEANS: [f64; 5] = [0.1, 0.55, 0.4, 0.7, 0.85];
const NOISE_SIGMA: f64 = 0.05;
const BLUR_SIGMA: f64 = 1.0;
/// Zones smaller than this are redrawn so every label survives downsampling.
const MIN_ZONE_PIXELS: usize = 12;
/// Below this canvas size the minimum zone area shrinks with the canvas.
const MIN_ZONE_CANVAS: usize = 64;
const MAX_ATTEMPTS: usize = 64;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn new(cx: f64, cy: f64, a: f64, b: f64, angle: f64) -> Self {
        Ellipse {
            cx,
            cy,
            a,
            b,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }

    /// Coordinates in the ellipse frame, normalized by the semi-axes.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a, v / self.b)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x, y);
        u * u + v * v <= 1.0
    }

    fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        (
            self.cx + u * self.cos - v * self.sin,
            self.cy + u * self.sin + v * self.cos,
        )
    }
}

fn draw_mask(rng: &mut ChaCha8Rng, combo: ZoneCombo, size: usize) -> Vec<u8> {
    let s = size as f64 / CANVAS as f64;
    let mid = size as f64 / 2.0;
    let angle = rng.random_range(-0.35..0.35);
    let cz = Ellipse::new(
        mid + rng.random_range(-10.0..10.0) * s,
        mid + rng.random_range(-8.0..8.0) * s,
        rng.random_range(44.0..58.0) * s,
        rng.random_range(34.0..46.0) * s,
        angle,
    );
    // the outer PZ boundary sits lower (posterior), giving a crescent
    let shift = cz.b * rng.random_range(0.25..0.35);
    let pz_outer = Ellipse::new(
        cz.cx - shift * angle.sin(),
        cz.cy + shift * angle.cos(),
        cz.a * rng.random_range(1.25..1.4),
        cz.b * rng.random_range(1.35..1.55),
        angle,
    );
    let crescent_cut = -rng.random_range(0.2..0.45);
    let tz = combo.has_tz().then(|| {
        let lift = cz.b * rng.random_range(0.1..0.25);
        Ellipse::new(
            cz.cx + rng.random_range(-5.0..5.0) * s + lift * angle.sin(),
            cz.cy - lift * angle.cos(),
            cz.a * rng.random_range(0.35..0.5),
            cz.b * rng.random_range(0.35..0.5),
            angle + rng.random_range(-0.2..0.2),
        )
    });
    let tumor = combo.has_tumor().then(|| {
        let t = rng.random_range(0.15..0.85) * std::f64::consts::PI;
        let (tx, ty) = cz.boundary_point(t);
        let r0 = rng.random_range(9.0..15.0) * s;
        let harmonics: Vec<(f64, f64, f64)> = (2..=4)
            .map(|k| {
                (
                    k as f64,
                    rng.random_range(0.05..0.25),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        (tx, ty, r0, harmonics)
    });

    let mut mask = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut label = 0;
            let in_cz = cz.contains(px, py);
            if in_cz {
                label = CZ;
            } else if pz_outer.contains(px, py) && cz.local(px, py).1 > crescent_cut {
                label = PZ;
            }
            if let Some(tz) = &tz {
                if in_cz && tz.contains(px, py) {
                    label = TZ;
                }
            }
            if let Some((tx, ty, r0, harmonics)) = &tumor {
                let (dx, dy) = (px - tx, py - ty);
                let phi = dy.atan2(dx);
                let r = r0
                    * (1.0
                        + harmonics
                            .iter()
                            .map(|(k, a, p)| a * (k * phi + p).sin())
                            .sum::<f64>());
                if dx * dx + dy * dy <= r * r {
                    label = TUM;
                }
            }
            mask[y * size + x] = label;
        }
    }
    mask
}

fn render_image(rng: &mut ChaCha8Rng, mask: &[u8], size: usize) -> Vec<f32> {
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let raw: Vec<f64> = mask
        .iter()
        .map(|&l| CLASS_MEANS[l as usize] + noise.sample(rng))
        .collect();
    let blurred = gaussian_blur(&raw, size, size, BLUR_SIGMA);
    // quantized to the 8-bit levels the PNG codec stores
    blurred
        .into_iter()
        .map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32)
        .collect()
}

/// Separable Gaussian blur with clamped borders.
fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * src[y * w + clamp(x as isize + i as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * tmp[clamp(y as isize + i as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

fn min_zone_pixels(size: usize) -> usize {
    if size >= MIN_ZONE_CANVAS {
        MIN_ZONE_PIXELS
    } else {
        (MIN_ZONE_PIXELS * size * size).div_ceil(MIN_ZONE_CANVAS * MIN_ZONE_CANVAS)
    }
}

fn zone_sizes_ok(mask: &[u8], combo: ZoneCombo, min_pixels: usize) -> bool {
    let mut counts = [0usize; 5];
    for &l in mask {
        counts[l as usize] += 1;
    }
    (1..5u8).all(|l| {
        let wanted = combo.labels().contains(&l);
        if wanted {
            counts[l as usize] >= min_pixels
        } else {
            counts[l as usize] == 0
        }
    })
}

/// One phantom on the default 256x256 canvas.
pub fn generate_phantom(seed: u64, combo: ZoneCombo) -> Sample {
    generate_phantom_sized(seed, combo, CANVAS)
}

/// One phantom on a `size`x`size` canvas (geometry scales with `size`).
pub fn generate_phantom_sized(seed: u64, combo: ZoneCombo, size: usize) -> Sample {
    let id = format!("{}_{seed}", combo.code().to_ascii_lowercase());
    build_sample(id, seed, combo, size)
}

fn build_sample(id: String, seed: u64, combo: ZoneCombo, size: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed));
    let min_pixels = min_zone_pixels(size);
    let mut mask = draw_mask(&mut rng, combo, size);
    for _ in 1..MAX_ATTEMPTS {
        if zone_sizes_ok(&mask, combo, min_pixels) {
            break;
        }
        mask = draw_mask(&mut rng, combo, size);
    }
    assert!(
        zone_sizes_ok(&mask, combo, min_pixels),
        "phantom {id} could not realize {combo} on a {size}px canvas"
    );
    let pixels = render_image(&mut rng, &mask, size);
    Sample {
        id,
        image: Image::new(size, size, pixels).expect("square canvas"),
        mask: LabelMap::new(size, size, mask).expect("valid labels"),
        combo,
    }
}

/// `total` phantoms with combination counts apportioned 73:68:23:41.
/// Ids are `img_0000`, `img_0001`, ... grouped by combination.
pub fn generate_dataset(seed: u64, total: usize) -> Result<Dataset> {
    generate_dataset_sized(seed, total, CANVAS)
}

pub fn generate_dataset_sized(seed: u64, total: usize, size: usize) -> Result<Dataset> {
    if total < ZoneCombo::ALL.len() {
        return Err(Error::Usage(format!(
            "need at least {} samples (one per zone combination), got {total}",
            ZoneCombo::ALL.len()
        )));
    }
    if size < 32 {
        return Err(Error::Usage(format!(
            "canvas must be at least 32px, got {size}"
        )));
    }
    let counts = apportion(total, &ZoneCombo::REFERENCE_COUNTS);
    let width = total.to_string().len().max(4);
    let mut entries = Vec::with_capacity(total);
    let mut samples = Vec::with_capacity(total);
    let mut index = 0u64;
    for (combo, &n) in ZoneCombo::ALL.iter().zip(&counts) {
        for _ in 0..n {
            let id = format!("img_{index:0width$}");
            let sample_seed = splitmix(seed ^ splitmix(index));
            samples.push(build_sample(id.clone(), sample_seed, *combo, size));
            entries.push(ManifestEntry {
                id,
                combo: *combo,
                split: None,
            });
            index += 1;
        }
    }
    Ok(Dataset {
        manifest: Manifest { entries },
        samples,
    })
}
