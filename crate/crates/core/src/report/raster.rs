//! A minimal RGB canvas with rectangles, lines, dots and bitmap text.

use std::path::Path;

use super::font::{glyph, GLYPH_H, GLYPH_W};
use crate::data::{Image, LabelMap, CLASS_COLORS};
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];
pub const GRAY: Rgb = [200, 200, 200];
pub const DARK_GRAY: Rgb = [90, 90, 90];
pub const RED: Rgb = [220, 20, 20];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, background: Rgb) -> Self {
        Canvas {
            width,
            height,
            pixels: vec![background; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    /// Out-of-range coordinates are ignored.
    pub fn set(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = c;
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    /// Rectangle outline drawn inward with the given thickness.
    pub fn outline(&mut self, x: i64, y: i64, w: i64, h: i64, thickness: i64, c: Rgb) {
        self.fill_rect(x, y, w, thickness, c);
        self.fill_rect(x, y + h - thickness, w, thickness, c);
        self.fill_rect(x, y, thickness, h, c);
        self.fill_rect(x + w - thickness, y, thickness, h, c);
    }

    pub fn hline(&mut self, x0: i64, x1: i64, y: i64, c: Rgb) {
        self.fill_rect(x0.min(x1), y, (x1 - x0).abs() + 1, 1, c);
    }

    pub fn vline(&mut self, x: i64, y0: i64, y1: i64, c: Rgb) {
        self.fill_rect(x, y0.min(y1), 1, (y1 - y0).abs() + 1, c);
    }

    /// Filled disc.
    pub fn dot(&mut self, cx: i64, cy: i64, r: i64, c: Rgb) {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    self.set(cx + dx, cy + dy, c);
                }
            }
        }
    }

    pub fn text_width(s: &str, scale: usize) -> usize {
        let n = s.chars().count();
        if n == 0 {
            0
        } else {
            (n * (GLYPH_W + 1) - 1) * scale
        }
    }

    pub fn text_height(scale: usize) -> usize {
        GLYPH_H * scale
    }

    /// Draws `s` with its top-left corner at `(x, y)`.
    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: usize, c: Rgb) {
        let sc = scale as i64;
        for (i, ch) in s.chars().enumerate() {
            let ox = x + i as i64 * (GLYPH_W as i64 + 1) * sc;
            for (row, bits) in glyph(ch).iter().enumerate() {
                for col in 0..GLYPH_W {
                    if bits >> (GLYPH_W - 1 - col) & 1 == 1 {
                        self.fill_rect(ox + col as i64 * sc, y + row as i64 * sc, sc, sc, c);
                    }
                }
            }
        }
    }

    /// Grayscale image sampled every `step` pixels.
    pub fn blit_image(&mut self, x: i64, y: i64, image: &Image, step: usize) {
        let step = step.max(1);
        for (py, sy) in (0..image.height()).step_by(step).enumerate() {
            for (px, sx) in (0..image.width()).step_by(step).enumerate() {
                let v =
                    (image.pixels()[sy * image.width() + sx].clamp(0.0, 1.0) * 255.0).round() as u8;
                self.set(x + px as i64, y + py as i64, [v, v, v]);
            }
        }
    }

    /// Label map in the class colours, sampled every `step` pixels.
    pub fn blit_labels(&mut self, x: i64, y: i64, labels: &LabelMap, step: usize) {
        let step = step.max(1);
        for (py, sy) in (0..labels.height()).step_by(step).enumerate() {
            for (px, sx) in (0..labels.width()).step_by(step).enumerate() {
                self.set(
                    x + px as i64,
                    y + py as i64,
                    CLASS_COLORS[labels.get(sx, sy) as usize],
                );
            }
        }
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Balanced);
            let mut w = enc.write_header().expect("in-memory png header");
            let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
            w.write_image_data(&raw).expect("in-memory png data");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png()).map_err(|e| Error::io(path, e))
    }
}
