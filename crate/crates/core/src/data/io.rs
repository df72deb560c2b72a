//! Dataset directory layout:
//!
//! ```text
//! <dir>/images/<id>.png   8-bit grayscale, value = round(255 * intensity)
//! <dir>/masks/<id>.png    8-bit paletted, pixel index = class
//! <dir>/manifest.csv      id,combo,split
//! ```

use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Image, LabelMap, Manifest, ManifestEntry, Sample, NUM_CLASSES};
use crate::error::{Error, Result};

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const MANIFEST_FILE: &str = "manifest.csv";

/// Display colour per class: BG black, CZ blue, PZ green, TZ yellow, TUM red.
pub const CLASS_COLORS: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [40, 90, 255],
    [40, 200, 60],
    [250, 220, 40],
    [230, 30, 30],
];

fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(data).expect("in-memory png data");
    }
    out
}

/// Decodes an 8-bit single-sample PNG (gray or paletted) to raw samples.
fn decode_png(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::data(path, format!("not a readable PNG: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::data(path, "PNG too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::data(path, format!("corrupt PNG: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight
        || !matches!(
            info.color_type,
            png::ColorType::Grayscale | png::ColorType::Indexed
        )
    {
        return Err(Error::data(
            path,
            format!(
                "expected 8-bit grayscale or paletted PNG, got {:?} {:?}",
                info.color_type, info.bit_depth
            ),
        ));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        pixels.extend_from_slice(&row[..w]);
    }
    Ok((w, h, pixels))
}

pub fn image_to_png(image: &Image) -> Vec<u8> {
    let data: Vec<u8> = image
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    encode_png(
        image.width(),
        image.height(),
        png::ColorType::Grayscale,
        None,
        &data,
    )
}

pub fn image_from_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let (w, h, raw) = decode_png(bytes, path)?;
    Image::new(w, h, raw.into_iter().map(|v| v as f32 / 255.0).collect())
}

pub fn mask_to_png(mask: &LabelMap) -> Vec<u8> {
    let palette = CLASS_COLORS.iter().flatten().copied().collect();
    encode_png(
        mask.width(),
        mask.height(),
        png::ColorType::Indexed,
        Some(palette),
        mask.labels(),
    )
}

/// Parses a mask PNG; any pixel outside `0..NUM_CLASSES` is rejected with
/// its value and position.
pub fn mask_from_png(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let (w, h, raw) = decode_png(bytes, path)?;
    if let Some(i) = raw.iter().position(|&v| v as usize >= NUM_CLASSES) {
        return Err(Error::data(
            path,
            format!(
                "mask pixel value {} at ({}, {}) is not a class index 0..{}",
                raw[i],
                i % w,
                i / w,
                NUM_CLASSES - 1
            ),
        ));
    }
    LabelMap::new(w, h, raw).map_err(|e| Error::data(path, e.to_string()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<LabelMap> {
    mask_from_png(&read_bytes(path)?, path)
}

pub fn write_mask(path: &Path, mask: &LabelMap) -> Result<()> {
    write_bytes(path, &mask_to_png(mask))
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    combo: String,
    split: String,
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &manifest.entries {
        w.serialize(ManifestRow {
            id: e.id.clone(),
            combo: e.combo.code().to_owned(),
            split: e.split.map(|s| s.as_str()).unwrap_or("").to_owned(),
        })
        .map_err(|e| Error::data(&path, e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::data(&path, e.to_string()))?;
    write_bytes(&path, &bytes)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = read_bytes(&path)?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut entries = Vec::new();
    for row in r.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| Error::data(&path, e.to_string()))?;
        let combo = row
            .combo
            .parse()
            .map_err(|e: Error| Error::data(&path, e.to_string()))?;
        let split = if row.split.trim().is_empty() {
            None
        } else {
            Some(
                row.split
                    .parse()
                    .map_err(|e: Error| Error::data(&path, e.to_string()))?,
            )
        };
        entries.push(ManifestEntry {
            id: row.id,
            combo,
            split,
        });
    }
    Ok(Manifest { entries })
}

/// Writes images, masks and the manifest under `dir`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    for s in &dataset.samples {
        write_bytes(
            &dir.join(IMAGES_DIR).join(format!("{}.png", s.id)),
            &image_to_png(&s.image),
        )?;
        write_mask(&dir.join(MASKS_DIR).join(format!("{}.png", s.id)), &s.mask)?;
    }
    write_manifest(dir, &dataset.manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(manifest.len());
    for e in &manifest.entries {
        let ipath = dir.join(IMAGES_DIR).join(format!("{}.png", e.id));
        let mpath = dir.join(MASKS_DIR).join(format!("{}.png", e.id));
        let image = image_from_png(&read_bytes(&ipath)?, &ipath)?;
        let mask = read_mask(&mpath)?;
        if (image.width(), image.height()) != (mask.width(), mask.height()) {
            return Err(Error::data(
                &mpath,
                format!(
                    "mask is {}x{} but image is {}x{}",
                    mask.width(),
                    mask.height(),
                    image.width(),
                    image.height()
                ),
            ));
        }
        let sample = Sample {
            id: e.id.clone(),
            image,
            mask,
            combo: e.combo,
        };
        sample
            .check()
            .map_err(|err| Error::data(&mpath, err.to_string()))?;
        samples.push(sample);
    }
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mask_decodes_to_zeros() {
        let m = LabelMap::filled(5, 3, 0).unwrap();
        let back = mask_from_png(&mask_to_png(&m), Path::new("m.png")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn out_of_range_value_names_the_file() {
        let bytes = encode_png(2, 2, png::ColorType::Grayscale, None, &[0, 1, 7, 2]);
        let err = mask_from_png(&bytes, Path::new("masks/bad.png")).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("masks/bad.png") && msg.contains("value 7"),
            "{msg}"
        );
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn image_round_trip_is_exact_on_8bit_levels() {
        let px: Vec<f32> = (0..12).map(|i| (i * 20) as f32 / 255.0).collect();
        let im = Image::new(4, 3, px).unwrap();
        let back = image_from_png(&image_to_png(&im), Path::new("i.png")).unwrap();
        assert_eq!(back, im);
    }
}
