//! Images, label maps, zone combinations and the dataset inventory.

mod io;
mod phantom;
mod split;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

pub use io::{
    image_from_png, image_to_png, load_dataset, mask_from_png, mask_to_png, read_manifest,
    read_mask, write_dataset, write_manifest, write_mask, CLASS_COLORS, IMAGES_DIR, MANIFEST_FILE,
    MASKS_DIR,
};
pub use phantom::{
    generate_dataset, generate_dataset_sized, generate_phantom, generate_phantom_sized, CANVAS,
};
pub use split::{apportion, stratified_split};

use crate::error::{Error, Result};

/// Background plus the four zones.
pub const NUM_CLASSES: usize = 5;
pub const BACKGROUND: u8 = 0;
pub const CZ: u8 = 1;
pub const PZ: u8 = 2;
pub const TZ: u8 = 3;
pub const TUM: u8 = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["BG", "CZ", "PZ", "TZ", "TUM"];

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }
}

/// Per-pixel class indices in `0..NUM_CLASSES`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} label map needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Shape(format!("label {bad} is not a class index")));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Distinct non-background labels.
    pub fn foreground_labels(&self) -> BTreeSet<u8> {
        let mut seen = [false; NUM_CLASSES];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..NUM_CLASSES as u8)
            .filter(|&l| seen[l as usize])
            .collect()
    }
}

/// Which zones an image contains. CZ and PZ are always present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ZoneCombo {
    /// CZ + PZ
    Cp,
    /// CZ + PZ + TZ
    Cpt,
    /// CZ + PZ + tumor
    Cpu,
    /// CZ + PZ + TZ + tumor
    Cptu,
}

impl ZoneCombo {
    pub const ALL: [ZoneCombo; 4] = [
        ZoneCombo::Cp,
        ZoneCombo::Cpt,
        ZoneCombo::Cpu,
        ZoneCombo::Cptu,
    ];

    /// Image counts per combination in the reference clinical dataset.
    pub const REFERENCE_COUNTS: [usize; 4] = [73, 68, 23, 41];

    pub fn code(self) -> &'static str {
        match self {
            ZoneCombo::Cp => "CP",
            ZoneCombo::Cpt => "CPT",
            ZoneCombo::Cpu => "CPU",
            ZoneCombo::Cptu => "CPTU",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn has_tz(self) -> bool {
        matches!(self, ZoneCombo::Cpt | ZoneCombo::Cptu)
    }

    pub fn has_tumor(self) -> bool {
        matches!(self, ZoneCombo::Cpu | ZoneCombo::Cptu)
    }

    pub fn labels(self) -> BTreeSet<u8> {
        let mut s = BTreeSet::from([CZ, PZ]);
        if self.has_tz() {
            s.insert(TZ);
        }
        if self.has_tumor() {
            s.insert(TUM);
        }
        s
    }
}

impl fmt::Display for ZoneCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ZoneCombo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ZoneCombo::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Dataset(format!("unknown zone combination '{s}'")))
    }
}

/// One image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: LabelMap,
    pub combo: ZoneCombo,
}

impl Sample {
    pub fn check(&self) -> Result<()> {
        if (self.image.width(), self.image.height()) != (self.mask.width(), self.mask.height()) {
            return Err(Error::Dataset(format!(
                "{}: image is {}x{} but mask is {}x{}",
                self.id,
                self.image.width(),
                self.image.height(),
                self.mask.width(),
                self.mask.height()
            )));
        }
        if self.mask.foreground_labels() != self.combo.labels() {
            return Err(Error::Dataset(format!(
                "{}: mask zones {:?} do not match combination {}",
                self.id,
                self.mask.foreground_labels(),
                self.combo
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub combo: ZoneCombo,
    pub split: Option<Split>,
}

/// Dataset inventory in id order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn combo_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for e in &self.entries {
            counts[e.combo.index()] += 1;
        }
        counts
    }

    pub fn apply_split(&mut self, split: &SplitSpec) {
        for e in &mut self.entries {
            e.split = split.get(&e.id);
        }
    }

    pub fn ids(&self, which: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.split == Some(which))
            .map(|e| e.id.as_str())
            .collect()
    }
}

/// Deterministic train/test assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    /// Sorted by id.
    pub assignment: Vec<(String, Split)>,
}

impl SplitSpec {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.assignment
            .binary_search_by(|(k, _)| k.as_str().cmp(id))
            .ok()
            .map(|i| self.assignment[i].1)
    }

    pub fn count(&self, which: Split) -> usize {
        self.assignment.iter().filter(|(_, s)| *s == which).count()
    }
}

/// Manifest plus the loaded samples, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, which: Split) -> Vec<&Sample> {
        self.manifest
            .entries
            .iter()
            .zip(&self.samples)
            .filter(|(e, _)| e.split == Some(which))
            .map(|(_, s)| s)
            .collect()
    }

    pub fn apply_split(&mut self, split: &SplitSpec) {
        self.manifest.apply_split(split);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combo_labels() {
        assert_eq!(ZoneCombo::Cp.labels(), BTreeSet::from([1, 2]));
        assert_eq!(ZoneCombo::Cptu.labels(), BTreeSet::from([1, 2, 3, 4]));
        assert_eq!("cpu".parse::<ZoneCombo>().unwrap(), ZoneCombo::Cpu);
        assert!("XYZ".parse::<ZoneCombo>().is_err());
    }

    #[test]
    fn label_map_rejects_unknown_classes() {
        assert!(LabelMap::new(2, 1, vec![0, 5]).is_err());
        assert!(LabelMap::new(2, 1, vec![0]).is_err());
        assert_eq!(
            LabelMap::new(2, 1, vec![0, 4]).unwrap().foreground_labels(),
            BTreeSet::from([4])
        );
    }
}
