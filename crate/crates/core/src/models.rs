//! Architecture registry and U-Net assembly.

use std::fmt;
use std::str::FromStr;

use crate::blocks::{AttentionGate, BlockSpec, FeatureBlock, FeaturePyramidAttention};
use crate::data::{Image, LabelMap};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::params::{Conv2d, ConvTranspose2d, Init, ParamStore};
use crate::tensor::{Float, Shape, Tensor};

/// Dense blocks use four 3x3 layers.
pub const DENSE_LAYERS: usize = 4;
/// Recurrence steps of each recurrent conv unit.
pub const RRC_STEPS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    Unet,
    AttUnet,
    FauNet,
    DenseUnet,
    AttDenseUnet,
    R2Unet,
    AttR2Unet,
}

impl Arch {
    /// In order of increasing parameter count.
    pub const ALL: [Arch; 7] = [
        Arch::Unet,
        Arch::AttUnet,
        Arch::FauNet,
        Arch::DenseUnet,
        Arch::AttDenseUnet,
        Arch::R2Unet,
        Arch::AttR2Unet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Unet => "unet",
            Arch::AttUnet => "att_unet",
            Arch::FauNet => "fau_net",
            Arch::DenseUnet => "dense_unet",
            Arch::AttDenseUnet => "att_dense_unet",
            Arch::R2Unet => "r2unet",
            Arch::AttR2Unet => "att_r2unet",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Unet => "U-Net",
            Arch::AttUnet => "Attention U-Net",
            Arch::FauNet => "FAU-Net",
            Arch::DenseUnet => "Dense U-Net",
            Arch::AttDenseUnet => "Attention Dense U-Net",
            Arch::R2Unet => "R2U-Net",
            Arch::AttR2Unet => "Attention R2U-Net",
        }
    }

    /// Published trainable-parameter count for the reference build.
    pub fn reference_params(self) -> usize {
        match self {
            Arch::Unet => 1_940_885,
            Arch::AttUnet => 1_995_409,
            Arch::FauNet => 2_158_505,
            Arch::DenseUnet => 4_238_389,
            Arch::AttDenseUnet => 4_271_521,
            Arch::R2Unet => 6_003_077,
            Arch::AttR2Unet => 6_036_081,
        }
    }

    /// Allowed relative deviation from [`Arch::reference_params`].
    pub fn param_tolerance(self) -> f64 {
        match self {
            Arch::Unet => 0.005,
            Arch::AttUnet => 0.03,
            Arch::FauNet => 0.08,
            _ => 0.20,
        }
    }

    fn block_spec(self, in_channels: usize, out_channels: usize) -> BlockSpec {
        match self {
            Arch::Unet | Arch::AttUnet | Arch::FauNet => {
                BlockSpec::double_conv(in_channels, out_channels)
            }
            Arch::DenseUnet | Arch::AttDenseUnet => BlockSpec::dense(
                in_channels,
                out_channels,
                (out_channels / 2).max(1),
                DENSE_LAYERS,
            ),
            Arch::R2Unet | Arch::AttR2Unet => BlockSpec::rrc(in_channels, out_channels, RRC_STEPS),
        }
    }

    fn skip_kind(self, level: usize) -> SkipKind {
        match self {
            Arch::Unet | Arch::DenseUnet | Arch::R2Unet => SkipKind::Plain,
            Arch::AttUnet | Arch::AttDenseUnet | Arch::AttR2Unet => SkipKind::Gate,
            Arch::FauNet if level == 0 => SkipKind::Pyramid,
            Arch::FauNet => SkipKind::Gate,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        Arch::ALL
            .into_iter()
            .find(|a| a.name().replace('_', "") == key)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown architecture '{s}' (expected one of: {})",
                    Arch::ALL.map(Arch::name).join(", ")
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsample {
    TransposedConv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Number of 2x2 poolings.
    pub depth: usize,
    /// Width of the finest level; doubles per level.
    pub base_channels: usize,
    pub upsample: Upsample,
}

impl ModelConfig {
    pub fn new(arch: Arch) -> Self {
        ModelConfig {
            arch,
            in_channels: 1,
            num_classes: 5,
            depth: 4,
            base_channels: 16,
            upsample: Upsample::TransposedConv,
        }
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn bottleneck_width(&self) -> usize {
        self.width(self.depth)
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        let m = 1 << self.depth;
        // the pyramid at the finest skip needs three more halvings
        if self.arch == Arch::FauNet {
            m.max(8)
        } else {
            m
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.depth < 1 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.in_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SkipKind {
    Plain,
    Gate,
    Pyramid,
}

#[derive(Clone, Debug)]
enum SkipAttention {
    Plain,
    Gate(AttentionGate),
    Pyramid(Box<FeaturePyramidAttention>),
}

/// An assembled encoder-decoder with its parameters.
#[derive(Clone, Debug)]
pub struct Model<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    encoder: Vec<FeatureBlock>,
    skips: Vec<SkipAttention>,
    ups: Vec<ConvTranspose2d>,
    decoder: Vec<FeatureBlock>,
    head: Conv2d,
}

/// Trainable-parameter count with a per-layer breakdown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamReport {
    pub arch: Arch,
    pub total: usize,
    pub layers: Vec<(String, usize)>,
}

impl ParamReport {
    pub fn relative_delta(&self) -> f64 {
        let reference = self.arch.reference_params() as f64;
        (self.total as f64 - reference) / reference
    }

    pub fn within_tolerance(&self) -> bool {
        self.relative_delta().abs() <= self.arch.param_tolerance()
    }
}

/// Builds a model with seed-0 initialization.
pub fn build<F: Float>(config: ModelConfig) -> Result<Model<F>> {
    Model::new(config, 0)
}

impl<F: Float> Model<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let arch = config.arch;
        let depth = config.depth;

        let mut encoder = Vec::with_capacity(depth + 1);
        let mut in_c = config.in_channels;
        for level in 0..=depth {
            let out_c = config.width(level);
            let name = if level == depth {
                "bottleneck".to_owned()
            } else {
                format!("enc{}", level + 1)
            };
            encoder.push(FeatureBlock::new(
                arch.block_spec(in_c, out_c),
                &mut params,
                &mut init,
                &name,
            )?);
            in_c = out_c;
        }

        let mut skips = Vec::with_capacity(depth);
        let mut ups = Vec::with_capacity(depth);
        let mut decoder = Vec::with_capacity(depth);
        for level in 0..depth {
            let c = config.width(level);
            let n = level + 1;
            skips.push(match arch.skip_kind(level) {
                SkipKind::Plain => SkipAttention::Plain,
                SkipKind::Gate => SkipAttention::Gate(AttentionGate::new(
                    BlockSpec::attention_gate(c, c),
                    &mut params,
                    &mut init,
                    &format!("gate{n}"),
                )?),
                SkipKind::Pyramid => {
                    SkipAttention::Pyramid(Box::new(FeaturePyramidAttention::new(
                        BlockSpec::fpa(c),
                        &mut params,
                        &mut init,
                        &format!("fpa{n}"),
                    )?))
                }
            });
            ups.push(ConvTranspose2d::new(
                &mut params,
                &mut init,
                &format!("up{n}"),
                2 * c,
                c,
                2,
            ));
            decoder.push(FeatureBlock::new(
                arch.block_spec(2 * c, c),
                &mut params,
                &mut init,
                &format!("dec{n}"),
            )?);
        }
        let head = Conv2d::new(
            &mut params,
            &mut init,
            "head",
            config.base_channels,
            config.num_classes,
            ConvGeom::same(1),
        );
        Ok(Model {
            config,
            params,
            encoder,
            skips,
            ups,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn attention_gate_count(&self) -> usize {
        self.skips
            .iter()
            .filter(|s| matches!(s, SkipAttention::Gate(_)))
            .count()
    }

    pub fn pyramid_count(&self) -> usize {
        self.skips
            .iter()
            .filter(|s| matches!(s, SkipAttention::Pyramid(_)))
            .count()
    }

    pub fn check_input(&self, s: Shape) -> Result<()> {
        let m = self.config.size_multiple();
        if s.c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "{} expects {} input channel(s), got {}",
                self.arch(),
                self.config.in_channels,
                s.c
            )));
        }
        if !s.h.is_multiple_of(m) || !s.w.is_multiple_of(m) || s.h == 0 || s.w == 0 {
            return Err(Error::Shape(format!(
                "{} needs height and width divisible by {m}, got {}x{}",
                self.arch(),
                s.h,
                s.w
            )));
        }
        Ok(())
    }

    /// Records the forward pass on `g` and returns the logits node.
    pub fn forward(&self, g: &mut Graph<F>, x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let p = &self.params;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut h = x;
        for block in &self.encoder[..depth] {
            let f = block.forward(g, p, h)?;
            skips.push(f);
            h = g.max_pool2(f)?;
        }
        h = self.encoder[depth].forward(g, p, h)?;
        for level in (0..depth).rev() {
            let up = self.ups[level].forward(g, p, h)?;
            let skip = match &self.skips[level] {
                SkipAttention::Plain => skips[level],
                SkipAttention::Gate(ag) => ag.forward(g, p, skips[level], h)?,
                SkipAttention::Pyramid(fpa) => fpa.forward(g, p, skips[level])?,
            };
            let merged = g.concat(&[skip, up])?;
            h = self.decoder[level].forward(g, p, merged)?;
        }
        self.head.forward(g, p, h)
    }

    /// Inference-only forward pass on an NCHW batch.
    pub fn logits(&self, batch: Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let x = g.input(batch);
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }
}

/// Exact trainable-parameter count, grouped by layer path.
pub fn count_parameters<F: Float>(model: &Model<F>) -> ParamReport {
    let mut layers: Vec<(String, usize)> = Vec::new();
    for (_, name, t) in model.params().iter() {
        let layer = name
            .strip_suffix(".weight")
            .or_else(|| name.strip_suffix(".bias"))
            .unwrap_or(name);
        match layers.last_mut() {
            Some((last, count)) if last == layer => *count += t.numel(),
            _ => layers.push((layer.to_owned(), t.numel())),
        }
    }
    ParamReport {
        arch: model.arch(),
        total: model.params().numel(),
        layers,
    }
}

/// Stacks single-channel images into an `(n, 1, h, w)` batch.
pub fn image_batch<F: Float>(images: &[&Image]) -> Result<Tensor<F>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        if (im.height(), im.width()) != (h, w) {
            return Err(Error::Shape(format!(
                "image batch mixes {}x{} with {}x{}",
                h,
                w,
                im.height(),
                im.width()
            )));
        }
        data.extend(im.pixels().iter().map(|&v| F::from_f64_lossy(v as f64)));
    }
    Tensor::from_vec(Shape::new(images.len(), 1, h, w), data)
}

/// Per-pixel argmax over the class axis; ties go to the smaller class index.
pub fn argmax_labels<F: Float>(logits: &Tensor<F>) -> Vec<LabelMap> {
    let s = logits.shape();
    let p = s.plane();
    (0..s.n)
        .map(|n| {
            let item = logits.item(n);
            let labels = (0..p)
                .map(|q| {
                    let mut best = 0;
                    for c in 1..s.c {
                        if item[c * p + q] > item[best * p + q] {
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::new(s.w, s.h, labels).expect("argmax map has the logits' size")
        })
        .collect()
}

/// Predicted label maps for a batch of images.
pub fn predict_labels<F: Float>(model: &Model<F>, images: &[&Image]) -> Result<Vec<LabelMap>> {
    let batch = image_batch(images)?;
    let logits = model.logits(batch)?;
    Ok(argmax_labels(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_names_round_trip() {
        for a in Arch::ALL {
            assert_eq!(a.name().parse::<Arch>().unwrap(), a);
        }
        assert_eq!("FAU-Net".parse::<Arch>().unwrap(), Arch::FauNet);
        assert_eq!("Att_R2UNet".parse::<Arch>().unwrap(), Arch::AttR2Unet);
        assert!(matches!("swin_unet".parse::<Arch>(), Err(Error::Config(_))));
    }

    #[test]
    fn fau_net_has_three_gates_and_one_pyramid() {
        let m = build::<f32>(ModelConfig::new(Arch::FauNet).with_base_channels(2)).unwrap();
        assert_eq!(m.attention_gate_count(), 3);
        assert_eq!(m.pyramid_count(), 1);
        let att = build::<f32>(ModelConfig::new(Arch::AttUnet).with_base_channels(2)).unwrap();
        assert_eq!(att.attention_gate_count(), 4);
        assert_eq!(att.pyramid_count(), 0);
        let plain = build::<f32>(ModelConfig::new(Arch::Unet).with_base_channels(2)).unwrap();
        assert_eq!(plain.attention_gate_count() + plain.pyramid_count(), 0);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let m = build::<f32>(ModelConfig::new(Arch::AttR2Unet).with_base_channels(4)).unwrap();
        let r = count_parameters(&m);
        assert_eq!(r.layers.iter().map(|(_, c)| c).sum::<usize>(), r.total);
        assert!(r.layers.iter().any(|(l, _)| l == "gate4.psi"));
        assert_eq!(r.layers.first().unwrap().0, "enc1.project");
    }

    #[test]
    fn argmax_ties_pick_smallest_class() {
        let logits = Tensor::<f32>::zeros((1, 5, 2, 3));
        let maps = argmax_labels(&logits);
        assert!(maps[0].labels().iter().all(|&l| l == 0));

        let crafted = [3u8, 1, 4, 0, 2, 2];
        let onehot = Tensor::<f32>::from_fn((1, 5, 2, 3), |[_, c, y, x]| {
            if crafted[y * 3 + x] as usize == c {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(argmax_labels(&onehot)[0].labels(), &crafted);
    }

    #[test]
    fn rejects_bad_input_sizes() {
        let m = build::<f32>(ModelConfig::new(Arch::Unet).with_base_channels(2)).unwrap();
        let im = Image::new(24, 24, vec![0.0; 24 * 24]).unwrap();
        let err = predict_labels(&m, &[&im]).unwrap_err();
        assert!(
            matches!(err, Error::Shape(ref msg) if msg.contains("divisible by 16")),
            "{err}"
        );
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = ModelConfig::new(Arch::Unet);
        c.num_classes = 1;
        assert!(build::<f32>(c).is_err());
        assert!(build::<f32>(ModelConfig::new(Arch::Unet).with_depth(0)).is_err());
    }
}
