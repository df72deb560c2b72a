//! Building blocks shared by every architecture in the zoo.
//!
//! All convolutions carry a bias, there is no normalization, and ReLU is the
//! only hidden activation. Spatial size is preserved by same-padding except
//! inside the pyramid of [`FeaturePyramidAttention`].

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::ConvGeom;
use crate::params::{Conv2d, Init, ParamStore};
use crate::tensor::Float;

/// Block-specific hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    DoubleConv,
    /// Additive attention gate with `inter_channels` (F_int) hidden channels.
    AttentionGate {
        inter_channels: usize,
    },
    /// Feature pyramid attention (7x7 / 5x5 / 3x3 pyramid).
    Fpa,
    /// `layers` 3x3 convs each adding `growth` channels, then a 1x1 transition.
    Dense {
        growth: usize,
        layers: usize,
    },
    /// Two recurrent conv units with `steps` recurrences each.
    Rrc {
        steps: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kind: BlockKind,
}

impl BlockSpec {
    pub fn double_conv(in_channels: usize, out_channels: usize) -> Self {
        BlockSpec {
            in_channels,
            out_channels,
            kind: BlockKind::DoubleConv,
        }
    }

    /// Gate over a skip feature with `channels` channels; the gating signal
    /// must carry `2 * channels`.
    pub fn attention_gate(channels: usize, inter_channels: usize) -> Self {
        BlockSpec {
            in_channels: channels,
            out_channels: channels,
            kind: BlockKind::AttentionGate { inter_channels },
        }
    }

    pub fn fpa(channels: usize) -> Self {
        BlockSpec {
            in_channels: channels,
            out_channels: channels,
            kind: BlockKind::Fpa,
        }
    }

    pub fn dense(in_channels: usize, out_channels: usize, growth: usize, layers: usize) -> Self {
        BlockSpec {
            in_channels,
            out_channels,
            kind: BlockKind::Dense { growth, layers },
        }
    }

    pub fn rrc(in_channels: usize, out_channels: usize, steps: usize) -> Self {
        BlockSpec {
            in_channels,
            out_channels,
            kind: BlockKind::Rrc { steps },
        }
    }

    pub fn validate(&self, layer: &str) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!(
                "{layer}: channel counts must be positive (got {} -> {})",
                self.in_channels, self.out_channels
            )));
        }
        match self.kind {
            BlockKind::AttentionGate { inter_channels: 0 } => Err(Error::Config(format!(
                "{layer}: attention gate needs inter_channels > 0"
            ))),
            BlockKind::AttentionGate { .. } | BlockKind::Fpa
                if self.in_channels != self.out_channels =>
            {
                Err(Error::Config(format!(
                    "{layer}: attention blocks keep their channel count ({} != {})",
                    self.in_channels, self.out_channels
                )))
            }
            BlockKind::Dense { growth: 0, .. } => Err(Error::Config(format!(
                "{layer}: dense growth rate must be positive"
            ))),
            BlockKind::Dense { layers: 0, .. } => Err(Error::Config(format!(
                "{layer}: dense block needs at least one layer"
            ))),
            BlockKind::Rrc { steps } if steps < 1 => Err(Error::Config(format!(
                "{layer}: recurrent block needs t >= 1, got {steps}"
            ))),
            _ => Ok(()),
        }
    }
}

fn check_channels<F: Float>(g: &Graph<F>, x: Var, expected: usize, layer: &str) -> Result<()> {
    let c = g.shape(x).c;
    if c != expected {
        return Err(Error::Config(format!(
            "{layer}: expected {expected} input channels, got {c}"
        )));
    }
    Ok(())
}

/// Two 3x3 conv + ReLU layers.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    name: String,
    spec: BlockSpec,
    conv1: Conv2d,
    conv2: Conv2d,
}

impl DoubleConv {
    pub fn new<F: Float>(
        spec: BlockSpec,
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
    ) -> Result<Self> {
        spec.validate(name)?;
        if spec.kind != BlockKind::DoubleConv {
            return Err(Error::Config(format!("{name}: not a double-conv spec")));
        }
        Ok(DoubleConv {
            name: name.to_owned(),
            spec,
            conv1: Conv2d::new(
                store,
                init,
                &format!("{name}.conv1"),
                spec.in_channels,
                spec.out_channels,
                ConvGeom::same(3),
            ),
            conv2: Conv2d::new(
                store,
                init,
                &format!("{name}.conv2"),
                spec.out_channels,
                spec.out_channels,
                ConvGeom::same(3),
            ),
        })
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        check_channels(g, x, self.spec.in_channels, &self.name)?;
        let h = self.conv1.forward(g, store, x)?;
        let h = g.relu(h);
        let h = self.conv2.forward(g, store, h)?;
        Ok(g.relu(h))
    }
}

/// Additive attention gate. The attention coefficients are computed at the
/// gating signal's resolution (half the skip feature's) and upsampled by
/// nearest neighbour before rescaling the skip feature.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    name: String,
    channels: usize,
    theta_x: Conv2d,
    theta_g: Conv2d,
    psi: Conv2d,
}

impl AttentionGate {
    pub fn new<F: Float>(
        spec: BlockSpec,
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
    ) -> Result<Self> {
        spec.validate(name)?;
        let BlockKind::AttentionGate { inter_channels } = spec.kind else {
            return Err(Error::Config(format!("{name}: not an attention-gate spec")));
        };
        let c = spec.in_channels;
        let stride2 = ConvGeom {
            kernel: 1,
            stride: 2,
            padding: 0,
        };
        Ok(AttentionGate {
            name: name.to_owned(),
            channels: c,
            theta_x: Conv2d::new(
                store,
                init,
                &format!("{name}.theta_x"),
                c,
                inter_channels,
                stride2,
            ),
            theta_g: Conv2d::new(
                store,
                init,
                &format!("{name}.theta_g"),
                2 * c,
                inter_channels,
                ConvGeom::same(1),
            ),
            psi: Conv2d::new(
                store,
                init,
                &format!("{name}.psi"),
                inter_channels,
                1,
                ConvGeom::same(1),
            ),
        })
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        gate: Var,
    ) -> Result<Var> {
        Ok(self.forward_with_map(g, store, x, gate)?.0)
    }

    /// Returns `(x * alpha, alpha)` with alpha of shape `(n, 1, h, w)`.
    pub fn forward_with_map<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
        gate: Var,
    ) -> Result<(Var, Var)> {
        let (xs, gs) = (g.shape(x), g.shape(gate));
        if xs.h != 2 * gs.h || xs.w != 2 * gs.w || xs.n != gs.n {
            return Err(Error::Shape(format!(
                "{}: skip feature {xs} and gating signal {gs} are not in a 2:1 spatial ratio",
                self.name
            )));
        }
        check_channels(g, x, self.channels, &self.name)?;
        check_channels(g, gate, 2 * self.channels, &self.name)?;
        let tx = self.theta_x.forward(g, store, x)?;
        let tg = self.theta_g.forward(g, store, gate)?;
        let q = g.add(tx, tg)?;
        let q = g.relu(q);
        let a = self.psi.forward(g, store, q)?;
        let a = g.sigmoid(a);
        let alpha = g.upsample(a, 2);
        let out = g.mul_channels(x, alpha)?;
        Ok((out, alpha))
    }
}

/// Feature pyramid attention over a skip feature: a 7x7 / 5x5 / 3x3
/// stride-2 pyramid whose per-level responses are merged coarse-to-fine,
/// squashed with a sigmoid, and used to rescale a 1x1 projection of the input.
#[derive(Clone, Debug)]
pub struct FeaturePyramidAttention {
    name: String,
    channels: usize,
    down: [Conv2d; 3],
    level: [Conv2d; 3],
    project: Conv2d,
}

const PYRAMID_KERNELS: [usize; 3] = [7, 5, 3];

impl FeaturePyramidAttention {
    pub fn new<F: Float>(
        spec: BlockSpec,
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
    ) -> Result<Self> {
        spec.validate(name)?;
        if spec.kind != BlockKind::Fpa {
            return Err(Error::Config(format!("{name}: not an FPA spec")));
        }
        let c = spec.in_channels;
        let down = PYRAMID_KERNELS.map(|k| {
            let geom = ConvGeom {
                kernel: k,
                stride: 2,
                padding: k / 2,
            };
            Conv2d::new(store, init, &format!("{name}.down{k}"), c, c, geom)
        });
        let level = PYRAMID_KERNELS.map(|k| {
            Conv2d::new(
                store,
                init,
                &format!("{name}.level{k}"),
                c,
                c,
                ConvGeom::same(k),
            )
        });
        Ok(FeaturePyramidAttention {
            name: name.to_owned(),
            channels: c,
            down,
            level,
            project: Conv2d::new(
                store,
                init,
                &format!("{name}.project"),
                c,
                c,
                ConvGeom::same(1),
            ),
        })
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        Ok(self.forward_with_map(g, store, x)?.0)
    }

    /// Returns `(sigmoid(map) * project(x), sigmoid(map))`.
    pub fn forward_with_map<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<(Var, Var)> {
        let s = g.shape(x);
        if !s.h.is_multiple_of(8) || !s.w.is_multiple_of(8) {
            return Err(Error::Shape(format!(
                "{}: feature pyramid attention needs height and width divisible by 8, got {}x{}",
                self.name, s.h, s.w
            )));
        }
        check_channels(g, x, self.channels, &self.name)?;
        let mut h = x;
        let mut responses = Vec::with_capacity(3);
        for (down, level) in self.down.iter().zip(&self.level) {
            let d = down.forward(g, store, h)?;
            h = g.relu(d);
            responses.push(level.forward(g, store, h)?);
        }
        // coarse-to-fine integration: S/8 -> S/4 -> S/2 -> S
        let mut map = responses[2];
        for &finer in responses[..2].iter().rev() {
            let up = g.upsample(map, 2);
            map = g.add(up, finer)?;
        }
        let map = g.upsample(map, 2);
        let att = g.sigmoid(map);
        let proj = self.project.forward(g, store, x)?;
        let out = g.mul_channels(proj, att)?;
        Ok((out, att))
    }
}

/// Densely connected 3x3 layers followed by a 1x1 transition.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    name: String,
    in_channels: usize,
    layers: Vec<Conv2d>,
    transition: Conv2d,
}

impl DenseBlock {
    pub fn new<F: Float>(
        spec: BlockSpec,
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
    ) -> Result<Self> {
        spec.validate(name)?;
        let BlockKind::Dense { growth, layers } = spec.kind else {
            return Err(Error::Config(format!("{name}: not a dense spec")));
        };
        let convs = (0..layers)
            .map(|i| {
                Conv2d::new(
                    store,
                    init,
                    &format!("{name}.layer{}", i + 1),
                    spec.in_channels + i * growth,
                    growth,
                    ConvGeom::same(3),
                )
            })
            .collect();
        let transition = Conv2d::new(
            store,
            init,
            &format!("{name}.transition"),
            spec.in_channels + layers * growth,
            spec.out_channels,
            ConvGeom::same(1),
        );
        Ok(DenseBlock {
            name: name.to_owned(),
            in_channels: spec.in_channels,
            layers: convs,
            transition,
        })
    }

    /// Input channel count seen by each 3x3 layer.
    pub fn layer_inputs(&self) -> Vec<usize> {
        self.layers.iter().map(|c| c.in_channels).collect()
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        check_channels(g, x, self.in_channels, &self.name)?;
        let mut features = vec![x];
        for layer in &self.layers {
            let input = if features.len() == 1 {
                x
            } else {
                g.concat(&features)?
            };
            let h = layer.forward(g, store, input)?;
            features.push(g.relu(h));
        }
        let all = g.concat(&features)?;
        let out = self.transition.forward(g, store, all)?;
        Ok(g.relu(out))
    }
}

/// Recurrent-residual conv block: a 1x1 projection `r`, then two recurrent
/// units `u -> relu(c0(u)) -> relu(cj(u + h))` for j = 1..=t, with output
/// `r + unit2(unit1(r))`. Each recurrence step has its own kernel.
#[derive(Clone, Debug)]
pub struct RrcBlock {
    name: String,
    in_channels: usize,
    project: Conv2d,
    units: [Vec<Conv2d>; 2],
}

impl RrcBlock {
    pub fn new<F: Float>(
        spec: BlockSpec,
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
    ) -> Result<Self> {
        spec.validate(name)?;
        let BlockKind::Rrc { steps } = spec.kind else {
            return Err(Error::Config(format!(
                "{name}: not a recurrent-residual spec"
            )));
        };
        let out = spec.out_channels;
        let project = Conv2d::new(
            store,
            init,
            &format!("{name}.project"),
            spec.in_channels,
            out,
            ConvGeom::same(1),
        );
        let units = [1, 2].map(|u| {
            (0..=steps)
                .map(|j| {
                    let branches = if j == 0 { 1 } else { 2 };
                    let name = format!("{name}.unit{u}.conv{j}");
                    Conv2d::summing(store, init, &name, out, out, ConvGeom::same(3), branches)
                })
                .collect()
        });
        Ok(RrcBlock {
            name: name.to_owned(),
            in_channels: spec.in_channels,
            project,
            units,
        })
    }

    /// Number of 3x3 convolutions in a block with `steps` recurrences.
    pub fn conv3x3_layers(steps: usize) -> usize {
        2 * (steps + 1)
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        check_channels(g, x, self.in_channels, &self.name)?;
        let r = self.project.forward(g, store, x)?;
        let mut u = r;
        for unit in &self.units {
            let h0 = unit[0].forward(g, store, u)?;
            let mut h = g.relu(h0);
            for conv in &unit[1..] {
                let s = g.add(u, h)?;
                let c = conv.forward(g, store, s)?;
                h = g.relu(c);
            }
            u = h;
        }
        g.add(r, u)
    }
}

/// The per-level feature extractor of an encoder/decoder.
#[derive(Clone, Debug)]
pub enum FeatureBlock {
    DoubleConv(DoubleConv),
    Dense(DenseBlock),
    Rrc(RrcBlock),
}

impl FeatureBlock {
    pub fn new<F: Float>(
        spec: BlockSpec,
        store: &mut ParamStore<F>,
        init: &mut Init,
        name: &str,
    ) -> Result<Self> {
        Ok(match spec.kind {
            BlockKind::DoubleConv => {
                FeatureBlock::DoubleConv(DoubleConv::new(spec, store, init, name)?)
            }
            BlockKind::Dense { .. } => {
                FeatureBlock::Dense(DenseBlock::new(spec, store, init, name)?)
            }
            BlockKind::Rrc { .. } => FeatureBlock::Rrc(RrcBlock::new(spec, store, init, name)?),
            BlockKind::AttentionGate { .. } | BlockKind::Fpa => {
                return Err(Error::Config(format!(
                    "{name}: attention blocks are not feature blocks"
                )))
            }
        })
    }

    pub fn forward<F: Float>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        match self {
            FeatureBlock::DoubleConv(b) => b.forward(g, store, x),
            FeatureBlock::Dense(b) => b.forward(g, store, x),
            FeatureBlock::Rrc(b) => b.forward(g, store, x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn ramp(shape: impl Into<Shape>) -> Tensor<f64> {
        let mut k = 0u64;
        Tensor::from_fn(shape, |_| {
            k += 1;
            ((k * 7919) % 101) as f64 / 50.0 - 1.0
        })
    }

    // k*k*in*out + out per conv, summed by hand from the block definition.
    fn conv_count(k: usize, i: usize, o: usize) -> usize {
        k * k * i * o + o
    }

    #[test]
    fn double_conv_shape_and_count() {
        let mut store = ParamStore::<f32>::new();
        let b = DoubleConv::new(
            BlockSpec::double_conv(1, 16),
            &mut store,
            &mut Init::new(1),
            "enc1",
        )
        .unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros((2, 1, 64, 64)));
        let y = b.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), Shape::new(2, 16, 64, 64));
        assert_eq!(store.numel(), conv_count(3, 1, 16) + conv_count(3, 16, 16));
        assert_eq!(store.numel(), 2480);
    }

    #[test]
    fn double_conv_with_zero_weights_outputs_zero() {
        let mut store = ParamStore::<f64>::new();
        let b = DoubleConv::new(
            BlockSpec::double_conv(3, 4),
            &mut store,
            &mut Init::new(1),
            "b",
        )
        .unwrap();
        store.zero_prefix("b.");
        let mut g = Graph::new();
        let x = g.input(ramp((1, 3, 8, 8)));
        let y = b.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).max_abs(), 0.0);
    }

    #[test]
    fn double_conv_rejects_channel_mismatch_with_layer_name() {
        let mut store = ParamStore::<f32>::new();
        let b = DoubleConv::new(
            BlockSpec::double_conv(3, 4),
            &mut store,
            &mut Init::new(1),
            "enc2",
        )
        .unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros((1, 2, 8, 8)));
        let err = b.forward(&mut g, &store, x).unwrap_err();
        assert!(
            matches!(err, Error::Config(ref m) if m.contains("enc2")),
            "{err}"
        );
    }

    #[test]
    fn attention_gate_shape_range_and_count() {
        let mut store = ParamStore::<f32>::new();
        let ag = AttentionGate::new(
            BlockSpec::attention_gate(64, 64),
            &mut store,
            &mut Init::new(2),
            "ag",
        )
        .unwrap();
        assert_eq!(
            store.numel(),
            conv_count(1, 64, 64) + conv_count(1, 128, 64) + conv_count(1, 64, 1)
        );
        assert_eq!(store.numel(), 12_481);
        let mut g = Graph::new();
        let x = g.input(ramp((1, 64, 32, 32)).cast());
        let gate = g.input(ramp((1, 128, 16, 16)).cast());
        let (y, a) = ag.forward_with_map(&mut g, &store, x, gate).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 64, 32, 32));
        assert_eq!(g.shape(a), Shape::new(1, 1, 32, 32));
        assert!(g.value(a).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_attention_gate_halves_input() {
        let mut store = ParamStore::<f64>::new();
        let ag = AttentionGate::new(
            BlockSpec::attention_gate(4, 4),
            &mut store,
            &mut Init::new(2),
            "ag",
        )
        .unwrap();
        store.zero_prefix("ag.");
        let mut g = Graph::new();
        let xt = ramp((2, 4, 16, 16));
        let x = g.input(xt.clone());
        let gate = g.input(ramp((2, 8, 8, 8)));
        let y = ag.forward(&mut g, &store, x, gate).unwrap();
        for (o, i) in g.value(y).data().iter().zip(xt.data()) {
            assert_eq!(*o, 0.5 * i);
        }
    }

    #[test]
    fn attention_gate_requires_two_to_one_ratio() {
        let mut store = ParamStore::<f32>::new();
        let ag = AttentionGate::new(
            BlockSpec::attention_gate(4, 4),
            &mut store,
            &mut Init::new(2),
            "ag",
        )
        .unwrap();
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros((1, 4, 16, 16)));
        let gate = g.input(Tensor::zeros((1, 8, 16, 16)));
        assert!(matches!(
            ag.forward(&mut g, &store, x, gate),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fpa_shape_zero_output_and_divisibility() {
        let mut store = ParamStore::<f32>::new();
        let fpa =
            FeaturePyramidAttention::new(BlockSpec::fpa(16), &mut store, &mut Init::new(3), "fpa")
                .unwrap();
        let mut g = Graph::new();
        let x = g.input(ramp((1, 16, 128, 128)).cast());
        let y = fpa.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 16, 128, 128));

        store.zero_prefix("fpa.");
        let mut g = Graph::new();
        let x = g.input(ramp((1, 16, 32, 32)).cast());
        let y = fpa.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(y).max_abs(), 0.0);

        let mut g = Graph::new();
        let x = g.input(Tensor::zeros((1, 16, 20, 24)));
        let err = fpa.forward(&mut g, &store, x).unwrap_err();
        assert!(
            matches!(err, Error::Shape(ref m) if m.contains("divisible by 8")),
            "{err}"
        );
    }

    #[test]
    fn fpa_parameter_count() {
        let c = 16;
        let oracle = [7, 5, 3]
            .iter()
            .map(|&k| 2 * conv_count(k, c, c))
            .sum::<usize>()
            + conv_count(1, c, c);
        assert_eq!(oracle, 42_864);
        let mut store = ParamStore::<f32>::new();
        FeaturePyramidAttention::new(BlockSpec::fpa(c), &mut store, &mut Init::new(3), "fpa")
            .unwrap();
        assert_eq!(store.numel(), oracle);
    }

    #[test]
    fn dense_block_shape_inputs_and_count() {
        let mut store = ParamStore::<f32>::new();
        let spec = BlockSpec::dense(16, 32, 8, 4);
        let b = DenseBlock::new(spec, &mut store, &mut Init::new(4), "dense").unwrap();
        assert_eq!(b.layer_inputs(), vec![16, 24, 32, 40]);
        let oracle =
            (0..4).map(|i| conv_count(3, 16 + 8 * i, 8)).sum::<usize>() + conv_count(1, 48, 32);
        assert_eq!(oracle, 9_664);
        assert_eq!(store.numel(), oracle);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros((1, 16, 64, 64)));
        let y = b.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 32, 64, 64));
    }

    #[test]
    fn dense_block_rejects_zero_growth() {
        let mut store = ParamStore::<f32>::new();
        let err = DenseBlock::new(
            BlockSpec::dense(16, 32, 0, 4),
            &mut store,
            &mut Init::new(4),
            "dense",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn rrc_block_shape_and_count() {
        let mut store = ParamStore::<f32>::new();
        let b = RrcBlock::new(
            BlockSpec::rrc(32, 64, 2),
            &mut store,
            &mut Init::new(5),
            "rrc",
        )
        .unwrap();
        let oracle = conv_count(1, 32, 64) + 6 * conv_count(3, 64, 64);
        assert_eq!(oracle, 223_680);
        assert_eq!(store.numel(), oracle);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros((2, 32, 32, 32)));
        let y = b.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), Shape::new(2, 64, 32, 32));
    }

    #[test]
    fn rrc_block_rejects_zero_steps_and_degenerates_to_two_convs() {
        let mut store = ParamStore::<f32>::new();
        let err = RrcBlock::new(
            BlockSpec::rrc(4, 4, 0),
            &mut store,
            &mut Init::new(5),
            "rrc",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        // a double conv has two 3x3 layers
        assert_eq!(RrcBlock::conv3x3_layers(0), 2);
        assert_eq!(RrcBlock::conv3x3_layers(2), 6);
    }

    #[test]
    fn feature_block_refuses_attention_kinds() {
        let mut store = ParamStore::<f32>::new();
        assert!(FeatureBlock::new(BlockSpec::fpa(4), &mut store, &mut Init::new(0), "x").is_err());
    }
}
