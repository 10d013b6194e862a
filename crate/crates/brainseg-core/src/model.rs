//! Attention-gated U-Net: construction, parameter layout and forward pass.
//!
//! The network is four encoder blocks (two 3x3 conv+relu, then 2x2 maxpool),
//! a two-conv bottleneck, and four decoder blocks (2x2/stride-2 transposed
//! conv, additive attention gate on the skip, channel concat, two 3x3
//! conv+relu), finished by a 1x1 conv head and channel softmax. Filter
//! counts double per level from `base_filters`, so the default depth-4
//! configuration at 64 base filters has a 1024-filter bottleneck.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::math::Element;
use crate::ops::Padding;
use crate::rng::SeedRng;
use crate::tensor::{LabelMap, Tensor};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Input modalities per pixel (2 for FLAIR+T1CE, 1 for single-modality).
    pub in_channels: usize,
    /// Segmentation classes in the softmax head.
    pub num_classes: usize,
    /// Encoder blocks; each halves the spatial resolution.
    pub depth: usize,
    /// Filters of the first encoder level; level `i` uses `base_filters << i`.
    pub base_filters: usize,
    /// Gate the skip connections; `false` gives a plain U-Net.
    pub attention_enabled: bool,
    /// Seed for the parameter initialization draws.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 2,
            num_classes: 4,
            depth: 4,
            base_filters: 64,
            attention_enabled: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::contract("model_config", "in_channels must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::contract(
                "model_config",
                format!("num_classes must be at least 2, got {}", self.num_classes),
            ));
        }
        if self.depth == 0 {
            return Err(Error::contract("model_config", "depth must be positive"));
        }
        if self.base_filters == 0 {
            return Err(Error::contract("model_config", "base_filters must be positive"));
        }
        Ok(())
    }

    /// Filter count of encoder/decoder level `i`.
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Filter count of the bottleneck (`base_filters * 2^depth`).
    pub fn bottleneck_filters(&self) -> usize {
        self.base_filters << self.depth
    }

    /// Spatial downsampling factor input sizes must divide.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.depth
    }

    /// Intermediate channel count of the attention gate at `level`.
    pub fn gate_channels(&self, level: usize) -> usize {
        (self.filters(level) / 2).max(1)
    }
}

/// Name, shape and initialization fan-in of one parameter tensor. Biases
/// carry no fan-in and initialize to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: Option<usize>,
}

impl ParamSpec {
    fn weight(name: String, shape: Vec<usize>, fan_in: usize) -> Self {
        ParamSpec { name, shape, fan_in: Some(fan_in) }
    }

    fn bias(name: String, len: usize) -> Self {
        ParamSpec { name, shape: vec![len], fan_in: None }
    }
}

/// Full parameter layout for a configuration, in construction (and weight
/// initialization draw) order.
pub fn parameter_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let conv3 = |specs: &mut Vec<ParamSpec>, prefix: &str, cout: usize, cin: usize| {
        specs.push(ParamSpec::weight(
            format!("{prefix}.weight"),
            vec![cout, cin, 3, 3],
            cin * 9,
        ));
        specs.push(ParamSpec::bias(format!("{prefix}.bias"), cout));
    };

    let mut cin = config.in_channels;
    for level in 0..config.depth {
        let f = config.filters(level);
        conv3(&mut specs, &format!("enc{level}.conv1"), f, cin);
        conv3(&mut specs, &format!("enc{level}.conv2"), f, f);
        cin = f;
    }

    let fb = config.bottleneck_filters();
    conv3(&mut specs, "bottleneck.conv1", fb, cin);
    conv3(&mut specs, "bottleneck.conv2", fb, fb);

    for level in (0..config.depth).rev() {
        let f = config.filters(level);
        specs.push(ParamSpec::weight(
            format!("dec{level}.upconv.weight"),
            vec![2 * f, f, 2, 2],
            2 * f * 4,
        ));
        if config.attention_enabled {
            let fi = config.gate_channels(level);
            specs.push(ParamSpec::weight(
                format!("dec{level}.att.wg.weight"),
                vec![fi, f, 1, 1],
                f,
            ));
            specs.push(ParamSpec::weight(
                format!("dec{level}.att.wx.weight"),
                vec![fi, f, 1, 1],
                f,
            ));
            specs.push(ParamSpec::bias(format!("dec{level}.att.b1"), fi));
            specs.push(ParamSpec::weight(
                format!("dec{level}.att.psi.weight"),
                vec![1, fi, 1, 1],
                fi,
            ));
            specs.push(ParamSpec::bias(format!("dec{level}.att.b2"), 1));
        }
        conv3(&mut specs, &format!("dec{level}.conv1"), f, 2 * f);
        conv3(&mut specs, &format!("dec{level}.conv2"), f, f);
    }

    specs.push(ParamSpec::weight(
        "head.weight".into(),
        vec![config.num_classes, config.base_filters, 1, 1],
        config.base_filters,
    ));
    specs.push(ParamSpec::bias("head.bias".into(), config.num_classes));
    specs
}

/// Graph handles produced by one wired forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// Pre-softmax 1x1 head output, `[N, num_classes, H, W]`.
    pub logits: Var,
    /// Softmax class probabilities, same shape as `logits`.
    pub probs: Var,
    /// Activation of the last 3x3 conv before the head (post-relu); the
    /// Grad-CAM target layer.
    pub penultimate: Var,
}

/// The segmentation network: a configuration plus its named parameters.
#[derive(Debug, Clone)]
pub struct AttentionUNet<E: Element> {
    config: ModelConfig,
    params: BTreeMap<String, Tensor<E>>,
}

impl<E: Element> AttentionUNet<E> {
    /// Builds the network with He fan-in normal weights and zero biases,
    /// drawn in layer order from the config seed.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedRng::new(config.seed);
        let mut params = BTreeMap::new();
        for spec in parameter_specs(&config) {
            let tensor = match spec.fan_in {
                Some(fan_in) => {
                    let std = crate::math::sqrt(2.0 / fan_in as f64);
                    let mut t = Tensor::zeros(&spec.shape);
                    t.fill_normal(&mut rng, std);
                    t
                }
                None => Tensor::zeros(&spec.shape),
            };
            params.insert(spec.name, tensor);
        }
        Ok(AttentionUNet { config, params })
    }

    /// Rebuilds a network from explicit parameters, validating the set of
    /// names and every shape against the configuration's layout.
    pub fn from_parameters(
        config: ModelConfig,
        params: BTreeMap<String, Tensor<E>>,
    ) -> Result<Self> {
        config.validate()?;
        let specs = parameter_specs(&config);
        for spec in &specs {
            let got = params.get(&spec.name).ok_or_else(|| {
                Error::contract("model_parameters", format!("missing parameter {}", spec.name))
            })?;
            if got.shape() != spec.shape {
                return Err(Error::shape(
                    "model_parameters",
                    format!(
                        "parameter {} has shape {:?}, expected {:?}",
                        spec.name,
                        got.shape(),
                        spec.shape
                    ),
                ));
            }
        }
        if params.len() != specs.len() {
            let known: BTreeMap<&str, ()> =
                specs.iter().map(|s| (s.name.as_str(), ())).collect();
            let unknown = params
                .keys()
                .find(|k| !known.contains_key(k.as_str()))
                .expect("count mismatch implies an extra name");
            return Err(Error::contract(
                "model_parameters",
                format!("unknown parameter {unknown}"),
            ));
        }
        Ok(AttentionUNet { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &BTreeMap<String, Tensor<E>> {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut BTreeMap<String, Tensor<E>> {
        &mut self.params
    }

    /// Casts every parameter to another element type.
    pub fn cast<T: Element>(&self) -> AttentionUNet<T> {
        AttentionUNet {
            config: self.config,
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Registers every parameter on a graph; `trainable` decides whether
    /// they receive gradients.
    pub fn wire(&self, g: &mut Graph<E>, trainable: bool) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(name, tensor)| {
                let var =
                    if trainable { g.param(tensor.clone()) } else { g.input(tensor.clone()) };
                (name.clone(), var)
            })
            .collect()
    }

    fn var(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
        vars.get(name).copied().ok_or_else(|| {
            Error::contract("forward", format!("parameter {name} is not wired"))
        })
    }

    fn conv_relu(
        &self,
        g: &mut Graph<E>,
        vars: &BTreeMap<String, Var>,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let w = Self::var(vars, &format!("{prefix}.weight"))?;
        let b = Self::var(vars, &format!("{prefix}.bias"))?;
        let c = g.conv2d(x, w, Some(b), Padding::Same)?;
        Ok(g.relu(c))
    }

    /// Two 3x3 conv+relu layers then a 2x2 maxpool; returns the pre-pool
    /// features (the skip tensor) and the pooled output.
    pub fn encoder_block(
        &self,
        g: &mut Graph<E>,
        vars: &BTreeMap<String, Var>,
        level: usize,
        x: Var,
    ) -> Result<(Var, Var)> {
        let a = self.conv_relu(g, vars, &format!("enc{level}.conv1"), x)?;
        let features = self.conv_relu(g, vars, &format!("enc{level}.conv2"), a)?;
        let pooled = g.maxpool2(features)?;
        Ok((features, pooled))
    }

    /// Additive attention gate: `alpha = sigmoid(psi * relu(Wg*gate +
    /// Wx*skip + b1) + b2)`, broadcast-multiplied onto the skip.
    pub fn attention_gate(
        &self,
        g: &mut Graph<E>,
        vars: &BTreeMap<String, Var>,
        level: usize,
        skip: Var,
        gate: Var,
    ) -> Result<Var> {
        let wg = Self::var(vars, &format!("dec{level}.att.wg.weight"))?;
        let wx = Self::var(vars, &format!("dec{level}.att.wx.weight"))?;
        let b1 = Self::var(vars, &format!("dec{level}.att.b1"))?;
        let psi = Self::var(vars, &format!("dec{level}.att.psi.weight"))?;
        let b2 = Self::var(vars, &format!("dec{level}.att.b2"))?;

        let from_gate = g.conv2d(gate, wg, None, Padding::Same)?;
        let from_skip = g.conv2d(skip, wx, Some(b1), Padding::Same)?;
        let joint = g.add(from_gate, from_skip)?;
        let joint = g.relu(joint);
        let score = g.conv2d(joint, psi, Some(b2), Padding::Same)?;
        let alpha = g.sigmoid(score);
        g.mul_gate(skip, alpha)
    }

    /// Transposed conv upsampling, optional attention on the skip, concat
    /// (gated skip first) and two 3x3 conv+relu layers.
    pub fn decoder_block(
        &self,
        g: &mut Graph<E>,
        vars: &BTreeMap<String, Var>,
        level: usize,
        x: Var,
        skip: Var,
    ) -> Result<Var> {
        let up_kernel = Self::var(vars, &format!("dec{level}.upconv.weight"))?;
        let up = g.transpose_conv2d(x, up_kernel)?;
        let skip_in = if self.config.attention_enabled {
            self.attention_gate(g, vars, level, skip, up)?
        } else {
            skip
        };
        let cat = g.concat_channels(skip_in, up)?;
        let a = self.conv_relu(g, vars, &format!("dec{level}.conv1"), cat)?;
        self.conv_relu(g, vars, &format!("dec{level}.conv2"), a)
    }

    /// Runs the full network on an already-registered input node.
    pub fn forward_wired(
        &self,
        g: &mut Graph<E>,
        vars: &BTreeMap<String, Var>,
        input: Var,
    ) -> Result<ForwardNodes> {
        let (_, c, h, w) = g.value(input).dims4("forward")?;
        if c != self.config.in_channels {
            return Err(Error::shape(
                "forward",
                format!("input has {c} channels, model expects {}", self.config.in_channels),
            ));
        }
        let divisor = self.config.spatial_divisor();
        if h % divisor != 0 || w % divisor != 0 {
            return Err(Error::shape(
                "forward",
                format!("spatial size {h}x{w} is not divisible by {divisor}"),
            ));
        }

        let mut x = input;
        let mut skips = Vec::with_capacity(self.config.depth);
        for level in 0..self.config.depth {
            let (features, pooled) = self.encoder_block(g, vars, level, x)?;
            skips.push(features);
            x = pooled;
        }
        x = self.conv_relu(g, vars, "bottleneck.conv1", x)?;
        x = self.conv_relu(g, vars, "bottleneck.conv2", x)?;
        for level in (0..self.config.depth).rev() {
            x = self.decoder_block(g, vars, level, x, skips[level])?;
        }
        let penultimate = x;
        let head_w = Self::var(vars, "head.weight")?;
        let head_b = Self::var(vars, "head.bias")?;
        let logits = g.conv2d(penultimate, head_w, Some(head_b), Padding::Same)?;
        let probs = g.softmax_channels(logits)?;
        Ok(ForwardNodes { logits, probs, penultimate })
    }

    /// Class probabilities for a batch, `[N, num_classes, H, W]`.
    pub fn forward(&self, batch: &Tensor<E>) -> Result<Tensor<E>> {
        let mut g = Graph::new();
        let vars = self.wire(&mut g, false);
        let input = g.input(batch.clone());
        let nodes = self.forward_wired(&mut g, &vars, input)?;
        Ok(g.value(nodes.probs).clone())
    }
}

/// Per-pixel argmax over the class axis; ties go to the lowest class index.
pub fn predict_mask<E: Element>(probs: &Tensor<E>) -> Result<LabelMap> {
    let (n, c, h, w) = probs.dims4("predict_mask")?;
    if c > u8::MAX as usize + 1 {
        return Err(Error::contract(
            "predict_mask",
            format!("{c} classes exceed the label map's u8 range"),
        ));
    }
    let hw = h * w;
    let mut labels = vec![0u8; n * hw];
    let data = probs.data();
    for ni in 0..n {
        let img = &data[ni * c * hw..][..c * hw];
        for p in 0..hw {
            let mut best_class = 0usize;
            let mut best = img[p];
            for ci in 1..c {
                let v = img[ci * hw + p];
                if v > best {
                    best = v;
                    best_class = ci;
                }
            }
            labels[ni * hw + p] = best_class as u8;
        }
    }
    LabelMap::new(n, h, w, labels)
}
