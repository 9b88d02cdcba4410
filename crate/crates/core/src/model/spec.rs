use serde::{Deserialize, Serialize};
use std::ops::Range;

use super::ModelError;

/// Activation used between trainable layers of preset architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Dense { inputs: usize, outputs: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    Tanh,
    AvgPool { size: usize },
    Flatten,
}

impl Layer {
    pub fn is_trainable(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv { .. })
    }

    fn activation(a: Activation) -> Layer {
        match a {
            Activation::Relu => Layer::Relu,
            Activation::Tanh => Layer::Tanh,
        }
    }
}

/// Ordered feed-forward architecture over per-sample input shape `input`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Vec<usize>,
    pub layers: Vec<Layer>,
    pub classes: usize,
}

/// Location of one trainable layer inside the flat weight and bias vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainableLayer {
    /// Index into [`NetworkSpec::layers`].
    pub layer: usize,
    pub weight_shape: Vec<usize>,
    pub weights: Range<usize>,
    pub biases: Range<usize>,
    pub fan_in: usize,
}

impl TrainableLayer {
    pub fn weight_count(&self) -> usize {
        self.weights.len()
    }
}

impl NetworkSpec {
    /// Classic two-convolution, three-dense LeNet-5 sized for 28×28×1 inputs.
    pub fn lenet5() -> Self {
        Self {
            input: vec![1, 28, 28],
            layers: vec![
                Layer::Conv { in_channels: 1, out_channels: 6, kernel: 5, stride: 1, padding: 2 },
                Layer::Relu,
                Layer::AvgPool { size: 2 },
                Layer::Conv { in_channels: 6, out_channels: 16, kernel: 5, stride: 1, padding: 0 },
                Layer::Relu,
                Layer::AvgPool { size: 2 },
                Layer::Flatten,
                Layer::Dense { inputs: 400, outputs: 120 },
                Layer::Relu,
                Layer::Dense { inputs: 120, outputs: 84 },
                Layer::Relu,
                Layer::Dense { inputs: 84, outputs: 10 },
            ],
            classes: 10,
        }
    }

    /// Fully-connected network; multi-dimensional inputs are flattened first.
    pub fn mlp(input: &[usize], hidden: &[usize], classes: usize, activation: Activation) -> Self {
        let mut layers = Vec::new();
        let mut width: usize = input.iter().product();
        if input.len() > 1 {
            layers.push(Layer::Flatten);
        }
        for &h in hidden {
            layers.push(Layer::Dense { inputs: width, outputs: h });
            layers.push(Layer::activation(activation));
            width = h;
        }
        layers.push(Layer::Dense { inputs: width, outputs: classes });
        Self { input: input.to_vec(), layers, classes }
    }

    /// Reduced VGG-style stack: two blocks of two 3×3 convolutions, then a classifier.
    pub fn vgg_small(input: &[usize], widths: [usize; 2], classes: usize) -> Self {
        let (c, h, w) = (input[0], input[1], input[2]);
        let conv = |i, o| Layer::Conv { in_channels: i, out_channels: o, kernel: 3, stride: 1, padding: 1 };
        let layers = vec![
            conv(c, widths[0]),
            Layer::Relu,
            conv(widths[0], widths[0]),
            Layer::Relu,
            Layer::AvgPool { size: 2 },
            conv(widths[0], widths[1]),
            Layer::Relu,
            conv(widths[1], widths[1]),
            Layer::Relu,
            Layer::AvgPool { size: 2 },
            Layer::Flatten,
            Layer::Dense { inputs: widths[1] * (h / 4) * (w / 4), outputs: classes },
        ];
        Self { input: input.to_vec(), layers, classes }
    }

    /// Per-sample shapes after each layer, checking that consecutive layers conform.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let bad = |i: usize, msg: String| ModelError::InvalidSpec(format!("layer {i}: {msg}"));
        if self.input.is_empty() || self.input.contains(&0) {
            return Err(ModelError::InvalidSpec(format!("bad input shape {:?}", self.input)));
        }
        let mut shape = self.input.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                Layer::Dense { inputs, outputs } => {
                    if shape != [inputs] || outputs == 0 {
                        return Err(bad(i, format!("dense {inputs}->{outputs} fed {shape:?}")));
                    }
                    vec![outputs]
                }
                Layer::Conv { in_channels, out_channels, kernel, stride, padding } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(bad(i, format!("conv expects {in_channels} channels, fed {shape:?}")));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(bad(i, "empty convolution".into()));
                    }
                    if shape[1] + 2 * padding < kernel || shape[2] + 2 * padding < kernel {
                        return Err(bad(i, format!("kernel {kernel} larger than padded input {shape:?}")));
                    }
                    vec![
                        out_channels,
                        (shape[1] + 2 * padding - kernel) / stride + 1,
                        (shape[2] + 2 * padding - kernel) / stride + 1,
                    ]
                }
                Layer::Relu | Layer::Tanh => shape,
                Layer::AvgPool { size } => {
                    if shape.len() != 3 || size == 0 || shape[1] < size || shape[2] < size {
                        return Err(bad(i, format!("pool {size} on {shape:?}")));
                    }
                    vec![shape[0], shape[1] / size, shape[2] / size]
                }
                Layer::Flatten => vec![shape.iter().product()],
            };
            out.push(shape.clone());
        }
        if shape != [self.classes] {
            return Err(ModelError::InvalidSpec(format!(
                "network ends in {shape:?}, expected [{}]",
                self.classes
            )));
        }
        if !self.layers.iter().any(Layer::is_trainable) {
            return Err(ModelError::InvalidSpec("no trainable layer".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.shapes().map(|_| ())
    }

    /// Flat-vector layout of every trainable layer.
    pub fn layout(&self) -> Result<Vec<TrainableLayer>, ModelError> {
        self.validate()?;
        let mut w_off = 0;
        let mut b_off = 0;
        let mut layout = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let (weight_shape, bias, fan_in) = match *layer {
                Layer::Dense { inputs, outputs } => (vec![outputs, inputs], outputs, inputs),
                Layer::Conv { in_channels, out_channels, kernel, .. } => (
                    vec![out_channels, in_channels, kernel, kernel],
                    out_channels,
                    in_channels * kernel * kernel,
                ),
                _ => continue,
            };
            let n: usize = weight_shape.iter().product();
            layout.push(TrainableLayer {
                layer: i,
                weight_shape,
                weights: w_off..w_off + n,
                biases: b_off..b_off + bias,
                fan_in,
            });
            w_off += n;
            b_off += bias;
        }
        Ok(layout)
    }

    /// Total prunable weight count `m` and the per-layer counts.
    pub fn weight_counts(&self) -> Result<(usize, Vec<usize>), ModelError> {
        let per: Vec<usize> = self.layout()?.iter().map(TrainableLayer::weight_count).collect();
        Ok((per.iter().sum(), per))
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Canonical text form used for checkpoint digests.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}
