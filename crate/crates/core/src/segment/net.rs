//! Forward-only encoder–decoder built from depthwise-separable convolutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SegmentError;
use crate::imaging::{ImageRgb8, PlaneF32};
use crate::par;

/// Channel-major activation tensor `(channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, SegmentError> {
        if data.len() != channels * height * width {
            return Err(SegmentError::Convolution(format!(
                "tensor ({channels},{height},{width}) needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SegmentError::Convolution("tensor contains non-finite values".into()));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    /// RGB image as a `(3, h, w)` tensor scaled to `[0, 1]`.
    pub fn from_image(img: &ImageRgb8) -> Self {
        Self::from_fn(3, img.height(), img.width(), |c, y, x| img.pixel(x, y)[c] as f64 / 255.0)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    fn from_channels(height: usize, width: usize, chans: Vec<Vec<f64>>) -> Self {
        let channels = chans.len();
        Self { channels, height, width, data: chans.concat() }
    }
}

/// One `k × k` kernel per channel, stored `[channel][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseKernel {
    pub channels: usize,
    pub size: usize,
    pub weights: Vec<f64>,
}

impl DepthwiseKernel {
    /// Centred delta per channel.
    pub fn identity(channels: usize, size: usize) -> Self {
        let mut weights = vec![0.0; channels * size * size];
        let centre = size / 2;
        for c in 0..channels {
            weights[c * size * size + centre * size + centre] = 1.0;
        }
        Self { channels, size, weights }
    }
}

/// 1×1 channel mixing, weights stored `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointwiseKernel {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PointwiseKernel {
    pub fn identity(channels: usize) -> Self {
        let mut weights = vec![0.0; channels * channels];
        for c in 0..channels {
            weights[c * channels + c] = 1.0;
        }
        Self { in_channels: channels, out_channels: channels, weights, bias: vec![0.0; channels] }
    }
}

fn conv_out_len(len: usize, k: usize, stride: usize, dilation: usize) -> usize {
    let pad = dilation * (k - 1) / 2;
    (len + 2 * pad - dilation * (k - 1) - 1) / stride + 1
}

/// Per-channel convolution, zero padding `dilation·(k−1)/2`.
pub fn depthwise_conv2d(
    input: &Tensor3,
    kernel: &DepthwiseKernel,
    stride: usize,
    dilation: usize,
) -> Result<Tensor3, SegmentError> {
    let (c, h, w) = input.shape();
    let k = kernel.size;
    if k == 0 || k % 2 == 0 {
        return Err(SegmentError::Convolution(format!("kernel size {k} must be odd")));
    }
    if stride == 0 || dilation == 0 {
        return Err(SegmentError::Convolution("stride and dilation must be at least 1".into()));
    }
    if kernel.channels != c {
        return Err(SegmentError::Convolution(format!(
            "depthwise kernel has {} channels, input has {c}",
            kernel.channels
        )));
    }
    if kernel.weights.len() != c * k * k {
        return Err(SegmentError::Convolution("depthwise weight count".into()));
    }
    let pad = (dilation * (k - 1) / 2) as isize;
    let oh = conv_out_len(h, k, stride, dilation);
    let ow = conv_out_len(w, k, stride, dilation);
    let chans = par::map_range(c, |ch| {
        let src = input.channel(ch);
        let wk = &kernel.weights[ch * k * k..(ch + 1) * k * k];
        let mut out = vec![0.0; oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..k {
                    let iy = (oy * stride) as isize - pad + (ky * dilation) as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride) as isize - pad + (kx * dilation) as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc += wk[ky * k + kx] * src[iy as usize * w + ix as usize];
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
        out
    });
    Ok(Tensor3::from_channels(oh, ow, chans))
}

pub fn pointwise_conv2d(input: &Tensor3, kernel: &PointwiseKernel) -> Result<Tensor3, SegmentError> {
    let (c, h, w) = input.shape();
    if kernel.in_channels != c {
        return Err(SegmentError::Convolution(format!(
            "pointwise kernel expects {} channels, input has {c}",
            kernel.in_channels
        )));
    }
    if kernel.weights.len() != kernel.in_channels * kernel.out_channels || kernel.bias.len() != kernel.out_channels {
        return Err(SegmentError::Convolution("pointwise weight count".into()));
    }
    let chans = par::map_range(kernel.out_channels, |o| {
        let mut out = vec![kernel.bias[o]; h * w];
        for i in 0..c {
            let wgt = kernel.weights[o * c + i];
            for (acc, v) in out.iter_mut().zip(input.channel(i)) {
                *acc += wgt * v;
            }
        }
        out
    });
    Ok(Tensor3::from_channels(h, w, chans))
}

/// Depthwise stage followed by the pointwise stage.
pub fn dwsep_conv2d(
    input: &Tensor3,
    depthwise: &DepthwiseKernel,
    pointwise: &PointwiseKernel,
    stride: usize,
    dilation: usize,
) -> Result<Tensor3, SegmentError> {
    pointwise_conv2d(&depthwise_conv2d(input, depthwise, stride, dilation)?, pointwise)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Layer {
    DwSep {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
        relu: bool,
    },
    /// 2×2 max pooling.
    Downsample,
    /// Nearest-neighbour ×2.
    Upsample,
    /// Appends the channels produced by layer `source`.
    SkipConcat { source: usize },
    SigmoidHead,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::DwSep { in_channels, out_channels, kernel, .. } => {
                in_channels * kernel * kernel + out_channels * in_channels + out_channels
            }
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub layer: Layer,
    #[serde(default)]
    pub bottleneck: bool,
}

impl LayerSpec {
    pub fn new(layer: Layer) -> Self {
        Self { layer, bottleneck: false }
    }

    pub fn bottleneck(layer: Layer) -> Self {
        Self { layer, bottleneck: true }
    }
}

/// A validated layer table plus its flat weight blob.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    input: (usize, usize, usize),
    layers: Vec<LayerSpec>,
    weights: Vec<f32>,
    offsets: Vec<usize>,
    shapes: Vec<(usize, usize, usize)>,
}

pub struct NetOutput {
    pub prob: PlaneF32,
    pub bottleneck: Option<Vec<f64>>,
}

fn chain_error(layer: usize, reason: impl Into<String>) -> SegmentError {
    SegmentError::ShapeChain { layer, reason: reason.into() }
}

fn infer_shapes(input: (usize, usize, usize), layers: &[LayerSpec]) -> Result<Vec<(usize, usize, usize)>, SegmentError> {
    if input.0 == 0 || input.1 == 0 || input.2 == 0 {
        return Err(chain_error(0, "input shape has a zero dimension"));
    }
    if layers.is_empty() {
        return Err(chain_error(0, "no layers"));
    }
    let mut shapes: Vec<(usize, usize, usize)> = Vec::with_capacity(layers.len());
    let mut cur = input;
    let (mut downs, mut ups) = (0, 0);
    let mut flagged = 0;
    for (i, spec) in layers.iter().enumerate() {
        if spec.bottleneck {
            flagged += 1;
        }
        cur = match spec.layer {
            Layer::DwSep { in_channels, out_channels, kernel, stride, dilation, .. } => {
                if in_channels != cur.0 {
                    return Err(chain_error(i, format!("expects {in_channels} channels, receives {}", cur.0)));
                }
                if kernel == 0 || kernel % 2 == 0 || stride == 0 || dilation == 0 || out_channels == 0 {
                    return Err(chain_error(i, "kernel must be odd; stride, dilation, outputs positive"));
                }
                (
                    out_channels,
                    conv_out_len(cur.1, kernel, stride, dilation),
                    conv_out_len(cur.2, kernel, stride, dilation),
                )
            }
            Layer::Downsample => {
                if cur.1 % 2 != 0 || cur.2 % 2 != 0 {
                    return Err(chain_error(i, format!("cannot halve {}x{}", cur.1, cur.2)));
                }
                downs += 1;
                (cur.0, cur.1 / 2, cur.2 / 2)
            }
            Layer::Upsample => {
                ups += 1;
                (cur.0, cur.1 * 2, cur.2 * 2)
            }
            Layer::SkipConcat { source } => {
                let Some(src) = shapes.get(source).copied().filter(|_| source < i) else {
                    return Err(chain_error(i, format!("skip source {source} is not an earlier layer")));
                };
                if (src.1, src.2) != (cur.1, cur.2) {
                    return Err(chain_error(i, format!("skip source is {}x{}, current is {}x{}", src.1, src.2, cur.1, cur.2)));
                }
                (cur.0 + src.0, cur.1, cur.2)
            }
            Layer::SigmoidHead => {
                if i + 1 != layers.len() {
                    return Err(chain_error(i, "sigmoid head must be the last layer"));
                }
                if cur.0 != 1 {
                    return Err(chain_error(i, format!("sigmoid head needs 1 channel, got {}", cur.0)));
                }
                cur
            }
        };
        shapes.push(cur);
    }
    let last = layers.len() - 1;
    if layers[last].layer != Layer::SigmoidHead {
        return Err(chain_error(last, "network must end in a sigmoid head"));
    }
    if downs != ups {
        return Err(chain_error(last, format!("{downs} downsamples vs {ups} upsamples")));
    }
    if (cur.1, cur.2) != (input.1, input.2) {
        return Err(chain_error(last, format!("output {}x{} differs from input {}x{}", cur.1, cur.2, input.1, input.2)));
    }
    if flagged > 1 {
        return Err(chain_error(last, format!("{flagged} bottleneck layers flagged")));
    }
    Ok(shapes)
}

impl NetSpec {
    /// Validates the shape chain and weight count.
    pub fn new(input: (usize, usize, usize), layers: Vec<LayerSpec>, weights: Vec<f32>) -> Result<Self, SegmentError> {
        let shapes = infer_shapes(input, &layers)?;
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.layer.param_count();
        }
        if weights.len() != total {
            return Err(chain_error(layers.len() - 1, format!("{} weights supplied, {total} required", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(SegmentError::Format("non-finite weight".into()));
        }
        Ok(Self { input, layers, weights, offsets, shapes })
    }

    /// Uniform ±√(3/fan_in) weights and zero biases from a seeded stream.
    pub fn random(input: (usize, usize, usize), layers: Vec<LayerSpec>, seed: u64) -> Result<Self, SegmentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        for l in &layers {
            if let Layer::DwSep { in_channels, out_channels, kernel, .. } = l.layer {
                let a = (3.0 / (kernel * kernel) as f32).sqrt();
                weights.extend((0..in_channels * kernel * kernel).map(|_| rng.random_range(-a..=a)));
                let a = (3.0 / in_channels as f32).sqrt();
                weights.extend((0..out_channels * in_channels).map(|_| rng.random_range(-a..=a)));
                weights.extend(std::iter::repeat_n(0.0, out_channels));
            }
        }
        Self::new(input, layers, weights)
    }

    /// U-Net-style layout: `depth` encoder levels, a dilated bottleneck, and a
    /// mirrored decoder with skip concatenations.
    pub fn encoder_decoder_layers(in_channels: usize, width: usize, depth: usize) -> Vec<LayerSpec> {
        let dw = |i, o, dilation, relu| {
            LayerSpec::new(Layer::DwSep { in_channels: i, out_channels: o, kernel: 3, stride: 1, dilation, relu })
        };
        let mut layers = Vec::new();
        let mut skips = Vec::new();
        let mut c = in_channels;
        for level in 0..depth {
            let out = width << level;
            layers.push(dw(c, out, 1, true));
            skips.push((layers.len() - 1, out));
            layers.push(LayerSpec::new(Layer::Downsample));
            c = out;
        }
        let mut bottleneck = dw(c, c, 2, true);
        bottleneck.bottleneck = true;
        layers.push(bottleneck);
        for &(source, skip_c) in skips.iter().rev() {
            layers.push(LayerSpec::new(Layer::Upsample));
            layers.push(LayerSpec::new(Layer::SkipConcat { source }));
            layers.push(dw(c + skip_c, skip_c, 1, true));
            c = skip_c;
        }
        layers.push(dw(c, 1, 1, false));
        layers.push(LayerSpec::new(Layer::SigmoidHead));
        layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn layer_shapes(&self) -> &[(usize, usize, usize)] {
        &self.shapes
    }

    pub fn bottleneck_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| l.bottleneck)
    }

    fn kernels(&self, i: usize) -> (DepthwiseKernel, PointwiseKernel) {
        let Layer::DwSep { in_channels, out_channels, kernel, .. } = self.layers[i].layer else {
            unreachable!("kernels requested for a non-convolution layer")
        };
        let w = &self.weights[self.offsets[i]..];
        let dw_n = in_channels * kernel * kernel;
        let pw_n = out_channels * in_channels;
        let f = |s: &[f32]| s.iter().map(|&v| v as f64).collect::<Vec<f64>>();
        (
            DepthwiseKernel { channels: in_channels, size: kernel, weights: f(&w[..dw_n]) },
            PointwiseKernel {
                in_channels,
                out_channels,
                weights: f(&w[dw_n..dw_n + pw_n]),
                bias: f(&w[dw_n + pw_n..dw_n + pw_n + out_channels]),
            },
        )
    }

    /// Full pass returning the probability map and the bottleneck activations.
    pub fn run(&self, input: &Tensor3) -> Result<NetOutput, SegmentError> {
        if input.shape() != self.input {
            return Err(SegmentError::InputShape { got: input.shape(), want: self.input });
        }
        let mut outputs: Vec<Tensor3> = Vec::with_capacity(self.layers.len());
        let mut bottleneck = None;
        let mut prob = None;
        for (i, spec) in self.layers.iter().enumerate() {
            let cur = outputs.last().unwrap_or(input);
            let next = match spec.layer {
                Layer::DwSep { stride, dilation, relu, .. } => {
                    let (dw, pw) = self.kernels(i);
                    let mut t = dwsep_conv2d(cur, &dw, &pw, stride, dilation).map_err(|e| chain_error(i, e.to_string()))?;
                    if relu {
                        t.data.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    t
                }
                Layer::Downsample => {
                    let (c, h, w) = cur.shape();
                    Tensor3::from_fn(c, h / 2, w / 2, |ch, y, x| {
                        let a = cur.get(ch, 2 * y, 2 * x).max(cur.get(ch, 2 * y, 2 * x + 1));
                        a.max(cur.get(ch, 2 * y + 1, 2 * x).max(cur.get(ch, 2 * y + 1, 2 * x + 1)))
                    })
                }
                Layer::Upsample => {
                    let (c, h, w) = cur.shape();
                    Tensor3::from_fn(c, h * 2, w * 2, |ch, y, x| cur.get(ch, y / 2, x / 2))
                }
                Layer::SkipConcat { source } => {
                    let src = &outputs[source];
                    let mut data = cur.data.clone();
                    data.extend_from_slice(&src.data);
                    Tensor3 { channels: cur.channels + src.channels, height: cur.height, width: cur.width, data }
                }
                Layer::SigmoidHead => {
                    let (_, h, w) = cur.shape();
                    let vals = cur
                        .data
                        .iter()
                        .map(|&z| (1.0 / (1.0 + (-z).exp())).clamp(1e-7, 1.0 - 1e-7) as f32)
                        .collect();
                    prob = Some(PlaneF32::new(w, h, vals).expect("finite probabilities"));
                    cur.clone()
                }
            };
            if spec.bottleneck {
                bottleneck = Some(next.data.clone());
            }
            outputs.push(next);
        }
        Ok(NetOutput { prob: prob.expect("validated network ends in a sigmoid head"), bottleneck })
    }

    pub fn forward(&self, input: &Tensor3) -> Result<PlaneF32, SegmentError> {
        self.run(input).map(|o| o.prob)
    }

    pub fn bottleneck_vector(&self, input: &Tensor3) -> Result<Vec<f64>, SegmentError> {
        if self.bottleneck_index().is_none() {
            return Err(SegmentError::NoBottleneck);
        }
        self.run(input).map(|o| o.bottleneck.expect("flagged layer ran"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_layer(channels: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::bottleneck(Layer::DwSep {
                in_channels: channels,
                out_channels: 1,
                kernel: 3,
                stride: 1,
                dilation: 1,
                relu: false,
            }),
            LayerSpec::new(Layer::SigmoidHead),
        ]
    }

    #[test]
    fn identity_kernels_reproduce_input() {
        let t = Tensor3::from_fn(3, 6, 5, |c, y, x| (c * 100 + y * 10 + x) as f64 * 0.01 - 1.0);
        let out = dwsep_conv2d(&t, &DepthwiseKernel::identity(3, 3), &PointwiseKernel::identity(3), 1, 1).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn dilated_same_padding_keeps_size() {
        let t = Tensor3::zeros(2, 9, 7);
        let out = depthwise_conv2d(&t, &DepthwiseKernel::identity(2, 3), 1, 2).unwrap();
        assert_eq!(out.shape(), (2, 9, 7));
        let out = depthwise_conv2d(&t, &DepthwiseKernel::identity(2, 3), 2, 1).unwrap();
        assert_eq!(out.shape(), (2, 5, 4));
    }

    #[test]
    fn channel_mismatch_rejected() {
        let t = Tensor3::zeros(2, 4, 4);
        assert!(matches!(
            depthwise_conv2d(&t, &DepthwiseKernel::identity(3, 3), 1, 1),
            Err(SegmentError::Convolution(_))
        ));
        assert!(depthwise_conv2d(&t, &DepthwiseKernel { channels: 2, size: 2, weights: vec![0.0; 8] }, 1, 1).is_err());
    }

    #[test]
    fn zero_weights_give_half_everywhere() {
        let layers = NetSpec::encoder_decoder_layers(3, 4, 2);
        let n: usize = layers.iter().map(|l| l.layer.param_count()).sum();
        let net = NetSpec::new((3, 16, 16), layers, vec![0.0; n]).unwrap();
        let input = Tensor3::from_fn(3, 16, 16, |c, y, x| (c + y + x) as f64);
        let prob = net.forward(&input).unwrap();
        assert_eq!((prob.width(), prob.height()), (16, 16));
        assert!(prob.data().iter().all(|&p| p == 0.5));
        assert!(net.bottleneck_vector(&input).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_network_is_sigmoid_of_input() {
        let mut w = vec![0f32; 9];
        w[4] = 1.0;
        w.push(1.0); // pointwise weight
        w.push(0.0); // bias
        let net = NetSpec::new((1, 5, 5), single_layer(1), w).unwrap();
        let input = Tensor3::from_fn(1, 5, 5, |_, y, x| (y as f64 - x as f64) * 0.7);
        let prob = net.forward(&input).unwrap();
        for (p, z) in prob.data().iter().zip(input.data()) {
            let logit = (*p as f64 / (1.0 - *p as f64)).ln();
            assert!((logit - z).abs() < 1e-5, "{logit} vs {z}");
        }
    }

    #[test]
    fn random_network_is_deterministic() {
        let layers = NetSpec::encoder_decoder_layers(3, 4, 2);
        let a = NetSpec::random((3, 16, 16), layers.clone(), 9).unwrap();
        let b = NetSpec::random((3, 16, 16), layers, 9).unwrap();
        let input = Tensor3::from_fn(3, 16, 16, |c, y, x| ((c * 7 + y * 3 + x) % 5) as f64 / 5.0);
        assert_eq!(a.forward(&input).unwrap(), b.forward(&input).unwrap());
        assert_eq!(a.forward(&input).unwrap(), a.forward(&input).unwrap());
        let v = a.bottleneck_vector(&input).unwrap();
        // depth 2, width 4: bottleneck is (8, 4, 4)
        assert_eq!(v.len(), 128);
        assert_eq!(v, b.bottleneck_vector(&input).unwrap());
    }

    #[test]
    fn broken_chains_name_the_layer() {
        let mut layers = single_layer(2);
        let err = NetSpec::random((3, 4, 4), layers.clone(), 1).unwrap_err();
        assert_eq!(err, SegmentError::ShapeChain { layer: 0, reason: "expects 2 channels, receives 3".into() });
        layers.insert(1, LayerSpec::new(Layer::Downsample));
        assert!(matches!(NetSpec::random((2, 4, 4), layers, 1), Err(SegmentError::ShapeChain { .. })));
    }

    #[test]
    fn missing_bottleneck_reported() {
        let mut layers = single_layer(1);
        layers[0].bottleneck = false;
        let net = NetSpec::random((1, 4, 4), layers, 1).unwrap();
        assert_eq!(net.bottleneck_vector(&Tensor3::zeros(1, 4, 4)), Err(SegmentError::NoBottleneck));
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let net = NetSpec::random((1, 4, 4), single_layer(1), 1).unwrap();
        assert!(matches!(net.forward(&Tensor3::zeros(1, 4, 5)), Err(SegmentError::InputShape { .. })));
    }
}
