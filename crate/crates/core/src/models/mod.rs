//! Classifier architectures: layer specs, deterministic He initialization,
//! batched graph forward passes, the cross-entropy head, and accuracy
//! evaluation. Checkpoint persistence lives in [`checkpoint`].
//!
//! Batch normalization is replaced by a per-channel affine (trainable
//! scale/shift, no running statistics) in the residual preset: per-sample
//! input gradients stay well-defined because no layer couples samples.

mod checkpoint;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, model_from_checkpoint_bytes, save_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use rand_distr::Distribution;

use crate::autodiff::{ActivationKind, ExprGraph, NodeId, Tensor};
use crate::data::{Batch, Dataset};
use crate::error::{Error, GraphError, ModelError, Result};
use crate::rng::{self, tags};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Activation(ActivationKind),
    Flatten,
    /// Pre-activation residual block (affine → relu → conv ×2, identity or
    /// strided 1x1 skip).
    Residual {
        in_ch: usize,
        out_ch: usize,
        stride: usize,
    },
}

impl LayerSpec {
    fn describe(&self) -> String {
        match self {
            LayerSpec::Dense { input, output } => format!("dense({input},{output})"),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => format!("conv({in_ch},{out_ch},{kernel},{stride},{pad})"),
            LayerSpec::Activation(ActivationKind::Relu) => "relu".into(),
            LayerSpec::Activation(ActivationKind::Requ) => "requ".into(),
            LayerSpec::Activation(ActivationKind::Softmax { axis }) => format!("softmax({axis})"),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Residual {
                in_ch,
                out_ch,
                stride,
            } => format!("residual({in_ch},{out_ch},{stride})"),
        }
    }

    /// Per-sample output shape given a per-sample input shape.
    fn out_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>, ModelError> {
        use crate::autodiff::kernels::conv_out_extent;
        let err = |expected: String| ModelError::Incomposable {
            index,
            layer: self.describe(),
            expected,
            got: input.to_vec(),
        };
        match self {
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense {
                input: d_in,
                output,
            } => match input {
                [d] if d == d_in => Ok(vec![*output]),
                _ => Err(err(format!("[{d_in}]"))),
            },
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => match input {
                [c, h, w] if c == in_ch => {
                    let oh = conv_out_extent(*h, *kernel, *stride, *pad);
                    let ow = conv_out_extent(*w, *kernel, *stride, *pad);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => Ok(vec![*out_ch, oh, ow]),
                        _ => Err(err(format!("[{in_ch},>={kernel},>={kernel}]"))),
                    }
                }
                _ => Err(err(format!("[{in_ch},H,W]"))),
            },
            LayerSpec::Activation(_) => Ok(input.to_vec()),
            LayerSpec::Residual {
                in_ch,
                out_ch,
                stride,
            } => match input {
                [c, h, w] if c == in_ch => {
                    let oh = conv_out_extent(*h, 3, *stride, 1);
                    let ow = conv_out_extent(*w, 3, *stride, 1);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) => Ok(vec![*out_ch, oh, ow]),
                        _ => Err(err(format!("[{in_ch},>=3,>=3]"))),
                    }
                }
                _ => Err(err(format!("[{in_ch},H,W]"))),
            },
        }
    }

    /// (name suffix, shape, He fan-in or None for affine/bias-style init).
    fn param_specs(&self) -> Vec<(&'static str, Vec<usize>, ParamInit)> {
        match *self {
            LayerSpec::Dense { input, output } => vec![
                ("weight", vec![output, input], ParamInit::He { fan_in: input }),
                ("bias", vec![output], ParamInit::Zero),
            ],
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![
                (
                    "weight",
                    vec![out_ch, in_ch, kernel, kernel],
                    ParamInit::He {
                        fan_in: in_ch * kernel * kernel,
                    },
                ),
                ("bias", vec![out_ch], ParamInit::Zero),
            ],
            LayerSpec::Activation(_) | LayerSpec::Flatten => vec![],
            LayerSpec::Residual {
                in_ch,
                out_ch,
                stride,
            } => {
                let mut v = vec![
                    ("affine1.scale", vec![in_ch], ParamInit::One),
                    ("affine1.shift", vec![in_ch], ParamInit::Zero),
                    (
                        "conv1.weight",
                        vec![out_ch, in_ch, 3, 3],
                        ParamInit::He { fan_in: in_ch * 9 },
                    ),
                    ("affine2.scale", vec![out_ch], ParamInit::One),
                    ("affine2.shift", vec![out_ch], ParamInit::Zero),
                    (
                        "conv2.weight",
                        vec![out_ch, out_ch, 3, 3],
                        ParamInit::He { fan_in: out_ch * 9 },
                    ),
                ];
                if stride != 1 || in_ch != out_ch {
                    v.push((
                        "skip.weight",
                        vec![out_ch, in_ch, 1, 1],
                        ParamInit::He { fan_in: in_ch },
                    ));
                }
                v
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ParamInit {
    He { fan_in: usize },
    Zero,
    One,
}

/// An ordered stack of layers with named parameter tensors.
#[derive(Clone)]
pub struct Model<F: Scalar> {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    params: Vec<(String, Tensor<F>)>,
    descriptor: String,
}

impl<F: Scalar> std::fmt::Debug for Model<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Model({}, {} params)",
            self.descriptor,
            self.num_params()
        )
    }
}

impl<F: Scalar> Model<F> {
    /// Build from explicit layers with deterministic He-normal initialization
    /// (zeros for biases/shifts, ones for affine scales).
    pub fn from_layers(
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        seed: u64,
    ) -> Result<Self> {
        // Composition check.
        let mut shape: Vec<usize> = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.out_shape(i, &shape)?;
        }
        let mut params = Vec::new();
        let mut p_index = 0u64;
        for (i, layer) in layers.iter().enumerate() {
            for (suffix, shape, init) in layer.param_specs() {
                let mut r = rng::substream(seed, &[tags::INIT, p_index]);
                p_index += 1;
                let tensor = match init {
                    ParamInit::Zero => Tensor::zeros(&shape),
                    ParamInit::One => Tensor::full(&shape, F::one()),
                    ParamInit::He { fan_in } => {
                        let std = (2.0 / fan_in as f64).sqrt();
                        let normal = rand_distr::Normal::new(0.0, std).expect("valid std");
                        Tensor::from_fn(&shape, |_| F::of(normal.sample(&mut r)))
                    }
                };
                params.push((format!("l{i}.{suffix}"), tensor));
            }
        }
        let descriptor = format_descriptor(&input_shape, &layers);
        Ok(Model {
            input_shape,
            layers,
            params,
            descriptor,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn params(&self) -> &[(String, Tensor<F>)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor<F>)] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Logit dimension (class count) of the final layer output.
    pub fn num_classes(&self) -> Result<usize> {
        let mut shape: Vec<usize> = self.input_shape.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.out_shape(i, &shape)?;
        }
        match shape.as_slice() {
            [k] => Ok(*k),
            s => Err(Error::Invalid(format!(
                "model output shape {s:?} is not a logit vector"
            ))),
        }
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            input_shape: self.input_shape,
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
            descriptor: self.descriptor.clone(),
        }
    }

    /// Insert parameters into a graph: differentiable leaves when
    /// `trainable`, constants otherwise. Returns ids in parameter order.
    pub fn attach(&self, g: &mut ExprGraph<F>) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|(name, t)| g.input(name, t.clone(), true))
            .collect()
    }

    pub fn attach_frozen(&self, g: &mut ExprGraph<F>) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|(_, t)| g.constant(t.clone()))
            .collect()
    }

    /// Batched forward pass over previously attached parameter ids.
    /// `images` must be a [N,C,H,W] node matching the model input shape.
    pub fn forward_on(
        &self,
        g: &mut ExprGraph<F>,
        param_ids: &[NodeId],
        images: NodeId,
    ) -> Result<NodeId> {
        let in_shape = g.shape(images)?.to_vec();
        if in_shape.len() != 4 || in_shape[1..] != self.input_shape {
            return Err(Error::Invalid(format!(
                "model expects [N,{},{},{}], got {:?}",
                self.input_shape[0], self.input_shape[1], self.input_shape[2], in_shape
            )));
        }
        let n = in_shape[0];
        let mut x = images;
        let mut cursor = 0usize;
        for layer in &self.layers {
            let take = layer.param_specs().len();
            let ids = &param_ids[cursor..cursor + take];
            cursor += take;
            x = self.apply_layer(g, layer, ids, x, n)?;
        }
        Ok(x)
    }

    fn apply_layer(
        &self,
        g: &mut ExprGraph<F>,
        layer: &LayerSpec,
        ids: &[NodeId],
        x: NodeId,
        n: usize,
    ) -> Result<NodeId> {
        Ok(match layer {
            LayerSpec::Flatten => {
                let numel: usize = g.shape(x)?[1..].iter().product();
                g.reshape(x, &[n, numel])?
            }
            LayerSpec::Dense { output, .. } => {
                let wt = g.transpose(ids[0])?;
                let y = g.matmul(x, wt)?;
                let b = g.reshape(ids[1], &[1, *output])?;
                let bb = g.broadcast(b, &[n, *output])?;
                g.add(y, bb)?
            }
            LayerSpec::Conv2d { stride, pad, .. } => {
                let y = g.conv2d(x, ids[0], *stride, *pad)?;
                let ys = g.shape(y)?.to_vec();
                let b = g.reshape(ids[1], &[1, ys[1], 1, 1])?;
                let bb = g.broadcast(b, &ys)?;
                g.add(y, bb)?
            }
            LayerSpec::Activation(kind) => kind.apply(g, x)?,
            LayerSpec::Residual { stride, .. } => {
                let needs_skip = ids.len() == 7;
                let pre = self.affine_relu(g, x, ids[0], ids[1])?;
                let t = g.conv2d(pre, ids[2], *stride, 1)?;
                let t = self.affine_relu(g, t, ids[3], ids[4])?;
                let t = g.conv2d(t, ids[5], 1, 1)?;
                let skip = if needs_skip {
                    g.conv2d(pre, ids[6], *stride, 0)?
                } else {
                    x
                };
                g.add(t, skip)?
            }
        })
    }

    /// Per-channel affine followed by relu.
    fn affine_relu(
        &self,
        g: &mut ExprGraph<F>,
        x: NodeId,
        scale: NodeId,
        shift: NodeId,
    ) -> Result<NodeId> {
        let xs = g.shape(x)?.to_vec();
        let c = xs[1];
        let s = g.reshape(scale, &[1, c, 1, 1])?;
        let sb = g.broadcast(s, &xs)?;
        let scaled = g.mul(x, sb)?;
        let sh = g.reshape(shift, &[1, c, 1, 1])?;
        let shb = g.broadcast(sh, &xs)?;
        let y = g.add(scaled, shb)?;
        Ok(g.relu(y)?)
    }

    /// Convenience forward: evaluates logits for an image tensor with frozen
    /// parameters.
    pub fn forward(&self, images: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = ExprGraph::new();
        let ids = self.attach_frozen(&mut g);
        let x = g.input("images", images.clone(), false);
        let logits = self.forward_on(&mut g, &ids, x)?;
        Ok(g.eval(logits)?.clone())
    }

    /// Argmax predictions (ties broken by the lowest class index),
    /// evaluated in chunks.
    pub fn predict(&self, images: &Tensor<F>) -> Result<Vec<usize>> {
        let n = images.shape()[0];
        let [c, h, w] = [images.shape()[1], images.shape()[2], images.shape()[3]];
        let stride = c * h * w;
        let chunk = 256usize;
        let mut out = Vec::with_capacity(n);
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let part = Tensor::new(
                vec![end - start, c, h, w],
                images.data()[start * stride..end * stride].to_vec(),
            )?;
            let logits = self.forward(&part)?;
            let k = logits.shape()[1];
            for i in 0..end - start {
                let row = &logits.data()[i * k..(i + 1) * k];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                out.push(best);
            }
            start = end;
        }
        Ok(out)
    }

    pub fn accuracy(&self, dataset: &Dataset<F>) -> Result<f64> {
        if dataset.is_empty() {
            return Err(crate::error::DataError::Empty.into());
        }
        let preds = self.predict(&dataset.images)?;
        let correct = preds
            .iter()
            .zip(&dataset.labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(correct as f64 / dataset.len() as f64)
    }

    pub fn accuracy_on_batch(&self, batch: &Batch<F>) -> Result<f64> {
        let preds = self.predict(batch.images())?;
        let truth = batch.hard_labels();
        let correct = preds.iter().zip(&truth).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / batch.len() as f64)
    }
}

// ── Descriptors and presets ──────────────────────────────────────────────

fn format_descriptor(input_shape: &[usize; 3], layers: &[LayerSpec]) -> String {
    let mut parts = vec![format!(
        "in={}x{}x{}",
        input_shape[0], input_shape[1], input_shape[2]
    )];
    parts.extend(layers.iter().map(|l| l.describe()));
    parts.join(";")
}

fn parse_args(body: &str, n: usize, what: &str) -> Result<Vec<usize>, ModelError> {
    let args: Vec<usize> = body
        .split(',')
        .map(|a| a.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| ModelError::BadDescriptor(format!("bad arguments in '{what}'")))?;
    if args.len() != n {
        return Err(ModelError::BadDescriptor(format!(
            "'{what}' expects {n} arguments"
        )));
    }
    Ok(args)
}

fn parse_layer(tok: &str) -> Result<LayerSpec, ModelError> {
    let tok = tok.trim();
    if let Some(body) = tok.strip_prefix("dense(").and_then(|s| s.strip_suffix(')')) {
        let a = parse_args(body, 2, tok)?;
        return Ok(LayerSpec::Dense {
            input: a[0],
            output: a[1],
        });
    }
    if let Some(body) = tok.strip_prefix("conv(").and_then(|s| s.strip_suffix(')')) {
        let a = parse_args(body, 5, tok)?;
        return Ok(LayerSpec::Conv2d {
            in_ch: a[0],
            out_ch: a[1],
            kernel: a[2],
            stride: a[3],
            pad: a[4],
        });
    }
    if let Some(body) = tok
        .strip_prefix("residual(")
        .and_then(|s| s.strip_suffix(')'))
    {
        let a = parse_args(body, 3, tok)?;
        return Ok(LayerSpec::Residual {
            in_ch: a[0],
            out_ch: a[1],
            stride: a[2],
        });
    }
    if let Some(body) = tok
        .strip_prefix("softmax(")
        .and_then(|s| s.strip_suffix(')'))
    {
        let a = parse_args(body, 1, tok)?;
        return Ok(LayerSpec::Activation(ActivationKind::Softmax { axis: a[0] }));
    }
    match tok {
        "relu" => Ok(LayerSpec::Activation(ActivationKind::Relu)),
        "requ" => Ok(LayerSpec::Activation(ActivationKind::Requ)),
        "flatten" => Ok(LayerSpec::Flatten),
        other => Err(ModelError::BadDescriptor(format!("unknown layer '{other}'"))),
    }
}

/// Parse an explicit descriptor: `in=CxHxW;layer;layer;…`.
pub fn parse_descriptor(s: &str) -> Result<([usize; 3], Vec<LayerSpec>), ModelError> {
    let mut toks = s.split(';');
    let head = toks
        .next()
        .and_then(|t| t.trim().strip_prefix("in="))
        .ok_or_else(|| ModelError::BadDescriptor("descriptor must start with in=CxHxW".into()))?
        .to_string();
    let dims: Vec<usize> = head
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| ModelError::BadDescriptor(format!("bad input shape '{head}'")))?;
    if dims.len() != 3 {
        return Err(ModelError::BadDescriptor("input shape must be CxHxW".into()));
    }
    let layers: Vec<LayerSpec> = toks.map(parse_layer).collect::<Result<_, _>>()?;
    if layers.is_empty() {
        return Err(ModelError::BadDescriptor("no layers".into()));
    }
    Ok(([dims[0], dims[1], dims[2]], layers))
}

fn preset_layers(
    name: &str,
    act: ActivationKind,
    input: [usize; 3],
    classes: usize,
) -> Result<Vec<LayerSpec>, ModelError> {
    use crate::autodiff::kernels::conv_out_extent;
    let [c, h, w] = input;
    let half = |e: usize| conv_out_extent(e, 3, 2, 1).unwrap_or(1);
    Ok(match name {
        "mlp-small" => vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                input: c * h * w,
                output: 256,
            },
            LayerSpec::Activation(act),
            LayerSpec::Dense {
                input: 256,
                output: 128,
            },
            LayerSpec::Activation(act),
            LayerSpec::Dense {
                input: 128,
                output: classes,
            },
        ],
        "cnn-small" => {
            let (h1, w1) = (half(h), half(w));
            let (h2, w2) = (half(h1), half(w1));
            vec![
                LayerSpec::Conv2d {
                    in_ch: c,
                    out_ch: 8,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::Activation(act),
                LayerSpec::Conv2d {
                    in_ch: 8,
                    out_ch: 16,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::Activation(act),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 16 * h2 * w2,
                    output: classes,
                },
            ]
        }
        "preact-mini" => {
            let (h1, w1) = (half(h), half(w));
            vec![
                LayerSpec::Conv2d {
                    in_ch: c,
                    out_ch: 8,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerSpec::Residual {
                    in_ch: 8,
                    out_ch: 16,
                    stride: 2,
                },
                LayerSpec::Residual {
                    in_ch: 16,
                    out_ch: 16,
                    stride: 1,
                },
                LayerSpec::Activation(act),
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    input: 16 * h1 * w1,
                    output: classes,
                },
            ]
        }
        other => return Err(ModelError::UnknownPreset(other.to_string())),
    })
}

/// Build a model from an architecture descriptor and a seed.
///
/// Descriptors are either explicit layer lists (`in=1x28x28;flatten;…`) or a
/// preset: `mlp-small`, `cnn-small`, `preact-mini`, optionally suffixed with
/// `@relu`/`@requ` and parameterized as `name(CxHxW->K)`. Presets default to
/// 1x28x28 inputs, 10 classes, relu.
pub fn build_model<F: Scalar>(spec: &str, seed: u64) -> Result<Model<F>> {
    let spec = spec.trim();
    if spec.starts_with("in=") {
        let (input, layers) = parse_descriptor(spec)?;
        return Model::from_layers(input, layers, seed);
    }
    // Preset form: name[@act][(CxHxW->K)]
    let (head, shape_part) = match spec.find('(') {
        Some(i) if spec.ends_with(')') => (&spec[..i], Some(&spec[i + 1..spec.len() - 1])),
        _ => (spec, None),
    };
    let (name, act) = match head.split_once('@') {
        None => (head, ActivationKind::Relu),
        Some((n, "relu")) => (n, ActivationKind::Relu),
        Some((n, "requ")) => (n, ActivationKind::Requ),
        Some((_, a)) => {
            return Err(ModelError::BadDescriptor(format!("unknown activation '{a}'")).into())
        }
    };
    let (input, classes) = match shape_part {
        None => ([1, 28, 28], 10),
        Some(body) => {
            let (dims, k) = body.split_once("->").ok_or_else(|| {
                ModelError::BadDescriptor(format!("preset args must be CxHxW->K, got '{body}'"))
            })?;
            let d: Vec<usize> = dims
                .split('x')
                .map(|x| x.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| ModelError::BadDescriptor(format!("bad shape '{dims}'")))?;
            if d.len() != 3 {
                return Err(ModelError::BadDescriptor("shape must be CxHxW".into()).into());
            }
            let k = k
                .trim()
                .parse::<usize>()
                .map_err(|_| ModelError::BadDescriptor(format!("bad class count '{k}'")))?;
            ([d[0], d[1], d[2]], k)
        }
    };
    let layers = preset_layers(name, act, input, classes)?;
    Model::from_layers(input, layers, seed)
}

// ── Loss head ────────────────────────────────────────────────────────────

/// Per-sample cross-entropy −Σₖ labels·log softmax(logits): a [N,1] node.
pub fn cross_entropy_per_sample<F: Scalar>(
    g: &mut ExprGraph<F>,
    logits: NodeId,
    labels: NodeId,
) -> Result<NodeId, GraphError> {
    let ls = g.log_softmax(logits, 1)?;
    let weighted = g.mul(labels, ls)?;
    let rows = g.sum_axis(weighted, 1)?;
    g.neg(rows)
}

/// Mean cross-entropy over the batch (scalar node). Softmax is computed with
/// max subtraction inside the log-sum-exp primitive.
pub fn cross_entropy_node<F: Scalar>(
    g: &mut ExprGraph<F>,
    logits: NodeId,
    labels: NodeId,
) -> Result<NodeId, GraphError> {
    let n = g.shape(logits)?[0];
    let per = cross_entropy_per_sample(g, logits, labels)?;
    let s = g.sum(per)?;
    g.mul_scalar(s, F::one() / F::of(n as f64))
}

/// Tensor-level cross-entropy with label validation (rows must sum to 1
/// within 1e-6).
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &Tensor<F>) -> Result<F> {
    if logits.shape() != labels.shape() || logits.shape().len() != 2 {
        return Err(GraphError::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: labels.shape().to_vec(),
        }
        .into());
    }
    let k = labels.shape()[1];
    for row in 0..labels.shape()[0] {
        let sum: f64 = labels.data()[row * k..(row + 1) * k]
            .iter()
            .map(|v| v.as_f64())
            .sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!(
                "label row {row} sums to {sum}, expected 1"
            )));
        }
    }
    let mut g = ExprGraph::new();
    let z = g.input("logits", logits.clone(), false);
    let y = g.input("labels", labels.clone(), false);
    let ce = cross_entropy_node(&mut g, z, y)?;
    Ok(g.eval(ce)?.item())
}
