//! A small sequential network with hand-written backward passes.
//!
//! Three model families are built from [`ModelSpec`]:
//!
//! | id          | input        | body                                                   |
//! |-------------|--------------|--------------------------------------------------------|
//! | `ffnn`      | `[D]`        | `hidden` linear+relu layers                            |
//! | `seq_ffnn`  | `[bins, T]`  | frame linear + relu + time mean (or a GRU), then head  |
//! | `cnn10lite` | `[bins, T]`  | `[conv3x3, batch norm, relu, max pool]` per channel    |
//!
//! Every family ends in a linear output layer; its input is the embedding.

mod layers;
mod tensor;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{parse_yaml, ConfigNode, Mapping};
use crate::error::{Error, IoContext, Result};
use crate::features::{FeatureArray, EXTENSION};
use crate::rng::Rng;

pub use layers::{Cache, Layer, BN_EPS, BN_MOMENTUM};
pub use tensor::{Param, Scalar, Tensor};

pub const MODEL_YAML: &str = "model.yaml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ffnn,
    #[serde(rename = "seq_ffnn")]
    SeqFfnn,
    Cnn10lite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    #[default]
    Linear,
    Gru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: ModelKind,
    /// Widths of the hidden linear layers before the output layer.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Convolution block widths of `cnn10lite`.
    #[serde(default = "default_channels")]
    pub channels: Vec<usize>,
    /// Sequence encoder of `seq_ffnn`.
    #[serde(default)]
    pub encoder: Encoder,
    #[serde(default = "default_encoder_dim")]
    pub encoder_dim: usize,
}

fn default_channels() -> Vec<usize> {
    vec![16, 32, 64]
}

fn default_encoder_dim() -> usize {
    64
}

impl ModelSpec {
    pub fn new(id: ModelKind) -> Self {
        ModelSpec {
            id,
            hidden: Vec::new(),
            channels: default_channels(),
            encoder: Encoder::Linear,
            encoder_dim: default_encoder_dim(),
        }
    }

    /// Reads a model config, ignoring its `online_transforms` list.
    pub fn from_config(node: &ConfigNode) -> Result<Self> {
        let mut node = node.clone();
        if let Some(m) = node.as_map_mut() {
            m.shift_remove("online_transforms");
        }
        node.extract("").map_err(|e| match e {
            Error::Config { message, .. } => Error::config("model", message),
            other => other,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-layer state of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    caches: Vec<Cache<T>>,
    pub logits: Tensor<T>,
    /// Input of the final layer.
    pub embedding: Tensor<T>,
    version: u64,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: Option<ModelSpec>,
    input_dims: Vec<usize>,
    output_dim: usize,
    layers: Vec<Layer<T>>,
    version: u64,
}

fn head<T: Scalar>(layers: &mut Vec<Layer<T>>, mut width: usize, hidden: &[usize], k: usize, seed: u64) {
    for (i, &h) in hidden.iter().enumerate() {
        layers.push(Layer::linear(&format!("fc{i}"), width, h, seed));
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(Layer::linear("out", width, k, seed));
}

impl<T: Scalar> Model<T> {
    /// Builds a freshly initialized model for items of shape `input_dims`.
    pub fn build(spec: &ModelSpec, input_dims: &[usize], output_dim: usize, seed: u64) -> Result<Self> {
        let mismatch = |what: &str| {
            Err(Error::Shape(format!(
                "{:?} needs {what} input, got {input_dims:?}",
                spec.id
            )))
        };
        if output_dim == 0 || spec.hidden.contains(&0) || spec.channels.contains(&0) || spec.encoder_dim == 0 {
            return Err(Error::config("model", "layer widths and output dimension must be positive"));
        }
        let mut layers = Vec::new();
        match spec.id {
            ModelKind::Ffnn => {
                let [d] = input_dims else {
                    return mismatch("vector [D]");
                };
                head(&mut layers, *d, &spec.hidden, output_dim, seed);
            }
            ModelKind::SeqFfnn => {
                let [bins, _] = input_dims else {
                    return mismatch("sequence [bins, T]");
                };
                match spec.encoder {
                    Encoder::Linear => {
                        layers.push(Layer::frame_linear("enc", *bins, spec.encoder_dim, seed));
                        layers.push(Layer::Relu);
                        layers.push(Layer::TimeMeanPool);
                    }
                    Encoder::Gru => layers.push(Layer::gru("gru", *bins, spec.encoder_dim, seed)),
                }
                head(&mut layers, spec.encoder_dim, &spec.hidden, output_dim, seed);
            }
            ModelKind::Cnn10lite => {
                let (mut ch, h, w) = match input_dims {
                    [h, w] => {
                        layers.push(Layer::AddChannel);
                        (1, *h, *w)
                    }
                    [c, h, w] => (*c, *h, *w),
                    _ => return mismatch("[bins, T] or [C, H, W]"),
                };
                let blocks = spec.channels.len() as u32;
                if h >> blocks == 0 || w >> blocks == 0 {
                    return mismatch(&format!("at least {0}x{0}", 1usize << blocks));
                }
                for (i, &c) in spec.channels.iter().enumerate() {
                    layers.push(Layer::conv2d(&format!("conv{i}"), ch, c, seed));
                    layers.push(Layer::batch_norm(&format!("bn{i}"), c));
                    layers.push(Layer::Relu);
                    layers.push(Layer::MaxPool2);
                    ch = c;
                }
                layers.push(Layer::GlobalPool);
                head(&mut layers, ch, &spec.hidden, output_dim, seed);
            }
        }
        let model = Model {
            spec: Some(spec.clone()),
            input_dims: input_dims.to_vec(),
            output_dim,
            layers,
            version: 0,
        };
        model.check_shapes()?;
        Ok(model)
    }

    /// Wraps an explicit layer stack (used for layer-level checks).
    pub fn from_layers(layers: Vec<Layer<T>>, input_dims: Vec<usize>) -> Result<Self> {
        let mut model = Model {
            spec: None,
            input_dims,
            output_dim: 0,
            layers,
            version: 0,
        };
        model.output_dim = model.check_shapes()?.iter().skip(1).product();
        Ok(model)
    }

    fn check_shapes(&self) -> Result<Vec<usize>> {
        let mut dims = vec![1];
        dims.extend_from_slice(&self.input_dims);
        for (i, layer) in self.layers.iter().enumerate() {
            dims = layer
                .output_dims(&dims)
                .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
        }
        Ok(dims)
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        self.spec.as_ref()
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn embedding_dim(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Linear { w, .. }) => w.dims[1],
            _ => self.input_dims.iter().product(),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    /// Mutable parameter access. Invalidates outstanding forward traces.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.version += 1;
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.dims.len() != self.input_dims.len() + 1 || x.dims[1..] != self.input_dims[..] || x.dims[0] == 0 {
            return Err(Error::Shape(format!(
                "model expects [B, {}], got {:?}",
                self.input_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                x.dims
            )));
        }
        Ok(())
    }

    /// Layer caches, logits and the penultimate activations.
    fn run(&self, x: Tensor<T>, train: bool) -> Result<Pass<T>> {
        self.check_input(&x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x;
        let mut embedding = None;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            if i == last {
                embedding = Some(cur.clone());
            }
            let (y, cache) = layer
                .forward(cur, train)
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.describe())))?;
            caches.push(cache);
            cur = y;
        }
        let embedding = embedding.unwrap_or_else(|| cur.clone());
        Ok((caches, cur, embedding))
    }

    /// Forward pass keeping caches for [`Model::backward`]. In train mode
    /// batch-norm layers use batch statistics and update running ones.
    pub fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<ForwardTrace<T>> {
        let train = mode == Mode::Train;
        let (caches, logits, embedding) = self.run(x, train)?;
        if train {
            let m = T::of(BN_MOMENTUM);
            for (layer, cache) in self.layers.iter_mut().zip(&caches) {
                if let (
                    Layer::BatchNorm {
                        running_mean,
                        running_var,
                        ..
                    },
                    Cache::BatchNorm {
                        batch_mean,
                        batch_var,
                        count,
                        ..
                    },
                ) = (layer, cache)
                {
                    let unbias = if *count > 1 {
                        T::of(*count as f64 / (*count - 1) as f64)
                    } else {
                        T::one()
                    };
                    for c in 0..running_mean.len() {
                        running_mean[c] = (T::one() - m) * running_mean[c] + m * batch_mean[c];
                        running_var[c] = (T::one() - m) * running_var[c] + m * batch_var[c] * unbias;
                    }
                }
            }
        }
        Ok(ForwardTrace {
            caches,
            logits,
            embedding,
            version: self.version,
        })
    }

    /// Eval-mode forward: `(logits, embedding)`.
    pub fn infer(&self, x: Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (_, logits, embedding) = self.run(x, false)?;
        Ok((logits, embedding))
    }

    pub fn embed(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.infer(x)?.1)
    }

    /// Accumulates parameter gradients for `d_logits`; returns the input
    /// gradient.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, d_logits: &Tensor<T>) -> Result<Tensor<T>> {
        if trace.version != self.version {
            return Err(Error::StaleTrace);
        }
        if d_logits.dims != trace.logits.dims {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match logits {:?}",
                d_logits.dims, trace.logits.dims
            )));
        }
        let mut grad = d_logits.clone();
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches).rev() {
            grad = layer.backward(cache, &grad)?;
        }
        Ok(grad)
    }

    /// Running statistics per batch-norm layer: `(name, mean, var)`.
    fn bn_stats(&self) -> Vec<(String, &[T], &[T])> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm {
                    gamma,
                    running_mean,
                    running_var,
                    ..
                } => Some((
                    gamma.name.trim_end_matches(".gamma").to_string(),
                    running_mean.as_slice(),
                    running_var.as_slice(),
                )),
                _ => None,
            })
            .collect()
    }

    /// Writes one `.atnr` per parameter and `model.yaml` into `dir`. Entries
    /// of `extra` (epoch, metric values) are appended to `model.yaml`.
    pub fn save(&self, dir: &Path, extra: &Mapping) -> Result<()> {
        let spec = self
            .spec
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("only models built from a spec can be saved".into()))?;
        std::fs::create_dir_all(dir).at(dir)?;
        for p in self.params() {
            let a = FeatureArray::new(p.dims.clone(), p.value.iter().map(|v| v.f64() as f32).collect())?;
            a.write(&dir.join(format!("{}.{EXTENSION}", p.name)))?;
        }
        let floats = |v: &[T]| ConfigNode::Seq(v.iter().map(|x| ConfigNode::Float(f64::from(x.f64() as f32))).collect());
        let mut bn = Mapping::new();
        for (name, mean, var) in self.bn_stats() {
            let mut m = Mapping::new();
            m.insert("running_mean".into(), floats(mean));
            m.insert("running_var".into(), floats(var));
            bn.insert(name, ConfigNode::Map(m));
        }
        let dims = |d: &[usize]| ConfigNode::Seq(d.iter().map(|&x| ConfigNode::Int(x as i64)).collect());
        let mut doc = Mapping::new();
        doc.insert("spec".into(), ConfigNode::from_serialize(spec)?);
        doc.insert("input_dims".into(), dims(&self.input_dims));
        doc.insert("output_dim".into(), ConfigNode::Int(self.output_dim as i64));
        doc.insert("batch_norm".into(), ConfigNode::Map(bn));
        for (k, v) in extra {
            doc.insert(k.clone(), v.clone());
        }
        let path = dir.join(MODEL_YAML);
        std::fs::write(&path, ConfigNode::Map(doc).to_yaml()).at(&path)
    }

    /// Restores a model saved by [`Model::save`]; also returns `model.yaml`.
    pub fn load(dir: &Path) -> Result<(Self, ConfigNode)> {
        let path = dir.join(MODEL_YAML);
        let doc = parse_yaml(&std::fs::read_to_string(&path).at(&path)?)?;
        let spec: ModelSpec = doc.extract("spec")?;
        let input_dims: Vec<usize> = doc.extract("input_dims")?;
        let output_dim: usize = doc.extract("output_dim")?;
        let mut model = Model::build(&spec, &input_dims, output_dim, 0)?;
        for p in model.params_mut() {
            let a = FeatureArray::read(&dir.join(format!("{}.{EXTENSION}", p.name)))?;
            if a.dims() != p.dims.as_slice() {
                return Err(Error::Shape(format!(
                    "checkpoint parameter {} has dims {:?}, expected {:?}",
                    p.name,
                    a.dims(),
                    p.dims
                )));
            }
            p.value = a.data().iter().map(|&v| T::of(f64::from(v))).collect();
        }
        for layer in &mut model.layers {
            if let Layer::BatchNorm {
                gamma,
                running_mean,
                running_var,
                ..
            } = layer
            {
                let name = gamma.name.trim_end_matches(".gamma").to_string();
                let mean: Vec<f64> = doc.extract(&format!("batch_norm.{name}.running_mean"))?;
                let var: Vec<f64> = doc.extract(&format!("batch_norm.{name}.running_var"))?;
                if mean.len() != running_mean.len() || var.len() != running_var.len() {
                    return Err(Error::Shape(format!("batch-norm stats of {name} have the wrong length")));
                }
                *running_mean = mean.into_iter().map(T::of).collect();
                *running_var = var.into_iter().map(T::of).collect();
            }
        }
        Ok((model, doc))
    }
}

type Pass<T> = (Vec<Cache<T>>, Tensor<T>, Tensor<T>);

/// Result of comparing analytic and central finite-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative difference `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Fourth-order central difference `(f(-2h) - 8f(-h) + 8f(h) - f(2h)) / 12h`
/// of `f` evaluated at offsets from the current point. Symmetric pairs are
/// subtracted first so a locally constant `f` gives exactly zero.
pub fn central_difference(mut f: impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let (m2, m1, p1, p2) = (f(-2.0 * h)?, f(-h)?, f(h)?, f(2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Checks input and parameter gradients of `model` on the scalar loss
/// `sum(c * logits)` for a random projection `c`, with fourth-order
/// central differences of step `h`.
pub fn gradient_check(model: &mut Model<f64>, x: &Tensor<f64>, mode: Mode, h: f64, seed: u64) -> Result<GradCheck> {
    let trace = model.forward(x.clone(), mode)?;
    let mut rng = Rng::new(seed);
    let c = Tensor::new(
        trace.logits.dims.clone(),
        (0..trace.logits.len()).map(|_| rng.next_gaussian()).collect(),
    )?;
    model.zero_grad();
    let dx = model.backward(&trace, &c)?;
    let loss = |m: &mut Model<f64>, x: Tensor<f64>| -> Result<f64> {
        let t = m.forward(x, mode)?;
        Ok(t.logits.data.iter().zip(&c.data).map(|(a, b)| a * b).sum())
    };
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..x.len() {
        let numeric = central_difference(
            |d| {
                let mut shifted = x.clone();
                shifted.data[i] += d;
                loss(model, shifted)
            },
            h,
        )?;
        worst = worst.max(relative_error(dx.data[i], numeric));
        checked += 1;
    }
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
    for (pi, grads) in analytic.iter().enumerate() {
        for (k, &g) in grads.iter().enumerate() {
            let original = model.params()[pi].value[k];
            let numeric = central_difference(
                |d| {
                    model.params_mut()[pi].value[k] = original + d;
                    loss(model, x.clone())
                },
                h,
            )?;
            model.params_mut()[pi].value[k] = original;
            worst = worst.max(relative_error(g, numeric));
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
