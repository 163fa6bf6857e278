//! Vision Transformer: configuration, named parameters, patch extraction,
//! the forward pass and the checkpoint container.

mod checkpoint;
mod forward;

use indexmap::IndexMap;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{decode_params, encode_params, load_params, save_params, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{bind_params, forward, forward_graph, AttentionTrace, ForwardNodes, Mode};

/// Epsilon of every LayerNorm in the model.
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Standard deviation of the truncated-normal initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub head_hidden: usize,
    pub head_dropout: f64,
    pub num_classes: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self::vit_b16()
    }
}

impl ViTConfig {
    /// ViT-B/16 backbone with the two-layer classification head.
    pub fn vit_b16() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            mlp_dim: 3072,
            head_hidden: 256,
            head_dropout: 0.3,
            num_classes: 4,
        }
    }

    /// Desk-scale preset for tests and smoke runs.
    pub fn tiny() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            embed_dim: 16,
            depth: 2,
            num_heads: 2,
            mlp_dim: 64,
            head_hidden: 32,
            head_dropout: 0.3,
            num_classes: 4,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.image_size,
            self.patch_size,
            self.embed_dim,
            self.depth,
            self.num_heads,
            self.mlp_dim,
            self.head_hidden,
            self.num_classes,
        ];
        if positive.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::Config("head dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn fields(&self) -> [(&'static str, String); 10] {
        [
            ("image_size", self.image_size.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("channels", self.channels.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("depth", self.depth.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("mlp_dim", self.mlp_dim.to_string()),
            ("head_hidden", self.head_hidden.to_string()),
            ("head_dropout", self.head_dropout.to_string()),
            ("num_classes", self.num_classes.to_string()),
        ]
    }

    /// `key=value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        self.fields().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ViTConfig::vit_b16();
        let mut seen = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
            let int = || v.parse::<usize>().map_err(|_| Error::Format(format!("bad value for {k}: {v:?}")));
            match k {
                "image_size" => cfg.image_size = int()?,
                "patch_size" => cfg.patch_size = int()?,
                "channels" => cfg.channels = int()?,
                "embed_dim" => cfg.embed_dim = int()?,
                "depth" => cfg.depth = int()?,
                "num_heads" => cfg.num_heads = int()?,
                "mlp_dim" => cfg.mlp_dim = int()?,
                "head_hidden" => cfg.head_hidden = int()?,
                "num_classes" => cfg.num_classes = int()?,
                "head_dropout" => {
                    cfg.head_dropout = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad value for {k}: {v:?}")))?
                }
                other => return Err(Error::Format(format!("unknown config key {other:?}"))),
            }
            seen.push(k.to_string());
        }
        if seen.len() != 10 {
            return Err(Error::Format(format!("config has {} of 10 keys", seen.len())));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Names of fields whose values differ.
    pub fn diff(&self, other: &ViTConfig) -> Vec<String> {
        self.fields()
            .iter()
            .zip(other.fields().iter())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, b)| format!("{} (expected {}, found {})", a.0, a.1, b.1))
            .collect()
    }

    /// Ordered `(name, shape)` layout of every parameter.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, m) = (self.embed_dim, self.mlp_dim);
        let mut out = vec![
            ("patch_embed.weight".to_string(), vec![self.patch_dim(), d]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("cls_token".to_string(), vec![d]),
            ("pos_embed".to_string(), vec![self.num_patches() + 1, d]),
        ];
        for i in 0..self.depth {
            let p = |s: &str| format!("blocks.{i}.{s}");
            out.extend([
                (p("norm1.gamma"), vec![d]),
                (p("norm1.beta"), vec![d]),
                (p("attn.q.weight"), vec![d, d]),
                (p("attn.q.bias"), vec![d]),
                (p("attn.k.weight"), vec![d, d]),
                (p("attn.k.bias"), vec![d]),
                (p("attn.v.weight"), vec![d, d]),
                (p("attn.v.bias"), vec![d]),
                (p("attn.proj.weight"), vec![d, d]),
                (p("attn.proj.bias"), vec![d]),
                (p("norm2.gamma"), vec![d]),
                (p("norm2.beta"), vec![d]),
                (p("mlp.fc1.weight"), vec![d, m]),
                (p("mlp.fc1.bias"), vec![m]),
                (p("mlp.fc2.weight"), vec![m, d]),
                (p("mlp.fc2.bias"), vec![d]),
            ]);
        }
        out.extend([
            ("norm.gamma".to_string(), vec![d]),
            ("norm.beta".to_string(), vec![d]),
            ("head.fc1.weight".to_string(), vec![d, self.head_hidden]),
            ("head.fc1.bias".to_string(), vec![self.head_hidden]),
            ("head.fc2.weight".to_string(), vec![self.head_hidden, self.num_classes]),
            ("head.fc2.bias".to_string(), vec![self.num_classes]),
        ]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.param_layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// True for classification-head parameters; everything else is backbone.
pub fn is_head_param(name: &str) -> bool {
    name.starts_with("head.")
}

/// Named parameters in a stable order.
#[derive(Clone, Debug, PartialEq)]
pub struct ViTParams<T> {
    config: ViTConfig,
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ViTParams<T> {
    pub fn from_tensors(config: ViTConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = config.param_layout();
        if layout.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter arrays, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&tensors) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::Format(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            config,
            tensors: tensors.into_iter().collect(),
        })
    }

    pub fn config(&self) -> &ViTConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.get_index_of(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.tensors[i]
    }

    pub fn name_at(&self, i: usize) -> &str {
        self.tensors.get_index(i).map(|(k, _)| k.as_str()).expect("index in range")
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ViTParams<U> {
        ViTParams {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

fn truncated_normal(rng: &mut RngStream) -> f64 {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            return v;
        }
    }
}

/// Weights, CLS token and positional embeddings ~ N(0, 0.02^2) truncated at
/// two standard deviations; biases zero; LayerNorm gamma one, beta zero.
pub fn init_params<T: Scalar>(cfg: &ViTConfig, rng: &mut RngStream) -> Result<ViTParams<T>> {
    cfg.validate()?;
    let tensors = cfg
        .param_layout()
        .into_iter()
        .map(|(name, shape)| {
            let t = if name.ends_with(".gamma") {
                Tensor::ones(&shape)
            } else if name.ends_with(".bias") || name.ends_with(".beta") {
                Tensor::zeros(&shape)
            } else {
                Tensor::from_fn(&shape, |_| T::from_f64_lossy(truncated_normal(rng)))
            };
            (name, t)
        })
        .collect();
    ViTParams::from_tensors(cfg.clone(), tensors)
}

/// `[C, H, W]` -> `[N, patch * patch * C]`.
///
/// Patches are ordered row-major over the grid; within a patch values are
/// channel-major, then row, then column.
pub fn patchify<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    if image.ndim() != 3 {
        return Err(Error::Dimension(format!("patchify expects [C, H, W], got {:?}", image.shape())));
    }
    let b = image.reshape(&[1, image.shape()[0], image.shape()[1], image.shape()[2]])?;
    let out = patchify_batch(&b, patch)?;
    out.reshape(&out.shape()[1..])
}

/// `[B, C, H, W]` -> `[B, N, patch * patch * C]`.
pub fn patchify_batch<T: Scalar>(images: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let s = images.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!("expected [B, C, H, W], got {s:?}")));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Dimension(format!("{h}x{w} image is not divisible into {patch}x{patch} patches")));
    }
    let (gh, gw) = (h / patch, w / patch);
    let src = images.data();
    let mut out = Vec::with_capacity(src.len());
    for bi in 0..b {
        for py in 0..gh {
            for px in 0..gw {
                for ch in 0..c {
                    for dy in 0..patch {
                        let row = ((bi * c + ch) * h + py * patch + dy) * w + px * patch;
                        out.extend_from_slice(&src[row..row + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, gh * gw, patch * patch * c], out)
}
